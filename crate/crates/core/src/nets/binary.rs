use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{DenseEncoder, EncoderConfig};
use super::SegmentationNet;
use crate::error::{invalid, Result};
use crate::init;
use crate::layers::Mode;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::selfonn::{selfonn_conv2d, SelfOnnConfig, SelfOnnConv2d};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// Generative-neuron layers with tanh-squashed inputs.
    #[default]
    SelfOnn,
    /// `conv2d(tanh(x))` layers; the reference point for Q = 1.
    Conv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryNetConfig {
    pub input_size: usize,
    pub encoder: EncoderConfig,
    /// Decoder width at level `i` is `decoder_base * 2^i`.
    pub decoder_base: usize,
    pub q_order: usize,
    #[serde(default)]
    pub decoder: DecoderKind,
}

impl Default for BinaryNetConfig {
    fn default() -> Self {
        Self {
            input_size: 96,
            encoder: EncoderConfig { in_channels: 1, levels: 3, stem_channels: 8, block_layers: 2, growth: 8 },
            decoder_base: 8,
            q_order: 3,
            decoder: DecoderKind::SelfOnn,
        }
    }
}

#[derive(Debug, Clone)]
enum DecoderLayer {
    SelfOnn(SelfOnnConv2d),
    Conv { weight: ParamId, bias: ParamId },
}

impl DecoderLayer {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: DecoderKind,
        q_order: usize,
        cin: usize,
        cout: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(match kind {
            DecoderKind::SelfOnn => {
                DecoderLayer::SelfOnn(SelfOnnConv2d::new(store, name, SelfOnnConfig::new(q_order, cin, cout, 3), rng)?)
            }
            DecoderKind::Conv => {
                let w = init::uniform(&[cout, cin, 3, 3], init::selfonn_bound(1, cout, cin, 3), rng);
                DecoderLayer::Conv {
                    weight: store.add(format!("{name}.weight"), w, true)?,
                    bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), true)?,
                }
            }
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        match self {
            DecoderLayer::SelfOnn(l) => l.forward(tape, store, x),
            DecoderLayer::Conv { weight, bias } => {
                let w = tape.param(store, *weight);
                let b = tape.param(store, *bias);
                selfonn_conv2d(tape, x, &[w], b, 1, 1, true)
            }
        }
    }
}

/// Dense encoder, one decoder layer per level (bilinear upsample, concat
/// encoder skip, generative-neuron conv), one extra output layer and a
/// sigmoid head.
#[derive(Debug, Clone)]
pub struct BinaryNet<T: Scalar> {
    pub config: BinaryNetConfig,
    store: ParamStore<T>,
    encoder: DenseEncoder,
    /// `decoder[i]` produces level `i`.
    decoder: Vec<DecoderLayer>,
    out: DecoderLayer,
}

impl<T: Scalar> BinaryNet<T> {
    pub fn new(config: BinaryNetConfig, seed: u64) -> Result<Self> {
        config.encoder.validate(config.input_size)?;
        if config.q_order == 0 {
            return Err(invalid("binary net", "q_order must be >= 1"));
        }
        if config.decoder == DecoderKind::Conv && config.q_order != 1 {
            return Err(invalid("binary net", "the conv decoder is the q_order = 1 case"));
        }
        if config.decoder_base == 0 {
            return Err(invalid("binary net", "decoder width must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = DenseEncoder::new(&mut store, "enc", config.encoder.clone(), &mut rng)?;
        let enc_ch = config.encoder.feature_channels();
        let levels = config.encoder.levels;
        let mut decoder = Vec::with_capacity(levels);
        let mut below = enc_ch[levels];
        for i in (0..levels).rev() {
            let cout = config.decoder_base << i;
            decoder.push(DecoderLayer::new(&mut store, &format!("dec{i}"), config.decoder, config.q_order, below + enc_ch[i], cout, &mut rng)?);
            below = cout;
        }
        decoder.reverse();
        let out = DecoderLayer::new(&mut store, "out", config.decoder, config.q_order, below, 1, &mut rng)?;
        Ok(Self { config, store, encoder, decoder, out })
    }
}

impl<T: Scalar> SegmentationNet<T> for BinaryNet<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let enc = self.encoder.forward(tape, &mut self.store, x, mode)?;
        let levels = self.config.encoder.levels;
        let mut h = enc[levels];
        for i in (0..levels).rev() {
            let up = tape.upsample_bilinear(h, 2)?;
            let cat = tape.concat_channels(&[up, enc[i]])?;
            h = self.decoder[i].forward(tape, &self.store, cat)?;
        }
        let logits = self.out.forward(tape, &self.store, h)?;
        Ok(tape.sigmoid(logits))
    }

    fn input_size(&self) -> usize {
        self.config.input_size
    }

    fn out_channels(&self) -> usize {
        1
    }
}
