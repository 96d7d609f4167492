use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{DenseEncoder, EncoderConfig};
use super::SegmentationNet;
use crate::error::{invalid, Result};
use crate::layers::{BatchNorm2d, Conv2d, Mode};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseNetConfig {
    pub input_size: usize,
    pub encoder: EncoderConfig,
    /// Decoder width at level `i` is `decoder_base * 2^i`.
    pub decoder_base: usize,
    pub n_classes: usize,
}

impl Default for CoarseNetConfig {
    fn default() -> Self {
        Self {
            input_size: 224,
            encoder: EncoderConfig { in_channels: 1, levels: 4, stem_channels: 16, block_layers: 2, growth: 8 },
            decoder_base: 8,
            n_classes: 11,
        }
    }
}

impl CoarseNetConfig {
    pub fn decoder_channels(&self, level: usize) -> usize {
        self.decoder_base << level
    }
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBlock {
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv.forward(tape, store, x)?;
        let h = self.bn.forward(tape, store, h, mode)?;
        Ok(tape.relu(h))
    }
}

/// Dense encoder with a nested-skip decoder grid and a softmax head.
///
/// Decoder node `(i, j)` (level `i`, column `j >= 1`, `i + j <= L`) sees the
/// upsampled node `(i+1, j-1)` concatenated with every earlier node on its
/// own level `(i, 0..j)`; column 0 is the encoder. The head reads `(0, L)`.
#[derive(Debug, Clone)]
pub struct CoarseNet<T: Scalar> {
    pub config: CoarseNetConfig,
    store: ParamStore<T>,
    encoder: DenseEncoder,
    /// `nodes[i][j-1]` is decoder node `(i, j)`.
    nodes: Vec<Vec<ConvBlock>>,
    head: Conv2d,
}

impl<T: Scalar> CoarseNet<T> {
    pub fn new(config: CoarseNetConfig, seed: u64) -> Result<Self> {
        config.encoder.validate(config.input_size)?;
        if config.n_classes < 2 || config.decoder_base == 0 {
            return Err(invalid("coarse net", format!("need >= 2 classes and a positive decoder width: {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = DenseEncoder::new(&mut store, "enc", config.encoder.clone(), &mut rng)?;
        let enc_ch = config.encoder.feature_channels();
        let levels = config.encoder.levels;

        // Channels produced by node (i, j); column 0 is the encoder.
        let node_ch = |i: usize, j: usize| if j == 0 { enc_ch[i] } else { config.decoder_channels(i) };
        let mut nodes: Vec<Vec<ConvBlock>> = (0..levels).map(|_| Vec::new()).collect();
        for j in 1..=levels {
            for i in 0..=(levels - j) {
                let cin = node_ch(i + 1, j - 1) + (0..j).map(|jj| node_ch(i, jj)).sum::<usize>();
                let cout = config.decoder_channels(i);
                let p = format!("dec.x{i}_{j}");
                nodes[i].push(ConvBlock {
                    conv: Conv2d::new(&mut store, &format!("{p}.conv"), cin, cout, 3, 1, 1, false, &mut rng)?,
                    bn: BatchNorm2d::new(&mut store, &format!("{p}.bn"), cout)?,
                });
            }
        }
        let head = Conv2d::new(&mut store, "head", config.decoder_channels(0), config.n_classes, 1, 1, 0, true, &mut rng)?;
        Ok(Self { config, store, encoder, nodes, head })
    }

    /// Pre-softmax class scores.
    pub fn logits(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let levels = self.config.encoder.levels;
        let enc = self.encoder.forward(tape, &mut self.store, x, mode)?;
        // grid[i][j] = output of node (i, j)
        let mut grid: Vec<Vec<Var>> = enc.iter().map(|&v| vec![v]).collect();
        for j in 1..=levels {
            for i in 0..=(levels - j) {
                let up = tape.upsample_bilinear(grid[i + 1][j - 1], 2)?;
                let mut parts = vec![up];
                parts.extend_from_slice(&grid[i][..j]);
                let cat = tape.concat_channels(&parts)?;
                let out = self.nodes[i][j - 1].forward(tape, &mut self.store, cat, mode)?;
                grid[i].push(out);
            }
        }
        self.head.forward(tape, &self.store, grid[0][levels])
    }
}

impl<T: Scalar> SegmentationNet<T> for CoarseNet<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let logits = self.logits(tape, x, mode)?;
        tape.softmax_channels(logits)
    }

    fn input_size(&self) -> usize {
        self.config.input_size
    }

    fn out_channels(&self) -> usize {
        self.config.n_classes
    }
}
