use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::layers::{BatchNorm2d, Conv2d, Mode};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Depth/width of a densely connected encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// Number of downsampling levels; the deepest features sit at stride `2^levels`.
    pub levels: usize,
    /// Stem output channels.
    pub stem_channels: usize,
    /// Conv layers in each dense block.
    pub block_layers: usize,
    pub growth: usize,
}

impl EncoderConfig {
    /// Channel count of the features at each level `0..=levels`.
    pub fn feature_channels(&self) -> Vec<usize> {
        let mut chans = vec![self.stem_channels];
        let mut c = self.stem_channels;
        for level in 1..=self.levels {
            if level > 1 {
                c = transition_out(c);
            }
            c += self.block_layers * self.growth;
            chans.push(c);
        }
        chans
    }

    pub fn validate(&self, input_size: usize) -> Result<()> {
        if self.levels == 0 || self.stem_channels == 0 || self.growth == 0 || self.in_channels == 0 {
            return Err(invalid("encoder", format!("degenerate config {self:?}")));
        }
        let step = 1usize << self.levels;
        if input_size == 0 || input_size % step != 0 {
            return Err(invalid(
                "encoder",
                format!("input size {input_size} is not divisible by 2^{} = {step}", self.levels),
            ));
        }
        Ok(())
    }
}

fn transition_out(c: usize) -> usize {
    (c / 2).max(1)
}

#[derive(Debug, Clone)]
struct DenseLayer {
    bn: BatchNorm2d,
    conv: Conv2d,
}

#[derive(Debug, Clone)]
struct Transition {
    bn: BatchNorm2d,
    conv: Conv2d,
}

#[derive(Debug, Clone)]
struct Level {
    transition: Option<Transition>,
    block: Vec<DenseLayer>,
}

/// Stem (7x7 conv, batch norm, ReLU) at full resolution, then per level a
/// downsampling step (3x3 stride-2 max pool for the first level, 1x1 conv
/// plus 2x2 average pool transitions after that) followed by a dense block.
#[derive(Debug, Clone)]
pub struct DenseEncoder {
    pub config: EncoderConfig,
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    levels: Vec<Level>,
}

impl DenseEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let stem_conv = Conv2d::new(store, &format!("{name}.stem.conv"), config.in_channels, config.stem_channels, 7, 1, 3, false, rng)?;
        let stem_bn = BatchNorm2d::new(store, &format!("{name}.stem.bn"), config.stem_channels)?;
        let mut levels = Vec::with_capacity(config.levels);
        let mut c = config.stem_channels;
        for level in 1..=config.levels {
            let transition = if level > 1 {
                let p = format!("{name}.trans{level}");
                let out = transition_out(c);
                let t = Transition {
                    bn: BatchNorm2d::new(store, &format!("{p}.bn"), c)?,
                    conv: Conv2d::new(store, &format!("{p}.conv"), c, out, 1, 1, 0, false, rng)?,
                };
                c = out;
                Some(t)
            } else {
                None
            };
            let mut block = Vec::with_capacity(config.block_layers);
            for l in 0..config.block_layers {
                let p = format!("{name}.block{level}.layer{l}");
                block.push(DenseLayer {
                    bn: BatchNorm2d::new(store, &format!("{p}.bn"), c)?,
                    conv: Conv2d::new(store, &format!("{p}.conv"), c, config.growth, 3, 1, 1, false, rng)?,
                });
                c += config.growth;
            }
            levels.push(Level { transition, block });
        }
        Ok(Self { config, stem_conv, stem_bn, levels })
    }

    /// Features at strides `1, 2, 4, ..., 2^levels`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Vec<Var>> {
        let mut h = self.stem_conv.forward(tape, store, x)?;
        h = self.stem_bn.forward(tape, store, h, mode)?;
        h = tape.relu(h);
        let mut feats = vec![h];
        for level in &self.levels {
            h = match &level.transition {
                None => tape.max_pool2d(h, 3, 2, 1)?,
                Some(t) => {
                    let a = t.bn.forward(tape, store, h, mode)?;
                    let a = tape.relu(a);
                    let a = t.conv.forward(tape, store, a)?;
                    tape.avg_pool2d(a, 2, 2)?
                }
            };
            for layer in &level.block {
                let a = layer.bn.forward(tape, store, h, mode)?;
                let a = tape.relu(a);
                let a = layer.conv.forward(tape, store, a)?;
                h = tape.concat_channels(&[h, a])?;
            }
            feats.push(h);
        }
        Ok(feats)
    }
}
