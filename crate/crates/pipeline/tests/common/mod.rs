#![allow(dead_code)]

use enteroseg::PipelineConfig;

/// A small three-organ phantom config that trains in seconds.
pub fn tiny_toml(patients: usize, epochs: usize) -> String {
    format!(
        r#"
seed = 11

[data]
classes = ["stomach", "small_intestine", "appendix"]

[phantom]
patients = {patients}
dims = [32, 6, 32]
pixdim = [1.5, 4.0, 1.5]
body = 300.0
noise = 20.0

[[phantom.organs]]
name = "stomach"
shape = "ellipsoid"
radius = [0.2, 0.3]
contrast = [620.0, 700.0]

[[phantom.organs]]
name = "small_intestine"
shape = "tube"
radius = [0.1, 0.15]
contrast = [460.0, 520.0]

[[phantom.organs]]
name = "appendix"
shape = "ellipsoid"
radius = [0.035, 0.045]
contrast = [820.0, 900.0]
rare = true

[folds]
k = 5

[coarse.net]
input_size = 16
decoder_base = 4
n_classes = 4

[coarse.net.encoder]
in_channels = 1
levels = 2
stem_channels = 4
block_layers = 1
growth = 4

[coarse.train]
lr = 1e-3
batch_size = 8
max_epochs = {epochs}

[coarse.weighting]
boost_class = "appendix"

[organ]
pad = 4
parallel = false

[organ.net]
input_size = 16
decoder_base = 4
q_order = 3

[organ.net.encoder]
in_channels = 1
levels = 2
stem_channels = 4
block_layers = 1
growth = 4

[organ.train]
lr = 1e-3
batch_size = 8
max_epochs = {epochs}
"#
    )
}

pub fn tiny_config(patients: usize, epochs: usize) -> PipelineConfig {
    PipelineConfig::from_toml(&tiny_toml(patients, epochs)).expect("tiny config parses")
}
