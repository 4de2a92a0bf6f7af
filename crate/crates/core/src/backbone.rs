//! Four-stage convolutional pyramid encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AvsError, Result};
use crate::graph::{Graph, Var};
use crate::kernels::ConvSpec;
use crate::nn;
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::types::FeaturePyramid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    /// Output channels C1..C4.
    pub channels: [usize; 4],
    pub stem_channels: usize,
    /// Residual blocks per stage; the first one downsamples.
    pub blocks_per_stage: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl BackboneConfig {
    pub fn desk() -> Self {
        Self { channels: [32, 64, 128, 256], stem_channels: 16, blocks_per_stage: 1 }
    }

    /// ResNet-50 stage widths.
    pub fn resnet_scale() -> Self {
        Self { channels: [256, 512, 1024, 2048], stem_channels: 64, blocks_per_stage: 1 }
    }

    /// PVT-v2 stage widths.
    pub fn pvt_scale() -> Self {
        Self { channels: [64, 128, 320, 512], stem_channels: 32, blocks_per_stage: 1 }
    }

    pub fn check(&self) -> Result<()> {
        if self.channels.iter().any(|&c| c == 0) || self.stem_channels == 0 || self.blocks_per_stage == 0 {
            return Err(AvsError::InvalidConfig("backbone widths and block counts must be positive".into()));
        }
        Ok(())
    }
}

pub const BACKBONE_PREFIX: &str = "backbone";
const DOWN: ConvSpec = ConvSpec::new(2, 1, 1);
const SAME: ConvSpec = ConvSpec::new(1, 1, 1);
const POINT_DOWN: ConvSpec = ConvSpec::new(2, 0, 1);

/// Stride-2 stem, then one downsampling residual block per stage, so stage
/// `i` sits at `(H, W) / 2^(i+1)`. Frames are encoded independently.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualBackbone {
    pub config: BackboneConfig,
}

impl VisualBackbone {
    pub fn new(config: BackboneConfig) -> Self {
        Self { config }
    }

    pub fn init<S: Real>(&self, p: &mut ParamStore<S>, rng: &mut impl Rng) {
        let c = &self.config;
        nn::init_conv(p, &format!("{BACKBONE_PREFIX}.stem"), 3, 3, c.stem_channels, rng);
        let mut cin = c.stem_channels;
        for (i, &cout) in c.channels.iter().enumerate() {
            for b in 0..c.blocks_per_stage {
                let pre = format!("{BACKBONE_PREFIX}.stage{}.block{b}", i + 1);
                let bin = if b == 0 { cin } else { cout };
                nn::init_conv(p, &format!("{pre}.conv1"), 3, bin, cout, rng);
                nn::init_conv(p, &format!("{pre}.conv2"), 3, cout, cout, rng);
                if b == 0 {
                    nn::init_conv(p, &format!("{pre}.shortcut"), 1, bin, cout, rng);
                }
            }
            cin = cout;
        }
    }

    /// `x`: normalized `[T, H, W, 3]` frames. Returns stages 1..4.
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<[Var; 4]> {
        let (_, h, w, c) = g.value(x).dims4()?;
        if c != 3 {
            return Err(AvsError::ChannelMismatch { what: "backbone input".into(), expected: 3, actual: c });
        }
        if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(AvsError::IndivisibleResolution { height: h, width: w, divisor: 32 });
        }
        let x = nn::conv(g, &format!("{BACKBONE_PREFIX}.stem"), x, DOWN)?;
        let mut x = g.relu(x);
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            for b in 0..self.config.blocks_per_stage {
                let pre = format!("{BACKBONE_PREFIX}.stage{}.block{b}", i + 1);
                let first = if b == 0 { DOWN } else { SAME };
                let y = nn::conv(g, &format!("{pre}.conv1"), x, first)?;
                let y = g.relu(y);
                let y = nn::conv(g, &format!("{pre}.conv2"), y, SAME)?;
                let skip = if b == 0 { nn::conv(g, &format!("{pre}.shortcut"), x, POINT_DOWN)? } else { x };
                let sum = g.add(y, skip);
                x = g.relu(sum);
            }
            stages.push(x);
        }
        Ok([stages[0], stages[1], stages[2], stages[3]])
    }

    pub fn encode_frames<S: Real>(&self, params: &ParamStore<S>, frames: &Tensor<S>) -> Result<FeaturePyramid<S>> {
        let (_, h, w, _) = frames.dims4()?;
        let mut g = Graph::with_params(params);
        let x = g.constant(frames.clone());
        let stages = self.forward(&mut g, x)?;
        FeaturePyramid::new(stages.iter().map(|&s| g.value(s).clone()).collect(), (h, w))
    }
}
