//! FPN-style decoder merging the fused pyramid top-down into K mask channels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AvsError, Result};
use crate::graph::{Graph, Var};
use crate::kernels::ConvSpec;
use crate::nn;
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub width: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { width: 128 }
    }
}

pub const DECODER_PREFIX: &str = "decoder";

/// Lateral 1x1 projections, 3x3 refinement after each merge, nearest 2x
/// upsampling between stages, a 1x1 classifier at stage-1 resolution and a
/// final bilinear 4x upsampling to frame size.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub num_classes: usize,
}

impl Decoder {
    pub fn new(config: DecoderConfig, num_classes: usize) -> Self {
        Self { config, num_classes }
    }

    pub fn init<S: Real>(&self, p: &mut ParamStore<S>, stage_channels: [usize; 4], rng: &mut impl Rng) {
        let d = self.config.width;
        for (i, &c) in stage_channels.iter().enumerate() {
            nn::init_conv(p, &format!("{DECODER_PREFIX}.lateral{}", i + 1), 1, c, d, rng);
            nn::init_conv(p, &format!("{DECODER_PREFIX}.refine{}", i + 1), 3, d, d, rng);
        }
        nn::init_conv(p, &format!("{DECODER_PREFIX}.classifier"), 1, d, self.num_classes, rng);
    }

    /// `fused`: Z1..Z4. Returns raw scores `[T, H, W, K]` with `H = 4 h1`.
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, fused: &[Var]) -> Result<Var> {
        if fused.len() != 4 {
            return Err(AvsError::StageCount(fused.len()));
        }
        let point = ConvSpec::new(1, 0, 1);
        let same = ConvSpec::new(1, 1, 1);
        let mut state: Option<Var> = None;
        for i in (1..=4).rev() {
            let z = fused[i - 1];
            let lat = nn::conv(g, &format!("{DECODER_PREFIX}.lateral{i}"), z, point)?;
            let merged = match state {
                None => lat,
                Some(prev) => {
                    let up = g.upsample_nearest(prev, 2);
                    if g.shape(up) != g.shape(lat) {
                        return Err(AvsError::ShapeMismatch(format!(
                            "decoder stage {i}: upsampled {:?} vs lateral {:?}",
                            g.shape(up),
                            g.shape(lat)
                        )));
                    }
                    g.add(up, lat)
                }
            };
            let r = nn::conv(g, &format!("{DECODER_PREFIX}.refine{i}"), merged, same)?;
            state = Some(g.relu(r));
        }
        let logits = nn::conv(g, &format!("{DECODER_PREFIX}.classifier"), state.expect("four stages"), point)?;
        let (_, h1, w1, _) = g.value(logits).dims4()?;
        Ok(g.bilinear(logits, 4 * h1, 4 * w1))
    }

    pub fn decode<S: Real>(&self, params: &ParamStore<S>, fused: &[Tensor<S>]) -> Result<Tensor<S>> {
        let mut g = Graph::with_params(params);
        let vars: Vec<Var> = fused.iter().map(|z| g.constant(z.clone())).collect();
        let out = self.forward(&mut g, &vars)?;
        Ok(g.value(out).clone())
    }
}
