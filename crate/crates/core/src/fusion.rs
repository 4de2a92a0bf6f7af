//! Per-stage cross-modal fusion: multi-rate ASPP context followed by either
//! TPAVI attention, naive audio addition, or nothing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AvsError, Result};
use crate::graph::{Graph, Var};
use crate::kernels::{self, ConvSpec};
use crate::nn;
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsppConfig {
    /// Output channels C shared by every stage.
    pub channels: usize,
    /// Rate 1 is a 1x1 branch; other rates are dilated 3x3 branches.
    pub rates: Vec<usize>,
    pub image_pool: bool,
}

impl Default for AsppConfig {
    fn default() -> Self {
        Self { channels: 256, rates: vec![1, 6, 12, 18], image_pool: true }
    }
}

pub fn aspp_prefix(stage: usize) -> String {
    format!("aspp.stage{stage}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aspp {
    pub config: AsppConfig,
}

impl Aspp {
    pub fn new(config: AsppConfig) -> Self {
        Self { config }
    }

    fn branches(&self) -> usize {
        self.config.rates.len() + usize::from(self.config.image_pool)
    }

    pub fn init<S: Real>(&self, p: &mut ParamStore<S>, stage: usize, cin: usize, rng: &mut impl Rng) {
        let pre = aspp_prefix(stage);
        let c = self.config.channels;
        for (j, &rate) in self.config.rates.iter().enumerate() {
            let k = if rate == 1 { 1 } else { 3 };
            nn::init_conv(p, &format!("{pre}.branch{j}"), k, cin, c, rng);
        }
        if self.config.image_pool {
            nn::init_linear(p, &format!("{pre}.pool"), cin, c, rng);
        }
        nn::init_conv(p, &format!("{pre}.project"), 1, c * self.branches(), c, rng);
    }

    /// `F_i: [T, h, w, C_i] -> V_i: [T, h, w, C]`.
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, stage: usize, x: Var) -> Result<Var> {
        let pre = aspp_prefix(stage);
        let (_, h, w, cin) = g.value(x).dims4()?;
        let wv = g.param(&format!("{pre}.branch0.weight"))?;
        let expected = g.shape(wv)[2];
        if cin != expected {
            return Err(AvsError::ChannelMismatch { what: format!("ASPP stage {stage} input"), expected, actual: cin });
        }
        let mut outs = Vec::with_capacity(self.branches());
        for (j, &rate) in self.config.rates.iter().enumerate() {
            let spec = if rate == 1 { ConvSpec::new(1, 0, 1) } else { ConvSpec::new(1, rate, rate) };
            let y = nn::conv(g, &format!("{pre}.branch{j}"), x, spec)?;
            outs.push(g.relu(y));
        }
        if self.config.image_pool {
            let pooled = g.spatial_mean(x);
            let y = nn::linear(g, &format!("{pre}.pool"), pooled)?;
            let y = g.relu(y);
            outs.push(g.spatial_broadcast(y, h, w));
        }
        let cat = g.concat(&outs);
        nn::conv(g, &format!("{pre}.project"), cat, ConvSpec::new(1, 0, 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    None,
    Naive,
    Tpavi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpaviConfig {
    /// Inner width of theta/phi/g; `None` means C / 2.
    pub inner_channels: Option<usize>,
}

impl Default for TpaviConfig {
    fn default() -> Self {
        Self { inner_channels: None }
    }
}

pub fn fusion_prefix(stage: usize) -> String {
    format!("fusion.stage{stage}")
}

/// Audio projection `d -> C` for one stage, shared by TPAVI and naive fusion.
pub fn init_audio_projection<S: Real>(p: &mut ParamStore<S>, stage: usize, dim: usize, channels: usize, rng: &mut impl Rng) {
    nn::init_linear(p, &format!("{}.audio_proj", fusion_prefix(stage)), dim, channels, rng);
}

/// `A: [T, d] -> Â: [T, h, w, C]`, the projected audio duplicated over space.
pub fn broadcast_audio<S: Real>(g: &mut Graph<'_, S>, stage: usize, audio: Var, h: usize, w: usize) -> Result<Var> {
    g.value(audio).dims2()?;
    let a = nn::linear(g, &format!("{}.audio_proj", fusion_prefix(stage)), audio)?;
    Ok(g.spatial_broadcast(a, h, w))
}

/// `Z = V + broadcast_audio(A)`.
pub fn naive_fusion<S: Real>(g: &mut Graph<'_, S>, stage: usize, v: Var, audio: Var) -> Result<Var> {
    let (t, h, w, c) = g.value(v).dims4()?;
    check_audio_clips(g, audio, t)?;
    let a = broadcast_audio(g, stage, audio, h, w)?;
    if g.shape(a)[3] != c {
        return Err(AvsError::ChannelMismatch { what: "naive fusion audio".into(), expected: c, actual: g.shape(a)[3] });
    }
    Ok(g.add(v, a))
}

fn check_audio_clips<S: Real>(g: &Graph<'_, S>, audio: Var, t: usize) -> Result<()> {
    let (ta, _) = g.value(audio).dims2()?;
    if ta != t {
        return Err(AvsError::ShapeMismatch(format!("audio has {ta} clips, visual features have {t}")));
    }
    Ok(())
}

/// Dense `N x N` audio-visual similarity of one stage, `N = T h w`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap<S> {
    pub stage: usize,
    pub clips: usize,
    pub height: usize,
    pub width: usize,
    pub alpha: Tensor<S>,
}

impl<S: Real> AttentionMap<S> {
    pub fn positions(&self) -> usize {
        self.clips * self.height * self.width
    }

    /// Per-pixel score: each row of alpha averaged over the columns that
    /// belong to the row's own time index. Shape `[T, h, w, 1]`.
    pub fn row_scores(&self) -> Tensor<S> {
        let n = self.positions();
        let per = self.height * self.width;
        let inv = S::lit(1.0 / per as f64);
        Tensor::from_fn(&[self.clips, self.height, self.width, 1], |p| {
            let t = p / per;
            let row = &self.alpha.data()[p * n..(p + 1) * n];
            row[t * per..(t + 1) * per].iter().copied().sum::<S>() * inv
        })
    }

    /// Row scores upsampled to `height x width` and min-max normalized to
    /// `[0, 1]` per frame. Shape `[T, height, width]`.
    pub fn heatmaps(&self, height: usize, width: usize) -> Tensor<S> {
        let up = kernels::bilinear_forward(&self.row_scores(), height, width);
        let per = height * width;
        let mut out = up.reshape(&[self.clips, height, width]).expect("heatmap reshape");
        for frame in out.data_mut().chunks_exact_mut(per) {
            let lo = frame.iter().fold(S::infinity(), |a, &b| a.min(b));
            let hi = frame.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
            let span = hi - lo;
            for v in frame {
                *v = if span > S::zero() { (*v - lo) / span } else { S::zero() };
            }
        }
        out
    }
}

/// Temporal pixel-wise audio-visual interaction:
/// `Z = V + mu(alpha g(V))`, `alpha = theta(V) phi(Â)^T / N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tpavi {
    pub config: TpaviConfig,
}

pub struct TpaviOutput {
    pub z: Var,
    /// `[N, N]` similarity, present when requested.
    pub alpha: Option<Var>,
}

impl Tpavi {
    pub fn new(config: TpaviConfig) -> Self {
        Self { config }
    }

    pub fn inner(&self, channels: usize) -> usize {
        self.config.inner_channels.unwrap_or((channels / 2).max(1))
    }

    /// theta, phi, g are He-initialized; mu starts at zero so the block is
    /// the identity at initialization.
    pub fn init<S: Real>(&self, p: &mut ParamStore<S>, stage: usize, channels: usize, rng: &mut impl Rng) {
        let pre = fusion_prefix(stage);
        let inner = self.inner(channels);
        for name in ["theta", "phi", "g"] {
            nn::init_linear(p, &format!("{pre}.{name}"), channels, inner, rng);
        }
        p.init_zeros(&format!("{pre}.mu.weight"), &[inner, channels]);
        p.init_zeros(&format!("{pre}.mu.bias"), &[channels]);
    }

    /// Fuses `V: [T, h, w, C]` with the projected, broadcast audio `Â` of the
    /// same shape. With `explicit_attention` the `N x N` matrix is formed;
    /// otherwise the product is reassociated as `theta (phi^T g) / N`.
    pub fn fuse<S: Real>(&self, g: &mut Graph<'_, S>, stage: usize, v: Var, a_hat: Var, explicit_attention: bool) -> Result<TpaviOutput> {
        let pre = fusion_prefix(stage);
        let (t, h, w, c) = g.value(v).dims4()?;
        if g.shape(a_hat) != [t, h, w, c] {
            return Err(AvsError::ShapeMismatch(format!(
                "Â has shape {:?}, V has {:?}",
                g.shape(a_hat),
                [t, h, w, c]
            )));
        }
        let n = t * h * w;
        let inv_n = S::lit(1.0 / n as f64);
        let vf = g.reshape(v, &[n, c]);
        let af = g.reshape(a_hat, &[n, c]);
        let theta = nn::linear(g, &format!("{pre}.theta"), vf)?;
        let phi = nn::linear(g, &format!("{pre}.phi"), af)?;
        let gv = nn::linear(g, &format!("{pre}.g"), vf)?;
        let (y, alpha) = if explicit_attention {
            let sim = g.matmul(theta, phi, false, true);
            let alpha = g.scale(sim, inv_n);
            (g.matmul(alpha, gv, false, false), Some(alpha))
        } else {
            let kv = g.matmul(phi, gv, true, false);
            let y = g.matmul(theta, kv, false, false);
            (g.scale(y, inv_n), None)
        };
        let mu = nn::linear(g, &format!("{pre}.mu"), y)?;
        let zf = g.add(vf, mu);
        if !g.value(zf).is_finite() {
            return Err(AvsError::NonFinite(format!("TPAVI stage {stage} output")));
        }
        let z = g.reshape(zf, &[t, h, w, c]);
        Ok(TpaviOutput { z, alpha })
    }

    /// Projects and broadcasts `audio: [T, d]`, then fuses it with `v`.
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, stage: usize, v: Var, audio: Var, explicit_attention: bool) -> Result<TpaviOutput> {
        let (t, h, w, _) = g.value(v).dims4()?;
        check_audio_clips(g, audio, t)?;
        let a_hat = broadcast_audio(g, stage, audio, h, w)?;
        self.fuse(g, stage, v, a_hat, explicit_attention)
    }

    /// Evaluates the block on concrete tensors, returning `Z` and `alpha`.
    pub fn apply<S: Real>(&self, params: &ParamStore<S>, stage: usize, v: &Tensor<S>, audio: &Tensor<S>) -> Result<(Tensor<S>, AttentionMap<S>)> {
        let (t, h, w, _) = v.dims4()?;
        let mut g = Graph::with_params(params);
        let vv = g.constant(v.clone());
        let av = g.constant(audio.clone());
        let out = self.forward(&mut g, stage, vv, av, true)?;
        let alpha = g.value(out.alpha.expect("explicit attention requested")).clone();
        Ok((g.value(out.z).clone(), AttentionMap { stage, clips: t, height: h, width: w, alpha }))
    }
}
