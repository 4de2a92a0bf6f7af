//! Training objective: supervised mask loss plus the audio-visual matching
//! regularizer in its AV and VV forms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AvsError, Result};
use crate::graph::{Graph, Var};
use crate::nn;
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::types::{MaskVolume, SettingKind, TaskSetting};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AvmVariant {
    None,
    #[serde(rename = "av")]
    Av,
    #[serde(rename = "vv")]
    Vv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairingPool {
    Video,
    Batch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda: f64,
    pub avm_variant: AvmVariant,
    pub eps: f64,
    pub vv_pool: PairingPool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.5, avm_variant: AvmVariant::Av, eps: 1e-7, vv_pool: PairingPool::Video }
    }
}

impl LossConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(AvsError::InvalidConfig(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(AvsError::InvalidConfig(format!("eps must lie in (0, 0.5), got {}", self.eps)));
        }
        Ok(())
    }

    /// Single-source training never uses the matching term.
    pub fn effective_lambda(&self, setting: &TaskSetting) -> f64 {
        if setting.kind == SettingKind::S4 {
            0.0
        } else {
            self.lambda
        }
    }

    pub fn uses_avm(&self, setting: &TaskSetting) -> bool {
        self.avm_variant != AvmVariant::None && self.effective_lambda(setting) > 0.0
    }
}

pub fn avm_prefix(stage: usize) -> String {
    format!("avm.stage{stage}")
}

/// Per-stage audio projection `d -> C_i` used by the AV matching term.
pub fn init_avm_projection<S: Real>(p: &mut ParamStore<S>, stage: usize, dim: usize, channels: usize, rng: &mut impl Rng) {
    nn::init_linear(p, &avm_prefix(stage), dim, channels, rng);
}

/// Sigmoid for one class, softmax over classes otherwise.
pub fn probabilities<S: Real>(g: &mut Graph<'_, S>, scores: Var, setting: &TaskSetting) -> Var {
    if setting.is_binary() {
        g.sigmoid(scores)
    } else {
        g.softmax(scores)
    }
}

/// Soft foreground map `[T, H, W, 1]`: the probability itself for one class,
/// one minus the background probability otherwise.
pub fn foreground<S: Real>(g: &mut Graph<'_, S>, probs: Var) -> Var {
    if g.shape(probs)[3] == 1 {
        probs
    } else {
        let bg = g.slice_last(probs, 0, 1);
        g.affine(bg, -S::one(), S::one())
    }
}

/// Mean BCE (one class) or categorical cross-entropy over the pixels of
/// supervised frames. `probs` is `[T, H, W, K]`.
pub fn main_loss<S: Real>(
    g: &mut Graph<'_, S>,
    probs: Var,
    gt: &MaskVolume,
    supervised: &[bool],
    eps: f64,
) -> Result<Var> {
    let (t, h, w, k) = g.value(probs).dims4()?;
    if (gt.clips, gt.height, gt.width) != (t, h, w) || supervised.len() != t {
        return Err(AvsError::ShapeMismatch(format!(
            "prediction [{t}, {h}, {w}], ground truth [{}, {}, {}], {} supervision flags",
            gt.clips,
            gt.height,
            gt.width,
            supervised.len()
        )));
    }
    let idx: Vec<usize> = (0..t).filter(|&i| supervised[i]).collect();
    if idx.is_empty() {
        return Err(AvsError::NoSupervisedFrames);
    }
    let labels = gt.select(&idx);
    let classes = k.max(2);
    if let Some(&bad) = labels.data().iter().find(|&&id| usize::from(id) >= classes) {
        return Err(AvsError::ClassIdOutOfRange { id: u32::from(bad), num_classes: k });
    }
    let p = g.select_frames(probs, &idx);
    let p = g.clamp(p, S::lit(eps), S::lit(1.0 - eps));
    let logp = g.log(p);
    let shape = [idx.len(), h, w, k];
    if k == 1 {
        let y = Tensor::new(&shape, labels.data().iter().map(|&id| S::lit(f64::from(id))).collect())?;
        let not_y = y.map(|v| S::one() - v);
        let q = g.affine(p, -S::one(), S::one());
        let logq = g.log(q);
        let y = g.constant(y);
        let not_y = g.constant(not_y);
        let pos = g.mul(y, logp);
        let neg = g.mul(not_y, logq);
        let ll = g.add(pos, neg);
        let m = g.mean(ll);
        Ok(g.scale(m, -S::one()))
    } else {
        let onehot = Tensor::from_fn(&shape, |i| if usize::from(labels.data()[i / k]) == i % k { S::one() } else { S::zero() });
        let onehot = g.constant(onehot);
        let ll = g.mul(onehot, logp);
        let s = g.sum(ll);
        Ok(g.scale(s, S::lit(-1.0 / (idx.len() * h * w) as f64)))
    }
}

/// `mean_t KL(softmax(p_t) || softmax(q_t))` for `[T, C]` logits.
pub fn kl_softmax<S: Real>(g: &mut Graph<'_, S>, p_logits: Var, q_logits: Var) -> Var {
    let p = g.softmax(p_logits);
    let logp = g.log_softmax(p_logits);
    let logq = g.log_softmax(q_logits);
    let diff = g.sub(logp, logq);
    let terms = g.mul(p, diff);
    let s = g.sum(terms);
    let t = g.shape(p_logits)[0];
    g.scale(s, S::lit(1.0 / t as f64))
}

/// `avg(M_i ⊙ Z_i)` per stage: the mask is average-pooled to the stage
/// resolution, multiplied in, and the result averaged over space to `[T, C]`.
pub fn masked_visual<S: Real>(g: &mut Graph<'_, S>, mask: Var, fused: &[Var]) -> Result<Vec<Var>> {
    let (t, h, w, mc) = g.value(mask).dims4()?;
    if mc != 1 {
        return Err(AvsError::ChannelMismatch { what: "matching mask".into(), expected: 1, actual: mc });
    }
    let mut out = Vec::with_capacity(fused.len());
    for &z in fused {
        let (tz, hz, wz, _) = g.value(z).dims4()?;
        if tz != t || hz == 0 || h % hz != 0 || w % wz != 0 || h / hz != w / wz {
            return Err(AvsError::ShapeMismatch(format!("mask [{t}, {h}, {w}] cannot pool to stage [{tz}, {hz}, {wz}]")));
        }
        let mi = g.avg_pool(mask, h / hz);
        let masked = g.mul_channel(z, mi);
        out.push(g.spatial_mean(masked));
    }
    Ok(out)
}

/// Sum over stages of `mean_t KL(softmax(avg(M_i ⊙ Z_i)) || softmax(linear_i(A)))`.
/// `stages` names the stage index of each entry of `fused`.
pub fn avm_av_loss<S: Real>(g: &mut Graph<'_, S>, mask: Var, fused: &[Var], stages: &[usize], audio: Var) -> Result<Var> {
    if fused.len() != stages.len() || fused.is_empty() {
        return Err(AvsError::StageCount(fused.len()));
    }
    let visual = masked_visual(g, mask, fused)?;
    let mut total: Option<Var> = None;
    for (&v, &stage) in visual.iter().zip(stages) {
        let a = nn::linear(g, &avm_prefix(stage), audio)?;
        if g.shape(a) != g.shape(v) {
            return Err(AvsError::ShapeMismatch(format!(
                "stage {stage}: audio projection {:?} vs visual {:?}",
                g.shape(a),
                g.shape(v)
            )));
        }
        let kl = kl_softmax(g, v, a);
        total = Some(match total {
            None => kl,
            Some(acc) => g.add(acc, kl),
        });
    }
    Ok(total.expect("at least one stage"))
}

/// Nearest other row of `audio` by Euclidean distance; ties go to the
/// lowest index.
pub fn audio_partners<S: Real>(audio: &Tensor<S>) -> Result<Vec<usize>> {
    let (n, d) = audio.dims2()?;
    if n < 2 {
        return Err(AvsError::PoolTooSmall(n));
    }
    let rows = audio.data();
    Ok((0..n)
        .map(|t| {
            let mut best = (usize::MAX, f64::INFINITY);
            for u in (0..n).filter(|&u| u != t) {
                let dist: f64 = (0..d)
                    .map(|j| {
                        let e = rows[t * d + j].as_f64() - rows[u * d + j].as_f64();
                        e * e
                    })
                    .sum();
                if dist < best.1 {
                    best = (u, dist);
                }
            }
            best.0
        })
        .collect())
}

/// Sum over stages of `mean_t KL(softmax(v_t) || softmax(v_{t*}))` where
/// `t*` is the audio partner of `t` and `v` the masked visual features.
/// `mask`, `fused` and `audio` may stack several videos along the clip axis
/// to widen the pairing pool.
pub fn avm_vv_loss<S: Real>(g: &mut Graph<'_, S>, mask: Var, fused: &[Var], audio: Var) -> Result<Var> {
    if fused.is_empty() {
        return Err(AvsError::StageCount(0));
    }
    let partners = audio_partners(g.value(audio))?;
    let visual = masked_visual(g, mask, fused)?;
    let mut total: Option<Var> = None;
    for v in visual {
        let paired = g.select_frames(v, &partners);
        let kl = kl_softmax(g, v, paired);
        total = Some(match total {
            None => kl,
            Some(acc) => g.add(acc, kl),
        });
    }
    Ok(total.expect("at least one stage"))
}

/// Loss terms of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub main: Var,
    pub avm: Option<Var>,
}

/// Per-clip inputs needed by the objective.
pub struct ObjectiveInputs<'a> {
    pub probs: Var,
    pub fused: &'a [Var],
    pub stages: &'a [usize],
    pub audio: Var,
    pub gt: &'a MaskVolume,
    pub supervised: &'a [bool],
}

/// `main + λ·avm`; the matching branch is not built when it would be
/// multiplied by zero or the variant is `none`.
pub fn total_loss<S: Real>(g: &mut Graph<'_, S>, cfg: &LossConfig, setting: &TaskSetting, inp: &ObjectiveInputs<'_>) -> Result<LossTerms> {
    cfg.check()?;
    let main = main_loss(g, inp.probs, inp.gt, inp.supervised, cfg.eps)?;
    if !cfg.uses_avm(setting) {
        return Ok(LossTerms { total: main, main, avm: None });
    }
    let mask = foreground(g, inp.probs);
    let avm = match cfg.avm_variant {
        AvmVariant::Av => avm_av_loss(g, mask, inp.fused, inp.stages, inp.audio)?,
        AvmVariant::Vv => avm_vv_loss(g, mask, inp.fused, inp.audio)?,
        AvmVariant::None => unreachable!("checked by uses_avm"),
    };
    let weighted = g.scale(avm, S::lit(cfg.effective_lambda(setting)));
    let total = g.add(main, weighted);
    Ok(LossTerms { total, main, avm: Some(avm) })
}
