//! The full segmentation network: audio encoder, visual backbone, per-stage
//! ASPP and fusion, and the FPN decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioEncoder, AudioEncoderConfig, SpectrogramConfig, AUDIO_PREFIX};
use crate::backbone::{BackboneConfig, VisualBackbone};
use crate::decoder::{Decoder, DecoderConfig};
use crate::error::{AvsError, Result};
use crate::fusion::{self, Aspp, AsppConfig, AttentionMap, FusionMode, Tpavi, TpaviConfig};
use crate::graph::{Graph, Var};
use crate::objectives;
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub fusion: FusionMode,
    /// 1-based stages that receive TPAVI; the rest pass ASPP output through.
    pub tpavi_stages: Vec<usize>,
    pub frame_mean: [f64; 3],
    pub frame_std: [f64; 3],
    pub spectrogram: SpectrogramConfig,
    pub audio: AudioEncoderConfig,
    pub backbone: BackboneConfig,
    pub aspp: AsppConfig,
    pub tpavi: TpaviConfig,
    pub decoder: DecoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 1,
            fusion: FusionMode::Tpavi,
            tpavi_stages: vec![1, 2, 3, 4],
            frame_mean: [0.485, 0.456, 0.406],
            frame_std: [0.229, 0.224, 0.225],
            spectrogram: SpectrogramConfig::default(),
            audio: AudioEncoderConfig::default(),
            backbone: BackboneConfig::default(),
            aspp: AsppConfig::default(),
            tpavi: TpaviConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > 255 {
            return Err(AvsError::InvalidConfig(format!("num_classes must be in 1..=255, got {}", self.num_classes)));
        }
        if self.tpavi_stages.iter().any(|s| !(1..=4).contains(s)) {
            return Err(AvsError::InvalidConfig(format!("tpavi_stages must be within 1..=4, got {:?}", self.tpavi_stages)));
        }
        if self.frame_std.iter().any(|&s| s <= 0.0) {
            return Err(AvsError::InvalidConfig("frame_std must be positive".into()));
        }
        if self.aspp.channels == 0 || self.decoder.width == 0 || self.audio.dim == 0 {
            return Err(AvsError::InvalidConfig("layer widths must be positive".into()));
        }
        self.spectrogram.check()?;
        self.backbone.check()
    }

    /// Stages that carry a fusion block under the current mode.
    pub fn fused_stages(&self) -> Vec<usize> {
        match self.fusion {
            FusionMode::None => vec![],
            FusionMode::Naive => vec![1, 2, 3, 4],
            FusionMode::Tpavi => {
                let mut s = self.tpavi_stages.clone();
                s.sort_unstable();
                s.dedup();
                s
            }
        }
    }
}

/// Graph handles produced by one forward pass.
pub struct ModelOutputs {
    /// Raw scores `[T, H, W, K]`.
    pub scores: Var,
    /// Audio embedding `[T, d]`.
    pub audio: Var,
    /// Backbone features F1..F4.
    pub features: [Var; 4],
    /// Fused maps Z1..Z4.
    pub fused: [Var; 4],
    /// `(stage, [N, N])` attention for each TPAVI stage when requested.
    pub attention: Vec<(usize, Var)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AvsModel {
    pub config: ModelConfig,
    pub audio: AudioEncoder,
    pub backbone: VisualBackbone,
    pub aspp: Aspp,
    pub tpavi: Tpavi,
    pub decoder: Decoder,
}

impl AvsModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.check()?;
        Ok(Self {
            audio: AudioEncoder::new(config.audio.clone()),
            backbone: VisualBackbone::new(config.backbone.clone()),
            aspp: Aspp::new(config.aspp.clone()),
            tpavi: Tpavi::new(config.tpavi.clone()),
            decoder: Decoder::new(config.decoder.clone(), config.num_classes),
            config,
        })
    }

    /// Deterministic initialization; every module draws from its own stream.
    pub fn init<S: Real>(&self, seed: u64) -> ParamStore<S> {
        let mut p = ParamStore::new();
        let stream = |k: u64| ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k));
        self.audio.init(&mut p, &mut stream(1));
        self.backbone.init(&mut p, &mut stream(2));
        let c = self.config.aspp.channels;
        let d = self.config.audio.dim;
        let mut rng = stream(3);
        for (i, &cin) in self.config.backbone.channels.iter().enumerate() {
            self.aspp.init(&mut p, i + 1, cin, &mut rng);
        }
        let mut rng = stream(4);
        for stage in self.config.fused_stages() {
            fusion::init_audio_projection(&mut p, stage, d, c, &mut rng);
            if self.config.fusion == FusionMode::Tpavi {
                self.tpavi.init(&mut p, stage, c, &mut rng);
            }
        }
        let mut rng = stream(5);
        for stage in 1..=4 {
            objectives::init_avm_projection(&mut p, stage, d, c, &mut rng);
        }
        self.decoder.init(&mut p, [c; 4], &mut stream(6));
        p
    }

    /// Maps `[T, H, W, 3]` frames in `[0, 1]` to normalized network input.
    pub fn normalize_frames<S: Real>(&self, frames: &Tensor<f32>) -> Tensor<S> {
        let (m, s) = (self.config.frame_mean, self.config.frame_std);
        let d = frames.data();
        Tensor::from_fn(frames.shape(), |i| S::lit((f64::from(d[i]) - m[i % 3]) / s[i % 3]))
    }

    /// `frames`: normalized `[T, H, W, 3]`; `logmel`: `[T, frames, mels]`.
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, frames: Var, logmel: Var, explicit_attention: bool) -> Result<ModelOutputs> {
        if self.config.audio.frozen {
            g.freeze(AUDIO_PREFIX);
        }
        let t = g.shape(frames)[0];
        let audio = self.audio.forward(g, logmel)?;
        if g.shape(audio)[0] != t {
            return Err(AvsError::ShapeMismatch(format!("{} audio clips for {t} frames", g.shape(audio)[0])));
        }
        let features = self.backbone.forward(g, frames)?;
        let fused_stages = self.config.fused_stages();
        let mut fused = Vec::with_capacity(4);
        let mut attention = Vec::new();
        for (i, &f) in features.iter().enumerate() {
            let stage = i + 1;
            let v = self.aspp.forward(g, stage, f)?;
            let z = if !fused_stages.contains(&stage) {
                v
            } else if self.config.fusion == FusionMode::Naive {
                fusion::naive_fusion(g, stage, v, audio)?
            } else {
                let out = self.tpavi.forward(g, stage, v, audio, explicit_attention)?;
                if let Some(a) = out.alpha {
                    attention.push((stage, a));
                }
                out.z
            };
            fused.push(z);
        }
        let scores = self.decoder.forward(g, &fused)?;
        Ok(ModelOutputs { scores, audio, features, fused: [fused[0], fused[1], fused[2], fused[3]], attention })
    }

    /// Raw scores for one video, without building gradients.
    pub fn predict<S: Real>(&self, params: &ParamStore<S>, frames: &Tensor<f32>, logmel: &Tensor<f32>) -> Result<Tensor<S>> {
        Ok(self.predict_with_attention(params, frames, logmel, false)?.0)
    }

    pub fn predict_with_attention<S: Real>(
        &self,
        params: &ParamStore<S>,
        frames: &Tensor<f32>,
        logmel: &Tensor<f32>,
        explicit_attention: bool,
    ) -> Result<(Tensor<S>, Vec<AttentionMap<S>>)> {
        self.predict_normalized(params, self.normalize_frames(frames), logmel.cast(), explicit_attention)
    }

    /// As [`Self::predict_with_attention`] for already normalized frames.
    pub fn predict_normalized<S: Real>(
        &self,
        params: &ParamStore<S>,
        frames: Tensor<S>,
        logmel: Tensor<S>,
        explicit_attention: bool,
    ) -> Result<(Tensor<S>, Vec<AttentionMap<S>>)> {
        let mut g = Graph::with_params(params);
        let x = g.constant(frames);
        let a = g.constant(logmel);
        let out = self.forward(&mut g, x, a, explicit_attention)?;
        let maps = out
            .attention
            .iter()
            .map(|&(stage, alpha)| {
                let (t, h, w, _) = g.value(out.fused[stage - 1]).dims4()?;
                Ok(AttentionMap { stage, clips: t, height: h, width: w, alpha: g.value(alpha).clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((g.value(out.scores).clone(), maps))
    }
}
