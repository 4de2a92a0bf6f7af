//! Log-mel front end and the convolutional audio encoder producing the
//! `T x d` audio embedding.

use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{AvsError, Result};
use crate::graph::{Graph, Var};
use crate::kernels::ConvSpec;
use crate::nn;
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::types::AudioEmbedding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrogramConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub log_floor: f64,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self { sample_rate: 16_000, window: 400, hop: 160, mel_bins: 64, log_floor: 1e-6, fmin: 125.0, fmax: 7500.0 }
    }
}

impl SpectrogramConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(AvsError::InvalidConfig(format!("spectrogram: {m}")));
        if self.hop == 0 || self.hop > self.window {
            return bad("hop must be in 1..=window");
        }
        if self.mel_bins == 0 {
            return bad("mel_bins must be >= 1");
        }
        if self.log_floor <= 0.0 || !self.log_floor.is_finite() {
            return bad("log floor must be positive");
        }
        if self.window > self.sample_rate as usize {
            return bad("window longer than one second");
        }
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return bad("need 0 <= fmin < fmax <= Nyquist");
        }
        Ok(())
    }

    pub fn fft_size(&self) -> usize {
        self.window.next_power_of_two()
    }

    /// STFT frames inside one one-second chunk.
    pub fn frames_per_second(&self) -> usize {
        1 + (self.sample_rate as usize - self.window) / self.hop
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `(lower, center, upper)` edge frequencies of each triangular mel filter.
pub fn mel_band_edges(cfg: &SpectrogramConfig) -> Vec<(f64, f64, f64)> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let step = (hi - lo) / (cfg.mel_bins + 1) as f64;
    let pts: Vec<f64> = (0..cfg.mel_bins + 2).map(|i| mel_to_hz(lo + step * i as f64)).collect();
    (0..cfg.mel_bins).map(|m| (pts[m], pts[m + 1], pts[m + 2])).collect()
}

/// Weight of a triangular filter at frequency `hz`.
pub fn triangle_weight((lo, center, hi): (f64, f64, f64), hz: f64) -> f64 {
    let up = (hz - lo) / (center - lo);
    let down = (hi - hz) / (hi - center);
    up.min(down).max(0.0)
}

/// Per-second log-mel spectrogram extractor with a cached FFT plan.
pub struct LogMel {
    config: SpectrogramConfig,
    window: Vec<f64>,
    /// `[mel_bins][fft_size / 2 + 1]`
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMel {
    pub fn new(config: SpectrogramConfig) -> Result<Self> {
        config.check()?;
        let n = config.fft_size();
        let window = (0..config.window)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / config.window as f64).cos())
            .collect();
        let bin_hz = config.sample_rate as f64 / n as f64;
        let filters = mel_band_edges(&config)
            .into_iter()
            .map(|edges| (0..=n / 2).map(|k| triangle_weight(edges, k as f64 * bin_hz)).collect())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self { config, window, filters, fft })
    }

    pub fn config(&self) -> &SpectrogramConfig {
        &self.config
    }

    /// Number of whole seconds covered by `len` samples, allowing one hop of slack.
    pub fn clips_for(&self, len: usize) -> usize {
        (len + self.config.hop) / self.config.sample_rate as usize
    }

    /// `[T, frames_per_second, mel_bins]` log-mel power, one slice per second.
    pub fn compute(&self, waveform: &[f32]) -> Result<Tensor<f32>> {
        if waveform.iter().any(|v| !v.is_finite()) {
            return Err(AvsError::NonFinite("waveform".into()));
        }
        let sr = self.config.sample_rate as usize;
        let clips = self.clips_for(waveform.len());
        if clips == 0 {
            return Err(AvsError::WaveformTooShort { samples: waveform.len(), needed: sr - self.config.hop });
        }
        let frames = self.config.frames_per_second();
        let mels = self.config.mel_bins;
        let n = self.config.fft_size();
        let floor = self.config.log_floor;
        let mut out = Vec::with_capacity(clips * frames * mels);
        let mut chunk = vec![0.0f64; sr];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut power = vec![0.0f64; n / 2 + 1];
        for t in 0..clips {
            for (i, c) in chunk.iter_mut().enumerate() {
                *c = waveform.get(t * sr + i).copied().unwrap_or(0.0) as f64;
            }
            for f in 0..frames {
                let start = f * self.config.hop;
                for (k, b) in buf.iter_mut().enumerate() {
                    let v = if k < self.config.window { chunk[start + k] * self.window[k] } else { 0.0 };
                    *b = Complex::new(v, 0.0);
                }
                self.fft.process(&mut buf);
                for (p, b) in power.iter_mut().zip(&buf) {
                    *p = b.norm_sqr();
                }
                for filt in &self.filters {
                    let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                    out.push((e + floor).ln() as f32);
                }
            }
        }
        Tensor::new(&[clips, frames, mels], out)
    }
}

pub fn waveform_to_logmel(waveform: &[f32], config: &SpectrogramConfig) -> Result<Tensor<f32>> {
    LogMel::new(config.clone())?.compute(waveform)
}

/// Averages interleaved channels to mono.
pub fn downmix(interleaved: &[f32], channels: usize) -> Vec<f32> {
    if channels <= 1 {
        return interleaved.to_vec();
    }
    interleaved.chunks_exact(channels).map(|f| f.iter().sum::<f32>() / channels as f32).collect()
}

/// Linear-interpolation resampling.
pub fn resample_linear(samples: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let out_len = (samples.len() as u64 * to as u64 / from as u64) as usize;
    let ratio = from as f64 / to as f64;
    (0..out_len)
        .map(|i| {
            let src = i as f64 * ratio;
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(samples.len() - 1);
            let l = (src - i0 as f64) as f32;
            samples[i0.min(samples.len() - 1)] * (1.0 - l) + samples[i1] * l
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioEncoderConfig {
    /// Embedding width d.
    pub dim: usize,
    /// Channels of the three stride-2 convolutions.
    pub channels: [usize; 3],
    /// Log-mel inputs are standardized as `(x - input_mean) / input_std`.
    pub input_mean: f64,
    pub input_std: f64,
    /// Keep the encoder at its initial weights.
    pub frozen: bool,
}

impl Default for AudioEncoderConfig {
    fn default() -> Self {
        Self { dim: 128, channels: [8, 16, 32], input_mean: -4.0, input_std: 5.0, frozen: false }
    }
}

/// Three stride-2 3x3 convolutions, global average pooling, then a linear
/// map to `dim`. Each one-second slice is encoded independently.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioEncoder {
    pub config: AudioEncoderConfig,
}

pub const AUDIO_PREFIX: &str = "audio";

impl AudioEncoder {
    pub fn new(config: AudioEncoderConfig) -> Self {
        Self { config }
    }

    pub fn init<S: Real>(&self, p: &mut ParamStore<S>, rng: &mut impl Rng) {
        let mut cin = 1;
        for (i, &c) in self.config.channels.iter().enumerate() {
            nn::init_conv(p, &format!("{AUDIO_PREFIX}.conv{}", i + 1), 3, cin, c, rng);
            cin = c;
        }
        nn::init_linear(p, &format!("{AUDIO_PREFIX}.proj"), cin, self.config.dim, rng);
    }

    /// `logmel`: `[T, frames, mels]` -> `[T, dim]`.
    pub fn forward<S: Real>(&self, g: &mut Graph<'_, S>, logmel: Var) -> Result<Var> {
        let shape = g.shape(logmel).to_vec();
        let [t, frames, mels] = shape[..] else {
            return Err(AvsError::ShapeMismatch(format!("log-mel must be [T, frames, mels], got {shape:?}")));
        };
        let x = g.reshape(logmel, &[t, frames, mels, 1]);
        let inv = S::lit(1.0 / self.config.input_std);
        let mut x = g.affine(x, inv, S::lit(-self.config.input_mean / self.config.input_std));
        for i in 0..self.config.channels.len() {
            x = nn::conv(g, &format!("{AUDIO_PREFIX}.conv{}", i + 1), x, ConvSpec::new(2, 1, 1))?;
            x = g.relu(x);
        }
        let pooled = g.spatial_mean(x);
        nn::linear(g, &format!("{AUDIO_PREFIX}.proj"), pooled)
    }

    pub fn encode<S: Real>(&self, params: &ParamStore<S>, logmel: &Tensor<S>) -> Result<AudioEmbedding<S>> {
        let mut g = Graph::with_params(params);
        let x = g.constant(logmel.clone());
        let a = self.forward(&mut g, x)?;
        AudioEmbedding::new(g.value(a).clone())
    }
}

pub fn encode_audio<S: Real>(logmel: &Tensor<S>, encoder: &AudioEncoder, params: &ParamStore<S>) -> Result<AudioEmbedding<S>> {
    encoder.encode(params, logmel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tone(hz: f64, seconds: usize, sr: u32) -> Vec<f32> {
        (0..seconds * sr as usize)
            .map(|i| (0.3 * (2.0 * std::f64::consts::PI * hz * i as f64 / sr as f64).sin()) as f32)
            .collect()
    }

    #[test]
    fn silence_is_log_floor() {
        let cfg = SpectrogramConfig::default();
        let s = waveform_to_logmel(&vec![0.0; 2 * 16000], &cfg).unwrap();
        assert_eq!(s.shape(), &[2, 98, 64]);
        let floor = (1e-6f64).ln() as f32;
        assert!(s.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn tone_peaks_in_the_filter_covering_its_frequency() {
        let cfg = SpectrogramConfig::default();
        let s = waveform_to_logmel(&tone(440.0, 1, 16000), &cfg).unwrap();
        let mut mean = vec![0.0f64; 64];
        for row in s.data().chunks_exact(64) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        let got = (0..64).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
        // closed-form oracle: the filter with the largest response at 440 Hz
        let edges = mel_band_edges(&cfg);
        let want = (0..64).max_by(|&a, &b| triangle_weight(edges[a], 440.0).total_cmp(&triangle_weight(edges[b], 440.0))).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn identical_seconds_give_identical_slices() {
        let one = tone(700.0, 1, 16000);
        let two: Vec<f32> = one.iter().chain(&one).copied().collect();
        let s = waveform_to_logmel(&two, &SpectrogramConfig::default()).unwrap();
        assert_eq!(s.frame(0), s.frame(1));
    }

    #[test]
    fn trailing_silence_shorter_than_a_hop_is_ignored() {
        let w = tone(300.0, 2, 16000);
        let mut padded = w.clone();
        padded.extend(std::iter::repeat_n(0.0, 159));
        let cfg = SpectrogramConfig::default();
        assert_eq!(waveform_to_logmel(&w, &cfg).unwrap(), waveform_to_logmel(&padded, &cfg).unwrap());
    }

    #[test]
    fn short_and_non_finite_waveforms_are_rejected() {
        let cfg = SpectrogramConfig::default();
        assert!(matches!(waveform_to_logmel(&[0.0; 1000], &cfg), Err(AvsError::WaveformTooShort { .. })));
        let mut w = vec![0.0; 16000];
        w[5] = f32::NAN;
        assert!(matches!(waveform_to_logmel(&w, &cfg), Err(AvsError::NonFinite(_))));
    }

    #[test]
    fn encoder_output_shape_and_row_independence() {
        let enc = AudioEncoder::new(AudioEncoderConfig::default());
        let mut p = ParamStore::<f64>::new();
        enc.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = Tensor::<f64>::from_fn(&[5, 98, 64], |_| rng.random_range(-10.0..5.0));
        let per = 98 * 64;
        let slice = x.frame(1).to_vec();
        x.data_mut()[3 * per..4 * per].copy_from_slice(&slice);
        let a = enc.encode(&p, &x).unwrap();
        assert_eq!(a.features().shape(), &[5, 128]);
        assert_eq!(a.row(1), a.row(3));
        assert_ne!(a.row(1), a.row(2));
    }

    #[test]
    fn resample_and_downmix() {
        assert_eq!(downmix(&[1.0, 3.0, -1.0, 1.0], 2), vec![2.0, 0.0]);
        let r = resample_linear(&[0.0, 1.0, 2.0, 3.0], 2, 4);
        assert_eq!(r.len(), 8);
        assert_eq!(r[2], 1.0);
    }
}
