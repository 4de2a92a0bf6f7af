//! Shared data model: task settings, samples, pyramids, predictions, palettes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{AvsError, Result};
use crate::graph::{sigmoid, softmax_last};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingKind {
    /// Single sounding source, first frame supervised during training.
    S4,
    /// Multiple, possibly changing sources, binary masks on every frame.
    Ms3,
    /// Semantic masks with one class per sounding category.
    Avss,
}

impl fmt::Display for SettingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SettingKind::S4 => "s4",
            SettingKind::Ms3 => "ms3",
            SettingKind::Avss => "avss",
        })
    }
}

impl std::str::FromStr for SettingKind {
    type Err = AvsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s4" => Ok(Self::S4),
            "ms3" => Ok(Self::Ms3),
            "avss" => Ok(Self::Avss),
            other => Err(AvsError::InvalidConfig(format!("unknown setting `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSetting {
    pub kind: SettingKind,
    /// K: 1 for the binary settings, categories + background for AVSS.
    pub num_classes: usize,
    /// T: one-second clips per video.
    pub clips_per_video: usize,
}

impl TaskSetting {
    pub fn new(kind: SettingKind, num_classes: usize, clips_per_video: usize) -> Result<Self> {
        let s = Self { kind, num_classes, clips_per_video };
        s.check()?;
        Ok(s)
    }

    pub fn s4() -> Self {
        Self { kind: SettingKind::S4, num_classes: 1, clips_per_video: 5 }
    }

    pub fn ms3() -> Self {
        Self { kind: SettingKind::Ms3, num_classes: 1, clips_per_video: 5 }
    }

    /// AVSS with `categories` sounding categories plus background.
    pub fn avss(categories: usize) -> Self {
        Self { kind: SettingKind::Avss, num_classes: categories + 1, clips_per_video: 10 }
    }

    pub fn check(&self) -> Result<()> {
        if self.clips_per_video == 0 {
            return Err(AvsError::InvalidConfig("clips_per_video must be positive".into()));
        }
        let binary = matches!(self.kind, SettingKind::S4 | SettingKind::Ms3);
        if binary && self.num_classes != 1 {
            return Err(AvsError::InvalidConfig(format!("{} requires K = 1, got {}", self.kind, self.num_classes)));
        }
        if !binary && !(2..=256).contains(&self.num_classes) {
            return Err(AvsError::InvalidConfig(format!("avss requires 2 <= K <= 256, got {}", self.num_classes)));
        }
        Ok(())
    }

    pub fn is_binary(&self) -> bool {
        self.num_classes == 1
    }

    /// Number of distinct ids a ground-truth mask may contain.
    pub fn label_count(&self) -> usize {
        if self.is_binary() {
            2
        } else {
            self.num_classes
        }
    }
}

/// `T x H x W` class-id volume; id 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskVolume {
    pub clips: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<u8>,
}

impl MaskVolume {
    pub fn new(clips: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != clips * height * width {
            return Err(AvsError::ShapeMismatch(format!(
                "mask {clips}x{height}x{width} needs {} ids, got {}",
                clips * height * width,
                data.len()
            )));
        }
        Ok(Self { clips, height, width, data })
    }

    pub fn zeros(clips: usize, height: usize, width: usize) -> Self {
        Self { clips, height, width, data: vec![0; clips * height * width] }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [u8] {
        let n = self.height * self.width;
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn get(&self, t: usize, y: usize, x: usize) -> u8 {
        self.data[(t * self.height + y) * self.width + x]
    }

    pub fn max_id(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Frames `idx` in order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let data = idx.iter().flat_map(|&t| self.frame(t).iter().copied()).collect();
        Self { clips: idx.len(), height: self.height, width: self.width, data }
    }
}

/// T synchronized one-second (frame, audio) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct AudibleSample {
    pub id: String,
    /// `[T, H, W, 3]`, values in `[0, 1]`.
    pub frames: Tensor<f32>,
    pub waveform: Vec<f32>,
    pub sample_rate: u32,
    pub gt_masks: Option<MaskVolume>,
    pub supervised_frames: Vec<bool>,
}

impl AudibleSample {
    pub fn clips(&self) -> usize {
        self.frames.shape().first().copied().unwrap_or(0)
    }

    pub fn height(&self) -> usize {
        self.frames.shape().get(1).copied().unwrap_or(0)
    }

    pub fn width(&self) -> usize {
        self.frames.shape().get(2).copied().unwrap_or(0)
    }

    pub fn supervised_indices(&self) -> Vec<usize> {
        self.supervised_frames.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect()
    }
}

/// Checks every sample invariant against `setting` without consuming the sample.
pub fn check_sample(sample: &AudibleSample, setting: &TaskSetting) -> Result<()> {
    setting.check()?;
    let (t, h, w, c) = sample.frames.dims4()?;
    if c != 3 {
        return Err(AvsError::DimensionMismatch(format!("frames must have 3 channels, got {c}")));
    }
    if t != setting.clips_per_video {
        return Err(AvsError::DimensionMismatch(format!(
            "frames have T = {t} but the setting expects T = {}",
            setting.clips_per_video
        )));
    }
    if sample.frames.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(AvsError::DimensionMismatch("frame values must lie in [0, 1]".into()));
    }
    if sample.supervised_frames.len() != t {
        return Err(AvsError::DimensionMismatch(format!(
            "supervised_frames has length {} but T = {t}",
            sample.supervised_frames.len()
        )));
    }
    if sample.sample_rate == 0 {
        return Err(AvsError::DimensionMismatch("sample rate must be positive".into()));
    }
    let seconds = (sample.waveform.len() as f64 / sample.sample_rate as f64).round() as usize;
    if seconds != t {
        return Err(AvsError::DimensionMismatch(format!(
            "waveform spans {seconds} s ({} samples) but T = {t}",
            sample.waveform.len()
        )));
    }
    if let Some(gt) = &sample.gt_masks {
        if (gt.clips, gt.height, gt.width) != (t, h, w) {
            return Err(AvsError::DimensionMismatch(format!(
                "gt masks are {}x{}x{} but frames are {t}x{h}x{w}",
                gt.clips, gt.height, gt.width
            )));
        }
        let limit = setting.label_count();
        if let Some(&bad) = gt.data().iter().find(|&&id| id as usize >= limit) {
            return Err(AvsError::ClassIdOutOfRange { id: bad as u32, num_classes: limit });
        }
    }
    if setting.kind == SettingKind::S4 {
        let first_only = sample.supervised_frames.iter().enumerate().all(|(i, &s)| s == (i == 0));
        let all = sample.supervised_frames.iter().all(|&s| s);
        if !(first_only || all) {
            return Err(AvsError::DimensionMismatch(
                "S4 supervision must cover the first frame only (training) or every frame (evaluation)".into(),
            ));
        }
    }
    Ok(())
}

/// Returns the sample unchanged when every invariant holds.
pub fn validate_sample(sample: AudibleSample, setting: &TaskSetting) -> Result<AudibleSample> {
    check_sample(&sample, setting)?;
    Ok(sample)
}

/// Four per-stage visual feature maps, stage `i` at `(H, W) / 2^(i+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<S> {
    stages: Vec<Tensor<S>>,
    base_resolution: (usize, usize),
}

impl<S: Real> FeaturePyramid<S> {
    pub const LEVELS: usize = 4;

    pub fn new(stages: Vec<Tensor<S>>, base_resolution: (usize, usize)) -> Result<Self> {
        if stages.len() != Self::LEVELS {
            return Err(AvsError::StageCount(stages.len()));
        }
        let (h, w) = base_resolution;
        let t0 = stages[0].shape().first().copied().unwrap_or(0);
        for (i, s) in stages.iter().enumerate() {
            let (t, sh, sw, _) = s.dims4()?;
            let (eh, ew) = stage_resolution(h, w, i + 1);
            if (sh, sw) != (eh, ew) || t != t0 {
                return Err(AvsError::DimensionMismatch(format!(
                    "stage {} is {t}x{sh}x{sw}, expected {t0}x{eh}x{ew}",
                    i + 1
                )));
            }
        }
        Ok(Self { stages, base_resolution })
    }

    pub fn stages(&self) -> &[Tensor<S>] {
        &self.stages
    }

    /// Stage `i` in `1..=4`.
    pub fn stage(&self, i: usize) -> &Tensor<S> {
        &self.stages[i - 1]
    }

    pub fn base_resolution(&self) -> (usize, usize) {
        self.base_resolution
    }
}

/// `(H, W) / 2^(stage + 1)` for `stage` in `1..=4`.
pub fn stage_resolution(height: usize, width: usize, stage: usize) -> (usize, usize) {
    let f = 1 << (stage + 1);
    (height / f, width / f)
}

/// `T x d` per-second audio features.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioEmbedding<S> {
    features: Tensor<S>,
}

impl<S: Real> AudioEmbedding<S> {
    pub const DEFAULT_DIM: usize = 128;

    pub fn new(features: Tensor<S>) -> Result<Self> {
        features.dims2()?;
        if !features.is_finite() {
            return Err(AvsError::NonFinite("audio embedding".into()));
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &Tensor<S> {
        &self.features
    }

    pub fn clips(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn row(&self, t: usize) -> &[S] {
        self.features.frame(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Raw scores, not yet activated.
    Logits,
    Sigmoid,
    SoftmaxOverK,
}

/// `T x H x W x K` mask scores.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPrediction<S> {
    pub scores: Tensor<S>,
    pub activation: Activation,
}

impl<S: Real> MaskPrediction<S> {
    pub fn num_classes(&self) -> usize {
        self.scores.last_dim()
    }

    /// Applies the activation the class count implies: sigmoid for K = 1,
    /// softmax over K otherwise.
    pub fn activated(&self) -> Result<Self> {
        if self.activation != Activation::Logits {
            return Ok(self.clone());
        }
        if !self.scores.is_finite() {
            return Err(AvsError::NonFinite("mask scores".into()));
        }
        Ok(if self.num_classes() == 1 {
            Self { scores: self.scores.map(sigmoid), activation: Activation::Sigmoid }
        } else {
            Self { scores: softmax_last(&self.scores), activation: Activation::SoftmaxOverK }
        })
    }

    /// Hard masks: probability strictly above 0.5 for K = 1, argmax over K
    /// (lowest id on ties) otherwise.
    pub fn hard_masks(&self) -> Result<MaskVolume> {
        let probs = self.activated()?;
        let (t, h, w, k) = probs.scores.dims4()?;
        let half = S::lit(0.5);
        let data = probs
            .scores
            .data()
            .chunks_exact(k)
            .map(|px| {
                if k == 1 {
                    u8::from(px[0] > half)
                } else {
                    let mut best = 0;
                    for (i, &v) in px.iter().enumerate() {
                        if v > px[best] {
                            best = i;
                        }
                    }
                    best as u8
                }
            })
            .collect();
        MaskVolume::new(t, h, w, data)
    }
}

/// Activates raw scores and thresholds them into hard masks.
pub fn activate<S: Real>(scores: &Tensor<S>, setting: &TaskSetting) -> Result<(MaskPrediction<S>, MaskVolume)> {
    let (_, _, _, k) = scores.dims4()?;
    if k != setting.num_classes {
        return Err(AvsError::ChannelMismatch { what: "mask scores".into(), expected: setting.num_classes, actual: k });
    }
    let raw = MaskPrediction { scores: scores.clone(), activation: Activation::Logits };
    let probs = raw.activated()?;
    let hard = probs.hard_masks()?;
    Ok((probs, hard))
}

/// Plain 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(AvsError::ShapeMismatch(format!("{width}x{height} image with {} pixels", pixels.len())));
        }
        Ok(Self { width, height, pixels })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaletteEntry {
    pub name: String,
    pub rgb: [u8; 3],
}

/// Bijection between class ids and mask colors. Id 0 is black background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    pub version: String,
    entries: BTreeMap<u8, PaletteEntry>,
    by_color: HashMap<[u8; 3], u8>,
}

pub const PALETTE_VERSION: &str = "avs-palette-v1";

/// Color of id `i` in the bit-interleaved sequence (0 = black, 1 = dark red,
/// 2 = dark green, ...); injective over all 256 ids.
pub fn palette_color(id: u8) -> [u8; 3] {
    let mut c = [0u8; 3];
    let mut v = id;
    for shift in (0..8).rev() {
        c[0] |= (v & 1) << shift;
        c[1] |= ((v >> 1) & 1) << shift;
        c[2] |= ((v >> 2) & 1) << shift;
        v >>= 3;
        if v == 0 {
            break;
        }
    }
    c
}

impl Palette {
    /// Background plus one entry per category name, ids `1..=names.len()`.
    pub fn generate<N: AsRef<str>>(category_names: &[N]) -> Result<Self> {
        if category_names.len() > 255 {
            return Err(AvsError::InvalidConfig("at most 255 categories fit an indexed palette".into()));
        }
        let mut entries = vec![(0u8, PaletteEntry { name: "background".into(), rgb: palette_color(0) })];
        for (i, n) in category_names.iter().enumerate() {
            let id = (i + 1) as u8;
            entries.push((id, PaletteEntry { name: n.as_ref().to_string(), rgb: palette_color(id) }));
        }
        Self::from_entries(PALETTE_VERSION, entries)
    }

    pub fn from_entries(version: &str, entries: impl IntoIterator<Item = (u8, PaletteEntry)>) -> Result<Self> {
        let entries: BTreeMap<u8, PaletteEntry> = entries.into_iter().collect();
        let mut by_color = HashMap::new();
        for (&id, e) in &entries {
            if let Some(prev) = by_color.insert(e.rgb, id) {
                return Err(AvsError::InvalidConfig(format!("ids {prev} and {id} share color {:?}", e.rgb)));
            }
        }
        match entries.get(&0) {
            Some(bg) if bg.rgb == [0, 0, 0] => {}
            _ => return Err(AvsError::InvalidConfig("palette id 0 must map to black".into())),
        }
        Ok(Self { version: version.to_string(), entries, by_color })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u8, &PaletteEntry)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    pub fn color(&self, id: u8) -> Result<[u8; 3]> {
        self.entries.get(&id).map(|e| e.rgb).ok_or(AvsError::UnknownClassId(id as u32))
    }

    pub fn id_of(&self, rgb: [u8; 3]) -> Result<u8> {
        self.by_color.get(&rgb).copied().ok_or(AvsError::UnknownColor(rgb))
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.entries.get(&id).map(|e| e.name.as_str())
    }

    /// Line-oriented manifest: a `# version` header then `id name R G B`.
    pub fn to_manifest(&self) -> String {
        let mut out = format!("# {}\n", self.version);
        for (id, e) in &self.entries {
            out.push_str(&format!("{id} {} {} {} {}\n", e.name, e.rgb[0], e.rgb[1], e.rgb[2]));
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut version = None;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                version.get_or_insert_with(|| rest.trim().to_string());
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || AvsError::InvalidConfig(format!("palette line {}: `{line}`", lineno + 1));
            if parts.len() != 5 {
                return Err(bad());
            }
            let id: u8 = parts[0].parse().map_err(|_| bad())?;
            let mut rgb = [0u8; 3];
            for (c, p) in rgb.iter_mut().zip(&parts[2..]) {
                *c = p.parse().map_err(|_| bad())?;
            }
            entries.push((id, PaletteEntry { name: parts[1].to_string(), rgb }));
        }
        Self::from_entries(version.as_deref().unwrap_or(PALETTE_VERSION), entries)
    }
}

/// Colorizes every frame of `mask`.
pub fn encode_semantic_mask(mask: &MaskVolume, palette: &Palette) -> Result<Vec<RgbImage>> {
    (0..mask.clips)
        .map(|t| {
            let pixels = mask.frame(t).iter().map(|&id| palette.color(id)).collect::<Result<Vec<_>>>()?;
            RgbImage::new(mask.width, mask.height, pixels)
        })
        .collect()
}

/// Inverse of [`encode_semantic_mask`].
pub fn decode_semantic_mask(images: &[RgbImage], palette: &Palette) -> Result<MaskVolume> {
    let Some(first) = images.first() else {
        return Err(AvsError::DimensionMismatch("no mask images to decode".into()));
    };
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if (img.width, img.height) != (w, h) {
            return Err(AvsError::DimensionMismatch(format!(
                "mask image {}x{} differs from {w}x{h}",
                img.width, img.height
            )));
        }
        for &px in &img.pixels {
            data.push(palette.id_of(px)?);
        }
    }
    MaskVolume::new(images.len(), h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: usize, gt_t: usize, ids: &[u8]) -> AudibleSample {
        let (h, w) = (4, 4);
        let data: Vec<u8> = (0..gt_t * h * w).map(|i| ids[i % ids.len()]).collect();
        AudibleSample {
            id: "v".into(),
            frames: Tensor::full(&[t, h, w, 3], 0.5),
            waveform: vec![0.0; t * 16000],
            sample_rate: 16000,
            gt_masks: Some(MaskVolume::new(gt_t, h, w, data).unwrap()),
            supervised_frames: vec![true; t],
        }
    }

    #[test]
    fn accepts_invariant_satisfying_sample() {
        let s = sample(5, 5, &[0, 1]);
        let v = validate_sample(s.clone(), &TaskSetting::ms3()).unwrap();
        assert_eq!(v, s);
        // idempotent
        assert_eq!(validate_sample(v.clone(), &TaskSetting::ms3()).unwrap(), v);
    }

    #[test]
    fn rejects_out_of_range_class_id() {
        let err = validate_sample(sample(5, 5, &[0, 3]), &TaskSetting::ms3()).unwrap_err();
        assert!(matches!(err, AvsError::ClassIdOutOfRange { id: 3, .. }), "{err}");
    }

    #[test]
    fn rejects_clip_count_mismatch() {
        let err = validate_sample(sample(5, 4, &[0, 1]), &TaskSetting::ms3()).unwrap_err();
        assert!(matches!(err, AvsError::DimensionMismatch(_)), "{err}");
    }

    #[test]
    fn s4_training_supervision_is_first_frame_only() {
        let mut s = sample(5, 5, &[0, 1]);
        s.supervised_frames = vec![true, false, false, false, false];
        assert!(check_sample(&s, &TaskSetting::s4()).is_ok());
        s.supervised_frames = vec![false, true, false, false, false];
        assert!(check_sample(&s, &TaskSetting::s4()).is_err());
    }

    #[test]
    fn binary_settings_require_one_class() {
        assert!(TaskSetting::new(SettingKind::S4, 2, 5).is_err());
        assert!(TaskSetting::new(SettingKind::Avss, 1, 10).is_err());
        assert_eq!(TaskSetting::avss(70).num_classes, 71);
    }

    #[test]
    fn pyramid_resolution_law_at_224() {
        let stages = (1..=4)
            .map(|i| {
                let (h, w) = stage_resolution(224, 224, i);
                Tensor::<f32>::zeros(&[1, h, w, 2])
            })
            .collect();
        let p = FeaturePyramid::new(stages, (224, 224)).unwrap();
        let res: Vec<usize> = p.stages().iter().map(|s| s.shape()[1]).collect();
        assert_eq!(res, vec![56, 28, 14, 7]);
        assert!(FeaturePyramid::<f32>::new(vec![Tensor::zeros(&[1, 56, 56, 2])], (224, 224)).is_err());
    }

    #[test]
    fn activation_examples() {
        let zeros = Tensor::<f64>::zeros(&[1, 2, 2, 1]);
        let (p, hard) = activate(&zeros, &TaskSetting::ms3()).unwrap();
        assert!(p.scores.data().iter().all(|&v| v == 0.5));
        assert!(hard.data().iter().all(|&v| v == 0));

        let ln2 = std::f64::consts::LN_2;
        let s = Tensor::new(&[1, 1, 1, 3], vec![0.0, 0.0, ln2]).unwrap();
        let (p, hard) = activate(&s, &TaskSetting::avss(2)).unwrap();
        let probs = p.scores.data();
        assert!((probs[0] - 0.25).abs() < 1e-12 && (probs[1] - 0.25).abs() < 1e-12 && (probs[2] - 0.5).abs() < 1e-12);
        assert_eq!(hard.data(), &[2]);

        let shifted = s.map(|v| v + 7.5);
        let (_, hard2) = activate(&shifted, &TaskSetting::avss(2)).unwrap();
        assert_eq!(hard2, hard);
    }

    #[test]
    fn argmax_ties_pick_lowest_id() {
        let s = Tensor::new(&[1, 1, 1, 3], vec![1.0f64, 1.0, 1.0]).unwrap();
        let (_, hard) = activate(&s, &TaskSetting::avss(2)).unwrap();
        assert_eq!(hard.data(), &[0]);
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        let s = Tensor::new(&[1, 1, 1, 1], vec![f64::NAN]).unwrap();
        assert!(matches!(activate(&s, &TaskSetting::ms3()), Err(AvsError::NonFinite(_))));
    }

    #[test]
    fn palette_colors_are_injective_and_background_black() {
        let mut seen = std::collections::HashSet::new();
        for id in 0..=255u8 {
            assert!(seen.insert(palette_color(id)), "duplicate color for {id}");
        }
        assert_eq!(palette_color(0), [0, 0, 0]);
        assert_eq!(palette_color(1), [128, 0, 0]);
    }

    #[test]
    fn palette_manifest_round_trip() {
        let p = Palette::generate(&["guitar", "dog"]).unwrap();
        let text = p.to_manifest();
        assert!(text.starts_with("# avs-palette-v1\n0 background 0 0 0\n"));
        assert_eq!(Palette::from_manifest(&text).unwrap(), p);
    }

    #[test]
    fn palette_rejects_duplicate_colors() {
        let text = "0 background 0 0 0\n1 a 5 5 5\n2 b 5 5 5\n";
        assert!(Palette::from_manifest(text).is_err());
    }

    #[test]
    fn encode_examples() {
        let p = Palette::generate(&["a", "b"]).unwrap();
        let zero = MaskVolume::zeros(2, 3, 3);
        let imgs = encode_semantic_mask(&zero, &p).unwrap();
        assert_eq!(imgs.len(), 2);
        assert!(imgs.iter().all(|im| im.pixels.iter().all(|&px| px == [0, 0, 0])));

        let m = MaskVolume::new(1, 1, 4, vec![0, 1, 1, 0]).unwrap();
        let imgs = encode_semantic_mask(&m, &p).unwrap();
        let distinct: std::collections::HashSet<_> = imgs[0].pixels.iter().collect();
        assert_eq!(distinct.len(), 2);

        let bad = MaskVolume::new(1, 1, 1, vec![9]).unwrap();
        assert_eq!(encode_semantic_mask(&bad, &p).unwrap_err(), AvsError::UnknownClassId(9));
    }

    #[test]
    fn decode_examples() {
        let p = Palette::generate(&["a"]).unwrap();
        let black = RgbImage::new(2, 2, vec![[0, 0, 0]; 4]).unwrap();
        assert_eq!(decode_semantic_mask(&[black], &p).unwrap(), MaskVolume::zeros(1, 2, 2));
        let odd = RgbImage::new(1, 1, vec![[1, 2, 3]]).unwrap();
        assert_eq!(decode_semantic_mask(&[odd], &p).unwrap_err(), AvsError::UnknownColor([1, 2, 3]));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn encode_decode_is_identity(ids in proptest::collection::vec(0u8..7, 2 * 64)) {
                let p = Palette::generate(&["a", "b", "c", "d", "e", "f"]).unwrap();
                let m = MaskVolume::new(2, 8, 8, ids).unwrap();
                let back = decode_semantic_mask(&encode_semantic_mask(&m, &p).unwrap(), &p).unwrap();
                prop_assert_eq!(back, m);
            }
        }
    }
}
