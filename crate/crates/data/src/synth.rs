//! Deterministic "sounding shapes" corpus: colored shapes on a textured
//! background, each category bound to one pure tone. The ground truth at
//! second `t` covers exactly the shapes whose tones play during that second.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use avs_core::types::{AudibleSample, MaskVolume, Palette, RgbImage};
use avs_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::image::{write_indexed_mask, write_rgb};
use crate::layout::{DatasetManifest, ManifestEntry, Split, Subset, PALETTE_FILE};
use crate::wav::write_wav;

const COLORS: [(&str, [u8; 3]); 12] = [
    ("red", [230, 25, 75]),
    ("green", [60, 180, 75]),
    ("blue", [0, 130, 200]),
    ("yellow", [255, 225, 25]),
    ("purple", [145, 30, 180]),
    ("cyan", [70, 240, 240]),
    ("orange", [245, 130, 48]),
    ("magenta", [240, 50, 230]),
    ("lime", [210, 245, 60]),
    ("teal", [0, 128, 128]),
    ("brown", [170, 110, 40]),
    ("maroon", [128, 0, 0]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Diamond,
    Cross,
    Ring,
}

impl ShapeKind {
    const ALL: [ShapeKind; 6] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Diamond, ShapeKind::Cross, ShapeKind::Ring];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Diamond => "diamond",
            ShapeKind::Cross => "cross",
            ShapeKind::Ring => "ring",
        }
    }

    /// Membership of the offset `(dx, dy)` from the center for size `r`.
    pub fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        let (ax, ay) = (dx.abs(), dy.abs());
        match self {
            ShapeKind::Circle => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => ax <= 0.8 * r && ay <= 0.8 * r,
            ShapeKind::Triangle => dy >= -r && dy <= 0.8 * r && ax <= 0.55 * (dy + r),
            ShapeKind::Diamond => ax + ay <= r,
            ShapeKind::Cross => (ax <= 0.35 * r && ay <= r) || (ay <= 0.35 * r && ax <= r),
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= 0.3 * r * r
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// One sounding subset for the whole video.
    Static,
    /// A fresh subset every second.
    PerSecond,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub image_size: usize,
    pub categories: usize,
    pub base_frequency: f64,
    pub frequency_step: f64,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub schedule: ScheduleMode,
    /// Chance that a visible shape sounds (multi-source and semantic).
    pub sound_probability: f64,
    pub tone_amplitude: f64,
    pub audio_noise: f64,
    pub pixel_noise: f64,
    /// Videos per split: train, valid, test.
    pub videos: [usize; 3],
    /// Fraction of each split made of audio-swap pairs.
    pub swap_fraction: f64,
    pub sample_rate: u32,
    pub subsets: Vec<Subset>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            categories: 6,
            base_frequency: 300.0,
            frequency_step: 300.0,
            min_shapes: 1,
            max_shapes: 3,
            schedule: ScheduleMode::Static,
            sound_probability: 0.6,
            tone_amplitude: 0.25,
            audio_noise: 0.02,
            pixel_noise: 0.03,
            videos: [200, 40, 40],
            swap_fraction: 0.5,
            sample_rate: 16_000,
            subsets: vec![Subset::MultiSource],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(DataError::Config(m));
        if self.image_size < 32 || self.image_size % 32 != 0 {
            return fail(format!("image_size must be a positive multiple of 32, got {}", self.image_size));
        }
        if !(1..=COLORS.len()).contains(&self.categories) {
            return fail(format!("categories must be in 1..={}, got {}", COLORS.len(), self.categories));
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes || self.max_shapes > self.categories.min(4) {
            return fail(format!(
                "shape count range {}..={} must be non-empty, start at 1 or more, and stay within min(categories, 4)",
                self.min_shapes, self.max_shapes
            ));
        }
        if !(self.base_frequency > 0.0 && self.frequency_step > 0.0) {
            return fail("tone frequencies must be positive and strictly increasing".into());
        }
        let top = self.frequency(self.categories - 1);
        if top >= f64::from(self.sample_rate) / 2.0 {
            return fail(format!("highest tone {top} Hz is above the Nyquist rate of {} Hz", self.sample_rate));
        }
        for (name, p) in [("sound_probability", self.sound_probability), ("swap_fraction", self.swap_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.tone_amplitude <= 0.0 || self.audio_noise < 0.0 || self.pixel_noise < 0.0 {
            return fail("amplitudes must be positive and noise levels non-negative".into());
        }
        if self.subsets.is_empty() {
            return fail("no subsets requested".into());
        }
        if self.subsets.contains(&Subset::SingleSource) && self.swap_fraction > 0.0 && self.max_shapes < 2 {
            return fail("single-source swap pairs need scenes with at least two shapes".into());
        }
        Ok(())
    }

    /// Tone of category `c` in Hz.
    pub fn frequency(&self, c: usize) -> f64 {
        self.base_frequency + self.frequency_step * c as f64
    }

    pub fn category_name(&self, c: usize) -> String {
        format!("{}_{}", COLORS[c].0, ShapeKind::ALL[c % 6].name())
    }

    pub fn category_names(&self) -> Vec<String> {
        (0..self.categories).map(|c| self.category_name(c)).collect()
    }

    pub fn palette(&self, subset: Subset) -> Palette {
        let names = if subset.is_binary() { vec!["sounding".to_string()] } else { self.category_names() };
        Palette::generate(&names).expect("at most 12 categories")
    }

    fn videos_in(&self, split: Split) -> usize {
        self.videos[split as usize]
    }

    /// Leading videos of a split that form swap pairs `(2i, 2i + 1)`.
    fn paired_videos(&self, split: Split) -> usize {
        let n = self.videos_in(split);
        ((n as f64 * self.swap_fraction / 2.0).floor() as usize * 2).min(n / 2 * 2)
    }

    fn rng(&self, subset: Subset, split: Split, group: usize, purpose: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(((subset as u64) << 56) | ((split as u64) << 48) | ((group as u64) << 8) | purpose);
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlacedShape {
    pub category: usize,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

/// A rendered video with its sounding schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub id: String,
    pub subset: Subset,
    pub split: Split,
    pub shapes: Vec<PlacedShape>,
    /// `schedule[t][k]`: shape `k` sounds during second `t`.
    pub schedule: Vec<Vec<bool>>,
    pub frames: Vec<RgbImage>,
    pub masks: MaskVolume,
    pub waveform: Vec<f32>,
    pub sample_rate: u32,
    pub partner: Option<String>,
}

impl SynthVideo {
    pub fn sounding_categories(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self
            .shapes
            .iter()
            .enumerate()
            .filter(|(k, _)| self.schedule.iter().any(|s| s[*k]))
            .map(|(_, s)| s.category)
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// In-memory sample with every frame supervised.
    pub fn to_sample(&self) -> AudibleSample {
        let t = self.frames.len();
        let (h, w) = (self.masks.height, self.masks.width);
        let data = self.frames.iter().flat_map(|f| f.pixels.iter().flat_map(|p| p.map(|v| f32::from(v) / 255.0))).collect();
        AudibleSample {
            id: self.id.clone(),
            frames: Tensor::new(&[t, h, w, 3], data).expect("frame shape"),
            waveform: self.waveform.clone(),
            sample_rate: self.sample_rate,
            gt_masks: Some(self.masks.clone()),
            supervised_frames: vec![true; t],
        }
    }
}

pub fn video_id(subset: Subset, split: Split, index: usize) -> String {
    let tag = match subset {
        Subset::SingleSource => "s4",
        Subset::MultiSource => "ms3",
        Subset::Semantic => "avss",
    };
    format!("syn_{tag}_{split}_{index:04}")
}

fn place_shapes(cfg: &SynthConfig, count: usize, rng: &mut impl Rng) -> Vec<PlacedShape> {
    let size = cfg.image_size as f64;
    let mut cats: Vec<usize> = (0..cfg.categories).collect();
    cats.shuffle(rng);
    let mut placed: Vec<PlacedShape> = Vec::with_capacity(count);
    for &category in cats.iter().take(count) {
        let mut best = None;
        for attempt in 0..200 {
            let radius = rng.random_range(size / 7.0..size / 4.5) * if attempt > 100 { 0.75 } else { 1.0 };
            let cx = rng.random_range(radius..size - radius);
            let cy = rng.random_range(radius..size - radius);
            let cand = PlacedShape { category, cx, cy, radius };
            let clear = placed.iter().all(|p| (p.cx - cx).hypot(p.cy - cy) > p.radius + radius + 1.0);
            best = Some(cand);
            if clear {
                break;
            }
        }
        placed.push(best.expect("at least one attempt"));
    }
    placed
}

fn draw_subset(n: usize, p: f64, proper: bool, rng: &mut impl Rng) -> Vec<bool> {
    loop {
        let s: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
        let k = s.iter().filter(|&&b| b).count();
        if !proper || (k > 0 && k < n) {
            return s;
        }
    }
}

fn schedules(cfg: &SynthConfig, subset: Subset, shapes: usize, clips: usize, paired: bool, rng: &mut impl Rng) -> (Vec<Vec<bool>>, Vec<Vec<bool>>) {
    let complement = |s: &Vec<Vec<bool>>| s.iter().map(|row| row.iter().map(|b| !b).collect()).collect();
    match subset {
        Subset::SingleSource => {
            let k = rng.random_range(0..shapes);
            let one = |k: usize| (0..clips).map(|_| (0..shapes).map(|j| j == k).collect()).collect::<Vec<Vec<bool>>>();
            let other = if shapes > 1 { (k + rng.random_range(1..shapes)) % shapes } else { k };
            (one(k), one(other))
        }
        _ => {
            let s: Vec<Vec<bool>> = match cfg.schedule {
                ScheduleMode::Static => {
                    let row = draw_subset(shapes, cfg.sound_probability, paired, rng);
                    vec![row; clips]
                }
                ScheduleMode::PerSecond => (0..clips).map(|_| draw_subset(shapes, cfg.sound_probability, paired, rng)).collect(),
            };
            let c = complement(&s);
            (s, c)
        }
    }
}

struct Background {
    level: f64,
    gx: f64,
    gy: f64,
    freq: (f64, f64),
    phase: f64,
}

fn render(cfg: &SynthConfig, shapes: &[PlacedShape], bg: &Background, clips: usize, rng: &mut impl Rng) -> (Vec<RgbImage>, Vec<Option<usize>>) {
    let size = cfg.image_size;
    let noise = Normal::new(0.0, cfg.pixel_noise.max(1e-12)).expect("valid std");
    let mut owner = vec![None; size * size];
    for (k, s) in shapes.iter().enumerate() {
        let kind = ShapeKind::ALL[s.category % 6];
        for y in 0..size {
            for x in 0..size {
                if kind.contains(x as f64 + 0.5 - s.cx, y as f64 + 0.5 - s.cy, s.radius) {
                    owner[y * size + x] = Some(k);
                }
            }
        }
    }
    let frames = (0..clips)
        .map(|_| {
            let pixels = (0..size * size)
                .map(|i| {
                    let (x, y) = ((i % size) as f64 / size as f64, (i / size) as f64 / size as f64);
                    let base: [f64; 3] = match owner[i] {
                        Some(k) => COLORS[shapes[k].category].1.map(|v| f64::from(v) / 255.0),
                        None => {
                            let tex = 0.06 * (TAU * (bg.freq.0 * x + bg.freq.1 * y) + bg.phase).sin();
                            [bg.level + bg.gx * (x - 0.5) + bg.gy * (y - 0.5) + tex; 3]
                        }
                    };
                    base.map(|v| {
                        let n = if cfg.pixel_noise > 0.0 { noise.sample(rng) } else { 0.0 };
                        ((v + n).clamp(0.0, 1.0) * 255.0).round() as u8
                    })
                })
                .collect();
            RgbImage::new(size, size, pixels).expect("frame size")
        })
        .collect();
    (frames, owner)
}

fn synthesize_audio(cfg: &SynthConfig, shapes: &[PlacedShape], schedule: &[Vec<bool>], rng: &mut impl Rng) -> Vec<f32> {
    let sr = cfg.sample_rate as usize;
    let phases: Vec<f64> = shapes.iter().map(|_| rng.random_range(0.0..TAU)).collect();
    let noise = Normal::new(0.0, cfg.audio_noise.max(1e-12)).expect("valid std");
    let mut out = Vec::with_capacity(schedule.len() * sr);
    for (t, row) in schedule.iter().enumerate() {
        for n in 0..sr {
            let time = (t * sr + n) as f64 / sr as f64;
            let mut v = 0.0;
            for (k, s) in shapes.iter().enumerate() {
                if row[k] {
                    v += cfg.tone_amplitude * (TAU * cfg.frequency(s.category) * time + phases[k]).sin();
                }
            }
            if cfg.audio_noise > 0.0 {
                v += noise.sample(rng);
            }
            out.push(v as f32);
        }
    }
    out
}

/// Renders video `index` of `split`. Members of a swap pair share the
/// scene and frames and play complementary sounding schedules.
pub fn synth_video(cfg: &SynthConfig, subset: Subset, split: Split, index: usize) -> Result<SynthVideo> {
    cfg.check()?;
    if index >= cfg.videos_in(split) {
        return Err(DataError::Config(format!("video {index} out of range for {split} ({} videos)", cfg.videos_in(split))));
    }
    let paired = index < cfg.paired_videos(split);
    let group = if paired { index / 2 } else { index };
    let mut scene_rng = cfg.rng(subset, split, group, 1);
    let min = if paired { cfg.min_shapes.max(2) } else { cfg.min_shapes };
    let count = scene_rng.random_range(min..=cfg.max_shapes.max(min));
    let shapes = place_shapes(cfg, count, &mut scene_rng);
    let clips = subset.clips();
    let (first, second) = schedules(cfg, subset, shapes.len(), clips, paired, &mut scene_rng);
    let schedule = if paired && index % 2 == 1 { second } else { first };
    let bg = Background {
        level: scene_rng.random_range(0.25..0.55),
        gx: scene_rng.random_range(-0.15..0.15),
        gy: scene_rng.random_range(-0.15..0.15),
        freq: (scene_rng.random_range(1.0..4.0), scene_rng.random_range(1.0..4.0)),
        phase: scene_rng.random_range(0.0..TAU),
    };
    let (frames, owner) = render(cfg, &shapes, &bg, clips, &mut scene_rng);

    let size = cfg.image_size;
    let mut masks = MaskVolume::zeros(clips, size, size);
    for t in 0..clips {
        for (px, o) in masks.frame_mut(t).iter_mut().zip(&owner) {
            if let Some(k) = *o {
                if schedule[t][k] {
                    *px = if subset.is_binary() { 1 } else { (shapes[k].category + 1) as u8 };
                }
            }
        }
    }
    let mut audio_rng = cfg.rng(subset, split, index, 2);
    let waveform = synthesize_audio(cfg, &shapes, &schedule, &mut audio_rng);
    let partner = paired.then(|| video_id(subset, split, index ^ 1));
    Ok(SynthVideo { id: video_id(subset, split, index), subset, split, shapes, schedule, frames, masks, waveform, sample_rate: cfg.sample_rate, partner })
}

/// Writes one video in the standard layout. Single-source training videos
/// keep only the first mask.
pub fn write_video(cfg: &SynthConfig, video: &SynthVideo, subset_dir: &Path) -> Result<()> {
    let dir = subset_dir.join(video.split.as_str()).join(&video.id);
    for sub in ["frames", "masks"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| DataError::io(&d, e))?;
    }
    let palette = cfg.palette(video.subset);
    let first_only = video.subset == Subset::SingleSource && video.split == Split::Train;
    for (t, frame) in video.frames.iter().enumerate() {
        write_rgb(&dir.join("frames").join(format!("{t}.png")), frame)?;
        if !first_only || t == 0 {
            write_indexed_mask(&dir.join("masks").join(format!("{t}.png")), frame.width, frame.height, video.masks.frame(t), &palette)?;
        }
    }
    write_wav(&dir.join("audio.wav"), &video.waveform, video.sample_rate)
}

#[derive(Clone, Debug)]
pub struct SynthSummary {
    pub manifests: Vec<DatasetManifest>,
}

/// Materializes every configured subset under `root` and returns their
/// manifests.
pub fn generate_synthetic(cfg: &SynthConfig, root: &Path) -> Result<SynthSummary> {
    cfg.check()?;
    let mut manifests = Vec::new();
    for &subset in &cfg.subsets {
        let dir = root.join(subset.dir_name());
        fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
        let mut entries = Vec::new();
        for split in Split::ALL {
            for index in 0..cfg.videos_in(split) {
                let video = synth_video(cfg, subset, split, index)?;
                write_video(cfg, &video, &dir)?;
                entries.push(ManifestEntry {
                    video_id: video.id.clone(),
                    split,
                    clips: subset.clips(),
                    labels: video.sounding_categories().into_iter().map(|c| cfg.category_name(c)).collect(),
                    partner: video.partner.clone(),
                });
            }
        }
        let palette_path = dir.join(PALETTE_FILE);
        fs::write(&palette_path, cfg.palette(subset).to_manifest()).map_err(|e| DataError::io(&palette_path, e))?;
        let manifest = DatasetManifest { root: root.to_path_buf(), subset, entries };
        manifest.save()?;
        manifests.push(manifest);
    }
    Ok(SynthSummary { manifests })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_members_share_frames_and_split_the_sound() {
        let cfg = SynthConfig::default();
        let a = synth_video(&cfg, Subset::MultiSource, Split::Valid, 0).unwrap();
        let b = synth_video(&cfg, Subset::MultiSource, Split::Valid, 1).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.partner.as_deref(), Some(b.id.as_str()));
        for t in 0..5 {
            assert!(a.masks.frame(t).iter().zip(b.masks.frame(t)).all(|(x, y)| !(*x > 0 && *y > 0)));
            assert!(a.masks.frame(t).iter().any(|&v| v > 0) && b.masks.frame(t).iter().any(|&v| v > 0));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            SynthConfig { image_size: 48, ..Default::default() },
            SynthConfig { categories: 13, ..Default::default() },
            SynthConfig { min_shapes: 3, max_shapes: 2, ..Default::default() },
            SynthConfig { base_frequency: 7900.0, ..Default::default() },
            SynthConfig { sound_probability: 1.5, ..Default::default() },
        ] {
            assert!(matches!(cfg.check(), Err(DataError::Config(_))), "{cfg:?}");
        }
    }
}
