//! Reads AudibleSamples from the on-disk layout.

use std::path::{Path, PathBuf};

use avs_core::types::{validate_sample, AudibleSample, MaskVolume, Palette, SettingKind, TaskSetting};
use avs_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::image::{read_mask, read_rgb};
use crate::layout::{DatasetManifest, ManifestEntry, PathTemplate, Split, Subset};
use crate::wav::read_wav;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoaderOptions {
    pub template: PathTemplate,
    pub sample_rate: u32,
}

impl Default for LoaderOptions {
    fn default() -> Self {
        Self { template: PathTemplate::default(), sample_rate: 16_000 }
    }
}

/// One subset of a dataset root together with its palette.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub palette: Palette,
    pub options: LoaderOptions,
}

impl Dataset {
    pub fn open(root: &Path, subset: Subset, options: LoaderOptions) -> Result<Self> {
        let manifest = DatasetManifest::load(root, subset)?;
        let path = manifest.palette_path();
        let text = std::fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
        let palette = Palette::from_manifest(&text).map_err(DataError::core(path.display().to_string()))?;
        Ok(Self { manifest, palette, options })
    }

    pub fn subset(&self) -> Subset {
        self.manifest.subset
    }

    /// Number of foreground categories in the palette.
    pub fn categories(&self) -> usize {
        self.palette.len().saturating_sub(1)
    }

    pub fn setting(&self) -> TaskSetting {
        self.subset().setting(self.categories())
    }

    pub fn entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.manifest.split(split).collect()
    }

    fn split_dir(&self, split: Split) -> PathBuf {
        self.manifest.subset_dir().join(split.as_str())
    }

    /// Loads and validates one video. Single-source training videos carry
    /// only their first mask, so only frame 0 is supervised.
    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<AudibleSample> {
        let setting = self.setting();
        let base = self.split_dir(entry.split);
        let tpl = &self.options.template;
        let t_count = entry.clips;
        let mut frames_data = Vec::new();
        let (mut h, mut w) = (0, 0);
        for t in 0..t_count {
            let path = tpl.frame_path(&base, &entry.video_id, t);
            let img = read_rgb(&path)?;
            if t == 0 {
                (h, w) = (img.height, img.width);
            } else if (img.height, img.width) != (h, w) {
                return Err(DataError::CorruptImage { path, msg: format!("frame is {}x{}, first frame {h}x{w}", img.width, img.height) });
            }
            frames_data.extend(img.pixels.iter().flat_map(|px| px.map(|v| f32::from(v) / 255.0)));
        }
        let frames = Tensor::new(&[t_count, h, w, 3], frames_data).map_err(DataError::core(&entry.video_id))?;

        let first_only = setting.kind == SettingKind::S4 && entry.split == Split::Train;
        let supervised: Vec<bool> = (0..t_count).map(|t| !first_only || t == 0).collect();
        let mut masks = MaskVolume::zeros(t_count, h, w);
        for t in (0..t_count).filter(|&t| supervised[t]) {
            let path = tpl.mask_path(&base, &entry.video_id, t);
            let (mw, mh, ids) = read_mask(&path, &self.palette, self.subset().is_binary())?;
            if (mh, mw) != (h, w) {
                return Err(DataError::CorruptMask { path, msg: format!("mask is {mw}x{mh}, frames are {w}x{h}") });
            }
            if let Some(&bad) = ids.iter().find(|&&id| usize::from(id) >= setting.label_count()) {
                return Err(DataError::CorruptMask { path, msg: format!("class id {bad} outside the {} labels of {}", setting.label_count(), self.subset()) });
            }
            masks.frame_mut(t).copy_from_slice(&ids);
        }

        let audio_path = tpl.audio_path(&base, &entry.video_id);
        let sr = self.options.sample_rate;
        let waveform = read_wav(&audio_path, sr)?;
        let sample = AudibleSample {
            id: entry.video_id.clone(),
            frames,
            waveform,
            sample_rate: sr,
            gt_masks: Some(masks),
            supervised_frames: supervised,
        };
        let mut sample = validate_sample(sample, &setting).map_err(DataError::core(audio_path.display().to_string()))?;
        sample.waveform.resize(t_count * sr as usize, 0.0);
        Ok(sample)
    }

    pub fn iter(&self, split: Split) -> impl Iterator<Item = Result<AudibleSample>> + '_ {
        self.manifest.split(split).map(move |e| self.load_entry(e))
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<AudibleSample>> {
        self.iter(split).collect()
    }
}

/// Loads every video of `split` listed in `manifest`.
pub fn load_dataset(manifest: &DatasetManifest, split: Split, options: LoaderOptions) -> Result<Vec<AudibleSample>> {
    let ds = Dataset::open(&manifest.root, manifest.subset, options)?;
    ds.load_split(split)
}

/// Mirrors frames and masks left to right.
pub fn hflip(sample: &AudibleSample) -> AudibleSample {
    let (t, h, w) = (sample.clips(), sample.height(), sample.width());
    let src = sample.frames.data();
    let frames = Tensor::from_fn(&[t, h, w, 3], |i| {
        let (c, x, rest) = (i % 3, (i / 3) % w, i / (3 * w));
        src[(rest * w + (w - 1 - x)) * 3 + c]
    });
    let gt_masks = sample.gt_masks.as_ref().map(|m| {
        let data = (0..t * h * w).map(|i| m.data()[i - i % w + (w - 1 - i % w)]).collect();
        MaskVolume::new(t, h, w, data).expect("same shape")
    });
    AudibleSample { frames, gt_masks, ..sample.clone() }
}
