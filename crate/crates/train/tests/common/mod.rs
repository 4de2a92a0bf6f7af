#![allow(dead_code)]

use std::path::Path;

use avs_core::audio::AudioEncoderConfig;
use avs_core::backbone::BackboneConfig;
use avs_core::decoder::DecoderConfig;
use avs_core::fusion::AsppConfig;
use avs_core::types::SettingKind;
use avs_data::{generate_synthetic, Subset, SynthConfig};
use avs_train::TrainConfig;

pub fn tiny_corpus(root: &Path, subsets: Vec<Subset>, videos: [usize; 3]) {
    let cfg = SynthConfig { videos, subsets, seed: 3, ..SynthConfig::default() };
    generate_synthetic(&cfg, root).unwrap();
}

/// A model small enough that one epoch over a handful of videos takes well
/// under a second.
pub fn tiny_config(root: &Path, out: &Path, setting: SettingKind) -> TrainConfig {
    let mut cfg = TrainConfig { setting, data_root: root.into(), output_dir: out.into(), epochs: Some(1), batch_size: 2, lr: 1e-3, ..TrainConfig::default() };
    cfg.model.backbone = BackboneConfig { channels: [4, 6, 8, 8], stem_channels: 4, blocks_per_stage: 1 };
    cfg.model.aspp = AsppConfig { channels: 8, rates: vec![1, 2], image_pool: true };
    cfg.model.decoder = DecoderConfig { width: 8 };
    cfg.model.audio = AudioEncoderConfig { dim: 8, channels: [4, 4, 4], ..AudioEncoderConfig::default() };
    cfg
}
