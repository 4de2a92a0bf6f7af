mod common;

use avs_core::audio::{AudioEncoder, AudioEncoderConfig, SpectrogramConfig};
use avs_core::backbone::{BackboneConfig, VisualBackbone};
use avs_core::decoder::{Decoder, DecoderConfig};
use avs_core::fusion::{fusion_prefix, init_audio_projection, Aspp, AsppConfig, FusionMode, Tpavi, TpaviConfig};
use avs_core::gradcheck::{check, worst, DEFAULT_EPS};
use avs_core::model::{AvsModel, ModelConfig};
use avs_core::objectives::{self, AvmVariant, LossConfig, ObjectiveInputs};
use avs_core::types::{MaskVolume, TaskSetting};
use avs_core::{Graph, ParamStore, Tensor, Var};
use common::{rng, uniform};
use rand::Rng;

const TOL: f64 = 1e-4;

fn assert_grads(name: &str, params: &ParamStore<f64>, inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var) {
    let reports = check(params, inputs, f, DEFAULT_EPS, 12);
    let w = worst(&reports).unwrap();
    assert!(w.rel_error < TOL, "{name}: {} rel error {:e}", w.name, w.rel_error);
    assert!(reports.iter().any(|r| r.analytic_norm > 0.0), "{name}: all gradients vanished");
}

fn probe(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Var {
    let w = uniform(g.shape(y), -1.0, 1.0, &mut rng(seed));
    let w = g.constant(w);
    let p = g.mul(y, w);
    g.sum(p)
}

/// Zero biases put pixels with all-zero receptive fields exactly on a ReLU
/// kink; jitter them so finite differences see a smooth function.
fn jitter_biases(p: &mut ParamStore<f64>, r: &mut impl Rng) {
    for (name, t) in p.iter_mut() {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v += r.random_range(-0.2..0.2);
            }
        }
    }
}

fn random_mask(t: usize, h: usize, w: usize, k: u8, r: &mut impl Rng) -> MaskVolume {
    MaskVolume::new(t, h, w, (0..t * h * w).map(|_| r.random_range(0..k)).collect()).unwrap()
}

#[test]
fn audio_encoder() {
    let enc = AudioEncoder::new(AudioEncoderConfig { dim: 4, channels: [2, 3, 3], ..Default::default() });
    let mut p = ParamStore::new();
    let mut r = rng(1);
    enc.init(&mut p, &mut r);
    let x = uniform(&[2, 16, 12], -9.0, 1.0, &mut r);
    assert_grads("audio encoder", &p, &[x], |g, xs| {
        let a = enc.forward(g, xs[0]).unwrap();
        probe(g, a, 2)
    });
}

#[test]
fn visual_backbone() {
    let bb = VisualBackbone::new(BackboneConfig { channels: [2, 3, 3, 4], stem_channels: 2, blocks_per_stage: 2 });
    let mut p = ParamStore::new();
    let mut r = rng(3);
    bb.init(&mut p, &mut r);
    jitter_biases(&mut p, &mut r);
    let x = uniform(&[1, 32, 32, 3], -1.0, 1.0, &mut r);
    assert_grads("backbone", &p, &[x], |g, xs| {
        let stages = bb.forward(g, xs[0]).unwrap();
        let mut total = probe(g, stages[0], 4);
        for (i, &s) in stages[1..].iter().enumerate() {
            let l = probe(g, s, 5 + i as u64);
            total = g.add(total, l);
        }
        total
    });
}

#[test]
fn aspp() {
    let aspp = Aspp::new(AsppConfig { channels: 4, rates: vec![1, 2, 3], image_pool: true });
    let mut p = ParamStore::new();
    let mut r = rng(6);
    aspp.init(&mut p, 3, 3, &mut r);
    let x = uniform(&[2, 4, 4, 3], -1.0, 1.0, &mut r);
    assert_grads("aspp", &p, &[x], |g, xs| {
        let v = aspp.forward(g, 3, xs[0]).unwrap();
        probe(g, v, 7)
    });
}

#[test]
fn tpavi_both_paths() {
    let tp = Tpavi::new(TpaviConfig::default());
    let mut p = ParamStore::new();
    let mut r = rng(8);
    init_audio_projection(&mut p, 1, 3, 4, &mut r);
    tp.init(&mut p, 1, 4, &mut r);
    p.insert(format!("{}.mu.weight", fusion_prefix(1)), uniform(&[2, 4], -1.0, 1.0, &mut r));
    let v = uniform(&[2, 3, 2, 4], -1.0, 1.0, &mut r);
    let a = uniform(&[2, 3], -1.0, 1.0, &mut r);
    for explicit in [true, false] {
        assert_grads("tpavi", &p, &[v.clone(), a.clone()], |g, xs| {
            let out = tp.forward(g, 1, xs[0], xs[1], explicit).unwrap();
            probe(g, out.z, 9)
        });
    }
}

#[test]
fn decoder() {
    let dec = Decoder::new(DecoderConfig { width: 3 }, 2);
    let mut p = ParamStore::new();
    let mut r = rng(10);
    dec.init(&mut p, [3; 4], &mut r);
    let zs: Vec<Tensor<f64>> = [8, 4, 2, 1].iter().map(|&s| uniform(&[1, s, s, 3], -1.0, 1.0, &mut r)).collect();
    assert_grads("decoder", &p, &zs, |g, xs| {
        let y = dec.forward(g, xs).unwrap();
        probe(g, y, 11)
    });
}

#[test]
fn main_losses() {
    let mut r = rng(12);
    for (setting, k) in [(TaskSetting::ms3(), 1usize), (TaskSetting::avss(3), 4)] {
        let t = setting.clips_per_video.min(3);
        let scores = uniform(&[t, 4, 4, k], -3.0, 3.0, &mut r);
        let gt = random_mask(t, 4, 4, k.max(2) as u8, &mut r);
        let mut sup = vec![true; t];
        sup[1] = false;
        assert_grads("main loss", &ParamStore::new(), &[scores], |g, xs| {
            let probs = objectives::probabilities(g, xs[0], &setting);
            objectives::main_loss(g, probs, &gt, &sup, 1e-7).unwrap()
        });
    }
}

#[test]
fn matching_losses() {
    let mut r = rng(13);
    let mut p = ParamStore::new();
    objectives::init_avm_projection(&mut p, 1, 3, 4, &mut r);
    objectives::init_avm_projection(&mut p, 2, 3, 4, &mut r);
    let mask = uniform(&[3, 8, 8, 1], 0.0, 1.0, &mut r);
    let z1 = uniform(&[3, 4, 4, 4], -1.0, 1.0, &mut r);
    let z2 = uniform(&[3, 2, 2, 4], -1.0, 1.0, &mut r);
    let a = uniform(&[3, 3], -1.0, 1.0, &mut r);
    let inputs = [mask, z1, z2, a];
    assert_grads("avm av", &p, &inputs, |g, xs| objectives::avm_av_loss(g, xs[0], &xs[1..3], &[1, 2], xs[3]).unwrap());
    assert_grads("avm vv", &ParamStore::new(), &inputs, |g, xs| objectives::avm_vv_loss(g, xs[0], &xs[1..3], xs[3]).unwrap());
}

#[test]
fn total_loss_through_probabilities() {
    let mut r = rng(14);
    let mut p = ParamStore::new();
    objectives::init_avm_projection(&mut p, 1, 3, 4, &mut r);
    let scores = uniform(&[2, 8, 8, 3], -2.0, 2.0, &mut r);
    let z1 = uniform(&[2, 2, 2, 4], -1.0, 1.0, &mut r);
    let a = uniform(&[2, 3], -1.0, 1.0, &mut r);
    let gt = random_mask(2, 8, 8, 3, &mut r);
    let setting = TaskSetting::new(avs_core::types::SettingKind::Avss, 3, 2).unwrap();
    for variant in [AvmVariant::Av, AvmVariant::Vv] {
        let cfg = LossConfig { avm_variant: variant, ..LossConfig::default() };
        assert_grads("total loss", &p, &[scores.clone(), z1.clone(), a.clone()], |g, xs| {
            let probs = objectives::probabilities(g, xs[0], &setting);
            let inp = ObjectiveInputs { probs, fused: &xs[1..2], stages: &[1], audio: xs[2], gt: &gt, supervised: &[true, true] };
            objectives::total_loss(g, &cfg, &setting, &inp).unwrap().total
        });
    }
}

#[test]
fn full_model_end_to_end() {
    let cfg = ModelConfig {
        num_classes: 1,
        fusion: FusionMode::Tpavi,
        spectrogram: SpectrogramConfig::default(),
        audio: AudioEncoderConfig { dim: 4, channels: [2, 2, 2], ..Default::default() },
        backbone: BackboneConfig { channels: [2, 2, 3, 3], stem_channels: 2, blocks_per_stage: 1 },
        aspp: AsppConfig { channels: 4, rates: vec![1, 2], image_pool: true },
        decoder: DecoderConfig { width: 3 },
        ..ModelConfig::default()
    };
    let model = AvsModel::new(cfg).unwrap();
    let mut p: ParamStore<f64> = model.init(5);
    let mut r = rng(15);
    jitter_biases(&mut p, &mut r);
    for s in 1..=4 {
        p.insert(format!("{}.mu.weight", fusion_prefix(s)), uniform(&[2, 4], -0.5, 0.5, &mut r));
    }
    let frames = uniform(&[2, 32, 32, 3], -1.0, 1.0, &mut r);
    let logmel = uniform(&[2, 98, 64], -9.0, 0.0, &mut r);
    let gt = random_mask(2, 32, 32, 2, &mut r);
    let setting = TaskSetting::ms3();
    let loss_cfg = LossConfig::default();
    let reports = check(
        &p,
        &[frames, logmel],
        |g, xs| {
            let out = model.forward(g, xs[0], xs[1], false).unwrap();
            let probs = objectives::probabilities(g, out.scores, &setting);
            let inp = ObjectiveInputs { probs, fused: &out.fused, stages: &[1, 2, 3, 4], audio: out.audio, gt: &gt, supervised: &[true, true] };
            objectives::total_loss(g, &loss_cfg, &setting, &inp).unwrap().total
        },
        DEFAULT_EPS,
        4,
    );
    let w = worst(&reports).unwrap();
    assert!(w.rel_error < TOL, "model: {} rel error {:e}", w.name, w.rel_error);
}
