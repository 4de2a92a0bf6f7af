mod common;

use avs_core::backbone::BackboneConfig;
use avs_core::fusion::AsppConfig;
use avs_core::decoder::DecoderConfig;
use avs_core::audio::AudioEncoderConfig;
use avs_core::model::{AvsModel, ModelConfig};
use avs_core::objectives::{self, avm_prefix, AvmVariant, LossConfig, ObjectiveInputs};
use avs_core::types::{MaskVolume, TaskSetting};
use avs_core::{Graph, ParamStore, Tensor};
use avs_testkit as oracle;
use common::{rng, uniform};
use rand::Rng;

fn random_mask(t: usize, h: usize, w: usize, k: u8, r: &mut impl Rng) -> MaskVolume {
    MaskVolume::new(t, h, w, (0..t * h * w).map(|_| r.random_range(0..k)).collect()).unwrap()
}

#[test]
fn main_loss_matches_pixel_loop() {
    let mut r = rng(1);
    for k in [1usize, 4] {
        for _ in 0..20 {
            let t = r.random_range(2..5);
            let probs = if k == 1 {
                uniform(&[t, 3, 5, 1], 0.0, 1.0, &mut r)
            } else {
                let raw = uniform(&[t, 3, 5, k], 0.0, 1.0, &mut r);
                Tensor::from_fn(raw.shape(), |i| raw.data()[i] / raw.data()[i / k * k..i / k * k + k].iter().sum::<f64>())
            };
            let gt = random_mask(t, 3, 5, k.max(2) as u8, &mut r);
            let mut sup: Vec<bool> = (0..t).map(|_| r.random_bool(0.5)).collect();
            sup[0] = true;
            let mut g = Graph::<f64>::new();
            let p = g.constant(probs.clone());
            let loss = objectives::main_loss(&mut g, p, &gt, &sup, 1e-7).unwrap();
            let frames: Vec<usize> = (0..t).filter(|&i| sup[i]).collect();
            let per = 15;
            let sel_p: Vec<f64> = frames.iter().flat_map(|&f| probs.data()[f * per * k..(f + 1) * per * k].to_vec()).collect();
            let sel_y: Vec<u8> = frames.iter().flat_map(|&f| gt.frame(f).to_vec()).collect();
            let want = if k == 1 { oracle::bce(&sel_p, &sel_y, 1e-7) } else { oracle::cross_entropy(&sel_p, &sel_y, k, 1e-7) };
            assert!((g.value(loss).data()[0] - want).abs() < 1e-8);
        }
    }
}

#[test]
fn uniform_prediction_is_ln2_for_any_mask() {
    let mut r = rng(2);
    for _ in 0..10 {
        let gt = random_mask(3, 6, 6, 2, &mut r);
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::full(&[3, 6, 6, 1], 0.5));
        let l = objectives::main_loss(&mut g, p, &gt, &[true, true, true], 1e-7).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-9);
    }
}

fn masked_avg(mask: &Tensor<f64>, z: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (t, h, w, _) = mask.dims4().unwrap();
    let (_, hz, wz, c) = z.dims4().unwrap();
    oracle::masked_average(mask.data(), (t, h, w), z.data(), (hz, wz, c))
}

#[test]
fn av_matching_matches_loop_kl() {
    let mut r = rng(3);
    let mut p = ParamStore::new();
    objectives::init_avm_projection(&mut p, 1, 3, 5, &mut r);
    let mask = uniform(&[2, 4, 4, 1], 0.0, 1.0, &mut r);
    let z = uniform(&[2, 2, 2, 5], -2.0, 2.0, &mut r);
    let a = uniform(&[2, 3], -1.0, 1.0, &mut r);
    let mut g = Graph::with_params(&p);
    let (mv, zv, av) = (g.constant(mask.clone()), g.constant(z.clone()), g.constant(a.clone()));
    let loss = objectives::avm_av_loss(&mut g, mv, &[zv], &[1], av).unwrap();
    let vis = masked_avg(&mask, &z);
    let proj = oracle::Affine {
        weight: p.get(&format!("{}.weight", avm_prefix(1))).unwrap().data().to_vec(),
        bias: p.get(&format!("{}.bias", avm_prefix(1))).unwrap().data().to_vec(),
        rows: 3,
        cols: 5,
    };
    let want = (0..2).map(|t| oracle::kl_logits(&vis[t], &proj.apply(&a.data()[t * 3..t * 3 + 3]))).sum::<f64>() / 2.0;
    assert!((g.value(loss).data()[0] - want).abs() < 1e-8);
}

#[test]
fn vv_pairing_and_value_match_brute_force() {
    let mut r = rng(4);
    for _ in 0..50 {
        let t = r.random_range(2..7);
        let a = uniform(&[t, 4], -1.0, 1.0, &mut r);
        let rows: Vec<Vec<f64>> = a.data().chunks(4).map(<[f64]>::to_vec).collect();
        let partners = oracle::nearest_partner(&rows);
        assert_eq!(objectives::audio_partners(&a).unwrap(), partners);

        let mask = uniform(&[t, 4, 4, 1], 0.0, 1.0, &mut r);
        let z = uniform(&[t, 2, 2, 3], -2.0, 2.0, &mut r);
        let mut g = Graph::<f64>::new();
        let (mv, zv, av) = (g.constant(mask.clone()), g.constant(z.clone()), g.constant(a.clone()));
        let loss = objectives::avm_vv_loss(&mut g, mv, &[zv], av).unwrap();
        let vis = masked_avg(&mask, &z);
        let want = (0..t).map(|i| oracle::kl_logits(&vis[i], &vis[partners[i]])).sum::<f64>() / t as f64;
        assert!((g.value(loss).data()[0] - want).abs() < 1e-8);
    }
}

#[test]
fn matching_losses_are_non_negative() {
    let mut r = rng(5);
    for _ in 0..1000 {
        let mut p = ParamStore::new();
        objectives::init_avm_projection(&mut p, 1, 2, 3, &mut r);
        objectives::init_avm_projection(&mut p, 2, 2, 3, &mut r);
        let t = r.random_range(2..4);
        let mask = uniform(&[t, 4, 4, 1], 0.0, 1.0, &mut r);
        let z1 = uniform(&[t, 2, 2, 3], -3.0, 3.0, &mut r);
        let z2 = uniform(&[t, 1, 1, 3], -3.0, 3.0, &mut r);
        let a = uniform(&[t, 2], -3.0, 3.0, &mut r);
        let mut g = Graph::with_params(&p);
        let (mv, z1, z2, av) = (g.constant(mask), g.constant(z1), g.constant(z2), g.constant(a));
        let av_loss = objectives::avm_av_loss(&mut g, mv, &[z1, z2], &[1, 2], av).unwrap();
        let vv_loss = objectives::avm_vv_loss(&mut g, mv, &[z1, z2], av).unwrap();
        assert!(g.value(av_loss).data()[0] >= 0.0);
        assert!(g.value(vv_loss).data()[0] >= 0.0);
    }
}

#[test]
fn matching_losses_vanish_on_matched_distributions() {
    let mut r = rng(6);
    let mask = uniform(&[2, 4, 4, 1], 0.0, 1.0, &mut r);
    let z = uniform(&[2, 2, 2, 3], -1.0, 1.0, &mut r);
    let vis = masked_avg(&mask, &z);
    // identity projection and audio equal to the masked visual features
    let mut p = ParamStore::new();
    p.insert(format!("{}.weight", avm_prefix(1)), Tensor::from_fn(&[3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 }));
    p.insert(format!("{}.bias", avm_prefix(1)), Tensor::zeros(&[3]));
    let a = Tensor::new(&[2, 3], vis.concat()).unwrap();
    let mut g = Graph::with_params(&p);
    let (mv, zv, av) = (g.constant(mask.clone()), g.constant(z.clone()), g.constant(a));
    let l = objectives::avm_av_loss(&mut g, mv, &[zv], &[1], av).unwrap();
    assert!(g.value(l).data()[0].abs() < 1e-15);

    // two clips with identical audio and visual content
    let mut z2 = z.clone();
    let half = z2.len() / 2;
    let first = z2.data()[..half].to_vec();
    z2.data_mut()[half..].copy_from_slice(&first);
    let mut m2 = mask.clone();
    let mh = m2.len() / 2;
    let mfirst = m2.data()[..mh].to_vec();
    m2.data_mut()[mh..].copy_from_slice(&mfirst);
    let mut g = Graph::<f64>::new();
    let (mv, zv, av) = (g.constant(m2), g.constant(z2), g.constant(Tensor::full(&[2, 4], 0.3)));
    let l = objectives::avm_vv_loss(&mut g, mv, &[zv], av).unwrap();
    assert_eq!(g.value(l).data()[0], 0.0);
}

#[test]
fn empty_mask_keeps_matching_finite() {
    let mut r = rng(7);
    let mut p = ParamStore::new();
    objectives::init_avm_projection(&mut p, 1, 2, 3, &mut r);
    let mut g = Graph::with_params(&p);
    let mv = g.input(Tensor::zeros(&[2, 4, 4, 1]));
    let zv = g.input(uniform(&[2, 2, 2, 3], -1.0, 1.0, &mut r));
    let av = g.input(uniform(&[2, 2], -1.0, 1.0, &mut r));
    let l = objectives::avm_av_loss(&mut g, mv, &[zv], &[1], av).unwrap();
    assert!(g.value(l).data()[0].is_finite());
    let grads = g.backward(l);
    assert!(grads.wrt(mv).unwrap().is_finite());
}

#[test]
fn total_loss_composition() {
    let mut r = rng(8);
    let mut p = ParamStore::new();
    objectives::init_avm_projection(&mut p, 1, 3, 4, &mut r);
    let scores = uniform(&[3, 8, 8, 1], -2.0, 2.0, &mut r);
    let z = uniform(&[3, 2, 2, 4], -1.0, 1.0, &mut r);
    let a = uniform(&[3, 3], -1.0, 1.0, &mut r);
    let gt = random_mask(3, 8, 8, 2, &mut r);
    let setting = TaskSetting::ms3();
    let run = |cfg: &LossConfig| {
        let mut g = Graph::with_params(&p);
        let s = g.constant(scores.clone());
        let zv = g.constant(z.clone());
        let av = g.constant(a.clone());
        let probs = objectives::probabilities(&mut g, s, &setting);
        let inp = ObjectiveInputs { probs, fused: &[zv], stages: &[1], audio: av, gt: &gt, supervised: &[true; 3] };
        let terms = objectives::total_loss(&mut g, cfg, &setting, &inp).unwrap();
        (g.value(terms.total).data()[0], g.value(terms.main).data()[0], terms.avm.map(|v| g.value(v).data()[0]), g.len())
    };
    let (t0, m0, avm0, nodes0) = run(&LossConfig { lambda: 0.0, ..LossConfig::default() });
    assert_eq!(t0, m0);
    assert!(avm0.is_none());
    let (t5, m5, avm5, nodes5) = run(&LossConfig::default());
    assert_eq!(t5, m5 + 0.5 * avm5.unwrap());
    assert!(nodes5 > nodes0);
    let (tn, mn, avmn, _) = run(&LossConfig { avm_variant: AvmVariant::None, ..LossConfig::default() });
    assert_eq!((tn, avmn), (mn, None));
}

#[test]
fn s4_training_never_sees_later_frames() {
    let cfg = ModelConfig {
        audio: AudioEncoderConfig { dim: 8, channels: [2, 2, 2], ..Default::default() },
        backbone: BackboneConfig { channels: [4, 4, 4, 4], stem_channels: 4, blocks_per_stage: 1 },
        aspp: AsppConfig { channels: 4, rates: vec![1, 2], image_pool: true },
        decoder: DecoderConfig { width: 4 },
        ..ModelConfig::default()
    };
    let model = AvsModel::new(cfg).unwrap();
    let p: ParamStore<f64> = model.init(1);
    let mut r = rng(9);
    let setting = TaskSetting::s4();
    let frames = uniform(&[5, 32, 32, 3], -1.0, 1.0, &mut r);
    let logmel = uniform(&[5, 98, 64], -9.0, 0.0, &mut r);
    let gt = random_mask(5, 32, 32, 2, &mut r);
    let loss_cfg = LossConfig { lambda: 0.5, ..LossConfig::default() };
    let mut g = Graph::with_params(&p);
    let (x, a) = (g.constant(frames), g.constant(logmel));
    let out = model.forward(&mut g, x, a, false).unwrap();
    let probs = objectives::probabilities(&mut g, out.scores, &setting);
    let sup = [true, false, false, false, false];
    let inp = ObjectiveInputs { probs, fused: &out.fused, stages: &[1, 2, 3, 4], audio: out.audio, gt: &gt, supervised: &sup };
    let terms = objectives::total_loss(&mut g, &loss_cfg, &setting, &inp).unwrap();
    assert!(terms.avm.is_none());
    let grads = g.backward(terms.total);
    let gs = grads.wrt(out.scores).unwrap();
    let per = 32 * 32;
    assert!(gs.data()[..per].iter().any(|&v| v != 0.0));
    assert!(gs.data()[per..].iter().all(|&v| v == 0.0));
}
