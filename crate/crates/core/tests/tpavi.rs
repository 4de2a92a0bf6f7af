mod common;

use avs_core::fusion::{fusion_prefix, init_audio_projection, Tpavi, TpaviConfig};
use avs_core::{ParamStore, Tensor};
use avs_testkit::{tpavi_nested, Affine, TpaviWeights};
use common::{rng, uniform};
use rand::Rng;

fn affine(p: &ParamStore<f64>, prefix: &str) -> Affine {
    let w = p.get(&format!("{prefix}.weight")).unwrap();
    Affine { weight: w.data().to_vec(), bias: p.get(&format!("{prefix}.bias")).unwrap().data().to_vec(), rows: w.shape()[0], cols: w.shape()[1] }
}

/// Random TPAVI parameters with a non-zero output projection.
fn random_block(c: usize, d: usize, r: &mut impl Rng) -> (Tpavi, ParamStore<f64>, TpaviWeights) {
    let tp = Tpavi::new(TpaviConfig::default());
    let mut p = ParamStore::new();
    init_audio_projection(&mut p, 2, d, c, r);
    tp.init(&mut p, 2, c, r);
    let pre = fusion_prefix(2);
    let inner = tp.inner(c);
    p.insert(format!("{pre}.mu.weight"), uniform(&[inner, c], -1.0, 1.0, r));
    p.insert(format!("{pre}.mu.bias"), uniform(&[c], -1.0, 1.0, r));
    for name in ["theta", "phi", "g"] {
        p.insert(format!("{pre}.{name}.bias"), uniform(&[inner], -0.5, 0.5, r));
    }
    let wts = TpaviWeights {
        audio: affine(&p, &format!("{pre}.audio_proj")),
        theta: affine(&p, &format!("{pre}.theta")),
        phi: affine(&p, &format!("{pre}.phi")),
        g: affine(&p, &format!("{pre}.g")),
        mu: affine(&p, &format!("{pre}.mu")),
    };
    (tp, p, wts)
}

#[test]
fn matches_nested_loop_evaluation() {
    let mut r = rng(11);
    for (t, h, w, c) in [(1, 1, 1, 2), (2, 2, 3, 4), (3, 4, 4, 8), (3, 2, 4, 6)] {
        let d = 5;
        let (tp, p, wts) = random_block(c, d, &mut r);
        let v = uniform(&[t, h, w, c], -1.0, 1.0, &mut r);
        let a = uniform(&[t, d], -1.0, 1.0, &mut r);
        let (z, map) = tp.apply(&p, 2, &v, &a).unwrap();
        let (z_ref, alpha_ref) = tpavi_nested(v.data(), t, h, w, c, a.data(), d, &wts);
        for (x, y) in z.data().iter().zip(&z_ref) {
            assert!((x - y).abs() < 1e-6, "Z {x} vs {y}");
        }
        for (x, y) in map.alpha.data().iter().zip(&alpha_ref) {
            assert!((x - y).abs() < 1e-6, "alpha {x} vs {y}");
        }
        // the reassociated training path agrees too
        let mut g = avs_core::Graph::with_params(&p);
        let vv = g.constant(v.clone());
        let av = g.constant(a.clone());
        let out = tp.forward(&mut g, 2, vv, av, false).unwrap();
        for (x, y) in g.value(out.z).data().iter().zip(&z_ref) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn attention_columns_tie_within_a_time_step() {
    let mut r = rng(12);
    for _ in 0..100 {
        let (t, h, w, c) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..4), 2 * r.random_range(1..4));
        let (tp, p, _) = random_block(c, 3, &mut r);
        let v = uniform(&[t, h, w, c], -2.0, 2.0, &mut r);
        let a = uniform(&[t, 3], -2.0, 2.0, &mut r);
        let (_, map) = tp.apply(&p, 2, &v, &a).unwrap();
        let n = t * h * w;
        let per = h * w;
        for row in map.alpha.data().chunks_exact(n) {
            for (q, &val) in row.iter().enumerate() {
                assert_eq!(val, row[(q / per) * per], "column {q} differs from its time step's first column");
            }
        }
    }
}

#[test]
fn zero_output_projection_is_the_identity() {
    let mut r = rng(13);
    let tp = Tpavi::new(TpaviConfig::default());
    let mut p = ParamStore::new();
    init_audio_projection(&mut p, 1, 4, 6, &mut r);
    tp.init(&mut p, 1, 6, &mut r);
    let v = uniform(&[2, 3, 3, 6], -3.0, 3.0, &mut r);
    let a = uniform(&[2, 4], -1.0, 1.0, &mut r);
    let (z, _) = tp.apply(&p, 1, &v, &a).unwrap();
    assert_eq!(z.data(), v.data());
}

#[test]
fn every_frame_sees_every_clip_of_audio() {
    let mut r = rng(14);
    let (tp, p, _) = random_block(4, 3, &mut r);
    let v = uniform(&[3, 2, 2, 4], -1.0, 1.0, &mut r);
    let a = uniform(&[3, 3], -1.0, 1.0, &mut r);
    let (z0, _) = tp.apply(&p, 2, &v, &a).unwrap();
    let mut a2 = a.clone();
    a2.data_mut()[2 * 3] += 0.5;
    let (z1, _) = tp.apply(&p, 2, &v, &a2).unwrap();
    let per = 2 * 2 * 4;
    assert_ne!(&z0.data()[..per], &z1.data()[..per], "frame 0 ignores audio of clip 2");
}

#[test]
fn mismatched_audio_clips_are_rejected() {
    let mut r = rng(15);
    let (tp, p, _) = random_block(4, 3, &mut r);
    let v = Tensor::zeros(&[3, 2, 2, 4]);
    let a = Tensor::zeros(&[2, 3]);
    assert!(tp.apply(&p, 2, &v, &a).is_err());
}

#[test]
fn identity_projections_by_hand() {
    let tp = Tpavi::new(TpaviConfig { inner_channels: Some(2) });
    let pre = fusion_prefix(1);
    let mut p = ParamStore::<f64>::new();
    for name in ["audio_proj", "theta", "phi", "g", "mu"] {
        p.insert(format!("{pre}.{name}.weight"), Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        p.insert(format!("{pre}.{name}.bias"), Tensor::zeros(&[2]));
    }
    let v = Tensor::new(&[2, 1, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let a = Tensor::new(&[2, 2], vec![1.0, 1.0, 2.0, 0.0]).unwrap();
    let (z, map) = tp.apply(&p, 1, &v, &a).unwrap();
    assert_eq!(map.alpha.data(), &[0.5, 1.0, 0.5, 0.0]);
    assert_eq!(z.data(), &[1.5, 1.0, 0.5, 1.0]);
}
