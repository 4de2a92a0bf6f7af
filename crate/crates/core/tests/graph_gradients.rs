mod common;

use avs_core::gradcheck::{check, worst, DEFAULT_EPS};
use avs_core::kernels::ConvSpec;
use avs_core::{Graph, ParamStore, Var};
use common::{rng, uniform};

const TOL: f64 = 1e-6;

fn assert_grads(name: &str, params: &ParamStore<f64>, inputs: &[avs_core::Tensor<f64>], f: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var) {
    let reports = check(params, inputs, f, DEFAULT_EPS, 64);
    let w = worst(&reports).unwrap();
    assert!(w.rel_error < TOL, "{name}: {} rel error {}", w.name, w.rel_error);
}

/// Weighted sum so every output coordinate gets a distinct upstream gradient.
fn probe(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Var {
    let mut r = rng(seed);
    let w = uniform(g.shape(y), -1.0, 1.0, &mut r);
    let w = g.constant(w);
    let p = g.mul(y, w);
    g.sum(p)
}

#[test]
fn conv_gradients_all_geometries() {
    let mut r = rng(1);
    for (k, spec) in [(3, ConvSpec::new(1, 1, 1)), (3, ConvSpec::new(2, 1, 1)), (3, ConvSpec::new(1, 3, 3)), (1, ConvSpec::new(1, 0, 1)), (1, ConvSpec::new(2, 0, 1))] {
        let mut p = ParamStore::new();
        p.insert("w", uniform(&[k, k, 3, 4], -1.0, 1.0, &mut r));
        p.insert("b", uniform(&[4], -1.0, 1.0, &mut r));
        let x = uniform(&[2, 6, 5, 3], -1.0, 1.0, &mut r);
        assert_grads(&format!("conv {spec:?}"), &p, &[x], |g, xs| {
            let w = g.param("w").unwrap();
            let b = g.param("b").unwrap();
            let y = g.conv2d(xs[0], w, Some(b), spec);
            probe(g, y, 9)
        });
    }
}

#[test]
fn linear_matmul_and_elementwise_gradients() {
    let mut r = rng(2);
    let mut p = ParamStore::new();
    p.insert("w", uniform(&[3, 5], -1.0, 1.0, &mut r));
    p.insert("b", uniform(&[5], -1.0, 1.0, &mut r));
    let x = uniform(&[4, 3], -1.0, 1.0, &mut r);
    let m = uniform(&[5, 4], -1.0, 1.0, &mut r);
    assert_grads("linear/matmul", &p, &[x, m], |g, xs| {
        let w = g.param("w").unwrap();
        let b = g.param("b").unwrap();
        let y = g.linear(xs[0], w, Some(b)); // 4x5
        let z = g.matmul(y, xs[1], true, true); // (5x4)(4x5) = 5x5
        let z2 = g.matmul(xs[1], y, false, false); // (5x4)(4x5)
        let s = g.add(z, z2);
        let s = g.sigmoid(s);
        let t = g.affine(s, 2.0, -0.5);
        let u = g.mul(t, s);
        probe(g, u, 3)
    });
}

#[test]
fn softmax_family_gradients() {
    let mut r = rng(3);
    let x = uniform(&[3, 4], -2.0, 2.0, &mut r);
    let y = uniform(&[3, 4], -2.0, 2.0, &mut r);
    assert_grads("softmax", &ParamStore::new(), &[x, y], |g, xs| {
        let a = g.softmax(xs[0]);
        let b = g.log_softmax(xs[1]);
        let c = g.mul(a, b);
        let d = g.clamp(a, 0.05, 0.9);
        let d = g.log(d);
        let e = g.sub(c, d);
        probe(g, e, 4)
    });
}

#[test]
fn spatial_operator_gradients() {
    let mut r = rng(4);
    let x = uniform(&[2, 4, 4, 3], -1.0, 1.0, &mut r);
    let m = uniform(&[2, 8, 8, 1], 0.0, 1.0, &mut r);
    let a = uniform(&[2, 3], -1.0, 1.0, &mut r);
    assert_grads("spatial", &ParamStore::new(), &[x, m, a], |g, xs| {
        let up = g.upsample_nearest(xs[0], 2); // 2x8x8x3
        let bl = g.bilinear(xs[0], 8, 8);
        let s = g.add(up, bl);
        let masked = g.mul_channel(s, xs[1]);
        let pooled = g.avg_pool(masked, 2); // 2x4x4x3
        let mean = g.spatial_mean(pooled); // 2x3
        let ab = g.spatial_broadcast(xs[2], 4, 4);
        let cat = g.concat(&[pooled, ab]); // 2x4x4x6
        let sl = g.slice_last(cat, 2, 3);
        let rs = g.reshape(sl, &[32, 3]);
        let sel = g.select_frames(xs[0], &[1, 1, 0]);
        let relu = g.relu(sel);
        let p1 = probe(g, rs, 5);
        let p2 = probe(g, mean, 6);
        let p3 = probe(g, relu, 7);
        let s = g.add(p1, p2);
        let s = g.add(s, p3);
        let big = g.bias_add(cat, xs[2]);
        let _ = big;
        s
    });
}

#[test]
fn bias_add_and_mean_gradients() {
    let mut r = rng(5);
    let x = uniform(&[3, 2, 2, 4], -1.0, 1.0, &mut r);
    let b = uniform(&[4], -1.0, 1.0, &mut r);
    assert_grads("bias/mean", &ParamStore::new(), &[x, b], |g, xs| {
        let y = g.bias_add(xs[0], xs[1]);
        let y = g.mul(y, y);
        g.mean(y)
    });
}
