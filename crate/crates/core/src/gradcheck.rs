//! Central finite-difference checks of reverse-mode gradients.
//!
//! The numerical side only ever evaluates forward values, so it stays
//! independent of every backward rule it checks.

use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub rel_error: f64,
    pub coords: usize,
    pub analytic_norm: f64,
}

/// `||a - n|| / max(||a||, ||n||)` over the checked coordinates; zero when
/// both sides vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

fn coords(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    // evenly spread, deterministic, includes both ends
    (0..max).map(|i| i * (len - 1) / (max - 1)).collect()
}

/// Checks gradients with respect to every parameter in `params` and every
/// tensor in `inputs`. `f` builds a scalar loss on a fresh graph.
pub fn check<F>(params: &ParamStore<f64>, inputs: &[Tensor<f64>], f: F, eps: f64, max_coords: usize) -> Vec<GradReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
{
    let eval = |p: &ParamStore<f64>, xs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::with_params(p);
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let loss = f(&mut g, &vars);
        g.value(loss).data()[0]
    };

    let mut g = Graph::with_params(params);
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let loss = f(&mut g, &vars);
    let grads = g.backward(loss);

    let mut reports = Vec::new();
    for (name, value) in params.iter() {
        let analytic_full = grads.param(name).cloned().unwrap_or_else(|| Tensor::zeros(value.shape()));
        let idx = coords(value.len(), max_coords);
        let mut analytic = Vec::with_capacity(idx.len());
        let mut numeric = Vec::with_capacity(idx.len());
        let mut perturbed = params.clone();
        for &i in &idx {
            let orig = value.data()[i];
            perturbed.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let up = eval(&perturbed, inputs);
            perturbed.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let down = eval(&perturbed, inputs);
            perturbed.get_mut(name).unwrap().data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * eps));
            analytic.push(analytic_full.data()[i]);
        }
        reports.push(report(name.clone(), &analytic, &numeric));
    }
    for (k, x) in inputs.iter().enumerate() {
        let analytic_full = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        let idx = coords(x.len(), max_coords);
        let mut analytic = Vec::with_capacity(idx.len());
        let mut numeric = Vec::with_capacity(idx.len());
        let mut xs = inputs.to_vec();
        for &i in &idx {
            let orig = x.data()[i];
            xs[k].data_mut()[i] = orig + eps;
            let up = eval(params, &xs);
            xs[k].data_mut()[i] = orig - eps;
            let down = eval(params, &xs);
            xs[k].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * eps));
            analytic.push(analytic_full.data()[i]);
        }
        reports.push(report(format!("input{k}"), &analytic, &numeric));
    }
    reports
}

fn report(name: String, analytic: &[f64], numeric: &[f64]) -> GradReport {
    GradReport {
        name,
        rel_error: rel_error(analytic, numeric),
        coords: analytic.len(),
        analytic_norm: analytic.iter().map(|a| a * a).sum::<f64>().sqrt(),
    }
}

/// Largest relative error among the reports.
pub fn worst(reports: &[GradReport]) -> Option<&GradReport> {
    reports.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
}
