//! Parameter naming and initialization helpers shared by every layer.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::kernels::ConvSpec;
use crate::params::ParamStore;
use crate::real::Real;

pub fn init_conv<S: Real>(p: &mut ParamStore<S>, prefix: &str, k: usize, cin: usize, cout: usize, rng: &mut impl Rng) {
    p.init_he(&format!("{prefix}.weight"), &[k, k, cin, cout], k * k * cin, rng);
    p.init_zeros(&format!("{prefix}.bias"), &[cout]);
}

pub fn init_linear<S: Real>(p: &mut ParamStore<S>, prefix: &str, cin: usize, cout: usize, rng: &mut impl Rng) {
    p.init_he(&format!("{prefix}.weight"), &[cin, cout], cin, rng);
    p.init_zeros(&format!("{prefix}.bias"), &[cout]);
}

pub fn conv<S: Real>(g: &mut Graph<'_, S>, prefix: &str, x: Var, spec: ConvSpec) -> Result<Var> {
    let w = g.param(&format!("{prefix}.weight"))?;
    let b = g.param(&format!("{prefix}.bias"))?;
    Ok(g.conv2d(x, w, Some(b), spec))
}

pub fn linear<S: Real>(g: &mut Graph<'_, S>, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(&format!("{prefix}.weight"))?;
    let b = g.param(&format!("{prefix}.bias"))?;
    Ok(g.linear(x, w, Some(b)))
}

/// Output channels of a stored conv or linear weight.
pub fn out_channels<S: Real>(p: &ParamStore<S>, prefix: &str) -> Result<usize> {
    Ok(p.get(&format!("{prefix}.weight"))?.last_dim())
}
