//! Central finite differences over a parameter set. Testing utility: the
//! gradient-check suites compare analytic gradients against this.

use crate::error::Result;
use crate::numerics::tensor::ParamSet;

/// Numerically differentiate `loss(params)` w.r.t. every parameter value with
/// central differences, returning (name, flat index, derivative) triples.
pub fn finite_difference(
    params: &ParamSet,
    h: f64,
    mut loss: impl FnMut(&ParamSet) -> Result<f64>,
) -> Result<Vec<(String, usize, f64)>> {
    let mut out = Vec::new();
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let mut work = params.clone();
    for name in names {
        let len = params.get(&name)?.len();
        for i in 0..len {
            let orig = work.get(&name)?.data[i];
            work.get_mut(&name)?.data[i] = orig + h;
            let up = loss(&work)?;
            work.get_mut(&name)?.data[i] = orig - h;
            let down = loss(&work)?;
            work.get_mut(&name)?.data[i] = orig;
            out.push((name.clone(), i, (up - down) / (2.0 * h)));
        }
    }
    Ok(out)
}

/// Max relative error between an analytic gradient map and finite differences,
/// with an absolute floor so near-zero derivatives compare sanely.
pub fn max_rel_error(
    analytic: &std::collections::BTreeMap<String, Vec<f64>>,
    numeric: &[(String, usize, f64)],
) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, i, fd) in numeric {
        let a = analytic
            .get(name)
            .map(|g| g[*i])
            .unwrap_or(0.0);
        let denom = a.abs().max(fd.abs()).max(1e-4);
        worst = worst.max((a - fd).abs() / denom);
    }
    worst
}
