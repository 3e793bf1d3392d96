//! Loss heads shared by every trainable block.

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};

const SIMPLEX_TOL: f64 = 1e-6;

fn check_simplex(tape: &Tape, v: Var) -> Result<()> {
    let data = tape.data(v);
    let sum: f64 = data.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL || data.iter().any(|&p| p < 0.0) {
        return Err(Error::NotADistribution { sum, tol: SIMPLEX_TOL });
    }
    Ok(())
}

/// -log softmax(logits)[target], computed with a max-shifted log-sum-exp.
pub fn cross_entropy(tape: &mut Tape, logits: Var, target: usize) -> Result<Var> {
    let n = tape.data(logits).len();
    if target >= n {
        return Err(Error::IndexOutOfRange { index: target, len: n });
    }
    let m = tape
        .data(logits)
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.add_scalar(logits, -m)?;
    let e = tape.exp(shifted)?;
    let s = tape.sum(e)?;
    let lse = tape.log(s)?;
    let lse = tape.add_scalar(lse, m)?;
    let xt = tape.select(logits, target)?;
    tape.sub(lse, xt)
}

/// Focal loss on an explicit probability vector: -(1 - p_t)^gamma * log p_t.
pub fn focal_loss(tape: &mut Tape, probs: Var, target: usize, gamma: f64) -> Result<Var> {
    check_simplex(tape, probs)?;
    let n = tape.data(probs).len();
    if target >= n {
        return Err(Error::IndexOutOfRange { index: target, len: n });
    }
    if gamma < 0.0 {
        return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
    }
    let pt = tape.select(probs, target)?;
    let neg_pt = tape.neg(pt)?;
    let one_minus = tape.add_scalar(neg_pt, 1.0)?;
    // gamma = 0 must reduce exactly to cross-entropy; 0^0 is taken as 1.
    let weight = if gamma == 0.0 {
        tape.scalar(1.0)?
    } else {
        tape.powf(one_minus, gamma)?
    };
    let log_pt = tape.log(pt)?;
    let weighted = tape.mul(weight, log_pt)?;
    tape.neg(weighted)
}

/// Negative log likelihood of edge labels under a mixture of Bernoulli
/// components:
///   -log sum_k alpha_k prod_e theta_{k,e}^{L_e} (1 - theta_{k,e})^{1 - L_e}
/// evaluated in log space with log-sum-exp over components.
///
/// `theta` has shape [K, E]; `labels` one bit per edge.
pub fn mixture_bernoulli_nll(
    tape: &mut Tape,
    alpha: Var,
    theta: Var,
    labels: &[bool],
) -> Result<Var> {
    check_simplex(tape, alpha)?;
    let k = tape.data(alpha).len();
    let shape = tape.shape(theta).to_vec();
    if shape.len() != 2 || shape[0] != k || shape[1] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "mixture_bernoulli_nll",
            lhs: vec![k, labels.len()],
            rhs: shape,
        });
    }
    let e = labels.len();
    let mut lmat = Vec::with_capacity(k * e);
    let mut lneg = Vec::with_capacity(k * e);
    for _ in 0..k {
        for &b in labels {
            lmat.push(if b { 1.0 } else { 0.0 });
            lneg.push(if b { 0.0 } else { 1.0 });
        }
    }
    let lmat = tape.constant(vec![k, e], lmat)?;
    let lneg = tape.constant(vec![k, e], lneg)?;
    let log_theta = tape.log(theta)?;
    let neg_theta = tape.neg(theta)?;
    let one_minus = tape.add_scalar(neg_theta, 1.0)?;
    let log_one_minus = tape.log(one_minus)?;
    let pos = tape.mul(lmat, log_theta)?;
    let neg = tape.mul(lneg, log_one_minus)?;
    let terms = tape.add(pos, neg)?;
    let per_component = tape.sum_cols(terms)?; // [K] log-likelihoods
    let log_alpha = tape.log(alpha)?;
    let joint = tape.add(log_alpha, per_component)?;
    // log-sum-exp over K
    let m = tape
        .data(joint)
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.add_scalar(joint, -m)?;
    let ex = tape.exp(shifted)?;
    let s = tape.sum(ex)?;
    let lse = tape.log(s)?;
    let lse = tape.add_scalar(lse, m)?;
    tape.neg(lse)
}

/// Binary cross-entropy from a raw logit: softplus(z) - y * z (stable form).
pub fn bce_with_logit(tape: &mut Tape, logit: Var, label: bool) -> Result<Var> {
    let sp = tape.softplus(logit)?;
    if label {
        tape.sub(sp, logit)
    } else {
        Ok(sp)
    }
}
