//! Tour of the tape-based reverse-mode autodiff core: build a small
//! computation, take gradients, cross-check them against central finite
//! differences, and fit a toy regression with Adam.
//!
//! Run with: cargo run --release --example autodiff

use rand::Rng as _;
use tnav::numerics::nn::{as_row, Mlp};
use tnav::numerics::{accumulate_loss_grads, fd, AdamState, ParamSet, Session, Tensor};
use tnav::rng;

fn main() -> tnav::Result<()> {
    // y = sum(tanh(W x)): gradients by tape vs. central differences
    let mut params = ParamSet::new();
    params.insert("w", Tensor::new(vec![2, 2], vec![0.3, -0.5, 0.8, 0.1])?);

    let loss_fn = |p: &ParamSet| -> tnav::Result<f64> {
        let mut sess = Session::new(p);
        let w = sess.param("w")?;
        let x = sess.tape.constant(vec![2, 1], vec![1.0, 2.0])?;
        let wx = sess.tape.matmul(w, x)?;
        let act = sess.tape.tanh(wx)?;
        let y = sess.tape.sum(act)?;
        Ok(sess.tape.value(y))
    };

    let y = accumulate_loss_grads(&mut params, |sess| {
        let w = sess.param("w")?;
        let x = sess.tape.constant(vec![2, 1], vec![1.0, 2.0])?;
        let wx = sess.tape.matmul(w, x)?;
        let act = sess.tape.tanh(wx)?;
        sess.tape.sum(act)
    })?;
    println!("y = {y:.6}");

    let numeric = fd::finite_difference(&params, 1e-6, loss_fn)?;
    let mut analytic = std::collections::BTreeMap::new();
    analytic.insert("w".to_string(), params.get("w")?.grad.clone().unwrap());
    let err = fd::max_rel_error(&analytic, &numeric);
    println!("max relative gradient error vs finite differences: {err:.2e}");
    assert!(err < 1e-6);

    // fit y = sin(3x) on [-1, 1] with a small MLP
    let mut r = rng::derive(0, "fit");
    let mlp = Mlp::new("net", &[1, 32, 32, 1]);
    let mut params = ParamSet::new();
    mlp.init(&mut params, &mut r);
    let mut adam = AdamState::new(1e-2);
    for step in 0..400 {
        let xs: Vec<f64> = (0..64).map(|_| r.gen_range(-1.0..1.0)).collect();
        params.zero_grads();
        let loss = accumulate_loss_grads(&mut params, |sess| {
            let zero = sess.tape.scalar(0.0)?;
            let mut total = zero;
            for &xv in &xs {
                let x = sess.tape.constant(vec![1], vec![xv])?;
                let x = as_row(sess, x)?;
                let pred = mlp.forward(sess, x)?;
                let diff = sess.tape.add_scalar(pred, -(3.0 * xv).sin())?;
                let sq = sess.tape.mul(diff, diff)?;
                let sq = sess.tape.sum(sq)?;
                total = sess.tape.add(total, sq)?;
            }
            sess.tape.scale(total, 1.0 / xs.len() as f64)
        })?;
        adam.step(&mut params)?;
        if step % 100 == 0 {
            println!("step {step:>3}: mse {loss:.5}");
        }
    }

    // spot-check the fit
    for xv in [-0.8, -0.3, 0.0, 0.4, 0.9] {
        let mut sess = Session::new(&params);
        let x = sess.tape.constant(vec![1], vec![xv])?;
        let x = as_row(&mut sess, x)?;
        let pred = mlp.forward(&mut sess, x)?;
        let got = sess.tape.data(pred)[0];
        println!("sin(3·{xv:>4}) = {:>7.4}, model says {got:>7.4}", (3.0 * xv).sin());
    }
    Ok(())
}
