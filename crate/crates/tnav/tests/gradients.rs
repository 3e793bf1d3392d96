//! Gradient checks: the analytic reverse-mode gradients of every trainable
//! block are compared against central finite differences, across 20 random
//! seeds, with a relative-error tolerance of 1e-4.

use std::collections::BTreeMap;

use rand::Rng as _;
use tnav::agents::{encode_instruction, step_policy, PolicyConfig, PolicyModel, StepInputs};
use tnav::cggn::{CggnConfig, CggnModel};
use tnav::numerics::nn::{as_row, GruCell, Linear, LstmCell, Mlp};
use tnav::numerics::{
    accumulate_loss_grads, fd, loss, ParamSet, Session,
};
use tnav::rng;
use tnav::worldgen::{build_sample, Room, RoomClass, RoomGraph};

const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

/// Move every parameter to a generic point. Freshly initialized models hold
/// exact zeros (biases, positional states), which parks ReLU pre-activations
/// on the kink where one-sided finite differences disagree with the
/// subgradient; a small jitter makes the comparison well-posed.
fn jitter(params: &mut ParamSet, r: &mut impl rand::Rng) {
    for (_, t) in params.iter_mut() {
        for v in &mut t.data {
            *v += r.gen_range(0.02..0.12) * if r.gen_bool(0.5) { 1.0 } else { -1.0 };
        }
    }
}

fn analytic_grads(params: &ParamSet) -> BTreeMap<String, Vec<f64>> {
    let mut out = BTreeMap::new();
    for (name, t) in params.iter() {
        if let Some(g) = &t.grad {
            out.insert(name.clone(), g.clone());
        }
    }
    out
}

fn check(params: &mut ParamSet, forward: impl Fn(&mut Session) -> tnav::Result<tnav::numerics::Var>) {
    params.zero_grads();
    accumulate_loss_grads(params, &forward).unwrap();
    let analytic = analytic_grads(params);
    let numeric = fd::finite_difference(params, H, |p| {
        let mut sess = Session::new(p);
        let l = forward(&mut sess)?;
        Ok(sess.tape.value(l))
    })
    .unwrap();
    let err = fd::max_rel_error(&analytic, &numeric);
    assert!(err < TOL, "gradient mismatch: max relative error {err:.3e}");
}

#[test]
fn linear_and_bce() {
    for seed in 0..20u64 {
        let mut r = rng::derive(seed, "grad-linear");
        let lin = Linear::new("lin", 5, 1);
        let mut params = ParamSet::new();
        lin.init(&mut params, &mut r);
        let x: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
        let label = seed % 2 == 0;
        check(&mut params, |sess| {
            let xin = sess.tape.constant_vec(x.clone())?;
            let xin = as_row(sess, xin)?;
            let logit = lin.forward(sess, xin)?;
            let logit = sess.tape.sum(logit)?;
            loss::bce_with_logit(&mut sess.tape, logit, label)
        });
    }
}

#[test]
fn mlp_with_cross_entropy_and_focal() {
    for seed in 0..20u64 {
        let mut r = rng::derive(seed, "grad-mlp");
        let mlp = Mlp::new("mlp", &[4, 8, 3]);
        let mut params = ParamSet::new();
        mlp.init(&mut params, &mut r);
        let x: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let target = (seed % 3) as usize;
        check(&mut params, |sess| {
            let xin = sess.tape.constant_vec(x.clone())?;
            let xin = as_row(sess, xin)?;
            let logits = mlp.forward(sess, xin)?;
            loss::cross_entropy(&mut sess.tape, logits, target)
        });
        check(&mut params, |sess| {
            let xin = sess.tape.constant_vec(x.clone())?;
            let xin = as_row(sess, xin)?;
            let logits = mlp.forward(sess, xin)?;
            let probs = sess.tape.softmax(logits)?;
            loss::focal_loss(&mut sess.tape, probs, target, 0.5)
        });
    }
}

#[test]
fn lstm_cell_two_steps() {
    for seed in 0..20u64 {
        let mut r = rng::derive(seed, "grad-lstm");
        let cell = LstmCell::new("lstm", 3, 4);
        let mut params = ParamSet::new();
        cell.init(&mut params, &mut r);
        let x1: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        check(&mut params, |sess| {
            let h = sess.tape.constant(vec![1, 4], vec![0.0; 4])?;
            let c = sess.tape.constant(vec![1, 4], vec![0.0; 4])?;
            let xa = sess.tape.constant(vec![1, 3], x1.clone())?;
            let (h, c) = cell.forward(sess, xa, h, c)?;
            let xb = sess.tape.constant(vec![1, 3], x2.clone())?;
            let (h, _c) = cell.forward(sess, xb, h, c)?;
            let sq = sess.tape.mul(h, h)?;
            sess.tape.sum(sq)
        });
    }
}

#[test]
fn gru_cell_two_steps() {
    for seed in 0..20u64 {
        let mut r = rng::derive(seed, "grad-gru");
        let cell = GruCell::new("gru", 3, 4);
        let mut params = ParamSet::new();
        cell.init(&mut params, &mut r);
        let x1: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        check(&mut params, |sess| {
            let h = sess.tape.constant(vec![1, 4], vec![0.0; 4])?;
            let xa = sess.tape.constant(vec![1, 3], x1.clone())?;
            let h = cell.forward(sess, xa, h)?;
            let xb = sess.tape.constant(vec![1, 3], x2.clone())?;
            let h = cell.forward(sess, xb, h)?;
            let sq = sess.tape.mul(h, h)?;
            sess.tape.sum(sq)
        });
    }
}

#[test]
fn mixture_bernoulli_through_parameters() {
    for seed in 0..20u64 {
        let mut r = rng::derive(seed, "grad-mix");
        let alpha_head = Linear::new("ah", 3, 2);
        let theta_head = Linear::new("th", 3, 8);
        let mut params = ParamSet::new();
        alpha_head.init(&mut params, &mut r);
        theta_head.init(&mut params, &mut r);
        let x: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let target = [seed % 2 == 0, true, false, seed % 3 == 0];
        check(&mut params, |sess| {
            let xin = sess.tape.constant_vec(x.clone())?;
            let xin = as_row(sess, xin)?;
            let a = alpha_head.forward(sess, xin)?;
            let a = sess.tape.reshape(a, vec![2])?;
            let alpha = sess.tape.softmax(a)?;
            let t = theta_head.forward(sess, xin)?;
            let t = sess.tape.sigmoid(t)?;
            let theta = sess.tape.reshape(t, vec![2, 4])?;
            let theta = sess.tape.clamp(theta, 1e-12, 1.0 - 1e-12)?;
            loss::mixture_bernoulli_nll(&mut sess.tape, alpha, theta, &target)
        });
    }
}

/// Path graph 0-1-2-3 for the trajectory model check.
fn chain_graph() -> RoomGraph {
    let mut g = RoomGraph {
        id: "chain".into(),
        rooms: (0..4)
            .map(|i| Room {
                id: i,
                class: RoomClass(i % 3),
                pos: [4.0 * i as f64, 0.0, 0.0],
            })
            .collect(),
        edges: Default::default(),
    };
    for i in 0..3 {
        g.add_edge(i, i + 1).unwrap();
    }
    g
}

#[test]
fn trajectory_model_end_to_end() {
    // micro configuration keeps the finite-difference sweep tractable while
    // still exercising every module: embedding, message/gate/GRU layers,
    // mixture heads, node head, and the generated-node initial states
    let cfg = CggnConfig {
        block: 2,
        hidden: 4,
        gnn_layers: 2,
        node_mlp_hidden: 5,
        mixture_k: 2,
        max_obs: 4,
        ..CggnConfig::desk()
    };
    let g = chain_graph();
    let sample = build_sample(&g, &[0, 1, 2, 3], 2, cfg.block);
    for seed in 0..20u64 {
        let mut r = rng::derive(seed, "grad-cggn");
        let mut model = CggnModel::init(cfg.clone(), &mut r).unwrap();
        jitter(&mut model.params, &mut r);
        model.params.zero_grads();
        model.loss_grads(&sample).unwrap();
        let analytic = analytic_grads(&model.params);
        let numeric = fd::finite_difference(&model.params, H, |p| {
            let m = CggnModel { cfg: cfg.clone(), params: p.clone() };
            let (e, n) = m.losses(&sample)?;
            Ok(e + n)
        })
        .unwrap();
        let err = fd::max_rel_error(&analytic, &numeric);
        assert!(err < TOL, "seed {seed}: trajectory model gradient error {err:.3e}");
    }
}

#[test]
fn policy_step_end_to_end() {
    // one instruction encoding + one policy step through the attention,
    // LSTM, and candidate-scoring heads, with a cross-entropy target
    let cfg = PolicyConfig { hidden: 6, lr: 1e-3 };
    for seed in 0..20u64 {
        let mut r = rng::derive(seed, "grad-agent");
        let mut model = PolicyModel::init(cfg.clone(), &mut r);
        jitter(&mut model.params, &mut r);
        let obs: Vec<f64> = {
            let raw: Vec<f64> = (0..30).map(|_| r.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        };
        let node_feats: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..33).map(|_| r.gen_range(-0.5..0.5)).collect())
            .collect();
        let cand_feats: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..30).map(|_| r.gen_range(0.0..1.0)).collect())
            .collect();
        let target = (seed % 3) as usize;
        let forward = |sess: &mut Session| -> tnav::Result<tnav::numerics::Var> {
            let (h, c) = encode_instruction(sess, &cfg, 5)?;
            let inputs = StepInputs {
                obs_probs: &obs,
                prev_action: &[0.0; 30],
                subgoal: None,
                node_feats: &node_feats,
                candidate_feats: &cand_feats,
            };
            let (_h, _c, probs) = step_policy(sess, &cfg, h, c, &inputs)?;
            let safe = sess.tape.clamp(probs, 1e-300, 1.0)?;
            let logp = sess.tape.log(safe)?;
            loss::cross_entropy(&mut sess.tape, logp, target)
        };
        model.params.zero_grads();
        accumulate_loss_grads(&mut model.params, forward).unwrap();
        let analytic = analytic_grads(&model.params);
        let numeric = fd::finite_difference(&model.params, H, |p| {
            let mut sess = Session::new(p);
            let l = forward(&mut sess)?;
            Ok(sess.tape.value(l))
        })
        .unwrap();
        let err = fd::max_rel_error(&analytic, &numeric);
        assert!(err < TOL, "seed {seed}: policy gradient error {err:.3e}");
    }
}
