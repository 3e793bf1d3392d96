//! Acceptance gate: ten criteria, one test each, every test printing a
//! single PASS line on success. Tolerances are pinned as constants next to
//! the checks that use them.

use std::time::Instant;

use rand::Rng as _;
use tnav::agents::{
    train_student_forcing, AgentSetup, InformedConfig, PolicyConfig, PolicyModel,
};
use tnav::cggn::{sample_mode, CggnConfig, CggnInput, CggnModel};
use tnav::eval::{
    per_class_topk, spl, summarize, eval_graph_prediction, evaluate_agent, EpisodeResult,
};
use tnav::mapping::{fuse_room_probs, PerfectLocalizer, SceneGraph};
use tnav::numerics::nn::{GruCell, LstmCell, Mlp};
use tnav::numerics::{accumulate_loss_grads, fd, loss, AdamState, ParamSet, Session};
use tnav::perception::{Observer, ObserverConfig};
use tnav::rng;
use tnav::worldgen::{
    generate_environment, sample_cggn_example, sample_nav_pairs, CggnSample, NavPair, RoomGraph,
    WorldgenParams,
};

fn pass(n: usize, name: &str) {
    println!("acceptance {n:>2} ({name}): PASS");
}

fn gen_envs(seed: u64, label: &str, count: usize, params: &WorldgenParams) -> Vec<RoomGraph> {
    (0..count)
        .map(|i| {
            let mut r = rng::derive_indexed(seed, label, i as u64);
            generate_environment(&format!("{label}_{i}"), &mut r, params).unwrap()
        })
        .collect()
}

fn sample_corpus(envs: &[RoomGraph], count: usize, block: usize, max_obs: usize, seed: u64) -> Vec<CggnSample> {
    let mut r = rng::derive(seed, "corpus");
    let mut out = Vec::new();
    while out.len() < count {
        let g = &envs[r.gen_range(0..envs.len())];
        if let Ok(s) = sample_cggn_example(g, &mut r, 7, block) {
            if s.obs_len() <= max_obs {
                out.push(s);
            }
        }
    }
    out
}

/// Criterion 1: analytic gradients of the trainable blocks match central
/// finite differences (20 seeds, relative error < 1e-4, under a minute).
/// The exhaustive sweep, including the full trajectory model and policy
/// step, lives in tests/gradients.rs and runs in the same workspace pass.
#[test]
fn criterion_01_gradient_suite() {
    const TOL: f64 = 1e-4;
    let started = Instant::now();
    for seed in 0..20u64 {
        let mut r = rng::derive(seed, "acc-grad");
        let mlp = Mlp::new("m", &[4, 8, 3]);
        let lstm = LstmCell::new("l", 3, 4);
        let gru = GruCell::new("g", 3, 4);
        let mut params = ParamSet::new();
        mlp.init(&mut params, &mut r);
        lstm.init(&mut params, &mut r);
        gru.init(&mut params, &mut r);
        for (_, t) in params.iter_mut() {
            for v in &mut t.data {
                *v += r.gen_range(0.02..0.12) * if r.gen_bool(0.5) { 1.0 } else { -1.0 };
            }
        }
        let x: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let xs: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let target = (seed % 3) as usize;
        let forward = |sess: &mut Session| {
            let xin = sess.tape.constant(vec![1, 4], x.clone())?;
            let logits = mlp.forward(sess, xin)?;
            let ce = loss::cross_entropy(&mut sess.tape, logits, target)?;
            let h = sess.tape.constant(vec![1, 4], vec![0.0; 4])?;
            let c = sess.tape.constant(vec![1, 4], vec![0.0; 4])?;
            let xt = sess.tape.constant(vec![1, 3], xs.clone())?;
            let (h1, _) = lstm.forward(sess, xt, h, c)?;
            let h2 = gru.forward(sess, xt, h1)?;
            let sq = sess.tape.mul(h2, h2)?;
            let s = sess.tape.sum(sq)?;
            sess.tape.add(ce, s)
        };
        params.zero_grads();
        accumulate_loss_grads(&mut params, forward).unwrap();
        let mut analytic = std::collections::BTreeMap::new();
        for (n, t) in params.iter() {
            if let Some(g) = &t.grad {
                analytic.insert(n.clone(), g.clone());
            }
        }
        let numeric = fd::finite_difference(&params, 1e-5, |p| {
            let mut sess = Session::new(p);
            let l = forward(&mut sess)?;
            Ok(sess.tape.value(l))
        })
        .unwrap();
        let err = fd::max_rel_error(&analytic, &numeric);
        assert!(err < TOL, "seed {seed}: gradient error {err:.3e}");
    }
    assert!(started.elapsed().as_secs() < 60, "gradient suite exceeded one minute");
    pass(1, "gradient suite");
}

/// Criterion 2: probability-fusion properties and the hand-computed case.
#[test]
fn criterion_02_fusion_suite() {
    const HAND_TOL: f64 = 1e-4;
    const NORM_TOL: f64 = 1e-9;
    // uniform prior is the identity
    let uniform = vec![0.25; 4];
    let obs = vec![0.1, 0.2, 0.3, 0.4];
    let fused = fuse_room_probs(&uniform, &obs).unwrap();
    for (a, b) in fused.iter().zip(&obs) {
        assert!((a - b).abs() < 1e-12);
    }
    // one-hot is a fixed point
    let onehot = vec![0.0, 1.0, 0.0];
    let fused = fuse_room_probs(&onehot, &[0.2, 0.5, 0.3]).unwrap();
    assert_eq!(fused, vec![0.0, 1.0, 0.0]);
    // normalization
    let fused = fuse_room_probs(&[0.6, 0.4], &[0.3, 0.7]).unwrap();
    assert!((fused.iter().sum::<f64>() - 1.0).abs() < NORM_TOL);
    // commutativity
    let ab = fuse_room_probs(&[0.6, 0.4], &[0.3, 0.7]).unwrap();
    let ba = fuse_room_probs(&[0.3, 0.7], &[0.6, 0.4]).unwrap();
    for (x, y) in ab.iter().zip(&ba) {
        assert!((x - y).abs() < 1e-12);
    }
    // hand case: [0.8, 0.2] fused with itself
    let hand = fuse_room_probs(&[0.8, 0.2], &[0.8, 0.2]).unwrap();
    assert!((hand[0] - 0.9412).abs() < HAND_TOL, "got {:?}", hand);
    assert!((hand[1] - 0.0588).abs() < HAND_TOL);
    pass(2, "fusion suite");
}

/// Criterion 3: a 100-step cyclic walk through 6 true rooms with a perfect
/// localizer creates exactly 6 room nodes.
#[test]
fn criterion_03_no_infinite_chain() {
    let mut g = RoomGraph {
        id: "cycle".into(),
        rooms: (0..6)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 6.0;
                tnav::worldgen::Room {
                    id: i,
                    class: tnav::worldgen::RoomClass(i % 5),
                    pos: [8.0 * a.cos(), 8.0 * a.sin(), 0.0],
                }
            })
            .collect(),
        edges: Default::default(),
    };
    for i in 0..6 {
        g.add_edge(i, (i + 1) % 6).unwrap();
    }
    let observer = Observer::new(ObserverConfig { perfect: true, ..Default::default() }).unwrap();
    let localizer = PerfectLocalizer::from_env(&g);
    let mut sg = SceneGraph::new("cycle");
    let mut r = rng::derive(3, "walk");
    let mut prev = None;
    for step in 0..100 {
        let obs = observer.observe(&g, step % 6, &mut r);
        let (cam, _) = sg.observe(obs, prev, &localizer).unwrap();
        prev = Some(cam);
    }
    assert_eq!(sg.rooms.len(), 6, "expected 6 room nodes, got {}", sg.rooms.len());
    assert_eq!(sg.cameras.len(), 100);
    pass(3, "no infinite chain");
}

fn corpus_node_edge_metrics(
    model: &CggnModel,
    corpus: &[CggnSample],
    seed: u64,
) -> (f64, f64) {
    let mut r = rng::derive(seed, "corpus-eval");
    let (mut node_hits, mut node_total) = (0usize, 0usize);
    let (mut tp, mut pos) = (0usize, 0usize);
    for s in corpus {
        let pred = model
            .generate_trajectory(&CggnInput::from_sample(s), 100, &mut r)
            .unwrap();
        for t in 0..s.valid_count {
            node_total += 1;
            let best = pred.node_probs[t]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if best == s.target_classes[t] {
                node_hits += 1;
            }
            for (j, &truth) in s.target_edge_rows[t].iter().enumerate() {
                if truth {
                    pos += 1;
                    if pred.sampled_adjacency[t][j] {
                        tp += 1;
                    }
                }
            }
        }
    }
    (
        node_hits as f64 / node_total as f64,
        tp as f64 / pos.max(1) as f64,
    )
}

/// Criterion 4: the trajectory model overfits a frozen 50-sample corpus to
/// >= 90% node top-1 and >= 90% edge recall within 2000 iterations and ten
/// minutes, and padded target nodes are masked out of the loss bit-exactly.
#[test]
fn criterion_04_cggn_overfit() {
    const NODE_T1: f64 = 0.90;
    const EDGE_RECALL: f64 = 0.90;
    const MAX_ITERS: usize = 2000;
    let started = Instant::now();
    let envs = gen_envs(4, "acc4", 5, &WorldgenParams::default());
    let cfg = CggnConfig::desk();
    let corpus = sample_corpus(&envs, 50, cfg.block, cfg.max_obs, 4);

    // loss masking: altering padded targets never changes the loss value
    let padded = corpus.iter().find(|s| s.valid_count < cfg.block).unwrap();
    let mut r = rng::derive(4, "mask");
    let probe = CggnModel::init(cfg.clone(), &mut r).unwrap();
    let (e0, n0) = probe.losses(padded).unwrap();
    let mut tampered = padded.clone();
    for t in tampered.valid_count..cfg.block {
        tampered.target_classes[t] = (tampered.target_classes[t] + 7) % 30;
        for b in tampered.target_edge_rows[t].iter_mut() {
            *b = !*b;
        }
    }
    let (e1, n1) = probe.losses(&tampered).unwrap();
    assert!(e0 == e1 && n0 == n1, "padded targets leaked into the loss");

    let mut r = rng::derive(4, "train");
    let mut model = CggnModel::init(cfg.clone(), &mut r).unwrap();
    let mut adam = AdamState::new(model.cfg.lr);
    use rand::seq::SliceRandom as _;
    let mut iters = 0;
    let (mut t1, mut recall) = (0.0, 0.0);
    while iters < MAX_ITERS {
        for _ in 0..100 {
            let batch: Vec<CggnSample> = corpus
                .choose_multiple(&mut r, cfg.batch_size.min(corpus.len()))
                .cloned()
                .collect();
            model.train_step(&batch, &mut adam).unwrap();
            iters += 1;
        }
        let m = corpus_node_edge_metrics(&model, &corpus, 4);
        t1 = m.0;
        recall = m.1;
        if t1 >= NODE_T1 && recall >= EDGE_RECALL {
            break;
        }
    }
    assert!(
        t1 >= NODE_T1 && recall >= EDGE_RECALL,
        "after {iters} iterations: node top-1 {t1:.3}, edge recall {recall:.3}"
    );
    assert!(started.elapsed().as_secs() < 600, "overfit exceeded ten minutes");
    pass(4, "trajectory-model overfit");
}

/// Criterion 5: on held-out environments the trajectory model's node top-5
/// is at least twice chance (2 x 5/30) within the 10,000-iteration budget.
#[test]
fn criterion_05_cggn_generalization() {
    const TOP5_FLOOR: f64 = 2.0 * 5.0 / 30.0;
    const MAX_ITERS: usize = 10_000;
    let train_envs = gen_envs(5, "acc5_train", 20, &WorldgenParams::default());
    let test_envs = gen_envs(5, "acc5_test", 6, &WorldgenParams::default());
    let cfg = CggnConfig::desk();
    let train = sample_corpus(&train_envs, 400, cfg.block, cfg.max_obs, 5);
    let held = sample_corpus(&test_envs, 80, cfg.block, cfg.max_obs, 55);
    let samples: Vec<(&RoomGraph, CggnSample)> = held
        .into_iter()
        .map(|s| (test_envs.iter().find(|g| g.id == s.env_id).unwrap(), s))
        .collect();

    let mut r = rng::derive(5, "train");
    let mut model = CggnModel::init(cfg.clone(), &mut r).unwrap();
    let mut adam = AdamState::new(model.cfg.lr);
    use rand::seq::SliceRandom as _;
    let mut iters = 0;
    let mut top5 = 0.0;
    while iters < MAX_ITERS {
        for _ in 0..250 {
            let batch: Vec<CggnSample> = train
                .choose_multiple(&mut r, cfg.batch_size.min(train.len()))
                .cloned()
                .collect();
            model.train_step(&batch, &mut adam).unwrap();
            iters += 1;
        }
        let mut er = rng::derive(5, "eval");
        let m = eval_graph_prediction(&model, &samples, 30, &mut er).unwrap();
        top5 = m.node_top5;
        if top5 >= TOP5_FLOOR {
            break;
        }
    }
    assert!(
        top5 >= TOP5_FLOOR,
        "held-out node top-5 {top5:.3} below {TOP5_FLOOR:.3} after {iters} iterations"
    );
    pass(5, "trajectory-model generalization");
}

/// Criterion 6: mode-of-100 sampling matches rounding for saturated edge
/// probabilities on >= 99 of 100 fixed-seed trials, and the single-component
/// mixture NLL reduces to a sum of binary cross-entropies.
#[test]
fn criterion_06_mode_sampling_and_reduction() {
    const REDUCTION_TOL: f64 = 1e-9;
    let theta = vec![vec![0.99, 0.01, 0.99, 0.01]];
    let alpha = vec![1.0];
    let mut matches = 0;
    for trial in 0..100u64 {
        let mut r = rng::derive(trial, "acc6-mode");
        let mode = sample_mode(&alpha, &theta, 100, &mut r).unwrap();
        if mode == vec![true, false, true, false] {
            matches += 1;
        }
    }
    assert!(matches >= 99, "mode matched rounding on only {matches}/100 trials");

    // K = 1 mixture NLL == sum of BCEs
    let labels = [true, false, true, true];
    let th = [0.7, 0.3, 0.9, 0.2];
    let mut tape = tnav::numerics::Tape::new();
    let a = tape.constant_vec(vec![1.0]).unwrap();
    let t = tape.constant(vec![1, 4], th.to_vec()).unwrap();
    let nll = loss::mixture_bernoulli_nll(&mut tape, a, t, &labels).unwrap();
    let expected: f64 = labels
        .iter()
        .zip(&th)
        .map(|(&l, &p)| if l { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    assert!((tape.value(nll) - expected).abs() < REDUCTION_TOL);
    pass(6, "mode sampling and mixture reduction");
}

/// Criterion 7: the hard gate properties hold on every evaluation trace:
/// (a) no move to a visited neighbor while an unvisited one exists (M),
/// (b) no stop while the goal is outside the perception top-k (P, perfect
/// perception), (c) M-gated episodes terminate within the DFS bound.
/// evaluate_agent re-checks all three on every trace and fails loudly.
#[test]
fn criterion_07_hard_gates() {
    let envs = gen_envs(7, "acc7", 6, &WorldgenParams::default());
    let observer = Observer::new(ObserverConfig { perfect: true, ..Default::default() }).unwrap();
    let refs: Vec<&RoomGraph> = envs.iter().collect();
    let mut r = rng::derive(7, "tasks");
    let pairs = sample_nav_pairs(&refs, 200, &mut r).unwrap();
    let tasks: Vec<(&RoomGraph, NavPair)> = pairs
        .into_iter()
        .map(|p| (envs.iter().find(|g| g.id == p.env_id).unwrap(), p))
        .collect();
    let setup = AgentSetup {
        policy: None,
        use_graph: false,
        informed: InformedConfig {
            use_perception_gate: true,
            use_map: true,
            max_steps: 120,
            ..Default::default()
        },
        observer: &observer,
        cggn: None,
    };
    let mut r = rng::derive(7, "episodes");
    let (results, episodes) = evaluate_agent(&setup, &tasks, &mut r).unwrap();
    assert_eq!(results.len(), 200);
    // with a generous step budget, perfect perception, and the map gate,
    // every episode must stop (goal found or graph exhausted)
    let stopped = episodes.iter().filter(|e| e.stopped).count();
    assert_eq!(stopped, 200, "only {stopped}/200 episodes terminated");
    pass(7, "hard navigation gates");
}

/// Criterion 8: SR ordering on test-unseen episodes, averaged over three
/// training seeds: RANDOM < Baseline < Full [G,P,M] <= Full with perfect
/// perception, with at least two percentage points between the strict pairs.
#[test]
fn criterion_08_ordering_reproduction() {
    const MIN_GAP: f64 = 0.02;
    const EPISODES: usize = 500;
    const SEEDS: usize = 3;
    const TRAIN_EPISODES: usize = 700;
    let started = Instant::now();
    let params = WorldgenParams { n_rooms_min: 5, n_rooms_max: 8, ..Default::default() };
    let train_envs = gen_envs(8, "acc8_train", 10, &params);
    let test_envs = gen_envs(8, "acc8_test", 24, &params);
    let observer = Observer::new(ObserverConfig::default()).unwrap();
    let perfect = Observer::new(ObserverConfig { perfect: true, ..Default::default() }).unwrap();

    // subgoal model shared by the full policies
    let cggn_cfg = CggnConfig::desk();
    let cggn_corpus = sample_corpus(&train_envs, 60, cggn_cfg.block, cggn_cfg.max_obs, 8);
    let mut r = rng::derive(8, "cggn");
    let mut cggn = CggnModel::init(cggn_cfg.clone(), &mut r).unwrap();
    let mut adam = AdamState::new(cggn.cfg.lr);
    use rand::seq::SliceRandom as _;
    for _ in 0..400 {
        let batch: Vec<CggnSample> = cggn_corpus
            .choose_multiple(&mut r, cggn.cfg.batch_size.min(cggn_corpus.len()))
            .cloned()
            .collect();
        cggn.train_step(&batch, &mut adam).unwrap();
    }

    let refs: Vec<&RoomGraph> = train_envs.iter().collect();
    let mut r = rng::derive(8, "train-tasks");
    let train_pairs = sample_nav_pairs(&refs, 150, &mut r).unwrap();
    let grouped: Vec<(&RoomGraph, Vec<NavPair>)> = train_envs
        .iter()
        .map(|g| {
            (g, train_pairs.iter().filter(|p| p.env_id == g.id).cloned().collect::<Vec<_>>())
        })
        .filter(|(_, p): &(_, Vec<NavPair>)| !p.is_empty())
        .collect();

    let test_refs: Vec<&RoomGraph> = test_envs.iter().collect();
    let mut r = rng::derive(8, "eval-tasks");
    let eval_pairs = sample_nav_pairs(&test_refs, EPISODES, &mut r).unwrap();
    let tasks: Vec<(&RoomGraph, NavPair)> = eval_pairs
        .into_iter()
        .map(|p| (test_envs.iter().find(|g| g.id == p.env_id).unwrap(), p))
        .collect();

    let full_gates = InformedConfig {
        use_subgoal: true,
        use_perception_gate: true,
        use_map: true,
        ..Default::default()
    };
    let mut sr = [0.0f64; 4]; // RANDOM, Baseline, Full, Full+P*
    // RANDOM needs no training and no seeds
    {
        let setup = AgentSetup {
            policy: None,
            use_graph: false,
            informed: InformedConfig::default(),
            observer: &observer,
            cggn: None,
        };
        let mut r = rng::derive(8, "eval-random");
        let (results, _) = evaluate_agent(&setup, &tasks, &mut r).unwrap();
        sr[0] = summarize(&results).unwrap().sr;
    }
    for seed in 0..SEEDS {
        let mut r = rng::derive_indexed(8, "baseline", seed as u64);
        let mut baseline = PolicyModel::init(PolicyConfig::desk(), &mut r);
        train_student_forcing(
            &mut baseline,
            &grouped,
            false,
            &InformedConfig::default(),
            &observer,
            None,
            TRAIN_EPISODES,
            &mut r,
        )
        .unwrap();
        let mut r = rng::derive_indexed(8, "full", seed as u64);
        let mut full = PolicyModel::init(PolicyConfig::desk(), &mut r);
        train_student_forcing(
            &mut full,
            &grouped,
            true,
            &InformedConfig { use_subgoal: true, ..Default::default() },
            &observer,
            Some(&cggn),
            TRAIN_EPISODES,
            &mut r,
        )
        .unwrap();

        let variants: [(usize, &PolicyModel, bool, &InformedConfig, &Observer); 3] = [
            (1, &baseline, false, &InformedConfig::default(), &observer),
            (2, &full, true, &full_gates, &observer),
            (3, &full, true, &full_gates, &perfect),
        ];
        for (slot, model, use_graph, informed, obs) in variants {
            let setup = AgentSetup {
                policy: Some(model),
                use_graph,
                informed: informed.clone(),
                observer: obs,
                cggn: informed.use_subgoal.then_some(&cggn),
            };
            let mut r = rng::derive_indexed(8, "eval-variant", (seed * 4 + slot) as u64);
            let (results, _) = evaluate_agent(&setup, &tasks, &mut r).unwrap();
            sr[slot] += summarize(&results).unwrap().sr / SEEDS as f64;
        }
    }
    println!(
        "SR: RANDOM {:.3} | Baseline {:.3} | Full {:.3} | Full P* {:.3}",
        sr[0], sr[1], sr[2], sr[3]
    );
    assert!(sr[1] - sr[0] >= MIN_GAP, "Baseline does not beat RANDOM by 2pp");
    assert!(sr[2] - sr[1] >= MIN_GAP, "Full does not beat Baseline by 2pp");
    assert!(sr[3] >= sr[2], "perfect perception must not hurt the full agent");
    assert!(started.elapsed().as_secs() < 7200, "ordering run exceeded two hours");
    pass(8, "SR ordering reproduction");
}

/// Criterion 9: metric hand cases and report invariants.
#[test]
fn criterion_09_metric_correctness() {
    let r = |success, l_s, l| EpisodeResult {
        success,
        l_s,
        l,
        oracle_hit: success,
        trajectory: vec![0; l + 1],
    };
    assert_eq!(spl(&[r(true, 3, 3)]).unwrap(), 1.0);
    assert_eq!(spl(&[r(true, 3, 5)]).unwrap(), 0.6);
    assert_eq!(spl(&[r(false, 0, 4)]).unwrap(), 0.0);
    let report = summarize(&[r(true, 3, 5), r(false, 0, 2), r(true, 2, 2)]).unwrap();
    assert!(report.spl <= report.sr);
    assert!(report.osr >= report.sr);
    // 99/1 class skew with a majority predictor averages to exactly 0.5
    let mut preds = vec![vec![1.0, 0.0]; 99];
    let mut labels = vec![0usize; 99];
    preds.push(vec![1.0, 0.0]);
    labels.push(1);
    assert_eq!(per_class_topk(&preds, &labels, 1).unwrap(), 0.5);
    pass(9, "metric correctness");
}

/// Criterion 10: the full pipeline under one seed produces byte-identical
/// metric JSON on a second run.
#[test]
fn criterion_10_determinism() {
    use tnav::cli::{cmd_eval_cggn, cmd_gen_envs, cmd_train_cggn, RunConfig, Workspace};
    let mut cfg = RunConfig::default();
    cfg.seed = 10;
    cfg.n_envs = 8;
    cfg.split = [4.0, 2.0, 2.0];
    cfg.data.cggn_samples = 12;
    cfg.eval.cggn_samples = 6;
    cfg.eval.n_draws = 20;
    let mut reports = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path(), &cfg.paths).unwrap();
        cmd_gen_envs(&cfg, &ws).unwrap();
        cmd_train_cggn(&cfg, &ws, Some(30)).unwrap();
        cmd_eval_cggn(&cfg, &ws).unwrap();
        reports.push(std::fs::read(ws.reports.join("cggn_eval.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1], "metric JSON differs between identical runs");
    pass(10, "end-to-end determinism");
}
