//! A miniature ablation table: RANDOM vs Baseline vs the graph policy with
//! each informed mechanism (subgoal G, perception gate P, map M) toggled,
//! plus the extended step budget and perfect-perception variants.
//!
//! Run with: cargo run --release --example ablation
//! (takes a few minutes: trains two policies and a trajectory model)

use tnav::agents::{train_student_forcing, InformedConfig, PolicyConfig, PolicyModel};
use tnav::cggn::{CggnConfig, CggnModel};
use tnav::eval::{run_ablation, AblationContext};
use tnav::numerics::AdamState;
use tnav::perception::{Observer, ObserverConfig};
use tnav::rng;
use tnav::worldgen::{
    generate_environment, sample_cggn_example, sample_nav_pairs, CggnSample, NavPair, RoomGraph,
    WorldgenParams,
};

fn main() -> tnav::Result<()> {
    let seed = 101;
    let params = WorldgenParams { n_rooms_min: 5, n_rooms_max: 8, ..Default::default() };
    let mut train_envs = Vec::new();
    let mut test_envs = Vec::new();
    for i in 0..6 {
        let mut r = rng::derive_indexed(seed, "train-env", i);
        train_envs.push(generate_environment(&format!("train_{i}"), &mut r, &params)?);
    }
    for i in 0..3 {
        let mut r = rng::derive_indexed(seed, "test-env", i);
        test_envs.push(generate_environment(&format!("test_{i}"), &mut r, &params)?);
    }

    let observer = Observer::new(ObserverConfig::default())?;
    let perfect = Observer::new(ObserverConfig { perfect: true, ..Default::default() })?;

    // trajectory model for the subgoal mechanism
    let cfg = CggnConfig::desk();
    let mut r = rng::derive(seed, "cggn-data");
    let mut corpus: Vec<CggnSample> = Vec::new();
    while corpus.len() < 60 {
        use rand::Rng as _;
        let g = &train_envs[r.gen_range(0..train_envs.len())];
        if let Ok(s) = sample_cggn_example(g, &mut r, 7, cfg.block) {
            if s.obs_len() <= cfg.max_obs {
                corpus.push(s);
            }
        }
    }
    let mut cggn = CggnModel::init(cfg, &mut r)?;
    let mut adam = AdamState::new(cggn.cfg.lr);
    use rand::seq::SliceRandom as _;
    for _ in 0..400 {
        let batch: Vec<CggnSample> =
            corpus.choose_multiple(&mut r, cggn.cfg.batch_size.min(corpus.len())).cloned().collect();
        cggn.train_step(&batch, &mut adam)?;
    }
    println!("trajectory model trained");

    let refs: Vec<&RoomGraph> = train_envs.iter().collect();
    let mut r = rng::derive(seed, "tasks");
    let pairs = sample_nav_pairs(&refs, 60, &mut r)?;
    let grouped: Vec<(&RoomGraph, Vec<NavPair>)> = train_envs
        .iter()
        .map(|g| (g, pairs.iter().filter(|p| p.env_id == g.id).cloned().collect::<Vec<_>>()))
        .filter(|(_, p): &(_, Vec<NavPair>)| !p.is_empty())
        .collect();

    let episodes = 700;
    let mut r = rng::derive(seed, "baseline");
    let mut baseline = PolicyModel::init(PolicyConfig::desk(), &mut r);
    train_student_forcing(
        &mut baseline, &grouped, false, &InformedConfig::default(), &observer, None, episodes, &mut r,
    )?;
    println!("baseline policy trained");

    let mut r = rng::derive(seed, "full");
    let mut full = PolicyModel::init(PolicyConfig::desk(), &mut r);
    train_student_forcing(
        &mut full,
        &grouped,
        true,
        &InformedConfig { use_subgoal: true, ..Default::default() },
        &observer,
        Some(&cggn),
        episodes,
        &mut r,
    )?;
    println!("full policy trained\n");

    let test_refs: Vec<&RoomGraph> = test_envs.iter().collect();
    let mut r = rng::derive(seed, "eval-tasks");
    let eval_pairs = sample_nav_pairs(&test_refs, 60, &mut r)?;
    let tasks: Vec<(&RoomGraph, NavPair)> = eval_pairs
        .into_iter()
        .map(|p| (test_envs.iter().find(|g| g.id == p.env_id).unwrap(), p))
        .collect();

    let baselines = [baseline];
    let fulls = [full];
    let ctx = AblationContext {
        baseline: &baselines,
        full: &fulls,
        cggn: &cggn,
        observer: &observer,
        perfect_observer: &perfect,
        max_steps: 15,
    };
    let mut r = rng::derive(seed, "episodes");
    let table = run_ablation(&ctx, &tasks, &mut r)?;

    println!("{:<18} {:>6} {:>6} {:>6} {:>6}", "variant", "SR", "SPL", "OSR", "N");
    for row in &table.rows {
        println!(
            "{:<18} {:>6.3} {:>6.3} {:>6.3} {:>6}",
            row.label, row.report.sr, row.report.spl, row.report.osr, row.report.n
        );
    }
    Ok(())
}
