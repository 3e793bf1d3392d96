//! Train a navigation policy by student forcing on shortest-path teachers,
//! then run evaluation episodes with the informed gates switched on and
//! inspect a trace.
//!
//! Run with: cargo run --release --example navigate

use tnav::agents::{
    run_episode, train_student_forcing, AgentSetup, InformedConfig, PolicyConfig, PolicyModel,
};
use tnav::eval::{episode_result, summarize};
use tnav::perception::{Observer, ObserverConfig};
use tnav::rng;
use tnav::worldgen::{
    generate_environment, sample_nav_pairs, NavPair, RoomGraph, WorldgenParams, ROOM_CLASS_NAMES,
};

fn main() -> tnav::Result<()> {
    let seed = 29;
    let params = WorldgenParams { n_rooms_min: 5, n_rooms_max: 7, ..Default::default() };
    let mut envs: Vec<RoomGraph> = Vec::new();
    for i in 0..4 {
        let mut r = rng::derive_indexed(seed, "worldgen", i);
        envs.push(generate_environment(&format!("env_{i}"), &mut r, &params)?);
    }
    let observer = Observer::new(ObserverConfig::default())?;
    let informed = InformedConfig { use_map: true, use_perception_gate: true, ..Default::default() };

    let refs: Vec<&RoomGraph> = envs.iter().collect();
    let mut r = rng::derive(seed, "tasks");
    let pairs = sample_nav_pairs(&refs, 40, &mut r)?;
    let grouped: Vec<(&RoomGraph, Vec<NavPair>)> = envs
        .iter()
        .map(|g| (g, pairs.iter().filter(|p| p.env_id == g.id).cloned().collect::<Vec<_>>()))
        .filter(|(_, p): &(_, Vec<NavPair>)| !p.is_empty())
        .collect();

    let mut r = rng::derive(seed, "train");
    let mut model = PolicyModel::init(PolicyConfig::desk(), &mut r);
    let curve = train_student_forcing(
        &mut model, &grouped, true, &informed, &observer, None, 800, &mut r,
    )?;
    let early: f64 = curve[..50].iter().sum::<f64>() / 50.0;
    let late: f64 = curve[curve.len() - 50..].iter().sum::<f64>() / 50.0;
    println!("imitation loss: {early:.3} (first 50 episodes) -> {late:.3} (last 50)");

    // evaluate with the full gate stack
    let setup = AgentSetup {
        policy: Some(&model),
        use_graph: true,
        informed: informed.clone(),
        observer: &observer,
        cggn: None,
    };
    let mut r = rng::derive(seed, "eval");
    let eval_pairs = sample_nav_pairs(&refs, 60, &mut r)?;
    let mut results = Vec::new();
    let mut shown = false;
    for pair in &eval_pairs {
        let g = envs.iter().find(|g| g.id == pair.env_id).unwrap();
        let ep = run_episode(&setup, g, pair, &mut r)?;
        if !shown && ep.stopped {
            shown = true;
            println!(
                "\nsample episode in {}: start room {}, goal {}",
                pair.env_id, pair.start_room, ROOM_CLASS_NAMES[pair.goal_class.0]
            );
            for t in &ep.trace {
                println!(
                    "  step {}: at room {:>2}, candidates {:?}, chose {}{}",
                    t.step,
                    t.current_room,
                    t.candidates,
                    if t.chosen == 0 {
                        "Stop".to_string()
                    } else {
                        format!("-> room {}", t.candidates[t.chosen])
                    },
                    if t.mask_reasons.is_empty() {
                        String::new()
                    } else {
                        format!("  [{}]", t.mask_reasons.join(", "))
                    }
                );
            }
        }
        results.push(episode_result(&ep, g));
    }
    let report = summarize(&results)?;
    println!(
        "\nover {} episodes: SR {:.3}  SPL {:.3}  OSR {:.3}",
        report.n, report.sr, report.spl, report.osr
    );
    Ok(())
}
