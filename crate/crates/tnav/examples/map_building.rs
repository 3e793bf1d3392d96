//! Build a multi-level scene graph incrementally from noisy observations:
//! train a same-room localizer on observation pairs, then walk a building
//! and watch camera nodes coalesce into room nodes.
//!
//! Run with: cargo run --release --example map_building

use tnav::mapping::SceneGraph;
use tnav::perception::{make_pair_dataset, train_localizer, LocalizerConfig, Observer, ObserverConfig};
use tnav::rng;
use tnav::worldgen::{generate_environment, WorldgenParams, ROOM_CLASS_NAMES};

fn main() -> tnav::Result<()> {
    let seed = 7;
    let params = WorldgenParams::default();
    let mut r = rng::derive(seed, "worldgen");
    let g = generate_environment("demo", &mut r, &params)?;
    println!("building with {} rooms, {} doors", g.n_rooms(), g.edges.len());

    let observer = Observer::new(ObserverConfig::default())?;

    // train the pair scorer on a handful of sibling buildings
    let mut train_envs = Vec::new();
    for i in 0..6 {
        let mut r = rng::derive_indexed(seed, "train-env", i);
        train_envs.push(generate_environment(&format!("train_{i}"), &mut r, &params)?);
    }
    let refs: Vec<&_> = train_envs.iter().collect();
    let mut r = rng::derive(seed, "localizer");
    let pairs = make_pair_dataset(&refs, 2400, &observer, &mut r)?;
    let (localizer, acc) =
        train_localizer(&pairs, LocalizerConfig::default(), observer.cfg.feature_dim, &mut r)?;
    println!("localizer holdout accuracy: {acc:.3}");

    // walk the demo building depth-first, mapping as we go; the distance
    // prefilter keeps the scorer from being asked about far-apart cameras
    let mut sg = SceneGraph::new(&g.id);
    sg.max_pair_distance = Some(4.0);
    let mut r = rng::derive(seed, "walk");
    let walk = dfs_walk(&g);
    let mut prev_cam = None;
    for (t, &room) in walk.iter().enumerate() {
        let obs = observer.observe(&g, room, &mut r);
        let (cam, mapped) = sg.observe(obs, prev_cam, &localizer)?;
        prev_cam = Some(cam);
        if t < 8 || t == walk.len() - 1 {
            println!(
                "step {t:>2}: true room {room:>2} -> mapped room {mapped} ({} rooms so far)",
                sg.rooms.len()
            );
        }
    }

    println!(
        "\nwalked {} steps through {} true rooms; scene graph holds {} rooms, {} cameras, {} room edges",
        walk.len(),
        g.n_rooms(),
        sg.rooms.len(),
        sg.cameras.len(),
        sg.room_edges.len()
    );
    for (i, room) in sg.rooms.iter().enumerate() {
        let best = room
            .class_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        println!(
            "  mapped room {i}: {} cameras, fused belief {:<12} p={:.3}",
            room.cameras.len(),
            ROOM_CLASS_NAMES[best.0],
            best.1
        );
    }

    let obs_graph = sg.export_observation_graph()?;
    println!("\nexported observation graph: {} nodes", obs_graph.n_nodes());
    Ok(())
}

fn dfs_walk(g: &tnav::worldgen::RoomGraph) -> Vec<usize> {
    fn go(g: &tnav::worldgen::RoomGraph, at: usize, seen: &mut Vec<bool>, walk: &mut Vec<usize>) {
        seen[at] = true;
        walk.push(at);
        for n in g.neighbors(at) {
            if !seen[n] {
                go(g, n, seen, walk);
                walk.push(at);
            }
        }
    }
    let mut seen = vec![false; g.n_rooms()];
    let mut walk = Vec::new();
    go(g, 0, &mut seen, &mut walk);
    walk
}
