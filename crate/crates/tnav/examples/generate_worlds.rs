//! Generate a batch of synthetic buildings and inspect their structure:
//! room counts, class skew, connectivity, and the train/val/test split.
//!
//! Run with: cargo run --release --example generate_worlds

use tnav::rng;
use tnav::worldgen::{
    generate_environment, split_environments, RoomGraph, WorldgenParams, ROOM_CLASS_NAMES,
};

fn main() -> tnav::Result<()> {
    let params = WorldgenParams::default();
    let seed = 42;

    let mut envs: Vec<RoomGraph> = Vec::new();
    for i in 0..30 {
        let id = format!("env_{i:03}");
        let mut r = rng::derive_indexed(seed, "worldgen", i);
        envs.push(generate_environment(&id, &mut r, &params)?);
    }

    let mut class_counts = [0usize; 30];
    let (mut rooms, mut edges) = (0usize, 0usize);
    for g in &envs {
        rooms += g.n_rooms();
        edges += g.edges.len();
        for room in &g.rooms {
            class_counts[room.class.0] += 1;
        }
    }
    println!("{} buildings, {rooms} rooms, {edges} edges", envs.len());
    println!("average degree: {:.2}", 2.0 * edges as f64 / rooms as f64);

    println!("\nmost common room classes:");
    let mut order: Vec<usize> = (0..30).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(class_counts[c]));
    for &c in order.iter().take(8) {
        println!("  {:<16} {:>4}", ROOM_CLASS_NAMES[c], class_counts[c]);
    }

    let g = &envs[0];
    println!("\n{}: {} rooms", g.id, g.n_rooms());
    for room in &g.rooms {
        let nbrs = g.neighbors(room.id);
        println!(
            "  room {:>2} [{:<12}] at ({:>5.1}, {:>5.1}) -> {:?}",
            room.id,
            ROOM_CLASS_NAMES[room.class.0],
            room.pos[0],
            room.pos[1],
            nbrs
        );
    }

    let ids: Vec<String> = envs.iter().map(|g| g.id.clone()).collect();
    let mut r = rng::derive(seed, "split");
    let splits = split_environments(&ids, (0.68, 0.12, 0.20), &mut r)?;
    println!(
        "\nsplit: {} train / {} val / {} test",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    Ok(())
}
