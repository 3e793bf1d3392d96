//! Train the conditional trajectory-graph generator on a small corpus and
//! sample a predicted path suffix: class distributions for up to five new
//! nodes, mode-of-samples adjacency, and the subgoal distribution.
//!
//! Run with: cargo run --release --example predict_trajectory

use tnav::cggn::{CggnConfig, CggnInput, CggnModel};
use tnav::numerics::AdamState;
use tnav::rng;
use tnav::worldgen::{
    generate_environment, sample_cggn_example, CggnSample, WorldgenParams, ROOM_CLASS_NAMES,
};

fn main() -> tnav::Result<()> {
    let seed = 3;
    let params = WorldgenParams::default();
    let mut envs = Vec::new();
    for i in 0..8 {
        let mut r = rng::derive_indexed(seed, "worldgen", i);
        envs.push(generate_environment(&format!("env_{i}"), &mut r, &params)?);
    }

    let cfg = CggnConfig::desk();
    let mut r = rng::derive(seed, "data");
    let mut corpus: Vec<CggnSample> = Vec::new();
    while corpus.len() < 60 {
        use rand::Rng as _;
        let g = &envs[r.gen_range(0..envs.len())];
        if let Ok(s) = sample_cggn_example(g, &mut r, 7, cfg.block) {
            if s.obs_len() <= cfg.max_obs {
                corpus.push(s);
            }
        }
    }
    println!("sampled {} trajectory examples", corpus.len());

    let mut r = rng::derive(seed, "train");
    let mut model = CggnModel::init(cfg, &mut r)?;
    let mut adam = AdamState::new(model.cfg.lr);
    use rand::seq::SliceRandom as _;
    for it in 0..600 {
        let batch: Vec<CggnSample> =
            corpus.choose_multiple(&mut r, model.cfg.batch_size.min(corpus.len())).cloned().collect();
        let (edge_nll, node_ce) = model.train_step(&batch, &mut adam)?;
        if it % 100 == 0 {
            println!("iter {it:>4}: edge nll {edge_nll:.4}, node ce {node_ce:.4}");
        }
    }

    // predict the continuation of a held-back observation prefix
    let sample = &corpus[0];
    let g = envs.iter().find(|g| g.id == sample.env_id).unwrap();
    println!(
        "\nobserved rooms {:?} heading for a {}",
        sample.obs_rooms, ROOM_CLASS_NAMES[sample.destination]
    );
    println!(
        "ground-truth continuation: {:?}",
        &sample.target_rooms[..sample.valid_count]
    );

    let mut r = rng::derive(seed, "sample");
    let pred = model.generate_trajectory(&CggnInput::from_sample(sample), 100, &mut r)?;
    for (t, probs) in pred.node_probs.iter().enumerate() {
        let best = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let truth = if t < sample.valid_count {
            ROOM_CLASS_NAMES[g.class_of(sample.target_rooms[t]).0]
        } else {
            "(padding)"
        };
        println!(
            "node {t}: predicted {:<12} p={:.3}  truth {truth}",
            ROOM_CLASS_NAMES[best.0], best.1
        );
        println!("         edges to earlier nodes: {:?}", pred.sampled_adjacency[t]);
    }
    println!("nodes kept by the edge sampler: {:?}", pred.active_nodes());

    let sub_best = pred
        .subgoal
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    println!(
        "subgoal (first predicted node): {} p={:.3}",
        ROOM_CLASS_NAMES[sub_best.0], sub_best.1
    );
    Ok(())
}
