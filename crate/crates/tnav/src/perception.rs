//! Simulated per-visit room observations and the pairwise same-room
//! localizer.
//!
//! The observer stands in for an image classifier: it emits a feature vector
//! (class embedding + per-room-instance offset + per-visit noise) and a
//! class-probability vector whose expected top-1 accuracy is calibrated to
//! `accuracy_knob`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::loss::bce_with_logit;
use crate::numerics::nn::Mlp;
use crate::numerics::tensor::gaussian;
use crate::numerics::{accumulate_loss_grads, fourier_encode, AdamState, ParamSet, Session};
use crate::rng;
use crate::worldgen::{RoomClass, RoomGraph, NUM_CLASSES};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Observation {
    pub position: [f64; 3],
    pub feature: Vec<f64>,
    pub class_probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverConfig {
    pub feature_dim: usize,
    pub sigma_room: f64,
    pub sigma_view: f64,
    /// Target expected top-1 accuracy of the emitted class probabilities.
    pub accuracy_knob: f64,
    /// Accuracy of door-frame glimpses into unvisited neighbor rooms.
    pub glimpse_knob: f64,
    /// Emit ground-truth one-hot class probabilities.
    pub perfect: bool,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        ObserverConfig {
            feature_dim: 64,
            sigma_room: 1.0,
            sigma_view: 0.3,
            accuracy_knob: 0.7,
            glimpse_knob: 0.45,
            perfect: false,
        }
    }
}

pub struct Observer {
    pub cfg: ObserverConfig,
    signal: f64,
    glimpse_signal: f64,
}

impl Observer {
    pub fn new(cfg: ObserverConfig) -> Result<Self> {
        if cfg.sigma_room < 0.0 || cfg.sigma_view < 0.0 {
            return Err(Error::InvalidArgument("observer sigmas must be >= 0".into()));
        }
        if !(cfg.accuracy_knob > 0.0 && cfg.accuracy_knob <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "accuracy_knob must lie in (0, 1], got {}",
                cfg.accuracy_knob
            )));
        }
        let signal = signal_for_accuracy(cfg.accuracy_knob);
        let glimpse_signal = signal_for_accuracy(cfg.glimpse_knob.clamp(1.0 / NUM_CLASSES as f64, 1.0));
        Ok(Observer { cfg, signal, glimpse_signal })
    }

    /// Full observation from inside a room.
    pub fn observe<R: Rng>(&self, g: &RoomGraph, room: usize, rng: &mut R) -> Observation {
        self.observe_with_signal(g, room, rng, self.signal)
    }

    /// Weaker glimpse of an adjacent, not-yet-visited room.
    pub fn glimpse<R: Rng>(&self, g: &RoomGraph, room: usize, rng: &mut R) -> Observation {
        self.observe_with_signal(g, room, rng, self.glimpse_signal)
    }

    fn observe_with_signal<R: Rng>(
        &self,
        g: &RoomGraph,
        room: usize,
        rng: &mut R,
        signal: f64,
    ) -> Observation {
        let class = g.class_of(room);
        let d = self.cfg.feature_dim;

        let mut feature = class_embedding(class, d);
        let mut inst = rng::derive_indexed(env_key(&g.id), "room_offset", room as u64);
        for f in feature.iter_mut() {
            *f += self.cfg.sigma_room * gaussian(&mut inst);
        }
        for f in feature.iter_mut() {
            *f += self.cfg.sigma_view * gaussian(rng);
        }

        // camera pose: uniform within a 1 m disc around the room centroid
        let c = g.rooms[room].pos;
        let (dx, dy) = loop {
            let x = rng.gen_range(-1.0..1.0);
            let y = rng.gen_range(-1.0..1.0);
            if x * x + y * y <= 1.0 {
                break (x, y);
            }
        };
        let position = [c[0] + dx, c[1] + dy, c[2]];

        let class_probs = if self.cfg.perfect {
            class.one_hot()
        } else {
            let mut scores = vec![0.0; NUM_CLASSES];
            for s in scores.iter_mut() {
                *s = gaussian(rng);
            }
            scores[class.0] += signal;
            softmax(&scores)
        };
        Observation { position, feature, class_probs }
    }
}

fn env_key(env_id: &str) -> u64 {
    rng::fnv1a(env_id.as_bytes())
}

/// Deterministic per-class feature embedding (independent of the run seed).
fn class_embedding(class: RoomClass, dim: usize) -> Vec<f64> {
    let mut r = rng::derive_indexed(0x7e6_0b5e7, "class_embed", class.0 as u64);
    (0..dim).map(|_| gaussian(&mut r)).collect()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Invert the observation model's accuracy curve: find the signal strength
/// whose expected top-1 accuracy is `target`, by bisection over common random
/// numbers.
fn signal_for_accuracy(target: f64) -> f64 {
    let chance = 1.0 / NUM_CLASSES as f64;
    if target <= chance {
        return 0.0;
    }
    if target >= 0.999 {
        return 50.0;
    }
    // frozen noise draws shared across all candidate signals
    let n = 6000;
    let mut r = rng::derive(0x5169_4a1, "observer_calibration");
    let noise: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..NUM_CLASSES).map(|_| gaussian(&mut r)).collect())
        .collect();
    let acc = |c: f64| -> f64 {
        let hits = noise
            .iter()
            .filter(|row| {
                let own = c + row[0];
                row[1..].iter().all(|&v| v < own)
            })
            .count();
        hits as f64 / n as f64
    };
    let (mut lo, mut hi) = (0.0, 50.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if acc(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A labeled same-room / different-room observation pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairExample {
    pub a: Observation,
    pub b: Observation,
    pub same_room: bool,
}

/// Balanced positive/negative pair dataset over the given environments.
pub fn make_pair_dataset<R: Rng>(
    envs: &[&RoomGraph],
    n_pairs: usize,
    observer: &Observer,
    rng: &mut R,
) -> Result<Vec<PairExample>> {
    let multi: Vec<&RoomGraph> = envs.iter().copied().filter(|g| g.n_rooms() >= 2).collect();
    if multi.is_empty() {
        return Err(Error::Dataset("need at least one environment with >= 2 rooms".into()));
    }
    let mut out = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let g = multi[rng.gen_range(0..multi.len())];
        let positive = i % 2 == 0;
        let (ra, rb) = if positive {
            let r = rng.gen_range(0..g.n_rooms());
            (r, r)
        } else {
            let a = rng.gen_range(0..g.n_rooms());
            let b = loop {
                let b = rng.gen_range(0..g.n_rooms());
                if b != a {
                    break b;
                }
            };
            (a, b)
        };
        out.push(PairExample {
            a: observer.observe(g, ra, rng),
            b: observer.observe(g, rb, rng),
            same_room: positive,
        });
    }
    out.shuffle(rng);
    Ok(out)
}

/// How camera poses enter the localizer input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseEncoding {
    /// Features only.
    NoPose,
    /// Raw xyz appended.
    Raw,
    /// Fourier encoding with the configured number of frequencies.
    Fourier,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizerConfig {
    pub pose_encoding: PoseEncoding,
    pub fourier_levels: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of the dataset held out for the returned accuracy.
    pub holdout: f64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        LocalizerConfig {
            pose_encoding: PoseEncoding::Fourier,
            fourier_levels: 5,
            hidden: vec![64, 32],
            lr: 1e-4,
            batch_size: 100,
            epochs: 12,
            holdout: 0.1,
        }
    }
}

/// Binary same-room classifier over observation pairs.
pub struct LocalizerModel {
    pub params: ParamSet,
    pub cfg: LocalizerConfig,
    pub feature_dim: usize,
    mlp: Mlp,
}

impl LocalizerModel {
    pub fn init<R: Rng>(cfg: LocalizerConfig, feature_dim: usize, rng: &mut R) -> Self {
        let side = side_dim(&cfg, feature_dim);
        let mut dims = vec![2 * side];
        dims.extend(&cfg.hidden);
        dims.push(1);
        let mlp = Mlp::new("localizer", &dims);
        let mut params = ParamSet::new();
        mlp.init(&mut params, rng);
        LocalizerModel { params, cfg, feature_dim, mlp }
    }

    /// Rebuild the view over an existing (e.g. checkpointed) parameter set.
    pub fn from_params(cfg: LocalizerConfig, feature_dim: usize, params: ParamSet) -> Self {
        let side = side_dim(&cfg, feature_dim);
        let mut dims = vec![2 * side];
        dims.extend(&cfg.hidden);
        dims.push(1);
        let mlp = Mlp::new("localizer", &dims);
        LocalizerModel { params, cfg, feature_dim, mlp }
    }

    fn input_vec(&self, a: &Observation, b: &Observation) -> Vec<f64> {
        // canonical ordering forces score(a, b) == score(b, a) bit-exactly
        let (x, y) = if pair_key(a) <= pair_key(b) { (a, b) } else { (b, a) };
        let mut v = Vec::new();
        for obs in [x, y] {
            match self.cfg.pose_encoding {
                PoseEncoding::NoPose => {}
                PoseEncoding::Raw => v.extend_from_slice(&obs.position),
                PoseEncoding::Fourier => {
                    v.extend(fourier_encode(&obs.position, self.cfg.fourier_levels))
                }
            }
            v.extend_from_slice(&obs.feature);
        }
        v
    }

    fn logit_value(&self, a: &Observation, b: &Observation) -> Result<f64> {
        let input = self.input_vec(a, b);
        let mut sess = Session::new(&self.params);
        let x = sess.tape.constant_vec(input)?;
        let out = self.mlp.forward(&mut sess, x)?;
        Ok(sess.tape.data(out)[0])
    }

    /// Same-room probability in (0, 1).
    pub fn score_pair(&self, a: &Observation, b: &Observation) -> Result<f64> {
        Ok(crate::numerics::tape::sigmoid_f(self.logit_value(a, b)?))
    }

    pub fn accuracy(&self, pairs: &[PairExample]) -> Result<f64> {
        let mut hits = 0usize;
        for p in pairs {
            let s = self.score_pair(&p.a, &p.b)?;
            if (s > 0.5) == p.same_room {
                hits += 1;
            }
        }
        Ok(hits as f64 / pairs.len().max(1) as f64)
    }
}

fn side_dim(cfg: &LocalizerConfig, feature_dim: usize) -> usize {
    feature_dim
        + match cfg.pose_encoding {
            PoseEncoding::NoPose => 0,
            PoseEncoding::Raw => 3,
            PoseEncoding::Fourier => 3 * (2 * cfg.fourier_levels + 1),
        }
}

fn pair_key(o: &Observation) -> (u64, u64, u64) {
    (
        o.position[0].to_bits(),
        o.position[1].to_bits(),
        o.position[2].to_bits(),
    )
}

/// Train the localizer with binary cross-entropy; returns the model and its
/// held-out accuracy.
pub fn train_localizer<R: Rng>(
    pairs: &[PairExample],
    cfg: LocalizerConfig,
    feature_dim: usize,
    rng: &mut R,
) -> Result<(LocalizerModel, f64)> {
    if pairs.len() < 4 {
        return Err(Error::Dataset("localizer needs at least 4 pairs".into()));
    }
    let n_hold = ((pairs.len() as f64 * cfg.holdout) as usize).max(1);
    let (hold, train) = pairs.split_at(n_hold);
    let mut model = LocalizerModel::init(cfg, feature_dim, rng);
    let mut adam = AdamState::new(model.cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..model.cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(model.cfg.batch_size) {
            model.params.zero_grads();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let p = &train[i];
                let input = model.input_vec(&p.a, &p.b);
                let label = p.same_room;
                let mlp = model.mlp.clone();
                let loss = accumulate_loss_grads(&mut model.params, |sess| {
                    let x = sess.tape.constant_vec(input)?;
                    let out = mlp.forward(sess, x)?;
                    let logit = sess.tape.select(out, 0)?;
                    let l = bce_with_logit(&mut sess.tape, logit, label)?;
                    sess.tape.scale(l, scale)
                })?;
                if !loss.is_finite() {
                    return Err(Error::Diverged("localizer loss is not finite".into()));
                }
            }
            adam.step(&mut model.params)?;
        }
    }
    let acc = model.accuracy(hold)?;
    Ok((model, acc))
}

/// Train a 30-way classifier head on observation features, used to exercise
/// the per-class metrics with either plain cross-entropy or focal loss.
pub fn train_class_head<R: Rng>(
    examples: &[(Vec<f64>, RoomClass)],
    feature_dim: usize,
    gamma: Option<f64>,
    epochs: usize,
    rng: &mut R,
) -> Result<ParamSet> {
    let mlp = Mlp::new("class_head", &[feature_dim, 64, NUM_CLASSES]);
    let mut params = ParamSet::new();
    mlp.init(&mut params, rng);
    let mut adam = AdamState::new(1e-3);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(32) {
            params.zero_grads();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (feat, class) = &examples[i];
                let feat = feat.clone();
                let target = class.0;
                let mlp = mlp.clone();
                accumulate_loss_grads(&mut params, |sess| {
                    let x = sess.tape.constant_vec(feat)?;
                    let logits = mlp.forward(sess, x)?;
                    let l = match gamma {
                        Some(gamma) => {
                            let probs = sess.tape.softmax(logits)?;
                            crate::numerics::loss::focal_loss(&mut sess.tape, probs, target, gamma)?
                        }
                        None => crate::numerics::loss::cross_entropy(&mut sess.tape, logits, target)?,
                    };
                    sess.tape.scale(l, scale)
                })?;
            }
            adam.step(&mut params)?;
        }
    }
    Ok(params)
}

/// Class probabilities from a trained head.
pub fn class_head_probs(params: &ParamSet, feature_dim: usize, feat: &[f64]) -> Result<Vec<f64>> {
    let mlp = Mlp::new("class_head", &[feature_dim, 64, NUM_CLASSES]);
    let mut sess = Session::new(params);
    let x = sess.tape.constant_vec(feat.to_vec())?;
    let logits = mlp.forward(&mut sess, x)?;
    let probs = sess.tape.softmax(logits)?;
    Ok(sess.tape.data(probs).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::{generate_environment, Room, WorldgenParams};
    use std::collections::BTreeSet;

    fn test_env(seed: u64) -> RoomGraph {
        let mut r = rng::derive(seed, "perception_test_env");
        generate_environment("env_test", &mut r, &WorldgenParams::default()).unwrap()
    }

    /// Two same-class rooms far apart: features alone cannot separate pairs.
    fn twin_room_env() -> RoomGraph {
        let mut g = RoomGraph {
            id: "twins".into(),
            rooms: vec![
                Room { id: 0, class: RoomClass(3), pos: [0.0, 0.0, 0.0] },
                Room { id: 1, class: RoomClass(3), pos: [8.0, 0.0, 0.0] },
            ],
            edges: BTreeSet::new(),
        };
        g.add_edge(0, 1).unwrap();
        g
    }

    #[test]
    fn perfect_observer_emits_one_hot() {
        let obs = Observer::new(ObserverConfig { perfect: true, ..Default::default() }).unwrap();
        let g = test_env(1);
        let mut r = rng::derive(2, "obs");
        for room in 0..g.n_rooms() {
            let o = obs.observe(&g, room, &mut r);
            assert_eq!(o.class_probs, g.class_of(room).one_hot());
        }
    }

    #[test]
    fn zero_view_noise_repeats_features_exactly() {
        let cfg = ObserverConfig { sigma_view: 0.0, ..Default::default() };
        let obs = Observer::new(cfg).unwrap();
        let g = test_env(3);
        let mut r = rng::derive(4, "obs");
        let a = obs.observe(&g, 2, &mut r);
        let b = obs.observe(&g, 2, &mut r);
        assert_eq!(a.feature, b.feature);
        // a different room of the same graph still differs (instance offset)
        let c = obs.observe(&g, 3, &mut r);
        assert_ne!(a.feature, c.feature);
    }

    #[test]
    fn accuracy_knob_is_calibrated() {
        for &knob in &[0.5, 0.7, 0.9] {
            let obs = Observer::new(ObserverConfig {
                accuracy_knob: knob,
                ..Default::default()
            })
            .unwrap();
            let g = test_env(5);
            let mut r = rng::derive(6, "calib");
            let trials = 4000;
            let mut hits = 0;
            for i in 0..trials {
                let room = i % g.n_rooms();
                let o = obs.observe(&g, room, &mut r);
                let argmax = o
                    .class_probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                if argmax == g.class_of(room).0 {
                    hits += 1;
                }
            }
            let acc = hits as f64 / trials as f64;
            assert!((acc - knob).abs() < 0.03, "knob {knob} measured {acc}");
        }
    }

    #[test]
    fn pair_dataset_is_exactly_balanced() {
        let g1 = test_env(7);
        let g2 = test_env(8);
        let obs = Observer::new(ObserverConfig::default()).unwrap();
        let mut r = rng::derive(9, "pairs");
        let pairs = make_pair_dataset(&[&g1, &g2], 200, &obs, &mut r).unwrap();
        assert_eq!(pairs.len(), 200);
        let pos = pairs.iter().filter(|p| p.same_room).count();
        assert_eq!(pos, 100);
        // positive pairs really are two views of one room: same env offset
        for p in pairs.iter().filter(|p| p.same_room).take(5) {
            let d: f64 = p
                .a
                .position
                .iter()
                .zip(&p.b.position)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(d <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn zeroed_localizer_scores_half() {
        let mut r = rng::derive(10, "loc");
        let mut model = LocalizerModel::init(LocalizerConfig::default(), 8, &mut r);
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.clone()).collect();
        for n in &names {
            let t = model.params.get_mut(n).unwrap();
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let g = test_env(11);
        let obs = Observer::new(ObserverConfig { feature_dim: 8, ..Default::default() }).unwrap();
        let a = obs.observe(&g, 0, &mut r);
        let b = obs.observe(&g, 1, &mut r);
        assert_eq!(model.score_pair(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn score_is_symmetric_bit_exact() {
        let mut r = rng::derive(12, "loc");
        let model = LocalizerModel::init(LocalizerConfig::default(), 8, &mut r);
        let g = test_env(13);
        let obs = Observer::new(ObserverConfig { feature_dim: 8, ..Default::default() }).unwrap();
        let a = obs.observe(&g, 0, &mut r);
        let b = obs.observe(&g, 4, &mut r);
        let s1 = model.score_pair(&a, &b).unwrap();
        let s2 = model.score_pair(&b, &a).unwrap();
        assert_eq!(s1.to_bits(), s2.to_bits());
    }

    #[test]
    fn localizer_learns_easy_separation() {
        // distinct per-room offsets dominate the view noise
        let obs = Observer::new(ObserverConfig {
            feature_dim: 16,
            sigma_room: 2.0,
            sigma_view: 0.2,
            ..Default::default()
        })
        .unwrap();
        let g1 = test_env(14);
        let g2 = test_env(15);
        let mut r = rng::derive(16, "loc_train");
        let pairs = make_pair_dataset(&[&g1, &g2], 600, &obs, &mut r).unwrap();
        let cfg = LocalizerConfig {
            hidden: vec![32],
            lr: 3e-3,
            epochs: 8,
            ..Default::default()
        };
        let (_, acc) = train_localizer(&pairs, cfg, 16, &mut r).unwrap();
        assert!(acc > 0.85, "held-out accuracy {acc}");
    }

    #[test]
    fn pose_encoding_rescues_identical_features() {
        // same class, zero noise: features are identical across both rooms,
        // so only the camera pose can separate positives from negatives
        let g = twin_room_env();
        let obs = Observer::new(ObserverConfig {
            feature_dim: 8,
            sigma_room: 0.0,
            sigma_view: 0.0,
            ..Default::default()
        })
        .unwrap();
        let mut r = rng::derive(17, "twins");
        let pairs = make_pair_dataset(&[&g], 400, &obs, &mut r).unwrap();
        let base = LocalizerConfig { hidden: vec![16], lr: 3e-3, epochs: 10, ..Default::default() };

        let cfg = LocalizerConfig { pose_encoding: PoseEncoding::NoPose, ..base.clone() };
        let (_, acc_blind) = train_localizer(&pairs, cfg, 8, &mut r).unwrap();

        let cfg = LocalizerConfig { pose_encoding: PoseEncoding::Fourier, ..base };
        let (_, acc_pose) = train_localizer(&pairs, cfg, 8, &mut r).unwrap();

        assert!(
            acc_blind < 0.65,
            "pose-blind localizer should be near chance, got {acc_blind}"
        );
        assert!(acc_pose > 0.9, "pose-aware localizer got {acc_pose}");
    }

    #[test]
    fn class_head_fits_separable_features() {
        let mut r = rng::derive(18, "head");
        let dim = 8;
        let mut examples = Vec::new();
        for i in 0..120 {
            let class = RoomClass(i % 3);
            let mut feat = class_embedding(class, dim);
            for f in feat.iter_mut() {
                *f += 0.1 * gaussian(&mut r);
            }
            examples.push((feat, class));
        }
        let params = train_class_head(&examples, dim, Some(0.5), 20, &mut r).unwrap();
        let mut hits = 0;
        for (feat, class) in &examples {
            let p = class_head_probs(&params, dim, feat).unwrap();
            let argmax = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if argmax == class.0 {
                hits += 1;
            }
        }
        assert!(hits >= 110, "{hits}/120 correct");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(Observer::new(ObserverConfig { accuracy_knob: 0.0, ..Default::default() }).is_err());
        assert!(Observer::new(ObserverConfig { accuracy_knob: 1.5, ..Default::default() }).is_err());
        assert!(Observer::new(ObserverConfig { sigma_room: -1.0, ..Default::default() }).is_err());
    }
}
