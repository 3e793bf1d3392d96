//! Area-Goal navigation policies over room graphs: a uniform RANDOM agent, a
//! sequence-only Baseline, and the full graph-attention LSTM agent with the
//! three informed mechanisms (subgoal conditioning, perception-gated
//! stopping, map-prioritized exploration). Training is student forcing
//! against a shortest-path teacher.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cggn::{CggnInput, CggnModel};
use crate::error::{Error, Result};
use crate::mapping::fuse_room_probs;
use crate::numerics::nn::{as_row, as_vec, Linear, LstmCell, Mlp};
use crate::numerics::tape::Var;
use crate::numerics::{AdamState, ParamSet, Session, Tensor};
use crate::perception::Observer;
use crate::worldgen::{NavPair, RoomClass, RoomGraph, NUM_CLASSES};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub lr: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { hidden: 256, lr: 1e-3 }
    }
}

impl PolicyConfig {
    /// Narrow preset for fast experiments.
    pub fn desk() -> Self {
        PolicyConfig { hidden: 48, lr: 1e-3 }
    }
}

/// The three informed mechanisms plus the episode budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InformedConfig {
    /// G: condition the policy on the predicted subgoal class distribution.
    pub use_subgoal: bool,
    /// P: exclude Stop unless the goal class is in the top-k of the current
    /// room's fused belief.
    pub use_perception_gate: bool,
    /// M: prefer unvisited neighbors; backtrack when none remain.
    pub use_map: bool,
    pub topk: usize,
    pub max_steps: usize,
}

impl Default for InformedConfig {
    fn default() -> Self {
        InformedConfig {
            use_subgoal: false,
            use_perception_gate: false,
            use_map: false,
            topk: 5,
            max_steps: 15,
        }
    }
}

impl InformedConfig {
    pub fn full() -> Self {
        InformedConfig {
            use_subgoal: true,
            use_perception_gate: true,
            use_map: true,
            ..Default::default()
        }
    }
}

/// Probabilities below this are never considered part of the top-k, so
/// one-hot beliefs gate exactly on the single supported class.
const TOPK_FLOOR: f64 = 1e-9;

/// True iff `class` is among the k highest-probability entries of `belief`
/// (ignoring entries with negligible mass).
pub fn in_topk(belief: &[f64], class: usize, k: usize) -> bool {
    let mut idx: Vec<usize> = (0..belief.len()).filter(|&i| belief[i] >= TOPK_FLOOR).collect();
    idx.sort_by(|&a, &b| belief[b].partial_cmp(&belief[a]).unwrap().then(a.cmp(&b)));
    idx.iter().take(k).any(|&i| i == class)
}

#[derive(Clone)]
struct AgentModules {
    mlp_h: Mlp,
    mlp_c: Mlp,
    node_enc: Linear,
    lstm: LstmCell,
}

impl AgentModules {
    fn new(h: usize) -> Self {
        AgentModules {
            mlp_h: Mlp::new("agent.mlp_h", &[NUM_CLASSES, h, h, h]),
            mlp_c: Mlp::new("agent.mlp_c", &[NUM_CLASSES, h, h, h]),
            // node input: fused class probs + predicted flag + visited one-hot
            node_enc: Linear::new("agent.node_enc", NUM_CLASSES + 3, h),
            // z_t = [attended graph, observation, previous action, subgoal]
            lstm: LstmCell::new("agent.lstm", h + 3 * NUM_CLASSES, h),
        }
    }
}

pub struct PolicyModel {
    pub cfg: PolicyConfig,
    pub params: ParamSet,
}

impl PolicyModel {
    pub fn init<R: Rng>(cfg: PolicyConfig, rng: &mut R) -> Self {
        let h = cfg.hidden;
        let mut params = ParamSet::new();
        let m = AgentModules::new(h);
        m.mlp_h.init(&mut params, rng);
        m.mlp_c.init(&mut params, rng);
        m.node_enc.init(&mut params, rng);
        m.lstm.init(&mut params, rng);
        for (name, rows, cols) in [
            ("agent.wq", h, h),
            ("agent.wk", h, h),
            ("agent.wv", h, h),
            ("agent.w1", h, h),
            ("agent.w2", 2 * h, h),
            ("agent.w3", h, h),
            ("agent.w4", NUM_CLASSES, h),
            ("agent.w5", h, 1),
        ] {
            params.insert(name, Tensor::randn_trainable(vec![rows, cols], rows, rng));
        }
        PolicyModel { cfg, params }
    }

    pub fn from_params(cfg: PolicyConfig, params: ParamSet) -> Self {
        PolicyModel { cfg, params }
    }
}

/// Instruction encoding: initial LSTM state from the destination one-hot.
pub fn encode_instruction(
    sess: &mut Session,
    cfg: &PolicyConfig,
    destination: usize,
) -> Result<(Var, Var)> {
    if destination >= NUM_CLASSES {
        return Err(Error::IndexOutOfRange { index: destination, len: NUM_CLASSES });
    }
    let m = AgentModules::new(cfg.hidden);
    let d = sess.tape.constant_vec(RoomClass(destination).one_hot())?;
    let h0 = m.mlp_h.forward(sess, d)?;
    let c0 = m.mlp_c.forward(sess, d)?;
    Ok((h0, c0))
}

/// Attention over encoded graph nodes: weights softmax((W1 h)ᵀ v_i), then
/// ĥ = tanh(W2 [v̂, h]).
pub fn attend_graph(sess: &mut Session, h_prev: Var, nodes: Var) -> Result<Var> {
    let shape = sess.tape.shape(nodes).to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::InvalidArgument("attend_graph: need >= 1 node state".into()));
    }
    let w1 = sess.param("agent.w1")?;
    let w2 = sess.param("agent.w2")?;
    let key = sess.tape.matmul(h_prev, w1)?; // [h]
    let d = sess.tape.data(key).len();
    let key_col = sess.tape.reshape(key, vec![d, 1])?;
    let logits = sess.tape.matmul(nodes, key_col)?; // [n, 1]
    let n = shape[0];
    let logits = sess.tape.reshape(logits, vec![n])?;
    let weights = sess.tape.softmax(logits)?;
    let weights_row = sess.tape.reshape(weights, vec![1, n])?;
    let v_hat = sess.tape.matmul(weights_row, nodes)?; // [1, h]
    let v_hat = as_vec(sess, v_hat)?;
    let joint = sess.tape.concat(&[v_hat, h_prev])?;
    let pre = sess.tape.matmul(joint, w2)?;
    sess.tape.tanh(pre)
}

/// One self-attention layer over raw node features, producing the states the
/// policy attends to.
fn encode_graph_nodes(sess: &mut Session, cfg: &PolicyConfig, feats: &[Vec<f64>]) -> Result<Var> {
    let m = AgentModules::new(cfg.hidden);
    let n = feats.len();
    let width = NUM_CLASSES + 3;
    let flat: Vec<f64> = feats.iter().flatten().cloned().collect();
    let x = sess.tape.constant(vec![n, width], flat)?;
    let enc = m.node_enc.forward(sess, x)?; // [n, h]
    let wq = sess.param("agent.wq")?;
    let wk = sess.param("agent.wk")?;
    let wv = sess.param("agent.wv")?;
    let q = sess.tape.matmul(enc, wq)?;
    let k = sess.tape.matmul(enc, wk)?;
    let v = sess.tape.matmul(enc, wv)?;
    let kt = sess.tape.transpose(k)?;
    let scores = sess.tape.matmul(q, kt)?;
    let scores = sess.tape.scale(scores, 1.0 / (cfg.hidden as f64).sqrt())?;
    let attn = sess.tape.softmax(scores)?; // row-wise
    let mixed = sess.tape.matmul(attn, v)?;
    sess.tape.add(enc, mixed)
}

/// Inputs of one policy step.
pub struct StepInputs<'a> {
    /// Current observation's class probabilities.
    pub obs_probs: &'a [f64],
    /// Class probabilities of the previously chosen room (zeros at t=0).
    pub prev_action: &'a [f64],
    /// Subgoal distribution; `None` fills the slot with zeros.
    pub subgoal: Option<&'a [f64]>,
    /// Raw graph-node features for attention; empty disables the graph path
    /// (Baseline).
    pub node_feats: &'a [Vec<f64>],
    /// Per-candidate class-probability features (index 0 = Stop).
    pub candidate_feats: &'a [Vec<f64>],
}

/// LSTM update plus per-candidate logits; returns (h', c', action probs).
pub fn step_policy(
    sess: &mut Session,
    cfg: &PolicyConfig,
    h: Var,
    c: Var,
    inputs: &StepInputs,
) -> Result<(Var, Var, Var)> {
    if inputs.candidate_feats.is_empty() {
        return Err(Error::InvalidArgument("step_policy: no candidates".into()));
    }
    let m = AgentModules::new(cfg.hidden);

    let h_att = if inputs.node_feats.is_empty() {
        sess.tape.constant_vec(vec![0.0; cfg.hidden])?
    } else {
        let nodes = encode_graph_nodes(sess, cfg, inputs.node_feats)?;
        attend_graph(sess, h, nodes)?
    };

    let obs = sess.tape.constant_vec(inputs.obs_probs.to_vec())?;
    let prev = sess.tape.constant_vec(inputs.prev_action.to_vec())?;
    let sub = sess
        .tape
        .constant_vec(inputs.subgoal.map_or(vec![0.0; NUM_CLASSES], |s| s.to_vec()))?;
    let z = sess.tape.concat(&[h_att, obs, prev, sub])?;
    let z = as_row(sess, z)?;
    let h_row = as_row(sess, h)?;
    let c_row = as_row(sess, c)?;
    let (h_next, c_next) = m.lstm.forward(sess, z, h_row, c_row)?;
    let h_next = as_vec(sess, h_next)?;
    let c_next = as_vec(sess, c_next)?;

    let w3 = sess.param("agent.w3")?;
    let w4 = sess.param("agent.w4")?;
    let w5 = sess.param("agent.w5")?;
    let query = sess.tape.matmul(h_next, w3)?; // [h]
    let n_cand = inputs.candidate_feats.len();
    let flat: Vec<f64> = inputs.candidate_feats.iter().flatten().cloned().collect();
    let u = sess.tape.constant(vec![n_cand, NUM_CLASSES], flat)?;
    let u_enc = sess.tape.matmul(u, w4)?; // [n, h]
    let query_row = sess.tape.reshape(query, vec![1, cfg.hidden])?;
    let ones = sess.tape.constant(vec![n_cand, 1], vec![1.0; n_cand])?;
    let query_bcast = sess.tape.matmul(ones, query_row)?;
    let gated = sess.tape.mul(u_enc, query_bcast)?;
    let logits = sess.tape.matmul(gated, w5)?;
    let logits = sess.tape.reshape(logits, vec![n_cand])?;
    let probs = sess.tape.softmax(logits)?;
    Ok((h_next, c_next, probs))
}

/// What the agent knows about the environment mid-episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentMap {
    /// Visited rooms in discovery order.
    pub visited: Vec<usize>,
    /// Fused beliefs of visited rooms and glimpse priors of seen neighbors.
    pub beliefs: BTreeMap<usize, Vec<f64>>,
    /// Traversed edges between visited rooms.
    pub edges: BTreeSet<(usize, usize)>,
    /// Neighbor lists recorded when a room was visited.
    pub known_neighbors: BTreeMap<usize, Vec<usize>>,
}

impl AgentMap {
    pub fn new() -> Self {
        AgentMap {
            visited: Vec::new(),
            beliefs: BTreeMap::new(),
            edges: BTreeSet::new(),
            known_neighbors: BTreeMap::new(),
        }
    }

    pub fn is_visited(&self, room: usize) -> bool {
        self.known_neighbors.contains_key(&room)
    }

    pub fn discovery_index(&self, room: usize) -> Option<usize> {
        self.visited.iter().position(|&r| r == room)
    }

    fn unvisited_neighbors(&self, room: usize) -> Vec<usize> {
        self.known_neighbors
            .get(&room)
            .map(|nb| nb.iter().copied().filter(|&n| !self.is_visited(n)).collect())
            .unwrap_or_default()
    }

    /// Observation-graph view of the visited map (discovery order, lower-tri
    /// adjacency), ready for trajectory prediction.
    pub fn to_cggn_input(&self, destination: usize) -> CggnInput {
        let index: BTreeMap<usize, usize> =
            self.visited.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let nodes = self.visited.iter().map(|r| self.beliefs[r].clone()).collect();
        let mut adjacency: Vec<Vec<bool>> = (0..self.visited.len()).map(|i| vec![false; i]).collect();
        for &(a, b) in &self.edges {
            let (ia, ib) = (index[&a], index[&b]);
            let (lo, hi) = (ia.min(ib), ia.max(ib));
            adjacency[hi][lo] = true;
        }
        CggnInput { nodes, adjacency, destination }
    }
}

impl Default for AgentMap {
    fn default() -> Self {
        Self::new()
    }
}

/// First hop of the shortest path (over traversed edges) from `current` to
/// the nearest visited room that still has an unvisited neighbor; ties break
/// on the lower discovery index. `Ok(None)` means the known graph is
/// exhausted.
pub fn backtrack_target(map: &AgentMap, current: usize) -> Result<Option<usize>> {
    if !map.unvisited_neighbors(current).is_empty() {
        return Err(Error::InvalidArgument(
            "backtrack_target: current room still has unvisited neighbors".into(),
        ));
    }
    let mut dist: BTreeMap<usize, usize> = BTreeMap::new();
    let mut first_hop: BTreeMap<usize, usize> = BTreeMap::new();
    dist.insert(current, 0);
    let mut queue = VecDeque::from([current]);
    let mut best: Option<(usize, usize, usize)> = None; // (dist, discovery, hop)
    while let Some(r) = queue.pop_front() {
        let d = dist[&r];
        if r != current && !map.unvisited_neighbors(r).is_empty() {
            let key = (d, map.discovery_index(r).unwrap_or(usize::MAX), first_hop[&r]);
            if best.map_or(true, |b| (key.0, key.1) < (b.0, b.1)) {
                best = Some(key);
            }
            continue;
        }
        let mut next: Vec<usize> = map
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == r {
                    Some(b)
                } else if b == r {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        next.sort_unstable();
        for n in next {
            if dist.contains_key(&n) {
                continue;
            }
            dist.insert(n, d + 1);
            first_hop.insert(n, if r == current { n } else { first_hop[&r] });
            queue.push_back(n);
        }
    }
    Ok(best.map(|(_, _, hop)| hop))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub current_room: usize,
    /// Candidate rooms; index 0 is the current room (Stop).
    pub candidates: Vec<usize>,
    pub pre_mask: Vec<f64>,
    pub post_mask: Vec<f64>,
    pub mask_reasons: Vec<String>,
    pub chosen: usize,
    pub unvisited_neighbor_exists: bool,
    /// Whether each candidate room had already been visited at this step.
    pub visited_candidates: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Episode {
    pub env_id: String,
    pub start: usize,
    pub goal_class: usize,
    /// Rooms in visit order, starting with the start room.
    pub trajectory: Vec<usize>,
    /// True iff the agent chose Stop before exhausting the step budget.
    pub stopped: bool,
    pub trace: Vec<TraceStep>,
}

/// Everything an episode needs besides the environment and the task pair.
pub struct AgentSetup<'a> {
    /// `None` runs the uniform RANDOM agent.
    pub policy: Option<&'a PolicyModel>,
    /// Graph attention on/off (off = Baseline).
    pub use_graph: bool,
    pub informed: InformedConfig,
    pub observer: &'a Observer,
    /// Subgoal source, required when `informed.use_subgoal`.
    pub cggn: Option<&'a CggnModel>,
}

/// Apply the P/M gates to an action distribution. Returns the renormalized
/// distribution, the list of mask reasons, and an optional forced action.
fn informed_filter(
    dist: &[f64],
    candidates: &[usize],
    map: &AgentMap,
    current: usize,
    goal_class: usize,
    cfg: &InformedConfig,
) -> Result<(Vec<f64>, Vec<String>, Option<usize>)> {
    let mut out = dist.to_vec();
    let mut reasons = Vec::new();

    if cfg.use_perception_gate && !in_topk(&map.beliefs[&current], goal_class, cfg.topk) {
        out[0] = 0.0;
        reasons.push("p_gate_stop_excluded".to_string());
    }

    if cfg.use_map {
        let unvisited = map.unvisited_neighbors(current);
        if !unvisited.is_empty() {
            for (i, &room) in candidates.iter().enumerate().skip(1) {
                if map.is_visited(room) {
                    out[i] = 0.0;
                }
            }
            if candidates.iter().skip(1).any(|r| map.is_visited(*r)) {
                reasons.push("m_gate_visited_masked".to_string());
            }
        } else {
            // nothing new here: movement is restricted to the backtrack hop
            match backtrack_target(map, current)? {
                Some(hop) => {
                    for (i, &room) in candidates.iter().enumerate().skip(1) {
                        if room != hop {
                            out[i] = 0.0;
                        }
                    }
                    reasons.push(format!("m_gate_backtrack_to_{hop}"));
                }
                None => {
                    // the reachable graph is exhausted; stopping is all that
                    // is left, regardless of the perception gate
                    reasons.push("m_gate_exhausted_forced_stop".to_string());
                    return Ok((one_hot_dist(dist.len(), 0), reasons, Some(0)));
                }
            }
        }
    }

    let z: f64 = out.iter().sum();
    if z <= 0.0 {
        // every action masked (e.g. P-gate killed Stop and M-gate killed all
        // moves but none survive): fall back to the first unmasked-by-M move
        let fallback = (1..out.len()).find(|&i| dist[i] > 0.0).unwrap_or(0);
        reasons.push("all_masked_fallback".to_string());
        return Ok((one_hot_dist(dist.len(), fallback), reasons, Some(fallback)));
    }
    for v in out.iter_mut() {
        *v /= z;
    }
    Ok((out, reasons, None))
}

fn one_hot_dist(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.gen();
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}

/// Record arriving at `room`: observe, fuse, note neighbors and glimpse
/// priors for unseen ones.
fn arrive<R: Rng>(
    map: &mut AgentMap,
    g: &RoomGraph,
    room: usize,
    came_from: Option<usize>,
    observer: &Observer,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let obs = observer.observe(g, room, rng);
    let fused = match map.beliefs.get(&room) {
        Some(prior) if map.is_visited(room) => fuse_room_probs(prior, &obs.class_probs)?,
        _ => obs.class_probs.clone(),
    };
    map.beliefs.insert(room, fused);
    if !map.is_visited(room) {
        map.visited.push(room);
        map.known_neighbors.insert(room, g.neighbors(room));
    }
    if let Some(p) = came_from {
        map.edges.insert((p.min(room), p.max(room)));
    }
    for n in g.neighbors(room) {
        if !map.beliefs.contains_key(&n) {
            let glimpse = observer.glimpse(g, n, rng);
            map.beliefs.insert(n, glimpse.class_probs);
        }
    }
    Ok(obs.class_probs)
}

fn graph_node_feats(map: &AgentMap, predicted: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut feats = Vec::new();
    for r in &map.visited {
        let mut f = map.beliefs[r].clone();
        f.extend([0.0, 1.0, 0.0]); // real node, visited
        feats.push(f);
    }
    for p in predicted {
        let mut f = p.clone();
        f.extend([1.0, 0.0, 1.0]); // predicted node, not visited
        feats.push(f);
    }
    feats
}

/// Run one evaluation episode (actions by arg-max of the post-mask
/// distribution).
pub fn run_episode<R: Rng>(
    setup: &AgentSetup,
    g: &RoomGraph,
    pair: &NavPair,
    rng: &mut R,
) -> Result<Episode> {
    run_episode_inner(setup, g, pair, rng, false).map(|(ep, _)| ep)
}

fn run_episode_inner<R: Rng>(
    setup: &AgentSetup,
    g: &RoomGraph,
    pair: &NavPair,
    rng: &mut R,
    sample_actions: bool,
) -> Result<(Episode, ())> {
    let mut map = AgentMap::new();
    let mut current = pair.start_room;
    let mut trajectory = vec![current];
    let mut trace = Vec::new();
    let mut stopped = false;

    let empty = ParamSet::new();
    let policy_params = setup.policy.map(|p| &p.params).unwrap_or(&empty);
    let mut sess = Session::new(policy_params);
    let mut state = match setup.policy {
        Some(p) => Some(encode_instruction(&mut sess, &p.cfg, pair.goal_class.0)?),
        None => None,
    };
    let mut prev_action = vec![0.0; NUM_CLASSES];
    let mut obs_probs = arrive(&mut map, g, current, None, setup.observer, rng)?;

    for step in 0..setup.informed.max_steps {
        let mut candidates = vec![current];
        candidates.extend(g.neighbors(current));

        let pre_mask = match (setup.policy, state.take()) {
            (Some(policy), Some((h, c))) => {
                let predicted: Vec<Vec<f64>> = if setup.informed.use_subgoal {
                    let model = setup.cggn.ok_or_else(|| {
                        Error::InvalidArgument("use_subgoal requires a trajectory model".into())
                    })?;
                    let pred = model.generate_trajectory(
                        &map.to_cggn_input(pair.goal_class.0),
                        20,
                        rng,
                    )?;
                    pred.active_nodes().iter().map(|&t| pred.node_probs[t].clone()).collect()
                } else {
                    Vec::new()
                };
                let subgoal: Option<Vec<f64>> = if setup.informed.use_subgoal {
                    predicted.first().cloned()
                } else {
                    None
                };
                let node_feats =
                    if setup.use_graph { graph_node_feats(&map, &predicted) } else { Vec::new() };
                let cand_feats: Vec<Vec<f64>> =
                    candidates.iter().map(|r| map.beliefs[r].clone()).collect();
                let inputs = StepInputs {
                    obs_probs: &obs_probs,
                    prev_action: &prev_action,
                    subgoal: subgoal.as_deref(),
                    node_feats: &node_feats,
                    candidate_feats: &cand_feats,
                };
                let (h2, c2, probs) = step_policy(&mut sess, &policy.cfg, h, c, &inputs)?;
                state = Some((h2, c2));
                sess.tape.data(probs).to_vec()
            }
            _ => vec![1.0 / candidates.len() as f64; candidates.len()],
        };

        let (post_mask, mask_reasons, forced) = informed_filter(
            &pre_mask,
            &candidates,
            &map,
            current,
            pair.goal_class.0,
            &setup.informed,
        )?;
        let chosen = match forced {
            // the RANDOM agent always samples; trained policies act greedily
            // at evaluation time
            Some(i) => i,
            None if sample_actions || setup.policy.is_none() => sample_index(&post_mask, rng),
            None => post_mask
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0,
        };
        trace.push(TraceStep {
            step,
            current_room: current,
            candidates: candidates.clone(),
            pre_mask,
            post_mask,
            mask_reasons,
            chosen,
            unvisited_neighbor_exists: !map.unvisited_neighbors(current).is_empty(),
            visited_candidates: candidates.iter().map(|&r| map.is_visited(r)).collect(),
        });

        if chosen == 0 {
            stopped = true;
            break;
        }
        let next = candidates[chosen];
        prev_action = map.beliefs[&next].clone();
        obs_probs = arrive(&mut map, g, next, Some(current), setup.observer, rng)?;
        current = next;
        trajectory.push(current);
    }

    Ok((
        Episode {
            env_id: g.id.clone(),
            start: pair.start_room,
            goal_class: pair.goal_class.0,
            trajectory,
            stopped,
            trace,
        },
        (),
    ))
}

/// Teacher action index: Stop when the current room matches the goal class,
/// otherwise the first hop of the shortest path to the nearest goal-class
/// room (`None` when unreachable).
pub fn teacher_action(g: &RoomGraph, current: usize, goal_class: usize) -> Option<usize> {
    if g.class_of(current).0 == goal_class {
        return Some(0);
    }
    // BFS over the true graph; neighbors() is sorted, so ties resolve to the
    // smallest room id
    let mut dist: BTreeMap<usize, usize> = BTreeMap::new();
    let mut hop: BTreeMap<usize, usize> = BTreeMap::new();
    dist.insert(current, 0);
    let mut queue = VecDeque::from([current]);
    while let Some(r) = queue.pop_front() {
        if g.class_of(r).0 == goal_class {
            let first = hop[&r];
            let idx = g.neighbors(current).iter().position(|&n| n == first).unwrap();
            return Some(idx + 1);
        }
        for n in g.neighbors(r) {
            if dist.contains_key(&n) {
                continue;
            }
            dist.insert(n, dist[&r] + 1);
            hop.insert(n, if r == current { n } else { hop[&r] });
            queue.push_back(n);
        }
    }
    None
}

/// Student forcing: execute actions sampled from the (masked) policy while
/// supervising every step with the shortest-path teacher action. One Adam
/// step per episode; returns the per-episode mean losses.
pub fn train_student_forcing<R: Rng>(
    model: &mut PolicyModel,
    envs: &[(&RoomGraph, Vec<NavPair>)],
    setup_graph: bool,
    informed: &InformedConfig,
    observer: &Observer,
    cggn: Option<&CggnModel>,
    episodes: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if envs.is_empty() || envs.iter().all(|(_, p)| p.is_empty()) {
        return Err(Error::Dataset("no training pairs".into()));
    }
    let mut adam = AdamState::new(model.cfg.lr);
    let mut curve = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (g, pairs) = &envs[rng.gen_range(0..envs.len())];
        if pairs.is_empty() {
            continue;
        }
        let pair = &pairs[rng.gen_range(0..pairs.len())];
        model.params.zero_grads();
        let loss = train_episode(model, g, pair, setup_graph, informed, observer, cggn, rng)?;
        adam.step(&mut model.params)?;
        curve.push(loss);
    }
    Ok(curve)
}

fn train_episode<R: Rng>(
    model: &mut PolicyModel,
    g: &RoomGraph,
    pair: &NavPair,
    use_graph: bool,
    informed: &InformedConfig,
    observer: &Observer,
    cggn: Option<&CggnModel>,
    rng: &mut R,
) -> Result<f64> {
    let mut map = AgentMap::new();
    let mut current = pair.start_room;
    let mut prev_action = vec![0.0; NUM_CLASSES];

    let (grads, mean_loss) = {
        let mut sess = Session::new(&model.params);
        let (mut h, mut c) = encode_instruction(&mut sess, &model.cfg, pair.goal_class.0)?;
        let mut obs_probs = arrive(&mut map, g, current, None, observer, rng)?;
        let mut losses: Vec<Var> = Vec::new();

        for _ in 0..informed.max_steps {
            let mut candidates = vec![current];
            candidates.extend(g.neighbors(current));
            let Some(teacher) = teacher_action(g, current, pair.goal_class.0) else { break };

            let predicted: Vec<Vec<f64>> = if informed.use_subgoal {
                let m = cggn.ok_or_else(|| {
                    Error::InvalidArgument("use_subgoal requires a trajectory model".into())
                })?;
                let pred = m.generate_trajectory(&map.to_cggn_input(pair.goal_class.0), 20, rng)?;
                pred.active_nodes().iter().map(|&t| pred.node_probs[t].clone()).collect()
            } else {
                Vec::new()
            };
            let subgoal = if informed.use_subgoal { predicted.first().cloned() } else { None };
            let node_feats = if use_graph { graph_node_feats(&map, &predicted) } else { Vec::new() };
            let cand_feats: Vec<Vec<f64>> =
                candidates.iter().map(|r| map.beliefs[r].clone()).collect();
            let inputs = StepInputs {
                obs_probs: &obs_probs,
                prev_action: &prev_action,
                subgoal: subgoal.as_deref(),
                node_feats: &node_feats,
                candidate_feats: &cand_feats,
            };
            let (h2, c2, probs) = step_policy(&mut sess, &model.cfg, h, c, &inputs)?;
            h = h2;
            c = c2;

            let clamped = sess.tape.clamp(probs, 1e-300, 1.0)?;
            let logp = sess.tape.log(clamped)?;
            let ce = crate::numerics::loss::cross_entropy(&mut sess.tape, logp, teacher)?;
            losses.push(ce);

            let pre = sess.tape.data(probs).to_vec();
            let (post, _, forced) =
                informed_filter(&pre, &candidates, &map, current, pair.goal_class.0, informed)?;
            let chosen = forced.unwrap_or_else(|| sample_index(&post, rng));
            if chosen == 0 {
                break;
            }
            let next = candidates[chosen];
            prev_action = map.beliefs[&next].clone();
            obs_probs = arrive(&mut map, g, next, Some(current), observer, rng)?;
            current = next;
        }

        if losses.is_empty() {
            return Ok(0.0);
        }
        let stacked = sess.tape.concat(&losses)?;
        let total = sess.tape.mean(stacked)?;
        let v = sess.tape.value(total);
        if !v.is_finite() {
            return Err(Error::Diverged("policy loss is not finite".into()));
        }
        (sess.backward(total)?, v)
    };
    model.params.accumulate_grads(&grads)?;
    Ok(mean_loss)
}
