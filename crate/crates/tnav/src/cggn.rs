//! Conditional trajectory-graph prediction: encode the observation graph plus
//! a destination class, run gated message passing, and predict a block of up
//! to B new nodes (room-class distributions) together with their adjacency
//! rows under a mixture-of-Bernoulli edge likelihood.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::ObservationGraph;
use crate::numerics::checkpoint;
use crate::numerics::loss::{cross_entropy, mixture_bernoulli_nll};
use crate::numerics::nn::{GruCell, Mlp};
use crate::numerics::tape::Var;
use crate::numerics::{AdamState, ParamSet, Session, Tensor};
use crate::worldgen::{CggnSample, RoomClass, GENERATED_BLOCK, NUM_CLASSES};

const THETA_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CggnConfig {
    /// Number of generated nodes per prediction (B).
    pub block: usize,
    pub hidden: usize,
    pub gnn_layers: usize,
    pub node_mlp_hidden: usize,
    /// Mixture components for the edge likelihood.
    pub mixture_k: usize,
    /// Maximum observation-graph size; adjacency rows are padded to this
    /// width in the node embedding.
    pub max_obs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
}

impl Default for CggnConfig {
    fn default() -> Self {
        CggnConfig {
            block: GENERATED_BLOCK,
            hidden: 256,
            gnn_layers: 5,
            node_mlp_hidden: 128,
            mixture_k: 2,
            max_obs: 32,
            lr: 1e-3,
            batch_size: 60,
            iterations: 10_000,
        }
    }
}

impl CggnConfig {
    /// Small-width preset that trains in seconds on a laptop core while
    /// keeping the architecture identical.
    pub fn desk() -> Self {
        CggnConfig {
            hidden: 32,
            gnn_layers: 3,
            node_mlp_hidden: 32,
            batch_size: 20,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block < 1 || self.mixture_k < 1 || self.hidden < 1 {
            return Err(Error::Config("block, mixture_k and hidden must be >= 1".into()));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.max_obs + 2 * NUM_CLASSES
    }
}

/// Model input: observed room nodes (30-dim class beliefs), their
/// lower-triangular adjacency, and the destination class.
#[derive(Debug, Clone)]
pub struct CggnInput {
    pub nodes: Vec<Vec<f64>>,
    pub adjacency: Vec<Vec<bool>>,
    pub destination: usize,
}

impl CggnInput {
    pub fn from_sample(s: &CggnSample) -> Self {
        CggnInput {
            nodes: s.obs_classes.iter().map(|&c| RoomClass(c).one_hot()).collect(),
            adjacency: s.obs_adj.clone(),
            destination: s.destination,
        }
    }

    pub fn from_observation(og: &ObservationGraph, destination: usize) -> Self {
        CggnInput { nodes: og.nodes.clone(), adjacency: og.adjacency.clone(), destination }
    }
}

/// Static structure of one forward pass: node input features plus the
/// directed message-passing edges and the ordered candidate pairs.
pub struct GraphState {
    pub n_obs: usize,
    pub block: usize,
    /// Observed-node input rows, width `max_obs + 60`.
    pub obs_feats: Vec<Vec<f64>>,
    /// Directed messaging edges (receiver, sender) with 4-dim involvement
    /// features [existing(recv), new(recv), existing(send), new(send)].
    pub directed: Vec<(usize, usize, [f64; 4])>,
    /// Candidate pairs (new node, earlier column) in target-row order: row t
    /// spans columns 0..n_obs+t.
    pub candidates: Vec<(usize, usize)>,
}

impl GraphState {
    pub fn n_nodes(&self) -> usize {
        self.n_obs + self.block
    }
}

/// Involvement feature for a directed (receiver, sender) edge.
fn edge_feat(recv_new: bool, send_new: bool) -> [f64; 4] {
    let half = |new: bool| if new { [0.0, 1.0] } else { [1.0, 0.0] };
    let (a, b) = (half(recv_new), half(send_new));
    [a[0], a[1], b[0], b[1]]
}

pub fn init_graph_state(input: &CggnInput, cfg: &CggnConfig) -> Result<GraphState> {
    let n_obs = input.nodes.len();
    if n_obs == 0 {
        return Err(Error::InvalidArgument("observation graph is empty".into()));
    }
    if n_obs > cfg.max_obs {
        return Err(Error::InvalidArgument(format!(
            "observation graph has {n_obs} nodes, max_obs is {}",
            cfg.max_obs
        )));
    }
    if input.destination >= NUM_CLASSES {
        return Err(Error::IndexOutOfRange { index: input.destination, len: NUM_CLASSES });
    }
    let dest = RoomClass(input.destination).one_hot();
    let mut obs_feats = Vec::with_capacity(n_obs);
    for (i, x) in input.nodes.iter().enumerate() {
        if x.len() != NUM_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "node {i} has {} class entries, expected {NUM_CLASSES}",
                x.len()
            )));
        }
        let mut row = vec![0.0; cfg.max_obs];
        for (j, &bit) in input.adjacency[i].iter().enumerate() {
            row[j] = if bit { 1.0 } else { 0.0 };
        }
        row.extend_from_slice(x);
        row.extend_from_slice(&dest);
        obs_feats.push(row);
    }

    let mut directed = Vec::new();
    let mut link = |a: usize, b: usize, n_obs: usize| {
        let (an, bn) = (a >= n_obs, b >= n_obs);
        directed.push((a, b, edge_feat(an, bn)));
        directed.push((b, a, edge_feat(bn, an)));
    };
    // observed edges
    for (i, row) in input.adjacency.iter().enumerate() {
        for (j, &bit) in row.iter().enumerate() {
            if bit {
                link(i, j, n_obs);
            }
        }
    }
    // candidate edges: every (new, observed) and (new, earlier-new) pair
    let mut candidates = Vec::new();
    for t in 0..cfg.block {
        let node = n_obs + t;
        for col in 0..n_obs + t {
            candidates.push((node, col));
            link(node, col, n_obs);
        }
    }
    Ok(GraphState { n_obs, block: cfg.block, obs_feats, directed, candidates })
}

/// Named sub-networks of the model; parameters live in the [`ParamSet`].
#[derive(Clone)]
struct Modules {
    embed: Mlp,
    msg: Vec<Mlp>,
    gate: Vec<Mlp>,
    gru: Vec<GruCell>,
    alpha: Mlp,
    theta: Mlp,
    node: Mlp,
}

impl Modules {
    fn new(cfg: &CggnConfig) -> Self {
        let h = cfg.hidden;
        let edge_in = 2 * h + 4;
        Modules {
            embed: Mlp::new("cggn.embed", &[cfg.input_dim(), h]),
            msg: (0..cfg.gnn_layers)
                .map(|r| Mlp::new(&format!("cggn.layer{r}.msg"), &[edge_in, h, h]))
                .collect(),
            gate: (0..cfg.gnn_layers)
                .map(|r| Mlp::new(&format!("cggn.layer{r}.gate"), &[edge_in, h, 1]))
                .collect(),
            gru: (0..cfg.gnn_layers)
                .map(|r| GruCell::new(format!("cggn.layer{r}.gru"), h, h))
                .collect(),
            alpha: Mlp::new("cggn.alpha", &[h, cfg.node_mlp_hidden, cfg.mixture_k]),
            theta: Mlp::new("cggn.theta", &[h, cfg.node_mlp_hidden, cfg.mixture_k]),
            node: Mlp::new("cggn.node", &[h, cfg.node_mlp_hidden, cfg.node_mlp_hidden, NUM_CLASSES]),
        }
    }
}

/// Tape variables produced by one forward pass.
pub(crate) struct ForwardVars {
    /// [B, 30] row distributions.
    pub node_probs: Var,
    /// Mixture weights, [K].
    pub alpha: Var,
    /// Edge probabilities, [K, n_candidates].
    pub theta: Var,
}

pub struct CggnModel {
    pub cfg: CggnConfig,
    pub params: ParamSet,
}

impl CggnModel {
    pub fn init<R: Rng>(cfg: CggnConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let m = Modules::new(&cfg);
        m.embed.init(&mut params, rng);
        for r in 0..cfg.gnn_layers {
            m.msg[r].init(&mut params, rng);
            m.gate[r].init(&mut params, rng);
            m.gru[r].init(&mut params, rng);
        }
        m.alpha.init(&mut params, rng);
        m.theta.init(&mut params, rng);
        m.node.init(&mut params, rng);
        // Generated-node initial states: zeros, but trainable. With a fully
        // connected candidate block, identical initial states would make the
        // new nodes permanently interchangeable; letting gradients move these
        // rows breaks the tie while preserving the all-zero start.
        let mut pos = Tensor::zeros(vec![cfg.block, cfg.hidden]);
        pos.trainable = true;
        params.insert("cggn.new_init", pos);
        Ok(CggnModel { cfg, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.params, path)
    }

    pub fn load(cfg: CggnConfig, path: &Path) -> Result<Self> {
        cfg.validate()?;
        let params = checkpoint::load(path)?;
        Ok(CggnModel { cfg, params })
    }

    pub(crate) fn run_forward(
        &self,
        sess: &mut Session,
        state: &GraphState,
    ) -> Result<ForwardVars> {
        let m = Modules::new(&self.cfg);
        let n_obs = state.n_obs;
        let n = state.n_nodes();

        let flat: Vec<f64> = state.obs_feats.iter().flatten().cloned().collect();
        let x = sess.tape.constant(vec![n_obs, self.cfg.input_dim()], flat)?;
        let h_obs = m.embed.forward(sess, x)?;
        let h_new0 = sess.param("cggn.new_init")?;
        let mut h = sess.tape.concat_rows(&[h_obs, h_new0])?;

        let recv: Vec<usize> = state.directed.iter().map(|e| e.0).collect();
        let send: Vec<usize> = state.directed.iter().map(|e| e.1).collect();
        let feat_flat: Vec<f64> = state.directed.iter().flat_map(|e| e.2).collect();
        let n_edges = state.directed.len();
        let ones_row = sess.tape.constant(vec![1, self.cfg.hidden], vec![1.0; self.cfg.hidden])?;

        for r in 0..self.cfg.gnn_layers {
            let feats = sess.tape.constant(vec![n_edges, 4], feat_flat.clone())?;
            let h_recv = sess.tape.gather_rows(h, &recv)?;
            let h_send = sess.tape.gather_rows(h, &send)?;
            let edge_in = sess.tape.concat_cols(&[h_recv, h_send, feats])?;
            let msg = m.msg[r].forward(sess, edge_in)?;
            let gate_logit = m.gate[r].forward(sess, edge_in)?;
            let gate = sess.tape.sigmoid(gate_logit)?;
            // broadcast the [E, 1] gate across the hidden width
            let gate_wide = sess.tape.matmul(gate, ones_row)?;
            let gated = sess.tape.mul(msg, gate_wide)?;
            let agg = sess.tape.segment_sum(gated, &recv, n)?;
            h = m.gru[r].forward(sess, agg, h)?;
        }

        let new_idx: Vec<usize> = (n_obs..n).collect();
        let h_new = sess.tape.gather_rows(h, &new_idx)?;
        let node_logits = m.node.forward(sess, h_new)?;
        let node_probs = sess.tape.softmax(node_logits)?;

        let ci: Vec<usize> = state.candidates.iter().map(|c| c.0).collect();
        let cj: Vec<usize> = state.candidates.iter().map(|c| c.1).collect();
        let hi = sess.tape.gather_rows(h, &ci)?;
        let hj = sess.tape.gather_rows(h, &cj)?;
        let diff = sess.tape.sub(hi, hj)?;
        let alpha_terms = m.alpha.forward(sess, diff)?;
        let alpha_sum = sess.tape.sum_rows(alpha_terms)?;
        let alpha = sess.tape.softmax(alpha_sum)?;
        let theta_logits = m.theta.forward(sess, diff)?;
        let theta_pk = sess.tape.sigmoid(theta_logits)?;
        let theta_pk = sess.tape.clamp(theta_pk, THETA_CLAMP, 1.0 - THETA_CLAMP)?;
        let theta = sess.tape.transpose(theta_pk)?;

        Ok(ForwardVars { node_probs, alpha, theta })
    }

    /// Edge NLL and summed node cross-entropy of one sample, masked to the
    /// valid target nodes.
    fn sample_loss(
        &self,
        sess: &mut Session,
        sample: &CggnSample,
    ) -> Result<(Var, Var)> {
        let input = CggnInput::from_sample(sample);
        let state = init_graph_state(&input, &self.cfg)?;
        let fwd = self.run_forward(sess, &state)?;

        // valid rows come first, so their candidate pairs form a prefix
        let n_obs = state.n_obs;
        let n_valid_pairs: usize = (0..sample.valid_count).map(|t| n_obs + t).sum();
        let mut labels = Vec::with_capacity(n_valid_pairs);
        for t in 0..sample.valid_count {
            labels.extend(sample.target_edge_rows[t].iter().copied());
        }
        debug_assert_eq!(labels.len(), n_valid_pairs);
        let theta_valid = sess.tape.slice_cols(fwd.theta, 0, n_valid_pairs)?;
        let edge_nll = mixture_bernoulli_nll(&mut sess.tape, fwd.alpha, theta_valid, &labels)?;

        let mut node_ce = sess.tape.scalar(0.0)?;
        for t in 0..sample.valid_count {
            let row = sess.tape.row(fwd.node_probs, t)?;
            // log of a softmax row; the floor guards against underflow once
            // the model saturates
            let row = sess.tape.clamp(row, 1e-300, 1.0)?;
            let logit_like = sess.tape.log(row)?;
            let ce = cross_entropy(&mut sess.tape, logit_like, sample.target_classes[t])?;
            node_ce = sess.tape.add(node_ce, ce)?;
        }
        Ok((edge_nll, node_ce))
    }

    /// Loss values of a single sample without touching gradients.
    pub fn losses(&self, sample: &CggnSample) -> Result<(f64, f64)> {
        let mut sess = Session::new(&self.params);
        let (e, n) = self.sample_loss(&mut sess, sample)?;
        Ok((sess.tape.value(e), sess.tape.value(n)))
    }

    /// One backward pass over a single sample without an optimizer step:
    /// gradients of the total loss accumulate into the parameter set.
    /// Gradient-check suites diff this against finite differences.
    pub fn loss_grads(&mut self, sample: &CggnSample) -> Result<f64> {
        let grads = {
            let mut sess = Session::new(&self.params);
            let (e, n) = self.sample_loss(&mut sess, sample)?;
            let total = sess.tape.add(e, n)?;
            if !sess.tape.value(total).is_finite() {
                return Err(Error::Diverged("cggn loss is not finite".into()));
            }
            let value = sess.tape.value(total);
            (value, sess.backward(total)?)
        };
        self.params.accumulate_grads(&grads.1)?;
        Ok(grads.0)
    }

    /// One optimizer step over a batch; returns (mean edge NLL, mean node CE).
    pub fn train_step(&mut self, batch: &[CggnSample], adam: &mut AdamState) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty training batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let (mut edge_total, mut node_total) = (0.0, 0.0);
        for sample in batch {
            let grads = {
                let mut sess = Session::new(&self.params);
                let (e, n) = self.sample_loss(&mut sess, sample)?;
                edge_total += sess.tape.value(e) * scale;
                node_total += sess.tape.value(n) * scale;
                let total = sess.tape.add(e, n)?;
                let total = sess.tape.scale(total, scale)?;
                if !sess.tape.value(total).is_finite() {
                    return Err(Error::Diverged("cggn loss is not finite".into()));
                }
                sess.backward(total)?
            };
            self.params.accumulate_grads(&grads)?;
        }
        adam.step(&mut self.params)?;
        Ok((edge_total, node_total))
    }

    /// Forward pass plus mode-of-`n_samples` adjacency sampling; the subgoal
    /// is the class distribution of the first generated node.
    pub fn generate_trajectory<R: Rng>(
        &self,
        input: &CggnInput,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<TrajectoryPrediction> {
        let state = init_graph_state(input, &self.cfg)?;
        let mut sess = Session::new(&self.params);
        let fwd = self.run_forward(&mut sess, &state)?;

        let node_probs: Vec<Vec<f64>> = (0..self.cfg.block)
            .map(|t| sess.tape.data(fwd.node_probs)[t * NUM_CLASSES..(t + 1) * NUM_CLASSES].to_vec())
            .collect();
        let alpha = sess.tape.data(fwd.alpha).to_vec();
        let n_pairs = state.candidates.len();
        let theta: Vec<Vec<f64>> = (0..self.cfg.mixture_k)
            .map(|k| sess.tape.data(fwd.theta)[k * n_pairs..(k + 1) * n_pairs].to_vec())
            .collect();

        let bits = sample_mode(&alpha, &theta, n_samples, rng)?;
        let mut sampled_adjacency = Vec::with_capacity(self.cfg.block);
        let mut off = 0;
        for t in 0..self.cfg.block {
            let w = state.n_obs + t;
            sampled_adjacency.push(bits[off..off + w].to_vec());
            off += w;
        }
        let subgoal = node_probs[0].clone();
        Ok(TrajectoryPrediction { node_probs, alpha, theta, sampled_adjacency, subgoal })
    }
}

/// Draw `n_samples` adjacencies from the mixture (component k ~ alpha, then
/// independent Bernoullis) and keep the per-edge majority; exact ties count
/// as present.
pub fn sample_mode<R: Rng>(
    alpha: &[f64],
    theta: &[Vec<f64>],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<bool>> {
    if alpha.len() != theta.len() || alpha.is_empty() || n_samples == 0 {
        return Err(Error::InvalidArgument("sample_mode: bad mixture shape".into()));
    }
    let n_pairs = theta[0].len();
    let mut counts = vec![0usize; n_pairs];
    for _ in 0..n_samples {
        let mut u: f64 = rng.gen();
        let mut k = alpha.len() - 1;
        for (i, &a) in alpha.iter().enumerate() {
            if u < a {
                k = i;
                break;
            }
            u -= a;
        }
        for (c, &p) in counts.iter_mut().zip(&theta[k]) {
            if rng.gen::<f64>() < p {
                *c += 1;
            }
        }
    }
    Ok(counts.iter().map(|&c| 2 * c >= n_samples).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryPrediction {
    /// B class distributions, one per generated node.
    pub node_probs: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    /// K rows of per-candidate edge probabilities.
    pub theta: Vec<Vec<f64>>,
    /// Majority-vote adjacency rows; row t spans the observed nodes plus the
    /// earlier generated nodes.
    pub sampled_adjacency: Vec<Vec<bool>>,
    pub subgoal: Vec<f64>,
}

impl TrajectoryPrediction {
    /// Generated nodes that ended up with at least one sampled incident edge.
    pub fn active_nodes(&self) -> Vec<usize> {
        let b = self.sampled_adjacency.len();
        let n_obs = self.sampled_adjacency[0].len();
        (0..b)
            .filter(|&t| {
                self.sampled_adjacency[t].iter().any(|&x| x)
                    || (t + 1..b).any(|s| self.sampled_adjacency[s][n_obs + t])
            })
            .collect()
    }
}
