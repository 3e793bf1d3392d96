//! Online multi-level scene graph: camera nodes are inserted per observation,
//! localized into room nodes by a pairwise scorer, and the room level is
//! exported as the observation graph consumed by trajectory prediction.
//!
//! The graph is append-only: cameras are never re-assigned once localized.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception::{LocalizerModel, Observation};
use crate::worldgen::RoomGraph;

/// Pairwise same-room scorer used to localize new cameras.
pub trait PairScorer {
    /// Same-room probability in [0, 1].
    fn score(&self, a: &Observation, b: &Observation) -> Result<f64>;
}

impl PairScorer for LocalizerModel {
    fn score(&self, a: &Observation, b: &Observation) -> Result<f64> {
        self.score_pair(a, b)
    }
}

/// Oracle scorer for tests and upper-bound runs: two cameras are scored 1.0
/// exactly when their nearest room centroids coincide. Camera poses are drawn
/// within 1 m of a centroid and centroids sit several metres apart, so the
/// nearest-centroid assignment is exact.
pub struct PerfectLocalizer {
    centroids: Vec<[f64; 3]>,
}

impl PerfectLocalizer {
    pub fn from_env(g: &RoomGraph) -> Self {
        PerfectLocalizer { centroids: g.rooms.iter().map(|r| r.pos).collect() }
    }

    fn nearest(&self, p: &[f64; 3]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, c) in self.centroids.iter().enumerate() {
            let d2: f64 = p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        best.1
    }
}

impl PairScorer for PerfectLocalizer {
    fn score(&self, a: &Observation, b: &Observation) -> Result<f64> {
        Ok(if self.nearest(&a.position) == self.nearest(&b.position) { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoomNode {
    /// Fused class belief over the 30 room classes.
    pub class_probs: Vec<f64>,
    /// Cameras assigned to this room, in insertion order.
    pub cameras: Vec<usize>,
    pub discovery_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraNode {
    pub observation: Observation,
    /// Room assignment; `None` until localized.
    pub room: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneGraph {
    pub building_id: String,
    pub rooms: Vec<RoomNode>,
    pub cameras: Vec<CameraNode>,
    /// Unordered room pairs, stored as (min, max).
    pub room_edges: BTreeSet<(usize, usize)>,
    /// Traversal links between consecutive cameras.
    pub camera_edges: Vec<(usize, usize)>,
    /// Optional localization pre-filter: skip camera pairs further apart than
    /// this many metres. `None` compares against every camera.
    pub max_pair_distance: Option<f64>,
}

/// Room-level view: class beliefs in discovery order plus a lower-triangular
/// adjacency (row i holds columns 0..i).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationGraph {
    pub nodes: Vec<Vec<f64>>,
    pub adjacency: Vec<Vec<bool>>,
}

impl ObservationGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let (lo, hi) = (i.min(j), i.max(j));
        lo != hi && self.adjacency[hi][lo]
    }
}

impl SceneGraph {
    pub fn new(building_id: impl Into<String>) -> Self {
        SceneGraph {
            building_id: building_id.into(),
            rooms: Vec::new(),
            cameras: Vec::new(),
            room_edges: BTreeSet::new(),
            camera_edges: Vec::new(),
            max_pair_distance: None,
        }
    }

    /// Append a camera node, optionally linked to the camera it was reached
    /// from.
    pub fn insert_camera(&mut self, obs: Observation, came_from: Option<usize>) -> Result<usize> {
        if let Some(p) = came_from {
            if p >= self.cameras.len() {
                return Err(Error::IndexOutOfRange { index: p, len: self.cameras.len() });
            }
        }
        let id = self.cameras.len();
        self.cameras.push(CameraNode { observation: obs, room: None });
        if let Some(p) = came_from {
            self.camera_edges.push((p, id));
        }
        Ok(id)
    }

    /// Assign a camera to a room: the best-scoring existing camera wins if its
    /// score exceeds 0.5, otherwise a new room is created. Assigning to an
    /// existing room fuses the observation into the room's class belief; a
    /// traversal from a camera in a different room adds a room edge.
    pub fn localize_camera(&mut self, camera: usize, scorer: &dyn PairScorer) -> Result<usize> {
        if camera >= self.cameras.len() {
            return Err(Error::IndexOutOfRange { index: camera, len: self.cameras.len() });
        }
        if self.cameras[camera].room.is_some() {
            return Err(Error::InvalidArgument(format!("camera {camera} is already localized")));
        }
        let obs = self.cameras[camera].observation.clone();

        let mut best: Option<(f64, usize)> = None;
        for cand in self.cameras.iter() {
            let Some(room) = cand.room else { continue };
            if let Some(max_d) = self.max_pair_distance {
                let d2: f64 = obs
                    .position
                    .iter()
                    .zip(&cand.observation.position)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                if d2 > max_d * max_d {
                    continue;
                }
            }
            let s = scorer.score(&obs, &cand.observation)?;
            if best.map_or(true, |(bs, _)| s > bs) {
                best = Some((s, room));
            }
        }

        let room = match best {
            Some((s, r)) if s > 0.5 => {
                let fused = fuse_room_probs(&self.rooms[r].class_probs, &obs.class_probs)?;
                self.rooms[r].class_probs = fused;
                self.rooms[r].cameras.push(camera);
                r
            }
            _ => {
                let r = self.rooms.len();
                self.rooms.push(RoomNode {
                    class_probs: obs.class_probs.clone(),
                    cameras: vec![camera],
                    discovery_index: r,
                });
                r
            }
        };
        self.cameras[camera].room = Some(room);

        // a traversal between rooms materializes a room-level edge
        for &(a, b) in &self.camera_edges {
            if b != camera {
                continue;
            }
            if let Some(pr) = self.cameras[a].room {
                if pr != room {
                    self.room_edges.insert((pr.min(room), pr.max(room)));
                }
            }
        }
        Ok(room)
    }

    /// Insert and localize in one step.
    pub fn observe(
        &mut self,
        obs: Observation,
        came_from: Option<usize>,
        scorer: &dyn PairScorer,
    ) -> Result<(usize, usize)> {
        let cam = self.insert_camera(obs, came_from)?;
        let room = self.localize_camera(cam, scorer)?;
        Ok((cam, room))
    }

    pub fn export_observation_graph(&self) -> Result<ObservationGraph> {
        if self.rooms.is_empty() {
            return Err(Error::InvalidArgument("scene graph has no room nodes".into()));
        }
        let n = self.rooms.len();
        let nodes = self.rooms.iter().map(|r| r.class_probs.clone()).collect();
        let mut adjacency: Vec<Vec<bool>> = (0..n).map(|i| vec![false; i]).collect();
        for &(a, b) in &self.room_edges {
            adjacency[b][a] = true;
        }
        Ok(ObservationGraph { nodes, adjacency })
    }
}

/// Bayesian class-belief update: normalize(prior ∘ obs).
pub fn fuse_room_probs(prior: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
    check_distribution(prior)?;
    check_distribution(obs)?;
    if prior.len() != obs.len() {
        return Err(Error::ShapeMismatch {
            op: "fuse_room_probs",
            lhs: vec![prior.len()],
            rhs: vec![obs.len()],
        });
    }
    let product: Vec<f64> = prior.iter().zip(obs).map(|(p, q)| p * q).collect();
    let z: f64 = product.iter().sum();
    if z <= 0.0 {
        return Err(Error::InvalidArgument(
            "fuse_room_probs: product is all-zero (contradictory certainties)".into(),
        ));
    }
    Ok(product.iter().map(|v| v / z).collect())
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::NotADistribution { sum, tol: 1e-6 });
    }
    Ok(())
}
