//! Synthetic building environments: typed room-connectivity graphs with
//! geometry, trajectory enumeration, and dataset sampling for the prediction
//! and navigation stages.

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed 30-class room vocabulary.
pub const ROOM_CLASS_NAMES: [&str; 30] = [
    "bedroom", "hallway", "bathroom", "office", "kitchen", "living_room", "dining_room",
    "closet", "stairs", "entryway", "toilet", "laundry", "garage", "balcony", "lounge",
    "library", "gym", "utility", "meeting_room", "classroom", "lobby", "workshop", "porch",
    "family_room", "bar", "spa", "storage", "terrace", "studio", "other",
];

pub const NUM_CLASSES: usize = 30;

/// Room class, an index into the fixed vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoomClass(pub usize);

impl RoomClass {
    pub fn new(id: usize) -> Result<Self> {
        if id >= NUM_CLASSES {
            return Err(Error::IndexOutOfRange { index: id, len: NUM_CLASSES });
        }
        Ok(RoomClass(id))
    }

    pub fn name(&self) -> &'static str {
        ROOM_CLASS_NAMES[self.0]
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; NUM_CLASSES];
        v[self.0] = 1.0;
        v
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Room {
    pub id: usize,
    pub class: RoomClass,
    pub pos: [f64; 3],
}

/// Ground-truth environment: typed rooms plus undirected traversability
/// edges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoomGraph {
    pub id: String,
    pub rooms: Vec<Room>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl RoomGraph {
    pub fn n_rooms(&self) -> usize {
        self.rooms.len()
    }

    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<()> {
        if a == b {
            return Err(Error::InvalidArgument(format!("self-loop at room {a}")));
        }
        if a >= self.rooms.len() || b >= self.rooms.len() {
            return Err(Error::IndexOutOfRange { index: a.max(b), len: self.rooms.len() });
        }
        self.edges.insert((a.min(b), a.max(b)));
        Ok(())
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Sorted neighbor list.
    pub fn neighbors(&self, room: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == room {
                    Some(b)
                } else if b == room {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// BFS graph distances from `start` (None = unreachable).
    pub fn bfs_distances(&self, start: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.rooms.len()];
        let mut adj = vec![Vec::new(); self.rooms.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut q = VecDeque::new();
        dist[start] = Some(0);
        q.push_back(start);
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(dist[u].unwrap() + 1);
                    q.push_back(v);
                }
            }
        }
        dist
    }

    pub fn class_of(&self, room: usize) -> RoomClass {
        self.rooms[room].class
    }

    /// Structural validation: dense ids, no self-loops, connected.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rooms.iter().enumerate() {
            if r.id != i {
                return Err(Error::Dataset(format!("room ids not dense at index {i}")));
            }
        }
        for &(a, b) in &self.edges {
            if a == b {
                return Err(Error::Dataset(format!("self-loop at room {a}")));
            }
            if a > b {
                return Err(Error::Dataset(format!("edge ({a},{b}) not canonically ordered")));
            }
            if b >= self.rooms.len() {
                return Err(Error::Dataset(format!("edge ({a},{b}) out of range")));
            }
        }
        if !self.rooms.is_empty() {
            let reachable = self.bfs_distances(0).iter().filter(|d| d.is_some()).count();
            if reachable != self.rooms.len() {
                return Err(Error::Dataset(format!(
                    "graph `{}` disconnected: {} of {} rooms reachable",
                    self.id,
                    reachable,
                    self.rooms.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldgenParams {
    pub n_rooms_min: usize,
    pub n_rooms_max: usize,
    /// Extra (non-tree) edges per room over the spanning tree, so average
    /// degree lands near 2 + extra_edge_fraction.
    pub extra_edge_fraction: f64,
    /// Power-law exponent for the skewed room-class distribution.
    pub class_skew: f64,
    /// Grid cell pitch in meters.
    pub cell_size: f64,
}

impl Default for WorldgenParams {
    fn default() -> Self {
        WorldgenParams {
            n_rooms_min: 5,
            n_rooms_max: 30,
            extra_edge_fraction: 0.5,
            class_skew: 1.2,
            cell_size: 4.0,
        }
    }
}

impl WorldgenParams {
    fn check(&self) -> Result<()> {
        if self.n_rooms_min < 2 || self.n_rooms_max < self.n_rooms_min {
            return Err(Error::InvalidArgument(format!(
                "invalid room range [{}, {}]",
                self.n_rooms_min, self.n_rooms_max
            )));
        }
        if self.extra_edge_fraction < 0.0 || !self.extra_edge_fraction.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid extra_edge_fraction {}",
                self.extra_edge_fraction
            )));
        }
        if self.cell_size <= 0.0 {
            return Err(Error::InvalidArgument(format!("invalid cell_size {}", self.cell_size)));
        }
        Ok(())
    }
}

/// Draw a room class from the skewed (power-law) vocabulary distribution.
pub fn sample_room_class<R: Rng>(rng: &mut R, skew: f64) -> RoomClass {
    let weights: Vec<f64> = (0..NUM_CLASSES).map(|k| ((k + 1) as f64).powf(-skew)).collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        x -= w;
        if x <= 0.0 {
            return RoomClass(k);
        }
    }
    RoomClass(NUM_CLASSES - 1)
}

/// Grow a spanning tree of rooms on a 2-D grid, jitter centroids into 3-D,
/// then add extra edges between geometrically adjacent rooms.
pub fn generate_environment<R: Rng>(
    env_id: &str,
    rng: &mut R,
    params: &WorldgenParams,
) -> Result<RoomGraph> {
    params.check()?;
    let n = rng.gen_range(params.n_rooms_min..=params.n_rooms_max);

    let mut cell_of: Vec<(i64, i64)> = Vec::with_capacity(n);
    let mut occupied: HashMap<(i64, i64), usize> = HashMap::new();
    let mut g = RoomGraph { id: env_id.to_string(), rooms: Vec::new(), edges: BTreeSet::new() };

    let place = |cell: (i64, i64), rng: &mut R, params: &WorldgenParams| -> [f64; 3] {
        [
            cell.0 as f64 * params.cell_size + rng.gen_range(-0.5..0.5),
            cell.1 as f64 * params.cell_size + rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.2..0.2),
        ]
    };

    let origin = (0i64, 0i64);
    g.rooms.push(Room { id: 0, class: sample_room_class(rng, params.class_skew), pos: place(origin, rng, params) });
    cell_of.push(origin);
    occupied.insert(origin, 0);

    const DIRS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    while g.rooms.len() < n {
        // pick a random placed room with a free adjacent cell
        let mut frontier: Vec<(usize, (i64, i64))> = Vec::new();
        for (room, &cell) in cell_of.iter().enumerate() {
            for d in DIRS {
                let c = (cell.0 + d.0, cell.1 + d.1);
                if !occupied.contains_key(&c) {
                    frontier.push((room, c));
                }
            }
        }
        let &(parent, cell) = frontier
            .choose(rng)
            .ok_or_else(|| Error::InvalidArgument("grid growth exhausted".into()))?;
        let id = g.rooms.len();
        g.rooms.push(Room { id, class: sample_room_class(rng, params.class_skew), pos: place(cell, rng, params) });
        cell_of.push(cell);
        occupied.insert(cell, id);
        g.add_edge(parent, id)?;
    }

    // extra edges between grid-adjacent rooms that the tree missed
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for (room, &cell) in cell_of.iter().enumerate() {
        for d in DIRS {
            if let Some(&other) = occupied.get(&(cell.0 + d.0, cell.1 + d.1)) {
                if other > room && !g.has_edge(room, other) {
                    candidates.push((room, other));
                }
            }
        }
    }
    candidates.sort_unstable();
    candidates.dedup();
    candidates.shuffle(rng);
    let n_extra = ((params.extra_edge_fraction * n as f64) / 2.0).round() as usize;
    for &(a, b) in candidates.iter().take(n_extra) {
        g.add_edge(a, b)?;
    }

    g.validate()?;
    Ok(g)
}

/// Split environment ids into train/val/test by ratio, deterministically
/// under the provided rng.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

pub fn split_environments<R: Rng>(
    env_ids: &[String],
    ratios: (f64, f64, f64),
    rng: &mut R,
) -> Result<Splits> {
    let sum = ratios.0 + ratios.1 + ratios.2;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios sum to {sum}, expected 1")));
    }
    let n = env_ids.len();
    let mut ids: Vec<String> = env_ids.to_vec();
    ids.shuffle(rng);
    // floor each split, then hand out remainders by largest fractional part
    let raw = [ratios.0 * n as f64, ratios.1 * n as f64, ratios.2 * n as f64];
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut rem: Vec<(usize, f64)> = raw
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r - r.floor()))
        .collect();
    rem.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut leftover = n - counts.iter().sum::<usize>();
    for (i, _) in rem {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("empty split with counts {counts:?}")));
    }
    let val_start = counts[0];
    let test_start = counts[0] + counts[1];
    Ok(Splits {
        train: ids[..val_start].to_vec(),
        val: ids[val_start..test_start].to_vec(),
        test: ids[test_start..].to_vec(),
    })
}

/// Every loop-free path from `start` to `end` with at most `max_len` edges,
/// in lexicographic order.
pub fn enumerate_simple_paths(
    g: &RoomGraph,
    start: usize,
    end: usize,
    max_len: usize,
) -> Vec<Vec<usize>> {
    let n = g.n_rooms();
    if start >= n || end >= n {
        return Vec::new();
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in &g.edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    for l in &mut adj {
        l.sort_unstable();
    }
    let mut out = Vec::new();
    let mut path = vec![start];
    let mut visited = vec![false; n];
    visited[start] = true;
    dfs_paths(&adj, end, max_len, &mut path, &mut visited, &mut out);
    out
}

fn dfs_paths(
    adj: &[Vec<usize>],
    end: usize,
    max_len: usize,
    path: &mut Vec<usize>,
    visited: &mut [bool],
    out: &mut Vec<Vec<usize>>,
) {
    let cur = *path.last().unwrap();
    if cur == end {
        out.push(path.clone());
        return;
    }
    if path.len() > max_len {
        return;
    }
    for &next in &adj[cur] {
        if !visited[next] {
            visited[next] = true;
            path.push(next);
            dfs_paths(adj, end, max_len, path, visited, out);
            path.pop();
            visited[next] = false;
        }
    }
}

/// Training sample for trajectory-graph prediction: an observed path prefix
/// plus the masked target suffix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CggnSample {
    pub env_id: String,
    /// Room ids along the observed prefix, in discovery order.
    pub obs_rooms: Vec<usize>,
    /// Class id per observed room.
    pub obs_classes: Vec<usize>,
    /// Lower-triangular adjacency rows over the observed nodes (row i has i
    /// bits, one per earlier node).
    pub obs_adj: Vec<Vec<bool>>,
    /// Destination class id (one-hot `d` downstream).
    pub destination: usize,
    /// Target class ids, padded with 0 beyond `valid_count`.
    pub target_classes: Vec<usize>,
    /// Room ids behind the targets (same padding), kept for evaluation.
    pub target_rooms: Vec<usize>,
    /// Lower-triangular rows for each target node over [observed nodes +
    /// earlier targets]; row j has obs_len + j bits.
    pub target_edge_rows: Vec<Vec<bool>>,
    pub valid_count: usize,
}

impl CggnSample {
    pub fn obs_len(&self) -> usize {
        self.obs_rooms.len()
    }

    /// Reassemble observation + valid targets into the room sequence.
    pub fn full_path(&self) -> Vec<usize> {
        let mut p = self.obs_rooms.clone();
        p.extend(&self.target_rooms[..self.valid_count]);
        p
    }
}

pub const GENERATED_BLOCK: usize = 5;

/// Sample one trajectory-prediction example: pick start and end rooms, pick a
/// simple path between them, then split it into an observed prefix and a
/// target suffix of at most `block` nodes.
pub fn sample_cggn_example<R: Rng>(
    g: &RoomGraph,
    rng: &mut R,
    max_len: usize,
    block: usize,
) -> Result<CggnSample> {
    if g.n_rooms() < 2 {
        return Err(Error::Dataset(format!("environment `{}` has < 2 rooms", g.id)));
    }
    for _attempt in 0..64 {
        let start = rng.gen_range(0..g.n_rooms());
        let end = rng.gen_range(0..g.n_rooms());
        if start == end {
            continue;
        }
        let paths = enumerate_simple_paths(g, start, end, max_len);
        if paths.is_empty() {
            continue;
        }
        let path = paths[rng.gen_range(0..paths.len())].clone();
        let len = path.len();
        // observed prefix keeps the start; suffix is 1..=block nodes
        let min_obs = len.saturating_sub(block).max(1);
        let obs_len = rng.gen_range(min_obs..=len - 1);
        return Ok(build_sample(g, &path, obs_len, block));
    }
    Err(Error::Dataset(format!("could not sample a trajectory in `{}`", g.id)))
}

/// Deterministically build a training sample from a chosen simple path and
/// observed-prefix length.
pub fn build_sample(g: &RoomGraph, path: &[usize], obs_len: usize, block: usize) -> CggnSample {
    let len = path.len();
    let valid = len - obs_len;
    debug_assert!(valid >= 1 && valid <= block);
    let obs_rooms = path[..obs_len].to_vec();
    let obs_classes = obs_rooms.iter().map(|&r| g.class_of(r).0).collect();
    let mut obs_adj = Vec::with_capacity(obs_len);
    for i in 0..obs_len {
        let mut row = vec![false; i];
        if i > 0 {
            row[i - 1] = true; // path prefix is a chain
        }
        obs_adj.push(row);
    }
    let mut target_classes = vec![0usize; block];
    let mut target_rooms = vec![0usize; block];
    let mut target_edge_rows = Vec::with_capacity(block);
    for j in 0..block {
        let mut row = vec![false; obs_len + j];
        if j < valid {
            let room = path[obs_len + j];
            target_classes[j] = g.class_of(room).0;
            target_rooms[j] = room;
            row[obs_len + j - 1] = true; // link to the previous path node
        }
        target_edge_rows.push(row);
    }
    CggnSample {
        env_id: g.id.clone(),
        obs_rooms,
        obs_classes,
        obs_adj,
        destination: g.class_of(*path.last().unwrap()).0,
        target_classes,
        target_rooms,
        target_edge_rows,
        valid_count: valid,
    }
}

/// One navigation episode specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavPair {
    pub env_id: String,
    pub start_room: usize,
    pub goal_class: RoomClass,
}

/// All admissible (start, goal-class) pairs for an environment: the goal
/// class must exist somewhere else and differ from the start room's class.
pub fn admissible_nav_pairs(g: &RoomGraph) -> Vec<NavPair> {
    let mut out = Vec::new();
    let classes: BTreeSet<usize> = g.rooms.iter().map(|r| r.class.0).collect();
    for start in 0..g.n_rooms() {
        for &c in &classes {
            if c == g.class_of(start).0 {
                continue;
            }
            out.push(NavPair {
                env_id: g.id.clone(),
                start_room: start,
                goal_class: RoomClass(c),
            });
        }
    }
    out
}

/// Draw `count` pairs without replacement across the given environments.
pub fn sample_nav_pairs<R: Rng>(
    envs: &[&RoomGraph],
    count: usize,
    rng: &mut R,
) -> Result<Vec<NavPair>> {
    let mut pool: Vec<NavPair> = envs.iter().flat_map(|g| admissible_nav_pairs(g)).collect();
    if pool.len() < count {
        return Err(Error::Dataset(format!(
            "requested {count} navigation pairs but only {} available",
            pool.len()
        )));
    }
    pool.shuffle(rng);
    pool.truncate(count);
    Ok(pool)
}
