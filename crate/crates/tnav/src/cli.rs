//! Command-line orchestration: dataset generation, training pipelines,
//! evaluation and ablation tables, with one JSON configuration document,
//! dotted-key overrides, and a master seed fanned out to named sub-streams.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::agents::{train_student_forcing, AgentSetup, InformedConfig, PolicyConfig, PolicyModel};
use crate::cggn::{CggnConfig, CggnModel};
use crate::error::{Error, Result};
use crate::eval::{
    eval_graph_prediction, evaluate_agent, run_ablation, summarize, AblationContext,
};
use crate::mapping::{PerfectLocalizer, SceneGraph};
use crate::numerics::AdamState;
use crate::perception::{make_pair_dataset, train_localizer, LocalizerConfig, Observer, ObserverConfig};
use crate::rng;
use crate::worldgen::{
    generate_environment, sample_cggn_example, sample_nav_pairs, split_environments, CggnSample,
    NavPair, RoomGraph, Splits, WorldgenParams,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATASET: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_CHECKPOINT: i32 = 5;

/// Map an error to the documented process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Json(_) => EXIT_CONFIG,
        Error::Dataset(_) | Error::Io(_) => EXIT_DATASET,
        Error::Diverged(_) => EXIT_DIVERGED,
        Error::Checkpoint(_) => EXIT_CHECKPOINT,
        _ => 1,
    }
}

// ---------------------------------------------------------------------------
// Configuration document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Subdirectories under the `--out` root.
    pub env_dir: String,
    pub checkpoint_dir: String,
    pub report_dir: String,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            env_dir: "envs".into(),
            checkpoint_dir: "checkpoints".into(),
            report_dir: "reports".into(),
        }
    }
}

/// Agent configuration as a flat section so overrides read naturally
/// (`--agent.max_steps=50`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub hidden: usize,
    pub lr: f64,
    /// Graph attention on (Full) or off (Baseline).
    pub use_graph: bool,
    pub use_subgoal: bool,
    pub use_perception_gate: bool,
    pub use_map: bool,
    pub topk: usize,
    pub max_steps: usize,
    /// Student-forcing training episodes.
    pub episodes: usize,
}

impl Default for AgentSection {
    fn default() -> Self {
        let p = PolicyConfig::desk();
        let i = InformedConfig::default();
        AgentSection {
            hidden: p.hidden,
            lr: p.lr,
            use_graph: true,
            use_subgoal: i.use_subgoal,
            use_perception_gate: i.use_perception_gate,
            use_map: i.use_map,
            topk: i.topk,
            max_steps: i.max_steps,
            episodes: 1500,
        }
    }
}

impl AgentSection {
    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig { hidden: self.hidden, lr: self.lr }
    }

    pub fn informed(&self) -> InformedConfig {
        InformedConfig {
            use_subgoal: self.use_subgoal,
            use_perception_gate: self.use_perception_gate,
            use_map: self.use_map,
            topk: self.topk,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Balanced same/different localizer training pairs.
    pub localizer_pairs: usize,
    /// Pre-sampled trajectory-graph training examples.
    pub cggn_samples: usize,
    /// Maximum full-path length (edges) when sampling trajectory examples.
    pub cggn_path_len: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { localizer_pairs: 1200, cggn_samples: 600, cggn_path_len: 7 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Navigation episodes per evaluation run.
    pub episodes: usize,
    /// Held-out trajectory-graph samples for the prediction protocol.
    pub cggn_samples: usize,
    /// Adjacency draws for mode-of-samples.
    pub n_draws: usize,
    /// Training seeds averaged in the ablation table.
    pub seeds: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { episodes: 200, cggn_samples: 80, n_draws: 100, seeds: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    /// Environment count and split ratios (normalized to sum 1).
    pub n_envs: usize,
    pub split: [f64; 3],
    pub worldgen: WorldgenParams,
    pub observer: ObserverConfig,
    pub localizer: LocalizerConfig,
    pub cggn: CggnConfig,
    pub agent: AgentSection,
    pub data: DataSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 17,
            paths: Paths::default(),
            n_envs: 90,
            split: [61.0, 11.0, 18.0],
            worldgen: WorldgenParams::default(),
            observer: ObserverConfig::default(),
            localizer: LocalizerConfig::default(),
            cggn: CggnConfig::desk(),
            agent: AgentSection::default(),
            data: DataSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn split_ratios(&self) -> Result<(f64, f64, f64)> {
        let s: f64 = self.split.iter().sum();
        if !(s > 0.0) || self.split.iter().any(|&r| r < 0.0) {
            return Err(Error::Config(format!("invalid split ratios {:?}", self.split)));
        }
        Ok((self.split[0] / s, self.split[1] / s, self.split[2] / s))
    }
}

/// Load the configuration document, apply dotted-key overrides, and
/// materialize all defaults. Unknown keys anywhere are rejected.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
    seed: Option<u64>,
) -> Result<RunConfig> {
    let mut doc: serde_json::Value = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?
        }
        None => serde_json::to_value(RunConfig::default())?,
    };
    for (key, raw) in overrides {
        apply_override(&mut doc, key, raw)?;
    }
    // filling in defaults for any omitted sections happens here; unknown
    // keys are rejected by the deny_unknown_fields annotations
    let mut cfg: RunConfig = serde_json::from_value(doc)
        .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_override(doc: &mut serde_json::Value, dotted: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{dotted}`")));
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(*part))
            .ok_or_else(|| Error::Config(format!("unknown config section `{part}` in `{dotted}`")))?;
    }
    let leaf = parts[parts.len() - 1];
    let map = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("`{dotted}` does not address an object field")))?;
    // values parse as JSON when they can (numbers, booleans, arrays) and
    // fall back to plain strings
    let value = serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    map.insert(leaf.to_string(), value);
    Ok(())
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    /// Content hash over the input artifacts this run consumed.
    pub input_hash: String,
    pub wall_clock_secs: f64,
    pub summary: serde_json::Value,
}

fn write_manifest(
    dir: &Path,
    name: &str,
    command: &str,
    cfg: &RunConfig,
    input_hash: &str,
    started: Instant,
    summary: serde_json::Value,
) -> Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        config: cfg.clone(),
        input_hash: input_hash.to_string(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        summary,
    };
    // write-then-rename so a manifest is never observed half-written
    let tmp = dir.join(format!("{name}.tmp"));
    fs::write(&tmp, serde_json::to_string_pretty(&manifest)?)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path)
        .map_err(|_| Error::Checkpoint(format!("missing manifest {}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("corrupt manifest {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Workspace layout helpers
// ---------------------------------------------------------------------------

pub struct Workspace {
    pub envs: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Workspace {
    pub fn new(out: &Path, paths: &Paths) -> Result<Self> {
        let ws = Workspace {
            envs: out.join(&paths.env_dir),
            checkpoints: out.join(&paths.checkpoint_dir),
            reports: out.join(&paths.report_dir),
        };
        fs::create_dir_all(&ws.envs)?;
        fs::create_dir_all(&ws.checkpoints)?;
        fs::create_dir_all(&ws.reports)?;
        Ok(ws)
    }

    /// Hash of the split manifest; training and evaluation stamp it into
    /// their manifests so stale checkpoints are caught.
    pub fn env_hash(&self) -> Result<String> {
        let bytes = fs::read(self.envs.join("splits.json"))
            .map_err(|_| Error::Dataset("no environments generated yet (run gen-envs)".into()))?;
        Ok(rng::content_hash(&bytes))
    }

    pub fn load_splits(&self) -> Result<Splits> {
        let text = fs::read_to_string(self.envs.join("splits.json"))
            .map_err(|_| Error::Dataset("no environments generated yet (run gen-envs)".into()))?;
        serde_json::from_str(&text).map_err(Error::from)
    }

    pub fn load_env(&self, id: &str) -> Result<RoomGraph> {
        let path = self.envs.join(format!("{id}.json"));
        let text = fs::read_to_string(&path)
            .map_err(|_| Error::Dataset(format!("missing environment file {}", path.display())))?;
        let g: RoomGraph = serde_json::from_str(&text)?;
        g.validate()?;
        Ok(g)
    }

    pub fn load_split_envs(&self, ids: &[String]) -> Result<Vec<RoomGraph>> {
        ids.iter().map(|id| self.load_env(id)).collect()
    }

    fn checkpoint_and_manifest(&self, stem: &str, env_hash: &str) -> Result<PathBuf> {
        let ckpt = self.checkpoints.join(format!("{stem}.tnav1"));
        if !ckpt.exists() {
            return Err(Error::Checkpoint(format!("missing checkpoint {}", ckpt.display())));
        }
        let manifest = read_manifest(&self.checkpoints.join(format!("{stem}.manifest.json")))?;
        if manifest.input_hash != env_hash {
            return Err(Error::Checkpoint(format!(
                "checkpoint {stem} was trained against different environments \
                 (hash {} vs {env_hash})",
                manifest.input_hash
            )));
        }
        Ok(ckpt)
    }
}

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "tnav", about = "Topological navigation lab", version)]
pub struct Cli {
    /// JSON configuration document; defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration document.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Dotted-key configuration override, e.g. `--set agent.max_steps=50`.
    /// The shorthand `--agent.max_steps=50` is accepted as well.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic building environments and the train/val/test split.
    GenEnvs,
    /// Train a model and write a checkpoint.
    Train {
        #[command(subcommand)]
        what: TrainWhat,
    },
    /// Evaluate checkpoints and write metric reports.
    Eval {
        #[command(subcommand)]
        what: EvalWhat,
    },
}

#[derive(Debug, Subcommand)]
pub enum TrainWhat {
    /// Same-room pair scorer over observations.
    Localizer,
    /// Conditional trajectory-graph generator.
    Cggn {
        /// Override the configured iteration count (smoke runs).
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Navigation policy via student forcing.
    Agent,
}

#[derive(Debug, Subcommand)]
pub enum EvalWhat {
    /// Node/edge prediction protocol on held-out environments.
    Cggn,
    /// Navigation SR/SPL/OSR on test environments.
    Agent {
        /// Write per-episode traces as JSON lines.
        #[arg(long)]
        dump_traces: bool,
        /// Write the incremental scene graph built on the first test
        /// environment.
        #[arg(long)]
        dump_scene_graph: bool,
    },
    /// The full comparison table over agent variants.
    Ablation,
}

/// Pull `--section.key=value` shorthand out of argv before clap sees it.
fn extract_dotted(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let stripped = a.strip_prefix("--");
        let looks_dotted = stripped
            .and_then(|s| s.split_once('='))
            .filter(|(k, _)| k.contains('.') && !k.contains(' '));
        if let Some((k, v)) = looks_dotted {
            overrides.push((k.to_string(), v.to_string()));
        } else {
            rest.push(a);
        }
    }
    (rest, overrides)
}

/// Entry point: returns the process exit code.
pub fn run() -> i32 {
    let (argv, mut overrides) = extract_dotted(std::env::args().collect());
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own help/version output with code 0
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    for kv in &cli.set {
        match kv.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                eprintln!("error: --set expects KEY=VALUE, got `{kv}`");
                return EXIT_CONFIG;
            }
        }
    }
    match dispatch(&cli, &overrides) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(cli: &Cli, overrides: &[(String, String)]) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), overrides, cli.seed)?;
    let ws = Workspace::new(&cli.out, &cfg.paths)?;
    match &cli.command {
        Command::GenEnvs => cmd_gen_envs(&cfg, &ws),
        Command::Train { what } => match what {
            TrainWhat::Localizer => cmd_train_localizer(&cfg, &ws),
            TrainWhat::Cggn { iterations } => cmd_train_cggn(&cfg, &ws, *iterations),
            TrainWhat::Agent => cmd_train_agent(&cfg, &ws),
        },
        Command::Eval { what } => match what {
            EvalWhat::Cggn => cmd_eval_cggn(&cfg, &ws),
            EvalWhat::Agent { dump_traces, dump_scene_graph } => {
                cmd_eval_agent(&cfg, &ws, *dump_traces, *dump_scene_graph)
            }
            EvalWhat::Ablation => cmd_eval_ablation(&cfg, &ws),
        },
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

pub fn cmd_gen_envs(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let started = Instant::now();
    let ratios = cfg.split_ratios()?;
    if cfg.n_envs == 0 {
        return Err(Error::Config("n_envs must be positive".into()));
    }
    let mut ids = Vec::with_capacity(cfg.n_envs);
    for i in 0..cfg.n_envs {
        let id = format!("env_{i:03}");
        let mut r = rng::derive_indexed(cfg.seed, "worldgen", i as u64);
        let g = generate_environment(&id, &mut r, &cfg.worldgen)?;
        fs::write(ws.envs.join(format!("{id}.json")), serde_json::to_string_pretty(&g)?)?;
        ids.push(id);
    }
    let mut r = rng::derive(cfg.seed, "split");
    let splits = split_environments(&ids, ratios, &mut r)?;
    fs::write(ws.envs.join("splits.json"), serde_json::to_string_pretty(&splits)?)?;
    let summary = serde_json::json!({
        "environments": ids.len(),
        "train": splits.train.len(),
        "val": splits.val.len(),
        "test": splits.test.len(),
    });
    println!(
        "generated {} environments ({}/{}/{} split) in {}",
        ids.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        ws.envs.display()
    );
    write_manifest(&ws.envs, "manifest.json", "gen-envs", cfg, &ws.env_hash()?, started, summary)
}

pub fn cmd_train_localizer(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let started = Instant::now();
    let env_hash = ws.env_hash()?;
    let splits = ws.load_splits()?;
    let envs = ws.load_split_envs(&splits.train)?;
    let refs: Vec<&RoomGraph> = envs.iter().collect();
    let observer = Observer::new(cfg.observer.clone())?;
    let mut r = rng::derive(cfg.seed, "localizer");
    let pairs = make_pair_dataset(&refs, cfg.data.localizer_pairs, &observer, &mut r)?;
    let (model, holdout_acc) =
        train_localizer(&pairs, cfg.localizer.clone(), cfg.observer.feature_dim, &mut r)?;
    crate::numerics::checkpoint::save(&model.params, &ws.checkpoints.join("localizer.tnav1"))?;
    println!("localizer holdout accuracy: {holdout_acc:.4}");
    write_manifest(
        &ws.checkpoints,
        "localizer.manifest.json",
        "train localizer",
        cfg,
        &env_hash,
        started,
        serde_json::json!({ "holdout_accuracy": holdout_acc, "pairs": pairs.len() }),
    )
}

fn sample_cggn_corpus(
    envs: &[RoomGraph],
    count: usize,
    cfg: &RunConfig,
    stream: &str,
) -> Result<Vec<CggnSample>> {
    if envs.is_empty() {
        return Err(Error::Dataset("no environments in split".into()));
    }
    let mut r = rng::derive(cfg.seed, stream);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > count * 64 {
            return Err(Error::Dataset(format!(
                "could not sample {count} trajectory examples (got {})",
                out.len()
            )));
        }
        use rand::Rng as _;
        let g = &envs[r.gen_range(0..envs.len())];
        match sample_cggn_example(g, &mut r, cfg.data.cggn_path_len, cfg.cggn.block) {
            Ok(s) if s.obs_len() <= cfg.cggn.max_obs => out.push(s),
            _ => continue,
        }
    }
    Ok(out)
}

pub fn cmd_train_cggn(cfg: &RunConfig, ws: &Workspace, iterations: Option<usize>) -> Result<()> {
    let started = Instant::now();
    let env_hash = ws.env_hash()?;
    let splits = ws.load_splits()?;
    let envs = ws.load_split_envs(&splits.train)?;
    let corpus = sample_cggn_corpus(&envs, cfg.data.cggn_samples, cfg, "cggn-data")?;

    let iters = iterations.unwrap_or(cfg.cggn.iterations);
    let mut r = rng::derive(cfg.seed, "cggn-train");
    let mut model = CggnModel::init(cfg.cggn.clone(), &mut r)?;
    let mut adam = AdamState::new(model.cfg.lr);
    let mut curve = Vec::with_capacity(iters);
    use rand::seq::SliceRandom as _;
    for it in 0..iters {
        let batch: Vec<CggnSample> = corpus
            .choose_multiple(&mut r, cfg.cggn.batch_size.min(corpus.len()))
            .cloned()
            .collect();
        let (edge_nll, node_ce) = model.train_step(&batch, &mut adam)?;
        curve.push(edge_nll + node_ce);
        if it % 200 == 0 {
            println!("iter {it}: edge nll {edge_nll:.4}, node ce {node_ce:.4}");
        }
    }
    model.save(&ws.checkpoints.join("cggn.tnav1"))?;
    fs::write(ws.checkpoints.join("cggn.loss.json"), serde_json::to_string(&curve)?)?;
    let last = curve.last().copied().unwrap_or(f64::NAN);
    println!("trained {iters} iterations, final loss {last:.4}");
    write_manifest(
        &ws.checkpoints,
        "cggn.manifest.json",
        "train cggn",
        cfg,
        &env_hash,
        started,
        serde_json::json!({ "iterations": iters, "final_loss": last, "samples": corpus.len() }),
    )
}

fn nav_tasks(envs: &[RoomGraph], count: usize, seed: u64, stream: &str) -> Result<Vec<NavPair>> {
    let refs: Vec<&RoomGraph> = envs.iter().collect();
    let mut r = rng::derive(seed, stream);
    sample_nav_pairs(&refs, count, &mut r)
}

fn pairs_by_env<'a>(envs: &'a [RoomGraph], pairs: Vec<NavPair>) -> Vec<(&'a RoomGraph, Vec<NavPair>)> {
    envs.iter()
        .map(|g| {
            let mine: Vec<NavPair> = pairs.iter().filter(|p| p.env_id == g.id).cloned().collect();
            (g, mine)
        })
        .filter(|(_, p)| !p.is_empty())
        .collect()
}

fn load_cggn_if_needed(
    cfg: &RunConfig,
    ws: &Workspace,
    env_hash: &str,
    needed: bool,
) -> Result<Option<CggnModel>> {
    if !needed {
        return Ok(None);
    }
    let path = ws.checkpoint_and_manifest("cggn", env_hash)?;
    Ok(Some(CggnModel::load(cfg.cggn.clone(), &path)?))
}

pub fn cmd_train_agent(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let started = Instant::now();
    let env_hash = ws.env_hash()?;
    let splits = ws.load_splits()?;
    let envs = ws.load_split_envs(&splits.train)?;
    let observer = Observer::new(cfg.observer.clone())?;
    let informed = cfg.agent.informed();
    let cggn = load_cggn_if_needed(cfg, ws, &env_hash, informed.use_subgoal)?;

    let n_pairs = (cfg.agent.episodes / 2).clamp(100, 2000);
    let pairs = nav_tasks(&envs, n_pairs, cfg.seed, "agent-tasks")?;
    let grouped = pairs_by_env(&envs, pairs);

    let mut r = rng::derive(cfg.seed, "agent-train");
    let mut model = PolicyModel::init(cfg.agent.policy(), &mut r);
    let curve = train_student_forcing(
        &mut model,
        &grouped,
        cfg.agent.use_graph,
        &informed,
        &observer,
        cggn.as_ref(),
        cfg.agent.episodes,
        &mut r,
    )?;
    crate::numerics::checkpoint::save(&model.params, &ws.checkpoints.join("agent.tnav1"))?;
    fs::write(ws.checkpoints.join("agent.loss.json"), serde_json::to_string(&curve)?)?;
    let last = curve.last().copied().unwrap_or(f64::NAN);
    println!("trained {} episodes, final loss {last:.4}", curve.len());
    write_manifest(
        &ws.checkpoints,
        "agent.manifest.json",
        "train agent",
        cfg,
        &env_hash,
        started,
        serde_json::json!({ "episodes": curve.len(), "final_loss": last }),
    )
}

pub fn cmd_eval_cggn(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let started = Instant::now();
    let env_hash = ws.env_hash()?;
    let splits = ws.load_splits()?;
    let envs = ws.load_split_envs(&splits.test)?;
    let model = CggnModel::load(
        cfg.cggn.clone(),
        &ws.checkpoint_and_manifest("cggn", &env_hash)?,
    )?;
    let corpus = sample_cggn_corpus(&envs, cfg.eval.cggn_samples, cfg, "cggn-eval")?;
    let samples: Vec<(&RoomGraph, CggnSample)> = corpus
        .into_iter()
        .map(|s| {
            let g = envs.iter().find(|g| g.id == s.env_id).unwrap();
            (g, s)
        })
        .collect();
    let mut r = rng::derive(cfg.seed, "cggn-eval-draws");
    let metrics = eval_graph_prediction(&model, &samples, cfg.eval.n_draws, &mut r)?;
    let json = serde_json::to_value(&metrics)?;
    fs::write(ws.reports.join("cggn_eval.json"), serde_json::to_string_pretty(&json)?)?;
    println!(
        "node top-1 {:.3}, top-5 {:.3}, edge acc {:.3}, edge recall {:.3} over {} samples",
        metrics.node_top1, metrics.node_top5, metrics.edge_accuracy, metrics.edge_recall,
        metrics.n_samples
    );
    write_manifest(
        &ws.reports,
        "cggn_eval.manifest.json",
        "eval cggn",
        cfg,
        &env_hash,
        started,
        json,
    )
}

pub fn cmd_eval_agent(
    cfg: &RunConfig,
    ws: &Workspace,
    dump_traces: bool,
    dump_scene_graph: bool,
) -> Result<()> {
    let started = Instant::now();
    let env_hash = ws.env_hash()?;
    let splits = ws.load_splits()?;
    let envs = ws.load_split_envs(&splits.test)?;
    let observer = Observer::new(cfg.observer.clone())?;
    let informed = cfg.agent.informed();
    let cggn = load_cggn_if_needed(cfg, ws, &env_hash, informed.use_subgoal)?;
    let agent_ckpt = ws.checkpoint_and_manifest("agent", &env_hash)?;
    let model = PolicyModel::from_params(
        cfg.agent.policy(),
        crate::numerics::checkpoint::load(&agent_ckpt)?,
    );

    let pairs = nav_tasks(&envs, cfg.eval.episodes, cfg.seed, "eval-tasks")?;
    let tasks: Vec<(&RoomGraph, NavPair)> = pairs
        .into_iter()
        .map(|p| (envs.iter().find(|g| g.id == p.env_id).unwrap(), p))
        .collect();
    let setup = AgentSetup {
        policy: Some(&model),
        use_graph: cfg.agent.use_graph,
        informed,
        observer: &observer,
        cggn: cggn.as_ref(),
    };
    let mut r = rng::derive(cfg.seed, "eval-episodes");
    let (results, episodes) = evaluate_agent(&setup, &tasks, &mut r)?;
    let report = summarize(&results)?;
    let json = serde_json::json!({
        // the path-length weighting uses max(shortest, taken) in the
        // denominator so the metric stays within [0, 1]
        "spl_denominator": "max",
        "report": report,
    });
    fs::write(ws.reports.join("agent_eval.json"), serde_json::to_string_pretty(&json)?)?;
    println!(
        "SR {:.3}  SPL {:.3}  OSR {:.3} over {} episodes",
        report.sr, report.spl, report.osr, report.n
    );

    if dump_traces {
        let mut lines = String::new();
        for ep in &episodes {
            lines.push_str(&serde_json::to_string(ep)?);
            lines.push('\n');
        }
        fs::write(ws.reports.join("agent_traces.jsonl"), lines)?;
    }
    if dump_scene_graph {
        let g = &envs[0];
        let localizer = PerfectLocalizer::from_env(g);
        let mut sg = SceneGraph::new(&g.id);
        let mut r = rng::derive(cfg.seed, "scene-graph-dump");
        // walk the whole building depth-first and map it incrementally
        let walk = dfs_walk(g);
        let mut prev_cam = None;
        for room in walk {
            let obs = observer.observe(g, room, &mut r);
            let (cam, _) = sg.observe(obs, prev_cam, &localizer)?;
            prev_cam = Some(cam);
        }
        fs::write(
            ws.reports.join("scene_graph.json"),
            serde_json::to_string_pretty(&sg)?,
        )?;
    }
    write_manifest(
        &ws.reports,
        "agent_eval.manifest.json",
        "eval agent",
        cfg,
        &env_hash,
        started,
        json,
    )
}

/// A depth-first traversal that walks back through rooms on backtracking,
/// mirroring a physical exploration of the building.
fn dfs_walk(g: &RoomGraph) -> Vec<usize> {
    fn go(g: &RoomGraph, at: usize, seen: &mut Vec<bool>, walk: &mut Vec<usize>) {
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

pub fn cmd_eval_ablation(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let started = Instant::now();
    let env_hash = ws.env_hash()?;
    let splits = ws.load_splits()?;
    let train_envs = ws.load_split_envs(&splits.train)?;
    let test_envs = ws.load_split_envs(&splits.test)?;
    let observer = Observer::new(cfg.observer.clone())?;
    let perfect_observer = Observer::new(ObserverConfig {
        perfect: true,
        ..cfg.observer.clone()
    })?;
    let cggn = load_cggn_if_needed(cfg, ws, &env_hash, true)?.unwrap();

    // the table compares inference-time mechanisms, so each seed trains one
    // graph-free policy (Baseline) and one graph+subgoal policy (Full)
    let n_pairs = (cfg.agent.episodes / 2).clamp(100, 2000);
    let train_pairs = nav_tasks(&train_envs, n_pairs, cfg.seed, "ablation-tasks")?;
    let grouped = pairs_by_env(&train_envs, train_pairs);
    let mut baselines = Vec::new();
    let mut fulls = Vec::new();
    for s in 0..cfg.eval.seeds.max(1) {
        let mut r = rng::derive_indexed(cfg.seed, "ablation-baseline", s as u64);
        let mut base = PolicyModel::init(cfg.agent.policy(), &mut r);
        train_student_forcing(
            &mut base,
            &grouped,
            false,
            &InformedConfig { max_steps: cfg.agent.max_steps, ..Default::default() },
            &observer,
            None,
            cfg.agent.episodes,
            &mut r,
        )?;
        baselines.push(base);

        let mut r = rng::derive_indexed(cfg.seed, "ablation-full", s as u64);
        let mut full = PolicyModel::init(cfg.agent.policy(), &mut r);
        train_student_forcing(
            &mut full,
            &grouped,
            true,
            &InformedConfig {
                use_subgoal: true,
                max_steps: cfg.agent.max_steps,
                ..Default::default()
            },
            &observer,
            Some(&cggn),
            cfg.agent.episodes,
            &mut r,
        )?;
        fulls.push(full);
        println!("seed {s}: trained baseline and full policies");
    }

    let eval_pairs = nav_tasks(&test_envs, cfg.eval.episodes, cfg.seed, "ablation-eval")?;
    let tasks: Vec<(&RoomGraph, NavPair)> = eval_pairs
        .into_iter()
        .map(|p| (test_envs.iter().find(|g| g.id == p.env_id).unwrap(), p))
        .collect();
    let ctx = AblationContext {
        baseline: &baselines,
        full: &fulls,
        cggn: &cggn,
        observer: &observer,
        perfect_observer: &perfect_observer,
        max_steps: cfg.agent.max_steps,
    };
    let mut r = rng::derive(cfg.seed, "ablation-episodes");
    let table = run_ablation(&ctx, &tasks, &mut r)?;

    let json = serde_json::to_value(&table)?;
    fs::write(ws.reports.join("ablation.json"), serde_json::to_string_pretty(&json)?)?;
    let mut csv = String::from("label,sr,spl,osr,n\n");
    println!("{:<18} {:>6} {:>6} {:>6} {:>6}", "variant", "SR", "SPL", "OSR", "N");
    for row in &table.rows {
        println!(
            "{:<18} {:>6.3} {:>6.3} {:>6.3} {:>6}",
            row.label, row.report.sr, row.report.spl, row.report.osr, row.report.n
        );
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.label, row.report.sr, row.report.spl, row.report.osr, row.report.n
        ));
    }
    fs::write(ws.reports.join("ablation.csv"), csv)?;
    write_manifest(
        &ws.reports,
        "ablation.manifest.json",
        "eval ablation",
        cfg,
        &env_hash,
        started,
        json,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_materialize_and_reject_unknown_keys() {
        let cfg = load_config(None, &[], None).unwrap();
        assert_eq!(cfg.n_envs, 90);
        assert_eq!(cfg.split, [61.0, 11.0, 18.0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        fs::write(&p, r#"{"seed": 3, "agent": {"max_steps": 40}}"#).unwrap();
        let cfg = load_config(Some(&p), &[], None).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.agent.max_steps, 40);
        // everything else still has its default
        assert_eq!(cfg.cggn.block, 5);
        fs::write(&p, r#"{"definitely_not_a_key": 1}"#).unwrap();
        assert!(matches!(load_config(Some(&p), &[], None), Err(Error::Config(_))));
        fs::write(&p, r#"{"agent": {"nope": 1}}"#).unwrap();
        assert!(load_config(Some(&p), &[], None).is_err());
    }

    #[test]
    fn dotted_overrides_and_seed_flag() {
        let o = vec![
            ("agent.max_steps".to_string(), "50".to_string()),
            ("cggn.hidden".to_string(), "16".to_string()),
            ("observer.perfect".to_string(), "true".to_string()),
        ];
        let cfg = load_config(None, &o, Some(99)).unwrap();
        assert_eq!(cfg.agent.max_steps, 50);
        assert_eq!(cfg.cggn.hidden, 16);
        assert!(cfg.observer.perfect);
        assert_eq!(cfg.seed, 99);
        // bad section name rejected
        let bad = vec![("nosuch.key".to_string(), "1".to_string())];
        assert!(matches!(load_config(None, &bad, None), Err(Error::Config(_))));
    }

    #[test]
    fn dotted_flags_are_extracted_from_argv() {
        let argv = vec![
            "tnav".to_string(),
            "gen-envs".to_string(),
            "--agent.max_steps=50".to_string(),
            "--out".to_string(),
            "o".to_string(),
        ];
        let (rest, overrides) = extract_dotted(argv);
        assert_eq!(rest, vec!["tnav", "gen-envs", "--out", "o"]);
        assert_eq!(overrides, vec![("agent.max_steps".to_string(), "50".to_string())]);
    }

    #[test]
    fn gen_envs_writes_split_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.n_envs = 12;
        cfg.seed = 5;
        let ws = Workspace::new(dir.path(), &cfg.paths).unwrap();
        cmd_gen_envs(&cfg, &ws).unwrap();
        let splits = ws.load_splits().unwrap();
        assert_eq!(
            splits.train.len() + splits.val.len() + splits.test.len(),
            12
        );
        let g = ws.load_env(&splits.train[0]).unwrap();
        assert!(g.n_rooms() >= 2);
        let first = fs::read(ws.envs.join("splits.json")).unwrap();
        let first_env = fs::read(ws.envs.join("env_000.json")).unwrap();
        // rerun into a second directory: identical bytes
        let dir2 = tempfile::tempdir().unwrap();
        let ws2 = Workspace::new(dir2.path(), &cfg.paths).unwrap();
        cmd_gen_envs(&cfg, &ws2).unwrap();
        assert_eq!(first, fs::read(ws2.envs.join("splits.json")).unwrap());
        assert_eq!(first_env, fs::read(ws2.envs.join("env_000.json")).unwrap());
    }

    #[test]
    fn default_split_counts_are_61_11_18() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        // default worldgen rooms are cheap enough to generate 90 of
        let ws = Workspace::new(dir.path(), &cfg.paths).unwrap();
        cmd_gen_envs(&cfg, &ws).unwrap();
        let splits = ws.load_splits().unwrap();
        assert_eq!(splits.train.len(), 61);
        assert_eq!(splits.val.len(), 11);
        assert_eq!(splits.test.len(), 18);
    }

    #[test]
    fn invalid_split_config_maps_to_exit_2() {
        let err = RunConfig { split: [0.0, 0.0, 0.0], ..Default::default() }
            .split_ratios()
            .unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Dataset("x".into())), EXIT_DATASET);
        assert_eq!(exit_code(&Error::Diverged("x".into())), EXIT_DIVERGED);
        assert_eq!(exit_code(&Error::Checkpoint("x".into())), EXIT_CHECKPOINT);
    }

    #[test]
    fn missing_dataset_and_checkpoint_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let ws = Workspace::new(dir.path(), &cfg.paths).unwrap();
        // no environments yet
        let err = cmd_train_localizer(&cfg, &ws).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_DATASET);
        // environments but no checkpoint
        let mut small = cfg.clone();
        small.n_envs = 6;
        cmd_gen_envs(&small, &ws).unwrap();
        let err = cmd_eval_cggn(&small, &ws).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CHECKPOINT);
    }

    #[test]
    fn smoke_pipeline_train_and_eval_cggn() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.seed = 11;
        cfg.n_envs = 8;
        cfg.split = [4.0, 2.0, 2.0];
        cfg.cggn = CggnConfig::desk();
        cfg.data.cggn_samples = 12;
        cfg.eval.cggn_samples = 6;
        cfg.eval.n_draws = 10;
        let ws = Workspace::new(dir.path(), &cfg.paths).unwrap();
        cmd_gen_envs(&cfg, &ws).unwrap();
        cmd_train_cggn(&cfg, &ws, Some(10)).unwrap();
        assert!(ws.checkpoints.join("cggn.tnav1").exists());
        cmd_eval_cggn(&cfg, &ws).unwrap();
        let report: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(ws.reports.join("cggn_eval.json")).unwrap(),
        )
        .unwrap();
        assert!(report["node_top5"].as_f64().unwrap() >= 0.0);
        // a stale checkpoint against regenerated environments is refused
        let mut other = cfg.clone();
        other.seed = 12;
        cmd_gen_envs(&other, &ws).unwrap();
        let err = cmd_eval_cggn(&other, &ws).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CHECKPOINT);
    }
}
