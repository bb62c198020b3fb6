//! Pipeline commands. Each validates the whole configuration before touching
//! the filesystem and refreshes the run manifest when it finishes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accumulate::{run_adevis, AdevisOptions, AdevisOutput, PolicyGenerator, Rig, StrategyKind};
use crate::camera::{decompose, Intrinsics, MotionRecord, OrbitMotion, Pose};
use crate::clip::{DepthClip, VideoClip};
use crate::config::{derive_seed, ExperimentConfig};
use crate::error::{DevisError, Result};
use crate::generator_policy::PolicyParams;
use crate::grpo_train::{make_dataset, train_round, LogRow, TrainState};
use crate::io::{self, write_manifest};
use crate::metrics_eval::{compare_strategies, evaluate, ComparisonRow, EvalQuery, StrategySummary};
use crate::reproject::visible_fraction;
use crate::reward::{RewardModel, RewardVector};
use crate::scene::{SceneSpec, SceneView};

pub const DATASET_DIR: &str = "dataset";
pub const TRAIN_DIR: &str = "train";
pub const CHECKPOINT_DIR: &str = "train/checkpoints";
pub const EVAL_DIR: &str = "eval";
pub const ADEVIS_DIR: &str = "adevis";
pub const COMPARE_DIR: &str = "compare";
/// Log-std of the untrained policy.
pub const DEFAULT_LOG_STD: f64 = -2.0;

fn usage(msg: impl Into<String>) -> DevisError {
    DevisError::Usage(msg.into())
}

/// Strategy from its command-line name; BTA takes `m` from `bta_m`.
pub fn parse_strategy(name: &str, bta_m: usize) -> Result<StrategyKind> {
    match name.to_ascii_lowercase().replace('-', "_").as_str() {
        "rfa" => Ok(StrategyKind::Rfa),
        "rva" => Ok(StrategyKind::Rva),
        "ora_dt" => Ok(StrategyKind::OraDt { threshold: None }),
        "ora_cc" => Ok(StrategyKind::OraCc { min_area: None }),
        "bta" => Ok(StrategyKind::Bta { m: bta_m }),
        other => Err(usage(format!("unknown strategy '{other}' (expected rfa, rva, ora_dt, ora_cc, bta)"))),
    }
}

fn bta_m(cfg: &ExperimentConfig) -> usize {
    match cfg.strategy {
        StrategyKind::Bta { m } => m,
        _ => 3,
    }
}

fn checked(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()
}

fn write_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), cfg.to_json() + "\n")?;
    Ok(())
}

/// Everything about a query except its pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMeta {
    pub id: u64,
    pub scene_seed: u64,
    pub n_frames: usize,
    pub total: MotionRecord,
    pub pivot: [f64; 3],
    pub intrinsics: Intrinsics,
    pub source_pose: Pose,
}

/// A dataset query read back from disk.
#[derive(Debug, Clone)]
pub struct StoredQuery {
    pub meta: QueryMeta,
    pub view: SceneView,
    pub source: VideoClip,
    pub source_depth: DepthClip,
    pub target: VideoClip,
    pub target_depth: DepthClip,
}

impl StoredQuery {
    pub fn total(&self) -> OrbitMotion {
        self.meta.total.to_motion(self.meta.pivot)
    }

    pub fn rig(&self) -> Rig {
        Rig { intrinsics: self.meta.intrinsics, source_pose: self.meta.source_pose }
    }
}

fn query_dir(out: &Path, id: u64) -> PathBuf {
    out.join(DATASET_DIR).join(format!("query_{id:04}"))
}

/// Evaluation query `i` of the configured dataset.
pub fn synth_query(cfg: &ExperimentConfig, i: usize) -> Result<(QueryMeta, SceneView)> {
    let scene_seed = cfg.eval_scene_seed(i);
    let view = cfg.scene.view(scene_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, 0xA21, i as u64));
    let az = if cfg.motion.azimuth_max_deg > cfg.motion.azimuth_min_deg {
        rng.random_range(cfg.motion.azimuth_min_deg..=cfg.motion.azimuth_max_deg)
    } else {
        cfg.motion.azimuth_min_deg
    };
    let total = OrbitMotion::degrees(az, 0.0, 1.0);
    let meta = QueryMeta {
        id: i as u64,
        scene_seed,
        n_frames: cfg.scene.n_frames,
        total: MotionRecord::from(&total),
        pivot: total.pivot,
        intrinsics: view.intrinsics,
        source_pose: view.source_pose,
    };
    Ok((meta, view))
}

/// Writes `n_queries` queries (source, depth, ground-truth target, metadata).
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    checked(cfg)?;
    write_config(cfg, out)?;
    let mut dirs = Vec::with_capacity(cfg.n_queries);
    for i in 0..cfg.n_queries {
        let (meta, view) = synth_query(cfg, i)?;
        let l = meta.n_frames;
        let times: Vec<usize> = (0..l).collect();
        let total = meta.total.to_motion(meta.pivot);
        let (source, source_depth) = view.render_motions(&vec![OrbitMotion::zero().with_pivot(meta.pivot); l], &times)?;
        let (target, target_depth) = view.render_motions(&vec![total; l], &times)?;
        let dir = query_dir(out, meta.id);
        io::write_clip_raw(&dir.join("source.dvraw"), &source)?;
        io::write_depth_raw(&dir.join("source_depth.dvraw"), &source_depth)?;
        io::write_clip_raw(&dir.join("target.dvraw"), &target)?;
        io::write_depth_raw(&dir.join("target_depth.dvraw"), &target_depth)?;
        io::write_clip_png(&dir.join("source.png"), &source)?;
        io::write_clip_png(&dir.join("target.png"), &target)?;
        io::write_json(&dir.join("scene.json"), &view.scene)?;
        io::write_json(&dir.join("query.json"), &meta)?;
        log::info!("synth query {} azimuth {:.2} deg", meta.id, meta.total.azimuth_deg);
        dirs.push(dir);
    }
    write_manifest(out)?;
    Ok(dirs)
}

pub fn load_query(dir: &Path) -> Result<StoredQuery> {
    let meta: QueryMeta = io::read_json(&dir.join("query.json"))?;
    let scene: SceneSpec = io::read_json(&dir.join("scene.json"))?;
    let view = SceneView { scene, intrinsics: meta.intrinsics, source_pose: meta.source_pose };
    let q = StoredQuery {
        source: io::read_clip_raw(&dir.join("source.dvraw"))?,
        source_depth: io::read_depth_raw(&dir.join("source_depth.dvraw"))?,
        target: io::read_clip_raw(&dir.join("target.dvraw"))?,
        target_depth: io::read_depth_raw(&dir.join("target_depth.dvraw"))?,
        meta,
        view,
    };
    if q.source.len() != q.meta.n_frames || !q.source.same_shape(&q.target) || !q.source_depth.matches(&q.source) {
        return Err(DevisError::Data(format!("{}: clip shapes disagree with query.json", dir.display())));
    }
    Ok(q)
}

/// Query directories under `dataset`, sorted by name.
pub fn list_queries(dataset: &Path) -> Result<Vec<PathBuf>> {
    if !dataset.is_dir() {
        return Err(usage(format!("dataset directory {} does not exist", dataset.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dataset)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("query.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(usage(format!("dataset {} contains no queries", dataset.display())));
    }
    Ok(dirs)
}

/// Policy parameters from a checkpoint (training state) or a bare parameter file;
/// the untrained passthrough policy when no path is given.
pub fn load_params(path: Option<&Path>) -> Result<PolicyParams> {
    let Some(path) = path else {
        return Ok(PolicyParams::passthrough(DEFAULT_LOG_STD));
    };
    if !path.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", path.display())));
    }
    let value: serde_json::Value = io::read_json(path)?;
    let params: PolicyParams = if value.get("params").is_some() {
        serde_json::from_value::<TrainState>(value)?.params
    } else {
        serde_json::from_value(value)?
    };
    params.validate()?;
    Ok(params)
}

/// Runs a stored query with an equal split of its motion into `n_steps`.
pub fn run_stored(
    cfg: &ExperimentConfig,
    q: &StoredQuery,
    params: &PolicyParams,
    strategy: StrategyKind,
    n_steps: usize,
) -> Result<AdevisOutput> {
    if n_steps < 1 {
        return Err(usage("n_steps must be at least 1"));
    }
    let total = q.total();
    let increments = decompose(&total, &vec![1.0 / n_steps as f64; n_steps])?;
    let id = q.meta.id;
    let opts = AdevisOptions {
        strategy,
        noise: cfg.noise.with_seed(derive_seed(cfg.noise_seed(), 1, id)),
        seed: derive_seed(cfg.master_seed, 0xAD, id),
        oracle: Some(&q.view),
    };
    let generator = PolicyGenerator { params: params.clone() };
    run_adevis(&q.source, &q.source_depth, &total, &increments, &q.rig(), &generator, &opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub strategy: String,
    pub frames: usize,
    pub visible_fraction: f64,
    pub psnr_nocc: Option<f64>,
    pub log_likelihood: f64,
}

/// Runs one query and writes the final clip, every step's conditioning and
/// generation, per-step masks, diagnostics and a montage.
pub fn cmd_adevis(
    cfg: &ExperimentConfig,
    out: &Path,
    query: u64,
    strategy: Option<&str>,
    n_steps: Option<usize>,
    checkpoint: Option<&Path>,
) -> Result<PathBuf> {
    checked(cfg)?;
    let strategy = match strategy {
        Some(s) => parse_strategy(s, bta_m(cfg))?,
        None => cfg.strategy,
    };
    let n_steps = n_steps.unwrap_or(cfg.n_steps);
    if n_steps < 1 {
        return Err(usage("n_steps must be at least 1"));
    }
    let params = load_params(checkpoint)?;
    let qdir = query_dir(out, query);
    if !qdir.join("query.json").is_file() {
        return Err(DevisError::Data(format!("query {query} not found under {}; run synth first", out.join(DATASET_DIR).display())));
    }
    let q = load_query(&qdir)?;
    let run = run_stored(cfg, &q, &params, strategy, n_steps)?;

    let dir = out.join(ADEVIS_DIR).join(format!("query_{query:04}_{}_n{n_steps}", strategy.name()));
    io::write_clip_raw(&dir.join("generated.dvraw"), &run.video)?;
    io::write_clip_png(&dir.join("generated.png"), &run.video)?;
    for (k, s) in run.intermediates.iter().enumerate() {
        let i = k + 1;
        io::write_clip_raw(&dir.join(format!("step_{i:02}_conditioning.dvraw")), &s.conditioning.clip)?;
        io::write_depth_raw(&dir.join(format!("step_{i:02}_depth.dvraw")), &s.conditioning.depth)?;
        io::write_clip_raw(&dir.join(format!("step_{i:02}_generated.dvraw")), &s.generated)?;
        io::write_mask_png(&dir.join(format!("step_{i:02}_mask.png")), &s.conditioning.mask)?;
    }
    let rows: Vec<StepRow> = run
        .steps
        .iter()
        .zip(&run.intermediates)
        .map(|(d, s)| StepRow {
            step: d.step,
            strategy: d.strategy.to_string(),
            frames: s.generated.len(),
            visible_fraction: d.visible_fraction,
            psnr_nocc: d.psnr_nocc,
            log_likelihood: d.log_likelihood,
        })
        .collect();
    io::write_csv(&dir.join("diagnostics.csv"), &rows)?;
    io::write_montage(&dir.join("montage.png"), &[&q.source, &run.final_reproj.clip, &run.video, &q.target])?;
    write_manifest(out)?;
    Ok(dir)
}

fn checkpoint_path(out: &Path, round: usize) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("round_{round:04}.json"))
}

/// Highest-numbered checkpoint under the run directory.
pub fn latest_checkpoint(out: &Path) -> Result<Option<PathBuf>> {
    let dir = out.join(CHECKPOINT_DIR);
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut found: Vec<(usize, PathBuf)> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let stem = p.file_stem()?.to_str()?;
            let round = stem.strip_prefix("round_")?.parse().ok()?;
            (p.extension()? == "json").then_some((round, p))
        })
        .collect();
    found.sort();
    Ok(found.pop().map(|(_, p)| p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TimingRow {
    round: usize,
    wall_time: f64,
}

/// GRPO training with one checkpoint per round; resumes from the latest
/// checkpoint in `out` when there is one.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainState> {
    checked(cfg)?;
    let seeds: Vec<u64> = (0..cfg.n_train_queries).map(|i| cfg.train_scene_seed(i)).collect();
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.train_seed();
    let noise = cfg.noise.with_seed(cfg.noise_seed());
    let az = (cfg.motion.azimuth_min_deg, cfg.motion.azimuth_max_deg);
    let dataset = make_dataset(&cfg.scene, &seeds, az, cfg.strategy, noise, tcfg.seed)?;
    let reward = RewardModel::new(cfg.reward)?;
    write_config(cfg, out)?;

    let mut state = match latest_checkpoint(out)? {
        Some(p) => {
            let s: TrainState = io::read_json(&p)?;
            log::info!("resuming from {} (round {})", p.display(), s.round);
            s
        }
        None => TrainState::new(PolicyParams::passthrough(DEFAULT_LOG_STD)),
    };
    let timing_path = out.join(TRAIN_DIR).join("timing.csv");
    let mut timing: Vec<TimingRow> = if timing_path.is_file() && state.round > 0 { io::read_csv(&timing_path)? } else { Vec::new() };
    timing.retain(|t| t.round <= state.round);
    while state.round < tcfg.rounds {
        let t0 = Instant::now();
        let rep = train_round(&mut state, &tcfg, &dataset, &reward)?;
        timing.push(TimingRow { round: rep.round, wall_time: t0.elapsed().as_secs_f64() });
        io::write_json(&checkpoint_path(out, state.round), &state)?;
        io::write_csv(&out.join(TRAIN_DIR).join("log.csv"), &state.log)?;
        io::write_csv(&timing_path, &timing)?;
        log::info!("round {} mean reward {:.5} drift {:.3e}", rep.round, rep.mean_reward, rep.param_drift);
    }
    io::write_csv(&out.join(TRAIN_DIR).join("log.csv"), &state.log)?;
    io::write_json(&out.join(TRAIN_DIR).join("params.json"), &state.params)?;
    write_manifest(out)?;
    Ok(state)
}

pub fn read_train_log(out: &Path) -> Result<Vec<LogRow>> {
    io::read_csv(&out.join(TRAIN_DIR).join("log.csv"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub query: u64,
    pub strategy: String,
    pub n_steps: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub psnr_nocc: Option<f64>,
    pub ssim_nocc: Option<f64>,
    pub tf: Option<f64>,
    pub ms: Option<f64>,
    pub visible_fraction: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregate {
    pub n_queries: usize,
    pub strategy: String,
    pub n_steps: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_lpips: f64,
    /// Means over queries where the metric is defined.
    pub mean_psnr_nocc: Option<f64>,
    pub mean_ssim_nocc: Option<f64>,
    pub mean_tf: Option<f64>,
    pub mean_ms: Option<f64>,
    pub mean_visible_fraction: f64,
    pub mean_reward: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn mean_defined(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    (!vals.is_empty()).then(|| mean(vals.into_iter()))
}

pub fn aggregate(rows: &[EvalRow]) -> Result<EvalAggregate> {
    let first = rows.first().ok_or_else(|| usage("nothing to aggregate"))?;
    Ok(EvalAggregate {
        n_queries: rows.len(),
        strategy: first.strategy.clone(),
        n_steps: first.n_steps,
        mean_psnr: mean(rows.iter().map(|r| r.psnr)),
        mean_ssim: mean(rows.iter().map(|r| r.ssim)),
        mean_lpips: mean(rows.iter().map(|r| r.lpips)),
        mean_psnr_nocc: mean_defined(rows.iter().map(|r| r.psnr_nocc)),
        mean_ssim_nocc: mean_defined(rows.iter().map(|r| r.ssim_nocc)),
        mean_tf: mean_defined(rows.iter().map(|r| r.tf)),
        mean_ms: mean_defined(rows.iter().map(|r| r.ms)),
        mean_visible_fraction: mean(rows.iter().map(|r| r.visible_fraction)),
        mean_reward: mean(rows.iter().map(|r| r.reward)),
    })
}

/// Scores one stored query against its ground-truth target.
pub fn eval_stored(cfg: &ExperimentConfig, q: &StoredQuery, params: &PolicyParams, strategy: StrategyKind, n_steps: usize) -> Result<EvalRow> {
    let run = run_stored(cfg, q, params, strategy, n_steps)?;
    let rep = evaluate(&run.video, &q.target, &run.final_reproj.mask, &cfg.reward)?;
    let r: RewardVector = RewardModel::new(cfg.reward)?.score(&run.video, &run.final_reproj, &q.source)?;
    Ok(EvalRow {
        query: q.meta.id,
        strategy: strategy.name().to_string(),
        n_steps,
        psnr: rep.psnr,
        ssim: rep.ssim,
        lpips: rep.lpips,
        psnr_nocc: rep.psnr_nocc,
        ssim_nocc: rep.ssim_nocc,
        tf: rep.tf,
        ms: rep.ms,
        visible_fraction: visible_fraction(&run.final_reproj.mask),
        reward: r.composite,
    })
}

/// Evaluates a checkpoint on every query of `dataset`.
pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>, dataset: &Path) -> Result<(Vec<EvalRow>, EvalAggregate)> {
    checked(cfg)?;
    let dirs = list_queries(dataset)?;
    let params = load_params(checkpoint)?;
    let rows = {
        use rayon::prelude::*;
        dirs.par_iter()
            .map(|d| eval_stored(cfg, &load_query(d)?, &params, cfg.strategy, cfg.n_steps))
            .collect::<Result<Vec<_>>>()?
    };
    let agg = aggregate(&rows)?;
    io::write_csv(&out.join(EVAL_DIR).join("per_query.csv"), &rows)?;
    io::write_json(&out.join(EVAL_DIR).join("aggregate.json"), &agg)?;
    write_manifest(out)?;
    Ok((rows, agg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub n_steps: usize,
    pub bta_beats_rva: Option<bool>,
    pub bta_ge_rfa_wins: Option<usize>,
    pub bta_ge_rfa_compared: Option<usize>,
}

/// Strategy comparison on the configured evaluation scenes.
pub fn cmd_compare(
    cfg: &ExperimentConfig,
    out: &Path,
    strategies: &[String],
    n_steps: Option<usize>,
    checkpoint: Option<&Path>,
) -> Result<Vec<StrategySummary>> {
    checked(cfg)?;
    let kinds: Vec<StrategyKind> = if strategies.is_empty() {
        StrategyKind::all(bta_m(cfg)).to_vec()
    } else {
        strategies.iter().map(|s| parse_strategy(s, bta_m(cfg))).collect::<Result<_>>()?
    };
    let n_steps = n_steps.unwrap_or(cfg.n_steps);
    if n_steps < 1 {
        return Err(usage("n_steps must be at least 1"));
    }
    if cfg.n_queries == 0 {
        return Err(usage("n_queries must be positive to compare strategies"));
    }
    let params = load_params(checkpoint)?;
    let queries = (0..cfg.n_queries)
        .map(|i| {
            let (meta, view) = synth_query(cfg, i)?;
            Ok(EvalQuery { id: meta.id, view, n_frames: meta.n_frames, total: meta.total.to_motion(meta.pivot) })
        })
        .collect::<Result<Vec<_>>>()?;
    let generator = PolicyGenerator { params };
    let noise = cfg.noise.with_seed(cfg.noise_seed());
    let table = compare_strategies(&queries, &kinds, n_steps, &generator, &noise, &cfg.reward, derive_seed(cfg.master_seed, 0xC0, 0))?;
    let dir = out.join(COMPARE_DIR);
    io::write_csv(&dir.join(format!("table_n{n_steps}.csv")), &table.summary)?;
    io::write_csv::<ComparisonRow>(&dir.join(format!("rows_n{n_steps}.csv")), &table.rows)?;
    let summary = CompareSummary {
        n_steps,
        bta_beats_rva: table.bta_beats_rva,
        bta_ge_rfa_wins: table.bta_ge_rfa.map(|x| x.0),
        bta_ge_rfa_compared: table.bta_ge_rfa.map(|x| x.1),
    };
    io::write_json(&dir.join(format!("summary_n{n_steps}.json")), &summary)?;
    write_manifest(out)?;
    Ok(table.summary)
}

pub fn default_config_json() -> String {
    ExperimentConfig::default().to_json()
}
