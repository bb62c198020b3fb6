//! Group-relative policy optimisation over accumulated generations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accumulate::{run_adevis, AdevisOptions, PolicyGenerator, Rig, StrategyKind};
use crate::camera::{sample_decomposition, MotionRecord, OrbitMotion};
use crate::clip::{DepthClip, VideoClip};
use crate::depth_noise::DepthNoiseModel;
use crate::error::{invalid, Result};
use crate::generator_policy::{PolicyParams, SampleStats, N_PARAMS};
use crate::reward::{RewardConfig, RewardModel, RewardVector};
use crate::scene::SceneView;

/// Bound on |logp_old - logp_new| inside the KL estimator.
pub const LOG_RATIO_CLAMP: f64 = 30.0;
pub const DEGENERATE_STD: f64 = 1e-12;

/// Group-standardised rewards with population std; all zero for a flat group.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(invalid("a group needs at least two rewards"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < DEGENERATE_STD {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `u - ln u - 1` with `u = pi_old / pi_new`.
pub fn kl_estimate(logp_old: f64, logp_new: f64) -> f64 {
    let d = (logp_old - logp_new).clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
    (d.exp() - d - 1.0).max(0.0)
}

pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Derivative of the clipped term with respect to the ratio.
fn clipped_slope(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

/// Training scene: world, camera, source clip and the requested motion.
#[derive(Debug, Clone)]
pub struct Query {
    pub id: u64,
    pub view: SceneView,
    pub source: VideoClip,
    pub source_depth: DepthClip,
    pub total: OrbitMotion,
    pub strategy: StrategyKind,
    pub noise: DepthNoiseModel,
}

impl Query {
    pub fn new(id: u64, view: SceneView, n_frames: usize, total: OrbitMotion, strategy: StrategyKind, noise: DepthNoiseModel) -> Result<Self> {
        let times: Vec<usize> = (0..n_frames).collect();
        let (source, source_depth) = view.render_motions(&vec![OrbitMotion::zero().with_pivot(total.pivot); n_frames], &times)?;
        Ok(Self { id, view, source, source_depth, total, strategy, noise })
    }

    pub fn rig(&self) -> Rig {
        Rig { intrinsics: self.view.intrinsics, source_pose: self.view.source_pose }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub n_steps: usize,
    pub fractions: Vec<f64>,
    pub increments: Vec<OrbitMotion>,
    pub seed: u64,
    pub stats: SampleStats,
    pub logp_old: f64,
    pub reward: RewardVector,
    pub advantage: f64,
}

/// Samples of one query drawn from the same old policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub query: u64,
    pub records: Vec<SampleRecord>,
}

fn derive(seed: u64, a: u64, b: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(a.wrapping_mul(0x1_0000_0001).wrapping_add(b));
    rng.random()
}

/// `g` draws of a random decomposition, each run through the accumulation
/// loop with the old policy and scored.
pub fn sample_group(query: &Query, old: &PolicyParams, g: usize, n_max: usize, reward: &RewardModel, seed: u64) -> Result<Group> {
    if g < 2 {
        return Err(invalid("group size must be at least 2"));
    }
    let generator = PolicyGenerator { params: old.clone() };
    let rig = query.rig();
    let mut records = (0..g as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, query.id, i));
            let dec = sample_decomposition(&query.total, n_max, &mut rng)?;
            let run_seed: u64 = rng.random();
            let opts = AdevisOptions {
                strategy: query.strategy,
                noise: query.noise.with_seed(query.noise.seed ^ query.id),
                seed: run_seed,
                oracle: Some(&query.view),
            };
            let out = run_adevis(&query.source, &query.source_depth, &query.total, &dec.increments, &rig, &generator, &opts)?;
            let r = reward.score(&out.video, &out.final_reproj, &query.source)?;
            let stats = out.stats.unwrap_or_default();
            Ok(SampleRecord {
                n_steps: dec.n_steps,
                fractions: dec.fractions,
                increments: dec.increments,
                seed: run_seed,
                logp_old: out.log_likelihood,
                stats,
                reward: r,
                advantage: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let adv = compute_advantages(&records.iter().map(|r| r.reward.composite).collect::<Vec<_>>())?;
    for (r, a) in records.iter_mut().zip(adv) {
        r.advantage = a;
    }
    Ok(Group { query: query.id, records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub mean_kl: f64,
    /// Fraction of samples whose clipped branch was active.
    pub clip_fraction: f64,
}

/// Clipped surrogate minus the KL penalty, averaged over samples in a group
/// and over groups, with its gradient in `PolicyParams::to_vec` layout.
pub fn objective(groups: &[Group], params: &PolicyParams, eps: f64, beta: f64) -> Result<ObjectiveValue> {
    if groups.is_empty() || groups.iter().any(|g| g.records.is_empty()) {
        return Err(invalid("objective needs non-empty groups"));
    }
    let mut value = 0.0;
    let mut gradient = vec![0.0; N_PARAMS];
    let (mut kl_sum, mut clipped, mut n) = (0.0, 0usize, 0usize);
    for g in groups {
        let scale = 1.0 / (g.records.len() * groups.len()) as f64;
        for r in &g.records {
            let logp_new = r.stats.log_prob(params);
            let log_ratio = logp_new - r.logp_old;
            let ratio = log_ratio.exp();
            let kl = kl_estimate(r.logp_old, logp_new);
            value += scale * (clipped_term(ratio, r.advantage, eps) - beta * kl);
            let slope = clipped_slope(ratio, r.advantage, eps);
            if slope == 0.0 && r.advantage != 0.0 {
                clipped += 1;
            }
            // d/dtheta of -beta * kl is -beta * (1 - u) * dlogp_new
            let u = (-log_ratio).exp();
            let kl_w = if log_ratio.abs() < LOG_RATIO_CLAMP { -beta * (1.0 - u) } else { 0.0 };
            let w = scale * (slope * ratio + kl_w);
            if w != 0.0 {
                for (acc, d) in gradient.iter_mut().zip(r.stats.grad_log_prob(params)) {
                    *acc += w * d;
                }
            }
            kl_sum += kl;
            n += 1;
        }
    }
    Ok(ObjectiveValue { value, gradient, mean_kl: kl_sum / n as f64, clip_fraction: clipped as f64 / n as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub group_size: usize,
    pub groups_per_round: usize,
    pub epochs_per_round: usize,
    pub rounds: usize,
    pub eps: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub n_max: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            groups_per_round: 8,
            epochs_per_round: 5,
            rounds: 20,
            eps: 0.2,
            beta: 0.01,
            learning_rate: 2e-3,
            n_max: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(invalid("group_size must be at least 2"));
        }
        if self.groups_per_round < 1 {
            return Err(invalid("groups_per_round must be at least 1"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(invalid("eps must lie in (0, 1)"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta must be non-negative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if self.n_max < 1 {
            return Err(invalid("n_max must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub round: usize,
    pub epoch: usize,
    /// Mean composite reward of the round's samples.
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub objective: f64,
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Rounds completed so far.
    pub round: usize,
    pub params: PolicyParams,
    pub log: Vec<LogRow>,
}

impl TrainState {
    pub fn new(params: PolicyParams) -> Self {
        Self { round: 0, params, log: Vec::new() }
    }

    /// Mean reward logged for `round` (1-based).
    pub fn round_reward(&self, round: usize) -> Option<f64> {
        self.log.iter().find(|r| r.round == round).map(|r| r.mean_reward)
    }
}

/// Summary of one sampling round, for progress reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub mean_reward: f64,
    pub groups: Vec<Group>,
    pub param_drift: f64,
}

/// Runs one sampling round plus its ascent epochs and appends to the log.
pub fn train_round(state: &mut TrainState, cfg: &TrainConfig, dataset: &[Query], reward: &RewardModel) -> Result<RoundReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(invalid("training needs at least one query"));
    }
    let round = state.round + 1;
    let old = state.params.clone();
    let groups = (0..cfg.groups_per_round)
        .map(|k| {
            let idx = ((round - 1) * cfg.groups_per_round + k) % dataset.len();
            let seed = derive(cfg.seed, round as u64, k as u64);
            sample_group(&dataset[idx], &old, cfg.group_size, cfg.n_max, reward, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = groups.iter().flat_map(|g| g.records.iter().map(|r| r.reward.composite)).collect();
    let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let mut params = old.clone();
    let epochs = cfg.epochs_per_round.max(1);
    for epoch in 0..epochs {
        let obj = objective(&groups, &params, cfg.eps, cfg.beta)?;
        state.log.push(LogRow { round, epoch, mean_reward, mean_kl: obj.mean_kl, objective: obj.value });
        if epoch < cfg.epochs_per_round {
            if obj.gradient.iter().any(|g| !g.is_finite()) {
                return Err(invalid(format!("non-finite gradient in round {round} epoch {epoch}; lower learning_rate")));
            }
            let v: Vec<f64> = params.to_vec().iter().zip(&obj.gradient).map(|(p, g)| p + cfg.learning_rate * g).collect();
            params = PolicyParams::from_vec(&v)?;
        }
    }
    let drift = params.to_vec().iter().zip(old.to_vec()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    state.params = params;
    state.round = round;
    Ok(RoundReport { round, mean_reward, groups, param_drift: drift })
}

/// Trains from `start` until `cfg.rounds` rounds are complete.
pub fn train(start: TrainState, cfg: &TrainConfig, dataset: &[Query], reward: &RewardModel) -> Result<TrainState> {
    let mut state = start;
    while state.round < cfg.rounds {
        let rep = train_round(&mut state, cfg, dataset, reward)?;
        log::info!("round {} mean reward {:.5} drift {:.3e}", rep.round, rep.mean_reward, rep.param_drift);
    }
    Ok(state)
}

/// One query per scene seed; azimuths drawn uniformly from `az_range_deg` with `seed`.
pub fn make_dataset(
    scene: &crate::config::SceneConfig,
    scene_seeds: &[u64],
    az_range_deg: (f64, f64),
    strategy: StrategyKind,
    noise: DepthNoiseModel,
    seed: u64,
) -> Result<Vec<Query>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5155_4552_5900);
    scene_seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let az = rng.random_range(az_range_deg.0..=az_range_deg.1);
            Query::new(i as u64, scene.view(s), scene.n_frames, OrbitMotion::degrees(az, 0.0, 1.0), strategy, noise)
        })
        .collect()
}

pub fn motion_records(increments: &[OrbitMotion]) -> Vec<MotionRecord> {
    increments.iter().map(MotionRecord::from).collect()
}

pub fn reward_model(cfg: &RewardConfig) -> Result<RewardModel> {
    RewardModel::new(*cfg)
}
