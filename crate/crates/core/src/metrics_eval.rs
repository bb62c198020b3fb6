//! Ground-truth referenced evaluation and strategy comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accumulate::{run_adevis, AdevisOptions, Generator, Rig, StrategyKind};
use crate::camera::{decompose, OrbitMotion};
use crate::clip::{OcclusionMask, VideoClip};
use crate::depth_noise::DepthNoiseModel;
use crate::error::{invalid, DevisError, Result};
use crate::reward::{masked_psnr, masked_ssim, psnr, ssim, LpipsProxy, RewardConfig};
use crate::scene::SceneView;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub psnr_nocc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
    /// `None` when the mask leaves nothing to score.
    pub psnr_nocc: Option<f64>,
    pub ssim_nocc: Option<f64>,
    pub tf: Option<f64>,
    pub ms: Option<f64>,
    pub per_frame: Vec<FrameMetrics>,
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(DevisError::EmptyMask) | Err(DevisError::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn single(clip: &VideoClip, t: usize) -> Result<VideoClip> {
    VideoClip::new(vec![clip.frames[t].clone()])
}

pub fn evaluate(gen: &VideoClip, gt: &VideoClip, mask: &OcclusionMask, cfg: &RewardConfig) -> Result<EvalReport> {
    if !gen.same_shape(gt) {
        return Err(invalid("generated and ground-truth clips differ in shape"));
    }
    if !mask.matches(gen) {
        return Err(invalid("mask does not match clip"));
    }
    let mut per_frame = Vec::with_capacity(gen.len());
    for t in 0..gen.len() {
        let (a, b) = (single(gen, t)?, single(gt, t)?);
        let m = OcclusionMask { width: mask.width, height: mask.height, frames: vec![mask.frames[t].clone()] };
        per_frame.push(FrameMetrics { frame: t, psnr: psnr(&a, &b)?, psnr_nocc: optional(masked_psnr(&a, &b, &m))? });
    }
    Ok(EvalReport {
        psnr: psnr(gen, gt)?,
        ssim: ssim(gen, gt)?,
        lpips: LpipsProxy::new(cfg.proxy_seed).distance(gen, gt)?,
        psnr_nocc: optional(masked_psnr(gen, gt, mask))?,
        ssim_nocc: optional(masked_ssim(gen, gt, mask))?,
        tf: optional(temporal_flicker(gen))?,
        ms: optional(motion_smooth(gen))?,
        per_frame,
    })
}

/// 1 minus the mean absolute luminance change between consecutive frames.
pub fn temporal_flicker(clip: &VideoClip) -> Result<f64> {
    if clip.len() < 2 {
        return Err(DevisError::UndefinedMetric("temporal flicker needs at least 2 frames".into()));
    }
    let l: Vec<Vec<f64>> = clip.frames.iter().map(|f| f.luma()).collect();
    let mut total = 0.0;
    for w in l.windows(2) {
        total += w[0].iter().zip(&w[1]).map(|(a, b)| (b - a).abs()).sum::<f64>();
    }
    let mean = total / ((l.len() - 1) * l[0].len()) as f64;
    Ok((1.0 - mean).clamp(0.0, 1.0))
}

/// 1 minus the mean absolute luminance second difference over time.
pub fn motion_smooth(clip: &VideoClip) -> Result<f64> {
    if clip.len() < 3 {
        return Err(DevisError::UndefinedMetric("motion smoothness needs at least 3 frames".into()));
    }
    let l: Vec<Vec<f64>> = clip.frames.iter().map(|f| f.luma()).collect();
    let mut total = 0.0;
    for w in l.windows(3) {
        total += (0..w[0].len()).map(|i| (w[2][i] - 2.0 * w[1][i] + w[0][i]).abs()).sum::<f64>();
    }
    let mean = total / ((l.len() - 2) * l[0].len()) as f64;
    Ok((1.0 - mean).clamp(0.0, 1.0))
}

/// One evaluation scene: the world, its camera and the requested motion.
#[derive(Debug, Clone)]
pub struct EvalQuery {
    pub id: u64,
    pub view: SceneView,
    pub n_frames: usize,
    pub total: OrbitMotion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scene: u64,
    pub strategy: String,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub psnr_nocc: Option<f64>,
    pub ssim_nocc: Option<f64>,
    pub visible_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_lpips: f64,
    /// Mean over scenes with a defined value.
    pub mean_psnr_nocc: Option<f64>,
    pub mean_ssim_nocc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub n_steps: usize,
    pub rows: Vec<ComparisonRow>,
    pub summary: Vec<StrategySummary>,
    /// BTA mean PSNR-Nocc >= RVA mean, when both ran.
    pub bta_beats_rva: Option<bool>,
    /// Scenes where BTA PSNR-Nocc >= RFA PSNR-Nocc, and the number compared.
    pub bta_ge_rfa: Option<(usize, usize)>,
}

impl ComparisonTable {
    pub fn summary_for(&self, name: &str) -> Option<&StrategySummary> {
        self.summary.iter().find(|s| s.strategy == name)
    }

    pub fn row(&self, scene: u64, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.scene == scene && r.strategy == name)
    }
}

fn mean_of(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn evaluate_query(
    q: &EvalQuery,
    strategy: StrategyKind,
    n_steps: usize,
    generator: &dyn Generator,
    noise: &DepthNoiseModel,
    reward: &RewardConfig,
    seed: u64,
) -> Result<ComparisonRow> {
    let times: Vec<usize> = (0..q.n_frames).collect();
    let (src, src_depth) = q.view.render_motions(&vec![OrbitMotion::zero().with_pivot(q.total.pivot); q.n_frames], &times)?;
    let increments = decompose(&q.total, &vec![1.0 / n_steps as f64; n_steps])?;
    let rig = Rig { intrinsics: q.view.intrinsics, source_pose: q.view.source_pose };
    let opts = AdevisOptions { strategy, noise: noise.with_seed(noise.seed ^ q.id), seed: seed ^ q.id, oracle: Some(&q.view) };
    let out = run_adevis(&src, &src_depth, &q.total, &increments, &rig, generator, &opts)?;
    let (gt, _) = q.view.render_motions(&out.final_motions, &times)?;
    let rep = evaluate(&out.video, &gt, &out.final_reproj.mask, reward)?;
    Ok(ComparisonRow {
        scene: q.id,
        strategy: strategy.name().to_string(),
        psnr: rep.psnr,
        ssim: rep.ssim,
        lpips: rep.lpips,
        psnr_nocc: rep.psnr_nocc,
        ssim_nocc: rep.ssim_nocc,
        visible_fraction: crate::reproject::visible_fraction(&out.final_reproj.mask),
    })
}

/// Runs every strategy on every scene with an equal-fraction split into `n_steps`.
pub fn compare_strategies(
    queries: &[EvalQuery],
    strategies: &[StrategyKind],
    n_steps: usize,
    generator: &dyn Generator,
    noise: &DepthNoiseModel,
    reward: &RewardConfig,
    seed: u64,
) -> Result<ComparisonTable> {
    if n_steps < 1 {
        return Err(invalid("n_steps must be at least 1"));
    }
    let jobs: Vec<(&EvalQuery, StrategyKind)> = queries.iter().flat_map(|q| strategies.iter().map(move |&s| (q, s))).collect();
    let rows = jobs
        .par_iter()
        .map(|(q, s)| evaluate_query(q, *s, n_steps, generator, noise, reward, seed))
        .collect::<Result<Vec<_>>>()?;
    let summary = strategies
        .iter()
        .map(|s| {
            let mine: Vec<&ComparisonRow> = rows.iter().filter(|r| r.strategy == s.name()).collect();
            let k = mine.len().max(1) as f64;
            StrategySummary {
                strategy: s.name().to_string(),
                mean_psnr: mine.iter().map(|r| r.psnr).sum::<f64>() / k,
                mean_ssim: mine.iter().map(|r| r.ssim).sum::<f64>() / k,
                mean_lpips: mine.iter().map(|r| r.lpips).sum::<f64>() / k,
                mean_psnr_nocc: mean_of(mine.iter().map(|r| r.psnr_nocc)),
                mean_ssim_nocc: mean_of(mine.iter().map(|r| r.ssim_nocc)),
            }
        })
        .collect();
    let mut table = ComparisonTable { n_steps, rows, summary, bta_beats_rva: None, bta_ge_rfa: None };
    if let (Some(b), Some(r)) = (table.summary_for("bta"), table.summary_for("rva")) {
        if let (Some(b), Some(r)) = (b.mean_psnr_nocc, r.mean_psnr_nocc) {
            table.bta_beats_rva = Some(b >= r);
        }
    }
    if table.summary_for("bta").is_some() && table.summary_for("rfa").is_some() {
        let mut wins = 0;
        let mut n = 0;
        for q in queries {
            if let (Some(b), Some(r)) = (table.row(q.id, "bta"), table.row(q.id, "rfa")) {
                if let (Some(b), Some(r)) = (b.psnr_nocc, r.psnr_nocc) {
                    n += 1;
                    wins += (b >= r) as usize;
                }
            }
        }
        table.bta_ge_rfa = Some((wins, n));
    }
    Ok(table)
}
