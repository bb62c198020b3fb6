//! Accumulative view synthesis: the step constructions (RFA, RVA, ORA-dt,
//! ORA-cc, BTA) and the multi-step driver.

use serde::{Deserialize, Serialize};

use crate::camera::{accumulate_motions, bullet_time_expand, compose, invert, orbit_pose, Intrinsics, OrbitMotion, Pose, Trajectory};
use crate::clip::{is_sentinel, DepthClip, DepthMap, OcclusionMask, VideoClip};
use crate::depth_noise::{estimate_depth, DepthNoiseModel};
use crate::error::{invalid, Result};
use crate::generator_policy::{generate, PolicyParams, SampleStats};
use crate::reproject::{reproject_clip, visible_fraction, ReprojectionResult};
use crate::reward::masked_psnr;
use crate::scene::SceneView;

/// Composition tolerance for increment lists.
pub const COMPOSE_TOL: f64 = 1e-6;
/// ORA-cc area threshold at 64x64; scaled with pixel count.
pub const DEFAULT_CC_AREA_64: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    Rfa,
    Rva,
    /// `threshold` in world units; per-frame median target depth when absent.
    OraDt { threshold: Option<f64> },
    /// `min_area` in pixels; 64 at 64x64 scaled by pixel count when absent.
    OraCc { min_area: Option<usize> },
    Bta { m: usize },
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Rfa => "rfa",
            StrategyKind::Rva => "rva",
            StrategyKind::OraDt { .. } => "ora_dt",
            StrategyKind::OraCc { .. } => "ora_cc",
            StrategyKind::Bta { .. } => "bta",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StrategyKind::Bta { m } if m < 1 => Err(invalid("bullet-time m must be at least 1")),
            StrategyKind::OraDt { threshold: Some(t) } if !(t > 0.0 && t.is_finite()) => {
                Err(invalid("ORA depth threshold must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// All five strategies with default parameters and the given bullet-time length.
    pub fn all(m: usize) -> [StrategyKind; 5] {
        [
            StrategyKind::Rfa,
            StrategyKind::Rva,
            StrategyKind::OraDt { threshold: None },
            StrategyKind::OraCc { min_area: None },
            StrategyKind::Bta { m },
        ]
    }
}

/// Camera intrinsics plus the pose the source video was shot from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub intrinsics: Intrinsics,
    pub source_pose: Pose,
}

impl Rig {
    pub fn pose_at(&self, motion: &OrbitMotion) -> Result<Pose> {
        orbit_pose(&self.source_pose, motion)
    }

    /// Camera transform from the view at `from` to the view at `to`, both
    /// measured from the source pose.
    pub fn between(&self, from: &OrbitMotion, to: &OrbitMotion) -> Result<Pose> {
        Ok(compose(&invert(&self.pose_at(from)?), &self.pose_at(to)?))
    }

    /// Warps frame k of `clip` from view `from[k]` to view `to[k]`.
    pub fn warp(&self, clip: &VideoClip, depth: &DepthClip, from: &[OrbitMotion], to: &[OrbitMotion]) -> Result<ReprojectionResult> {
        if from.len() != clip.len() || to.len() != clip.len() {
            return Err(invalid("one motion per frame required"));
        }
        let poses = from.iter().zip(to).map(|(a, b)| self.between(a, b)).collect::<Result<Vec<_>>>()?;
        reproject_clip(clip, depth, &self.intrinsics, &Trajectory { poses })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccumState {
    /// Number of completed steps.
    pub step: usize,
    pub cumulative: OrbitMotion,
    /// Previous generation (the source before the first step).
    pub prev_clip: VideoClip,
    /// Estimated depth of `prev_clip` at the `cumulative` view.
    pub prev_depth: DepthClip,
    /// First-frame motion of the previous step.
    pub prev_first_motion: OrbitMotion,
    /// Previous step's bullet-time frames and their views (BTA only).
    pub prev_bullet: Option<(VideoClip, Vec<OrbitMotion>)>,
}

impl AccumState {
    pub fn initial(source: &VideoClip, source_depth: &DepthClip, pivot: [f64; 3]) -> Self {
        let zero = OrbitMotion::zero().with_pivot(pivot);
        Self {
            step: 0,
            cumulative: zero,
            prev_clip: source.clone(),
            prev_depth: source_depth.clone(),
            prev_first_motion: zero,
            prev_bullet: None,
        }
    }
}

/// Source reprojected straight to the accumulated view.
pub fn rfa_step(source: &VideoClip, source_depth: &DepthClip, cumulative: &OrbitMotion, rig: &Rig) -> Result<ReprojectionResult> {
    let zero = OrbitMotion::zero().with_pivot(cumulative.pivot);
    let n = source.len();
    rig.warp(source, source_depth, &vec![zero; n], &vec![*cumulative; n])
}

/// Previous generation reprojected by the increment alone, using its estimated depth.
pub fn rva_step(state: &AccumState, increment: &OrbitMotion, rig: &Rig) -> Result<ReprojectionResult> {
    let n = state.prev_clip.len();
    let to = state.cumulative.then(increment);
    rig.warp(&state.prev_clip, &state.prev_depth, &vec![state.cumulative; n], &vec![to; n])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuseMode {
    Dt,
    Cc,
}

/// Per-pixel component area under 8-connectivity, 0 on mask-0 pixels.
pub fn component_areas(mask: &[u8], w: usize, h: usize) -> Vec<usize> {
    let mut label = vec![usize::MAX; w * h];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if mask[start] == 0 || label[start] != usize::MAX {
            continue;
        }
        let id = areas.len();
        let mut area = 0;
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] != 0 && label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        areas.push(area);
    }
    label.iter().map(|&l| if l == usize::MAX { 0 } else { areas[l] }).collect()
}

fn median_depth(depth: &[f32]) -> Option<f64> {
    let mut v: Vec<f64> = depth.iter().filter(|d| !is_sentinel(**d)).map(|&d| d as f64).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}

pub fn default_cc_area(width: usize, height: usize) -> usize {
    ((DEFAULT_CC_AREA_64 * width * height) as f64 / 4096.0).round().max(1.0) as usize
}

/// Overwrites `primary` with the pixels of `secondary` that pass the criterion.
/// `threshold` is a depth for `Dt` and a minimum area (exclusive) for `Cc`;
/// `None` selects the per-frame default.
pub fn ora_fuse(primary: &ReprojectionResult, secondary: &ReprojectionResult, mode: FuseMode, threshold: Option<f64>) -> Result<ReprojectionResult> {
    primary.validate()?;
    secondary.validate()?;
    if !primary.clip.same_shape(&secondary.clip) {
        return Err(invalid("ORA inputs differ in shape"));
    }
    let (w, h) = (primary.clip.width(), primary.clip.height());
    let mut out = primary.clone();
    for t in 0..primary.len() {
        let smask = &secondary.mask.frames[t];
        let sdepth = &secondary.depth.maps[t].depth;
        let take: Vec<bool> = match mode {
            FuseMode::Dt => {
                let Some(th) = threshold.or_else(|| median_depth(sdepth)) else { continue };
                smask.iter().zip(sdepth).map(|(&v, &d)| v != 0 && (d as f64) < th).collect()
            }
            FuseMode::Cc => {
                let th = threshold.unwrap_or(default_cc_area(w, h) as f64);
                component_areas(smask, w, h).iter().map(|&a| a > 0 && a as f64 > th).collect()
            }
        };
        for (i, &tk) in take.iter().enumerate() {
            if tk {
                out.clip.frames[t].rgb[i] = secondary.clip.frames[t].rgb[i];
                out.depth.maps[t].depth[i] = sdepth[i];
                out.mask.frames[t][i] = 1;
            }
        }
    }
    Ok(out)
}

/// Conditioning for one bullet-time step.
#[derive(Debug, Clone, PartialEq)]
pub struct BulletStep {
    /// `[prefix] + expanded reprojection`; the prefix is absent at step 1.
    pub conditioning: ReprojectionResult,
    /// Source frame index of each expanded frame (prefix excluded).
    pub index_map: Vec<usize>,
    /// View of each conditioning frame, prefix included.
    pub motions: Vec<OrbitMotion>,
    pub prefix_len: usize,
    /// Expanded source clip, aligned with the non-prefix frames.
    pub expanded_source: VideoClip,
}

/// Repeats frame 0 of `source` so it occupies `m` frames.
pub fn expand_source<T: Clone>(items: &[T], index_map: &[usize]) -> Vec<T> {
    index_map.iter().map(|&i| items[i].clone()).collect()
}

pub fn bta_step(
    state: &AccumState,
    source: &VideoClip,
    source_depth: &DepthClip,
    increment: &OrbitMotion,
    m: usize,
    rig: &Rig,
) -> Result<BulletStep> {
    if m < 1 {
        return Err(invalid("bullet-time m must be at least 1"));
    }
    let end = state.cumulative.then(increment);
    let l = source.len();
    let (index_map, targets) = bullet_time_expand(l, m, &state.prev_first_motion, &end, &vec![end; l - 1])?;
    let src = VideoClip::new(expand_source(&source.frames, &index_map))?;
    let dep = DepthClip::new(expand_source(&source_depth.maps, &index_map))?;
    let zero = OrbitMotion::zero().with_pivot(end.pivot);
    let warped = rig.warp(&src, &dep, &vec![zero; src.len()], &targets)?;
    let (conditioning, motions, prefix_len) = match &state.prev_bullet {
        Some((frames, views)) if state.step >= 1 => {
            let k = frames.len();
            let prefix = ReprojectionResult {
                clip: frames.clone(),
                mask: OcclusionMask::full(source.width(), source.height(), k, 1),
                depth: DepthClip::new(vec![DepthMap::empty(source.width(), source.height()); k])?,
            };
            let mut motions = views.clone();
            motions.extend_from_slice(&targets);
            (prefix.concat(warped)?, motions, k)
        }
        _ => (warped, targets, 0),
    };
    Ok(BulletStep { conditioning, index_map, motions, prefix_len, expanded_source: src })
}

/// Undoes the bullet-time expansion: frame `m-1` followed by frames `m..`.
pub fn strip_bullet_time(clip: &VideoClip, m: usize, source_len: usize) -> Result<VideoClip> {
    if m < 1 || clip.len() != m + source_len - 1 {
        return Err(invalid(format!("clip length {} != m + l - 1 = {}", clip.len(), m + source_len - 1)));
    }
    VideoClip::new(clip.frames[m - 1..].to_vec())
}

pub fn strip_reprojection(r: &ReprojectionResult, m: usize, source_len: usize) -> Result<ReprojectionResult> {
    if m < 1 || r.len() != m + source_len - 1 {
        return Err(invalid(format!("reprojection length {} != m + l - 1 = {}", r.len(), m + source_len - 1)));
    }
    r.slice(m - 1..r.len())
}

pub fn check_decomposition(total: &OrbitMotion, increments: &[OrbitMotion]) -> Result<()> {
    if increments.is_empty() {
        return Err(invalid("at least one increment required"));
    }
    if increments.iter().any(|m| m.pivot != total.pivot) {
        return Err(invalid("increments must share the total's pivot"));
    }
    let sum = accumulate_motions(increments);
    let err = sum.max_abs_diff(total);
    if err > COMPOSE_TOL {
        return Err(invalid(format!("increments compose to within {err:.3e} of the total, tolerance {COMPOSE_TOL}")));
    }
    Ok(())
}

/// What a generator sees at one step.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub step: usize,
    pub n_steps: usize,
    pub reproj: &'a ReprojectionResult,
    pub reference: &'a VideoClip,
    /// View of each conditioning frame.
    pub motions: &'a [OrbitMotion],
    /// Scene time of each conditioning frame.
    pub times: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub clip: VideoClip,
    pub log_likelihood: f64,
    pub stats: Option<SampleStats>,
}

/// Stand-in for the conditional video generator.
pub trait Generator: Sync {
    fn generate(&self, input: &StepInput<'_>, seed: u64) -> Result<StepOutput>;
}

/// Leaves holes black: returns the conditioning clip unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlackFill;

impl Generator for BlackFill {
    fn generate(&self, input: &StepInput<'_>, _seed: u64) -> Result<StepOutput> {
        Ok(StepOutput { clip: input.reproj.clip.clone(), log_likelihood: 0.0, stats: None })
    }
}

/// Returns the true render of every conditioning frame.
#[derive(Debug, Clone)]
pub struct GroundTruthGenerator(pub SceneView);

impl Generator for GroundTruthGenerator {
    fn generate(&self, input: &StepInput<'_>, _seed: u64) -> Result<StepOutput> {
        let (clip, _) = self.0.render_motions(input.motions, input.times)?;
        Ok(StepOutput { clip, log_likelihood: 0.0, stats: None })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGenerator {
    pub params: PolicyParams,
}

impl Generator for PolicyGenerator {
    fn generate(&self, input: &StepInput<'_>, seed: u64) -> Result<StepOutput> {
        let s = generate(&self.params, input.reproj, input.reference, seed)?;
        Ok(StepOutput { clip: s.clip, log_likelihood: s.log_likelihood, stats: Some(s.stats) })
    }
}

/// Access to true geometry and appearance at arbitrary views.
pub trait ViewOracle: Sync {
    fn render(&self, motions: &[OrbitMotion], times: &[usize]) -> Result<(VideoClip, DepthClip)>;
}

impl ViewOracle for SceneView {
    fn render(&self, motions: &[OrbitMotion], times: &[usize]) -> Result<(VideoClip, DepthClip)> {
        self.render_motions(motions, times)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub strategy: &'static str,
    pub visible_fraction: f64,
    /// Masked PSNR of the generated clip against the true render, when an oracle is available; BTA steps exclude the inherited prefix.
    pub psnr_nocc: Option<f64>,
    pub log_likelihood: f64,
}

#[derive(Clone, Copy)]
pub struct AdevisOptions<'a> {
    pub strategy: StrategyKind,
    pub noise: DepthNoiseModel,
    pub seed: u64,
    /// Supplies previous-view depth for RVA/ORA and enables PSNR diagnostics.
    pub oracle: Option<&'a dyn ViewOracle>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepClips {
    pub conditioning: ReprojectionResult,
    pub generated: VideoClip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdevisOutput {
    /// Final video at the source length.
    pub video: VideoClip,
    /// Conditioning of the final step aligned with `video`.
    pub final_reproj: ReprojectionResult,
    /// Motion of every output frame.
    pub final_motions: Vec<OrbitMotion>,
    pub steps: Vec<StepDiagnostics>,
    /// Conditioning and generation of every step; BTA bodies keep their bullet-time frames.
    pub intermediates: Vec<StepClips>,
    pub log_likelihood: f64,
    /// Summed action statistics over all steps when the generator provides them.
    pub stats: Option<SampleStats>,
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 31)).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    z ^ (z >> 29)
}

fn step_diag(
    step: usize,
    strategy: &StrategyKind,
    cond: &ReprojectionResult,
    out: &StepOutput,
    motions: &[OrbitMotion],
    times: &[usize],
    oracle: Option<&dyn ViewOracle>,
) -> Result<StepDiagnostics> {
    let psnr_nocc = match oracle {
        Some(o) => {
            let (gt, _) = o.render(motions, times)?;
            masked_psnr(&out.clip, &gt, &cond.mask).ok()
        }
        None => None,
    };
    Ok(StepDiagnostics {
        step,
        strategy: strategy.name(),
        visible_fraction: visible_fraction(&cond.mask),
        psnr_nocc,
        log_likelihood: out.log_likelihood,
    })
}

/// Depth of the view reached by `motion` for the clip just generated there.
fn next_depth(
    cond: &ReprojectionResult,
    motion: &OrbitMotion,
    times: &[usize],
    noise: &DepthNoiseModel,
    step: usize,
    oracle: Option<&dyn ViewOracle>,
) -> Result<DepthClip> {
    let truth = match oracle {
        Some(o) => o.render(&vec![*motion; times.len()], times)?.1,
        None => cond.depth.clone(),
    };
    estimate_depth(&truth, &noise.with_seed(mix(noise.seed, step as u64 + 1)))
}

/// Runs the accumulation loop over `increments` and returns the final video.
pub fn run_adevis(
    source: &VideoClip,
    source_depth: &DepthClip,
    total: &OrbitMotion,
    increments: &[OrbitMotion],
    rig: &Rig,
    generator: &dyn Generator,
    opts: &AdevisOptions<'_>,
) -> Result<AdevisOutput> {
    opts.strategy.validate()?;
    check_decomposition(total, increments)?;
    if !source_depth.matches(source) {
        return Err(invalid("source depth does not match source clip"));
    }
    let l = source.len();
    let times: Vec<usize> = (0..l).collect();
    let n = increments.len();
    let src_depth = estimate_depth(source_depth, &opts.noise)?;
    let mut state = AccumState::initial(source, &src_depth, total.pivot);
    let mut diags = Vec::with_capacity(n);
    let mut intermediates = Vec::with_capacity(n);
    let mut ll = 0.0;
    let mut stats: Option<SampleStats> = None;
    let mut absorb = |out: &StepOutput, ll: &mut f64| {
        *ll += out.log_likelihood;
        if let Some(s) = &out.stats {
            stats.get_or_insert_with(SampleStats::default).merge(s);
        }
    };

    if n == 1 {
        let cond = rfa_step(source, &src_depth, total, rig)?;
        let motions = vec![*total; l];
        let input = StepInput { step: 1, n_steps: 1, reproj: &cond, reference: source, motions: &motions, times: &times };
        let out = generator.generate(&input, mix(opts.seed, 1))?;
        absorb(&out, &mut ll);
        diags.push(step_diag(1, &opts.strategy, &cond, &out, &motions, &times, opts.oracle)?);
        intermediates.push(StepClips { conditioning: cond.clone(), generated: out.clip.clone() });
        return Ok(AdevisOutput {
            video: out.clip,
            final_reproj: cond,
            final_motions: motions,
            steps: diags,
            intermediates,
            log_likelihood: ll,
            stats,
        });
    }

    let mut last = None;
    for (k, inc) in increments.iter().enumerate() {
        let i = k + 1;
        let target = state.cumulative.then(inc);
        let seed = mix(opts.seed, i as u64);
        match opts.strategy {
            StrategyKind::Bta { m } => {
                let bs = bta_step(&state, source, &src_depth, inc, m, rig)?;
                let mut bt_times = vec![0; bs.prefix_len];
                bt_times.extend(&bs.index_map);
                let mut reference = bs.conditioning.clip.frames[..bs.prefix_len].to_vec();
                reference.extend(bs.expanded_source.frames.iter().cloned());
                let reference = VideoClip::new(reference)?;
                let input = StepInput {
                    step: i,
                    n_steps: n,
                    reproj: &bs.conditioning,
                    reference: &reference,
                    motions: &bs.motions,
                    times: &bt_times,
                };
                let out = generator.generate(&input, seed)?;
                absorb(&out, &mut ll);
                let p = bs.prefix_len;
                let body = VideoClip::new(out.clip.frames[p..].to_vec())?;
                let body_cond = bs.conditioning.slice(p..bs.conditioning.len())?;
                let body_out = StepOutput { clip: body.clone(), log_likelihood: out.log_likelihood, stats: None };
                diags.push(step_diag(i, &opts.strategy, &body_cond, &body_out, &bs.motions[p..], &bt_times[p..], opts.oracle)?);
                let bullet = VideoClip::new(body.frames[..m].to_vec())?;
                state.prev_bullet = Some((bullet, bs.motions[p..p + m].to_vec()));
                state.prev_first_motion = target;
                state.prev_clip = strip_bullet_time(&body, m, l)?;
                state.cumulative = target;
                state.step = i;
                last = Some((state.prev_clip.clone(), strip_reprojection(&body_cond, m, l)?));
                intermediates.push(StepClips { conditioning: body_cond, generated: body });
            }
            _ => {
                let cond = match opts.strategy {
                    StrategyKind::Rfa => rfa_step(source, &src_depth, &target, rig)?,
                    StrategyKind::Rva => rva_step(&state, inc, rig)?,
                    StrategyKind::OraDt { threshold } => {
                        let primary = rfa_step(source, &src_depth, &target, rig)?;
                        ora_fuse(&primary, &rva_step(&state, inc, rig)?, FuseMode::Dt, threshold)?
                    }
                    StrategyKind::OraCc { min_area } => {
                        let primary = rfa_step(source, &src_depth, &target, rig)?;
                        ora_fuse(&primary, &rva_step(&state, inc, rig)?, FuseMode::Cc, min_area.map(|a| a as f64))?
                    }
                    StrategyKind::Bta { .. } => unreachable!(),
                };
                let reference = match opts.strategy {
                    StrategyKind::Rfa => &state.prev_clip,
                    _ => source,
                };
                let motions = vec![target; l];
                let input = StepInput { step: i, n_steps: n, reproj: &cond, reference, motions: &motions, times: &times };
                let out = generator.generate(&input, seed)?;
                absorb(&out, &mut ll);
                diags.push(step_diag(i, &opts.strategy, &cond, &out, &motions, &times, opts.oracle)?);
                if i < n && !matches!(opts.strategy, StrategyKind::Rfa) {
                    state.prev_depth = next_depth(&cond, &target, &times, &opts.noise, i, opts.oracle)?;
                }
                state.prev_first_motion = target;
                state.prev_clip = out.clip.clone();
                state.cumulative = target;
                state.step = i;
                intermediates.push(StepClips { conditioning: cond.clone(), generated: out.clip.clone() });
                last = Some((out.clip, cond));
            }
        }
    }
    let (video, final_reproj) = last.expect("at least one step");
    Ok(AdevisOutput {
        video,
        final_reproj,
        final_motions: vec![state.cumulative; l],
        steps: diags,
        intermediates,
        log_likelihood: ll,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_scene, default_source_pose, Difficulty};

    fn fixture(seed: u64, frames: usize, still: bool) -> (SceneView, Rig, VideoClip, DepthClip) {
        let mut scene = build_scene(seed, Difficulty::Simple);
        if still {
            for p in scene.primitives.iter_mut() {
                p.velocity = [0.0; 3];
                p.angular_rate = 0.0;
            }
        }
        let intr = Intrinsics::from_fov(32, 32, 60.0);
        let pose = default_source_pose(6.0, 20.0);
        let view = SceneView { scene, intrinsics: intr, source_pose: pose };
        let (clip, depth) = view.render_motions(&vec![OrbitMotion::zero(); frames], &(0..frames).collect::<Vec<_>>()).unwrap();
        (view, Rig { intrinsics: intr, source_pose: pose }, clip, depth)
    }

    fn blank(w: usize, h: usize, n: usize) -> ReprojectionResult {
        ReprojectionResult {
            clip: VideoClip::new(vec![crate::clip::Frame::filled(w, h, [0.2; 3]); n]).unwrap(),
            mask: OcclusionMask::full(w, h, n, 0),
            depth: DepthClip::new(vec![DepthMap::empty(w, h); n]).unwrap(),
        }
    }

    #[test]
    fn rfa_zero_motion_keeps_source() {
        let (_, rig, clip, depth) = fixture(1, 3, false);
        let r = rfa_step(&clip, &depth, &OrbitMotion::zero(), &rig).unwrap();
        for t in 0..3 {
            for (i, &d) in depth.maps[t].depth.iter().enumerate() {
                if !is_sentinel(d) {
                    assert_eq!(r.clip.frames[t].rgb[i], clip.frames[t].rgb[i]);
                }
            }
        }
    }

    #[test]
    fn rva_zero_increment_keeps_previous() {
        let (_, rig, clip, depth) = fixture(2, 2, false);
        let state = AccumState::initial(&clip, &depth, [0.0; 3]);
        let r = rva_step(&state, &OrbitMotion::zero(), &rig).unwrap();
        for (i, &d) in depth.maps[1].depth.iter().enumerate() {
            if !is_sentinel(d) {
                assert_eq!(r.clip.frames[1].rgb[i], clip.frames[1].rgb[i]);
                assert_eq!(r.mask.frames[1][i], 1);
            }
        }
    }

    #[test]
    fn component_areas_match_flood_fill_oracle() {
        // areas 5 and 12, separated by a blank column
        let (w, h) = (10, 6);
        let mut mask = vec![0u8; w * h];
        for &(x, y) in &[(0, 0), (1, 1), (0, 2), (1, 3), (0, 4)] {
            mask[y * w + x] = 1;
        }
        for y in 0..4 {
            for x in 4..7 {
                mask[y * w + x] = 1;
            }
        }
        let areas = component_areas(&mask, w, h);
        assert_eq!(areas[0], 5);
        assert_eq!(areas[4], 12);
        assert_eq!(areas[2], 0);

        let mut primary = blank(w, h, 1);
        primary.mask.frames[0][w * h - 1] = 1;
        let mut secondary = blank(w, h, 1);
        secondary.mask.frames[0] = mask.clone();
        for (i, &v) in mask.iter().enumerate() {
            if v != 0 {
                secondary.clip.frames[0].rgb[i] = [0.9, 0.1, 0.1];
                secondary.depth.maps[0].depth[i] = 3.0;
            }
        }
        let fused = ora_fuse(&primary, &secondary, FuseMode::Cc, Some(8.0)).unwrap();
        for i in 0..w * h {
            let big = areas[i] == 12;
            assert_eq!(fused.mask.frames[0][i], (big || i == w * h - 1) as u8, "pixel {i}");
            if big {
                assert_eq!(fused.clip.frames[0].rgb[i], [0.9, 0.1, 0.1]);
            } else {
                assert_eq!(fused.clip.frames[0].rgb[i], [0.2; 3]);
            }
        }
    }

    #[test]
    fn ora_degenerate_cases_return_primary() {
        let (_, rig, clip, depth) = fixture(3, 2, false);
        let primary = rfa_step(&clip, &depth, &OrbitMotion::degrees(20.0, 0.0, 1.0), &rig).unwrap();
        let (w, h) = (clip.width(), clip.height());
        let empty = blank(w, h, 2);
        assert_eq!(ora_fuse(&primary, &empty, FuseMode::Cc, None).unwrap(), primary);
        assert_eq!(ora_fuse(&primary, &empty, FuseMode::Dt, None).unwrap(), primary);
        let secondary = rfa_step(&clip, &depth, &OrbitMotion::degrees(10.0, 0.0, 1.0), &rig).unwrap();
        assert_eq!(ora_fuse(&primary, &secondary, FuseMode::Dt, Some(0.01)).unwrap(), primary);
        let fused = ora_fuse(&primary, &secondary, FuseMode::Dt, None).unwrap();
        for t in 0..2 {
            for (a, b) in primary.mask.frames[t].iter().zip(&fused.mask.frames[t]) {
                assert!(b >= a);
            }
        }
        assert!(ora_fuse(&primary, &blank(w, h, 1), FuseMode::Cc, None).is_err());
    }

    #[test]
    fn bta_lengths_and_prefix() {
        let (_, rig, clip, depth) = fixture(4, 8, false);
        let mut state = AccumState::initial(&clip, &depth, [0.0; 3]);
        let inc = OrbitMotion::degrees(15.0, 0.0, 1.0);
        let s1 = bta_step(&state, &clip, &depth, &inc, 3, &rig).unwrap();
        assert_eq!(s1.conditioning.len(), 10);
        assert_eq!(s1.prefix_len, 0);
        assert_eq!(s1.index_map, vec![0, 0, 0, 1, 2, 3, 4, 5, 6, 7]);
        let bullet = VideoClip::new(s1.conditioning.clip.frames[..3].to_vec()).unwrap();
        state.prev_bullet = Some((bullet.clone(), s1.motions[..3].to_vec()));
        state.step = 1;
        state.cumulative = inc;
        state.prev_first_motion = inc;
        let s2 = bta_step(&state, &clip, &depth, &inc, 3, &rig).unwrap();
        assert_eq!(s2.prefix_len, 3);
        assert_eq!(s2.conditioning.len(), 13);
        assert_eq!(s2.conditioning.clip.frames[..3], bullet.frames[..]);
        assert!(s2.conditioning.mask.frames[..3].iter().all(|m| m.iter().all(|&v| v == 1)));
        assert!(bta_step(&state, &clip, &depth, &inc, 0, &rig).is_err());
    }

    #[test]
    fn bta_m1_zero_increment_is_identity_plus_duplicate() {
        let (_, rig, clip, depth) = fixture(5, 4, false);
        let state = AccumState::initial(&clip, &depth, [0.0; 3]);
        let s = bta_step(&state, &clip, &depth, &OrbitMotion::zero(), 1, &rig).unwrap();
        assert_eq!(s.conditioning.len(), 4);
        let plain = rfa_step(&clip, &depth, &OrbitMotion::zero(), &rig).unwrap();
        assert_eq!(s.conditioning, plain);
        let s2 = bta_step(&state, &clip, &depth, &OrbitMotion::zero(), 2, &rig).unwrap();
        assert_eq!(s2.conditioning.clip.frames[0], s2.conditioning.clip.frames[1]);
    }

    #[test]
    fn strip_round_trip() {
        let (_, _, clip, _) = fixture(6, 8, true);
        for m in [1, 3] {
            let (map, _) = bullet_time_expand(8, m, &OrbitMotion::zero(), &OrbitMotion::zero(), &[OrbitMotion::zero(); 7]).unwrap();
            let expanded = VideoClip::new(expand_source(&clip.frames, &map)).unwrap();
            assert_eq!(expanded.len(), m + 7);
            assert_eq!(strip_bullet_time(&expanded, m, 8).unwrap(), clip);
        }
        assert!(strip_bullet_time(&clip, 3, 8).is_err());
    }

    #[test]
    fn decomposition_audit() {
        let total = OrbitMotion::degrees(60.0, 0.0, 1.0);
        let parts = [OrbitMotion::degrees(20.0, 0.0, 1.0); 3];
        assert!(check_decomposition(&total, &parts).is_ok());
        let wrong = [OrbitMotion::degrees(20.0, 0.0, 1.0); 2];
        assert!(check_decomposition(&total, &wrong).is_err());
        assert!(check_decomposition(&total, &[]).is_err());
    }

    #[test]
    fn single_step_strategies_coincide() {
        let (view, rig, clip, depth) = fixture(7, 3, false);
        let total = OrbitMotion::degrees(30.0, 5.0, 1.0);
        let noise = DepthNoiseModel { sigma: 0.02, ..Default::default() };
        let outs: Vec<AdevisOutput> = StrategyKind::all(3)
            .iter()
            .map(|&strategy| {
                let opts = AdevisOptions { strategy, noise, seed: 9, oracle: Some(&view) };
                run_adevis(&clip, &depth, &total, &[total], &rig, &PolicyGenerator { params: PolicyParams::default() }, &opts).unwrap()
            })
            .collect();
        for o in &outs[1..] {
            assert_eq!(o.video, outs[0].video);
            assert_eq!(o.final_reproj, outs[0].final_reproj);
            assert_eq!(o.log_likelihood, outs[0].log_likelihood);
        }
    }
}
