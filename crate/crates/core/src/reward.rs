//! Consistency-quality reward: masked PSNR, masked SSIM, a random-feature
//! perceptual distance, a gradient-energy quality score, and their weighted sum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clip::{luminance, Frame, OcclusionMask, VideoClip};
use crate::error::{invalid, DevisError, Result};
use crate::reproject::ReprojectionResult;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_STRIDE: usize = 4;
pub const SSIM_MIN_COVERAGE: f64 = 0.75;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const IQ_C: f64 = 0.05;
const PROXY_CHANNELS: usize = 16;
const PROXY_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LpipsReference {
    /// Compare against the reprojected source clip.
    #[default]
    Reprojected,
    /// Compare against the unwarped source clip.
    Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub weights: [f64; 4],
    pub p_th: f64,
    pub s_th: f64,
    pub proxy_seed: u64,
    #[serde(default)]
    pub lpips_reference: LpipsReference,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { weights: [1.0; 4], p_th: 40.0, s_th: 1.0, proxy_seed: 0, lpips_reference: LpipsReference::Reprojected }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|&w| w != 0.0 && w != 1.0) {
            return Err(invalid("reward weights must be 0 or 1"));
        }
        if self.weights.iter().all(|&w| w == 0.0) {
            return Err(invalid("at least one reward weight must be 1"));
        }
        if !(self.p_th > 0.0 && self.p_th.is_finite()) || !(self.s_th > 0.0 && self.s_th.is_finite()) {
            return Err(invalid("p_th and s_th must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub lpips: f64,
    /// Masked PSNR in dB, 0 when the mask is empty.
    pub p: f64,
    pub s: f64,
    pub q: f64,
    pub composite: f64,
    /// Set when PSNR or SSIM had nothing to score.
    pub degenerate: bool,
}

impl RewardVector {
    pub fn terms(&self, cfg: &RewardConfig) -> [f64; 4] {
        [1.0 - self.lpips, self.p / cfg.p_th, self.s / cfg.s_th, self.q]
    }
}

fn check_pair(a: &VideoClip, b: &VideoClip) -> Result<()> {
    if !a.same_shape(b) {
        return Err(invalid(format!(
            "clip shapes differ: {}x{}x{} vs {}x{}x{}",
            a.len(),
            a.width(),
            a.height(),
            b.len(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn check_mask(a: &VideoClip, mask: &OcclusionMask) -> Result<()> {
    if !mask.matches(a) {
        return Err(invalid("mask does not match clip"));
    }
    Ok(())
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// PSNR over mask-1 pixels of all frames and channels, peak 1.0.
pub fn masked_psnr(a: &VideoClip, b: &VideoClip, mask: &OcclusionMask) -> Result<f64> {
    check_pair(a, b)?;
    check_mask(a, mask)?;
    let (mut se, mut n) = (0.0f64, 0usize);
    for ((fa, fb), m) in a.frames.iter().zip(&b.frames).zip(&mask.frames) {
        for ((pa, pb), &v) in fa.rgb.iter().zip(&fb.rgb).zip(m) {
            if v != 0 {
                for c in 0..3 {
                    let d = pa[c] as f64 - pb[c] as f64;
                    se += d * d;
                }
                n += 3;
            }
        }
    }
    if n == 0 {
        return Err(DevisError::EmptyMask);
    }
    Ok(psnr_from_mse(se / n as f64))
}

/// Unmasked PSNR over whole clips.
pub fn psnr(a: &VideoClip, b: &VideoClip) -> Result<f64> {
    masked_psnr(a, b, &OcclusionMask::full(a.width(), a.height(), a.len(), 1))
}

fn masked_luma(f: &Frame, m: &[u8]) -> Vec<f64> {
    f.rgb.iter().zip(m).map(|(&p, &v)| if v != 0 { luminance(p) } else { 0.0 }).collect()
}

fn window_ssim(la: &[f64], lb: &[f64], w: usize, x0: usize, y0: usize) -> f64 {
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for y in y0..y0 + SSIM_WINDOW {
        for x in x0..x0 + SSIM_WINDOW {
            sa += la[y * w + x];
            sb += lb[y * w + x];
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for y in y0..y0 + SSIM_WINDOW {
        for x in x0..x0 + SSIM_WINDOW {
            let (da, db) = (la[y * w + x] - ma, lb[y * w + x] - mb);
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
}

/// Mean windowed luminance SSIM over windows that are at least 75% visible.
pub fn masked_ssim(a: &VideoClip, b: &VideoClip, mask: &OcclusionMask) -> Result<f64> {
    check_pair(a, b)?;
    check_mask(a, mask)?;
    let (w, h) = (a.width(), a.height());
    let need = (SSIM_MIN_COVERAGE * (SSIM_WINDOW * SSIM_WINDOW) as f64).ceil() as usize;
    let (mut total, mut count) = (0.0f64, 0usize);
    for ((fa, fb), m) in a.frames.iter().zip(&b.frames).zip(&mask.frames) {
        if w < SSIM_WINDOW || h < SSIM_WINDOW {
            break;
        }
        let la = masked_luma(fa, m);
        let lb = masked_luma(fb, m);
        for y0 in (0..=h - SSIM_WINDOW).step_by(SSIM_STRIDE) {
            for x0 in (0..=w - SSIM_WINDOW).step_by(SSIM_STRIDE) {
                let vis = (y0..y0 + SSIM_WINDOW)
                    .map(|y| m[y * w + x0..y * w + x0 + SSIM_WINDOW].iter().filter(|&&v| v != 0).count())
                    .sum::<usize>();
                if vis >= need {
                    total += window_ssim(&la, &lb, w, x0, y0);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(DevisError::EmptyMask);
    }
    Ok(total / count as f64)
}

pub fn ssim(a: &VideoClip, b: &VideoClip) -> Result<f64> {
    masked_ssim(a, b, &OcclusionMask::full(a.width(), a.height(), a.len(), 1))
}

/// Fixed bank of random 5x5 RGB kernels.
#[derive(Debug, Clone)]
pub struct LpipsProxy {
    kernels: Vec<f64>,
}

impl LpipsProxy {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4C50_4950_5300_0000);
        let scale = 1.0 / ((3 * PROXY_K * PROXY_K) as f64).sqrt();
        let kernels = (0..PROXY_CHANNELS * 3 * PROXY_K * PROXY_K)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v * scale
            })
            .collect();
        Self { kernels }
    }

    fn features(&self, img: &[[f64; 3]], w: usize, h: usize) -> Vec<[f64; PROXY_CHANNELS]> {
        let r = (PROXY_K / 2) as i64;
        let mut out = vec![[0.0; PROXY_CHANNELS]; w * h];
        for y in 0..h {
            for x in 0..w {
                let f = &mut out[y * w + x];
                for ky in 0..PROXY_K {
                    let sy = (y as i64 + ky as i64 - r).clamp(0, h as i64 - 1) as usize;
                    for kx in 0..PROXY_K {
                        let sx = (x as i64 + kx as i64 - r).clamp(0, w as i64 - 1) as usize;
                        let p = img[sy * w + sx];
                        for (o, fo) in f.iter_mut().enumerate() {
                            let base = ((o * 3) * PROXY_K + ky) * PROXY_K + kx;
                            let step = PROXY_K * PROXY_K;
                            *fo += self.kernels[base] * p[0]
                                + self.kernels[base + step] * p[1]
                                + self.kernels[base + 2 * step] * p[2];
                        }
                    }
                }
                let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-10;
                f.iter_mut().for_each(|v| *v /= norm);
            }
        }
        out
    }

    fn scale_distance(&self, a: &[[f64; 3]], b: &[[f64; 3]], w: usize, h: usize) -> f64 {
        let fa = self.features(a, w, h);
        let fb = self.features(b, w, h);
        let total: f64 = fa
            .iter()
            .zip(&fb)
            .map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
            .sum();
        total / (w * h) as f64
    }

    pub fn frame_distance(&self, a: &Frame, b: &Frame) -> f64 {
        let to64 = |f: &Frame| -> Vec<[f64; 3]> { f.rgb.iter().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect() };
        let (w, h) = (a.width, a.height);
        let (ia, ib) = (to64(a), to64(b));
        let full = self.scale_distance(&ia, &ib, w, h);
        let (hw, hh) = (w / 2, h / 2);
        if hw == 0 || hh == 0 {
            return full;
        }
        let half = self.scale_distance(&downsample(&ia, w, hw, hh), &downsample(&ib, w, hw, hh), hw, hh);
        0.5 * (full + half)
    }

    pub fn distance(&self, a: &VideoClip, b: &VideoClip) -> Result<f64> {
        check_pair(a, b)?;
        let total: f64 = a.frames.iter().zip(&b.frames).map(|(fa, fb)| self.frame_distance(fa, fb)).sum();
        Ok(total / a.len() as f64)
    }
}

fn downsample(img: &[[f64; 3]], w: usize, hw: usize, hh: usize) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; hw * hh];
    for y in 0..hh {
        for x in 0..hw {
            let mut acc = [0.0; 3];
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let p = img[(2 * y + dy) * w + 2 * x + dx];
                for c in 0..3 {
                    acc[c] += 0.25 * p[c];
                }
            }
            out[y * hw + x] = acc;
        }
    }
    out
}

pub fn lpips_proxy(a: &VideoClip, b: &VideoClip, seed: u64) -> Result<f64> {
    LpipsProxy::new(seed).distance(a, b)
}

pub fn frame_gradient_energy(f: &Frame) -> f64 {
    let (w, h) = (f.width, f.height);
    let l = f.luma();
    let at = |x: i64, y: i64| l[y.clamp(0, h as i64 - 1) as usize * w + x.clamp(0, w as i64 - 1) as usize];
    let mut total = 0.0;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
            let gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
            total += (gx * gx + gy * gy).sqrt();
        }
    }
    total / (w * h) as f64
}

/// Mean over frames of g/(g+c), g the mean luminance gradient magnitude.
pub fn image_quality_proxy(clip: &VideoClip) -> Result<f64> {
    if clip.is_empty() {
        return Err(invalid("quality proxy needs at least one frame"));
    }
    let total: f64 = clip
        .frames
        .iter()
        .map(|f| {
            let g = frame_gradient_energy(f);
            g / (g + IQ_C)
        })
        .sum();
    Ok(total / clip.len() as f64)
}

pub fn combine(lpips: f64, p: f64, s: f64, q: f64, degenerate: bool, cfg: &RewardConfig) -> RewardVector {
    let mut v = RewardVector { lpips, p, s, q, composite: 0.0, degenerate };
    v.composite = v.terms(cfg).iter().zip(&cfg.weights).map(|(t, w)| t * w).sum();
    v
}

fn score(
    gen: &VideoClip,
    reproj: &ReprojectionResult,
    lpips_ref: &VideoClip,
    proxy: &LpipsProxy,
    cfg: &RewardConfig,
) -> Result<RewardVector> {
    cfg.validate()?;
    check_pair(gen, &reproj.clip)?;
    let absorb = |r: Result<f64>| match r {
        Ok(v) => Ok((v, false)),
        Err(DevisError::EmptyMask) => Ok((0.0, true)),
        Err(e) => Err(e),
    };
    let (p, dp) = absorb(masked_psnr(gen, &reproj.clip, &reproj.mask))?;
    let (s, ds) = absorb(masked_ssim(gen, &reproj.clip, &reproj.mask))?;
    let lpips = proxy.distance(gen, lpips_ref)?;
    let q = image_quality_proxy(gen)?;
    Ok(combine(lpips, p, s, q, dp || ds, cfg))
}

/// Reward of `gen` against the reprojected clip, using its mask.
pub fn composite_reward(gen: &VideoClip, reproj: &ReprojectionResult, cfg: &RewardConfig) -> Result<RewardVector> {
    score(gen, reproj, &reproj.clip, &LpipsProxy::new(cfg.proxy_seed), cfg)
}

/// Scorer holding a prebuilt proxy bank; honours `lpips_reference`.
#[derive(Debug, Clone)]
pub struct RewardModel {
    pub cfg: RewardConfig,
    proxy: LpipsProxy,
}

impl RewardModel {
    pub fn new(cfg: RewardConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { proxy: LpipsProxy::new(cfg.proxy_seed), cfg })
    }

    pub fn score(&self, gen: &VideoClip, reproj: &ReprojectionResult, source: &VideoClip) -> Result<RewardVector> {
        let lpips_ref = match self.cfg.lpips_reference {
            LpipsReference::Reprojected => &reproj.clip,
            LpipsReference::Source => source,
        };
        score(gen, reproj, lpips_ref, &self.proxy, &self.cfg)
    }
}
