//! Linear-Gaussian hole-filling policy with exact likelihoods.
//!
//! Visible pixels are copied. Each occluded pixel gets a colour drawn per
//! channel from `Normal(w_c . phi + b_c, exp(log_std_c))` and clamped to [0, 1]
//! afterwards; likelihoods always refer to the unclamped draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clip::{Frame, VideoClip};
use crate::error::{invalid, Result};
use crate::reproject::ReprojectionResult;

pub const N_FEATURES: usize = 10;
/// Features plus bias.
pub const N_WEIGHTS: usize = N_FEATURES + 1;
pub const N_PARAMS: usize = 3 * N_WEIGHTS + 3;
pub const LOG_STD_MIN: f64 = -6.0;
pub const LOG_STD_MAX: f64 = 1.0;
pub const FEATURE_VERSION: &str = "nn-ref-xy-t/1";

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub type Features = [f64; N_FEATURES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Per channel: 10 feature weights then the bias.
    pub weights: [[f64; N_WEIGHTS]; 3],
    pub log_std: [f64; 3],
    pub version: String,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self::passthrough(-2.0)
    }
}

impl PolicyParams {
    /// Mean equal to the nearest visible colour.
    pub fn passthrough(log_std: f64) -> Self {
        let mut weights = [[0.0; N_WEIGHTS]; 3];
        for (c, w) in weights.iter_mut().enumerate() {
            w[c] = 1.0;
        }
        Self { weights, log_std: [log_std; 3], version: FEATURE_VERSION.to_string() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != FEATURE_VERSION {
            return Err(invalid(format!("feature version {} != {}", self.version, FEATURE_VERSION)));
        }
        if self.log_std.iter().any(|&s| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&s)) {
            return Err(invalid(format!("log_std {:?} outside [{LOG_STD_MIN}, {LOG_STD_MAX}]", self.log_std)));
        }
        if self.weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(invalid("non-finite policy weight"));
        }
        Ok(())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.weights.iter().flatten().copied().collect();
        v.extend_from_slice(&self.log_std);
        v
    }

    /// Inverse of `to_vec`; log-std is clamped into its allowed range.
    pub fn from_vec(v: &[f64]) -> Result<Self> {
        if v.len() != N_PARAMS {
            return Err(invalid(format!("expected {N_PARAMS} parameters, got {}", v.len())));
        }
        let mut p = Self::passthrough(0.0);
        for c in 0..3 {
            p.weights[c].copy_from_slice(&v[c * N_WEIGHTS..(c + 1) * N_WEIGHTS]);
            p.log_std[c] = v[3 * N_WEIGHTS + c].clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        Ok(p)
    }

    pub fn mean(&self, phi: &Features) -> [f64; 3] {
        let mut m = [0.0; 3];
        for (c, mc) in m.iter_mut().enumerate() {
            let w = &self.weights[c];
            *mc = w[N_FEATURES] + phi.iter().zip(w).map(|(f, w)| f * w).sum::<f64>();
        }
        m
    }
}

/// One occluded pixel together with its features.
#[derive(Debug, Clone, PartialEq)]
pub struct HolePixel {
    pub frame: usize,
    pub index: usize,
    pub phi: Features,
}

/// Per-row nearest visible column, for exact nearest-visible-pixel queries.
/// Ties resolve to the smallest (squared distance, row, column).
struct NearestTable<'a> {
    mask: &'a [u8],
    w: usize,
    h: usize,
    /// Nearest visible column in the row, `usize::MAX` if the row is empty.
    near: Vec<usize>,
}

impl<'a> NearestTable<'a> {
    fn new(mask: &'a [u8], w: usize, h: usize) -> Self {
        let mut near = vec![usize::MAX; w * h];
        for y in 0..h {
            let row = &mask[y * w..(y + 1) * w];
            let mut left = vec![usize::MAX; w];
            let mut last = usize::MAX;
            for x in 0..w {
                if row[x] != 0 {
                    last = x;
                }
                left[x] = last;
            }
            let mut right = usize::MAX;
            for x in (0..w).rev() {
                if row[x] != 0 {
                    right = x;
                }
                near[y * w + x] = match (left[x], right) {
                    (usize::MAX, r) => r,
                    (l, usize::MAX) => l,
                    (l, r) => {
                        if x - l <= r - x {
                            l
                        } else {
                            r
                        }
                    }
                };
            }
        }
        Self { mask, w, h, near }
    }

    fn query(&self, x: usize, y: usize) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, usize)> = None;
        let visit = |ny: usize, best: &mut Option<(usize, usize, usize)>| {
            let nx = self.near[ny * self.w + x];
            if nx != usize::MAX {
                debug_assert!(self.mask[ny * self.w + nx] != 0);
                let d2 = nx.abs_diff(x).pow(2) + ny.abs_diff(y).pow(2);
                let cand = (d2, ny, nx);
                if best.is_none_or(|b| cand < b) {
                    *best = Some(cand);
                }
            }
        };
        for dy in 0..self.h {
            if best.is_some_and(|b| dy * dy > b.0) {
                break;
            }
            if dy <= y {
                visit(y - dy, &mut best);
            }
            if dy > 0 && y + dy < self.h {
                visit(y + dy, &mut best);
            }
        }
        best.map(|(d2, ny, nx)| (nx, ny, (d2 as f64).sqrt()))
    }
}

#[cfg(test)]
fn nearest_visible(mask: &[u8], w: usize, h: usize, x: usize, y: usize) -> Option<(usize, usize, f64)> {
    NearestTable::new(mask, w, h).query(x, y)
}

fn reference_frame(reference: &VideoClip, t: usize) -> &Frame {
    &reference.frames[t.min(reference.len() - 1)]
}

fn check_inputs(reproj: &ReprojectionResult, reference: &VideoClip) -> Result<()> {
    if reproj.is_empty() {
        return Err(invalid("empty reprojection"));
    }
    if !reproj.mask.matches(&reproj.clip) {
        return Err(invalid("mask does not match reprojected clip"));
    }
    if reference.is_empty() || reference.width() != reproj.clip.width() || reference.height() != reproj.clip.height() {
        return Err(invalid("reference clip size does not match"));
    }
    Ok(())
}

fn features_at(reproj: &ReprojectionResult, reference: &VideoClip, x: usize, y: usize, t: usize, table: &NearestTable<'_>) -> Features {
    let (w, h, n) = (reproj.clip.width(), reproj.clip.height(), reproj.len());
    let diag = ((w * w + h * h) as f64).sqrt();
    let r = reference_frame(reference, t).get(x, y);
    let near = table.query(x, y);
    let (nc, dist) = match near {
        Some((nx, ny, d)) => (reproj.clip.frames[t].get(nx, ny), d / diag),
        None => (r, 1.0),
    };
    let tn = if n > 1 { t as f64 / (n - 1) as f64 } else { 0.0 };
    [
        nc[0] as f64,
        nc[1] as f64,
        nc[2] as f64,
        dist,
        r[0] as f64,
        r[1] as f64,
        r[2] as f64,
        (x as f64 + 0.5) / w as f64,
        (y as f64 + 0.5) / h as f64,
        tn,
    ]
}

/// Features of the occluded pixel `(x, y)` in frame `t`.
pub fn extract_features(reproj: &ReprojectionResult, reference: &VideoClip, x: usize, y: usize, t: usize) -> Result<Features> {
    check_inputs(reproj, reference)?;
    let (w, h) = (reproj.clip.width(), reproj.clip.height());
    if t >= reproj.len() || x >= w || y >= h {
        return Err(invalid(format!("pixel ({x}, {y}, {t}) out of range")));
    }
    if reproj.mask.frames[t][y * w + x] != 0 {
        return Err(invalid(format!("pixel ({x}, {y}, {t}) is visible")));
    }
    let table = NearestTable::new(&reproj.mask.frames[t], w, h);
    Ok(features_at(reproj, reference, x, y, t, &table))
}

/// Every occluded pixel in frame then row-major order.
pub fn hole_pixels(reproj: &ReprojectionResult, reference: &VideoClip) -> Result<Vec<HolePixel>> {
    check_inputs(reproj, reference)?;
    let (w, h) = (reproj.clip.width(), reproj.clip.height());
    let per_frame: Vec<Vec<HolePixel>> = reproj
        .mask
        .frames
        .par_iter()
        .enumerate()
        .map(|(t, m)| {
            let table = NearestTable::new(m, w, h);
            m.iter()
                .enumerate()
                .filter(|(_, &v)| v == 0)
                .map(|(i, _)| HolePixel { frame: t, index: i, phi: features_at(reproj, reference, i % w, i / w, t, &table) })
                .collect()
        })
        .collect();
    Ok(per_frame.into_iter().flatten().collect())
}

/// Sufficient statistics of one sample's actions: enough to evaluate the
/// log-likelihood and its gradient under any parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    /// Sum of x x^T with x = [phi, 1].
    pub xtx: Vec<[f64; N_WEIGHTS]>,
    /// Per channel sum of x a_c.
    pub xa: [[f64; N_WEIGHTS]; 3],
    pub aa: [f64; 3],
    pub n: usize,
}

impl Default for SampleStats {
    fn default() -> Self {
        Self { xtx: vec![[0.0; N_WEIGHTS]; N_WEIGHTS], xa: [[0.0; N_WEIGHTS]; 3], aa: [0.0; 3], n: 0 }
    }
}

impl SampleStats {
    pub fn push(&mut self, phi: &Features, a: [f64; 3]) {
        let mut x = [1.0; N_WEIGHTS];
        x[..N_FEATURES].copy_from_slice(phi);
        for i in 0..N_WEIGHTS {
            for j in 0..N_WEIGHTS {
                self.xtx[i][j] += x[i] * x[j];
            }
            for c in 0..3 {
                self.xa[c][i] += x[i] * a[c];
            }
        }
        for c in 0..3 {
            self.aa[c] += a[c] * a[c];
        }
        self.n += 1;
    }

    pub fn merge(&mut self, other: &SampleStats) {
        for i in 0..N_WEIGHTS {
            for j in 0..N_WEIGHTS {
                self.xtx[i][j] += other.xtx[i][j];
            }
            for c in 0..3 {
                self.xa[c][i] += other.xa[c][i];
            }
        }
        for c in 0..3 {
            self.aa[c] += other.aa[c];
        }
        self.n += other.n;
    }

    fn residual_ss(&self, w: &[f64; N_WEIGHTS], c: usize) -> f64 {
        let mut wxw = 0.0;
        for i in 0..N_WEIGHTS {
            let row: f64 = (0..N_WEIGHTS).map(|j| self.xtx[i][j] * w[j]).sum();
            wxw += w[i] * row;
        }
        let wxa: f64 = w.iter().zip(&self.xa[c]).map(|(a, b)| a * b).sum();
        (self.aa[c] - 2.0 * wxa + wxw).max(0.0)
    }

    pub fn log_prob(&self, params: &PolicyParams) -> f64 {
        let n = self.n as f64;
        (0..3)
            .map(|c| {
                let var = (2.0 * params.log_std[c]).exp();
                -n * (HALF_LN_2PI + params.log_std[c]) - self.residual_ss(&params.weights[c], c) / (2.0 * var)
            })
            .sum()
    }

    /// Gradient in `PolicyParams::to_vec` layout.
    pub fn grad_log_prob(&self, params: &PolicyParams) -> Vec<f64> {
        let mut g = vec![0.0; N_PARAMS];
        for c in 0..3 {
            let var = (2.0 * params.log_std[c]).exp();
            let w = &params.weights[c];
            for i in 0..N_WEIGHTS {
                let xw: f64 = (0..N_WEIGHTS).map(|j| self.xtx[i][j] * w[j]).sum();
                g[c * N_WEIGHTS + i] = (self.xa[c][i] - xw) / var;
            }
            g[3 * N_WEIGHTS + c] = self.residual_ss(w, c) / var - self.n as f64;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSample {
    pub clip: VideoClip,
    /// Unclamped draws, one per occluded pixel in `hole_pixels` order.
    pub actions: Vec<[f64; 3]>,
    pub log_likelihood: f64,
    pub seed: u64,
    pub stats: SampleStats,
}

fn gaussian_logpdf(a: f64, mu: f64, log_std: f64) -> f64 {
    let z = (a - mu) / log_std.exp();
    -HALF_LN_2PI - log_std - 0.5 * z * z
}

pub fn generate(params: &PolicyParams, reproj: &ReprojectionResult, reference: &VideoClip, seed: u64) -> Result<GenerationSample> {
    params.validate()?;
    let holes = hole_pixels(reproj, reference)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clip = reproj.clip.clone();
    let mut actions = Vec::with_capacity(holes.len());
    let mut stats = SampleStats::default();
    let mut ll = 0.0;
    for hp in &holes {
        let mu = params.mean(&hp.phi);
        let mut a = [0.0; 3];
        let mut px = [0.0f32; 3];
        for c in 0..3 {
            let z: f64 = StandardNormal.sample(&mut rng);
            a[c] = mu[c] + params.log_std[c].exp() * z;
            ll += gaussian_logpdf(a[c], mu[c], params.log_std[c]);
            px[c] = a[c].clamp(0.0, 1.0) as f32;
        }
        clip.frames[hp.frame].rgb[hp.index] = px;
        stats.push(&hp.phi, a);
        actions.push(a);
    }
    Ok(GenerationSample { clip, actions, log_likelihood: ll, seed, stats })
}

fn check_actions(sample: &GenerationSample, holes: &[HolePixel]) -> Result<()> {
    if sample.actions.len() != holes.len() {
        return Err(invalid(format!("{} actions for {} occluded pixels", sample.actions.len(), holes.len())));
    }
    Ok(())
}

/// Exact per-pixel log-likelihood of the stored actions.
pub fn log_prob(params: &PolicyParams, sample: &GenerationSample, reproj: &ReprojectionResult, reference: &VideoClip) -> Result<f64> {
    let holes = hole_pixels(reproj, reference)?;
    check_actions(sample, &holes)?;
    let mut ll = 0.0;
    for (hp, a) in holes.iter().zip(&sample.actions) {
        let mu = params.mean(&hp.phi);
        for c in 0..3 {
            ll += gaussian_logpdf(a[c], mu[c], params.log_std[c]);
        }
    }
    Ok(ll)
}

/// Score function in `PolicyParams::to_vec` layout.
pub fn grad_log_prob(
    params: &PolicyParams,
    sample: &GenerationSample,
    reproj: &ReprojectionResult,
    reference: &VideoClip,
) -> Result<Vec<f64>> {
    let holes = hole_pixels(reproj, reference)?;
    check_actions(sample, &holes)?;
    let mut g = vec![0.0; N_PARAMS];
    for (hp, a) in holes.iter().zip(&sample.actions) {
        let mu = params.mean(&hp.phi);
        for c in 0..3 {
            let var = (2.0 * params.log_std[c]).exp();
            let r = a[c] - mu[c];
            for (i, f) in hp.phi.iter().enumerate() {
                g[c * N_WEIGHTS + i] += f * r / var;
            }
            g[c * N_WEIGHTS + N_FEATURES] += r / var;
            g[3 * N_WEIGHTS + c] += r * r / var - 1.0;
        }
    }
    Ok(g)
}
