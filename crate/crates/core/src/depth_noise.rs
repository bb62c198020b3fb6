//! Synthetic depth estimator: multiplicative log-normal noise plus smearing
//! across depth discontinuities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clip::{is_sentinel, DepthClip, DepthMap};
use crate::error::{invalid, Result};

/// Fraction of the scene extent above which a neighbourhood counts as a discontinuity.
pub const DISCONTINUITY_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthNoiseModel {
    pub sigma: f64,
    pub blur_radius: usize,
    pub seed: u64,
    /// Scene half-width used to scale the discontinuity threshold.
    #[serde(default = "default_extent")]
    pub scene_extent: f64,
}

fn default_extent() -> f64 {
    2.5
}

impl Default for DepthNoiseModel {
    fn default() -> Self {
        Self { sigma: 0.02, blur_radius: 1, seed: 0, scene_extent: default_extent() }
    }
}

impl DepthNoiseModel {
    pub fn exact() -> Self {
        Self { sigma: 0.0, blur_radius: 0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(invalid(format!("depth noise sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.scene_extent.is_finite() && self.scene_extent > 0.0) {
            return Err(invalid("scene extent must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn frame_seed(seed: u64, frame: usize) -> u64 {
    let mut z = seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn corrupt(map: &DepthMap, sigma: f64, seed: u64) -> Vec<f32> {
    if sigma == 0.0 {
        return map.depth.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    map.depth
        .iter()
        .map(|&d| {
            // one draw per pixel, sentinel or not, keeps pixel i on draw i
            let e: f64 = StandardNormal.sample(&mut rng);
            if is_sentinel(d) {
                d
            } else {
                (d as f64 * (sigma * e).exp()) as f32
            }
        })
        .collect()
}

fn discontinuities(depth: &[f32], w: usize, h: usize, threshold: f64) -> Vec<bool> {
    let mut out = vec![false; depth.len()];
    for y in 0..h {
        for x in 0..w {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let d = depth[ny * w + nx];
                    if !is_sentinel(d) {
                        lo = lo.min(d as f64);
                        hi = hi.max(d as f64);
                    }
                }
            }
            out[y * w + x] = hi - lo > threshold;
        }
    }
    out
}

fn blur_edges(depth: &[f32], w: usize, h: usize, radius: usize, threshold: f64) -> Vec<f32> {
    let edge = discontinuities(depth, w, h, threshold);
    let mut out = depth.to_vec();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !edge[i] || is_sentinel(depth[i]) {
                continue;
            }
            let (mut sum, mut n) = (0.0f64, 0usize);
            for ny in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                for nx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                    let d = depth[ny * w + nx];
                    if !is_sentinel(d) {
                        sum += d as f64;
                        n += 1;
                    }
                }
            }
            out[i] = (sum / n as f64) as f32;
        }
    }
    out
}

pub fn estimate_depth_map(map: &DepthMap, model: &DepthNoiseModel, frame: usize) -> Result<DepthMap> {
    model.validate()?;
    let noisy = corrupt(map, model.sigma, frame_seed(model.seed, frame));
    let out = if model.blur_radius == 0 {
        noisy
    } else {
        let threshold = DISCONTINUITY_FRACTION * model.scene_extent;
        blur_edges(&noisy, map.width, map.height, model.blur_radius, threshold)
    };
    DepthMap::new(map.width, map.height, out)
}

/// Corrupted copy of `truth`; frame `i` draws from its own seeded stream.
pub fn estimate_depth(truth: &DepthClip, model: &DepthNoiseModel) -> Result<DepthClip> {
    model.validate()?;
    let maps = truth
        .maps
        .par_iter()
        .enumerate()
        .map(|(i, m)| estimate_depth_map(m, model, i))
        .collect::<Result<Vec<_>>>()?;
    DepthClip::new(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::DEPTH_SENTINEL;

    fn plane(w: usize, h: usize, d: f32) -> DepthMap {
        DepthMap::new(w, h, vec![d; w * h]).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut m = plane(16, 16, 3.0);
        m.depth[5] = DEPTH_SENTINEL;
        m.depth[40] = 7.25;
        let clip = DepthClip::new(vec![m.clone(), m]).unwrap();
        let model = DepthNoiseModel { sigma: 0.0, blur_radius: 0, seed: 9, ..Default::default() };
        assert_eq!(estimate_depth(&clip, &model).unwrap(), clip);
    }

    #[test]
    fn log_ratio_std_matches_sigma() {
        let m = plane(128, 128, 4.0);
        let model = DepthNoiseModel { sigma: 0.02, blur_radius: 0, seed: 3, ..Default::default() };
        let out = estimate_depth_map(&m, &model, 0).unwrap();
        let r: Vec<f64> = out.depth.iter().map(|&d| (d as f64 / 4.0).ln()).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
        assert!((sd - 0.02).abs() < 0.002, "sd {sd}");
    }

    #[test]
    fn step_edge_is_smeared() {
        let (w, h) = (12, 6);
        let depth: Vec<f32> = (0..w * h).map(|i| if i % w < 6 { 2.0 } else { 5.0 }).collect();
        let m = DepthMap::new(w, h, depth).unwrap();
        let model = DepthNoiseModel { sigma: 0.0, blur_radius: 2, seed: 0, ..Default::default() };
        let out = estimate_depth_map(&m, &model, 0).unwrap();
        for y in 0..h {
            for x in [5, 6] {
                let d = out.get(x, y);
                assert!(d > 2.0 && d < 5.0, "({x},{y}) = {d}");
            }
            assert_eq!(out.get(0, y), 2.0);
            assert_eq!(out.get(11, y), 5.0);
        }
        // hand value: column 5 sees columns 3..=7 -> 3 at 2.0 and 2 at 5.0
        assert!((out.get(5, 3) - 3.2).abs() < 1e-6);
    }

    #[test]
    fn sentinels_survive() {
        let mut m = plane(8, 8, 2.0);
        for i in 0..8 {
            m.depth[i * 8 + 7] = DEPTH_SENTINEL;
        }
        let model = DepthNoiseModel { sigma: 0.1, blur_radius: 2, seed: 1, ..Default::default() };
        let out = estimate_depth_map(&m, &model, 0).unwrap();
        for i in 0..8 {
            assert_eq!(out.depth[i * 8 + 7], DEPTH_SENTINEL);
        }
        assert!(out.depth.iter().all(|&d| d > 0.0));
    }

    #[test]
    fn deterministic_and_frame_dependent() {
        let m = plane(8, 8, 2.0);
        let model = DepthNoiseModel { sigma: 0.05, blur_radius: 1, seed: 11, ..Default::default() };
        let a = estimate_depth_map(&m, &model, 0).unwrap();
        assert_eq!(a, estimate_depth_map(&m, &model, 0).unwrap());
        assert_ne!(a, estimate_depth_map(&m, &model, 1).unwrap());
        assert_ne!(a, estimate_depth_map(&m, &model.with_seed(12), 0).unwrap());
    }

    #[test]
    fn negative_sigma_rejected() {
        let m = plane(4, 4, 1.0);
        let model = DepthNoiseModel { sigma: -0.1, ..Default::default() };
        assert!(estimate_depth_map(&m, &model, 0).is_err());
    }
}
