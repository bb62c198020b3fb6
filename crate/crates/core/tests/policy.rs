use devis_core::camera::Intrinsics;
use devis_core::clip::{DepthClip, DepthMap};
use devis_core::depth_noise::{estimate_depth, DepthNoiseModel};
use devis_core::generator_policy::{Features, PolicyParams, SampleStats, N_PARAMS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// E[grad log p] = 0 under the policy: Monte Carlo over 10^4 samples, each
/// component within three standard errors of zero.
#[test]
fn score_has_zero_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = PolicyParams::passthrough(-1.5);
    for row in params.weights.iter_mut() {
        for w in row.iter_mut() {
            *w += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    params.log_std = [-1.0, -1.5, -0.7];
    let phis: Vec<Features> = (0..4).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
    let n = 10_000;
    let mut sum = vec![0.0; N_PARAMS];
    let mut sq = vec![0.0; N_PARAMS];
    for _ in 0..n {
        let mut s = SampleStats::default();
        for phi in &phis {
            let mean = params.mean(phi);
            let a: [f64; 3] = std::array::from_fn(|c| mean[c] + params.log_std[c].exp() * rng.sample::<f64, _>(StandardNormal));
            s.push(phi, a);
        }
        for (k, g) in s.grad_log_prob(&params).into_iter().enumerate() {
            sum[k] += g;
            sq[k] += g * g;
        }
    }
    for k in 0..N_PARAMS {
        let mean = sum[k] / n as f64;
        let var = sq[k] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se, "component {k}: mean {mean:.4e}, se {se:.4e}");
    }
}

/// Multiplicative depth noise displaces unprojected points in proportion to depth.
#[test]
fn farther_plane_moves_more_in_3d() {
    let intr = Intrinsics::from_fov(64, 64, 60.0);
    let model = DepthNoiseModel { sigma: 0.02, blur_radius: 0, seed: 3, ..DepthNoiseModel::default() };
    let displacement = |d: f32| {
        let clip = DepthClip::new(vec![DepthMap::new(64, 64, vec![d; 64 * 64]).unwrap()]).unwrap();
        let noisy = estimate_depth(&clip, &model).unwrap();
        let mut total = 0.0;
        for y in 0..64 {
            for x in 0..64 {
                let ray = intr.pixel_ray(x, y);
                let dn = noisy.maps[0].get(x, y) as f64;
                total += (ray * dn - ray * d as f64).norm();
            }
        }
        total / (64.0 * 64.0)
    };
    let (near, far) = (displacement(2.0), displacement(4.0));
    assert!(far >= near, "near {near:.4e}, far {far:.4e}");
    assert!((far / near - 2.0).abs() < 1e-3);
}
