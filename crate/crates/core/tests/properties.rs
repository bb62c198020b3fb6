use devis_core::camera::{
    accumulate_motions, compose, decompose, invert, orbit_pose, relative_pose, Intrinsics, OrbitMotion, Pose,
};
use devis_core::clip::{is_sentinel, DepthClip, DepthMap, Frame, DEPTH_SENTINEL};
use devis_core::depth_noise::{estimate_depth, DepthNoiseModel};
use devis_core::grpo_train::{clipped_term, compute_advantages, kl_estimate};
use devis_core::reproject::reproject_frame;
use devis_core::reward::{combine, RewardConfig};
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn pose_strategy() -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-5.0..5.0f64)).prop_map(|(axis, t)| {
        let r = Rotation3::from_scaled_axis(Vector3::from(axis));
        Pose::new(*r.matrix(), Vector3::from(t)).unwrap()
    })
}

fn motion_strategy() -> impl Strategy<Value = OrbitMotion> {
    (-3.0..3.0f64, -1.0..1.0f64, 0.6..1.6f64).prop_map(|(a, e, r)| OrbitMotion::new(a, e, r))
}

fn fractions_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05..1.0f64, 1..6).prop_map(|v| {
        let s: f64 = v.iter().sum();
        let mut f: Vec<f64> = v.iter().map(|x| x / s).collect();
        let head: f64 = f[..f.len() - 1].iter().sum();
        *f.last_mut().unwrap() = 1.0 - head;
        f
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pose_group_laws(a in pose_strategy(), b in pose_strategy(), c in pose_strategy()) {
        let left = compose(&compose(&a, &b), &c);
        let right = compose(&a, &compose(&b, &c));
        prop_assert!(left.max_abs_diff(&right) < 1e-9);
        prop_assert!(compose(&a, &invert(&a)).max_abs_diff(&Pose::identity()) < 1e-9);
        prop_assert!(compose(&Pose::identity(), &a).max_abs_diff(&a) < 1e-12);
        prop_assert!(invert(&invert(&a)).max_abs_diff(&a) < 1e-9);
    }

    #[test]
    fn decomposition_recomposes(total in motion_strategy(), fr in fractions_strategy()) {
        let inc = decompose(&total, &fr).unwrap();
        prop_assert!(accumulate_motions(&inc).max_abs_diff(&total) < 1e-9);
        // chaining relative poses of the increments lands on the total pose
        let base = devis_core::scene::default_source_pose(6.0, 20.0);
        let mut cum = OrbitMotion::zero();
        let mut chained = Pose::identity();
        for m in &inc {
            let next = cum.then(m);
            let step = compose(&invert(&orbit_pose(&base, &cum).unwrap()), &orbit_pose(&base, &next).unwrap());
            chained = compose(&chained, &step);
            cum = next;
        }
        prop_assert!(chained.max_abs_diff(&relative_pose(&base, &total).unwrap()) < 1e-6);
    }

    #[test]
    fn advantages_are_standardised(r in prop::collection::vec(-10.0..10.0f64, 2..32)) {
        let a = compute_advantages(&r).unwrap();
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!(std == 0.0 || (std - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kl_nonnegative(a in -1e4..1e4f64, b in -1e4..1e4f64) {
        let k = kl_estimate(a, b);
        prop_assert!(k >= 0.0 && k.is_finite());
        prop_assert_eq!(kl_estimate(a, a), 0.0);
    }

    #[test]
    fn clip_bound(ratio in 1e-3..10.0f64, adv in -5.0..5.0f64, eps in 0.01..0.9f64) {
        let t = clipped_term(ratio, adv, eps);
        prop_assert!(t.abs() <= (ratio * adv).abs().max((1.0 + eps) * adv.abs()) + 1e-12);
        if adv > 0.0 {
            prop_assert!(t <= (1.0 + eps) * adv + 1e-12);
        }
    }

    #[test]
    fn composite_monotone(l in 0.0..2.0f64, p in 0.0..100.0f64, s in -1.0..1.0f64, q in 0.0..1.0f64, k in 0usize..4, d in 0.0..1.0f64) {
        let cfg = RewardConfig::default();
        let base = combine(l, p, s, q, false, &cfg).composite;
        let mut v = [l, p, s, q];
        // lower lpips is better, every other term higher
        if k == 0 { v[0] -= d } else { v[k] += d }
        let up = combine(v[0], v[1], v[2], v[3], false, &cfg).composite;
        prop_assert!(up >= base - 1e-12);
    }

    #[test]
    fn noise_keeps_sentinels_and_positivity(vals in prop::collection::vec(prop_oneof![Just(-1.0f32), 0.1f32..20.0], 64), seed in any::<u64>(), sigma in 0.0..0.2f64) {
        let depth: Vec<f32> = vals.iter().map(|&v| if v < 0.0 { DEPTH_SENTINEL } else { v }).collect();
        let clip = DepthClip::new(vec![DepthMap::new(8, 8, depth.clone()).unwrap()]).unwrap();
        let model = DepthNoiseModel { sigma, blur_radius: 1, seed, ..DepthNoiseModel::default() };
        let out = estimate_depth(&clip, &model).unwrap();
        for (a, b) in depth.iter().zip(&out.maps[0].depth) {
            prop_assert_eq!(is_sentinel(*a), is_sentinel(*b));
            if !is_sentinel(*b) {
                prop_assert!(*b > 0.0 && b.is_finite());
            }
        }
        prop_assert_eq!(estimate_depth(&clip, &model).unwrap(), out);
    }

    #[test]
    fn identity_warp_is_exact(vals in prop::collection::vec(prop_oneof![Just(-1.0f32), 0.5f32..30.0], 100), colors in prop::collection::vec(prop::array::uniform3(0.0f32..1.0), 100)) {
        let depth: Vec<f32> = vals.iter().map(|&v| if v < 0.0 { DEPTH_SENTINEL } else { v }).collect();
        let d = DepthMap::new(10, 10, depth.clone()).unwrap();
        let f = Frame::new(10, 10, colors).unwrap();
        let intr = Intrinsics::from_fov(10, 10, 60.0);
        let (out, mask, _) = reproject_frame(&f, &d, &intr, &Pose::identity()).unwrap();
        for i in 0..100 {
            prop_assert_eq!(mask[i] == 1, !is_sentinel(depth[i]));
            if mask[i] == 1 {
                prop_assert_eq!(out.rgb[i], f.rgb[i]);
            }
        }
    }
}
