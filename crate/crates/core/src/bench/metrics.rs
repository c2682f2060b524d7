use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::ScenePair;
use crate::error::{Error, Result};
use crate::geometry::interpolate_flow;
use crate::geometry::{FlowField, RigidTransform, Vec3};
use crate::matrixspace::Correspondence;

/// Default IR/NFMR threshold as a fraction of the scene diameter.
pub const DEFAULT_TAU_FRACTION: f64 = 0.04;
/// Default number of anchors blended by NFMR.
pub const NFMR_NEIGHBORS: usize = 3;

pub const ACC_STRICT_ABS: f64 = 0.025;
pub const ACC_RELAXED_ABS: f64 = 0.05;
pub const ACC_REL: f64 = 0.05;
pub const OUTLIER_REL: f64 = 0.30;
/// Ground-truth flow below this norm is treated as zero.
pub const ZERO_FLOW: f64 = 1e-9;

/// A ratio together with a flag that the prediction was empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub value: f64,
    pub empty_prediction: bool,
}

impl Scored {
    fn empty() -> Self {
        log::warn!("empty prediction scored as 0");
        Self {
            value: 0.0,
            empty_prediction: true,
        }
    }
}

fn check_indices(pred: &[Correspondence], pair: &ScenePair) -> Result<()> {
    for c in pred {
        if c.source >= pair.source.len() {
            return Err(Error::IndexOutOfRange {
                index: c.source,
                len: pair.source.len(),
            });
        }
        if c.target >= pair.target.len() {
            return Err(Error::IndexOutOfRange {
                index: c.target,
                len: pair.target.len(),
            });
        }
    }
    Ok(())
}

/// Fraction of predicted pairs whose ground-truth-warped source point lies
/// within `tau` of the predicted target point.
pub fn inlier_ratio(pred: &[Correspondence], pair: &ScenePair, tau: f64) -> Result<Scored> {
    check_indices(pred, pair)?;
    if pred.is_empty() {
        return Ok(Scored::empty());
    }
    let hits = pred
        .iter()
        .filter(|c| (pair.warp_gt(c.source) - pair.target.point(c.target)).norm() < tau)
        .count();
    Ok(Scored {
        value: hits as f64 / pred.len() as f64,
        empty_prediction: false,
    })
}

/// Fraction of ground-truth pairs recovered by interpolating the flow of
/// the predicted pairs (used as anchors) over the source cloud.
pub fn nfmr(pred: &[Correspondence], pair: &ScenePair, tau: f64, k: usize) -> Result<Scored> {
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: "must be at least 1",
        });
    }
    check_indices(pred, pair)?;
    if pred.is_empty() {
        return Ok(Scored::empty());
    }
    if pair.gt_pairs.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let anchors: Vec<(usize, Vec3)> = pred
        .iter()
        .map(|c| (c.source, pair.target.point(c.target) - pair.source.point(c.source)))
        .collect();
    let flow = interpolate_flow(&pair.source, &anchors, k)?;
    let recovered = pair
        .gt_pairs
        .iter()
        .filter(|&&(u, v)| (pair.source.point(u) + flow.vectors()[u] - pair.target.point(v)).norm() < tau)
        .count();
    Ok(Scored {
        value: recovered as f64 / pair.gt_pairs.len() as f64,
        empty_prediction: false,
    })
}

/// Rotation geodesic error (degrees) and translation error (meters).
///
/// The angle of `R_pred^T R_gt` is taken with `atan2` of its sine (from the
/// skew part) and cosine (from the trace), which equals the clamped
/// `arccos((tr - 1) / 2)` but stays accurate near zero.
pub fn registration_errors(pred: &RigidTransform, gt: &RigidTransform) -> (f64, f64) {
    let r = pred.rotation().transpose() * gt.rotation();
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = (skew.norm() / 2.0).min(1.0);
    (sin.atan2(cos).to_degrees(), (pred.translation() - gt.translation()).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub epe: f64,
    pub acc_s: f64,
    pub acc_r: f64,
    pub outlier_ratio: f64,
}

/// End-point error and threshold accuracies of a predicted source flow.
///
/// AccS counts `e < 2.5 cm` or `e / |gt| < 5%`, AccR `e < 5 cm` or
/// `e / |gt| < 5%`, OR counts `e / |gt| > 30%`. Points with `|gt| < 1e-9`
/// use the absolute thresholds only and are left out of OR.
pub fn flow_metrics(pred: &FlowField, pair: &ScenePair) -> Result<FlowMetrics> {
    flow_metrics_against(pred, &pair.gt_flow)
}

/// [`flow_metrics`] against an explicit ground-truth flow.
pub fn flow_metrics_against(pred: &FlowField, gt: &FlowField) -> Result<FlowMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            found: pred.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let (mut epe, mut strict, mut relaxed, mut outliers, mut counted) = (0.0, 0usize, 0usize, 0usize, 0usize);
    for (p, g) in pred.vectors().iter().zip(gt.vectors()) {
        let e = (p - g).norm();
        let scale = g.norm();
        let rel = (scale >= ZERO_FLOW).then(|| e / scale);
        epe += e;
        if e < ACC_STRICT_ABS || rel.is_some_and(|r| r < ACC_REL) {
            strict += 1;
        }
        if e < ACC_RELAXED_ABS || rel.is_some_and(|r| r < ACC_REL) {
            relaxed += 1;
        }
        if let Some(r) = rel {
            counted += 1;
            if r > OUTLIER_REL {
                outliers += 1;
            }
        }
    }
    let n = gt.len() as f64;
    Ok(FlowMetrics {
        epe: epe / n,
        acc_s: strict as f64 / n,
        acc_r: relaxed as f64 / n,
        outlier_ratio: if counted == 0 { 0.0 } else { outliers as f64 / counted as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub component: String,
    pub seconds: f64,
}

/// Scores of one registration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tau: f64,
    pub correspondences: usize,
    pub inlier_ratio: f64,
    pub nfmr: f64,
    pub empty_prediction: bool,
    pub rotation_error: Option<f64>,
    pub translation_error: Option<f64>,
    pub flow: Option<FlowMetrics>,
    pub runtime: Vec<Timing>,
}

impl MetricsReport {
    /// IR and NFMR of `pred`, plus pose errors when `pose` is given and
    /// flow metrics when `flow` is given.
    pub fn evaluate(
        pred: &[Correspondence],
        pair: &ScenePair,
        tau: f64,
        pose: Option<&RigidTransform>,
        flow: Option<&FlowField>,
    ) -> Result<Self> {
        let ir = inlier_ratio(pred, pair, tau)?;
        let nf = nfmr(pred, pair, tau, NFMR_NEIGHBORS)?;
        let errors = pose.map(|p| registration_errors(p, &pair.gt_transform));
        let flow = flow.map(|f| flow_metrics(f, pair)).transpose()?;
        Ok(Self {
            tau,
            correspondences: pred.len(),
            inlier_ratio: ir.value,
            nfmr: nf.value,
            empty_prediction: ir.empty_prediction,
            rotation_error: errors.map(|e| e.0),
            translation_error: errors.map(|e| e.1),
            flow,
            runtime: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate_scene, SceneSpec};
    use crate::diffusion::Mode;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corr(source: usize, target: usize) -> Correspondence {
        Correspondence {
            source,
            target,
            confidence: 1.0,
            weight: 1.0,
        }
    }

    fn noiseless(seed: u64) -> ScenePair {
        generate_scene(&SceneSpec {
            noise_sigma: 0.0,
            seed,
            ..SceneSpec::default()
        })
        .unwrap()
    }

    fn gt_pred(pair: &ScenePair) -> Vec<Correspondence> {
        pair.gt_pairs.iter().map(|&(i, j)| corr(i, j)).collect()
    }

    fn min_target_gap(pair: &ScenePair) -> f64 {
        let q = pair.target.points();
        let mut best = f64::INFINITY;
        for a in 0..q.len() {
            for b in a + 1..q.len() {
                best = best.min((q[a] - q[b]).norm());
            }
        }
        best
    }

    #[test]
    fn gt_prediction_is_all_inliers() {
        let pair = noiseless(1);
        for tau in [1e-9, 0.01, 1.0] {
            assert_eq!(inlier_ratio(&gt_pred(&pair), &pair, tau).unwrap().value, 1.0);
        }
    }

    #[test]
    fn shifted_targets_miss() {
        let pair = noiseless(2);
        let tau = 0.4 * min_target_gap(&pair);
        let n = pair.gt_pairs.len();
        let shifted: Vec<_> = (0..n).map(|k| corr(pair.gt_pairs[k].0, pair.gt_pairs[(k + 1) % n].1)).collect();
        assert_eq!(inlier_ratio(&shifted, &pair, tau).unwrap().value, 0.0);
        let half = n / 2;
        let mixed: Vec<_> = (0..2 * half)
            .map(|k| if k < half { corr(pair.gt_pairs[k].0, pair.gt_pairs[k].1) } else { shifted[k] })
            .collect();
        assert_eq!(inlier_ratio(&mixed, &pair, tau).unwrap().value, 0.5);
    }

    #[test]
    fn empty_prediction_flagged() {
        let pair = noiseless(3);
        let ir = inlier_ratio(&[], &pair, 0.1).unwrap();
        assert_eq!((ir.value, ir.empty_prediction), (0.0, true));
        let nf = nfmr(&[], &pair, 0.1, 3).unwrap();
        assert_eq!((nf.value, nf.empty_prediction), (0.0, true));
    }

    #[test]
    fn nfmr_of_gt_is_one() {
        let pair = noiseless(4);
        assert_eq!(nfmr(&gt_pred(&pair), &pair, 1e-9, 3).unwrap().value, 1.0);
    }

    #[test]
    fn single_anchor_recovers_translation() {
        let pair = generate_scene(&SceneSpec {
            noise_sigma: 0.0,
            identity_transform: true,
            seed: 5,
            ..SceneSpec::default()
        })
        .unwrap();
        let t = Vec3::new(0.3, -0.2, 0.1);
        let moved = ScenePair {
            target: crate::geometry::warp_rigid(&pair.target, &RigidTransform::from_translation(t)),
            gt_transform: RigidTransform::from_translation(t),
            gt_flow: FlowField::new(vec![t; pair.source.len()]).unwrap(),
            ..pair
        };
        let (i, j) = moved.gt_pairs[7];
        assert_eq!(nfmr(&[corr(i, j)], &moved, 1e-9, 3).unwrap().value, 1.0);
    }

    /// Straightforward restatement of NFMR with its own inverse-distance
    /// blend, used as an independent oracle.
    fn nfmr_oracle(pred: &[Correspondence], pair: &ScenePair, tau: f64, k: usize) -> f64 {
        let p = pair.source.points();
        let q = pair.target.points();
        let mut ok = 0;
        for &(u, v) in &pair.gt_pairs {
            let mut d: Vec<(f64, usize)> = pred.iter().enumerate().map(|(a, c)| ((p[u] - p[c.source]).norm(), a)).collect();
            d.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
            let flow = if d[0].0 == 0.0 {
                let c = pred[d[0].1];
                q[c.target] - p[c.source]
            } else {
                let (mut acc, mut w) = (Vec3::zeros(), 0.0);
                for &(dist, a) in d.iter().take(k) {
                    let c = pred[a];
                    let wa = 1.0 / (1e-8 + dist);
                    acc += (q[c.target] - p[c.source]) * wa;
                    w += wa;
                }
                acc / w
            };
            if (p[u] + flow - q[v]).norm() < tau {
                ok += 1;
            }
        }
        ok as f64 / pair.gt_pairs.len() as f64
    }

    #[test]
    fn nfmr_matches_independent_oracle() {
        for seed in 0..5 {
            let pair = generate_scene(&SceneSpec {
                mode: Mode::Deformable,
                deformation_amplitude: 0.05,
                noise_sigma: 0.0,
                n_points: 200,
                seed,
                ..SceneSpec::default()
            })
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pred: Vec<_> = pair
                .gt_pairs
                .iter()
                .filter(|_| rng.random::<f64>() < 0.1)
                .map(|&(i, j)| corr(i, j))
                .collect();
            let tau = 0.05 * pair.scene_diameter;
            let got = nfmr(&pred, &pair, tau, 3).unwrap().value;
            let want = nfmr_oracle(&pred, &pair, tau, 3);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            assert!(got > 0.0 && got < 1.0);
        }
    }

    #[test]
    fn correct_anchors_recover_at_least_their_share() {
        for seed in 0..5 {
            let pair = noiseless(seed + 10);
            let pred: Vec<_> = gt_pred(&pair).into_iter().step_by(4).collect();
            let tau = 0.01 * pair.scene_diameter;
            let ir_share = pred.len() as f64 / pair.gt_pairs.len() as f64;
            assert!(nfmr(&pred, &pair, tau, 3).unwrap().value >= ir_share);
        }
    }

    fn quaternion_angle_deg(a: &RigidTransform, b: &RigidTransform) -> f64 {
        let qa = nalgebra::UnitQuaternion::from_matrix(a.rotation());
        let qb = nalgebra::UnitQuaternion::from_matrix(b.rotation());
        let dot = qa.coords.dot(&qb.coords).abs().min(1.0);
        (2.0 * dot.acos()).to_degrees()
    }

    #[test]
    fn registration_errors_examples() {
        let gt = RigidTransform::from_axis_angle(Vec3::new(0.2, 1.0, -0.4), 1.1, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(registration_errors(&gt, &gt).1, 0.0);
        assert_eq!(registration_errors(&gt, &gt).0, 0.0);
        let extra = RigidTransform::from_axis_angle(Vec3::z(), 10f64.to_radians(), Vec3::zeros());
        let pred = RigidTransform::new(gt.rotation() * extra.rotation(), *gt.translation()).unwrap();
        assert!((registration_errors(&pred, &gt).0 - 10.0).abs() < 1e-9);
    }

    #[test]
    fn registration_errors_match_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let random = |rng: &mut ChaCha8Rng| {
            let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let t = Vec3::new(rng.random(), rng.random(), rng.random());
            RigidTransform::from_axis_angle(axis, rng.random_range(0.1..3.0), t)
        };
        for _ in 0..200 {
            let (a, b) = (random(&mut rng), random(&mut rng));
            let (rot, trans) = registration_errors(&a, &b);
            assert!((rot - quaternion_angle_deg(&a, &b)).abs() < 1e-9);
            assert!((trans - (a.translation() - b.translation()).norm()).abs() < 1e-12);
        }
    }

    fn unit_flow(n: usize, scale: f64) -> FlowField {
        FlowField::new((0..n).map(|i| Vec3::new((i as f64).cos(), (i as f64).sin(), 0.0) * scale).collect()).unwrap()
    }

    fn offset(f: &FlowField, by: Vec3) -> FlowField {
        FlowField::new(f.vectors().iter().map(|v| v + by).collect()).unwrap()
    }

    #[test]
    fn flow_metrics_exact_prediction() {
        let gt = unit_flow(10, 0.2);
        let m = flow_metrics_against(&gt, &gt).unwrap();
        assert_eq!((m.epe, m.acc_s, m.acc_r, m.outlier_ratio), (0.0, 1.0, 1.0, 0.0));
    }

    #[test]
    fn flow_metrics_threshold_cases() {
        let by = Vec3::new(0.0, 0.0, 0.03);
        // |gt| = 1: 3 cm fails 2.5 cm but 3% relative passes the 5% rule
        let gt = unit_flow(10, 1.0);
        let m = flow_metrics_against(&offset(&gt, by), &gt).unwrap();
        assert!((m.epe - 0.03).abs() < 1e-12);
        assert_eq!((m.acc_s, m.acc_r, m.outlier_ratio), (1.0, 1.0, 0.0));
        // |gt| = 0.5: 6% relative, so strict fails and relaxed passes on 5 cm
        let gt = unit_flow(10, 0.5);
        let m = flow_metrics_against(&offset(&gt, by), &gt).unwrap();
        assert_eq!((m.acc_s, m.acc_r, m.outlier_ratio), (0.0, 1.0, 0.0));
        // |gt| = 0.08: 37.5% relative error is an outlier, still within 5 cm
        let gt = unit_flow(10, 0.08);
        let m = flow_metrics_against(&offset(&gt, by), &gt).unwrap();
        assert_eq!((m.acc_s, m.acc_r, m.outlier_ratio), (0.0, 1.0, 1.0));
    }

    #[test]
    fn zero_prediction_is_all_outliers() {
        let gt = unit_flow(12, 0.2);
        let m = flow_metrics_against(&FlowField::zeros(12), &gt).unwrap();
        assert_eq!((m.acc_s, m.acc_r, m.outlier_ratio), (0.0, 0.0, 1.0));
        assert!((m.epe - 0.2).abs() < 1e-12);
    }

    #[test]
    fn zero_gt_flow_excluded_from_outliers() {
        let gt = FlowField::new(vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        let pred = FlowField::new(vec![Vec3::new(0.01, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.0)]).unwrap();
        let m = flow_metrics_against(&pred, &gt).unwrap();
        assert_eq!((m.acc_s, m.acc_r, m.outlier_ratio), (0.5, 0.5, 1.0));
        assert!(flow_metrics_against(&FlowField::zeros(1), &gt).is_err());
    }

    #[test]
    fn report_bundles_scores() {
        let pair = noiseless(6);
        let flow = pair.gt_flow.clone();
        let r = MetricsReport::evaluate(&gt_pred(&pair), &pair, 0.01, Some(&pair.gt_transform), Some(&flow)).unwrap();
        assert_eq!((r.inlier_ratio, r.nfmr), (1.0, 1.0));
        assert!(r.rotation_error.unwrap() < 1e-6);
        assert_eq!(r.flow.unwrap().acc_s, 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn strict_implies_relaxed(seed in any::<u64>(), scale in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = FlowField::new((0..20).map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * scale).collect()).unwrap();
            let pred = FlowField::new(gt.vectors().iter().map(|v| v + Vec3::new(rng.random(), rng.random(), rng.random()) * 0.1).collect()).unwrap();
            let m = flow_metrics_against(&pred, &gt).unwrap();
            prop_assert!(m.acc_s <= m.acc_r);
            for v in [m.acc_s, m.acc_r, m.outlier_ratio] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn metrics_invariant_under_rigid_motion(seed in 0u64..1000, angle in 0.0f64..3.0) {
            let pair = generate_scene(&SceneSpec {
                mode: Mode::Deformable,
                deformation_amplitude: 0.05,
                n_points: 64,
                seed,
                ..SceneSpec::default()
            }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pred: Vec<_> = (0..40).map(|_| corr(rng.random_range(0..64), rng.random_range(0..64))).collect();
            let pred_flow = FlowField::new(pair.gt_flow.vectors().iter().map(|v| v * 0.9).collect()).unwrap();
            let motion = RigidTransform::from_axis_angle(Vec3::new(0.3, -0.5, 1.0), angle, Vec3::new(1.0, -2.0, 0.5));
            let moved = pair.transformed(&motion).unwrap();
            let moved_flow = FlowField::new(pred_flow.vectors().iter().map(|v| motion.rotation() * v).collect()).unwrap();
            let tau = 0.1 * pair.scene_diameter;
            let a = MetricsReport::evaluate(&pred, &pair, tau, None, Some(&pred_flow)).unwrap();
            let b = MetricsReport::evaluate(&pred, &moved, tau, None, Some(&moved_flow)).unwrap();
            prop_assert!((a.inlier_ratio - b.inlier_ratio).abs() < 1e-9);
            prop_assert!((a.nfmr - b.nfmr).abs() < 1e-9);
            let (fa, fb) = (a.flow.unwrap(), b.flow.unwrap());
            prop_assert!((fa.epe - fb.epe).abs() < 1e-9);
            prop_assert!((fa.acc_s - fb.acc_s).abs() < 1e-9);
            prop_assert!((fa.outlier_ratio - fb.outlier_ratio).abs() < 1e-9);
        }
    }
}
