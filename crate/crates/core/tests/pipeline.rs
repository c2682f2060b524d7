use diffreg_core::bench::{evaluate_registration, generate_scene, register, RegistrationConfig, SceneSpec};
use diffreg_core::denoiser::{AnalyticConfig, AnalyticNet, GTheta, GThetaConfig, OracleDenoiser};
use diffreg_core::diffusion::{forward_diffuse_sampled, reverse_sample, DiffusionConfig, Initial, Mode};
use diffreg_core::geometry::{RigidTransform, Vec3};
use diffreg_core::matrixspace::{sinkhorn_project, MatchMatrix};
use diffreg_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn analytic() -> GTheta<AnalyticNet> {
    GTheta::new(AnalyticNet::new(AnalyticConfig::default()), GThetaConfig::default())
}

#[test]
fn oracle_sampling_registers_exactly() {
    let scene = generate_scene(&SceneSpec {
        n_points: 48,
        noise_sigma: 0.0,
        seed: 3,
        ..SceneSpec::default()
    })
    .unwrap();
    let den = OracleDenoiser::new(scene.ground_truth_matrix().unwrap());
    let rc = RegistrationConfig::default();
    let reg = register(&Initial::WhiteNoise, &den, scene.clouds(), &DiffusionConfig::default(), &rc, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let report = evaluate_registration(&reg, &scene, &rc).unwrap();
    assert_eq!(report.inlier_ratio, 1.0);
    assert!(report.rotation_error.unwrap() < 1e-6);
}

#[test]
fn analytic_registration_is_reproducible_and_accurate() {
    let scene = generate_scene(&SceneSpec { seed: 4, ..SceneSpec::default() }).unwrap();
    let rc = RegistrationConfig::default();
    let run = || register(&Initial::WhiteNoise, &analytic(), scene.clouds(), &DiffusionConfig::default(), &rc, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.sample.trajectory, b.sample.trajectory);
    assert_eq!(a.correspondences, b.correspondences);
    let report = evaluate_registration(&a, &scene, &rc).unwrap();
    assert!(report.inlier_ratio >= 0.9, "{}", report.inlier_ratio);
    assert!(report.rotation_error.unwrap() < 2.0);
}

#[test]
fn rigid_motion_of_the_scene_moves_the_pose() {
    let scene = generate_scene(&SceneSpec { seed: 5, ..SceneSpec::default() }).unwrap();
    let extra = RigidTransform::from_axis_angle(Vec3::new(1.0, 2.0, 0.5), 0.7, Vec3::new(0.1, 0.0, -0.2));
    let moved = scene.transformed(&extra).unwrap();
    let rc = RegistrationConfig::default();
    for s in [&scene, &moved] {
        let reg = register(&Initial::WhiteNoise, &analytic(), s.clouds(), &DiffusionConfig::default(), &rc, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let report = evaluate_registration(&reg, s, &rc).unwrap();
        assert!(report.rotation_error.unwrap() < 2.0);
    }
}

#[test]
fn deformable_sampling_yields_flow() {
    let scene = generate_scene(&SceneSpec {
        mode: Mode::Deformable,
        deformation_amplitude: 0.03,
        n_points: 64,
        seed: 6,
        ..SceneSpec::default()
    })
    .unwrap();
    let mut cfg = DiffusionConfig::default();
    cfg.mode = Mode::Deformable;
    let rc = RegistrationConfig::default();
    let reg = register(&Initial::WhiteNoise, &analytic(), scene.clouds(), &cfg, &rc, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(reg.flow.len(), scene.source.len());
    let report = evaluate_registration(&reg, &scene, &rc).unwrap();
    assert!(report.rotation_error.is_none());
    assert!(report.flow.is_some());
}

#[test]
fn mismatched_start_matrix_is_rejected() {
    let scene = generate_scene(&SceneSpec {
        n_points: 16,
        ..SceneSpec::default()
    })
    .unwrap();
    let start = Initial::Matrix(MatchMatrix::uniform(3, 3));
    let den = OracleDenoiser::new(scene.ground_truth_matrix().unwrap());
    let err = reverse_sample(&start, &den, scene.clouds(), &DiffusionConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }), "{err:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sinkhorn_lands_on_the_polytope(seed in any::<u64>(), n in 1usize..12, m in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = MatchMatrix::from_fn(n, m, |_, _| rand::Rng::random_range(&mut rng, 0.05..1.0)).unwrap();
        let p = sinkhorn_project(&a, 200, false).unwrap();
        let (row, col) = p.marginal_deviation();
        prop_assert!(row < 1e-9 && col < 1e-6);
        prop_assert!(p.min() >= 0.0);
    }

    #[test]
    fn forward_samples_stay_feasible(seed in any::<u64>(), t in 1usize..=1000, deformable in any::<bool>()) {
        let scene = generate_scene(&SceneSpec { n_points: 12, seed: seed % 64, ..SceneSpec::default() }).unwrap();
        let e0 = scene.ground_truth_matrix().unwrap();
        let mut cfg = DiffusionConfig::default();
        if deformable {
            cfg.mode = Mode::Deformable;
        }
        let x = forward_diffuse_sampled(&e0, t, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().projected;
        let (row, col) = x.marginal_deviation();
        prop_assert!(row < 1e-6 && col < 1e-3, "row {} col {}", row, col);
        prop_assert!(x.min() >= 0.0);
    }
}
