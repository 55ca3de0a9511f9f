use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dicke_feedback::config::RunSettings;
use dicke_feedback::engine::{run_trajectory, SeedPlan};
use dicke_feedback::metrics::{entanglement_entropy, maximally_entangled_state, overlap, purity};
use dicke_feedback::protocol::{
    kraus_pair, FeedbackMode, FeedbackPolicy, FrameAngle, Protocol, ProtocolConfig,
};
use dicke_feedback::spin::{
    build_joint_ops, commutator, max_abs_diff, unitarity_defect, JointOps, LocalRotation,
    RotationCache, SpinBasis,
};
use dicke_feedback::state::QuantumState;
use dicke_feedback::stats::success_fraction;
use dicke_feedback::C64;

const ATOMS: [usize; 4] = [1, 2, 4, 10];

fn random_pure(dim: usize, seed: u64) -> QuantumState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = DVector::from_fn(dim, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let norm = v.norm();
    QuantumState::Pure(v / C64::new(norm, 0.0))
}

/// `⟨Jx²+Jy²+Jz²⟩` on ensemble 1.
fn casimir_first(state: &QuantumState, ops: &JointOps) -> f64 {
    ops.first
        .iter()
        .map(|j| state.trace_with(&(j.matrix() * j.matrix())).re)
        .sum()
}

fn protocol(n_atoms: usize, mode: FeedbackMode, eta: f64) -> Protocol {
    Protocol::new(ProtocolConfig {
        n_atoms,
        eta,
        policy: FeedbackPolicy::with_mode(mode),
        ..ProtocolConfig::default()
    })
    .unwrap()
}

/// Ladder-formula Jx, built independently of the library.
fn ladder_jx(n_atoms: usize) -> DMatrix<C64> {
    let j = n_atoms as f64 / 2.0;
    let d = n_atoms + 1;
    DMatrix::from_fn(d, d, |r, c| {
        let (mr, mc) = (r as f64 - j, c as f64 - j);
        if (mr - mc - 1.0).abs() < 1e-12 || (mc - mr - 1.0).abs() < 1e-12 {
            let m = mr.min(mc);
            C64::new(0.5 * (j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

#[test]
fn spin_algebra_for_test_sizes() {
    let i = C64::new(0.0, 1.0);
    for n in ATOMS {
        let basis = SpinBasis::new(n).unwrap();
        let ops = build_joint_ops(&basis).unwrap();
        let s = &ops.single;
        assert!(max_abs_diff(s.jx.matrix(), &ladder_jx(n)) < 1e-14, "N={n}");
        let single = [s.jx.matrix(), s.jy.matrix(), s.jz.matrix()];
        let joint = [
            ops.jx_plus.matrix(),
            ops.jy_plus.matrix(),
            ops.jz_plus.matrix(),
        ];
        for set in [single, joint] {
            for a in 0..3 {
                let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                assert!(max_abs_diff(&commutator(set[a], set[b]), &(set[c] * i)) <= 1e-12);
            }
        }
        for a in &ops.first {
            for b in &ops.second {
                assert!(commutator(a.matrix(), b.matrix()).camax() <= 1e-12);
            }
        }
        let j = n as f64 / 2.0;
        let casimir = single
            .iter()
            .fold(DMatrix::<C64>::zeros(n + 1, n + 1), |acc, m| acc + *m * *m);
        let expected = DMatrix::<C64>::identity(n + 1, n + 1) * C64::new(j * (j + 1.0), 0.0);
        assert!(max_abs_diff(&casimir, &expected) <= 1e-10, "N={n}");
    }
}

#[test]
fn povm_completeness_grid() {
    for n in ATOMS {
        let basis = SpinBasis::new(n).unwrap();
        for chi in [0.0, 0.01, 0.03, 0.3] {
            let k = kraus_pair(&basis, chi);
            assert!(k.completeness_defect() <= 1e-12, "N={n} chi={chi}");
            for (p, m) in k.plus_diag().iter().zip(k.minus_diag()) {
                assert!((p.norm_sqr() + m.norm_sqr() - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn joint_kernel_is_the_target_for_small_sizes() {
    for n in 1..=3 {
        let basis = SpinBasis::new(n).unwrap();
        let ops = build_joint_ops(&basis).unwrap();
        let d = basis.joint_dim();
        let mut stacked = DMatrix::<C64>::zeros(3 * d, d);
        for (block, op) in [&ops.jz_plus, &ops.jy_minus, &ops.jx_minus]
            .iter()
            .enumerate()
        {
            stacked.rows_mut(block * d, d).copy_from(op.matrix());
        }
        let svd = stacked.svd(false, true);
        let v_t = svd.v_t.unwrap();
        let null: Vec<usize> = (0..d).filter(|&k| svd.singular_values[k] < 1e-8).collect();
        assert_eq!(null.len(), 1, "N={n}");
        let kernel = v_t.row(null[0]).adjoint();
        let QuantumState::Pure(target) = maximally_entangled_state(&basis) else {
            unreachable!()
        };
        assert!((target.dotc(&kernel).norm() - 1.0).abs() < 1e-10, "N={n}");
    }
}

/// Variance sum at stride-100 records non-increasing in at least 95% of pairs.
#[test]
#[ignore = "fails: measured falling share is 0.85-0.95 per run; late sums near 1e-4 rise after individual detections"]
fn variances_fall_in_successful_simple_exact_runs() {
    let config = ProtocolConfig {
        policy: FeedbackPolicy::with_mode(FeedbackMode::SimpleExact),
        ..ProtocolConfig::default()
    };
    let plan = SeedPlan::new(99);
    let mut checked = 0;
    for i in 0..8 {
        let run = run_trajectory(&config, plan.trajectory_seed(i)).unwrap();
        if run.final_metrics.overlap <= 0.99 {
            continue;
        }
        checked += 1;
        let sums: Vec<f64> = run
            .series
            .iter()
            .map(|r| r.metrics.variance_sum())
            .collect();
        let falling = sums.windows(2).filter(|w| w[1] <= w[0]).count();
        let share = falling as f64 / (sums.len() - 1) as f64;
        assert!(share >= 0.95, "run {i}: {share}");
    }
    assert!(checked > 0);
}

/// Zeroing ⟨Jz⁺⟩ after each detection should also keep ⟨Jy⁻⟩ at zero.
#[test]
#[ignore = "fails: the frame rotation feeds the post-detection <Jz+> into <Jy->, which the feedback never cancels"]
fn mean_zeroing_cascade() {
    let p = protocol(10, FeedbackMode::SimpleExact, 1.0);
    let jy_minus = p.ops().jy_minus.matrix().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut state = p.initial_state();
    for n in 0..1000 {
        state = p.step(&state, n, rng.random()).unwrap().0;
        let y = state.trace_with(&jy_minus).re.abs();
        assert!(y <= 1e-6 * 10.0, "step {n}: |<Jy->| = {y:e}");
    }
}

/// Closed-form angle against the exact angle, step by step.
#[test]
#[ignore = "fails: the closed form tracks the exact angle only near the start; beyond it the relative error exceeds 10%"]
fn approx_angle_tracks_exact_angle() {
    let p = protocol(10, FeedbackMode::SimpleExact, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut state = p.initial_state();
    for n in 0..1000 {
        let draw: f64 = rng.random();
        let which = p
            .step_probabilities(&state)
            .unwrap()
            .sample(draw)
            .detection()
            .unwrap();
        let exact = p
            .feedback_angle_exact(&p.apply_detection(&state, which).unwrap())
            .unwrap();
        let approx = p.feedback_angle_approx(&state, which, n).unwrap();
        assert!(
            (approx - exact).abs() <= 0.1 * exact.abs().max(1e-4),
            "step {n}: approx {approx:e} exact {exact:e}"
        );
        state = p.step(&state, n, draw).unwrap().0;
    }
}

fn settings_strategy() -> impl Strategy<Value = RunSettings> {
    (
        (
            1usize..40,
            0.0f64..0.5,
            0.0f64..1.0,
            0.0f64..=1.0,
            0usize..200_000,
        ),
        (
            0usize..4,
            1e-6f64..1e-2,
            0usize..50_000,
            any::<bool>(),
            any::<bool>(),
        ),
        (0.0f64..1.0, any::<u64>(), 1usize..1000, 1usize..500),
        prop::collection::vec(0.0f64..1.0, 1..5),
    )
        .prop_map(|(a, b, c, thresholds)| {
            let mode = [
                FeedbackMode::None,
                FeedbackMode::SimpleExact,
                FeedbackMode::SimpleApprox,
                FeedbackMode::Adiabatic,
            ][b.0];
            let mut s = RunSettings::default();
            let p = &mut s.protocol;
            (p.n_atoms, p.chi, p.omega_div_pi, p.eta, p.n_photons) = a;
            p.policy.mode = mode;
            p.policy.cut_scale = b.1;
            p.policy.activation_step = b.2;
            if b.3 {
                p.policy.adiabatic_base = dicke_feedback::protocol::AngleSource::Approx;
            }
            if b.4 {
                p.frame_angle = FrameAngle::Accumulated;
            }
            (p.lambda_noise, p.seed, p.record_stride, s.runs) = c;
            s.thresholds = thresholds;
            s
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rotations_are_unitary_and_compose(n in 1usize..=6, axis in 0usize..3, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let basis = SpinBasis::new(n).unwrap();
        let ops = build_joint_ops(&basis).unwrap();
        let single = [&ops.single.jx, &ops.single.jy, &ops.single.jz][axis];
        let cache = RotationCache::new(single).unwrap();
        prop_assert!(unitarity_defect(&cache.unitary(a)) <= 1e-10);
        prop_assert!(max_abs_diff(&(cache.unitary(a) * cache.unitary(b)), &cache.unitary(a + b)) <= 1e-9);
        let joint = [&ops.jx_minus, &ops.jy_plus, &ops.jz_plus][axis];
        let local = LocalRotation::new(joint).unwrap();
        let dense = RotationCache::new(joint).unwrap();
        prop_assert!(unitarity_defect(&local.unitary(a)) <= 1e-10);
        prop_assert!(max_abs_diff(&local.unitary(a), &dense.unitary(a)) <= 1e-9);
    }

    #[test]
    fn no_detection_keeps_trace_and_never_raises_purity(n in 1usize..=4, seed in any::<u64>()) {
        let p = protocol(n, FeedbackMode::None, 0.5);
        let state = random_pure(p.basis().joint_dim(), seed);
        let out = p.apply_no_detection(&state).unwrap();
        prop_assert!((out.trace() - 1.0).abs() <= 1e-12);
        prop_assert!(purity(&out) <= purity(&state) + 1e-12);
        out.check_health(1e-8, 1e-8, -1e-7).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn lossy_steps_stay_healthy(n in 1usize..=3, seed in any::<u64>(), mode in 0usize..4) {
        let mode = [FeedbackMode::None, FeedbackMode::SimpleExact, FeedbackMode::SimpleApprox, FeedbackMode::Adiabatic][mode];
        let p = protocol(n, mode, 0.8);
        let casimir = (n as f64 / 2.0) * (n as f64 / 2.0 + 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = p.initial_state();
        for step in 0..60 {
            let probs = p.step_probabilities(&state).unwrap();
            prop_assert!((probs.plus + probs.minus + probs.none - 1.0).abs() <= 1e-10);
            state = p.step(&state, step, rng.random()).unwrap().0;
            state.check_health(1e-8, 1e-8, -1e-7).map_err(TestCaseError::fail)?;
            prop_assert!((casimir_first(&state, p.ops()) - casimir).abs() <= 1e-8);
        }
    }

    #[test]
    fn exact_feedback_cancels_jz_plus(n in 1usize..=10, seed in any::<u64>()) {
        let p = protocol(n, FeedbackMode::SimpleExact, 1.0);
        let jz = p.ops().jz_plus.matrix().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = p.initial_state();
        for step in 0..200 {
            state = p.step(&state, step, rng.random()).unwrap().0;
            prop_assert!(state.trace_with(&jz).re.abs() <= 1e-8 * n as f64);
        }
    }

    #[test]
    fn lossless_runs_stay_pure(seed in any::<u64>(), mode in 0usize..4) {
        let mode = [FeedbackMode::None, FeedbackMode::SimpleExact, FeedbackMode::SimpleApprox, FeedbackMode::Adiabatic][mode];
        let config = ProtocolConfig {
            n_photons: 300,
            record_stride: 10,
            policy: FeedbackPolicy::with_mode(mode),
            ..ProtocolConfig::default()
        };
        let run = run_trajectory(&config, seed).unwrap();
        for row in &run.series {
            prop_assert!((row.metrics.purity - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn entropy_within_bounds(n in 1usize..=6, seed in any::<u64>()) {
        let basis = SpinBasis::new(n).unwrap();
        let state = random_pure(basis.joint_dim(), seed);
        let e = entanglement_entropy(&state, &basis).unwrap();
        prop_assert!(e >= -1e-12 && e <= ((n + 1) as f64).log2() + 1e-12);
    }

    #[test]
    fn full_overlap_means_the_target(n in 1usize..=6, phase in 0.0f64..std::f64::consts::TAU, seed in any::<u64>(), eps in 0.0f64..1e-7) {
        let basis = SpinBasis::new(n).unwrap();
        let QuantumState::Pure(target) = maximally_entangled_state(&basis) else { unreachable!() };
        let QuantumState::Pure(noise) = random_pure(basis.joint_dim(), seed) else { unreachable!() };
        let mut v = &target * C64::from_polar(1.0, phase) + noise * C64::new(eps, 0.0);
        let norm = v.norm();
        v /= C64::new(norm, 0.0);
        let o = overlap(&QuantumState::Pure(v.clone()), &target).unwrap();
        if o > 1.0 - 1e-12 {
            let align = target.dotc(&v);
            let aligned = v * (align.conj() / align.norm());
            prop_assert!((aligned - &target).norm() < 1e-5);
        }
    }

    #[test]
    fn fractions_fall_with_threshold(finals in prop::collection::vec(0.0f64..=1.0, 1..80)) {
        let f: Vec<f64> = [0.99, 0.999, 0.9999]
            .iter()
            .map(|&t| success_fraction(&finals, t).unwrap().0)
            .collect();
        prop_assert!(f[0] >= f[1] && f[1] >= f[2]);
    }

    #[test]
    fn config_text_round_trips(settings in settings_strategy()) {
        let text = settings.emit();
        let back = RunSettings::parse(&text).unwrap();
        prop_assert_eq!(&back, &settings);
        prop_assert_eq!(back.emit(), text);
    }
}
