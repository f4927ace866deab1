use ekick::closed_forms::{kl_divergence, pointlike_no_backscatter, pointlike_with_backscatter, poisson_occupations};
use ekick::coupling::{CouplingModel, Phased, TransitionSymmetry};
use ekick::nonrecoil::{integrate, two_level_probability, InitialState, IntegrateOptions, LevelSystem};
use ekick::recoil::{solve_two_level, GridMode, GridOptions, RecoilOptions, RecoilPoint};
use ekick::sweep::{run_sweep_with_workers, Axis, Parameter, SolverKind, SweepSpec};
use proptest::prelude::*;

fn symmetry() -> impl Strategy<Value = TransitionSymmetry> {
    prop::sample::select(TransitionSymmetry::ALL.to_vec())
}

fn quick_recoil(mode: GridMode) -> RecoilOptions {
    RecoilOptions {
        grid: GridOptions {
            points: 201,
            mode,
            ..Default::default()
        },
        refine: false,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pointlike_curves_are_probabilities(p1lin in 0.0f64..1e3) {
        for r in [pointlike_with_backscatter(p1lin), pointlike_no_backscatter(p1lin)] {
            prop_assert!((0.0..=1.0).contains(&r.p1));
            prop_assert!((r.p0 + r.p1 - 1.0).abs() < 1e-15);
        }
        prop_assert!(pointlike_with_backscatter(p1lin).p1 <= 0.5 + 1e-15);
    }

    #[test]
    fn kl_to_itself_vanishes_and_is_nonnegative(a in 0.1f64..6.0, b in 0.1f64..6.0) {
        let p = poisson_occupations(a, 40);
        let q = poisson_occupations(b, 40);
        prop_assert!(kl_divergence(&p, &p).abs() < 1e-14);
        prop_assert!(kl_divergence(&p, &q) >= -1e-12);
    }

    #[test]
    fn nonrecoil_unitarity_and_unit_invariance(
        s in symmetry(), rho in 0.05f64..2.5, p1lin in 0.1f64..6.0, v in 0.3f64..3.0, w in 0.3f64..3.0,
    ) {
        let opts = IntegrateOptions { tolerance: 1e-12, ..Default::default() };
        let a = two_level_probability(s, rho, p1lin, &opts).unwrap();
        prop_assert!((a.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        let model = CouplingModel::normalized_nonrecoil(s, rho * v / w, v, w, p1lin).unwrap();
        let sys = LevelSystem::two_level(model, w, v).unwrap();
        let b = integrate(&sys, &InitialState::basis(2, 0).unwrap(), &opts).unwrap();
        prop_assert!((a.probabilities[1] - b.probabilities[1]).abs() < 1e-8);
    }

    #[test]
    fn nonrecoil_linear_regime(s in symmetry(), rho in 0.05f64..2.5, p1lin in 1e-6f64..1e-4) {
        // P1/P1lin - 1 is O(P1lin), with a slope that grows as the coupling narrows
        let opts = IntegrateOptions { tolerance: 1e-14, ..Default::default() };
        let rel = |p: f64| two_level_probability(s, rho, p, &opts).unwrap().probabilities[1] / p - 1.0;
        let (d1, d2) = (rel(p1lin), rel(p1lin / 10.0));
        prop_assert!((d1 - 10.0 * d2).abs() <= 0.1 * d1.abs() + 1e-7, "deviations {d1} and {d2}");
    }

    #[test]
    fn nonrecoil_phase_invariance(s in symmetry(), rho in 0.05f64..2.0, p1lin in 0.1f64..5.0, phi in 0.0f64..6.3) {
        let opts = IntegrateOptions::default();
        let sys = LevelSystem::two_level_normalized(s, rho, p1lin).unwrap();
        let init = InitialState::basis(2, 0).unwrap();
        let a = integrate(&sys, &init, &opts).unwrap();
        let b = integrate(&sys.with_phase(phi), &init, &opts).unwrap();
        prop_assert!((a.probabilities[1] - b.probabilities[1]).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn recoil_probabilities_bounded_and_phase_free(
        s in symmetry(),
        rho in 0.1f64..1.5,
        p1lin in 0.05f64..5.0,
        energy_ratio in 1.05f64..20.0,
        phi in 0.0f64..6.3,
        full in any::<bool>(),
    ) {
        let mode = if full { GridMode::SymmetricFull } else { GridMode::CenteredForward };
        let opts = quick_recoil(mode);
        let point = RecoilPoint { symmetry: s, rho, p1lin, energy_ratio };
        let model = point.coupling(mode).unwrap();
        let a = solve_two_level(&model, point.q0(), 1.0, &opts).unwrap();
        let b = solve_two_level(&Phased::new(model, phi), point.q0(), 1.0, &opts).unwrap();
        let slack = a.diagnostics.sum_deviation + 1e-12;
        for (x, y) in a.probabilities().iter().zip(b.probabilities()) {
            prop_assert!(*x >= -1e-12 && *x <= 1.0 + slack);
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn recoil_weak_coupling_is_linear(s in symmetry(), rho in 0.1f64..1.5, energy_ratio in 2.0f64..20.0) {
        let p1lin = 1e-4;
        let mode = GridMode::SymmetricFull;
        let point = RecoilPoint { symmetry: s, rho, p1lin, energy_ratio };
        let model = point.coupling(mode).unwrap();
        let r = solve_two_level(&model, point.q0(), 1.0, &quick_recoil(mode)).unwrap();
        prop_assert!((r.probability(1) / p1lin - 1.0).abs() < 1e-2, "P1/P1lin = {}", r.probability(1) / p1lin);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn sweeps_do_not_depend_on_worker_count(s in symmetry(), lo in 0.05f64..0.5, span in 0.1f64..2.0, workers in 2usize..6) {
        let spec = SweepSpec {
            solver: SolverKind::Nonrecoil,
            symmetry: s,
            axes: vec![
                Axis::linear(Parameter::Rho, lo, lo + span, 3),
                Axis::linear(Parameter::P1lin, 0.5, 3.0, 3),
            ],
            ..Default::default()
        };
        let a = run_sweep_with_workers(&spec, 1).unwrap();
        let b = run_sweep_with_workers(&spec, workers).unwrap();
        prop_assert_eq!(a.records, b.records);
        prop_assert_eq!(a.metadata, b.metadata);
    }
}
