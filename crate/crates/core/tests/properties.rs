//! Property tests for the structural invariants: Laplace convexity, tilt
//! normalization, Wilson interval containment, tail-curve monotonicity and
//! merge associativity, and the leaf identity.

use proptest::prelude::*;

use kbrw_core::brw::{run_brw, BrwConfig};
use kbrw_core::estimators::{tail_curve_z_range, wilson_ci, TailCurve};
use kbrw_core::seed::replication_rng;
use kbrw_core::step_model::{CriticalFamily, StepFamily, StepModel, TiltedStep, DEFAULT_RHO_TOL};

fn lattice_model(weights: Vec<(i64, f64)>) -> Option<StepModel> {
    let total: f64 = weights.iter().map(|&(_, w)| w).sum();
    if total <= 0.0 {
        return None;
    }
    let support: Vec<(i64, f64)> = weights
        .into_iter()
        .map(|(y, w)| (y, w / total))
        .collect();
    StepModel::new(StepFamily::UserLattice { support }, 2).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // phi lies below its chords: phi(t2) <= linear interpolation of
    // (t1, phi(t1)), (t3, phi(t3)).
    #[test]
    fn laplace_is_convex(
        p in 0.01_f64..0.99,
        t1 in -4.0_f64..4.0,
        dt2 in 0.01_f64..3.0,
        dt3 in 0.01_f64..3.0,
    ) {
        let m = StepModel::new(StepFamily::TwoPoint { p }, 2).unwrap();
        let (t2, t3) = (t1 + dt2, t1 + dt2 + dt3);
        let f1 = m.laplace(t1).unwrap();
        let f2 = m.laplace(t2).unwrap();
        let f3 = m.laplace(t3).unwrap();
        let chord = f1 + (f3 - f1) * (t2 - t1) / (t3 - t1);
        prop_assert!(f2 <= chord * (1.0 + 1e-12));
    }

    // The reweighted lattice law has unit mass and (at the minimizer of
    // phi) zero mean, whatever the base law.
    #[test]
    fn tilt_normalizes_and_centers(
        w_neg2 in 0.05_f64..1.0,
        w_neg1 in 0.0_f64..1.0,
        w_pos1 in 0.0_f64..1.0,
        w_pos3 in 0.05_f64..1.0,
    ) {
        let model = lattice_model(vec![
            (-2, w_neg2),
            (-1, w_neg1),
            (1, w_pos1),
            (3, w_pos3),
        ]);
        prop_assume!(model.is_some());
        let mut model = model.unwrap();
        prop_assume!(model.solve_rho(DEFAULT_RHO_TOL).is_ok());
        let tilted = TiltedStep::new(&model).unwrap();
        prop_assert!((tilted.total_mass() - 1.0).abs() < 1e-12);
        prop_assert!(tilted.mean().abs() < 1e-9);
    }

    #[test]
    fn wilson_contains_point_estimate(hits in 0_u64..500, extra in 0_u64..500) {
        let reps = hits + extra.max(1);
        let (lo, hi) = wilson_ci(hits, reps, 1.96).unwrap();
        let p = hits as f64 / reps as f64;
        prop_assert!((0.0..=1.0).contains(&lo));
        prop_assert!((0.0..=1.0).contains(&hi));
        prop_assert!(lo <= p && p <= hi);
    }

    // Tail curves are monotone nonincreasing with valid intervals no matter
    // the seed, and splitting the replication range anywhere reproduces the
    // full curve exactly.
    #[test]
    fn tail_curve_monotone_and_merge_associative(
        seed in any::<u64>(),
        split in 1_u64..999,
    ) {
        let model = StepModel::calibrate_critical(CriticalFamily::TwoPoint, 2).unwrap();
        let config = BrwConfig::new(model, 0.0).unwrap();
        let grid = [1_u64, 4, 16, 64];
        let reps = 1000_u64;
        let full = tail_curve_z_range(&config, &grid, seed, 0..reps).unwrap();
        for w in full.p_hat.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-15);
        }
        for (i, &(lo, hi)) in full.ci.iter().enumerate() {
            prop_assert!(lo <= full.p_hat[i] && full.p_hat[i] <= hi);
        }
        let left = tail_curve_z_range(&config, &grid, seed, 0..split).unwrap();
        let right = tail_curve_z_range(&config, &grid, seed, split..reps).unwrap();
        prop_assert_eq!(TailCurve::merge(&left, &right).unwrap(), full);
    }

    // The 0-or-b tree identity between killed particles and survivors.
    #[test]
    fn leaf_identity_any_seed(seed in any::<u64>(), b in 2_u32..4, start in 0.0_f64..3.0) {
        let model = StepModel::calibrate_critical(CriticalFamily::TwoPoint, b).unwrap();
        let config = BrwConfig::new(model, start.floor()).unwrap();
        let mut rng = replication_rng(seed, 0);
        let run = run_brw(&config, &mut rng).unwrap();
        prop_assume!(run.censored.is_none());
        prop_assert_eq!(run.z0, 1 + u64::from(b - 1) * run.z);
    }
}
