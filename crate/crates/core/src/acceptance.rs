//! The acceptance suite: nine numbered criteria covering calibration,
//! tilt centering, the gambler's-ruin oracle, the leaf identity,
//! dual-source moment agreement, the exact band checks, the Monte Carlo
//! tail band with the two-stage estimator, and determinism.
//!
//! Each criterion returns a pass/fail result with a one-line detail; the
//! CLI `selftest` subcommand prints them and the `acceptance` integration
//! test asserts them.

use std::time::Instant;

use rand::SeedableRng;

use crate::brw::{
    exact_brw_first_moment, exact_brw_second_moment, exact_strip_survival, run_brw,
    run_brw_from_top, BrwConfig, Caps,
};
use crate::estimators::{
    moment_h_direct, moment_h_exact, moment_h_many_to_one, moment_zak_direct, moment_zak_exact,
    moment_zak_many_to_one, tail_curve_z, two_stage_tail, MomentReport,
};
use crate::seed::{replication_rng, RepRng};
use crate::step_model::{CriticalFamily, StepFamily, StepModel, TiltedStep};
use crate::walk::{two_barrier_exit, ExitSide, LatticeStrip};

/// Tolerances and replication counts of the suite. Band tolerances live
/// here rather than inside the checks.
#[derive(Debug, Clone)]
pub struct AcceptanceConfig {
    pub master_seed: u64,
    /// Band ratio for exact-solver scalings.
    pub band_ratio_exact: f64,
    /// Band ratio for the log-converging Monte Carlo tail statistic.
    pub band_ratio_theorem_mc: f64,
    /// Stability factor for the two-stage scaled values.
    pub two_stage_stability: f64,
    pub tilt_draws: u64,
    pub ruin_pairs: usize,
    pub ruin_reps: u64,
    pub leaf_reps: u64,
    pub theorem_reps: u64,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        AcceptanceConfig {
            master_seed: 0x2026_0808,
            band_ratio_exact: 2.0,
            band_ratio_theorem_mc: 4.0,
            two_stage_stability: 3.0,
            tilt_draws: 1_000_000,
            ruin_pairs: 20,
            ruin_reps: 100_000,
            leaf_reps: 10_000,
            theorem_reps: 10_000_000,
        }
    }
}

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {}: {} ({:.2}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

struct Checks {
    ok: bool,
    notes: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Checks {
            ok: true,
            notes: Vec::new(),
        }
    }

    fn require(&mut self, cond: bool, label: String) {
        if !cond {
            self.ok = false;
            self.notes.push(format!("FAILED: {label}"));
        }
    }

    fn note(&mut self, label: String) {
        self.notes.push(label);
    }

    fn finish(self, id: u32, name: &'static str, started: Instant, limit: Option<f64>) -> CriterionResult {
        let seconds = started.elapsed().as_secs_f64();
        let mut passed = self.ok;
        let mut detail = self.notes.join("; ");
        if let Some(lim) = limit {
            if seconds >= lim {
                passed = false;
                detail = format!("runtime {seconds:.1}s over the {lim}s limit; {detail}");
            }
        }
        CriterionResult {
            id,
            name,
            passed,
            detail,
            seconds,
        }
    }
}

fn critical_two_point(b: u32) -> StepModel {
    StepModel::calibrate_critical(CriticalFamily::TwoPoint, b).expect("calibration")
}

fn band_ratio(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Criterion 1: closed-form calibration to 1e-6, under a second.
pub fn criterion_1(_cfg: &AcceptanceConfig) -> CriterionResult {
    let start = Instant::now();
    let mut c = Checks::new();

    let m = critical_two_point(2);
    let StepFamily::TwoPoint { p } = *m.family() else {
        unreachable!()
    };
    c.require((p - 0.0669873).abs() < 1e-6, format!("two_point p={p}"));
    let rho_expect = (2.0 + 3.0_f64.sqrt()).ln();
    c.require(
        (m.rho_solved() - rho_expect).abs() < 1e-6,
        format!("two_point rho={}", m.rho_solved()),
    );

    let g = StepModel::calibrate_critical(CriticalFamily::Gaussian { sigma: 1.0 }, 2)
        .expect("calibration");
    let StepFamily::Gaussian { mu, .. } = *g.family() else {
        unreachable!()
    };
    c.require((mu + 1.1774100).abs() < 1e-6, format!("gaussian mu={mu}"));
    c.require(
        (g.rho_solved() - 1.1774100).abs() < 1e-6,
        format!("gaussian rho={}", g.rho_solved()),
    );
    c.note(format!("p={p:.7}, rho_2pt={:.7}, mu={mu:.7}", m.rho_solved()));
    c.finish(1, "calibration exactness", start, Some(1.0))
}

/// Criterion 2: tilted-step sample mean within 3 stderr of zero for both
/// families.
pub fn criterion_2(cfg: &AcceptanceConfig) -> CriterionResult {
    let start = Instant::now();
    let mut c = Checks::new();
    let models = [
        ("two_point", critical_two_point(2)),
        (
            "gaussian",
            StepModel::calibrate_critical(CriticalFamily::Gaussian { sigma: 1.0 }, 2).unwrap(),
        ),
    ];
    for (name, model) in &models {
        let tilted = TiltedStep::new(model).unwrap();
        let mut rng = RepRng::seed_from_u64(cfg.master_seed ^ 0x711);
        let n = cfg.tilt_draws;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let step = tilted.sample_step(&mut rng);
            sum += step;
            sum_sq += step * step;
        }
        let mean = sum / n as f64;
        let var = (sum_sq - sum * sum / n as f64) / (n - 1) as f64;
        let stderr = (var / n as f64).sqrt();
        c.require(
            mean.abs() <= 3.0 * stderr,
            format!("{name} tilted mean {mean:.2e} vs 3se {:.2e}", 3.0 * stderr),
        );
        c.note(format!("{name}: mean={mean:.2e}"));
    }
    c.finish(2, "tilt centering", start, None)
}

/// Criterion 3: gambler's-ruin oracle, exact to 1e-12 and Monte Carlo to
/// 3 binomial stderr on 20 seeded (z, k) pairs.
pub fn criterion_3(cfg: &AcceptanceConfig) -> CriterionResult {
    let start = Instant::now();
    let mut c = Checks::new();
    let model = critical_two_point(2);
    let tilted = TiltedStep::new(&model).unwrap();
    let mut pick = RepRng::seed_from_u64(cfg.master_seed ^ 0xC3);
    let mut worst_exact = 0.0_f64;
    for pair in 0..cfg.ruin_pairs {
        let k = rand::Rng::gen_range(&mut pick, 5..=30_i64);
        let z = rand::Rng::gen_range(&mut pick, 0..=k);
        let strip = LatticeStrip::new(0, k, vec![(1, 0.5), (-1, 0.5)]).unwrap();
        let h = strip.exact_hitting_probability(z).unwrap();
        let formula = (z + 1) as f64 / (k + 2) as f64;
        worst_exact = worst_exact.max((h - formula).abs());
        c.require(
            (h - formula).abs() < 1e-12,
            format!("exact ruin z={z} k={k}: {h} vs {formula}"),
        );

        let seed = cfg.master_seed ^ (0x5EED_0000 + pair as u64);
        let hits = crate::parallel::map_reduce_blocks(
            cfg.ruin_reps,
            crate::parallel::DEFAULT_BLOCK,
            |range| {
                let mut hits = 0_u64;
                for i in range {
                    let mut rng = replication_rng(seed, i);
                    let (side, _, _) = two_barrier_exit(
                        &tilted,
                        1.0,
                        z as f64,
                        0.0,
                        k as f64,
                        &mut rng,
                        10_000_000,
                    )
                    .unwrap();
                    if side == ExitSide::Top {
                        hits += 1;
                    }
                }
                hits
            },
            |a, b| a + b,
        )
        .unwrap();
        let p = hits as f64 / cfg.ruin_reps as f64;
        let stderr = (formula * (1.0 - formula) / cfg.ruin_reps as f64).sqrt();
        c.require(
            (p - formula).abs() <= 3.0 * stderr,
            format!("mc ruin z={z} k={k}: {p} vs {formula} (3se {:.2e})", 3.0 * stderr),
        );
    }
    c.note(format!(
        "{} pairs, worst exact deviation {worst_exact:.2e}",
        cfg.ruin_pairs
    ));
    c.finish(3, "gambler's-ruin oracle", start, None)
}

/// Criterion 4: leaf identity on uncensored runs for b in {2, 3}, with and
/// without the absorbing top barrier.
pub fn criterion_4(cfg: &AcceptanceConfig) -> CriterionResult {
    let start = Instant::now();
    let mut c = Checks::new();
    for b in [2_u32, 3] {
        let model = critical_two_point(b);
        let free = BrwConfig::new(model.clone(), 0.0).unwrap();
        let strip = BrwConfig::new(model.clone(), 0.0)
            .unwrap()
            .with_top_level(6.0)
            .unwrap();
        let mut violations = 0_u64;
        for i in 0..cfg.leaf_reps {
            let mut rng = replication_rng(cfg.master_seed ^ (0x1eaf + u64::from(b)), i);
            let run = run_brw(&free, &mut rng).unwrap();
            if run.censored.is_none() && run.z0 != 1 + u64::from(b - 1) * run.z {
                violations += 1;
            }
            let run = run_brw(&strip, &mut rng).unwrap();
            if run.censored.is_none() && run.z0 + run.hk != 1 + u64::from(b - 1) * run.z {
                violations += 1;
            }
            let run =
                run_brw_from_top(&model, 0.0, 6.0, Caps::default(), &mut rng).unwrap();
            if run.censored.is_none() && run.zak + run.hk != 1 + u64::from(b - 1) * run.z {
                violations += 1;
            }
        }
        c.require(violations == 0, format!("b={b}: {violations} violations"));
        c.note(format!("b={b}: {} runs x3 configs exact", cfg.leaf_reps));
    }
    c.finish(4, "leaf identity", start, None)
}

/// Criterion 5: exact lattice solve, direct tree Monte Carlo and the
/// many-to-one estimator pairwise agree within 3 combined stderr, for the
/// strip progeny count and for the top-absorption count.
pub fn criterion_5(cfg: &AcceptanceConfig) -> CriterionResult {
    let start = Instant::now();
    let mut c = Checks::new();
    let model = critical_two_point(2);

    let agree = |c: &mut Checks, label: &str, a: &MomentReport, b: &MomentReport| {
        c.require(
            a.agrees_with(b),
            format!(
                "{label}: {:?} {:.4}+-{:.4} vs {:?} {:.4}+-{:.4}",
                a.source, a.value, a.stderr, b.source, b.value, b.stderr
            ),
        );
    };

    // (y, a, k, direct reps)
    let zak_cases = [
        (3_i64, 0_i64, 8_i64, 60_000_u64),
        (5, 0, 8, 60_000),
        (4, 1, 10, 60_000),
        (6, 0, 10, 30_000),
        (8, 0, 8, 20_000),
    ];
    for (idx, &(y, a, k, reps)) in zak_cases.iter().enumerate() {
        let exact = moment_zak_exact(&model, y, a, k).unwrap();
        let mto = moment_zak_many_to_one(
            &model,
            y as f64,
            a as f64,
            k as f64,
            200_000,
            cfg.master_seed ^ (0x5a0 + idx as u64),
            10_000_000,
        )
        .unwrap();
        let direct = moment_zak_direct(
            &model,
            y as f64,
            a as f64,
            k as f64,
            Caps::default(),
            reps,
            cfg.master_seed ^ (0x5b0 + idx as u64),
        )
        .unwrap();
        let label = format!("Zak y={y} a={a} k={k}");
        agree(&mut c, &label, &exact, &mto);
        agree(&mut c, &label, &exact, &direct);
        agree(&mut c, &label, &mto, &direct);
    }

    // (x, k, direct reps)
    let h_cases = [
        (5_i64, 7_i64, 100_000_u64),
        (3, 6, 100_000),
        (2, 5, 100_000),
        (4, 8, 100_000),
        (6, 10, 30_000),
    ];
    for (idx, &(x, k, reps)) in h_cases.iter().enumerate() {
        let exact = moment_h_exact(&model, x, k).unwrap();
        let mto = moment_h_many_to_one(
            &model,
            x as f64,
            k as f64,
            200_000,
            cfg.master_seed ^ (0x4a0 + idx as u64),
            10_000_000,
        )
        .unwrap();
        let direct = moment_h_direct(
            &model,
            x as f64,
            k as f64,
            Caps::default(),
            reps,
            cfg.master_seed ^ (0x4b0 + idx as u64),
        )
        .unwrap();
        let label = format!("Hk x={x} k={k}");
        agree(&mut c, &label, &exact, &mto);
        agree(&mut c, &label, &exact, &direct);
        agree(&mut c, &label, &mto, &direct);
    }
    c.note("5 strip-count triples + 5 top-absorption pairs, 3 sources each".to_string());
    c.finish(5, "dual-source first moments", start, Some(300.0))
}

/// Criterion 6: exact-solver band checks for the first moment, second
/// moment and maximum tail scalings over k in {8, ..., 30}.
pub fn criterion_6(cfg: &AcceptanceConfig) -> CriterionResult {
    let start = Instant::now();
    let mut c = Checks::new();
    let model = critical_two_point(2);
    let rho = model.rho_solved();
    let a = 0_i64;
    let x = 0_i64;
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut max_tail = Vec::new();
    for k in 8..=30_i64 {
        let kf = k as f64;
        let m1 = exact_brw_first_moment(&model, a, k, k).unwrap();
        first.push(kf * (-rho * (k - a) as f64).exp() * m1);
        let m2 = exact_brw_second_moment(&model, a, k, k).unwrap();
        second.push(kf * kf * (-2.0 * rho * (k - a) as f64).exp() * m2);
        let p = exact_strip_survival(&model, k, x).unwrap();
        max_tail.push(kf * (rho * (k - x) as f64).exp() * p / (1.0 + x as f64));
    }
    for (name, band) in [("moment1", &first), ("moment2", &second), ("max-tail", &max_tail)] {
        let ratio = band_ratio(band);
        c.require(
            ratio <= cfg.band_ratio_exact,
            format!("{name} band ratio {ratio:.3}"),
        );
        c.note(format!("{name} ratio {ratio:.3}"));
    }
    c.finish(6, "delta-band checks (exact oracles)", start, Some(60.0))
}

/// Criterion 7: the three weighted Green sums, rescaled by k, k^2/(1+x)
/// and 1/(1+x), stay within ratio-2 bands over a doubling grid.
pub fn criterion_7(cfg: &AcceptanceConfig) -> CriterionResult {
    let start = Instant::now();
    let mut c = Checks::new();
    let x = 2_i64;
    let mut from_zero = Vec::new();
    let mut from_top = Vec::new();
    let mut to_bottom = Vec::new();
    for &k in &[10_i64, 20, 40, 80] {
        let strip = LatticeStrip::new(0, k, vec![(1, 0.5), (-1, 0.5)]).unwrap();
        let q_a = strip
            .exact_green_sum(0, crate::walk::GreenWeight::TopExit)
            .unwrap();
        let q_b = strip
            .exact_green_sum(k - x, crate::walk::GreenWeight::TopExit)
            .unwrap();
        let q_c = strip
            .exact_green_sum(k - x, crate::walk::GreenWeight::BottomExit)
            .unwrap();
        from_zero.push(q_a * k as f64);
        from_top.push(q_b * (k * k) as f64 / (1.0 + x as f64));
        to_bottom.push(q_c / (1.0 + x as f64));
    }
    for (name, band) in [
        ("start-0 top-exit * k", &from_zero),
        ("start-(k-x) top-exit * k^2/(1+x)", &from_top),
        ("start-(k-x) bottom-exit / (1+x)", &to_bottom),
    ] {
        let ratio = band_ratio(band);
        c.require(
            ratio <= cfg.band_ratio_exact,
            format!("{name} band ratio {ratio:.3}"),
        );
        c.note(format!("{name}: ratio {ratio:.3}"));
    }
    c.finish(7, "weighted Green-sum bands (exact solver)", start, None)
}

/// Criterion 8: the Monte Carlo tail band for the total progeny at
/// 10^7 replications, plus the two-stage estimator's stability and
/// lower-bound property.
pub fn criterion_8(cfg: &AcceptanceConfig) -> CriterionResult {
    let start = Instant::now();
    let mut c = Checks::new();
    let model = critical_two_point(2);
    let config = BrwConfig::new(model.clone(), 0.0).unwrap();
    let grid = [10_u64, 100, 1_000, 10_000];
    let curve = tail_curve_z(&config, &grid, cfg.theorem_reps, cfg.master_seed ^ 0x7a11).unwrap();

    // Band over the grid {10, 100, 1000}.
    let scaled_band: Vec<f64> = curve.scaled[..3].to_vec();
    let ratio = band_ratio(&scaled_band);
    c.require(
        ratio <= cfg.band_ratio_theorem_mc,
        format!("tail band ratio {ratio:.3}"),
    );
    c.note(format!(
        "scaled=[{:.3}, {:.3}, {:.3}] ratio {ratio:.3}",
        scaled_band[0], scaled_band[1], scaled_band[2]
    ));

    // The whole scaled confidence envelope must fit in one band of the
    // allowed ratio, not just the point estimates.
    let mut lo_min = f64::MAX;
    let mut hi_max = f64::MIN;
    for i in 0..3 {
        let t = curve.thresholds[i];
        let lo = crate::estimators::scaled_statistic(
            crate::estimators::TailKind::ProgenyCount,
            t,
            curve.ci[i].0,
            curve.x,
            curve.rho,
        );
        let hi = crate::estimators::scaled_statistic(
            crate::estimators::TailKind::ProgenyCount,
            t,
            curve.ci[i].1,
            curve.x,
            curve.rho,
        );
        lo_min = lo_min.min(lo);
        hi_max = hi_max.max(hi);
    }
    let envelope = if lo_min > 0.0 { hi_max / lo_min } else { f64::INFINITY };
    c.require(
        envelope <= cfg.band_ratio_theorem_mc,
        format!("scaled CI envelope ratio {envelope:.3}"),
    );
    c.note(format!("CI envelope ratio {envelope:.3}"));

    // Two-stage estimates: stable scaled values, never above direct Monte
    // Carlo where both exist.
    let mut scaled_two_stage = Vec::new();
    for (idx, &(n, reps2)) in [(1_000.0_f64, 2_000_u64), (10_000.0, 1_000), (100_000.0, 500)]
        .iter()
        .enumerate()
    {
        let est = two_stage_tail(
            &model,
            0,
            0,
            n,
            50_000,
            reps2,
            Caps::default(),
            cfg.master_seed ^ (0x25 + idx as u64),
        )
        .unwrap();
        scaled_two_stage.push(est.scaled);
        if let Some(pos) = curve.thresholds.iter().position(|&t| t == n) {
            let p_direct = curve.p_hat[pos];
            let denom = curve.reps - curve.excluded[pos];
            let rel_se = if curve.hits[pos] > 0 {
                ((p_direct * (1.0 - p_direct) / denom as f64).sqrt()) / p_direct
            } else {
                f64::INFINITY
            };
            c.require(
                est.estimate <= p_direct * (1.0 + 3.0 * rel_se),
                format!(
                    "two-stage at n={n}: {:.3e} above direct {:.3e}",
                    est.estimate, p_direct
                ),
            );
        }
    }
    let stability = band_ratio(&scaled_two_stage);
    c.require(
        stability <= cfg.two_stage_stability,
        format!("two-stage scaled stability {stability:.3}"),
    );
    c.note(format!("two-stage scaled stability {stability:.3}"));
    c.finish(8, "tail band at desk scale + two-stage", start, Some(1800.0))
}

/// Criterion 9: identical seeds give byte-identical outputs for worker
/// counts 1 and 8.
pub fn criterion_9(cfg: &AcceptanceConfig) -> CriterionResult {
    let start = Instant::now();
    let mut c = Checks::new();
    let model = critical_two_point(2);
    let config = BrwConfig::new(model, 0.0).unwrap();
    let grid = [1_u64, 10, 100];
    let run = || {
        tail_curve_z(&config, &grid, 200_000, cfg.master_seed ^ 0xde7e)
            .unwrap()
            .to_csv()
    };
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(run);
    let eight = rayon::ThreadPoolBuilder::new()
        .num_threads(8)
        .build()
        .unwrap()
        .install(run);
    c.require(single == eight, "worker count changed output bytes".to_string());
    c.note(format!("{} bytes identical across pools", single.len()));
    c.finish(9, "determinism across worker counts", start, None)
}

/// Runs the whole suite in order.
pub fn run_all(cfg: &AcceptanceConfig) -> Vec<CriterionResult> {
    vec![
        criterion_1(cfg),
        criterion_2(cfg),
        criterion_3(cfg),
        criterion_4(cfg),
        criterion_5(cfg),
        criterion_6(cfg),
        criterion_7(cfg),
        criterion_8(cfg),
        criterion_9(cfg),
    ]
}
