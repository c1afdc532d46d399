//! Tail curves, moment reports, many-to-one importance-sampled moments,
//! level choices and the two-stage rare-event estimator.
//!
//! Scaled statistics render boundedness claims as band checks: a quantity
//! predicted to be `constant * base(k)` is divided by `base(k)` and the
//! resulting sequence must stay inside a fixed ratio band over the grid.

use serde::{Deserialize, Serialize};

use crate::brw::{run_brw, run_strip, BrwConfig, Caps};
use crate::error::{Error, Result};
use crate::parallel::{self, BlockStats};
use crate::seed::replication_rng;
use crate::step_model::{StepModel, TiltedStep};
use crate::walk::{two_barrier_exit, ExitSide};

/// How a reported moment value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    DirectMc,
    ManyToOneIs,
    ExactLattice,
}

/// A moment value with its uncertainty and provenance, for dual-source
/// agreement checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub value: f64,
    /// Standard error of the estimate; zero for exact sources.
    pub stderr: f64,
    pub source: MomentSource,
    pub reps: u64,
    /// The value divided by its predicted growth, where a band statement
    /// applies.
    pub scaled: Option<f64>,
    /// Solver tolerance, for exact sources.
    pub tolerance: Option<f64>,
    pub censored: u64,
    /// Set when more than 1% of replications were censored.
    pub censor_warning: bool,
}

impl MomentReport {
    pub fn exact(value: f64, tolerance: f64) -> Self {
        MomentReport {
            value,
            stderr: 0.0,
            source: MomentSource::ExactLattice,
            reps: 0,
            scaled: None,
            tolerance: Some(tolerance),
            censored: 0,
            censor_warning: false,
        }
    }

    /// |a - b| within 3 combined standard errors (solver tolerance for
    /// exact sources).
    pub fn agrees_with(&self, other: &MomentReport) -> bool {
        let sa = self.stderr.max(self.tolerance.unwrap_or(0.0));
        let sb = other.stderr.max(other.tolerance.unwrap_or(0.0));
        (self.value - other.value).abs() <= 3.0 * (sa + sb)
    }
}

/// Which tail a curve describes; fixes the exceedance comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailKind {
    /// Total progeny: a run exceeds threshold `n` when `Z > n`.
    ProgenyCount,
    /// Maximum position: a run exceeds threshold `k` when `M >= k`.
    Maximum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveSource {
    MonteCarlo,
    ExactLattice,
}

/// Threshold grid with empirical survival probabilities, Wilson intervals
/// and the scaled band statistic.
///
/// A censored run is a hit at every threshold its certified count already
/// exceeds and is excluded from the denominator above that, so `p_hat` stays
/// unbiased where provable and the exclusions are reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub kind: TailKind,
    pub source: CurveSource,
    pub thresholds: Vec<f64>,
    pub hits: Vec<u64>,
    pub excluded: Vec<u64>,
    pub reps: u64,
    pub censored_reps: u64,
    /// Root position of the underlying runs.
    pub x: f64,
    pub rho: f64,
    pub p_hat: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
    pub scaled: Vec<f64>,
}

#[derive(Debug, Clone)]
struct TailTally {
    hits: Vec<u64>,
    excluded: Vec<u64>,
    reps: u64,
    censored_reps: u64,
}

impl TailTally {
    fn new(len: usize) -> Self {
        TailTally {
            hits: vec![0; len],
            excluded: vec![0; len],
            reps: 0,
            censored_reps: 0,
        }
    }

    fn merge(mut a: Self, b: Self) -> Self {
        for (h, hb) in a.hits.iter_mut().zip(&b.hits) {
            *h += hb;
        }
        for (e, eb) in a.excluded.iter_mut().zip(&b.excluded) {
            *e += eb;
        }
        a.reps += b.reps;
        a.censored_reps += b.censored_reps;
        a
    }
}

fn record_into(
    tally: &mut TailTally,
    thresholds: &[f64],
    kind: TailKind,
    value: f64,
    censored: bool,
) {
    tally.reps += 1;
    if censored {
        tally.censored_reps += 1;
    }
    for (i, &t) in thresholds.iter().enumerate() {
        let hit = match kind {
            TailKind::ProgenyCount => value > t,
            TailKind::Maximum => value >= t,
        };
        if hit {
            tally.hits[i] += 1;
        } else if censored {
            // The run certifies exceedance only up to its observed value.
            tally.excluded[i] += 1;
        }
    }
}

fn ascending(grid: &[f64]) -> bool {
    grid.windows(2).all(|w| w[0] < w[1])
}

#[allow(clippy::needless_range_loop)]
fn finalize_curve(
    kind: TailKind,
    source: CurveSource,
    thresholds: Vec<f64>,
    tally: TailTally,
    x: f64,
    rho: f64,
) -> TailCurve {
    let mut p_hat = Vec::with_capacity(thresholds.len());
    let mut ci = Vec::with_capacity(thresholds.len());
    let mut scaled = Vec::with_capacity(thresholds.len());
    for i in 0..thresholds.len() {
        let denom = tally.reps - tally.excluded[i];
        let p = if denom == 0 {
            f64::NAN
        } else {
            tally.hits[i] as f64 / denom as f64
        };
        let interval = if denom == 0 {
            (f64::NAN, f64::NAN)
        } else {
            wilson_ci(tally.hits[i], denom, 1.96).expect("valid tally")
        };
        p_hat.push(p);
        ci.push(interval);
        scaled.push(scaled_statistic(kind, thresholds[i], p, x, rho));
    }
    TailCurve {
        kind,
        source,
        thresholds,
        hits: tally.hits,
        excluded: tally.excluded,
        reps: tally.reps,
        censored_reps: tally.censored_reps,
        x,
        rho,
        p_hat,
        ci,
        scaled,
    }
}

/// The band statistic for one grid point.
pub fn scaled_statistic(kind: TailKind, threshold: f64, p: f64, x: f64, rho: f64) -> f64 {
    match kind {
        TailKind::ProgenyCount => {
            if threshold <= 1.0 {
                0.0
            } else {
                let ln = threshold.ln();
                threshold * ln * ln * p / ((1.0 + x) * (rho * x).exp())
            }
        }
        TailKind::Maximum => threshold * (rho * (threshold - x)).exp() * p / (1.0 + x),
    }
}

impl TailCurve {
    /// Merges two Monte Carlo curves built over disjoint replication index
    /// ranges of the same experiment. Tallies are integers, so merging is
    /// exact and associative.
    pub fn merge(a: &TailCurve, b: &TailCurve) -> Result<TailCurve> {
        if a.kind != b.kind
            || a.source != b.source
            || a.thresholds != b.thresholds
            || a.x != b.x
            || a.rho != b.rho
        {
            return Err(Error::Parameter(
                "cannot merge tail curves from different experiments".to_string(),
            ));
        }
        if a.source != CurveSource::MonteCarlo {
            return Err(Error::Parameter("only Monte Carlo curves merge".to_string()));
        }
        let tally = TailTally::merge(
            TailTally {
                hits: a.hits.clone(),
                excluded: a.excluded.clone(),
                reps: a.reps,
                censored_reps: a.censored_reps,
            },
            TailTally {
                hits: b.hits.clone(),
                excluded: b.excluded.clone(),
                reps: b.reps,
                censored_reps: b.censored_reps,
            },
        );
        Ok(finalize_curve(
            a.kind,
            a.source,
            a.thresholds.clone(),
            tally,
            a.x,
            a.rho,
        ))
    }

    /// CSV with the columns (threshold, hits, reps, p_hat, ci_lo, ci_hi,
    /// scaled); `reps` is the per-threshold effective denominator.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,hits,reps,p_hat,ci_lo,ci_hi,scaled\n");
        for i in 0..self.thresholds.len() {
            let denom = self.reps - self.excluded[i];
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.thresholds[i],
                self.hits[i],
                denom,
                self.p_hat[i],
                self.ci[i].0,
                self.ci[i].1,
                self.scaled[i]
            ));
        }
        out
    }
}

fn tail_curve_over_range(
    config: &BrwConfig,
    kind: TailKind,
    thresholds: &[f64],
    master_seed: u64,
    range: std::ops::Range<u64>,
) -> Result<TailCurve> {
    config.validate()?;
    if thresholds.is_empty() || !ascending(thresholds) {
        return Err(Error::Parameter(
            "threshold grid must be non-empty and strictly ascending".to_string(),
        ));
    }
    if kind == TailKind::ProgenyCount {
        let max = thresholds.last().copied().unwrap_or(0.0);
        if max > config.caps.max_total_counted as f64 {
            return Err(Error::Parameter(format!(
                "grid maximum {max} above max_total_counted cap {}",
                config.caps.max_total_counted
            )));
        }
    }
    if kind == TailKind::Maximum && config.top_level.is_some() {
        return Err(Error::Parameter(
            "maximum tail curves need an unbounded top".to_string(),
        ));
    }
    let rho = config
        .model
        .rho()
        .ok_or_else(|| Error::Parameter("model rho not solved".to_string()))?;
    let count = range.end.saturating_sub(range.start);
    if count == 0 {
        return Err(Error::Parameter("empty replication range".to_string()));
    }
    let offset = range.start;
    let tally = parallel::map_reduce_blocks(
        count,
        parallel::DEFAULT_BLOCK,
        |local| {
            let mut t = TailTally::new(thresholds.len());
            for i in local {
                let mut rng = replication_rng(master_seed, offset + i);
                let run = run_brw(config, &mut rng).expect("validated config");
                let value = match kind {
                    TailKind::ProgenyCount => run.z as f64,
                    TailKind::Maximum => run.m,
                };
                record_into(&mut t, thresholds, kind, value, run.censored.is_some());
            }
            t
        },
        TailTally::merge,
    )
    .expect("count >= 1");
    Ok(finalize_curve(
        kind,
        CurveSource::MonteCarlo,
        thresholds.to_vec(),
        tally,
        config.start,
        rho,
    ))
}

/// Empirical tail of the total progeny over `reps` replications.
pub fn tail_curve_z(
    config: &BrwConfig,
    n_grid: &[u64],
    reps: u64,
    master_seed: u64,
) -> Result<TailCurve> {
    let thresholds: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
    tail_curve_over_range(config, TailKind::ProgenyCount, &thresholds, master_seed, 0..reps)
}

/// As [`tail_curve_z`], over an explicit replication index range; curves
/// from disjoint ranges merge exactly into the curve of the union.
pub fn tail_curve_z_range(
    config: &BrwConfig,
    n_grid: &[u64],
    master_seed: u64,
    range: std::ops::Range<u64>,
) -> Result<TailCurve> {
    let thresholds: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
    tail_curve_over_range(config, TailKind::ProgenyCount, &thresholds, master_seed, range)
}

/// Empirical tail of the maximum position over `reps` replications.
pub fn tail_curve_m(
    config: &BrwConfig,
    k_grid: &[f64],
    reps: u64,
    master_seed: u64,
) -> Result<TailCurve> {
    tail_curve_over_range(config, TailKind::Maximum, k_grid, master_seed, 0..reps)
}

/// Exact maximum-tail curve for lattice models, bypassing Monte Carlo.
pub fn exact_tail_curve_m(model: &StepModel, x: i64, k_grid: &[i64]) -> Result<TailCurve> {
    let thresholds: Vec<f64> = k_grid.iter().map(|&k| k as f64).collect();
    if thresholds.is_empty() || !ascending(&thresholds) {
        return Err(Error::Parameter(
            "threshold grid must be non-empty and strictly ascending".to_string(),
        ));
    }
    let rho = model
        .rho()
        .ok_or_else(|| Error::Parameter("model rho not solved".to_string()))?;
    let mut p_hat = Vec::new();
    let mut ci = Vec::new();
    let mut scaled = Vec::new();
    for &k in k_grid {
        let p = crate::brw::exact_strip_survival(model, k, x)?;
        p_hat.push(p);
        ci.push((p, p));
        scaled.push(scaled_statistic(TailKind::Maximum, k as f64, p, x as f64, rho));
    }
    Ok(TailCurve {
        kind: TailKind::Maximum,
        source: CurveSource::ExactLattice,
        hits: vec![0; k_grid.len()],
        excluded: vec![0; k_grid.len()],
        reps: 0,
        censored_reps: 0,
        x: x as f64,
        rho,
        thresholds,
        p_hat,
        ci,
        scaled,
    })
}

/// Many-to-one estimate of `E^y[Z(a,k)]`: one tilted walk per replication
/// instead of one tree.
///
/// The walk starts at `y` with barriers `(a, k)`; bottom exits contribute
/// `exp(rho L)` (top exits zero) and the average is multiplied by
/// `exp(rho (y - a))`.
pub fn moment_zak_many_to_one(
    model: &StepModel,
    y: f64,
    a: f64,
    k: f64,
    reps: u64,
    master_seed: u64,
    max_steps: u64,
) -> Result<MomentReport> {
    if !(a <= y && y <= k) {
        return Err(Error::Domain(format!("need a={a} <= y={y} <= k={k}")));
    }
    if reps == 0 {
        return Err(Error::Parameter("reps must be >= 1".to_string()));
    }
    let rho = model
        .rho()
        .ok_or_else(|| Error::Parameter("model rho not solved".to_string()))?;
    let tilted = TiltedStep::new(model)?;
    let (stats, censored) = parallel::map_reduce_blocks(
        reps,
        parallel::DEFAULT_BLOCK,
        |range| {
            let mut stats = BlockStats::default();
            let mut censored = 0_u64;
            for i in range {
                let mut rng = replication_rng(master_seed, i);
                match two_barrier_exit(&tilted, 1.0, y, a, k, &mut rng, max_steps) {
                    Ok((ExitSide::Bottom, undershoot, _)) => stats.push((rho * undershoot).exp()),
                    Ok((ExitSide::Top, _, _)) => stats.push(0.0),
                    Err(Error::CensoredWalk { .. }) => censored += 1,
                    Err(e) => panic!("unexpected walk error: {e}"),
                }
            }
            (stats, censored)
        },
        |(s1, c1), (s2, c2)| (BlockStats::merge(s1, s2), c1 + c2),
    )
    .expect("reps >= 1");
    let factor = (rho * (y - a)).exp();
    let value = factor * stats.mean();
    let scaled = if y == k {
        Some(k * (-rho * (k - a)).exp() * value)
    } else {
        None
    };
    Ok(MomentReport {
        value,
        stderr: factor * stats.stderr(),
        source: MomentSource::ManyToOneIs,
        reps,
        scaled,
        tolerance: None,
        censored,
        censor_warning: censored * 100 > reps,
    })
}

/// Many-to-one estimate of `E^x[H(k)]`: top exits contribute
/// `exp(-rho U)`, scaled by `exp(rho (x - k))`.
pub fn moment_h_many_to_one(
    model: &StepModel,
    x: f64,
    k: f64,
    reps: u64,
    master_seed: u64,
    max_steps: u64,
) -> Result<MomentReport> {
    if !(0.0 <= x && x <= k) {
        return Err(Error::Domain(format!("need 0 <= x={x} <= k={k}")));
    }
    if reps == 0 {
        return Err(Error::Parameter("reps must be >= 1".to_string()));
    }
    let rho = model
        .rho()
        .ok_or_else(|| Error::Parameter("model rho not solved".to_string()))?;
    let tilted = TiltedStep::new(model)?;
    let (stats, censored) = parallel::map_reduce_blocks(
        reps,
        parallel::DEFAULT_BLOCK,
        |range| {
            let mut stats = BlockStats::default();
            let mut censored = 0_u64;
            for i in range {
                let mut rng = replication_rng(master_seed, i);
                match two_barrier_exit(&tilted, 1.0, x, 0.0, k, &mut rng, max_steps) {
                    Ok((ExitSide::Top, overshoot, _)) => stats.push((-rho * overshoot).exp()),
                    Ok((ExitSide::Bottom, _, _)) => stats.push(0.0),
                    Err(Error::CensoredWalk { .. }) => censored += 1,
                    Err(e) => panic!("unexpected walk error: {e}"),
                }
            }
            (stats, censored)
        },
        |(s1, c1), (s2, c2)| (BlockStats::merge(s1, s2), c1 + c2),
    )
    .expect("reps >= 1");
    let factor = (rho * (x - k)).exp();
    let value = factor * stats.mean();
    Ok(MomentReport {
        value,
        stderr: factor * stats.stderr(),
        source: MomentSource::ManyToOneIs,
        reps,
        scaled: Some(k * (rho * (k - x)).exp() * value / (1.0 + x)),
        tolerance: None,
        censored,
        censor_warning: censored * 100 > reps,
    })
}

/// Direct tree Monte Carlo of `E^y[Z(a,k)]` via the strip process.
pub fn moment_zak_direct(
    model: &StepModel,
    y: f64,
    a: f64,
    k: f64,
    caps: Caps,
    reps: u64,
    master_seed: u64,
) -> Result<MomentReport> {
    if reps == 0 {
        return Err(Error::Parameter("reps must be >= 1".to_string()));
    }
    if !(0.0 <= a && a < k && a <= y && y <= k) {
        return Err(Error::Domain(format!("need 0 <= a={a} <= y={y} <= k={k}")));
    }
    let rho = model
        .rho()
        .ok_or_else(|| Error::Parameter("model rho not solved".to_string()))?;
    let (stats, censored) = parallel::map_reduce_blocks(
        reps,
        parallel::DEFAULT_BLOCK,
        |range| {
            let mut stats = BlockStats::default();
            let mut censored = 0_u64;
            for i in range {
                let mut rng = replication_rng(master_seed, i);
                let run = run_strip(model, y, a, k, caps, &mut rng).expect("validated");
                if run.censored.is_some() {
                    censored += 1;
                } else {
                    stats.push(run.zak as f64);
                }
            }
            (stats, censored)
        },
        |(s1, c1), (s2, c2)| (BlockStats::merge(s1, s2), c1 + c2),
    )
    .expect("reps >= 1");
    let value = stats.mean();
    let scaled = if y == k {
        Some(k * (-rho * (k - a)).exp() * value)
    } else {
        None
    };
    Ok(MomentReport {
        value,
        stderr: stats.stderr(),
        source: MomentSource::DirectMc,
        reps,
        scaled,
        tolerance: None,
        censored,
        censor_warning: censored * 100 > reps,
    })
}

/// Direct tree Monte Carlo of `E^x[H(k)]`.
pub fn moment_h_direct(
    model: &StepModel,
    x: f64,
    k: f64,
    caps: Caps,
    reps: u64,
    master_seed: u64,
) -> Result<MomentReport> {
    if reps == 0 {
        return Err(Error::Parameter("reps must be >= 1".to_string()));
    }
    let rho = model
        .rho()
        .ok_or_else(|| Error::Parameter("model rho not solved".to_string()))?;
    let config = BrwConfig::new(model.clone(), x)?
        .with_top_level(k)?
        .with_caps(caps);
    let (stats, censored) = parallel::map_reduce_blocks(
        reps,
        parallel::DEFAULT_BLOCK,
        |range| {
            let mut stats = BlockStats::default();
            let mut censored = 0_u64;
            for i in range {
                let mut rng = replication_rng(master_seed, i);
                let run = run_brw(&config, &mut rng).expect("validated");
                if run.censored.is_some() {
                    censored += 1;
                } else {
                    stats.push(run.hk as f64);
                }
            }
            (stats, censored)
        },
        |(s1, c1), (s2, c2)| (BlockStats::merge(s1, s2), c1 + c2),
    )
    .expect("reps >= 1");
    let value = stats.mean();
    Ok(MomentReport {
        value,
        stderr: stats.stderr(),
        source: MomentSource::DirectMc,
        reps,
        scaled: Some(k * (rho * (k - x)).exp() * value / (1.0 + x)),
        tolerance: None,
        censored,
        censor_warning: censored * 100 > reps,
    })
}

/// Exact lattice report for `E^y[Z(a,k)]` with the band scaling at `y = k`.
pub fn moment_zak_exact(model: &StepModel, y: i64, a: i64, k: i64) -> Result<MomentReport> {
    let rho = model
        .rho()
        .ok_or_else(|| Error::Parameter("model rho not solved".to_string()))?;
    let value = crate::brw::exact_brw_first_moment(model, a, k, y)?;
    let mut report = MomentReport::exact(value, 1e-10);
    if y == k {
        report.scaled = Some(k as f64 * (-rho * (k - a) as f64).exp() * value);
    }
    Ok(report)
}

/// Exact lattice report for `E^x[H(k)]` with the band scaling.
pub fn moment_h_exact(model: &StepModel, x: i64, k: i64) -> Result<MomentReport> {
    let rho = model
        .rho()
        .ok_or_else(|| Error::Parameter("model rho not solved".to_string()))?;
    let value = crate::brw::exact_brw_hk_first_moment(model, k, x)?;
    let mut report = MomentReport::exact(value, 1e-10);
    report.scaled = Some(k as f64 * (rho * (k - x) as f64).exp() * value / (1.0 + x as f64));
    Ok(report)
}

/// Solves `exp(rho k) / k = n` for the larger root `k > 1/rho` by bisection,
/// to relative residual 1e-10.
pub fn choose_k_upper(model: &StepModel, n: f64) -> Result<f64> {
    let rho = model
        .rho()
        .ok_or_else(|| Error::Parameter("model rho not solved".to_string()))?;
    solve_level_equation(rho, n)
}

/// Solves `mu exp(rho k) / (2 k) = n`; with `mu = 2` this coincides with
/// [`choose_k_upper`].
pub fn choose_k_lower(model: &StepModel, n: f64, mu: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::Parameter(format!("mu={mu} must be > 0")));
    }
    let rho = model
        .rho()
        .ok_or_else(|| Error::Parameter("model rho not solved".to_string()))?;
    solve_level_equation(rho, 2.0 * n / mu)
}

fn solve_level_equation(rho: f64, n: f64) -> Result<f64> {
    if !(n > std::f64::consts::E * rho) {
        return Err(Error::Domain(format!(
            "n={n} must exceed e * rho = {} for a root to exist",
            std::f64::consts::E * rho
        )));
    }
    let f = |k: f64| (rho * k).exp() / k;
    let lo0 = 1.0 / rho;
    let hi0 = (n.ln() + 2.0 * n.ln().ln().max(0.0)) / rho + 10.0;
    if !(f(lo0) < n) {
        return Err(Error::Domain("no root in bracket (left)".to_string()));
    }
    if !(f(hi0) > n) {
        return Err(Error::Domain("no root in bracket (right)".to_string()));
    }
    let (mut lo, mut hi) = (lo0, hi0);
    let mut k = 0.5 * (lo + hi);
    for _ in 0..200 {
        k = 0.5 * (lo + hi);
        let v = f(k);
        if ((v - n) / n).abs() <= 1e-10 {
            return Ok(k);
        }
        if v < n {
            lo = k;
        } else {
            hi = k;
        }
    }
    let v = f(k);
    if ((v - n) / n).abs() <= 1e-8 {
        return Ok(k);
    }
    Err(Error::Convergence(format!(
        "level equation residual {:e} after bisection",
        (v - n) / n
    )))
}

/// Result of the two-stage lower-bound construction for `P^x(Z > n)`.
///
/// The estimate is the product of a reach probability and a conditional
/// progeny tail at the matched level; it is a certified lower-bound
/// construction, not a consistent estimator of the tail itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoStageEstimate {
    pub n: f64,
    pub mu_hat: f64,
    pub k_star: f64,
    pub k_used: i64,
    /// `P^x(M >= k_used)`, exact on the lattice.
    pub p_max: f64,
    pub p_max_stderr: f64,
    /// `P^{k_used}(Z(a, k_used) > n)` by direct tree Monte Carlo.
    pub p_progeny: f64,
    pub p_progeny_stderr: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
    pub scaled: f64,
    pub lower_bound_biased: bool,
    pub stage2_censored: u64,
    pub stage2_warning: bool,
}

/// Two-stage rare-event estimate of `P^x(Z > n)` for a critical lattice
/// model.
///
/// Pilot: estimate `mu` from the many-to-one first moment at a coarse
/// level. Level choice: solve `mu exp(rho k)/(2k) = n`. Stage one:
/// exact reach probability `P^x(M >= k)`. Stage two: direct strip
/// replications from `k`, tallying `Z(a,k) > n`.
#[allow(clippy::too_many_arguments)]
pub fn two_stage_tail(
    model: &StepModel,
    x: i64,
    a: i64,
    n: f64,
    reps_stage1: u64,
    reps_stage2: u64,
    caps: Caps,
    master_seed: u64,
) -> Result<TwoStageEstimate> {
    if x < 0 || a < 0 {
        return Err(Error::Parameter(format!("need x={x} >= 0 and a={a} >= 0")));
    }
    if reps_stage1 == 0 || reps_stage2 == 0 {
        return Err(Error::Parameter("stage reps must be >= 1".to_string()));
    }
    let rho = model
        .rho()
        .ok_or_else(|| Error::Parameter("model rho not solved".to_string()))?;

    // Pilot: mu from the many-to-one moment at a coarse level.
    let k_pilot = a + 12;
    let pilot = moment_zak_many_to_one(
        model,
        k_pilot as f64,
        a as f64,
        k_pilot as f64,
        reps_stage1,
        master_seed ^ 0x70b1,
        crate::walk::DEFAULT_MAX_STEPS,
    )?;
    let mu_hat = k_pilot as f64 * (-rho * k_pilot as f64).exp() * pilot.value;

    let k_star = choose_k_lower(model, n, mu_hat)?;
    if (a as f64) >= k_star {
        return Err(Error::Domain(format!(
            "count level a={a} not below matched level k*={k_star}"
        )));
    }
    let k_used = k_star.ceil() as i64;

    let p_max = crate::brw::exact_strip_survival(model, k_used, x)?;

    let thresholds_hit = parallel::map_reduce_blocks(
        reps_stage2,
        parallel::DEFAULT_BLOCK,
        |range| {
            let mut hits = 0_u64;
            let mut censored = 0_u64;
            for i in range {
                let mut rng = replication_rng(master_seed ^ 0x5742, i);
                let run = run_strip(model, k_used as f64, a as f64, k_used as f64, caps, &mut rng)
                    .expect("validated");
                if run.censored.is_some() {
                    // Certified-so-far count still proves a hit; anything
                    // else is conservatively a miss, preserving the
                    // lower-bound direction.
                    censored += 1;
                    if run.zak as f64 > n {
                        hits += 1;
                    }
                } else if run.zak as f64 > n {
                    hits += 1;
                }
            }
            (hits, censored)
        },
        |(h1, c1), (h2, c2)| (h1 + h2, c1 + c2),
    )
    .expect("reps >= 1");
    let (hits, stage2_censored) = thresholds_hit;
    let p_progeny = hits as f64 / reps_stage2 as f64;
    let mut p_progeny_stderr = (p_progeny * (1.0 - p_progeny) / reps_stage2 as f64).sqrt();
    let censored_frac = stage2_censored as f64 / reps_stage2 as f64;
    let stage2_warning = censored_frac > 0.01;
    if stage2_warning {
        // Unresolved runs widen the interval by their mass.
        p_progeny_stderr += censored_frac;
    }

    let estimate = p_max * p_progeny;
    let stderr = p_max * p_progeny_stderr;
    let ci95 = (
        (estimate - 1.96 * stderr).max(0.0),
        (estimate + 1.96 * stderr).min(1.0),
    );
    Ok(TwoStageEstimate {
        n,
        mu_hat,
        k_star,
        k_used,
        p_max,
        p_max_stderr: 0.0,
        p_progeny,
        p_progeny_stderr,
        estimate,
        stderr,
        ci95,
        scaled: scaled_statistic(TailKind::ProgenyCount, n, estimate, x as f64, rho),
        lower_bound_biased: true,
        stage2_censored,
        stage2_warning,
    })
}

/// Wilson score interval for `hits` successes in `reps` trials at normal
/// quantile `z`.
pub fn wilson_ci(hits: u64, reps: u64, z: f64) -> Result<(f64, f64)> {
    if reps == 0 {
        return Err(Error::Parameter("reps must be >= 1".to_string()));
    }
    if hits > reps {
        return Err(Error::Parameter(format!("hits {hits} > reps {reps}")));
    }
    let n = reps as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // The boundary endpoints are exactly 0 and 1; don't let rounding in the
    // quadratic leak past them.
    let lo = if hits == 0 {
        0.0
    } else {
        ((center - half) / denom).clamp(0.0, 1.0)
    };
    let hi = if hits == reps {
        1.0
    } else {
        ((center + half) / denom).clamp(0.0, 1.0)
    };
    Ok((lo, hi))
}
