//! Single random walks between two barriers.
//!
//! Monte Carlo side: walk functionals (exit side, overshoot, undershoot and
//! the exponentially weighted Green sums along the path) plus first-passage
//! and boundary-moment estimators.
//!
//! Exact side: absorbing-chain solvers on integer strips: hitting
//! probabilities, expected visit counts (fundamental matrix) and the
//! weighted Green sums with their boundary factors.
//!
//! Barrier convention throughout: the walk exits "top" the first time its
//! position is strictly greater than `upper` and "bottom" the first time it
//! is strictly less than `lower`. An integer walk on a strip with integer
//! barriers therefore exits at `upper + 1` (or beyond) and `lower - 1` (or
//! below).

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimators::{MomentReport, MomentSource};
use crate::linalg::DenseMatrix;
use crate::parallel::{self, BlockStats};
use crate::seed::replication_rng;
use crate::step_model::StepSampler;

/// Largest number of interior states an exact strip solver accepts.
pub const MAX_STRIP_STATES: usize = 5000;
/// Default per-walk step cap. Two-barrier exits are almost surely finite,
/// so hitting the cap indicates misconfiguration rather than bad luck.
pub const DEFAULT_MAX_STEPS: u64 = 100_000_000;

/// Which barrier the walk crossed first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitSide {
    Top,
    Bottom,
}

impl std::fmt::Display for ExitSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExitSide::Top => write!(f, "top"),
            ExitSide::Bottom => write!(f, "bottom"),
        }
    }
}

/// Outcome of one two-barrier walk.
///
/// `overshoot` is populated on top exits, `undershoot` on bottom exits.
/// The Green sums weight every visited position `w` (including the exit
/// position) through the strip-relative coordinate `r = w - lower` with
/// `kappa = upper - lower`:
///
/// * `green_top  = exp(overshoot)  * sum of exp(-r) (r + 1)` on top exits,
/// * `green_bottom = exp(-undershoot) * sum of exp(-r) (kappa - r + 1)` on
///   bottom exits.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkFunctionals {
    pub exit: ExitSide,
    pub steps_taken: u64,
    pub overshoot: Option<f64>,
    pub undershoot: Option<f64>,
    pub green_top: Option<f64>,
    pub green_bottom: Option<f64>,
}

/// Affine map `s -> offset + scale * s` taking a driving walk into the walk
/// of record (e.g. `r = rho * (k - s)` with `offset = rho k`, `scale = -rho`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub offset: f64,
    pub scale: f64,
}

impl AffineMap {
    pub fn identity() -> Self {
        AffineMap {
            offset: 0.0,
            scale: 1.0,
        }
    }

    pub fn apply(&self, s: f64) -> f64 {
        self.offset + self.scale * s
    }
}

/// Runs one walk from `start` until it leaves `(lower, upper)` and returns
/// its functionals.
///
/// The sampler drives an underlying walk whose increments are mapped through
/// `transform`; `start`, the barriers and every returned quantity refer to
/// the transformed walk. With the identity transform the sampler's walk is
/// the walk of record.
pub fn run_two_barrier_walk<S, R>(
    sampler: &S,
    start: f64,
    lower: f64,
    upper: f64,
    transform: AffineMap,
    rng: &mut R,
    max_steps: u64,
) -> Result<WalkFunctionals>
where
    S: StepSampler,
    R: Rng + ?Sized,
{
    if !(lower <= start && start <= upper) {
        return Err(Error::Domain(format!(
            "start {start} outside [{lower}, {upper}]"
        )));
    }
    if max_steps == 0 {
        return Err(Error::Parameter("max_steps must be > 0".to_string()));
    }
    let kappa = upper - lower;
    let g_top = |r: f64| (-r).exp() * (r + 1.0);
    let g_bot = |r: f64| (-r).exp() * (kappa - r + 1.0);

    let mut w = start;
    let mut sum_top = g_top(start - lower);
    let mut sum_bot = g_bot(start - lower);
    let mut steps = 0_u64;
    loop {
        if steps == max_steps {
            return Err(Error::CensoredWalk {
                steps,
                position: w,
            });
        }
        w += transform.scale * sampler.step(rng);
        steps += 1;
        let r = w - lower;
        sum_top += g_top(r);
        sum_bot += g_bot(r);
        if w > upper {
            let u = w - upper;
            return Ok(WalkFunctionals {
                exit: ExitSide::Top,
                steps_taken: steps,
                overshoot: Some(u),
                undershoot: None,
                green_top: Some(u.exp() * sum_top),
                green_bottom: None,
            });
        }
        if w < lower {
            let l = lower - w;
            return Ok(WalkFunctionals {
                exit: ExitSide::Bottom,
                steps_taken: steps,
                overshoot: None,
                undershoot: Some(l),
                green_top: None,
                green_bottom: Some((-l).exp() * sum_bot),
            });
        }
    }
}

/// Lean two-barrier exit: side, boundary distance (overshoot or undershoot)
/// and step count, without Green accumulation.
pub fn two_barrier_exit<S, R>(
    sampler: &S,
    scale: f64,
    start: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
    max_steps: u64,
) -> Result<(ExitSide, f64, u64)>
where
    S: StepSampler,
    R: Rng + ?Sized,
{
    if !(lower <= start && start <= upper) {
        return Err(Error::Domain(format!(
            "start {start} outside [{lower}, {upper}]"
        )));
    }
    let mut w = start;
    let mut steps = 0_u64;
    loop {
        if steps == max_steps {
            return Err(Error::CensoredWalk {
                steps,
                position: w,
            });
        }
        w += scale * sampler.step(rng);
        steps += 1;
        if w > upper {
            return Ok((ExitSide::Top, w - upper, steps));
        }
        if w < lower {
            return Ok((ExitSide::Bottom, lower - w, steps));
        }
    }
}

/// First passage strictly above `level`; returns (steps, overshoot).
pub fn first_passage_up<S, R>(
    sampler: &S,
    start: f64,
    level: f64,
    rng: &mut R,
    max_steps: u64,
) -> Result<(u64, f64)>
where
    S: StepSampler,
    R: Rng + ?Sized,
{
    let mut w = start;
    let mut steps = 0_u64;
    while w <= level {
        if steps == max_steps {
            return Err(Error::CensoredWalk {
                steps,
                position: w,
            });
        }
        w += sampler.step(rng);
        steps += 1;
    }
    Ok((steps, w - level))
}

/// First passage strictly below `level`; returns (steps, undershoot).
pub fn first_passage_down<S, R>(
    sampler: &S,
    start: f64,
    level: f64,
    rng: &mut R,
    max_steps: u64,
) -> Result<(u64, f64)>
where
    S: StepSampler,
    R: Rng + ?Sized,
{
    let mut w = start;
    let mut steps = 0_u64;
    while w >= level {
        if steps == max_steps {
            return Err(Error::CensoredWalk {
                steps,
                position: w,
            });
        }
        w += sampler.step(rng);
        steps += 1;
    }
    Ok((steps, level - w))
}

/// Finite-state realization of an integer walk on the strip
/// `{lower, ..., upper}` with absorption strictly outside.
#[derive(Debug, Clone)]
pub struct LatticeStrip {
    lower: i64,
    upper: i64,
    law: Vec<(i64, f64)>,
}

impl LatticeStrip {
    pub fn new(lower: i64, upper: i64, law: Vec<(i64, f64)>) -> Result<Self> {
        if lower > upper {
            return Err(Error::Parameter(format!(
                "strip barriers out of order: {lower} > {upper}"
            )));
        }
        let n_states = (upper - lower + 1) as usize;
        if n_states > MAX_STRIP_STATES {
            return Err(Error::Resource(format!(
                "strip has {n_states} states, cap is {MAX_STRIP_STATES}"
            )));
        }
        if law.is_empty() {
            return Err(Error::Parameter("empty step law".to_string()));
        }
        let mut total = 0.0;
        for &(_, p) in &law {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::Parameter(format!("bad step probability {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!(
                "step law sums to {total}, not 1"
            )));
        }
        Ok(LatticeStrip { lower, upper, law })
    }

    pub fn lower(&self) -> i64 {
        self.lower
    }

    pub fn upper(&self) -> i64 {
        self.upper
    }

    pub fn n_states(&self) -> usize {
        (self.upper - self.lower + 1) as usize
    }

    fn index(&self, state: i64) -> usize {
        (state - self.lower) as usize
    }

    fn is_interior(&self, state: i64) -> bool {
        state >= self.lower && state <= self.upper
    }

    /// `I - Q` over the interior states.
    fn i_minus_q(&self) -> DenseMatrix {
        let n = self.n_states();
        let mut m = DenseMatrix::identity(n);
        for s in self.lower..=self.upper {
            for &(y, p) in &self.law {
                let t = s + y;
                if self.is_interior(t) {
                    m[(self.index(s), self.index(t))] -= p;
                }
            }
        }
        m
    }

    /// Exact `P^z(top exit before bottom exit)` for every interior `z`.
    ///
    /// Solves `h(z) = sum_y p(y) h(z+y)` with `h = 1` above the strip and
    /// `h = 0` below it.
    pub fn hitting_probabilities(&self) -> Result<Vec<f64>> {
        let lu = self.i_minus_q().lu()?;
        let rhs: Vec<f64> = (self.lower..=self.upper)
            .map(|s| {
                self.law
                    .iter()
                    .filter(|&&(y, _)| s + y > self.upper)
                    .map(|&(_, p)| p)
                    .sum()
            })
            .collect();
        Ok(lu.solve(&rhs))
    }

    /// Exact `P^z(top exit before bottom exit)` for one interior state.
    pub fn exact_hitting_probability(&self, z: i64) -> Result<f64> {
        if !self.is_interior(z) {
            return Err(Error::Domain(format!(
                "z={z} not interior to [{}, {}]",
                self.lower, self.upper
            )));
        }
        Ok(self.hitting_probabilities()?[self.index(z)])
    }

    /// Expected visit counts before absorption, started from `start`:
    /// one row of the fundamental matrix `N = (I - Q)^{-1}`, indexed by
    /// interior state (the visit at time zero counts).
    pub fn expected_visits(&self, start: i64) -> Result<Vec<f64>> {
        if !self.is_interior(start) {
            return Err(Error::Domain(format!("start {start} not interior")));
        }
        let n = self.n_states();
        // Row of N = column of N^T: solve (I - Q)^T x = e_start.
        let base = self.i_minus_q();
        let mut t = DenseMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t[(i, j)] = base[(j, i)];
            }
        }
        let lu = t.lu()?;
        let mut rhs = vec![0.0; n];
        rhs[self.index(start)] = 1.0;
        Ok(lu.solve(&rhs))
    }

    /// Exact weighted Green sum with boundary factor, for either exit.
    ///
    /// In strip-relative coordinates `r = state - lower`, `kappa = upper -
    /// lower`, this is the expectation, over paths from `start`, of
    ///
    /// * top exit: `exp(U) * sum over the path (exit included) of
    ///   exp(-r) (r + 1)`, restricted to top-first paths;
    /// * bottom exit: `exp(-L) * sum of exp(-r) (kappa - r + 1)`,
    ///   restricted to bottom-first paths.
    pub fn exact_green_sum(&self, start: i64, weight: GreenWeight) -> Result<f64> {
        if !self.is_interior(start) {
            return Err(Error::Domain(format!("start {start} not interior")));
        }
        let kappa = (self.upper - self.lower) as f64;
        let rel = |s: i64| (s - self.lower) as f64;
        let g: Box<dyn Fn(f64) -> f64> = match weight {
            GreenWeight::TopExit => Box::new(|r: f64| (-r).exp() * (r + 1.0)),
            GreenWeight::BottomExit => Box::new(move |r: f64| (-r).exp() * (kappa - r + 1.0)),
        };
        // Boundary factor at the absorbed position: exp(U) above, exp(-L)
        // below; both read off the signed distance past the barrier.
        let boundary = |s: i64| -> f64 {
            match weight {
                GreenWeight::TopExit => ((s - self.upper) as f64).exp(),
                GreenWeight::BottomExit => ((s - self.lower) as f64).exp(),
            }
        };
        let exits = |s: i64, t: i64| -> bool {
            match weight {
                GreenWeight::TopExit => s + t > self.upper,
                GreenWeight::BottomExit => s + t < self.lower,
            }
        };

        let lu = self.i_minus_q().lu()?;

        // phi(s) = E^s[boundary factor; chosen exit first]
        let rhs_phi: Vec<f64> = (self.lower..=self.upper)
            .map(|s| {
                self.law
                    .iter()
                    .filter(|&&(y, _)| exits(s, y))
                    .map(|&(y, p)| p * boundary(s + y))
                    .sum()
            })
            .collect();
        let phi = lu.solve(&rhs_phi);

        // v(s) = g(s) phi(s) + sum_y p(y) [ v(s+y) interior
        //                                  + boundary(s+y) g(s+y) on exit ]
        let rhs_v: Vec<f64> = (self.lower..=self.upper)
            .map(|s| {
                let exit_part: f64 = self
                    .law
                    .iter()
                    .filter(|&&(y, _)| exits(s, y))
                    .map(|&(y, p)| p * boundary(s + y) * g(rel(s + y)))
                    .sum();
                g(rel(s)) * phi[self.index(s)] + exit_part
            })
            .collect();
        let v = lu.solve(&rhs_v);
        Ok(v[self.index(start)])
    }
}

/// Selects the exit event and weight family of an exact Green sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreenWeight {
    /// Factor `exp(U)`, weight `exp(-r) (r + 1)`, on top-exit paths.
    TopExit,
    /// Factor `exp(-L)`, weight `exp(-r) (kappa - r + 1)`, on bottom-exit
    /// paths.
    BottomExit,
}

/// Which boundary moment to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundarySide {
    /// `E[exp(U_level)]` for an upward passage (level >= start).
    Top,
    /// `E[exp(theta L_level)]` for a downward passage (level <= start).
    Bottom,
}

/// Monte Carlo estimate of a boundary moment of the first-passage
/// overshoot/undershoot at `level`, walking from 0.
///
/// Walks that exceed `max_steps` are excluded from the mean and counted;
/// more than 1% of them sets the censor warning.
pub fn estimate_boundary_moments<S>(
    sampler: &S,
    level: f64,
    side: BoundarySide,
    theta: f64,
    reps: u64,
    master_seed: u64,
    max_steps: u64,
) -> Result<MomentReport>
where
    S: StepSampler + Sync,
{
    if reps == 0 {
        return Err(Error::Parameter("reps must be >= 1".to_string()));
    }
    let out = parallel::map_reduce_blocks(
        reps,
        parallel::DEFAULT_BLOCK,
        |range| {
            let mut stats = BlockStats::default();
            let mut censored = 0_u64;
            for i in range {
                let mut rng = replication_rng(master_seed, i);
                let res = match side {
                    BoundarySide::Top => first_passage_up(sampler, 0.0, level, &mut rng, max_steps),
                    BoundarySide::Bottom => {
                        first_passage_down(sampler, 0.0, level, &mut rng, max_steps)
                    }
                };
                match res {
                    Ok((_, dist)) => {
                        let v = match side {
                            BoundarySide::Top => dist.exp(),
                            BoundarySide::Bottom => (theta * dist).exp(),
                        };
                        stats.push(v);
                    }
                    Err(Error::CensoredWalk { .. }) => censored += 1,
                    Err(e) => panic!("unexpected walk error: {e}"),
                }
            }
            (stats, censored)
        },
        |(s1, c1), (s2, c2)| (BlockStats::merge(s1, s2), c1 + c2),
    )
    .expect("reps >= 1");
    let (stats, censored) = out;
    Ok(MomentReport {
        value: stats.mean(),
        stderr: stats.stderr(),
        source: MomentSource::DirectMc,
        reps,
        scaled: None,
        tolerance: None,
        censored,
        censor_warning: censored * 100 > reps,
    })
}

/// Monte Carlo estimate of `c(x) = x + E^x[L_0]`, the constant governing
/// two-barrier hitting probabilities `P^x(top before bottom) ~ c(x)/k`.
pub fn estimate_passage_constant<S>(
    sampler: &S,
    x: f64,
    reps: u64,
    master_seed: u64,
    max_steps: u64,
) -> Result<MomentReport>
where
    S: StepSampler + Sync,
{
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("x={x} must be >= 0")));
    }
    if reps == 0 {
        return Err(Error::Parameter("reps must be >= 1".to_string()));
    }
    let (stats, censored) = parallel::map_reduce_blocks(
        reps,
        parallel::DEFAULT_BLOCK,
        |range| {
            let mut stats = BlockStats::default();
            let mut censored = 0_u64;
            for i in range {
                let mut rng = replication_rng(master_seed, i);
                match first_passage_down(sampler, x, 0.0, &mut rng, max_steps) {
                    Ok((_, undershoot)) => stats.push(undershoot),
                    Err(Error::CensoredWalk { .. }) => censored += 1,
                    Err(e) => panic!("unexpected walk error: {e}"),
                }
            }
            (stats, censored)
        },
        |(s1, c1), (s2, c2)| (BlockStats::merge(s1, s2), c1 + c2),
    )
    .expect("reps >= 1");
    Ok(MomentReport {
        value: x + stats.mean(),
        stderr: stats.stderr(),
        source: MomentSource::DirectMc,
        reps,
        scaled: None,
        tolerance: None,
        censored,
        censor_warning: censored * 100 > reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::step_model::{CriticalFamily, StepModel, TiltedStep};

    fn symmetric_unit_strip(lower: i64, upper: i64) -> LatticeStrip {
        LatticeStrip::new(lower, upper, vec![(1, 0.5), (-1, 0.5)]).unwrap()
    }

    fn tilted_critical_two_point() -> TiltedStep {
        let m = StepModel::calibrate_critical(CriticalFamily::TwoPoint, 2).unwrap();
        TiltedStep::new(&m).unwrap()
    }

    #[test]
    fn gamblers_ruin_closed_form() {
        // Interior {0..9}: ruin between -1 and 10, so P = (z+1)/11.
        let strip = symmetric_unit_strip(0, 9);
        let h = strip.hitting_probabilities().unwrap();
        for z in 0..=9_i64 {
            let expect = (z + 1) as f64 / 11.0;
            assert!((h[z as usize] - expect).abs() < 1e-12, "z={z}");
        }
        assert!((strip.exact_hitting_probability(3).unwrap() - 4.0 / 11.0).abs() < 1e-12);
        assert!((strip.exact_hitting_probability(0).unwrap() - 1.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn tilted_critical_two_point_matches_symmetric_walk() {
        let law = tilted_critical_two_point().lattice_law().unwrap();
        let strip_t = LatticeStrip::new(0, 9, law).unwrap();
        let strip_s = symmetric_unit_strip(0, 9);
        // The tilted up-probability is 1/2 up to the rho-solver tolerance,
        // which the 10-state solve amplifies a little.
        for z in 0..=9 {
            let a = strip_t.exact_hitting_probability(z).unwrap();
            let b = strip_s.exact_hitting_probability(z).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn hitting_probability_monotone_in_start() {
        let strip = symmetric_unit_strip(0, 25);
        let h = strip.hitting_probabilities().unwrap();
        for w in h.windows(2) {
            assert!(w[1] >= w[0] - 1e-14);
        }
    }

    #[test]
    fn passage_band_over_strip_family() {
        // (k+1) h(z) / (z+1) stays in a fixed positive band: exact solver
        // over k in {10, ..., 200}; for the unit walk the ratio is
        // (k+1)/(k+2), squarely inside (1/2, 1].
        for k in (10..=200).step_by(10) {
            let strip = symmetric_unit_strip(0, k);
            let h = strip.hitting_probabilities().unwrap();
            for z in 0..=k {
                let band = (k + 1) as f64 * h[z as usize] / (z + 1) as f64;
                assert!(band > 0.5 && band <= 1.0 + 1e-12, "k={k} z={z} band={band}");
            }
        }
    }

    #[test]
    fn expected_visits_two_state_fundamental_matrix() {
        // Interior {0,1}: N = (I-Q)^{-1} with Q = [[0,1/2],[1/2,0]];
        // N_00 = 4/3.
        let strip = symmetric_unit_strip(0, 1);
        let visits = strip.expected_visits(0).unwrap();
        assert!((visits[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((visits[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    // Path enumeration oracle for the two-state strip: alternating paths
    // 0,1,0,1,...,2 give E = (4/9)(e+2) + 1/e for the top-exit Green sum
    // from 0.
    #[test]
    fn green_sum_matches_path_enumeration() {
        let strip = symmetric_unit_strip(0, 1);
        let v = strip.exact_green_sum(0, GreenWeight::TopExit).unwrap();
        let oracle = (4.0 / 9.0) * (std::f64::consts::E + 2.0) + (-1.0_f64).exp();
        assert!((v - oracle).abs() < 1e-12, "v={v} oracle={oracle}");
    }

    #[test]
    fn green_sum_mc_agreement() {
        // Monte Carlo realization of the same functionals on a small strip.
        let strip = symmetric_unit_strip(0, 4);
        let exact_top = strip.exact_green_sum(0, GreenWeight::TopExit).unwrap();
        let exact_bot = strip.exact_green_sum(3, GreenWeight::BottomExit).unwrap();
        let sampler = tilted_critical_two_point();

        let reps = 200_000_u64;
        let mut top = BlockStats::default();
        let mut bot = BlockStats::default();
        for i in 0..reps {
            let mut rng = replication_rng(0xBEEF, i);
            let w = run_two_barrier_walk(
                &sampler,
                0.0,
                0.0,
                4.0,
                AffineMap::identity(),
                &mut rng,
                1_000_000,
            )
            .unwrap();
            top.push(w.green_top.unwrap_or(0.0));
            let w = run_two_barrier_walk(
                &sampler,
                3.0,
                0.0,
                4.0,
                AffineMap::identity(),
                &mut rng,
                1_000_000,
            )
            .unwrap();
            bot.push(w.green_bottom.unwrap_or(0.0));
        }
        assert!(
            (top.mean() - exact_top).abs() < 3.0 * top.stderr(),
            "mc={} exact={exact_top} se={}",
            top.mean(),
            top.stderr()
        );
        assert!(
            (bot.mean() - exact_bot).abs() < 3.0 * bot.stderr(),
            "mc={} exact={exact_bot} se={}",
            bot.mean(),
            bot.stderr()
        );
    }

    #[test]
    fn estimatepath_bands_exact() {
        // The three Green quantities rescaled by k, k^2/(1+x) and 1/(1+x)
        // stay within ratio-2 bands over a doubling grid.
        let x = 2_i64;
        let mut top0 = Vec::new();
        let mut topk = Vec::new();
        let mut botk = Vec::new();
        for &k in &[10_i64, 20, 40, 80] {
            let strip = symmetric_unit_strip(0, k);
            let q_a = strip.exact_green_sum(0, GreenWeight::TopExit).unwrap();
            let q_b = strip.exact_green_sum(k - x, GreenWeight::TopExit).unwrap();
            let q_c = strip
                .exact_green_sum(k - x, GreenWeight::BottomExit)
                .unwrap();
            top0.push(q_a * k as f64);
            topk.push(q_b * (k * k) as f64 / (1.0 + x as f64));
            botk.push(q_c / (1.0 + x as f64));
        }
        for band in [&top0, &topk, &botk] {
            let max = band.iter().cloned().fold(f64::MIN, f64::max);
            let min = band.iter().cloned().fold(f64::MAX, f64::min);
            assert!(min > 0.0);
            assert!(max / min <= 2.0, "band={band:?}");
        }
    }

    #[test]
    fn walk_exit_probability_and_overshoot() {
        // Unit walk, start 3, barriers (-0.5, 8.5): exits at 9 or -1, so
        // P(top) = (z+1)/(k+2) = 4/10 with z=3, k=8; overshoot is always 1
        // on top exits (0.5 in barrier coordinates... the walk exits at 9,
        // 0.5 above the 8.5 barrier).
        let sampler = tilted_critical_two_point();
        let reps = 100_000_u64;
        let mut hits = 0_u64;
        for i in 0..reps {
            let mut rng = replication_rng(0xA11CE, i);
            let w = run_two_barrier_walk(
                &sampler,
                3.0,
                -0.5,
                8.5,
                AffineMap::identity(),
                &mut rng,
                1_000_000,
            )
            .unwrap();
            if w.exit == ExitSide::Top {
                hits += 1;
                assert_eq!(w.overshoot, Some(0.5));
            } else {
                assert_eq!(w.undershoot, Some(0.5));
            }
        }
        let p = hits as f64 / reps as f64;
        let expect = 4.0 / 10.0;
        let stderr = (expect * (1.0 - expect) / reps as f64).sqrt();
        assert!((p - expect).abs() < 3.0 * stderr, "p={p}");
    }

    #[test]
    fn walk_boundary_start_exits_at_first_positive_step() {
        // start == upper is allowed (the exit is strict); whenever the first
        // step is positive the walk exits top at step 1.
        let sampler = tilted_critical_two_point();
        let mut seen_top = false;
        for i in 0..64 {
            let mut probe = replication_rng(5, i);
            let first = sampler.sample_step(&mut probe);
            let mut rng = replication_rng(5, i);
            let w = run_two_barrier_walk(
                &sampler,
                5.0,
                0.0,
                5.0,
                AffineMap::identity(),
                &mut rng,
                1_000_000,
            )
            .unwrap();
            if first > 0.0 {
                assert_eq!(w.exit, ExitSide::Top);
                assert_eq!(w.steps_taken, 1);
                assert_eq!(w.overshoot, Some(1.0));
                seen_top = true;
            }
        }
        assert!(seen_top);
    }

    #[test]
    fn mc_exit_frequencies_match_exact_solver() {
        // 3 binomial stderr at 2*10^4 reps for a few (z,k) pairs; the full
        // 20-pair sweep at 10^5 reps runs in the acceptance suite.
        let sampler = tilted_critical_two_point();
        for (seed, (z, k)) in [(1_u64, (3_i64, 11_i64)), (2, (0, 7)), (3, (9, 13))]
            .into_iter()
        {
            let strip = symmetric_unit_strip(0, k);
            let exact = strip.exact_hitting_probability(z).unwrap();
            let reps = 20_000_u64;
            let mut hits = 0_u64;
            for i in 0..reps {
                let mut rng = replication_rng(seed, i);
                let (side, _, _) = two_barrier_exit(
                    &sampler,
                    1.0,
                    z as f64,
                    0.0,
                    k as f64,
                    &mut rng,
                    1_000_000,
                )
                .unwrap();
                if side == ExitSide::Top {
                    hits += 1;
                }
            }
            let p = hits as f64 / reps as f64;
            let stderr = (exact * (1.0 - exact) / reps as f64).sqrt();
            assert!((p - exact).abs() <= 3.0 * stderr, "z={z} k={k} p={p} exact={exact}");
        }
    }

    #[test]
    fn unit_walk_overshoot_moment_is_e() {
        let sampler = tilted_critical_two_point();
        let report = estimate_boundary_moments(
            &sampler,
            6.0,
            BoundarySide::Top,
            1.0,
            5_000,
            77,
            1_000_000,
        )
        .unwrap();
        // First-passage times above a level have infinite mean, so a few
        // capped walks are expected; the uncensored ones all overshoot by
        // exactly 1.
        assert!((report.value - std::f64::consts::E).abs() < 1e-12);
        assert!(!report.censor_warning, "censored={}", report.censored);
    }

    #[test]
    fn overshoot_moment_band_gaussian() {
        // Overshoot moments of the centered gaussian walk stay in a common
        // band across levels (ratio under 1.5).
        let m = StepModel::calibrate_critical(
            crate::step_model::CriticalFamily::Gaussian { sigma: 1.0 },
            2,
        )
        .unwrap();
        let tilted = TiltedStep::new(&m).unwrap();
        let mut values = Vec::new();
        for (i, &k) in [5.0_f64, 10.0, 20.0].iter().enumerate() {
            let report = estimate_boundary_moments(
                &tilted,
                k,
                BoundarySide::Top,
                1.0,
                20_000,
                900 + i as u64,
                300_000,
            )
            .unwrap();
            values.push(report.value);
        }
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        let min = values.iter().cloned().fold(f64::MAX, f64::min);
        assert!(min > 0.0 && max / min <= 1.5, "values={values:?}");
    }

    #[test]
    fn immediate_exit_overshoot_is_first_step() {
        // Level 0 from start 0: when the first step is positive the walk
        // exits at once and the overshoot equals that step.
        let m = StepModel::calibrate_critical(
            crate::step_model::CriticalFamily::Gaussian { sigma: 1.0 },
            2,
        )
        .unwrap();
        let tilted = TiltedStep::new(&m).unwrap();
        let mut checked = 0;
        for i in 0..64_u64 {
            let mut probe = replication_rng(31, i);
            let first = tilted.sample_step(&mut probe);
            if first > 0.0 {
                let mut rng = replication_rng(31, i);
                let (steps, overshoot) =
                    first_passage_up(&tilted, 0.0, 0.0, &mut rng, 1_000).unwrap();
                assert_eq!(steps, 1);
                assert!((overshoot - first).abs() < 1e-15);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn passage_constant_unit_walk() {
        // L_0 is identically 1 for the unit walk: c(3) = 4 exactly.
        let sampler = tilted_critical_two_point();
        let report =
            estimate_passage_constant(&sampler, 3.0, 5_000, 13, 10_000_000).unwrap();
        assert!((report.value - 4.0).abs() < 1e-12);

        // And k * h(z=3) -> c(3) = 4: |k h - 4| <= 0.5 for k >= 50.
        for k in [50_i64, 100, 200] {
            let strip = symmetric_unit_strip(0, k);
            let h = strip.exact_hitting_probability(3).unwrap();
            assert!((k as f64 * h - 4.0).abs() <= 0.5, "k={k}");
        }

        // c(0) = E[L_0] > 0.
        let report = estimate_passage_constant(&sampler, 0.0, 2_000, 14, 10_000_000).unwrap();
        assert!(report.value > 0.0);
    }

    #[test]
    fn transformed_walk_matches_reversed_ruin() {
        // Drive with the tilted sampler but record the walk w = rho (k - s):
        // scale -rho flips orientation, so a top exit of w is a bottom exit
        // of s and the overshoot is rho times the unit undershoot.
        let model = StepModel::calibrate_critical(CriticalFamily::TwoPoint, 2).unwrap();
        let rho = model.rho_solved();
        let sampler = TiltedStep::new(&model).unwrap();
        let (a, k, y) = (0_i64, 9_i64, 6_i64);
        let transform = AffineMap {
            offset: rho * k as f64,
            scale: -rho,
        };
        let start = transform.apply(y as f64);
        let upper = transform.apply(a as f64);
        let reps = 20_000_u64;
        let mut hits = 0_u64;
        for i in 0..reps {
            let mut rng = replication_rng(0x777, i);
            let w = run_two_barrier_walk(
                &sampler, start, 0.0, upper, transform, &mut rng, 1_000_000,
            )
            .unwrap();
            if w.exit == ExitSide::Top {
                hits += 1;
                assert!((w.overshoot.unwrap() - rho).abs() < 1e-12);
                assert!(w.green_top.unwrap() > 0.0);
            }
        }
        // s exits below a before exceeding k with probability
        // 1 - (y-a+1)/(k-a+2).
        let expect = 1.0 - (y - a + 1) as f64 / (k - a + 2) as f64;
        let p = hits as f64 / reps as f64;
        let stderr = (expect * (1.0 - expect) / reps as f64).sqrt();
        assert!((p - expect).abs() <= 3.0 * stderr, "p={p} expect={expect}");
    }

    #[test]
    fn censoring_reports_partial_state() {
        let sampler = tilted_critical_two_point();
        let mut rng = replication_rng(0, 0);
        let err = run_two_barrier_walk(
            &sampler,
            500.0,
            0.0,
            1000.0,
            AffineMap::identity(),
            &mut rng,
            10,
        )
        .unwrap_err();
        match err {
            Error::CensoredWalk { steps, .. } => assert_eq!(steps, 10),
            other => panic!("expected censored walk, got {other}"),
        }
    }

    #[test]
    fn strip_validation_errors() {
        assert!(LatticeStrip::new(5, 4, vec![(1, 0.5), (-1, 0.5)]).is_err());
        assert!(LatticeStrip::new(0, 10, vec![(1, 0.6), (-1, 0.6)]).is_err());
        assert!(LatticeStrip::new(0, 10_000, vec![(1, 0.5), (-1, 0.5)]).is_err());
        // Degenerate one-point law: every row singular.
        let strip = LatticeStrip::new(0, 3, vec![(0, 1.0)]).unwrap();
        assert!(strip.hitting_probabilities().is_err());
    }
}
