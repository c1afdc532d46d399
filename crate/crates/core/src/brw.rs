//! The `b`-ary branching random walk with a kill barrier and optional
//! counting/absorbing levels, plus exact lattice recursions for its moments
//! and for strip survival.
//!
//! Simulation is generation-synchronous and keeps only the current
//! generation's particles (never the tree): populations can be huge while
//! only counts and the running maximum are needed.
//!
//! Counting conventions:
//!
//! * `z`: particles whose whole ancestral path (themselves included)
//!   stayed inside the strip, root included.
//! * `z0`: particles counted at their first entry into `(-inf, 0)`; such a
//!   particle is dead but its parent was alive.
//! * `zak`: particles counted at their first passage strictly below the
//!   count level `a`, provided no strict ancestor ever went below `a` or
//!   above the top level; the particle itself may be dead (below the kill
//!   barrier) at that moment.
//! * `hk`: particles absorbed strictly above the top level with all strict
//!   ancestors inside the strip.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::step_model::StepModel;
use crate::walk::MAX_STRIP_STATES;

/// Simulation guards. A fired cap censors the run instead of erroring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    pub max_generations: u64,
    pub max_population: u64,
    pub max_total_counted: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            max_generations: 1_000_000,
            max_population: 10_000_000,
            max_total_counted: 1_000_000_000,
        }
    }
}

/// Which cap fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CapKind {
    Generations,
    Population,
    TotalCounted,
}

/// Configuration of one branching-random-walk experiment.
#[derive(Debug, Clone)]
pub struct BrwConfig {
    pub model: StepModel,
    /// Root position, `>= 0`.
    pub start: f64,
    /// Optional counting level `a >= 0` for `zak`.
    pub count_level: Option<f64>,
    /// Optional absorbing top level `k > a`; particles above it are counted
    /// in `hk` and removed.
    pub top_level: Option<f64>,
    pub caps: Caps,
}

impl BrwConfig {
    pub fn new(model: StepModel, start: f64) -> Result<Self> {
        let cfg = BrwConfig {
            model,
            start,
            count_level: None,
            top_level: None,
            caps: Caps::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_count_level(mut self, a: f64) -> Result<Self> {
        self.count_level = Some(a);
        self.validate()?;
        Ok(self)
    }

    pub fn with_top_level(mut self, k: f64) -> Result<Self> {
        self.top_level = Some(k);
        self.validate()?;
        Ok(self)
    }

    pub fn with_caps(mut self, caps: Caps) -> Self {
        self.caps = caps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start >= 0.0) {
            return Err(Error::Parameter(format!(
                "start x={} must be >= 0",
                self.start
            )));
        }
        if let Some(a) = self.count_level {
            if !(a >= 0.0) {
                return Err(Error::Parameter(format!("count level a={a} must be >= 0")));
            }
            if let Some(k) = self.top_level {
                if !(a < k) {
                    return Err(Error::Parameter(format!(
                        "count level a={a} must be below top level k={k}"
                    )));
                }
            }
        }
        if let Some(k) = self.top_level {
            if !(self.start <= k) {
                return Err(Error::Parameter(format!(
                    "start {} above top level {k}",
                    self.start
                )));
            }
        }
        if self.caps.max_generations == 0
            || self.caps.max_population == 0
            || self.caps.max_total_counted == 0
        {
            return Err(Error::Parameter("caps must be positive".to_string()));
        }
        Ok(())
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrwRun {
    /// Surviving vertices (root included).
    pub z: u64,
    /// Particles counted at first entry into `(-inf, 0)`.
    pub z0: u64,
    /// Particles counted at first passage below the count level.
    pub zak: u64,
    /// Particles absorbed above the top level.
    pub hk: u64,
    /// Supremum position over surviving vertices.
    pub m: f64,
    /// First generation with no survivors (generation of the run when
    /// censored).
    pub t_ext: u64,
    pub censored: Option<CapKind>,
}

struct Sim<'a> {
    model: &'a StepModel,
    b: u32,
    kill: f64,
    count: Option<f64>,
    top: Option<f64>,
    caps: Caps,
}

impl Sim<'_> {
    fn run<R: Rng + ?Sized>(&self, start: f64, rng: &mut R) -> BrwRun {
        let mut out = BrwRun {
            z: 1,
            z0: 0,
            zak: 0,
            hk: 0,
            m: start,
            t_ext: 0,
            censored: None,
        };
        // (position, eligible-for-zak)
        let mut root_elig = true;
        if let Some(a) = self.count {
            if start < a {
                out.zak = 1;
                root_elig = false;
            }
        }
        let mut cur: Vec<(f64, bool)> = Vec::with_capacity(16);
        let mut next: Vec<(f64, bool)> = Vec::with_capacity(16);
        cur.push((start, root_elig));
        let mut gen = 0_u64;
        'outer: loop {
            if cur.is_empty() {
                out.t_ext = gen;
                break;
            }
            if gen == self.caps.max_generations {
                out.censored = Some(CapKind::Generations);
                out.t_ext = gen;
                break;
            }
            next.clear();
            for &(pos, elig) in &cur {
                for _ in 0..self.b {
                    let child = pos + self.model.sample_step(rng);
                    if let Some(k) = self.top {
                        if child > k {
                            out.hk += 1;
                            continue;
                        }
                    }
                    if child < self.kill {
                        if child < 0.0 {
                            out.z0 += 1;
                        }
                        if let Some(a) = self.count {
                            if elig && child < a {
                                out.zak += 1;
                            }
                        }
                        continue;
                    }
                    let mut child_elig = elig;
                    if let Some(a) = self.count {
                        if elig && child < a {
                            out.zak += 1;
                            child_elig = false;
                        }
                    }
                    out.z += 1;
                    if child > out.m {
                        out.m = child;
                    }
                    if out.z > self.caps.max_total_counted {
                        out.censored = Some(CapKind::TotalCounted);
                        out.t_ext = gen + 1;
                        break 'outer;
                    }
                    next.push((child, child_elig));
                    if next.len() as u64 > self.caps.max_population {
                        out.censored = Some(CapKind::Population);
                        out.t_ext = gen + 1;
                        break 'outer;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            gen += 1;
        }
        out
    }
}

/// One replication of the killed branching random walk: kill barrier at 0,
/// optional counting level and absorbing top level from the config.
pub fn run_brw<R: Rng + ?Sized>(config: &BrwConfig, rng: &mut R) -> Result<BrwRun> {
    config.validate()?;
    let sim = Sim {
        model: &config.model,
        b: config.model.branching_factor(),
        kill: 0.0,
        count: config.count_level,
        top: config.top_level,
        caps: config.caps,
    };
    Ok(sim.run(config.start, rng))
}

/// One replication of the strip process: kill-and-count below `a`, absorb
/// above `k`, root at `start`. Its `zak` is the count of first passages
/// below `a` by particles that never exceeded `k`; `z` and `m` refer to the
/// strip population.
pub fn run_strip<R: Rng + ?Sized>(
    model: &StepModel,
    start: f64,
    a: f64,
    k: f64,
    caps: Caps,
    rng: &mut R,
) -> Result<BrwRun> {
    if !(a < k) {
        return Err(Error::Parameter(format!("need a={a} < k={k}")));
    }
    if !(a >= 0.0) {
        return Err(Error::Parameter(format!("count level a={a} must be >= 0")));
    }
    if !(a <= start && start <= k) {
        return Err(Error::Parameter(format!(
            "start {start} outside strip [{a}, {k}]"
        )));
    }
    let sim = Sim {
        model,
        b: model.branching_factor(),
        kill: a,
        count: Some(a),
        top: Some(k),
        caps,
    };
    Ok(sim.run(start, rng))
}

/// The strip process started at its top level `k`.
pub fn run_brw_from_top<R: Rng + ?Sized>(
    model: &StepModel,
    a: f64,
    k: f64,
    caps: Caps,
    rng: &mut R,
) -> Result<BrwRun> {
    run_strip(model, k, a, k, caps, rng)
}

fn lattice_law(model: &StepModel) -> Result<Vec<(i64, f64)>> {
    model
        .lattice_law()
        .ok_or_else(|| Error::Parameter("exact solver requires a lattice model".to_string()))
}

fn check_strip_size(a: i64, k: i64) -> Result<usize> {
    if a > k {
        return Err(Error::Parameter(format!("need a={a} <= k={k}")));
    }
    let n = (k - a + 1) as usize;
    if n > MAX_STRIP_STATES {
        return Err(Error::Resource(format!(
            "strip has {n} states, cap is {MAX_STRIP_STATES}"
        )));
    }
    Ok(n)
}

/// `I - b Q` over the interior lattice states `a..=k` for the mean-offspring
/// recursion. At criticality its spectral radius is below one (similar to a
/// strictly substochastic tilted kernel), so the solve is well posed.
fn moment_matrix(law: &[(i64, f64)], b: f64, a: i64, k: i64) -> DenseMatrix {
    let n = (k - a + 1) as usize;
    let mut m = DenseMatrix::identity(n);
    for s in a..=k {
        for &(y, p) in law {
            let t = s + y;
            if t >= a && t <= k {
                m[((s - a) as usize, (t - a) as usize)] -= b * p;
            }
        }
    }
    m
}

/// Exact `E^y[Z(a,k)]` for a critical lattice model: solves
/// `m1(s) = b * sum_y p(y) m1(s+y)` with `m1 = 1` below `a` and `0` above
/// `k`.
pub fn exact_brw_first_moment(model: &StepModel, a: i64, k: i64, y: i64) -> Result<f64> {
    Ok(exact_brw_first_moment_all(model, a, k)?.at(y))
}

/// The whole first-moment profile over the interior states.
pub fn exact_brw_first_moment_all(model: &StepModel, a: i64, k: i64) -> Result<MomentProfile> {
    let law = lattice_law(model)?;
    check_strip_size(a, k)?;
    let b = f64::from(model.branching_factor());
    let lu = moment_matrix(&law, b, a, k).lu()?;
    let rhs: Vec<f64> = (a..=k)
        .map(|s| {
            b * law
                .iter()
                .filter(|&&(y, _)| s + y < a)
                .map(|&(_, p)| p)
                .sum::<f64>()
        })
        .collect();
    Ok(MomentProfile {
        a,
        k,
        values: lu.solve(&rhs),
        below: 1.0,
        above: 0.0,
    })
}

/// Exact `E^y[Z(a,k)^2]`: the same linear operator with the offspring
/// cross-term `b (b-1) (E[m1])^2 = ((b-1)/b) m1^2` added to the source.
pub fn exact_brw_second_moment(model: &StepModel, a: i64, k: i64, y: i64) -> Result<f64> {
    let law = lattice_law(model)?;
    check_strip_size(a, k)?;
    let b = f64::from(model.branching_factor());
    let m1 = exact_brw_first_moment_all(model, a, k)?;
    let lu = moment_matrix(&law, b, a, k).lu()?;
    let rhs: Vec<f64> = (a..=k)
        .map(|s| {
            let kill_mass: f64 = law
                .iter()
                .filter(|&&(y, _)| s + y < a)
                .map(|&(_, p)| p)
                .sum();
            let mean_child = m1.at(s) / b;
            b * kill_mass + (b - 1.0) * b * mean_child * mean_child
        })
        .collect();
    let values = lu.solve(&rhs);
    Ok(MomentProfile {
        a,
        k,
        values,
        below: 1.0,
        above: 0.0,
    }
    .at(y))
}

/// Exact `E^x[H(k)]` for a critical lattice model: boundary value 1 above
/// `k` (the particle is absorbed and counted) and 0 below 0.
pub fn exact_brw_hk_first_moment(model: &StepModel, k: i64, x: i64) -> Result<f64> {
    let law = lattice_law(model)?;
    check_strip_size(0, k)?;
    let b = f64::from(model.branching_factor());
    let lu = moment_matrix(&law, b, 0, k).lu()?;
    let rhs: Vec<f64> = (0..=k)
        .map(|s| {
            b * law
                .iter()
                .filter(|&&(y, _)| s + y > k)
                .map(|&(_, p)| p)
                .sum::<f64>()
        })
        .collect();
    Ok(MomentProfile {
        a: 0,
        k,
        values: lu.solve(&rhs),
        below: 0.0,
        above: 1.0,
    }
    .at(x))
}

/// A solved moment profile on an interior strip with its boundary values.
#[derive(Debug, Clone)]
pub struct MomentProfile {
    a: i64,
    k: i64,
    values: Vec<f64>,
    below: f64,
    above: f64,
}

impl MomentProfile {
    pub fn at(&self, y: i64) -> f64 {
        if y < self.a {
            self.below
        } else if y > self.k {
            self.above
        } else {
            self.values[(y - self.a) as usize]
        }
    }
}

/// Sweep cap for the survival fixed point.
const SURVIVAL_MAX_SWEEPS: u64 = 1_000_000;
/// Per-state relative change at which the survival iteration stops.
const SURVIVAL_TOL: f64 = 1e-12;

/// `1 - (1 - m)^b` without cancellation for small `m`.
fn reach_from_children(m: f64, b: u32) -> f64 {
    if m >= 1.0 {
        1.0
    } else {
        -(f64::from(b) * (-m).ln_1p()).exp_m1()
    }
}

/// Exact `P^x(M >= k)` for a critical lattice model.
///
/// The no-reach probability `q` is the maximal fixed point of
/// `q(s) = (sum_y p(y) q~(s+y))^b` with `q~ = 1` below 0 (killed children
/// never reach `k`) and `q~ = 0` at or above `k`; iterating from `q = 1`
/// descends to it through the truncated-horizon probabilities. The
/// iteration here runs on the complement `r = 1 - q` (rising from 0, the
/// probability of reaching `k` within `n` generations), which keeps
/// survival probabilities far below machine epsilon representable.
pub fn exact_strip_survival(model: &StepModel, k: i64, x: i64) -> Result<f64> {
    if x < 0 {
        return Err(Error::Domain(format!("x={x} must be >= 0")));
    }
    if x > k {
        return Err(Error::Domain(format!("x={x} above k={k}")));
    }
    if x == k {
        // The root already sits at k, so M >= x = k surely.
        return Ok(1.0);
    }
    let law = lattice_law(model)?;
    let n = check_strip_size(0, k - 1)?;
    let b = model.branching_factor();
    let mut reach = vec![0.0_f64; n];
    let mut fresh = vec![0.0_f64; n];
    let mut sweeps = 0_u64;
    loop {
        if sweeps == SURVIVAL_MAX_SWEEPS {
            return Err(Error::Convergence(format!(
                "survival fixed point did not settle within {SURVIVAL_MAX_SWEEPS} sweeps"
            )));
        }
        let mut converged = true;
        for s in 0..n as i64 {
            let mut m = 0.0;
            for &(y, p) in &law {
                let t = s + y;
                m += p * if t < 0 {
                    0.0
                } else if t >= k {
                    1.0
                } else {
                    reach[t as usize]
                };
            }
            let v = reach_from_children(m, b);
            if (v - reach[s as usize]).abs() > SURVIVAL_TOL * v.max(1e-300) {
                converged = false;
            }
            fresh[s as usize] = v;
        }
        std::mem::swap(&mut reach, &mut fresh);
        sweeps += 1;
        if converged {
            break;
        }
    }
    Ok(reach[x as usize])
}
