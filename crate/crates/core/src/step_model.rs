//! Step-law families, Laplace transforms, the tilt point `rho`, criticality
//! calibration and the tilted (centered) step law.
//!
//! A model is critical for branching factor `b` when `phi(rho) = 1/b`, where
//! `phi(t) = E[exp(t X)]` and `rho > 0` is the interior minimizer of `phi`.
//! Reweighting the step law by `exp(rho * y) / phi(rho)` produces a centered
//! walk; that tilted law underpins all the many-to-one identities used by the
//! estimators.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for the `rho` solver.
pub const DEFAULT_RHO_TOL: f64 = 1e-12;
/// Maximum allowed `|phi(rho) - 1/b|` for a model flagged critical.
pub const CRITICAL_RESIDUAL_TOL: f64 = 1e-10;
/// Lattice probabilities must sum to one within this.
pub const LATTICE_MASS_TOL: f64 = 1e-12;

/// A step-law family. Lattice families carry integer support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum StepFamily {
    /// Steps +1 with probability `p`, -1 with probability `1 - p`.
    TwoPoint { p: f64 },
    /// Normal steps with mean `mu` and standard deviation `sigma`.
    Gaussian { mu: f64, sigma: f64 },
    /// Arbitrary integer support with probabilities.
    UserLattice { support: Vec<(i64, f64)> },
}

/// Open interval on which the Laplace transform is finite.
///
/// All built-in families have exponential moments of every order, so both
/// endpoints are infinite; they are kept as explicit data because the
/// boundedness parameters of the step law live here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceDomain {
    pub lo: f64,
    pub hi: f64,
}

impl LaplaceDomain {
    pub fn contains(&self, t: f64) -> bool {
        t > self.lo && t < self.hi
    }
}

/// A step law together with the branching factor `b` and, once solved, the
/// tilt point `rho` and `phi(rho)`.
///
/// Immutable after calibration; safe to share across threads. Samplers take
/// an explicit RNG owned by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelConfig", into = "ModelConfig")]
pub struct StepModel {
    family: StepFamily,
    b: u32,
    rho: Option<f64>,
    phi_at_rho: Option<f64>,
    laplace_domain: LaplaceDomain,
}

/// On-disk form of a model: `{family, params, b}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelConfig {
    #[serde(flatten)]
    family: StepFamily,
    b: u32,
}

impl TryFrom<ModelConfig> for StepModel {
    type Error = Error;
    fn try_from(cfg: ModelConfig) -> Result<Self> {
        let mut model = StepModel::new(cfg.family, cfg.b)?;
        // Configs describe laws satisfying the interior-minimizer assumption,
        // so solve eagerly; a config violating it is rejected at load time.
        model.solve_rho(DEFAULT_RHO_TOL)?;
        Ok(model)
    }
}

impl From<StepModel> for ModelConfig {
    fn from(m: StepModel) -> Self {
        ModelConfig {
            family: m.family,
            b: m.b,
        }
    }
}

/// Families that can be calibrated to criticality for a given `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticalFamily {
    /// Free parameter `p`.
    TwoPoint,
    /// `sigma` fixed, free parameter `mu`.
    Gaussian { sigma: f64 },
}

impl StepModel {
    /// Validates the family parameters; does not solve for `rho`.
    pub fn new(family: StepFamily, b: u32) -> Result<Self> {
        if b < 2 {
            return Err(Error::Parameter(format!("branching factor b={b} < 2")));
        }
        match &family {
            StepFamily::TwoPoint { p } => {
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(Error::Parameter(format!("two_point p={p} not in (0,1)")));
                }
            }
            StepFamily::Gaussian { sigma, .. } => {
                if !(*sigma > 0.0) {
                    return Err(Error::Parameter(format!("gaussian sigma={sigma} <= 0")));
                }
            }
            StepFamily::UserLattice { support } => validate_lattice(support)?,
        }
        Ok(StepModel {
            family,
            b,
            rho: None,
            phi_at_rho: None,
            laplace_domain: LaplaceDomain {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            },
        })
    }

    /// Builds a critical model for `family` and `b` in closed form and solves
    /// `rho`, so that `phi(rho) = 1/b` within [`CRITICAL_RESIDUAL_TOL`].
    ///
    /// two_point: `2 sqrt(p (1-p)) = 1/b` gives `p = (1 - sqrt(1 - 1/b^2))/2`.
    /// gaussian with fixed `sigma`: `mu = -sigma sqrt(2 ln b)`.
    pub fn calibrate_critical(family: CriticalFamily, b: u32) -> Result<Self> {
        if b < 2 {
            return Err(Error::Parameter(format!("branching factor b={b} < 2")));
        }
        let bf = f64::from(b);
        let fam = match family {
            CriticalFamily::TwoPoint => {
                let p = 0.5 * (1.0 - (1.0 - 1.0 / (bf * bf)).sqrt());
                StepFamily::TwoPoint { p }
            }
            CriticalFamily::Gaussian { sigma } => {
                if !(sigma > 0.0) {
                    return Err(Error::Parameter(format!("gaussian sigma={sigma} <= 0")));
                }
                StepFamily::Gaussian {
                    mu: -sigma * (2.0 * bf.ln()).sqrt(),
                    sigma,
                }
            }
        };
        let mut model = StepModel::new(fam, b)?;
        model.solve_rho(DEFAULT_RHO_TOL)?;
        let residual = model.criticality_residual()?;
        if residual.abs() > CRITICAL_RESIDUAL_TOL {
            return Err(Error::Calibration(format!(
                "residual {residual:e} exceeds {CRITICAL_RESIDUAL_TOL:e} after calibration"
            )));
        }
        Ok(model)
    }

    pub fn family(&self) -> &StepFamily {
        &self.family
    }

    pub fn branching_factor(&self) -> u32 {
        self.b
    }

    pub fn laplace_domain(&self) -> LaplaceDomain {
        self.laplace_domain
    }

    /// `rho`, if already solved.
    pub fn rho(&self) -> Option<f64> {
        self.rho
    }

    /// `phi(rho)`, if already solved.
    pub fn phi_at_rho(&self) -> Option<f64> {
        self.phi_at_rho
    }

    /// `rho` for models known to be solved; panics otherwise.
    pub fn rho_solved(&self) -> f64 {
        self.rho.expect("rho not solved; call solve_rho first")
    }

    /// The Laplace transform `phi(t) = E[exp(t X)]`.
    pub fn laplace(&self, t: f64) -> Result<f64> {
        if !self.laplace_domain.contains(t) {
            return Err(Error::Domain(format!(
                "t={t} outside laplace domain ({}, {})",
                self.laplace_domain.lo, self.laplace_domain.hi
            )));
        }
        Ok(match &self.family {
            StepFamily::TwoPoint { p } => p * t.exp() + (1.0 - p) * (-t).exp(),
            StepFamily::Gaussian { mu, sigma } => (mu * t + 0.5 * sigma * sigma * t * t).exp(),
            StepFamily::UserLattice { support } => support
                .iter()
                .map(|&(y, prob)| prob * (t * y as f64).exp())
                .sum(),
        })
    }

    /// `phi'(t)`, analytic for every supported family.
    pub fn laplace_deriv(&self, t: f64) -> Result<f64> {
        if !self.laplace_domain.contains(t) {
            return Err(Error::Domain(format!("t={t} outside laplace domain")));
        }
        Ok(match &self.family {
            StepFamily::TwoPoint { p } => p * t.exp() - (1.0 - p) * (-t).exp(),
            StepFamily::Gaussian { mu, sigma } => {
                (mu + sigma * sigma * t) * (mu * t + 0.5 * sigma * sigma * t * t).exp()
            }
            StepFamily::UserLattice { support } => support
                .iter()
                .map(|&(y, prob)| prob * y as f64 * (t * y as f64).exp())
                .sum(),
        })
    }

    /// Finds the interior minimizer `rho > 0` of `phi` by bracketing the sign
    /// change of `phi'` (doubling search from a tiny `t`) followed by
    /// bisection, then caches `rho` and `phi(rho)`.
    ///
    /// Bisection on the derivative is robust here because `phi` is convex.
    /// Succeeds when `|phi'(rho)| <= tol * max(1, phi(rho))`.
    pub fn solve_rho(&mut self, tol: f64) -> Result<f64> {
        if !(tol > 0.0) {
            return Err(Error::Parameter(format!("tol={tol} must be > 0")));
        }
        let t0 = 1e-8;
        if self.laplace_deriv(t0)? >= 0.0 {
            return Err(Error::InfimumNotInterior(format!(
                "phi'({t0:e}) >= 0: minimizer of phi is not at positive t"
            )));
        }
        // Doubling search for the sign change.
        let mut lo = t0;
        let mut hi = t0;
        loop {
            hi *= 2.0;
            if hi >= self.laplace_domain.hi || !hi.is_finite() || hi > 1e15 {
                return Err(Error::InfimumNotInterior(
                    "no sign change of phi' before domain edge".to_string(),
                ));
            }
            let d = self.laplace_deriv(hi)?;
            if !d.is_finite() {
                return Err(Error::InfimumNotInterior(format!(
                    "phi'({hi}) not finite during bracketing"
                )));
            }
            if d > 0.0 {
                break;
            }
            lo = hi;
        }
        let mut rho = 0.5 * (lo + hi);
        for _ in 0..400 {
            rho = 0.5 * (lo + hi);
            let d = self.laplace_deriv(rho)?;
            if d.abs() <= tol * self.laplace(rho)?.max(1.0) {
                break;
            }
            if d < 0.0 {
                lo = rho;
            } else {
                hi = rho;
            }
            if (hi - lo) <= f64::EPSILON * hi.max(1.0) {
                rho = 0.5 * (lo + hi);
                break;
            }
        }
        let d = self.laplace_deriv(rho)?;
        let phi = self.laplace(rho)?;
        if d.abs() > tol * phi.max(1.0) {
            return Err(Error::Convergence(format!(
                "|phi'(rho)| = {:e} above tolerance after bisection",
                d.abs()
            )));
        }
        self.rho = Some(rho);
        self.phi_at_rho = Some(phi);
        Ok(rho)
    }

    /// `phi(rho) - 1/b`. Positive means the branching random walk survives
    /// with positive probability (supercritical); negative means almost-sure
    /// extinction (subcritical); zero is the critical point.
    pub fn criticality_residual(&self) -> Result<f64> {
        let phi = self.phi_at_rho.ok_or_else(|| {
            Error::Parameter("criticality_residual requires a solved rho".to_string())
        })?;
        Ok(phi - 1.0 / f64::from(self.b))
    }

    /// Whether `|phi(rho) - 1/b| <= CRITICAL_RESIDUAL_TOL`.
    pub fn is_critical(&self) -> bool {
        self.criticality_residual()
            .map(|r| r.abs() <= CRITICAL_RESIDUAL_TOL)
            .unwrap_or(false)
    }

    /// One draw from the base step law.
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.family {
            StepFamily::TwoPoint { p } => {
                if rng.gen::<f64>() < *p {
                    1.0
                } else {
                    -1.0
                }
            }
            StepFamily::Gaussian { mu, sigma } => {
                mu + sigma * rng.sample::<f64, _>(StandardNormal)
            }
            StepFamily::UserLattice { support } => sample_lattice(support, rng),
        }
    }

    /// The step law as integer point masses, when it is a lattice law.
    pub fn lattice_law(&self) -> Option<Vec<(i64, f64)>> {
        match &self.family {
            StepFamily::TwoPoint { p } => Some(vec![(1, *p), (-1, 1.0 - *p)]),
            StepFamily::Gaussian { .. } => None,
            StepFamily::UserLattice { support } => Some(support.clone()),
        }
    }
}

/// The tilted step law: the base law reweighted by `exp(rho y) / phi(rho)`.
/// Under it the walk is centered.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedStep {
    rho: f64,
    phi_at_rho: f64,
    law: TiltedLaw,
}

#[derive(Debug, Clone, PartialEq)]
enum TiltedLaw {
    /// Point masses on integer support, already reweighted.
    Lattice { support: Vec<(i64, f64)> },
    /// Tilting a normal law shifts its mean by `sigma^2 rho`.
    Gaussian { mu: f64, sigma: f64 },
}

impl TiltedStep {
    /// Builds the tilted law from a model with a solved `rho`.
    ///
    /// For the gaussian family this is the closed-form shifted gaussian; for
    /// lattice families the point masses are reweighted exactly.
    pub fn new(model: &StepModel) -> Result<Self> {
        let rho = model
            .rho
            .ok_or_else(|| Error::Parameter("tilting requires a solved rho".to_string()))?;
        let phi = model.phi_at_rho.expect("phi cached with rho");
        let law = match &model.family {
            StepFamily::Gaussian { mu, sigma } => TiltedLaw::Gaussian {
                mu: mu + sigma * sigma * rho,
                sigma: *sigma,
            },
            other => {
                let base = match other {
                    StepFamily::TwoPoint { p } => vec![(1_i64, *p), (-1_i64, 1.0 - *p)],
                    StepFamily::UserLattice { support } => support.clone(),
                    StepFamily::Gaussian { .. } => unreachable!(),
                };
                let support: Vec<(i64, f64)> = base
                    .into_iter()
                    .map(|(y, prob)| (y, prob * (rho * y as f64).exp() / phi))
                    .collect();
                TiltedLaw::Lattice { support }
            }
        };
        Ok(TiltedStep {
            rho,
            phi_at_rho: phi,
            law,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Density ratio `dQ/dP` of one step at `y`.
    pub fn density_ratio(&self, y: f64) -> f64 {
        (self.rho * y).exp() / self.phi_at_rho
    }

    /// Exact mean of the tilted step (zero up to solver tolerance).
    pub fn mean(&self) -> f64 {
        match &self.law {
            TiltedLaw::Gaussian { mu, .. } => *mu,
            TiltedLaw::Lattice { support } => {
                support.iter().map(|&(y, w)| y as f64 * w).sum::<f64>()
            }
        }
    }

    /// Total mass of the tilted law; one up to rounding.
    pub fn total_mass(&self) -> f64 {
        match &self.law {
            TiltedLaw::Gaussian { .. } => 1.0,
            TiltedLaw::Lattice { support } => support.iter().map(|&(_, w)| w).sum(),
        }
    }

    /// One draw from the tilted law.
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.law {
            TiltedLaw::Gaussian { mu, sigma } => {
                mu + sigma * rng.sample::<f64, _>(StandardNormal)
            }
            TiltedLaw::Lattice { support } => sample_lattice(support, rng),
        }
    }

    /// The tilted law as integer point masses, when lattice.
    pub fn lattice_law(&self) -> Option<Vec<(i64, f64)>> {
        match &self.law {
            TiltedLaw::Lattice { support } => Some(support.clone()),
            TiltedLaw::Gaussian { .. } => None,
        }
    }
}

/// Anything that can emit i.i.d. steps: the base law or the tilted law.
pub trait StepSampler {
    fn step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;
}

impl StepSampler for StepModel {
    fn step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_step(rng)
    }
}

impl StepSampler for TiltedStep {
    fn step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_step(rng)
    }
}

fn sample_lattice<R: Rng + ?Sized>(support: &[(i64, f64)], rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(y, prob) in support {
        acc += prob;
        if u < acc {
            return y as f64;
        }
    }
    // Rounding can leave a sliver of mass unassigned; the last point takes it.
    support.last().map(|&(y, _)| y as f64).unwrap_or(0.0)
}

fn validate_lattice(support: &[(i64, f64)]) -> Result<()> {
    if support.is_empty() {
        return Err(Error::Parameter("lattice support is empty".to_string()));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut total = 0.0;
    let mut has_pos = false;
    let mut has_neg = false;
    for &(y, prob) in support {
        if !seen.insert(y) {
            return Err(Error::Parameter(format!("duplicate lattice point {y}")));
        }
        if !(prob >= 0.0) || !prob.is_finite() {
            return Err(Error::Parameter(format!(
                "lattice probability {prob} at {y} is not a finite nonnegative number"
            )));
        }
        if prob > 0.0 {
            has_pos |= y > 0;
            has_neg |= y < 0;
        }
        total += prob;
    }
    if (total - 1.0).abs() > LATTICE_MASS_TOL {
        return Err(Error::Parameter(format!(
            "lattice probabilities sum to {total}, not 1"
        )));
    }
    if !has_pos || !has_neg {
        return Err(Error::Parameter(
            "lattice support needs a positive and a negative point with positive mass".to_string(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_pcg::Pcg64Mcg;

    fn critical_two_point(b: u32) -> StepModel {
        StepModel::calibrate_critical(CriticalFamily::TwoPoint, b).unwrap()
    }

    fn gaussian(mu: f64, sigma: f64, b: u32) -> StepModel {
        StepModel::new(StepFamily::Gaussian { mu, sigma }, b).unwrap()
    }

    #[test]
    fn laplace_at_zero_is_one() {
        let models = [
            critical_two_point(2),
            gaussian(-1.0, 1.0, 2),
            StepModel::new(
                StepFamily::UserLattice {
                    support: vec![(-2, 0.5), (1, 0.3), (3, 0.2)],
                },
                3,
            )
            .unwrap(),
        ];
        for m in &models {
            assert!((m.laplace(0.0).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn laplace_gaussian_closed_form() {
        let m = gaussian(-1.0, 1.0, 2);
        assert!((m.laplace(1.0).unwrap() - (-0.5_f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn laplace_two_point_at_minimizer() {
        let m = critical_two_point(2);
        let rho = (2.0 + 3.0_f64.sqrt()).ln();
        assert!((m.laplace(rho).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rho_gaussian_closed_form() {
        let mut m = gaussian(-1.0, 1.0, 2);
        let rho = m.solve_rho(DEFAULT_RHO_TOL).unwrap();
        assert!((rho - 1.0).abs() < 1e-9, "rho={rho}");

        let mut m = gaussian(-2.0, 2.0, 2);
        let rho = m.solve_rho(DEFAULT_RHO_TOL).unwrap();
        assert!((rho - 0.5).abs() < 1e-9, "rho={rho}");
    }

    #[test]
    fn rho_two_point_closed_form() {
        let m = critical_two_point(2);
        let expect = (2.0 + 3.0_f64.sqrt()).ln();
        assert!((m.rho_solved() - expect).abs() < 1e-9);
    }

    #[test]
    fn calibrate_closed_forms() {
        let m = critical_two_point(2);
        let StepFamily::TwoPoint { p } = *m.family() else {
            panic!()
        };
        assert!((p - (2.0 - 3.0_f64.sqrt()) / 4.0).abs() < 1e-12);

        let m = StepModel::calibrate_critical(CriticalFamily::Gaussian { sigma: 1.0 }, 2).unwrap();
        let StepFamily::Gaussian { mu, .. } = *m.family() else {
            panic!()
        };
        let expect = -(2.0 * 2.0_f64.ln()).sqrt();
        assert!((mu - expect).abs() < 1e-12);
        assert!((m.rho_solved() - (-expect)).abs() < 1e-9);
    }

    // Independent route: solve p(1-p) = 1/(4 b^2) by bisection on (0, 1/2),
    // then confirm b * phi(rho) = 1 on the calibrated model.
    #[test]
    fn calibrate_two_point_b4_against_bisection_oracle() {
        let b = 4_u32;
        let target = 1.0 / (4.0 * (b as f64).powi(2));
        let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * (1.0 - mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p_oracle = 0.5 * (lo + hi);
        assert!((p_oracle - 0.0158771).abs() < 1e-6);

        let m = critical_two_point(4);
        let StepFamily::TwoPoint { p } = *m.family() else {
            panic!()
        };
        assert!((p - p_oracle).abs() < 1e-10);
        let check = 4.0 * m.laplace(m.rho_solved()).unwrap();
        assert!((check - 1.0).abs() < 1e-10);
    }

    #[test]
    fn residual_examples() {
        assert!(critical_two_point(2)
            .criticality_residual()
            .unwrap()
            .abs()
            .le(&1e-10));

        let mut m = StepModel::new(StepFamily::TwoPoint { p: 0.1 }, 2).unwrap();
        m.solve_rho(DEFAULT_RHO_TOL).unwrap();
        assert!((m.criticality_residual().unwrap() - 0.1).abs() < 1e-9);

        let mut m = gaussian(-1.0, 1.0, 2);
        m.solve_rho(DEFAULT_RHO_TOL).unwrap();
        let expect = (-0.5_f64).exp() - 0.5;
        assert!((m.criticality_residual().unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn residual_zero_across_b_and_families() {
        for b in [2, 3, 4, 8] {
            let m = critical_two_point(b);
            assert!(m.criticality_residual().unwrap().abs() <= 1e-10, "b={b}");
            let m =
                StepModel::calibrate_critical(CriticalFamily::Gaussian { sigma: 1.0 }, b).unwrap();
            assert!(m.criticality_residual().unwrap().abs() <= 1e-10, "b={b}");
        }
    }

    #[test]
    fn infimum_not_interior_errors() {
        let mut m = StepModel::new(StepFamily::TwoPoint { p: 0.6 }, 2).unwrap();
        assert!(matches!(
            m.solve_rho(DEFAULT_RHO_TOL),
            Err(Error::InfimumNotInterior(_))
        ));
        let mut m = gaussian(1.0, 1.0, 2);
        assert!(matches!(
            m.solve_rho(DEFAULT_RHO_TOL),
            Err(Error::InfimumNotInterior(_))
        ));
    }

    #[test]
    fn lattice_validation() {
        let bad = StepModel::new(
            StepFamily::UserLattice {
                support: vec![(1, 0.5), (2, 0.6)],
            },
            2,
        );
        assert!(matches!(bad, Err(Error::Parameter(_))));

        let one_sided = StepModel::new(
            StepFamily::UserLattice {
                support: vec![(1, 0.5), (2, 0.5)],
            },
            2,
        );
        assert!(matches!(one_sided, Err(Error::Parameter(_))));

        let dup = StepModel::new(
            StepFamily::UserLattice {
                support: vec![(1, 0.5), (1, 0.5)],
            },
            2,
        );
        assert!(matches!(dup, Err(Error::Parameter(_))));
    }

    #[test]
    fn tilted_two_point_critical_is_symmetric() {
        let m = critical_two_point(2);
        let t = TiltedStep::new(&m).unwrap();
        let law = t.lattice_law().unwrap();
        let up = law.iter().find(|&&(y, _)| y == 1).unwrap().1;
        assert!((up - 0.5).abs() < 1e-12);
        assert!(t.mean().abs() < 1e-12);
    }

    #[test]
    fn tilt_normalization_lattice() {
        let mut m = StepModel::new(
            StepFamily::UserLattice {
                support: vec![(-3, 0.55), (-1, 0.25), (2, 0.15), (5, 0.05)],
            },
            2,
        )
        .unwrap();
        m.solve_rho(DEFAULT_RHO_TOL).unwrap();
        let t = TiltedStep::new(&m).unwrap();
        assert!((t.total_mass() - 1.0).abs() < 1e-12);
        assert!(t.mean().abs() < 1e-10);
    }

    #[test]
    fn tilted_gaussian_centered_in_closed_form_and_by_sampling() {
        let m = StepModel::calibrate_critical(CriticalFamily::Gaussian { sigma: 1.0 }, 2).unwrap();
        let t = TiltedStep::new(&m).unwrap();
        assert!(t.mean().abs() < 1e-10);

        let mut rng = Pcg64Mcg::seed_from_u64(7);
        let n = 1_000_000_usize;
        let mean = (0..n).map(|_| t.sample_step(&mut rng)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0e-3, "mean={mean}");
    }

    #[test]
    fn sample_step_mean_two_point() {
        let m = critical_two_point(2);
        let StepFamily::TwoPoint { p } = *m.family() else {
            panic!()
        };
        let expect = 2.0 * p - 1.0;
        let mut rng = Pcg64Mcg::seed_from_u64(11);
        let n = 1_000_000_usize;
        let mean = (0..n).map(|_| m.sample_step(&mut rng)).sum::<f64>() / n as f64;
        // Var = 1 - (2p-1)^2 < 1, so 3 stderr < 3e-3.
        assert!((mean - expect).abs() < 3.0e-3, "mean={mean}");
    }

    #[test]
    fn phi_at_rho_is_global_minimum_on_sampled_points() {
        let mut rng = Pcg64Mcg::seed_from_u64(3);
        let mut models = vec![critical_two_point(2), critical_two_point(3)];
        let mut g = gaussian(-1.0, 1.0, 2);
        g.solve_rho(DEFAULT_RHO_TOL).unwrap();
        models.push(g);
        for m in &models {
            let rho = m.rho_solved();
            let phi_min = m.laplace(rho).unwrap();
            for _ in 0..200 {
                let t = rng.gen_range(-10.0..10.0);
                assert!(phi_min <= m.laplace(t).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn model_config_round_trip() {
        let m = critical_two_point(2);
        let json = serde_json::to_string(&m).unwrap();
        let back: StepModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back.branching_factor(), 2);
        assert!((back.rho_solved() - m.rho_solved()).abs() < 1e-12);

        let parsed: StepModel = serde_json::from_str(
            r#"{"family":"gaussian","params":{"mu":-1.1774100225154747,"sigma":1.0},"b":2}"#,
        )
        .unwrap();
        assert!(parsed.is_critical());
    }
}
