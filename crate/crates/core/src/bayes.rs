//! Bayesian inverse problems `Z = G(X1, X2)` with prior `X1` and noise `X2`.
//!
//! Pushing `ν = μ_{X1} ⊗ μ_{X2}` forward under `Ĝ(x1, x2) = (x1, G(x1, x2))`
//! gives a density `f_{X1,Z}` on `(x1, z)`. In those coordinates the posterior
//! `f_{X1|Z=s}` is exactly the canonical measure on `{z = s}`. Computing the
//! canonical measure on `{G = s}` in the original `(x1, x2)` coordinates
//! instead gives a different answer in general.

use serde::{Deserialize, Serialize};

use crate::canonical::{self, CanonicalProblem};
use crate::equivalence::{self, DensityDistance};
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::fan;
use crate::geometry::{Chart, LevelSetProblem};
use crate::quad;
use crate::sampler::{self, Marginal};
use crate::table::{DensityTable, GridSpec, Method, Support};

/// Allowed deviation of a likelihood's total mass from one.
pub const LIKELIHOOD_MASS_TOL: f64 = 1e-4;
/// Allowed deviation of the joint density's total mass from one.
pub const JOINT_MASS_TOL: f64 = 1e-4;
/// Number of prior cells whose midpoints are used to validate the likelihood.
const LIKELIHOOD_CELLS: usize = 20;
/// Half-width of the prior truncation box, in prior standard deviations.
const PRIOR_HALF_WIDTH: f64 = 8.0;

#[derive(Clone, Debug, PartialEq)]
pub struct BayesProblem {
    /// Density of `X1`, in `x1`.
    pub prior: Expression,
    /// Density of `X2`, in `x1`.
    pub noise: Expression,
    /// `G(x1, x2)`.
    pub forward: Expression,
    /// `f_{Z|X1=x1}(z)`, in `(x1, x2) = (x1, z)`.
    pub likelihood: Expression,
    pub measurement: f64,
    /// Samplers for `X1` and `X2`, used by the Monte Carlo pushforward check
    /// and to size truncation boxes.
    pub prior_sampler: Option<Marginal>,
    pub noise_sampler: Option<Marginal>,
}

impl BayesProblem {
    pub fn parse(prior: &str, noise: &str, forward: &str, likelihood: &str, measurement: f64) -> Result<Self> {
        let bp = BayesProblem {
            prior: Expression::parse(prior)?,
            noise: Expression::parse(noise)?,
            forward: Expression::parse(forward)?,
            likelihood: Expression::parse(likelihood)?,
            measurement,
            prior_sampler: None,
            noise_sampler: None,
        };
        bp.check_arity()?;
        Ok(bp)
    }

    pub fn with_samplers(mut self, prior: Marginal, noise: Marginal) -> Self {
        self.prior_sampler = Some(prior);
        self.noise_sampler = Some(noise);
        self
    }

    pub fn check_arity(&self) -> Result<()> {
        let reads = |e: &Expression| if e.is_constant() { 0 } else { e.arity() };
        if reads(&self.prior) > 1 || reads(&self.noise) > 1 {
            return Err(Error::Invalid("prior and noise densities must only read x1".into()));
        }
        if reads(&self.forward) > 2 || reads(&self.likelihood) > 2 {
            return Err(Error::Invalid(
                "forward map and likelihood must only read (x1, x2)".into(),
            ));
        }
        if !self.measurement.is_finite() {
            return Err(Error::Invalid("measurement must be finite".into()));
        }
        Ok(())
    }

    /// `f_{X1,Z}(x1, z) = prior(x1) · likelihood(x1, z)`.
    pub fn joint(&self) -> Expression {
        self.prior.times(&self.likelihood)
    }

    /// `ν(x1, x2) = prior(x1) · noise(x2)`.
    pub fn nu(&self) -> Expression {
        self.prior.times(&self.noise.rename_vars(|i| i + 1))
    }

    /// Prior truncation interval: ±8 standard deviations of the prior sampler,
    /// or `[-8, 8]` without one.
    pub fn prior_box(&self) -> (f64, f64) {
        match &self.prior_sampler {
            Some(Marginal::Normal { mean, sd }) => (mean - PRIOR_HALF_WIDTH * sd, mean + PRIOR_HALF_WIDTH * sd),
            Some(Marginal::Uniform { lo, hi }) => (*lo, *hi),
            None => (-PRIOR_HALF_WIDTH, PRIOR_HALF_WIDTH),
        }
    }

    fn noise_scale(&self) -> f64 {
        self.noise_sampler.as_ref().map_or(1.0, Marginal::sd)
    }
}

/// Result of checking a likelihood against its normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodCheck {
    /// `(x1, ∫ f_{Z|X1=x1}(z) dz)` at each cell midpoint.
    pub masses: Vec<(f64, f64)>,
    pub max_deviation: f64,
    pub passed: bool,
}

/// Integrate the likelihood over `z` at the midpoints of 20 cells covering the
/// prior box; each must be `1 ± 1e-4`.
pub fn validate_likelihood(bp: &BayesProblem) -> Result<LikelihoodCheck> {
    let (lo, hi) = bp.prior_box();
    let h = (hi - lo) / LIKELIHOOD_CELLS as f64;
    let mut masses = Vec::with_capacity(LIKELIHOOD_CELLS);
    for i in 0..LIKELIHOOD_CELLS {
        let x1 = lo + h * (i as f64 + 0.5);
        let q = integrate_over_z(bp, &bp.likelihood, x1, 1e-10)?;
        masses.push((x1, q.value));
    }
    let max_deviation = masses.iter().map(|(_, m)| (m - 1.0).abs()).fold(0.0, f64::max);
    Ok(LikelihoodCheck {
        masses,
        max_deviation,
        passed: max_deviation <= LIKELIHOOD_MASS_TOL,
    })
}

/// `∫ e(x1, z) dz` over ℝ, substituting around the centre and spread of `Z`
/// given `x1` (to first order in the noise).
fn integrate_over_z(bp: &BayesProblem, e: &Expression, x1: f64, rel_tol: f64) -> Result<quad::QuadOutcome> {
    let center = bp.forward.eval(&[x1, 0.0]).unwrap_or(bp.measurement);
    let slope = bp
        .forward
        .grad(&[x1, 0.0])
        .ok()
        .and_then(|g| g.get(1).copied())
        .map(f64::abs)
        .filter(|s| *s > 0.0 && s.is_finite())
        .unwrap_or(1.0);
    quad::integrate_real_line(|z| Ok(e.eval(&[x1, z])?), center, slope * bp.noise_scale(), rel_tol)
}

/// `∫∫ f_{X1,Z} dz dx1` with `x1` over the prior box and `z` over ℝ.
pub fn joint_mass(bp: &BayesProblem) -> Result<f64> {
    let joint = bp.joint();
    let (lo, hi) = bp.prior_box();
    let q = quad::adaptive_simpson(
        |x1| Ok(integrate_over_z(bp, &joint, x1, 1e-10)?.value),
        lo,
        hi,
        1e-9,
    )?;
    Ok(q.value)
}

/// Comparison of the joint density with a Monte Carlo histogram of `Ĝ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushforwardCheck {
    pub samples: usize,
    pub cells: usize,
    /// Largest `|observed − expected| / sd` over the cells.
    pub max_z: f64,
    /// Family-wise 3σ threshold (two-sided 0.27% spread over all cells).
    pub threshold: f64,
    pub passed: bool,
}

/// Histogram `(X1, G(X1, X2))` on an 8×8 grid of cells covering
/// `x1 ∈ mean ± 2 sd` and `z ∈ s ± 2` and compare each cell count with the
/// joint density integrated over the cell.
pub fn pushforward_check(bp: &BayesProblem, samples: usize, seed: u64, workers: Option<usize>) -> Result<PushforwardCheck> {
    let (Some(ps), Some(ns)) = (&bp.prior_sampler, &bp.noise_sampler) else {
        return Err(Error::Invalid("the pushforward check needs prior and noise samplers".into()));
    };
    const SIDE: usize = 8;
    let (mean, sd) = match ps {
        Marginal::Normal { mean, sd } => (*mean, *sd),
        Marginal::Uniform { lo, hi } => (0.5 * (lo + hi), 0.5 * (hi - lo) / 2.0),
    };
    let xr = (mean - 2.0 * sd, mean + 2.0 * sd);
    let zr = (bp.measurement - 2.0, bp.measurement + 2.0);
    let cell = |v: f64, (lo, hi): (f64, f64)| {
        let i = ((v - lo) / (hi - lo) * SIDE as f64).floor();
        (i >= 0.0 && i < SIDE as f64).then_some(i as usize)
    };
    let per_stream = sampler::run_streams(samples, workers, |stream, n| {
        let mut rng = sampler::stream_rng(seed, u64::MAX - 4, stream as u64);
        let mut counts = vec![0u64; SIDE * SIDE];
        for _ in 0..n {
            let x1 = ps.sample(&mut rng);
            let x2 = ns.sample(&mut rng);
            let z = match bp.forward.eval(&[x1, x2]) {
                Ok(z) => z,
                Err(e) if e.is_domain() => continue,
                Err(e) => return Err(e.into()),
            };
            if let (Some(i), Some(j)) = (cell(x1, xr), cell(z, zr)) {
                counts[i * SIDE + j] += 1;
            }
        }
        Ok(counts)
    })?;
    let mut counts = vec![0u64; SIDE * SIDE];
    for c in per_stream {
        for (a, b) in counts.iter_mut().zip(c) {
            *a += b;
        }
    }
    let joint = bp.joint();
    let hx = (xr.1 - xr.0) / SIDE as f64;
    let hz = (zr.1 - zr.0) / SIDE as f64;
    let n = samples as f64;
    let mut max_z: f64 = 0.0;
    for i in 0..SIDE {
        for j in 0..SIDE {
            let bx = (xr.0 + hx * i as f64, xr.0 + hx * (i + 1) as f64);
            let bz = (zr.0 + hz * j as f64, zr.0 + hz * (j + 1) as f64);
            let p = quad::integrate_box(|v| Ok(joint.eval(v)?), &[bx, bz], 1e-8)?.value;
            let sdev = (n * p * (1.0 - p)).sqrt().max(1.0);
            max_z = max_z.max((counts[i * SIDE + j] as f64 - n * p).abs() / sdev);
        }
    }
    let cells = SIDE * SIDE;
    let tail = 0.0027 / (2.0 * cells as f64);
    let threshold = Marginal::standard_normal().quantile(1.0 - tail);
    Ok(PushforwardCheck {
        samples,
        cells,
        max_z,
        threshold,
        passed: max_z <= threshold,
    })
}

/// Posterior `f_{X1|Z=s}(x1) = f_{X1,Z}(x1, s) / f_Z(s)`; the evidence
/// `f_Z(s)` is the table's `normalization`.
pub fn posterior_density(bp: &BayesProblem, grid: &GridSpec) -> Result<DensityTable> {
    bp.check_arity()?;
    fan::conditional_table(&bp.joint(), bp.measurement, grid, Method::Bayes).map_err(|e| match e {
        Error::NullConditioning { value } => Error::Invalid(format!(
            "vanishing evidence: f_Z({}) = {value:e}",
            bp.measurement
        )),
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropositionCheck {
    pub posterior: DensityTable,
    pub canonical: DensityTable,
    pub distance: DensityDistance,
}

fn curve_chart(x: &str, y: &str, grid: &GridSpec) -> Result<Chart> {
    let (lo, hi) = grid.normalization_interval();
    Chart::parse(&[x, y], &[(lo, hi)])
}

/// Canonical density on `{z = s}` in `(x1, z)` coordinates (chart
/// `t ↦ (t, s)`, surface factor 1) compared with the posterior.
pub fn verify_proposition(bp: &BayesProblem, grid: &GridSpec) -> Result<PropositionCheck> {
    let posterior = posterior_density(bp, grid)?;
    let joint = bp.joint();
    let s = bp.measurement;
    let level_set = LevelSetProblem::new(
        2,
        joint.clone(),
        vec![Expression::parse("x2")?],
        vec![Expression::parse("x1")?],
        vec![s],
    )?;
    let chart = curve_chart("x1", &format!("{s:?}"), grid)?;
    chart.validate(&level_set)?;
    let cp = CanonicalProblem::new(joint, chart)?;
    let canonical = canonical::canonical_density(&cp, &with_support(grid))?;
    let distance = equivalence::density_distance(&canonical, &posterior)?;
    Ok(PropositionCheck {
        posterior,
        canonical,
        distance,
    })
}

/// Canonical density on `{G = s}` computed in the original `(x1, x2)`
/// coordinates under `ν`, through a chart whose parameter is `x1`, compared
/// with the posterior. This is the wrong construction; the distance shows how
/// wrong.
pub fn wrong_coordinates_control(bp: &BayesProblem, chart_x2: &str, grid: &GridSpec) -> Result<PropositionCheck> {
    let posterior = posterior_density(bp, grid)?;
    let nu = bp.nu();
    let level_set = LevelSetProblem::new(
        2,
        nu.clone(),
        vec![bp.forward.clone()],
        vec![Expression::parse("x1")?],
        vec![bp.measurement],
    )?;
    let chart = curve_chart("x1", chart_x2, grid)?;
    chart.validate(&level_set)?;
    let cp = CanonicalProblem::new(nu, chart)?;
    let canonical = canonical::canonical_density(&cp, &with_support(grid))?;
    let distance = equivalence::density_distance(&canonical, &posterior)?;
    Ok(PropositionCheck {
        posterior,
        canonical,
        distance,
    })
}

/// The chart domain already is the normalization interval.
fn with_support(grid: &GridSpec) -> GridSpec {
    GridSpec {
        support: Support::Bounded,
        ..*grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STD: &str = "exp(-x1^2/2)/sqrt(2*pi)";

    fn ratio() -> BayesProblem {
        BayesProblem::parse(STD, STD, "x2/x1", "abs(x1)*exp(-(x1*x2)^2/2)/sqrt(2*pi)", -1.0)
            .unwrap()
            .with_samplers(Marginal::standard_normal(), Marginal::standard_normal())
    }

    fn sum() -> BayesProblem {
        BayesProblem::parse(STD, STD, "x1 + x2", "exp(-(x2-x1)^2/2)/sqrt(2*pi)", 0.0)
            .unwrap()
            .with_samplers(Marginal::standard_normal(), Marginal::standard_normal())
    }

    #[test]
    fn likelihoods_are_normalized() {
        for bp in [ratio(), sum()] {
            let c = validate_likelihood(&bp).unwrap();
            assert!(c.passed, "{c:?}");
            assert_eq!(c.masses.len(), 20);
        }
        let bad = BayesProblem::parse(STD, STD, "x1 + x2", "exp(-(x2-x1)^2/2)", 0.0).unwrap();
        assert!(!validate_likelihood(&bad).unwrap().passed);
    }

    #[test]
    fn joint_has_unit_mass() {
        for bp in [ratio(), sum()] {
            let m = joint_mass(&bp).unwrap();
            assert!((m - 1.0).abs() < JOINT_MASS_TOL, "{m}");
        }
    }

    #[test]
    fn evidence_of_the_sum_problem() {
        let t = posterior_density(&sum(), &GridSpec::new(-3.0, 3.0, 61)).unwrap();
        assert!((t.normalization - 1.0 / (4.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
        assert_eq!(t.method, Method::Bayes);
    }

    #[test]
    fn pushforward_matches_joint() {
        let c = pushforward_check(&ratio(), 200_000, 11, Some(2)).unwrap();
        assert!(c.passed, "{c:?}");
        let wrong = BayesProblem {
            likelihood: Expression::parse("exp(-(x2-x1)^2/2)/sqrt(2*pi)").unwrap(),
            ..ratio()
        };
        assert!(!pushforward_check(&wrong, 200_000, 11, Some(2)).unwrap().passed);
    }

    #[test]
    fn proposition_holds_and_control_fails() {
        let g = GridSpec::new(-3.0, 3.0, 301);
        for bp in [ratio(), sum()] {
            let r = verify_proposition(&bp, &g).unwrap();
            assert!(r.distance.tv < 1e-4, "{:?}", r.distance);
        }
        let c = wrong_coordinates_control(&ratio(), "-x1", &g).unwrap();
        assert!(c.distance.tv > 0.25, "{:?}", c.distance);
    }
}
