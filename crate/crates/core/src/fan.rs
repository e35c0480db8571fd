//! Fan-measure conditional densities.
//!
//! The fan measure of `Φ = (φ, ψ)` at level `s` is the limit of
//! `P(ψ(X) ∈ B | |φ(X) − s| < ε)` as `ε → 0`. It is computed here four ways:
//! by Monte Carlo over shrinking tubes, in closed form through a supplied
//! inverse `Φ⁻¹`, through an implicit solve `x1 = χ(s, u)` (shearing), and as a
//! textbook conditional density of a joint `f_{U,V}`.

use serde::Serialize;

use crate::error::{check_skips, Error, Result};
use crate::expr::{ExprError, Expression};
use crate::geometry::LevelSetProblem;
use crate::linalg::{self, Matrix};
use crate::quad;
use crate::sampler::{self, SamplerSpec};
use crate::table::{self, DensityTable, GridSpec, Method};

/// Round-trip tolerance for supplied inverses and implicit solutions.
pub const INVERSE_TOL: f64 = 1e-8;
/// Marginal density below which conditioning is refused.
pub const NULL_MARGINAL: f64 = 1e-12;
/// `|∂φ/∂x1|` at or below this counts as vanishing.
pub const VANISHING_PARTIAL: f64 = 1e-12;

fn require_curve(p: &LevelSetProblem) -> Result<()> {
    if p.dim - p.k() != 1 {
        return Err(Error::Invalid(format!(
            "density tables need a one-dimensional level set, this one has dimension {}",
            p.dim - p.k()
        )));
    }
    Ok(())
}

fn skip_domain<T>(r: Result<T>, skipped: &mut usize) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_domain() => {
            *skipped += 1;
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// `y = (s, u)`.
fn fan_coords(s: &[f64], u: f64) -> Vec<f64> {
    let mut y = s.to_vec();
    y.push(u);
    y
}

/// Closed-form fan density `f(Φ⁻¹(s,u)) · |det JΦ⁻¹(s,u)|`, normalized over `u`.
///
/// `inverse` holds the `n` components of `Φ⁻¹` as expressions in
/// `y = (s, u)`, read as `x1..xn`. The inverse is verified against `Φ` on
/// every grid node.
pub fn fan_density_diffeo(p: &LevelSetProblem, inverse: &[Expression], grid: &GridSpec) -> Result<DensityTable> {
    require_curve(p)?;
    if p.m() != p.dim {
        return Err(Error::Invalid(format!(
            "the diffeomorphism route needs m = n, got m = {} and n = {}",
            p.m(),
            p.dim
        )));
    }
    if inverse.len() != p.dim {
        return Err(Error::Invalid(format!(
            "inverse has {} components, expected {}",
            inverse.len(),
            p.dim
        )));
    }
    let nodes = grid.nodes()?;
    let inv = |y: &[f64]| -> Result<Vec<f64>> { inverse.iter().map(|e| Ok(e.eval(y)?)).collect() };

    let mut skipped = 0;
    for &u in &nodes {
        let y = fan_coords(&p.level, u);
        let Some(x) = skip_domain(inv(&y), &mut skipped)? else { continue };
        let Some(phi) = skip_domain(p.phi_at(&x), &mut skipped)? else { continue };
        let Some(psi) = skip_domain(p.psi_at(&x), &mut skipped)? else { continue };
        let back: Vec<f64> = phi.into_iter().chain(psi).collect();
        let err = linalg::dist(&back, &y);
        if !(err <= INVERSE_TOL * linalg::norm(&y).max(1.0)) {
            return Err(Error::RoundTrip {
                residual: err,
                point: y,
            });
        }
    }
    check_skips(skipped, nodes.len())?;

    let density = |u: f64| -> Result<f64> {
        let y = fan_coords(&p.level, u);
        let x = inv(&y)?;
        let f = p.density_at(&x)?;
        if f == 0.0 {
            return Ok(0.0);
        }
        let rows = inverse
            .iter()
            .map(|e| {
                let mut g = e.grad(&y)?;
                g.resize(y.len(), 0.0);
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(f * Matrix::from_rows(&rows).det().abs())
    };
    let mut t = table::tabulate(Method::Diffeo, &nodes, grid.normalization_interval(), grid.support, density)?;
    if skipped > 0 {
        t.warnings.push(format!(
            "round-trip check skipped {skipped} grid point(s) outside the expression domain"
        ));
    }
    Ok(t)
}

/// Fan density of `Φ = (φ, x2, …, xn)` through the implicit solution
/// `x1 = χ(s, u)`: `f(χ, u) · |∂φ/∂x1(χ, u)|⁻¹`, normalized over `u`.
///
/// `chi` reads `(s, u)` as `(x1, x2)`.
pub fn fan_density_shear(p: &LevelSetProblem, chi: &Expression, grid: &GridSpec) -> Result<DensityTable> {
    require_curve(p)?;
    if p.k() != 1 {
        return Err(Error::Invalid("the shearing route needs a scalar constraint".into()));
    }
    check_shear_psi(p)?;
    let s = p.level[0];
    let nodes = grid.nodes()?;
    let point = |u: f64| -> Result<Vec<f64>> { Ok(vec![chi.eval(&[s, u])?, u]) };
    let partial = |x: &[f64]| -> Result<f64> { Ok(p.phi[0].grad(x)?[0]) };

    let mut skipped = 0;
    for &u in &nodes {
        let Some(x) = skip_domain(point(u), &mut skipped)? else { continue };
        let Some(eta) = skip_domain(p.offset(&x), &mut skipped)? else { continue };
        let res = eta[0].abs();
        if !(res <= INVERSE_TOL * s.abs().max(1.0)) {
            return Err(Error::ImplicitResidual {
                residual: res,
                point: vec![u],
            });
        }
        let Some(d) = skip_domain(partial(&x), &mut skipped)? else { continue };
        if !(d.abs() > VANISHING_PARTIAL) {
            return Err(Error::VanishingDerivative { point: x });
        }
    }
    check_skips(skipped, nodes.len())?;

    let density = |u: f64| -> Result<f64> {
        let x = point(u)?;
        let f = p.density_at(&x)?;
        let d = partial(&x)?;
        if !(d.abs() > VANISHING_PARTIAL) {
            // off-grid quadrature nodes: treated like any other undefined point
            return Err(ExprError::Domain {
                op: "vanishing constraint derivative",
                point: x,
            }
            .into());
        }
        Ok(f / d.abs())
    };
    let mut t = table::tabulate(Method::Shear, &nodes, grid.normalization_interval(), grid.support, density)?;
    if skipped > 0 {
        t.warnings.push(format!(
            "implicit-solution check skipped {skipped} grid point(s) outside the expression domain"
        ));
    }
    Ok(t)
}

/// The shearing route is only valid when `ψ = (x2, …, xn)`; checked by evaluation.
fn check_shear_psi(p: &LevelSetProblem) -> Result<()> {
    if p.psi.len() != p.dim - 1 {
        return Err(Error::Invalid("the shearing route needs psi = (x2, ..., xn)".into()));
    }
    let probes = [
        [0.37, -1.21, 2.03, 0.55],
        [-2.4, 0.83, -0.61, 1.7],
        [1.9, 2.6, 0.12, -3.1],
    ];
    for probe in probes {
        let x = &probe[..p.dim];
        for (j, e) in p.psi.iter().enumerate() {
            let ok = matches!(e.eval(x), Ok(v) if v == x[j + 1]);
            if !ok {
                return Err(Error::Invalid(format!(
                    "the shearing route needs psi = (x2, ..., xn); component {} is '{e}'",
                    j + 1
                )));
            }
        }
    }
    Ok(())
}

/// `f_{U|V=s}(u) = f_{U,V}(u, s) / f_V(s)` with `f_V(s)` by quadrature over ℝ.
///
/// `joint` reads `(u, v)` as `(x1, x2)`.
pub fn conditional_density_1d(joint: &Expression, s: f64, grid: &GridSpec) -> Result<DensityTable> {
    conditional_table(joint, s, grid, Method::Conditional)
}

pub(crate) fn conditional_table(joint: &Expression, s: f64, grid: &GridSpec, method: Method) -> Result<DensityTable> {
    if !joint.is_constant() && joint.arity() > 2 {
        return Err(Error::Invalid(format!(
            "joint density '{joint}' must only read (x1, x2)"
        )));
    }
    let nodes = grid.nodes()?;
    let f = |u: f64| -> Result<f64> {
        let v = joint.eval(&[u, s])?;
        if v < 0.0 {
            return Err(Error::NegativeDensity {
                value: v,
                point: vec![u, s],
            });
        }
        Ok(v)
    };
    let center = 0.5 * (grid.min + grid.max);
    let scale = 0.5 * (grid.max - grid.min);
    let marginal = match grid.support {
        table::Support::Extend => quad::integrate_real_line(f, center, scale, table::NORMALIZATION_REL_TOL)?,
        table::Support::Bounded => quad::adaptive_simpson(f, grid.min, grid.max, table::NORMALIZATION_REL_TOL)?,
    };
    if !(marginal.value >= NULL_MARGINAL) {
        return Err(Error::NullConditioning {
            value: marginal.value,
        });
    }
    let mut skipped = 0;
    let mut values = Vec::with_capacity(nodes.len());
    for &u in &nodes {
        let v = skip_domain(f(u), &mut skipped)?.unwrap_or(0.0);
        values.push(v / marginal.value);
    }
    check_skips(skipped, nodes.len())?;
    let mut t = DensityTable::new(nodes, values, marginal.value, method, None)?;
    if skipped > 0 {
        t.warnings.push(format!(
            "{skipped} grid point(s) outside the expression domain were set to 0"
        ));
    }
    if marginal.skipped > 0 {
        t.warnings.push(format!(
            "marginal quadrature skipped {} point(s) outside the expression domain",
            marginal.skipped
        ));
    }
    Ok(t)
}

/// Shrinking-tube schedule for the Monte Carlo fan estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct TubeSchedule {
    pub epsilons: Vec<f64>,
    pub samples_per_eps: usize,
    pub seed: u64,
}

impl TubeSchedule {
    pub const DEFAULT_EPSILONS: [f64; 5] = [0.2, 0.1, 0.05, 0.025, 0.0125];
    pub const DEFAULT_SAMPLES: usize = 1_000_000;

    pub fn with_seed(seed: u64) -> Self {
        TubeSchedule {
            epsilons: Self::DEFAULT_EPSILONS.to_vec(),
            samples_per_eps: Self::DEFAULT_SAMPLES,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Invalid("epsilon schedule is empty".into()));
        }
        if self.epsilons.iter().any(|&e| !(e >= 1e-6 && e.is_finite())) {
            return Err(Error::Invalid("every epsilon must be finite and at least 1e-6".into()));
        }
        if self.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Invalid("epsilons must be strictly decreasing".into()));
        }
        if self.samples_per_eps < 10_000 {
            return Err(Error::Invalid(format!(
                "need at least 10^4 samples per epsilon, got {}",
                self.samples_per_eps
            )));
        }
        Ok(())
    }
}

/// Tube counts at one `ε`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TubePoint {
    pub eps: f64,
    /// Samples with `|φ − s| < ε`.
    pub in_tube: u64,
    /// Of those, samples with `ψ ∈ B`.
    pub in_region: u64,
    /// Samples where `φ` or `ψ` was undefined.
    pub skipped: u64,
    /// `None` when the tube caught no sample.
    pub estimate: Option<f64>,
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TubeEstimate {
    pub points: Vec<TubePoint>,
    /// Weighted least-squares intercept of the estimates against `ε²`.
    pub extrapolated: f64,
    pub extrapolated_stderr: f64,
    /// The estimates do not move monotonically as `ε` shrinks (beyond noise),
    /// so a lim and a limsup could differ.
    pub non_monotone: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Default)]
struct Counts {
    tube: u64,
    region: u64,
    skipped: u64,
}

fn in_box(v: &[f64], b: &[(f64, f64)]) -> bool {
    v.iter().zip(b).all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
}

/// Monte Carlo estimates of `P(ψ(X) ∈ B | |φ(X) − s| < ε)` over the schedule,
/// extrapolated to `ε = 0` linearly in `ε²`.
///
/// `region` is a box in ψ-space; infinite bounds are allowed. Each `ε` uses
/// its own independent draws. Counts are integers reduced in stream order, so
/// the result does not depend on `workers`.
pub fn fan_tube_estimate(
    p: &LevelSetProblem,
    region: &[(f64, f64)],
    sched: &TubeSchedule,
    sampler: &SamplerSpec,
    workers: Option<usize>,
) -> Result<TubeEstimate> {
    sched.validate()?;
    sampler.validate(p.dim)?;
    if region.len() != p.psi.len() {
        return Err(Error::Invalid(format!(
            "region has {} axes, psi has {}",
            region.len(),
            p.psi.len()
        )));
    }
    if region.iter().any(|(lo, hi)| lo.is_nan() || hi.is_nan() || lo > hi) {
        return Err(Error::Invalid("region bounds must satisfy lo <= hi".into()));
    }
    let mut warnings = Vec::new();
    if let Some(w) = sampler.spot_check(&p.density, sched.seed)? {
        warnings.push(w);
    }

    let mut points = Vec::with_capacity(sched.epsilons.len());
    for (i, &eps) in sched.epsilons.iter().enumerate() {
        let per_stream = sampler::run_streams(sched.samples_per_eps, workers, |stream, n| {
            let mut rng = sampler::stream_rng(sched.seed, i as u64, stream as u64);
            let mut x = vec![0.0; p.dim];
            let mut c = Counts::default();
            for _ in 0..n {
                sampler.draw(&p.density, &mut rng, &mut x)?;
                let eta = match p.offset(&x) {
                    Ok(eta) => eta,
                    Err(e) if e.is_domain() => {
                        c.skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                if linalg::norm(&eta) >= eps {
                    continue;
                }
                let psi = match p.psi_at(&x) {
                    Ok(v) => v,
                    Err(e) if e.is_domain() => {
                        c.skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                c.tube += 1;
                if in_box(&psi, region) {
                    c.region += 1;
                }
            }
            Ok(c)
        })?;
        let c = per_stream.iter().fold(Counts::default(), |a, b| Counts {
            tube: a.tube + b.tube,
            region: a.region + b.region,
            skipped: a.skipped + b.skipped,
        });
        let (estimate, stderr) = if c.tube == 0 {
            warnings.push(format!("epsilon {eps}: no sample fell in the tube"));
            (None, None)
        } else {
            let d = c.tube as f64;
            let ph = c.region as f64 / d;
            (Some(ph), Some((ph * (1.0 - ph) / d).sqrt()))
        };
        if c.skipped > 0 {
            warnings.push(format!(
                "epsilon {eps}: {} sample(s) outside the expression domain were skipped",
                c.skipped
            ));
        }
        points.push(TubePoint {
            eps,
            in_tube: c.tube,
            in_region: c.region,
            skipped: c.skipped,
            estimate,
            stderr,
        });
    }

    let (extrapolated, extrapolated_stderr) = extrapolate(&points)?;
    let non_monotone = is_non_monotone(&points);
    if non_monotone {
        warnings.push("tube estimates are not monotone in epsilon".into());
    }
    Ok(TubeEstimate {
        points,
        extrapolated,
        extrapolated_stderr,
        non_monotone,
        warnings,
    })
}

/// Weighted least squares `p(ε) ≈ a + b ε²`; returns `a` and its standard error.
fn extrapolate(points: &[TubePoint]) -> Result<(f64, f64)> {
    let data: Vec<(f64, f64, f64)> = points
        .iter()
        .filter_map(|pt| {
            let est = pt.estimate?;
            let se = pt.stderr?;
            // a degenerate 0 or 1 proportion still carries 1/D resolution
            let var = if se > 0.0 { se * se } else { (1.0 / pt.in_tube as f64).powi(2) };
            Some((pt.eps * pt.eps, est, var))
        })
        .collect();
    match data.len() {
        0 => Err(Error::Sampler("no epsilon produced a usable tube estimate".into())),
        1 => Ok((data[0].1, data[0].2.sqrt())),
        _ => {
            let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &(x, y, var) in &data {
                let w = 1.0 / var;
                s0 += w;
                s1 += w * x;
                s2 += w * x * x;
                t0 += w * y;
                t1 += w * x * y;
            }
            let det = s0 * s2 - s1 * s1;
            if !(det > 0.0) {
                return Ok((t0 / s0, (1.0 / s0).sqrt()));
            }
            let a = (s2 * t0 - s1 * t1) / det;
            Ok((a, (s2 / det).sqrt()))
        }
    }
}

fn is_non_monotone(points: &[TubePoint]) -> bool {
    let est: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| Some((p.estimate?, p.stderr?)))
        .collect();
    let mut up = false;
    let mut down = false;
    for w in est.windows(2) {
        let diff = w[1].0 - w[0].0;
        let noise = 2.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        if diff > noise {
            up = true;
        } else if diff < -noise {
            down = true;
        }
    }
    up && down
}

/// Histogram of `ψ` over samples in the tube `|φ − s| < ε`, one bin per grid
/// node, with per-bin standard errors. Needs a scalar `ψ`.
///
/// The table's `normalization` is the estimated tube density
/// `P(|φ − s| < ε) / 2ε`.
pub fn tube_histogram(
    p: &LevelSetProblem,
    grid: &GridSpec,
    eps: f64,
    samples: usize,
    seed: u64,
    sampler: &SamplerSpec,
    workers: Option<usize>,
) -> Result<DensityTable> {
    if p.psi.len() != 1 {
        return Err(Error::Invalid("a tube histogram needs a scalar psi".into()));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Invalid(format!("tube radius must be positive, got {eps}")));
    }
    sampler.validate(p.dim)?;
    let nodes = grid.nodes()?;
    let h = nodes[1] - nodes[0];
    let lo = nodes[0] - 0.5 * h;
    let bins = nodes.len();
    let per_stream = sampler::run_streams(samples, workers, |stream, n| {
        let mut rng = sampler::stream_rng(seed, u64::MAX - 1, stream as u64);
        let mut x = vec![0.0; p.dim];
        let mut counts = vec![0u64; bins + 1];
        let mut skipped = 0u64;
        for _ in 0..n {
            sampler.draw(&p.density, &mut rng, &mut x)?;
            let inside = match p.offset(&x) {
                Ok(eta) => linalg::norm(&eta) < eps,
                Err(e) if e.is_domain() => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !inside {
                continue;
            }
            let v = match p.psi_at(&x) {
                Ok(v) => v[0],
                Err(e) if e.is_domain() => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            counts[bins] += 1;
            let b = ((v - lo) / h).floor();
            if b >= 0.0 && (b as usize) < bins {
                counts[b as usize] += 1;
            }
        }
        Ok((counts, skipped))
    })?;
    let mut counts = vec![0u64; bins + 1];
    let mut skipped = 0u64;
    for (c, s) in per_stream {
        for (a, b) in counts.iter_mut().zip(c) {
            *a += b;
        }
        skipped += s;
    }
    let d = counts[bins];
    if d == 0 {
        return Err(Error::Sampler(format!("no sample fell in the tube of radius {eps}")));
    }
    let df = d as f64;
    let values = counts[..bins].iter().map(|&c| c as f64 / (df * h)).collect();
    let stderr = counts[..bins]
        .iter()
        .map(|&c| {
            let q = c as f64 / df;
            (q * (1.0 - q) / df).sqrt() / h
        })
        .collect();
    let mut t = DensityTable::new(nodes, values, df / (samples as f64 * 2.0 * eps), Method::Tube, Some(stderr))?;
    if skipped > 0 {
        t.warnings.push(format!("{skipped} sample(s) outside the expression domain were skipped"));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAUSS: &str = "exp(-(x1^2+x2^2)/2)/(2*pi)";

    fn parse(v: &[&str]) -> Vec<Expression> {
        v.iter().map(|s| Expression::parse(s).unwrap()).collect()
    }

    fn ratio() -> LevelSetProblem {
        LevelSetProblem::parse(2, GAUSS, &["x2/x1"], &["x1"], &[-1.0]).unwrap()
    }

    fn sum() -> LevelSetProblem {
        LevelSetProblem::parse(2, GAUSS, &["x1 + x2"], &["x1"], &[0.0]).unwrap()
    }

    fn grid() -> GridSpec {
        GridSpec::new(-3.0, 3.0, 121)
    }

    #[test]
    fn diffeo_ratio_and_sum() {
        let t = fan_density_diffeo(&ratio(), &parse(&["x2", "x1*x2"]), &grid()).unwrap();
        for (u, v) in t.grid.iter().zip(&t.values) {
            let want = u.abs() * (-u * u).exp();
            assert!((v - want).abs() <= 1e-7 * want.max(1e-3), "{u}: {v} vs {want}");
        }
        let t = fan_density_diffeo(&sum(), &parse(&["x2", "x1 - x2"]), &grid()).unwrap();
        let c = 1.0 / std::f64::consts::PI.sqrt();
        for (u, v) in t.grid.iter().zip(&t.values) {
            let want = c * (-u * u).exp();
            assert!((v - want).abs() <= 1e-7 * want, "{u}: {v} vs {want}");
        }
        assert!(t.is_normalized());
    }

    #[test]
    fn diffeo_rejects_wrong_inverse() {
        let err = fan_density_diffeo(&ratio(), &parse(&["x2", "x1 + x2"]), &grid()).unwrap_err();
        assert!(matches!(err, Error::RoundTrip { .. }), "{err}");
    }

    #[test]
    fn diffeo_polar_is_uniform() {
        let p = LevelSetProblem::parse(2, GAUSS, &["sqrt(x1^2+x2^2)"], &["atan2(x2, x1)"], &[1.0]).unwrap();
        let g = GridSpec::new(-3.0, 3.0, 61).bounded();
        let t = fan_density_diffeo(&p, &parse(&["x1*cos(x2)", "x1*sin(x2)"]), &g).unwrap();
        for v in &t.values {
            assert!((v - 1.0 / 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shear_matches_diffeo() {
        let p = LevelSetProblem::parse(2, GAUSS, &["x2/x1"], &["x2"], &[-1.0]).unwrap();
        let t = fan_density_shear(&p, &Expression::parse("x2/x1").unwrap(), &grid()).unwrap();
        for (u, v) in t.grid.iter().zip(&t.values) {
            let want = u.abs() * (-u * u).exp();
            assert!((v - want).abs() <= 1e-7 * want.max(1e-3), "{u}: {v} vs {want}");
        }
        let trivial = LevelSetProblem::parse(2, GAUSS, &["x1"], &["x2"], &[0.0]).unwrap();
        let t = fan_density_shear(&trivial, &Expression::parse("x1").unwrap(), &grid()).unwrap();
        let peak = t.value_at(0.0);
        // the normal tail beyond ±4.5 is cut off and flagged
        assert!((peak - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-5);
        assert!(t.warnings.iter().any(|w| w.starts_with("tail")));
    }

    #[test]
    fn shear_checks() {
        let wrong_psi = LevelSetProblem::parse(2, GAUSS, &["x1 + x2"], &["x1"], &[0.0]).unwrap();
        assert!(fan_density_shear(&wrong_psi, &Expression::parse("x1 - x2").unwrap(), &grid()).is_err());
        let p = LevelSetProblem::parse(2, GAUSS, &["x1 + x2"], &["x2"], &[0.0]).unwrap();
        let err = fan_density_shear(&p, &Expression::parse("x1 + x2").unwrap(), &grid()).unwrap_err();
        assert!(matches!(err, Error::ImplicitResidual { .. }));
        let cubic = LevelSetProblem::parse(2, GAUSS, &["x1^3"], &["x2"], &[0.0]).unwrap();
        let err = fan_density_shear(&cubic, &Expression::parse("0").unwrap(), &grid()).unwrap_err();
        assert!(matches!(err, Error::VanishingDerivative { .. }), "{err}");
    }

    #[test]
    fn conditional_independent_normals() {
        let joint = Expression::parse(GAUSS).unwrap();
        let t = conditional_density_1d(&joint, 0.0, &grid()).unwrap();
        let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        for (u, v) in t.grid.iter().zip(&t.values) {
            assert!((v - c * (-0.5 * u * u).exp()).abs() < 1e-9);
        }
        assert!((t.normalization - c).abs() < 1e-9);
        let err = conditional_density_1d(&Expression::parse("exp(-x2^2*1000)").unwrap(), 1.0, &grid()).unwrap_err();
        assert!(matches!(err, Error::NullConditioning { .. }));
    }

    #[test]
    fn schedule_validation() {
        assert!(TubeSchedule::with_seed(1).validate().is_ok());
        let mut s = TubeSchedule::with_seed(1);
        s.epsilons = vec![0.1, 0.2];
        assert!(s.validate().is_err());
        s.epsilons = vec![0.1, 1e-7];
        assert!(s.validate().is_err());
        s = TubeSchedule::with_seed(1);
        s.samples_per_eps = 100;
        assert!(s.validate().is_err());
    }

    #[test]
    fn whole_space_region_gives_one() {
        let sched = TubeSchedule {
            epsilons: vec![0.2, 0.1],
            samples_per_eps: 20_000,
            seed: 5,
        };
        let est = fan_tube_estimate(
            &sum(),
            &[(f64::NEG_INFINITY, f64::INFINITY)],
            &sched,
            &SamplerSpec::standard_normal(2),
            Some(2),
        )
        .unwrap();
        for pt in &est.points {
            assert_eq!(pt.estimate, Some(1.0));
        }
        assert_eq!(est.extrapolated, 1.0);
    }

    #[test]
    fn extrapolation_recovers_quadratic_model() {
        let pts: Vec<TubePoint> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&e| TubePoint {
                eps: e,
                in_tube: 1000,
                in_region: 0,
                skipped: 0,
                estimate: Some(0.3 + 2.0 * e * e),
                stderr: Some(0.01),
            })
            .collect();
        let (a, se) = extrapolate(&pts).unwrap();
        assert!((a - 0.3).abs() < 1e-12);
        assert!(se > 0.0);
        assert!(!is_non_monotone(&pts));
    }
}
