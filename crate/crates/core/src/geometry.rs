//! Level sets `Mˢ = {x : φ(x) = s}`: generalized Jacobians, charts, and the
//! gradient-flow projection onto `Mˢ`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::linalg::{self, Matrix};

/// Largest ambient dimension handled.
pub const MAX_DIM: usize = 4;
/// Absolute tolerance for a chart point to count as lying on the level set.
pub const CHART_TOL: f64 = 1e-9;
/// Residual every projection must reach.
pub const PROJECTION_TOL: f64 = 1e-8;
/// `det(Dφ Dφᵀ)` below this is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;
/// `det(Dgᵀ Dg)` at or below this makes a chart degenerate.
pub const DEGENERATE_DET: f64 = 1e-14;

/// A density on ℝⁿ together with the constraint `φ(x) = s` and auxiliary
/// coordinates `ψ`, so that `Φ = (φ, ψ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetProblem {
    pub density: Expression,
    pub phi: Vec<Expression>,
    pub psi: Vec<Expression>,
    pub level: Vec<f64>,
    pub dim: usize,
}

impl LevelSetProblem {
    pub fn new(
        dim: usize,
        density: Expression,
        phi: Vec<Expression>,
        psi: Vec<Expression>,
        level: Vec<f64>,
    ) -> Result<Self> {
        let k = phi.len();
        if !(1 <= k && k < dim && dim <= MAX_DIM) {
            return Err(Error::Invalid(format!(
                "need 1 <= k < n <= {MAX_DIM}, got k = {k}, n = {dim}"
            )));
        }
        if level.len() != k {
            return Err(Error::Invalid(format!(
                "level has {} components but phi has {k}",
                level.len()
            )));
        }
        if level.iter().any(|s| !s.is_finite()) {
            return Err(Error::Invalid("level must be finite".into()));
        }
        if k + psi.len() > dim {
            return Err(Error::Invalid(format!(
                "phi and psi together have {} components, more than n = {dim}",
                k + psi.len()
            )));
        }
        for (what, e) in std::iter::once(("density", &density))
            .chain(phi.iter().map(|e| ("phi", e)))
            .chain(psi.iter().map(|e| ("psi", e)))
        {
            if !e.is_constant() && e.arity() > dim {
                return Err(Error::Invalid(format!(
                    "{what} expression '{e}' uses x{} but n = {dim}",
                    e.arity()
                )));
            }
        }
        Ok(LevelSetProblem {
            density,
            phi,
            psi,
            level,
            dim,
        })
    }

    /// Build from expression sources.
    pub fn parse(dim: usize, density: &str, phi: &[&str], psi: &[&str], level: &[f64]) -> Result<Self> {
        let parse_all = |v: &[&str]| -> Result<Vec<Expression>> {
            v.iter().map(|s| Ok(Expression::parse(s)?)).collect()
        };
        LevelSetProblem::new(
            dim,
            Expression::parse(density)?,
            parse_all(phi)?,
            parse_all(psi)?,
            level.to_vec(),
        )
    }

    /// Codimension `k` of the level set.
    pub fn k(&self) -> usize {
        self.phi.len()
    }

    /// Dimension `m` of the target of `Φ = (φ, ψ)`.
    pub fn m(&self) -> usize {
        self.phi.len() + self.psi.len()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Invalid(format!(
                "point has dimension {}, problem has {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `f_μ(x)`; a negative value is an error.
    pub fn density_at(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let v = self.density.eval(x)?;
        if v < 0.0 {
            return Err(Error::NegativeDensity {
                value: v,
                point: x.to_vec(),
            });
        }
        Ok(v)
    }

    pub fn phi_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        self.phi.iter().map(|e| Ok(e.eval(x)?)).collect()
    }

    pub fn psi_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        self.psi.iter().map(|e| Ok(e.eval(x)?)).collect()
    }

    /// `φ(x) − s`.
    pub fn offset(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .phi_at(x)?
            .iter()
            .zip(&self.level)
            .map(|(p, s)| p - s)
            .collect())
    }

    /// `Dφ(x)` as a `k × n` matrix, rows from the gradients of the components.
    pub fn dphi(&self, x: &[f64]) -> Result<Matrix> {
        self.check_point(x)?;
        let rows = self
            .phi
            .iter()
            .map(|e| Ok(e.grad(x)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_rows(&rows))
    }
}

/// `Jφ(x) = √det(Dφ(x) Dφ(x)ᵀ)`.
pub fn jacobian_j(p: &LevelSetProblem, x: &[f64]) -> Result<f64> {
    let d = p.dphi(x)?;
    if d.rows == 1 {
        return Ok(linalg::norm(&p.phi[0].grad(x)?));
    }
    Ok(d.gram_rows().det().max(0.0).sqrt())
}

/// Smallest singular value of `Dφ(x)`.
pub fn smallest_singular_value(p: &LevelSetProblem, x: &[f64]) -> Result<f64> {
    let d = p.dphi(x)?;
    if d.rows == 1 {
        return Ok(linalg::norm(&p.phi[0].grad(x)?));
    }
    let ev = d.gram_rows().symmetric_eigenvalues();
    Ok(ev[0].max(0.0).sqrt())
}

/// Settings for [`project_to_level_set`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Euler step in flow time; `None` means a tenth of the extinction time.
    pub step: Option<f64>,
    pub max_steps: usize,
    /// Claimed lower bound `r` on `σ_min(Dφ)` along the path, checked at every step.
    pub bound: Option<f64>,
}

impl Default for Projection {
    fn default() -> Self {
        Projection {
            step: None,
            max_steps: 10_000,
            bound: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// `T = |φ(start) − s|`, the time at which the continuous flow reaches `Mˢ`.
    pub extinction_time: f64,
    pub steps: usize,
    /// `|φ(end) − s|`.
    pub residual: f64,
}

/// Newton direction `A η` with `A = Dφᵀ (Dφ Dφᵀ)⁻¹`, after checking the bound.
fn pseudo_inverse_apply(
    p: &LevelSetProblem,
    z: &[f64],
    eta: &[f64],
    bound: Option<f64>,
) -> Result<Vec<f64>> {
    let d = p.dphi(z)?;
    let g = d.gram_rows();
    let det = g.det();
    if !(det.abs() >= SINGULAR_DET) {
        return Err(Error::Singular {
            det,
            point: z.to_vec(),
        });
    }
    if let Some(r) = bound {
        let sigma = g.symmetric_eigenvalues()[0].max(0.0).sqrt();
        if sigma < r {
            return Err(Error::BoundViolated {
                observed: sigma,
                bound: r,
                point: z.to_vec(),
            });
        }
    }
    let w = g.solve(eta).ok_or_else(|| Error::Singular {
        det,
        point: z.to_vec(),
    })?;
    Ok(d.tr_mul_vec(&w))
}

/// Follow `ż = −A(z) · (φ(z) − s)/|φ(z) − s|` to the level set.
///
/// Along the exact flow `|φ(z(t)) − s| = T − t`, so the flow is extinct at
/// `T = |φ(x) − s|` and `|x − y| ≤ T / r` when `σ_min(Dφ) ≥ r` on the path. The
/// flow is integrated by explicit Euler with steps no longer than the remaining
/// time, then polished by Gauss–Newton. For affine `φ` and a step of at least
/// `T` the first step lands exactly.
pub fn project_to_level_set(p: &LevelSetProblem, x: &[f64], opts: Projection) -> Result<ProjectionResult> {
    let eta0 = p.offset(x)?;
    let t_ext = linalg::norm(&eta0);
    let mut z = x.to_vec();
    let mut eta = eta0;
    let mut residual = t_ext;
    let mut steps = 0usize;
    let step = opts.step.unwrap_or(0.1 * t_ext);
    if !(step > 0.0) && t_ext > 0.0 {
        return Err(Error::Invalid(format!("projection step must be positive, got {step}")));
    }

    // flow phase: each step removes min(step, |η|) of the offset to first order
    while residual > 1e-10 * (1.0 + t_ext) && steps < opts.max_steps {
        let h = step.min(residual);
        let dir: Vec<f64> = eta.iter().map(|e| e / residual).collect();
        let v = pseudo_inverse_apply(p, &z, &dir, opts.bound)?;
        for (zi, vi) in z.iter_mut().zip(&v) {
            *zi -= h * vi;
        }
        steps += 1;
        eta = p.offset(&z)?;
        residual = linalg::norm(&eta);
    }

    // polish
    let mut polish = 0;
    while residual > 1e-14 * (1.0 + linalg::norm(&p.level)) && polish < 8 && residual > 0.0 {
        let v = pseudo_inverse_apply(p, &z, &eta, opts.bound)?;
        let trial: Vec<f64> = z.iter().zip(&v).map(|(a, b)| a - b).collect();
        let trial_eta = p.offset(&trial)?;
        let trial_res = linalg::norm(&trial_eta);
        if trial_res >= residual {
            break;
        }
        z = trial;
        eta = trial_eta;
        residual = trial_res;
        polish += 1;
    }

    if !(residual <= PROJECTION_TOL) {
        return Err(Error::NonConvergence { steps, residual });
    }
    Ok(ProjectionResult {
        start: x.to_vec(),
        end: z,
        extinction_time: t_ext,
        steps: steps + polish,
        residual,
    })
}

/// An explicit parametrization `g: D → ℝⁿ` of a level set, `D` an
/// axis-aligned box in ℝʳ. Chart expressions read `u` as `x1..xr`.
#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub map: Vec<Expression>,
    pub domain: Vec<(f64, f64)>,
}

/// Outcome of checking a chart against a level set on a sample grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChartCheck {
    pub checked: usize,
    pub skipped: usize,
    pub max_residual: f64,
}

impl Chart {
    pub fn new(map: Vec<Expression>, domain: Vec<(f64, f64)>) -> Result<Self> {
        if map.is_empty() || map.len() > MAX_DIM {
            return Err(Error::Invalid(format!(
                "chart needs 1..={MAX_DIM} components, got {}",
                map.len()
            )));
        }
        let r = domain.len();
        if r == 0 || r > map.len() {
            return Err(Error::Invalid(format!(
                "chart domain dimension {r} must be in 1..={}",
                map.len()
            )));
        }
        if domain.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(Error::Invalid("chart domain must be a finite non-empty box".into()));
        }
        if let Some(e) = map.iter().find(|e| !e.is_constant() && e.arity() > r) {
            return Err(Error::Invalid(format!(
                "chart component '{e}' uses x{} but the domain has dimension {r}",
                e.arity()
            )));
        }
        Ok(Chart { map, domain })
    }

    pub fn parse(map: &[&str], domain: &[(f64, f64)]) -> Result<Self> {
        let map = map
            .iter()
            .map(|s| Ok(Expression::parse(s)?))
            .collect::<Result<Vec<_>>>()?;
        Chart::new(map, domain.to_vec())
    }

    /// Parameter dimension `r`.
    pub fn dim(&self) -> usize {
        self.domain.len()
    }

    /// Ambient dimension `n`.
    pub fn ambient(&self) -> usize {
        self.map.len()
    }

    pub fn point(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.map.iter().map(|e| Ok(e.eval(u)?)).collect()
    }

    /// `Dg(u)` as an `n × r` matrix.
    pub fn jacobian(&self, u: &[f64]) -> Result<Matrix> {
        let rows = self
            .map
            .iter()
            .map(|e| {
                let mut g = e.grad(u)?;
                g.resize(u.len(), 0.0);
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_rows(&rows))
    }

    /// Evenly spaced sample grid of the domain: 33 points for a curve, 9 per
    /// axis otherwise.
    pub fn sample_grid(&self) -> Vec<Vec<f64>> {
        let per_axis = if self.dim() == 1 { 33 } else { 9 };
        let mut pts = vec![Vec::new()];
        for &(lo, hi) in &self.domain {
            let h = (hi - lo) / (per_axis - 1) as f64;
            pts = pts
                .into_iter()
                .flat_map(|p: Vec<f64>| {
                    (0..per_axis).map(move |i| {
                        let mut q = p.clone();
                        q.push(if i + 1 == per_axis { hi } else { lo + h * i as f64 });
                        q
                    })
                })
                .collect();
        }
        pts
    }

    /// Check that the chart parametrizes `Mˢ` of `p` and is an immersion on
    /// the sample grid. Points outside the expression domain are skipped.
    pub fn validate(&self, p: &LevelSetProblem) -> Result<ChartCheck> {
        if self.ambient() != p.dim {
            return Err(Error::Invalid(format!(
                "chart maps into R^{}, problem lives in R^{}",
                self.ambient(),
                p.dim
            )));
        }
        if self.dim() != p.dim - p.k() {
            return Err(Error::Invalid(format!(
                "chart has dimension {}, level set has dimension {}",
                self.dim(),
                p.dim - p.k()
            )));
        }
        let mut check = ChartCheck {
            checked: 0,
            skipped: 0,
            max_residual: 0.0,
        };
        for u in self.sample_grid() {
            let x = match self.point(&u) {
                Ok(x) => x,
                Err(e) if e.is_domain() => {
                    check.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let eta = match p.offset(&x) {
                Ok(eta) => eta,
                Err(e) if e.is_domain() => {
                    check.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let res = linalg::norm(&eta);
            if !(res <= CHART_TOL) {
                return Err(Error::ChartOffLevelSet { residual: res, point: u });
            }
            match surface_jacobian(self, &u) {
                Ok(_) => {}
                Err(e) if e.is_domain() => {
                    check.skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            check.max_residual = check.max_residual.max(res);
            check.checked += 1;
        }
        if check.checked == 0 || check.skipped > check.checked {
            return Err(Error::TooManySkipped {
                skipped: check.skipped,
                total: check.skipped + check.checked,
            });
        }
        Ok(check)
    }
}

/// Area element `√det(Dg(u)ᵀ Dg(u))` of a chart.
pub fn surface_jacobian(c: &Chart, u: &[f64]) -> Result<f64> {
    let dg = c.jacobian(u)?;
    let det = dg.gram_cols().det();
    if !(det > DEGENERATE_DET) {
        return Err(Error::DegenerateChart {
            det,
            point: u.to_vec(),
        });
    }
    Ok(det.sqrt())
}
