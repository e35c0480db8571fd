//! The canonically induced measure on a level set,
//! `μ_M(A) = ∫_A f dHʳ / ∫_M f dHʳ`, computed through a chart by the area
//! formula. Unlike a fan measure it does not depend on how `M` is written as a
//! level set.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::geometry::{self, Chart, LevelSetProblem, Projection};
use crate::linalg::{self, Matrix};
use crate::quad::{self, QuadOutcome};
use crate::sampler::{self, SamplerSpec};
use crate::table::{self, DensityTable, GridSpec, Method, Support};

/// Relative tolerance for measures of sets on curves.
pub const MEASURE_REL_TOL: f64 = 1e-11;
/// Relative tolerance for measures of sets on surfaces and higher.
pub const MEASURE_REL_TOL_MULTI: f64 = 1e-9;
/// Edge weight (relative to the peak) above which a finite chart domain is
/// reported as truncating `M`.
pub const TRUNCATION_RATIO: f64 = 1e-12;
/// Slack for the outer-measure inequalities.
pub const OUTER_TOL: f64 = 1e-9;
/// Largest family for which unions are measured by inclusion–exclusion.
const MAX_UNION: usize = 12;

pub type Region = Vec<(f64, f64)>;

/// A density on ℝⁿ and a chart of the set it is restricted to.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalProblem {
    pub density: Expression,
    pub chart: Chart,
}

impl CanonicalProblem {
    pub fn new(density: Expression, chart: Chart) -> Result<Self> {
        if !density.is_constant() && density.arity() > chart.ambient() {
            return Err(Error::Invalid(format!(
                "density reads x{} but the chart maps into R^{}",
                density.arity(),
                chart.ambient()
            )));
        }
        Ok(CanonicalProblem { density, chart })
    }

    /// `f(g(u)) · √det(Dg(u)ᵀ Dg(u))`.
    pub fn weight(&self, u: &[f64]) -> Result<f64> {
        let x = self.chart.point(u)?;
        let f = self.density.eval(&x)?;
        if f < 0.0 {
            return Err(Error::NegativeDensity { value: f, point: x });
        }
        if f == 0.0 {
            return Ok(0.0);
        }
        Ok(f * geometry::surface_jacobian(&self.chart, u)?)
    }

    fn integrate(&self, region: &[(f64, f64)]) -> Result<QuadOutcome> {
        let tol = if region.len() == 1 {
            MEASURE_REL_TOL
        } else {
            MEASURE_REL_TOL_MULTI
        };
        quad::integrate_box(|u| self.weight(u), region, tol)
    }

    /// Largest weight on the chart's sample grid, and the largest weight on the
    /// boundary of the domain.
    fn peak_and_edge(&self) -> (f64, f64) {
        let mut peak: f64 = 0.0;
        let mut edge: f64 = 0.0;
        for u in self.chart.sample_grid() {
            let w = self.weight(&u).unwrap_or(0.0);
            peak = peak.max(w);
            let on_edge = u
                .iter()
                .zip(&self.chart.domain)
                .any(|(x, (lo, hi))| x == lo || x == hi);
            if on_edge {
                edge = edge.max(w);
            }
        }
        (peak, edge)
    }

    /// Normalizing constant `∫_M f dHʳ` with its diagnostics.
    pub fn measure(&self) -> Result<CanonicalMeasure<'_>> {
        let total = self.integrate(&self.chart.domain)?;
        if !(total.value > 1e-300) {
            return Err(Error::ZeroMass(total.value));
        }
        let mut warnings = Vec::new();
        let (peak, edge) = self.peak_and_edge();
        if peak > 0.0 && edge >= TRUNCATION_RATIO * peak {
            warnings.push(format!(
                "chart domain truncates the level set: weight at the domain edge is {:.3e} of the peak",
                edge / peak
            ));
        }
        if total.skipped > 0 {
            warnings.push(format!(
                "{} quadrature point(s) outside the expression domain were skipped",
                total.skipped
            ));
        }
        Ok(CanonicalMeasure {
            problem: self,
            total: total.value,
            warnings,
        })
    }
}

/// `μ_M` with its normalizing constant computed once.
#[derive(Clone, Debug)]
pub struct CanonicalMeasure<'a> {
    problem: &'a CanonicalProblem,
    pub total: f64,
    pub warnings: Vec<String>,
}

fn is_empty_box(b: &[(f64, f64)]) -> bool {
    b.iter().any(|(lo, hi)| !(lo < hi))
}

fn intersect(a: &[(f64, f64)], b: &[(f64, f64)]) -> Region {
    a.iter()
        .zip(b)
        .map(|(&(alo, ahi), &(blo, bhi))| (alo.max(blo), ahi.min(bhi)))
        .collect()
}

impl CanonicalMeasure<'_> {
    fn check_region(&self, a: &[(f64, f64)]) -> Result<()> {
        let d = &self.problem.chart.domain;
        if a.len() != d.len() {
            return Err(Error::Invalid(format!(
                "set has {} axes, chart domain has {}",
                a.len(),
                d.len()
            )));
        }
        for (&(lo, hi), &(dlo, dhi)) in a.iter().zip(d) {
            let slack = 1e-12 * (dhi - dlo);
            if lo.is_nan() || hi.is_nan() || lo < dlo - slack || hi > dhi + slack {
                return Err(Error::Invalid(format!(
                    "set [{lo}, {hi}] leaves the chart domain [{dlo}, {dhi}]"
                )));
            }
        }
        Ok(())
    }

    fn raw(&self, a: &[(f64, f64)]) -> Result<f64> {
        if is_empty_box(a) {
            return Ok(0.0);
        }
        Ok(self.problem.integrate(a)?.value)
    }

    /// `μ_M(A)` for a box `A` of chart parameters.
    pub fn of_box(&self, a: &[(f64, f64)]) -> Result<f64> {
        self.check_region(a)?;
        Ok(self.raw(a)? / self.total)
    }

    /// `μ_M(A₁ ∪ … ∪ A_j)`. Curves merge overlapping intervals; higher
    /// dimensions use inclusion–exclusion.
    pub fn of_union(&self, boxes: &[Region]) -> Result<f64> {
        for b in boxes {
            self.check_region(b)?;
        }
        let boxes: Vec<&Region> = boxes.iter().filter(|b| !is_empty_box(b)).collect();
        if boxes.is_empty() {
            return Ok(0.0);
        }
        if self.problem.chart.dim() == 1 {
            let mut iv: Vec<(f64, f64)> = boxes.iter().map(|b| b[0]).collect();
            iv.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut merged: Vec<(f64, f64)> = Vec::new();
            for (lo, hi) in iv {
                match merged.last_mut() {
                    Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                    _ => merged.push((lo, hi)),
                }
            }
            let mut sum = 0.0;
            for m in merged {
                sum += self.raw(&[m])?;
            }
            return Ok(sum / self.total);
        }
        if boxes.len() > MAX_UNION {
            return Err(Error::Invalid(format!(
                "unions of more than {MAX_UNION} boxes are not supported in dimension > 1"
            )));
        }
        let mut sum = 0.0;
        for mask in 1u32..(1 << boxes.len()) {
            let mut inter: Region = self.problem.chart.domain.clone();
            for (i, b) in boxes.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    inter = intersect(&inter, b);
                }
            }
            let v = self.raw(&inter)?;
            if mask.count_ones() % 2 == 1 {
                sum += v;
            } else {
                sum -= v;
            }
        }
        Ok(sum / self.total)
    }
}

/// Density of `μ_M` in the chart parameter: `f(g(u)) · √det(DgᵀDg)` over
/// `∫_D f dHʳ`. Needs a one-dimensional chart; the grid must lie in the domain.
pub fn canonical_density(cp: &CanonicalProblem, grid: &GridSpec) -> Result<DensityTable> {
    if cp.chart.dim() != 1 {
        return Err(Error::Invalid(format!(
            "density tables need a one-dimensional chart, this one has dimension {}",
            cp.chart.dim()
        )));
    }
    let (dlo, dhi) = cp.chart.domain[0];
    let slack = 1e-12 * (dhi - dlo);
    if grid.min < dlo - slack || grid.max > dhi + slack {
        return Err(Error::Invalid(format!(
            "grid [{}, {}] leaves the chart domain [{dlo}, {dhi}]",
            grid.min, grid.max
        )));
    }
    let nodes = grid.nodes()?;
    let mut t = table::tabulate(Method::Canonical, &nodes, (dlo, dhi), Support::Bounded, |u| cp.weight(&[u]))?;
    let (peak, edge) = cp.peak_and_edge();
    if peak > 0.0 && edge >= TRUNCATION_RATIO * peak {
        t.warnings.push(format!(
            "chart domain [{dlo}, {dhi}] truncates the level set: edge weight is {:.3e} of the peak",
            edge / peak
        ));
    }
    Ok(t)
}

/// `μ_M(A)` for a box `A` of chart parameters.
pub fn canonical_measure_of(cp: &CanonicalProblem, a: &[(f64, f64)]) -> Result<f64> {
    cp.measure()?.of_box(a)
}

/// Outcome of [`outer_measure_checks`].
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OuterMeasureReport {
    pub checks: usize,
    pub violations: Vec<String>,
    /// Overlapping pairs whose union measured strictly less than the sum.
    pub strict_subadditive: usize,
    pub empty_measure: f64,
}

impl OuterMeasureReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn contains(outer: &[(f64, f64)], inner: &[(f64, f64)]) -> bool {
    outer
        .iter()
        .zip(inner)
        .all(|(o, i)| o.0 <= i.0 && i.1 <= o.1)
}

fn separation(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&(alo, ahi), &(blo, bhi))| (blo - ahi).max(alo - bhi).max(0.0).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Check the metric outer measure properties of `μ_M` on a finite family of
/// boxes in chart parameters: `μ(∅) = 0`, monotonicity, subadditivity, and
/// additivity on positively separated pairs.
///
/// Separation is measured in chart parameters; for charts that are
/// bi-Lipschitz on the domain this is equivalent to separation on `M`.
pub fn outer_measure_checks(cp: &CanonicalProblem, test_sets: &[Region]) -> Result<OuterMeasureReport> {
    let m = cp.measure()?;
    let mut rep = OuterMeasureReport {
        empty_measure: m.of_union(&[])?,
        ..OuterMeasureReport::default()
    };
    rep.checks += 1;
    if rep.empty_measure != 0.0 {
        rep.violations.push(format!("measure of the empty set is {}", rep.empty_measure));
    }
    let single = test_sets
        .iter()
        .map(|a| m.of_box(a))
        .collect::<Result<Vec<_>>>()?;
    for i in 0..test_sets.len() {
        for j in 0..test_sets.len() {
            if i == j {
                continue;
            }
            let (a, b) = (&test_sets[i], &test_sets[j]);
            if contains(b, a) {
                rep.checks += 1;
                if single[i] > single[j] + OUTER_TOL {
                    rep.violations.push(format!(
                        "monotonicity: set {i} inside set {j} but {} > {}",
                        single[i], single[j]
                    ));
                }
            }
            if i < j {
                let union = m.of_union(&[a.clone(), b.clone()])?;
                rep.checks += 1;
                if union > single[i] + single[j] + OUTER_TOL {
                    rep.violations.push(format!(
                        "subadditivity: sets {i} and {j} have union {union} > {} + {}",
                        single[i], single[j]
                    ));
                } else if union < single[i] + single[j] - OUTER_TOL {
                    rep.strict_subadditive += 1;
                }
                if separation(a, b) > 0.0 {
                    rep.checks += 1;
                    let gap = (union - single[i] - single[j]).abs();
                    if gap > OUTER_TOL {
                        rep.violations.push(format!(
                            "additivity: separated sets {i} and {j} miss by {gap:e}"
                        ));
                    }
                }
            }
        }
    }
    if test_sets.len() > 2 && (cp.chart.dim() == 1 || test_sets.len() <= MAX_UNION) {
        rep.checks += 1;
        let all = m.of_union(test_sets)?;
        let sum: f64 = single.iter().sum();
        if all > sum + OUTER_TOL {
            rep.violations.push(format!("subadditivity of the whole family: {all} > {sum}"));
        }
    }
    Ok(rep)
}

/// Chart-free estimate of `μ_M(A)` for validation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectionCheck {
    pub estimate: f64,
    pub stderr: f64,
    /// `μ_M(A)` by chart quadrature.
    pub expected: f64,
    pub in_tube: u64,
    pub skipped: u64,
    pub within_3_sigma: bool,
}

/// Recover chart parameters of a point on `M` by Gauss–Newton from the
/// nearest sample-grid node.
fn chart_inverse(chart: &Chart, seeds: &[(Vec<f64>, Vec<f64>)], y: &[f64]) -> Option<Vec<f64>> {
    let (u0, _) = seeds
        .iter()
        .min_by(|a, b| linalg::dist(&a.1, y).total_cmp(&linalg::dist(&b.1, y)))?;
    let mut u = u0.clone();
    for _ in 0..50 {
        let g = chart.point(&u).ok()?;
        let r: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - b).collect();
        if linalg::norm(&r) <= 1e-10 * (1.0 + linalg::norm(y)) {
            return Some(u);
        }
        let j: Matrix = chart.jacobian(&u).ok()?;
        let step = j.gram_cols().solve(&j.tr_mul_vec(&r))?;
        for (ui, si) in u.iter_mut().zip(&step) {
            *ui += si;
        }
    }
    let g = chart.point(&u).ok()?;
    (linalg::dist(&g, y) <= 1e-8 * (1.0 + linalg::norm(y))).then_some(u)
}

/// Estimate `μ_M(A)` without quadrature: draw `x ~ μ`, project it onto `M`
/// with [`geometry::project_to_level_set`], keep draws that moved less than
/// `eps`, and count how many land in `A` (read off through the chart).
///
/// The projection flow moves along the normal space of `M`, so the kept
/// draws fill a metric tube whose normalized mass converges to `μ_M` as
/// `eps → 0`.
#[allow(clippy::too_many_arguments)]
pub fn projection_cross_check(
    cp: &CanonicalProblem,
    p: &LevelSetProblem,
    a: &[(f64, f64)],
    eps: f64,
    samples: usize,
    seed: u64,
    sampler: &SamplerSpec,
    workers: Option<usize>,
) -> Result<ProjectionCheck> {
    cp.chart.validate(p)?;
    sampler.validate(p.dim)?;
    let expected = canonical_measure_of(cp, a)?;
    let seeds: Vec<(Vec<f64>, Vec<f64>)> = cp
        .chart
        .sample_grid()
        .into_iter()
        .filter_map(|u| cp.chart.point(&u).ok().map(|x| (u, x)))
        .collect();
    let domain = &cp.chart.domain;
    let per_stream = sampler::run_streams(samples, workers, |stream, n| {
        let mut rng = sampler::stream_rng(seed, u64::MAX - 2, stream as u64);
        let mut x = vec![0.0; p.dim];
        let (mut tube, mut hit, mut skipped) = (0u64, 0u64, 0u64);
        for _ in 0..n {
            sampler.draw(&p.density, &mut rng, &mut x)?;
            // cheap first-order distance estimate before the full projection
            let near = match (p.offset(&x), geometry::smallest_singular_value(p, &x)) {
                (Ok(eta), Ok(sigma)) if sigma > 0.0 => linalg::norm(&eta) / sigma < 2.0 * eps,
                (Err(e), _) | (_, Err(e)) if !e.is_domain() => return Err(e),
                _ => {
                    skipped += 1;
                    continue;
                }
            };
            if !near {
                continue;
            }
            let proj = match geometry::project_to_level_set(p, &x, Projection::default()) {
                Ok(r) => r,
                Err(_) => {
                    skipped += 1;
                    continue;
                }
            };
            if linalg::dist(&proj.start, &proj.end) >= eps {
                continue;
            }
            let Some(u) = chart_inverse(&cp.chart, &seeds, &proj.end) else {
                skipped += 1;
                continue;
            };
            if !u.iter().zip(domain).all(|(v, (lo, hi))| lo <= v && v <= hi) {
                // the chart does not cover this part of M
                skipped += 1;
                continue;
            }
            tube += 1;
            if u.iter().zip(a).all(|(v, (lo, hi))| lo <= v && v <= hi) {
                hit += 1;
            }
        }
        Ok((tube, hit, skipped))
    })?;
    let (tube, hit, skipped) = per_stream
        .iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    if tube == 0 {
        return Err(Error::Sampler(format!("no draw landed within {eps} of the level set")));
    }
    let estimate = hit as f64 / tube as f64;
    let stderr = (estimate * (1.0 - estimate) / tube as f64).sqrt();
    Ok(ProjectionCheck {
        estimate,
        stderr,
        expected,
        in_tube: tube,
        skipped,
        within_3_sigma: (estimate - expected).abs() <= 3.0 * stderr.max(1.0 / tube as f64),
    })
}
