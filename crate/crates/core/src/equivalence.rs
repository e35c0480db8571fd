//! When does a fan measure coincide with the canonical measure?
//!
//! They agree (for almost every level `s`) when `Jφ = √det(Dφ Dφᵀ)` is
//! constant on `Mˢ` and the smallest singular value of `Dφ` stays bounded away
//! from zero on a neighbourhood of `Mˢ`. [`check_theorem3`] samples both
//! hypotheses; [`density_distance`] measures how far two tables are apart.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Chart, LevelSetProblem};
use crate::quad;
use crate::sampler;
use crate::table::DensityTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    CoincideExpected,
    CoincideNotExpected,
    Inconclusive,
}

/// Decision thresholds for [`check_theorem3`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Largest `(max − min)/mean` of `Jφ` on `Mˢ` that still counts as constant.
    pub constancy: f64,
    /// Smallest acceptable `σ_min(Dφ)` on the tube.
    pub sigma: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            constancy: 1e-3,
            sigma: 1e-3,
        }
    }
}

/// Standing caveats attached to every report.
pub const CAVEATS: [&str; 2] = [
    "the equality holds for almost every level; whether this particular level is exceptional cannot be decided numerically",
    "continuous differentiability of J_phi near the level set is assumed, not verified",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub j_values: Vec<f64>,
    pub j_mean: f64,
    pub j_relspread: f64,
    pub sigma_min_observed: f64,
    pub constancy_pass: bool,
    pub sigma_pass: bool,
    pub verdict: Verdict,
    pub thresholds: Thresholds,
    pub level: Vec<f64>,
    pub tube_radius: f64,
    /// Points skipped because an expression was undefined there, on `Mˢ` and in the tube.
    pub skipped_on_level_set: usize,
    pub skipped_in_tube: usize,
    pub caveats: Vec<String>,
}

/// Point uniformly distributed in the ball of radius `r` around `x`.
fn perturb<R: Rng>(rng: &mut R, x: &[f64], r: f64) -> Vec<f64> {
    let normal = sampler::Marginal::standard_normal();
    let dir: Vec<f64> = x.iter().map(|_| normal.sample(rng)).collect();
    let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    let radius = r * rng.random::<f64>().powf(1.0 / x.len() as f64);
    x.iter().zip(&dir).map(|(xi, d)| xi + radius * d / len).collect()
}

/// Sample `Jφ` on `Mˢ` through the chart and `σ_min(Dφ)` on the tube of
/// radius `tube_radius` around it.
///
/// Chart parameters are drawn uniformly from the chart domain, so the
/// sampled region of `Mˢ` is whatever the domain covers. If more than 1% of
/// the points on either side fall outside an expression's domain the verdict
/// is inconclusive and both pass flags are false.
pub fn check_theorem3(
    p: &LevelSetProblem,
    chart: &Chart,
    tube_radius: f64,
    n_samples: usize,
    seed: u64,
    thresholds: Thresholds,
) -> Result<EquivalenceReport> {
    if n_samples == 0 {
        return Err(Error::Invalid("need at least one sample".into()));
    }
    if !(tube_radius > 0.0 && tube_radius.is_finite()) {
        return Err(Error::Invalid(format!("tube radius must be positive, got {tube_radius}")));
    }
    chart.validate(p)?;
    let mut rng = sampler::stream_rng(seed, u64::MAX - 3, 0);
    let mut j_values = Vec::with_capacity(n_samples);
    let mut sigma_min = f64::INFINITY;
    let (mut skip_m, mut skip_tube) = (0usize, 0usize);
    for _ in 0..n_samples {
        let u: Vec<f64> = chart
            .domain
            .iter()
            .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect();
        let x = match chart.point(&u) {
            Ok(x) => x,
            Err(e) if e.is_domain() => {
                skip_m += 1;
                skip_tube += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        match geometry::jacobian_j(p, &x) {
            Ok(j) => j_values.push(j),
            Err(e) if e.is_domain() => skip_m += 1,
            Err(e) => return Err(e),
        }
        let y = perturb(&mut rng, &x, tube_radius);
        match geometry::smallest_singular_value(p, &y) {
            Ok(s) => sigma_min = sigma_min.min(s),
            Err(e) if e.is_domain() => skip_tube += 1,
            Err(e) => return Err(e),
        }
    }

    let (j_mean, j_relspread) = if j_values.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let mean = j_values.iter().sum::<f64>() / j_values.len() as f64;
        let max = j_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = j_values.iter().cloned().fold(f64::INFINITY, f64::min);
        (mean, (max - min) / mean)
    };
    let inconclusive = skip_m * 100 > n_samples || skip_tube * 100 > n_samples || j_values.is_empty();
    let (constancy_pass, sigma_pass, verdict) = if inconclusive {
        (false, false, Verdict::Inconclusive)
    } else {
        let c = j_relspread <= thresholds.constancy;
        let s = sigma_min >= thresholds.sigma;
        let v = if c && s {
            Verdict::CoincideExpected
        } else {
            Verdict::CoincideNotExpected
        };
        (c, s, v)
    };
    Ok(EquivalenceReport {
        j_values,
        j_mean,
        j_relspread,
        sigma_min_observed: sigma_min,
        constancy_pass,
        sigma_pass,
        verdict,
        thresholds,
        level: p.level.clone(),
        tube_radius,
        skipped_on_level_set: skip_m,
        skipped_in_tube: skip_tube,
        caveats: CAVEATS.iter().map(|s| s.to_string()).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityDistance {
    /// Largest `|a − b| / max(a, b)` where `max(a, b) ≥ 1e-3`.
    pub sup_rel: f64,
    pub l1: f64,
    /// Total variation distance, `l1 / 2`.
    pub tv: f64,
    /// `b` was interpolated onto the grid of `a`.
    pub resampled: bool,
}

/// Relative difference in grid hulls tolerated before refusing to resample.
const HULL_TOL: f64 = 1e-2;
/// Floor below which relative differences are not reported.
const SUP_REL_FLOOR: f64 = 1e-3;

/// Distance between two density tables after normalizing each by its
/// trapezoid mass. Tables on different grids are compared on the grid of `a`
/// with `b` linearly interpolated, provided their hulls agree.
pub fn density_distance(a: &DensityTable, b: &DensityTable) -> Result<DensityDistance> {
    let same = a.grid.len() == b.grid.len()
        && a.grid
            .iter()
            .zip(&b.grid)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0));
    let (ga, gb) = (&a.grid, &b.grid);
    let bv: Vec<f64> = if same {
        b.values.clone()
    } else {
        let width = ga[ga.len() - 1] - ga[0];
        let lo_gap = (ga[0] - gb[0]).abs();
        let hi_gap = (ga[ga.len() - 1] - gb[gb.len() - 1]).abs();
        if lo_gap > HULL_TOL * width || hi_gap > HULL_TOL * width {
            return Err(Error::GridMismatch(format!(
                "grids cover [{}, {}] and [{}, {}]",
                ga[0],
                ga[ga.len() - 1],
                gb[0],
                gb[gb.len() - 1]
            )));
        }
        ga.iter().map(|&u| b.value_at(u)).collect()
    };
    let ma = quad::trapezoid(ga, &a.values);
    let mb = quad::trapezoid(ga, &bv);
    if !(ma > 0.0) || !(mb > 0.0) {
        return Err(Error::ZeroMass(ma.min(mb)));
    }
    let na: Vec<f64> = a.values.iter().map(|v| v / ma).collect();
    let nb: Vec<f64> = bv.iter().map(|v| v / mb).collect();
    let diff: Vec<f64> = na.iter().zip(&nb).map(|(x, y)| (x - y).abs()).collect();
    let sup_rel = na
        .iter()
        .zip(&nb)
        .zip(&diff)
        .filter(|((x, y), _)| x.max(**y) >= SUP_REL_FLOOR)
        .map(|((x, y), d)| d / x.max(*y))
        .fold(0.0, f64::max);
    let l1 = quad::trapezoid(ga, &diff);
    Ok(DensityDistance {
        sup_rel,
        l1,
        tv: 0.5 * l1,
        resampled: !same,
    })
}
