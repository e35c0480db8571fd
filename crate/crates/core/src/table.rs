//! [`DensityTable`]: the common output of every conditioning method.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Relative tolerance of every normalizing quadrature.
pub const NORMALIZATION_REL_TOL: f64 = 1e-8;
/// Trapezoid mass tolerance for quadrature-backed tables.
pub const QUADRATURE_MASS_TOL: f64 = 2e-3;
/// Fraction of the grid width added on each side for normalization.
pub const TAIL_EXTENSION: f64 = 0.25;
/// Edge density (relative to the peak) above which a tail warning is raised.
pub const TAIL_WARNING_RATIO: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tube,
    Diffeo,
    Shear,
    Conditional,
    Canonical,
    Bayes,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Tube => "tube",
            Method::Diffeo => "diffeo",
            Method::Shear => "shear",
            Method::Conditional => "conditional",
            Method::Canonical => "canonical",
            Method::Bayes => "bayes",
        }
    }
}

/// How far past the grid hull a normalizing integral reaches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Support {
    /// Unbounded parameter: extend the hull by 25% on each side and audit the tails.
    #[default]
    Extend,
    /// The hull is the whole parameter domain (an angle, a chart box).
    Bounded,
}

/// Evenly spaced grid description.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    #[serde(default)]
    pub support: Support,
}

impl GridSpec {
    pub fn new(min: f64, max: f64, points: usize) -> Self {
        GridSpec {
            min,
            max,
            points,
            support: Support::Extend,
        }
    }

    pub fn bounded(mut self) -> Self {
        self.support = Support::Bounded;
        self
    }

    pub fn nodes(&self) -> Result<Vec<f64>> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min >= self.max {
            return Err(Error::Invalid(format!(
                "grid bounds [{}, {}] must be finite and increasing",
                self.min, self.max
            )));
        }
        if self.points < 2 {
            return Err(Error::Invalid("grid needs at least two points".into()));
        }
        let h = (self.max - self.min) / (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|i| {
                if i + 1 == self.points {
                    self.max
                } else {
                    self.min + h * i as f64
                }
            })
            .collect())
    }

    /// Integration interval for normalization under this grid's support policy.
    pub fn normalization_interval(&self) -> (f64, f64) {
        normalization_interval(self.min, self.max, self.support)
    }
}

pub fn normalization_interval(lo: f64, hi: f64, support: Support) -> (f64, f64) {
    match support {
        Support::Bounded => (lo, hi),
        Support::Extend => {
            let w = hi - lo;
            (lo - TAIL_EXTENSION * w, hi + TAIL_EXTENSION * w)
        }
    }
}

/// A one-dimensional density over a parameter grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityTable {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Denominator that was divided out (marginal density, evidence, or total mass).
    pub normalization: f64,
    pub method: Method,
    pub stderr: Option<Vec<f64>>,
    /// Diagnostics raised while building the table (tails, skipped points).
    pub warnings: Vec<String>,
}

impl DensityTable {
    pub fn new(
        grid: Vec<f64>,
        values: Vec<f64>,
        normalization: f64,
        method: Method,
        stderr: Option<Vec<f64>>,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Invalid("density table grid is empty".into()));
        }
        if grid.len() != values.len() {
            return Err(Error::Invalid("grid and values differ in length".into()));
        }
        if let Some(se) = &stderr {
            if se.len() != grid.len() {
                return Err(Error::Invalid("grid and stderr differ in length".into()));
            }
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("grid must be strictly increasing".into()));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NegativeDensity {
                value: *v,
                point: vec![grid[i]],
            });
        }
        if !(normalization.is_finite() && normalization > 0.0) {
            return Err(Error::ZeroMass(normalization));
        }
        Ok(DensityTable {
            grid,
            values,
            normalization,
            method,
            stderr,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn trapezoid_mass(&self) -> f64 {
        quad::trapezoid(&self.grid, &self.values)
    }

    /// Allowed deviation of [`Self::trapezoid_mass`] from one.
    pub fn mass_tolerance(&self) -> f64 {
        match &self.stderr {
            None => QUADRATURE_MASS_TOL,
            Some(se) => {
                let w = quad::trapezoid_weights(&self.grid);
                let agg = w
                    .iter()
                    .zip(se)
                    .map(|(w, s)| (w * s).powi(2))
                    .sum::<f64>()
                    .sqrt();
                3.0 * agg
            }
        }
    }

    pub fn is_normalized(&self) -> bool {
        (self.trapezoid_mass() - 1.0).abs() <= self.mass_tolerance()
    }

    /// Linear interpolation, zero outside the grid.
    pub fn value_at(&self, u: f64) -> f64 {
        let g = &self.grid;
        if u < g[0] || u > g[g.len() - 1] {
            return 0.0;
        }
        let i = g.partition_point(|&x| x <= u);
        if i == 0 {
            return self.values[0];
        }
        if i >= g.len() {
            return self.values[g.len() - 1];
        }
        let t = (u - g[i - 1]) / (g[i] - g[i - 1]);
        self.values[i - 1] * (1.0 - t) + self.values[i] * t
    }

    /// CSV with header `u,density[,stderr]`, 17 significant digits, LF endings.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut out = String::new();
        match &self.stderr {
            None => {
                out.push_str("u,density\n");
                for (u, v) in self.grid.iter().zip(&self.values) {
                    let _ = writeln!(out, "{u:.16e},{v:.16e}");
                }
            }
            Some(se) => {
                out.push_str("u,density,stderr\n");
                for ((u, v), s) in self.grid.iter().zip(&self.values).zip(se) {
                    let _ = writeln!(out, "{u:.16e},{v:.16e},{s:.16e}");
                }
            }
        }
        w.write_all(out.as_bytes())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    /// Parse a table written by [`Self::write_csv`]; values are taken as already normalized.
    pub fn read_csv<R: BufRead>(r: R, method: Method) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Table("missing header row".into()))?
            .map_err(|e| Error::Table(e.to_string()))?;
        let cols: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
        let with_stderr = match cols.as_slice() {
            ["u", "density"] => false,
            ["u", "density", "stderr"] => true,
            _ => return Err(Error::Table(format!("unexpected header '{header}'"))),
        };
        let (mut grid, mut values, mut se) = (Vec::new(), Vec::new(), Vec::new());
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Table(e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let want = if with_stderr { 3 } else { 2 };
            if fields.len() != want {
                return Err(Error::Table(format!(
                    "line {}: expected {want} fields, found {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Table(format!("line {}: bad number '{s}'", lineno + 2)))
            };
            grid.push(num(fields[0])?);
            values.push(num(fields[1])?);
            if with_stderr {
                se.push(num(fields[2])?);
            }
        }
        DensityTable::new(grid, values, 1.0, method, with_stderr.then_some(se))
    }
}

/// Evaluate an unnormalized density on `grid` and divide by its integral over
/// the normalization interval.
pub(crate) fn tabulate<F>(
    method: Method,
    grid: &[f64],
    interval: (f64, f64),
    support: Support,
    mut density: F,
) -> Result<DensityTable>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::Invalid("density table grid is empty".into()));
    }
    let mut warnings = Vec::new();
    let mut raw = Vec::with_capacity(grid.len());
    let mut skipped = 0usize;
    for &u in grid {
        match density(u) {
            Ok(v) if v < 0.0 => {
                return Err(Error::NegativeDensity {
                    value: v,
                    point: vec![u],
                })
            }
            Ok(v) => raw.push(v),
            Err(e) if e.is_domain() => {
                skipped += 1;
                raw.push(0.0);
            }
            Err(e) => return Err(e),
        }
    }
    crate::error::check_skips(skipped, grid.len())?;
    if skipped > 0 {
        warnings.push(format!(
            "{skipped} grid point(s) outside the expression domain were set to 0"
        ));
    }

    let (lo, hi) = interval;
    let checked = |v: f64, u: f64| {
        if v < 0.0 {
            Err(Error::NegativeDensity {
                value: v,
                point: vec![u],
            })
        } else {
            Ok(v)
        }
    };
    let z = quad::adaptive_simpson(|u| checked(density(u)?, u), lo, hi, NORMALIZATION_REL_TOL)?;
    if z.skipped > 0 {
        warnings.push(format!(
            "normalization skipped {} quadrature point(s) outside the expression domain",
            z.skipped
        ));
    }
    if z.depth_limited {
        warnings.push("normalization quadrature hit its recursion limit".into());
    }
    if !(z.value > 1e-300) {
        return Err(Error::ZeroMass(z.value));
    }

    if support == Support::Extend {
        let peak = raw.iter().cloned().fold(0.0, f64::max);
        let edge = [lo, hi]
            .into_iter()
            .map(|u| density(u).unwrap_or(0.0))
            .fold(0.0, f64::max);
        if edge > TAIL_WARNING_RATIO * peak {
            warnings.push(format!(
                "tail: density at the extended edge is {:.3e} of the peak; normalization may be truncated",
                edge / peak.max(f64::MIN_POSITIVE)
            ));
            // a heavy tail that keeps adding mass means the density is not integrable here
            let w = hi - lo;
            let wide = quad::adaptive_simpson(
                |u| checked(density(u)?, u),
                lo - w,
                hi + w,
                NORMALIZATION_REL_TOL,
            )?;
            if wide.value > 1.5 * z.value {
                return Err(Error::Invalid(format!(
                    "normalization diverges on extension: mass {:.6e} on [{lo}, {hi}] grows to {:.6e}",
                    z.value, wide.value
                )));
            }
        }
    }

    let values = raw.iter().map(|v| v / z.value).collect();
    let mut t = DensityTable::new(grid.to_vec(), values, z.value, method, None)?;
    t.warnings = warnings;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_hit_endpoints() {
        let g = GridSpec::new(-3.0, 3.0, 601).nodes().unwrap();
        assert_eq!(g.len(), 601);
        assert_eq!(g[0], -3.0);
        assert_eq!(g[600], 3.0);
        assert!((g[300]).abs() < 1e-15);
        assert!(GridSpec::new(1.0, 1.0, 10).nodes().is_err());
        assert!(GridSpec::new(0.0, 1.0, 1).nodes().is_err());
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(DensityTable::new(vec![], vec![], 1.0, Method::Diffeo, None).is_err());
        assert!(DensityTable::new(vec![0.0, 0.0], vec![1.0, 1.0], 1.0, Method::Diffeo, None).is_err());
        assert!(DensityTable::new(vec![0.0, 1.0], vec![1.0, -1.0], 1.0, Method::Diffeo, None).is_err());
        assert!(DensityTable::new(vec![0.0, 1.0], vec![1.0, 1.0], 0.0, Method::Diffeo, None).is_err());
    }

    #[test]
    fn tabulated_gaussian_is_normalized() {
        let grid = GridSpec::new(-4.0, 4.0, 401);
        let nodes = grid.nodes().unwrap();
        let t = tabulate(
            Method::Conditional,
            &nodes,
            grid.normalization_interval(),
            grid.support,
            |u| Ok((-u * u).exp()),
        )
        .unwrap();
        assert!((t.normalization - std::f64::consts::PI.sqrt()).abs() < 1e-9);
        assert!(t.is_normalized());
        assert!(t.warnings.is_empty(), "{:?}", t.warnings);
    }

    #[test]
    fn heavy_tail_warns_and_divergent_tail_errors() {
        let grid = GridSpec::new(-2.0, 2.0, 101);
        let nodes = grid.nodes().unwrap();
        let cauchy = tabulate(
            Method::Conditional,
            &nodes,
            grid.normalization_interval(),
            grid.support,
            |u| Ok(1.0 / (1.0 + u * u)),
        )
        .unwrap();
        assert!(cauchy.warnings.iter().any(|w| w.starts_with("tail")));
        let flat = tabulate(
            Method::Conditional,
            &nodes,
            grid.normalization_interval(),
            grid.support,
            |_| Ok(1.0),
        );
        assert!(flat.is_err());
    }

    #[test]
    fn csv_keeps_full_precision() {
        let t = DensityTable::new(
            vec![-1.0, 0.1, 2.0 / 3.0],
            vec![std::f64::consts::PI, 1e-300, 0.0],
            2.0,
            Method::Shear,
            Some(vec![0.1, 0.2, 1.0 / 7.0]),
        )
        .unwrap();
        let s = t.to_csv_string();
        assert!(s.starts_with("u,density,stderr\n"));
        let back = DensityTable::read_csv(s.as_bytes(), Method::Shear).unwrap();
        assert_eq!(back.grid, t.grid);
        assert_eq!(back.values, t.values);
        assert_eq!(back.stderr, t.stderr);
        assert!(DensityTable::read_csv("x,y\n1,2\n".as_bytes(), Method::Shear).is_err());
    }

    #[test]
    fn interpolation() {
        let t = DensityTable::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 0.0], 1.0, Method::Bayes, None).unwrap();
        assert_eq!(t.value_at(0.5), 1.0);
        assert_eq!(t.value_at(1.0), 2.0);
        assert_eq!(t.value_at(2.0), 0.0);
        assert_eq!(t.value_at(3.0), 0.0);
    }
}
