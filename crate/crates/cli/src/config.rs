//! JSON run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use singcond::equivalence::Thresholds;
use singcond::fan::TubeSchedule;
use singcond::sampler::{Marginal, SamplerSpec};
use singcond::{Expression, GridSpec, Support};

use crate::CliError;

/// Smallest grid the CLI accepts.
pub const MIN_GRID_POINTS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMethod {
    Tube,
    Diffeo,
    Shear,
    Conditional,
    Canonical,
    Bayes,
    Check,
    Compare,
    Appendix,
}

impl RunMethod {
    pub fn name(self) -> &'static str {
        match self {
            RunMethod::Tube => "tube",
            RunMethod::Diffeo => "diffeo",
            RunMethod::Shear => "shear",
            RunMethod::Conditional => "conditional",
            RunMethod::Canonical => "canonical",
            RunMethod::Bayes => "bayes",
            RunMethod::Check => "check",
            RunMethod::Compare => "compare",
            RunMethod::Appendix => "appendix",
        }
    }
}

/// A number, or a constant expression such as `"3*pi/4"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Num(f64),
    Expr(String),
}

impl Scalar {
    pub fn value(&self, what: &str) -> Result<f64, CliError> {
        match self {
            Scalar::Num(v) => Ok(*v),
            Scalar::Expr(s) => {
                let e: Expression = s
                    .parse()
                    .map_err(|e| CliError::Config(format!("{what}: {e}")))?;
                if !e.is_constant() {
                    return Err(CliError::Config(format!("{what}: '{s}' is not a constant")));
                }
                e.eval(&[])
                    .map_err(|e| CliError::Config(format!("{what}: {e}")))
            }
        }
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Num(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: Scalar,
    pub max: Scalar,
    pub points: usize,
    #[serde(default)]
    pub support: Support,
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec, CliError> {
        if self.points < MIN_GRID_POINTS {
            return Err(CliError::Config(format!(
                "grid.points must be at least {MIN_GRID_POINTS}, got {}",
                self.points
            )));
        }
        let (min, max) = (self.min.value("grid.min")?, self.max.value("grid.max")?);
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(CliError::Config(format!("grid needs finite min < max, got [{min}, {max}]")));
        }
        Ok(GridSpec {
            min,
            max,
            points: self.points,
            support: self.support,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartConfig {
    pub map: Vec<String>,
    pub domain: Vec<(Scalar, Scalar)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeConfig {
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Box in ψ-space; `null` bounds are infinite.
    #[serde(default)]
    pub region: Option<Vec<(Option<f64>, Option<f64>)>>,
    /// Also write a histogram table at this tube radius (needs `grid`).
    #[serde(default)]
    pub histogram_eps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesConfig {
    pub prior: String,
    pub noise: String,
    pub forward: String,
    pub likelihood: String,
    pub measurement: Scalar,
    #[serde(default)]
    pub prior_sampler: Option<Marginal>,
    #[serde(default)]
    pub noise_sampler: Option<Marginal>,
    /// Draws for the pushforward check; needs both samplers and a seed.
    #[serde(default)]
    pub pushforward_samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Second chart coordinate `x2(t)` for the wrong-coordinates control.
    #[serde(default)]
    pub control_chart: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_tube_radius")]
    pub tube_radius: f64,
    #[serde(default = "default_check_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
}

fn default_tube_radius() -> f64 {
    0.1
}

fn default_check_samples() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// CSV paths, relative to the config file.
    pub a: String,
    pub b: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendixConfig {
    #[serde(default = "default_rho_steps")]
    pub rho_steps: usize,
}

pub fn default_rho_steps() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: RunMethod,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub density: Option<String>,
    #[serde(default)]
    pub phi: Vec<String>,
    #[serde(default)]
    pub psi: Vec<String>,
    #[serde(default)]
    pub level: Vec<Scalar>,
    #[serde(default)]
    pub inverse: Option<Vec<String>>,
    #[serde(default)]
    pub chi: Option<String>,
    #[serde(default)]
    pub chart: Option<ChartConfig>,
    /// Joint density `f(u, s)` for `method = conditional`.
    #[serde(default)]
    pub joint: Option<String>,
    #[serde(default)]
    pub bayes: Option<BayesConfig>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub tube: Option<TubeConfig>,
    #[serde(default)]
    pub sampler: Option<SamplerSpec>,
    #[serde(default)]
    pub check: Option<CheckConfig>,
    #[serde(default)]
    pub compare: Option<CompareConfig>,
    #[serde(default)]
    pub appendix: Option<AppendixConfig>,
    /// File name prefix for everything the run writes.
    #[serde(default)]
    pub output: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn prefix(&self) -> &str {
        self.output.as_deref().unwrap_or(self.method.name())
    }

    /// Replace every seed the run will use.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(t) = &mut self.tube {
            t.seed = Some(seed);
        }
        if let Some(b) = &mut self.bayes {
            b.seed = Some(seed);
        }
        if let Some(c) = &mut self.check {
            c.seed = Some(seed);
        }
    }

    /// Check that the fields the chosen method needs are present and sane.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |m: String| Err(CliError::Config(m));
        let method = self.method.name();
        if let Some(p) = &self.output {
            if p.is_empty() || p.contains(['/', '\\']) {
                return cfg(format!("output prefix '{p}' must be a plain file name"));
            }
        }
        if let Some(g) = &self.grid {
            g.spec()?;
        }
        let needs_problem = matches!(
            self.method,
            RunMethod::Tube | RunMethod::Diffeo | RunMethod::Shear | RunMethod::Check
        );
        if needs_problem {
            if self.dim.is_none() || self.density.is_none() || self.phi.is_empty() {
                return cfg(format!("method {method} needs dim, density, phi and psi"));
            }
            if self.level.len() != self.phi.len() {
                return cfg(format!(
                    "level has {} entries but phi has {}",
                    self.level.len(),
                    self.phi.len()
                ));
            }
        }
        let needs_grid = matches!(
            self.method,
            RunMethod::Diffeo | RunMethod::Shear | RunMethod::Conditional | RunMethod::Canonical | RunMethod::Bayes
        );
        if needs_grid && self.grid.is_none() {
            return cfg(format!("method {method} needs a grid"));
        }
        match self.method {
            RunMethod::Diffeo if self.inverse.is_none() => return cfg("method diffeo needs inverse".into()),
            RunMethod::Shear if self.chi.is_none() => return cfg("method shear needs chi".into()),
            RunMethod::Conditional => {
                if self.joint.is_none() || self.level.len() != 1 {
                    return cfg("method conditional needs joint and a scalar level".into());
                }
            }
            RunMethod::Canonical if self.density.is_none() || self.chart.is_none() => {
                return cfg("method canonical needs density and chart".into());
            }
            RunMethod::Check => {
                if self.chart.is_none() {
                    return cfg("method check needs a chart".into());
                }
                if self.check.as_ref().and_then(|c| c.seed).is_none() {
                    return cfg("method check samples the tube and needs check.seed".into());
                }
                if (self.inverse.is_some() || self.chi.is_some()) && self.grid.is_none() {
                    return cfg("comparing densities in method check needs a grid".into());
                }
            }
            RunMethod::Tube => self.validate_tube()?,
            RunMethod::Bayes => {
                let Some(b) = &self.bayes else {
                    return cfg("method bayes needs a bayes section".into());
                };
                if b.pushforward_samples.is_some() {
                    if b.prior_sampler.is_none() || b.noise_sampler.is_none() {
                        return cfg("the pushforward check needs prior_sampler and noise_sampler".into());
                    }
                    if b.seed.is_none() {
                        return cfg("the pushforward check is Monte Carlo and needs bayes.seed".into());
                    }
                }
            }
            RunMethod::Compare if self.compare.is_none() => {
                return cfg("method compare needs a compare section with a and b".into());
            }
            _ => {}
        }
        Ok(())
    }

    fn validate_tube(&self) -> Result<(), CliError> {
        let cfg = |m: &str| Err(CliError::Config(m.into()));
        let Some(t) = &self.tube else {
            return cfg("method tube needs a tube section");
        };
        if t.seed.is_none() {
            return cfg("method tube is Monte Carlo and needs tube.seed");
        }
        if self.sampler.is_none() {
            return cfg("method tube needs a sampler");
        }
        if t.region.is_none() && t.histogram_eps.is_none() {
            return cfg("method tube needs tube.region or tube.histogram_eps");
        }
        if t.histogram_eps.is_some() && self.grid.is_none() {
            return cfg("a tube histogram needs a grid");
        }
        self.schedule()?;
        Ok(())
    }

    pub fn levels(&self) -> Result<Vec<f64>, CliError> {
        self.level
            .iter()
            .enumerate()
            .map(|(i, s)| s.value(&format!("level[{i}]")))
            .collect()
    }

    pub fn schedule(&self) -> Result<TubeSchedule, CliError> {
        let t = self
            .tube
            .as_ref()
            .ok_or_else(|| CliError::Config("missing tube section".into()))?;
        let seed = t
            .seed
            .ok_or_else(|| CliError::Config("missing tube.seed".into()))?;
        let mut sched = TubeSchedule::with_seed(seed);
        if let Some(e) = &t.epsilons {
            sched.epsilons = e.clone();
        }
        if let Some(n) = t.samples {
            sched.samples_per_eps = n;
        }
        sched
            .validate()
            .map_err(|e| CliError::Config(format!("tube: {e}")))?;
        Ok(sched)
    }
}

pub fn chart_domain(c: &ChartConfig) -> Result<Vec<(f64, f64)>, CliError> {
    c.domain
        .iter()
        .enumerate()
        .map(|(i, (lo, hi))| {
            Ok((
                lo.value(&format!("chart.domain[{i}].lo"))?,
                hi.value(&format!("chart.domain[{i}].hi"))?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const RATIO: &str = r#"{
        "method": "diffeo",
        "dim": 2,
        "density": "exp(-(x1^2+x2^2)/2)/(2*pi)",
        "phi": ["x2/x1"],
        "psi": ["x1"],
        "level": [-1],
        "inverse": ["x2", "x1*x2"],
        "grid": {"min": -4, "max": 4, "points": 161}
    }"#;

    #[test]
    fn parses_and_validates() {
        let c = RunConfig::from_json(RATIO).unwrap();
        c.validate().unwrap();
        assert_eq!(c.method, RunMethod::Diffeo);
        assert_eq!(c.levels().unwrap(), vec![-1.0]);
        assert_eq!(c.prefix(), "diffeo");
    }

    #[test]
    fn constant_expressions() {
        assert_eq!(Scalar::Expr("3*pi/4".into()).value("x").unwrap(), 0.75 * std::f64::consts::PI);
        assert!(matches!(Scalar::Expr("x1".into()).value("x"), Err(CliError::Config(_))));
    }

    #[test]
    fn rejections() {
        let bad = |edit: &dyn Fn(&mut serde_json::Value)| {
            let mut v: serde_json::Value = serde_json::from_str(RATIO).unwrap();
            edit(&mut v);
            let c = RunConfig::from_json(&v.to_string()).and_then(|c| c.validate());
            assert!(matches!(c, Err(CliError::Config(_))), "{v}");
        };
        bad(&|v| v["grid"]["points"] = 15.into());
        bad(&|v| v["inverse"] = serde_json::Value::Null);
        bad(&|v| v["level"] = serde_json::json!([]));
        bad(&|v| v["bogus"] = 1.into());
        bad(&|v| v["output"] = "a/b".into());
        bad(&|v| {
            v["method"] = "tube".into();
            v["tube"] = serde_json::json!({"region": [[0, null]]});
            v["sampler"] = serde_json::json!({"kind": "product", "marginals": [{"dist": "normal", "mean": 0, "sd": 1}, {"dist": "normal", "mean": 0, "sd": 1}]});
        });
    }

    #[test]
    fn seed_override() {
        let mut c = RunConfig::from_json(
            r#"{"method": "tube", "tube": {"seed": 1}, "check": {"seed": 2}}"#,
        )
        .unwrap();
        c.override_seed(9);
        assert_eq!(c.tube.unwrap().seed, Some(9));
        assert_eq!(c.check.unwrap().seed, Some(9));
    }
}
