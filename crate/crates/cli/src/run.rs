//! Pipeline orchestration for `singcond run`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Component, Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use singcond::canonical::{self, CanonicalProblem};
use singcond::equivalence::{self, DensityDistance, EquivalenceReport};
use singcond::{appendix, bayes, fan, Chart, DensityTable, Expression, LevelSetProblem, Method};

use crate::config::{chart_domain, RunConfig, RunMethod};
use crate::plot::{emit_plot_script, PlotEntry};
use crate::CliError;

pub const TOOL: &str = "singcond";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Directory that relative paths inside the config resolve against.
    pub base_dir: PathBuf,
    pub workers: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            out_dir: PathBuf::from("."),
            base_dir: PathBuf::from("."),
            workers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSummary {
    pub file: String,
    pub method: Method,
    pub points: usize,
    pub normalization: f64,
    pub trapezoid_mass: f64,
    pub normalized: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipRate {
    pub stage: String,
    pub skipped: u64,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub eps: f64,
    pub in_tube: u64,
    pub in_region: u64,
    pub skipped: u64,
    pub estimate: Option<f64>,
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub warnings: Vec<String>,
    pub skip_rates: Vec<SkipRate>,
    pub epsilons: Vec<EpsilonRow>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub stages: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub files: Vec<String>,
    pub tables: Vec<TableSummary>,
    pub diagnostics: Diagnostics,
    pub results: Value,
    pub timings: Timings,
}

/// Equivalence report plus the measured distance, when densities were compared.
#[derive(Serialize)]
struct CheckOutput<'a> {
    #[serde(flatten)]
    report: &'a EquivalenceReport,
    distance: Option<DensityDistance>,
}

struct Ctx<'a> {
    opts: &'a RunOptions,
    prefix: String,
    files: Vec<String>,
    tables: Vec<TableSummary>,
    diag: Diagnostics,
    stages: BTreeMap<String, f64>,
}

impl Ctx<'_> {
    fn name(&self, suffix: &str) -> String {
        format!("{}{suffix}", self.prefix)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.opts.out_dir.join(name);
        let f = File::create(&path).map_err(|e| io_err(&path, e))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn write_table(&mut self, suffix: &str, label: &str, t: &DensityTable) -> Result<String, CliError> {
        let name = self.name(&format!("{suffix}.csv"));
        let mut w = self.create(&name)?;
        t.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| io_err(&self.opts.out_dir.join(&name), e))?;
        self.diag
            .warnings
            .extend(t.warnings.iter().map(|w| format!("{label}: {w}")));
        self.tables.push(TableSummary {
            file: name.clone(),
            method: t.method,
            points: t.len(),
            normalization: t.normalization,
            trapezoid_mass: t.trapezoid_mass(),
            normalized: t.is_normalized(),
        });
        Ok(name)
    }

    fn write_json(&mut self, suffix: &str, value: &impl Serialize) -> Result<(), CliError> {
        let name = self.name(suffix);
        let mut w = self.create(&name)?;
        serde_json::to_writer_pretty(&mut w, value)
            .map_err(|e| CliError::Io(e.to_string()))?;
        w.write_all(b"\n")
            .and_then(|_| w.flush())
            .map_err(|e| io_err(&self.opts.out_dir.join(&name), e))
    }

    fn write_plot(&mut self, entries: &[PlotEntry<'_>]) -> Result<(), CliError> {
        let name = self.name(".plot.py");
        emit_plot_script(entries, &self.opts.out_dir.join(&name))?;
        self.files.push(name);
        Ok(())
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
        let t0 = Instant::now();
        let out = f();
        *self.stages.entry(name.to_string()).or_default() += t0.elapsed().as_secs_f64();
        out
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Errors while building the problem from the config are the config's fault.
fn setup<T>(r: singcond::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Config(e.to_string()))
}

fn expr(text: &str, what: &str) -> Result<Expression, CliError> {
    text.parse()
        .map_err(|e| CliError::Config(format!("{what}: {e}")))
}

fn exprs(texts: &[String], what: &str) -> Result<Vec<Expression>, CliError> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| expr(t, &format!("{what}[{i}]")))
        .collect()
}

fn problem(c: &RunConfig) -> Result<LevelSetProblem, CliError> {
    let dim = c.dim.ok_or_else(|| CliError::Config("missing dim".into()))?;
    let density = c
        .density
        .as_deref()
        .ok_or_else(|| CliError::Config("missing density".into()))?;
    setup(LevelSetProblem::new(
        dim,
        expr(density, "density")?,
        exprs(&c.phi, "phi")?,
        exprs(&c.psi, "psi")?,
        c.levels()?,
    ))
}

fn chart(c: &RunConfig) -> Result<Chart, CliError> {
    let cc = c
        .chart
        .as_ref()
        .ok_or_else(|| CliError::Config("missing chart".into()))?;
    setup(Chart::new(exprs(&cc.map, "chart.map")?, chart_domain(cc)?))
}

fn grid(c: &RunConfig) -> Result<singcond::GridSpec, CliError> {
    c.grid
        .as_ref()
        .ok_or_else(|| CliError::Config("missing grid".into()))?
        .spec()
}

/// `to` relative to the directory `from`, when both resolve.
fn relative_to(to: &Path, from: &Path) -> Option<String> {
    let to = to.canonicalize().ok()?;
    let from = from.canonicalize().ok()?;
    let a: Vec<Component> = to.components().collect();
    let b: Vec<Component> = from.components().collect();
    let common = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut rel = PathBuf::new();
    for _ in common..b.len() {
        rel.push("..");
    }
    for c in &a[common..] {
        rel.push(c);
    }
    rel.to_str().map(str::to_string)
}

pub fn read_table(path: &Path) -> Result<DensityTable, CliError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    DensityTable::read_csv(BufReader::new(f), Method::Conditional)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Validate `config`, run its pipeline, and write every output into
/// `opts.out_dir`. The report is written last and lists itself.
pub fn run(config: &RunConfig, opts: &RunOptions) -> Result<RunReport, CliError> {
    let t0 = Instant::now();
    config.validate()?;
    std::fs::create_dir_all(&opts.out_dir).map_err(|e| io_err(&opts.out_dir, e))?;
    let mut ctx = Ctx {
        opts,
        prefix: config.prefix().to_string(),
        files: Vec::new(),
        tables: Vec::new(),
        diag: Diagnostics::default(),
        stages: BTreeMap::new(),
    };
    let results = match config.method {
        RunMethod::Diffeo | RunMethod::Shear | RunMethod::Conditional => run_closed_form(config, &mut ctx)?,
        RunMethod::Canonical => run_canonical(config, &mut ctx)?,
        RunMethod::Tube => run_tube(config, &mut ctx)?,
        RunMethod::Bayes => run_bayes(config, &mut ctx)?,
        RunMethod::Check => run_check(config, &mut ctx)?,
        RunMethod::Compare => run_compare(config, &mut ctx)?,
        RunMethod::Appendix => {
            let steps = config
                .appendix
                .as_ref()
                .map_or_else(crate::config::default_rho_steps, |a| a.rho_steps);
            let rep = ctx.stage("sweep", || Ok(appendix_sweep(steps)))?;
            ctx.write_json(".appendix.json", &rep)?;
            json!({ "confirms": rep.confirms(), "sweep": rep })
        }
    };
    let report_name = ctx.name(".report.json");
    ctx.files.push(report_name.clone());
    let report = RunReport {
        tool: TOOL.into(),
        version: VERSION.into(),
        config: config.clone(),
        files: ctx.files,
        tables: ctx.tables,
        diagnostics: ctx.diag,
        results,
        timings: Timings {
            total_seconds: t0.elapsed().as_secs_f64(),
            stages: ctx.stages,
        },
    };
    let path = opts.out_dir.join(&report_name);
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(report)
}

pub fn appendix_sweep(rho_steps: usize) -> appendix::SweepReport {
    appendix::consistency_sweep(&appendix::rho_grid(rho_steps), &appendix::default_c_grid())
}

fn table_result(t: &DensityTable) -> Value {
    json!({
        "normalization": t.normalization,
        "trapezoid_mass": t.trapezoid_mass(),
        "normalized": t.is_normalized(),
    })
}

fn run_closed_form(c: &RunConfig, ctx: &mut Ctx) -> Result<Value, CliError> {
    let g = grid(c)?;
    let t = match c.method {
        RunMethod::Diffeo => {
            let p = problem(c)?;
            let inv = exprs(c.inverse.as_deref().unwrap_or_default(), "inverse")?;
            ctx.stage("diffeo", || Ok(fan::fan_density_diffeo(&p, &inv, &g)?))?
        }
        RunMethod::Shear => {
            let p = problem(c)?;
            let chi = expr(c.chi.as_deref().unwrap_or_default(), "chi")?;
            ctx.stage("shear", || Ok(fan::fan_density_shear(&p, &chi, &g)?))?
        }
        _ => {
            let joint = expr(c.joint.as_deref().unwrap_or_default(), "joint")?;
            let s = c.levels()?[0];
            ctx.stage("conditional", || Ok(fan::conditional_density_1d(&joint, s, &g)?))?
        }
    };
    let label = c.method.name();
    let csv = ctx.write_table("", label, &t)?;
    ctx.write_plot(&[PlotEntry { label: label.into(), csv, table: &t }])?;
    Ok(table_result(&t))
}

fn run_canonical(c: &RunConfig, ctx: &mut Ctx) -> Result<Value, CliError> {
    let density = expr(c.density.as_deref().unwrap_or_default(), "density")?;
    let ch = chart(c)?;
    let mut out = serde_json::Map::new();
    if c.dim.is_some() && !c.phi.is_empty() {
        let p = problem(c)?;
        let check = ch.validate(&p)?;
        out.insert("chart_check".into(), json!(check));
        ctx.diag.skip_rates.push(SkipRate {
            stage: "chart validation".into(),
            skipped: check.skipped as u64,
            total: (check.checked + check.skipped) as u64,
        });
    }
    let cp = setup(CanonicalProblem::new(density, ch))?;
    let (total, warnings) = ctx.stage("measure", || {
        let m = cp.measure()?;
        Ok((m.total, m.warnings.clone()))
    })?;
    ctx.diag.warnings.extend(warnings);
    out.insert("total_measure".into(), json!(total));
    if cp.chart.dim() == 1 {
        let g = grid(c)?;
        let t = ctx.stage("density", || Ok(canonical::canonical_density(&cp, &g)?))?;
        let csv = ctx.write_table("", "canonical", &t)?;
        ctx.write_plot(&[PlotEntry { label: "canonical".into(), csv, table: &t }])?;
        out.insert("table".into(), table_result(&t));
    }
    Ok(Value::Object(out))
}

fn run_tube(c: &RunConfig, ctx: &mut Ctx) -> Result<Value, CliError> {
    let p = problem(c)?;
    let sched = c.schedule()?;
    let tube = c.tube.as_ref().expect("validated");
    let sampler = c.sampler.as_ref().expect("validated");
    setup(sampler.validate(p.dim))?;
    if let Some(w) = sampler.spot_check(&p.density, sched.seed)? {
        ctx.diag.warnings.push(format!("sampler: {w}"));
    }
    let workers = ctx.opts.workers;
    let mut out = serde_json::Map::new();
    if let Some(region) = &tube.region {
        let region: Vec<(f64, f64)> = region
            .iter()
            .map(|(lo, hi)| (lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY)))
            .collect();
        let est = ctx.stage("tube", || Ok(fan::fan_tube_estimate(&p, &region, &sched, sampler, workers)?))?;
        for pt in &est.points {
            ctx.diag.epsilons.push(EpsilonRow {
                eps: pt.eps,
                in_tube: pt.in_tube,
                in_region: pt.in_region,
                skipped: pt.skipped,
                estimate: pt.estimate,
                stderr: pt.stderr,
            });
            ctx.diag.skip_rates.push(SkipRate {
                stage: format!("tube eps={}", pt.eps),
                skipped: pt.skipped,
                total: sched.samples_per_eps as u64,
            });
        }
        ctx.diag.warnings.extend(est.warnings.iter().map(|w| format!("tube: {w}")));
        out.insert("estimate".into(), json!(est.extrapolated));
        out.insert("stderr".into(), json!(est.extrapolated_stderr));
        out.insert("non_monotone".into(), json!(est.non_monotone));
    }
    if let Some(eps) = tube.histogram_eps {
        let g = grid(c)?;
        let t = ctx.stage("histogram", || {
            Ok(fan::tube_histogram(&p, &g, eps, sched.samples_per_eps, sched.seed, sampler, workers)?)
        })?;
        let csv = ctx.write_table(".histogram", "histogram", &t)?;
        ctx.write_plot(&[PlotEntry { label: format!("tube, eps = {eps}"), csv, table: &t }])?;
        out.insert("histogram".into(), table_result(&t));
    }
    Ok(Value::Object(out))
}

fn run_bayes(c: &RunConfig, ctx: &mut Ctx) -> Result<Value, CliError> {
    let b = c.bayes.as_ref().expect("validated");
    let g = grid(c)?;
    let s = b.measurement.value("bayes.measurement")?;
    let mut bp = setup(bayes::BayesProblem::parse(&b.prior, &b.noise, &b.forward, &b.likelihood, s))?;
    if let (Some(pr), Some(nz)) = (&b.prior_sampler, &b.noise_sampler) {
        bp = bp.with_samplers(pr.clone(), nz.clone());
    }
    setup(bp.check_arity())?;
    let mut out = serde_json::Map::new();

    let lik = ctx.stage("likelihood", || Ok(bayes::validate_likelihood(&bp)?))?;
    if !lik.passed {
        ctx.diag.warnings.push(format!(
            "likelihood mass deviates from 1 by up to {:e}",
            lik.max_deviation
        ));
    }
    out.insert("likelihood".into(), json!(lik));
    let mass = ctx.stage("joint mass", || Ok(bayes::joint_mass(&bp)?))?;
    if (mass - 1.0).abs() > bayes::JOINT_MASS_TOL {
        ctx.diag.warnings.push(format!("joint density integrates to {mass}, not 1"));
    }
    out.insert("joint_mass".into(), json!(mass));
    if let Some(n) = b.pushforward_samples {
        let seed = b.seed.expect("validated");
        let workers = ctx.opts.workers;
        let pf = ctx.stage("pushforward", || Ok(bayes::pushforward_check(&bp, n, seed, workers)?))?;
        if !pf.passed {
            ctx.diag.warnings.push(format!(
                "pushforward histogram disagrees with the joint density (max z = {:.2})",
                pf.max_z
            ));
        }
        out.insert("pushforward".into(), json!(pf));
    }

    let prop = ctx.stage("posterior", || Ok(bayes::verify_proposition(&bp, &g)?))?;
    out.insert("evidence".into(), json!(prop.posterior.normalization));
    out.insert("posterior".into(), table_result(&prop.posterior));
    out.insert("canonical_distance".into(), json!(prop.distance));
    let control = match &b.control_chart {
        Some(x2) => Some(ctx.stage("control", || Ok(bayes::wrong_coordinates_control(&bp, x2, &g)?))?),
        None => None,
    };
    let post_csv = ctx.write_table("", "posterior", &prop.posterior)?;
    let can_csv = ctx.write_table(".canonical", "canonical", &prop.canonical)?;
    let mut entries = vec![
        PlotEntry { label: "posterior".into(), csv: post_csv, table: &prop.posterior },
        PlotEntry { label: "canonical, (x1, z) chart".into(), csv: can_csv, table: &prop.canonical },
    ];
    if let Some(ctl) = &control {
        out.insert("control_distance".into(), json!(ctl.distance));
        let csv = ctx.write_table(".control", "control", &ctl.canonical)?;
        entries.push(PlotEntry { label: "canonical, original coordinates".into(), csv, table: &ctl.canonical });
    }
    ctx.write_plot(&entries)?;
    Ok(Value::Object(out))
}

fn run_check(c: &RunConfig, ctx: &mut Ctx) -> Result<Value, CliError> {
    let p = problem(c)?;
    let ch = chart(c)?;
    let chk = c.check.as_ref().expect("validated");
    let seed = chk.seed.expect("validated");
    let thresholds = chk.thresholds.unwrap_or_default();
    let report = ctx.stage("theorem check", || {
        Ok(equivalence::check_theorem3(&p, &ch, chk.tube_radius, chk.samples, seed, thresholds)?)
    })?;
    ctx.diag.skip_rates.push(SkipRate {
        stage: "level set".into(),
        skipped: report.skipped_on_level_set as u64,
        total: chk.samples as u64,
    });
    ctx.diag.skip_rates.push(SkipRate {
        stage: "tube".into(),
        skipped: report.skipped_in_tube as u64,
        total: chk.samples as u64,
    });

    let fan_table = if let Some(inv) = &c.inverse {
        let inv = exprs(inv, "inverse")?;
        let g = grid(c)?;
        Some(ctx.stage("fan", || Ok(fan::fan_density_diffeo(&p, &inv, &g)?))?)
    } else if let Some(chi) = &c.chi {
        let chi = expr(chi, "chi")?;
        let g = grid(c)?;
        Some(ctx.stage("fan", || Ok(fan::fan_density_shear(&p, &chi, &g)?))?)
    } else {
        None
    };
    let mut distance = None;
    if let Some(ft) = &fan_table {
        let g = grid(c)?;
        if ch.dim() != 1 {
            return Err(CliError::Config("comparing densities needs a one-parameter chart".into()));
        }
        let cp = setup(CanonicalProblem::new(p.density.clone(), ch.clone()))?;
        let ct = ctx.stage("canonical", || Ok(canonical::canonical_density(&cp, &g)?))?;
        let d = equivalence::density_distance(ft, &ct)?;
        distance = Some(d);
        let fan_csv = ctx.write_table(".fan", "fan", ft)?;
        let can_csv = ctx.write_table(".canonical", "canonical", &ct)?;
        ctx.write_plot(&[
            PlotEntry { label: "fan".into(), csv: fan_csv, table: ft },
            PlotEntry { label: "canonical".into(), csv: can_csv, table: &ct },
        ])?;
    }
    ctx.write_json(".equivalence.json", &CheckOutput { report: &report, distance })?;
    Ok(json!({
        "verdict": report.verdict,
        "j_relspread": report.j_relspread,
        "sigma_min_observed": report.sigma_min_observed,
        "distance": distance,
    }))
}

fn run_compare(c: &RunConfig, ctx: &mut Ctx) -> Result<Value, CliError> {
    let cmp = c.compare.as_ref().expect("validated");
    let pa = ctx.opts.base_dir.join(&cmp.a);
    let pb = ctx.opts.base_dir.join(&cmp.b);
    let (ta, tb) = (read_table(&pa)?, read_table(&pb)?);
    let d = ctx.stage("distance", || Ok(equivalence::density_distance(&ta, &tb)?))?;
    ctx.write_json(".distance.json", &json!({ "a": cmp.a, "b": cmp.b, "distance": d }))?;
    let out_dir = ctx.opts.out_dir.clone();
    if let (Some(ra), Some(rb)) = (relative_to(&pa, &out_dir), relative_to(&pb, &out_dir)) {
        ctx.write_plot(&[
            PlotEntry { label: cmp.a.clone(), csv: ra, table: &ta },
            PlotEntry { label: cmp.b.clone(), csv: rb, table: &tb },
        ])?;
    }
    Ok(json!({ "distance": d }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("out");
        std::fs::create_dir(&sub).unwrap();
        let f = dir.path().join("a.csv");
        std::fs::write(&f, "").unwrap();
        assert_eq!(relative_to(&f, &sub).unwrap(), "../a.csv");
        assert_eq!(relative_to(&f, dir.path()).unwrap(), "a.csv");
    }
}
