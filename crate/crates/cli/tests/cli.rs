use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};
use singcond::{DensityTable, Method};
use singcond_cli::{run, CliError, RunConfig, RunOptions, RunReport};

const GAUSS: &str = "exp(-(x1^2+x2^2)/2)/(2*pi)";
const BIN: &str = env!("CARGO_BIN_EXE_singcond");

fn ratio_config() -> Value {
    json!({
        "method": "diffeo",
        "dim": 2,
        "density": GAUSS,
        "phi": ["x2/x1"],
        "psi": ["x1"],
        "level": [-1],
        "inverse": ["x2", "x1*x2"],
        "grid": {"min": -4, "max": 4, "points": 161},
        "output": "ratio"
    })
}

fn sum_config() -> Value {
    json!({
        "method": "diffeo",
        "dim": 2,
        "density": GAUSS,
        "phi": ["x1 + x2"],
        "psi": ["x1"],
        "level": [0],
        "inverse": ["x2", "x1 - x2"],
        "grid": {"min": -4, "max": 4, "points": 161},
        "output": "sum"
    })
}

fn tube_config() -> Value {
    json!({
        "method": "tube",
        "dim": 2,
        "density": GAUSS,
        "phi": ["x1 + x2"],
        "psi": ["x1"],
        "level": [0],
        "grid": {"min": -3, "max": 3, "points": 25},
        "tube": {"epsilons": [0.2, 0.1], "samples": 20000, "seed": 11, "region": [[0, null]], "histogram_eps": 0.1},
        "sampler": {"kind": "product", "marginals": [
            {"dist": "normal", "mean": 0, "sd": 1},
            {"dist": "normal", "mean": 0, "sd": 1}
        ]},
        "output": "tube"
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run_in(dir: &Path, v: &Value) -> Result<RunReport, CliError> {
    let cfg = RunConfig::from_json(&v.to_string())?;
    let opts = RunOptions {
        out_dir: dir.to_path_buf(),
        base_dir: dir.to_path_buf(),
        workers: None,
    };
    run(&cfg, &opts)
}

fn read(dir: &Path, name: &str) -> DensityTable {
    let f = fs::File::open(dir.join(name)).unwrap();
    DensityTable::read_csv(std::io::BufReader::new(f), Method::Diffeo).unwrap()
}

#[test]
fn ratio_table_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let rep = run_in(dir.path(), &ratio_config()).unwrap();
    assert_eq!(rep.files, ["ratio.csv", "ratio.plot.py", "ratio.report.json"]);
    for f in &rep.files {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let t = read(dir.path(), "ratio.csv");
    assert!((t.value_at(1.0) - (-1f64).exp()).abs() < 1e-6);
    assert!(t.value_at(0.0).abs() < 1e-12);
    assert!(rep.tables[0].normalized);
    assert_eq!(rep.version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn csv_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &sum_config()).unwrap();
    let p = singcond::LevelSetProblem::parse(2, GAUSS, &["x1 + x2"], &["x1"], &[0.0]).unwrap();
    let inv = [singcond::Expression::parse("x2").unwrap(), singcond::Expression::parse("x1 - x2").unwrap()];
    let g = singcond::GridSpec::new(-4.0, 4.0, 161);
    let mem = singcond::fan::fan_density_diffeo(&p, &inv, &g).unwrap();
    let disk = read(dir.path(), "sum.csv");
    assert_eq!(mem.grid, disk.grid);
    assert_eq!(mem.values, disk.values);
    let text = fs::read_to_string(dir.path().join("sum.csv")).unwrap();
    assert!(text.starts_with("u,density\n"));
    assert!(!text.contains('\r'));
}

#[test]
fn compare_the_two_tables() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &ratio_config()).unwrap();
    run_in(dir.path(), &sum_config()).unwrap();
    let out = Command::new(BIN)
        .args(["compare", "ratio.csv", "sum.csv"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let d: Value = serde_json::from_slice(&out.stdout).unwrap();
    // e^{-1/π} − erfc(1/√π), evaluated with mpmath.
    let oracle = 0.302439865611854;
    assert!((d["tv"].as_f64().unwrap() - oracle).abs() < 1e-3, "{d}");

    let cfg = json!({"method": "compare", "compare": {"a": "ratio.csv", "b": "sum.csv"}, "output": "cmp"});
    let rep = run_in(dir.path(), &cfg).unwrap();
    assert!((rep.results["distance"]["tv"].as_f64().unwrap() - oracle).abs() < 1e-3);
    assert!(rep.files.contains(&"cmp.plot.py".to_string()));
}

#[test]
fn check_on_the_sum_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sum_config();
    cfg["method"] = "check".into();
    cfg["output"] = "check".into();
    cfg["chart"] = json!({"map": ["x1", "-x1"], "domain": [[-4, 4]]});
    cfg["check"] = json!({"tube_radius": 0.1, "samples": 400, "seed": 5});
    let rep = run_in(dir.path(), &cfg).unwrap();
    assert_eq!(rep.results["verdict"], "coincide-expected");
    let eq: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("check.equivalence.json")).unwrap()).unwrap();
    assert_eq!(eq["verdict"], "coincide-expected");
    assert_eq!(eq["caveats"].as_array().unwrap().len(), 2);
    assert!(eq["distance"]["sup_rel"].as_f64().unwrap() < 1e-6, "{eq}");

    cfg["phi"] = json!(["x2/x1"]);
    cfg["level"] = json!([-1]);
    cfg["inverse"] = json!(["x2", "x1*x2"]);
    cfg["chart"]["domain"] = json!([[0.5, 4]]);
    cfg["grid"] = json!({"min": 0.5, "max": 4, "points": 71, "support": "bounded"});
    let rep = run_in(dir.path(), &cfg).unwrap();
    assert_eq!(rep.results["verdict"], "coincide-not-expected");
}

#[test]
fn tube_runs_reproduce_from_the_echoed_config() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let rep = run_in(a.path(), &tube_config()).unwrap();
    assert_eq!(rep.diagnostics.epsilons.len(), 2);
    assert_eq!(rep.diagnostics.skip_rates.len(), 2);
    let estimate = rep.results["estimate"].as_f64().unwrap();
    assert!((estimate - 0.5).abs() < 0.05, "{estimate}");

    let echoed = serde_json::to_value(&rep.config).unwrap();
    let again = run_in(b.path(), &echoed).unwrap();
    assert_eq!(rep.results, again.results);
    assert_eq!(rep.diagnostics, again.diagnostics);
    let csv = "tube.histogram.csv";
    assert_eq!(fs::read(a.path().join(csv)).unwrap(), fs::read(b.path().join(csv)).unwrap());
    let report: RunReport =
        serde_json::from_str(&fs::read_to_string(a.path().join("tube.report.json")).unwrap()).unwrap();
    assert_eq!(report.config, rep.config);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tube.json", &tube_config());
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let st = Command::new(BIN)
            .args(["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", "99"])
            .env("SINGCOND_THREADS", threads)
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        outs.push(fs::read(out_dir.join("tube.histogram.csv")).unwrap());
        let rep: RunReport =
            serde_json::from_str(&fs::read_to_string(out_dir.join("tube.report.json")).unwrap()).unwrap();
        assert_eq!(rep.config.tube.unwrap().seed, Some(99));
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| {
        Command::new(BIN)
            .args(args)
            .current_dir(dir.path())
            .output()
            .unwrap()
            .status
            .code()
    };
    let mut bad = ratio_config();
    bad["grid"]["points"] = 8.into();
    write_config(dir.path(), "bad.json", &bad);
    assert_eq!(code(&["run", "bad.json"]), Some(2));

    let mut tube = tube_config();
    tube["tube"]["seed"] = Value::Null;
    write_config(dir.path(), "noseed.json", &tube);
    assert_eq!(code(&["run", "noseed.json"]), Some(2));

    let mut wrong = ratio_config();
    wrong["inverse"] = json!(["x2", "x1 + x2"]);
    write_config(dir.path(), "wrong.json", &wrong);
    assert_eq!(code(&["run", "wrong.json"]), Some(3));

    assert_eq!(code(&["run", "missing.json"]), Some(4));
    assert_eq!(code(&["compare", "a.csv", "b.csv"]), Some(4));

    write_config(dir.path(), "ok.json", &ratio_config());
    assert_eq!(code(&["run", "ok.json", "--out", "out"]), Some(0));
}

#[test]
fn appendix_subcommand() {
    let out = Command::new(BIN).args(["appendix", "--rho-steps", "20"]).output().unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["counterexamples"].as_array().unwrap().len(), 0);
    assert_eq!(v["pairs"], 21 * 2001);
}

#[test]
fn bayes_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "method": "bayes",
        "bayes": {
            "prior": "exp(-x1^2/2)/sqrt(2*pi)",
            "noise": "exp(-x1^2/2)/sqrt(2*pi)",
            "forward": "x1 + x2",
            "likelihood": "exp(-(x2-x1)^2/2)/sqrt(2*pi)",
            "measurement": 0,
            "control_chart": "-x1"
        },
        "grid": {"min": -4, "max": 4, "points": 81}
    });
    let rep = run_in(dir.path(), &cfg).unwrap();
    let t = read(dir.path(), "bayes.csv");
    assert!((t.value_at(0.0) - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-6);
    let evidence = rep.results["evidence"].as_f64().unwrap();
    assert!((evidence - 0.282094791773878).abs() < 1e-8, "{evidence}");
    assert!(rep.results["canonical_distance"]["sup_rel"].as_f64().unwrap() < 1e-6);
    assert!(rep.files.contains(&"bayes.control.csv".to_string()));
}

#[test]
fn plot_script_runs() {
    let ok = Command::new("python3")
        .args(["-c", "import matplotlib"])
        .status()
        .map(|s| s.success())
        .unwrap_or(false);
    if !ok {
        eprintln!("python3 with matplotlib not available; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested");
    let cfg = write_config(dir.path(), "ratio.json", &ratio_config());
    let st = Command::new(BIN)
        .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(st.success());
    let py = Command::new("python3").arg(out.join("ratio.plot.py")).current_dir(dir.path()).output().unwrap();
    assert!(py.status.success(), "{}", String::from_utf8_lossy(&py.stderr));
    assert!(out.join("ratio.plot.png").exists());
}
