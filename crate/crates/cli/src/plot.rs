//! Matplotlib scripts that overlay emitted density tables.

use std::fmt::Write as _;
use std::path::Path;

use singcond::DensityTable;

use crate::CliError;

/// One curve: a legend label, the CSV file name (relative to the script), and
/// the table it holds.
pub struct PlotEntry<'a> {
    pub label: String,
    pub csv: String,
    pub table: &'a DensityTable,
}

fn py_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Script text overlaying every entry. The figure is saved next to the
/// script as `<stem>.png`.
pub fn plot_script(entries: &[PlotEntry<'_>], stem: &str) -> Result<String, CliError> {
    if entries.is_empty() {
        return Err(CliError::Config("a plot needs at least one table".into()));
    }
    if let Some(e) = entries.iter().find(|e| e.table.is_empty()) {
        return Err(CliError::Config(format!("table '{}' has an empty grid", e.label)));
    }
    if let Some(e) = entries.iter().find(|e| Path::new(&e.csv).is_absolute()) {
        return Err(CliError::Config(format!("CSV path '{}' must be relative", e.csv)));
    }
    let mut s = String::new();
    s.push_str("#!/usr/bin/env python3\n");
    s.push_str("\"\"\"Overlay of conditional densities written by singcond.\"\"\"\n");
    s.push_str("import csv\nimport os\n\nimport matplotlib\n\nmatplotlib.use(\"Agg\")\n");
    s.push_str("import matplotlib.pyplot as plt\n\n");
    s.push_str("HERE = os.path.dirname(os.path.abspath(__file__))\n");
    s.push_str("CURVES = [\n");
    for e in entries {
        let _ = writeln!(s, "    ({}, {}),", py_str(&e.label), py_str(&e.csv));
    }
    s.push_str("]\n\n\n");
    s.push_str(
        "def load(name):\n    u, d = [], []\n    with open(os.path.join(HERE, name), newline=\"\") as fh:\n        \
         for row in csv.DictReader(fh):\n            u.append(float(row[\"u\"]))\n            \
         d.append(float(row[\"density\"]))\n    return u, d\n\n\n",
    );
    s.push_str("fig, ax = plt.subplots(figsize=(7, 4.5))\n");
    s.push_str("for label, name in CURVES:\n    u, d = load(name)\n    ax.plot(u, d, label=label)\n");
    s.push_str("ax.set_xlabel(\"u\")\nax.set_ylabel(\"density\")\nax.legend()\nfig.tight_layout()\n");
    let _ = writeln!(s, "fig.savefig(os.path.join(HERE, {}), dpi=150)", py_str(&format!("{stem}.png")));
    Ok(s)
}

/// Write [`plot_script`] to `path`; the figure takes the script's file stem.
pub fn emit_plot_script(entries: &[PlotEntry<'_>], path: &Path) -> Result<(), CliError> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("densities");
    let text = plot_script(entries, stem)?;
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
