//! CSV result files, the run manifest and an optional plotting script.
//!
//! Every CSV starts with a header line, uses `,` separators, `.` decimals,
//! LF line endings and 17 significant digits, so repeated runs of one
//! configuration produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::coupling::{Chronicle, SolverStats, PROFILE_FIELDS};
use crate::error::{Error, Result};
use crate::io::config::resolved_parameters;
use crate::scenarios::ScenarioConfig;

const ML: f64 = 1e6;

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// File-name form of a time in seconds.
pub fn time_label(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

pub fn profile_file_name(field: &str, t: f64) -> String {
    format!("profile_{field}_{}.csv", time_label(t))
}

fn csv(header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let write = |w: &mut csv::Writer<Vec<u8>>| -> csv::Result<()> {
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(|v| format_value(*v)))?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).expect("writing to memory cannot fail");
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV of numbers is UTF-8")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParameterEntry {
    pub key: String,
    pub value: String,
    pub defaulted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeshStats {
    pub elements: usize,
    pub nodes: usize,
    pub length_m: f64,
    pub area_m2: f64,
    pub pore_volume_ml: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub name: String,
    pub duration_h: f64,
    pub oil_recovered_ml: f64,
    pub water_produced_ml: f64,
    pub final_dp_pa: f64,
    pub steps: usize,
    pub rejections: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub scenario: String,
    pub status: String,
    pub parameters: Vec<ParameterEntry>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub mesh: MeshStats,
    pub stages: Vec<StageReport>,
    pub solver: SolverStats,
    pub files: Vec<String>,
}

/// Wall-clock bounds and outcome of a run, supplied by the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct RunInfo {
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub status: String,
    /// Keys filled from defaults when the configuration was parsed.
    pub defaulted: Vec<String>,
}

pub fn build_manifest(
    config: &ScenarioConfig,
    chronicle: &Chronicle,
    info: &RunInfo,
    files: Vec<String>,
) -> RunManifest {
    let parameters = resolved_parameters(config)
        .into_iter()
        .map(|(key, value)| ParameterEntry {
            defaulted: info.defaulted.contains(&key),
            key,
            value,
        })
        .collect();
    RunManifest {
        scenario: config.name.clone(),
        status: info.status.clone(),
        parameters,
        started_unix_s: info.started_unix_s,
        finished_unix_s: info.finished_unix_s,
        mesh: MeshStats {
            elements: config.mesh.elements,
            nodes: 2 * config.mesh.elements + 1,
            length_m: config.mesh.length,
            area_m2: config.mesh.area,
            pore_volume_ml: config.pore_volume() * ML,
        },
        stages: chronicle
            .stages
            .iter()
            .map(|s| StageReport {
                name: s.name.clone(),
                duration_h: (s.t_end - s.t_start) / 3600.0,
                oil_recovered_ml: s.oil_recovered * ML,
                water_produced_ml: s.water_produced * ML,
                final_dp_pa: s.final_dp,
                steps: s.steps,
                rejections: s.rejections,
            })
            .collect(),
        solver: chronicle.stats.clone(),
        files,
    }
}

/// Renders every result file as `(name, contents)` without touching disk.
pub fn render_outputs(config: &ScenarioConfig, chronicle: &Chronicle) -> Vec<(String, String)> {
    let mut files = Vec::new();
    if chronicle.steps.is_empty() {
        return files;
    }
    let steps = &chronicle.steps;
    files.push((
        "recovery.csv".to_string(),
        csv(
            &["t_s", "V_o_ml", "V_w_ml", "dp_Pa"],
            steps
                .iter()
                .map(|s| vec![s.t, s.v_oil * ML, s.v_water * ML, s.dp]),
        ),
    ));
    files.push((
        "flow.csv".to_string(),
        csv(
            &[
                "t_s",
                "dt_s",
                "p_in_Pa",
                "p_out_Pa",
                "dp_Pa",
                "V_inj_ml",
                "volume_balance_error",
                "newton_flow",
                "outer_iterations",
            ],
            steps.iter().map(|s| {
                vec![
                    s.t,
                    s.dt,
                    s.p_in,
                    s.p_out,
                    s.dp,
                    s.v_injected * ML,
                    s.volume_balance_error,
                    s.newton_flow as f64,
                    (s.outer_changes.len() + 1) as f64,
                ]
            }),
        ),
    ));
    if config.kinetics.is_some() {
        let c_ref = config.stages.iter().map(|s| s.c_in[0]).fold(0.0, f64::max);
        let scale = if c_ref > 0.0 { c_ref } else { 1.0 };
        files.push((
            "effluent.csv".to_string(),
            csv(
                &["t_s", "cm_over_cmin", "cn_kgm3", "csurf_kgm3"],
                steps
                    .iter()
                    .map(|s| vec![s.t, s.effluent[0] / scale, s.effluent[1], s.effluent[2]]),
            ),
        ));
        files.push((
            "sessile.csv".to_string(),
            csv(
                &[
                    "t_s",
                    "sigma_mean",
                    "sigma_ow_inlet_N_per_m",
                    "max_phi_change",
                    "newton_transport",
                ],
                steps.iter().map(|s| {
                    vec![
                        s.t,
                        s.sigma_mean,
                        s.sigma_ow_inlet,
                        s.max_phi_change,
                        s.newton_transport as f64,
                    ]
                }),
            ),
        ));
    }
    for p in &chronicle.profiles {
        for (f, field) in PROFILE_FIELDS.iter().enumerate() {
            files.push((
                profile_file_name(field, p.t),
                csv(
                    &["z_m", field],
                    p.z.iter().zip(&p.values[f]).map(|(z, v)| vec![*z, *v]),
                ),
            ));
        }
    }
    if config.output.plot_script {
        let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
        files.push(("plot.py".to_string(), plot_script(&names)));
    }
    files
}

fn plot_script(files: &[&str]) -> String {
    let mut s = String::from(
        "\"\"\"Plots the CSV files written next to this script.\"\"\"\n\
         import csv\n\
         import os\n\
         \n\
         import matplotlib.pyplot as plt\n\
         \n\
         HERE = os.path.dirname(os.path.abspath(__file__))\n\
         \n\
         \n\
         def load(name):\n\
         \x20   with open(os.path.join(HERE, name), newline=\"\") as f:\n\
         \x20       rows = list(csv.reader(f))\n\
         \x20   header, body = rows[0], rows[1:]\n\
         \x20   return header, [[float(v) for v in row] for row in body]\n\
         \n\
         \n\
         def plot(name, out):\n\
         \x20   header, rows = load(name)\n\
         \x20   fig, ax = plt.subplots()\n\
         \x20   x = [r[0] for r in rows]\n\
         \x20   for j, label in enumerate(header[1:], start=1):\n\
         \x20       ax.plot(x, [r[j] for r in rows], label=label)\n\
         \x20   ax.set_xlabel(header[0])\n\
         \x20   ax.legend()\n\
         \x20   fig.savefig(os.path.join(HERE, out))\n\
         \x20   plt.close(fig)\n\
         \n\
         \n\
         FILES = [\n",
    );
    for f in files {
        let _ = writeln!(s, "    \"{f}\",");
    }
    s.push_str("]\n\nif __name__ == \"__main__\":\n    for name in FILES:\n        plot(name, name[:-4] + \".png\")\n");
    s
}

/// Writes the result files and `manifest.json` into `dir`, creating it if
/// needed. Returns the paths written.
pub fn write_outputs(
    config: &ScenarioConfig,
    chronicle: &Chronicle,
    info: &RunInfo,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = render_outputs(config, chronicle);
    let mut written = Vec::new();
    for (name, contents) in &files {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let manifest = build_manifest(
        config,
        chronicle,
        info,
        files.into_iter().map(|(n, _)| n).collect(),
    );
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// A numeric CSV table as written by this module.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Reads a header line followed by rows of numbers, all of the header's
/// width.
pub fn read_csv(text: &str) -> Result<Table> {
    let position_error = |pos: Option<&csv::Position>, column: usize, message: String| {
        let line = pos.map_or(1, |p| p.line() as usize);
        Error::Parse {
            line,
            column,
            message,
        }
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| position_error(e.position(), 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().any(String::is_empty) {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "missing or empty column name".into(),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| position_error(e.position(), 1, e.to_string()))?;
        let mut row = Vec::with_capacity(header.len());
        let mut column = 1;
        for cell in record.iter() {
            let v: f64 = cell.parse().map_err(|_| {
                position_error(
                    record.position(),
                    column,
                    format!("`{cell}` is not a number"),
                )
            })?;
            row.push(v);
            column += cell.chars().count() + 1;
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}
