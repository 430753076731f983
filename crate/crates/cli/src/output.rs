//! Report emission: `report.json`, `series.csv` and `final_map.csv`.
//! Floats in the CSV files carry 17 significant digits so that equal runs
//! produce equal bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kmflow_core::flow::FlowReport;
use kmflow_core::VectorField;

use crate::error::{CliError, Result};
use crate::scenario::{Execution, RunReport};

pub const SERIES_HEADER: &str = "t,theta_min,theta_max,theta_osc,slope_ratio_max,lagrangian_defect";

pub fn series_csv(flow: &FlowReport) -> String {
    let mut out = String::from(SERIES_HEADER);
    out.push('\n');
    for i in 0..flow.times.len() {
        let row = [
            flow.times[i],
            flow.theta_min[i],
            flow.theta_max[i],
            flow.theta_osc[i],
            flow.slope_ratio_max[i],
            flow.lagrangian_defect[i],
        ];
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Columns: node, node coordinates x0[,x1], wrapped displacement d0[,d1].
pub fn final_map_csv(map: &VectorField) -> String {
    let g = map.grid();
    let n = g.n_dims();
    let mut out = String::from("node");
    for a in 0..n {
        write!(out, ",x{a}").unwrap();
    }
    for a in 0..n {
        write!(out, ",d{a}").unwrap();
    }
    out.push('\n');
    for i in 0..g.len() {
        write!(out, "{i}").unwrap();
        let x = g.coord(i);
        for v in x.iter().take(n).chain(map.at(i)) {
            write!(out, ",{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn report_json(report: &RunReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|source| CliError::Write {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Write every output that applies to the scenario; returns the paths written.
pub fn write_outputs(dir: &Path, exec: &Execution) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = vec![write(dir.join("report.json"), &report_json(&exec.report)?)?];
    if let Some(flow) = &exec.report.flow {
        written.push(write(dir.join("series.csv"), &series_csv(flow))?);
    }
    if let Some(map) = &exec.final_map {
        written.push(write(dir.join("final_map.csv"), &final_map_csv(map))?);
    }
    Ok(written)
}
