//! results.json, grid CSVs and trajectories.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::pipeline::PipelineOutput;
use crate::error::{Error, Result};
use crate::manifold::GridFn;

/// 17 significant digits: enough to round-trip every binary64 value.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per node: coordinates x0..x{n-1}, then the values under `labels`.
pub fn grid_csv(grid: &GridFn, label: &str) -> String {
    let mut out = String::new();
    let coords: Vec<String> = (0..grid.n()).map(|d| format!("x{d}")).collect();
    let values: Vec<String> = if grid.n_out() == 1 {
        vec![label.to_string()]
    } else {
        (0..grid.n_out()).map(|j| format!("{label}{j}")).collect()
    };
    out.push_str(&[coords, values].concat().join(","));
    out.push('\n');
    for i in 0..grid.node_count() {
        let row: Vec<String> = grid.node(i).iter().chain(grid.at_node(i)).map(|v| num(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses a grid CSV back into (coordinates, values) rows.
pub fn read_grid_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            line.split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad CSV number '{f}': {e}"))))
                .collect()
        })
        .collect()
}

#[derive(Serialize)]
struct Metadata {
    created_unix_seconds: u64,
    version: &'static str,
    threads: usize,
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(name), contents).map_err(Error::from)
}

/// Writes results.json and metadata.json, plus the CSVs for whatever stages produced data.
pub fn export_results(output: &PipelineOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&output.report).map_err(|e| Error::Config(e.to_string()))?;
    write(dir, "results.json", &(json + "\n"))?;
    let meta = Metadata {
        created_unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
    };
    let meta = serde_json::to_string_pretty(&meta).map_err(|e| Error::Config(e.to_string()))?;
    write(dir, "metadata.json", &(meta + "\n"))?;

    if let Some(sol) = &output.manifold {
        write(dir, "psi_grid.csv", &grid_csv(&sol.psi, "psi"))?;
    }
    if let Some(cost) = &output.cost {
        write(dir, "pi_grid.csv", &grid_csv(&cost.pi, "pi"))?;
        write(dir, "kappa_grid.csv", &grid_csv(&cost.kappa, "u"))?;
    }
    if let Some(oracle) = &output.oracle {
        write(dir, "oracle_pi_grid.csv", &grid_csv(&oracle.field.pi, "pi"))?;
        write(dir, "oracle_kappa_grid.csv", &grid_csv(&oracle.field.kappa, "u"))?;
    }
    if let (Some(sol), false) = (&output.manifold, output.trajectories.is_empty()) {
        let n = sol.psi.n();
        let mut csv = String::from("trajectory,step");
        for d in 0..n {
            let _ = write!(csv, ",x{d}");
        }
        for d in 0..n {
            let _ = write!(csv, ",lambda{d}");
        }
        csv.push('\n');
        for (t, tr) in output.trajectories.iter().enumerate() {
            for (k, x) in tr.states.iter().enumerate() {
                let lambda = sol.p() * x + sol.psi.eval(x.as_slice());
                let fields: Vec<String> = x.iter().chain(lambda.iter()).map(|v| num(*v)).collect();
                let _ = writeln!(csv, "{t},{k},{}", fields.join(","));
            }
        }
        write(dir, "trajectories.csv", &csv)?;
    }
    Ok(())
}
