//! Plot-ready CSVs from the step logs written by `run`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::Failure;

const TRAJECTORY_COLUMNS: [&str; 5] = ["t", "x", "y", "z", "phase"];

fn step_logs(dirs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut logs = Vec::new();
    for dir in dirs {
        let entries = fs::read_dir(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| Failure::input(e.to_string()))?.path();
            if path.to_str().is_some_and(|p| p.ends_with(".steps.csv")) {
                logs.push(path);
            }
        }
    }
    logs.sort();
    Ok(logs)
}

fn run_name(path: &Path) -> String {
    let file = path.file_name().and_then(|f| f.to_str()).unwrap_or_default();
    file.trim_end_matches(".steps.csv").to_string()
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, Failure> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Failure::input(format!("{}: missing column {name}", path.display())))
}

/// Writes one `trajectory_<run>.csv` per step log and a single `estimation.csv`
/// holding the mass estimate with its 3-sigma band.
pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let logs = step_logs(dirs)?;
    if logs.is_empty() {
        return Err(Failure::input("no run outputs (*.steps.csv) found"));
    }
    fs::create_dir_all(out).map_err(|e| Failure::input(format!("{}: {e}", out.display())))?;
    let csv_err = |e: csv::Error| Failure::input(e.to_string());

    let mut est = csv::Writer::from_path(out.join("estimation.csv")).map_err(csv_err)?;
    est.write_record(["run", "t", "phase", "mass_estimate", "lower", "upper"]).map_err(csv_err)?;
    for log in &logs {
        let name = run_name(log);
        let mut rd = csv::Reader::from_path(log).map_err(|e| Failure::input(format!("{}: {e}", log.display())))?;
        let headers = rd.headers().map_err(csv_err)?.clone();
        let traj: Vec<usize> = TRAJECTORY_COLUMNS
            .iter()
            .map(|c| column(&headers, c, log))
            .collect::<Result<_, _>>()?;
        let (t, phase) = (traj[0], traj[4]);
        let mean = column(&headers, "mass_estimate", log)?;
        let var = column(&headers, "mass_variance", log)?;

        let mut w = csv::Writer::from_path(out.join(format!("trajectory_{name}.csv"))).map_err(csv_err)?;
        w.write_record(TRAJECTORY_COLUMNS).map_err(csv_err)?;
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            w.write_record(traj.iter().map(|&i| &rec[i])).map_err(csv_err)?;
            let num = |i: usize| {
                rec[i].parse::<f64>().map_err(|e| {
                    Failure::input(format!("{}:{}: column {}: {e}", log.display(), line + 2, &headers[i]))
                })
            };
            let (m, s) = (num(mean)?, num(var)?.max(0.0).sqrt());
            est.write_record([
                name.clone(),
                rec[t].to_string(),
                rec[phase].to_string(),
                format!("{m}"),
                format!("{}", m - 3.0 * s),
                format!("{}", m + 3.0 * s),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Failure::input(e.to_string()))?;
    }
    est.flush().map_err(|e| Failure::input(e.to_string()))?;
    println!("{} trajectories and estimation.csv written to {}", logs.len(), out.display());
    Ok(())
}
