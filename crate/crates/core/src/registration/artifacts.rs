//! Persistence of registration results: map mesh with the total variance as
//! a PLY quality field, coefficient samples as CSV, per-iteration logs, and
//! a metrics summary in JSON.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RegistrationResult, RunTrace};
use crate::error::{Error, Result};
use crate::mesh::io::{save_mesh, MeshFormat};

/// Headline numbers of a single registration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationMetrics {
    pub method: String,
    /// Target identifier, filled in by batch drivers.
    #[serde(default)]
    pub target: Option<String>,
    pub seed: u64,
    pub mean_l2_mm: f64,
    pub hausdorff_mm: f64,
    /// `None` for deterministic methods.
    pub acceptance_rate: Option<f64>,
    pub iterations: u64,
    pub wall_clock_ms: f64,
}

pub const MAP_MESH_FILE: &str = "map.ply";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const CHAIN_FILE: &str = "chain.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.json";

/// Write every artifact of a run into `dir` (created if missing).
pub fn write_result_dir(dir: &Path, result: &RegistrationResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let quality = result.uncertainty.as_ref().map(|u| u.total.as_slice());
    save_mesh(
        &result.map_mesh,
        &dir.join(MAP_MESH_FILE),
        MeshFormat::PlyBinaryLe,
        quality,
    )?;

    if !result.samples.is_empty() {
        let rank = result.samples[0].len();
        let mut csv = String::from("sample");
        for i in 0..rank {
            let _ = write!(csv, ",c{i}");
        }
        csv.push('\n');
        for (k, sample) in result.samples.iter().enumerate() {
            let _ = write!(csv, "{k}");
            for value in sample.iter() {
                let _ = write!(csv, ",{value}");
            }
            csv.push('\n');
        }
        let path = dir.join(SAMPLES_FILE);
        std::fs::write(&path, csv).map_err(|e| Error::io(path, e))?;
    }

    match &result.trace {
        RunTrace::Mcmc(chain) => {
            let mut buffer = Vec::new();
            chain
                .write_csv(&mut buffer)
                .map_err(|e| Error::io(dir.join(CHAIN_FILE), e))?;
            let path = dir.join(CHAIN_FILE);
            std::fs::write(&path, buffer).map_err(|e| Error::io(path, e))?;
        }
        RunTrace::Icp(trace) => {
            let mut csv = String::from("iteration,mean_l2_mm\n");
            for (i, d) in trace.mean_distances.iter().enumerate() {
                let _ = writeln!(csv, "{i},{d}");
            }
            let path = dir.join(TRAJECTORY_FILE);
            std::fs::write(&path, csv).map_err(|e| Error::io(path, e))?;
        }
    }

    let json = serde_json::to_vec_pretty(&result.metrics)
        .map_err(|e| Error::numeric(format!("metrics serialization failed: {e}")))?;
    let path = dir.join(METRICS_FILE);
    std::fs::write(&path, json).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read back the metrics summary of a result directory.
pub fn read_metrics(dir: &Path) -> Result<RegistrationMetrics> {
    let path = dir.join(METRICS_FILE);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(0, format!("invalid metrics file: {e}")).with_path(path))
}
