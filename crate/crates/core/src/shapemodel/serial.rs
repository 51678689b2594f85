//! Versioned JSON container for low-rank models.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Point3};
use serde::{Deserialize, Serialize};

use super::LowRankGP;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

/// Version tag stored in every model file.
pub const FORMAT_TAG: &str = "morphfit-gpmm-v1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[u32; 3]>,
    rank: usize,
    eigenvalues: Vec<f64>,
    /// Mean deformation, 3n values, vertex-major.
    mean: Vec<f64>,
    /// Basis functions concatenated: entry `i * 3n + k` is component `k` of
    /// basis function `i`.
    basis: Vec<f64>,
}

pub(super) fn save(model: &LowRankGP, path: &Path) -> Result<()> {
    let n3 = model.mean.len();
    let mut basis = Vec::with_capacity(model.rank() * n3);
    for i in 0..model.rank() {
        basis.extend(model.basis.column(i).iter());
    }
    let file = ModelFile {
        format: FORMAT_TAG.to_string(),
        vertices: model
            .reference
            .vertices()
            .iter()
            .map(|p| [p.x, p.y, p.z])
            .collect(),
        triangles: model.reference.triangles().to_vec(),
        rank: model.rank(),
        eigenvalues: model.eigenvalues.iter().copied().collect(),
        mean: model.mean.iter().copied().collect(),
        basis,
    };
    let bytes = serde_json::to_vec(&file)
        .map_err(|e| Error::numeric(format!("model serialization failed: {e}")))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(super) fn load(path: &Path) -> Result<LowRankGP> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(e.column().saturating_sub(1), e.to_string()).with_path(path))?;
    if file.format != FORMAT_TAG {
        return Err(Error::validation(format!(
            "unsupported model format {:?}; expected {FORMAT_TAG:?}",
            file.format
        )));
    }
    let n = file.vertices.len();
    let n3 = 3 * n;
    if file.eigenvalues.len() != file.rank
        || file.mean.len() != n3
        || file.basis.len() != file.rank * n3
    {
        return Err(Error::validation(
            "model file has inconsistent array dimensions".to_string(),
        ));
    }
    let reference = TriangleMesh::new(
        file.vertices
            .iter()
            .map(|v| Point3::new(v[0], v[1], v[2]))
            .collect(),
        file.triangles,
    )?;
    let eigenvalues = DVector::from_vec(file.eigenvalues);
    for i in 1..eigenvalues.len() {
        if eigenvalues[i] > eigenvalues[i - 1] || eigenvalues[i] < 0.0 {
            return Err(Error::validation(
                "model eigenvalues must be non-negative and non-increasing".to_string(),
            ));
        }
    }
    let basis = DMatrix::from_fn(n3, file.rank, |k, i| file.basis[i * n3 + k]);
    Ok(LowRankGP::from_raw_parts(
        reference,
        eigenvalues,
        basis,
        DVector::from_vec(file.mean),
    ))
}
