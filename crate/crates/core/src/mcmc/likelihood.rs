//! Likelihood models rating a model instance against the target surface.

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

/// Distance-based likelihoods. All distances are closest-point distances to
/// the opposite surface, in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub enum LikelihoodModel {
    /// Independent zero-mean Gaussian on every vertex-to-surface distance.
    L2 { sigma: f64 },
    /// Exponential density on the symmetric Hausdorff distance estimate.
    Hausdorff { rate: f64 },
    /// Gaussian on the mean squared vertex distance (optionally skipping
    /// vertices whose closest target point touches the target boundary),
    /// combined with the Hausdorff exponential.
    Collective {
        sigma: f64,
        rate: f64,
        boundary_filter: bool,
    },
}

impl LikelihoodModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            LikelihoodModel::L2 { sigma } => *sigma > 0.0,
            LikelihoodModel::Hausdorff { rate } => *rate > 0.0,
            LikelihoodModel::Collective { sigma, rate, .. } => *sigma > 0.0 && *rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(
                "likelihood parameters must be positive",
            ))
        }
    }

    pub fn log_likelihood(&self, target: &TriangleMesh, instance: &TriangleMesh) -> Result<f64> {
        match self {
            LikelihoodModel::L2 { sigma } => {
                let mut acc = 0.0;
                for v in instance.vertices() {
                    let d = target.closest_point(v)?.distance;
                    acc += gaussian_log_density(d, *sigma);
                }
                Ok(acc)
            }
            LikelihoodModel::Hausdorff { rate } => {
                let d = symmetric_hausdorff(target, instance)?;
                Ok(rate.ln() - rate * d)
            }
            LikelihoodModel::Collective {
                sigma,
                rate,
                boundary_filter,
            } => {
                let mut acc = 0.0;
                let mut used = 0usize;
                for v in instance.vertices() {
                    let sp = target.closest_point(v)?;
                    if *boundary_filter && sp.touches_boundary(target) {
                        continue;
                    }
                    acc += sp.distance * sp.distance;
                    used += 1;
                }
                if used == 0 {
                    return Err(Error::validation(
                        "collective likelihood: every correspondence was filtered away \
                         (no overlap with the target interior)",
                    ));
                }
                let mean_sq = acc / used as f64;
                let hausdorff = symmetric_hausdorff(target, instance)?;
                Ok(gaussian_log_density(mean_sq, *sigma) + rate.ln() - rate * hausdorff)
            }
        }
    }
}

fn gaussian_log_density(x: f64, sigma: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - 0.5 * x * x / (sigma * sigma)
}

/// Symmetric Hausdorff estimate from vertices: the larger of the two
/// directed max vertex-to-surface distances.
pub fn symmetric_hausdorff(a: &TriangleMesh, b: &TriangleMesh) -> Result<f64> {
    Ok(directed_max_distance(a, b)?.max(directed_max_distance(b, a)?))
}

fn directed_max_distance(from: &TriangleMesh, to: &TriangleMesh) -> Result<f64> {
    let mut max = 0.0f64;
    for v in from.vertices() {
        max = max.max(to.closest_point(v)?.distance);
    }
    Ok(max)
}

/// Mean vertex-to-surface distance of `instance` against `target`.
pub fn mean_surface_distance(target: &TriangleMesh, instance: &TriangleMesh) -> Result<f64> {
    if instance.vertices().is_empty() {
        return Err(Error::validation("instance mesh has no vertices"));
    }
    let mut acc = 0.0;
    for v in instance.vertices() {
        acc += target.closest_point(v)?.distance;
    }
    Ok(acc / instance.vertices().len() as f64)
}
