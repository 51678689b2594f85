//! Analytic Gaussian-process regression in the coefficient space of a
//! low-rank shape model.
//!
//! Noisy deformation observations at reference vertices condition the
//! standard-normal coefficient prior in closed form. On the model span this
//! coincides with function-space regression, makes projection into the prior
//! exact, and gives the closest-point proposal a closed-form transition
//! density.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Vector3};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::shapemodel::LowRankGP;

/// A noisy deformation observed at a reference vertex: the reference
/// landmark is the vertex position, `deformation` is `target - reference`,
/// and `noise` is the symmetric positive-definite observation covariance.
#[derive(Debug, Clone)]
pub struct LandmarkObservation {
    vertex: usize,
    deformation: Vector3<f64>,
    noise: Matrix3<f64>,
}

impl LandmarkObservation {
    pub fn new(vertex: usize, deformation: Vector3<f64>, noise: Matrix3<f64>) -> Result<Self> {
        if (noise - noise.transpose()).norm() > 1e-12 {
            return Err(Error::validation(
                "observation noise covariance must be symmetric",
            ));
        }
        let eig = noise.symmetric_eigen();
        if eig.eigenvalues.min() < 0.0 {
            return Err(Error::validation(
                "observation noise covariance must be positive semi-definite",
            ));
        }
        Ok(LandmarkObservation {
            vertex,
            deformation,
            noise: 0.5 * (noise + noise.transpose()),
        })
    }

    /// Isotropic noise `sigma_sq * I`.
    pub fn isotropic(vertex: usize, deformation: Vector3<f64>, sigma_sq: f64) -> Result<Self> {
        LandmarkObservation::new(vertex, deformation, Matrix3::identity() * sigma_sq)
    }

    pub fn vertex(&self) -> usize {
        self.vertex
    }

    pub fn deformation(&self) -> &Vector3<f64> {
        &self.deformation
    }

    pub fn noise(&self) -> &Matrix3<f64> {
        &self.noise
    }
}

/// Gaussian posterior over model coefficients given landmark observations.
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    parent: Arc<LowRankGP>,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

/// Condition the coefficient prior on the observations:
/// with `A` stacking the scaled basis rows at observed vertices and `E` the
/// block-diagonal noise, the posterior is
/// `cov = (A^T E^-1 A + I)^-1`, `mean = cov A^T E^-1 (obs - prior mean)`.
pub fn regress(
    model: &Arc<LowRankGP>,
    observations: &[LandmarkObservation],
) -> Result<PosteriorModel> {
    if observations.is_empty() {
        return Err(Error::validation(
            "regression requires at least one observation",
        ));
    }
    let n = model.reference().vertex_count();
    let r = model.rank();

    let mut precision = DMatrix::zeros(r, r);
    let mut rhs = DVector::zeros(r);
    let mut design = DMatrix::zeros(3, r);
    for obs in observations {
        if obs.vertex >= n {
            return Err(Error::validation(format!(
                "observation at vertex {} outside the reference mesh ({n} vertices)",
                obs.vertex
            )));
        }
        let eig = obs.noise.symmetric_eigen();
        if eig.eigenvalues.min() <= 1e-12 {
            return Err(Error::validation(format!(
                "observation noise at vertex {} is singular (min eigenvalue {:.3e})",
                obs.vertex,
                eig.eigenvalues.min()
            )));
        }
        let mut noise_inv = Matrix3::zeros();
        for k in 0..3 {
            let v = eig.eigenvectors.column(k);
            noise_inv += v * v.transpose() / eig.eigenvalues[k];
        }

        for i in 0..r {
            let block = model.scaled_basis_block(obs.vertex, i);
            design[(0, i)] = block.x;
            design[(1, i)] = block.y;
            design[(2, i)] = block.z;
        }
        let weighted = noise_inv * &design; // 3 x r
        precision += design.transpose() * &weighted;
        let centered = obs.deformation - model.mean_block(obs.vertex);
        rhs += weighted.transpose() * centered;
    }

    for i in 0..r {
        precision[(i, i)] += 1.0;
    }
    let chol = Cholesky::new(precision)
        .ok_or_else(|| Error::numeric("posterior precision matrix is not positive definite"))?;
    let mean = chol.solve(&rhs);
    let covariance = chol.inverse();

    PosteriorModel::new(Arc::clone(model), mean, covariance)
}

impl PosteriorModel {
    /// Wrap an explicit Gaussian over coefficients. The covariance must be
    /// symmetric; eigenvalues may dip below zero only by numerical noise.
    pub fn new(
        parent: Arc<LowRankGP>,
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
    ) -> Result<PosteriorModel> {
        let r = parent.rank();
        if mean.len() != r || covariance.nrows() != r || covariance.ncols() != r {
            return Err(Error::validation(
                "posterior dimensions do not match the parent model rank",
            ));
        }
        if (&covariance - covariance.transpose()).norm() > 1e-10 * (1.0 + covariance.norm()) {
            return Err(Error::validation("posterior covariance must be symmetric"));
        }
        Ok(PosteriorModel {
            parent,
            mean,
            covariance,
        })
    }

    pub fn parent(&self) -> &Arc<LowRankGP> {
        &self.parent
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn rank(&self) -> usize {
        self.mean.len()
    }

    /// Diagonal ridge applied before factorizations.
    fn ridge(&self) -> f64 {
        1e-10 * self.covariance.trace() / self.rank().max(1) as f64
    }

    fn ridged_covariance(&self) -> DMatrix<f64> {
        let mut c = self.covariance.clone();
        let ridge = self.ridge();
        for i in 0..c.nrows() {
            c[(i, i)] += ridge;
        }
        c
    }

    /// Draw coefficients `mean + A z` with `A A^T` the (ridged) covariance
    /// and `z` standard normal. Deterministic for a fixed rng state.
    pub fn sample(&self, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        let factor = self.sqrt_factor()?;
        let z = DVector::from_fn(self.rank(), |_, _| {
            rand::Rng::sample::<f64, _>(rng, rand_distr::StandardNormal)
        });
        Ok(&self.mean + factor * z)
    }

    /// Square-root factor `V diag(sqrt(lambda))` of the ridged covariance.
    fn sqrt_factor(&self) -> Result<DMatrix<f64>> {
        let eig = self.ridged_covariance().symmetric_eigen();
        let trace = self.covariance.trace();
        let floor = -1e-10 * trace.abs() - 1e-300;
        let mut factor = eig.eigenvectors;
        for k in 0..self.rank() {
            let l = eig.eigenvalues[k];
            if l < floor {
                return Err(Error::numeric(format!(
                    "posterior covariance is not positive semi-definite (eigenvalue {l:.3e})"
                )));
            }
            factor.column_mut(k).scale_mut(l.max(0.0).sqrt());
        }
        Ok(factor)
    }

    /// Log density of `alpha` under the (ridged) posterior Gaussian.
    pub fn log_density(&self, alpha: &DVector<f64>) -> Result<f64> {
        Ok(self.log_density_many(std::slice::from_ref(alpha))?[0])
    }

    /// Log densities of several points, factorizing the covariance once.
    pub fn log_density_many(&self, alphas: &[DVector<f64>]) -> Result<Vec<f64>> {
        let chol = Cholesky::new(self.ridged_covariance()).ok_or_else(|| {
            Error::numeric("posterior covariance factorization failed despite ridge")
        })?;
        let log_det = cholesky_log_det(&chol);
        let norm = -0.5 * (self.rank() as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(alphas
            .iter()
            .map(|alpha| {
                let d = alpha - &self.mean;
                let solved = chol.solve(&d);
                norm - 0.5 * d.dot(&solved)
            })
            .collect())
    }

    /// Surface of the posterior mean coefficients.
    pub fn mean_mesh(&self) -> Result<TriangleMesh> {
        self.parent.instance(&self.mean)
    }

    /// 3x3 predictive covariance of the deformation at a reference vertex.
    pub fn predictive_covariance_at(&self, vertex: usize) -> Matrix3<f64> {
        let r = self.rank();
        let mut phi = DMatrix::zeros(3, r);
        for i in 0..r {
            let block = self.parent.scaled_basis_block(vertex, i);
            phi[(0, i)] = block.x;
            phi[(1, i)] = block.y;
            phi[(2, i)] = block.z;
        }
        let c = &phi * &self.covariance * phi.transpose();
        Matrix3::from_fn(|a, b| c[(a, b)])
    }
}

fn cholesky_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    2.0 * acc
}
