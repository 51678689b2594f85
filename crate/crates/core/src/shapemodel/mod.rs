//! Shape priors over deformations of a reference mesh.
//!
//! A prior is a Gaussian process on per-vertex 3D deformation fields,
//! truncated to its leading eigenpairs so that a shape is parameterized by a
//! coefficient vector with independent standard-normal entries. Kernels may
//! be analytic (smooth Gaussian) or estimated from example deformations
//! (classical point distribution models).

mod serial;

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

pub use serial::FORMAT_TAG;

/// Matrix-valued covariance between deformations at two reference vertices,
/// plus the prior mean deformation.
pub trait Kernel {
    fn eval(&self, i: usize, xi: &Point3<f64>, j: usize, xj: &Point3<f64>) -> Matrix3<f64>;

    fn mean(&self, _i: usize, _xi: &Point3<f64>) -> Vector3<f64> {
        Vector3::zeros()
    }
}

/// Smooth isotropic kernel `g(x, x') I_3` with
/// `g(x, x') = scale * exp(-|x - x'|^2 / bandwidth^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    scale: f64,
    bandwidth: f64,
}

impl GaussianKernel {
    /// `scale` in mm^2, `bandwidth` in mm; both must be positive.
    pub fn new(scale: f64, bandwidth: f64) -> Result<GaussianKernel> {
        if scale <= 0.0 || !scale.is_finite() {
            return Err(Error::validation("kernel scale must be positive"));
        }
        if bandwidth <= 0.0 || !bandwidth.is_finite() {
            return Err(Error::validation("kernel bandwidth must be positive"));
        }
        Ok(GaussianKernel { scale, bandwidth })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

impl Kernel for GaussianKernel {
    fn eval(&self, _i: usize, xi: &Point3<f64>, _j: usize, xj: &Point3<f64>) -> Matrix3<f64> {
        let g = self.scale * (-(xi - xj).norm_squared() / (self.bandwidth * self.bandwidth)).exp();
        Matrix3::identity() * g
    }
}

/// Empirical mean and covariance of example deformation fields:
/// `k(x, x') = sum_i (u_i(x) - mean(x)) (u_i(x') - mean(x'))^T / (n - 1)`.
#[derive(Debug, Clone)]
pub struct SampleKernel {
    mean: Vec<Vector3<f64>>,
    centered: Vec<Vec<Vector3<f64>>>,
}

impl SampleKernel {
    /// Estimate from at least two deformation samples, each with one 3D
    /// deformation per reference vertex.
    pub fn from_samples(
        samples: &[Vec<Vector3<f64>>],
        reference: &TriangleMesh,
    ) -> Result<SampleKernel> {
        if samples.len() < 2 {
            return Err(Error::validation(format!(
                "sample kernel needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        let n = reference.vertex_count();
        for (k, s) in samples.iter().enumerate() {
            if s.len() != n {
                return Err(Error::validation(format!(
                    "sample {k} has {} deformations for {} reference vertices",
                    s.len(),
                    n
                )));
            }
        }
        let mut mean = vec![Vector3::zeros(); n];
        for s in samples {
            for (m, d) in mean.iter_mut().zip(s) {
                *m += d;
            }
        }
        for m in &mut mean {
            *m /= samples.len() as f64;
        }
        let centered = samples
            .iter()
            .map(|s| s.iter().zip(&mean).map(|(d, m)| d - m).collect())
            .collect();
        Ok(SampleKernel { mean, centered })
    }

    pub fn sample_count(&self) -> usize {
        self.centered.len()
    }

    pub fn mean_deformation(&self) -> &[Vector3<f64>] {
        &self.mean
    }
}

impl Kernel for SampleKernel {
    fn eval(&self, i: usize, _xi: &Point3<f64>, j: usize, _xj: &Point3<f64>) -> Matrix3<f64> {
        let mut acc = Matrix3::zeros();
        for sample in &self.centered {
            acc += sample[i] * sample[j].transpose();
        }
        acc / (self.centered.len() as f64 - 1.0)
    }

    fn mean(&self, i: usize, _xi: &Point3<f64>) -> Vector3<f64> {
        self.mean[i]
    }
}

/// Options for [`build_low_rank_with`]. Above `nystrom_threshold` vertices
/// the dense eigendecomposition is replaced by a landmark (Nyström)
/// approximation with `nystrom_landmarks` subsampled vertices.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub nystrom_threshold: usize,
    pub nystrom_landmarks: usize,
    pub nystrom_seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            nystrom_threshold: 2000,
            nystrom_landmarks: 1000,
            nystrom_seed: 0,
        }
    }
}

/// Truncated eigen-expansion of a kernel over the reference vertices:
/// deformations `u[alpha](x) = mean(x) + sum_i alpha_i sqrt(lambda_i) phi_i(x)`
/// with `alpha_i ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct LowRankGP {
    reference: TriangleMesh,
    /// Non-increasing, non-negative eigenvalues (mm^2).
    eigenvalues: DVector<f64>,
    /// Column `i` holds eigenfunction `phi_i` sampled at the vertices
    /// (3n entries, vertex-major). Columns are orthonormal.
    basis: DMatrix<f64>,
    /// Mean deformation, flattened to 3n entries.
    mean: DVector<f64>,
}

/// Result of projecting a deformation field into a model's coefficient
/// space. `zeroed` lists coefficients suppressed because their eigenvalue
/// vanishes.
#[derive(Debug, Clone)]
pub struct Projection {
    pub coefficients: DVector<f64>,
    pub zeroed: Vec<usize>,
}

/// Dense eigendecomposition (or Nyström approximation, see
/// [`BuildOptions`]) of the kernel matrix over the reference vertices,
/// keeping the `rank` largest eigenpairs.
pub fn build_low_rank<K: Kernel + ?Sized>(
    kernel: &K,
    reference: &TriangleMesh,
    rank: usize,
) -> Result<LowRankGP> {
    build_low_rank_with(kernel, reference, rank, &BuildOptions::default())
}

pub fn build_low_rank_with<K: Kernel + ?Sized>(
    kernel: &K,
    reference: &TriangleMesh,
    rank: usize,
    options: &BuildOptions,
) -> Result<LowRankGP> {
    let n = reference.vertex_count();
    if n == 0 {
        return Err(Error::validation("cannot build a model on an empty mesh"));
    }
    if rank == 0 || rank > 3 * n {
        return Err(Error::validation(format!(
            "rank must be in 1..={} (3 x vertex count), got {rank}",
            3 * n
        )));
    }

    let mean = DVector::from_fn(3 * n, |k, _| {
        kernel.mean(k / 3, &reference.vertices()[k / 3])[k % 3]
    });

    let (eigenvalues, basis) = if n <= options.nystrom_threshold {
        dense_eigenpairs(kernel, reference, rank)?
    } else {
        nystrom_eigenpairs(kernel, reference, rank, options)?
    };

    Ok(LowRankGP {
        reference: reference.clone(),
        eigenvalues,
        basis,
        mean,
    })
}

fn kernel_matrix<K: Kernel + ?Sized>(
    kernel: &K,
    mesh: &TriangleMesh,
    rows: &[usize],
    cols: &[usize],
) -> DMatrix<f64> {
    let vs = mesh.vertices();
    let mut k = DMatrix::zeros(3 * rows.len(), 3 * cols.len());
    for (bi, &i) in rows.iter().enumerate() {
        for (bj, &j) in cols.iter().enumerate() {
            let block = kernel.eval(i, &vs[i], j, &vs[j]);
            k.view_mut((3 * bi, 3 * bj), (3, 3)).copy_from(&block);
        }
    }
    k
}

/// Sorted (descending) eigenpairs with small negative eigenvalues clamped to
/// zero; eigenvalues below `-1e-8 * lambda_max` are a numeric error.
fn sorted_clamped_eigenpairs(
    matrix: DMatrix<f64>,
    rank: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let dim = matrix.nrows();
    let eig = matrix.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let rank = rank.min(dim);
    let mut values = DVector::zeros(rank);
    let mut vectors = DMatrix::zeros(dim, rank);
    for (out, &src) in order.iter().take(rank).enumerate() {
        let lambda = eig.eigenvalues[src];
        if lambda < -1e-8 * lambda_max {
            return Err(Error::numeric(format!(
                "kernel matrix is not positive semi-definite: eigenvalue {lambda:.3e} \
                 below tolerance relative to {lambda_max:.3e}"
            )));
        }
        values[out] = lambda.max(0.0);
        vectors.set_column(out, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

fn dense_eigenpairs<K: Kernel + ?Sized>(
    kernel: &K,
    reference: &TriangleMesh,
    rank: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = reference.vertex_count();
    let all: Vec<usize> = (0..n).collect();
    let k = kernel_matrix(kernel, reference, &all, &all);
    sorted_clamped_eigenpairs(k, rank)
}

/// Landmark approximation: with `B = K_nm K_mm^{-1/2}` the kernel matrix is
/// approximated by `B B^T`, whose eigenpairs come from the small
/// eigendecomposition of `B^T B`. Basis columns stay exactly orthonormal.
fn nystrom_eigenpairs<K: Kernel + ?Sized>(
    kernel: &K,
    reference: &TriangleMesh,
    rank: usize,
    options: &BuildOptions,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = reference.vertex_count();
    let m = options.nystrom_landmarks.clamp(1, n);
    if rank > 3 * m {
        return Err(Error::validation(format!(
            "rank {rank} exceeds the Nystrom capacity {} (3 x landmarks); \
             raise nystrom_landmarks",
            3 * m
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.nystrom_seed);
    let mut landmarks: Vec<usize> = rand::seq::index::sample(&mut rng, n, m).into_vec();
    landmarks.sort_unstable();

    let all: Vec<usize> = (0..n).collect();
    let k_nm = kernel_matrix(kernel, reference, &all, &landmarks);
    let k_mm = kernel_matrix(kernel, reference, &landmarks, &landmarks);

    // Inverse square root of K_mm through its own eigendecomposition.
    let eig = k_mm.symmetric_eigen();
    let lambda_max = eig.eigenvalues.max();
    let inv_sqrt = DMatrix::from_fn(3 * m, 3 * m, |r, c| {
        let mut acc = 0.0;
        for k in 0..3 * m {
            let l = eig.eigenvalues[k];
            if l > 1e-12 * lambda_max {
                acc += eig.eigenvectors[(r, k)] * eig.eigenvectors[(c, k)] / l.sqrt();
            }
        }
        acc
    });

    let b = k_nm * inv_sqrt;
    let gram = b.transpose() * &b;
    let (values, vectors) = sorted_clamped_eigenpairs(gram, rank)?;

    let mut basis = DMatrix::zeros(3 * n, values.len());
    let mut kept = 0;
    for i in 0..values.len() {
        if values[i] > 1e-12 * values[0].max(f64::MIN_POSITIVE) {
            let col = &b * vectors.column(i) / values[i].sqrt();
            basis.set_column(kept, &col);
            kept += 1;
        }
    }
    let values = DVector::from_fn(kept, |i, _| values[i]);
    let basis = basis.columns(0, kept).into_owned();
    Ok((values, basis))
}

impl LowRankGP {
    /// Classical point distribution model from deformation samples (the
    /// empirical covariance of [`SampleKernel`]), eigen-decomposed through
    /// the small Gram matrix of the centered samples. The rank is at most
    /// `min(3n, samples - 1)`.
    pub fn from_deformation_samples(
        reference: &TriangleMesh,
        samples: &[Vec<Vector3<f64>>],
        max_rank: Option<usize>,
    ) -> Result<LowRankGP> {
        let kernel = SampleKernel::from_samples(samples, reference)?;
        let n = reference.vertex_count();
        let m = samples.len();

        let mut data = DMatrix::zeros(3 * n, m);
        for (c, sample) in kernel.centered.iter().enumerate() {
            for (v, d) in sample.iter().enumerate() {
                data[(3 * v, c)] = d.x;
                data[(3 * v + 1, c)] = d.y;
                data[(3 * v + 2, c)] = d.z;
            }
        }

        let gram = data.transpose() * &data;
        let (gram_values, gram_vectors) = sorted_clamped_eigenpairs(gram, m)?;

        let cap = max_rank
            .unwrap_or(usize::MAX)
            .min(3 * n)
            .min(m.saturating_sub(1));
        let g_max = gram_values.max();
        let mut eigenvalues = Vec::new();
        let mut columns = Vec::new();
        for i in 0..gram_values.len() {
            if eigenvalues.len() >= cap {
                break;
            }
            let g = gram_values[i];
            if g <= 1e-12 * g_max || g <= 0.0 {
                break;
            }
            eigenvalues.push(g / (m as f64 - 1.0));
            columns.push(&data * gram_vectors.column(i) / g.sqrt());
        }

        let rank = eigenvalues.len();
        let mut basis = DMatrix::zeros(3 * n, rank);
        for (i, col) in columns.iter().enumerate() {
            basis.set_column(i, col);
        }
        let mean = DVector::from_fn(3 * n, |k, _| kernel.mean[k / 3][k % 3]);

        Ok(LowRankGP {
            reference: reference.clone(),
            eigenvalues: DVector::from_vec(eigenvalues),
            basis,
            mean,
        })
    }

    pub fn reference(&self) -> &TriangleMesh {
        &self.reference
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Basis column `i` scaled by `sqrt(lambda_i)`, restricted to vertex `v`.
    pub(crate) fn scaled_basis_block(&self, v: usize, i: usize) -> Vector3<f64> {
        let s = self.eigenvalues[i].sqrt();
        Vector3::new(
            self.basis[(3 * v, i)] * s,
            self.basis[(3 * v + 1, i)] * s,
            self.basis[(3 * v + 2, i)] * s,
        )
    }

    pub(crate) fn mean_block(&self, v: usize) -> Vector3<f64> {
        Vector3::new(self.mean[3 * v], self.mean[3 * v + 1], self.mean[3 * v + 2])
    }

    fn check_rank(&self, alpha: &DVector<f64>) -> Result<()> {
        if alpha.len() != self.rank() {
            return Err(Error::validation(format!(
                "coefficient vector has length {} for a rank-{} model",
                alpha.len(),
                self.rank()
            )));
        }
        Ok(())
    }

    /// Deformation field for `alpha`, flattened to 3n entries.
    pub fn deformation(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rank(alpha)?;
        let scaled = DVector::from_fn(self.rank(), |i, _| alpha[i] * self.eigenvalues[i].sqrt());
        Ok(&self.mean + &self.basis * scaled)
    }

    /// The surface for `alpha`: reference vertices displaced by the model
    /// deformation, topology copied from the reference.
    pub fn instance(&self, alpha: &DVector<f64>) -> Result<TriangleMesh> {
        let u = self.deformation(alpha)?;
        let vertices = self
            .reference
            .vertices()
            .iter()
            .enumerate()
            .map(|(v, p)| Point3::new(p.x + u[3 * v], p.y + u[3 * v + 1], p.z + u[3 * v + 2]))
            .collect();
        Ok(TriangleMesh::from_parts_unchecked(
            vertices,
            self.reference.triangles().to_vec(),
        ))
    }

    /// Log density of `alpha` under the standard-normal coefficient prior.
    pub fn log_prior(&self, alpha: &DVector<f64>) -> Result<f64> {
        self.check_rank(alpha)?;
        Ok(standard_normal_log_density(alpha))
    }

    /// Least-squares optimal coefficients for a deformation field (one 3D
    /// vector per reference vertex) under the vertex-sum inner product.
    pub fn project(&self, field: &[Vector3<f64>]) -> Result<Projection> {
        let n = self.reference.vertex_count();
        if field.len() != n {
            return Err(Error::validation(format!(
                "deformation field has {} entries for {} vertices",
                field.len(),
                n
            )));
        }
        let mut flat = DVector::zeros(3 * n);
        for (v, d) in field.iter().enumerate() {
            flat[3 * v] = d.x;
            flat[3 * v + 1] = d.y;
            flat[3 * v + 2] = d.z;
        }
        flat -= &self.mean;
        let inner = self.basis.transpose() * flat;
        let mut coefficients = DVector::zeros(self.rank());
        let mut zeroed = Vec::new();
        for i in 0..self.rank() {
            if self.eigenvalues[i] <= 1e-12 {
                zeroed.push(i);
            } else {
                coefficients[i] = inner[i] / self.eigenvalues[i].sqrt();
            }
        }
        Ok(Projection {
            coefficients,
            zeroed,
        })
    }

    /// Persist as a versioned JSON container (`morphfit-gpmm-v1`).
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        serial::save(self, path)
    }

    /// Load a model saved by [`save`](Self::save), validating the version
    /// tag and array dimensions.
    pub fn load(path: &std::path::Path) -> Result<LowRankGP> {
        serial::load(path)
    }

    pub(crate) fn from_raw_parts(
        reference: TriangleMesh,
        eigenvalues: DVector<f64>,
        basis: DMatrix<f64>,
        mean: DVector<f64>,
    ) -> LowRankGP {
        LowRankGP {
            reference,
            eigenvalues,
            basis,
            mean,
        }
    }
}

/// Log density of the standard multivariate normal:
/// `-(r/2) ln(2 pi) - |alpha|^2 / 2`.
pub fn standard_normal_log_density(alpha: &DVector<f64>) -> f64 {
    let r = alpha.len() as f64;
    -0.5 * r * (2.0 * std::f64::consts::PI).ln() - 0.5 * alpha.norm_squared()
}
