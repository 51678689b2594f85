//! End-to-end registration pipelines.
//!
//! [`register_mcmc`] runs Metropolis–Hastings with a configurable proposal
//! and likelihood, extracts the maximum-a-posteriori sample, thins the
//! post-burn-in chain, and derives per-vertex correspondence uncertainty.
//! [`register_icp`] is the deterministic non-rigid baseline: closest-point
//! correspondences followed by a posterior-mean update, iterated to a fixed
//! point. Posterior sample sets can be pooled into new point distribution
//! models and scored by leave-one-out generalization.

pub mod artifacts;

use std::sync::Arc;

use nalgebra::{DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gpreg::{regress, LandmarkObservation};
use crate::mcmc::{
    mean_surface_distance, metropolis_hastings, symmetric_hausdorff, ChainRecord, CpProposal,
    CpProposalConfig, LikelihoodModel, MixtureProposal, Proposal, RandomWalkProposal,
    SurfaceTarget,
};
use crate::mesh::{TriangleMesh, VertexNormalField};
use crate::shapemodel::LowRankGP;

pub use artifacts::RegistrationMetrics;

/// Starting point of a chain.
#[derive(Debug, Clone)]
pub enum ChainInit {
    Zero,
    /// Standard-normal coefficients drawn from a seed-derived stream.
    RandomPrior,
    Fixed(DVector<f64>),
}

/// Chain schedule: total iterations, burn-in prefix to discard, thinning
/// stride for the retained samples, and the chain seed.
#[derive(Debug, Clone)]
pub struct McmcSettings {
    pub iterations: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub seed: u64,
    pub init: ChainInit,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            iterations: 1000,
            burn_in: 300,
            thinning: 10,
            seed: 0,
            init: ChainInit::Zero,
        }
    }
}

impl McmcSettings {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::validation("iterations must be at least 1"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::validation(format!(
                "burn-in {} must be smaller than the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 {
            return Err(Error::validation("thinning stride must be at least 1"));
        }
        Ok(())
    }
}

/// Proposal selection for [`register_mcmc`].
#[derive(Debug, Clone)]
pub enum ProposalConfig {
    RandomWalk(Vec<(f64, f64)>),
    ClosestPoint(CpProposalConfig),
    Mixture(Vec<(f64, ProposalConfig)>),
}

impl ProposalConfig {
    fn build(
        &self,
        model: &Arc<LowRankGP>,
        target: &Arc<TriangleMesh>,
        seed: u64,
    ) -> Result<Box<dyn Proposal>> {
        Ok(match self {
            ProposalConfig::RandomWalk(components) => {
                Box::new(RandomWalkProposal::new(components.clone())?)
            }
            ProposalConfig::ClosestPoint(config) => {
                let mut config = config.clone();
                // Independent per-iteration streams for different run seeds.
                config.stream_seed ^= seed;
                Box::new(CpProposal::new(
                    Arc::clone(model),
                    Arc::clone(target),
                    config,
                )?)
            }
            ProposalConfig::Mixture(children) => {
                let mut built = Vec::with_capacity(children.len());
                for (weight, child) in children {
                    built.push((*weight, child.build(model, target, seed)?));
                }
                Box::new(MixtureProposal::new(built)?)
            }
        })
    }

    fn label(&self) -> &'static str {
        match self {
            ProposalConfig::RandomWalk(_) => "rw",
            ProposalConfig::ClosestPoint(_) => "cp",
            ProposalConfig::Mixture(_) => "mix",
        }
    }
}

/// Per-vertex variance of registered positions over posterior samples,
/// split into the component along the map normal and the tangential rest.
#[derive(Debug, Clone)]
pub struct UncertaintyMap {
    pub total: Vec<f64>,
    pub normal: Vec<f64>,
    pub tangential: Vec<f64>,
}

/// Per-iteration trajectory of the deterministic baseline.
#[derive(Debug, Clone)]
pub struct IcpTrace {
    pub coefficients: Vec<DVector<f64>>,
    pub mean_distances: Vec<f64>,
}

/// What produced a [`RegistrationResult`].
#[derive(Debug, Clone)]
pub enum RunTrace {
    Mcmc(ChainRecord),
    Icp(IcpTrace),
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub map_coefficients: DVector<f64>,
    pub map_mesh: TriangleMesh,
    /// Thinned post-burn-in coefficient samples (empty for the baseline).
    pub samples: Vec<DVector<f64>>,
    pub uncertainty: Option<UncertaintyMap>,
    pub metrics: RegistrationMetrics,
    pub trace: RunTrace,
}

/// Sampling-based registration. The map estimate is the highest-posterior
/// state over the whole chain; uncertainty comes from the thinned samples.
pub fn register_mcmc(
    model: &Arc<LowRankGP>,
    target: &Arc<TriangleMesh>,
    likelihood: LikelihoodModel,
    proposal: &ProposalConfig,
    settings: &McmcSettings,
) -> Result<RegistrationResult> {
    settings.validate()?;
    let initial = match &settings.init {
        ChainInit::Zero => DVector::zeros(model.rank()),
        ChainInit::RandomPrior => {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0xA5A5_5A5A_0F0F_F0F0);
            DVector::from_fn(model.rank(), |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            })
        }
        ChainInit::Fixed(alpha) => {
            if alpha.len() != model.rank() {
                return Err(Error::validation(format!(
                    "initial coefficients have length {} for a rank-{} model",
                    alpha.len(),
                    model.rank()
                )));
            }
            alpha.clone()
        }
    };

    let built = proposal.build(model, target, settings.seed)?;
    let surface = SurfaceTarget::new(Arc::clone(model), Arc::clone(target), likelihood.clone())?;
    let mut chain = metropolis_hastings(
        &initial,
        built.as_ref(),
        &surface,
        settings.iterations,
        settings.seed,
    )?;
    chain.config = format!(
        "{{\"proposal\":\"{}\",\"likelihood\":{:?},\"iterations\":{},\"burn_in\":{},\"thinning\":{},\"seed\":{}}}",
        proposal.label(),
        likelihood,
        settings.iterations,
        settings.burn_in,
        settings.thinning,
        settings.seed
    );

    let map_index = chain.map_index().expect("nonempty chain");
    let map_coefficients = chain.steps[map_index].state.clone();
    let map_mesh = model.instance(&map_coefficients)?;

    let samples: Vec<DVector<f64>> = chain
        .steps
        .iter()
        .filter(|s| {
            s.iteration >= settings.burn_in
                && (s.iteration - settings.burn_in) % settings.thinning == 0
        })
        .map(|s| s.state.clone())
        .collect();

    let uncertainty = if samples.len() >= 2 {
        let normals = map_mesh.vertex_normals()?;
        Some(uncertainty_map(model, &samples, &normals)?)
    } else {
        None
    };

    let wall_clock_ms = chain.steps.last().map(|s| s.elapsed_ms).unwrap_or(0.0);
    let metrics = RegistrationMetrics {
        method: format!("mcmc-{}-{}", proposal.label(), likelihood_label(&likelihood)),
        target: None,
        seed: settings.seed,
        mean_l2_mm: mean_surface_distance(target, &map_mesh)?,
        hausdorff_mm: symmetric_hausdorff(target, &map_mesh)?,
        acceptance_rate: Some(chain.acceptance_rate()),
        iterations: settings.iterations,
        wall_clock_ms,
    };

    Ok(RegistrationResult {
        map_coefficients,
        map_mesh,
        samples,
        uncertainty,
        metrics,
        trace: RunTrace::Mcmc(chain),
    })
}

fn likelihood_label(likelihood: &LikelihoodModel) -> &'static str {
    match likelihood {
        LikelihoodModel::L2 { .. } => "l2",
        LikelihoodModel::Hausdorff { .. } => "hausdorff",
        LikelihoodModel::Collective { .. } => "collective",
    }
}

/// Deterministic non-rigid baseline: closest-point observations with
/// isotropic noise, posterior-mean update, until `iterations` or until the
/// mean distance changes by less than 1e-4 mm.
pub fn register_icp(
    model: &Arc<LowRankGP>,
    target: &Arc<TriangleMesh>,
    iterations: u64,
    sigma_regression: f64,
) -> Result<RegistrationResult> {
    if iterations == 0 {
        return Err(Error::validation("iterations must be at least 1"));
    }
    if sigma_regression <= 0.0 {
        return Err(Error::validation("regression noise must be positive"));
    }

    let start = std::time::Instant::now();
    let reference = model.reference().vertices();
    let sigma_sq = sigma_regression * sigma_regression;
    let mut alpha = DVector::zeros(model.rank());
    let mut trace = IcpTrace {
        coefficients: Vec::new(),
        mean_distances: Vec::new(),
    };
    let mut previous = f64::INFINITY;
    for _ in 0..iterations {
        let instance = model.instance(&alpha)?;
        let mut observations = Vec::with_capacity(reference.len());
        for (v, p) in instance.vertices().iter().enumerate() {
            let sp = target.closest_point(p)?;
            observations.push(LandmarkObservation::isotropic(
                v,
                sp.position - reference[v],
                sigma_sq,
            )?);
        }
        alpha = regress(model, &observations)?.mean().clone();

        let updated = model.instance(&alpha)?;
        let mean_distance = mean_surface_distance(target, &updated)?;
        trace.coefficients.push(alpha.clone());
        trace.mean_distances.push(mean_distance);
        if (previous - mean_distance).abs() < 1e-4 {
            break;
        }
        previous = mean_distance;
    }

    let map_mesh = model.instance(&alpha)?;
    let metrics = RegistrationMetrics {
        method: "icp".to_string(),
        target: None,
        seed: 0,
        mean_l2_mm: mean_surface_distance(target, &map_mesh)?,
        hausdorff_mm: symmetric_hausdorff(target, &map_mesh)?,
        acceptance_rate: None,
        iterations: trace.coefficients.len() as u64,
        wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(RegistrationResult {
        map_coefficients: alpha,
        map_mesh,
        samples: Vec::new(),
        uncertainty: None,
        metrics,
        trace: RunTrace::Icp(trace),
    })
}

/// Per-vertex sample variance of instance positions, decomposed along the
/// given normals: `total = trace(C)`, `normal = n^T C n`,
/// `tangential = total - normal`.
pub fn uncertainty_map(
    model: &LowRankGP,
    samples: &[DVector<f64>],
    normals: &VertexNormalField,
) -> Result<UncertaintyMap> {
    if samples.len() < 2 {
        return Err(Error::validation(
            "uncertainty needs at least 2 posterior samples",
        ));
    }
    let n = model.reference().vertex_count();
    if normals.len() != n {
        return Err(Error::validation(
            "normal field does not match the reference vertex count",
        ));
    }

    let meshes: Vec<TriangleMesh> = samples
        .iter()
        .map(|alpha| model.instance(alpha))
        .collect::<Result<_>>()?;

    let mut total = Vec::with_capacity(n);
    let mut normal = Vec::with_capacity(n);
    let mut tangential = Vec::with_capacity(n);
    let count = samples.len() as f64;
    for v in 0..n {
        let mut mean = Vector3::zeros();
        for mesh in &meshes {
            mean += mesh.vertices()[v].coords;
        }
        mean /= count;
        let mut cov = Matrix3::zeros();
        for mesh in &meshes {
            let d = mesh.vertices()[v].coords - mean;
            cov += d * d.transpose();
        }
        cov /= count - 1.0;

        let t = cov.trace();
        let d = normals.normal(v);
        let along = (d.transpose() * cov * d)[0];
        total.push(t);
        normal.push(along);
        tangential.push(t - along);
    }
    Ok(UncertaintyMap {
        total,
        normal,
        tangential,
    })
}

/// Deformation fields (instance minus reference) for a set of coefficient
/// samples.
pub fn deformation_fields(
    model: &LowRankGP,
    samples: &[DVector<f64>],
) -> Result<Vec<Vec<Vector3<f64>>>> {
    let n = model.reference().vertex_count();
    samples
        .iter()
        .map(|alpha| {
            let u = model.deformation(alpha)?;
            Ok((0..n)
                .map(|v| Vector3::new(u[3 * v], u[3 * v + 1], u[3 * v + 2]))
                .collect())
        })
        .collect()
}

/// Classical point distribution model pooled from deformation sample sets.
pub fn build_pdm(
    reference: &TriangleMesh,
    sample_sets: &[Vec<Vec<Vector3<f64>>>],
) -> Result<LowRankGP> {
    let pooled: Vec<Vec<Vector3<f64>>> = sample_sets.iter().flatten().cloned().collect();
    if pooled.len() < 2 {
        return Err(Error::validation(
            "a point distribution model needs at least 2 samples",
        ));
    }
    LowRankGP::from_deformation_samples(reference, &pooled, None)
}

/// Reconstruction error of a held-out deformation as a function of the
/// number of leading components used.
#[derive(Debug, Clone)]
pub struct GeneralizationCurve {
    /// `errors[c - 1]` is the RMS vertex reconstruction error (mm) using the
    /// first `c` components; counts beyond the model rank reuse the full
    /// basis, so the curve is flat there.
    pub errors: Vec<f64>,
}

impl GeneralizationCurve {
    pub fn error_at(&self, components: usize) -> f64 {
        self.errors[components - 1]
    }

    pub fn max_components(&self) -> usize {
        self.errors.len()
    }
}

/// Score how well `pdm` represents an unseen deformation field.
pub fn generalization(
    pdm: &LowRankGP,
    held_out: &[Vector3<f64>],
    max_components: usize,
) -> Result<GeneralizationCurve> {
    let n = pdm.reference().vertex_count();
    if held_out.len() != n {
        return Err(Error::validation(format!(
            "held-out field has {} entries for {} vertices",
            held_out.len(),
            n
        )));
    }
    if max_components == 0 {
        return Err(Error::validation("component count must be at least 1"));
    }

    let mut flat = DVector::zeros(3 * n);
    for (v, d) in held_out.iter().enumerate() {
        flat[3 * v] = d.x;
        flat[3 * v + 1] = d.y;
        flat[3 * v + 2] = d.z;
    }
    let centered = &flat - pdm.mean();
    let inner = pdm.basis().transpose() * &centered;

    let mut errors = Vec::with_capacity(max_components);
    let mut reconstruction = pdm.mean().clone();
    let mut used = 0usize;
    for c in 1..=max_components {
        let limit = c.min(pdm.rank());
        while used < limit {
            reconstruction += pdm.basis().column(used) * inner[used];
            used += 1;
        }
        let residual = &flat - &reconstruction;
        let mut acc = 0.0;
        for v in 0..n {
            acc += residual[3 * v].powi(2)
                + residual[3 * v + 1].powi(2)
                + residual[3 * v + 2].powi(2);
        }
        errors.push((acc / n as f64).sqrt());
    }
    Ok(GeneralizationCurve { errors })
}
