//! Closest-point proposal: geometry-informed Metropolis–Hastings updates.
//!
//! From the current state the proposal builds closest-point correspondences
//! between the model instance and the target, regresses an analytic
//! coefficient posterior with surface-aligned anisotropic noise, draws a
//! shape from it, and steps toward that draw by a random step length. The
//! correspondence set is a deterministic function of (state, iteration), so
//! the transition density is an explicit mixture over step lengths and the
//! Hastings ratio stays exact.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DVector, Matrix3, Unit, Vector3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{log_sum_exp, Proposal, Proposed, RandomWalkProposal};
use crate::error::{Error, Result};
use crate::gpreg::{regress, LandmarkObservation, PosteriorModel};
use crate::mesh::TriangleMesh;
use crate::shapemodel::LowRankGP;

/// Configuration of the closest-point proposal.
#[derive(Debug, Clone)]
pub struct CpProposalConfig {
    /// Number of correspondence points sampled per step. `None` uses every
    /// model vertex for meshes up to 5000 vertices and a deterministic
    /// 1000-vertex subset beyond that.
    pub points: Option<usize>,
    /// Observation variance along the surface normal (mm^2).
    pub normal_variance: f64,
    /// Observation variance tangential to the surface (mm^2).
    pub tangential_variance: f64,
    /// Step lengths `d` in (0, 1] with their mixture weights.
    pub step_lengths: Vec<(f64, f64)>,
    /// Probability of building correspondences from the target towards the
    /// model instead of the usual direction.
    pub flip_probability: f64,
    /// Drop correspondences whose target point touches the target boundary.
    pub boundary_filter: bool,
    /// Seed for the per-iteration deterministic choices (point subset and
    /// correspondence direction).
    pub stream_seed: u64,
}

impl Default for CpProposalConfig {
    fn default() -> Self {
        CpProposalConfig {
            points: None,
            normal_variance: 3.0,
            tangential_variance: 100.0,
            step_lengths: vec![(0.1, 0.7), (0.5, 0.2), (1.0, 0.1)],
            flip_probability: 0.2,
            boundary_filter: false,
            stream_seed: 0,
        }
    }
}

impl CpProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points == Some(0) {
            return Err(Error::validation("point budget must be at least 1"));
        }
        if self.normal_variance <= 0.0 || self.tangential_variance <= 0.0 {
            return Err(Error::validation("noise variances must be positive"));
        }
        if self.step_lengths.is_empty() {
            return Err(Error::validation("at least one step length is required"));
        }
        let mut total = 0.0;
        for (d, w) in &self.step_lengths {
            if !(*d > 0.0 && *d <= 1.0) {
                return Err(Error::validation(format!(
                    "step length {d} outside (0, 1]; d = 0 would freeze the chain"
                )));
            }
            if *w < 0.0 {
                return Err(Error::validation("step-length weights must be non-negative"));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation("step-length weights must sum to 1"));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::validation("flip probability must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Observation noise of Eq.-style surface-aligned covariance: variance
/// `sigma_n_sq` along the (unit) normal and `sigma_v_sq` in the tangent
/// plane.
pub fn normal_aligned_covariance(
    normal: &Vector3<f64>,
    sigma_n_sq: f64,
    sigma_v_sq: f64,
) -> Result<Matrix3<f64>> {
    let norm = normal.norm();
    if norm < 1e-12 {
        return Err(Error::validation("covariance needs a nonzero normal"));
    }
    let n = normal / norm;
    Ok(Matrix3::identity() * sigma_v_sq + (sigma_n_sq - sigma_v_sq) * n * n.transpose())
}

struct Memo {
    iteration: u64,
    state: DVector<f64>,
    posterior: Option<Arc<PosteriorModel>>,
}

/// The closest-point proposal. Shares the model and target read-only; each
/// chain should own its instance.
pub struct CpProposal {
    model: Arc<LowRankGP>,
    target: Arc<TriangleMesh>,
    config: CpProposalConfig,
    fallback: RandomWalkProposal,
    memo: Mutex<Option<Memo>>,
}

impl CpProposal {
    pub fn new(
        model: Arc<LowRankGP>,
        target: Arc<TriangleMesh>,
        config: CpProposalConfig,
    ) -> Result<CpProposal> {
        config.validate()?;
        if target.is_empty() {
            return Err(Error::validation("target mesh has no triangles"));
        }
        // Warm the shared caches so parallel chains never race on first use.
        target.index();
        target.boundary_vertices();
        Ok(CpProposal {
            model,
            target,
            config,
            // Prior-scale random walk for steps where every correspondence
            // was filtered away.
            fallback: RandomWalkProposal::single(1.0).expect("valid fallback"),
            memo: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &CpProposalConfig {
        &self.config
    }

    fn point_budget(&self, available: usize) -> usize {
        match self.config.points {
            Some(m) => m.min(available),
            None => {
                if available <= 5000 {
                    available
                } else {
                    1000
                }
            }
        }
    }

    /// Correspondence posterior for the given state, deterministic in
    /// `(iteration, alpha)`. `None` means every correspondence was filtered.
    pub fn correspondence_posterior(
        &self,
        iteration: u64,
        alpha: &DVector<f64>,
    ) -> Result<Option<Arc<PosteriorModel>>> {
        if let Some(memo) = self.memo.lock().unwrap().as_ref() {
            if memo.iteration == iteration && memo.state == *alpha {
                return Ok(memo.posterior.clone());
            }
        }

        let mut det = ChaCha8Rng::seed_from_u64(stream_key(self.config.stream_seed, iteration));
        let flip = det.random::<f64>() < self.config.flip_probability;

        let instance = self.model.instance(alpha)?;
        let normals = instance.vertex_normals_lenient();
        let observations = if flip {
            self.flipped_observations(&instance, &normals, &mut det)?
        } else {
            self.forward_observations(&instance, &normals, &mut det)?
        };

        let posterior = if observations.is_empty() {
            None
        } else {
            Some(Arc::new(regress(&self.model, &observations)?))
        };
        *self.memo.lock().unwrap() = Some(Memo {
            iteration,
            state: alpha.clone(),
            posterior: posterior.clone(),
        });
        Ok(posterior)
    }

    /// Model-to-target correspondences: closest target point for each
    /// sampled instance vertex.
    fn forward_observations(
        &self,
        instance: &TriangleMesh,
        normals: &[Option<Unit<Vector3<f64>>>],
        det: &mut ChaCha8Rng,
    ) -> Result<Vec<LandmarkObservation>> {
        let n = instance.vertex_count();
        let budget = self.point_budget(n);
        let vertices: Vec<usize> = if budget >= n {
            (0..n).collect()
        } else {
            let mut picked = rand::seq::index::sample(det, n, budget).into_vec();
            picked.sort_unstable();
            picked
        };

        let reference = self.model.reference().vertices();
        let mut observations = Vec::with_capacity(vertices.len());
        for v in vertices {
            let surface_point = self.target.closest_point(&instance.vertices()[v])?;
            if self.config.boundary_filter && surface_point.touches_boundary(&self.target) {
                continue;
            }
            let Some(normal) = &normals[v] else { continue };
            let noise = normal_aligned_covariance(
                normal,
                self.config.normal_variance,
                self.config.tangential_variance,
            )?;
            let deformation = surface_point.position - reference[v];
            observations.push(LandmarkObservation::new(v, deformation, noise)?);
        }
        Ok(observations)
    }

    /// Target-to-model correspondences: each sampled target vertex pulls its
    /// closest instance point, attributed to the dominant model vertex of
    /// the supporting triangle; the nearest pair wins per model vertex.
    fn flipped_observations(
        &self,
        instance: &TriangleMesh,
        normals: &[Option<Unit<Vector3<f64>>>],
        det: &mut ChaCha8Rng,
    ) -> Result<Vec<LandmarkObservation>> {
        let tn = self.target.vertex_count();
        let budget = self.point_budget(tn);
        let vertices: Vec<usize> = if budget >= tn {
            (0..tn).collect()
        } else {
            let mut picked = rand::seq::index::sample(det, tn, budget).into_vec();
            picked.sort_unstable();
            picked
        };

        let reference = self.model.reference().vertices();
        let target_boundary = self.target.boundary_vertices();
        let mut best: BTreeMap<usize, (f64, Vector3<f64>)> = BTreeMap::new();
        for tv in vertices {
            if self.config.boundary_filter && target_boundary.contains(&(tv as u32)) {
                continue;
            }
            let target_point = self.target.vertices()[tv];
            let surface_point = instance.closest_point(&target_point)?;
            let model_vertex = surface_point.nearest_vertex(instance) as usize;
            let deformation = target_point - reference[model_vertex];
            let entry = best
                .entry(model_vertex)
                .or_insert((surface_point.distance, deformation));
            if surface_point.distance < entry.0 {
                *entry = (surface_point.distance, deformation);
            }
        }

        let mut observations = Vec::with_capacity(best.len());
        for (v, (_, deformation)) in best {
            let Some(normal) = &normals[v] else { continue };
            let noise = normal_aligned_covariance(
                normal,
                self.config.normal_variance,
                self.config.tangential_variance,
            )?;
            observations.push(LandmarkObservation::new(v, deformation, noise)?);
        }
        Ok(observations)
    }
}

impl Proposal for CpProposal {
    fn propose(
        &self,
        iteration: u64,
        current: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<Proposed> {
        match self.correspondence_posterior(iteration, current)? {
            None => {
                let mut fallback = self.fallback.propose(iteration, current, rng)?;
                fallback.tag = "cp-fallback";
                Ok(fallback)
            }
            Some(posterior) => {
                let draw = posterior.sample(rng)?;
                let mut pick: f64 = rng.random();
                let mut step = self.config.step_lengths.last().expect("validated").0;
                for (d, w) in &self.config.step_lengths {
                    pick -= w;
                    if pick < 0.0 {
                        step = *d;
                        break;
                    }
                }
                Ok(Proposed {
                    alpha: current + (draw - current) * step,
                    tag: "cp",
                })
            }
        }
    }

    fn log_transition(
        &self,
        iteration: u64,
        from: &DVector<f64>,
        to: &DVector<f64>,
    ) -> Result<f64> {
        match self.correspondence_posterior(iteration, from)? {
            None => self.fallback.log_transition(iteration, from, to),
            Some(posterior) => {
                let r = from.len() as f64;
                let diff = to - from;
                // Invert `to = from + d (draw - from)` per component and
                // marginalize the step-length mixture; the linear map has
                // Jacobian d^r.
                let draws: Vec<DVector<f64>> = self
                    .config
                    .step_lengths
                    .iter()
                    .map(|(d, _)| from + &diff / *d)
                    .collect();
                let densities = posterior.log_density_many(&draws)?;
                let terms: Vec<f64> = self
                    .config
                    .step_lengths
                    .iter()
                    .zip(densities)
                    .filter(|((_, w), _)| *w > 0.0)
                    .map(|((d, w), density)| w.ln() + density - r * d.ln())
                    .collect();
                Ok(log_sum_exp(&terms))
            }
        }
    }
}

/// Deterministic per-iteration stream key (splitmix64 finalizer).
fn stream_key(seed: u64, iteration: u64) -> u64 {
    let mut z = seed ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
