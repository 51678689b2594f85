//! Metropolis–Hastings sampling over shape coefficients.
//!
//! The engine is generic over a [`TargetDensity`] (log likelihood + log
//! prior) and a [`Proposal`] with forward and reverse transition log
//! densities, so the acceptance ratio stays correct for asymmetric,
//! geometry-informed proposals. All arithmetic is in log space.

mod cp_proposal;
mod likelihood;
mod random_walk;

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::shapemodel::{standard_normal_log_density, LowRankGP};

pub use cp_proposal::{normal_aligned_covariance, CpProposal, CpProposalConfig};
pub use likelihood::{mean_surface_distance, symmetric_hausdorff, LikelihoodModel};
pub use random_walk::RandomWalkProposal;

/// Unnormalized posterior split into its likelihood and prior parts.
pub trait TargetDensity: Send + Sync {
    fn rank(&self) -> usize;

    /// May return negative infinity for impossible states; errors are
    /// reserved for structural failures.
    fn log_likelihood(&self, alpha: &DVector<f64>) -> Result<f64>;

    fn log_prior(&self, alpha: &DVector<f64>) -> f64;
}

/// A proposed state together with the tag recorded in the chain.
#[derive(Debug, Clone)]
pub struct Proposed {
    pub alpha: DVector<f64>,
    pub tag: &'static str,
}

/// Proposal distribution with an evaluable transition log density.
///
/// `iteration` feeds any per-iteration deterministic choices a proposal
/// makes, so that `log_transition` can reconstruct the density of exactly
/// the kernel `propose` used at that step.
pub trait Proposal: Send + Sync {
    fn propose(
        &self,
        iteration: u64,
        current: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<Proposed>;

    fn log_transition(
        &self,
        iteration: u64,
        from: &DVector<f64>,
        to: &DVector<f64>,
    ) -> Result<f64>;
}

/// One Metropolis–Hastings step as recorded in a [`ChainRecord`].
#[derive(Debug, Clone)]
pub struct ChainStep {
    pub iteration: u64,
    /// State after the accept/reject decision.
    pub state: DVector<f64>,
    pub log_likelihood: f64,
    pub log_prior: f64,
    pub accepted: bool,
    pub proposal: &'static str,
    /// `ln t` of the acceptance test.
    pub log_accept_ratio: f64,
    pub proposed: DVector<f64>,
    pub proposed_log_likelihood: f64,
    pub proposed_log_prior: f64,
    /// Wall-clock milliseconds since the chain started.
    pub elapsed_ms: f64,
}

impl ChainStep {
    pub fn log_posterior(&self) -> f64 {
        self.log_likelihood + self.log_prior
    }
}

/// Full record of a chain: every step plus the seed and a free-form config
/// snapshot for provenance.
#[derive(Debug, Clone)]
pub struct ChainRecord {
    pub seed: u64,
    pub config: String,
    pub steps: Vec<ChainStep>,
}

impl ChainRecord {
    pub fn acceptance_rate(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().filter(|s| s.accepted).count() as f64 / self.steps.len() as f64
    }

    /// Index of the step with the highest log posterior.
    pub fn map_index(&self) -> Option<usize> {
        let mut best = None;
        let mut best_value = f64::NEG_INFINITY;
        for (i, step) in self.steps.iter().enumerate() {
            if step.log_posterior() >= best_value {
                best_value = step.log_posterior();
                best = Some(i);
            }
        }
        best
    }

    /// Stream the per-iteration log as CSV.
    pub fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(
            out,
            "iteration,log_posterior,log_likelihood,log_prior,accepted,proposal,wall_clock_ms"
        )?;
        for step in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                step.iteration,
                step.log_posterior(),
                step.log_likelihood,
                step.log_prior,
                step.accepted as u8,
                step.proposal,
                step.elapsed_ms
            )?;
        }
        Ok(())
    }
}

/// Run the sampler for `iterations` steps from `initial`, with a chain-owned
/// generator seeded by `seed`. On rejection the state repeats.
pub fn metropolis_hastings(
    initial: &DVector<f64>,
    proposal: &dyn Proposal,
    target: &dyn TargetDensity,
    iterations: u64,
    seed: u64,
) -> Result<ChainRecord> {
    if iterations == 0 {
        return Err(Error::validation("iteration count must be at least 1"));
    }
    if initial.len() != target.rank() {
        return Err(Error::validation(format!(
            "initial state has length {} for a rank-{} target",
            initial.len(),
            target.rank()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = initial.clone();
    let mut log_lik = target.log_likelihood(&current)?;
    let mut log_pri = target.log_prior(&current);
    if !(log_lik + log_pri).is_finite() {
        return Err(Error::validation(
            "log posterior is not finite at the initial state",
        ));
    }

    let start = Instant::now();
    let mut steps = Vec::with_capacity(iterations as usize);
    for iteration in 0..iterations {
        let proposed = proposal.propose(iteration, &current, &mut rng)?;
        let proposed_log_lik = target.log_likelihood(&proposed.alpha)?;
        let proposed_log_pri = target.log_prior(&proposed.alpha);
        let forward = proposal.log_transition(iteration, &current, &proposed.alpha)?;
        let reverse = proposal.log_transition(iteration, &proposed.alpha, &current)?;

        let log_ratio =
            (reverse + proposed_log_lik + proposed_log_pri) - (forward + log_lik + log_pri);
        // NaN compares false, so an undefined ratio rejects.
        let accepted = log_ratio > rng.random::<f64>().ln();
        if accepted {
            current = proposed.alpha.clone();
            log_lik = proposed_log_lik;
            log_pri = proposed_log_pri;
        }
        steps.push(ChainStep {
            iteration,
            state: current.clone(),
            log_likelihood: log_lik,
            log_prior: log_pri,
            accepted,
            proposal: proposed.tag,
            log_accept_ratio: log_ratio,
            proposed: proposed.alpha,
            proposed_log_likelihood: proposed_log_lik,
            proposed_log_prior: proposed_log_pri,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    Ok(ChainRecord {
        seed,
        config: String::new(),
        steps,
    })
}

/// Registration target: a shape model fit to a fixed target surface under a
/// configurable likelihood, with the standard-normal coefficient prior.
pub struct SurfaceTarget {
    model: Arc<LowRankGP>,
    target: Arc<TriangleMesh>,
    likelihood: LikelihoodModel,
}

impl SurfaceTarget {
    pub fn new(
        model: Arc<LowRankGP>,
        target: Arc<TriangleMesh>,
        likelihood: LikelihoodModel,
    ) -> Result<SurfaceTarget> {
        likelihood.validate()?;
        if target.is_empty() {
            return Err(Error::validation("target mesh has no triangles"));
        }
        Ok(SurfaceTarget {
            model,
            target,
            likelihood,
        })
    }

    pub fn model(&self) -> &Arc<LowRankGP> {
        &self.model
    }

    pub fn target(&self) -> &Arc<TriangleMesh> {
        &self.target
    }
}

impl TargetDensity for SurfaceTarget {
    fn rank(&self) -> usize {
        self.model.rank()
    }

    fn log_likelihood(&self, alpha: &DVector<f64>) -> Result<f64> {
        let instance = self.model.instance(alpha)?;
        self.likelihood.log_likelihood(&self.target, &instance)
    }

    fn log_prior(&self, alpha: &DVector<f64>) -> f64 {
        standard_normal_log_density(alpha)
    }
}

/// Weighted mixture of proposals; the transition density marginalizes over
/// the component choice.
pub struct MixtureProposal {
    components: Vec<(f64, Box<dyn Proposal>)>,
}

impl MixtureProposal {
    pub fn new(components: Vec<(f64, Box<dyn Proposal>)>) -> Result<MixtureProposal> {
        if components.is_empty() {
            return Err(Error::validation("mixture proposal needs components"));
        }
        let total: f64 = components.iter().map(|(w, _)| *w).sum();
        if components.iter().any(|(w, _)| *w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation(
                "mixture weights must be non-negative and sum to 1",
            ));
        }
        Ok(MixtureProposal { components })
    }
}

impl Proposal for MixtureProposal {
    fn propose(
        &self,
        iteration: u64,
        current: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<Proposed> {
        let mut pick: f64 = rng.random();
        for (weight, component) in &self.components {
            pick -= weight;
            if pick < 0.0 {
                return component.propose(iteration, current, rng);
            }
        }
        self.components
            .last()
            .expect("nonempty mixture")
            .1
            .propose(iteration, current, rng)
    }

    fn log_transition(
        &self,
        iteration: u64,
        from: &DVector<f64>,
        to: &DVector<f64>,
    ) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.components.len());
        for (weight, component) in &self.components {
            if *weight > 0.0 {
                terms.push(weight.ln() + component.log_transition(iteration, from, to)?);
            }
        }
        Ok(log_sum_exp(&terms))
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests;
