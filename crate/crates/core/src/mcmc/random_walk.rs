//! Random-walk proposal: a weighted mixture of isotropic Gaussian steps.

use nalgebra::DVector;
use rand::{Rng, RngCore};

use super::{log_sum_exp, Proposal, Proposed};
use crate::error::{Error, Result};

/// Mixture of isotropic Gaussians in coefficient space. Each proposal picks
/// one scale at random; the transition density is the full mixture density,
/// which is symmetric in its arguments.
#[derive(Debug, Clone)]
pub struct RandomWalkProposal {
    components: Vec<(f64, f64)>, // (scale, weight)
}

impl RandomWalkProposal {
    pub fn new(components: Vec<(f64, f64)>) -> Result<RandomWalkProposal> {
        if components.is_empty() {
            return Err(Error::validation("random walk needs at least one scale"));
        }
        let total: f64 = components.iter().map(|(_, w)| *w).sum();
        for (scale, weight) in &components {
            if *scale <= 0.0 || !scale.is_finite() {
                return Err(Error::validation("random-walk scales must be positive"));
            }
            if *weight < 0.0 {
                return Err(Error::validation("random-walk weights must be non-negative"));
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation("random-walk weights must sum to 1"));
        }
        Ok(RandomWalkProposal { components })
    }

    pub fn single(scale: f64) -> Result<RandomWalkProposal> {
        RandomWalkProposal::new(vec![(scale, 1.0)])
    }

    pub fn components(&self) -> &[(f64, f64)] {
        &self.components
    }
}

impl Default for RandomWalkProposal {
    /// Six decade-spaced scales, equally likely.
    fn default() -> Self {
        let scales = [1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5];
        RandomWalkProposal {
            components: scales.iter().map(|&s| (s, 1.0 / 6.0)).collect(),
        }
    }
}

impl Proposal for RandomWalkProposal {
    fn propose(
        &self,
        _iteration: u64,
        current: &DVector<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<Proposed> {
        let mut pick: f64 = rng.random();
        let mut scale = self.components.last().expect("nonempty").0;
        for (s, w) in &self.components {
            pick -= w;
            if pick < 0.0 {
                scale = *s;
                break;
            }
        }
        let step = DVector::from_fn(current.len(), |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal) * scale
        });
        Ok(Proposed {
            alpha: current + step,
            tag: "random-walk",
        })
    }

    fn log_transition(
        &self,
        _iteration: u64,
        from: &DVector<f64>,
        to: &DVector<f64>,
    ) -> Result<f64> {
        let r = from.len() as f64;
        let d2 = (to - from).norm_squared();
        let terms: Vec<f64> = self
            .components
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(s, w)| {
                w.ln() - 0.5 * r * (2.0 * std::f64::consts::PI * s * s).ln()
                    - 0.5 * d2 / (s * s)
            })
            .collect();
        Ok(log_sum_exp(&terms))
    }
}
