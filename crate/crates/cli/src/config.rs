//! Run configuration: a TOML file plus command-line overrides. The merged
//! snapshot is copied into every result directory.

use std::path::{Path, PathBuf};

use morphfit::mcmc::{CpProposalConfig, LikelihoodModel};
use morphfit::registration::{ChainInit, McmcSettings, ProposalConfig};
use morphfit::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub targets: Vec<PathBuf>,
    pub likelihood: LikelihoodSection,
    pub proposal: ProposalSection,
    pub run: RunSection,
    pub reconstruct: Option<ReconstructSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Serialized model file; takes precedence over the inline kernel spec.
    pub path: Option<PathBuf>,
    /// Inline build: reference mesh plus Gaussian kernel parameters.
    pub reference: Option<PathBuf>,
    pub scale: Option<f64>,
    pub bandwidth: Option<f64>,
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LikelihoodSection {
    pub kind: String,
    /// Gaussian width: sigma_l2 (mm) or sigma_cl (mm^2) depending on `kind`.
    pub sigma: f64,
    /// Exponential rate of the Hausdorff term (1/mm).
    pub rate: f64,
    pub boundary_filter: bool,
}

impl Default for LikelihoodSection {
    fn default() -> Self {
        LikelihoodSection {
            kind: "l2".to_string(),
            sigma: 1.0,
            rate: 1.0,
            boundary_filter: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalSection {
    pub kind: String,
    // Closest-point proposal knobs.
    pub points: Option<usize>,
    pub normal_variance: f64,
    pub tangential_variance: f64,
    pub step_lengths: Vec<(f64, f64)>,
    pub flip_probability: f64,
    pub boundary_filter: bool,
    // Random-walk scales with weights.
    pub scales: Vec<(f64, f64)>,
    // Mixture: weight of the closest-point component, remainder random walk.
    pub cp_weight: f64,
}

impl Default for ProposalSection {
    fn default() -> Self {
        let cp = CpProposalConfig::default();
        ProposalSection {
            kind: "cp".to_string(),
            points: cp.points,
            normal_variance: cp.normal_variance,
            tangential_variance: cp.tangential_variance,
            step_lengths: cp.step_lengths,
            flip_probability: cp.flip_probability,
            boundary_filter: cp.boundary_filter,
            scales: [1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5]
                .iter()
                .map(|&s| (s, 1.0 / 6.0))
                .collect(),
            cp_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub method: String,
    pub iterations: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub seeds: Vec<u64>,
    pub init: String,
    pub icp_iterations: u64,
    pub icp_sigma: f64,
    pub output: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            method: "mcmc".to_string(),
            iterations: 1000,
            burn_in: 300,
            thinning: 10,
            seeds: vec![0],
            init: "zero".to_string(),
            icp_iterations: 100,
            icp_sigma: 1.0,
            output: PathBuf::from("results"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructSection {
    pub excise_center: [f64; 3],
    pub excise_radius: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: Some(path.to_path_buf()), source: e })?;
        toml::from_str(&text).map_err(|e| {
            Error::Validation(format!("invalid config {}: {e}", path.display()))
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn likelihood_model(&self) -> Result<LikelihoodModel> {
        let section = &self.likelihood;
        let model = match section.kind.as_str() {
            "l2" => LikelihoodModel::L2 { sigma: section.sigma },
            "hausdorff" => LikelihoodModel::Hausdorff { rate: section.rate },
            "collective" => LikelihoodModel::Collective {
                sigma: section.sigma,
                rate: section.rate,
                boundary_filter: section.boundary_filter,
            },
            other => {
                return Err(Error::Validation(format!(
                    "unknown likelihood {other:?}; expected l2, hausdorff, or collective"
                )))
            }
        };
        model.validate()?;
        Ok(model)
    }

    pub fn proposal_config(&self) -> Result<ProposalConfig> {
        let section = &self.proposal;
        let cp = || -> CpProposalConfig {
            CpProposalConfig {
                points: section.points,
                normal_variance: section.normal_variance,
                tangential_variance: section.tangential_variance,
                step_lengths: section.step_lengths.clone(),
                flip_probability: section.flip_probability,
                boundary_filter: section.boundary_filter,
                stream_seed: 0,
            }
        };
        let config = match section.kind.as_str() {
            "cp" => ProposalConfig::ClosestPoint(cp()),
            "random-walk" => ProposalConfig::RandomWalk(section.scales.clone()),
            "mixture" => {
                let w = section.cp_weight;
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::Validation(
                        "mixture cp_weight must lie in [0, 1]".to_string(),
                    ));
                }
                ProposalConfig::Mixture(vec![
                    (w, ProposalConfig::ClosestPoint(cp())),
                    (1.0 - w, ProposalConfig::RandomWalk(section.scales.clone())),
                ])
            }
            other => {
                return Err(Error::Validation(format!(
                    "unknown proposal {other:?}; expected cp, random-walk, or mixture"
                )))
            }
        };
        Ok(config)
    }

    pub fn mcmc_settings(&self, seed: u64) -> Result<McmcSettings> {
        let init = match self.run.init.as_str() {
            "zero" => ChainInit::Zero,
            "random" => ChainInit::RandomPrior,
            other => {
                return Err(Error::Validation(format!(
                    "unknown init {other:?}; expected zero or random"
                )))
            }
        };
        Ok(McmcSettings {
            iterations: self.run.iterations,
            burn_in: self.run.burn_in,
            thinning: self.run.thinning,
            seed,
            init,
        })
    }
}
