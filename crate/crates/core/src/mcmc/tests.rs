use std::sync::Arc;

use nalgebra::{DVector, Matrix3, Point3, Rotation3, Vector3};
use rand::RngCore;

use super::likelihood::{mean_surface_distance, symmetric_hausdorff};
use super::*;
use crate::shapemodel::{build_low_rank, GaussianKernel};
use crate::synth;

struct ToyTarget {
    rank: usize,
    log_likelihood: Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
    log_prior: Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
}

impl ToyTarget {
    fn flat(rank: usize) -> ToyTarget {
        ToyTarget {
            rank,
            log_likelihood: Box::new(|_| 0.0),
            log_prior: Box::new(|_| 0.0),
        }
    }

    fn standard_normal(rank: usize) -> ToyTarget {
        ToyTarget {
            rank,
            log_likelihood: Box::new(|_| 0.0),
            log_prior: Box::new(standard_normal_log_density),
        }
    }
}

impl TargetDensity for ToyTarget {
    fn rank(&self) -> usize {
        self.rank
    }
    fn log_likelihood(&self, alpha: &DVector<f64>) -> Result<f64> {
        Ok((self.log_likelihood)(alpha))
    }
    fn log_prior(&self, alpha: &DVector<f64>) -> f64 {
        (self.log_prior)(alpha)
    }
}

// --- engine -------------------------------------------------------------------

#[test]
fn symmetric_proposal_on_flat_target_always_accepts() {
    let target = ToyTarget::flat(3);
    let proposal = RandomWalkProposal::single(0.5).unwrap();
    let chain =
        metropolis_hastings(&DVector::zeros(3), &proposal, &target, 500, 7).unwrap();
    assert_eq!(chain.acceptance_rate(), 1.0);
}

#[test]
fn random_walk_recovers_the_standard_normal() {
    let target = ToyTarget::standard_normal(2);
    let proposal = RandomWalkProposal::single(0.5).unwrap();
    let chain =
        metropolis_hastings(&DVector::zeros(2), &proposal, &target, 50_000, 3).unwrap();

    let states: Vec<&DVector<f64>> = chain.steps.iter().map(|s| &s.state).collect();
    let n = states.len() as f64;
    let mean = states.iter().fold(DVector::zeros(2), |acc, s| acc + *s) / n;
    assert!(mean.norm() < 0.05, "mean {mean}");

    let mut cov = nalgebra::Matrix2::zeros();
    for s in &states {
        let d = *s - &mean;
        cov += nalgebra::Matrix2::new(d[0] * d[0], d[0] * d[1], d[1] * d[0], d[1] * d[1]);
    }
    cov /= n - 1.0;
    assert!((cov[(0, 0)] - 1.0).abs() < 0.1, "var0 {}", cov[(0, 0)]);
    assert!((cov[(1, 1)] - 1.0).abs() < 0.1, "var1 {}", cov[(1, 1)]);
    assert!(cov[(0, 1)].abs() < 0.1, "cross {}", cov[(0, 1)]);
}

#[test]
fn impossible_proposals_freeze_the_chain() {
    // Likelihood is finite only at the exact initial state.
    let target = ToyTarget {
        rank: 2,
        log_likelihood: Box::new(|a: &DVector<f64>| {
            if a.norm() == 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }),
        log_prior: Box::new(|_| 0.0),
    };
    let proposal = RandomWalkProposal::single(1.0).unwrap();
    let chain = metropolis_hastings(&DVector::zeros(2), &proposal, &target, 200, 5).unwrap();
    assert_eq!(chain.acceptance_rate(), 0.0);
    for step in &chain.steps {
        assert_eq!(step.state, DVector::zeros(2));
    }
}

#[test]
fn non_finite_initial_state_is_an_error() {
    let target = ToyTarget {
        rank: 1,
        log_likelihood: Box::new(|_| f64::NEG_INFINITY),
        log_prior: Box::new(|_| 0.0),
    };
    let proposal = RandomWalkProposal::single(1.0).unwrap();
    let err = metropolis_hastings(&DVector::zeros(1), &proposal, &target, 10, 1).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
}

#[test]
fn acceptance_ratio_reduces_to_posterior_ratio_for_symmetric_proposals() {
    let target = ToyTarget::standard_normal(2);
    let proposal = RandomWalkProposal::single(0.8).unwrap();
    let chain = metropolis_hastings(&DVector::zeros(2), &proposal, &target, 10, 11).unwrap();

    let mut previous_state = DVector::zeros(2);
    let mut previous_ll = 0.0;
    let mut previous_lp = standard_normal_log_density(&previous_state);
    for step in &chain.steps {
        let hand = (step.proposed_log_likelihood + step.proposed_log_prior)
            - (previous_ll + previous_lp);
        assert!(
            (step.log_accept_ratio - hand).abs() < 1e-12,
            "recorded {} vs hand {hand}",
            step.log_accept_ratio
        );
        if step.accepted {
            previous_state = step.proposed.clone();
            previous_ll = step.proposed_log_likelihood;
            previous_lp = step.proposed_log_prior;
        }
        assert_eq!(step.state, previous_state);
    }
}

#[test]
fn chains_are_deterministic_per_seed() {
    let target = ToyTarget::standard_normal(3);
    let proposal = RandomWalkProposal::default();
    let a = metropolis_hastings(&DVector::zeros(3), &proposal, &target, 300, 42).unwrap();
    let b = metropolis_hastings(&DVector::zeros(3), &proposal, &target, 300, 42).unwrap();
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert_eq!(x.state, y.state);
        assert_eq!(x.accepted, y.accepted);
    }
}

#[test]
fn chain_csv_has_one_row_per_iteration() {
    let target = ToyTarget::flat(1);
    let proposal = RandomWalkProposal::single(1.0).unwrap();
    let chain = metropolis_hastings(&DVector::zeros(1), &proposal, &target, 25, 1).unwrap();
    let mut buffer = Vec::new();
    chain.write_csv(&mut buffer).unwrap();
    let text = String::from_utf8(buffer).unwrap();
    assert_eq!(text.lines().count(), 26);
    assert!(text.starts_with("iteration,log_posterior"));
}

/// Hastings correction on a bimodal 1-D target with an asymmetric mixture
/// proposal: the empirical mode masses must match quadrature.
#[test]
fn asymmetric_mixture_proposal_leaves_the_target_invariant() {
    let log_density = |x: f64| -> f64 {
        let c1 = 0.3 * (-0.5 * ((x + 2.0) / 0.5).powi(2)).exp() / 0.5;
        let c2 = 0.7 * (-0.5 * ((x - 2.0) / 0.8).powi(2)).exp() / 0.8;
        ((c1 + c2) / (2.0 * std::f64::consts::PI).sqrt()).ln()
    };
    let target = ToyTarget {
        rank: 1,
        log_likelihood: Box::new(move |a: &DVector<f64>| log_density(a[0])),
        log_prior: Box::new(|_| 0.0),
    };

    struct ShiftMixture;
    const COMPONTENTS: [(f64, f64, f64); 2] = [(0.6, 0.7, 0.8), (0.4, -1.2, 1.5)];
    impl Proposal for ShiftMixture {
        fn propose(
            &self,
            _iteration: u64,
            current: &DVector<f64>,
            rng: &mut dyn RngCore,
        ) -> Result<Proposed> {
            let (_, shift, scale) = if rand::Rng::random::<f64>(rng) < COMPONTENTS[0].0 {
                COMPONTENTS[0]
            } else {
                COMPONTENTS[1]
            };
            let z: f64 = rand::Rng::sample(rng, rand_distr::StandardNormal);
            Ok(Proposed {
                alpha: DVector::from_vec(vec![current[0] + shift + scale * z]),
                tag: "shift-mixture",
            })
        }

        fn log_transition(
            &self,
            _iteration: u64,
            from: &DVector<f64>,
            to: &DVector<f64>,
        ) -> Result<f64> {
            let terms: Vec<f64> = COMPONTENTS
                .iter()
                .map(|(w, shift, scale)| {
                    let d = to[0] - from[0] - shift;
                    w.ln()
                        - 0.5 * (2.0 * std::f64::consts::PI * scale * scale).ln()
                        - 0.5 * d * d / (scale * scale)
                })
                .collect();
            Ok(log_sum_exp(&terms))
        }
    }

    let chain = metropolis_hastings(
        &DVector::from_vec(vec![2.0]),
        &ShiftMixture,
        &target,
        1_000_000,
        17,
    )
    .unwrap();
    let positive = chain.steps.iter().filter(|s| s.state[0] > 0.0).count() as f64
        / chain.steps.len() as f64;

    // Quadrature reference for P(x > 0).
    let quad = |lo: f64, hi: f64| -> f64 {
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * log_density(lo + i as f64 * h).exp()
            })
            .sum::<f64>()
            * h
    };
    let mass_positive = quad(0.0, 12.0) / quad(-12.0, 12.0);
    assert!(
        (positive - mass_positive).abs() < 0.02,
        "empirical {positive} vs analytic {mass_positive}"
    );
}

// --- random walk ----------------------------------------------------------------

#[test]
fn random_walk_transition_is_symmetric() {
    let proposal = RandomWalkProposal::default();
    let a = DVector::from_vec(vec![0.3, -0.7, 1.1]);
    let b = DVector::from_vec(vec![-0.2, 0.4, 0.9]);
    let ab = proposal.log_transition(0, &a, &b).unwrap();
    let ba = proposal.log_transition(0, &b, &a).unwrap();
    assert!((ab - ba).abs() < 1e-12);
}

#[test]
fn default_random_walk_uses_six_decade_scales() {
    let proposal = RandomWalkProposal::default();
    let scales: Vec<f64> = proposal.components().iter().map(|(s, _)| *s).collect();
    assert_eq!(scales, vec![1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5]);
    for (_, w) in proposal.components() {
        assert!((w - 1.0 / 6.0).abs() < 1e-12);
    }
}

#[test]
fn random_walk_density_at_the_centre_matches_the_closed_form() {
    let proposal =
        RandomWalkProposal::new(vec![(0.5, 0.25), (1.0, 0.25), (2.0, 0.5)]).unwrap();
    let r = 3usize;
    let alpha = DVector::from_vec(vec![0.1, 0.2, 0.3]);
    let expected: f64 = proposal
        .components()
        .iter()
        .map(|(s, w)| w * (2.0 * std::f64::consts::PI * s * s).powf(-(r as f64) / 2.0))
        .sum();
    let got = proposal.log_transition(0, &alpha, &alpha).unwrap();
    assert!((got - expected.ln()).abs() < 1e-12);
}

#[test]
fn random_walk_validates_inputs() {
    assert!(RandomWalkProposal::new(vec![]).is_err());
    assert!(RandomWalkProposal::new(vec![(0.0, 1.0)]).is_err());
    assert!(RandomWalkProposal::new(vec![(1.0, 0.6), (0.5, 0.6)]).is_err());
}

// --- likelihoods -----------------------------------------------------------------

fn sheet_pair(offset: f64) -> (TriangleMesh, TriangleMesh) {
    let target = synth::plate_with_bump(6, 4.0, 0.0, 1.0).unwrap();
    let field = vec![Vector3::new(0.0, 0.0, offset); target.vertex_count()];
    let instance = target.displaced(&field).unwrap();
    (target, instance)
}

#[test]
fn l2_likelihood_of_identical_meshes() {
    let mesh = synth::ellipsoid(8, [5.0, 4.0, 3.0]).unwrap();
    let sigma = 0.7;
    let likelihood = LikelihoodModel::L2 { sigma };
    let value = likelihood.log_likelihood(&mesh, &mesh.clone()).unwrap();
    let expected = -(mesh.vertex_count() as f64)
        * (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    assert!((value - expected).abs() < 1e-9, "{value} vs {expected}");
}

#[test]
fn l2_likelihood_of_a_single_vertex_at_sigma() {
    let target = synth::plate_with_bump(4, 2.0, 0.0, 1.0).unwrap();
    let sigma = 0.6;
    let instance =
        TriangleMesh::new(vec![Point3::new(0.0, 0.0, sigma)], vec![]).unwrap();
    let likelihood = LikelihoodModel::L2 { sigma };
    let value = likelihood.log_likelihood(&target, &instance).unwrap();
    let expected = -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln() - 0.5;
    assert!((value - expected).abs() < 1e-12);
}

#[test]
fn l2_likelihood_matches_a_direct_summation_oracle() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    for trial in 0..5 {
        let target = synth::ellipsoid(6, [6.0, 5.0, 4.0]).unwrap();
        let model_mesh = synth::ellipsoid(
            6,
            [
                6.0 + 0.3 * trial as f64,
                5.0 - 0.2 * trial as f64,
                4.0 + 0.1 * trial as f64,
            ],
        )
        .unwrap();
        // Brute-force distances, independent of the spatial index.
        let distances: Vec<f64> = model_mesh
            .vertices()
            .iter()
            .map(|v| {
                (0..target.triangle_count())
                    .map(|t| {
                        let [a, b, c] = target.triangle_vertices(t);
                        let (p, _) = crate::mesh::closest_point_on_triangle(v, &a, &b, &c);
                        (v - p).norm()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        for _ in 0..2 {
            let sigma = rng.random_range(0.4..2.0);
            let oracle: f64 = distances
                .iter()
                .map(|d| {
                    -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
                        - 0.5 * d * d / (sigma * sigma)
                })
                .sum();
            let ours = LikelihoodModel::L2 { sigma }
                .log_likelihood(&target, &model_mesh)
                .unwrap();
            assert!((ours - oracle).abs() < 1e-9);
        }
    }
}

#[test]
fn hausdorff_likelihood_closed_forms() {
    let rate = 1.7;
    let likelihood = LikelihoodModel::Hausdorff { rate };
    let mesh = synth::ellipsoid(8, [5.0, 5.0, 5.0]).unwrap();
    let same = likelihood.log_likelihood(&mesh, &mesh.clone()).unwrap();
    assert!((same - rate.ln()).abs() < 1e-9);

    let (target, instance) = sheet_pair(0.8);
    assert!((symmetric_hausdorff(&target, &instance).unwrap() - 0.8).abs() < 1e-12);
    let shifted = likelihood.log_likelihood(&target, &instance).unwrap();
    assert!((shifted - (rate.ln() - rate * 0.8)).abs() < 1e-9);

    let (_, farther) = sheet_pair(1.5);
    let far_value = likelihood.log_likelihood(&target, &farther).unwrap();
    assert!(far_value < shifted);
}

#[test]
fn collective_likelihood_closed_forms() {
    let sigma = 1.3;
    let rate = 0.9;
    let mesh = synth::ellipsoid(8, [5.0, 4.0, 4.0]).unwrap();
    let likelihood = LikelihoodModel::Collective {
        sigma,
        rate,
        boundary_filter: true,
    };
    let same = likelihood.log_likelihood(&mesh, &mesh.clone()).unwrap();
    let expected =
        -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln() + rate.ln();
    assert!((same - expected).abs() < 1e-9);

    // Sheet at uniform distance t: mean squared distance t^2, Hausdorff t.
    let t = 0.6;
    let (target, instance) = sheet_pair(t);
    for boundary_filter in [false, true] {
        let likelihood = LikelihoodModel::Collective {
            sigma,
            rate,
            boundary_filter,
        };
        let value = likelihood.log_likelihood(&target, &instance).unwrap();
        let expected = -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
            - 0.5 * (t * t) * (t * t) / (sigma * sigma)
            + rate.ln()
            - rate * t;
        assert!((value - expected).abs() < 1e-9, "filter={boundary_filter}");
    }
}

#[test]
fn collective_likelihood_with_partial_targets_stays_finite() {
    let plate = synth::plate_with_bump(10, 20.0, 5.0, 4.0).unwrap();
    let excised = synth::excise(&plate, &Point3::new(0.0, 0.0, 5.0), 6.0).unwrap();
    let likelihood = LikelihoodModel::Collective {
        sigma: 1.0,
        rate: 1.0,
        boundary_filter: true,
    };
    let value = likelihood.log_likelihood(&excised, &plate).unwrap();
    assert!(value.is_finite());

    // A target that is all boundary filters everything away.
    let tri = TriangleMesh::new(
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ],
        vec![[0, 1, 2]],
    )
    .unwrap();
    assert!(likelihood.log_likelihood(&tri, &plate).is_err());
}

#[test]
fn likelihoods_are_invariant_under_rigid_motion() {
    let target = synth::ellipsoid(8, [6.0, 5.0, 4.0]).unwrap();
    let instance = synth::ellipsoid(8, [6.3, 4.8, 4.2]).unwrap();
    let rotation = Rotation3::from_axis_angle(&Vector3::y_axis(), 0.83);
    let translation = Vector3::new(4.0, -2.0, 7.5);
    let transform = |mesh: &TriangleMesh| -> TriangleMesh {
        TriangleMesh::new(
            mesh.vertices()
                .iter()
                .map(|p| rotation * p + translation)
                .collect(),
            mesh.triangles().to_vec(),
        )
        .unwrap()
    };
    let moved_target = transform(&target);
    let moved_instance = transform(&instance);

    let likelihoods = [
        LikelihoodModel::L2 { sigma: 1.0 },
        LikelihoodModel::Hausdorff { rate: 1.0 },
        LikelihoodModel::Collective {
            sigma: 1.0,
            rate: 1.0,
            boundary_filter: false,
        },
    ];
    for likelihood in likelihoods {
        let before = likelihood.log_likelihood(&target, &instance).unwrap();
        let after = likelihood
            .log_likelihood(&moved_target, &moved_instance)
            .unwrap();
        assert!(
            (before - after).abs() < 1e-6,
            "{likelihood:?}: {before} vs {after}"
        );
    }
}

#[test]
fn mean_surface_distance_of_offset_sheets() {
    let (target, instance) = sheet_pair(0.4);
    assert!((mean_surface_distance(&target, &instance).unwrap() - 0.4).abs() < 1e-12);
}

// --- closest-point proposal -------------------------------------------------------

use rand::SeedableRng;
use rand::Rng;

fn cp_setup(rank: usize) -> (Arc<LowRankGP>, Arc<TriangleMesh>) {
    let mesh = synth::ellipsoid(6, [6.0, 5.0, 4.0]).unwrap();
    let kernel = GaussianKernel::new(2.0, 4.0).unwrap();
    let model = Arc::new(build_low_rank(&kernel, &mesh, rank).unwrap());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(91);
    let alpha = DVector::from_fn(rank, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let target = Arc::new(model.instance(&alpha).unwrap());
    (model, target)
}

#[test]
fn noise_covariance_matches_the_axis_aligned_case() {
    let cov = normal_aligned_covariance(&Vector3::x(), 3.0, 100.0).unwrap();
    let expected = Matrix3::from_diagonal(&Vector3::new(3.0, 100.0, 100.0));
    assert!((cov - expected).norm() < 1e-12);
    assert!(normal_aligned_covariance(&Vector3::zeros(), 3.0, 100.0).is_err());
}

#[test]
fn config_rejects_zero_step_lengths() {
    let config = CpProposalConfig {
        step_lengths: vec![(0.0, 1.0)],
        ..CpProposalConfig::default()
    };
    assert!(config.validate().is_err());
    assert!(CpProposalConfig::default().validate().is_ok());
}

#[test]
fn unit_step_transition_equals_the_posterior_density() {
    let (model, target) = cp_setup(6);
    let config = CpProposalConfig {
        step_lengths: vec![(1.0, 1.0)],
        flip_probability: 0.0,
        ..CpProposalConfig::default()
    };
    let proposal = CpProposal::new(Arc::clone(&model), Arc::clone(&target), config).unwrap();
    let current = DVector::zeros(6);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let proposed = proposal.propose(0, &current, &mut rng).unwrap();
    assert_eq!(proposed.tag, "cp");

    let posterior = proposal
        .correspondence_posterior(0, &current)
        .unwrap()
        .expect("correspondences exist");
    let expected = posterior.log_density(&proposed.alpha).unwrap();
    let got = proposal.log_transition(0, &current, &proposed.alpha).unwrap();
    assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
}

#[test]
fn step_length_inversion_reconstructs_the_posterior_draw() {
    let (model, target) = cp_setup(5);
    let d = 0.37;
    let config = CpProposalConfig {
        step_lengths: vec![(d, 1.0)],
        flip_probability: 0.0,
        ..CpProposalConfig::default()
    };
    let proposal = CpProposal::new(model, target, config).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let mut current = DVector::zeros(5);
    for iteration in 0..20 {
        let proposed = proposal.propose(iteration, &current, &mut rng).unwrap();
        // Invert the step-length map and re-apply it.
        let draw = &current + (&proposed.alpha - &current) / d;
        let reconstructed = &current + (&draw - &current) * d;
        assert!((reconstructed - &proposed.alpha).norm() < 1e-10);
        current = proposed.alpha;
    }
}

#[test]
fn all_filtered_correspondences_fall_back_to_random_walk() {
    // A lone-triangle target is boundary everywhere, so the filter removes
    // every correspondence.
    let mesh = synth::plate_with_bump(4, 3.0, 0.3, 1.0).unwrap();
    let kernel = GaussianKernel::new(1.0, 2.0).unwrap();
    let model = Arc::new(build_low_rank(&kernel, &mesh, 4).unwrap());
    let target = Arc::new(
        TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap(),
    );
    let config = CpProposalConfig {
        boundary_filter: true,
        flip_probability: 0.0,
        ..CpProposalConfig::default()
    };
    let proposal = CpProposal::new(Arc::clone(&model), target, config).unwrap();
    let current = DVector::zeros(4);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let proposed = proposal.propose(0, &current, &mut rng).unwrap();
    assert_eq!(proposed.tag, "cp-fallback");

    // The transition density must be the fallback's density.
    let fallback = RandomWalkProposal::single(1.0).unwrap();
    let ours = proposal.log_transition(0, &current, &proposed.alpha).unwrap();
    let expected = fallback.log_transition(0, &current, &proposed.alpha).unwrap();
    assert!((ours - expected).abs() < 1e-12);
}

#[test]
fn cp_proposal_is_deterministic_given_iteration_and_seeds() {
    let (model, target) = cp_setup(5);
    let config = CpProposalConfig {
        flip_probability: 0.5,
        stream_seed: 12,
        ..CpProposalConfig::default()
    };
    let p1 = CpProposal::new(Arc::clone(&model), Arc::clone(&target), config.clone()).unwrap();
    let p2 = CpProposal::new(model, target, config).unwrap();
    let current = DVector::from_element(5, 0.2);
    for iteration in [0u64, 1, 5, 9] {
        let a = p1
            .propose(iteration, &current, &mut rand_chacha::ChaCha8Rng::seed_from_u64(7))
            .unwrap();
        let b = p2
            .propose(iteration, &current, &mut rand_chacha::ChaCha8Rng::seed_from_u64(7))
            .unwrap();
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.tag, b.tag);
    }
}

#[test]
fn cp_chain_moves_toward_the_target() {
    let (model, target) = cp_setup(6);
    let surface = SurfaceTarget::new(
        Arc::clone(&model),
        Arc::clone(&target),
        LikelihoodModel::L2 { sigma: 1.0 },
    )
    .unwrap();
    let proposal =
        CpProposal::new(Arc::clone(&model), Arc::clone(&target), CpProposalConfig::default())
            .unwrap();
    let chain =
        metropolis_hastings(&DVector::zeros(6), &proposal, &surface, 60, 19).unwrap();

    let initial = mean_surface_distance(&target, &model.instance(&DVector::zeros(6)).unwrap())
        .unwrap();
    let map = chain.map_index().unwrap();
    let final_mesh = model.instance(&chain.steps[map].state).unwrap();
    let after = mean_surface_distance(&target, &final_mesh).unwrap();
    assert!(
        after < initial * 0.2,
        "mean distance only improved from {initial} to {after}"
    );
}

// --- mixture proposal ---------------------------------------------------------------

#[test]
fn mixture_weights_are_validated() {
    let rw = || Box::new(RandomWalkProposal::single(1.0).unwrap()) as Box<dyn Proposal>;
    assert!(MixtureProposal::new(vec![]).is_err());
    assert!(MixtureProposal::new(vec![(0.7, rw()), (0.7, rw())]).is_err());
    assert!(MixtureProposal::new(vec![(0.5, rw()), (0.5, rw())]).is_ok());
}

#[test]
fn mixture_transition_marginalizes_components() {
    let narrow = RandomWalkProposal::single(0.3).unwrap();
    let wide = RandomWalkProposal::single(2.0).unwrap();
    let mixture = MixtureProposal::new(vec![
        (0.25, Box::new(narrow.clone()) as Box<dyn Proposal>),
        (0.75, Box::new(wide.clone()) as Box<dyn Proposal>),
    ])
    .unwrap();
    let a = DVector::from_vec(vec![0.0, 0.0]);
    let b = DVector::from_vec(vec![0.5, -0.5]);
    let expected = log_sum_exp(&[
        0.25f64.ln() + narrow.log_transition(0, &a, &b).unwrap(),
        0.75f64.ln() + wide.log_transition(0, &a, &b).unwrap(),
    ]);
    let got = mixture.log_transition(0, &a, &b).unwrap();
    assert!((got - expected).abs() < 1e-12);
}
