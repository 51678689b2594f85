//! Probabilistic non-rigid surface registration.
//!
//! `morphfit` fits a low-rank Gaussian process shape prior to target triangle
//! meshes. Registration is posed as Bayesian inference over the prior's
//! coefficients and solved with Metropolis–Hastings sampling, using either a
//! random-walk proposal or an informed closest-point proposal whose
//! transition density is available in closed form. The posterior sample set
//! yields per-vertex correspondence uncertainty and can seed new point
//! distribution models.
//!
//! Module map:
//! - [`mesh`] — triangle meshes, PLY/OBJ I/O, normals, boundary detection,
//!   and BVH-accelerated closest-point queries
//! - [`shapemodel`] — kernels and the truncated eigen-expansion shape prior
//! - [`gpreg`] — analytic Gaussian-process regression in coefficient space
//! - [`mcmc`] — the Metropolis–Hastings engine, proposals, and likelihoods
//! - [`registration`] — end-to-end pipelines, uncertainty maps, posterior
//!   point distribution models
//! - [`synth`] — deterministic synthetic benchmark shapes

pub mod error;
pub mod gpreg;
pub mod mcmc;
pub mod mesh;
pub mod registration;
pub mod shapemodel;
pub mod synth;

pub use error::{Error, Result};
pub use mesh::{SurfacePoint, TriangleMesh, VertexNormalField};
pub use shapemodel::{GaussianKernel, LowRankGP, SampleKernel};
