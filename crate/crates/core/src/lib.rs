//! Sampling Dirichlet posteriors under truncated multinomial likelihoods.
//!
//! The target is `p(pi | m, alpha) ∝ Dir(pi | alpha) * prod_l TruncMult_{I_l}(m_l | pi)`,
//! where each term conditions a multinomial on zero counts over the index
//! set `I_l`. Two samplers are provided:
//!
//! - [`aux_gibbs`]: a data-augmentation Gibbs sampler that adds geometric
//!   auxiliary counts so every conditional is conjugate;
//! - [`mh`]: a Metropolis-Hastings baseline with a `Dir(beta * pi)` proposal
//!   and burn-in tuning of `beta`.
//!
//! [`diagnostics`] holds autocorrelation, the projected multivariate PSRF and
//! statistic-convergence curves; [`oracle`] integrates the posterior on a
//! simplex mesh for n <= 4; [`harness`] drives multi-chain experiments and
//! writes their outputs.

pub mod aux_gibbs;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod mh;
pub mod oracle;
pub mod simplex;
pub mod trace;
pub mod truncated;

pub use error::{Error, Result};
pub use simplex::{CountVector, DirichletParams, SimplexPoint};
pub use trace::{ChainEnsemble, ChainTrace, SamplerKind};
pub use truncated::{ObservationModel, TruncatedCounts, TruncationSet};
