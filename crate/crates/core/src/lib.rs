//! Minimax-optimal state feedback for discrete-time positive linear systems
//! with unconstrained nonnegative disturbances.
//!
//! The pipeline is: [`model`] validates an instance and its standing
//! hypotheses, [`synthesis`] solves the cost-vector LP with the simplex in
//! [`lp`] and extracts the sparse gain, [`bellman`] runs value iteration as
//! an independent check, and [`simulate`] certifies the closed loop by
//! rollouts and spectral bounds. [`cli`] and [`io`] wrap all of it for the
//! command line.

// `!(x >= 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bellman;
pub mod cli;
pub mod io;
pub mod linalg;
pub mod lp;
pub mod model;
pub mod simulate;
pub mod synthesis;

pub use model::{check_hypotheses, validate, HypothesisReport, ProblemInstance};
pub use synthesis::{synthesize, Optimum, SynthesisCertificate, SynthesisStatus};
