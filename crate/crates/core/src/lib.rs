//! Data-driven unknown-input observers (UIOs) for discrete LTI systems.
//!
//! An observer is synthesized straight from one offline experiment of
//! inputs, outputs and states. No model identification step is involved:
//! the past/future blocks of depth-2 Hankel matrices are enough to decide
//! whether a UIO exists, build its matrices and run the recursive estimator.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: pseudoinverse, kernels, ranks, spectral radius, matrix exponential.
//! * [`trajectory`]: experiment data, Hankel matrices, persistency of excitation.
//! * [`lti`]: simulation, excitation signals, minimality tests and the
//!   `Theta`/permutation machinery used to cross-check data blocks.
//! * [`uio`]: existence test, observer synthesis and state estimation.
//! * [`microgrid`]: DC microgrid generation unit model and the estimation
//!   and attack-detection scenarios.
//! * [`io`]: CSV/JSON file formats.

pub mod error;
pub mod io;
pub mod linalg;
pub mod lti;
pub mod microgrid;
pub mod trajectory;
pub mod uio;

pub use error::{Error, Result};
pub use linalg::{Mat, Tolerance};
pub use lti::{ExcitationKind, ExcitationSpec, LtiSystem};
pub use microgrid::{AttackSpec, DguParams, ScenarioResult};
pub use trajectory::{HankelBlocks, Trajectory};
pub use uio::{ExistenceReport, UioRealization, XiPartition};
