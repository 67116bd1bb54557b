//! Radar spatial perception toolkit: polar measurement geometry, OS-CFAR
//! detection, anisotropic uncertainty propagation, Doppler consistency,
//! domain attention fusion, occupancy ground truth, point-cloud metrics,
//! uncertainty-weighted registration and a seeded scene simulator.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bdaf;
pub mod detect;
pub mod doppler;
pub mod error;
pub mod groundtruth;
pub mod io;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod radar;
pub mod registration;
pub mod sim;
pub mod uncertainty;

pub use error::{Error, Result};
