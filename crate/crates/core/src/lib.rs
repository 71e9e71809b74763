//! Frequency-decoupled low-light image enhancement.
//!
//! An image is split by a Laplacian pyramid into high-frequency detail
//! levels and a low-frequency base. The base is brightened by learned
//! global and local gamma curves ([`dic`]); the detail levels are denoised
//! by a learned rank-3 factorization and fused across scales ([`mld`]).
//! The enhanced components are folded back into an image ([`pyramid`]).
//!
//! Everything is differentiable through the tape in [`autodiff`] and can be
//! trained with the desk-scale harness in [`harness`].

pub mod autodiff;
pub mod dic;
pub mod error;
pub mod gradsuite;
pub mod harness;
pub mod mld;
pub mod nn;
pub mod pipeline;
pub mod pyramid;
pub mod tensor;

pub use autodiff::{Activation, Gradients, PadMode, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
