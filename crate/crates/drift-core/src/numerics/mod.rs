//! Differentiable dense-array substrate and linear-algebra kernels.
//!
//! Arrays are row-major `f64`. Differentiable ops are recorded on a [`tape::Tape`]
//! and replayed in reverse; the SVD and QR kernels in [`linalg`] are *not* part
//! of the autodiff graph — they are re-parameterization events that happen
//! between epochs.

pub mod array;
pub mod error;
pub mod linalg;
pub mod optim;
pub mod tape;

pub use array::{Array, ParamRef, Parameter};
pub use linalg::{qr_orthonormalize, svd, QrResult, SvdResult};
pub use optim::Adam;
pub use tape::{NodeId, Tape};
