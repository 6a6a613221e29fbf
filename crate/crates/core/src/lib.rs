//! Degradation-representation learning for blind super-resolution.
//!
//! An encoder maps a low-resolution image to a compact degradation
//! representation. A degrader must re-create a second low-resolution image
//! (different content, same degradation) from its clean high-resolution
//! source plus that representation, and an energy-distance term pins the
//! representation cloud to a fixed target distribution. A generator then
//! super-resolves conditioned on the representation.
//!
//! Everything runs on the small f64 autodiff engine in [`tensor`].

pub mod degradation;
pub mod diagnostics;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
