//! Semigroup paraproducts and paralinearization on discrete sub-Riemannian scenes.
//!
//! Every operator is realized exactly through the eigendecomposition of the
//! sub-Laplacian; the `dt/t` integrals that define paraproducts are discretized
//! by a log-spaced quadrature whose reconstruction error is measured, not assumed.

pub mod error;
pub mod paralin;
pub mod paraproduct;
pub mod propagate;
pub mod scene;
pub mod sobolev;
pub mod sparse;
pub mod speccalc;

pub use error::{Error, Result};
