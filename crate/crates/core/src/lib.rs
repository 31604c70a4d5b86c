//! Diffeomorphic modeling of diurnal physical-activity change.
//!
//! The toolkit covers the full chain from minute-level tri-axial
//! accelerometer counts to association models:
//!
//! 1. [`prep`] turns counts into smoothed, scaled diurnal curves and
//!    scalar summaries (net-AUC and its between-visit change).
//! 2. [`geodesics`] matches consecutive-visit curves by geodesic
//!    shooting in a Gaussian kernel space, yielding initial momenta and
//!    a deformation energy per participant-period.
//! 3. [`fpca`] decomposes the momenta fields: univariate FPCA per
//!    domain, the multivariate combination, and a concatenated-domain
//!    comparison.
//! 4. [`assoc`] relates PC scores, net-AUC change, and deformation
//!    energy to a health outcome with random-intercept mixed models,
//!    likelihood-ratio tests, and L1 selection under BIC.
//! 5. [`sim`] and [`pipeline`] provide a seeded synthetic-cohort
//!    generator with known ground truth and the end-to-end orchestration
//!    with cached artifacts.
//!
//! The mdbook under `book/` walks through the concepts with runnable
//! snippets; its code blocks compile and run as part of `cargo test`.

// Indexed loops and explicit negated comparisons (NaN-rejecting guards)
// are the house style in the numerical kernels.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assoc;
pub mod error;
pub mod fpca;
pub mod geodesics;
pub mod grid;
pub mod pipeline;
pub mod prep;
pub mod sim;
pub mod vec2;

pub use error::{Error, Result};
pub use vec2::Vec2;

#[cfg(doctest)]
mod book;
