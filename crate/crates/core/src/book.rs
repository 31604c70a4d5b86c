//! Runs the book's code blocks as doctests so the guide can never
//! drift from the library. Each chapter becomes one module; a failing
//! snippet points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/diurnal-curves.md")]
mod diurnal_curves {}

#[doc = include_str!("../../../book/src/geodesic-shooting.md")]
mod geodesic_shooting {}

#[doc = include_str!("../../../book/src/curve-matching.md")]
mod curve_matching {}

#[doc = include_str!("../../../book/src/momenta-fpca.md")]
mod momenta_fpca {}

#[doc = include_str!("../../../book/src/outcome-models.md")]
mod outcome_models {}

#[doc = include_str!("../../../book/src/pipeline-cli.md")]
mod pipeline_cli {}
