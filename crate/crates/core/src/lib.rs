//! Kolmogorov-Smirnov type goodness-of-fit testing for doubly truncated
//! lifetime data with copula dependence between lifetime and truncation age.

pub mod critval;
pub mod datagen;
pub mod error;
pub mod estimation;
pub mod expectations;
pub mod geometry;
pub mod ksstat;
pub mod model;
pub mod quadrature;

pub use error::{Error, Result};
pub use geometry::{ObservationSet, Point, RegionCase, StudyWindow};
pub use model::{Copula, ModelParams, ParamBounds, ParamMatrix, ParamVec};
