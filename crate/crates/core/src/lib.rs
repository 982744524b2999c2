//! Desk-scale workbench for effective constructions on Π⁰₁ subclasses of
//! Cantor space: an exact clopen-set algebra, a step-bounded oracle-functional
//! model with finite horizons, symbolic class expressions with stage
//! approximations, uniform treemaps, a finite-injury priority construction,
//! and stagewise join / pseudojump-inversion constructions with independent
//! verifiers.

pub mod classes;
pub mod error;
pub mod fixtures;
pub mod machine;
pub mod priority;
pub mod space;
pub mod treemap;

pub use error::{Error, Result};
