//! Numerical laboratory for a compressible two-fluid Navier-Stokes-Korteweg
//! model on periodic boxes: closure algebra, Littlewood-Paley analysis,
//! per-mode linear theory and pseudo-spectral time integration.

pub mod besov;
pub mod dynamics;
pub mod closure;
pub mod field;
pub mod grid;
pub mod quadrature;
pub mod linalg;
pub mod spectral;
