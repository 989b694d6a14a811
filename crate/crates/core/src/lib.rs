//! Reconstruction of a spatially distributed dielectric constant from
//! single-frequency backscatter data collected over a line of point sources.
//!
//! The library covers the full chain: synthetic data generation through a
//! Lippmann-Schwinger volume solver, angular-spectrum propagation of far-field
//! data to the near-field plane, preprocessing (reference subtraction,
//! truncation, smoothing), minimization of a Carleman-weighted cost functional
//! over a vector of Fourier components in a special source basis, and recovery
//! of the dielectric field with VTK export.

pub mod basis;
pub mod cauchy;
pub mod config;
pub mod error;
pub mod field;
pub mod forward;
pub mod grid;
pub mod inversion;
pub mod measurement;
pub mod preprocess;
pub mod propagation;
pub mod reconstruct;
pub mod verify;
pub mod vtk;

pub use basis::BasisSet;
pub use cauchy::CauchyData;
pub use config::{DomainConfig, PipelineConfig};
pub use error::{Error, Result};
pub use field::{ComplexField, ScalarField};
pub use forward::DielectricField;
pub use grid::Grid3D;
pub use inversion::{Cwf, SourceGeometryTensors, StateVector};
pub use measurement::MeasurementSet;
