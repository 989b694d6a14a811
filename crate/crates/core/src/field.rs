//! Scalar and complex fields sampled on a [`Grid3D`].

use crate::error::{Error, Result};
use crate::grid::Grid3D;
use ndarray::{Array3, Array4};
use num_complex::Complex64;

/// Meaning of the trailing axis of a [`ComplexField`].
#[derive(Debug, Clone, PartialEq)]
pub enum TrailingAxis {
    /// A single field; trailing axis has length 1.
    None,
    /// One slice per source abscissa.
    Source(Vec<f64>),
    /// One slice per Fourier component in the special basis.
    Fourier(usize),
}

impl TrailingAxis {
    pub fn len(&self) -> usize {
        match self {
            TrailingAxis::None => 1,
            TrailingAxis::Source(a) => a.len(),
            TrailingAxis::Fourier(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Complex samples on every grid node, with an optional trailing axis
/// (per source or per Fourier index).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub grid: Grid3D,
    /// Shape [nx, ny, nz, trailing].
    pub values: Array4<Complex64>,
    pub axis: TrailingAxis,
}

impl ComplexField {
    pub fn zeros(grid: Grid3D, axis: TrailingAxis) -> Self {
        let shape = (grid.nx, grid.ny, grid.nz, axis.len());
        ComplexField {
            grid,
            values: Array4::zeros(shape),
            axis,
        }
    }

    pub fn from_values(grid: Grid3D, values: Array4<Complex64>, axis: TrailingAxis) -> Result<Self> {
        let expect = (grid.nx, grid.ny, grid.nz, axis.len());
        if values.dim() != expect {
            return Err(Error::Shape(format!(
                "field shape {:?} does not match grid/axis {:?}",
                values.dim(),
                expect
            )));
        }
        let field = ComplexField { grid, values, axis };
        field.check_finite()?;
        Ok(field)
    }

    pub fn check_finite(&self) -> Result<()> {
        if self
            .values
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Domain("non-finite value in complex field".into()))
        }
    }
}

/// Real samples on every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid3D,
    pub values: Array3<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid3D) -> Self {
        let shape = (grid.nx, grid.ny, grid.nz);
        ScalarField {
            grid,
            values: Array3::zeros(shape),
        }
    }

    pub fn from_values(grid: Grid3D, values: Array3<f64>) -> Result<Self> {
        if values.dim() != (grid.nx, grid.ny, grid.nz) {
            return Err(Error::Shape(format!(
                "field shape {:?} does not match grid ({}, {}, {})",
                values.dim(),
                grid.nx,
                grid.ny,
                grid.nz
            )));
        }
        let field = ScalarField { grid, values };
        field.check_finite()?;
        Ok(field)
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Domain("non-finite value in scalar field".into()))
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
