//! Angular-spectrum propagation of far-field data to the near-field plane.
//!
//! Measured backscatter at z = -D is Fourier transformed laterally, each
//! propagating mode is advanced with the exact free-space transfer function,
//! and evanescent modes are discarded. The propagated trace and its z
//! derivative give the Cauchy pair (psi0, psi1) after projection onto the
//! source basis.

use crate::basis::BasisSet;
use crate::cauchy::CauchyData;
use crate::error::{Error, Result};
use crate::forward::incident;
use crate::measurement::MeasurementSet;
use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;

/// Centered lattice of lateral Fourier modes: rho_m = (m - (M-1)/2) omega_rho.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrid {
    pub omega_rho: f64,
    pub n_modes: usize,
}

impl SpectralGrid {
    pub fn rho(&self, m: usize) -> f64 {
        (m as f64 - 0.5 * (self.n_modes as f64 - 1.0)) * self.omega_rho
    }

    /// Indices of modes inside the propagating disc rho^2 < k^2.
    pub fn propagating(&self, k: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for m1 in 0..self.n_modes {
            for m2 in 0..self.n_modes {
                let r1 = self.rho(m1);
                let r2 = self.rho(m2);
                if r1 * r1 + r2 * r2 < k * k {
                    out.push((m1, m2));
                }
            }
        }
        out
    }
}

/// Uniform square lattice where propagated fields are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetLattice {
    pub origin: f64,
    pub step: f64,
    pub n: usize,
}

impl TargetLattice {
    pub fn x(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }
}

/// Riemann-sum lateral Fourier transform of a lattice field:
/// V_hat(rho) = omega^2 sum_ij u(x_i, y_j) e^{-i(x_i rho1 + y_j rho2)}.
pub fn forward_dft2(
    samples: ArrayView2<Complex64>,
    origin: f64,
    step: f64,
    spec: &SpectralGrid,
) -> Array2<Complex64> {
    let (nx, ny) = samples.dim();
    let m = spec.n_modes;
    // Separable: transform y first, then x.
    let mut partial = Array2::<Complex64>::zeros((nx, m));
    for i in 0..nx {
        for m2 in 0..m {
            let rho2 = spec.rho(m2);
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..ny {
                let y = origin + j as f64 * step;
                acc += samples[[i, j]] * Complex64::new(0.0, -y * rho2).exp();
            }
            partial[[i, m2]] = acc;
        }
    }
    let w2 = step * step;
    let mut out = Array2::<Complex64>::zeros((m, m));
    for m1 in 0..m {
        let rho1 = spec.rho(m1);
        for m2 in 0..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..nx {
                let x = origin + i as f64 * step;
                acc += partial[[i, m2]] * Complex64::new(0.0, -x * rho1).exp();
            }
            out[[m1, m2]] = acc * w2;
        }
    }
    out
}

/// Inverse sum over the propagating band with the transfer function for a
/// plane shift of `dz` toward the scatterer. With `deriv` set, each term is
/// multiplied by the z derivative factor of the downward-going mode.
fn inverse_sum(
    spectrum: &Array2<Complex64>,
    spec: &SpectralGrid,
    k: f64,
    dz: f64,
    target: &TargetLattice,
    deriv: bool,
) -> Result<Array2<Complex64>> {
    let m = spec.n_modes;
    let scale = spec.omega_rho * spec.omega_rho
        / (4.0 * std::f64::consts::PI * std::f64::consts::PI);
    let mut any = false;
    // Separable inverse: for each m1, the masked inner sum over m2 as a
    // function of y, then the outer sum over m1 per x.
    let mut inner = Array2::<Complex64>::zeros((m, target.n));
    for m1 in 0..m {
        let rho1 = spec.rho(m1);
        for m2 in 0..m {
            let rho2 = spec.rho(m2);
            let rr = rho1 * rho1 + rho2 * rho2;
            if rr >= k * k {
                continue;
            }
            any = true;
            let s = (k * k - rr).sqrt();
            // Transfer e^{i s (-dz)}; the propagating branch travels toward
            // z -> -infinity, so d/dz brings down -i s.
            let mut term = spectrum[[m1, m2]] * Complex64::new(0.0, -s * dz).exp();
            if deriv {
                term *= Complex64::new(0.0, -s);
            }
            for j in 0..target.n {
                let y = target.x(j);
                inner[[m1, j]] += term * Complex64::new(0.0, y * rho2).exp();
            }
        }
    }
    if !any {
        return Err(Error::DegenerateSpectrum { k });
    }
    let mut out = Array2::<Complex64>::zeros((target.n, target.n));
    for i in 0..target.n {
        let x = target.x(i);
        for m1 in 0..m {
            let rho1 = spec.rho(m1);
            let phase = Complex64::new(0.0, x * rho1).exp();
            for j in 0..target.n {
                out[[i, j]] += inner[[m1, j]] * phase;
            }
        }
    }
    Ok(out * scale)
}

/// Near-field trace U(x, y, alpha) = u_s(x, y, -b, alpha), one slice per
/// source, shape [source, i, j].
pub fn propagate_to_near_field(
    meas: &MeasurementSet,
    k: f64,
    b: f64,
    spec: &SpectralGrid,
    target: &TargetLattice,
) -> Result<Array3<Complex64>> {
    propagate_impl(meas, k, b, spec, target, false)
}

/// d/dz of the scattered field at z = -b, same shape as the trace.
pub fn near_field_z_derivative(
    meas: &MeasurementSet,
    k: f64,
    b: f64,
    spec: &SpectralGrid,
    target: &TargetLattice,
) -> Result<Array3<Complex64>> {
    propagate_impl(meas, k, b, spec, target, true)
}

fn propagate_impl(
    meas: &MeasurementSet,
    k: f64,
    b: f64,
    spec: &SpectralGrid,
    target: &TargetLattice,
    deriv: bool,
) -> Result<Array3<Complex64>> {
    if !(k > 0.0) {
        return Err(Error::Domain("k must be positive".into()));
    }
    let dz = -b - meas.plane_z;
    if dz < 0.0 {
        return Err(Error::Domain(
            "measurement plane must lie below z = -b".into(),
        ));
    }
    let mut out = Array3::zeros((meas.sources.len(), target.n, target.n));
    for l in 0..meas.sources.len() {
        let slice = meas.samples.index_axis(ndarray::Axis(0), l);
        let spectrum = forward_dft2(slice, meas.origin, meas.step, spec);
        let field = inverse_sum(&spectrum, spec, k, dz, target, deriv)?;
        out.index_axis_mut(ndarray::Axis(0), l).assign(&field);
    }
    Ok(out)
}

/// Band-limit a lattice field in place: forward transform then inverse over
/// the propagating disc with zero plane shift. Used by oracle comparisons so
/// both sides see the identical filter.
pub fn band_limit(
    samples: ArrayView2<Complex64>,
    origin: f64,
    step: f64,
    spec: &SpectralGrid,
    k: f64,
    target: &TargetLattice,
) -> Result<Array2<Complex64>> {
    let spectrum = forward_dft2(samples, origin, step, spec);
    inverse_sum(&spectrum, spec, k, 0.0, target, false)
}

/// Relative magnitude floor for the total field on Gamma.
pub const NEAR_ZERO_FIELD_FACTOR: f64 = 1e-6;

/// Assemble the Cauchy pair from the propagated trace and derivative.
///
/// v = log(u / u_i) with u = u_i + U, principal branch; the scattering here
/// stays weak enough that no winding occurs, and the magnitude guard below
/// catches any approach to the branch cut origin. psi0_n and psi1_n are the
/// basis projections over the source quadrature rule.
#[allow(clippy::too_many_arguments)]
pub fn build_cauchy_data(
    u_near: &Array3<Complex64>,
    du_near: &Array3<Complex64>,
    source_rule: &[(f64, f64)],
    target: &TargetLattice,
    k: f64,
    d: f64,
    b: f64,
    basis: &BasisSet,
) -> Result<CauchyData> {
    let n_src = source_rule.len();
    let n = target.n;
    if u_near.dim() != (n_src, n, n) || du_near.dim() != (n_src, n, n) {
        return Err(Error::Shape(format!(
            "near-field arrays {:?} do not match {} sources on an {n} x {n} lattice",
            u_near.dim(),
            n_src
        )));
    }

    // v and dz v per source on the lattice.
    let mut v = Array3::<Complex64>::zeros((n_src, n, n));
    let mut dv = Array3::<Complex64>::zeros((n_src, n, n));
    for (l, &(alpha, _)) in source_rule.iter().enumerate() {
        let mut max_ui: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [target.x(i), target.x(j), -b];
                max_ui = max_ui.max(incident(k, &x, alpha, d).norm());
            }
        }
        let threshold = NEAR_ZERO_FIELD_FACTOR * max_ui;
        for i in 0..n {
            for j in 0..n {
                let x = [target.x(i), target.x(j), -b];
                let ui = incident(k, &x, alpha, d);
                let u = ui + u_near[[l, i, j]];
                if u.norm() < threshold {
                    return Err(Error::NearZeroTotalField {
                        p: i,
                        q: j,
                        alpha,
                        value: u.norm(),
                        threshold,
                    });
                }
                v[[l, i, j]] = (u / ui).ln();
                // dz u_i for the spherical wave from (alpha, 0, -d).
                let r = ((x[0] - alpha).powi(2) + x[1] * x[1] + (x[2] + d).powi(2)).sqrt();
                let dui = ui * (Complex64::new(0.0, k) - 1.0 / r) * ((x[2] + d) / r);
                let du = dui + du_near[[l, i, j]];
                dv[[l, i, j]] = du / u - dui / ui;
            }
        }
    }

    // Projection onto the basis over the alpha quadrature.
    let mut out = CauchyData::zeros(target.origin, target.step, n, basis.n);
    for nb in 0..basis.n {
        let psi_at: Vec<f64> = source_rule.iter().map(|&(a, _)| basis.eval(nb, a)).collect();
        for i in 0..n {
            for j in 0..n {
                let mut p0 = Complex64::new(0.0, 0.0);
                let mut p1 = Complex64::new(0.0, 0.0);
                for (l, &(_, w)) in source_rule.iter().enumerate() {
                    p0 += v[[l, i, j]] * psi_at[l] * w;
                    p1 += dv[[l, i, j]] * psi_at[l] * w;
                }
                out.psi0[[nb, i, j]] = p0;
                out.psi1[[nb, i, j]] = p1;
            }
        }
    }
    out.check_finite()?;
    Ok(out)
}
