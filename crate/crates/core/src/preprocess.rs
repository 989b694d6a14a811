//! Data preprocessing: reference subtraction, per-source truncation, and
//! Gaussian smoothing with peak-retrieval rescaling.

use crate::error::{Error, Result};
use crate::measurement::MeasurementSet;
use ndarray::{Array2, Array3};
use num_complex::Complex64;

/// Step 1: subtract the reference (no-target) data samplewise.
pub fn subtract_reference(
    meas: &MeasurementSet,
    reference: &MeasurementSet,
) -> Result<MeasurementSet> {
    meas.subtract(reference)
}

/// Step 3a: zero every sample whose modulus falls under kappa1 times the
/// per-source lattice maximum. Shape [source, i, j].
pub fn truncate_field(g: &Array3<Complex64>, kappa1: f64) -> Result<Array3<Complex64>> {
    if !(kappa1 > 0.0 && kappa1 < 1.0) {
        return Err(Error::Domain(format!(
            "kappa1 must be in (0, 1), got {kappa1}"
        )));
    }
    let mut out = g.clone();
    apply_truncation_mask(&mut out, &truncation_mask(g, kappa1)?);
    Ok(out)
}

/// The per-source truncation mask, reusable for the derivative field.
pub fn truncation_mask(g: &Array3<Complex64>, kappa1: f64) -> Result<Array3<bool>> {
    if !(kappa1 > 0.0 && kappa1 < 1.0) {
        return Err(Error::Domain(format!(
            "kappa1 must be in (0, 1), got {kappa1}"
        )));
    }
    let (ns, ni, nj) = g.dim();
    let mut mask = Array3::from_elem((ns, ni, nj), false);
    for l in 0..ns {
        let slice = g.index_axis(ndarray::Axis(0), l);
        let max = slice.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        for i in 0..ni {
            for j in 0..nj {
                mask[[l, i, j]] = slice[[i, j]].norm() >= kappa1 * max;
            }
        }
    }
    Ok(mask)
}

pub fn apply_truncation_mask(g: &mut Array3<Complex64>, mask: &Array3<bool>) {
    for (v, &keep) in g.iter_mut().zip(mask.iter()) {
        if !keep {
            *v = Complex64::new(0.0, 0.0);
        }
    }
}

/// Discrete Gaussian kernel truncated at 4 sigma, unit sum.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (4.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let t = i as f64 - half as f64;
            (-0.5 * t * t / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Convolve one axis of a 2D complex lattice with the kernel, renormalizing
/// at the edges so a constant field stays constant.
fn convolve_axis2(values: &Array2<Complex64>, kernel: &[f64], axis: usize) -> Array2<Complex64> {
    let (ni, nj) = values.dim();
    let half = kernel.len() / 2;
    let mut out = Array2::zeros((ni, nj));
    for i in 0..ni {
        for j in 0..nj {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut weight = 0.0;
            for (t, &w) in kernel.iter().enumerate() {
                let off = t as isize - half as isize;
                let (ii, jj) = if axis == 0 {
                    (i as isize + off, j as isize)
                } else {
                    (i as isize, j as isize + off)
                };
                if ii >= 0 && jj >= 0 && (ii as usize) < ni && (jj as usize) < nj {
                    acc += values[[ii as usize, jj as usize]] * w;
                    weight += w;
                }
            }
            out[[i, j]] = acc / weight;
        }
    }
    out
}

/// Separable 2D Gaussian smoothing of a complex lattice.
pub fn smooth2d(values: &Array2<Complex64>, sigma: f64) -> Array2<Complex64> {
    let kernel = gaussian_kernel(sigma);
    convolve_axis2(&convolve_axis2(values, &kernel, 0), &kernel, 1)
}

/// Separable 3D Gaussian smoothing of a real field.
pub fn smooth3d(values: &Array3<f64>, sigma: f64) -> Array3<f64> {
    let kernel = gaussian_kernel(sigma);
    let (ni, nj, ns) = values.dim();
    let half = kernel.len() / 2;
    let mut cur = values.clone();
    for axis in 0..3 {
        let mut next = Array3::zeros((ni, nj, ns));
        for i in 0..ni {
            for j in 0..nj {
                for s in 0..ns {
                    let mut acc = 0.0;
                    let mut weight = 0.0;
                    for (t, &w) in kernel.iter().enumerate() {
                        let off = t as isize - half as isize;
                        let idx = [
                            i as isize + if axis == 0 { off } else { 0 },
                            j as isize + if axis == 1 { off } else { 0 },
                            s as isize + if axis == 2 { off } else { 0 },
                        ];
                        if idx[0] >= 0
                            && idx[1] >= 0
                            && idx[2] >= 0
                            && (idx[0] as usize) < ni
                            && (idx[1] as usize) < nj
                            && (idx[2] as usize) < ns
                        {
                            acc += cur[[idx[0] as usize, idx[1] as usize, idx[2] as usize]] * w;
                            weight += w;
                        }
                    }
                    next[[i, j, s]] = acc / weight;
                }
            }
        }
        cur = next;
    }
    cur
}

/// Step 3b: smooth each source slice and rescale by
/// kappa2 = max|input| / max|smoothed| so the peak modulus is preserved.
pub fn smooth_and_retrieve(g: &Array3<Complex64>, sigma: f64) -> Result<Array3<Complex64>> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let (ns, ni, nj) = g.dim();
    let mut out = Array3::zeros((ns, ni, nj));
    for l in 0..ns {
        let slice = g.index_axis(ndarray::Axis(0), l).to_owned();
        let max_in = slice.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        let smoothed = smooth2d(&slice, sigma);
        let max_out = smoothed.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        if max_in == 0.0 {
            continue;
        }
        if max_out == 0.0 {
            return Err(Error::DegenerateSmoothing);
        }
        let kappa2 = max_in / max_out;
        out.index_axis_mut(ndarray::Axis(0), l)
            .assign(&(smoothed * Complex64::new(kappa2, 0.0)));
    }
    Ok(out)
}

/// Steps 3 for the propagated Cauchy inputs: truncate U per source, reuse the
/// same mask for dU/dz, then smooth both with their own retrieval scaling.
pub fn preprocess_near_field(
    u: &Array3<Complex64>,
    du: &Array3<Complex64>,
    kappa1: f64,
    sigma: f64,
) -> Result<(Array3<Complex64>, Array3<Complex64>)> {
    if u.dim() != du.dim() {
        return Err(Error::Shape(format!(
            "trace {:?} and derivative {:?} shapes differ",
            u.dim(),
            du.dim()
        )));
    }
    let mask = truncation_mask(u, kappa1)?;
    let mut ut = u.clone();
    let mut dut = du.clone();
    apply_truncation_mask(&mut ut, &mask);
    apply_truncation_mask(&mut dut, &mask);
    Ok((
        smooth_and_retrieve(&ut, sigma)?,
        smooth_and_retrieve(&dut, sigma)?,
    ))
}
