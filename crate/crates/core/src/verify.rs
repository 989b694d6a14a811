//! Empirical checks of the analytical ingredients: the 1D Carleman estimate,
//! its partial-finite-difference counterpart, and the strict-convexity trend
//! of the weighted functional.
//!
//! The estimates hold with unknowable constants, so the harness reports
//! ratios over fixed seeded ensembles and checks positivity and trends
//! against documented harness constants rather than paper constants.

use crate::basis::BasisSet;
use crate::cauchy::CauchyData;
use crate::error::{Error, Result};
use crate::grid::Grid3D;
use crate::inversion::{
    build_starting_point, evaluate_j, gradient_j, Cwf, SourceGeometryTensors,
    StateVector,
};
use ndarray::Array4;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Harness constant for the partial-finite-difference inequality flag.
pub const PFD_EPSILON: f64 = 1e-3;
/// Bregman gaps below -CONVEXITY_TOL * max(1, J) count as violations.
pub const CONVEXITY_TOL: f64 = 1e-12;

/// Ratio int u''^2 mu / (int u''^2 mu + lambda int u'^2 mu + lambda^3 int
/// u^2 mu) for uniform samples of u on [-b, b], with u(-b) = u'(-b) = 0.
/// The weight is normalized by mu(-b); the ratio is unaffected.
pub fn carleman_1d_ratio(u: &[f64], b: f64, theta: f64, lambda: f64) -> Result<f64> {
    if u.len() < 5 {
        return Err(Error::Domain(format!(
            "need at least 5 samples, got {}",
            u.len()
        )));
    }
    let cwf = Cwf::new(lambda, theta, b)?;
    let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::DegenerateInput("all samples are zero".into()));
    }
    let h = 2.0 * b / (u.len() - 1) as f64;
    let du0 = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
    if u[0].abs() > 1e-6 * scale || du0.abs() > 1e-4 * scale {
        return Err(Error::Precondition(format!(
            "boundary data at z = -b not zero: u = {}, u' = {du0}",
            u[0]
        )));
    }
    let mut num = 0.0;
    let mut first = 0.0;
    let mut zeroth = 0.0;
    for s in 1..u.len() - 1 {
        let z = -b + s as f64 * h;
        let mu = cwf.normalized(z);
        let w = if s == 1 || s == u.len() - 2 { 0.5 * h } else { h };
        let upp = (u[s + 1] - 2.0 * u[s] + u[s - 1]) / (h * h);
        let up = (u[s + 1] - u[s - 1]) / (2.0 * h);
        num += w * mu * upp * upp;
        first += w * mu * up * up;
        zeroth += w * mu * u[s] * u[s];
    }
    let den = num + lambda * first + lambda.powi(3) * zeroth;
    if den == 0.0 {
        return Err(Error::DegenerateInput("zero denominator".into()));
    }
    Ok(num / den)
}

/// Smooth seeded ensemble member vanishing to second order at z = -b.
pub fn carleman_test_function(b: f64, samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (0..samples)
        .map(|s| {
            let z = -b + 2.0 * b * s as f64 / (samples - 1) as f64;
            let t = (z + b) / (2.0 * b);
            let window = t * t;
            window
                * coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, &c)| {
                        c * (std::f64::consts::PI * (j + 1) as f64 * t).sin()
                    })
                    .sum::<f64>()
        })
        .collect()
}

/// Terms of the partial-finite-difference Carleman inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfdReport {
    /// sum h^2 int |Delta^h u|^2 mu.
    pub lhs: f64,
    /// sum h^2 int |d_z^2 u|^2 mu.
    pub dzz: f64,
    /// lambda sum h^2 int |d_z u|^2 mu.
    pub dz: f64,
    /// lambda^3 sum h^2 int (|grad^h u|^2 + |u|^2) mu.
    pub low_order: f64,
    pub epsilon: f64,
    pub holds: bool,
}

/// Evaluate both sides of the discrete Carleman estimate for a field with
/// zero Cauchy layers on Gamma.
pub fn carleman_pfd_check(
    values: &Array4<Complex64>,
    grid: &Grid3D,
    cwf: &Cwf,
    epsilon: f64,
) -> Result<PfdReport> {
    let (nx, ny, nz, nc) = values.dim();
    if (nx, ny, nz) != (grid.nx, grid.ny, grid.nz) {
        return Err(Error::Shape(format!(
            "field shape ({nx}, {ny}, {nz}) does not match the grid"
        )));
    }
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    for p in 0..nx {
        for q in 0..ny {
            for c in 0..nc {
                let bad = values[[p, q, 0, c]].norm() > 1e-10 * scale.max(1.0)
                    || values[[p, q, 1, c]].norm() > 1e-10 * scale.max(1.0);
                if bad {
                    return Err(Error::Precondition(format!(
                        "Cauchy layers not zero at node ({p}, {q})"
                    )));
                }
            }
        }
    }
    let (hx, hy, hz) = (grid.step[0], grid.step[1], grid.step[2]);
    let h2 = hx * hy;
    let (mut lhs, mut dzz, mut dz, mut low) = (0.0, 0.0, 0.0, 0.0);
    for p in 1..nx - 1 {
        for q in 1..ny - 1 {
            for s in 1..nz - 1 {
                let mu = cwf.normalized(grid.z(s));
                let w = if s == 1 || s == nz - 2 { 0.5 * hz } else { hz };
                let f = h2 * w * mu;
                for c in 0..nc {
                    let v = values[[p, q, s, c]];
                    let d2z = (values[[p, q, s + 1, c]] - 2.0 * v
                        + values[[p, q, s - 1, c]])
                        / (hz * hz);
                    let lap = (values[[p + 1, q, s, c]] - 2.0 * v
                        + values[[p - 1, q, s, c]])
                        / (hx * hx)
                        + (values[[p, q + 1, s, c]] - 2.0 * v
                            + values[[p, q - 1, s, c]])
                            / (hy * hy)
                        + d2z;
                    let gx = (values[[p + 1, q, s, c]] - values[[p - 1, q, s, c]])
                        / (2.0 * hx);
                    let gy = (values[[p, q + 1, s, c]] - values[[p, q - 1, s, c]])
                        / (2.0 * hy);
                    let gz = (values[[p, q, s + 1, c]] - values[[p, q, s - 1, c]])
                        / (2.0 * hz);
                    lhs += f * lap.norm_sqr();
                    dzz += f * d2z.norm_sqr();
                    dz += f * gz.norm_sqr();
                    low += f * (gx.norm_sqr() + gy.norm_sqr() + gz.norm_sqr()
                        + v.norm_sqr());
                }
            }
        }
    }
    let dz = cwf.lambda * dz;
    let low = cwf.lambda.powi(3) * low;
    Ok(PfdReport {
        lhs,
        dzz,
        dz,
        low_order: low,
        epsilon,
        holds: lhs >= epsilon * (dzz + dz + low),
    })
}

/// Bregman gap J(V + r) - J(V) - dJ(V)[r] for a direction supported on the
/// free nodes; nonnegative gaps witness convexity.
pub fn bregman_gap(
    state: &StateVector,
    direction: &Array4<Complex64>,
    cwf: &Cwf,
    basis: &BasisSet,
    tensors: &SourceGeometryTensors,
) -> f64 {
    let j0 = evaluate_j(state, cwf, basis, tensors);
    let g = gradient_j(state, cwf, basis, tensors);
    let slope: f64 = g
        .iter()
        .zip(direction.iter())
        .map(|(gv, dv)| (gv.conj() * dv).re)
        .sum();
    let mut moved = state.clone();
    ndarray::Zip::from(&mut moved.values)
        .and(direction)
        .for_each(|v, d| *v += d);
    moved.apply_constraints();
    let j1 = evaluate_j(&moved, cwf, basis, tensors);
    j1 - j0 - slope
}

fn random_free_direction(
    state: &StateVector,
    rng: &mut ChaCha8Rng,
    norm: f64,
) -> Array4<Complex64> {
    let mut dir = Array4::<Complex64>::zeros(state.values.dim());
    for p in 0..state.grid.nx {
        for q in 0..state.grid.ny {
            for s in 0..state.grid.nz {
                if !state.is_free(p, q, s) {
                    continue;
                }
                for nn in 0..state.n {
                    dir[[p, q, s, nn]] =
                        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
            }
        }
    }
    let len = dir.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if len > 0.0 {
        dir.mapv_inplace(|v| v * (norm / len));
    }
    dir
}

/// Fraction of seeded random trials whose Bregman gap is negative beyond
/// the tolerance. Perturbations and directions stay inside the unit ball.
pub fn convexity_trial(
    cauchy: &CauchyData,
    grid: &Grid3D,
    basis: &BasisSet,
    tensors: &SourceGeometryTensors,
    cwf: &Cwf,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials < 50 {
        return Err(Error::Domain(format!(
            "need at least 50 trials, got {trials}"
        )));
    }
    let base = build_starting_point(cauchy, grid, 1, true)?;
    let mut violations = 0usize;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
        let mut state = base.clone();
        let pert_norm = rng.gen_range(0.0..1.0);
        let pert = random_free_direction(&state, &mut rng, pert_norm);
        ndarray::Zip::from(&mut state.values)
            .and(&pert)
            .for_each(|v, d| *v += d);
        state.apply_constraints();
        let dir_norm = rng.gen_range(0.0..1.0);
        let dir = random_free_direction(&state, &mut rng, dir_norm);
        let j0 = evaluate_j(&state, cwf, basis, tensors);
        let gap = bregman_gap(&state, &dir, cwf, basis, tensors);
        if gap < -CONVEXITY_TOL * j0.max(1.0) {
            violations += 1;
        }
    }
    Ok(violations as f64 / trials as f64)
}
