//! Conversion of the minimizing vector field into the dielectric constant.
//!
//! For each source position the total-field log v(x, alpha) is synthesized
//! from the truncated series and plugged into the pointwise identity
//! c = -(Delta v + (grad v)^2 + 2 grad v . x_tilde) / k^2 + 1; the modulus
//! of the bracket is averaged over the source nodes.

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::inversion::{gradient_component, laplacian_component, x_tilde, StateVector};
use crate::preprocess::smooth3d;
use ndarray::Array3;
use num_complex::Complex64;

/// Recover c on the grid of V. Boundary nodes carry no central stencil and
/// stay at the background value 1.
pub fn recover_dielectric(
    state: &StateVector,
    basis: &BasisSet,
    k: f64,
    d: f64,
    sources: &[f64],
) -> Result<ScalarField> {
    if sources.is_empty() {
        return Err(Error::Domain("at least one source position required".into()));
    }
    if k <= 0.0 {
        return Err(Error::Domain(format!("wavenumber must be positive, got {k}")));
    }
    let grid = &state.grid;
    let n = state.n;
    let mut c = Array3::<f64>::ones((grid.nx, grid.ny, grid.nz));
    // Basis values at the source nodes, [l][n].
    let psi_at: Vec<Vec<f64>> = sources
        .iter()
        .map(|&a| (0..n).map(|nn| basis.eval(nn, a)).collect())
        .collect();
    let mut laps = vec![Complex64::new(0.0, 0.0); n];
    let mut grads = vec![[Complex64::new(0.0, 0.0); 3]; n];
    for p in 1..grid.nx - 1 {
        for q in 1..grid.ny - 1 {
            for s in 1..grid.nz - 1 {
                for nn in 0..n {
                    laps[nn] =
                        laplacian_component(&state.values, nn, p, q, s, &grid.step);
                    grads[nn] =
                        gradient_component(&state.values, nn, p, q, s, &grid.step);
                }
                let x = grid.point(p, q, s);
                let mut acc = 0.0;
                for (l, &alpha) in sources.iter().enumerate() {
                    let mut lap = Complex64::new(0.0, 0.0);
                    let mut grad = [Complex64::new(0.0, 0.0); 3];
                    for nn in 0..n {
                        let w = psi_at[l][nn];
                        lap += w * laps[nn];
                        for ax in 0..3 {
                            grad[ax] += w * grads[nn][ax];
                        }
                    }
                    let xt = x_tilde(k, &x, alpha, d);
                    let mut bracket = lap;
                    for ax in 0..3 {
                        bracket += grad[ax] * grad[ax] + 2.0 * grad[ax] * xt[ax];
                    }
                    acc += (bracket / (k * k)).norm();
                }
                c[[p, q, s]] = acc / sources.len() as f64 + 1.0;
            }
        }
    }
    ScalarField::from_values(grid.clone(), c)
}

/// c_comp = rho_hat * smooth(|c_raw|) with rho_hat preserving the raw max.
pub fn finalize_field(c_raw: &ScalarField, sigma: f64) -> Result<ScalarField> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    c_raw.check_finite()?;
    let abs = c_raw.values.mapv(f64::abs);
    let raw_max = abs.iter().copied().fold(0.0, f64::max);
    let smoothed = smooth3d(&abs, sigma);
    let smooth_max = smoothed.iter().copied().fold(0.0, f64::max);
    let rho_hat = if smooth_max > 0.0 { raw_max / smooth_max } else { 1.0 };
    ScalarField::from_values(c_raw.grid.clone(), smoothed.mapv(|v| v * rho_hat))
}

/// Thresholded inclusion geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionReport {
    pub mask: Array3<bool>,
    pub found: bool,
    /// Grid coordinates of the mask centroid.
    pub centroid: Option<[f64; 3]>,
    /// Axis-aligned bounding box (lower corner, upper corner).
    pub bbox: Option<([f64; 3], [f64; 3])>,
    /// The contrast threshold fraction * max(c - 1).
    pub isovalue: f64,
    pub max_c: f64,
}

/// Mask nodes where c - 1 reaches the given fraction of its maximum.
pub fn extract_inclusion(c: &ScalarField, fraction: f64) -> Result<InclusionReport> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Domain(format!(
            "fraction must lie in (0, 1), got {fraction}"
        )));
    }
    c.check_finite()?;
    let max_c = c.max();
    let max_excess = max_c - 1.0;
    let grid = &c.grid;
    let mut mask = Array3::from_elem((grid.nx, grid.ny, grid.nz), false);
    if max_excess <= 0.0 {
        return Ok(InclusionReport {
            mask,
            found: false,
            centroid: None,
            bbox: None,
            isovalue: 0.0,
            max_c,
        });
    }
    let isovalue = fraction * max_excess;
    let mut count = 0usize;
    let mut sum = [0.0; 3];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for ((p, q, s), &v) in c.values.indexed_iter() {
        if v - 1.0 >= isovalue {
            mask[[p, q, s]] = true;
            count += 1;
            let x = grid.point(p, q, s);
            for ax in 0..3 {
                sum[ax] += x[ax];
                lo[ax] = lo[ax].min(x[ax]);
                hi[ax] = hi[ax].max(x[ax]);
            }
        }
    }
    let centroid = [
        sum[0] / count as f64,
        sum[1] / count as f64,
        sum[2] / count as f64,
    ];
    Ok(InclusionReport {
        mask,
        found: true,
        centroid: Some(centroid),
        bbox: Some((lo, hi)),
        isovalue,
        max_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;
    use crate::grid::Grid3D;
    use ndarray::Array3 as A3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_state(grid: &Grid3D, n: usize) -> StateVector {
        StateVector::new(
            grid.clone(),
            ndarray::Array3::zeros((n, grid.nx, grid.ny)),
            ndarray::Array3::zeros((n, grid.nx, grid.ny)),
            1,
            false,
        )
        .unwrap()
    }

    #[test]
    fn zero_field_gives_unit_background() {
        let grid = Grid3D::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let basis = build_basis(0.1, 0.6, 2, 32).unwrap();
        let state = zero_state(&grid, 2);
        let c = recover_dielectric(&state, &basis, 6.62, 9.0, &[0.2, 0.4]).unwrap();
        assert!(c.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn quadratic_component_matches_hand_formula() {
        // With a single component quadratic in space the central differences
        // are exact, so the recovered value matches the analytic bracket.
        let grid = Grid3D::new(1.0, 1.0, 0.25, 0.25).unwrap();
        let basis = build_basis(0.1, 0.6, 1, 32).unwrap();
        let mut state = zero_state(&grid, 1);
        let f = |x: f64, y: f64, z: f64| {
            Complex64::new(0.3 * x * x - 0.1 * y * y + 0.2 * z, 0.4 * x + 0.1 * z * z)
        };
        for p in 0..grid.nx {
            for q in 0..grid.ny {
                for s in 0..grid.nz {
                    let pt = grid.point(p, q, s);
                    state.values[[p, q, s, 0]] = f(pt[0], pt[1], pt[2]);
                }
            }
        }
        let k = 6.62;
        let d = 9.0;
        let sources = [0.15, 0.3, 0.55];
        let c = recover_dielectric(&state, &basis, k, d, &sources).unwrap();
        let (p, q, s) = (2, 3, 4);
        let pt = grid.point(p, q, s);
        let mut acc = 0.0;
        for &alpha in &sources {
            let w = basis.eval(0, alpha);
            let lap = w * Complex64::new(0.3 * 2.0 - 0.1 * 2.0, 0.1 * 2.0);
            let grad = [
                w * Complex64::new(0.6 * pt[0], 0.4),
                w * Complex64::new(-0.2 * pt[1], 0.0),
                w * Complex64::new(0.2, 0.2 * pt[2]),
            ];
            let xt = x_tilde(k, &pt, alpha, d);
            let mut bracket = lap;
            for ax in 0..3 {
                bracket += grad[ax] * grad[ax] + 2.0 * grad[ax] * xt[ax];
            }
            acc += (bracket / (k * k)).norm();
        }
        let want = acc / sources.len() as f64 + 1.0;
        assert!(
            (c.values[[p, q, s]] - want).abs() < 1e-12 * want,
            "{} vs {want}",
            c.values[[p, q, s]]
        );
    }

    #[test]
    fn recovered_field_never_drops_below_one() {
        let grid = Grid3D::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let basis = build_basis(0.1, 0.6, 2, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut state = zero_state(&grid, 2);
            for v in state.values.iter_mut() {
                *v = Complex64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            }
            let c = recover_dielectric(&state, &basis, 6.62, 9.0, &[0.2, 0.5]).unwrap();
            assert!(c.values.iter().all(|&v| v >= 1.0));
        }
    }

    #[test]
    fn finalize_keeps_constant_fields() {
        let grid = Grid3D::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let c = ScalarField::from_values(
            grid.clone(),
            A3::from_elem((grid.nx, grid.ny, grid.nz), 2.5),
        )
        .unwrap();
        let out = finalize_field(&c, 1.0).unwrap();
        for (&a, &b) in c.values.iter().zip(out.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn finalize_preserves_the_maximum() {
        let grid = Grid3D::new(2.0, 2.0, 0.25, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut vals = A3::from_elem((grid.nx, grid.ny, grid.nz), 1.0);
        for v in vals.iter_mut() {
            *v = 1.0 + rng.gen_range(0.0..4.0);
        }
        let raw_max = vals.iter().copied().fold(0.0, f64::max);
        let c = ScalarField::from_values(grid, vals).unwrap();
        let out = finalize_field(&c, 1.0).unwrap();
        assert!((out.max() - raw_max).abs() < 1e-10 * raw_max);
    }

    #[test]
    fn finalize_spreads_a_spike_but_keeps_its_peak() {
        let grid = Grid3D::new(2.0, 2.0, 0.25, 0.25).unwrap();
        let mut vals = A3::zeros((grid.nx, grid.ny, grid.nz));
        let mid = grid.nx / 2;
        vals[[mid, mid, grid.nz / 2]] = 6.0;
        let c = ScalarField::from_values(grid, vals).unwrap();
        let out = finalize_field(&c, 1.0).unwrap();
        assert!((out.max() - 6.0).abs() < 1e-10);
        let above: usize = out.values.iter().filter(|&&v| v > 0.01).count();
        assert!(above > 1, "spike did not spread");
    }

    #[test]
    fn unit_background_reports_no_inclusion() {
        let grid = Grid3D::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let c = ScalarField::from_values(
            grid.clone(),
            A3::from_elem((grid.nx, grid.ny, grid.nz), 1.0),
        )
        .unwrap();
        let rep = extract_inclusion(&c, 0.1).unwrap();
        assert!(!rep.found);
        assert!(rep.mask.iter().all(|&m| !m));
        assert!(rep.centroid.is_none());
    }

    #[test]
    fn box_inclusion_centroid_lands_on_the_box_center() {
        let grid = Grid3D::new(2.0, 2.0, 0.25, 0.25).unwrap();
        let mut vals = A3::from_elem((grid.nx, grid.ny, grid.nz), 1.0);
        // Contrast 4 over nodes with |x|,|y| <= 0.5 and z in [-1, -0.5].
        for ((p, q, s), v) in vals.indexed_iter_mut() {
            let x = grid.point(p, q, s);
            if x[0].abs() <= 0.5 && x[1].abs() <= 0.5 && x[2] >= -1.0 && x[2] <= -0.5 {
                *v = 5.0;
            }
        }
        let c = ScalarField::from_values(grid.clone(), vals).unwrap();
        let rep = extract_inclusion(&c, 0.1).unwrap();
        assert!(rep.found);
        let centroid = rep.centroid.unwrap();
        let target = [0.0, 0.0, -0.75];
        for ax in 0..3 {
            assert!(
                (centroid[ax] - target[ax]).abs() <= 0.5 * grid.step[ax],
                "axis {ax}: {} vs {}",
                centroid[ax],
                target[ax]
            );
        }
        let (lo, hi) = rep.bbox.unwrap();
        assert!(lo[0] <= -0.5 + 1e-12 && hi[0] >= 0.5 - 1e-12);
    }

    #[test]
    fn higher_fraction_gives_a_subset_mask() {
        let grid = Grid3D::new(2.0, 2.0, 0.25, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut vals = A3::from_elem((grid.nx, grid.ny, grid.nz), 1.0);
        for v in vals.iter_mut() {
            *v = 1.0 + rng.gen_range(0.0..3.0);
        }
        let c = ScalarField::from_values(grid, vals).unwrap();
        let lo = extract_inclusion(&c, 0.2).unwrap();
        let hi = extract_inclusion(&c, 0.6).unwrap();
        for (&a, &b) in hi.mask.iter().zip(lo.mask.iter()) {
            assert!(!a || b, "higher fraction must give a subset");
        }
        // Near 1 the mask shrinks to the argmax voxels.
        let top = extract_inclusion(&c, 0.999999).unwrap();
        let count = top.mask.iter().filter(|&&m| m).count();
        assert!(count >= 1 && count < 5);
    }

    #[test]
    fn fraction_outside_unit_interval_is_rejected() {
        let grid = Grid3D::new(1.0, 1.0, 0.5, 0.5).unwrap();
        let c = ScalarField::zeros(grid);
        assert!(extract_inclusion(&c, 0.0).is_err());
        assert!(extract_inclusion(&c, 1.0).is_err());
    }
}
