//! The orthonormal source basis built from alpha^n e^alpha on [a1, a2].
//!
//! Gram-Schmidt applied to this family yields a basis whose derivative matrix
//! S_N = (<Psi_n', Psi_m>) is unit upper-triangular, which is what lets the
//! third-order source-derivative PDE collapse into a coupled elliptic system.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;

/// Gauss-Legendre nodes and weights on [a, b].
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    assert!(n >= 1, "quadrature order must be positive");
    let mut out = Vec::with_capacity(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    for i in 0..n {
        // Newton iteration from the Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((mid - half * x, half * w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// Legendre polynomial P_n and its derivative at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let j = j as f64;
        let p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// phi_n(alpha) = alpha^n e^alpha.
fn phi(n: usize, alpha: f64) -> f64 {
    alpha.powi(n as i32) * alpha.exp()
}

/// phi_n'(alpha) = (n alpha^{n-1} + alpha^n) e^alpha.
fn dphi(n: usize, alpha: f64) -> f64 {
    let lead = if n == 0 {
        0.0
    } else {
        n as f64 * alpha.powi(n as i32 - 1)
    };
    (lead + alpha.powi(n as i32)) * alpha.exp()
}

/// The orthonormal basis with everything the inversion needs precomputed:
/// values and derivatives at the build quadrature nodes, the derivative
/// matrix S_N with its inverse, and the product integrals A, B, C.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub n: usize,
    pub a1: f64,
    pub a2: f64,
    /// Build quadrature on [a1, a2].
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Row n holds the expansion of Psi_n over phi_0..phi_{N-1}.
    pub coeff: Array2<f64>,
    /// Psi_n and Psi_n' at the build nodes, shape [n, node].
    pub psi: Array2<f64>,
    pub dpsi: Array2<f64>,
    /// S_N[m][n] = <Psi_n', Psi_m>, unit upper-triangular.
    pub s_mat: Array2<f64>,
    pub s_inv: Array2<f64>,
    /// A[m][n][l] = integral of Psi_m Psi_n Psi_l' d alpha.
    pub a_tensor: Array3<f64>,
    /// B[m][n] = integral of Psi_m Psi_n' d alpha.
    pub b_mat: Array2<f64>,
    /// C[m][n] = integral of Psi_m Psi_n d alpha.
    pub c_mat: Array2<f64>,
}

/// Build the basis with `quad_points` Gauss-Legendre nodes for all
/// alpha-integrals. Modified Gram-Schmidt with a re-orthogonalization pass.
pub fn build_basis(a1: f64, a2: f64, n: usize, quad_points: usize) -> Result<BasisSet> {
    if !(a1 < a2) {
        return Err(Error::Domain("a1 must be less than a2".into()));
    }
    if n < 1 || n > 12 {
        return Err(Error::Domain(format!("N must be in 1..=12, got {n}")));
    }
    if quad_points < 8 * n {
        return Err(Error::Domain(format!(
            "quad_points must be at least 8 N = {}, got {quad_points}",
            8 * n
        )));
    }
    let rule = gauss_legendre(quad_points, a1, a2);
    let nodes: Vec<f64> = rule.iter().map(|r| r.0).collect();
    let weights: Vec<f64> = rule.iter().map(|r| r.1).collect();

    // phi values at nodes, shape [function, node].
    let q = nodes.len();
    let mut phi_vals = Array2::zeros((n, q));
    for i in 0..n {
        for (j, &x) in nodes.iter().enumerate() {
            phi_vals[[i, j]] = phi(i, x);
        }
    }

    let inner = |f: &Array1<f64>, g: &Array1<f64>| -> f64 {
        f.iter()
            .zip(g.iter())
            .zip(weights.iter())
            .map(|((a, b), w)| a * b * w)
            .sum()
    };

    // Gram-Schmidt on coefficient vectors, tracking values at nodes.
    let mut coeff = Array2::zeros((n, n));
    let mut psi = Array2::zeros((n, q));
    for i in 0..n {
        let mut c = Array1::zeros(n);
        c[i] = 1.0;
        let mut v = phi_vals.row(i).to_owned();
        for _pass in 0..2 {
            for j in 0..i {
                let pj = psi.row(j).to_owned();
                let proj = inner(&v, &pj);
                v = &v - &(proj * &pj);
                for t in 0..n {
                    c[t] -= proj * coeff[[j, t]];
                }
            }
        }
        let norm = inner(&v, &v).sqrt();
        if norm < 1e-10 * inner(&phi_vals.row(i).to_owned(), &phi_vals.row(i).to_owned()).sqrt() {
            return Err(Error::Conditioning { index: i, norm });
        }
        v /= norm;
        c /= norm;
        psi.row_mut(i).assign(&v);
        coeff.row_mut(i).assign(&c);
    }

    // Derivatives from the coefficient expansion.
    let mut dphi_vals = Array2::zeros((n, q));
    for i in 0..n {
        for (j, &x) in nodes.iter().enumerate() {
            dphi_vals[[i, j]] = dphi(i, x);
        }
    }
    let dpsi = coeff.dot(&dphi_vals);

    let mut s_mat = Array2::zeros((n, n));
    let mut b_mat = Array2::zeros((n, n));
    let mut c_mat = Array2::zeros((n, n));
    for m in 0..n {
        for nn in 0..n {
            let s: f64 = (0..q)
                .map(|j| dpsi[[nn, j]] * psi[[m, j]] * weights[j])
                .sum();
            s_mat[[m, nn]] = s;
            b_mat[[m, nn]] = s;
            c_mat[[m, nn]] = (0..q)
                .map(|j| psi[[m, j]] * psi[[nn, j]] * weights[j])
                .sum();
        }
    }
    let s_inv = invert_upper_triangular(&s_mat)?;

    let mut a_tensor = Array3::zeros((n, n, n));
    for m in 0..n {
        for nn in 0..n {
            for l in 0..n {
                a_tensor[[m, nn, l]] = (0..q)
                    .map(|j| psi[[m, j]] * psi[[nn, j]] * dpsi[[l, j]] * weights[j])
                    .sum();
            }
        }
    }

    Ok(BasisSet {
        n,
        a1,
        a2,
        nodes,
        weights,
        coeff,
        psi,
        dpsi,
        s_mat,
        s_inv,
        a_tensor,
        b_mat,
        c_mat,
    })
}

fn invert_upper_triangular(s: &Array2<f64>) -> Result<Array2<f64>> {
    let n = s.nrows();
    let mut inv = Array2::zeros((n, n));
    for col in 0..n {
        let mut rhs = Array1::zeros(n);
        rhs[col] = 1.0;
        for row in (0..n).rev() {
            let mut acc = rhs[row];
            for j in row + 1..n {
                acc -= s[[row, j]] * inv[[j, col]];
            }
            let diag = s[[row, row]];
            if diag.abs() < 1e-12 {
                return Err(Error::Solver(format!(
                    "singular derivative matrix at row {row}"
                )));
            }
            inv[[row, col]] = acc / diag;
        }
    }
    Ok(inv)
}

impl BasisSet {
    /// Psi_n evaluated at an arbitrary point of [a1, a2].
    pub fn eval(&self, n: usize, alpha: f64) -> f64 {
        (0..self.n).map(|j| self.coeff[[n, j]] * phi(j, alpha)).sum()
    }

    /// Psi_n' evaluated at an arbitrary point of [a1, a2].
    pub fn eval_deriv(&self, n: usize, alpha: f64) -> f64 {
        (0..self.n)
            .map(|j| self.coeff[[n, j]] * dphi(j, alpha))
            .sum()
    }

    /// Fourier coefficients <f, Psi_n> from samples at the given
    /// Gauss-Legendre rule on [a1, a2].
    pub fn project(
        &self,
        samples: &[Complex64],
        nodes: &[f64],
        weights: &[f64],
    ) -> Result<Vec<Complex64>> {
        if samples.len() != nodes.len() || nodes.len() != weights.len() {
            return Err(Error::Shape(format!(
                "sample count {} does not match quadrature rule of {} nodes",
                samples.len(),
                nodes.len()
            )));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        for (coef, slot) in out.iter_mut().enumerate() {
            let coef_n = coef;
            *slot = samples
                .iter()
                .zip(nodes.iter().zip(weights.iter()))
                .map(|(&f, (&x, &w))| f * self.eval(coef_n, x) * w)
                .sum();
        }
        Ok(out)
    }

    /// Fourier coefficients from samples at the build quadrature nodes.
    pub fn project_at_build_nodes(&self, samples: &[Complex64]) -> Result<Vec<Complex64>> {
        let nodes = self.nodes.clone();
        let weights = self.weights.clone();
        self.project(samples, &nodes, &weights)
    }

    /// Partial sum of the truncated Fourier series at alpha.
    pub fn synthesize(&self, coeffs: &[Complex64], alpha: f64) -> Result<Complex64> {
        if coeffs.len() != self.n {
            return Err(Error::Shape(format!(
                "expected {} coefficients, got {}",
                self.n,
                coeffs.len()
            )));
        }
        if alpha < self.a1 - 1e-12 || alpha > self.a2 + 1e-12 {
            return Err(Error::Domain(format!(
                "alpha = {alpha} outside [{}, {}]",
                self.a1, self.a2
            )));
        }
        Ok((0..self.n)
            .map(|n| coeffs[n] * self.eval(n, alpha))
            .sum())
    }

    /// Max deviation of <Psi_n, Psi_m> from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for m in 0..self.n {
            for nn in 0..self.n {
                let target = if m == nn { 1.0 } else { 0.0 };
                worst = worst.max((self.c_mat[[m, nn]] - target).abs());
            }
        }
        worst
    }

    /// Max |s_mn| over the strict lower triangle and max |s_nn - 1|.
    pub fn triangular_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for m in 0..self.n {
            worst = worst.max((self.s_mat[[m, m]] - 1.0).abs());
            for nn in 0..m {
                worst = worst.max(self.s_mat[[m, nn]].abs());
            }
        }
        worst
    }

    /// det S_N from the diagonal (the matrix is upper triangular).
    pub fn s_determinant(&self) -> f64 {
        (0..self.n).map(|i| self.s_mat[[i, i]]).product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson integration, the independent oracle for the
    /// quadrature-built tensors.
    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
        let n = 2 * panels;
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(5, -1.0, 2.0);
        let got: f64 = rule.iter().map(|(x, w)| w * x.powi(8)).sum();
        let want = (2.0f64.powi(9) - (-1.0f64).powi(9)) / 9.0;
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    #[test]
    fn single_function_case_is_normalized_exponential() {
        let basis = build_basis(0.1, 0.6, 1, 64).unwrap();
        let norm = simpson(|a| a.exp() * a.exp(), 0.1, 0.6, 2048).sqrt();
        let alpha = 0.37;
        assert!((basis.eval(0, alpha) - alpha.exp() / norm).abs() < 1e-10);
        assert!(basis.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn s_matrix_is_unit_upper_triangular() {
        let basis = build_basis(0.1, 0.6, 4, 256).unwrap();
        assert!(basis.triangular_defect() < 1e-8, "{}", basis.triangular_defect());
        assert!((basis.s_determinant() - 1.0).abs() < 1e-6);
        // S inverse really inverts.
        let prod = basis.s_mat.dot(&basis.s_inv);
        for m in 0..4 {
            for n in 0..4 {
                let target = if m == n { 1.0 } else { 0.0 };
                assert!((prod[[m, n]] - target).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn orthonormality_holds_up_to_n8() {
        for n in [2, 4, 8] {
            let basis = build_basis(0.1, 0.6, n, 8 * n.max(8)).unwrap();
            assert!(
                basis.orthonormality_defect() <= 1e-8,
                "N = {n}: defect {}",
                basis.orthonormality_defect()
            );
        }
    }

    #[test]
    fn tensors_match_simpson_oracle() {
        let basis = build_basis(0.1, 0.6, 3, 256).unwrap();
        for m in 0..3 {
            for n in 0..3 {
                let b_oracle = simpson(
                    |a| basis.eval(m, a) * basis.eval_deriv(n, a),
                    0.1,
                    0.6,
                    2048,
                );
                assert!((basis.b_mat[[m, n]] - b_oracle).abs() < 1e-8);
                let c_oracle = simpson(|a| basis.eval(m, a) * basis.eval(n, a), 0.1, 0.6, 2048);
                assert!((basis.c_mat[[m, n]] - c_oracle).abs() < 1e-8);
                for l in 0..3 {
                    let a_oracle = simpson(
                        |a| basis.eval(m, a) * basis.eval(n, a) * basis.eval_deriv(l, a),
                        0.1,
                        0.6,
                        2048,
                    );
                    assert!((basis.a_tensor[[m, n, l]] - a_oracle).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn b_equals_s_entrywise() {
        // Both matrices are the same family of integrals <Psi_m, Psi_n'>.
        let basis = build_basis(0.1, 0.6, 5, 256).unwrap();
        for m in 0..5 {
            for n in 0..5 {
                assert!((basis.b_mat[[m, n]] - basis.s_mat[[m, n]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_recovers_basis_vector() {
        let basis = build_basis(0.1, 0.6, 4, 256).unwrap();
        let samples: Vec<Complex64> = basis
            .nodes
            .iter()
            .map(|&x| Complex64::new(basis.eval(2, x), 0.0))
            .collect();
        let coeffs = basis.project_at_build_nodes(&samples).unwrap();
        for (i, c) in coeffs.iter().enumerate() {
            let target = if i == 2 { 1.0 } else { 0.0 };
            assert!((c.re - target).abs() < 1e-8 && c.im.abs() < 1e-12);
        }
    }

    #[test]
    fn projection_of_zero_is_zero() {
        let basis = build_basis(0.1, 0.6, 3, 64).unwrap();
        let samples = vec![Complex64::new(0.0, 0.0); basis.nodes.len()];
        let coeffs = basis.project_at_build_nodes(&samples).unwrap();
        assert!(coeffs.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn projection_matches_simpson_for_exponential() {
        let basis = build_basis(0.1, 0.6, 4, 256).unwrap();
        let samples: Vec<Complex64> = basis
            .nodes
            .iter()
            .map(|&x| Complex64::new(x.exp(), 0.0))
            .collect();
        let coeffs = basis.project_at_build_nodes(&samples).unwrap();
        for n in 0..4 {
            let oracle = simpson(|a| a.exp() * basis.eval(n, a), 0.1, 0.6, 2048);
            assert!(
                (coeffs[n].re - oracle).abs() < 1e-8,
                "n = {n}: {} vs {oracle}",
                coeffs[n].re
            );
        }
    }

    #[test]
    fn project_then_synthesize_is_identity_on_span() {
        // phi_0..phi_{N-1} span the basis; projection must be a left inverse
        // of synthesis there.
        let basis = build_basis(0.1, 0.6, 4, 256).unwrap();
        let f = |a: f64| (1.0 + 2.0 * a - 0.5 * a * a + a * a * a) * a.exp();
        let samples: Vec<Complex64> = basis
            .nodes
            .iter()
            .map(|&x| Complex64::new(f(x), 0.0))
            .collect();
        let coeffs = basis.project_at_build_nodes(&samples).unwrap();
        for &alpha in &[0.12, 0.3, 0.55] {
            let got = basis.synthesize(&coeffs, alpha).unwrap();
            assert!((got.re - f(alpha)).abs() < 1e-8, "{} vs {}", got.re, f(alpha));
            assert!(got.im.abs() < 1e-10);
        }
    }

    #[test]
    fn synthesis_rejects_alpha_outside_interval() {
        let basis = build_basis(0.1, 0.6, 2, 32).unwrap();
        let coeffs = vec![Complex64::new(1.0, 0.0); 2];
        assert!(basis.synthesize(&coeffs, 0.7).is_err());
        assert!(basis.synthesize(&coeffs, 0.05).is_err());
    }

    #[test]
    fn unit_coefficient_synthesizes_basis_function() {
        let basis = build_basis(0.1, 0.6, 3, 64).unwrap();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 3];
        coeffs[1] = Complex64::new(1.0, 0.0);
        let alpha = 0.42;
        let got = basis.synthesize(&coeffs, alpha).unwrap();
        assert!((got.re - basis.eval(1, alpha)).abs() < 1e-12);
        let zero = basis
            .synthesize(&vec![Complex64::new(0.0, 0.0); 3], alpha)
            .unwrap();
        assert_eq!(zero, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn conditioning_growth_stays_bounded_at_cap() {
        // N = 12 is the cap; the build must still succeed with orthonormality
        // holding to a loose tolerance.
        let basis = build_basis(0.1, 0.6, 12, 128).unwrap();
        assert!(basis.orthonormality_defect() < 1e-6);
    }
}
