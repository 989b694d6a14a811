//! The Carleman-weighted cost functional over the Fourier component fields
//! and its gradient descent minimization.
//!
//! The unknown is the vector field V = (v_0 .. v_{N-1}) on the grid. Cauchy
//! data pin the two bottom layers, lateral and top faces carry zero discrete
//! normal derivative, and the remaining nodes are free. The functional is
//!
//!   J = sum over interior (p, q) of h^2 int |Delta V + K(grad V)|^2 mu dz
//!
//! evaluated with the weight normalized by its maximum mu(-b) so that the
//! default lambda does not overflow; the minimizer is unchanged.

use crate::basis::BasisSet;
use crate::cauchy::CauchyData;
use crate::error::{Error, Result};
use crate::grid::Grid3D;
use ndarray::{Array3, Array4};
use num_complex::Complex64;

/// Descent stops when the step drops below this.
pub const GAMMA_MIN: f64 = 1e-10;
/// Descent stops when |J_m - J_{m-1}| drops below this.
pub const J_STALL: f64 = 1e-10;

/// The Carleman weight mu_lambda(z) = exp(2 lambda (z - theta)^2).
#[derive(Debug, Clone, PartialEq)]
pub struct Cwf {
    pub lambda: f64,
    pub theta: f64,
    pub b: f64,
}

impl Cwf {
    pub fn new(lambda: f64, theta: f64, b: f64) -> Result<Self> {
        if !(lambda >= 1.0) {
            return Err(Error::Domain(format!(
                "lambda must be at least 1, got {lambda}"
            )));
        }
        if !(theta > b && b > 0.0) {
            return Err(Error::Domain(format!(
                "need theta > b > 0, got theta = {theta}, b = {b}"
            )));
        }
        Ok(Cwf { lambda, theta, b })
    }

    /// log mu_lambda(z), exact for any lambda.
    pub fn log_mu(&self, z: f64) -> f64 {
        2.0 * self.lambda * (z - self.theta) * (z - self.theta)
    }

    /// mu_lambda(z) / mu_lambda(-b), in (0, 1] on [-b, b].
    pub fn normalized(&self, z: f64) -> f64 {
        (self.log_mu(z) - self.log_mu(-self.b)).exp()
    }

    /// Normalized weights on the z nodes of a grid.
    pub fn weights(&self, grid: &Grid3D) -> Vec<f64> {
        (0..grid.nz).map(|s| self.normalized(grid.z(s))).collect()
    }
}

/// x_tilde_alpha = ik (x - x_alpha)/r - (x - x_alpha)/r^2 for the source at
/// (alpha, 0, -d).
pub fn x_tilde(k: f64, x: &[f64; 3], alpha: f64, d: f64) -> [Complex64; 3] {
    let diff = [x[0] - alpha, x[1], x[2] + d];
    let r = (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
    let mut out = [Complex64::new(0.0, 0.0); 3];
    for i in 0..3 {
        out[i] = Complex64::new(-diff[i] / (r * r), k * diff[i] / r);
    }
    out
}

/// x_hat_alpha, the alpha derivative of x_tilde_alpha.
pub fn x_hat(k: f64, x: &[f64; 3], alpha: f64, d: f64) -> [Complex64; 3] {
    let (dx, y, zd) = (x[0] - alpha, x[1], x[2] + d);
    let r2 = dx * dx + y * y + zd * zd;
    let r = r2.sqrt();
    let r3 = r2 * r;
    let r4 = r2 * r2;
    let first = [-y * y - zd * zd, dx * y, dx * zd];
    let second = [dx * dx - y * y - zd * zd, 2.0 * dx * y, 2.0 * dx * zd];
    let mut out = [Complex64::new(0.0, 0.0); 3];
    for i in 0..3 {
        out[i] = Complex64::new(-second[i] / r4, k * first[i] / r3);
    }
    out
}

/// Alpha-integrated coupling tensors at every grid node:
/// T[m][n] = int Psi_m Psi_n' x_tilde + Psi_m Psi_n x_hat d alpha.
/// Both contract against grad v_n in the nonlinearity.
pub struct SourceGeometryTensors {
    pub n: usize,
    dims: (usize, usize, usize),
    coupling: Vec<[Complex64; 3]>,
}

impl SourceGeometryTensors {
    pub fn build(grid: &Grid3D, basis: &BasisSet, k: f64, d: f64) -> Result<Self> {
        if d <= -grid.origin[2] {
            return Err(Error::Domain(
                "source depth d must put sources outside the domain".into(),
            ));
        }
        let n = basis.n;
        let dims = (grid.nx, grid.ny, grid.nz);
        let mut coupling =
            vec![[Complex64::new(0.0, 0.0); 3]; grid.node_count() * n * n];
        for p in 0..grid.nx {
            for q in 0..grid.ny {
                for s in 0..grid.nz {
                    let x = grid.point(p, q, s);
                    let flat = grid.flat(p, q, s);
                    for (t, (&alpha, &w)) in
                        basis.nodes.iter().zip(basis.weights.iter()).enumerate()
                    {
                        let xt = x_tilde(k, &x, alpha, d);
                        let xh = x_hat(k, &x, alpha, d);
                        for m in 0..n {
                            let pm = basis.psi[[m, t]];
                            for nn in 0..n {
                                let c1 = w * pm * basis.dpsi[[nn, t]];
                                let c2 = w * pm * basis.psi[[nn, t]];
                                let slot = &mut coupling[(flat * n + m) * n + nn];
                                for ax in 0..3 {
                                    slot[ax] += c1 * xt[ax] + c2 * xh[ax];
                                }
                            }
                        }
                    }
                }
            }
        }
        let finite = coupling
            .iter()
            .all(|v| v.iter().all(|c| c.re.is_finite() && c.im.is_finite()));
        if !finite {
            return Err(Error::Domain("non-finite coupling tensor".into()));
        }
        Ok(SourceGeometryTensors { n, dims, coupling })
    }

    #[inline]
    pub fn coupling(&self, flat: usize, m: usize, nn: usize) -> &[Complex64; 3] {
        &self.coupling[(flat * self.n + m) * self.n + nn]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }
}

#[inline]
fn dot3(a: &[Complex64; 3], b: &[Complex64; 3]) -> Complex64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// K(grad V) = S_N^{-1} f at one node, grads holding grad v_n for n < N.
pub fn nonlinear_term_k(
    basis: &BasisSet,
    tensors: &SourceGeometryTensors,
    flat: usize,
    grads: &[[Complex64; 3]],
) -> Vec<Complex64> {
    let n = basis.n;
    let mut f = vec![Complex64::new(0.0, 0.0); n];
    for (m, fm) in f.iter_mut().enumerate() {
        for nn in 0..n {
            for l in 0..n {
                *fm += 2.0 * basis.a_tensor[[m, nn, l]] * dot3(&grads[nn], &grads[l]);
            }
            *fm += 2.0 * dot3(tensors.coupling(flat, m, nn), &grads[nn]);
        }
    }
    apply_s_inv(basis, &f)
}

fn apply_s_inv(basis: &BasisSet, f: &[Complex64]) -> Vec<Complex64> {
    let n = basis.n;
    (0..n)
        .map(|m| (0..n).map(|j| basis.s_inv[[m, j]] * f[j]).sum())
        .collect()
}

/// 7-point discrete Laplacian of component `nn` at an interior node.
#[inline]
pub fn laplacian_component(
    values: &Array4<Complex64>,
    nn: usize,
    p: usize,
    q: usize,
    s: usize,
    step: &[f64; 3],
) -> Complex64 {
    let c = values[[p, q, s, nn]];
    (values[[p + 1, q, s, nn]] + values[[p - 1, q, s, nn]] - 2.0 * c)
        / (step[0] * step[0])
        + (values[[p, q + 1, s, nn]] + values[[p, q - 1, s, nn]] - 2.0 * c)
            / (step[1] * step[1])
        + (values[[p, q, s + 1, nn]] + values[[p, q, s - 1, nn]] - 2.0 * c)
            / (step[2] * step[2])
}

/// Central-difference gradient of component `nn` at an interior node.
#[inline]
pub fn gradient_component(
    values: &Array4<Complex64>,
    nn: usize,
    p: usize,
    q: usize,
    s: usize,
    step: &[f64; 3],
) -> [Complex64; 3] {
    [
        (values[[p + 1, q, s, nn]] - values[[p - 1, q, s, nn]]) / (2.0 * step[0]),
        (values[[p, q + 1, s, nn]] - values[[p, q - 1, s, nn]]) / (2.0 * step[1]),
        (values[[p, q, s + 1, nn]] - values[[p, q, s - 1, nn]]) / (2.0 * step[2]),
    ]
}

/// The vector field V with its Cauchy data and constraint bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub grid: Grid3D,
    pub n: usize,
    /// Shape [nx, ny, nz, N].
    pub values: Array4<Complex64>,
    /// Shape [N, nx, ny], on the z = -b face.
    pub psi0: Array3<Complex64>,
    pub psi1: Array3<Complex64>,
    pub neumann_order: usize,
    /// Largest free z index; bounds the search subdomain Omega_1.
    pub free_s_max: usize,
}

impl StateVector {
    pub fn new(
        grid: Grid3D,
        psi0: Array3<Complex64>,
        psi1: Array3<Complex64>,
        neumann_order: usize,
        restrict_omega1: bool,
    ) -> Result<Self> {
        let n = psi0.dim().0;
        if psi0.dim() != (n, grid.nx, grid.ny) || psi1.dim() != (n, grid.nx, grid.ny) {
            return Err(Error::Shape(format!(
                "Cauchy layers {:?} do not match an {} x {} face",
                psi0.dim(),
                grid.nx,
                grid.ny
            )));
        }
        if neumann_order != 1 && neumann_order != 2 {
            return Err(Error::Domain("neumann_order must be 1 or 2".into()));
        }
        let free_s_max = if restrict_omega1 {
            // z <= -b + 2 marks the search subdomain.
            let cap = (2.0 / grid.step[2] + 1e-9).floor() as usize;
            cap.min(grid.nz - 2)
        } else {
            grid.nz - 2
        };
        let values = Array4::zeros((grid.nx, grid.ny, grid.nz, n));
        let mut state = StateVector {
            grid,
            n,
            values,
            psi0,
            psi1,
            neumann_order,
            free_s_max,
        };
        state.apply_constraints();
        Ok(state)
    }

    /// True for degrees of freedom updated by the descent.
    #[inline]
    pub fn is_free(&self, p: usize, q: usize, s: usize) -> bool {
        p >= 1
            && p + 1 < self.grid.nx
            && q >= 1
            && q + 1 < self.grid.ny
            && s >= 2
            && s + 1 < self.grid.nz
            && s <= self.free_s_max
    }

    /// Re-impose all boundary relations: lateral and top copies for the zero
    /// normal derivative, then the two Cauchy layers.
    pub fn apply_constraints(&mut self) {
        let (nx, ny, nz) = (self.grid.nx, self.grid.ny, self.grid.nz);
        let hz = self.grid.step[2];
        for nn in 0..self.n {
            for s in 2..nz - 1 {
                for q in 0..ny {
                    self.values[[0, q, s, nn]] = self.values[[1, q, s, nn]];
                    self.values[[nx - 1, q, s, nn]] = self.values[[nx - 2, q, s, nn]];
                }
                for p in 0..nx {
                    self.values[[p, 0, s, nn]] = self.values[[p, 1, s, nn]];
                    self.values[[p, ny - 1, s, nn]] = self.values[[p, ny - 2, s, nn]];
                }
            }
            for p in 0..nx {
                for q in 0..ny {
                    self.values[[p, q, nz - 1, nn]] = self.values[[p, q, nz - 2, nn]];
                    let d0 = self.psi0[[nn, p, q]];
                    let d1 = self.psi1[[nn, p, q]];
                    self.values[[p, q, 1, nn]] = if self.neumann_order == 1 {
                        d0 + hz * d1
                    } else {
                        (2.0 * hz * d1 + 3.0 * d0 + self.values[[p, q, 2, nn]]) / 4.0
                    };
                    self.values[[p, q, 0, nn]] = d0;
                }
            }
        }
    }

    /// Transpose of the constraint map applied to a raw nodewise gradient,
    /// leaving nonzero entries on free nodes only.
    pub fn fold_gradient(&self, g: &mut Array4<Complex64>) {
        let (nx, ny, nz) = (self.grid.nx, self.grid.ny, self.grid.nz);
        let zero = Complex64::new(0.0, 0.0);
        for nn in 0..self.n {
            for p in 0..nx {
                for q in 0..ny {
                    g[[p, q, 0, nn]] = zero;
                    if self.neumann_order == 2 {
                        let t = g[[p, q, 1, nn]];
                        g[[p, q, 2, nn]] += t / 4.0;
                    }
                    g[[p, q, 1, nn]] = zero;
                    let t = g[[p, q, nz - 1, nn]];
                    g[[p, q, nz - 2, nn]] += t;
                    g[[p, q, nz - 1, nn]] = zero;
                }
            }
            for s in 2..nz - 1 {
                for p in 0..nx {
                    let t = g[[p, 0, s, nn]];
                    g[[p, 1, s, nn]] += t;
                    g[[p, 0, s, nn]] = zero;
                    let t = g[[p, ny - 1, s, nn]];
                    g[[p, ny - 2, s, nn]] += t;
                    g[[p, ny - 1, s, nn]] = zero;
                }
                for q in 0..ny {
                    let t = g[[0, q, s, nn]];
                    g[[1, q, s, nn]] += t;
                    g[[0, q, s, nn]] = zero;
                    let t = g[[nx - 1, q, s, nn]];
                    g[[nx - 2, q, s, nn]] += t;
                    g[[nx - 1, q, s, nn]] = zero;
                }
            }
        }
        for ((p, q, s, _), v) in g.indexed_iter_mut() {
            if !self.is_free(p, q, s) {
                *v = zero;
            }
        }
    }

    /// L2-type norm of the field values over all nodes and components.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// The smooth cutoff of the starting point: 1 at z = -b, 0 for z >= 0.
pub fn cutoff_chi(z: f64, b: f64) -> f64 {
    if z >= 0.0 {
        0.0
    } else {
        let t = (z + b) * (z + b);
        (2.0 * t / (t - b * b)).exp()
    }
}

/// Build v0_n = (psi0_n + psi1_n (z + b)) chi(z), then impose constraints.
pub fn build_starting_point(
    cauchy: &CauchyData,
    grid: &Grid3D,
    neumann_order: usize,
    restrict_omega1: bool,
) -> Result<StateVector> {
    if cauchy.n != grid.nx
        || cauchy.n != grid.ny
        || (cauchy.origin - grid.origin[0]).abs() > 1e-9
        || (cauchy.step - grid.step[0]).abs() > 1e-9
    {
        return Err(Error::Shape(format!(
            "Cauchy lattice ({} nodes from {} step {}) does not match the grid face",
            cauchy.n, cauchy.origin, cauchy.step
        )));
    }
    let b = -grid.origin[2];
    let mut state = StateVector::new(
        grid.clone(),
        cauchy.psi0.clone(),
        cauchy.psi1.clone(),
        neumann_order,
        restrict_omega1,
    )?;
    for p in 0..grid.nx {
        for q in 0..grid.ny {
            for s in 0..grid.nz {
                let z = grid.z(s);
                let chi = cutoff_chi(z, b);
                for nn in 0..state.n {
                    state.values[[p, q, s, nn]] =
                        (cauchy.psi0[[nn, p, q]] + cauchy.psi1[[nn, p, q]] * (z + b)) * chi;
                }
            }
        }
    }
    state.apply_constraints();
    Ok(state)
}

/// Trapezoid weight for the z-integral over interior layers.
#[inline]
fn z_weight(s: usize, nz: usize, hz: f64) -> f64 {
    if s == 1 || s == nz - 2 {
        0.5 * hz
    } else {
        hz
    }
}

/// Residual L(V) = Delta V + K(grad V) for every component at one node.
fn residual_at(
    state: &StateVector,
    basis: &BasisSet,
    tensors: &SourceGeometryTensors,
    p: usize,
    q: usize,
    s: usize,
    grads: &mut Vec<[Complex64; 3]>,
) -> Vec<Complex64> {
    grads.clear();
    for nn in 0..state.n {
        grads.push(gradient_component(
            &state.values,
            nn,
            p,
            q,
            s,
            &state.grid.step,
        ));
    }
    let flat = state.grid.flat(p, q, s);
    let mut k = nonlinear_term_k(basis, tensors, flat, grads);
    for (nn, r) in k.iter_mut().enumerate() {
        *r += laplacian_component(&state.values, nn, p, q, s, &state.grid.step);
    }
    k
}

/// J with the normalized Carleman weight.
pub fn evaluate_j(
    state: &StateVector,
    cwf: &Cwf,
    basis: &BasisSet,
    tensors: &SourceGeometryTensors,
) -> f64 {
    let (nx, ny, nz) = (state.grid.nx, state.grid.ny, state.grid.nz);
    let h2 = state.grid.step[0] * state.grid.step[1];
    let hz = state.grid.step[2];
    let mu = cwf.weights(&state.grid);
    let mut grads = Vec::with_capacity(state.n);
    let mut j = 0.0;
    for p in 1..nx - 1 {
        for q in 1..ny - 1 {
            for s in 1..nz - 1 {
                let l = residual_at(state, basis, tensors, p, q, s, &mut grads);
                let total: f64 = l.iter().map(|v| v.norm_sqr()).sum();
                j += h2 * z_weight(s, nz, hz) * mu[s] * total;
            }
        }
    }
    j
}

/// Analytic gradient of J with respect to the free degrees of freedom, in
/// the convention dJ along r = Re sum conj(g) r.
pub fn gradient_j(
    state: &StateVector,
    cwf: &Cwf,
    basis: &BasisSet,
    tensors: &SourceGeometryTensors,
) -> Array4<Complex64> {
    let (nx, ny, nz) = (state.grid.nx, state.grid.ny, state.grid.nz);
    let n = state.n;
    let step = state.grid.step;
    let h2 = step[0] * step[1];
    let mu = cwf.weights(&state.grid);
    let mut g = Array4::<Complex64>::zeros((nx, ny, nz, n));
    let mut grads = Vec::with_capacity(n);
    let lap_center = -2.0 / (step[0] * step[0])
        - 2.0 / (step[1] * step[1])
        - 2.0 / (step[2] * step[2]);
    for p in 1..nx - 1 {
        for q in 1..ny - 1 {
            for s in 1..nz - 1 {
                let l = residual_at(state, basis, tensors, p, q, s, &mut grads);
                let w = 2.0 * h2 * z_weight(s, nz, step[2]) * mu[s];
                let flat = state.grid.flat(p, q, s);
                for m in 0..n {
                    let a = w * l[m];
                    if a.norm_sqr() == 0.0 {
                        continue;
                    }
                    // Laplacian sensitivities of component m.
                    g[[p, q, s, m]] += a * lap_center;
                    g[[p + 1, q, s, m]] += a / (step[0] * step[0]);
                    g[[p - 1, q, s, m]] += a / (step[0] * step[0]);
                    g[[p, q + 1, s, m]] += a / (step[1] * step[1]);
                    g[[p, q - 1, s, m]] += a / (step[1] * step[1]);
                    g[[p, q, s + 1, m]] += a / (step[2] * step[2]);
                    g[[p, q, s - 1, m]] += a / (step[2] * step[2]);
                    // K sensitivities: dK_m/d(grad v_n) contracted with the
                    // central-difference stencil.
                    for nn in 0..n {
                        let mut c = [Complex64::new(0.0, 0.0); 3];
                        for jj in 0..n {
                            let sij = basis.s_inv[[m, jj]];
                            if sij == 0.0 {
                                continue;
                            }
                            let t = tensors.coupling(flat, jj, nn);
                            for ax in 0..3 {
                                let mut quad = Complex64::new(0.0, 0.0);
                                for ll in 0..n {
                                    quad += (basis.a_tensor[[jj, nn, ll]]
                                        + basis.a_tensor[[jj, ll, nn]])
                                        * grads[ll][ax];
                                }
                                c[ax] += sij * (2.0 * quad + 2.0 * t[ax]);
                            }
                        }
                        let cx = a * c[0].conj() / (2.0 * step[0]);
                        let cy = a * c[1].conj() / (2.0 * step[1]);
                        let cz = a * c[2].conj() / (2.0 * step[2]);
                        g[[p + 1, q, s, nn]] += cx;
                        g[[p - 1, q, s, nn]] -= cx;
                        g[[p, q + 1, s, nn]] += cy;
                        g[[p, q - 1, s, nn]] -= cy;
                        g[[p, q, s + 1, nn]] += cz;
                        g[[p, q, s - 1, nn]] -= cz;
                    }
                }
            }
        }
    }
    state.fold_gradient(&mut g);
    g
}

/// One accepted descent record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub gamma: f64,
    pub j: f64,
}

/// Gradient descent with step halving on increase; stops on a tiny step or a
/// stalled J. An accepted step doubles gamma back toward gamma0 so one steep
/// region early on does not pin the whole run to a tiny step.
pub fn minimize(
    v0: StateVector,
    cwf: &Cwf,
    basis: &BasisSet,
    tensors: &SourceGeometryTensors,
    gamma0: f64,
    max_iters: usize,
) -> Result<(StateVector, Vec<IterationRecord>)> {
    let mut state = v0;
    let mut gamma = gamma0;
    let mut j = evaluate_j(&state, cwf, basis, tensors);
    let mut trace = vec![IterationRecord { iter: 0, gamma, j }];
    for it in 1..=max_iters {
        let g = gradient_j(&state, cwf, basis, tensors);
        // Step with halving until J stops increasing.
        let accepted = loop {
            let mut candidate = state.clone();
            for p in 0..candidate.grid.nx {
                for q in 0..candidate.grid.ny {
                    for s in 0..candidate.grid.nz {
                        if !candidate.is_free(p, q, s) {
                            continue;
                        }
                        for nn in 0..candidate.n {
                            candidate.values[[p, q, s, nn]] -= gamma * g[[p, q, s, nn]];
                        }
                    }
                }
            }
            candidate.apply_constraints();
            let jc = evaluate_j(&candidate, cwf, basis, tensors);
            if jc <= j {
                break Some((candidate, jc));
            }
            gamma *= 0.5;
            if gamma < GAMMA_MIN {
                break None;
            }
        };
        let Some((candidate, jc)) = accepted else {
            return Ok((state, trace));
        };
        let stalled = (j - jc).abs() < J_STALL;
        state = candidate;
        j = jc;
        trace.push(IterationRecord { iter: it, gamma, j });
        if stalled || gamma < GAMMA_MIN {
            return Ok((state, trace));
        }
        gamma = (2.0 * gamma).min(gamma0);
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        final_j: j,
        trace: trace.iter().map(|r| (r.iter, r.gamma, r.j)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_grid() -> Grid3D {
        // 5 x 5 x 5 over [-1,1]^2 x [-1,1].
        Grid3D::new(1.0, 1.0, 0.5, 0.5).unwrap()
    }

    fn setup(n: usize) -> (Grid3D, BasisSet, SourceGeometryTensors, Cwf) {
        let grid = small_grid();
        let basis = build_basis(0.1, 0.6, n, 8 * n.max(4)).unwrap();
        let tensors = SourceGeometryTensors::build(&grid, &basis, 6.62, 9.0).unwrap();
        let cwf = Cwf::new(1.1, 4.0, 1.0).unwrap();
        (grid, basis, tensors, cwf)
    }

    fn random_state(grid: &Grid3D, n: usize, seed: u64, scale: f64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi0 = Array3::zeros((n, grid.nx, grid.ny));
        let psi1 = Array3::zeros((n, grid.nx, grid.ny));
        let mut state = StateVector::new(grid.clone(), psi0, psi1, 1, false).unwrap();
        for p in 0..grid.nx {
            for q in 0..grid.ny {
                for s in 0..grid.nz {
                    if !state.is_free(p, q, s) {
                        continue;
                    }
                    for nn in 0..n {
                        state.values[[p, q, s, nn]] = Complex64::new(
                            rng.gen_range(-scale..scale),
                            rng.gen_range(-scale..scale),
                        );
                    }
                }
            }
        }
        state.apply_constraints();
        state
    }

    #[test]
    fn cwf_extremes_sit_at_the_faces() {
        let grid = Grid3D::new(5.0, 2.0, 0.5, 0.2).unwrap();
        let cwf = Cwf::new(1.1, 4.0, 2.0).unwrap();
        let w = cwf.weights(&grid);
        assert_eq!(w[0], 1.0);
        let expected_min = (cwf.log_mu(2.0) - cwf.log_mu(-2.0)).exp();
        assert!((w[grid.nz - 1] - expected_min).abs() <= 1e-15 * expected_min);
        for pair in w.windows(2) {
            assert!(pair[1] < pair[0], "weight must strictly decrease");
        }
        // Unnormalized identities, checked in logs.
        assert_eq!(cwf.log_mu(-2.0), 2.0 * 1.1 * 36.0);
        assert_eq!(cwf.log_mu(2.0), 2.0 * 1.1 * 4.0);
    }

    #[test]
    fn cutoff_is_one_at_gamma_and_zero_above() {
        assert_eq!(cutoff_chi(-2.0, 2.0), 1.0);
        assert_eq!(cutoff_chi(0.0, 2.0), 0.0);
        assert_eq!(cutoff_chi(1.3, 2.0), 0.0);
        let v = cutoff_chi(-1.0, 2.0);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn x_hat_is_alpha_derivative_of_x_tilde() {
        let k = 6.62;
        let d = 9.0;
        let x = [1.2, -0.7, 0.4];
        for &alpha in &[0.1, 0.35, 0.6] {
            let eps = 1e-6;
            let plus = x_tilde(k, &x, alpha + eps, d);
            let minus = x_tilde(k, &x, alpha - eps, d);
            let exact = x_hat(k, &x, alpha, d);
            for ax in 0..3 {
                let fd = (plus[ax] - minus[ax]) / (2.0 * eps);
                assert!(
                    (fd - exact[ax]).norm() < 1e-7 * exact[ax].norm().max(1.0),
                    "axis {ax}: {fd} vs {}",
                    exact[ax]
                );
            }
        }
    }

    #[test]
    fn k_vanishes_at_zero_gradient() {
        let (_, basis, tensors, _) = setup(3);
        let grads = vec![[Complex64::new(0.0, 0.0); 3]; 3];
        let k = nonlinear_term_k(&basis, &tensors, 17, &grads);
        assert!(k.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn k_splits_into_linear_and_quadratic_parts() {
        let (_, basis, tensors, _) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grads: Vec<[Complex64; 3]> = (0..2)
            .map(|_| {
                [0, 1, 2].map(|_| {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                })
            })
            .collect();
        let scale = |t: f64| -> Vec<[Complex64; 3]> {
            grads
                .iter()
                .map(|g| [g[0] * t, g[1] * t, g[2] * t])
                .collect()
        };
        let k1 = nonlinear_term_k(&basis, &tensors, 31, &scale(1.0));
        let k2 = nonlinear_term_k(&basis, &tensors, 31, &scale(2.0));
        let k3 = nonlinear_term_k(&basis, &tensors, 31, &scale(3.0));
        for m in 0..2 {
            // k(t) = t^2 quad + t lin; recover both from t = 1, 2.
            let quad = (k2[m] - 2.0 * k1[m]) / 2.0;
            let lin = k1[m] - quad;
            let predicted = 9.0 * quad + 3.0 * lin;
            assert!(
                (k3[m] - predicted).norm() < 1e-12 * predicted.norm().max(1.0),
                "component {m}"
            );
        }
    }

    #[test]
    fn single_component_k_matches_scalar_evaluation() {
        let (grid, basis, tensors, _) = setup(1);
        let grad = [
            Complex64::new(0.3, -0.1),
            Complex64::new(-0.2, 0.4),
            Complex64::new(0.1, 0.05),
        ];
        let flat = grid.flat(2, 1, 3);
        let k = nonlinear_term_k(&basis, &tensors, flat, &[grad]);
        // Hand evaluation: K = f / s00 with f = 2 A g.g + 2 T.g.
        let a = basis.a_tensor[[0, 0, 0]];
        let t = tensors.coupling(flat, 0, 0);
        let gg = grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2];
        let tg = t[0] * grad[0] + t[1] * grad[1] + t[2] * grad[2];
        let f = 2.0 * a * gg + 2.0 * tg;
        let want = f / basis.s_mat[[0, 0]];
        assert!((k[0] - want).norm() < 1e-12 * want.norm().max(1.0));
    }

    #[test]
    fn zero_state_has_zero_residual_and_j() {
        let (grid, basis, tensors, cwf) = setup(2);
        let psi0 = Array3::zeros((2, grid.nx, grid.ny));
        let psi1 = Array3::zeros((2, grid.nx, grid.ny));
        let state = StateVector::new(grid, psi0, psi1, 1, false).unwrap();
        assert_eq!(evaluate_j(&state, &cwf, &basis, &tensors), 0.0);
        let g = gradient_j(&state, &cwf, &basis, &tensors);
        assert!(g.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn alternating_pattern_makes_j_quadratic() {
        // v = (-1)^p has zero central gradient, so K = 0 and L = Delta v is
        // linear; scaling V by t must scale J by t^2.
        let (grid, basis, tensors, cwf) = setup(1);
        let mut base = StateVector::new(
            grid.clone(),
            Array3::zeros((1, grid.nx, grid.ny)),
            Array3::zeros((1, grid.nx, grid.ny)),
            1,
            false,
        )
        .unwrap();
        for p in 0..grid.nx {
            for q in 0..grid.ny {
                for s in 0..grid.nz {
                    base.values[[p, q, s, 0]] =
                        Complex64::new(if p % 2 == 0 { 1.0 } else { -1.0 }, 0.0);
                }
            }
        }
        let j1 = evaluate_j(&base, &cwf, &basis, &tensors);
        let mut scaled = base.clone();
        scaled.values.mapv_inplace(|v| v * 3.0);
        let j3 = evaluate_j(&scaled, &cwf, &basis, &tensors);
        assert!(j1 > 0.0);
        assert!((j3 - 9.0 * j1).abs() < 1e-10 * j1.max(1.0) * 9.0, "{j3} vs {}", 9.0 * j1);
        // Closed form: |L| = 2 * 2 / h^2 at every interior node of the
        // alternating column.
        let h = grid.step[0];
        let l2 = (4.0 / (h * h) as f64).powi(2);
        let mu = cwf.weights(&grid);
        let mut want = 0.0;
        for s in 1..grid.nz - 1 {
            let w = if s == 1 || s == grid.nz - 2 {
                0.5 * grid.step[2]
            } else {
                grid.step[2]
            };
            want += ((grid.nx - 2) * (grid.ny - 2)) as f64 * h * h * w * mu[s] * l2;
        }
        assert!((j1 - want).abs() < 1e-10 * want, "{j1} vs {want}");
    }

    #[test]
    fn affine_in_z_residual_is_pure_k() {
        let (grid, basis, tensors, _) = setup(2);
        let mut state = StateVector::new(
            grid.clone(),
            Array3::zeros((2, grid.nx, grid.ny)),
            Array3::zeros((2, grid.nx, grid.ny)),
            1,
            false,
        )
        .unwrap();
        for p in 0..grid.nx {
            for q in 0..grid.ny {
                for s in 0..grid.nz {
                    let z = grid.z(s);
                    state.values[[p, q, s, 0]] = Complex64::new(0.3 * z + 0.1, -0.2 * z);
                    state.values[[p, q, s, 1]] = Complex64::new(-0.5 * z, 0.7);
                }
            }
        }
        let mut grads = Vec::new();
        let (p, q, s) = (2, 2, 2);
        let l = residual_at(&state, &basis, &tensors, p, q, s, &mut grads);
        let flat = grid.flat(p, q, s);
        let k = nonlinear_term_k(&basis, &tensors, flat, &grads);
        for m in 0..2 {
            assert!((l[m] - k[m]).norm() < 1e-12, "Laplacian of affine data");
        }
    }

    #[test]
    fn manufactured_laplacian_converges_at_second_order() {
        // Residual minus K equals the discrete Laplacian; against the smooth
        // field sin(x) cos(y) z^2 the error must shrink by about 4x when both
        // steps halve.
        let errs: Vec<f64> = [0.25, 0.125]
            .iter()
            .map(|&h| {
                let grid = Grid3D::new(1.0, 1.0, h, h).unwrap();
                let basis = build_basis(0.1, 0.6, 1, 32).unwrap();
                let tensors =
                    SourceGeometryTensors::build(&grid, &basis, 6.62, 9.0).unwrap();
                let mut state = StateVector::new(
                    grid.clone(),
                    Array3::zeros((1, grid.nx, grid.ny)),
                    Array3::zeros((1, grid.nx, grid.ny)),
                    1,
                    false,
                )
                .unwrap();
                let f = |x: f64, y: f64, z: f64| x.sin() * y.cos() * z * z;
                for p in 0..grid.nx {
                    for q in 0..grid.ny {
                        for s in 0..grid.nz {
                            let pt = grid.point(p, q, s);
                            state.values[[p, q, s, 0]] =
                                Complex64::new(f(pt[0], pt[1], pt[2]), 0.0);
                        }
                    }
                }
                // Shared node of both grids, away from symmetry zeros.
                let p = ((0.5 - grid.origin[0]) / h).round() as usize;
                let q = ((0.25 - grid.origin[1]) / h).round() as usize;
                let s = ((-0.5 - grid.origin[2]) / h).round() as usize;
                let mut grads = Vec::new();
                let l = residual_at(&state, &basis, &tensors, p, q, s, &mut grads);
                let k = nonlinear_term_k(&basis, &tensors, grid.flat(p, q, s), &grads);
                let pt = grid.point(p, q, s);
                let exact = -2.0 * pt[0].sin() * pt[1].cos() * pt[2] * pt[2]
                    + 2.0 * pt[0].sin() * pt[1].cos();
                ((l[0] - k[0]).re - exact).abs()
            })
            .collect();
        let rate = errs[0] / errs[1];
        assert!(rate > 3.0 && rate < 5.0, "convergence rate {rate}, errs {errs:?}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (grid, basis, tensors, cwf) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..10 {
            let state = random_state(&grid, 2, 1000 + trial, 0.2);
            let g = gradient_j(&state, &cwf, &basis, &tensors);
            // Random free-space direction.
            let mut dir = Array4::<Complex64>::zeros(g.dim());
            for p in 0..grid.nx {
                for q in 0..grid.ny {
                    for s in 0..grid.nz {
                        if !state.is_free(p, q, s) {
                            continue;
                        }
                        for nn in 0..2 {
                            dir[[p, q, s, nn]] = Complex64::new(
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(-1.0..1.0),
                            );
                        }
                    }
                }
            }
            let analytic: f64 = g
                .iter()
                .zip(dir.iter())
                .map(|(gv, dv)| (gv.conj() * dv).re)
                .sum();
            let eps = 1e-5;
            let eval = |sign: f64| -> f64 {
                let mut pert = state.clone();
                for p in 0..grid.nx {
                    for q in 0..grid.ny {
                        for s in 0..grid.nz {
                            if !pert.is_free(p, q, s) {
                                continue;
                            }
                            for nn in 0..2 {
                                pert.values[[p, q, s, nn]] +=
                                    sign * eps * dir[[p, q, s, nn]];
                            }
                        }
                    }
                }
                pert.apply_constraints();
                evaluate_j(&pert, &cwf, &basis, &tensors)
            };
            let fd = (eval(1.0) - eval(-1.0)) / (2.0 * eps);
            let denom = analytic.abs().max(fd.abs()).max(1e-12);
            assert!(
                (analytic - fd).abs() / denom <= 1e-5,
                "trial {trial}: analytic {analytic} vs fd {fd}"
            );
        }
    }

    #[test]
    fn gradient_respects_second_order_neumann_pinning() {
        let grid = small_grid();
        let basis = build_basis(0.1, 0.6, 2, 32).unwrap();
        let tensors = SourceGeometryTensors::build(&grid, &basis, 6.62, 9.0).unwrap();
        let cwf = Cwf::new(1.1, 4.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let psi0 = Array3::zeros((2, grid.nx, grid.ny));
        let psi1 = Array3::zeros((2, grid.nx, grid.ny));
        let mut state = StateVector::new(grid.clone(), psi0, psi1, 2, false).unwrap();
        for p in 0..grid.nx {
            for q in 0..grid.ny {
                for s in 0..grid.nz {
                    if !state.is_free(p, q, s) {
                        continue;
                    }
                    for nn in 0..2 {
                        state.values[[p, q, s, nn]] = Complex64::new(
                            rng.gen_range(-0.2..0.2),
                            rng.gen_range(-0.2..0.2),
                        );
                    }
                }
            }
        }
        state.apply_constraints();
        let g = gradient_j(&state, &cwf, &basis, &tensors);
        let dir_seed: Vec<Complex64> = (0..4)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        // Single-node direction at a free node next to the pinned layer.
        let mut dir = Array4::<Complex64>::zeros(g.dim());
        dir[[2, 2, 2, 0]] = dir_seed[0];
        dir[[2, 1, 2, 1]] = dir_seed[1];
        let analytic: f64 = g
            .iter()
            .zip(dir.iter())
            .map(|(gv, dv)| (gv.conj() * dv).re)
            .sum();
        let eps = 1e-5;
        let eval = |sign: f64| -> f64 {
            let mut pert = state.clone();
            ndarray::Zip::from(&mut pert.values)
                .and(&dir)
                .for_each(|v, d| *v += sign * eps * d);
            pert.apply_constraints();
            evaluate_j(&pert, &cwf, &basis, &tensors)
        };
        let fd = (eval(1.0) - eval(-1.0)) / (2.0 * eps);
        let denom = analytic.abs().max(fd.abs()).max(1e-12);
        assert!(
            (analytic - fd).abs() / denom <= 1e-5,
            "analytic {analytic} vs fd {fd}"
        );
    }

    #[test]
    fn starting_point_reproduces_cauchy_layers() {
        let grid = small_grid();
        let mut cauchy = CauchyData::zeros(grid.origin[0], grid.step[0], grid.nx, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in cauchy.psi0.iter_mut().chain(cauchy.psi1.iter_mut()) {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let state = build_starting_point(&cauchy, &grid, 1, true).unwrap();
        let hz = grid.step[2];
        for p in 0..grid.nx {
            for q in 0..grid.ny {
                for nn in 0..2 {
                    assert_eq!(state.values[[p, q, 0, nn]], cauchy.psi0[[nn, p, q]]);
                    let dz = (state.values[[p, q, 1, nn]] - state.values[[p, q, 0, nn]])
                        / hz;
                    assert!((dz - cauchy.psi1[[nn, p, q]]).norm() < 1e-12);
                }
            }
        }
        // Zero Cauchy data at the top face.
        for p in 0..grid.nx {
            for q in 0..grid.ny {
                for nn in 0..2 {
                    assert_eq!(
                        state.values[[p, q, grid.nz - 1, nn]],
                        Complex64::new(0.0, 0.0)
                    );
                }
            }
        }
    }

    #[test]
    fn starting_point_z_derivative_refines_with_hz() {
        // Away from the pinned layer the analytic profile has dz v(-b) =
        // psi1; the one-sided difference from layers 0 and 2 converges to it.
        let errs: Vec<f64> = [0.1, 0.05]
            .iter()
            .map(|&hz| {
                let grid = Grid3D::new(1.0, 1.0, 0.5, hz).unwrap();
                let mut cauchy =
                    CauchyData::zeros(grid.origin[0], grid.step[0], grid.nx, 1);
                for v in cauchy.psi0.iter_mut() {
                    *v = Complex64::new(0.4, -0.3);
                }
                for v in cauchy.psi1.iter_mut() {
                    *v = Complex64::new(-0.8, 0.5);
                }
                let state = build_starting_point(&cauchy, &grid, 1, false).unwrap();
                // Second-order one-sided difference at z = -b.
                let d = (-3.0 * state.values[[2, 2, 0, 0]]
                    + 4.0 * state.values[[2, 2, 1, 0]]
                    - state.values[[2, 2, 2, 0]])
                    / (2.0 * hz);
                (d - Complex64::new(-0.8, 0.5)).norm()
            })
            .collect();
        assert!(errs[1] < errs[0], "no refinement: {errs:?}");
    }

    #[test]
    fn zero_problem_terminates_immediately() {
        let (grid, basis, tensors, cwf) = setup(2);
        let state = StateVector::new(
            grid.clone(),
            Array3::zeros((2, grid.nx, grid.ny)),
            Array3::zeros((2, grid.nx, grid.ny)),
            1,
            false,
        )
        .unwrap();
        let (_, trace) = minimize(state, &cwf, &basis, &tensors, 0.1, 100).unwrap();
        assert_eq!(trace.len(), 2);
        assert_eq!(trace[1].j, 0.0);
    }

    #[test]
    fn descent_is_monotone_and_reduces_j() {
        // The huge weight spread makes the tail of the descent crawl, so the
        // iteration cap may fire before the stall threshold; both outcomes
        // carry the trace and both must show a monotone, shrinking J.
        let (grid, basis, tensors, cwf) = setup(2);
        let state = random_state(&grid, 2, 42, 0.3);
        let j0 = evaluate_j(&state, &cwf, &basis, &tensors);
        let trace: Vec<(usize, f64, f64)> =
            match minimize(state, &cwf, &basis, &tensors, 0.1, 50000) {
                Ok((_, t)) => t.iter().map(|r| (r.iter, r.gamma, r.j)).collect(),
                Err(Error::NonConvergence { trace, .. }) => trace,
                Err(e) => panic!("unexpected error {e}"),
            };
        for pair in trace.windows(2) {
            assert!(pair[1].2 <= pair[0].2, "J increased in the accepted chain");
        }
        let last = trace.last().unwrap();
        assert!(last.2 < 1e-2 * j0, "J {} did not drop from {j0}", last.2);
    }
}
