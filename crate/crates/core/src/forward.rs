//! Synthetic backscatter data through a Lippmann-Schwinger volume solver.
//!
//! The total field satisfies u = u_i + k^2 int G (c - 1) u over the scatterer
//! support. Midpoint collocation on a cell mesh turns this into a dense linear
//! system restricted to the cells where c > 1, which keeps the matrix small
//! for compact targets.

use crate::config::{Inclusion, PipelineConfig};
use crate::error::{Error, Result};
use crate::measurement::MeasurementSet;
use nalgebra::{DMatrix, DVector};
use ndarray::Array3;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Cell-centered simulation mesh over the prism [-R,R]^2 x [-b,b].
#[derive(Debug, Clone, PartialEq)]
pub struct SimMesh {
    pub n: usize,
    pub r: f64,
    pub b: f64,
}

impl SimMesh {
    pub fn cell_size(&self) -> [f64; 3] {
        let n = self.n as f64;
        [2.0 * self.r / n, 2.0 * self.r / n, 2.0 * self.b / n]
    }

    pub fn cell_volume(&self) -> f64 {
        let c = self.cell_size();
        c[0] * c[1] * c[2]
    }

    pub fn center(&self, i: usize, j: usize, s: usize) -> [f64; 3] {
        let c = self.cell_size();
        [
            -self.r + (i as f64 + 0.5) * c[0],
            -self.r + (j as f64 + 0.5) * c[1],
            -self.b + (s as f64 + 0.5) * c[2],
        ]
    }
}

/// The dielectric constant sampled per simulation cell, c >= 1 everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct DielectricField {
    pub mesh: SimMesh,
    pub values: Array3<f64>,
}

impl DielectricField {
    /// Homogeneous background, c = 1.
    pub fn background(mesh: SimMesh) -> Self {
        let n = mesh.n;
        DielectricField {
            mesh,
            values: Array3::from_elem((n, n, n), 1.0),
        }
    }

    /// Rasterize the configured inclusions. Each cell gets
    /// c = 1 + sum_j frac_j (c_j - 1) where frac_j is the volume fraction of
    /// inclusion j inside the cell, so targets smaller than a cell still
    /// scatter with the right strength.
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let mesh = SimMesh {
            n: cfg.sim_n,
            r: cfg.domain.r,
            b: cfg.domain.b,
        };
        let mut field = Self::background(mesh);
        let cell = field.mesh.cell_size();
        for inc in &cfg.inclusions {
            for i in 0..field.mesh.n {
                for j in 0..field.mesh.n {
                    for s in 0..field.mesh.n {
                        let center = field.mesh.center(i, j, s);
                        let frac = match inc {
                            Inclusion::Box {
                                center: c,
                                size,
                                contrast: _,
                            } => box_overlap_fraction(&center, &cell, c, size),
                            Inclusion::Sphere {
                                center: c,
                                radius,
                                contrast: _,
                            } => sphere_overlap_fraction(&center, &cell, c, *radius),
                        };
                        let contrast = match inc {
                            Inclusion::Box { contrast, .. } => *contrast,
                            Inclusion::Sphere { contrast, .. } => *contrast,
                        };
                        field.values[[i, j, s]] += frac * (contrast - 1.0);
                    }
                }
            }
        }
        if field.values.iter().any(|&v| v < 1.0 || !v.is_finite()) {
            return Err(Error::Domain(
                "dielectric field must satisfy c >= 1".into(),
            ));
        }
        Ok(field)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Exact overlap fraction of an axis-aligned box with a cell.
fn box_overlap_fraction(
    cell_center: &[f64; 3],
    cell: &[f64; 3],
    box_center: &[f64; 3],
    size: &[f64; 3],
) -> f64 {
    let mut frac = 1.0;
    for ax in 0..3 {
        let lo = (cell_center[ax] - 0.5 * cell[ax]).max(box_center[ax] - 0.5 * size[ax]);
        let hi = (cell_center[ax] + 0.5 * cell[ax]).min(box_center[ax] + 0.5 * size[ax]);
        frac *= ((hi - lo).max(0.0)) / cell[ax];
    }
    frac
}

/// Overlap fraction of a sphere with a cell by 4^3 subsampling.
fn sphere_overlap_fraction(
    cell_center: &[f64; 3],
    cell: &[f64; 3],
    sphere_center: &[f64; 3],
    radius: f64,
) -> f64 {
    const M: usize = 4;
    let mut inside = 0usize;
    for a in 0..M {
        for b in 0..M {
            for c in 0..M {
                let p = [
                    cell_center[0] + ((a as f64 + 0.5) / M as f64 - 0.5) * cell[0],
                    cell_center[1] + ((b as f64 + 0.5) / M as f64 - 0.5) * cell[1],
                    cell_center[2] + ((c as f64 + 0.5) / M as f64 - 0.5) * cell[2],
                ];
                let d2 = (0..3).map(|ax| (p[ax] - sphere_center[ax]).powi(2)).sum::<f64>();
                if d2 <= radius * radius {
                    inside += 1;
                }
            }
        }
    }
    inside as f64 / (M * M * M) as f64
}

/// Outgoing free-space Green's function e^{ik|x-y|} / (4 pi |x-y|).
pub fn green(k: f64, x: &[f64; 3], y: &[f64; 3]) -> Complex64 {
    let r = dist(x, y);
    Complex64::new(0.0, k * r).exp() / (4.0 * std::f64::consts::PI * r)
}

fn dist(x: &[f64; 3], y: &[f64; 3]) -> f64 {
    ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt()
}

/// Incident spherical wave from the source at (alpha, 0, -d).
pub fn incident(k: f64, x: &[f64; 3], alpha: f64, d: f64) -> Complex64 {
    green(k, x, &[alpha, 0.0, -d])
}

/// Integral of G(x, .) over the ball of the same volume as a cell, used for
/// the self term of the collocation matrix.
fn self_term(k: f64, volume: f64) -> Complex64 {
    let a = (3.0 * volume / (4.0 * std::f64::consts::PI)).powf(1.0 / 3.0);
    let ika = Complex64::new(0.0, k * a);
    (ika.exp() * (Complex64::new(1.0, 0.0) - ika) - 1.0) / (k * k)
}

/// Total field on the scatterer support, one column per source.
pub struct ForwardSolution {
    /// Cell indices of the support, in mesh order.
    pub support: Vec<(usize, usize, usize)>,
    /// Contrast c - 1 per support cell.
    pub chi: Vec<f64>,
    /// Support cell centers.
    pub centers: Vec<[f64; 3]>,
    /// u at the support cells, shape [cell][source].
    pub u: Vec<Vec<Complex64>>,
    pub volume: f64,
    pub k: f64,
}

/// Solve the Lippmann-Schwinger system for the given sources at (alpha, 0, -d).
pub fn solve_total_field(
    field: &DielectricField,
    k: f64,
    sources: &[f64],
    d: f64,
) -> Result<ForwardSolution> {
    let mut support = Vec::new();
    let mut chi = Vec::new();
    let mut centers = Vec::new();
    for i in 0..field.mesh.n {
        for j in 0..field.mesh.n {
            for s in 0..field.mesh.n {
                let c = field.values[[i, j, s]];
                if c - 1.0 > 1e-12 {
                    support.push((i, j, s));
                    chi.push(c - 1.0);
                    centers.push(field.mesh.center(i, j, s));
                }
            }
        }
    }
    let m = support.len();
    let vol = field.mesh.cell_volume();
    if m == 0 {
        return Ok(ForwardSolution {
            support,
            chi,
            centers,
            u: Vec::new(),
            volume: vol,
            k,
        });
    }

    let self_int = self_term(k, vol);
    let mut a = DMatrix::<Complex64>::zeros(m, m);
    for row in 0..m {
        for col in 0..m {
            let coupling = if row == col {
                self_int
            } else {
                green(k, &centers[row], &centers[col]) * vol
            };
            let mut entry = -Complex64::new(k * k * chi[col], 0.0) * coupling;
            if row == col {
                entry += Complex64::new(1.0, 0.0);
            }
            a[(row, col)] = entry;
        }
    }
    let lu = a.lu();

    let mut u = vec![vec![Complex64::new(0.0, 0.0); sources.len()]; m];
    for (l, &alpha) in sources.iter().enumerate() {
        let rhs = DVector::from_iterator(
            m,
            centers.iter().map(|c| incident(k, c, alpha, d)),
        );
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Solver("singular collocation matrix".into()))?;
        for row in 0..m {
            u[row][l] = sol[row];
        }
    }
    Ok(ForwardSolution {
        support,
        chi,
        centers,
        u,
        volume: vol,
        k,
    })
}

impl ForwardSolution {
    /// Scattered field at a point outside the support for source index l.
    pub fn scattered_at(&self, x: &[f64; 3], l: usize) -> Complex64 {
        let k2 = Complex64::new(self.k * self.k, 0.0);
        self.centers
            .iter()
            .zip(self.chi.iter())
            .zip(self.u.iter())
            .map(|((c, &chi), u_row)| {
                k2 * chi * green(self.k, x, c) * u_row[l] * self.volume
            })
            .sum()
    }
}

/// Generate the synthetic measurement set u_s(x, y, -D, alpha) on the
/// configured lattice, with optional multiplicative complex noise
/// u_s (1 + delta zeta), zeta uniform on the unit square, seeded by
/// the run seed.
pub fn simulate(cfg: &PipelineConfig) -> Result<MeasurementSet> {
    cfg.validate()?;
    let field = DielectricField::from_config(cfg)?;
    let sources = cfg.domain.source_positions();
    let sol = solve_total_field(&field, cfg.domain.k, &sources, cfg.domain.d)?;

    let origin = -0.5 * (cfg.meas_n as f64 - 1.0) * cfg.meas_step;
    let mut out = MeasurementSet::zeros(
        -cfg.domain.big_d,
        origin,
        cfg.meas_step,
        cfg.meas_n,
        sources.clone(),
    );
    if !sol.support.is_empty() {
        for l in 0..sources.len() {
            for i in 0..cfg.meas_n {
                for j in 0..cfg.meas_n {
                    let x = [out.x(i), out.y(j), -cfg.domain.big_d];
                    out.samples[[l, i, j]] = sol.scattered_at(&x, l);
                }
            }
        }
    }
    if cfg.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for v in out.samples.iter_mut() {
            let zeta = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            *v *= Complex64::new(1.0, 0.0) + cfg.noise * zeta;
        }
    }
    Ok(out)
}
