//! Near-field Dirichlet/Neumann pairs per Fourier component on Gamma.

use crate::error::{Error, Result};
use ndarray::Array3;
use num_complex::Complex64;
use std::io::Write;
use std::path::Path;

/// For each Fourier index n < N: psi0_n (Dirichlet trace of V) and psi1_n
/// (its z derivative) on the uniform Gamma lattice at z = -b.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyData {
    pub origin: f64,
    pub step: f64,
    /// Lattice is n x n.
    pub n: usize,
    /// Shape [fourier index, i, j].
    pub psi0: Array3<Complex64>,
    pub psi1: Array3<Complex64>,
}

impl CauchyData {
    pub fn zeros(origin: f64, step: f64, n: usize, n_basis: usize) -> Self {
        CauchyData {
            origin,
            step,
            n,
            psi0: Array3::zeros((n_basis, n, n)),
            psi1: Array3::zeros((n_basis, n, n)),
        }
    }

    pub fn n_basis(&self) -> usize {
        self.psi0.dim().0
    }

    pub fn x(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = self
            .psi0
            .iter()
            .chain(self.psi1.iter())
            .all(|v| v.re.is_finite() && v.im.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Domain("non-finite value in Cauchy data".into()))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.check_finite()?;
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
        );
        let io_err = |e| Error::io(path.display().to_string(), e);
        writeln!(file, "n,x,y,re0,im0,re1,im1").map_err(io_err)?;
        for nb in 0..self.n_basis() {
            for i in 0..self.n {
                for j in 0..self.n {
                    let d = self.psi0[[nb, i, j]];
                    let z = self.psi1[[nb, i, j]];
                    writeln!(
                        file,
                        "{},{},{},{},{},{},{}",
                        nb,
                        self.x(i),
                        self.x(j),
                        d.re,
                        d.im,
                        z.re,
                        z.im
                    )
                    .map_err(io_err)?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CauchyData> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<CauchyData> {
        let mut rows: Vec<(usize, usize, f64, f64, Complex64, Complex64)> = Vec::new();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "n,x,y,re0,im0,re1,im1" => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "expected header `n,x,y,re0,im0,re1,im1`".into(),
                })
            }
        }
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 7 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 7 fields, got {}", parts.len()),
                });
            }
            let nb = parts[0].trim().parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("not an index: `{}`", parts[0]),
            })?;
            let mut vals = [0.0f64; 6];
            for (slot, tok) in vals.iter_mut().zip(&parts[1..]) {
                *slot = tok.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("not a number: `{tok}`"),
                })?;
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: line_no,
                    message: "non-finite value".into(),
                });
            }
            rows.push((
                line_no,
                nb,
                vals[0],
                vals[1],
                Complex64::new(vals[2], vals[3]),
                Complex64::new(vals[4], vals[5]),
            ));
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "no samples".into(),
            });
        }
        let n_basis = rows.iter().map(|r| r.1).max().unwrap() + 1;
        let mut xs: Vec<f64> = rows.iter().map(|r| r.2).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * a.abs().max(1.0));
        let n = xs.len();
        let step = if n > 1 { xs[1] - xs[0] } else { 0.0 };
        let expected = n_basis * n * n;
        if rows.len() != expected {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected {expected} rows for a complete lattice, got {}", rows.len()),
            });
        }
        let mut out = CauchyData::zeros(xs[0], step, n, n_basis);
        for (line_no, nb, x, y, d, z) in rows {
            let i = index_of(&xs, x).ok_or(Error::Parse {
                line: line_no,
                message: format!("x = {x} not on lattice"),
            })?;
            let j = index_of(&xs, y).ok_or(Error::Parse {
                line: line_no,
                message: format!("y = {y} not on lattice"),
            })?;
            out.psi0[[nb, i, j]] = d;
            out.psi1[[nb, i, j]] = z;
        }
        Ok(out)
    }
}

fn index_of(sorted: &[f64], value: f64) -> Option<usize> {
    sorted
        .iter()
        .position(|&v| (v - value).abs() <= 1e-9 * v.abs().max(1.0))
}
