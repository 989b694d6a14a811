//! Far-field backscatter samples and their CSV wire format.

use crate::error::{Error, Result};
use ndarray::Array3;
use num_complex::Complex64;
use std::io::Write;
use std::path::Path;

/// Backscatter samples u_s(x, y, plane_z, alpha) on a uniform x,y lattice,
/// one slice per source position.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    /// z coordinate of the measurement plane (normally -D).
    pub plane_z: f64,
    /// Lattice origin and step; the lattice is n x n.
    pub origin: f64,
    pub step: f64,
    pub n: usize,
    /// Source abscissas alpha_l in [a1, a2].
    pub sources: Vec<f64>,
    /// Shape [source, i, j] with x_i = origin + i step, y_j = origin + j step.
    pub samples: Array3<Complex64>,
}

impl MeasurementSet {
    pub fn zeros(plane_z: f64, origin: f64, step: f64, n: usize, sources: Vec<f64>) -> Self {
        let samples = Array3::zeros((sources.len(), n, n));
        MeasurementSet {
            plane_z,
            origin,
            step,
            n,
            sources,
            samples,
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    pub fn y(&self, j: usize) -> f64 {
        self.origin + j as f64 * self.step
    }

    pub fn sample_count(&self) -> usize {
        self.sources.len() * self.n * self.n
    }

    /// Samplewise difference; lattices and source lists must match.
    pub fn subtract(&self, reference: &MeasurementSet) -> Result<MeasurementSet> {
        let lattice_ok = self.n == reference.n
            && (self.origin - reference.origin).abs() < 1e-9
            && (self.step - reference.step).abs() < 1e-9
            && self.sources.len() == reference.sources.len()
            && self
                .sources
                .iter()
                .zip(&reference.sources)
                .all(|(a, b)| (a - b).abs() < 1e-9);
        if !lattice_ok {
            return Err(Error::Shape(
                "measurement and reference lattices or source lists differ".into(),
            ));
        }
        let mut out = self.clone();
        out.samples = &self.samples - &reference.samples;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
        );
        let io_err = |e| Error::io(path.display().to_string(), e);
        writeln!(file, "alpha,x,y,re,im").map_err(io_err)?;
        for (l, alpha) in self.sources.iter().enumerate() {
            for i in 0..self.n {
                for j in 0..self.n {
                    let v = self.samples[[l, i, j]];
                    writeln!(file, "{},{},{},{},{}", alpha, self.x(i), self.y(j), v.re, v.im)
                        .map_err(io_err)?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path, plane_z: f64) -> Result<MeasurementSet> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, plane_z)
    }

    /// Parse the `alpha,x,y,re,im` CSV format. Row order is immaterial; the
    /// lattice must be uniform and complete with no duplicate keys.
    pub fn parse(text: &str, plane_z: f64) -> Result<MeasurementSet> {
        let mut rows: Vec<(usize, f64, f64, f64, Complex64)> = Vec::new();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "alpha,x,y,re,im" => {}
            Some((_, header)) => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `alpha,x,y,re,im`, got `{header}`"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "no samples".into(),
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
            if parts.len() != 5 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 5 fields, got {}", parts.len()),
                });
            }
            let mut vals = [0.0f64; 5];
            for (slot, tok) in vals.iter_mut().zip(&parts) {
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
                vals[1],
                vals[2],
                vals[0],
                Complex64::new(vals[3], vals[4]),
            ));
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "no samples".into(),
            });
        }

        let alphas = distinct_sorted(rows.iter().map(|r| r.3));
        let xs = distinct_sorted(rows.iter().map(|r| r.1));
        let ys = distinct_sorted(rows.iter().map(|r| r.2));
        if xs.len() != ys.len() {
            return Err(Error::Parse {
                line: 1,
                message: format!("lattice is {} x {}, expected square", xs.len(), ys.len()),
            });
        }
        let n = xs.len();
        let step = check_uniform(&xs).ok_or(Error::Parse {
            line: 1,
            message: "x lattice is not uniform".into(),
        })?;
        let step_y = check_uniform(&ys).ok_or(Error::Parse {
            line: 1,
            message: "y lattice is not uniform".into(),
        })?;
        if n > 1 && (step - step_y).abs() > 1e-9 * step.abs().max(1.0) {
            return Err(Error::Parse {
                line: 1,
                message: "x and y lattice steps differ".into(),
            });
        }

        let mut out = MeasurementSet::zeros(plane_z, xs[0], step, n, alphas.clone());
        let mut seen = vec![false; alphas.len() * n * n];
        for (line_no, x, y, alpha, value) in rows {
            let l = lookup(&alphas, alpha);
            let i = lookup(&xs, x);
            let j = lookup(&ys, y);
            let key = (l * n + i) * n + j;
            if seen[key] {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate sample for (alpha={alpha}, x={x}, y={y})"),
                });
            }
            seen[key] = true;
            out.samples[[l, i, j]] = value;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Parse {
                line: 1,
                message: "incomplete lattice: some (source, x, y) cells are missing".into(),
            });
        }
        Ok(out)
    }
}

fn distinct_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * a.abs().max(1.0));
    v
}

fn lookup(sorted: &[f64], value: f64) -> usize {
    sorted
        .binary_search_by(|probe| probe.partial_cmp(&value).unwrap())
        .unwrap_or_else(|insert| {
            // Nearest neighbor; dedup tolerance guarantees this is the match.
            if insert == 0 {
                0
            } else if insert == sorted.len() {
                sorted.len() - 1
            } else if (value - sorted[insert - 1]).abs() < (sorted[insert] - value).abs() {
                insert - 1
            } else {
                insert
            }
        })
}

fn check_uniform(sorted: &[f64]) -> Option<f64> {
    if sorted.len() < 2 {
        return Some(0.0);
    }
    let step = sorted[1] - sorted[0];
    let tol = 1e-6 * step.abs().max(1e-12);
    for w in sorted.windows(2) {
        if ((w[1] - w[0]) - step).abs() > tol {
            return None;
        }
    }
    Some(step)
}
