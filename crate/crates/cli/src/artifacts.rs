//! On-disk artifact formats for the pipeline stages: near-field traces,
//! minimizer fields, iteration traces, run summaries, and the manifest.

use anyhow::{bail, Context, Result};
use dielscan_core::inversion::IterationRecord;
use dielscan_core::StateVector;
use ndarray::{Array3, Array4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const MEAS_FILE: &str = "meas.csv";
pub const NEAR_FIELD_FILE: &str = "near_field.csv";
pub const CAUCHY_FILE: &str = "cauchy.csv";
pub const MINIMIZER_FILE: &str = "minimizer.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const FIELD_FILE: &str = "c_comp.vtk";
pub const MASK_FILE: &str = "mask.vtk";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Near-field trace and z derivative per source on the Gamma lattice.
pub struct NearField {
    pub origin: f64,
    pub step: f64,
    pub n: usize,
    pub sources: Vec<f64>,
    pub u: Array3<Complex64>,
    pub du: Array3<Complex64>,
}

pub fn save_near_field(path: &Path, nf: &NearField) -> Result<()> {
    let mut out = String::from("alpha,x,y,re_u,im_u,re_du,im_du\n");
    for (l, &alpha) in nf.sources.iter().enumerate() {
        for i in 0..nf.n {
            for j in 0..nf.n {
                let u = nf.u[[l, i, j]];
                let du = nf.du[[l, i, j]];
                out.push_str(&format!(
                    "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                    alpha,
                    nf.origin + i as f64 * nf.step,
                    nf.origin + j as f64 * nf.step,
                    u.re,
                    u.im,
                    du.re,
                    du.im
                ));
            }
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_near_field(path: &Path) -> Result<NearField> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<[f64; 7]> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || idx == 0 {
            continue;
        }
        let cols: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}:{}", path.display(), idx + 1))?;
        if cols.len() != 7 {
            bail!("{}:{}: expected 7 columns", path.display(), idx + 1);
        }
        rows.push([
            cols[0], cols[1], cols[2], cols[3], cols[4], cols[5], cols[6],
        ]);
    }
    if rows.is_empty() {
        bail!("{}: no samples", path.display());
    }
    let mut sources: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    sources.dedup();
    let mut xs: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let n = xs.len();
    if rows.len() != sources.len() * n * n {
        bail!(
            "{}: {} rows do not fill {} sources on an {n} x {n} lattice",
            path.display(),
            rows.len(),
            sources.len()
        );
    }
    let origin = xs[0];
    let step = if n > 1 { (xs[n - 1] - xs[0]) / (n - 1) as f64 } else { 1.0 };
    let mut u = Array3::zeros((sources.len(), n, n));
    let mut du = Array3::zeros((sources.len(), n, n));
    for (row_idx, r) in rows.iter().enumerate() {
        let l = row_idx / (n * n);
        let i = ((r[1] - origin) / step).round() as usize;
        let j = ((r[2] - origin) / step).round() as usize;
        if i >= n || j >= n {
            bail!("{}: sample off the lattice at row {row_idx}", path.display());
        }
        u[[l, i, j]] = Complex64::new(r[3], r[4]);
        du[[l, i, j]] = Complex64::new(r[5], r[6]);
    }
    Ok(NearField {
        origin,
        step,
        n,
        sources,
        u,
        du,
    })
}

pub fn save_minimizer(path: &Path, state: &StateVector) -> Result<()> {
    let (nx, ny, nz, nc) = state.values.dim();
    let mut out = format!("# nx={nx} ny={ny} nz={nz} n={nc}\np,q,s,n,re,im\n");
    for p in 0..nx {
        for q in 0..ny {
            for s in 0..nz {
                for c in 0..nc {
                    let v = state.values[[p, q, s, c]];
                    out.push_str(&format!(
                        "{p},{q},{s},{c},{:.17e},{:.17e}\n",
                        v.re, v.im
                    ));
                }
            }
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_minimizer(path: &Path) -> Result<Array4<Complex64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty minimizer file")?;
    let dims: Vec<usize> = header
        .trim_start_matches('#')
        .split_whitespace()
        .filter_map(|kv| kv.split_once('=').and_then(|(_, v)| v.parse().ok()))
        .collect();
    if dims.len() != 4 {
        bail!("{}: malformed dimension header", path.display());
    }
    let mut values = Array4::zeros((dims[0], dims[1], dims[2], dims[3]));
    for (idx, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() || idx == 0 {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            bail!("{}:{}: expected 6 columns", path.display(), idx + 2);
        }
        let p: usize = cols[0].parse()?;
        let q: usize = cols[1].parse()?;
        let s: usize = cols[2].parse()?;
        let c: usize = cols[3].parse()?;
        values[[p, q, s, c]] =
            Complex64::new(cols[4].parse()?, cols[5].parse()?);
    }
    Ok(values)
}

pub fn save_trace(path: &Path, trace: &[IterationRecord]) -> Result<()> {
    let mut out = String::from("iter,gamma,J\n");
    for r in trace {
        out.push_str(&format!("{},{:.17e},{:.17e}\n", r.iter, r.gamma, r.j));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub max_c: f64,
    pub isovalue: f64,
    pub found: bool,
    pub centroid: Option<[f64; 3]>,
    pub bbox: Option<([f64; 3], [f64; 3])>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub input_hash: String,
    pub output: String,
    pub wall_seconds: f64,
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let text = serde_json::to_string_pretty(entries)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Hex SHA-256 over the concatenated bytes of the given files.
pub fn hash_files(paths: &[&Path]) -> Result<String> {
    let mut hasher = Sha256::new();
    for p in paths {
        let bytes =
            std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}
