//! Domain geometry, pipeline parameters, and the `key = value` config format.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Speed of light under the 10 cm scaling, in cm/s. A frequency in Hz maps to
/// the dimensionless wavenumber k = 2 pi f / C_SCALED.
pub const C_SCALED: f64 = 2_997_924_580.0;

/// Dimensionless wavenumber for a frequency in Hz.
pub fn wavenumber_from_frequency(f_hz: f64) -> Result<f64> {
    if !(f_hz > 0.0) {
        return Err(Error::Domain(format!(
            "frequency must be positive, got {f_hz}"
        )));
    }
    Ok(2.0 * std::f64::consts::PI * f_hz / C_SCALED)
}

/// Frequency in Hz implied by a dimensionless wavenumber.
pub fn frequency_from_wavenumber(k: f64) -> f64 {
    k * C_SCALED / (2.0 * std::f64::consts::PI)
}

/// Geometry and discretization parameters shared by all pipeline stages.
///
/// All lengths are dimensionless (10 cm = 1 unit). The domain of interest is
/// the prism [-R,R] x [-R,R] x [-b,b]; sources sit on the line segment
/// {(alpha, 0, -d) : a1 <= alpha <= a2}; far-field data live on z = -D.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub r: f64,
    pub b: f64,
    pub d: f64,
    pub a1: f64,
    pub a2: f64,
    pub big_d: f64,
    pub theta: f64,
    pub k: f64,
    pub lambda: f64,
    pub n_basis: usize,
    pub n_src: usize,
    pub h: f64,
    pub h_z: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig {
            r: 5.0,
            b: 2.0,
            d: 9.0,
            a1: 0.1,
            a2: 0.6,
            big_d: 14.0,
            theta: 4.0,
            k: 6.62,
            lambda: 1.1,
            n_basis: 4,
            n_src: 10,
            h: 0.5,
            h_z: 0.2,
        }
    }
}

impl DomainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 10] = [
            (self.r > 0.0, "R must be positive"),
            (self.b > 0.0, "b must be positive"),
            (self.d > self.b, "d must exceed b"),
            (self.big_d > self.b, "D must exceed b"),
            (self.theta > self.b, "theta must exceed b"),
            (self.a1 < self.a2, "a1 must be less than a2"),
            (self.k > 0.0, "k must be positive"),
            (self.lambda >= 1.0, "lambda must be at least 1"),
            (self.n_basis >= 1 && self.n_basis <= 12, "N must be in 1..=12"),
            (self.n_src >= self.n_basis, "n_src must be at least N"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Domain(msg.to_string()));
            }
        }
        if !(self.h > 0.0 && self.h_z > 0.0) {
            return Err(Error::Domain("grid steps must be positive".to_string()));
        }
        Ok(())
    }

    /// Source abscissas: Gauss-Legendre nodes of [a1, a2].
    pub fn source_positions(&self) -> Vec<f64> {
        crate::basis::gauss_legendre(self.n_src, self.a1, self.a2)
            .into_iter()
            .map(|(x, _)| x)
            .collect()
    }
}

/// A scatterer placed in the simulation medium.
#[derive(Debug, Clone, PartialEq)]
pub enum Inclusion {
    /// Axis-aligned box: center, full side lengths, dielectric constant.
    Box {
        center: [f64; 3],
        size: [f64; 3],
        contrast: f64,
    },
    /// Sphere: center, radius, dielectric constant.
    Sphere {
        center: [f64; 3],
        radius: f64,
        contrast: f64,
    },
}

/// Everything a full pipeline run needs, with paper-default values.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub domain: DomainConfig,
    /// Simulation grid cells per axis for the forward solver.
    pub sim_n: usize,
    /// Relative additive noise level applied to synthetic measurements.
    pub noise: f64,
    /// Master seed; all randomness in a run derives from it.
    pub seed: u64,
    /// Measurement lattice points per axis and its step.
    pub meas_n: usize,
    pub meas_step: f64,
    /// Spectral lattice for data propagation: mode step and count per axis.
    pub omega_rho: f64,
    pub n_modes: usize,
    /// Preprocessing: truncation number and Gaussian width in lattice steps.
    pub kappa1: f64,
    pub sigma: f64,
    /// Quadrature points for basis construction integrals.
    pub quad_points: usize,
    /// Gradient descent: initial step, iteration cap.
    pub gamma0: f64,
    pub max_iters: usize,
    /// Restrict updates to the search subdomain -b <= z <= -b + 2.
    pub restrict_omega1: bool,
    /// Neumann data enforcement at the first interior layer: 1 or 2.
    pub neumann_order: usize,
    pub inclusions: Vec<Inclusion>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            domain: DomainConfig::default(),
            sim_n: 21,
            noise: 0.0,
            seed: 0,
            meas_n: 51,
            meas_step: 0.2,
            omega_rho: 1.0 / 50.0,
            n_modes: 51,
            kappa1: 0.4,
            sigma: 1.0,
            quad_points: 64,
            gamma0: 0.1,
            max_iters: 10_000,
            restrict_omega1: true,
            neumann_order: 1,
            inclusions: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if !(self.kappa1 > 0.0 && self.kappa1 < 1.0) {
            return Err(Error::Domain("kappa1 must be in (0, 1)".to_string()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Domain("sigma must be positive".to_string()));
        }
        if self.quad_points < 8 * self.domain.n_basis {
            return Err(Error::Domain(
                "quad_points must be at least 8 N".to_string(),
            ));
        }
        if self.meas_n < 2 || self.n_modes < 1 || self.sim_n < 2 {
            return Err(Error::Domain("lattice sizes too small".to_string()));
        }
        if self.neumann_order != 1 && self.neumann_order != 2 {
            return Err(Error::Domain("neumann_order must be 1 or 2".to_string()));
        }
        Ok(())
    }

    /// Parse the `key = value` config format. Unknown keys are rejected;
    /// `inclusion` may repeat. Lines starting with `#` are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    /// Apply a single `key = value` override (also used for CLI flags).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num(value: &str) -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::Domain(format!("not a number: `{value}`")))
        }
        fn int(value: &str) -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|_| Error::Domain(format!("not an integer: `{value}`")))
        }
        match key {
            "R" => self.domain.r = num(value)?,
            "b" => self.domain.b = num(value)?,
            "d" => self.domain.d = num(value)?,
            "a1" => self.domain.a1 = num(value)?,
            "a2" => self.domain.a2 = num(value)?,
            "D" => self.domain.big_d = num(value)?,
            "theta" => self.domain.theta = num(value)?,
            "k" => self.domain.k = num(value)?,
            "frequency" => self.domain.k = wavenumber_from_frequency(num(value)?)?,
            "lambda" => self.domain.lambda = num(value)?,
            "N" => self.domain.n_basis = int(value)?,
            "n_src" => self.domain.n_src = int(value)?,
            "h" => self.domain.h = num(value)?,
            "h_z" => self.domain.h_z = num(value)?,
            "sim_n" => self.sim_n = int(value)?,
            "noise" => self.noise = num(value)?,
            "seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|_| Error::Domain(format!("not an integer: `{value}`")))?
            }
            "meas_n" => self.meas_n = int(value)?,
            "meas_step" => self.meas_step = num(value)?,
            "omega_rho" => self.omega_rho = num(value)?,
            "n_modes" => self.n_modes = int(value)?,
            "kappa1" => self.kappa1 = num(value)?,
            "sigma" => self.sigma = num(value)?,
            "quad_points" => self.quad_points = int(value)?,
            "gamma0" => self.gamma0 = num(value)?,
            "max_iters" => self.max_iters = int(value)?,
            "restrict_omega1" => {
                self.restrict_omega1 = value
                    .parse::<bool>()
                    .map_err(|_| Error::Domain(format!("not a boolean: `{value}`")))?
            }
            "neumann_order" => self.neumann_order = int(value)?,
            "inclusion" => self.inclusions.push(parse_inclusion(value)?),
            other => {
                return Err(Error::Domain(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    /// Human-readable dump of every resolved parameter.
    pub fn describe(&self) -> String {
        let d = &self.domain;
        let mut s = String::new();
        let _ = writeln!(s, "R               = {}", d.r);
        let _ = writeln!(s, "b               = {}", d.b);
        let _ = writeln!(s, "d               = {}", d.d);
        let _ = writeln!(s, "a1              = {}", d.a1);
        let _ = writeln!(s, "a2              = {}", d.a2);
        let _ = writeln!(s, "D               = {}", d.big_d);
        let _ = writeln!(s, "theta           = {}", d.theta);
        let _ = writeln!(
            s,
            "k               = {} (frequency {:.3} GHz)",
            d.k,
            frequency_from_wavenumber(d.k) / 1e9
        );
        let _ = writeln!(s, "lambda          = {}", d.lambda);
        let _ = writeln!(s, "N               = {}", d.n_basis);
        let _ = writeln!(s, "n_src           = {}", d.n_src);
        let _ = writeln!(s, "h               = {}", d.h);
        let _ = writeln!(s, "h_z             = {}", d.h_z);
        let _ = writeln!(s, "sim_n           = {}", self.sim_n);
        let _ = writeln!(s, "noise           = {}", self.noise);
        let _ = writeln!(s, "seed            = {}", self.seed);
        let _ = writeln!(s, "meas_n          = {}", self.meas_n);
        let _ = writeln!(s, "meas_step       = {}", self.meas_step);
        let _ = writeln!(s, "omega_rho       = {}", self.omega_rho);
        let _ = writeln!(s, "n_modes         = {}", self.n_modes);
        let _ = writeln!(s, "kappa1          = {}", self.kappa1);
        let _ = writeln!(s, "sigma           = {}", self.sigma);
        let _ = writeln!(s, "quad_points     = {}", self.quad_points);
        let _ = writeln!(s, "gamma0          = {}", self.gamma0);
        let _ = writeln!(s, "max_iters       = {}", self.max_iters);
        let _ = writeln!(s, "restrict_omega1 = {}", self.restrict_omega1);
        let _ = writeln!(s, "neumann_order   = {}", self.neumann_order);
        for inc in &self.inclusions {
            match inc {
                Inclusion::Box {
                    center,
                    size,
                    contrast,
                } => {
                    let _ = writeln!(
                        s,
                        "inclusion       = box {} {} {} {} {} {} {}",
                        center[0], center[1], center[2], size[0], size[1], size[2], contrast
                    );
                }
                Inclusion::Sphere {
                    center,
                    radius,
                    contrast,
                } => {
                    let _ = writeln!(
                        s,
                        "inclusion       = sphere {} {} {} {} {}",
                        center[0], center[1], center[2], radius, contrast
                    );
                }
            }
        }
        s
    }
}

fn parse_inclusion(value: &str) -> Result<Inclusion> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    let nums = |slice: &[&str]| -> Result<Vec<f64>> {
        slice
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Domain(format!("not a number: `{t}`")))
            })
            .collect()
    };
    match parts.first().copied() {
        Some("box") if parts.len() == 8 => {
            let v = nums(&parts[1..])?;
            if v[6] < 1.0 {
                return Err(Error::Domain("contrast must be at least 1".to_string()));
            }
            Ok(Inclusion::Box {
                center: [v[0], v[1], v[2]],
                size: [v[3], v[4], v[5]],
                contrast: v[6],
            })
        }
        Some("sphere") if parts.len() == 6 => {
            let v = nums(&parts[1..])?;
            if v[4] < 1.0 {
                return Err(Error::Domain("contrast must be at least 1".to_string()));
            }
            Ok(Inclusion::Sphere {
                center: [v[0], v[1], v[2]],
                radius: v[3],
                contrast: v[4],
            })
        }
        _ => Err(Error::Domain(format!(
            "inclusion must be `box cx cy cz sx sy sz c` or `sphere cx cy cz r c`, got `{value}`"
        ))),
    }
}
