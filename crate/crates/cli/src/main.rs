//! `dielscan`: stage-by-stage pipeline driver for dielectric reconstruction
//! from synthetic backscatter data. Each subcommand reads its upstream
//! artifacts from the output directory and writes its own, so stages can be
//! rerun individually; `run` chains them and records a manifest.

mod artifacts;

use anyhow::{anyhow, bail, Context, Result};
use artifacts::*;
use clap::{Parser, Subcommand, ValueEnum};
use dielscan_core::basis::{build_basis, gauss_legendre};
use dielscan_core::inversion::{
    build_starting_point, evaluate_j, gradient_j, minimize,
};
use dielscan_core::propagation::{
    build_cauchy_data, near_field_z_derivative, propagate_to_near_field, SpectralGrid,
    TargetLattice,
};
use dielscan_core::reconstruct::{extract_inclusion, finalize_field, recover_dielectric};
use dielscan_core::verify::{carleman_1d_ratio, carleman_test_function, convexity_trial};
use dielscan_core::{
    BasisSet, CauchyData, Cwf, Error as CoreError, Grid3D, MeasurementSet, PipelineConfig,
    SourceGeometryTensors, StateVector,
};
use ndarray::{Array3, Array4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "dielscan", version, about = "Dielectric reconstruction pipeline")]
struct Cli {
    /// Config file in `key = value` format; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for stage artifacts.
    #[arg(long, default_value = "out", global = true)]
    out_dir: PathBuf,

    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the truncation number kappa1.
    #[arg(long, global = true)]
    kappa1: Option<f64>,

    /// Override the Carleman parameter lambda.
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Override the source count.
    #[arg(long, global = true)]
    nsrc: Option<usize>,

    /// Override the basis size N.
    #[arg(long, global = true)]
    nbasis: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward problem and write the measurement set.
    Simulate,
    /// Propagate measurements to z = -b and assemble Cauchy data.
    Propagate,
    /// Truncate and smooth the near-field trace, then rebuild Cauchy data.
    Preprocess,
    /// Minimize the weighted functional over the Cauchy data.
    Invert,
    /// Recover the dielectric field from the minimizer and export VTK.
    Reconstruct,
    /// Self-checks with a text report; exit code 1 on failure.
    Verify {
        #[arg(value_enum)]
        mode: VerifyMode,
    },
    /// Print every resolved config parameter.
    DescribeConfig,
    /// Run a sequence of stages and record the artifact manifest.
    Run {
        /// Comma-separated stages, in pipeline order.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "simulate,propagate,preprocess,invert,reconstruct"
        )]
        stages: Vec<Stage>,
    },
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum VerifyMode {
    Basis,
    Carleman,
    Convexity,
    Gradient,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Stage {
    Simulate,
    Propagate,
    Preprocess,
    Invert,
    Reconstruct,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Propagate => "propagate",
            Stage::Preprocess => "preprocess",
            Stage::Invert => "invert",
            Stage::Reconstruct => "reconstruct",
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply("seed", &seed.to_string())?;
    }
    if let Some(v) = cli.kappa1 {
        cfg.apply("kappa1", &v.to_string())?;
    }
    if let Some(v) = cli.lambda {
        cfg.apply("lambda", &v.to_string())?;
    }
    if let Some(v) = cli.nsrc {
        cfg.apply("n_src", &v.to_string())?;
    }
    if let Some(v) = cli.nbasis {
        cfg.apply("N", &v.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let cfg = resolve_config(cli)?;
    let out = &cli.out_dir;
    match &cli.command {
        Command::DescribeConfig => {
            print!("{}", cfg.describe());
            Ok(0)
        }
        Command::Simulate => {
            stage_simulate(&cfg, out)?;
            Ok(0)
        }
        Command::Propagate => {
            stage_propagate(&cfg, out)?;
            Ok(0)
        }
        Command::Preprocess => {
            stage_preprocess(&cfg, out)?;
            Ok(0)
        }
        Command::Invert => {
            stage_invert(&cfg, out)?;
            Ok(0)
        }
        Command::Reconstruct => {
            stage_reconstruct(&cfg, out)?;
            Ok(0)
        }
        Command::Verify { mode } => {
            let ok = match mode {
                VerifyMode::Basis => verify_basis(&cfg)?,
                VerifyMode::Carleman => verify_carleman(&cfg)?,
                VerifyMode::Convexity => verify_convexity(&cfg)?,
                VerifyMode::Gradient => verify_gradient(&cfg)?,
            };
            Ok(if ok { 0 } else { 1 })
        }
        Command::Run { stages } => {
            run_pipeline(&cfg, out, stages)?;
            Ok(0)
        }
    }
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
}

fn require(path: &Path, what: &str, stage: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {what}; run {stage}");
    }
    Ok(())
}

fn build_cfg_basis(cfg: &PipelineConfig) -> Result<BasisSet> {
    Ok(build_basis(
        cfg.domain.a1,
        cfg.domain.a2,
        cfg.domain.n_basis,
        cfg.quad_points,
    )?)
}

fn gamma_lattice(grid: &Grid3D) -> TargetLattice {
    TargetLattice {
        origin: grid.origin[0],
        step: grid.step[0],
        n: grid.nx,
    }
}

fn stage_simulate(cfg: &PipelineConfig, out: &Path) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let meas = dielscan_core::forward::simulate(cfg)?;
    let path = out.join(MEAS_FILE);
    meas.save(&path)?;
    println!(
        "simulate: {} sources on a {1} x {1} lattice -> {2}",
        meas.sources.len(),
        meas.n,
        path.display()
    );
    Ok(path)
}

fn stage_propagate(cfg: &PipelineConfig, out: &Path) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let meas_path = out.join(MEAS_FILE);
    require(&meas_path, "MeasurementSet", "simulate")?;
    let meas = MeasurementSet::load(&meas_path, -cfg.domain.big_d)?;

    let spec = SpectralGrid {
        omega_rho: cfg.omega_rho,
        n_modes: cfg.n_modes,
    };
    let grid = Grid3D::from_domain(&cfg.domain)?;
    let target = gamma_lattice(&grid);
    let k = cfg.domain.k;
    let b = cfg.domain.b;

    let u = propagate_to_near_field(&meas, k, b, &spec, &target)?;
    let du = near_field_z_derivative(&meas, k, b, &spec, &target)?;
    let nf = NearField {
        origin: target.origin,
        step: target.step,
        n: target.n,
        sources: meas.sources.clone(),
        u,
        du,
    };
    save_near_field(&out.join(NEAR_FIELD_FILE), &nf)?;

    let basis = build_cfg_basis(cfg)?;
    let rule = gauss_legendre(cfg.domain.n_src, cfg.domain.a1, cfg.domain.a2);
    let cauchy = build_cauchy_data(&nf.u, &nf.du, &rule, &target, k, cfg.domain.d, b, &basis)?;
    let path = out.join(CAUCHY_FILE);
    cauchy.save(&path)?;
    println!(
        "propagate: near field on {0} x {0} Gamma lattice -> {1}",
        target.n,
        path.display()
    );
    Ok(path)
}

fn stage_preprocess(cfg: &PipelineConfig, out: &Path) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let nf_path = out.join(NEAR_FIELD_FILE);
    require(&nf_path, "near-field trace", "propagate")?;
    let nf = load_near_field(&nf_path)?;

    let (ut, dut) =
        dielscan_core::preprocess::preprocess_near_field(&nf.u, &nf.du, cfg.kappa1, cfg.sigma)?;
    let target = TargetLattice {
        origin: nf.origin,
        step: nf.step,
        n: nf.n,
    };
    let basis = build_cfg_basis(cfg)?;
    let rule = gauss_legendre(cfg.domain.n_src, cfg.domain.a1, cfg.domain.a2);
    if rule.len() != nf.sources.len() {
        bail!(
            "near-field trace has {} sources but the config requests {}",
            nf.sources.len(),
            rule.len()
        );
    }
    let cauchy = build_cauchy_data(
        &ut,
        &dut,
        &rule,
        &target,
        cfg.domain.k,
        cfg.domain.d,
        cfg.domain.b,
        &basis,
    )?;
    let path = out.join(CAUCHY_FILE);
    cauchy.save(&path)?;
    println!(
        "preprocess: kappa1 = {}, sigma = {} -> {}",
        cfg.kappa1,
        cfg.sigma,
        path.display()
    );
    Ok(path)
}

fn stage_invert(cfg: &PipelineConfig, out: &Path) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let cauchy_path = out.join(CAUCHY_FILE);
    require(&cauchy_path, "CauchyData", "propagate")?;
    let cauchy = CauchyData::load(&cauchy_path)?;

    let grid = Grid3D::from_domain(&cfg.domain)?;
    if cauchy.n != grid.nx {
        bail!(
            "Cauchy lattice is {0} x {0} but the inversion grid face is {1} x {1}; rerun propagate",
            cauchy.n,
            grid.nx
        );
    }
    let basis = build_cfg_basis(cfg)?;
    if cauchy.n_basis() != basis.n {
        bail!(
            "Cauchy data carries {} Fourier components but N = {}; rerun propagate",
            cauchy.n_basis(),
            basis.n
        );
    }
    let tensors = SourceGeometryTensors::build(&grid, &basis, cfg.domain.k, cfg.domain.d)?;
    let cwf = Cwf::new(cfg.domain.lambda, cfg.domain.theta, cfg.domain.b)?;
    let v0 = build_starting_point(&cauchy, &grid, cfg.neumann_order, cfg.restrict_omega1)?;

    match minimize(v0, &cwf, &basis, &tensors, cfg.gamma0, cfg.max_iters) {
        Ok((state, trace)) => {
            save_trace(&out.join(TRACE_FILE), &trace)?;
            let path = out.join(MINIMIZER_FILE);
            save_minimizer(&path, &state)?;
            let last = trace.last().expect("trace is never empty");
            println!(
                "invert: {} iterations, J {:.6e} -> {:.6e}, {}",
                last.iter,
                trace[0].j,
                last.j,
                path.display()
            );
            Ok(path)
        }
        Err(CoreError::NonConvergence {
            iterations,
            final_j,
            trace,
        }) => {
            let records: Vec<_> = trace
                .iter()
                .map(|&(iter, gamma, j)| dielscan_core::inversion::IterationRecord {
                    iter,
                    gamma,
                    j,
                })
                .collect();
            save_trace(&out.join(TRACE_FILE), &records)?;
            bail!(
                "minimization did not converge within {iterations} iterations \
                 (final J = {final_j:.6e}); trace saved to {}",
                out.join(TRACE_FILE).display()
            );
        }
        Err(e) => Err(e.into()),
    }
}

fn stage_reconstruct(cfg: &PipelineConfig, out: &Path) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let min_path = out.join(MINIMIZER_FILE);
    require(&min_path, "minimizer", "invert")?;
    let values = load_minimizer(&min_path)?;

    let grid = Grid3D::from_domain(&cfg.domain)?;
    let (nx, ny, nz, nc) = values.dim();
    if (nx, ny, nz) != (grid.nx, grid.ny, grid.nz) || nc != cfg.domain.n_basis {
        bail!(
            "minimizer shape ({nx}, {ny}, {nz}, {nc}) does not match the configured \
             grid ({}, {}, {}) with N = {}; rerun invert",
            grid.nx,
            grid.ny,
            grid.nz,
            cfg.domain.n_basis
        );
    }
    let basis = build_cfg_basis(cfg)?;
    let zeros = Array3::zeros((nc, nx, ny));
    let mut state = StateVector::new(
        grid.clone(),
        zeros.clone(),
        zeros,
        cfg.neumann_order,
        cfg.restrict_omega1,
    )?;
    state.values = values;

    let sources = cfg.domain.source_positions();
    let raw = recover_dielectric(&state, &basis, cfg.domain.k, cfg.domain.d, &sources)?;
    let c = finalize_field(&raw, cfg.sigma)?;
    let report = extract_inclusion(&c, dielscan_core::vtk::ISO_FRACTION)?;

    let field_path = out.join(FIELD_FILE);
    dielscan_core::vtk::export_scalar_field(&c, &field_path)?;
    let mask_f64 = report.mask.mapv(|m| if m { 1.0 } else { 0.0 });
    dielscan_core::vtk::write_blocks(&out.join(MASK_FILE), &grid, &[("mask", &mask_f64)])?;

    let summary = Summary {
        max_c: report.max_c,
        isovalue: report.isovalue,
        found: report.found,
        centroid: report.centroid,
        bbox: report.bbox,
    };
    std::fs::write(
        out.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary)?,
    )?;
    match report.centroid {
        Some(cen) => println!(
            "reconstruct: max c = {:.3}, centroid ({:.2}, {:.2}, {:.2}) -> {}",
            report.max_c,
            cen[0],
            cen[1],
            cen[2],
            field_path.display()
        ),
        None => println!(
            "reconstruct: max c = {:.3}, no inclusion above threshold -> {}",
            report.max_c,
            field_path.display()
        ),
    }
    Ok(field_path)
}

fn run_pipeline(cfg: &PipelineConfig, out: &Path, stages: &[Stage]) -> Result<()> {
    ensure_out_dir(out)?;
    if stages.is_empty() {
        bail!("no stages requested");
    }
    let manifest_path = out.join(MANIFEST_FILE);
    let mut manifest = load_manifest(&manifest_path)?;
    for &stage in stages {
        let inputs: Vec<PathBuf> = match stage {
            Stage::Simulate => Vec::new(),
            Stage::Propagate => vec![out.join(MEAS_FILE)],
            Stage::Preprocess => vec![out.join(NEAR_FIELD_FILE)],
            Stage::Invert => vec![out.join(CAUCHY_FILE)],
            Stage::Reconstruct => vec![out.join(MINIMIZER_FILE)],
        };
        let input_hash = if inputs.is_empty() {
            // The simulate stage's only input is the resolved configuration.
            hash_bytes(cfg.describe().as_bytes())
        } else {
            for p in &inputs {
                let (what, prev) = match stage {
                    Stage::Propagate => ("MeasurementSet", "simulate"),
                    Stage::Preprocess => ("near-field trace", "propagate"),
                    Stage::Invert => ("CauchyData", "propagate"),
                    Stage::Reconstruct => ("minimizer", "invert"),
                    Stage::Simulate => unreachable!(),
                };
                require(p, what, prev)?;
            }
            let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
            hash_files(&refs)?
        };
        let start = Instant::now();
        let output = match stage {
            Stage::Simulate => stage_simulate(cfg, out)?,
            Stage::Propagate => stage_propagate(cfg, out)?,
            Stage::Preprocess => stage_preprocess(cfg, out)?,
            Stage::Invert => stage_invert(cfg, out)?,
            Stage::Reconstruct => stage_reconstruct(cfg, out)?,
        };
        let entry = ManifestEntry {
            stage: stage.name().to_string(),
            input_hash,
            output: output
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .ok_or_else(|| anyhow!("stage output has no file name"))?,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(existing) = manifest.iter_mut().find(|e| e.stage == entry.stage) {
            *existing = entry;
        } else {
            manifest.push(entry);
        }
        save_manifest(&manifest_path, &manifest)?;
    }
    println!(
        "run: {} stages complete, manifest at {}",
        stages.len(),
        manifest_path.display()
    );
    Ok(())
}

fn verify_basis(cfg: &PipelineConfig) -> Result<bool> {
    let (a1, a2) = (cfg.domain.a1, cfg.domain.a2);
    let mut ok = true;
    println!("basis invariants on [{a1}, {a2}]");
    for n in [2usize, 4, 8] {
        let quad = cfg.quad_points.max(8 * n);
        let basis = build_basis(a1, a2, n, quad)?;
        let ortho = basis.orthonormality_defect();
        let tri = basis.triangular_defect();
        let det = (basis.s_determinant() - 1.0).abs();
        let pass = ortho <= 1e-8 && tri <= 1e-8 && det <= 1e-6;
        ok &= pass;
        println!(
            "  N = {n}: orthonormality {ortho:.2e}, triangular {tri:.2e}, |det S - 1| {det:.2e} [{}]",
            if pass { "ok" } else { "FAIL" }
        );
    }
    println!("basis: {}", if ok { "pass" } else { "fail" });
    Ok(ok)
}

fn verify_carleman(cfg: &PipelineConfig) -> Result<bool> {
    let b = cfg.domain.b;
    let theta = cfg.domain.theta;
    let lambdas = [1.0, 2.0, 4.0, 8.0];
    let functions = 100usize;
    let samples = 2001usize;
    let mut mins = Vec::new();
    println!("Carleman 1D estimate, {functions} functions, b = {b}, theta = {theta}");
    for &lambda in &lambdas {
        let mut min_ratio = f64::INFINITY;
        for f in 0..functions {
            let u = carleman_test_function(b, samples, cfg.seed.wrapping_add(f as u64));
            let r = carleman_1d_ratio(&u, b, theta, lambda)?;
            min_ratio = min_ratio.min(r);
        }
        println!("  lambda = {lambda}: min ratio {min_ratio:.4}");
        mins.push(min_ratio);
    }
    let mut ok = mins.iter().all(|&m| m >= 0.01);
    for w in mins.windows(2) {
        ok &= w[1] >= 0.5 * w[0];
    }
    println!("carleman: {}", if ok { "pass" } else { "fail" });
    Ok(ok)
}

fn verify_grid() -> Result<Grid3D> {
    Ok(Grid3D::new(1.0, 1.0, 1.0 / 3.0, 1.0 / 3.0)?)
}

fn random_cauchy(grid: &Grid3D, n_basis: usize, seed: u64, scale: f64) -> CauchyData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cauchy = CauchyData::zeros(grid.origin[0], grid.step[0], grid.nx, n_basis);
    for v in cauchy.psi0.iter_mut().chain(cauchy.psi1.iter_mut()) {
        *v = Complex64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale));
    }
    cauchy
}

fn verify_convexity(cfg: &PipelineConfig) -> Result<bool> {
    let grid = verify_grid()?;
    let basis = build_basis(cfg.domain.a1, cfg.domain.a2, 2, cfg.quad_points)?;
    let tensors = SourceGeometryTensors::build(&grid, &basis, cfg.domain.k, cfg.domain.d)?;
    let cauchy = random_cauchy(&grid, basis.n, cfg.seed, 0.1);
    let trials = 200usize;
    let lambdas = [1.0, 2.0, 5.0, 10.0];
    let mut rates = Vec::new();
    println!(
        "Bregman-gap convexity trend, {trials} trials on a {0} x {0} x {1} grid, N = {2}",
        grid.nx, grid.nz, basis.n
    );
    for &lambda in &lambdas {
        let cwf = Cwf::new(lambda, cfg.domain.theta, cfg.domain.b)?;
        let rate = convexity_trial(&cauchy, &grid, &basis, &tensors, &cwf, trials, cfg.seed)?;
        println!("  lambda = {lambda}: violation rate {:.2}%", 100.0 * rate);
        rates.push(rate);
    }
    let mut ok = *rates.last().expect("nonempty") <= 0.01;
    for w in rates.windows(2) {
        ok &= w[1] <= w[0] + 1e-12;
    }
    println!("convexity: {}", if ok { "pass" } else { "fail" });
    Ok(ok)
}

fn verify_gradient(cfg: &PipelineConfig) -> Result<bool> {
    let grid = verify_grid()?;
    let basis = build_basis(cfg.domain.a1, cfg.domain.a2, 2, cfg.quad_points)?;
    let tensors = SourceGeometryTensors::build(&grid, &basis, cfg.domain.k, cfg.domain.d)?;
    let cwf = Cwf::new(cfg.domain.lambda, cfg.domain.theta, cfg.domain.b)?;
    let cauchy = random_cauchy(&grid, basis.n, cfg.seed, 0.1);
    let state = build_starting_point(&cauchy, &grid, 1, true)?;
    let g = gradient_j(&state, &cwf, &basis, &tensors);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let pairs = 30usize;
    for _ in 0..pairs {
        let mut dir = Array4::<Complex64>::zeros(state.values.dim());
        for p in 0..grid.nx {
            for q in 0..grid.ny {
                for s in 0..grid.nz {
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
        if len == 0.0 {
            continue;
        }
        dir.mapv_inplace(|v| v / len);
        let analytic: f64 = g
            .iter()
            .zip(dir.iter())
            .map(|(gv, dv)| (gv.conj() * dv).re)
            .sum();
        let j_at = |t: f64| {
            let mut moved = state.clone();
            ndarray::Zip::from(&mut moved.values)
                .and(&dir)
                .for_each(|v, d| *v += t * d);
            moved.apply_constraints();
            evaluate_j(&moved, &cwf, &basis, &tensors)
        };
        let fd = (j_at(eps) - j_at(-eps)) / (2.0 * eps);
        let denom = analytic.abs().max(fd.abs()).max(1e-300);
        worst = worst.max((analytic - fd).abs() / denom);
    }
    let ok = worst <= 1e-5;
    println!(
        "gradient check, {pairs} random directions: worst relative error {worst:.2e}"
    );
    println!("gradient: {}", if ok { "pass" } else { "fail" });
    Ok(ok)
}
