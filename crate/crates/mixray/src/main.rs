//! mixray: batch workbench for mixing ray transforms on conformal disks.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use mixray::config::{ExperimentConfig, TransformKind};
use mixray::fields::write_grid_csv;
use mixray::geometry::{boundary_grid, ray_measure_weights};
use mixray::grid::GridModel;
use mixray::inversion::{
    assemble_forward, reconstruct_oneform_combined, solenoidal_decompose, solve_least_squares,
};
use mixray::reduction::{apply_mixing_coeffs, build_pair, kernel_split, transfer_normal};
use mixray::suites::run_suite;
use mixray::tensor::{apply_mixing, Mixing, TensorField};
use mixray::transforms::{geodesic_xray, mixed_xray, mixing_xray, transverse_xray, Sinogram};
use mixray::{MixrayError, Result};

#[derive(Parser)]
#[command(name = "mixray", version, about = "Mixing ray transforms of tensor fields on conformal disks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap (falls back to MIXRAY_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed override for all randomized suites.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute a sinogram of the configured transform.
    Sinogram,
    /// Reconstruct the configured field from synthetic ray data.
    Reconstruct,
    /// Run the invariant suite and write a JSON report.
    Verify,
    /// Demonstrate the algebraic reduction against the identity mixing.
    Reduce,
    /// Solenoidal-potential decomposition of a one-form.
    Decompose,
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("MIXRAY_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        // may fail if a pool already exists; that is fine for reruns in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    std::process::exit(match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                MixrayError::Config(_) => 2,
                _ => 3,
            }
        }
    });
}

fn run(cli: &Cli) -> Result<i32> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| MixrayError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    match cli.cmd {
        Cmd::Sinogram => cmd_sinogram(&cfg, &out_dir),
        Cmd::Reconstruct => cmd_reconstruct(&cfg, &out_dir),
        Cmd::Verify => cmd_verify(&cfg, &out_dir),
        Cmd::Reduce => cmd_reduce(&cfg, &out_dir),
        Cmd::Decompose => cmd_decompose(&cfg, &out_dir),
    }
}

fn compute_sinogram(cfg: &ExperimentConfig, h: f64) -> Result<Sinogram> {
    let g = cfg.metric()?;
    let f = cfg.field()?;
    let rays = boundary_grid(cfg.rays.n_beta, cfg.rays.n_alpha);
    match cfg.transform.kind {
        TransformKind::Geodesic => geodesic_xray(&g, &f, &rays, h),
        TransformKind::Transverse => transverse_xray(&g, &f, &rays, h),
        TransformKind::Mixed => mixed_xray(
            &g,
            cfg.transform.k.unwrap_or(0),
            cfg.transform.l.unwrap_or(0),
            &f,
            &rays,
            h,
        ),
        TransformKind::Mixing => {
            let a = cfg.mixing(&g, f.rank)?;
            mixing_xray(&g, &a, &f, &rays, h)
        }
        TransformKind::Combined => Err(MixrayError::Config(
            "combined transform is reconstruction-only".into(),
        )),
    }
}

fn write_sinogram_csv(path: &Path, cfg: &ExperimentConfig, s: &Sinogram) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# metric,{}", s.meta.metric)?;
    writeln!(out, "# rank,{}", s.meta.rank)?;
    writeln!(out, "# mixing,{}", s.meta.mixing)?;
    writeln!(out, "# h,{:e}", s.meta.h)?;
    writeln!(out, "# n_beta,{},n_alpha,{}", cfg.rays.n_beta, cfg.rays.n_alpha)?;
    writeln!(out, "beta,alpha,tau,value")?;
    for (i, ray) in s.rays.iter().enumerate() {
        writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e}",
            ray.beta, ray.alpha, s.taus[i], s.values[i][0]
        )?;
    }
    Ok(())
}

fn write_sinogram_svg(path: &Path, cfg: &ExperimentConfig, s: &Sinogram) -> Result<()> {
    let (nb, na) = (cfg.rays.n_beta, cfg.rays.n_alpha);
    let vals = s.scalar_values();
    let vmax = vals.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{nb}\" height=\"{na}\" viewBox=\"0 0 {nb} {na}\">\n"
    ));
    for (i, v) in vals.iter().enumerate() {
        let (ib, ia) = (i / na, i % na);
        let t = 0.5 + 0.5 * v / vmax;
        let shade = (t.clamp(0.0, 1.0) * 255.0).round() as u8;
        svg.push_str(&format!(
            "<rect x=\"{ib}\" y=\"{ia}\" width=\"1\" height=\"1\" fill=\"rgb({shade},{shade},{shade})\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

fn cmd_sinogram(cfg: &ExperimentConfig, out_dir: &Path) -> Result<i32> {
    let s = compute_sinogram(cfg, cfg.rays.h)?;
    write_sinogram_csv(&out_dir.join("sinogram.csv"), cfg, &s)?;
    write_sinogram_svg(&out_dir.join("sinogram.svg"), cfg, &s)?;
    println!(
        "sinogram: {} rays, max |value| = {:.6e}",
        s.rays.len(),
        s.max_abs()
    );
    Ok(0)
}

#[derive(Serialize)]
struct VerifyReport {
    seed: u64,
    metric: String,
    checks: Vec<mixray::suites::CheckResult>,
    all_pass: bool,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| MixrayError::Contract(format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_verify(cfg: &ExperimentConfig, out_dir: &Path) -> Result<i32> {
    let checks = run_suite(cfg)?;
    let all_pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!(
            "{} {:<32} residual {:.3e} (tol {:.1e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.residual,
            c.tol
        );
    }
    let report = VerifyReport {
        seed: cfg.seed,
        metric: cfg.metric.kind.clone(),
        checks,
        all_pass,
    };
    write_json(&out_dir.join("verify_report.json"), &report)?;
    Ok(if all_pass { 0 } else { 1 })
}

#[derive(Serialize)]
struct ReconReport {
    relative_error: f64,
    iterations: usize,
    residual: f64,
    converged: bool,
    sigma_min: Option<f64>,
    sigma_max: Option<f64>,
}

fn relative_l2(grid: &GridModel, rank: usize, got: &[f64], truth: &TensorField) -> f64 {
    let t = grid.field_to_coeffs(truth);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..grid.dof_count(rank) {
        num += (got[i] - t[i]) * (got[i] - t[i]);
        den += t[i] * t[i];
    }
    (num / den.max(1e-300)).sqrt()
}

fn cmd_reconstruct(cfg: &ExperimentConfig, out_dir: &Path) -> Result<i32> {
    let g = cfg.metric()?;
    let truth = cfg.field()?;
    let grid = GridModel::new(cfg.grid.n, g.radius)?;
    let rays = boundary_grid(cfg.rays.n_beta, cfg.rays.n_alpha);
    let wts = ray_measure_weights(&rays, cfg.rays.n_beta, cfg.rays.n_alpha);
    // data always from the analytic field at half the assembly ray step
    let data_h = cfg.rays.h / 2.0;

    let (coeffs, report, op_for_probe) = match cfg.transform.kind {
        TransformKind::Combined => {
            if truth.rank != 1 {
                return Err(MixrayError::Config("combined reconstruction needs a one-form".into()));
            }
            let data_i = geodesic_xray(&g, &truth, &rays, data_h)?;
            let data_perp = transverse_xray(&g, &truth, &rays, data_h)?;
            let (_, rep) = reconstruct_oneform_combined(
                &g, &grid, &data_i, &data_perp, &wts, cfg.rays.h, cfg.grid.reg, cfg.grid.tol,
                cfg.grid.maxiter,
            )?;
            (rep.coeffs.clone(), rep, None)
        }
        _ => {
            let a = cfg.mixing(&g, truth.rank)?;
            let data = mixing_xray(&g, &a, &truth, &rays, data_h)?;
            let op = assemble_forward(&g, &a, &grid, &rays, &wts, cfg.rays.h)?;
            let rep = solve_least_squares(
                &op,
                &data.scalar_values(),
                cfg.grid.reg,
                cfg.grid.tol,
                cfg.grid.maxiter,
            )?;
            (rep.coeffs.clone(), rep, Some(op))
        }
    };
    if !report.converged {
        return Err(MixrayError::NonConvergence(format!(
            "least-squares solver stalled at relative residual {:.3e}",
            report.residual
        )));
    }

    let rel = relative_l2(&grid, truth.rank, &coeffs, &truth);
    let recon = grid.coeffs_to_field(truth.rank, &coeffs);
    if let Some(gt) = recon.rep_grid() {
        write_grid_csv(&out_dir.join("reconstruction.csv"), &gt)?;
    }
    // sigma diagnostics only at probe scale; the dense spectrum is cubic
    let (sigma_min, sigma_max) = match &op_for_probe {
        Some(op) if grid.n <= 40 => {
            let probe = mixray::reduction::stability_probe(op, None)?;
            (probe.sigma_min, Some(probe.sigma_max))
        }
        _ => (None, None),
    };
    let rr = ReconReport {
        relative_error: rel,
        iterations: report.iterations,
        residual: report.residual,
        converged: report.converged,
        sigma_min,
        sigma_max,
    };
    write_json(&out_dir.join("reconstruction_report.json"), &rr)?;
    println!("reconstruction: relative error {:.4e} in {} iterations", rel, report.iterations);
    Ok(0)
}

#[derive(Serialize)]
struct ReduceReport {
    mixing: String,
    normal_identity_residual: f64,
    split_reconstitution_residual: f64,
    transform_identity_residual: f64,
}

fn cmd_reduce(cfg: &ExperimentConfig, out_dir: &Path) -> Result<i32> {
    let g = cfg.metric()?;
    let f = cfg.field()?;
    let a = match cfg.transform.kind {
        TransformKind::Geodesic | TransformKind::Combined => {
            mixray::tensor::mixing_for_mixed(f.rank, 0, &g)?
        }
        _ => cfg.mixing(&g, f.rank)?,
    };
    let pair = build_pair(&a, &Mixing::identity(f.rank))?;
    let grid = GridModel::new(cfg.grid.n, g.radius)?;
    let rays = boundary_grid(cfg.rays.n_beta, cfg.rays.n_alpha);
    let wts = ray_measure_weights(&rays, cfg.rays.n_beta, cfg.rays.n_alpha);
    let op_a = assemble_forward(&g, &pair.a, &grid, &rays, &wts, cfg.rays.h)?;
    let op_id = assemble_forward(&g, &pair.a_tilde, &grid, &rays, &wts, cfg.rays.h)?;

    // normal-operator transfer against the directly assembled normal
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let u: Vec<f64> = (0..op_a.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let direct = op_a.normal_apply(&u);
    let transferred = transfer_normal(&pair, &g, &grid, |v| op_id.normal_apply(v), &u)?;
    let unorm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let normal_res = direct
        .iter()
        .zip(&transferred)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
        / unorm;

    // kernel split of the configured field, pushed through the transform
    let (hpart, w) = kernel_split(&pair, &f)?;
    let rec = hpart.add(&apply_mixing(&pair.d, &w)?);
    let s1 = mixing_xray(&g, &pair.a, &f, &rays, cfg.rays.h)?;
    let s2 = mixing_xray(&g, &pair.a, &rec, &rays, cfg.rays.h)?;
    let split_res = s1
        .scalar_values()
        .iter()
        .zip(s2.scalar_values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);

    // reduction identity on the discrete operator: F_A u = F_Ã(D⁻¹ u)
    let dinv_u = apply_mixing_coeffs(&pair.d_inv, &grid, &u);
    let lhs = op_a.apply(&u);
    let rhs = op_id.apply(&dinv_u);
    let tid = lhs
        .iter()
        .zip(&rhs)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
        / unorm;

    let report = ReduceReport {
        mixing: pair.a.describe(),
        normal_identity_residual: normal_res,
        split_reconstitution_residual: split_res,
        transform_identity_residual: tid,
    };
    write_json(&out_dir.join("reduce_report.json"), &report)?;
    println!(
        "reduce: normal identity residual {:.3e}, split residual {:.3e}",
        normal_res, split_res
    );
    Ok(if normal_res <= 1e-10 { 0 } else { 1 })
}

#[derive(Serialize)]
struct DecomposeLevel {
    n: usize,
    div_residual: f64,
    orthogonality: f64,
    iterations: usize,
}

#[derive(Serialize)]
struct DecomposeReport {
    levels: Vec<DecomposeLevel>,
}

fn cmd_decompose(cfg: &ExperimentConfig, out_dir: &Path) -> Result<i32> {
    let g = cfg.metric()?;
    let f = cfg.field()?;
    if f.rank != 1 {
        return Err(MixrayError::Config("decompose needs a one-form".into()));
    }
    // coarse-to-fine levels give the convergence-order plot data
    let mut levels = Vec::new();
    let ns = [(cfg.grid.n + 1) / 2, cfg.grid.n];
    let mut final_fields = None;
    for &n in &ns {
        let grid = GridModel::new(n.max(9), g.radius)?;
        let (fs, p, rep) = solenoidal_decompose(&g, &grid, &f)?;
        levels.push(DecomposeLevel {
            n: grid.n,
            div_residual: rep.div_residual,
            orthogonality: rep.orthogonality,
            iterations: rep.iterations,
        });
        final_fields = Some((fs, p, grid));
    }
    if let Some((fs, p, grid)) = final_fields {
        if let Some(gt) = fs.grid_sampled(grid.n, g.radius).rep_grid() {
            write_grid_csv(&out_dir.join("solenoidal.csv"), &gt)?;
        }
        if let Some(gt) = p.grid_sampled(grid.n, g.radius).rep_grid() {
            write_grid_csv(&out_dir.join("potential.csv"), &gt)?;
        }
    }
    let last = levels.last().map(|l| l.div_residual).unwrap_or(f64::NAN);
    write_json(&out_dir.join("decompose_report.json"), &DecomposeReport { levels })?;
    println!("decompose: divergence residual {:.3e}", last);
    Ok(0)
}
