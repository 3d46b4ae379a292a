//! `iot`: experiment harness for inverse optimal transport with bilinear costs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use iot_core::artifacts::{base_tolerances, with_extra, write_csv_artifact, write_json_artifact, Header};
use iot_core::experiments::{
    bias_curve, certify, curvature, fig_jeps_gaussian, fig_l0_diagonal, ot_map_arrows, stat_rate, ExperimentConfig,
};
use iot_core::Error;

#[derive(Parser, Debug)]
#[command(name = "iot", version, about = "Inverse optimal transport experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file with one table per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace every seed in the configuration by this one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Gap loss on the diagonal diag(u, 1-u) for the Gaussian pairs.
    FigL0Diagonal,
    /// Closed-form J_eps heatmap for Gaussian marginals.
    FigJepsGaussian,
    /// Bias of the regularised minimiser as eps decreases.
    BiasCurve,
    /// Estimator error against sample size.
    StatRate,
    /// Barycentric transport maps for A = diag(u, 1-u).
    OtMapArrows,
    /// Degeneracy and spanning certificates.
    Certify,
    /// Grid curvature form and its restricted minimum.
    Curvature,
}

enum Outcome {
    Done,
    NotConverged(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_non_convergence() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    let mut cfg = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.override_seed(seed);
    }
    if let Some(threads) = cli.common.threads {
        if threads == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let out = &cli.common.out;
    std::fs::create_dir_all(out)?;
    match cli.command {
        Command::FigL0Diagonal => run_l0(&cfg, out),
        Command::FigJepsGaussian => run_jeps(&cfg, out),
        Command::BiasCurve => run_bias(&cfg, out),
        Command::StatRate => run_stat(&cfg, out),
        Command::OtMapArrows => run_arrows(&cfg, out),
        Command::Certify => run_certify(&cfg, out),
        Command::Curvature => run_curvature(&cfg, out),
    }
}

fn report(path: &Path) {
    eprintln!("wrote {}", path.display());
}

fn run_l0(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Error> {
    let c = &cfg.fig_l0_diagonal;
    let rows = fig_l0_diagonal(c)?;
    let header = Header::new(
        "fig-l0-diagonal",
        &json!({ "fig_l0_diagonal": c, "u_grid_resolved": c.resolved_u_grid() }),
        c.seeds.clone(),
        base_tolerances(),
    )?;
    let path = out.join("fig_l0_diagonal.csv");
    write_csv_artifact(&path, &header, &rows)?;
    report(&path);
    Ok(Outcome::Done)
}

fn run_jeps(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Error> {
    let c = &cfg.fig_jeps_gaussian;
    let res = fig_jeps_gaussian(c)?;
    let header = Header::new("fig-jeps-gaussian", c, Vec::new(), base_tolerances())?;
    let heat = out.join("fig_jeps_gaussian.csv");
    write_csv_artifact(&heat, &header, &res.heatmap)?;
    report(&heat);
    let arg = out.join("fig_jeps_gaussian_argmin.csv");
    write_csv_artifact(&arg, &header, &res.argmin)?;
    report(&arg);
    Ok(Outcome::Done)
}

fn estimator_tolerances(e: &iot_core::estimator::EstimatorConfig) -> serde_json::Value {
    with_extra(
        base_tolerances(),
        json!({ "estimator_tol": e.tol, "estimator_max_iter": e.max_iter, "estimator_sinkhorn": e.sinkhorn }),
    )
}

fn run_bias(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Error> {
    let c = &cfg.bias_curve;
    let (rows, summary) = bias_curve(c)?;
    let header = Header::new("bias-curve", c, vec![c.seed], estimator_tolerances(&c.estimator))?;
    let path = out.join("bias_curve.csv");
    write_csv_artifact(&path, &header, &rows)?;
    report(&path);
    let spath = out.join("bias_curve_summary.json");
    write_json_artifact(&spath, &header, &summary)?;
    report(&spath);
    if rows.iter().any(|r| r.converged == Some(false)) {
        return Ok(Outcome::NotConverged("an estimator run hit max_iter".into()));
    }
    Ok(Outcome::Done)
}

fn run_stat(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Error> {
    let c = &cfg.stat_rate;
    let res = stat_rate(c)?;
    let mut seeds = c.seeds.clone();
    seeds.push(c.reference_seed);
    let header = Header::new("stat-rate", c, seeds, estimator_tolerances(&c.estimator))?;
    let path = out.join("stat_rate.csv");
    write_csv_artifact(&path, &header, &res.rows)?;
    report(&path);
    let spath = out.join("stat_rate_summary.csv");
    write_csv_artifact(&spath, &header, &res.summary)?;
    report(&spath);
    if !res.reference_converged || res.rows.iter().any(|r| !r.converged) {
        return Ok(Outcome::NotConverged("an estimator run hit max_iter".into()));
    }
    Ok(Outcome::Done)
}

fn run_arrows(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Error> {
    let c = &cfg.ot_map_arrows;
    let res = ot_map_arrows(c)?;
    let header = Header::new("ot-map-arrows", c, vec![c.seed], base_tolerances())?;
    let path = out.join("ot_map_arrows.csv");
    write_csv_artifact(&path, &header, &res.rows)?;
    report(&path);
    Ok(Outcome::Done)
}

fn run_certify(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Error> {
    let c = &cfg.certify;
    let res = certify(c)?;
    let header = Header::new("certify", c, vec![c.seed], base_tolerances())?;
    let path = out.join("certify.json");
    write_json_artifact(&path, &header, &res)?;
    report(&path);
    Ok(Outcome::Done)
}

fn run_curvature(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, Error> {
    let c = &cfg.curvature;
    let res = curvature(c)?;
    let header = Header::new("curvature", c, Vec::new(), base_tolerances())?;
    let path = out.join("curvature.json");
    write_json_artifact(&path, &header, &res)?;
    report(&path);
    let qpath = out.join("curvature_q.csv");
    let mut buf = Vec::new();
    res.write_q_csv(&mut buf)?;
    std::fs::write(
        &qpath,
        [format!("# {}\n", serde_json::to_string(&header)?).into_bytes(), buf].concat(),
    )?;
    report(&qpath);
    Ok(Outcome::Done)
}
