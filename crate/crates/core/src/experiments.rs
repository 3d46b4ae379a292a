//! Experiment drivers behind the `iot` subcommands.
//!
//! Every driver takes a plain serde configuration, is deterministic given its
//! seeds, and returns rows ready for the artifact writers. Independent cells
//! run on the rayon pool and are collected in cell order.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{curvature_form, CurvatureReport, GridField};
use crate::error::{Error, Result};
use crate::estimator::{minimize, EstimatorConfig};
use crate::exact_ot::{cost_matrix, TransportSimplex};
use crate::gaussian::{closed_form_minimizers, j_eps_heatmap, EllipticalPair, GaussianClosedForm, HeatmapRow};
use crate::identifiability::{
    build_generic_perturbation, degeneracy_certificate, finite_diff_jacobians, spanning_check, DegeneracyCertificate,
    PerturbationReport, SpanningReport, RANK_TOL,
};
use crate::linalg::{loglog_slope, spd_sqrt, Mat, Vector};
use crate::losses::{CostParam, L0Evaluator};
use crate::measures::{
    mat_from_rows, paired_from_map, sample, DistributionSpec, PairedSample, PolynomialPotential, TransportMap,
};

/// Offset between a source seed and the seed of an independent target draw.
const TARGET_SEED_OFFSET: u64 = 0x9E37_79B9;

/// Observed couplings built from one standard Gaussian draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    /// `y = x`: the optimal map for `A = I` between equal Gaussians.
    GaussGauss,
    /// `y = x + delta grad Psi(x)` with `Psi = x^2 y + x y^2`.
    GaussPerturbed,
    /// `y` the radial monotone image of `x` in the annulus.
    GaussAnnulus,
}

impl PairKind {
    pub fn name(&self) -> &'static str {
        match self {
            PairKind::GaussGauss => "gauss-gauss",
            PairKind::GaussPerturbed => "gauss-perturbed",
            PairKind::GaussAnnulus => "gauss-annulus",
        }
    }

    pub fn map(&self, delta: f64, r_inner: f64, r_outer: f64) -> TransportMap {
        match self {
            PairKind::GaussGauss => TransportMap::Identity,
            PairKind::GaussPerturbed => TransportMap::PerturbedGradient {
                delta,
                potential: PolynomialPotential::x2y_plus_xy2(),
            },
            PairKind::GaussAnnulus => TransportMap::GaussianToAnnulus { r_inner, r_outer },
        }
    }
}

/// Paired sample of size `n` in dimension 2 for the given pair kind.
pub fn paired_sample(
    kind: PairKind,
    n: usize,
    seed: u64,
    delta: f64,
    r_inner: f64,
    r_outer: f64,
) -> Result<PairedSample> {
    let alpha = sample(&DistributionSpec::standard_gaussian(2), n, seed)?;
    paired_from_map(&alpha, &kind.map(delta, r_inner, r_outer))
}

fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}

fn diag2(u: f64) -> Mat {
    Mat::from_diagonal(&Vector::from_vec(vec![u, 1.0 - u]))
}

fn check_positive(v: f64, what: &str) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("{what} must be positive")));
    }
    Ok(())
}

fn check_nonempty<T>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Config(format!("{what} must not be empty")));
    }
    Ok(())
}

/// `{0} U 41 points on [0.025, 0.975] U {1} U {0.2, 0.5}`, sorted.
pub fn default_u_grid() -> Vec<f64> {
    let mut u = vec![0.0, 1.0, 0.2, 0.5];
    for k in 0..41 {
        u.push(0.025 + 0.95 * k as f64 / 40.0);
    }
    let mut u: Vec<f64> = u.into_iter().map(|v| (v * 1e12).round() / 1e12).collect();
    u.sort_by(f64::total_cmp);
    u.dedup();
    u
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

// ---------------------------------------------------------------- diagonal profile

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L0DiagonalConfig {
    pub pairs: Vec<PairKind>,
    pub n: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Defaults to [`default_u_grid`].
    pub u_grid: Option<Vec<f64>>,
    pub delta: f64,
    pub r_inner: f64,
    pub r_outer: f64,
}

impl Default for L0DiagonalConfig {
    fn default() -> Self {
        Self {
            pairs: vec![PairKind::GaussGauss, PairKind::GaussPerturbed, PairKind::GaussAnnulus],
            n: vec![1000],
            seeds: default_seeds(),
            u_grid: None,
            delta: 0.3,
            r_inner: 0.8,
            r_outer: 0.85,
        }
    }
}

impl L0DiagonalConfig {
    pub fn resolved_u_grid(&self) -> Vec<f64> {
        self.u_grid.clone().unwrap_or_else(default_u_grid)
    }

    fn validate(&self) -> Result<()> {
        check_nonempty(&self.pairs, "pairs")?;
        check_nonempty(&self.n, "n")?;
        check_nonempty(&self.seeds, "seeds")?;
        let grid = self.resolved_u_grid();
        check_nonempty(&grid, "u_grid")?;
        if grid.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(Error::Config("u_grid values must lie in [0, 1]".into()));
        }
        if self.n.iter().any(|&n| n < 2) {
            return Err(Error::Config("sample sizes must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L0DiagonalRow {
    pub pair: PairKind,
    pub n: usize,
    pub u: f64,
    pub mean: f64,
    pub std: f64,
}

/// Gap loss on the diagonal `A = diag(u, 1 - u)`, averaged over seeds.
pub fn fig_l0_diagonal(cfg: &L0DiagonalConfig) -> Result<Vec<L0DiagonalRow>> {
    cfg.validate()?;
    let grid = cfg.resolved_u_grid();
    let cells: Vec<(PairKind, usize, u64)> = cfg
        .pairs
        .iter()
        .flat_map(|&p| {
            cfg.n
                .iter()
                .flat_map(move |&n| cfg.seeds.iter().map(move |&s| (p, n, s)))
        })
        .collect();
    let values: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(pair, n, seed)| -> Result<Vec<f64>> {
            let s = paired_sample(pair, n, seed, cfg.delta, cfg.r_inner, cfg.r_outer)?;
            let mut eval = L0Evaluator::new(&s)?;
            grid.iter()
                .map(|&u| Ok(eval.evaluate(&CostParam::general(diag2(u))?)?.value))
                .collect()
        })
        .collect::<Result<_>>()?;

    let per_group = cfg.seeds.len();
    let mut rows = Vec::new();
    for (g, chunk) in values.chunks(per_group).enumerate() {
        let (pair, n, _) = cells[g * per_group];
        for (k, &u) in grid.iter().enumerate() {
            let col: Vec<f64> = chunk.iter().map(|v| v[k]).collect();
            let (mean, std) = mean_std(&col);
            rows.push(L0DiagonalRow { pair, n, u, mean, std });
        }
    }
    Ok(rows)
}

/// Shape statistics of one diagonal profile.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagonalSummary {
    pub max_mean: f64,
    /// Root mean square of the per-`u` standard deviations.
    pub pooled_std: f64,
}

pub fn diagonal_summary(rows: &[L0DiagonalRow], pair: PairKind, n: usize) -> Option<DiagonalSummary> {
    let sel: Vec<&L0DiagonalRow> = rows.iter().filter(|r| r.pair == pair && r.n == n).collect();
    if sel.is_empty() {
        return None;
    }
    let max_mean = sel.iter().map(|r| r.mean).fold(f64::NEG_INFINITY, f64::max);
    let pooled_std = (sel.iter().map(|r| r.std * r.std).sum::<f64>() / sel.len() as f64).sqrt();
    Some(DiagonalSummary { max_mean, pooled_std })
}

pub fn diagonal_mean_at(rows: &[L0DiagonalRow], pair: PairKind, n: usize, u: f64) -> Option<f64> {
    rows.iter()
        .find(|r| r.pair == pair && r.n == n && (r.u - u).abs() < 1e-9)
        .map(|r| r.mean)
}

// ---------------------------------------------------------------- J_eps heatmap

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JepsConfig {
    pub sigma_alpha: Vec<Vec<f64>>,
    pub sigma_beta: Vec<Vec<f64>>,
    pub a_hat: Vec<Vec<f64>>,
    pub lambda0: f64,
    pub eps: Vec<f64>,
    /// Grid points per axis on `[0, 1]`.
    pub grid_points: usize,
    /// Overrides `lambda = lambda0 * eps` for every entry of `eps`.
    pub lambda: Option<f64>,
}

impl Default for JepsConfig {
    fn default() -> Self {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        Self {
            sigma_alpha: id.clone(),
            sigma_beta: id.clone(),
            a_hat: id,
            lambda0: 1.0,
            eps: vec![0.1, 0.05, 0.01],
            grid_points: 101,
            lambda: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JepsArgminRow {
    pub eps: f64,
    pub lambda: f64,
    pub argmin_b1: f64,
    pub argmin_b2: f64,
    pub formula_b: f64,
    pub grid_step: f64,
}

#[derive(Clone, Debug)]
pub struct JepsOutput {
    pub heatmap: Vec<HeatmapRow>,
    pub argmin: Vec<JepsArgminRow>,
}

fn gaussian_closed_form(
    sigma_alpha: &[Vec<f64>],
    sigma_beta: &[Vec<f64>],
    a_hat: &[Vec<f64>],
) -> Result<GaussianClosedForm> {
    let sa = mat_from_rows(sigma_alpha)?;
    let sb = mat_from_rows(sigma_beta)?;
    let d = sa.nrows();
    let pair = EllipticalPair::new(Vector::zeros(d), Vector::zeros(d), spd_sqrt(&sa)?, spd_sqrt(&sb)?)?;
    GaussianClosedForm::new(&pair, &CostParam::general(mat_from_rows(a_hat)?)?)
}

/// Closed-form `J_eps` on aligned `B = U diag(b1, b2) V^T` with its grid argmin.
pub fn fig_jeps_gaussian(cfg: &JepsConfig) -> Result<JepsOutput> {
    check_nonempty(&cfg.eps, "eps")?;
    check_positive(cfg.lambda0, "lambda0")?;
    if cfg.grid_points < 2 {
        return Err(Error::Config("grid_points must be at least 2".into()));
    }
    let cf = gaussian_closed_form(&cfg.sigma_alpha, &cfg.sigma_beta, &cfg.a_hat)?;
    let step = 1.0 / (cfg.grid_points - 1) as f64;
    let grid: Vec<f64> = (0..cfg.grid_points).map(|k| k as f64 * step).collect();
    let mut heatmap = Vec::new();
    let mut argmin = Vec::new();
    for &eps in &cfg.eps {
        check_positive(eps, "eps")?;
        let lambda = cfg.lambda.unwrap_or(cfg.lambda0 * eps);
        let rows = j_eps_heatmap(&cf, eps, lambda, &grid)?;
        let best = rows
            .iter()
            .min_by(|a, b| a.j.total_cmp(&b.j))
            .ok_or_else(|| Error::Config("empty grid".into()))?;
        let formula_b = closed_form_minimizers(lambda, cfg.lambda0, eps, &cf)?.coef_eps;
        argmin.push(JepsArgminRow {
            eps,
            lambda,
            argmin_b1: best.b1,
            argmin_b2: best.b2,
            formula_b,
            grid_step: step,
        });
        heatmap.extend(rows);
    }
    Ok(JepsOutput { heatmap, argmin })
}

// ---------------------------------------------------------------- bias curve

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasCurveConfig {
    pub eps: Vec<f64>,
    pub lambda0: f64,
    /// Also run the estimator on a perturbed-Gaussian sample.
    pub general: bool,
    pub n: usize,
    pub seed: u64,
    pub delta: f64,
    /// Epsilon of the reference run standing in for `A_0`; defaults to `min(eps) / 4`.
    pub reference_eps: Option<f64>,
    pub estimator: EstimatorConfig,
}

impl Default for BiasCurveConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.2, 0.1, 0.05, 0.025],
            lambda0: 1.0,
            general: true,
            n: 500,
            seed: 1,
            delta: 0.3,
            reference_eps: None,
            estimator: EstimatorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub eps: f64,
    pub gaussian_bias: f64,
    pub gaussian_angle_error: f64,
    pub general_bias: Option<f64>,
    pub general_angle_error: Option<f64>,
    pub converged: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub gaussian_slope: f64,
    pub general_slope: Option<f64>,
    pub reference_eps: Option<f64>,
}

/// `1 - (<A, B> / (|A| |B|))^2`.
pub fn angle_error(a: &Mat, b: &Mat) -> f64 {
    let c = crate::linalg::frobenius_inner(a, b) / (a.norm() * b.norm());
    (1.0 - c * c).max(0.0)
}

pub fn bias_curve(cfg: &BiasCurveConfig) -> Result<(Vec<BiasRow>, BiasSummary)> {
    check_nonempty(&cfg.eps, "eps")?;
    check_positive(cfg.lambda0, "lambda0")?;
    let cf = GaussianClosedForm::new(&EllipticalPair::standard(2), &CostParam::identity(2))?;
    let mut rows = Vec::with_capacity(cfg.eps.len());
    for &eps in &cfg.eps {
        check_positive(eps, "eps")?;
        let m = closed_form_minimizers(cfg.lambda0 * eps, cfg.lambda0, eps, &cf)?;
        rows.push(BiasRow {
            eps,
            gaussian_bias: (&m.b_eps - &m.b_zero).norm(),
            gaussian_angle_error: angle_error(&m.b_eps, &m.b_zero),
            general_bias: None,
            general_angle_error: None,
            converged: None,
        });
    }
    let eps_list: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let gaussian_slope = loglog_slope(&eps_list, &rows.iter().map(|r| r.gaussian_bias).collect::<Vec<_>>());

    let mut summary = BiasSummary {
        gaussian_slope,
        general_slope: None,
        reference_eps: None,
    };
    if cfg.general {
        let s = paired_sample(PairKind::GaussPerturbed, cfg.n, cfg.seed, cfg.delta, 0.8, 0.85)?;
        let min_eps = eps_list.iter().cloned().fold(f64::INFINITY, f64::min);
        let ref_eps = cfg.reference_eps.unwrap_or(min_eps / 4.0);
        check_positive(ref_eps, "reference_eps")?;
        let run = |eps: f64| {
            let mut e = cfg.estimator.clone();
            e.eps = eps;
            e.lambda0 = cfg.lambda0;
            minimize(&s, &e)
        };
        let reference = run(ref_eps)?;
        let a0 = reference.a_hat.matrix().clone();
        let results: Vec<_> = eps_list.par_iter().map(|&eps| run(eps)).collect::<Result<_>>()?;
        for (row, res) in rows.iter_mut().zip(&results) {
            row.general_bias = Some((res.a_hat.matrix() - &a0).norm());
            row.general_angle_error = Some(angle_error(res.a_hat.matrix(), &a0));
            row.converged = Some(res.converged && reference.converged);
        }
        let biases: Vec<f64> = rows.iter().map(|r| r.general_bias.unwrap_or(0.0)).collect();
        if biases.iter().all(|b| *b > 0.0) {
            summary.general_slope = Some(loglog_slope(&eps_list, &biases));
        }
        summary.reference_eps = Some(ref_eps);
    }
    Ok((rows, summary))
}

// ---------------------------------------------------------------- statistical rate

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsSchedule {
    Fixed,
    /// `eps(n) = n^{-1/2}`.
    InverseSqrt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatRateConfig {
    pub n: Vec<usize>,
    pub seeds: Vec<u64>,
    pub eps: f64,
    pub schedule: EpsSchedule,
    pub lambda0: f64,
    pub delta: f64,
    pub reference_n: usize,
    pub reference_seed: u64,
    /// Epsilon of the reference run; defaults to the schedule value at `reference_n`.
    pub reference_eps: Option<f64>,
    pub estimator: EstimatorConfig,
}

impl Default for StatRateConfig {
    fn default() -> Self {
        Self {
            n: vec![250, 500, 1000, 2000],
            seeds: default_seeds(),
            eps: 0.1,
            schedule: EpsSchedule::Fixed,
            lambda0: 1.0,
            delta: 0.3,
            reference_n: 5000,
            reference_seed: 1_000_000,
            reference_eps: None,
            estimator: EstimatorConfig::default(),
        }
    }
}

impl StatRateConfig {
    pub fn eps_for(&self, n: usize) -> f64 {
        match self.schedule {
            EpsSchedule::Fixed => self.eps,
            EpsSchedule::InverseSqrt => 1.0 / (n as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatRateRow {
    pub n: usize,
    pub eps: f64,
    pub seed: u64,
    pub error: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatRateSummaryRow {
    pub n: usize,
    pub eps: f64,
    pub median_error: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug)]
pub struct StatRateOutput {
    pub rows: Vec<StatRateRow>,
    pub summary: Vec<StatRateSummaryRow>,
    pub reference: Mat,
    pub reference_converged: bool,
}

fn estimate(cfg: &StatRateConfig, n: usize, seed: u64, eps: f64) -> Result<crate::estimator::EstimatorResult> {
    let s = paired_sample(PairKind::GaussPerturbed, n, seed, cfg.delta, 0.8, 0.85)?;
    let mut e = cfg.estimator.clone();
    e.eps = eps;
    e.lambda0 = cfg.lambda0;
    minimize(&s, &e)
}

pub fn stat_rate(cfg: &StatRateConfig) -> Result<StatRateOutput> {
    check_nonempty(&cfg.n, "n")?;
    check_nonempty(&cfg.seeds, "seeds")?;
    check_positive(cfg.lambda0, "lambda0")?;
    if cfg.schedule == EpsSchedule::Fixed {
        check_positive(cfg.eps, "eps")?;
    }
    let ref_eps = cfg.reference_eps.unwrap_or_else(|| cfg.eps_for(cfg.reference_n));
    let reference = estimate(cfg, cfg.reference_n, cfg.reference_seed, ref_eps)?;
    let a0 = reference.a_hat.matrix().clone();

    let cells: Vec<(usize, u64)> = cfg
        .n
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let rows: Vec<StatRateRow> = cells
        .par_iter()
        .map(|&(n, seed)| -> Result<StatRateRow> {
            let eps = cfg.eps_for(n);
            let res = estimate(cfg, n, seed, eps)?;
            Ok(StatRateRow {
                n,
                eps,
                seed,
                error: (res.a_hat.matrix() - &a0).norm(),
                iterations: res.trajectory.len(),
                converged: res.converged,
            })
        })
        .collect::<Result<_>>()?;
    let summary = cfg
        .n
        .iter()
        .map(|&n| {
            let errs: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.error).collect();
            StatRateSummaryRow {
                n,
                eps: cfg.eps_for(n),
                median_error: median(&errs),
                seeds: errs.len(),
            }
        })
        .collect();
    Ok(StatRateOutput {
        rows,
        summary,
        reference: a0,
        reference_converged: reference.converged,
    })
}

// ---------------------------------------------------------------- transport arrows

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrowTarget {
    /// Independent area-uniform annulus sample.
    Annulus,
    /// The source points themselves.
    SelfCoupling,
    /// Independent standard Gaussian sample.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrowsConfig {
    pub n: usize,
    pub seed: u64,
    pub u: Vec<f64>,
    pub target: ArrowTarget,
    pub r_inner: f64,
    pub r_outer: f64,
}

impl Default for ArrowsConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 1,
            u: vec![0.5, 0.9, 0.1],
            target: ArrowTarget::Annulus,
            r_inner: 0.8,
            r_outer: 0.85,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrowRow {
    pub x1: f64,
    pub x2: f64,
    #[serde(rename = "T1")]
    pub t1: f64,
    #[serde(rename = "T2")]
    pub t2: f64,
    pub u: f64,
}

#[derive(Clone, Debug)]
pub struct ArrowsOutput {
    pub rows: Vec<ArrowRow>,
    pub supports: Vec<Vec<(usize, usize)>>,
    pub target_points: Mat,
}

/// Barycentric images of the exact plan for `A = diag(u, 1 - u)`.
pub fn ot_map_arrows(cfg: &ArrowsConfig) -> Result<ArrowsOutput> {
    if cfg.n < 1 {
        return Err(Error::Config("n must be positive".into()));
    }
    check_nonempty(&cfg.u, "u")?;
    let alpha = sample(&DistributionSpec::standard_gaussian(2), cfg.n, cfg.seed)?;
    let xs = alpha.points().clone();
    let target_seed = cfg.seed.wrapping_add(TARGET_SEED_OFFSET);
    let ys = match cfg.target {
        ArrowTarget::SelfCoupling => xs.clone(),
        ArrowTarget::Gaussian => sample(&DistributionSpec::standard_gaussian(2), cfg.n, target_seed)?
            .points()
            .clone(),
        ArrowTarget::Annulus => sample(
            &DistributionSpec::Annulus {
                center: vec![0.0, 0.0],
                r_inner: cfg.r_inner,
                r_outer: cfg.r_outer,
            },
            cfg.n,
            target_seed,
        )?
        .points()
        .clone(),
    };
    let w = alpha.weights().clone();
    let mut simplex = TransportSimplex::new(&w, &w)?;
    let mut rows = Vec::with_capacity(cfg.n * cfg.u.len());
    let mut supports = Vec::with_capacity(cfg.u.len());
    for &u in &cfg.u {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Config("u values must lie in [0, 1]".into()));
        }
        let c = cost_matrix(&xs, &ys, &diag2(u))?;
        let (coupling, _) = simplex.solve(&c)?;
        let images = &coupling.plan * &ys;
        for i in 0..cfg.n {
            let wi = w[i];
            rows.push(ArrowRow {
                x1: xs[(i, 0)],
                x2: xs[(i, 1)],
                t1: images[(i, 0)] / wi,
                t2: images[(i, 1)] / wi,
                u,
            });
        }
        let mut s = coupling.support.clone();
        s.sort_unstable();
        supports.push(s);
    }
    Ok(ArrowsOutput {
        rows,
        supports,
        target_points: ys,
    })
}

// ---------------------------------------------------------------- certificates

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertifySample {
    /// `x = y = (e1, e2)` with uniform weights.
    TwoPointDiagonal,
    /// Independent standard Gaussian `x` and `y` of size `n` in dimension `d`.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    pub sample: CertifySample,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// Cost matrix (rows); identity when absent.
    pub a: Option<Vec<Vec<f64>>>,
    /// Map whose Jacobians feed the spanning check.
    pub map: PairKind,
    pub hessian_points: Vec<Vec<f64>>,
    pub fd_step: f64,
    pub delta: f64,
    pub r_inner: f64,
    pub r_outer: f64,
    /// Deltas at which the generic perturbation is checked; empty skips it.
    pub perturbation_deltas: Vec<f64>,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            sample: CertifySample::TwoPointDiagonal,
            n: 4,
            d: 3,
            seed: 1,
            a: None,
            map: PairKind::GaussPerturbed,
            hessian_points: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![0.5, -0.3]],
            fd_step: 1e-4,
            delta: 0.3,
            r_inner: 0.8,
            r_outer: 0.85,
            perturbation_deltas: vec![0.05, 0.1, 0.2, 0.3, 0.5],
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CertifyReport {
    pub degeneracy: DegeneracyCertificate,
    pub spanning: SpanningReport,
    pub perturbation: Option<PerturbationReport>,
}

pub fn certify(cfg: &CertifyConfig) -> Result<CertifyReport> {
    let sample = match cfg.sample {
        CertifySample::TwoPointDiagonal => {
            let x = Mat::identity(2, 2);
            PairedSample::new(x.clone(), x)?
        }
        CertifySample::Random => {
            if cfg.n < 1 || cfg.d < 1 {
                return Err(Error::Config("n and d must be positive".into()));
            }
            let spec = DistributionSpec::standard_gaussian(cfg.d);
            let xs = sample(&spec, cfg.n, cfg.seed)?.points().clone();
            let ys = sample(&spec, cfg.n, cfg.seed.wrapping_add(TARGET_SEED_OFFSET))?
                .points()
                .clone();
            PairedSample::new(xs, ys)?
        }
    };
    let d = sample.dim();
    let a = match &cfg.a {
        Some(rows) => CostParam::general(mat_from_rows(rows)?)?,
        None => CostParam::identity(d),
    };
    let degeneracy = degeneracy_certificate(&sample, &a)?;

    // The spanning check runs on the planar map with A = I, where the Hessian
    // of the potential at A^T x is the symmetrised Jacobian of the map at x.
    let map = cfg.map.map(cfg.delta, cfg.r_inner, cfg.r_outer);
    let points: Vec<Vector> = cfg
        .hessian_points
        .iter()
        .map(|p| Vector::from_column_slice(p))
        .collect();
    if points.iter().any(|p| p.len() != 2) {
        return Err(Error::Config("hessian_points must be 2-vectors".into()));
    }
    let hessians = finite_diff_jacobians(|x| map.apply(x), &points, cfg.fd_step)?;
    let spanning = spanning_check(&hessians, RANK_TOL.max(10.0 * cfg.fd_step * cfg.fd_step))?;

    let perturbation = if cfg.perturbation_deltas.is_empty() {
        None
    } else {
        let base = |z: &Vector| -> Result<Mat> {
            Ok(finite_diff_jacobians(|x| map.apply(x), std::slice::from_ref(z), cfg.fd_step)?.remove(0))
        };
        let (_, report) = build_generic_perturbation(&CostParam::identity(2), &points, base, &cfg.perturbation_deltas)?;
        Some(report)
    };
    Ok(CertifyReport {
        degeneracy,
        spanning,
        perturbation,
    })
}

// ---------------------------------------------------------------- curvature

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureMap {
    /// `T(x) = M x`.
    Affine,
    /// `T(x) = x + delta grad Psi(x)`.
    Perturbed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridDensity {
    Uniform,
    /// Standard Gaussian restricted to the rectangle.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvatureConfig {
    pub map: CurvatureMap,
    pub affine_matrix: Vec<Vec<f64>>,
    pub delta: f64,
    pub grid_n: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub density: GridDensity,
    pub a: Vec<Vec<f64>>,
}

impl Default for CurvatureConfig {
    fn default() -> Self {
        Self {
            map: CurvatureMap::Perturbed,
            affine_matrix: vec![vec![2.0, 0.0], vec![0.0, 2.0]],
            delta: 0.3,
            grid_n: 64,
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
            density: GridDensity::Uniform,
            a: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        }
    }
}

pub fn curvature_grid(cfg: &CurvatureConfig) -> Result<GridField> {
    let map = match cfg.map {
        CurvatureMap::Affine => TransportMap::Affine {
            matrix: mat_from_rows(&cfg.affine_matrix)?,
            offset: Vector::zeros(2),
        },
        CurvatureMap::Perturbed => TransportMap::PerturbedGradient {
            delta: cfg.delta,
            potential: PolynomialPotential::x2y_plus_xy2(),
        },
    };
    let density = cfg.density;
    GridField::new(
        cfg.lo,
        cfg.hi,
        cfg.grid_n,
        |x| match density {
            GridDensity::Uniform => 1.0,
            GridDensity::Gaussian => (-0.5 * x.norm_squared()).exp(),
        },
        |x| map.apply(x),
    )
}

pub fn curvature(cfg: &CurvatureConfig) -> Result<CurvatureReport> {
    let grid = curvature_grid(cfg)?;
    curvature_form(&grid, &CostParam::general(mat_from_rows(&cfg.a)?)?)
}

// ---------------------------------------------------------------- configuration file

/// Top-level configuration file: one optional table per subcommand.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fig_l0_diagonal: L0DiagonalConfig,
    pub fig_jeps_gaussian: JepsConfig,
    pub bias_curve: BiasCurveConfig,
    pub stat_rate: StatRateConfig,
    pub ot_map_arrows: ArrowsConfig,
    pub certify: CertifyConfig,
    pub curvature: CurvatureConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Replaces every seed list by `[seed]` and every single seed by `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.fig_l0_diagonal.seeds = vec![seed];
        self.stat_rate.seeds = vec![seed];
        self.bias_curve.seed = seed;
        self.ot_map_arrows.seed = seed;
        self.certify.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u_grid_layout() {
        let g = default_u_grid();
        assert_eq!(g.len(), 44);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g.contains(&0.2));
        assert!(g.contains(&0.5));
    }

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::from_toml_str(
            "[fig_l0_diagonal]\npairs = [\"gauss-gauss\"]\nn = [50]\n\n[stat_rate]\nschedule = \"inverse-sqrt\"\n",
        )
        .unwrap();
        assert_eq!(cfg.fig_l0_diagonal.pairs, vec![PairKind::GaussGauss]);
        assert_eq!(cfg.fig_l0_diagonal.seeds, default_seeds());
        assert_eq!(cfg.stat_rate.schedule, EpsSchedule::InverseSqrt);
        assert!(ExperimentConfig::from_toml_str("[fig_l0_diagonal]\nbogus = 1\n").is_err());
    }

    #[test]
    fn small_diagonal_profile() {
        let cfg = L0DiagonalConfig {
            pairs: vec![PairKind::GaussGauss, PairKind::GaussPerturbed],
            n: vec![40],
            seeds: vec![1, 2, 3],
            u_grid: Some(vec![0.0, 0.2, 0.5, 1.0]),
            ..Default::default()
        };
        let rows = fig_l0_diagonal(&cfg).unwrap();
        assert_eq!(rows.len(), 8);
        for r in &rows {
            assert!(r.mean >= -1e-12);
            if r.pair == PairKind::GaussGauss {
                assert!(r.mean.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_coupling_arrows_are_trivial() {
        let cfg = ArrowsConfig {
            n: 60,
            u: vec![0.5],
            target: ArrowTarget::SelfCoupling,
            ..Default::default()
        };
        let out = ot_map_arrows(&cfg).unwrap();
        for r in &out.rows {
            assert!((r.x1 - r.t1).abs() < 1e-9 && (r.x2 - r.t2).abs() < 1e-9);
        }
    }
}
