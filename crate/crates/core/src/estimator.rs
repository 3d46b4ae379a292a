//! Proximal gradient minimisation of `J_{n,eps} = L_{n,eps} + lambda0 eps R`,
//! optionally over symmetric matrices with eigenvalues at least `eig_floor`.

use serde::{Deserialize, Serialize};

use crate::entropic_ot::SinkhornOptions;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_inner, operator_norm, svd_canonical, sym_apply, symmetrize, Mat};
use crate::losses::{serialize_row_major, CostParam, EntropicLoss, GapLossReport, Regularizer};
use crate::measures::PairedSample;

const MIN_STEP: f64 = 1e-16;
const MAX_STEP: f64 = 1e10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub eps: f64,
    pub lambda0: f64,
    pub regularizer: Regularizer,
    pub psd_constraint: bool,
    /// Eigenvalue floor under the PSD constraint; `None` means
    /// `1e-8 * |A|_op` at each step.
    pub eig_floor: Option<f64>,
    pub initial_step: f64,
    pub backtrack: f64,
    /// Factor `c` in `L(A+) <= L(A) + <grad, D> + c |D|^2 / (2 tau)`.
    pub sufficient_decrease: f64,
    /// Stop once the gradient-map norm is below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting matrix (rows); identity when absent.
    pub init: Option<Vec<Vec<f64>>>,
    pub sinkhorn: SinkhornOptions,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            lambda0: 1.0,
            regularizer: Regularizer::Trace,
            psd_constraint: true,
            eig_floor: None,
            initial_step: 1.0,
            backtrack: 0.5,
            sufficient_decrease: 1.0,
            tol: 1e-6,
            max_iter: 500,
            init: None,
            sinkhorn: SinkhornOptions::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.eps) || !positive(self.lambda0) {
            return Err(Error::param("eps and lambda0 must be positive"));
        }
        if matches!(self.eig_floor, Some(f) if !(f >= 0.0)) {
            return Err(Error::param("eig_floor must be nonnegative"));
        }
        if !positive(self.initial_step) || !positive(self.tol) || !positive(self.sufficient_decrease) {
            return Err(Error::param("step and tolerances must be positive"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::param("backtracking factor must lie in (0, 1)"));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter must be positive"));
        }
        Ok(())
    }

    fn lambda(&self) -> f64 {
        self.lambda0 * self.eps
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub objective: f64,
    pub grad_map_norm: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimatorResult {
    #[serde(rename = "a_hat", serialize_with = "serialize_cost")]
    pub a_hat: CostParam,
    pub trajectory: Vec<TrajectoryPoint>,
    pub converged: bool,
    /// Reason for stopping early, if any.
    pub failure: Option<String>,
    pub config: EstimatorConfig,
}

fn serialize_cost<S: serde::Serializer>(c: &CostParam, s: S) -> std::result::Result<S::Ok, S::Error> {
    serialize_row_major(c.matrix(), s)
}

/// Proximal map of `tau_lambda * R` plus, when `psd`, the indicator of
/// `{A symmetric, A >= eig_floor I}`.
pub fn prox_step(z: &Mat, tau_lambda: f64, reg: Regularizer, psd: bool, eig_floor: f64) -> Mat {
    let clamp = |m: &Mat, shift: f64| sym_apply(&symmetrize(m), |l| (l - shift).max(eig_floor));
    match (reg, psd) {
        // On the PSD cone the nuclear norm is the trace.
        (Regularizer::NuclearNorm | Regularizer::Trace, true) => clamp(z, tau_lambda),
        (Regularizer::NuclearNorm, false) if tau_lambda == 0.0 => z.clone(),
        (Regularizer::NuclearNorm, false) => {
            let svd = svd_canonical(z);
            let s = svd.singular_values.map(|s| (s - tau_lambda).max(0.0));
            &svd.u * Mat::from_diagonal(&s) * svd.v.transpose()
        }
        (Regularizer::Trace, false) => z - Mat::identity(z.nrows(), z.ncols()) * tau_lambda,
        (Regularizer::Frobenius, psd) => {
            let scaled = z / (1.0 + 2.0 * tau_lambda);
            if psd {
                clamp(&scaled, 0.0)
            } else {
                scaled
            }
        }
    }
}

fn to_param(m: Mat, psd: bool) -> Result<CostParam> {
    if psd {
        CostParam::positive_definite(m.clone()).or_else(|_| CostParam::general(m))
    } else {
        CostParam::general(m)
    }
}

fn require_converged(r: &GapLossReport) -> Result<()> {
    if r.solver_stats.converged {
        Ok(())
    } else {
        Err(Error::NonConvergence {
            solver: "sinkhorn",
            iterations: r.solver_stats.iterations,
            residual: r.solver_stats.marginal_error,
        })
    }
}

/// Minimises `J_{n,eps}` by proximal gradient with Barzilai-Borwein initial
/// steps and backtracking on the smooth part.
pub fn minimize(sample: &PairedSample, cfg: &EstimatorConfig) -> Result<EstimatorResult> {
    cfg.validate()?;
    let d = sample.dim();
    let lambda = cfg.lambda();
    let floor_for = |a: &Mat| cfg.eig_floor.unwrap_or(1e-8 * operator_norm(a));
    let mut a = match &cfg.init {
        Some(rows) => crate::measures::mat_from_rows(rows)?,
        None => Mat::identity(d, d),
    };
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: a.nrows(),
        });
    }
    if cfg.psd_constraint {
        let floor = floor_for(&a);
        a = prox_step(&a, 0.0, Regularizer::Trace, true, floor);
    }
    let mut loss = EntropicLoss::new(sample, cfg.eps, cfg.sinkhorn)?;
    let objective = |l: f64, m: &Mat| l + lambda * cfg.regularizer.value(m);

    let mut report = loss.evaluate(&to_param(a.clone(), cfg.psd_constraint)?)?;
    require_converged(&report)?;
    let mut f_cur = objective(report.value, &a);
    let mut tau = cfg.initial_step;
    let mut prev: Option<(Mat, Mat)> = None;
    let mut trajectory = Vec::new();
    let mut failure = None;
    let mut converged = false;

    for _ in 0..cfg.max_iter {
        let grad = report.gradient.clone();
        if let Some((pa, pg)) = &prev {
            let s = &a - pa;
            let y = &grad - pg;
            let sy = frobenius_inner(&s, &y);
            if sy > 0.0 {
                tau = (s.norm_squared() / sy).clamp(MIN_STEP, MAX_STEP);
            }
        }
        let floor = floor_for(&a);
        let accepted = loop {
            let cand = prox_step(
                &(&a - &grad * tau),
                tau * lambda,
                cfg.regularizer,
                cfg.psd_constraint,
                floor,
            );
            let diff = &cand - &a;
            let cand_report = loss.evaluate(&to_param(cand.clone(), cfg.psd_constraint)?)?;
            require_converged(&cand_report)?;
            let model = report.value
                + frobenius_inner(&grad, &diff)
                + cfg.sufficient_decrease * diff.norm_squared() / (2.0 * tau);
            let f_cand = objective(cand_report.value, &cand);
            if cand_report.value <= model + 1e-12 * report.value.abs().max(1.0) && f_cand <= f_cur + 1e-12 {
                break Some((cand, cand_report, f_cand, diff.norm() / tau));
            }
            tau *= cfg.backtrack;
            if tau < MIN_STEP {
                break None;
            }
        };
        let Some((cand, cand_report, f_cand, gmap)) = accepted else {
            failure = Some("step size collapsed during backtracking".to_string());
            break;
        };
        trajectory.push(TrajectoryPoint {
            objective: f_cand,
            grad_map_norm: gmap,
            step: tau,
        });
        prev = Some((std::mem::replace(&mut a, cand), grad));
        report = cand_report;
        f_cur = f_cand;
        if gmap <= cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged && failure.is_none() {
        failure = Some(format!(
            "gradient-map norm above {} after {} iterations",
            cfg.tol, cfg.max_iter
        ));
    }
    Ok(EstimatorResult {
        a_hat: to_param(a, cfg.psd_constraint)?,
        trajectory,
        converged,
        failure,
        config: cfg.clone(),
    })
}
