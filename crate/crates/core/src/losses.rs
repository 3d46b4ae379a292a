//! The inverse-OT objectives: the gap loss `L0`, the entropic loss `L_eps`,
//! the regularised objective `J_eps`, regularisers, and ray diagnostics.

use serde::{Deserialize, Serialize, Serializer};

use crate::entropic_ot::{solve_entropic_warm, SinkhornOptions};
use crate::error::{Error, Result};
use crate::exact_ot::{cost_matrix, plan_cross_covariance, TransportSimplex};
use crate::linalg::{asymmetry, frobenius_inner, min_eigenvalue, nuclear_norm, svd_canonical, Mat, Vector};
use crate::measures::PairedSample;

const SYMMETRY_TOL: f64 = 1e-10;

/// Cost matrix `A` of `c_A(x, y) = -x^T A y` with structural flags.
#[derive(Clone, Debug, PartialEq)]
pub struct CostParam {
    matrix: Mat,
    symmetric: bool,
    positive_definite: bool,
}

impl CostParam {
    pub fn general(matrix: Mat) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.is_empty() {
            return Err(Error::param("cost parameter must be a nonempty square matrix"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("cost parameter has non-finite entries"));
        }
        let symmetric = asymmetry(&matrix) <= SYMMETRY_TOL * matrix.amax().max(1.0);
        Ok(Self {
            matrix,
            symmetric,
            positive_definite: false,
        })
    }

    /// Requires symmetry within `1e-10` and a positive minimum eigenvalue.
    pub fn positive_definite(matrix: Mat) -> Result<Self> {
        let mut c = Self::general(matrix)?;
        if !c.symmetric {
            return Err(Error::param("positive-definite cost parameter must be symmetric"));
        }
        if min_eigenvalue(&c.matrix) <= 0.0 {
            return Err(Error::param("cost parameter is not positive definite"));
        }
        c.positive_definite = true;
        Ok(c)
    }

    pub fn identity(d: usize) -> Self {
        Self::positive_definite(Mat::identity(d, d)).expect("identity is positive definite")
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn is_positive_definite(&self) -> bool {
        self.positive_definite
    }
}

pub(crate) fn serialize_row_major<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    crate::measures::mat_to_rows(m).serialize(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverStats {
    pub solver: &'static str,
    pub iterations: usize,
    pub marginal_error: f64,
    pub converged: bool,
}

/// Loss value and gradient `sigma_model - sigma_hat`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapLossReport {
    pub value: f64,
    #[serde(serialize_with = "serialize_row_major")]
    pub gradient: Mat,
    #[serde(serialize_with = "serialize_row_major")]
    pub sigma_hat: Mat,
    #[serde(serialize_with = "serialize_row_major")]
    pub sigma_model: Mat,
    pub solver_stats: SolverStats,
}

fn check_dims(sample: &PairedSample, a: &CostParam) -> Result<()> {
    if sample.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: sample.dim(),
            found: a.dim(),
        });
    }
    Ok(())
}

/// `<c_A, pi_hat_n> - min_pi <c_A, pi>` with the exact optimal plan.
pub fn l0_empirical(sample: &PairedSample, a: &CostParam) -> Result<GapLossReport> {
    L0Evaluator::new(sample)?.evaluate(a)
}

/// Repeated `L0` evaluations on one sample, warm-starting the simplex basis.
#[derive(Clone, Debug)]
pub struct L0Evaluator<'a> {
    sample: &'a PairedSample,
    sigma_hat: Mat,
    simplex: TransportSimplex,
}

impl<'a> L0Evaluator<'a> {
    pub fn new(sample: &'a PairedSample) -> Result<Self> {
        let w = sample.uniform_weights();
        Ok(Self {
            sample,
            sigma_hat: sample.cross_covariance(),
            simplex: TransportSimplex::new(&w, &w)?,
        })
    }

    pub fn evaluate(&mut self, a: &CostParam) -> Result<GapLossReport> {
        check_dims(self.sample, a)?;
        let before = self.simplex.pivots();
        let c = cost_matrix(self.sample.xs(), self.sample.ys(), a.matrix())?;
        let (coupling, _) = self.simplex.solve(&c)?;
        let sigma_model = plan_cross_covariance(&coupling.plan, self.sample.xs(), self.sample.ys())?;
        let observed = -frobenius_inner(a.matrix(), &self.sigma_hat);
        Ok(GapLossReport {
            value: observed - coupling.value,
            gradient: &sigma_model - &self.sigma_hat,
            sigma_hat: self.sigma_hat.clone(),
            sigma_model,
            solver_stats: SolverStats {
                solver: "network-simplex",
                iterations: self.simplex.pivots() - before,
                marginal_error: 0.0,
                converged: true,
            },
        })
    }
}

/// `<c_A, pi_hat_n> - [min_pi <c_A, pi> + eps KL(pi | a_n x b_n)]`.
pub fn l_eps_empirical(sample: &PairedSample, a: &CostParam, eps: f64) -> Result<GapLossReport> {
    EntropicLoss::new(sample, eps, SinkhornOptions::default())?.evaluate(a)
}

/// Repeated `L_eps` evaluations on one sample, warm-starting Sinkhorn from
/// the previous potentials.
#[derive(Clone, Debug)]
pub struct EntropicLoss<'a> {
    sample: &'a PairedSample,
    eps: f64,
    opts: SinkhornOptions,
    weights: Vector,
    sigma_hat: Mat,
    warm: Option<(Vector, Vector)>,
}

impl<'a> EntropicLoss<'a> {
    pub fn new(sample: &'a PairedSample, eps: f64, opts: SinkhornOptions) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::param(format!("eps must be positive, got {eps}")));
        }
        Ok(Self {
            sample,
            eps,
            opts,
            weights: sample.uniform_weights(),
            sigma_hat: sample.cross_covariance(),
            warm: None,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn sigma_hat(&self) -> &Mat {
        &self.sigma_hat
    }

    pub fn evaluate(&mut self, a: &CostParam) -> Result<GapLossReport> {
        check_dims(self.sample, a)?;
        let c = cost_matrix(self.sample.xs(), self.sample.ys(), a.matrix())?;
        let warm = self.warm.as_ref().map(|(f, g)| (f, g));
        let res = solve_entropic_warm(&c, &self.weights, &self.weights, self.eps, &self.opts, warm)?;
        drop(c);
        let sigma_model = plan_cross_covariance(&res.plan, self.sample.xs(), self.sample.ys())?;
        let observed = -frobenius_inner(a.matrix(), &self.sigma_hat);
        let report = GapLossReport {
            value: observed - res.value,
            gradient: &sigma_model - &self.sigma_hat,
            sigma_hat: self.sigma_hat.clone(),
            sigma_model,
            solver_stats: SolverStats {
                solver: "sinkhorn",
                iterations: res.iterations,
                marginal_error: res.marginal_error,
                converged: res.converged,
            },
        };
        if res.converged {
            self.warm = Some((res.f, res.g));
        }
        Ok(report)
    }
}

/// `L_{n,eps}(A) + lambda0 * eps * R(A)`.
pub fn j_eps_empirical(sample: &PairedSample, a: &CostParam, eps: f64, lambda0: f64, reg: Regularizer) -> Result<f64> {
    if !(lambda0 > 0.0) {
        return Err(Error::param(format!("lambda0 must be positive, got {lambda0}")));
    }
    Ok(l_eps_empirical(sample, a, eps)?.value + lambda0 * eps * reg.value(a.matrix()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// Sum of singular values.
    NuclearNorm,
    /// `tr(A)`; equals the nuclear norm on the PSD cone, where it is used.
    Trace,
    /// Squared Frobenius norm `|A|_F^2`, whose proximal map is `Z / (1 + 2 tau)`.
    Frobenius,
}

impl Regularizer {
    pub fn value(&self, a: &Mat) -> f64 {
        match self {
            Regularizer::NuclearNorm => nuclear_norm(a),
            Regularizer::Trace => a.trace(),
            Regularizer::Frobenius => a.norm_squared(),
        }
    }

    /// One subgradient at `a`.
    pub fn subgradient(&self, a: &Mat) -> Mat {
        match self {
            Regularizer::NuclearNorm => {
                let svd = svd_canonical(a);
                let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
                let mut g = Mat::zeros(a.nrows(), a.ncols());
                for k in 0..svd.singular_values.len() {
                    if svd.singular_values[k] > 1e-12 * smax.max(1e-300) {
                        g += svd.u.column(k) * svd.v.column(k).transpose();
                    }
                }
                g
            }
            Regularizer::Trace => Mat::identity(a.nrows(), a.ncols()),
            Regularizer::Frobenius => a * 2.0,
        }
    }

    /// Frobenius bound on subgradients over the PSD cone of `d x d` matrices,
    /// or `None` when unbounded.
    pub fn subgradient_bound(&self, d: usize) -> Option<f64> {
        match self {
            Regularizer::NuclearNorm | Regularizer::Trace => Some((d as f64).sqrt()),
            Regularizer::Frobenius => None,
        }
    }

    /// Constant `kappa` with `R(A) >= kappa |A|_F` on the PSD cone, or `None`.
    pub fn coercivity(&self) -> Option<f64> {
        match self {
            Regularizer::NuclearNorm | Regularizer::Trace => Some(1.0),
            Regularizer::Frobenius => None,
        }
    }

    /// Coercive with bounded subgradients.
    pub fn meets_growth_assumption(&self, d: usize) -> bool {
        self.coercivity().is_some() && self.subgradient_bound(d).is_some()
    }
}

fn nonzero(m: &Mat, name: &str) -> Result<f64> {
    let n = m.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::param(format!("{name} must be a nonzero finite matrix")));
    }
    Ok(n)
}

fn cos_sq(a: &Mat, a0: &Mat) -> Result<f64> {
    if a.shape() != a0.shape() {
        return Err(Error::DimensionMismatch {
            expected: a0.nrows(),
            found: a.nrows(),
        });
    }
    let (na, n0) = (nonzero(a, "A")?, nonzero(a0, "A0")?);
    let c = frobenius_inner(a, a0) / (na * n0);
    Ok((c * c).min(1.0))
}

/// `1 - (<A, A0> / (|A| |A0|))^2`, in `[0, 1]`.
pub fn ray_alignment_error(a: &Mat, a0: &Mat) -> Result<f64> {
    Ok((1.0 - cos_sq(a, a0)?).max(0.0))
}

/// `inf_{t in (0,1]} |P_{A_t}^perp (A - A0)|^2` for `A_t = A0 + t (A - A0)`,
/// via the closed form `min(|A|^2, |A0|^2) (1 - cos^2)`.
pub fn segment_min_projection(a: &Mat, a0: &Mat) -> Result<f64> {
    let s = 1.0 - cos_sq(a, a0)?;
    Ok(a.norm_squared().min(a0.norm_squared()) * s.max(0.0))
}

/// The same infimum by scanning `t` over `points` uniform nodes of `(0, 1]`
/// plus geometric nodes `10^-k` approaching 0.
pub fn segment_min_projection_scan(a: &Mat, a0: &Mat, points: usize) -> Result<f64> {
    cos_sq(a, a0)?;
    let b = a - a0;
    let proj = |t: f64| {
        let at = a0 + &b * t;
        let n2 = at.norm_squared();
        if n2 == 0.0 {
            return f64::INFINITY;
        }
        let ip = frobenius_inner(&b, &at);
        (b.norm_squared() - ip * ip / n2).max(0.0)
    };
    let uniform = (1..=points).map(|k| k as f64 / points as f64);
    let geometric = (3..=15).map(|k| 10f64.powi(-k));
    Ok(uniform.chain(geometric).map(proj).fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{paired_from_map, sample, DistributionSpec, TransportMap};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> CostParam {
        CostParam::general(Mat::from_element(1, 1, v)).unwrap()
    }

    fn gauss_pairs(n: usize, seed: u64, a: &Mat) -> PairedSample {
        let x = sample(&DistributionSpec::standard_gaussian(a.nrows()), n, seed).unwrap();
        paired_from_map(
            &x,
            &TransportMap::Affine {
                matrix: a.clone(),
                offset: Vector::zeros(a.nrows()),
            },
        )
        .unwrap()
    }

    #[test]
    fn cost_param_flags() {
        assert!(CostParam::identity(3).is_positive_definite());
        assert!(CostParam::positive_definite(Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        assert!(CostParam::positive_definite(Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
        assert!(!CostParam::general(Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]))
            .unwrap()
            .is_symmetric());
    }

    #[test]
    fn l0_vanishes_at_generating_cost() {
        let s = gauss_pairs(80, 2, &Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]));
        let r = l0_empirical(&s, &CostParam::identity(2)).unwrap();
        assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn l0_one_dimensional_antimonotone() {
        let x = Mat::from_column_slice(2, 1, &[0.0, 1.0]);
        let s = PairedSample::new(x.clone(), x).unwrap();
        let r = l0_empirical(&s, &scalar(-1.0)).unwrap();
        assert_abs_diff_eq!(r.value, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.gradient, r.sigma_model.clone() - r.sigma_hat.clone());
    }

    #[test]
    fn l0_is_positively_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = Mat::from_fn(30, 2, |_, _| rng.random::<f64>() - 0.5);
        let ys = Mat::from_fn(30, 2, |_, _| rng.random::<f64>() - 0.5);
        let s = PairedSample::new(xs, ys).unwrap();
        let a = Mat::from_row_slice(2, 2, &[0.4, -0.2, 0.7, 1.1]);
        let v = l0_empirical(&s, &CostParam::general(a.clone()).unwrap()).unwrap().value;
        let v3 = l0_empirical(&s, &CostParam::general(a * 3.0).unwrap()).unwrap().value;
        assert!(v >= -1e-9);
        assert_abs_diff_eq!(v3, 3.0 * v, epsilon = 1e-9);
    }

    #[test]
    fn l_eps_large_eps_is_independence_limit() {
        let s = gauss_pairs(40, 5, &Mat::identity(2, 2));
        let r = l_eps_empirical(&s, &CostParam::identity(2), 1e6).unwrap();
        let mx = s.xs().row_mean().transpose();
        let my = s.ys().row_mean().transpose();
        let expect = &mx * my.transpose() - s.cross_covariance();
        assert_abs_diff_eq!(r.gradient, expect, epsilon = 1e-4);
    }

    #[test]
    fn l_eps_gradient_matches_finite_differences() {
        let s = gauss_pairs(50, 9, &Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.8]));
        let a = Mat::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 1.2]);
        let h = Mat::from_row_slice(2, 2, &[0.3, -0.5, 0.8, 0.1]);
        let h = &h / h.norm();
        let eps = 0.1;
        let r = l_eps_empirical(&s, &CostParam::general(a.clone()).unwrap(), eps).unwrap();
        let step = 1e-5;
        let plus = l_eps_empirical(&s, &CostParam::general(&a + &h * step).unwrap(), eps)
            .unwrap()
            .value;
        let minus = l_eps_empirical(&s, &CostParam::general(&a - &h * step).unwrap(), eps)
            .unwrap()
            .value;
        let fd = (plus - minus) / (2.0 * step);
        let an = frobenius_inner(&r.gradient, &h);
        assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "fd {fd} analytic {an}");
    }

    #[test]
    fn j_eps_adds_scaled_regulariser() {
        let s = gauss_pairs(30, 3, &Mat::identity(2, 2));
        let a = CostParam::identity(2);
        let l = l_eps_empirical(&s, &a, 0.2).unwrap().value;
        let j = j_eps_empirical(&s, &a, 0.2, 1.5, Regularizer::NuclearNorm).unwrap();
        assert_abs_diff_eq!(j - l, 1.5 * 0.2 * 2.0, epsilon = 1e-12);
        assert!(j_eps_empirical(&s, &a, 0.2, 0.0, Regularizer::Trace).is_err());
        let zero = CostParam::general(Mat::zeros(2, 2)).unwrap();
        let l0 = l_eps_empirical(&s, &zero, 0.2).unwrap().value;
        assert_eq!(
            j_eps_empirical(&s, &zero, 0.2, 1.0, Regularizer::Frobenius).unwrap(),
            l0
        );
    }

    #[test]
    fn ray_alignment_examples() {
        let i2 = Mat::identity(2, 2);
        assert_abs_diff_eq!(ray_alignment_error(&(&i2 * 3.0), &i2).unwrap(), 0.0, epsilon = 1e-15);
        let e12 = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e11 = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(ray_alignment_error(&e12, &e11).unwrap(), 1.0);
        assert_abs_diff_eq!(ray_alignment_error(&e11, &i2).unwrap(), 0.5, epsilon = 1e-15);
        assert!(ray_alignment_error(&Mat::zeros(2, 2), &i2).is_err());
    }

    #[test]
    fn segment_projection_examples() {
        let a0 = Mat::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]);
        assert_abs_diff_eq!(segment_min_projection(&a0, &a0).unwrap(), 0.0);
        assert_abs_diff_eq!(segment_min_projection(&(&a0 * 2.0), &a0).unwrap(), 0.0, epsilon = 1e-12);
        let e12 = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e11 = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(segment_min_projection(&e12, &e11).unwrap(), 1.0);
        let scan = segment_min_projection_scan(&e12, &e11, 1000).unwrap();
        assert_abs_diff_eq!(scan, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn regulariser_bounds() {
        let i2 = Mat::identity(2, 2);
        assert_eq!(Regularizer::NuclearNorm.value(&i2), 2.0);
        assert!(Regularizer::Trace.meets_growth_assumption(2));
        assert!(!Regularizer::Frobenius.meets_growth_assumption(2));
        let a = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = Regularizer::NuclearNorm.subgradient(&a);
        assert!(g.norm() <= Regularizer::NuclearNorm.subgradient_bound(2).unwrap() + 1e-12);
        assert!(Regularizer::NuclearNorm.value(&a) >= a.norm());
    }
}
