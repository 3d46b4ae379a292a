//! Closed forms for elliptical marginals: affine Brenier maps, the admissible
//! cone, the scalar-reduced entropic loss and its exact minimisers.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{frobenius_inner, nuclear_norm, spd_inv_sqrt, spd_logdet, spd_sqrt, svd_canonical, Mat, Vector};
use crate::losses::CostParam;

const MEMBERSHIP_TOL: f64 = 1e-8;

/// Pair of elliptical laws sharing a generator: `alpha = mu1 + omega1 Z`,
/// `beta = mu2 + omega2 Z`.
#[derive(Clone, Debug)]
pub struct EllipticalPair {
    mu1: Vector,
    mu2: Vector,
    omega1: Mat,
    omega2: Mat,
}

fn check_invertible(m: &Mat, what: &str) -> Result<()> {
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smax.is_finite() && smin > 1e-12 * smax && smin > 0.0) {
        return Err(Error::param(format!("{what} is singular")));
    }
    Ok(())
}

impl EllipticalPair {
    pub fn new(mu1: Vector, mu2: Vector, omega1: Mat, omega2: Mat) -> Result<Self> {
        let d = mu1.len();
        for (m, name) in [(&omega1, "omega1"), (&omega2, "omega2")] {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: m.nrows().max(m.ncols()),
                });
            }
            check_invertible(m, name)?;
        }
        if mu2.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: mu2.len(),
            });
        }
        Ok(Self {
            mu1,
            mu2,
            omega1,
            omega2,
        })
    }

    /// Centred pair with `omega1 = omega2 = I`.
    pub fn standard(d: usize) -> Self {
        Self {
            mu1: Vector::zeros(d),
            mu2: Vector::zeros(d),
            omega1: Mat::identity(d, d),
            omega2: Mat::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu1.len()
    }

    pub fn mu1(&self) -> &Vector {
        &self.mu1
    }

    pub fn mu2(&self) -> &Vector {
        &self.mu2
    }

    pub fn omega1(&self) -> &Mat {
        &self.omega1
    }

    pub fn omega2(&self) -> &Mat {
        &self.omega2
    }

    pub fn sigma_alpha(&self) -> Mat {
        &self.omega1 * self.omega1.transpose()
    }

    pub fn sigma_beta(&self) -> Mat {
        &self.omega2 * self.omega2.transpose()
    }
}

/// SVD data of `omega1^T A_hat omega2` together with the covariance square roots.
#[derive(Clone, Debug)]
pub struct GaussianClosedForm {
    pub u_hat: Mat,
    pub v_hat: Mat,
    pub s_hat: Vector,
    pub sqrt_sigma_alpha: Mat,
    pub sqrt_sigma_beta: Mat,
    inv_sqrt_sigma_alpha: Mat,
    inv_sqrt_sigma_beta: Mat,
    g_hat: Mat,
}

impl GaussianClosedForm {
    pub fn new(pair: &EllipticalPair, a_hat: &CostParam) -> Result<Self> {
        let d = pair.dim();
        if a_hat.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: a_hat.dim(),
            });
        }
        check_invertible(a_hat.matrix(), "A_hat")?;
        let core = pair.omega1.transpose() * a_hat.matrix() * &pair.omega2;
        let svd = svd_canonical(&core);
        let sigma_a = pair.sigma_alpha();
        let sigma_b = pair.sigma_beta();
        let sqrt_a = spd_sqrt(&sigma_a)?;
        let sqrt_b = spd_sqrt(&sigma_b)?;
        let inv_a = spd_inv_sqrt(&sigma_a)?;
        let inv_b = spd_inv_sqrt(&sigma_b)?;
        // Rotations R_i = Sigma_i^{-1/2} Omega_i carry the core SVD to B-coordinates.
        let r1 = &inv_a * &pair.omega1;
        let r2 = &inv_b * &pair.omega2;
        let g_hat = &r1 * &svd.u * svd.v.transpose() * r2.transpose();
        Ok(Self {
            u_hat: svd.u,
            v_hat: svd.v,
            s_hat: svd.singular_values,
            sqrt_sigma_alpha: sqrt_a,
            sqrt_sigma_beta: sqrt_b,
            inv_sqrt_sigma_alpha: inv_a,
            inv_sqrt_sigma_beta: inv_b,
            g_hat,
        })
    }

    pub fn dim(&self) -> usize {
        self.s_hat.len()
    }

    /// Normalised cross-correlation `Sigma_alpha^{-1/2} K Sigma_beta^{-1/2}` of the observed plan.
    pub fn g_hat(&self) -> &Mat {
        &self.g_hat
    }

    pub fn to_b(&self, a: &Mat) -> Mat {
        &self.sqrt_sigma_alpha * a * &self.sqrt_sigma_beta
    }

    pub fn from_b(&self, b: &Mat) -> Mat {
        &self.inv_sqrt_sigma_alpha * b * &self.inv_sqrt_sigma_beta
    }

    /// `B = U_B diag(b) V_B^T` in the singular frame of `g_hat`.
    pub fn aligned_b(&self, diag: &[f64]) -> Result<Mat> {
        let d = self.dim();
        if diag.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: diag.len(),
            });
        }
        let svd = svd_canonical(&self.g_hat);
        let dm = Mat::from_diagonal(&Vector::from_column_slice(diag));
        Ok(&svd.u * dm * svd.v.transpose())
    }

    pub fn l_eps(&self, a: &Mat, eps: f64) -> Result<f64> {
        closed_form_l_eps(&self.to_b(a), &self.g_hat, eps)
    }

    pub fn l_zero(&self, a: &Mat) -> f64 {
        closed_form_l_zero(&self.to_b(a), &self.g_hat)
    }
}

/// Affine optimal map `T(x) = M x + offset` for the cost `-x^T A_hat y`.
pub fn brenier_map_elliptical(pair: &EllipticalPair, a_hat: &CostParam) -> Result<(Mat, Vector)> {
    let cf = GaussianClosedForm::new(pair, a_hat)?;
    let inv1 = pair
        .omega1
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::param("omega1 is singular"))?;
    let m = &pair.omega2 * &cf.v_hat * cf.u_hat.transpose() * inv1;
    let offset = &pair.mu2 - &m * &pair.mu1;
    Ok((m, offset))
}

/// Result of testing membership in the admissible cone.
#[derive(Clone, Debug, Serialize)]
pub struct ConeMembership {
    pub member: bool,
    #[serde(serialize_with = "crate::losses::serialize_row_major")]
    pub decomposition: Mat,
}

pub fn s0_cone_membership(a: &CostParam, pair: &EllipticalPair, a_hat: &CostParam) -> Result<ConeMembership> {
    let cf = GaussianClosedForm::new(pair, a_hat)?;
    let core = pair.omega1.transpose() * a.matrix() * &pair.omega2;
    let dmat = cf.u_hat.transpose() * core * &cf.v_hat;
    let d = dmat.nrows();
    let tol = MEMBERSHIP_TOL * dmat.amax().max(1.0);
    let mut member = true;
    for j in 0..d {
        for i in 0..d {
            let v = dmat[(i, j)];
            if i == j {
                member &= v > tol;
            } else {
                member &= v.abs() <= tol;
            }
        }
    }
    Ok(ConeMembership {
        member,
        decomposition: dmat,
    })
}

/// Scalar profile `(g_eps(b), f_eps(b))` of the Gaussian entropic problem.
pub fn scalar_entropic_profile(b: f64, eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::param("eps must be positive"));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::param("b must be nonnegative"));
    }
    let root = (eps * eps + 4.0 * b * b).sqrt();
    let g = 2.0 * b / (eps + root);
    // log((eps + root) / (2 eps)) with root - eps = 4b^2 / (root + eps)
    let log_term = (4.0 * b * b / (root + eps) / (2.0 * eps)).ln_1p();
    let f = -2.0 * b * b / (eps + root) + 0.5 * eps * log_term;
    Ok((g, f))
}

fn singular_values(b: &Mat) -> Vec<f64> {
    b.clone().singular_values().iter().cloned().collect()
}

/// Gaussian entropic loss in B-coordinates: `-<B, G> - sum_i f_eps(b_i)`.
pub fn closed_form_l_eps(b: &Mat, g_hat: &Mat, eps: f64) -> Result<f64> {
    let mut total = -frobenius_inner(b, g_hat);
    for s in singular_values(b) {
        total -= scalar_entropic_profile(s, eps)?.1;
    }
    Ok(total)
}

/// Unregularised limit in B-coordinates: `-<B, G> + |B|_*`.
pub fn closed_form_l_zero(b: &Mat, g_hat: &Mat) -> f64 {
    -frobenius_inner(b, g_hat) + nuclear_norm(b)
}

/// `closed_form_l_eps + lambda |B|_*`.
pub fn closed_form_j_eps(b: &Mat, g_hat: &Mat, eps: f64, lambda: f64) -> Result<f64> {
    Ok(closed_form_l_eps(b, g_hat, eps)? + lambda * nuclear_norm(b))
}

/// Exact minimisers of the regularised Gaussian problem and its `eps -> 0` limit.
#[derive(Clone, Debug, Serialize)]
pub struct ClosedFormMinimizers {
    pub coef_eps: f64,
    pub coef_zero: f64,
    #[serde(serialize_with = "crate::losses::serialize_row_major")]
    pub b_eps: Mat,
    #[serde(serialize_with = "crate::losses::serialize_row_major")]
    pub b_zero: Mat,
    #[serde(serialize_with = "crate::losses::serialize_row_major")]
    pub a_eps: Mat,
    #[serde(serialize_with = "crate::losses::serialize_row_major")]
    pub a_zero: Mat,
}

pub fn minimizer_coefficient(lambda: f64, eps: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::param("lambda must lie in (0, 1]"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::param("eps must be positive"));
    }
    Ok(eps * (1.0 - lambda) / (lambda * (2.0 - lambda)))
}

pub fn closed_form_minimizers(
    lambda: f64,
    lambda0: f64,
    eps: f64,
    cf: &GaussianClosedForm,
) -> Result<ClosedFormMinimizers> {
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(Error::param("lambda0 must be positive"));
    }
    let coef_eps = minimizer_coefficient(lambda, eps)?;
    let coef_zero = 1.0 / (2.0 * lambda0);
    let b_eps = cf.g_hat() * coef_eps;
    let b_zero = cf.g_hat() * coef_zero;
    Ok(ClosedFormMinimizers {
        coef_eps,
        coef_zero,
        a_eps: cf.from_b(&b_eps),
        a_zero: cf.from_b(&b_zero),
        b_eps,
        b_zero,
    })
}

/// Residual of the first-order expansion in `eps` applied to a difference of losses.
pub fn taylor_difference_check(a1: &CostParam, a2: &CostParam, eps: f64, cf: &GaussianClosedForm) -> Result<f64> {
    let logdet1 = spd_logdet(a1.matrix())?;
    let logdet2 = spd_logdet(a2.matrix())?;
    let (b1, b2) = (cf.to_b(a1.matrix()), cf.to_b(a2.matrix()));
    let g = cf.g_hat();
    let d_eps = closed_form_l_eps(&b1, g, eps)? - closed_form_l_eps(&b2, g, eps)?;
    let d_zero = closed_form_l_zero(&b1, g) - closed_form_l_zero(&b2, g);
    Ok(d_eps - d_zero + 0.5 * eps * (logdet1 - logdet2))
}

/// One cell of the `J_eps` heatmap over aligned `B = U diag(b1, b2) V^T`.
#[derive(Clone, Debug, Serialize)]
pub struct HeatmapRow {
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    #[serde(rename = "J")]
    pub j: f64,
}

pub fn j_eps_heatmap(cf: &GaussianClosedForm, eps: f64, lambda: f64, grid: &[f64]) -> Result<Vec<HeatmapRow>> {
    if cf.dim() != 2 {
        return Err(Error::param("the heatmap is defined for d = 2"));
    }
    let mut rows = Vec::with_capacity(grid.len() * grid.len());
    for &b1 in grid {
        for &b2 in grid {
            let b = cf.aligned_b(&[b1, b2])?;
            rows.push(HeatmapRow {
                b1,
                b2,
                eps,
                j: closed_form_j_eps(&b, cf.g_hat(), eps, lambda)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_heatmap_csv<W: Write>(rows: &[HeatmapRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(lo) < 0.0) == (f(mid) < 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn profile_values() {
        assert_eq!(scalar_entropic_profile(0.0, 0.3).unwrap(), (0.0, 0.0));
        let (g, f) = scalar_entropic_profile(1.0, 1.0).unwrap();
        let g_ref = bisect(0.0, 1.0 - 1e-15, |g| -1.0 + g / (1.0 - g * g));
        assert_abs_diff_eq!(g, g_ref, epsilon = 1e-12);
        assert_abs_diff_eq!(g, 0.618_034, epsilon = 1e-6);
        assert_abs_diff_eq!(f, -0.377_42, epsilon = 1e-5);
        let (g, _) = scalar_entropic_profile(10.0, 0.01).unwrap();
        assert!((1.0 - g) < 1e-3);
        assert!(scalar_entropic_profile(1.0, 0.0).is_err());
        assert!(scalar_entropic_profile(-1.0, 1.0).is_err());
    }

    #[test]
    fn identity_map_and_scaling() {
        let pair = EllipticalPair::standard(2);
        let (m, b) = brenier_map_elliptical(&pair, &CostParam::identity(2)).unwrap();
        assert_abs_diff_eq!((m - Mat::identity(2, 2)).amax(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.amax(), 0.0, epsilon = 1e-12);

        let pair = EllipticalPair::new(
            Vector::zeros(2),
            Vector::zeros(2),
            Mat::identity(2, 2),
            Mat::identity(2, 2) * 2.0,
        )
        .unwrap();
        let (m, _) = brenier_map_elliptical(&pair, &CostParam::identity(2)).unwrap();
        assert_abs_diff_eq!((m - Mat::identity(2, 2) * 2.0).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_inputs_rejected() {
        let pair = EllipticalPair::standard(2);
        let a = CostParam::general(Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).unwrap();
        assert!(brenier_map_elliptical(&pair, &a).is_err());
        let bad = EllipticalPair::new(
            Vector::zeros(2),
            Vector::zeros(2),
            Mat::zeros(2, 2),
            Mat::identity(2, 2),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn cone_examples() {
        let pair = EllipticalPair::standard(2);
        let a_hat = CostParam::general(Mat::from_row_slice(2, 2, &[2.0, 0.3, -0.1, 1.0])).unwrap();
        assert!(s0_cone_membership(&a_hat, &pair, &a_hat).unwrap().member);
        let twice = CostParam::general(a_hat.matrix() * 2.0).unwrap();
        assert!(s0_cone_membership(&twice, &pair, &a_hat).unwrap().member);
        let rot = CostParam::general(Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
        let res = s0_cone_membership(&rot, &pair, &CostParam::identity(2)).unwrap();
        assert!(!res.member);
    }

    #[test]
    fn aligned_loss_value() {
        let cf = GaussianClosedForm::new(&EllipticalPair::standard(2), &CostParam::identity(2)).unwrap();
        assert_eq!(closed_form_l_eps(&Mat::zeros(2, 2), cf.g_hat(), 1.0).unwrap(), 0.0);
        let b = cf.aligned_b(&[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(
            closed_form_l_eps(&b, cf.g_hat(), 1.0).unwrap(),
            -1.245_144,
            epsilon = 1e-6
        );
        let g = cf.g_hat().clone();
        let vals: Vec<f64> = [1.0, 10.0, 100.0]
            .iter()
            .map(|t| closed_form_l_eps(&(&g * *t), &g, 0.5).unwrap())
            .collect();
        assert!(vals[0] > vals[1] && vals[1] > vals[2]);
    }

    #[test]
    fn minimizer_coefficients() {
        let cf = GaussianClosedForm::new(&EllipticalPair::standard(2), &CostParam::identity(2)).unwrap();
        let m = closed_form_minimizers(0.1, 1.0, 0.1, &cf).unwrap();
        assert_abs_diff_eq!(m.coef_eps, 0.9 / 1.9, epsilon = 1e-14);
        assert_abs_diff_eq!(m.coef_zero, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(
            (m.a_eps - Mat::identity(2, 2) * (0.9 / 1.9)).amax(),
            0.0,
            epsilon = 1e-12
        );
        let m = closed_form_minimizers(1.0, 1.0, 1.0, &cf).unwrap();
        assert_eq!(m.b_eps.amax(), 0.0);
        assert!(closed_form_minimizers(0.0, 1.0, 0.1, &cf).is_err());
        assert!(closed_form_minimizers(1.5, 1.0, 0.1, &cf).is_err());
    }

    #[test]
    fn g_hat_is_convention_free_for_general_factors() {
        // Omega = Sigma^{1/2} R with a rotation R must give the same g_hat as Sigma^{1/2}.
        let s = Mat::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let root = spd_sqrt(&s).unwrap();
        let (c, sn) = (0.6f64, 0.8f64);
        let r = Mat::from_row_slice(2, 2, &[c, -sn, sn, c]);
        let a_hat = CostParam::general(Mat::from_row_slice(2, 2, &[1.0, 0.2, -0.3, 0.7])).unwrap();
        let z = Vector::zeros(2);
        let p1 = EllipticalPair::new(z.clone(), z.clone(), root.clone(), root.clone()).unwrap();
        let p2 = EllipticalPair::new(z.clone(), z, &root * &r, root.clone()).unwrap();
        let g1 = GaussianClosedForm::new(&p1, &a_hat).unwrap();
        let g2 = GaussianClosedForm::new(&p2, &a_hat).unwrap();
        assert_abs_diff_eq!((g1.g_hat() - g2.g_hat()).amax(), 0.0, epsilon = 1e-10);
        let (m1, _) = brenier_map_elliptical(&p1, &a_hat).unwrap();
        let (m2, _) = brenier_map_elliptical(&p2, &a_hat).unwrap();
        assert_abs_diff_eq!((m1 - m2).amax(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn heatmap_shape() {
        let cf = GaussianClosedForm::new(&EllipticalPair::standard(2), &CostParam::identity(2)).unwrap();
        let rows = j_eps_heatmap(&cf, 0.1, 0.1, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(rows.len(), 9);
        let mut buf = Vec::new();
        write_heatmap_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("b1,b2,eps,J\n"));
    }
}
