//! Identifiability certificates: the Hessian spanning condition, discrete
//! support-orthogonal degeneracy witnesses and the generic perturbation that
//! restores spanning.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact_ot::{cost_matrix, solve_exact, Coupling, DualPotentials};
use crate::linalg::{asymmetry, numerical_rank, sym_eigen_sorted, Mat, Vector};
use crate::losses::CostParam;
use crate::measures::{mat_to_rows, PairedSample};

/// Default relative rank tolerance.
pub const RANK_TOL: f64 = 1e-8;

const STRICT_SLACK_TOL: f64 = 1e-10;
const RESOLVE_TOL: f64 = 1e-8;

/// Coordinates of a symmetric matrix in an orthonormal basis of `S_d`.
pub fn svec(m: &Mat) -> Vector {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        out.push(m[(i, i)]);
    }
    for j in 0..d {
        for i in 0..j {
            out.push(std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
    Vector::from_vec(out)
}

fn traceless(m: &Mat) -> Mat {
    let d = m.nrows();
    m - Mat::identity(d, d) * (m.trace() / d as f64)
}

fn singular_values_of_rows(rows: &[Vector]) -> Vec<f64> {
    if rows.is_empty() {
        return Vec::new();
    }
    let m = Mat::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c]);
    m.singular_values().iter().cloned().collect()
}

fn rank_with_scale(rows: &[Vector], scale: f64, tol: f64) -> usize {
    if scale == 0.0 {
        return 0;
    }
    singular_values_of_rows(rows)
        .iter()
        .filter(|&&s| s > tol * scale)
        .count()
}

/// Outcome of the spanning test on a family of symmetric matrices.
#[derive(Clone, Debug, Serialize)]
pub struct SpanningReport {
    pub hessian_samples: Vec<Vec<Vec<f64>>>,
    /// Rank of the family in `S_d`.
    pub rank_full: usize,
    /// Rank of the traceless projections in `S_0^d`.
    pub rank_traceless: usize,
    /// `rank_traceless == dim S_0^d`.
    pub satisfied: bool,
    /// The span itself contains `S_0^d`.
    pub span_contains_traceless: bool,
    /// The span is all of `S_d`.
    pub spans_full: bool,
    pub tolerance: f64,
}

pub fn spanning_check(hessians: &[Mat], tol: f64) -> Result<SpanningReport> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::param("tolerance must lie in (0, 1)"));
    }
    let d = hessians.first().map(|h| h.nrows()).unwrap_or(0);
    for h in hessians {
        if h.nrows() != d || h.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: h.nrows().max(h.ncols()),
            });
        }
        if asymmetry(h) > tol * h.amax().max(1.0) {
            return Err(Error::param("hessian samples must be symmetric"));
        }
    }
    let dim_full = d * (d + 1) / 2;
    let dim_traceless = dim_full.saturating_sub(1);
    let full_rows: Vec<Vector> = hessians.iter().map(svec).collect();
    let full_sv = singular_values_of_rows(&full_rows);
    // Both ranks use the scale of the full family so that exactly traceless-free
    // families do not promote rounding noise to rank.
    let scale = full_sv.iter().cloned().fold(0.0, f64::max);
    let rank_full = rank_with_scale(&full_rows, scale, tol);
    let traceless_rows: Vec<Vector> = hessians.iter().map(|h| svec(&traceless(h))).collect();
    let rank_traceless = rank_with_scale(&traceless_rows, scale, tol);

    let mut augmented = full_rows.clone();
    for basis in traceless_basis(d) {
        augmented.push(svec(&basis));
    }
    let aug_scale = scale.max(1.0);
    let span_contains_traceless =
        d > 0 && rank_with_scale(&augmented, aug_scale, tol) == rank_with_scale(&full_rows, aug_scale, tol);

    Ok(SpanningReport {
        hessian_samples: hessians.iter().map(mat_to_rows).collect(),
        rank_full,
        rank_traceless,
        satisfied: d > 0 && rank_traceless == dim_traceless,
        span_contains_traceless,
        spans_full: d > 0 && rank_full == dim_full,
        tolerance: tol,
    })
}

fn traceless_basis(d: usize) -> Vec<Mat> {
    let mut out = Vec::new();
    for k in 1..d {
        let mut m = Mat::zeros(d, d);
        m[(0, 0)] = 1.0;
        m[(k, k)] = -1.0;
        out.push(m);
    }
    for j in 0..d {
        for i in 0..j {
            let mut m = Mat::zeros(d, d);
            m[(i, j)] = 1.0;
            m[(j, i)] = 1.0;
            out.push(m);
        }
    }
    out
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::param("finite-difference step must be positive"));
    }
    Ok(())
}

/// Central-difference Hessians of a scalar potential, symmetrised.
pub fn finite_diff_hessians<F>(potential: F, points: &[Vector], step: f64) -> Result<Vec<Mat>>
where
    F: Fn(&Vector) -> Result<f64>,
{
    check_step(step)?;
    let mut out = Vec::with_capacity(points.len());
    for x in points {
        let d = x.len();
        let f0 = potential(x)?;
        let shifted = |di: &[(usize, f64)]| -> Result<f64> {
            let mut z = x.clone();
            for &(k, s) in di {
                z[k] += s * step;
            }
            potential(&z)
        };
        let mut h = Mat::zeros(d, d);
        for i in 0..d {
            let fp = shifted(&[(i, 1.0)])?;
            let fm = shifted(&[(i, -1.0)])?;
            h[(i, i)] = (fp - 2.0 * f0 + fm) / (step * step);
            for j in 0..i {
                let pp = shifted(&[(i, 1.0), (j, 1.0)])?;
                let pm = shifted(&[(i, 1.0), (j, -1.0)])?;
                let mp = shifted(&[(i, -1.0), (j, 1.0)])?;
                let mm = shifted(&[(i, -1.0), (j, -1.0)])?;
                let v = (pp - pm - mp + mm) / (4.0 * step * step);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        out.push(h);
    }
    Ok(out)
}

/// Central-difference Jacobians of a gradient map, symmetrised.
pub fn finite_diff_jacobians<F>(map: F, points: &[Vector], step: f64) -> Result<Vec<Mat>>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    check_step(step)?;
    let mut out = Vec::with_capacity(points.len());
    for x in points {
        let d = x.len();
        let mut jac = Mat::zeros(d, d);
        for k in 0..d {
            let mut zp = x.clone();
            let mut zm = x.clone();
            zp[k] += step;
            zm[k] -= step;
            let diff = (map(&zp)? - map(&zm)?) / (2.0 * step);
            if diff.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: diff.len(),
                });
            }
            jac.set_column(k, &diff);
        }
        out.push((&jac + jac.transpose()) * 0.5);
    }
    Ok(out)
}

/// Outcome of the degeneracy witness search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateStatus {
    /// Support matrices span all of `R^{d x d}`: no orthogonal direction exists.
    NoWitness,
    /// Witness found and invariance confirmed by re-solving at `A +- r H`.
    Verified,
    /// Witness found but strict complementarity fails off the support.
    Unverifiable,
    /// Witness found but a re-solve changed the support or the value.
    Rejected,
}

#[derive(Clone, Debug, Serialize)]
pub struct DegeneracyCertificate {
    pub support: Vec<(usize, usize)>,
    pub span_dim: usize,
    pub h: Option<Vec<Vec<f64>>>,
    /// Largest `|<H, x_i y_j^T>|` over support cells.
    pub support_residual: Option<f64>,
    pub s_min: Option<f64>,
    pub l_max: Option<f64>,
    pub validity_radius: Option<f64>,
    pub verified: bool,
    pub status: CertificateStatus,
    pub value: f64,
}

impl DegeneracyCertificate {
    pub fn witness(&self) -> Option<Mat> {
        self.h.as_ref().map(|rows| {
            let d = rows.len();
            Mat::from_fn(d, d, |i, j| rows[i][j])
        })
    }
}

fn outer_vec(x: &Vector, y: &Vector) -> Vector {
    let d = x.len();
    Vector::from_fn(d * d, |k, _| x[k % d] * y[k / d])
}

/// Dual potentials maximising the smallest off-support slack.
///
/// Feasibility of `f_i + g_j = C_ij` on the support and `f_i + g_j <= C_ij - s`
/// elsewhere is a system of difference constraints, tested by Bellman-Ford;
/// the best `s` is found by bisection.
pub fn strictly_complementary_duals(c: &Mat, support: &[(usize, usize)]) -> Result<(DualPotentials, f64)> {
    let (p, q) = c.shape();
    let mut on_support = vec![false; p * q];
    for &(i, j) in support {
        on_support[j * p + i] = true;
    }
    let scale = c.amax().max(1.0);
    let feasible = |s: f64| difference_potentials(c, &on_support, s, scale);

    if on_support.iter().all(|&b| b) {
        let pot = feasible(0.0).ok_or_else(|| Error::input("support constraints are inconsistent"))?;
        return Ok((pot, f64::INFINITY));
    }
    let mut lo = 0.0;
    let mut best = feasible(0.0).ok_or_else(|| Error::input("support is not dual-consistent"))?;
    let mut hi = scale;
    let mut unbounded = true;
    for _ in 0..60 {
        match feasible(hi) {
            Some(pot) => {
                lo = hi;
                best = pot;
                hi *= 2.0;
            }
            None => {
                unbounded = false;
                break;
            }
        }
    }
    if !unbounded {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            match feasible(mid) {
                Some(pot) => {
                    lo = mid;
                    best = pot;
                }
                None => hi = mid,
            }
            if hi - lo <= 1e-13 * scale {
                break;
            }
        }
    }
    let mut s_min = f64::INFINITY;
    for j in 0..q {
        for i in 0..p {
            if !on_support[j * p + i] {
                s_min = s_min.min(c[(i, j)] - best.f[i] - best.g[j]);
            }
        }
    }
    Ok((best, s_min))
}

fn difference_potentials(c: &Mat, on_support: &[bool], s: f64, scale: f64) -> Option<DualPotentials> {
    // Nodes 0..p carry u_i = f_i, nodes p..p+q carry w_j = -g_j.
    let (p, q) = c.shape();
    let n = p + q;
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(p * q + on_support.len());
    for j in 0..q {
        for i in 0..p {
            let cij = c[(i, j)];
            if on_support[j * p + i] {
                edges.push((p + j, i, cij));
                edges.push((i, p + j, -cij));
            } else {
                edges.push((p + j, i, cij - s));
            }
        }
    }
    let eps = 1e-12 * scale;
    let mut dist = vec![0.0f64; n];
    for round in 0..=n {
        let mut changed = false;
        for &(u, v, w) in &edges {
            let cand = dist[u] + w;
            if cand < dist[v] - eps {
                dist[v] = cand;
                changed = true;
            }
        }
        if !changed {
            let f = Vector::from_fn(p, |i, _| dist[i]);
            let g = Vector::from_fn(q, |j, _| -dist[p + j]);
            return Some(DualPotentials { f, g });
        }
        if round == n {
            break;
        }
    }
    None
}

fn sorted_support(coupling: &Coupling) -> Vec<(usize, usize)> {
    let mut s = coupling.support.clone();
    s.sort_unstable();
    s
}

/// Support-orthogonal witness for the uniform-weight coupling of a paired sample.
pub fn degeneracy_certificate(sample: &PairedSample, a: &CostParam) -> Result<DegeneracyCertificate> {
    let w = sample.uniform_weights();
    degeneracy_certificate_weighted(sample.xs(), sample.ys(), &w, &w, a)
}

pub fn degeneracy_certificate_weighted(
    xs: &Mat,
    ys: &Mat,
    a_w: &Vector,
    b_w: &Vector,
    a: &CostParam,
) -> Result<DegeneracyCertificate> {
    let d = xs.ncols();
    if a.dim() != d || ys.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: if a.dim() != d { a.dim() } else { ys.ncols() },
        });
    }
    let c = cost_matrix(xs, ys, a.matrix())?;
    let (coupling, _) = solve_exact(&c, a_w, b_w)?;
    let support = sorted_support(&coupling);
    let xrow = |i: usize| xs.row(i).transpose();
    let yrow = |j: usize| ys.row(j).transpose();

    let dd = d * d;
    let mut gram = Mat::zeros(dd, dd);
    for &(i, j) in &support {
        let v = outer_vec(&xrow(i), &yrow(j));
        gram += &v * v.transpose();
    }
    let (evals, evecs) = sym_eigen_sorted(&gram);
    let sv: Vec<f64> = evals.iter().map(|e| e.max(0.0).sqrt()).collect();
    let span_dim = numerical_rank(&sv, RANK_TOL);

    let mut cert = DegeneracyCertificate {
        support: support.clone(),
        span_dim,
        h: None,
        support_residual: None,
        s_min: None,
        l_max: None,
        validity_radius: None,
        verified: false,
        status: CertificateStatus::NoWitness,
        value: coupling.value,
    };
    if span_dim >= dd {
        return Ok(cert);
    }

    let hv = evecs.column(0).into_owned();
    let h = Mat::from_iterator(d, d, hv.iter().cloned()) / hv.norm();
    let inner = |i: usize, j: usize| -> f64 { (xrow(i).transpose() * &h * yrow(j))[(0, 0)] };
    let support_residual = support.iter().map(|&(i, j)| inner(i, j).abs()).fold(0.0, f64::max);
    cert.h = Some(mat_to_rows(&h));
    cert.support_residual = Some(support_residual);

    let (_, s_min) = strictly_complementary_duals(&c, &support)?;
    let mut on_support = vec![false; c.len()];
    for &(i, j) in &support {
        on_support[j * c.nrows() + i] = true;
    }
    let mut l_max = 0.0f64;
    for j in 0..c.ncols() {
        for i in 0..c.nrows() {
            if !on_support[j * c.nrows() + i] {
                l_max = l_max.max(inner(i, j).abs());
            }
        }
    }
    cert.s_min = s_min.is_finite().then_some(s_min);
    cert.l_max = Some(l_max);
    if s_min <= STRICT_SLACK_TOL * c.amax().max(1.0) {
        cert.status = CertificateStatus::Unverifiable;
        return Ok(cert);
    }
    let radius = if l_max > 0.0 && s_min.is_finite() {
        Some(s_min / (2.0 * l_max))
    } else {
        None
    };
    cert.validity_radius = radius;

    // A re-solve at a finite step is still informative when the radius is unbounded.
    let r = radius.unwrap_or(1.0);
    let mut ok = true;
    for sign in [1.0, -1.0] {
        let shifted = a.matrix() + &h * (sign * r);
        let cs = cost_matrix(xs, ys, &shifted)?;
        let (other, _) = solve_exact(&cs, a_w, b_w)?;
        let same_support = sorted_support(&other) == support;
        let same_value = (other.value - coupling.value).abs() <= RESOLVE_TOL * coupling.value.abs().max(1.0);
        ok &= same_support && same_value;
    }
    cert.verified = ok;
    cert.status = if ok {
        CertificateStatus::Verified
    } else {
        CertificateStatus::Rejected
    };
    Ok(cert)
}

/// Bump width around each knot `t_k = k`.
pub const BUMP_HALF_WIDTH: f64 = 1.0 / 3.0;

/// Profile `(1 - s^2)^3` on `[-1, 1]`, a C^2 bump equal to 1 at 0.
pub fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - s * s).powi(3)
    }
}

fn bump_int(s: f64) -> f64 {
    let s = s.clamp(-1.0, 1.0);
    let s2 = s * s;
    s * (1.0 - s2 + 0.6 * s2 * s2 - s2 * s2 * s2 / 7.0) + 16.0 / 35.0
}

fn bump_int2(s: f64) -> f64 {
    if s <= -1.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return bump_int2_inner(1.0) + bump_int(1.0) * (s - 1.0);
    }
    bump_int2_inner(s)
}

fn bump_int2_inner(s: f64) -> f64 {
    let s2 = s * s;
    s2 / 2.0 - s2 * s2 / 4.0 + s2 * s2 * s2 / 10.0 - s2 * s2 * s2 * s2 / 56.0 + 16.0 * s / 35.0 + 0.125
}

/// Convex ridge sum `psi(z) = sum_k g_k(u_k^T z)` with `g_k'' = bump((t - t_k) / h)`.
#[derive(Clone, Debug, Serialize)]
pub struct GenericPerturbation {
    pub knots: Vec<f64>,
    pub half_width: f64,
    pub directions: Vec<Vec<f64>>,
    #[serde(serialize_with = "crate::losses::serialize_row_major")]
    pub a: Mat,
}

impl GenericPerturbation {
    fn direction(&self, k: usize) -> Vector {
        Vector::from_column_slice(&self.directions[k])
    }

    pub fn g(&self, k: usize, t: f64) -> f64 {
        let h = self.half_width;
        h * h * bump_int2((t - self.knots[k]) / h)
    }

    pub fn g_prime(&self, k: usize, t: f64) -> f64 {
        let h = self.half_width;
        let s = (t - self.knots[k]) / h;
        if s <= -1.0 {
            0.0
        } else {
            h * bump_int(s)
        }
    }

    pub fn g_second(&self, k: usize, t: f64) -> f64 {
        bump((t - self.knots[k]) / self.half_width)
    }

    pub fn value(&self, z: &Vector) -> f64 {
        (0..self.knots.len()).map(|k| self.g(k, self.direction(k).dot(z))).sum()
    }

    pub fn gradient(&self, z: &Vector) -> Vector {
        let mut out = Vector::zeros(z.len());
        for k in 0..self.knots.len() {
            let u = self.direction(k);
            out += &u * self.g_prime(k, u.dot(z));
        }
        out
    }

    pub fn hessian(&self, z: &Vector) -> Mat {
        let d = z.len();
        let mut out = Mat::zeros(d, d);
        for k in 0..self.knots.len() {
            let u = self.direction(k);
            out += &u * u.transpose() * self.g_second(k, u.dot(z));
        }
        out
    }

    /// Perturbation map `x -> grad psi(A^T x)`.
    pub fn map(&self, x: &Vector) -> Vector {
        self.gradient(&(self.a.transpose() * x))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DeltaCheck {
    pub delta: f64,
    pub determinant: f64,
    pub rank_full: usize,
    pub spans_full: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationReport {
    pub points_used: Vec<Vec<f64>>,
    pub profile: String,
    /// Pairs `(k, l)`, `k != l`, where `g_k''(u_k^T A^T x_l) > 0`.
    pub cross_talk: Vec<(usize, usize)>,
    pub checks: Vec<DeltaCheck>,
    pub min_second_derivative: f64,
}

/// Builds the ridge perturbation from points whose outer products span `S_d`.
///
/// `base_hessian` evaluates the Hessian of the unperturbed potential at `A^T x`.
pub fn build_generic_perturbation<F>(
    a: &CostParam,
    points: &[Vector],
    base_hessian: F,
    deltas: &[f64],
) -> Result<(GenericPerturbation, PerturbationReport)>
where
    F: Fn(&Vector) -> Result<Mat>,
{
    let d = a.dim();
    let p = d * (d + 1) / 2;
    let a_inv = a
        .matrix()
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::param("A must be invertible"))?;

    let mut chosen: Vec<Vector> = Vec::with_capacity(p);
    let mut rows: Vec<Vector> = Vec::with_capacity(p);
    for x in points {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        if chosen.len() == p || x.norm() == 0.0 {
            continue;
        }
        let mut trial = rows.clone();
        trial.push(svec(&(x * x.transpose())));
        let scale = singular_values_of_rows(&trial).iter().cloned().fold(0.0, f64::max);
        if rank_with_scale(&trial, scale, RANK_TOL) == trial.len() {
            rows = trial;
            chosen.push(x.clone());
        }
    }
    if chosen.len() < p {
        return Err(Error::input(format!(
            "outer products of the points span dimension {} < {p}",
            chosen.len()
        )));
    }

    let knots: Vec<f64> = (1..=p).map(|k| k as f64).collect();
    let directions: Vec<Vec<f64>> = chosen
        .iter()
        .zip(&knots)
        .map(|(x, &t)| (&a_inv * x * (t / x.norm_squared())).iter().cloned().collect())
        .collect();
    let pert = GenericPerturbation {
        knots,
        half_width: BUMP_HALF_WIDTH,
        directions,
        a: a.matrix().clone(),
    };

    let evals: Vec<Vector> = chosen.iter().map(|x| a.matrix().transpose() * x).collect();
    let mut cross_talk = Vec::new();
    for k in 0..p {
        let u = pert.direction(k);
        for (l, z) in evals.iter().enumerate() {
            if l != k && pert.g_second(k, u.dot(z)) > 0.0 {
                cross_talk.push((k, l));
            }
        }
    }

    let base: Vec<Mat> = evals.iter().map(&base_hessian).collect::<Result<_>>()?;
    let mut checks = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let hs: Vec<Mat> = base
            .iter()
            .zip(&evals)
            .map(|(b, z)| b + pert.hessian(z) * delta)
            .collect();
        let q = Mat::from_fn(p, p, |r, c| svec(&hs[c])[r]);
        let rep = spanning_check(&hs, RANK_TOL)?;
        checks.push(DeltaCheck {
            delta,
            determinant: q.determinant(),
            rank_full: rep.rank_full,
            spans_full: rep.spans_full,
        });
    }

    let mut min_second = f64::INFINITY;
    for k in 0..p {
        let t = pert.knots[k];
        for s in 0..1000 {
            let x = t - 1.0 + 2.0 * s as f64 / 999.0;
            min_second = min_second.min(pert.g_second(k, x));
        }
    }

    let report = PerturbationReport {
        points_used: chosen.iter().map(|x| x.iter().cloned().collect()).collect(),
        profile: "(1 - s^2)^3 on (t_k - h, t_k + h), t_k = k, h = 1/3".to_string(),
        cross_talk,
        checks,
        min_second_derivative: min_second,
    };
    Ok((pert, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> Mat {
        Mat::from_row_slice(2, 2, &[a, b, c, d])
    }

    #[test]
    fn svec_is_isometric() {
        let a = m2(1.0, 2.0, 2.0, -3.0);
        let b = m2(0.5, -1.0, -1.0, 4.0);
        let lhs = svec(&a).dot(&svec(&b));
        let rhs = crate::linalg::frobenius_inner(&a, &b);
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn cubic_potential_hessians() {
        let hs = vec![m2(0.0, 2.0, 2.0, 2.0), m2(2.0, 2.0, 2.0, 0.0), m2(2.0, 4.0, 4.0, 2.0)];
        let rep = spanning_check(&hs, RANK_TOL).unwrap();
        assert_eq!(rep.rank_full, 2);
        assert_eq!(rep.rank_traceless, 2);
        assert!(rep.satisfied);
        assert!(!rep.span_contains_traceless);
    }

    #[test]
    fn constant_hessians_fail() {
        let id = Mat::identity(2, 2);
        let rep = spanning_check(&[id.clone(), id.clone(), id], RANK_TOL).unwrap();
        assert_eq!(rep.rank_traceless, 0);
        assert!(!rep.satisfied);
    }

    #[test]
    fn asymmetric_rejected() {
        assert!(spanning_check(&[m2(1.0, 1.0, 0.0, 1.0)], RANK_TOL).is_err());
    }

    #[test]
    fn bump_antiderivatives() {
        assert_abs_diff_eq!(bump_int(-1.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bump_int2(-1.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bump(0.0), 1.0, epsilon = 1e-15);
        let h = 1e-5;
        for &s in &[-0.7, -0.1, 0.3, 0.9] {
            let d1 = (bump_int2(s + h) - bump_int2(s - h)) / (2.0 * h);
            assert_abs_diff_eq!(d1, bump_int(s), epsilon = 1e-8);
            let d2 = (bump_int(s + h) - bump_int(s - h)) / (2.0 * h);
            assert_abs_diff_eq!(d2, bump(s), epsilon = 1e-8);
        }
    }

    #[test]
    fn diagonal_plan_witness() {
        let x = Mat::identity(2, 2);
        let sample = PairedSample::new(x.clone(), x).unwrap();
        let cert = degeneracy_certificate(&sample, &CostParam::identity(2)).unwrap();
        assert_eq!(cert.support, vec![(0, 0), (1, 1)]);
        assert_eq!(cert.span_dim, 2);
        let h = cert.witness().unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[(1, 1)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cert.s_min.unwrap(), 1.0, epsilon = 1e-9);
        assert!(cert.verified);
        assert_eq!(cert.status, CertificateStatus::Verified);
    }

    #[test]
    fn scalar_case_has_no_witness() {
        let xs = Mat::from_fn(30, 1, |i, _| (i as f64 * 0.37).sin());
        let ys = Mat::from_fn(30, 1, |i, _| (i as f64 * 0.37).sin() * 2.0);
        let sample = PairedSample::new(xs, ys).unwrap();
        let cert = degeneracy_certificate(&sample, &CostParam::identity(1)).unwrap();
        assert_eq!(cert.span_dim, 1);
        assert_eq!(cert.status, CertificateStatus::NoWitness);
        assert!(cert.h.is_none());
    }

    #[test]
    fn scalar_perturbation() {
        let a = CostParam::identity(1);
        let pts = vec![Vector::from_vec(vec![2.0])];
        let (pert, rep) = build_generic_perturbation(&a, &pts, |_| Ok(Mat::identity(1, 1)), &[0.1]).unwrap();
        assert_eq!(pert.knots, vec![1.0]);
        let z = Vector::from_vec(vec![2.0]);
        assert_abs_diff_eq!(
            pert.hessian(&z)[(0, 0)] / pert.directions[0][0].powi(2),
            1.0,
            epsilon = 1e-12
        );
        assert!(rep.min_second_derivative >= -1e-12);
        assert!(rep.checks[0].spans_full);
    }
}
