//! Entropic optimal transport by stabilised Sinkhorn scaling.
//!
//! Potentials are split into absorbed parts `(fbar, gbar)` baked into the
//! kernel `K = exp((fbar_i + gbar_j - C_ij) / eps)` and multiplicative
//! scalings `(u, v)`. Scalings are folded back into the absorbed potentials
//! whenever they leave `[e^-30, e^30]` or a kernel sum degenerates, in which
//! case the next half step is done with log-sum-exp reductions.
//!
//! Sinkhorn converges sublinearly when the plan is close to a permutation
//! (small `eps` relative to the cost range). Problems that stall are
//! finished with damped Newton steps on the dual, solved densely when small
//! and by conjugate gradients otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

const ABSORB_LOG: f64 = 30.0;
/// Problems with `p + q` at most this size use dense Newton systems.
const NEWTON_MAX_DIM: usize = 400;
/// Larger problems solve the Newton system by conjugate gradients to this
/// relative residual, with at most `CG_MAX_ITER` iterations.
const CG_FORCING: f64 = 1e-3;
const CG_MAX_ITER: usize = 2_000;
/// Newton steps allowed, and consecutive steps in the rounding regime that
/// may fail to halve the marginal error, before giving up.
const NEWTON_MAX_STEPS: usize = 200;
const NEWTON_STALE_STEPS: usize = 8;
/// Sinkhorn iterations tried before switching, at most.
const NEWTON_SWITCH: usize = 2_000;
/// Window over which the Sinkhorn contraction rate is measured.
const RATE_WINDOW: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornOptions {
    /// Target for the L-infinity marginal violation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
        }
    }
}

/// `plan_ij = a_i b_j exp((f_i + g_j - C_ij) / eps)`, gauge `sum a_i f_i = 0`.
#[derive(Clone, Debug)]
pub struct SinkhornResult {
    pub f: Vector,
    pub g: Vector,
    pub plan: Mat,
    /// `<C, plan> + eps * KL(plan | a x b)`, evaluated as the dual objective.
    pub value: f64,
    pub eps: f64,
    pub iterations: usize,
    pub marginal_error: f64,
    pub converged: bool,
}

impl SinkhornResult {
    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NonConvergence {
                solver: "sinkhorn",
                iterations: self.iterations,
                residual: self.marginal_error,
            })
        }
    }

    /// `KL(plan | a x b)` with `0 log 0 = 0`.
    pub fn kl(&self, a: &Vector, b: &Vector) -> f64 {
        let mut kl = 0.0;
        for j in 0..self.plan.ncols() {
            for i in 0..self.plan.nrows() {
                let p = self.plan[(i, j)];
                if p > 0.0 {
                    kl += p * (p / (a[i] * b[j])).ln();
                }
            }
        }
        kl
    }
}

/// `sum_ij plan[i,j] x_i y_j^T`.
pub fn entropic_cross_covariance(result: &SinkhornResult, xs: &Mat, ys: &Mat) -> Result<Mat> {
    crate::exact_ot::plan_cross_covariance(&result.plan, xs, ys)
}

pub fn solve_entropic(c: &Mat, a: &Vector, b: &Vector, eps: f64, tol: f64, max_iter: usize) -> Result<SinkhornResult> {
    solve_entropic_warm(c, a, b, eps, &SinkhornOptions { tol, max_iter }, None)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

struct State<'a> {
    c: &'a Mat,
    a: &'a Vector,
    b: &'a Vector,
    eps: f64,
    fbar: Vector,
    gbar: Vector,
    u: Vector,
    v: Vector,
    kernel: Mat,
}

impl State<'_> {
    fn rebuild_kernel(&mut self) {
        let eps = self.eps;
        for j in 0..self.c.ncols() {
            let gj = self.gbar[j];
            let col = self.kernel.column_mut(j);
            for (i, k) in col.into_iter().enumerate() {
                *k = ((self.fbar[i] + gj - self.c[(i, j)]) / eps).exp();
            }
        }
    }

    fn absorb(&mut self) {
        let eps = self.eps;
        self.fbar.zip_apply(&self.u, |f, u| *f += eps * u.ln());
        self.gbar.zip_apply(&self.v, |g, v| *g += eps * v.ln());
        self.u.fill(1.0);
        self.v.fill(1.0);
    }

    /// Exact row update in the log domain, then a fresh kernel.
    fn log_row_update(&mut self) {
        let eps = self.eps;
        for i in 0..self.c.nrows() {
            let lse = log_sum_exp((0..self.c.ncols()).map(|j| self.b[j].ln() + (self.gbar[j] - self.c[(i, j)]) / eps));
            self.fbar[i] = -eps * lse;
        }
        self.u.fill(1.0);
        self.rebuild_kernel();
    }

    fn log_col_update(&mut self) {
        let eps = self.eps;
        for j in 0..self.c.ncols() {
            let lse = log_sum_exp((0..self.c.nrows()).map(|i| self.a[i].ln() + (self.fbar[i] - self.c[(i, j)]) / eps));
            self.gbar[j] = -eps * lse;
        }
        self.v.fill(1.0);
        self.rebuild_kernel();
    }

    fn out_of_range(x: &Vector) -> bool {
        x.iter().any(|s| !(s.ln().abs() <= ABSORB_LOG))
    }

    fn degenerate(x: &Vector) -> bool {
        x.iter().any(|s| !(s.is_finite() && *s > 0.0))
    }
}

fn plan_from(c: &Mat, a: &Vector, b: &Vector, eps: f64, f: &Vector, g: &Vector) -> Mat {
    Mat::from_fn(a.len(), b.len(), |i, j| {
        a[i] * b[j] * ((f[i] + g[j] - c[(i, j)]) / eps).exp()
    })
}

/// Inputs of one entropic problem.
struct Problem<'a> {
    c: &'a Mat,
    a: &'a Vector,
    b: &'a Vector,
    eps: f64,
}

impl Problem<'_> {
    fn plan(&self, f: &Vector, g: &Vector) -> Mat {
        plan_from(self.c, self.a, self.b, self.eps, f, g)
    }
}

/// Dense Newton direction from the Cholesky factor of the dual Hessian.
fn dense_direction(plan: &Mat, rows: &Vector, cols: &Vector, grad: &Vector, eps: f64) -> Option<Vector> {
    let (p, q) = plan.shape();
    let n = p + q - 1;
    let mut hess = Mat::zeros(n, n);
    for i in 0..p {
        hess[(i, i)] = rows[i] / eps;
    }
    for j in 0..q - 1 {
        hess[(p + j, p + j)] = cols[j] / eps;
        for i in 0..p {
            hess[(i, p + j)] = plan[(i, j)] / eps;
            hess[(p + j, i)] = plan[(i, j)] / eps;
        }
    }
    let jitter = 1e-14 * hess.diagonal().amax();
    let mut h = hess.clone();
    for k in 0..n {
        h[(k, k)] += jitter;
    }
    if let Some(ch) = h.cholesky() {
        return Some(-ch.solve(grad));
    }
    hess.lu().solve(grad).map(|s| -s)
}

/// Inexact Newton direction by Jacobi-preconditioned conjugate gradients,
/// using only products with the plan.
fn cg_direction(plan: &Mat, rows: &Vector, cols: &Vector, grad: &Vector, eps: f64) -> Option<Vector> {
    let (p, q) = plan.shape();
    let n = p + q - 1;
    let apply = |x: &Vector| -> Vector {
        let mut y = Vector::zeros(q);
        y.rows_mut(0, q - 1).copy_from(&x.rows(p, q - 1));
        let top = plan * &y + rows.component_mul(&x.rows(0, p));
        let bottom = plan.tr_mul(&x.rows(0, p)) + cols.component_mul(&y);
        let mut out = Vector::zeros(n);
        out.rows_mut(0, p).copy_from(&top);
        out.rows_mut(p, q - 1).copy_from(&bottom.rows(0, q - 1));
        out / eps
    };
    let diag = Vector::from_fn(n, |k, _| if k < p { rows[k] / eps } else { cols[k - p] / eps });
    if diag.iter().any(|d| !(*d > 0.0)) {
        return None;
    }
    let rhs = -grad;
    let target = CG_FORCING * rhs.norm();
    let mut x = Vector::zeros(n);
    let mut r = rhs.clone();
    let mut z = r.component_div(&diag);
    let mut d = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..CG_MAX_ITER.min(4 * n) {
        if r.norm() <= target {
            break;
        }
        let hd = apply(&d);
        let curv = d.dot(&hd);
        if !(curv > 0.0) {
            break;
        }
        let alpha = rz / curv;
        x.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &hd, 1.0);
        z = r.component_div(&diag);
        let rz_new = r.dot(&z);
        d = &z + &d * (rz_new / rz);
        rz = rz_new;
    }
    if x.iter().all(|v| v.is_finite()) && x.dot(grad) < 0.0 {
        Some(x)
    } else {
        None
    }
}

fn marginal_error(plan: &Mat, a: &Vector, b: &Vector) -> (Vector, Vector, f64) {
    let rows = Vector::from_iterator(a.len(), plan.row_iter().map(|r| r.sum()));
    let cols = Vector::from_iterator(b.len(), plan.column_iter().map(|c| c.sum()));
    let err = (&rows - a).amax().max((&cols - b).amax());
    (rows, cols, err)
}

/// Damped Newton on the convex dual `phi(f, g)` with `g_{q-1}` held fixed.
///
/// Once the predicted decrease of `phi` is below its rounding level, steps
/// are accepted when they shrink the marginal error instead.
/// Returns the iterations used and the final marginal error.
fn newton_polish(prob: &Problem, f: &mut Vector, g: &mut Vector, tol: f64, max_iter: usize) -> (usize, f64) {
    let (p, q) = (prob.a.len(), prob.b.len());
    let n = p + q - 1;
    let mut plan = prob.plan(f, g);
    let (mut rows, mut cols, mut err) = marginal_error(&plan, prob.a, prob.b);
    let mut stale = 0;
    for it in 0..max_iter.min(NEWTON_MAX_STEPS) {
        if err <= tol {
            return (it, err);
        }
        let mut grad = Vector::zeros(n);
        grad.rows_mut(0, p).copy_from(&(&rows - prob.a));
        grad.rows_mut(p, q - 1).copy_from(&(&cols - prob.b).rows(0, q - 1));
        let step = if p + q <= NEWTON_MAX_DIM {
            dense_direction(&plan, &rows, &cols, &grad, prob.eps)
        } else {
            cg_direction(&plan, &rows, &cols, &grad, prob.eps)
        };
        let Some(step) = step else { return (it, err) };
        let slope = grad.dot(&step);
        let base = prob.eps * plan.sum() - prob.a.dot(f) - prob.b.dot(g);
        let noisy = -slope <= 1e-12 * (base.abs() + prob.eps);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let fn_ = Vector::from_fn(p, |i, _| f[i] + t * step[i]);
            let gn = Vector::from_fn(q, |j, _| if j + 1 < q { g[j] + t * step[p + j] } else { g[j] });
            let pn = prob.plan(&fn_, &gn);
            let val = prob.eps * pn.sum() - prob.a.dot(&fn_) - prob.b.dot(&gn);
            if val.is_finite() {
                let marg = marginal_error(&pn, prob.a, prob.b);
                let ok = if noisy {
                    marg.2 < err
                } else {
                    val <= base + 1e-4 * t * slope
                };
                if ok {
                    accepted = Some((fn_, gn, pn, marg));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((fn_, gn, pn, (r, c, e))) = accepted else {
            return (it, err);
        };
        stale = if noisy && e > 0.5 * err { stale + 1 } else { 0 };
        *f = fn_;
        *g = gn;
        plan = pn;
        (rows, cols, err) = (r, c, e);
        if stale >= NEWTON_STALE_STEPS {
            return (it + 1, err);
        }
    }
    (max_iter.min(NEWTON_MAX_STEPS), err)
}

/// Whether the contraction over the last `RATE_WINDOW` iterations predicts
/// more than `NEWTON_SWITCH / 4` further iterations to reach `tol`.
fn stalled(previous: f64, current: f64, tol: f64) -> bool {
    if !previous.is_finite() || current <= tol {
        return false;
    }
    let rate = current / previous;
    if rate >= 1.0 {
        return true;
    }
    let remaining = RATE_WINDOW as f64 * (tol / current).ln() / rate.ln();
    remaining > (NEWTON_SWITCH / 4) as f64
}

/// Sinkhorn with optional warm-start potentials `(f, g)`.
pub fn solve_entropic_warm(
    c: &Mat,
    a: &Vector,
    b: &Vector,
    eps: f64,
    opts: &SinkhornOptions,
    warm: Option<(&Vector, &Vector)>,
) -> Result<SinkhornResult> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::param(format!("eps must be positive, got {eps}")));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::param("sinkhorn tolerance and iteration cap must be positive"));
    }
    let (p, q) = (a.len(), b.len());
    if c.nrows() != p || c.ncols() != q {
        return Err(Error::DimensionMismatch {
            expected: p * q,
            found: c.nrows() * c.ncols(),
        });
    }
    if a.iter().chain(b.iter()).any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::input("sinkhorn needs strictly positive weights"));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("cost matrix has non-finite entries"));
    }
    if (a.sum() - b.sum()).abs() > 1e-9 {
        return Err(Error::input(format!(
            "marginal masses differ: {} vs {}",
            a.sum(),
            b.sum()
        )));
    }

    let (fbar, gbar) = match warm {
        Some((f, g)) if f.len() == p && g.len() == q && f.iter().chain(g.iter()).all(|v| v.is_finite()) => {
            (f.clone(), g.clone())
        }
        Some(_) => return Err(Error::input("warm-start potentials have the wrong shape")),
        None => (Vector::zeros(p), Vector::zeros(q)),
    };
    let mut st = State {
        c,
        a,
        b,
        eps,
        fbar,
        gbar,
        u: Vector::from_element(p, 1.0),
        v: Vector::from_element(q, 1.0),
        kernel: Mat::zeros(p, q),
    };
    st.log_row_update();
    st.log_col_update();

    let budget = opts.max_iter.min(NEWTON_SWITCH);
    let mut iterations = 0;
    let mut row_err = f64::INFINITY;
    let mut converged = false;
    let mut checkpoint = f64::INFINITY;
    while iterations < budget {
        let bv = b.component_mul(&st.v);
        let t = &st.kernel * &bv;
        row_err = (0..p).map(|i| (a[i] * st.u[i] * t[i] - a[i]).abs()).fold(0.0, f64::max);
        if row_err <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= RATE_WINDOW && iterations % RATE_WINDOW == 0 {
            if stalled(checkpoint, row_err, opts.tol) {
                break;
            }
            checkpoint = row_err;
        }
        iterations += 1;

        let u_new = t.map(|s| 1.0 / s);
        if State::degenerate(&u_new) {
            st.absorb();
            st.log_row_update();
        } else {
            st.u = u_new;
        }
        let au = a.component_mul(&st.u);
        let s = st.kernel.tr_mul(&au);
        let v_new = s.map(|s| 1.0 / s);
        if State::degenerate(&v_new) {
            st.absorb();
            st.log_col_update();
        } else {
            st.v = v_new;
        }
        if State::out_of_range(&st.u) || State::out_of_range(&st.v) {
            st.absorb();
            st.rebuild_kernel();
        }
    }

    let (mut fbar, mut gbar, plan) = if !converged && iterations < opts.max_iter {
        st.absorb();
        let (mut f, mut g) = (st.fbar, st.gbar);
        let prob = Problem { c, a, b, eps };
        let (used, err) = newton_polish(&prob, &mut f, &mut g, opts.tol, opts.max_iter - iterations);
        iterations += used;
        row_err = err;
        converged = err <= opts.tol;
        let plan = plan_from(c, a, b, eps, &f, &g);
        (f, g, plan)
    } else {
        // The kernel buffer becomes the plan diag(a u) K diag(b v).
        let mut plan = std::mem::take(&mut st.kernel);
        for j in 0..q {
            let bv = b[j] * st.v[j];
            for (i, x) in plan.column_mut(j).iter_mut().enumerate() {
                *x *= a[i] * st.u[i] * bv;
            }
        }
        st.absorb();
        (st.fbar, st.gbar, plan)
    };
    let shift = a.dot(&fbar) / a.sum();
    fbar.add_scalar_mut(-shift);
    gbar.add_scalar_mut(shift);

    let rows = Vector::from_iterator(p, plan.row_iter().map(|r| r.sum()));
    let cols = Vector::from_iterator(q, plan.column_iter().map(|c| c.sum()));
    let marginal_error = (rows - a).amax().max((cols - b).amax());
    let value = a.dot(&fbar) + b.dot(&gbar) - eps * plan.sum() + eps * a.sum();
    if !converged {
        row_err = row_err.max(marginal_error);
    }
    Ok(SinkhornResult {
        f: fbar,
        g: gbar,
        plan,
        value,
        eps,
        iterations,
        marginal_error: if converged { marginal_error } else { row_err },
        converged,
    })
}
