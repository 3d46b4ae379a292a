//! Exact discrete optimal transport by the transportation network simplex.
//!
//! The basis is a spanning tree over `p` supply nodes, `q` demand nodes and an
//! artificial root. Artificial arcs carry a symbolic big-M cost, so potentials
//! are stored as `k * M + r` with `k` in `{-1, 0, 1}` and compared
//! lexicographically; `M` never enters floating-point arithmetic. Leaving arcs
//! follow the strongly feasible tree rule, which prevents cycling under
//! degenerate pivots.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

const MASS_TOL: f64 = 1e-9;

/// Transport plan with its support and value.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub plan: Mat,
    /// Cells with `plan[i,j] > support_tol`, in column-major order.
    pub support: Vec<(usize, usize)>,
    pub support_tol: f64,
    pub value: f64,
}

/// Dual potentials with `f_i + g_j <= C_ij`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualPotentials {
    pub f: Vector,
    pub g: Vector,
}

impl DualPotentials {
    /// `sum a_i f_i + sum b_j g_j`.
    pub fn objective(&self, a: &Vector, b: &Vector) -> f64 {
        a.dot(&self.f) + b.dot(&self.g)
    }

    /// Largest violation of `f_i + g_j <= C_ij` (0 when feasible).
    pub fn max_infeasibility(&self, c: &Mat) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..c.ncols() {
            for i in 0..c.nrows() {
                worst = worst.max(self.f[i] + self.g[j] - c[(i, j)]);
            }
        }
        worst
    }

    /// Largest `|C_ij - f_i - g_j|` over the given cells.
    pub fn max_slack_on(&self, c: &Mat, cells: &[(usize, usize)]) -> f64 {
        cells
            .iter()
            .map(|&(i, j)| (c[(i, j)] - self.f[i] - self.g[j]).abs())
            .fold(0.0, f64::max)
    }
}

impl Coupling {
    pub fn row_sums(&self) -> Vector {
        Vector::from_iterator(self.plan.nrows(), self.plan.row_iter().map(|r| r.sum()))
    }

    pub fn col_sums(&self) -> Vector {
        Vector::from_iterator(self.plan.ncols(), self.plan.column_iter().map(|c| c.sum()))
    }

    /// Writes the nonzero entries as `i,j,mass`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "j", "mass"])?;
        for j in 0..self.plan.ncols() {
            for i in 0..self.plan.nrows() {
                let m = self.plan[(i, j)];
                if m > 0.0 {
                    w.write_record([i.to_string(), j.to_string(), format!("{m:e}")])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `C[i,j] = -x_i^T A y_j`; points are rows of `xs` and `ys`.
pub fn cost_matrix(xs: &Mat, ys: &Mat, a: &Mat) -> Result<Mat> {
    if a.nrows() != xs.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: xs.ncols(),
        });
    }
    if a.ncols() != ys.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            found: ys.ncols(),
        });
    }
    Ok(-(xs * a * ys.transpose()))
}

/// `sum_ij plan[i,j] x_i y_j^T`.
pub fn plan_cross_covariance(plan: &Mat, xs: &Mat, ys: &Mat) -> Result<Mat> {
    if plan.nrows() != xs.nrows() || plan.ncols() != ys.nrows() {
        return Err(Error::DimensionMismatch {
            expected: plan.nrows(),
            found: xs.nrows(),
        });
    }
    Ok(xs.transpose() * (plan * ys))
}

fn check_weights(w: &Vector, name: &str) -> Result<()> {
    if w.is_empty() {
        return Err(Error::input(format!("{name} is empty")));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::input(format!("{name} has negative or non-finite entries")));
    }
    Ok(())
}

fn validate(c: &Mat, a: &Vector, b: &Vector) -> Result<()> {
    check_weights(a, "a")?;
    check_weights(b, "b")?;
    if c.nrows() != a.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: c.nrows(),
        });
    }
    if c.ncols() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            found: c.ncols(),
        });
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("cost matrix has non-finite entries"));
    }
    let (sa, sb) = (a.sum(), b.sum());
    if (sa - sb).abs() > MASS_TOL {
        return Err(Error::input(format!("marginal masses differ: {sa} vs {sb}")));
    }
    if sa <= 0.0 {
        return Err(Error::input("marginals carry no mass"));
    }
    Ok(())
}

/// Solves `min <C, P>` over couplings of `a` and `b`.
///
/// Zero-weight atoms are removed before pivoting and receive the tightest
/// feasible potential afterwards.
pub fn solve_exact(c: &Mat, a: &Vector, b: &Vector) -> Result<(Coupling, DualPotentials)> {
    validate(c, a, b)?;
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    if rows.len() == a.len() && cols.len() == b.len() {
        return TransportSimplex::new(a, b)?.solve(c);
    }
    let a_r = Vector::from_iterator(rows.len(), rows.iter().map(|&i| a[i]));
    let b_r = Vector::from_iterator(cols.len(), cols.iter().map(|&j| b[j]));
    let c_r = Mat::from_fn(rows.len(), cols.len(), |r, s| c[(rows[r], cols[s])]);
    let (reduced, duals_r) = TransportSimplex::new(&a_r, &b_r)?.solve(&c_r)?;

    let (p, q) = (a.len(), b.len());
    let mut plan = Mat::zeros(p, q);
    for (s, &j) in cols.iter().enumerate() {
        for (r, &i) in rows.iter().enumerate() {
            plan[(i, j)] = reduced.plan[(r, s)];
        }
    }
    let mut f = Vector::from_element(p, f64::NAN);
    let mut g = Vector::from_element(q, f64::NAN);
    for (r, &i) in rows.iter().enumerate() {
        f[i] = duals_r.f[r];
    }
    for (s, &j) in cols.iter().enumerate() {
        g[j] = duals_r.g[s];
    }
    for i in (0..p).filter(|i| a[*i] == 0.0) {
        f[i] = cols.iter().map(|&j| c[(i, j)] - g[j]).fold(f64::INFINITY, f64::min);
    }
    for j in (0..q).filter(|j| b[*j] == 0.0) {
        g[j] = (0..p).map(|i| c[(i, j)] - f[i]).fold(f64::INFINITY, f64::min);
    }
    let support = reduced.support.iter().map(|&(r, s)| (rows[r], cols[s])).collect();
    Ok((
        Coupling {
            plan,
            support,
            support_tol: reduced.support_tol,
            value: reduced.value,
        },
        DualPotentials { f, g },
    ))
}

/// Potential `k * M + r` with symbolic `M`.
#[derive(Clone, Copy, Debug, Default)]
struct Pot {
    k: i8,
    r: f64,
}

/// Network simplex state for fixed marginals; re-solving with a new cost
/// matrix starts from the previous optimal basis, which stays primal feasible.
#[derive(Clone, Debug)]
pub struct TransportSimplex {
    p: usize,
    q: usize,
    a: Vector,
    b: Vector,
    cost: Vec<f64>,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<Pot>,
    adj: Vec<Vec<(usize, usize)>>,
    next_arc: usize,
    block_size: usize,
    pivots: usize,
}

impl TransportSimplex {
    /// Weights must be strictly positive and of equal total mass.
    pub fn new(a: &Vector, b: &Vector) -> Result<Self> {
        check_weights(a, "a")?;
        check_weights(b, "b")?;
        if a.iter().chain(b.iter()).any(|v| *v <= 0.0) {
            return Err(Error::input("network simplex needs strictly positive weights"));
        }
        if (a.sum() - b.sum()).abs() > MASS_TOL {
            return Err(Error::input(format!(
                "marginal masses differ: {} vs {}",
                a.sum(),
                b.sum()
            )));
        }
        let (p, q) = (a.len(), b.len());
        let nodes = p + q + 1;
        let root = p + q;
        let real = p * q;
        let arcs = real + p + q;
        let mut s = Self {
            p,
            q,
            a: a.clone(),
            b: b.clone(),
            cost: vec![0.0; real],
            flow: vec![0.0; arcs],
            in_tree: vec![false; arcs],
            parent: vec![root; nodes],
            pred: vec![usize::MAX; nodes],
            depth: vec![1; nodes],
            pot: vec![Pot::default(); nodes],
            adj: vec![Vec::new(); nodes],
            next_arc: 0,
            block_size: ((arcs as f64).sqrt().ceil() as usize).max(10),
            pivots: 0,
        };
        s.depth[root] = 0;
        for u in 0..p + q {
            let e = real + u;
            s.flow[e] = if u < p { a[u] } else { b[u - p] };
            s.in_tree[e] = true;
            s.pred[u] = e;
            s.adj[u].push((root, e));
            s.adj[root].push((u, e));
        }
        Ok(s)
    }

    /// Total pivots performed across all solves.
    pub fn pivots(&self) -> usize {
        self.pivots
    }

    fn root(&self) -> usize {
        self.p + self.q
    }

    fn source(&self, e: usize) -> usize {
        let real = self.p * self.q;
        if e < real {
            e % self.p
        } else if e < real + self.p {
            e - real
        } else {
            self.root()
        }
    }

    fn target(&self, e: usize) -> usize {
        let real = self.p * self.q;
        if e < real {
            self.p + e / self.p
        } else if e < real + self.p {
            self.root()
        } else {
            e - real
        }
    }

    /// Reduced cost as `(k, r)`; negative when `k < 0` or `k == 0 && r < 0`.
    fn reduced_cost(&self, e: usize) -> (i8, f64) {
        let (s, t) = (self.source(e), self.target(e));
        let (ps, pt) = (self.pot[s], self.pot[t]);
        let art = if e < self.p * self.q { 0 } else { 1 };
        let c = if art == 0 { self.cost[e] } else { 0.0 };
        (art + ps.k - pt.k, c + ps.r - pt.r)
    }

    fn child_pot(&self, parent: usize, e: usize, child: usize) -> Pot {
        let (kc, c) = if e < self.p * self.q {
            (0, self.cost[e])
        } else {
            (1, 0.0)
        };
        let pp = self.pot[parent];
        if self.source(e) == parent {
            Pot {
                k: pp.k + kc,
                r: pp.r + c,
            }
        } else {
            debug_assert_eq!(self.source(e), child);
            Pot {
                k: pp.k - kc,
                r: pp.r - c,
            }
        }
    }

    /// Re-labels the subtree hanging below `start` after `start` was
    /// attached to `attach` through arc `e`.
    fn relabel_from(&mut self, start: usize, attach: usize, e: usize) {
        self.parent[start] = attach;
        self.pred[start] = e;
        self.depth[start] = self.depth[attach] + 1;
        self.pot[start] = self.child_pot(attach, e, start);
        let mut stack = vec![start];
        while let Some(w) = stack.pop() {
            for idx in 0..self.adj[w].len() {
                let (nb, arc) = self.adj[w][idx];
                if arc == self.pred[w] {
                    continue;
                }
                self.parent[nb] = w;
                self.pred[nb] = arc;
                self.depth[nb] = self.depth[w] + 1;
                self.pot[nb] = self.child_pot(w, arc, nb);
                stack.push(nb);
            }
        }
    }

    fn relabel_all(&mut self) {
        let root = self.root();
        for idx in 0..self.adj[root].len() {
            let (nb, arc) = self.adj[root][idx];
            self.relabel_from(nb, root, arc);
        }
    }

    /// Block-search pricing; returns the most negative arc of the first
    /// block containing one.
    fn find_entering(&mut self, tol: f64) -> Option<usize> {
        let arcs = self.flow.len();
        let mut best: Option<(usize, i8, f64)> = None;
        let mut cnt = self.block_size;
        let mut e = self.next_arc;
        for _ in 0..arcs {
            if !self.in_tree[e] {
                let (k, r) = self.reduced_cost(e);
                let negative = k < 0 || (k == 0 && r < -tol);
                if negative {
                    let better = match best {
                        None => true,
                        Some((_, bk, br)) => k < bk || (k == bk && r < br),
                    };
                    if better {
                        best = Some((e, k, r));
                    }
                }
            }
            e += 1;
            if e == arcs {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if best.is_some() {
                    break;
                }
                cnt = self.block_size;
            }
        }
        self.next_arc = e;
        best.map(|(e, _, _)| e)
    }

    fn pivot(&mut self, in_arc: usize) -> Result<()> {
        let first = self.source(in_arc);
        let second = self.target(in_arc);
        let (mut u, mut v) = (first, second);
        while u != v {
            if self.depth[u] >= self.depth[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        let join = u;

        let mut delta = f64::INFINITY;
        let mut u_out = usize::MAX;
        let mut side = 0;
        let mut w = first;
        while w != join {
            let e = self.pred[w];
            if self.source(e) == w && self.flow[e] < delta {
                delta = self.flow[e];
                u_out = w;
                side = 1;
            }
            w = self.parent[w];
        }
        let mut w = second;
        while w != join {
            let e = self.pred[w];
            if self.target(e) == w && self.flow[e] <= delta {
                delta = self.flow[e];
                u_out = w;
                side = 2;
            }
            w = self.parent[w];
        }
        if side == 0 {
            return Err(Error::input("transport problem is unbounded"));
        }
        let delta = delta.max(0.0);

        if delta > 0.0 {
            self.flow[in_arc] += delta;
            let mut w = first;
            while w != join {
                let e = self.pred[w];
                let f = if self.source(e) == w {
                    self.flow[e] - delta
                } else {
                    self.flow[e] + delta
                };
                self.flow[e] = f.max(0.0);
                w = self.parent[w];
            }
            let mut w = second;
            while w != join {
                let e = self.pred[w];
                let f = if self.target(e) == w {
                    self.flow[e] - delta
                } else {
                    self.flow[e] + delta
                };
                self.flow[e] = f.max(0.0);
                w = self.parent[w];
            }
        }
        let out_arc = self.pred[u_out];
        self.flow[out_arc] = 0.0;

        let (os, ot) = (self.source(out_arc), self.target(out_arc));
        for n in [os, ot] {
            let pos = self.adj[n]
                .iter()
                .position(|&(_, arc)| arc == out_arc)
                .expect("leaving arc is a tree arc");
            self.adj[n].swap_remove(pos);
        }
        self.in_tree[out_arc] = false;
        self.in_tree[in_arc] = true;
        self.adj[first].push((second, in_arc));
        self.adj[second].push((first, in_arc));

        let (start, attach) = if side == 1 { (first, second) } else { (second, first) };
        self.relabel_from(start, attach, in_arc);
        Ok(())
    }

    /// Solves for cost `c`, warm-starting from the current basis.
    pub fn solve(&mut self, c: &Mat) -> Result<(Coupling, DualPotentials)> {
        let (p, q) = (self.p, self.q);
        if c.nrows() != p || c.ncols() != q {
            return Err(Error::DimensionMismatch {
                expected: p * q,
                found: c.nrows() * c.ncols(),
            });
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("cost matrix has non-finite entries"));
        }
        let cmin = c.min();
        let range = c.max() - cmin;
        // Column-major storage matches the real-arc numbering e = j * p + i.
        for (dst, src) in self.cost.iter_mut().zip(c.iter()) {
            *dst = src - cmin;
        }
        self.relabel_all();

        let tol = 1e-13 * (1.0 + range) * (1.0 + (p + q) as f64).sqrt();
        let max_pivots = 50 * self.flow.len() + 10_000;
        let mut count = 0usize;
        while let Some(e) = self.find_entering(tol) {
            self.pivot(e)?;
            count += 1;
            if count > max_pivots {
                return Err(Error::NonConvergence {
                    solver: "network simplex",
                    iterations: count,
                    residual: f64::NAN,
                });
            }
        }
        self.pivots += count;

        let real = p * q;
        let art_flow = self.flow[real..].iter().cloned().fold(0.0, f64::max);
        let wmax = self.a.amax().max(self.b.amax());
        if art_flow > 1e-12 * wmax.max(1.0) {
            return Err(Error::input(format!(
                "transport problem infeasible: residual artificial flow {art_flow:e}"
            )));
        }

        let support_tol = 1e-10 * wmax;
        let mut plan = Mat::zeros(p, q);
        let mut support = Vec::new();
        for j in 0..q {
            for i in 0..p {
                let m = self.flow[j * p + i].max(0.0);
                plan[(i, j)] = m;
                if m > support_tol {
                    support.push((i, j));
                }
            }
        }
        let value = c.component_mul(&plan).sum();
        let duals = self.extract_duals(cmin);
        Ok((
            Coupling {
                plan,
                support,
                support_tol,
                value,
            },
            duals,
        ))
    }

    /// Chooses the smallest finite `M` that makes every real arc dual
    /// feasible, then shifts to the gauge `sum a_i f_i = 0`.
    fn extract_duals(&self, cmin: f64) -> DualPotentials {
        let (p, q) = (self.p, self.q);
        let mut m_eff = 0.0f64;
        for j in 0..q {
            for i in 0..p {
                let (k, r) = self.reduced_cost(j * p + i);
                if k > 0 {
                    m_eff = m_eff.max(-r / k as f64);
                }
            }
        }
        let value = |n: usize| self.pot[n].k as f64 * m_eff + self.pot[n].r;
        let mut f = Vector::from_iterator(p, (0..p).map(|i| -value(i) + cmin));
        let mut g = Vector::from_iterator(q, (0..q).map(|j| value(p + j)));
        let shift = self.a.dot(&f) / self.a.sum();
        f.add_scalar_mut(-shift);
        g.add_scalar_mut(shift);
        DualPotentials { f, g }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize) -> Vector {
        Vector::from_element(n, 1.0 / n as f64)
    }

    fn check_certificate(c: &Mat, a: &Vector, b: &Vector, cp: &Coupling, d: &DualPotentials) {
        assert!((cp.row_sums() - a).amax() <= 1e-9);
        assert!((cp.col_sums() - b).amax() <= 1e-9);
        assert!(d.max_infeasibility(c) <= 1e-9, "infeasible duals");
        assert!(d.max_slack_on(c, &cp.support) <= 1e-9, "slackness");
        assert!((d.objective(a, b) - cp.value).abs() <= 1e-9 * (1.0 + cp.value.abs()));
    }

    #[test]
    fn cost_matrix_examples() {
        let x = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let y = Mat::from_row_slice(1, 2, &[0.0, 1.0]);
        assert_eq!(cost_matrix(&x, &y, &Mat::identity(2, 2)).unwrap()[(0, 0)], 0.0);
        let one = Mat::from_element(1, 1, 1.0);
        assert_eq!(
            cost_matrix(&one, &one, &Mat::from_element(1, 1, 2.0)).unwrap()[(0, 0)],
            -2.0
        );
        let x = Mat::from_row_slice(1, 2, &[1.0, 1.0]);
        let y = Mat::from_row_slice(1, 2, &[1.0, -1.0]);
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        assert_eq!(cost_matrix(&x, &y, &a).unwrap()[(0, 0)], 1.0);
        assert!(cost_matrix(&x, &y, &Mat::identity(3, 3)).is_err());
    }

    #[test]
    fn single_atom() {
        let c = Mat::from_element(1, 1, 3.5);
        let (cp, d) = solve_exact(&c, &uniform(1), &uniform(1)).unwrap();
        assert_eq!(cp.plan[(0, 0)], 1.0);
        assert_eq!(cp.value, 3.5);
        check_certificate(&c, &uniform(1), &uniform(1), &cp, &d);
    }

    #[test]
    fn two_by_two_diagonal_and_antidiagonal() {
        let x = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = cost_matrix(&x, &x, &Mat::from_element(1, 1, 1.0)).unwrap();
        let (cp, d) = solve_exact(&c, &uniform(2), &uniform(2)).unwrap();
        assert_abs_diff_eq!(
            cp.plan,
            Mat::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(cp.value, -0.5, epsilon = 1e-15);
        check_certificate(&c, &uniform(2), &uniform(2), &cp, &d);

        let c = cost_matrix(&x, &x, &Mat::from_element(1, 1, -1.0)).unwrap();
        let (cp, _) = solve_exact(&c, &uniform(2), &uniform(2)).unwrap();
        assert_abs_diff_eq!(
            cp.plan,
            Mat::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]),
            epsilon = 1e-15
        );
        // C = [[0, 0], [0, 1]]: the anti-diagonal plan costs 0, the diagonal 1/2.
        assert_abs_diff_eq!(cp.value, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn mass_mismatch_is_input_error() {
        let c = Mat::zeros(2, 2);
        let a = Vector::from_vec(vec![0.5, 0.5]);
        let b = Vector::from_vec(vec![0.5, 0.6]);
        assert!(matches!(solve_exact(&c, &a, &b), Err(Error::Input(_))));
    }

    #[test]
    fn zero_weight_atoms_are_reinserted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = Mat::from_fn(4, 3, |_, _| rng.random::<f64>());
        let a = Vector::from_vec(vec![0.5, 0.0, 0.25, 0.25]);
        let b = Vector::from_vec(vec![0.0, 0.6, 0.4]);
        let (cp, d) = solve_exact(&c, &a, &b).unwrap();
        check_certificate(&c, &a, &b, &cp, &d);
        assert!(cp.plan.row(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn monotone_matching_in_one_dimension() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let c = cost_matrix(
            &Mat::from_column_slice(n, 1, &xs),
            &Mat::from_column_slice(n, 1, &ys),
            &Mat::from_element(1, 1, 0.7),
        )
        .unwrap();
        let (cp, d) = solve_exact(&c, &uniform(n), &uniform(n)).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(cp.plan[(i, i)], 1.0 / n as f64, epsilon = 1e-12);
        }
        check_certificate(&c, &uniform(n), &uniform(n), &cp, &d);
    }

    #[test]
    fn warm_start_matches_cold_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 60;
        let xs = Mat::from_fn(n, 2, |_, _| rng.random::<f64>() - 0.5);
        let ys = Mat::from_fn(n, 2, |_, _| rng.random::<f64>() - 0.5);
        let w = uniform(n);
        let mut warm = TransportSimplex::new(&w, &w).unwrap();
        for k in 0..5 {
            let u = 0.1 + 0.2 * k as f64;
            let a = Mat::from_diagonal(&Vector::from_vec(vec![u, 1.0 - u]));
            let c = cost_matrix(&xs, &ys, &a).unwrap();
            let (hot, dh) = warm.solve(&c).unwrap();
            let (cold, _) = solve_exact(&c, &w, &w).unwrap();
            assert_abs_diff_eq!(hot.value, cold.value, epsilon = 1e-12);
            check_certificate(&c, &w, &w, &hot, &dh);
        }
    }

    #[test]
    fn random_rectangular_instances_certify() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let p = rng.random_range(1..15);
            let q = rng.random_range(1..15);
            let mut a = Vector::from_fn(p, |_, _| rng.random::<f64>() + 0.01);
            let mut b = Vector::from_fn(q, |_, _| rng.random::<f64>() + 0.01);
            a /= a.sum();
            b /= b.sum();
            b *= a.sum() / b.sum();
            let c = Mat::from_fn(p, q, |_, _| rng.random::<f64>() * 10.0 - 5.0);
            let (cp, d) = solve_exact(&c, &a, &b).unwrap();
            assert!(cp.support.len() < p + q);
            check_certificate(&c, &a, &b, &cp, &d);
        }
    }

    #[test]
    fn cross_covariance_examples() {
        let x = Mat::identity(2, 2);
        let plan = Mat::identity(2, 2) * 0.5;
        assert_abs_diff_eq!(plan_cross_covariance(&plan, &x, &x).unwrap(), Mat::identity(2, 2) * 0.5);
        let xs = Mat::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let ys = Mat::from_row_slice(3, 2, &[0.0, 1.0, 2.0, 2.0, -3.0, 1.0]);
        let a = Vector::from_vec(vec![0.3, 0.7]);
        let b = Vector::from_vec(vec![0.2, 0.5, 0.3]);
        let prod = &a * b.transpose();
        let expect = (xs.transpose() * &a) * (ys.transpose() * &b).transpose();
        assert_abs_diff_eq!(plan_cross_covariance(&prod, &xs, &ys).unwrap(), expect, epsilon = 1e-14);
    }
}
