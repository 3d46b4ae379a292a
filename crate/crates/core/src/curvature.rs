//! Grid estimator of the curvature form `f_A(B) = inf_psi |grad psi - B T_A|^2`
//! in `L^2(alpha)` and of its smallest value `m*` on the plane orthogonal to `A`.
//!
//! Nodes sit at cell centres of a regular `n x n` lattice on a rectangle. Scalar
//! potentials live on nodes, gradients on the edges between neighbouring nodes
//! (forward differences), and edge weights use the harmonic mean of `alpha`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{orthogonal_complement, sym_eigen_sorted, unvec, vec_of, Mat, Vector};
use crate::losses::CostParam;

/// Relative residual tolerance of the conjugate-gradient solves.
pub const CG_TOL: f64 = 1e-10;

/// Density and map values on a cell-centred planar grid.
#[derive(Clone, Debug)]
pub struct GridField {
    lo: [f64; 2],
    hi: [f64; 2],
    n: usize,
    h: [f64; 2],
    alpha: Vec<f64>,
    t_values: Vec<Vector>,
}

impl GridField {
    /// Samples `alpha` and `t` at the nodes; `alpha` is renormalised so that
    /// `sum alpha h_x h_y = 1`.
    pub fn new<A, T>(lo: [f64; 2], hi: [f64; 2], n: usize, alpha: A, t: T) -> Result<Self>
    where
        A: Fn(&Vector) -> f64,
        T: Fn(&Vector) -> Result<Vector>,
    {
        if n < 2 {
            return Err(Error::param("grid needs at least 2 nodes per axis"));
        }
        if !(lo[0] < hi[0] && lo[1] < hi[1]) || lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::param("grid bounds must satisfy lo < hi"));
        }
        let h = [(hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64];
        let mut alpha_v = Vec::with_capacity(n * n);
        let mut t_v = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let x = Vector::from_vec(vec![lo[0] + (i as f64 + 0.5) * h[0], lo[1] + (j as f64 + 0.5) * h[1]]);
                alpha_v.push(alpha(&x));
                let tv = t(&x)?;
                if tv.len() != 2 {
                    return Err(Error::DimensionMismatch {
                        expected: 2,
                        found: tv.len(),
                    });
                }
                t_v.push(tv);
            }
        }
        Self::from_values(lo, hi, n, alpha_v, t_v)
    }

    pub fn from_values(
        lo: [f64; 2],
        hi: [f64; 2],
        n: usize,
        mut alpha: Vec<f64>,
        t_values: Vec<Vector>,
    ) -> Result<Self> {
        if n < 2 || alpha.len() != n * n || t_values.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: alpha.len().min(t_values.len()),
            });
        }
        if alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::param("alpha must be finite and nonnegative"));
        }
        if t_values
            .iter()
            .any(|t| t.len() != 2 || t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::param("map values must be finite 2-vectors"));
        }
        let h = [(hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64];
        let mass: f64 = alpha.iter().sum::<f64>() * h[0] * h[1];
        if !(mass > 0.0) {
            return Err(Error::param("alpha has zero mass"));
        }
        for a in &mut alpha {
            *a /= mass;
        }
        Ok(Self {
            lo,
            hi,
            n,
            h,
            alpha,
            t_values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.h
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        (self.lo, self.hi)
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn t_values(&self) -> &[Vector] {
        &self.t_values
    }

    pub fn node(&self, i: usize, j: usize) -> Vector {
        Vector::from_vec(vec![
            self.lo[0] + (i as f64 + 0.5) * self.h[0],
            self.lo[1] + (j as f64 + 0.5) * self.h[1],
        ])
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i + self.n * j
    }

    fn nx_edges(&self) -> usize {
        (self.n - 1) * self.n
    }

    /// Edge weights `alpha_e h_x h_y` (x-edges first, then y-edges).
    fn edge_weights(&self) -> Vec<f64> {
        let n = self.n;
        let area = self.h[0] * self.h[1];
        let harm = |a: f64, b: f64| if a + b > 0.0 { 2.0 * a * b / (a + b) } else { 0.0 };
        let mut w = Vec::with_capacity(2 * n * (n - 1));
        for j in 0..n {
            for i in 0..n - 1 {
                w.push(harm(self.alpha[self.idx(i, j)], self.alpha[self.idx(i + 1, j)]) * area);
            }
        }
        for j in 0..n - 1 {
            for i in 0..n {
                w.push(harm(self.alpha[self.idx(i, j)], self.alpha[self.idx(i, j + 1)]) * area);
            }
        }
        w
    }

    /// Forward-difference gradient of a node field.
    fn grad(&self, psi: &[f64], out: &mut [f64]) {
        let n = self.n;
        let nx = self.nx_edges();
        for j in 0..n {
            for i in 0..n - 1 {
                out[i + (n - 1) * j] = (psi[self.idx(i + 1, j)] - psi[self.idx(i, j)]) / self.h[0];
            }
        }
        for j in 0..n - 1 {
            for i in 0..n {
                out[nx + i + n * j] = (psi[self.idx(i, j + 1)] - psi[self.idx(i, j)]) / self.h[1];
            }
        }
    }

    /// Adjoint of `grad`.
    fn grad_t(&self, edge: &[f64], out: &mut [f64]) {
        let n = self.n;
        let nx = self.nx_edges();
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            for i in 0..n - 1 {
                let v = edge[i + (n - 1) * j] / self.h[0];
                out[self.idx(i + 1, j)] += v;
                out[self.idx(i, j)] -= v;
            }
        }
        for j in 0..n - 1 {
            for i in 0..n {
                let v = edge[nx + i + n * j] / self.h[1];
                out[self.idx(i, j + 1)] += v;
                out[self.idx(i, j)] -= v;
            }
        }
    }
}

/// Vector field sampled on grid edges: x-components on x-edges, y-components on y-edges.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeField {
    values: Vec<f64>,
}

impl EdgeField {
    /// Averages a node-valued 2-vector field onto the edges.
    pub fn from_nodes(grid: &GridField, field: &[Vector]) -> Result<Self> {
        let n = grid.n;
        if field.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: field.len(),
            });
        }
        let mut values = Vec::with_capacity(2 * n * (n - 1));
        for j in 0..n {
            for i in 0..n - 1 {
                values.push(0.5 * (field[grid.idx(i, j)][0] + field[grid.idx(i + 1, j)][0]));
            }
        }
        for j in 0..n - 1 {
            for i in 0..n {
                values.push(0.5 * (field[grid.idx(i, j)][1] + field[grid.idx(i, j + 1)][1]));
            }
        }
        Ok(Self { values })
    }

    /// Discrete gradient of a node scalar field.
    pub fn gradient_of(grid: &GridField, phi: &[f64]) -> Result<Self> {
        let n = grid.n;
        if phi.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: phi.len(),
            });
        }
        let mut values = vec![0.0; 2 * n * (n - 1)];
        grid.grad(phi, &mut values);
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Weighted energy `sum_e w_e F_e^2`.
    pub fn energy(&self, grid: &GridField) -> f64 {
        grid.edge_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v * v)
            .sum()
    }
}

/// Least-squares projection of an edge field onto discrete gradients.
#[derive(Clone, Debug)]
pub struct Projection {
    /// Zero-mean node potential.
    pub psi: Vec<f64>,
    pub residual_energy: f64,
    /// Residual field `F - grad psi` on the edges.
    pub residual: Vec<f64>,
    pub iterations: usize,
}

pub fn project_onto_gradients(field: &EdgeField, grid: &GridField) -> Result<Projection> {
    let n = grid.n;
    let nodes = n * n;
    let ne = 2 * n * (n - 1);
    if field.values.len() != ne {
        return Err(Error::DimensionMismatch {
            expected: ne,
            found: field.values.len(),
        });
    }
    let w = grid.edge_weights();
    let apply = |x: &[f64], out: &mut [f64], scratch: &mut [f64]| {
        grid.grad(x, scratch);
        scratch.iter_mut().zip(&w).for_each(|(s, wi)| *s *= wi);
        grid.grad_t(scratch, out);
    };

    // Jacobi preconditioner: diagonal of grad^T W grad.
    let mut diag = vec![0.0; nodes];
    for j in 0..n {
        for i in 0..n - 1 {
            let v = w[i + (n - 1) * j] / (grid.h[0] * grid.h[0]);
            diag[grid.idx(i, j)] += v;
            diag[grid.idx(i + 1, j)] += v;
        }
    }
    for j in 0..n - 1 {
        for i in 0..n {
            let v = w[grid.nx_edges() + i + n * j] / (grid.h[1] * grid.h[1]);
            diag[grid.idx(i, j)] += v;
            diag[grid.idx(i, j + 1)] += v;
        }
    }
    let inv_diag: Vec<f64> = diag.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();

    let wf: Vec<f64> = field.values.iter().zip(&w).map(|(f, wi)| f * wi).collect();
    let mut rhs = vec![0.0; nodes];
    grid.grad_t(&wf, &mut rhs);
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut x = vec![0.0; nodes];
    let mut iterations = 0;
    if rhs_norm > 0.0 {
        let mut r = rhs.clone();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; nodes];
        let mut scratch = vec![0.0; ne];
        let max_iter = 20 * nodes + 100;
        let mut converged = false;
        while iterations < max_iter {
            let res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if res <= CG_TOL * rhs_norm {
                converged = true;
                break;
            }
            apply(&p, &mut ap, &mut scratch);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let step = rz / pap;
            for k in 0..nodes {
                x[k] += step * p[k];
                r[k] -= step * ap[k];
            }
            for k in 0..nodes {
                z[k] = r[k] * inv_diag[k];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..nodes {
                p[k] = z[k] + beta * p[k];
            }
            iterations += 1;
        }
        if !converged {
            let res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Err(Error::NonConvergence {
                solver: "conjugate gradient",
                iterations,
                residual: res / rhs_norm,
            });
        }
    }
    let mean = x.iter().sum::<f64>() / nodes as f64;
    x.iter_mut().for_each(|v| *v -= mean);

    let mut g = vec![0.0; ne];
    grid.grad(&x, &mut g);
    let residual: Vec<f64> = field.values.iter().zip(&g).map(|(f, gi)| f - gi).collect();
    let residual_energy = residual.iter().zip(&w).map(|(r, wi)| wi * r * r).sum();
    Ok(Projection {
        psi: x,
        residual_energy,
        residual,
        iterations,
    })
}

/// Curvature form in column-major `vec(B)` coordinates and its restricted minimum.
#[derive(Clone, Debug, Serialize)]
pub struct CurvatureReport {
    #[serde(serialize_with = "crate::losses::serialize_row_major")]
    pub q: Mat,
    pub m_star: f64,
    #[serde(serialize_with = "crate::losses::serialize_row_major")]
    pub minimizing_direction: Mat,
    pub grid_n: usize,
    pub cg_tol: f64,
}

impl CurvatureReport {
    /// `f_A(B)` for an arbitrary direction.
    pub fn form(&self, b: &Mat) -> f64 {
        let v = vec_of(b);
        (v.transpose() * &self.q * &v)[(0, 0)]
    }

    pub fn write_q_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let k = self.q.nrows();
        w.write_record((0..k).map(|c| format!("q{c}")))?;
        for r in 0..k {
            w.write_record((0..k).map(|c| format!("{:.17e}", self.q[(r, c)])))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Assembles `Q` from the residuals of the `d^2` basis projections and minimises
/// it over unit `B` with `<B, A> = 0`.
pub fn curvature_form(grid: &GridField, a: &CostParam) -> Result<CurvatureReport> {
    let d = 2;
    if a.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: a.dim(),
        });
    }
    let w = grid.edge_weights();
    let mut residuals: Vec<Vec<f64>> = Vec::with_capacity(d * d);
    for col in 0..d {
        for row in 0..d {
            // E_{row,col} T(x) = e_row T_col(x)
            let field: Vec<Vector> = grid
                .t_values
                .iter()
                .map(|t| {
                    let mut v = Vector::zeros(d);
                    v[row] = t[col];
                    v
                })
                .collect();
            let edge = EdgeField::from_nodes(grid, &field)?;
            residuals.push(project_onto_gradients(&edge, grid)?.residual);
        }
    }
    let k = d * d;
    let mut q = Mat::zeros(k, k);
    for r in 0..k {
        for c in 0..=r {
            let v: f64 = residuals[r]
                .iter()
                .zip(&residuals[c])
                .zip(&w)
                .map(|((x, y), wi)| wi * x * y)
                .sum();
            q[(r, c)] = v;
            q[(c, r)] = v;
        }
    }
    let (m_star, direction) = restricted_minimum(&q, a.matrix())?;
    Ok(CurvatureReport {
        q,
        m_star,
        minimizing_direction: direction,
        grid_n: grid.n,
        cg_tol: CG_TOL,
    })
}

/// Smallest value of `vec(B)^T Q vec(B)` over unit `B` orthogonal to `A`.
pub fn restricted_minimum(q: &Mat, a: &Mat) -> Result<(f64, Mat)> {
    let d = a.nrows();
    let basis = orthogonal_complement(&vec_of(a))?;
    let restricted = basis.transpose() * q * &basis;
    let (values, vectors) = sym_eigen_sorted(&restricted);
    let dir = &basis * vectors.column(0);
    Ok((values[0], unvec(&dir, d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn uniform_grid(n: usize, t: impl Fn(&Vector) -> Vector) -> GridField {
        GridField::new([0.0, 0.0], [1.0, 1.0], n, |_| 1.0, |x| Ok(t(x))).unwrap()
    }

    #[test]
    fn alpha_is_normalised() {
        let g = GridField::new([0.0, 0.0], [2.0, 1.0], 8, |x| 1.0 + x[0], |x| Ok(x.clone())).unwrap();
        let h = g.spacing();
        let mass: f64 = g.alpha().iter().sum::<f64>() * h[0] * h[1];
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
        assert!(GridField::new([0.0, 0.0], [1.0, 1.0], 4, |_| -1.0, |x| Ok(x.clone())).is_err());
    }

    #[test]
    fn gradient_projects_to_itself() {
        let g = uniform_grid(12, |x| x.clone());
        let phi: Vec<f64> = (0..144)
            .map(|k| ((k % 12) as f64 * 0.3).sin() + (k / 12) as f64 * 0.1)
            .collect();
        let field = EdgeField::gradient_of(&g, &phi).unwrap();
        let proj = project_onto_gradients(&field, &g).unwrap();
        assert!(proj.residual_energy <= 1e-10);
        let mean = phi.iter().sum::<f64>() / 144.0;
        for (a, b) in proj.psi.iter().zip(&phi) {
            assert_abs_diff_eq!(*a, b - mean, epsilon = 1e-7);
        }
    }

    #[test]
    fn constant_field_is_a_gradient() {
        let g = uniform_grid(10, |x| x.clone());
        let field: Vec<Vector> = (0..100).map(|_| Vector::from_vec(vec![0.7, -0.2])).collect();
        let proj = project_onto_gradients(&EdgeField::from_nodes(&g, &field).unwrap(), &g).unwrap();
        assert!(proj.residual_energy <= 1e-12);
        let d = proj.psi[1] - proj.psi[0];
        assert_abs_diff_eq!(d, 0.7 * g.spacing()[0], epsilon = 1e-9);
    }

    #[test]
    fn affine_map_is_degenerate() {
        let g = uniform_grid(16, |x| x * 2.0);
        let rep = curvature_form(&g, &CostParam::identity(2)).unwrap();
        let qn = rep.q.norm();
        assert!(rep.m_star <= 1e-6 * qn);
        assert_abs_diff_eq!(rep.form(&Mat::identity(2, 2)), 0.0, epsilon = 1e-8 * qn);
    }

    #[test]
    fn rotated_gradient_is_orthogonal_to_gradients() {
        let n = 15;
        let g = uniform_grid(n, |x| x.clone());
        // Rotated gradient of the bump (1 - r^2 / 0.16)^3 centred in the square.
        let field: Vec<Vector> = (0..n * n)
            .map(|k| {
                let x = g.node(k % n, k / n);
                let (dx, dy) = (x[0] - 0.5, x[1] - 0.5);
                let s = (dx * dx + dy * dy) / 0.16;
                let c = if s < 1.0 { -6.0 * (1.0 - s).powi(2) / 0.16 } else { 0.0 };
                Vector::from_vec(vec![-c * dy, c * dx])
            })
            .collect();
        let edge = EdgeField::from_nodes(&g, &field).unwrap();
        let proj = project_onto_gradients(&edge, &g).unwrap();
        let energy = edge.energy(&g);
        assert!((proj.residual_energy - energy).abs() <= 0.05 * energy);

        // Dense weighted least squares on the same discretisation.
        let nodes = n * n;
        let ne = 2 * n * (n - 1);
        let w = g.edge_weights();
        let mut dmat = Mat::zeros(ne, nodes);
        let mut unit = vec![0.0; nodes];
        let mut col = vec![0.0; ne];
        for k in 0..nodes {
            unit[k] = 1.0;
            g.grad(&unit, &mut col);
            unit[k] = 0.0;
            for e in 0..ne {
                dmat[(e, k)] = col[e] * w[e].sqrt();
            }
        }
        let rhs = Vector::from_iterator(ne, edge.values().iter().zip(&w).map(|(f, wi)| f * wi.sqrt()));
        let sol = dmat.clone().svd(true, true).solve(&rhs, 1e-12).unwrap();
        let dense = (&dmat * sol - &rhs).norm_squared();
        assert_abs_diff_eq!(proj.residual_energy, dense, epsilon = 1e-9 * energy);
    }
}
