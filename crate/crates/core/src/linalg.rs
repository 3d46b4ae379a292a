//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Frobenius inner product `<A, B> = tr(A^T B)`.
pub fn frobenius_inner(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn nuclear_norm(m: &Mat) -> f64 {
    m.clone().singular_values().iter().sum()
}

pub fn operator_norm(m: &Mat) -> f64 {
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Mat) -> f64 {
    (m - m.transpose()).amax()
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted ascending.
pub fn sym_eigen_sorted(m: &Mat) -> (Vector, Mat) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Mat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    sym_eigen_sorted(m).0[0]
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_apply(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let (values, vectors) = sym_eigen_sorted(m);
    let mapped = Vector::from_iterator(values.len(), values.iter().map(|&v| f(v)));
    &vectors * Mat::from_diagonal(&mapped) * vectors.transpose()
}

fn require_spd(m: &Mat, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::param(format!("{what} must be square")));
    }
    let scale = m.amax().max(1.0);
    if asymmetry(m) > 1e-10 * scale {
        return Err(Error::param(format!("{what} is not symmetric")));
    }
    if min_eigenvalue(m) <= 0.0 {
        return Err(Error::param(format!("{what} is not positive definite")));
    }
    Ok(())
}

/// Symmetric positive-definite square root.
pub fn spd_sqrt(m: &Mat) -> Result<Mat> {
    require_spd(m, "matrix")?;
    Ok(sym_apply(m, f64::sqrt))
}

pub fn spd_inv_sqrt(m: &Mat) -> Result<Mat> {
    require_spd(m, "matrix")?;
    Ok(sym_apply(m, |v| 1.0 / v.sqrt()))
}

pub fn spd_logdet(m: &Mat) -> Result<f64> {
    require_spd(m, "matrix")?;
    Ok(sym_eigen_sorted(m).0.iter().map(|v| v.ln()).sum())
}

/// Singular value decomposition `M = U diag(s) V^T` with descending nonnegative
/// singular values and the first nonzero entry of every left singular vector
/// made positive.
#[derive(Clone, Debug)]
pub struct CanonicalSvd {
    pub u: Mat,
    pub singular_values: Vector,
    pub v: Mat,
}

pub fn svd_canonical(m: &Mat) -> CanonicalSvd {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));

    let mut out_u = Mat::zeros(rows, k);
    let mut out_v = Mat::zeros(cols, k);
    let mut out_s = Vector::zeros(k);
    for (slot, &i) in order.iter().enumerate() {
        let mut uc = u.column(i).into_owned();
        let mut vc = v_t.row(i).transpose();
        let lead = uc.iter().find(|x| x.abs() > 1e-12).copied().unwrap_or(1.0);
        if lead < 0.0 {
            uc = -uc;
            vc = -vc;
        }
        out_u.set_column(slot, &uc);
        out_v.set_column(slot, &vc);
        out_s[slot] = svd.singular_values[i];
    }
    CanonicalSvd {
        u: out_u,
        singular_values: out_s,
        v: out_v,
    }
}

/// Orthonormal basis (as columns) of the orthogonal complement of `v` in R^n.
pub fn orthogonal_complement(v: &Vector) -> Result<Mat> {
    let n = v.len();
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::param("cannot complement the zero vector"));
    }
    // Householder reflector mapping e_1 onto v / |v|; its last n-1 columns span v-perp.
    let unit = v / norm;
    let mut w = unit.clone();
    let sign = if unit[0] >= 0.0 { 1.0 } else { -1.0 };
    w[0] += sign;
    let w_norm2 = w.norm_squared();
    let h = Mat::identity(n, n) - (&w * w.transpose()) * (2.0 / w_norm2);
    Ok(h.columns(1, n - 1).into_owned())
}

/// Column-major vectorisation of a square matrix.
pub fn vec_of(m: &Mat) -> Vector {
    Vector::from_iterator(m.len(), m.iter().cloned())
}

pub fn unvec(v: &Vector, d: usize) -> Mat {
    Mat::from_iterator(d, d, v.iter().cloned())
}

/// Numerical rank: singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(singular_values: &[f64], rel_tol: f64) -> usize {
    let smax = singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
