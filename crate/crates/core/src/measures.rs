//! Seeded samplers for the experimental distributions and the
//! empirical-measure containers.

use std::io::{Read, Write};

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Weighted point cloud; `points` holds one point per row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: Mat,
    weights: Vector,
}

impl EmpiricalMeasure {
    pub fn new(points: Mat, weights: Vector) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::input(
                "empirical measure needs at least one point of dimension >= 1",
            ));
        }
        if points.nrows() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.nrows(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::input("weights must be nonnegative"));
        }
        let total = crate::linalg::compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::input(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Mat) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::input("empirical measure needs at least one point"));
        }
        Self::new(points, Vector::from_element(n, 1.0 / n as f64))
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Mat {
        &self.points
    }

    pub fn weights(&self) -> &Vector {
        &self.weights
    }

    pub fn point(&self, i: usize) -> Vector {
        self.points.row(i).transpose()
    }

    pub fn mean(&self) -> Vector {
        self.points.transpose() * &self.weights
    }

    /// Weighted second-moment-centred covariance.
    pub fn covariance(&self) -> Mat {
        let mean = self.mean();
        let mut cov = Mat::zeros(self.dim(), self.dim());
        for i in 0..self.len() {
            let c = self.point(i) - &mean;
            cov += (&c * c.transpose()) * self.weights[i];
        }
        cov
    }

    /// CSV with header `x1,...,xd,w`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim()).map(|k| format!("x{k}")).collect();
        header.push("w".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.points.row(i).iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{:e}", self.weights[i]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let d = r.headers()?.len().saturating_sub(1);
        if d == 0 {
            return Err(Error::input("measure CSV needs at least one coordinate column"));
        }
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = parse_row(&rec, d + 1)?;
            coords.extend_from_slice(&vals[..d]);
            weights.push(vals[d]);
        }
        let n = weights.len();
        Self::new(Mat::from_row_slice(n, d, &coords), Vector::from_vec(weights))
    }
}

fn parse_row(rec: &csv::StringRecord, width: usize) -> Result<Vec<f64>> {
    if rec.len() != width {
        return Err(Error::DimensionMismatch {
            expected: width,
            found: rec.len(),
        });
    }
    rec.iter()
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::input(format!("bad number {s:?}: {e}")))
        })
        .collect()
}

/// Samples `(x_i, y_i)` of a coupling; the induced empirical plan puts mass
/// `1/n` on every pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    xs: Mat,
    ys: Mat,
}

impl PairedSample {
    pub fn new(xs: Mat, ys: Mat) -> Result<Self> {
        if xs.nrows() == 0 {
            return Err(Error::input("paired sample must be nonempty"));
        }
        if xs.nrows() != ys.nrows() {
            return Err(Error::DimensionMismatch {
                expected: xs.nrows(),
                found: ys.nrows(),
            });
        }
        if xs.ncols() != ys.ncols() {
            return Err(Error::DimensionMismatch {
                expected: xs.ncols(),
                found: ys.ncols(),
            });
        }
        Ok(Self { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.xs.ncols()
    }

    pub fn xs(&self) -> &Mat {
        &self.xs
    }

    pub fn ys(&self) -> &Mat {
        &self.ys
    }

    pub fn uniform_weights(&self) -> Vector {
        Vector::from_element(self.len(), 1.0 / self.len() as f64)
    }

    pub fn source_measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.xs.clone()).expect("nonempty by construction")
    }

    pub fn target_measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.ys.clone()).expect("nonempty by construction")
    }

    /// Cross-covariance `(1/n) sum_i x_i y_i^T` of the diagonal pairing.
    pub fn cross_covariance(&self) -> Mat {
        self.xs.transpose() * &self.ys / self.len() as f64
    }

    /// CSV with header `x1..xd,y1..yd`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.dim();
        let header: Vec<String> = (1..=d)
            .map(|k| format!("x{k}"))
            .chain((1..=d).map(|k| format!("y{k}")))
            .collect();
        w.write_record(&header)?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .xs
                .row(i)
                .iter()
                .chain(self.ys.row(i).iter())
                .map(|v| format!("{v:e}"))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let width = r.headers()?.len();
        if width == 0 || width % 2 != 0 {
            return Err(Error::input("paired CSV needs an even, nonzero column count"));
        }
        let d = width / 2;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let vals = parse_row(&rec?, width)?;
            xs.extend_from_slice(&vals[..d]);
            ys.extend_from_slice(&vals[d..]);
        }
        let n = xs.len() / d;
        Self::new(Mat::from_row_slice(n, d, &xs), Mat::from_row_slice(n, d, &ys))
    }
}

/// Bivariate polynomial `sum c * x^i * y^j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialPotential {
    /// `(i, j, c)` triples.
    pub terms: Vec<(u32, u32, f64)>,
}

fn mono(v: f64, k: u32) -> f64 {
    if k == 0 {
        1.0
    } else {
        v.powi(k as i32)
    }
}

impl PolynomialPotential {
    pub fn new(terms: Vec<(u32, u32, f64)>) -> Self {
        Self { terms }
    }

    /// `x^2 y + x y^2`.
    pub fn x2y_plus_xy2() -> Self {
        Self::new(vec![(2, 1, 1.0), (1, 2, 1.0)])
    }

    fn check(p: &Vector) -> Result<(f64, f64)> {
        if p.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: p.len(),
            });
        }
        Ok((p[0], p[1]))
    }

    pub fn value(&self, p: &Vector) -> Result<f64> {
        let (x, y) = Self::check(p)?;
        Ok(self.terms.iter().map(|&(i, j, c)| c * mono(x, i) * mono(y, j)).sum())
    }

    pub fn gradient(&self, p: &Vector) -> Result<Vector> {
        let (x, y) = Self::check(p)?;
        let mut g = Vector::zeros(2);
        for &(i, j, c) in &self.terms {
            if i > 0 {
                g[0] += c * i as f64 * mono(x, i - 1) * mono(y, j);
            }
            if j > 0 {
                g[1] += c * j as f64 * mono(x, i) * mono(y, j - 1);
            }
        }
        Ok(g)
    }

    pub fn hessian(&self, p: &Vector) -> Result<Mat> {
        let (x, y) = Self::check(p)?;
        let mut h = Mat::zeros(2, 2);
        for &(i, j, c) in &self.terms {
            let (fi, fj) = (i as f64, j as f64);
            if i > 1 {
                h[(0, 0)] += c * fi * (fi - 1.0) * mono(x, i - 2) * mono(y, j);
            }
            if j > 1 {
                h[(1, 1)] += c * fj * (fj - 1.0) * mono(x, i) * mono(y, j - 2);
            }
            if i > 0 && j > 0 {
                let v = c * fi * fj * mono(x, i - 1) * mono(y, j - 1);
                h[(0, 1)] += v;
                h[(1, 0)] += v;
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseTag {
    Gaussian,
    Annulus { r_inner: f64, r_outer: f64 },
}

/// Distributions used by the experiments. Matrices are given as rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    Annulus {
        center: Vec<f64>,
        r_inner: f64,
        r_outer: f64,
    },
    /// `(Id + delta * grad Psi) # base`.
    PushforwardPerturbed {
        base: Box<DistributionSpec>,
        delta: f64,
        potential: PolynomialPotential,
    },
    /// `mean + omega * Z` with `Z` drawn from the base.
    EllipticalSameBase {
        mean: Vec<f64>,
        omega: Vec<Vec<f64>>,
        base: BaseTag,
    },
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::param("matrix rows must be nonempty and of equal length"));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

impl DistributionSpec {
    pub fn standard_gaussian(d: usize) -> Self {
        DistributionSpec::Gaussian {
            mean: vec![0.0; d],
            cov: mat_to_rows(&Mat::identity(d, d)),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DistributionSpec::Gaussian { mean, .. } => mean.len(),
            DistributionSpec::Annulus { center, .. } => center.len(),
            DistributionSpec::PushforwardPerturbed { base, .. } => base.dim(),
            DistributionSpec::EllipticalSameBase { mean, .. } => mean.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::Gaussian { mean, cov } => {
                gaussian_factor(mean, cov)?;
            }
            DistributionSpec::Annulus {
                center,
                r_inner,
                r_outer,
            } => check_annulus(center.len(), *r_inner, *r_outer)?,
            DistributionSpec::PushforwardPerturbed { base, delta, .. } => {
                if !(*delta >= 0.0) {
                    return Err(Error::param("pushforward delta must be >= 0"));
                }
                if base.dim() != 2 {
                    return Err(Error::param("polynomial pushforward requires dimension 2"));
                }
                base.validate()?;
            }
            DistributionSpec::EllipticalSameBase { mean, omega, base } => {
                let om = mat_from_rows(omega)?;
                if om.nrows() != mean.len() || om.ncols() != mean.len() {
                    return Err(Error::DimensionMismatch {
                        expected: mean.len(),
                        found: om.nrows(),
                    });
                }
                if om.determinant().abs() < 1e-300 {
                    return Err(Error::param("elliptical factor omega must be invertible"));
                }
                if let BaseTag::Annulus { r_inner, r_outer } = base {
                    check_annulus(mean.len(), *r_inner, *r_outer)?;
                }
            }
        }
        Ok(())
    }
}

fn check_annulus(d: usize, r_inner: f64, r_outer: f64) -> Result<()> {
    if d != 2 {
        return Err(Error::param(format!("annulus sampling requires dimension 2, got {d}")));
    }
    if !(r_inner > 0.0 && r_inner < r_outer) {
        return Err(Error::param("annulus radii must satisfy 0 < r_inner < r_outer"));
    }
    Ok(())
}

fn gaussian_factor(mean: &[f64], cov: &[Vec<f64>]) -> Result<Mat> {
    let c = mat_from_rows(cov)?;
    if c.nrows() != mean.len() || c.ncols() != mean.len() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            found: c.nrows(),
        });
    }
    if crate::linalg::asymmetry(&c) > 1e-12 * c.amax().max(1.0) {
        return Err(Error::param("covariance must be symmetric"));
    }
    Cholesky::new(c)
        .map(|ch| ch.l())
        .ok_or_else(|| Error::param("covariance is not symmetric positive definite"))
}

fn standard_normal_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Mat {
    let mut m = Mat::zeros(n, d);
    for i in 0..n {
        for k in 0..d {
            m[(i, k)] = rng.sample(StandardNormal);
        }
    }
    m
}

fn annulus_rows(rng: &mut ChaCha8Rng, n: usize, r_inner: f64, r_outer: f64) -> Mat {
    let mut m = Mat::zeros(n, 2);
    let (a2, b2) = (r_inner * r_inner, r_outer * r_outer);
    for i in 0..n {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let r = (a2 + rng.random::<f64>() * (b2 - a2)).sqrt();
        m[(i, 0)] = r * theta.cos();
        m[(i, 1)] = r * theta.sin();
    }
    m
}

fn sample_points(spec: &DistributionSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Mat> {
    Ok(match spec {
        DistributionSpec::Gaussian { mean, cov } => {
            let l = gaussian_factor(mean, cov)?;
            let z = standard_normal_rows(rng, n, mean.len());
            let mut x = z * l.transpose();
            for mut row in x.row_iter_mut() {
                for (v, m) in row.iter_mut().zip(mean) {
                    *v += m;
                }
            }
            x
        }
        DistributionSpec::Annulus {
            center,
            r_inner,
            r_outer,
        } => {
            check_annulus(center.len(), *r_inner, *r_outer)?;
            let mut x = annulus_rows(rng, n, *r_inner, *r_outer);
            for mut row in x.row_iter_mut() {
                row[0] += center[0];
                row[1] += center[1];
            }
            x
        }
        DistributionSpec::PushforwardPerturbed { base, delta, potential } => {
            spec.validate()?;
            let x = sample_points(base, n, rng)?;
            let map = TransportMap::PerturbedGradient {
                delta: *delta,
                potential: potential.clone(),
            };
            map_rows(&x, &map)?
        }
        DistributionSpec::EllipticalSameBase { mean, omega, base } => {
            spec.validate()?;
            let om = mat_from_rows(omega)?;
            let d = mean.len();
            let z = match base {
                BaseTag::Gaussian => standard_normal_rows(rng, n, d),
                BaseTag::Annulus { r_inner, r_outer } => annulus_rows(rng, n, *r_inner, *r_outer),
            };
            let mut x = z * om.transpose();
            for mut row in x.row_iter_mut() {
                for (v, m) in row.iter_mut().zip(mean) {
                    *v += m;
                }
            }
            x
        }
    })
}

/// Draws `n` uniform-weight points; deterministic in `(spec, n, seed)`.
pub fn sample(spec: &DistributionSpec, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    if n == 0 {
        return Err(Error::param("sample size must be >= 1"));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmpiricalMeasure::uniform(sample_points(spec, n, &mut rng)?)
}

/// Point maps used to build couplings supported on a graph.
#[derive(Clone, Debug, PartialEq)]
pub enum TransportMap {
    Identity,
    Affine {
        matrix: Mat,
        offset: Vector,
    },
    /// `x + delta * grad Psi(x)`.
    PerturbedGradient {
        delta: f64,
        potential: PolynomialPotential,
    },
    /// Radial monotone map from the standard 2-d Gaussian onto the
    /// area-uniform annulus centred at the origin.
    GaussianToAnnulus {
        r_inner: f64,
        r_outer: f64,
    },
}

impl TransportMap {
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        match self {
            TransportMap::Identity => Ok(x.clone()),
            TransportMap::Affine { matrix, offset } => {
                if matrix.ncols() != x.len() || matrix.nrows() != offset.len() {
                    return Err(Error::DimensionMismatch {
                        expected: matrix.ncols(),
                        found: x.len(),
                    });
                }
                Ok(matrix * x + offset)
            }
            TransportMap::PerturbedGradient { delta, potential } => Ok(x + potential.gradient(x)? * *delta),
            TransportMap::GaussianToAnnulus { r_inner, r_outer } => {
                check_annulus(x.len(), *r_inner, *r_outer)?;
                let r = x.norm();
                let mass = -(-0.5 * r * r).exp_m1();
                let target = (r_inner * r_inner + (r_outer * r_outer - r_inner * r_inner) * mass).sqrt();
                if r == 0.0 {
                    return Ok(Vector::from_vec(vec![target, 0.0]));
                }
                Ok(x * (target / r))
            }
        }
    }
}

fn map_rows(x: &Mat, map: &TransportMap) -> Result<Mat> {
    let mut y = Mat::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        let yi = map.apply(&x.row(i).transpose())?;
        if yi.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                found: yi.len(),
            });
        }
        y.set_row(i, &yi.transpose());
    }
    Ok(y)
}

/// Pairs every source point with its image, `y_i = map(x_i)`.
pub fn paired_from_map(alpha: &EmpiricalMeasure, map: &TransportMap) -> Result<PairedSample> {
    PairedSample::new(alpha.points().clone(), map_rows(alpha.points(), map)?)
}
