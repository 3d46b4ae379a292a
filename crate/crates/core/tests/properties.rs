//! Property tests for the invariants of each module.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use iot_core::curvature::{curvature_form, restricted_minimum, GridField};
use iot_core::entropic_ot::solve_entropic;
use iot_core::estimator::{minimize, prox_step, EstimatorConfig};
use iot_core::exact_ot::{cost_matrix, solve_exact};
use iot_core::gaussian::{closed_form_l_eps, EllipticalPair, GaussianClosedForm};
use iot_core::identifiability::{degeneracy_certificate, spanning_check, RANK_TOL};
use iot_core::linalg::{spd_sqrt, sym_eigen_sorted};
use iot_core::losses::{l0_empirical, segment_min_projection, segment_min_projection_scan, CostParam, Regularizer};
use iot_core::measures::{paired_from_map, sample, DistributionSpec, PairedSample, PolynomialPotential, TransportMap};

type Mat = DMatrix<f64>;
type Vector = DVector<f64>;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Mat> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Mat::from_vec(rows, cols, v))
}

fn weights(k: usize) -> impl Strategy<Value = Vector> {
    prop::collection::vec(1u32..8, k).prop_map(|v| {
        let total: u32 = v.iter().sum();
        Vector::from_iterator(v.len(), v.iter().map(|&x| x as f64 / total as f64))
    })
}

fn problem(max: usize) -> impl Strategy<Value = (Mat, Vector, Vector)> {
    (1..=max, 1..=max).prop_flat_map(|(p, q)| (matrix(p, q, -2.0, 2.0), weights(p), weights(q)))
}

fn gaussian_points(n: usize, d: usize, seed: u64) -> Mat {
    sample(&DistributionSpec::standard_gaussian(d), n, seed)
        .unwrap()
        .points()
        .clone()
}

fn invertible2() -> impl Strategy<Value = Mat> {
    matrix(2, 2, -2.0, 2.0).prop_filter("well conditioned", |m| {
        let s = m.clone().singular_values();
        s.min() > 0.1 * s.max()
    })
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn sampling_is_deterministic_and_normalised(seed in 0u64..1000, n in 1usize..60) {
        let spec = DistributionSpec::PushforwardPerturbed {
            base: Box::new(DistributionSpec::standard_gaussian(2)),
            delta: 0.3,
            potential: PolynomialPotential::x2y_plus_xy2(),
        };
        let s1 = sample(&spec, n, seed).unwrap();
        let s2 = sample(&spec, n, seed).unwrap();
        prop_assert_eq!(s1.points(), s2.points());
        prop_assert!((s1.weights().sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn pushforward_equals_mapped_base(seed in 0u64..1000, delta in 0.0f64..0.5) {
        let potential = PolynomialPotential::x2y_plus_xy2();
        let base = DistributionSpec::standard_gaussian(2);
        let spec = DistributionSpec::PushforwardPerturbed {
            base: Box::new(base.clone()),
            delta,
            potential: potential.clone(),
        };
        let pushed = sample(&spec, 20, seed).unwrap();
        let mapped = paired_from_map(
            &sample(&base, 20, seed).unwrap(),
            &TransportMap::PerturbedGradient { delta, potential },
        )
        .unwrap();
        prop_assert!((pushed.points() - mapped.ys()).amax() <= 1e-12);
    }

    #[test]
    fn exact_solver_has_zero_duality_gap((c, a, b) in problem(5)) {
        let (coupling, duals) = solve_exact(&c, &a, &b).unwrap();
        prop_assert!((duals.objective(&a, &b) - coupling.value).abs() <= 1e-9);
        prop_assert!(duals.max_infeasibility(&c) <= 1e-9);
        prop_assert!((coupling.row_sums() - &a).amax() <= 1e-12);
        prop_assert!((coupling.col_sums() - &b).amax() <= 1e-12);
        prop_assert!(coupling.plan.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn exact_value_scales_with_cost((c, a, b) in problem(5), scale in 0.1f64..10.0) {
        let (base, _) = solve_exact(&c, &a, &b).unwrap();
        let (scaled, _) = solve_exact(&(&c * scale), &a, &b).unwrap();
        prop_assert!((scaled.value - scale * base.value).abs() <= 1e-9 * scale.max(1.0));
    }

    #[test]
    fn one_dimensional_plan_is_monotone(mut xs in prop::collection::vec(-5.0f64..5.0, 2..12), seed in 0u64..100, a in 0.1f64..3.0) {
        xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
        xs.dedup_by(|p, q| (*p - *q).abs() < 1e-6);
        let n = xs.len();
        let mut ys: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % 1000) as f64 / 100.0).collect();
        ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
        ys.dedup_by(|p, q| (*p - *q).abs() < 1e-6);
        prop_assume!(ys.len() == n);
        let xm = Mat::from_column_slice(n, 1, &xs);
        let ym = Mat::from_column_slice(n, 1, &ys);
        let w = Vector::from_element(n, 1.0 / n as f64);
        let c = cost_matrix(&xm, &ym, &Mat::from_element(1, 1, a)).unwrap();
        let (coupling, _) = solve_exact(&c, &w, &w).unwrap();
        for i in 0..n {
            prop_assert!((coupling.plan[(i, i)] - w[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn sinkhorn_plan_matches_its_potentials((c, a, b) in problem(6), eps in 0.05f64..2.0, shift in -5.0f64..5.0) {
        let res = solve_entropic(&c, &a, &b, eps, 1e-11, 100_000).unwrap();
        prop_assert!(res.converged);
        prop_assert!(a.dot(&res.f).abs() <= 1e-12);
        // (f + s, g - s) gives the same plan
        let rebuilt = Mat::from_fn(a.len(), b.len(), |i, j| {
            a[i] * b[j] * (((res.f[i] + shift) + (res.g[j] - shift) - c[(i, j)]) / eps).exp()
        });
        prop_assert!((rebuilt - &res.plan).amax() <= 1e-9);
        prop_assert!(res.plan.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn entropic_value_increases_with_eps((c, a, b) in problem(6), e1 in 0.05f64..1.0, factor in 1.0f64..4.0) {
        let low = solve_entropic(&c, &a, &b, e1, 1e-11, 100_000).unwrap();
        let high = solve_entropic(&c, &a, &b, e1 * factor, 1e-11, 100_000).unwrap();
        prop_assert!(low.value <= high.value + 1e-9);
        let (exact, _) = solve_exact(&c, &a, &b).unwrap();
        prop_assert!(exact.value <= low.value + 1e-9);
    }

    #[test]
    fn gap_loss_is_convex(m1 in matrix(2, 2, -1.0, 1.0), m2 in matrix(2, 2, -1.0, 1.0), t in 0.0f64..1.0, seed in 0u64..50) {
        let s = PairedSample::new(gaussian_points(12, 2, seed), gaussian_points(12, 2, seed + 1000)).unwrap();
        let l = |m: &Mat| l0_empirical(&s, &CostParam::general(m.clone()).unwrap()).unwrap().value;
        let mix = &m1 * t + &m2 * (1.0 - t);
        prop_assert!(l(&mix) <= t * l(&m1) + (1.0 - t) * l(&m2) + 1e-9);
        prop_assert!(l(&m1) >= -1e-12);
    }

    #[test]
    fn separable_cost_shift_keeps_the_plan(seed in 0u64..50, fx in prop::collection::vec(-1.0f64..1.0, 6), gy in prop::collection::vec(-1.0f64..1.0, 6)) {
        let xs = gaussian_points(6, 2, seed);
        let ys = gaussian_points(6, 2, seed + 500);
        let c = cost_matrix(&xs, &ys, &Mat::identity(2, 2)).unwrap();
        let shifted = Mat::from_fn(6, 6, |i, j| c[(i, j)] + fx[i] + gy[j]);
        let w = Vector::from_element(6, 1.0 / 6.0);
        let (p1, _) = solve_exact(&c, &w, &w).unwrap();
        let (p2, _) = solve_exact(&shifted, &w, &w).unwrap();
        let constant: f64 = fx.iter().chain(gy.iter()).sum::<f64>() / 6.0;
        prop_assert!((p2.value - p1.value - constant).abs() <= 1e-9);
        prop_assert!((&p1.plan - &p2.plan).amax() <= 1e-12);
    }

    #[test]
    fn segment_projection_matches_scan(a in matrix(2, 2, -2.0, 2.0), a0 in matrix(2, 2, -2.0, 2.0)) {
        prop_assume!(a.norm() > 0.1 && a0.norm() > 0.1);
        let closed = segment_min_projection(&a, &a0).unwrap();
        let scan = segment_min_projection_scan(&a, &a0, 1000).unwrap();
        prop_assert!((closed - scan).abs() <= 1e-6 * (1.0 + closed));
    }

    #[test]
    fn prox_is_nonexpansive(z1 in matrix(3, 3, -3.0, 3.0), z2 in matrix(3, 3, -3.0, 3.0), tau in 0.0f64..2.0, psd in any::<bool>(), which in 0usize..3) {
        let reg = [Regularizer::NuclearNorm, Regularizer::Trace, Regularizer::Frobenius][which];
        let p1 = prox_step(&z1, tau, reg, psd, 0.0);
        let p2 = prox_step(&z2, tau, reg, psd, 0.0);
        prop_assert!((p1 - p2).norm() <= (z1 - z2).norm() + 1e-10);
    }

    #[test]
    fn spd_square_root_squares_back(m in matrix(3, 3, -1.0, 1.0)) {
        let sigma = &m * m.transpose() + Mat::identity(3, 3) * 0.1;
        let r = spd_sqrt(&sigma).unwrap();
        prop_assert!((&r * &r - &sigma).amax() <= 1e-10 * sigma.amax().max(1.0));
    }

    #[test]
    fn spanning_rank_is_conjugation_invariant(a in invertible2(), pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..5)) {
        let psi = PolynomialPotential::x2y_plus_xy2();
        let hs: Vec<Mat> = pts.iter().map(|&(x, y)| psi.hessian(&Vector::from_vec(vec![x, y])).unwrap()).collect();
        let conj: Vec<Mat> = hs.iter().map(|h| &a * h * a.transpose()).collect();
        let r1 = spanning_check(&hs, RANK_TOL).unwrap();
        let r2 = spanning_check(&conj, RANK_TOL).unwrap();
        prop_assert_eq!(r1.rank_full, r2.rank_full);
        prop_assert_eq!(r1.spans_full, r2.spans_full);
    }

    #[test]
    fn degeneracy_witness_is_orthogonal_to_support(seed in 0u64..500, n in 2usize..5) {
        let xs = gaussian_points(n, 3, seed);
        let ys = gaussian_points(n, 3, seed + 10_000);
        let s = PairedSample::new(xs, ys).unwrap();
        let cert = degeneracy_certificate(&s, &CostParam::identity(3)).unwrap();
        prop_assert!(cert.span_dim < 9);
        let h = cert.witness().unwrap();
        prop_assert!((h.norm() - 1.0).abs() <= 1e-12);
        for &(i, j) in &cert.support {
            let v = (s.xs().row(i) * &h * s.ys().row(j).transpose())[(0, 0)];
            prop_assert!(v.abs() <= 1e-9);
        }
        prop_assert!(cert.verified);
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn curvature_form_is_psd_and_ray_invariant(delta in 0.0f64..0.4, scale in 0.2f64..5.0) {
        let potential = PolynomialPotential::x2y_plus_xy2();
        let map = TransportMap::PerturbedGradient { delta, potential };
        let grid = GridField::new([0.0, 0.0], [1.0, 1.0], 12, |_| 1.0, |x| map.apply(x)).unwrap();
        let rep = curvature_form(&grid, &CostParam::identity(2)).unwrap();
        prop_assert!((&rep.q - rep.q.transpose()).amax() <= 1e-12 * rep.q.amax().max(1e-300));
        let (evals, _) = sym_eigen_sorted(&rep.q);
        prop_assert!(evals.min() >= -1e-12 * evals.amax().max(1e-300));
        let (scaled, _) = restricted_minimum(&rep.q, &(Mat::identity(2, 2) * scale)).unwrap();
        prop_assert!((scaled - rep.m_star).abs() <= 1e-12 * rep.m_star.abs().max(1e-300));
    }

    #[test]
    fn gaussian_loss_is_unbounded_below_along_the_frame(eps in 0.01f64..1.0, m in invertible2()) {
        let pair = EllipticalPair::new(Vector::zeros(2), Vector::zeros(2), Mat::identity(2, 2), m).unwrap();
        let cf = GaussianClosedForm::new(&pair, &CostParam::identity(2)).unwrap();
        let frame = cf.aligned_b(&[1.0, 1.0]).unwrap();
        let vals: Vec<f64> = [1.0, 10.0, 100.0]
            .iter()
            .map(|t| closed_form_l_eps(&(&frame * *t), cf.g_hat(), eps).unwrap())
            .collect();
        prop_assert!(vals[1] < vals[0] && vals[2] < vals[1]);
    }

    #[test]
    fn estimator_objective_never_increases(seed in 0u64..100) {
        let s = PairedSample::new(gaussian_points(40, 2, seed), gaussian_points(40, 2, seed + 77)).unwrap();
        let cfg = EstimatorConfig {
            eps: 0.5,
            max_iter: 60,
            ..EstimatorConfig::default()
        };
        let res = minimize(&s, &cfg).unwrap();
        for w in res.trajectory.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective + 1e-12);
        }
    }
}
