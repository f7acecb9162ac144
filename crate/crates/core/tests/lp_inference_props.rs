mod common;

use num_rational::BigRational;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sdot::discrete::{extract_dual_face, solve_discrete, sup_over_opt, FaceShape};
use sdot::experiments::ks_statistic;
use sdot::inference::{
    asymptotic_variance_cost, cost_limit_law, hadamard_derivative, potentials_covariance, sigma_p, simulate_limit,
    CostLawMode, LimitKind, OptSet,
};
use sdot::linalg::DenseMatrix;

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_lp_strong_duality_and_face(seed in any::<u64>(), m in 2usize..=4, l in 2usize..=4) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (p, q, c) = random_rational_instance(&mut r, m, l);
        let sol = solve_discrete(&p, &q, &c).unwrap();
        prop_assert_eq!(&sol.primal_value, &sol.dual_value());
        // Plan is feasible.
        for i in 0..m {
            let row: BigRational = sol.plan[i].iter().cloned().sum();
            prop_assert_eq!(&row, &p[i]);
        }
        for j in 0..l {
            let col: BigRational = sol.plan.iter().map(|row| row[j].clone()).sum();
            prop_assert_eq!(&col, &q[j]);
        }
        let face = extract_dual_face(&sol).unwrap();
        prop_assert!(face.contains(&sol.dual_u));
        prop_assert_eq!(face.c_transform_value(&sol.dual_u), sol.primal_value.clone());
    }

    #[test]
    fn sup_over_face_matches_vertex_enumeration(seed in any::<u64>(), m in 2usize..=3, l in 2usize..=3,
                                                x in prop::collection::vec(-6i64..=6, 3)) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (p, q, c) = random_rational_instance(&mut r, m, l);
        let sol = solve_discrete(&p, &q, &c).unwrap();
        let face = extract_dual_face(&sol).unwrap();
        let x: Vec<BigRational> = x[..m].iter().map(|&v| rat(v, 1)).collect();
        prop_assert_eq!(sup_over_opt(&face, &x).unwrap(), brute_force_sup(&face, &x));
        if let FaceShape::Singleton { point } = &face.shape {
            prop_assert_eq!(face_vertices(&face).len(), 1);
            let dot: BigRational = point.iter().zip(&x).map(|(a, b)| a * b).sum();
            prop_assert_eq!(sup_over_opt(&face, &x).unwrap(), dot);
        }
    }

    #[test]
    fn sigma_p_is_a_multinomial_covariance(raw in prop::collection::vec(0.05f64..1.0, 2..6)) {
        let t: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / t).collect();
        let s = sigma_p(&p).unwrap().matrix;
        for i in 0..p.len() {
            prop_assert!((s.row_sums()[i]).abs() < 1e-14);
            for j in 0..p.len() {
                let want = if i == j { p[i] * (1.0 - p[i]) } else { -p[i] * p[j] };
                prop_assert!((s[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sigma_squared_is_gauge_invariant(raw in prop::collection::vec(0.05f64..1.0, 2..6),
                                        z in prop::collection::vec(-2.0f64..2.0, 6), lam in -50.0f64..50.0) {
        let t: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / t).collect();
        let z = &z[..p.len()];
        let shifted: Vec<f64> = z.iter().map(|v| v + lam).collect();
        let a = asymptotic_variance_cost(z, &p).unwrap();
        let b = asymptotic_variance_cost(&shifted, &p).unwrap();
        prop_assert!((a - b).abs() < 1e-10 * (1.0 + a));
        // Independent formula zᵀΣ(p)z.
        let quad = sigma_p(&p).unwrap().matrix.quad_form(z);
        prop_assert!((a - quad).abs() < 1e-12);
        // Hadamard derivative along a centered direction is linear in the direction.
        let d: Vec<f64> = (0..p.len()).map(|i| if i == 0 { 1.0 } else { -1.0 / (p.len() - 1) as f64 }).collect();
        let two_d: Vec<f64> = d.iter().map(|v| 2.0 * v).collect();
        let h1 = hadamard_derivative(OptSet::Point(z), &p, &d).unwrap();
        let h2 = hadamard_derivative(OptSet::Point(z), &p, &two_d).unwrap();
        prop_assert!((h2 - 2.0 * h1).abs() < 1e-12);
    }
}

#[test]
fn multinomial_sampler_moments() {
    let p = [0.1, 0.2, 0.3, 0.4];
    let cov = sigma_p(&p).unwrap();
    let mut r = rng(5);
    let n = 200_000;
    let mut acc = DenseMatrix::<f64>::zeros(4, 4);
    let mut mean = [0.0; 4];
    for _ in 0..n {
        let x = cov.sample(&mut r);
        assert!(x.iter().sum::<f64>().abs() < 1e-12);
        for i in 0..4 {
            mean[i] += x[i] / n as f64;
            for j in 0..4 {
                acc[(i, j)] += x[i] * x[j] / n as f64;
            }
        }
    }
    for i in 0..4 {
        assert!(mean[i].abs() < 5e-3);
        for j in 0..4 {
            assert!((acc[(i, j)] - cov.matrix[(i, j)]).abs() < 5e-3, "({i},{j})");
        }
    }
}

#[test]
fn singleton_face_law_is_gaussian() {
    // Strictly positive marginals and a generic cost: unique dual solution.
    let p = vec![rat(1, 3), rat(2, 3)];
    let q = vec![rat(1, 4), rat(3, 4)];
    let c = vec![vec![rat(0, 1), rat(2, 1)], vec![rat(3, 1), rat(1, 1)]];
    let sol = solve_discrete(&p, &q, &c).unwrap();
    let face = extract_dual_face(&sol).unwrap();
    assert!(face.is_singleton());
    let u: Vec<f64> = match &face.shape {
        FaceShape::Singleton { point } => point.iter().map(to_f64).collect(),
        _ => unreachable!(),
    };
    let pf: Vec<f64> = p.iter().map(to_f64).collect();
    let var = asymptotic_variance_cost(&u, &pf).unwrap();

    let face_f64 = extract_dual_face(
        &solve_discrete(&pf, &q.iter().map(to_f64).collect::<Vec<_>>(), &c.iter().map(|r| r.iter().map(to_f64).collect()).collect::<Vec<Vec<f64>>>())
            .unwrap(),
    )
    .unwrap();
    let law = cost_limit_law(&pf, CostLawMode::Face(&face_f64)).unwrap();
    assert!(matches!(law.kind, LimitKind::SupOfGaussian { .. }));
    let draws = simulate_limit(&law, 50_000, 9).unwrap();
    let reference = normal_draws(var, 50_000, 10);
    let ks = ks_statistic(&draws, &reference).unwrap();
    assert!(ks < 0.02, "KS {ks}");
}

#[test]
fn potentials_covariance_requires_negative_definite_restriction() {
    let h = DenseMatrix::from_rows(vec![vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
    assert!(potentials_covariance(&h, &[0.5, 0.5]).is_err());
}

#[test]
fn simulate_limit_is_seed_deterministic() {
    let law = sdot::inference::LimitLaw::gaussian(2.0);
    let a = simulate_limit(&law, 1000, 3).unwrap();
    let b = simulate_limit(&law, 1000, 3).unwrap();
    assert_eq!(a, b);
    // Prefix stability: draw i depends only on (seed, i).
    let c = simulate_limit(&law, 10, 3).unwrap();
    assert_eq!(&a[..10], &c[..]);
}
