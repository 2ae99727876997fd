use proptest::prelude::*;
use rand::Rng;

use trim_forest::cv::fold_assignment;
use trim_forest::datasets::{
    sample_scenario, Dataset, RidgeFunction, Scenario, ScenarioSpec, SCENARIO_DIM,
};
use trim_forest::egop::{
    approx_gradient, estimate_egop, importance_weights, normalize_transform, outer_product_mean,
    EgopEstimate, IndicatorMode, TransformMatrix,
};
use trim_forest::linalg::{symmetric_eigen, Matrix};
use trim_forest::mondrian::{
    sample_partition, uniform_weights, AxisBox, ForestConfig, MondrianForest, NodeKind,
};
use trim_forest::regressor::ExactOracle;
use trim_forest::rng::stream_rng;
use trim_forest::subspace::{principal_angles, top_eigvec_subspace_of, SubspaceBasis};
use trim_forest::trim::{fit_transformed, fit_trim, fit_weighted, TrimConfig, TrimMode};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 32,
        ..ProptestConfig::default()
    }
}

fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, 7);
    let xs: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
    let x = Matrix::from_row_major(n, d, xs).unwrap();
    let y = (0..n)
        .map(|i| {
            x.row(i)
                .iter()
                .enumerate()
                .map(|(j, v)| (j + 1) as f64 * v)
                .sum::<f64>()
                + rng.random::<f64>()
        })
        .collect();
    Dataset::new(x, y).unwrap()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = stream_rng(seed, 11);
    Matrix::from_row_major(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect(),
    )
    .unwrap()
}

/// Half-open membership `[l, u)`, closed at the root's upper face.
fn in_leaf(cell: &AxisBox, root: &AxisBox, x: &[f64]) -> bool {
    (0..x.len()).all(|j| {
        cell.lower()[j] <= x[j]
            && (x[j] < cell.upper()[j]
                || (cell.upper()[j] == root.upper()[j] && x[j] <= cell.upper()[j]))
    })
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn every_point_lies_in_exactly_one_leaf(seed in any::<u64>(), d in 1usize..4, lifetime in 0.5f64..8.0) {
        let data = random_data(40, d, seed);
        let forest = MondrianForest::fit(&data, &ForestConfig::new(lifetime, 3, seed)).unwrap();
        let mut rng = stream_rng(seed, 99);
        for tree in forest.trees() {
            let root = &tree.root().cell;
            for _ in 0..50 {
                let x: Vec<f64> = (0..d)
                    .map(|j| root.lower()[j] + rng.random::<f64>() * root.extent(j))
                    .collect();
                let hits: Vec<usize> = tree
                    .nodes()
                    .iter()
                    .enumerate()
                    .filter(|(_, n)| matches!(n.kind, NodeKind::Leaf { .. }) && in_leaf(&n.cell, root, &x))
                    .map(|(i, _)| i)
                    .collect();
                prop_assert_eq!(hits, vec![tree.leaf_index(&x)]);
            }
        }
    }

    #[test]
    fn node_invariants_hold(seed in any::<u64>(), d in 1usize..4, lifetime in 0.5f64..8.0) {
        let data = random_data(30, d, seed);
        let forest = MondrianForest::fit(&data, &ForestConfig::new(lifetime, 2, seed)).unwrap();
        for tree in forest.trees() {
            let nodes = tree.nodes();
            for node in nodes {
                prop_assert!(node.birth_time <= lifetime);
                for j in 0..d {
                    prop_assert!(node.cell.lower()[j] <= node.cell.upper()[j]);
                }
                if let NodeKind::Split { dim, loc, left, right } = node.kind {
                    prop_assert!(node.cell.lower()[dim] < loc && loc < node.cell.upper()[dim]);
                    prop_assert!(nodes[left].birth_time > node.birth_time);
                    prop_assert!(nodes[right].birth_time > node.birth_time);
                }
            }
            let mut routed = vec![0usize; nodes.len()];
            for i in 0..data.n() {
                routed[tree.leaf_index(data.point(i))] += 1;
            }
            for (i, node) in nodes.iter().enumerate() {
                if let NodeKind::Leaf { count, .. } = node.kind {
                    prop_assert_eq!(count, routed[i]);
                }
            }
            prop_assert_eq!(routed.iter().sum::<usize>(), data.n());
        }
    }

    #[test]
    fn forest_prediction_is_mean_of_trees(seed in any::<u64>(), d in 1usize..4) {
        let data = random_data(25, d, seed);
        let forest = MondrianForest::fit(&data, &ForestConfig::new(3.0, 4, seed)).unwrap();
        let x = random_data(1, d, seed ^ 1).point(0).to_vec();
        let trees = forest.tree_predictions(&x).unwrap();
        let mean = trees.iter().sum::<f64>() / trees.len() as f64;
        prop_assert_eq!(forest.predict(&x).unwrap(), mean);
    }

    #[test]
    fn same_seed_same_forest(seed in any::<u64>(), d in 1usize..4) {
        let data = random_data(25, d, seed);
        let cfg = ForestConfig::new(4.0, 3, seed);
        let a = MondrianForest::fit(&data, &cfg).unwrap();
        let b = MondrianForest::fit(&data, &cfg).unwrap();
        prop_assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn egop_is_symmetric_psd(seed in any::<u64>(), d in 1usize..6, n in 1usize..20) {
        let grads: Vec<Vec<f64>> = (0..n).map(|i| random_matrix(1, d, seed.wrapping_add(i as u64)).row(0).to_vec()).collect();
        let h = outer_product_mean(&grads, d).unwrap();
        prop_assert!(h.max_asymmetry() <= 1e-12);
        let eig = symmetric_eigen(&h).unwrap();
        prop_assert!(eig.values.iter().all(|&v| v >= -1e-10));
    }

    #[test]
    fn quadratic_gradients_are_exact(
        a in prop::collection::vec(-2.0f64..2.0, 3),
        b in prop::collection::vec(-2.0f64..2.0, 3),
        x in prop::collection::vec(-1.0f64..1.0, 3),
        t in 0.01f64..1.0,
    ) {
        // f(x) = Σ a_j x_j² + Σ b_j x_j + x_0 x_1
        let (a2, b2) = (a.clone(), b.clone());
        let oracle = ExactOracle::new(3, move |x: &[f64]| {
            (0..3).map(|j| a2[j] * x[j] * x[j] + b2[j] * x[j]).sum::<f64>() + x[0] * x[1]
        });
        let g = approx_gradient(&oracle, &x, t, IndicatorMode::Off).unwrap();
        let want = [
            2.0 * a[0] * x[0] + b[0] + x[1],
            2.0 * a[1] * x[1] + b[1] + x[0],
            2.0 * a[2] * x[2] + b[2],
        ];
        for j in 0..3 {
            prop_assert!((g[j] - want[j]).abs() <= 1e-12 / t + 1e-12, "coord {j}: {} vs {}", g[j], want[j]);
        }
    }

    #[test]
    fn egop_scales_with_squared_labels(seed in any::<u64>(), c in 0.1f64..10.0) {
        let data = random_data(30, 2, seed);
        let scaled = Dataset::new(data.x().clone(), data.y().iter().map(|v| c * v).collect()).unwrap();
        let cfg = ForestConfig::new(3.0, 3, seed);
        let f1 = MondrianForest::fit(&data, &cfg).unwrap();
        let f2 = MondrianForest::fit(&scaled, &cfg).unwrap();
        let h1 = estimate_egop(&f1, data.x(), 0.1, IndicatorMode::ForestAllPopulated).unwrap();
        let h2 = estimate_egop(&f2, data.x(), 0.1, IndicatorMode::ForestAllPopulated).unwrap();
        let diff = h2.matrix.sub(&h1.matrix.scaled(c * c)).unwrap().frobenius_norm();
        prop_assert!(diff <= 1e-10 * (1.0 + h2.matrix.frobenius_norm()));
    }

    #[test]
    fn normalized_transform_has_l21_norm_d(seed in any::<u64>(), d in 1usize..7) {
        let m = random_matrix(d, d, seed);
        let h = EgopEstimate {
            matrix: m.transpose().matmul(&m).unwrap(),
            step: 0.1,
            n_eval: 1,
            indicator_mode: IndicatorMode::Off,
        };
        let a = normalize_transform(&h).unwrap();
        prop_assert!((a.matrix.l21_norm() - d as f64).abs() <= 1e-10);

        let again = normalize_transform(&EgopEstimate { matrix: a.matrix.clone(), ..h.clone() }).unwrap();
        let unit = |m: &Matrix| m.scaled(1.0 / m.frobenius_norm());
        prop_assert!(unit(&again.matrix).sub(&unit(&a.matrix)).unwrap().frobenius_norm() <= 1e-10);
    }

    #[test]
    fn importance_weights_are_the_egop_diagonal(seed in any::<u64>(), d in 1usize..4) {
        let data = random_data(30, d, seed);
        let forest = MondrianForest::fit(&data, &ForestConfig::new(3.0, 3, seed)).unwrap();
        let w = importance_weights(&forest, data.x(), 0.1, IndicatorMode::ForestAllPopulated).unwrap();
        let h = estimate_egop(&forest, data.x(), 0.1, IndicatorMode::ForestAllPopulated).unwrap();
        let total: f64 = w.normalized.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        for (o, diag) in w.omega.iter().zip(h.matrix.diag()) {
            prop_assert!((o - diag).abs() <= 1e-12 * (1.0 + diag.abs()));
        }
        if !w.degenerate {
            let sum: f64 = w.omega.iter().sum();
            for (p, o) in w.normalized.iter().zip(&w.omega) {
                prop_assert!((p - o / sum).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn transformed_model_predicts_through_the_transform(seed in any::<u64>()) {
        let data = random_data(30, 3, seed);
        let m = random_matrix(3, 3, seed);
        let transform = TransformMatrix { matrix: m.clone(), source: None };
        let model = fit_transformed(&data, &transform, &TrimConfig { seed, ..TrimConfig::default() }).unwrap();
        let mut rng = stream_rng(seed, 5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect();
            let ax = m.matvec(&x).unwrap();
            prop_assert_eq!(model.predict(&x).unwrap(), model.forest.predict(&ax).unwrap());
        }
    }

    #[test]
    fn identity_transform_and_uniform_weights_match_baseline(seed in any::<u64>(), d in 1usize..6) {
        let data = random_data(30, d, seed);
        let cfg = TrimConfig { seed, ..TrimConfig::default() };
        let baseline = MondrianForest::fit(&data, &ForestConfig::new(cfg.lifetime, cfg.n_trees, seed)).unwrap();
        let identity = fit_transformed(&data, &TransformMatrix::identity(d), &cfg).unwrap();
        prop_assert_eq!(identity.forest.trees(), baseline.trees());
        let weighted = MondrianForest::fit(
            &data,
            &ForestConfig::new(cfg.lifetime, cfg.n_trees, seed).with_weights(uniform_weights(d)),
        )
        .unwrap();
        prop_assert_eq!(weighted.trees(), baseline.trees());
    }

    #[test]
    fn iterated_fits_count_rounds(seed in any::<u64>(), k in 1usize..4) {
        let data = random_data(40, 2, seed);
        let cfg = TrimConfig { seed, iterations: k, n_trees: 2, ..TrimConfig::default() };
        let fit = fit_trim(&data, &cfg).unwrap();
        prop_assert_eq!(fit.forest_fits, k);
        prop_assert_eq!(fit.egop_estimates, k);
        prop_assert_eq!(fit.rounds.len(), k);
        let again = fit_trim(&data, &cfg).unwrap();
        prop_assert_eq!(fit.model.to_json().unwrap(), again.model.to_json().unwrap());

        let weighted = fit_weighted(&data, &TrimConfig { mode: TrimMode::Reweight, ..cfg }).unwrap();
        prop_assert!((weighted.weights.normalized.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn principal_angles_are_symmetric_and_sorted(seed in any::<u64>(), d in 2usize..7, k in 1usize..3) {
        prop_assume!(k <= d);
        let u = SubspaceBasis::new(random_matrix(d, k, seed)).unwrap();
        let w = SubspaceBasis::new(random_matrix(d, k, seed ^ 0xabc)).unwrap();
        let uw = principal_angles(&u, &w).unwrap();
        let wu = principal_angles(&w, &u).unwrap();
        for (a, b) in uw.angles.iter().zip(&wu.angles) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        prop_assert!(uw.angles.windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(uw.angles.iter().all(|&a| (0.0..=std::f64::consts::FRAC_PI_2).contains(&a)));
        prop_assert_eq!(uw.max_angle, *uw.angles.last().unwrap());
    }

    #[test]
    fn principal_angles_ignore_basis_choice(seed in any::<u64>(), d in 2usize..7) {
        let k = 2.min(d);
        let raw = random_matrix(d, k, seed);
        let u = SubspaceBasis::new(raw.clone()).unwrap();
        let w = SubspaceBasis::new(random_matrix(d, k, seed ^ 0x55)).unwrap();
        let mix = Matrix::from_rows(&[[2.0, 0.5], [-1.0, 1.5]]).unwrap();
        let u2 = SubspaceBasis::new(raw.matmul(&mix).unwrap()).unwrap();
        let a = principal_angles(&u, &w).unwrap();
        let b = principal_angles(&u2, &w).unwrap();
        for (x, y) in a.angles.iter().zip(&b.angles) {
            prop_assert!((x - y).abs() <= 1e-8);
        }
    }

    #[test]
    fn top_eigenvectors_are_orthonormal(seed in any::<u64>(), d in 2usize..7) {
        let m = random_matrix(d, d, seed);
        let h = m.transpose().matmul(&m).unwrap();
        let k = d / 2;
        let top = top_eigvec_subspace_of(&h, k.max(1)).unwrap();
        let v = top.basis.columns();
        let gram = v.transpose().matmul(v).unwrap();
        prop_assert!(gram.sub(&Matrix::identity(v.ncols())).unwrap().frobenius_norm() <= 1e-10);
    }

    #[test]
    fn folds_partition_the_indices(n in 2usize..200, folds in 2usize..12, seed in any::<u64>()) {
        prop_assume!(folds <= n);
        let parts = fold_assignment(n, folds, seed).unwrap();
        prop_assert_eq!(parts.len(), folds);
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(parts, fold_assignment(n, folds, seed).unwrap());
    }

    #[test]
    fn g2_gradient_matches_finite_differences(u0 in -3.0f64..3.0, u1 in -3.0f64..3.0) {
        prop_assume!((u0 * u0 - u1 * u1).abs() > 0.05);
        let u = [u0, u1];
        let mut g = [0.0; 2];
        RidgeFunction::G2.gradient(&u, &mut g);
        let h = 1e-6;
        for j in 0..2 {
            let mut up = u;
            let mut down = u;
            up[j] += h;
            down[j] -= h;
            let fd = (RidgeFunction::G2.value(&up) - RidgeFunction::G2.value(&down)) / (2.0 * h);
            prop_assert!((fd - g[j]).abs() <= 1e-5 * (1.0 + g[j].abs()));
        }
    }
}

#[test]
fn scenario_gradients_match_finite_differences() {
    for scenario in Scenario::ALL {
        let spec = ScenarioSpec::new(scenario).with_noise(0.0);
        let (data, _) = sample_scenario(&spec, 40, 3).unwrap();
        let mut checked = 0;
        for i in 0..data.n() {
            if checked == 20 {
                break;
            }
            let x = data.point(i);
            assert_eq!(data.y()[i], spec.f(x).unwrap());
            let b = spec.b.clone();
            let u = b.matvec(x).unwrap();
            if spec.g == RidgeFunction::G2 && (u[0] * u[0] - u[1] * u[1]).abs() < 0.05 {
                continue;
            }
            let g = spec.gradient(x).unwrap();
            let h = 1e-6;
            for j in 0..SCENARIO_DIM {
                let mut up = x.to_vec();
                let mut down = x.to_vec();
                up[j] += h;
                down[j] -= h;
                let fd = (spec.f(&up).unwrap() - spec.f(&down).unwrap()) / (2.0 * h);
                assert!(
                    (fd - g[j]).abs() <= 1e-5 * (1.0 + g[j].abs()),
                    "scenario {} point {i} coord {j}: {fd} vs {}",
                    scenario.id(),
                    g[j]
                );
            }
            checked += 1;
        }
        assert_eq!(checked, 20, "scenario {}", scenario.id());
    }
}

#[test]
fn expected_leaf_count_grows_with_lifetime() {
    let unit = AxisBox::unit(2);
    let weights = uniform_weights(2);
    let trees = 4000;
    let mean_leaves = |lifetime: f64| -> f64 {
        let mut rng = stream_rng(77, (lifetime * 100.0) as u64);
        (0..trees)
            .map(|_| {
                sample_partition(&unit, lifetime, &weights, &mut rng)
                    .unwrap()
                    .n_leaves() as f64
            })
            .sum::<f64>()
            / trees as f64
    };
    let means: Vec<f64> = [0.5, 1.0, 2.0, 4.0].into_iter().map(mean_leaves).collect();
    assert!(means.windows(2).all(|p| p[0] <= p[1]), "{means:?}");
    // Unit box in two dimensions: E[leaves] = (1 + λ)².
    for (lifetime, m) in [0.5, 1.0, 2.0, 4.0].into_iter().zip(&means) {
        let want = (1.0 + lifetime) * (1.0 + lifetime);
        assert!(
            (m - want).abs() / want < 0.05,
            "λ={lifetime}: {m} vs {want}"
        );
    }
}
