mod common;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rocp_core::conformal::{
    aps_score, build_set_aps, calibrate_predict, conformal_quantile, quantile_index,
    CpMethod, ScoreConvention, Threshold,
};
use rocp_core::graph::{
    calib_size, generate_sbm, homophily, load_dataset, make_splits, write_dataset, GraphDataset, SbmConfig,
};
use rocp_core::models::predict_proba;
use rocp_core::tensor::softmax_rows;
use rocp_core::{Matrix, SparseMatrix};

fn sparse_and_dense() -> impl Strategy<Value = (SparseMatrix, Matrix)> {
    (1usize..=50, 1usize..=50, 1usize..=8, any::<u64>()).prop_map(|(r, c, k, seed)| {
        let mut g = rng(seed);
        let density = g.random_range(0.0..0.5);
        let mut trips = Vec::new();
        for i in 0..r {
            for j in 0..c {
                if g.random_bool(density) {
                    trips.push((i, j, g.random_range(-2.0..2.0)));
                }
            }
        }
        let s = SparseMatrix::from_triplets(r, c, &trips).unwrap();
        (s, random_matrix(&mut g, c, k, 2.0))
    })
}

fn prob_row(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn spmm_matches_dense((s, d) in sparse_and_dense()) {
        let sparse = s.spmm(&d).unwrap();
        let dense = s.to_dense().matmul(&d).unwrap();
        prop_assert!(sparse.max_abs_diff(&dense) < 1e-9);
        let y = random_matrix(&mut rng(1), s.rows(), 2, 1.0);
        let t = s.t_spmm(&y);
        prop_assert!(t.max_abs_diff(&s.to_dense().t_matmul(&y)) < 1e-9);
        prop_assert_eq!(t.shape(), (s.cols(), 2));
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..20, cols in 1usize..20, scale in 0.1f64..800.0, seed in any::<u64>()) {
        let x = random_matrix(&mut rng(seed), rows, cols, scale);
        let p = softmax_rows(&x);
        prop_assert!(p.is_finite());
        for i in 0..rows {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        prop_assert_eq!(predict_proba(&x).argmax_rows(), x.argmax_rows());
    }

    #[test]
    fn aps_sets_nest_and_contain_scored_class(probs in prob_row(6), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        // a larger threshold is what a smaller ε produces
        let big = build_set_aps(&probs, Threshold(hi));
        let small = build_set_aps(&probs, Threshold(lo));
        prop_assert!(small.is_subset_of(&big));
        prop_assert!(!small.is_empty());
        for k in 0..6 {
            let s = aps_score(&probs, k).unwrap();
            prop_assert!(build_set_aps(&probs, Threshold(s)).contains(k));
        }
    }

    #[test]
    fn calibrated_aps_sets_nest_in_epsilon(seed in any::<u64>(), e1 in 0.01f64..0.5, e2 in 0.01f64..0.5) {
        let mut g = rng(seed);
        let probs = softmax_rows(&random_matrix(&mut g, 60, 5, 3.0));
        let labels: Vec<usize> = (0..60).map(|_| g.random_range(0..5)).collect();
        let calib: Vec<usize> = (0..30).collect();
        let test: Vec<usize> = (30..60).collect();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let a = calibrate_predict(&probs, &labels, &calib, &test, lo, CpMethod::Aps).unwrap();
        let b = calibrate_predict(&probs, &labels, &calib, &test, hi, CpMethod::Aps).unwrap();
        for (x, y) in a.sets.iter().zip(&b.sets) {
            prop_assert!(y.is_subset_of(x));
        }
    }

    #[test]
    fn quantile_matches_sorted_order_statistic(scores in prop::collection::vec(-5.0f64..5.0, 1..80), eps in 0.005f64..0.995) {
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let p = scores.len();
        let non = conformal_quantile(&scores, eps, ScoreConvention::Nonconformity).unwrap().value();
        let idx = quantile_index(p, eps, ScoreConvention::Nonconformity);
        if idx > p { prop_assert_eq!(non, f64::INFINITY) } else { prop_assert_eq!(non, sorted[idx - 1]) }
        let con = conformal_quantile(&scores, eps, ScoreConvention::Conformity).unwrap().value();
        let idx = quantile_index(p, eps, ScoreConvention::Conformity);
        if idx == 0 { prop_assert_eq!(con, f64::NEG_INFINITY) } else { prop_assert_eq!(con, sorted[idx - 1]) }
    }

    #[test]
    fn homophily_in_unit_interval(n in 2usize..60, k in 1usize..5, p_in in 0.0f64..1.0, p_out in 0.0f64..1.0, seed in any::<u64>()) {
        prop_assume!(n >= k && p_out <= p_in);
        let g = generate_sbm(&SbmConfig { nodes: n, classes: k, p_in, p_out, features: 2, feature_signal: 1.0, seed }).unwrap();
        let h = homophily(&g);
        prop_assert!((0.0..=1.0).contains(&h));
        let all_same = g.undirected_edges().iter().all(|&(a, b)| g.labels()[a] == g.labels()[b]);
        let no_isolated = (0..n).all(|v| !g.neighbors(v).is_empty());
        if all_same && no_isolated {
            prop_assert!((h - 1.0).abs() < 1e-12);
        }
        if h == 1.0 {
            prop_assert!(all_same);
        }
    }

    #[test]
    fn dataset_round_trip(n in 1usize..40, k in 1usize..4, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let g = generate_sbm(&SbmConfig { nodes: n, classes: k, p_in: 0.4, p_out: 0.1, features: 3, feature_signal: 1.0, seed }).unwrap();
        // the on-disk format stores features as f32
        let features = Matrix::from_fn(n, 3, |i, j| g.features().get(i, j) as f32 as f64);
        let edges: Vec<(usize, usize)> = g.undirected_edges();
        let (g, _) = GraphDataset::from_edges(g.name.clone(), &edges, features, g.labels().to_vec(), k).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&g, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(back.adjacency(), g.adjacency());
        prop_assert_eq!(back.features(), g.features());
        prop_assert_eq!(back.labels(), g.labels());
        prop_assert_eq!(back.num_classes(), k);
    }
}

#[test]
fn quantile_index_brute_force() {
    oracles::quantile_index_brute_force();
}

#[test]
fn set_builders_brute_force_grid() {
    oracles::set_builders_brute_force_grid();
}

#[test]
fn split_rule_for_all_pool_sizes() {
    for pool in 2..=5000usize {
        let c = calib_size(pool);
        assert_eq!(c, (pool / 2).min(1000), "pool {pool}");
        assert!(c >= 1 && c < pool);
    }
    let g = small_sbm(120, 3, 4);
    for seed in 0..5 {
        let s = make_splits(&g, 5, 30, seed).unwrap();
        let mut all: Vec<usize> = [&s.train, &s.valid, &s.calib, &s.test].into_iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..120).collect::<Vec<_>>());
        assert_eq!(s.calib.len(), calib_size(120 - 15 - 30));
    }
}

#[test]
fn sbm_homophily_increases_with_ratio() {
    // fixed expected degree 10 on 300 nodes, 3 classes
    let n = 300.0;
    let ratios = [1.0, 2.0, 4.0, 8.0, 16.0];
    let mut means = Vec::new();
    for &r in &ratios {
        // degree = p_in (n/3 − 1) + p_out (2n/3)
        let p_out = 10.0 / (r * (n / 3.0 - 1.0) + 2.0 * n / 3.0);
        let p_in = r * p_out;
        let hs: Vec<f64> = (0..5)
            .map(|seed| {
                let g = generate_sbm(&SbmConfig { nodes: 300, classes: 3, p_in, p_out, features: 2, feature_signal: 1.0, seed }).unwrap();
                homophily(&g)
            })
            .collect();
        means.push(hs.iter().sum::<f64>() / 5.0);
    }
    for w in means.windows(2) {
        assert!(w[1] >= w[0], "{means:?}");
    }
}

/// Monte-Carlo coverage on exchangeable synthetic data with a calibrated model:
/// labels are drawn from the predicted distribution.
fn synthetic_coverage(method: CpMethod, eps: f64, trials: usize) -> (f64, usize) {
    let mut g = rng(11);
    let n = 400;
    let probs = softmax_rows(&random_matrix(&mut g, n, 4, 2.5));
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            let u: f64 = g.random();
            let mut acc = 0.0;
            probs.row(i).iter().position(|&p| {
                acc += p;
                u < acc
            }).unwrap_or(3)
        })
        .collect();
    let mut nodes: Vec<usize> = (0..n).collect();
    let p = 200;
    let mut total = 0.0;
    for _ in 0..trials {
        nodes.shuffle(&mut g);
        let (calib, test) = nodes.split_at(p);
        let cal = calibrate_predict(&probs, &labels, calib, test, eps, method).unwrap();
        let hits = cal.sets.iter().zip(test).filter(|(s, &v)| s.contains(labels[v])).count();
        total += hits as f64 / test.len() as f64;
    }
    (total / trials as f64, p)
}

#[test]
fn thr_coverage_is_exact_on_exchangeable_data() {
    for eps in [0.1, 0.2] {
        let (cov, p) = synthetic_coverage(CpMethod::Thr, eps, 500);
        let lo = 1.0 - eps - 0.01;
        let hi = 1.0 - eps + 1.0 / (p as f64 + 1.0) + 0.01;
        assert!(cov >= lo && cov <= hi, "eps {eps}: coverage {cov}");
    }
}

#[test]
fn aps_coverage_is_valid_on_exchangeable_data() {
    // deterministic APS sets include the class that crosses the threshold,
    // so coverage is bounded below but may exceed 1 − ε + 1/(p+1)
    for eps in [0.1, 0.2] {
        let (cov, _) = synthetic_coverage(CpMethod::Aps, eps, 500);
        assert!(cov >= 1.0 - eps - 0.01, "eps {eps}: coverage {cov}");
    }
}
