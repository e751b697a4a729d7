mod common;

use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tdc_core::combinatorics::permutations;
use tdc_core::datagen::{
    generate, make_centers, sample_normal, GeneratorSpec, OutlierMode, StandardNormal,
};
use tdc_core::linalg::{factorize, SymMatrix};
use tdc_core::stats::{
    best_matching, bhattacharyya, bottleneck_assignment, chi2_cdf, chi2_quantile, estimate_mixing,
    NormalParams,
};

fn spd(d: usize, entries: &[f64]) -> SymMatrix {
    // A A^T + I from a d x d entry block.
    let mut rows = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            rows[i][j] = (0..d)
                .map(|k| entries[i * d + k] * entries[j * d + k])
                .sum::<f64>();
        }
        rows[i][i] += 1.0;
    }
    SymMatrix::from_rows(&rows).unwrap()
}

fn normal_params(d: usize) -> impl Strategy<Value = NormalParams> {
    (
        prop::collection::vec(-3.0..3.0f64, d),
        prop::collection::vec(-1.5..1.5f64, d * d),
    )
        .prop_map(move |(m, a)| NormalParams::new(m, &spd(d, &a)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn chi2_quantile_matches_reference(df in 1usize..=40, p in 0.001..0.9999f64) {
        let q = chi2_quantile(df, p);
        let reference = ChiSquared::new(df as f64).unwrap().inverse_cdf(p);
        prop_assert!((q - reference).abs() <= 1e-6 * reference.max(1.0), "{q} vs {reference}");
        prop_assert!((chi2_cdf(df, q) - p).abs() <= 1e-9);
    }

    #[test]
    fn chi2_quantile_is_monotone(df in 1usize..=20, a in 0.001..0.999f64, b in 0.001..0.999f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(chi2_quantile(df, lo) <= chi2_quantile(df, hi));
    }

    #[test]
    fn bhattacharyya_is_symmetric_and_bounded(p in normal_params(3), q in normal_params(3)) {
        let pq = bhattacharyya(&p, &q).unwrap();
        let qp = bhattacharyya(&q, &p).unwrap();
        prop_assert!((pq - qp).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&pq));
        prop_assert!(bhattacharyya(&p, &p).unwrap() <= 1e-12);
    }

    #[test]
    fn bhattacharyya_is_affine_invariant(
        p in normal_params(2),
        q in normal_params(2),
        t in prop::collection::vec(-2.0..2.0f64, 4),
        b in prop::collection::vec(-5.0..5.0f64, 2),
    ) {
        let det = t[0] * t[3] - t[1] * t[2];
        prop_assume!(det.abs() > 0.1);
        let before = bhattacharyya(&p, &q).unwrap();
        let after = bhattacharyya(&p.affine_image(&t, &b).unwrap(), &q.affine_image(&t, &b).unwrap()).unwrap();
        prop_assert!((before - after).abs() <= 1e-9);
    }

    #[test]
    fn bottleneck_beats_every_permutation(k in 1usize..=6, values in prop::collection::vec(0.0..1.0f64, 36)) {
        let cost: Vec<Vec<f64>> = (0..k).map(|j| values[j * 6..j * 6 + k].to_vec()).collect();
        let (assign, max) = bottleneck_assignment(&cost);
        let mut sorted = assign.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..k).collect::<Vec<_>>());
        let realized = assign.iter().enumerate().map(|(j, &i)| cost[j][i]).fold(0.0, f64::max);
        prop_assert_eq!(realized, max);
        let brute = permutations(k)
            .iter()
            .map(|p| p.iter().enumerate().map(|(j, &i)| cost[j][i]).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min);
        prop_assert_eq!(max, brute);
    }
}

#[test]
fn matching_recovers_a_shuffled_truth() {
    let (centers, cov) = make_centers(2, 0.99);
    let truth: Vec<NormalParams> = centers
        .iter()
        .map(|c| NormalParams::new(c.clone(), &cov).unwrap())
        .collect();
    let order = [2, 0, 3, 1];
    let est: Vec<NormalParams> = order.iter().map(|&i| truth[i].clone()).collect();
    let m = best_matching(&est, &truth).unwrap();
    for (j, &i) in m.permutation.iter().enumerate() {
        assert_eq!(order[i], j);
    }
    assert!(m.max_distance < 1e-12);
}

#[test]
#[should_panic]
fn chi2_quantile_rejects_probability_one() {
    chi2_quantile(3, 1.0);
}

#[test]
fn centers_sit_on_the_axes_at_the_stated_radius() {
    for d in [1, 2, 5] {
        let (centers, cov) = make_centers(d, 0.999);
        let q = chi2_quantile(d, 0.999);
        assert_eq!(centers.len(), 2 * d);
        for (idx, c) in centers.iter().enumerate() {
            let k = idx / 2;
            let expected = (cov.get(k, k) * q / 2.0).sqrt() * if idx % 2 == 0 { -1.0 } else { 1.0 };
            for (a, &v) in c.iter().enumerate() {
                if a == k {
                    assert!((v - expected).abs() < 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }
}

#[test]
fn shell_outliers_lie_on_the_shell_nearest_their_center() {
    for d in [1, 2, 3] {
        let mut spec = GeneratorSpec::new(d);
        spec.seed = 11;
        let out = generate(&spec).unwrap();
        let (centers, cov) = make_centers(d, spec.alpha);
        let f = factorize(&cov).unwrap();
        let radius = chi2_quantile(d, 0.999);
        let outliers: Vec<usize> = (0..out.dataset.n())
            .filter(|&i| out.true_labels[i] == 0)
            .collect();
        assert_eq!(outliers.len(), 22 * d);
        for (k, &i) in outliers.iter().enumerate() {
            let x = out.dataset.point(i);
            let own = f.mahalanobis_sq(x, &centers[k % centers.len()]).unwrap();
            assert!((own - radius).abs() <= 1e-9 * radius);
            for (l, c) in centers.iter().enumerate() {
                if l != k % centers.len() {
                    assert!(f.mahalanobis_sq(x, c).unwrap() > own);
                }
            }
        }
    }
}

#[test]
fn generation_is_reproducible() {
    let mut spec = GeneratorSpec::new(3);
    spec.seed = 77;
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.true_labels, b.true_labels);
    spec.seed = 78;
    assert_ne!(generate(&spec).unwrap().dataset, a.dataset);
}

#[test]
fn regular_points_follow_their_law() {
    let mut spec = GeneratorSpec::new(2);
    spec.per_cluster = 20_000;
    spec.outlier_mode = OutlierMode::None;
    spec.seed = 5;
    let out = generate(&spec).unwrap();
    for (j, p) in out.true_params.iter().enumerate() {
        let idx: Vec<usize> = (0..out.dataset.n())
            .filter(|&i| out.true_labels[i] == j + 1)
            .collect();
        let n = idx.len() as f64;
        for a in 0..2 {
            let mean = idx.iter().map(|&i| out.dataset.point(i)[a]).sum::<f64>() / n;
            let var = idx
                .iter()
                .map(|&i| (out.dataset.point(i)[a] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sv = p.cov.matrix().get(a, a);
            assert!(
                (mean - p.mean[a]).abs() < 4.0 * (sv / n).sqrt(),
                "cluster {j} coord {a} mean {mean}"
            );
            assert!(
                (var / sv - 1.0).abs() < 0.05,
                "cluster {j} coord {a} var {var}"
            );
        }
    }
}

#[test]
fn diffuse_outliers_have_the_requested_spread() {
    let mut spec = GeneratorSpec::new(3);
    spec.outlier_mode = OutlierMode::Diffuse {
        mu: vec![1.0, -2.0, 0.5],
        v: 25.0,
    };
    spec.outlier_count = Some(2000);
    let out = generate(&spec).unwrap();
    let idx: Vec<usize> = (0..out.dataset.n())
        .filter(|&i| out.true_labels[i] == 0)
        .collect();
    let n = idx.len() as f64;
    let mut trace = 0.0;
    for a in 0..3 {
        let mean = idx.iter().map(|&i| out.dataset.point(i)[a]).sum::<f64>() / n;
        trace += idx
            .iter()
            .map(|&i| (out.dataset.point(i)[a] - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
    }
    assert!((trace / 75.0 - 1.0).abs() < 0.15, "trace {trace}");
}

#[test]
fn sample_normal_uses_the_covariance_factor() {
    let cov = SymMatrix::from_rows(&[vec![4.0, 1.8], vec![1.8, 1.0]]).unwrap();
    let p = NormalParams::new(vec![0.0, 0.0], &cov).unwrap();
    let mut rng = common::rng(8);
    let mut z = StandardNormal::default();
    let n = 40_000;
    let mut c01 = 0.0;
    for _ in 0..n {
        let x = sample_normal(&p, &mut z, &mut rng);
        c01 += x[0] * x[1];
    }
    assert!((c01 / n as f64 - 1.8).abs() < 0.1);
}

#[test]
fn truth_round_trips_through_json() {
    let spec = GeneratorSpec::new(2);
    let out = generate(&spec).unwrap();
    let mut buf = Vec::new();
    out.write_truth(&spec, &mut buf).unwrap();
    let back: tdc_core::datagen::Truth = serde_json::from_slice(&buf).unwrap();
    assert_eq!(back, out.truth(&spec));
    assert_eq!(back.n, 400 + 44);
}

#[test]
fn mixing_divides_cluster_sizes_by_n() {
    let cfg = tdc_core::Configuration::from_clusters(&[vec![0, 1, 2], vec![3], vec![]]).unwrap();
    let w = estimate_mixing(&cfg, 10);
    assert!((w.iter().sum::<f64>() - 0.4).abs() < 1e-12);
    assert!((w[0] - 0.3).abs() < 1e-12);
    assert_eq!(w[2], 0.0);
}
