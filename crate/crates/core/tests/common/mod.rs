#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdc_core::datagen::StandardNormal;
use tdc_core::Dataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two loose Gaussian groups plus a stray point.
pub fn small_instance(seed: u64, n: usize, d: usize) -> Dataset {
    let mut rng = rng(seed);
    let mut z = StandardNormal::default();
    let shift = 3.0 + 4.0 * rng.random::<f64>();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let offset = if i == n - 1 {
                3.0 * shift
            } else if i % 2 == 0 {
                shift
            } else {
                0.0
            };
            (0..d)
                .map(|k| z.sample(&mut rng) + if k == 0 { offset } else { 0.0 })
                .collect()
        })
        .collect();
    Dataset::from_rows(&rows).unwrap()
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn naive_det(mut m: Vec<Vec<f64>>) -> f64 {
    let d = m.len();
    let mut det = 1.0;
    for c in 0..d {
        let p = (c..d)
            .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
            .unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        for r in (c + 1)..d {
            let f = m[r][c] / m[c][c];
            for k in c..d {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    det
}

/// Pooled SSP of the given clusters, computed from raw sums of products.
pub fn naive_pooled_ssp(data: &Dataset, clusters: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let d = data.d();
    let mut w = vec![vec![0.0; d]; d];
    for c in clusters.iter().filter(|c| !c.is_empty()) {
        let k = c.len() as f64;
        let mut s = vec![0.0; d];
        let mut ss = vec![vec![0.0; d]; d];
        for &i in c {
            let x = data.point(i);
            for a in 0..d {
                s[a] += x[a];
                for b in 0..d {
                    ss[a][b] += x[a] * x[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                w[a][b] += ss[a][b] - s[a] * s[b] / k;
            }
        }
    }
    w
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Smallest pooled SSP determinant over every `r`-subset and labeling with
/// `g` labels, skipping determinants below `floor`.
pub fn brute_force_min_det(data: &Dataset, g: usize, r: usize, floor: f64) -> f64 {
    let mut best = f64::INFINITY;
    for subset in subsets(data.n(), r) {
        let total = g.pow(r as u32);
        for code in 0..total {
            let mut clusters = vec![Vec::new(); g];
            let mut c = code;
            for &i in &subset {
                clusters[c % g].push(i);
                c /= g;
            }
            let det = naive_det(naive_pooled_ssp(data, &clusters));
            if det > floor && det < best {
                best = det;
            }
        }
    }
    best
}
