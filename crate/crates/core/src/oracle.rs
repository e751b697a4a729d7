//! Brute-force global minimization over every `r`-subset and every labeling.
//! Ground truth for small instances.

use rayon::iter::{ParallelBridge, ParallelIterator};
use serde::{Deserialize, Serialize};

use crate::combinatorics::{binomial, combinations, for_each_labeling};
use crate::config::{Configuration, Dataset};
use crate::error::{Result, TdcError};
use crate::linalg::{factorize, SymMatrix};
use crate::select::{Ranked, TiePool};

/// Largest admissible `C(n, r) * g^r`.
pub const ORACLE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// `det W`; singular configurations are infeasible.
    Determinant,
    /// `tr W` (impartial trimming).
    Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub objective: Objective,
    pub optimum: Configuration,
    /// `det W` or `tr W` of the optimum.
    pub cost: f64,
    /// `ln det W` of the optimum (`-inf` when singular under the trace
    /// objective).
    pub log_det: f64,
    pub num_configurations_scanned: u64,
    pub singular_skipped: u64,
    /// Labelings tied with the optimum before tie-breaking. Label
    /// permutations of one partition count separately.
    pub ties: usize,
}

/// Pooled SSP and between-groups trace of `subset` labeled by `labels`.
fn scatter(data: &Dataset, g: usize, subset: &[usize], labels: &[usize]) -> (SymMatrix, f64) {
    let d = data.d();
    let mut sums = vec![0.0; g * d];
    let mut sizes = vec![0usize; g];
    let mut grand = vec![0.0; d];
    for (&i, &l) in subset.iter().zip(labels) {
        sizes[l] += 1;
        for (k, x) in data.point(i).iter().enumerate() {
            sums[l * d + k] += x;
            grand[k] += x;
        }
    }
    let r = subset.len() as f64;
    grand.iter_mut().for_each(|v| *v /= r);
    for (l, &s) in sizes.iter().enumerate() {
        if s > 0 {
            sums[l * d..(l + 1) * d]
                .iter_mut()
                .for_each(|v| *v /= s as f64);
        }
    }
    let mut w = SymMatrix::zeros(d);
    let mut diff = vec![0.0; d];
    for (&i, &l) in subset.iter().zip(labels) {
        for (k, x) in data.point(i).iter().enumerate() {
            diff[k] = x - sums[l * d + k];
        }
        w.add_outer(&diff, 1.0);
    }
    let between = sizes
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0)
        .map(|(l, &s)| {
            s as f64
                * sums[l * d..(l + 1) * d]
                    .iter()
                    .zip(&grand)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
        })
        .sum();
    (w, between)
}

#[derive(Default)]
struct Partial {
    pool: TiePool<f64>,
    scanned: u64,
    singular: u64,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        self.pool = self.pool.merge(other.pool);
        self.scanned += other.scanned;
        self.singular += other.singular;
        self
    }
}

fn enumerate(data: &Dataset, g: usize, r: usize, objective: Objective) -> Result<OracleResult> {
    let (n, d) = (data.n(), data.d());
    if g == 0 || r == 0 || r > n {
        return Err(TdcError::InvalidSettings(format!(
            "need g >= 1 and 1 <= r <= n, got g={g}, r={r}, n={n}"
        )));
    }
    if objective == Objective::Determinant && r < g * d + 1 {
        return Err(TdcError::InvalidSettings(format!(
            "need r >= g*d + 1 = {}",
            g * d + 1
        )));
    }
    let count = binomial(n, r) * (g as f64).powi(r as i32);
    if count > ORACLE_LIMIT {
        return Err(TdcError::InstanceTooLarge {
            count,
            limit: ORACLE_LIMIT,
        });
    }
    let total = combinations(n, r)
        .par_bridge()
        .fold(Partial::default, |mut acc, subset| {
            for_each_labeling(r, g, |labels| {
                acc.scanned += 1;
                let (w, between) = scatter(data, g, &subset, labels);
                let (value, log_det) = match objective {
                    Objective::Determinant => match factorize(&w) {
                        Ok(f) => (f.log_det(), f.log_det()),
                        Err(_) => {
                            acc.singular += 1;
                            return true;
                        }
                    },
                    Objective::Trace => {
                        let ld = factorize(&w)
                            .map(|f| f.log_det())
                            .unwrap_or(f64::NEG_INFINITY);
                        (w.trace(), ld)
                    }
                };
                if acc.pool.admits(value) {
                    let config = Configuration::from_parts(g, subset.clone(), labels.to_vec())
                        .expect("enumerated configuration is valid");
                    acc.pool.push(Ranked {
                        objective: value,
                        between_trace: between,
                        config,
                        item: log_det,
                    });
                }
                true
            });
            acc
        })
        .reduce(Partial::default, Partial::merge);
    let (scanned, singular) = (total.scanned, total.singular);
    let (winner, ties) = total
        .pool
        .finish()
        .ok_or(TdcError::NoFeasibleConfiguration)?;
    let cost = match objective {
        Objective::Determinant => winner.objective.exp(),
        Objective::Trace => winner.objective,
    };
    Ok(OracleResult {
        objective,
        optimum: winner.config,
        cost,
        log_det: winner.item,
        num_configurations_scanned: scanned,
        singular_skipped: singular,
        ties,
    })
}

/// Global minimizer of `det W` over all `r`-configurations with `g`
/// (possibly empty) clusters.
pub fn enumerate_optimum(data: &Dataset, g: usize, r: usize) -> Result<OracleResult> {
    enumerate(data, g, r, Objective::Determinant)
}

/// Global minimizer of `tr W` over the same domain.
pub fn impartial_trimming_oracle(data: &Dataset, g: usize, r: usize) -> Result<OracleResult> {
    enumerate(data, g, r, Objective::Trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(a: f64, twins: bool) -> Dataset {
        let mut v = vec![
            -2.0,
            -1.0,
            0.0,
            1.0,
            2.0,
            a + 2.0,
            a + 3.0,
            a + 4.0,
            a + 5.0,
            a + 6.0,
        ];
        if twins {
            v[6] = 1e6;
            v[7] = 1e6 + 1e-3;
        }
        Dataset::from_values(&v).unwrap()
    }

    #[test]
    fn twins_retained_below_threshold() {
        let res = enumerate_optimum(&example(1.2, true), 2, 8).unwrap();
        let expected = 10.0 + 5.0 / 6.0 * 3.2f64.powi(2) + 5e-7;
        assert!((res.cost - expected).abs() < 1e-9 * expected);
        let mut clusters = res.optimum.clusters();
        clusters.sort();
        assert_eq!(clusters, vec![vec![0, 1, 2, 3, 4, 5], vec![6, 7]]);
        assert_eq!(res.num_configurations_scanned, 45 * 256);
        // Both label assignments of the same partition tie.
        assert_eq!(res.ties, 2);
    }

    #[test]
    fn twins_discarded_above_threshold() {
        let res = enumerate_optimum(&example(1.3, true), 2, 8).unwrap();
        assert!((res.cost - 56.0 / 3.0).abs() < 1e-9);
        assert!(!res.optimum.retained().contains(&6));
        assert!(!res.optimum.retained().contains(&7));
    }

    #[test]
    fn all_in_single_cluster() {
        let data = Dataset::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.5],
            vec![0.2, 1.0],
            vec![3.0, 2.0],
        ])
        .unwrap();
        let res = enumerate_optimum(&data, 1, 4).unwrap();
        let direct = factorize(&data.ssp_of(&[0, 1, 2, 3])).unwrap().det();
        assert!((res.cost - direct).abs() < 1e-12 * direct);
        assert_eq!(res.num_configurations_scanned, 1);
        let tr = impartial_trimming_oracle(&data, 1, 4).unwrap();
        assert_eq!(tr.optimum.retained(), &[0, 1, 2, 3]);
    }

    #[test]
    fn guard_rejects_large_instances() {
        let data = Dataset::from_values(&(0..30).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        assert!(matches!(
            enumerate_optimum(&data, 2, 28),
            Err(TdcError::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn no_feasible_configuration() {
        let data = Dataset::from_rows(&vec![vec![1.0, 2.0]; 4]).unwrap();
        assert!(matches!(
            enumerate_optimum(&data, 1, 3),
            Err(TdcError::NoFeasibleConfiguration)
        ));
    }
}
