//! Chi-square quantiles, normal laws, Bhattacharyya distances, bottleneck
//! matching and tail-fraction diagnostics for choosing `r`.

use serde::{Deserialize, Serialize};

use crate::config::{Configuration, Dataset};
use crate::error::{Result, TdcError};
use crate::linalg::{factorize, SpdMatrix, SymMatrix};
use crate::solver::{multistart, SolveReport, SolverSettings};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (k, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + k as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma function `P(a, x)`.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // Series.
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefix).exp().min(1.0)
    } else {
        // Continued fraction for Q(a, x), modified Lentz.
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (1.0 - (log_prefix + h.ln()).exp()).max(0.0)
    }
}

pub fn chi2_cdf(df: usize, x: f64) -> f64 {
    regularized_lower_gamma(df as f64 / 2.0, x / 2.0)
}

/// `p`-quantile of the chi-square law with `df` degrees of freedom, by
/// bisection on the CDF down to floating-point resolution.
///
/// # Panics
/// If `df == 0` or `p` is not in `(0, 1)`.
pub fn chi2_quantile(df: usize, p: f64) -> f64 {
    assert!(df > 0, "degrees of freedom must be positive");
    assert!(
        p > 0.0 && p < 1.0,
        "probability must lie in (0, 1), got {p}"
    );
    let mut lo = 0.0;
    let mut hi = df as f64;
    while chi2_cdf(df, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi2_cdf(df, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A multivariate normal law `N_d(mean, cov)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormalParamsWire", into = "NormalParamsWire")]
pub struct NormalParams {
    pub mean: Vec<f64>,
    pub cov: SpdMatrix,
}

#[derive(Serialize, Deserialize)]
struct NormalParamsWire {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl TryFrom<NormalParamsWire> for NormalParams {
    type Error = TdcError;

    fn try_from(w: NormalParamsWire) -> Result<Self> {
        NormalParams::new(w.mean, &SymMatrix::from_rows(&w.cov)?)
    }
}

impl From<NormalParams> for NormalParamsWire {
    fn from(p: NormalParams) -> Self {
        NormalParamsWire {
            cov: p.cov.matrix().to_rows(),
            mean: p.mean,
        }
    }
}

impl NormalParams {
    pub fn new(mean: Vec<f64>, cov: &SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(TdcError::DimensionMismatch {
                expected: cov.dim(),
                found: mean.len(),
            });
        }
        Ok(Self {
            mean,
            cov: factorize(cov)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Law of `T X + b`.
    pub fn affine_image(&self, t: &[f64], b: &[f64]) -> Result<Self> {
        let d = self.dim();
        let mean = (0..d)
            .map(|i| (0..d).map(|k| t[i * d + k] * self.mean[k]).sum::<f64>() + b[i])
            .collect();
        Self::new(mean, &self.cov.matrix().congruence(t))
    }
}

/// Bhattacharyya distance `1 - BC` between two normal laws, with the
/// coefficient `BC` evaluated in log space.
pub fn bhattacharyya(p: &NormalParams, q: &NormalParams) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(TdcError::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    let sum = p.cov.matrix().add(q.cov.matrix());
    let sum_f = factorize(&sum)?;
    let d = p.dim() as f64;
    let log_det_avg = sum_f.log_det() - d * std::f64::consts::LN_2;
    let delta: Vec<f64> = q.mean.iter().zip(&p.mean).map(|(a, b)| a - b).collect();
    let quad = sum_f.inverse_quad(&delta)?;
    let log_bc = 0.5 * (0.5 * (p.cov.log_det() + q.cov.log_det()) - log_det_avg) - 0.25 * quad;
    Ok((-log_bc.min(0.0).exp_m1()).clamp(0.0, 1.0))
}

/// Maximum bipartite matching restricted to `allowed[j][i]`; returns
/// `match_of_right[i] = j` when perfect.
fn perfect_matching(allowed: &[Vec<bool>]) -> Option<Vec<usize>> {
    let k = allowed.len();
    let mut owner: Vec<Option<usize>> = vec![None; k];
    fn augment(
        j: usize,
        allowed: &[Vec<bool>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for i in 0..allowed[j].len() {
            if allowed[j][i] && !seen[i] {
                seen[i] = true;
                if owner[i].is_none_or(|o| augment(o, allowed, seen, owner)) {
                    owner[i] = Some(j);
                    return true;
                }
            }
        }
        false
    }
    for j in 0..k {
        let mut seen = vec![false; k];
        if !augment(j, allowed, &mut seen, &mut owner) {
            return None;
        }
    }
    owner.into_iter().collect()
}

/// Bottleneck assignment for a square cost matrix `cost[j][i]`: returns
/// `assign[j] = i` minimizing `max_j cost[j][assign[j]]`, and that maximum.
pub fn bottleneck_assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let k = cost.len();
    if k == 0 {
        return (Vec::new(), 0.0);
    }
    let mut values: Vec<f64> = cost.iter().flatten().copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let feasible = |t: f64| {
        let allowed: Vec<Vec<bool>> = cost
            .iter()
            .map(|row| row.iter().map(|&c| c <= t).collect())
            .collect();
        perfect_matching(&allowed)
    };
    let (mut lo, mut hi) = (0, values.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if feasible(values[mid]).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let owner = feasible(values[lo]).expect("largest threshold admits every edge");
    let mut assign = vec![0; k];
    for (i, &j) in owner.iter().enumerate() {
        assign[j] = i;
    }
    (assign, values[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `permutation[j]` is the estimated population matched to truth `j`.
    pub permutation: Vec<usize>,
    pub distances: Vec<f64>,
    pub max_distance: f64,
}

/// Matching of estimated to true populations minimizing the largest
/// Bhattacharyya distance.
pub fn best_matching(estimated: &[NormalParams], truth: &[NormalParams]) -> Result<Matching> {
    if estimated.len() != truth.len() {
        return Err(TdcError::LengthMismatch {
            left: estimated.len(),
            right: truth.len(),
        });
    }
    let cost = truth
        .iter()
        .map(|t| {
            estimated
                .iter()
                .map(|e| bhattacharyya(e, t))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let (permutation, max_distance) = bottleneck_assignment(&cost);
    let distances = permutation
        .iter()
        .enumerate()
        .map(|(j, &i)| cost[j][i])
        .collect();
    Ok(Matching {
        permutation,
        distances,
        max_distance,
    })
}

/// Default percentiles of the tail diagnostic.
pub const DEFAULT_GAMMAS: [f64; 4] = [0.95, 0.975, 0.99, 0.999];

/// Covariance used to standardize distances in the tail diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TailMetric {
    /// Estimated common covariance `W / r`.
    #[default]
    Mle,
    /// Pooled SSP matrix `W` itself.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFraction {
    pub gamma: f64,
    pub quantile: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailDiagnostic {
    pub r_candidate: usize,
    pub metric: TailMetric,
    /// Sorted by increasing `gamma`.
    pub fractions: Vec<TailFraction>,
    /// `sum (fraction - (1 - gamma))^2`.
    pub score: f64,
}

/// Fractions of retained observations whose squared distance to their own
/// cluster mean exceeds `chi2_d(gamma)`.
pub fn tail_fractions_for(
    data: &Dataset,
    cfg: &Configuration,
    means: &[Vec<f64>],
    pooled_ssp: &SymMatrix,
    gammas: &[f64],
    metric: TailMetric,
) -> Result<TailDiagnostic> {
    let d = data.d();
    let r = cfg.r();
    let factor = match metric {
        TailMetric::Mle => r as f64,
        TailMetric::Pooled => 1.0,
    };
    let w = factorize(pooled_ssp)?;
    let dist: Vec<f64> = cfg
        .iter()
        .map(|(i, l)| {
            w.mahalanobis_sq(data.point(i), &means[l])
                .map(|v| v * factor)
        })
        .collect::<Result<_>>()?;
    let mut gammas = gammas.to_vec();
    gammas.sort_by(f64::total_cmp);
    let fractions: Vec<TailFraction> = gammas
        .iter()
        .map(|&gamma| {
            let quantile = chi2_quantile(d, gamma);
            let above = dist.iter().filter(|&&v| v > quantile).count();
            TailFraction {
                gamma,
                quantile,
                fraction: above as f64 / r as f64,
            }
        })
        .collect();
    let score = fractions
        .iter()
        .map(|f| (f.fraction - (1.0 - f.gamma)).powi(2))
        .sum();
    Ok(TailDiagnostic {
        r_candidate: r,
        metric,
        fractions,
        score,
    })
}

/// Tail diagnostic of a solve under the default metric.
pub fn tail_fractions(
    data: &Dataset,
    report: &SolveReport,
    gammas: &[f64],
) -> Result<TailDiagnostic> {
    tail_fractions_for(
        data,
        &report.best,
        &report.mle_means,
        &report.pooled_ssp,
        gammas,
        TailMetric::default(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub r: usize,
    pub log_det: Option<f64>,
    pub diagnostic: Option<TailDiagnostic>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// Candidate with the smallest tail score; `None` if every solve failed.
    pub recommended: Option<usize>,
}

/// Solves once per candidate `r` and recommends the candidate whose tail
/// fractions best fit `1 - gamma`.
pub fn sweep_r(
    data: &Dataset,
    r_candidates: &[usize],
    settings: &SolverSettings,
    gammas: &[f64],
) -> SweepReport {
    let entries: Vec<SweepEntry> = r_candidates
        .iter()
        .map(|&r| {
            let s = SolverSettings {
                r,
                ..settings.clone()
            };
            match multistart(data, &s).and_then(|rep| {
                let diag = tail_fractions(data, &rep, gammas)?;
                Ok((rep.cost.log_det, diag))
            }) {
                Ok((log_det, diag)) => SweepEntry {
                    r,
                    log_det: Some(log_det),
                    diagnostic: Some(diag),
                    error: None,
                },
                Err(e) => SweepEntry {
                    r,
                    log_det: None,
                    diagnostic: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let recommended = entries
        .iter()
        .filter_map(|e| e.diagnostic.as_ref().map(|d| (d.score, e.r)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|(_, r)| r);
    SweepReport {
        entries,
        recommended,
    }
}

/// Mixing proportions `size_j / n`.
pub fn estimate_mixing(cfg: &Configuration, n: usize) -> Vec<f64> {
    cfg.sizes()
        .into_iter()
        .map(|s| s as f64 / n as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal(mean: Vec<f64>, diag: &[f64]) -> NormalParams {
        NormalParams::new(mean, &SymMatrix::from_diagonal(diag)).unwrap()
    }

    #[test]
    fn gamma_function() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn chi2_closed_forms() {
        assert!((chi2_quantile(2, 0.95) + 2.0 * 0.05f64.ln()).abs() < 1e-10);
        assert!((chi2_quantile(2, 0.5) + 2.0 * 0.5f64.ln()).abs() < 1e-10);
        assert!((chi2_quantile(8, 0.99) - 20.090235).abs() < 1e-5);
        // df = 1: P(|Z| <= 3) quantile is 9.
        let p = chi2_cdf(1, 9.0);
        assert!((chi2_quantile(1, p) - 9.0).abs() < 1e-9);
    }

    #[test]
    fn bhattacharyya_examples() {
        let p = normal(vec![0.0], &[1.0]);
        assert!(bhattacharyya(&p, &p).unwrap().abs() < 1e-15);
        let q = normal(vec![2.0], &[1.0]);
        assert!((bhattacharyya(&p, &q).unwrap() - (1.0 - (-0.5f64).exp())).abs() < 1e-12);
        let w = normal(vec![0.0], &[4.0]);
        assert!((bhattacharyya(&p, &w).unwrap() - (1.0 - (2.0f64 / 2.5).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn matching_recovers_swap() {
        let a = normal(vec![0.0, 0.0], &[1.0, 1.0]);
        let b = normal(vec![5.0, 0.0], &[1.0, 2.0]);
        let m = best_matching(&[b.clone(), a.clone()], &[a, b]).unwrap();
        assert_eq!(m.permutation, vec![1, 0]);
        assert!(m.max_distance.abs() < 1e-15);
        assert!(matches!(
            best_matching(&[], &[normal(vec![0.0], &[1.0])]),
            Err(TdcError::LengthMismatch { left: 0, right: 1 })
        ));
    }

    #[test]
    fn bottleneck_small() {
        let cost = vec![
            vec![1.0, 9.0, 9.0],
            vec![9.0, 9.0, 2.0],
            vec![3.0, 4.0, 9.0],
        ];
        let (a, m) = bottleneck_assignment(&cost);
        assert_eq!(a, vec![0, 2, 1]);
        assert_eq!(m, 4.0);
    }

    #[test]
    fn mixing_examples() {
        let mut pairs: Vec<(usize, usize)> = (0..50).map(|i| (i, 0)).collect();
        pairs.extend((50..100).map(|i| (i, 1)));
        let cfg = Configuration::new(2, pairs).unwrap();
        assert_eq!(estimate_mixing(&cfg, 110), vec![5.0 / 11.0, 5.0 / 11.0]);
        let cfg = Configuration::new(3, vec![(0, 0), (1, 2)]).unwrap();
        assert_eq!(estimate_mixing(&cfg, 2), vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn tail_fractions_zero_when_tight() {
        let data = Dataset::from_values(&[-1.0, -0.5, 0.0, 0.5, 1.0]).unwrap();
        let cfg = Configuration::from_clusters(&[vec![0, 1, 2, 3, 4]]).unwrap();
        let w = data.ssp_of(&[0, 1, 2, 3, 4]);
        let diag = tail_fractions_for(
            &data,
            &cfg,
            &[vec![0.0]],
            &w,
            &DEFAULT_GAMMAS,
            TailMetric::Mle,
        )
        .unwrap();
        assert!(diag.fractions.iter().all(|f| f.fraction == 0.0));
        // W/r = 0.5; largest standardized distance 2 < chi2_1(0.95).
        assert_eq!(diag.r_candidate, 5);
    }

    #[test]
    fn normal_params_round_trip() {
        let p = normal(vec![1.0, -2.0], &[1.0, 9.0]);
        let json = serde_json::to_string(&p).unwrap();
        let back: NormalParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
