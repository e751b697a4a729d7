//! Reduction steps, iteration to a fixed point, random initializations and
//! multistart optimization of the trimmed determinant criterion.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    initial_carried_means, pooled_stats, tdc_cost, Configuration, Cost, Dataset, PooledStats,
};
use crate::error::{Result, TdcError};
use crate::linalg::SymMatrix;
use crate::select::{tie_band, Ranked, TiePool};
use crate::stats::estimate_mixing;

/// Absolute slack (scaled by `max(1, |value|)`) used by the fixed-point and
/// separation checks on squared Mahalanobis distances.
pub const CERTIFICATE_TOL: f64 = 1e-9;

const LABEL_REJECTION_TRIES: usize = 1000;
const INIT_B_ATTEMPTS: usize = 100;
const START_CHUNK: usize = 64;

static STEPS_EXECUTED: AtomicUsize = AtomicUsize::new(0);
static DESCENT_VIOLATIONS: AtomicUsize = AtomicUsize::new(0);

/// Process-wide `(reduction steps executed, steps that increased log-det)`.
pub fn descent_audit() -> (usize, usize) {
    (
        STEPS_EXECUTED.load(Ordering::Relaxed),
        DESCENT_VIOLATIONS.load(Ordering::Relaxed),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMethod {
    /// Random `r`-subset with a random labeling using every cluster.
    A,
    /// Random `gd + 1` seed subset, random partition, one reduction step.
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub g: usize,
    pub r: usize,
    pub starts: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub init: InitMethod,
    pub log_det_tol: f64,
    /// Stop early after this many consecutive starts without improving the
    /// incumbent by more than `log_det_tol`.
    pub patience: Option<usize>,
}

impl SolverSettings {
    pub fn new(g: usize, r: usize) -> Self {
        Self {
            g,
            r,
            starts: 2000,
            max_iters: 200,
            seed: 0,
            init: InitMethod::A,
            log_det_tol: 1e-12,
            patience: Some(200),
        }
    }

    pub fn with_starts(mut self, starts: usize) -> Self {
        self.starts = starts;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init(mut self, init: InitMethod) -> Self {
        self.init = init;
        self
    }

    pub fn with_patience(mut self, patience: Option<usize>) -> Self {
        self.patience = patience;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let (n, d) = (data.n(), data.d());
        if self.g == 0 {
            return Err(TdcError::InvalidSettings("g must be at least 1".into()));
        }
        if self.r < self.g * d + 1 || self.r > n {
            return Err(TdcError::InvalidSettings(format!(
                "r = {} must satisfy g*d + 1 = {} <= r <= n = {n}",
                self.r,
                self.g * d + 1
            )));
        }
        if self.starts == 0 || self.max_iters == 0 {
            return Err(TdcError::InvalidSettings(
                "starts and max_iters must be positive".into(),
            ));
        }
        if !(self.log_det_tol >= 0.0) {
            return Err(TdcError::InvalidSettings(
                "log_det_tol must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Squared Mahalanobis distances `d(i, j)^2` of every observation to every
/// cluster mean, row-major `n x g`.
pub fn distance_table(data: &Dataset, stats: &PooledStats) -> Vec<f64> {
    let (n, d, g) = (data.n(), data.d(), stats.g());
    let mut table = vec![0.0; n * g];
    let mut diff = vec![0.0; d];
    for i in 0..n {
        let x = data.point(i);
        for (j, m) in stats.means.iter().enumerate() {
            for ((t, a), b) in diff.iter_mut().zip(x).zip(m) {
                *t = a - b;
            }
            table[i * g + j] = stats.ssp.inverse_quad_in_place(&mut diff);
        }
    }
    table
}

#[derive(Debug, Clone)]
pub struct ReductionOutcome {
    pub config: Configuration,
    /// Optimal cluster `j_i` of every observation.
    pub optimal_cluster: Vec<usize>,
    /// `d(i, j_i)^2` of every observation.
    pub best_distance: Vec<f64>,
    /// Sum of `d(i, j_i)^2` over the new configuration.
    pub objective: f64,
}

/// One reduction step: assign every observation to its Mahalanobis-nearest
/// cluster (smallest label on ties) and retain the `r` observations with the
/// smallest such distances (smallest index on ties).
pub fn reduction_step(data: &Dataset, stats: &PooledStats, r: usize) -> Result<ReductionOutcome> {
    let n = data.n();
    if r == 0 || r > n {
        return Err(TdcError::InvalidSettings(format!(
            "r = {r} out of range for n = {n}"
        )));
    }
    if stats.ssp.dim() != data.d() {
        return Err(TdcError::DimensionMismatch {
            expected: data.d(),
            found: stats.ssp.dim(),
        });
    }
    let g = stats.g();
    let table = distance_table(data, stats);
    let mut optimal_cluster = Vec::with_capacity(n);
    let mut best_distance = Vec::with_capacity(n);
    for row in table.chunks(g) {
        let (j, &v) =
            row.iter().enumerate().fold(
                (0, &row[0]),
                |acc, (j, v)| if *v < *acc.1 { (j, v) } else { acc },
            );
        optimal_cluster.push(j);
        best_distance.push(v);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        best_distance[a]
            .total_cmp(&best_distance[b])
            .then(a.cmp(&b))
    });
    let kept = &order[..r];
    let objective = kept.iter().map(|&i| best_distance[i]).sum();
    let config = Configuration::new(g, kept.iter().map(|&i| (i, optimal_cluster[i])).collect())?;
    Ok(ReductionOutcome {
        config,
        optimal_cluster,
        best_distance,
        objective,
    })
}

#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub config: Configuration,
    pub stats: PooledStats,
    /// Log-determinants of every visited configuration, starting with the
    /// initial one. Non-increasing up to `log_det_tol`.
    pub trace: Vec<f64>,
    /// Reduction steps executed.
    pub steps: usize,
    /// Number of steps after which the configuration was stationary.
    pub iterations: usize,
    /// `false` when `max_iters` was reached first.
    pub converged: bool,
    pub descent_violations: usize,
}

/// Iterates reduction steps from `init` (carried means start at the grand
/// mean) until the log-determinant stabilizes and a configuration repeats.
pub fn iterate(
    data: &Dataset,
    init: &Configuration,
    settings: &SolverSettings,
) -> Result<IterationOutcome> {
    let carried = initial_carried_means(data, init.g());
    iterate_with_carried(data, init, &carried, settings)
}

pub fn iterate_with_carried(
    data: &Dataset,
    init: &Configuration,
    carried: &[Vec<f64>],
    settings: &SolverSettings,
) -> Result<IterationOutcome> {
    if init.r() != settings.r || init.g() != settings.g {
        return Err(TdcError::InvalidConfiguration(format!(
            "initial configuration has (r, g) = ({}, {}), settings ask for ({}, {})",
            init.r(),
            init.g(),
            settings.r,
            settings.g
        )));
    }
    let mut config = init.clone();
    let mut stats = pooled_stats(data, &config, carried)?;
    let mut log_det = stats.ssp.log_det();
    let mut trace = vec![log_det];
    let mut seen = HashSet::new();
    seen.insert(config.clone());
    let mut steps = 0;
    let mut stationary_since = 0;
    let mut violations = 0;
    let mut converged = false;
    while steps < settings.max_iters {
        let next = reduction_step(data, &stats, settings.r)?.config;
        let next_stats = pooled_stats(data, &next, &stats.means)?;
        let next_log_det = next_stats.ssp.log_det();
        steps += 1;
        let band = tie_band(log_det, settings.log_det_tol);
        if next_log_det > log_det + band {
            violations += 1;
        }
        trace.push(next_log_det);
        let changed = next != config;
        let repeated = !seen.insert(next.clone());
        let stable = (log_det - next_log_det).abs() <= band;
        if changed && !stable {
            stationary_since = steps;
        }
        config = next;
        stats = next_stats;
        log_det = next_log_det;
        if repeated && stable {
            converged = true;
            break;
        }
    }
    STEPS_EXECUTED.fetch_add(steps, Ordering::Relaxed);
    DESCENT_VIOLATIONS.fetch_add(violations, Ordering::Relaxed);
    Ok(IterationOutcome {
        config,
        stats,
        trace,
        steps,
        iterations: stationary_since,
        converged,
        descent_violations: violations,
    })
}

/// Uniform random labeling of `len` slots using every label of `0..g`.
fn surjective_labels<R: Rng + ?Sized>(len: usize, g: usize, rng: &mut R) -> Vec<usize> {
    for _ in 0..LABEL_REJECTION_TRIES {
        let labels: Vec<usize> = (0..len).map(|_| rng.random_range(0..g)).collect();
        let mut used = vec![false; g];
        labels.iter().for_each(|&l| used[l] = true);
        if used.iter().all(|&u| u) {
            return labels;
        }
    }
    // Rejection is hopeless when len is close to g: pin one slot per label at
    // random positions and draw the rest freely.
    let mut labels: Vec<usize> = (0..len).map(|_| rng.random_range(0..g)).collect();
    for (label, pos) in sample(rng, len, g).into_iter().enumerate() {
        labels[pos] = label;
    }
    labels
}

/// Initialization (a): a uniformly random `r`-subset labeled at random so
/// that no cluster is empty.
pub fn init_random_a<R: Rng + ?Sized>(
    data: &Dataset,
    settings: &SolverSettings,
    rng: &mut R,
) -> Result<Configuration> {
    let (n, r, g) = (data.n(), settings.r, settings.g);
    if r < g || r > n {
        return Err(TdcError::InvalidSettings(format!(
            "need g <= r <= n, got g={g}, r={r}, n={n}"
        )));
    }
    let mut subset = sample(rng, n, r).into_vec();
    subset.sort_unstable();
    let labels = surjective_labels(r, g, rng);
    Configuration::from_parts(g, subset, labels)
}

fn init_random_b_with_means<R: Rng + ?Sized>(
    data: &Dataset,
    settings: &SolverSettings,
    rng: &mut R,
) -> Result<(Configuration, Vec<Vec<f64>>)> {
    let (n, g) = (data.n(), settings.g);
    let k = g * data.d() + 1;
    if n < k {
        return Err(TdcError::InvalidSettings(format!(
            "need n >= g*d + 1 = {k}, got n = {n}"
        )));
    }
    let carried = initial_carried_means(data, g);
    for _ in 0..INIT_B_ATTEMPTS {
        let mut subset = sample(rng, n, k).into_vec();
        subset.sort_unstable();
        let labels = surjective_labels(k, g, rng);
        let seed_cfg = Configuration::from_parts(g, subset, labels)?;
        match pooled_stats(data, &seed_cfg, &carried) {
            Ok(stats) => {
                let out = reduction_step(data, &stats, settings.r)?;
                return Ok((out.config, stats.means));
            }
            Err(TdcError::SingularSsp { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(TdcError::InitFailed {
        attempts: INIT_B_ATTEMPTS,
    })
}

/// Initialization (b): draw `gd + 1` observations, partition them at random
/// into `g` nonempty clusters and apply one reduction step. Singular seeds
/// are redrawn up to 100 times.
pub fn init_random_b<R: Rng + ?Sized>(
    data: &Dataset,
    settings: &SolverSettings,
    rng: &mut R,
) -> Result<Configuration> {
    init_random_b_with_means(data, settings, rng).map(|(c, _)| c)
}

/// Generator of start `index` for a given seed.
pub fn start_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub start: usize,
    pub iterations: usize,
    pub steps: usize,
    pub log_det: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidCheck {
    pub cluster: usize,
    /// `K_j`: largest squared distance of a member of cluster `j` to its mean.
    pub bound: f64,
    /// Smallest `d(i, j)^2 - K_j` over discarded observations (infinite when
    /// nothing is discarded).
    pub worst_margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneCheck {
    pub cluster: usize,
    pub other: usize,
    pub midpoint: Vec<f64>,
    /// Smallest `h_jl(x_i)` over members of cluster `j`.
    pub worst_margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationCertificate {
    pub ellipsoids: Vec<EllipsoidCheck>,
    pub hyperplanes: Vec<HyperplaneCheck>,
    pub passed: bool,
}

#[inline]
fn slack(v: f64) -> f64 {
    CERTIFICATE_TOL * v.abs().max(1.0)
}

/// Geometric certificate of a limit configuration: every nonempty cluster is
/// enclosed by an ellipsoid that excludes the discarded observations, and
/// every pair of nonempty clusters is split by the hyperplane
/// `h_jl(y) = 2 (y - (m_j + m_l)/2)^T W^{-1} (m_j - m_l)`.
///
/// `carried` supplies the means of empty clusters; pass `None` to use the
/// grand mean.
pub fn separation_certificate(
    data: &Dataset,
    cfg: &Configuration,
    carried: Option<&[Vec<f64>]>,
) -> Result<SeparationCertificate> {
    let g = cfg.g();
    let default_carried;
    let carried = match carried {
        Some(c) => c,
        None => {
            default_carried = initial_carried_means(data, g);
            &default_carried
        }
    };
    let stats = pooled_stats(data, cfg, carried)?;
    let table = distance_table(data, &stats);
    let n = data.n();
    let assignment = cfg.assignment(n);
    let best = |i: usize| -> f64 {
        table[i * g..(i + 1) * g]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    };

    // A fixed point must be a possible output of a reduction step from its
    // own statistics.
    let mut worst = 0.0f64;
    let mut max_retained = f64::NEG_INFINITY;
    for (i, l) in cfg.iter() {
        let own = table[i * g + l];
        let b = best(i);
        worst = worst.max(own - b - slack(b));
        max_retained = max_retained.max(own);
    }
    let discarded = cfg.discarded(n);
    for &i in &discarded {
        let b = best(i);
        worst = worst.max(max_retained - b - slack(b));
    }
    if worst > 0.0 {
        return Err(TdcError::NotAFixedPoint {
            worst_violation: worst,
        });
    }

    let sizes = cfg.sizes();
    let nonempty: Vec<usize> = (0..g).filter(|&j| sizes[j] > 0).collect();
    let mut ellipsoids = Vec::new();
    for &j in &nonempty {
        let bound = cfg
            .iter()
            .filter(|&(_, l)| l == j)
            .map(|(i, _)| table[i * g + j])
            .fold(f64::NEG_INFINITY, f64::max);
        let worst_margin = discarded
            .iter()
            .map(|&i| table[i * g + j] - bound)
            .fold(f64::INFINITY, f64::min);
        ellipsoids.push(EllipsoidCheck {
            cluster: j,
            bound,
            worst_margin,
            passed: worst_margin >= -slack(bound),
        });
    }
    let mut hyperplanes = Vec::new();
    for &j in &nonempty {
        for &l in &nonempty {
            if j == l {
                continue;
            }
            let (mj, ml) = (&stats.means[j], &stats.means[l]);
            let delta: Vec<f64> = mj.iter().zip(ml).map(|(a, b)| a - b).collect();
            let w_inv_delta = stats.ssp.solve(&delta)?;
            let midpoint: Vec<f64> = mj.iter().zip(ml).map(|(a, b)| 0.5 * (a + b)).collect();
            let worst_margin = (0..n)
                .filter(|&i| assignment[i] == Some(j))
                .map(|i| {
                    2.0 * data
                        .point(i)
                        .iter()
                        .zip(&midpoint)
                        .zip(&w_inv_delta)
                        .map(|((x, c), w)| (x - c) * w)
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            hyperplanes.push(HyperplaneCheck {
                cluster: j,
                other: l,
                midpoint,
                worst_margin,
                passed: worst_margin >= -CERTIFICATE_TOL,
            });
        }
    }
    let passed = ellipsoids.iter().all(|e| e.passed) && hyperplanes.iter().all(|h| h.passed);
    Ok(SeparationCertificate {
        ellipsoids,
        hyperplanes,
        passed,
    })
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub best: Configuration,
    pub cost: Cost,
    /// Cluster means; empty clusters report their carried mean.
    pub mle_means: Vec<Vec<f64>>,
    /// `W / r`.
    pub mle_cov: SymMatrix,
    pub pooled_ssp: SymMatrix,
    pub mixing: Vec<f64>,
    pub per_start: Vec<StartSummary>,
    pub certificate: Option<SeparationCertificate>,
    pub certificate_error: Option<String>,
    pub starts_run: usize,
    pub failed_starts: usize,
    /// Number of starts whose limit tied the optimum.
    pub ties: usize,
    pub total_steps: usize,
    pub descent_violations: usize,
}

struct StartResult {
    summary: StartSummary,
    limit: Option<(Configuration, PooledStats)>,
    violations: usize,
}

fn run_start(data: &Dataset, settings: &SolverSettings, index: usize) -> StartResult {
    let mut rng = start_rng(settings.seed, index);
    let init = match settings.init {
        InitMethod::A => init_random_a(data, settings, &mut rng)
            .map(|c| (c, initial_carried_means(data, settings.g))),
        InitMethod::B => init_random_b_with_means(data, settings, &mut rng),
    };
    let outcome =
        init.and_then(|(cfg, carried)| iterate_with_carried(data, &cfg, &carried, settings));
    match outcome {
        Ok(out) => StartResult {
            summary: StartSummary {
                start: index,
                iterations: out.iterations,
                steps: out.steps,
                log_det: Some(out.stats.ssp.log_det()),
                converged: out.converged,
                error: None,
            },
            violations: out.descent_violations,
            limit: Some((out.config, out.stats)),
        },
        Err(e) => StartResult {
            summary: StartSummary {
                start: index,
                iterations: 0,
                steps: 0,
                log_det: None,
                converged: false,
                error: Some(e.to_string()),
            },
            limit: None,
            violations: 0,
        },
    }
}

/// Runs independent starts and returns the limit configuration with the
/// smallest log-determinant. Starts run concurrently; the result depends
/// only on `(data, settings)`.
pub fn multistart(data: &Dataset, settings: &SolverSettings) -> Result<SolveReport> {
    settings.validate(data)?;
    let mut pool: TiePool<PooledStats> = TiePool::default();
    let mut per_start = Vec::new();
    let mut incumbent = f64::INFINITY;
    let mut since_improvement = 0usize;
    let mut violations = 0;
    let mut stop = false;
    let mut next = 0;
    while next < settings.starts && !stop {
        let end = (next + START_CHUNK).min(settings.starts);
        let results: Vec<StartResult> = (next..end)
            .into_par_iter()
            .map(|k| run_start(data, settings, k))
            .collect();
        next = end;
        for res in results {
            violations += res.violations;
            per_start.push(res.summary);
            if let Some((cfg, stats)) = res.limit {
                let ld = stats.ssp.log_det();
                if ld < incumbent - tie_band(incumbent, settings.log_det_tol)
                    || !incumbent.is_finite()
                {
                    incumbent = ld;
                    since_improvement = 0;
                } else {
                    since_improvement += 1;
                }
                pool.push(Ranked {
                    objective: ld,
                    between_trace: stats.between_groups_trace(),
                    config: cfg,
                    item: stats,
                });
            } else {
                since_improvement += 1;
            }
            if settings.patience.is_some_and(|p| since_improvement >= p) {
                stop = true;
                break;
            }
        }
    }
    let starts_run = per_start.len();
    let failed_starts = per_start.iter().filter(|s| s.error.is_some()).count();
    let total_steps = per_start.iter().map(|s| s.steps).sum();
    let (winner, ties) = pool
        .finish()
        .ok_or(TdcError::AllStartsFailed { starts: starts_run })?;
    let stats = winner.item;
    let best = winner.config;
    let (certificate, certificate_error) =
        match separation_certificate(data, &best, Some(&stats.means)) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
    Ok(SolveReport {
        cost: tdc_cost(&stats),
        mle_means: stats.means.clone(),
        mle_cov: stats.mle_covariance(),
        pooled_ssp: stats.ssp.matrix().clone(),
        mixing: estimate_mixing(&best, data.n()),
        best,
        per_start,
        certificate,
        certificate_error,
        starts_run,
        failed_starts,
        ties,
        total_steps,
        descent_violations: violations,
    })
}
