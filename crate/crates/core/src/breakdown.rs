//! Replacement experiments on the criterion's means and pooled SSP matrix,
//! and an exhaustive checker for the cluster separation property.

use serde::{Deserialize, Serialize};

use crate::combinatorics::{binomial, combinations};
use crate::config::{
    check_general_position_eps, initial_carried_means, pooled_ssp, Configuration, Dataset,
    GeneralPositionMode,
};
use crate::error::{Result, TdcError};
use crate::linalg::{extreme_eigenvalues, factorize, SymMatrix};
use crate::oracle::enumerate_optimum;
use crate::solver::{multistart, SolverSettings};

/// Ratio of final to first largest mean norm above which the means are
/// declared broken down.
pub const BREAKDOWN_RATIO: f64 = 1e3;
/// Limit on the number of subconfigurations enumerated by the exact
/// separation check.
pub const SEPARATION_LIMIT: f64 = 1e7;
/// Limit on `(#subsets) * (#subset means)^2` for the separation check.
pub const SEPARATION_WORK_LIMIT: f64 = 1e9;
const REPLACEMENT_GP_EPS: f64 = 1e-13;
const GP_SAMPLES: usize = 200_000;

/// The ten-point line with gap `a`:
/// `(-2, -1, 0, 1, 2, a + 2, a + 3, a + 4, a + 5, a + 6)`.
pub fn ten_point_line(a: f64) -> Result<Dataset> {
    if !(a > 1.0) {
        return Err(TdcError::PreconditionViolated(format!(
            "gap must exceed 1, got {a}"
        )));
    }
    Dataset::from_values(&[
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
    ])
}

/// Gap at which the twin-replacement configuration stops being optimal for
/// twins with SSP `eps`.
pub fn ten_point_critical_gap(eps: f64) -> f64 {
    (52.0 / 5.0 - 1.2 * eps).sqrt() - 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Points `M, M + gap, M + 2 gap, ...` along the first axis.
    TwinPair { gap: f64 },
    /// Points at mutual distance and distance from every original
    /// observation at least `factor * M`.
    FarApart { factor: f64 },
    /// Explicit points, one list per schedule entry.
    Custom { points: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementPlan {
    /// Distinct 0-based indices of the replaced observations.
    pub indices: Vec<usize>,
    pub magnitudes: Vec<f64>,
    pub placement: Placement,
}

impl ReplacementPlan {
    pub fn new(indices: Vec<usize>, magnitudes: Vec<f64>, placement: Placement) -> Self {
        Self {
            indices,
            magnitudes,
            placement,
        }
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }

    pub fn validate_for(&self, data: &Dataset) -> Result<()> {
        let bad = |m: String| Err(TdcError::InvalidSettings(m));
        let mut sorted = self.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.indices.len() {
            return bad("replacement indices must be distinct".into());
        }
        if sorted.last().is_some_and(|&i| i >= data.n()) {
            return bad(format!(
                "replacement index out of range for n = {}",
                data.n()
            ));
        }
        if self.magnitudes.is_empty() || self.magnitudes.iter().any(|&m| !(m > 0.0)) {
            return bad("magnitudes must be positive".into());
        }
        if self.magnitudes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("magnitude schedule must be strictly increasing".into());
        }
        match &self.placement {
            Placement::TwinPair { gap } if !(*gap > 0.0) => bad("twin gap must be positive".into()),
            Placement::FarApart { factor } if !(*factor > 0.0) => {
                bad("distance factor must be positive".into())
            }
            Placement::Custom { points } => {
                if points.len() != self.magnitudes.len()
                    || points
                        .iter()
                        .any(|p| p.len() != self.m() || p.iter().any(|x| x.len() != data.d()))
                {
                    return bad(
                        "custom placement must give m points of dimension d per magnitude".into(),
                    );
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Replacement points for schedule entry `step`.
    pub fn points(&self, data: &Dataset, step: usize) -> Vec<Vec<f64>> {
        let (d, m) = (data.d(), self.m());
        let magnitude = self.magnitudes[step];
        match &self.placement {
            Placement::TwinPair { gap } => (0..m)
                .map(|k| {
                    let mut p = vec![0.0; d];
                    p[0] = magnitude + k as f64 * gap;
                    for (j, v) in p.iter_mut().enumerate().skip(1) {
                        *v = 0.5 * gap * ((k + 1) as f64).powi(j as i32 + 1);
                    }
                    p
                })
                .collect(),
            Placement::FarApart { factor } => {
                let c = data.points().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                (0..m)
                    .map(|k| {
                        let t = (k + 1) as f64;
                        let mut p = vec![0.0; d];
                        p[0] = c + factor * magnitude * t;
                        for (j, v) in p.iter_mut().enumerate().skip(1) {
                            *v = 0.5 * magnitude * (t / m as f64).powi(j as i32 + 1);
                        }
                        p
                    })
                    .collect()
            }
            Placement::Custom { points } => points[step].clone(),
        }
    }
}

/// `data` with the plan's observations replaced at schedule entry `step`.
/// Fails with [`TdcError::GeneralPositionViolated`] if the result is not in
/// general position.
pub fn apply_replacements_at(
    data: &Dataset,
    plan: &ReplacementPlan,
    step: usize,
) -> Result<Dataset> {
    plan.validate_for(data)?;
    if plan.m() == 0 {
        return Ok(data.clone());
    }
    let mut out = data.clone();
    for (&i, p) in plan.indices.iter().zip(plan.points(data, step)) {
        out = out.with_row(i, &p)?;
    }
    let report = check_general_position_eps(
        &out,
        GeneralPositionMode::Auto {
            samples: GP_SAMPLES,
            seed: 0,
        },
        REPLACEMENT_GP_EPS,
    )?;
    if let Some(subset) = report.violations.into_iter().next() {
        return Err(TdcError::GeneralPositionViolated { subset });
    }
    Ok(out)
}

/// As [`apply_replacements_at`] for the schedule entry equal to `magnitude`.
pub fn apply_replacements(
    data: &Dataset,
    plan: &ReplacementPlan,
    magnitude: f64,
) -> Result<Dataset> {
    if plan.m() == 0 {
        return Ok(data.clone());
    }
    let step = plan
        .magnitudes
        .iter()
        .position(|&m| m == magnitude)
        .ok_or_else(|| {
            TdcError::InvalidSettings(format!("magnitude {magnitude} is not in the schedule"))
        })?;
    apply_replacements_at(data, plan, step)
}

fn max_mean_norm(data: &Dataset, cfg: &Configuration) -> f64 {
    cfg.clusters()
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| data.mean_of(c).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanProbeStep {
    pub magnitude: f64,
    pub optimum: Configuration,
    pub cost: f64,
    pub max_mean_norm: f64,
    pub replacements_retained: usize,
    pub multistart_max_mean_norm: Option<f64>,
    pub multistart_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanProbeReport {
    pub g: usize,
    pub r: usize,
    pub plan: ReplacementPlan,
    pub steps: Vec<MeanProbeStep>,
    /// Final over first largest mean norm.
    pub ratio: f64,
    pub breakdown: bool,
}

/// Solves the criterion exactly at every magnitude of the plan and tests
/// whether the largest mean norm grows without bound. When `solver` is given,
/// multistart results are recorded alongside.
pub fn probe_mean_breakdown(
    data: &Dataset,
    g: usize,
    r: usize,
    plan: &ReplacementPlan,
    solver: Option<&SolverSettings>,
) -> Result<MeanProbeReport> {
    plan.validate_for(data)?;
    let mut steps = Vec::with_capacity(plan.magnitudes.len());
    for (step, &magnitude) in plan.magnitudes.iter().enumerate() {
        let modified = apply_replacements_at(data, plan, step)?;
        let res = enumerate_optimum(&modified, g, r)?;
        let retained = plan
            .indices
            .iter()
            .filter(|i| res.optimum.retained().binary_search(i).is_ok())
            .count();
        let (ms_norm, ms_cost) = match solver {
            Some(s) => {
                let rep = multistart(&modified, &SolverSettings { g, r, ..s.clone() })?;
                (
                    Some(max_mean_norm(&modified, &rep.best)),
                    Some(rep.cost.det),
                )
            }
            None => (None, None),
        };
        steps.push(MeanProbeStep {
            magnitude,
            max_mean_norm: max_mean_norm(&modified, &res.optimum),
            optimum: res.optimum,
            cost: res.cost,
            replacements_retained: retained,
            multistart_max_mean_norm: ms_norm,
            multistart_cost: ms_cost,
        });
    }
    let first = steps[0].max_mean_norm;
    let last = steps[steps.len() - 1].max_mean_norm;
    let ratio = last / first.max(f64::MIN_POSITIVE);
    Ok(MeanProbeReport {
        g,
        r,
        plan: plan.clone(),
        steps,
        ratio,
        breakdown: ratio > BREAKDOWN_RATIO,
    })
}

/// Bisection on the gap of the ten-point line for the value where the
/// twin replacements at indices 7, 8 (1-based) stop being retained by the
/// optimum with `r = 8`, `g = 2`.
pub fn locate_ten_point_flip(lo: f64, hi: f64, gap: f64, magnitude: f64, tol: f64) -> Result<f64> {
    let retains = |a: f64| -> Result<bool> {
        let data = ten_point_line(a)?;
        let plan = ReplacementPlan::new(vec![6, 7], vec![magnitude], Placement::TwinPair { gap });
        let modified = apply_replacements_at(&data, &plan, 0)?;
        let res = enumerate_optimum(&modified, 2, 8)?;
        Ok(res.optimum.retained().contains(&6) && res.optimum.retained().contains(&7))
    };
    let (mut lo, mut hi) = (lo, hi);
    if !retains(lo)? || retains(hi)? {
        return Err(TdcError::PreconditionViolated(
            "the verdict does not change over the bracket".into(),
        ));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if retains(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `min` over `(d + 1)`-subsets `E` of `lambda_min(W_E)`.
pub fn alpha_constant(data: &Dataset) -> Result<f64> {
    let (n, d) = (data.n(), data.d());
    guard(binomial(n, d + 1), SEPARATION_LIMIT)?;
    Ok(combinations(n, d + 1)
        .map(|e| extreme_eigenvalues(&data.ssp_of(&e)).0)
        .fold(f64::INFINITY, f64::min))
}

/// `max` over `(r - g + 1)`-subsets `C` of `det W_C`, divided by
/// `alpha^(d - 1)`: a data-only bound on `lambda_max` of the optimum under at
/// most `n - r + g - 1` replacements.
pub fn gamma_bound(data: &Dataset, g: usize, r: usize, alpha: f64) -> Result<f64> {
    let (n, d) = (data.n(), data.d());
    if r < g || r - g + 1 > n {
        return Err(TdcError::InvalidSettings(format!(
            "need g <= r <= n + g - 1, got g={g}, r={r}"
        )));
    }
    let k = r - g + 1;
    guard(binomial(n, k), SEPARATION_LIMIT)?;
    let max_det = combinations(n, k)
        .map(|c| factorize(&data.ssp_of(&c)).map(|f| f.det()).unwrap_or(0.0))
        .fold(0.0, f64::max);
    Ok(max_det / alpha.powi(d as i32 - 1))
}

fn guard(count: f64, limit: f64) -> Result<()> {
    if count > limit {
        Err(TdcError::InstanceTooLarge { count, limit })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SspProbeStep {
    pub magnitude: f64,
    pub optimum: Configuration,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SspProbeReport {
    pub g: usize,
    pub r: usize,
    pub m: usize,
    pub plan: ReplacementPlan,
    /// `2r >= n + g(d + 1)`.
    pub bounds_apply: bool,
    /// `m <= n - r + g - 1`.
    pub bounded_regime: bool,
    pub alpha: f64,
    pub gamma: f64,
    pub clean_lambda: (f64, f64),
    pub steps: Vec<SspProbeStep>,
    pub lambda_min_bounded: bool,
    pub lambda_max_bounded: bool,
    /// Final over first `lambda_max` exceeds the breakdown ratio.
    pub lambda_max_unbounded: bool,
}

fn optimum_eigenvalues(data: &Dataset, g: usize, r: usize) -> Result<(Configuration, f64, f64)> {
    let res = enumerate_optimum(data, g, r)?;
    let (_, _, w) = pooled_ssp(data, &res.optimum, &initial_carried_means(data, g))?;
    let (lo, hi) = extreme_eigenvalues(&w);
    Ok((res.optimum, lo, hi))
}

/// Tracks the extreme eigenvalues of the optimal pooled SSP matrix along the
/// plan's schedule, against the data-only bounds `alpha` and `gamma`.
pub fn probe_ssp_breakdown(
    data: &Dataset,
    g: usize,
    r: usize,
    plan: &ReplacementPlan,
) -> Result<SspProbeReport> {
    plan.validate_for(data)?;
    let (n, d, m) = (data.n(), data.d(), plan.m());
    let alpha = alpha_constant(data)?;
    let gamma = gamma_bound(data, g, r, alpha)?;
    let (_, clean_lo, clean_hi) = optimum_eigenvalues(data, g, r)?;
    let mut steps = Vec::new();
    for (step, &magnitude) in plan.magnitudes.iter().enumerate() {
        let modified = apply_replacements_at(data, plan, step)?;
        let (optimum, lambda_min, lambda_max) = optimum_eigenvalues(&modified, g, r)?;
        steps.push(SspProbeStep {
            magnitude,
            optimum,
            lambda_min,
            lambda_max,
        });
    }
    let slack = 1e-9;
    let lambda_min_bounded = steps.iter().all(|s| s.lambda_min >= alpha * (1.0 - slack));
    let lambda_max_bounded = steps.iter().all(|s| s.lambda_max <= gamma * (1.0 + slack));
    let first = steps[0].lambda_max;
    let last = steps[steps.len() - 1].lambda_max;
    Ok(SspProbeReport {
        g,
        r,
        m,
        plan: plan.clone(),
        bounds_apply: 2 * r >= n + g * (d + 1),
        bounded_regime: m + r < n + g,
        alpha,
        gamma,
        clean_lambda: (clean_lo, clean_hi),
        steps,
        lambda_min_bounded,
        lambda_max_bounded,
        lambda_max_unbounded: last / first.max(f64::MIN_POSITIVE) > BREAKDOWN_RATIO,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationSpec {
    /// Partition of `0..n` into `g` subsets.
    pub partition: Vec<Vec<usize>>,
    pub u: usize,
}

/// `ceil(max{2r - n, (g - 1) g d + 1, n - u + 1} / ((g - 1) g))`.
pub fn k_gu(n: usize, r: usize, g: usize, d: usize, u: usize) -> usize {
    let a = (2 * r) as i64 - n as i64;
    let b = ((g - 1) * g * d + 1) as i64;
    let c = n as i64 - u as i64 + 1;
    let top = a.max(b).max(c);
    let den = ((g - 1) * g) as i64;
    ((top + den - 1) / den) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeparationMode {
    /// Enumerates every pooled SSP matrix of subconfigurations.
    Exact,
    /// Substitutes the partition's own pooled SSP matrix on both sides,
    /// which defines a narrower class.
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationResult {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub k_gu: usize,
    pub mode: SeparationMode,
    pub matrices_scanned: u64,
}

/// Means of every nonempty subset of every partition member, tagged with the
/// member index.
fn subset_means(data: &Dataset, partition: &[Vec<usize>]) -> Vec<(usize, Vec<f64>)> {
    let d = data.d();
    let mut out = Vec::new();
    for (j, p) in partition.iter().enumerate() {
        for mask in 1u64..(1u64 << p.len()) {
            let mut mean = vec![0.0; d];
            let mut count = 0;
            for (b, &i) in p.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    count += 1;
                    mean.iter_mut()
                        .zip(data.point(i))
                        .for_each(|(m, x)| *m += x);
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            out.push((j, mean));
        }
    }
    out
}

/// Smallest `(m_k - m_j)^T W^{-1} (m_k - m_j)` over subset means of
/// different partition members.
fn min_cross_form(w: &SymMatrix, means: &[(usize, Vec<f64>)]) -> Result<f64> {
    let f = factorize(w)?;
    let z: Vec<(usize, Vec<f64>)> = means
        .iter()
        .map(|(j, m)| {
            let mut v = m.clone();
            f.forward_substitute(&mut v);
            (*j, v)
        })
        .collect();
    let mut best = f64::INFINITY;
    for (a, (ja, za)) in z.iter().enumerate() {
        for (jb, zb) in &z[a + 1..] {
            if ja != jb {
                best = best.min(za.iter().zip(zb).map(|(x, y)| (x - y) * (x - y)).sum());
            }
        }
    }
    Ok(best)
}

/// Pooled SSP of `subset` clustered by partition membership.
fn induced_ssp(data: &Dataset, member: &[usize], g: usize, subset: &[usize]) -> SymMatrix {
    let mut w = SymMatrix::zeros(data.d());
    for j in 0..g {
        let c: Vec<usize> = subset.iter().copied().filter(|&i| member[i] == j).collect();
        if c.len() > 1 {
            w = w.add(&data.ssp_of(&c));
        }
    }
    w
}

/// Evaluates both sides of the separation property for a partition of the
/// data. Pooled SSP matrices grow in the positive semidefinite order as
/// points are added, so the exact mode scans only subconfigurations of full
/// size `min(r, n)`.
pub fn check_separation_property(
    data: &Dataset,
    spec: &SeparationSpec,
    r: usize,
    mode: SeparationMode,
) -> Result<SeparationResult> {
    let (n, d) = (data.n(), data.d());
    let g = spec.partition.len();
    if g < 2 {
        return Err(TdcError::PreconditionViolated(
            "the separation property needs at least two clusters".into(),
        ));
    }
    let mut member = vec![usize::MAX; n];
    for (j, p) in spec.partition.iter().enumerate() {
        if p.len() < spec.u.max(1) {
            return Err(TdcError::PreconditionViolated(format!(
                "partition member {j} has {} elements, fewer than u = {}",
                p.len(),
                spec.u
            )));
        }
        for &i in p {
            if i >= n || member[i] != usize::MAX {
                return Err(TdcError::PreconditionViolated(format!(
                    "index {i} is out of range or repeated in the partition"
                )));
            }
            member[i] = j;
        }
    }
    if member.contains(&usize::MAX) {
        return Err(TdcError::PreconditionViolated(
            "the partition does not cover the data".into(),
        ));
    }
    if r == 0 || r > n {
        return Err(TdcError::InvalidSettings(format!(
            "r = {r} out of range for n = {n}"
        )));
    }
    let k = k_gu(n, r, g, d, spec.u);
    let mean_count: f64 = spec
        .partition
        .iter()
        .map(|p| 2f64.powi(p.len() as i32) - 1.0)
        .sum();
    let m = r.min(n);
    match mode {
        SeparationMode::Exact => {
            guard(2f64.powi(n as i32), SEPARATION_LIMIT)?;
            guard(
                binomial(n, m) * mean_count * mean_count,
                SEPARATION_WORK_LIMIT,
            )?;
        }
        SeparationMode::Fast => guard(mean_count * mean_count, SEPARATION_WORK_LIMIT)?,
    }
    let eligible: Vec<&Vec<usize>> = spec.partition.iter().filter(|p| p.len() >= k).collect();
    if eligible.is_empty() {
        return Err(TdcError::PreconditionViolated(format!(
            "no partition member has k = {k} elements"
        )));
    }
    guard(
        eligible.iter().map(|p| binomial(p.len(), k)).sum(),
        SEPARATION_LIMIT,
    )?;
    let min_det_c = eligible
        .iter()
        .flat_map(|p| {
            combinations(p.len(), k).map(move |c| c.iter().map(|&b| p[b]).collect::<Vec<_>>())
        })
        .map(|c| factorize(&data.ssp_of(&c)).map(|f| f.det()).unwrap_or(0.0))
        .fold(f64::INFINITY, f64::min);
    let means = subset_means(data, &spec.partition);
    let (lhs, max_det, scanned) = match mode {
        SeparationMode::Fast => {
            let all: Vec<usize> = (0..n).collect();
            let w = induced_ssp(data, &member, g, &all);
            (min_cross_form(&w, &means)?, factorize(&w)?.det(), 1)
        }
        SeparationMode::Exact => {
            let mut lhs = f64::INFINITY;
            let mut max_det = 0.0f64;
            let mut scanned = 0u64;
            for subset in combinations(n, m) {
                let mut sizes = vec![0usize; g];
                subset.iter().for_each(|&i| sizes[member[i]] += 1);
                if sizes.iter().all(|&s| s < d + 1) {
                    continue;
                }
                let w = induced_ssp(data, &member, g, &subset);
                scanned += 1;
                lhs = lhs.min(min_cross_form(&w, &means)?);
                max_det = max_det.max(factorize(&w)?.det());
            }
            (lhs, max_det, scanned)
        }
    };
    let rhs = 2.0 * max_det / min_det_c;
    Ok(SeparationResult {
        holds: lhs > rhs,
        lhs,
        rhs,
        k_gu: k,
        mode,
        matrices_scanned: scanned,
    })
}
