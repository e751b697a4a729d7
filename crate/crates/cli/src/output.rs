//! JSON documents written by the subcommands. Observation indices, cluster
//! labels and start numbers are 1-based; label `0` marks a discarded
//! observation.

use serde::{Deserialize, Serialize};
use tdc_core::breakdown::{MeanProbeReport, SeparationResult, SspProbeReport};
use tdc_core::oracle::{Objective, OracleResult};
use tdc_core::solver::{SeparationCertificate, StartSummary};
use tdc_core::stats::{Matching, SweepReport, TailDiagnostic};
use tdc_core::{Configuration, SolveReport};

use crate::manifest::RunManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub retained: Vec<usize>,
    pub discarded: Vec<usize>,
    /// One entry per observation.
    pub labels: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(cfg: &Configuration, n: usize) -> Self {
        let one = |v: Vec<usize>| v.into_iter().map(|i| i + 1).collect::<Vec<_>>();
        Self {
            retained: one(cfg.retained().to_vec()),
            discarded: one(cfg.discarded(n)),
            labels: cfg
                .assignment(n)
                .into_iter()
                .map(|a| a.map_or(0, |l| l + 1))
                .collect(),
            clusters: cfg.clusters().into_iter().map(one).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartOutput {
    pub start: usize,
    pub iterations: usize,
    pub steps: usize,
    pub log_det: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

impl From<&StartSummary> for StartOutput {
    fn from(s: &StartSummary) -> Self {
        Self {
            start: s.start + 1,
            iterations: s.iterations,
            steps: s.steps,
            log_det: s.log_det,
            converged: s.converged,
            error: s.error.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateOutput {
    pub passed: bool,
    pub ellipsoids: Vec<EllipsoidOutput>,
    pub hyperplanes: Vec<HyperplaneOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidOutput {
    pub cluster: usize,
    pub bound: f64,
    /// `null` when nothing is discarded.
    pub worst_margin: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneOutput {
    pub cluster: usize,
    pub other: usize,
    pub midpoint: Vec<f64>,
    pub worst_margin: Option<f64>,
    pub passed: bool,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl From<&SeparationCertificate> for CertificateOutput {
    fn from(c: &SeparationCertificate) -> Self {
        Self {
            passed: c.passed,
            ellipsoids: c
                .ellipsoids
                .iter()
                .map(|e| EllipsoidOutput {
                    cluster: e.cluster + 1,
                    bound: e.bound,
                    worst_margin: finite(e.worst_margin),
                    passed: e.passed,
                })
                .collect(),
            hyperplanes: c
                .hyperplanes
                .iter()
                .map(|h| HyperplaneOutput {
                    cluster: h.cluster + 1,
                    other: h.other + 1,
                    midpoint: h.midpoint.clone(),
                    worst_margin: finite(h.worst_margin),
                    passed: h.passed,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutput {
    pub manifest: RunManifest,
    pub n: usize,
    pub d: usize,
    pub g: usize,
    pub r: usize,
    #[serde(flatten)]
    pub partition: Partition,
    pub log_det: f64,
    pub det: f64,
    pub means: Vec<Vec<f64>>,
    /// `W / r`.
    pub covariance: Vec<Vec<f64>>,
    pub pooled_ssp: Vec<Vec<f64>>,
    pub mixing: Vec<f64>,
    pub starts_run: usize,
    pub failed_starts: usize,
    pub ties: usize,
    pub descent_violations: usize,
    pub per_start: Vec<StartOutput>,
    pub certificate: Option<CertificateOutput>,
    pub certificate_error: Option<String>,
}

impl ClusterOutput {
    pub fn new(manifest: RunManifest, n: usize, d: usize, rep: &SolveReport) -> Self {
        Self {
            manifest,
            n,
            d,
            g: rep.best.g(),
            r: rep.best.r(),
            partition: Partition::new(&rep.best, n),
            log_det: rep.cost.log_det,
            det: rep.cost.det,
            means: rep.mle_means.clone(),
            covariance: rep.mle_cov.to_rows(),
            pooled_ssp: rep.pooled_ssp.to_rows(),
            mixing: rep.mixing.clone(),
            starts_run: rep.starts_run,
            failed_starts: rep.failed_starts,
            ties: rep.ties,
            descent_violations: rep.descent_violations,
            per_start: rep.per_start.iter().map(StartOutput::from).collect(),
            certificate: rep.certificate.as_ref().map(CertificateOutput::from),
            certificate_error: rep.certificate_error.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthOutput {
    pub manifest: RunManifest,
    #[serde(flatten)]
    pub truth: tdc_core::datagen::Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCounts {
    /// True cluster (1-based).
    pub cluster: usize,
    /// Estimated cluster matched to it (1-based).
    pub matched: usize,
    pub size: usize,
    pub misclassified: usize,
    pub discarded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOutput {
    pub manifest: RunManifest,
    /// `permutation[j]` is the estimated cluster matched to true cluster
    /// `j + 1`.
    pub permutation: Vec<usize>,
    pub distances: Vec<f64>,
    pub max_distance: f64,
    pub clusters: Vec<ClusterCounts>,
    pub misclassified: usize,
    pub outliers_true: usize,
    pub outliers_flagged: usize,
    pub outliers_caught: usize,
    pub outlier_precision: Option<f64>,
    pub outlier_recall: Option<f64>,
}

impl EvaluateOutput {
    pub fn new(
        manifest: RunManifest,
        matching: &Matching,
        estimated: &[usize],
        truth: &[usize],
    ) -> Self {
        let clusters: Vec<ClusterCounts> = matching
            .permutation
            .iter()
            .enumerate()
            .map(|(j, &e)| {
                let members: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == j + 1).collect();
                let discarded = members.iter().filter(|&&i| estimated[i] == 0).count();
                let wrong = members
                    .iter()
                    .filter(|&&i| estimated[i] != 0 && estimated[i] != e + 1)
                    .count();
                ClusterCounts {
                    cluster: j + 1,
                    matched: e + 1,
                    size: members.len(),
                    misclassified: wrong,
                    discarded,
                }
            })
            .collect();
        let outliers_true = truth.iter().filter(|&&l| l == 0).count();
        let outliers_flagged = estimated.iter().filter(|&&l| l == 0).count();
        let outliers_caught = truth
            .iter()
            .zip(estimated)
            .filter(|&(&t, &e)| t == 0 && e == 0)
            .count();
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        Self {
            manifest,
            permutation: matching.permutation.iter().map(|&e| e + 1).collect(),
            distances: matching.distances.clone(),
            max_distance: matching.max_distance,
            misclassified: clusters.iter().map(|c| c.misclassified).sum(),
            clusters,
            outliers_true,
            outliers_flagged,
            outliers_caught,
            outlier_precision: ratio(outliers_caught, outliers_flagged),
            outlier_recall: ratio(outliers_caught, outliers_true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub manifest: RunManifest,
    pub n: usize,
    pub entries: Vec<SweepEntryOutput>,
    pub recommended: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntryOutput {
    pub r: usize,
    pub log_det: Option<f64>,
    pub score: Option<f64>,
    pub diagnostic: Option<TailDiagnostic>,
    pub error: Option<String>,
}

impl SweepOutput {
    pub fn new(manifest: RunManifest, n: usize, rep: SweepReport) -> Self {
        Self {
            manifest,
            n,
            entries: rep
                .entries
                .into_iter()
                .map(|e| SweepEntryOutput {
                    r: e.r,
                    log_det: e.log_det,
                    score: e.diagnostic.as_ref().map(|d| d.score),
                    diagnostic: e.diagnostic,
                    error: e.error,
                })
                .collect(),
            recommended: rep.recommended,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutput {
    pub manifest: RunManifest,
    pub n: usize,
    pub d: usize,
    pub g: usize,
    pub r: usize,
    pub objective: Objective,
    #[serde(flatten)]
    pub partition: Partition,
    pub cost: f64,
    pub log_det: Option<f64>,
    pub configurations_scanned: u64,
    pub singular_skipped: u64,
    pub ties: usize,
}

impl OracleOutput {
    pub fn new(manifest: RunManifest, n: usize, d: usize, res: &OracleResult) -> Self {
        Self {
            manifest,
            n,
            d,
            g: res.optimum.g(),
            r: res.optimum.r(),
            objective: res.objective,
            partition: Partition::new(&res.optimum, n),
            cost: res.cost,
            log_det: finite(res.log_det),
            configurations_scanned: res.num_configurations_scanned,
            singular_skipped: res.singular_skipped,
            ties: res.ties,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutput {
    pub indices: Vec<usize>,
    pub magnitudes: Vec<f64>,
    pub placement: tdc_core::breakdown::Placement,
}

impl From<&tdc_core::breakdown::ReplacementPlan> for PlanOutput {
    fn from(p: &tdc_core::breakdown::ReplacementPlan) -> Self {
        Self {
            indices: p.indices.iter().map(|i| i + 1).collect(),
            magnitudes: p.magnitudes.clone(),
            placement: p.placement.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStepOutput {
    pub magnitude: f64,
    #[serde(flatten)]
    pub partition: Partition,
    pub cost: f64,
    pub max_mean_norm: f64,
    pub replacements_retained: usize,
    pub multistart_max_mean_norm: Option<f64>,
    pub multistart_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanProbeOutput {
    pub manifest: RunManifest,
    pub g: usize,
    pub r: usize,
    pub plan: PlanOutput,
    pub steps: Vec<MeanStepOutput>,
    pub ratio: f64,
    pub breakdown: bool,
    pub verdict: String,
}

impl MeanProbeOutput {
    pub fn new(manifest: RunManifest, n: usize, rep: &MeanProbeReport) -> Self {
        Self {
            manifest,
            g: rep.g,
            r: rep.r,
            plan: PlanOutput::from(&rep.plan),
            steps: rep
                .steps
                .iter()
                .map(|s| MeanStepOutput {
                    magnitude: s.magnitude,
                    partition: Partition::new(&s.optimum, n),
                    cost: s.cost,
                    max_mean_norm: s.max_mean_norm,
                    replacements_retained: s.replacements_retained,
                    multistart_max_mean_norm: s.multistart_max_mean_norm,
                    multistart_cost: s.multistart_cost,
                })
                .collect(),
            ratio: rep.ratio,
            breakdown: rep.breakdown,
            verdict: if rep.breakdown {
                "means break down"
            } else {
                "means bounded"
            }
            .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SspStepOutput {
    pub magnitude: f64,
    #[serde(flatten)]
    pub partition: Partition,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SspProbeOutput {
    pub manifest: RunManifest,
    pub g: usize,
    pub r: usize,
    pub m: usize,
    pub plan: PlanOutput,
    pub bounds_apply: bool,
    pub bounded_regime: bool,
    pub alpha: f64,
    pub gamma: f64,
    pub clean_lambda_min: f64,
    pub clean_lambda_max: f64,
    pub steps: Vec<SspStepOutput>,
    pub lambda_min_bounded: bool,
    pub lambda_max_bounded: bool,
    pub lambda_max_unbounded: bool,
    pub verdict: String,
}

impl SspProbeOutput {
    pub fn new(manifest: RunManifest, n: usize, rep: &SspProbeReport) -> Self {
        let verdict = if rep.lambda_max_unbounded {
            "λ_max unbounded"
        } else if rep.lambda_min_bounded && rep.lambda_max_bounded {
            "eigenvalues bounded"
        } else {
            "eigenvalues outside the data-only bounds"
        };
        Self {
            manifest,
            g: rep.g,
            r: rep.r,
            m: rep.m,
            plan: PlanOutput::from(&rep.plan),
            bounds_apply: rep.bounds_apply,
            bounded_regime: rep.bounded_regime,
            alpha: rep.alpha,
            gamma: rep.gamma,
            clean_lambda_min: rep.clean_lambda.0,
            clean_lambda_max: rep.clean_lambda.1,
            steps: rep
                .steps
                .iter()
                .map(|s| SspStepOutput {
                    magnitude: s.magnitude,
                    partition: Partition::new(&s.optimum, n),
                    lambda_min: s.lambda_min,
                    lambda_max: s.lambda_max,
                })
                .collect(),
            lambda_min_bounded: rep.lambda_min_bounded,
            lambda_max_bounded: rep.lambda_max_bounded,
            lambda_max_unbounded: rep.lambda_max_unbounded,
            verdict: verdict.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationOutput {
    pub manifest: RunManifest,
    #[serde(flatten)]
    pub result: SeparationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipOutput {
    pub manifest: RunManifest,
    pub flip: f64,
    pub critical_gap: f64,
}
