//! Seeded mixtures with axial cluster centers, a shared diagonal covariance
//! and planted outliers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Dataset;
use crate::error::{Result, TdcError};
use crate::linalg::{factorize, SpdMatrix, SymMatrix};
use crate::stats::{chi2_quantile, NormalParams};

pub const SHELL_TRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierMode {
    /// Outliers at squared Mahalanobis radius `chi2_d(beta)` around their
    /// nearest center.
    Shell {
        beta: f64,
    },
    /// Outliers from `N_d(mu, v I)`.
    Diffuse {
        mu: Vec<f64>,
        v: f64,
    },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub d: usize,
    /// At most `2d`; defaults to `2d`.
    pub clusters: Option<usize>,
    pub per_cluster: usize,
    pub alpha: f64,
    pub outlier_mode: OutlierMode,
    /// Defaults to `22 d` unless the mode is `None`.
    pub outlier_count: Option<usize>,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            clusters: None,
            per_cluster: 100,
            alpha: 0.999,
            outlier_mode: OutlierMode::Shell { beta: 0.999 },
            outlier_count: None,
            seed: 0,
        }
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.unwrap_or(2 * self.d)
    }

    pub fn outliers(&self) -> usize {
        match self.outlier_mode {
            OutlierMode::None => 0,
            _ => self.outlier_count.unwrap_or(22 * self.d),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TdcError::InvalidSettings(m));
        let unit = |p: f64| p > 0.0 && p < 1.0;
        if self.d == 0 || self.per_cluster == 0 {
            return bad("d and per_cluster must be positive".into());
        }
        let k = self.cluster_count();
        if k == 0 || k > 2 * self.d {
            return bad(format!("clusters must lie in 1..={}, got {k}", 2 * self.d));
        }
        if !unit(self.alpha) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        match &self.outlier_mode {
            OutlierMode::Shell { beta } if !unit(*beta) => {
                bad(format!("beta must lie in (0, 1), got {beta}"))
            }
            OutlierMode::Diffuse { mu, .. } if mu.len() != self.d => bad(format!(
                "diffuse mean has length {}, expected {}",
                mu.len(),
                self.d
            )),
            OutlierMode::Diffuse { v, .. } if !(*v > 0.0) => {
                bad(format!("diffuse variance must be positive, got {v}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub dataset: Dataset,
    /// `0` for outliers, `j + 1` for cluster `j`.
    pub true_labels: Vec<usize>,
    pub true_params: Vec<NormalParams>,
}

/// Diagonal of the shared covariance: `1.0 + 0.2 k` for the first `d - 1`
/// coordinates and `9.0` for the last.
pub fn shared_variances(d: usize) -> Vec<f64> {
    (0..d)
        .map(|k| {
            if k + 1 == d && d > 1 {
                9.0
            } else {
                1.0 + 0.2 * k as f64
            }
        })
        .collect()
}

/// The `2d` axial centers and the shared covariance. Centers `2k` and
/// `2k + 1` sit at `-/+ sqrt(V_kk chi2_d(alpha) / 2) e_k`.
pub fn make_centers(d: usize, alpha: f64) -> (Vec<Vec<f64>>, SymMatrix) {
    let var = shared_variances(d);
    let q = chi2_quantile(d, alpha);
    let mut centers = Vec::with_capacity(2 * d);
    for (k, v) in var.iter().enumerate() {
        let radius = (v * q / 2.0).sqrt();
        for sign in [-1.0, 1.0] {
            let mut c = vec![0.0; d];
            c[k] = sign * radius;
            centers.push(c);
        }
    }
    (centers, SymMatrix::from_diagonal(&var))
}

/// Box–Muller standard normals with a cached spare.
#[derive(Debug, Clone, Default)]
pub struct StandardNormal {
    spare: Option<f64>,
}

impl StandardNormal {
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        let radius = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        self.spare = Some(radius * s);
        radius * c
    }

    pub fn vector<R: Rng + ?Sized>(&mut self, d: usize, rng: &mut R) -> Vec<f64> {
        (0..d).map(|_| self.sample(rng)).collect()
    }
}

/// `mean + L z` where `L` is the Cholesky factor of the covariance.
fn lower_times(factor: &SpdMatrix, z: &[f64]) -> Vec<f64> {
    let d = factor.dim();
    let l = factor.factor();
    (0..d)
        .map(|i| (0..=i).map(|k| l[i * d + k] * z[k]).sum())
        .collect()
}

pub fn sample_normal<R: Rng + ?Sized>(
    params: &NormalParams,
    normal: &mut StandardNormal,
    rng: &mut R,
) -> Vec<f64> {
    let z = normal.vector(params.dim(), rng);
    lower_times(&params.cov, &z)
        .into_iter()
        .zip(&params.mean)
        .map(|(a, m)| a + m)
        .collect()
}

/// `count` outliers, one per center in turn, at squared Mahalanobis radius
/// `chi2_d(beta)` with uniform direction, resampled until the assigned
/// center is the strictly nearest one.
pub fn sample_shell_outliers<R: Rng + ?Sized>(
    centers: &[Vec<f64>],
    cov: &SymMatrix,
    beta: f64,
    count: usize,
    normal: &mut StandardNormal,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let d = cov.dim();
    let f = factorize(cov)?;
    let radius = chi2_quantile(d, beta).sqrt();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let j = k % centers.len();
        let mut placed = None;
        for _ in 0..SHELL_TRIES {
            let z = normal.vector(d, rng);
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let u: Vec<f64> = z.iter().map(|v| radius * v / norm).collect();
            let o: Vec<f64> = lower_times(&f, &u)
                .iter()
                .zip(&centers[j])
                .map(|(a, c)| a + c)
                .collect();
            let own = f.mahalanobis_sq(&o, &centers[j])?;
            let nearest = centers
                .iter()
                .enumerate()
                .filter(|&(l, _)| l != j)
                .all(|(_, c)| f.mahalanobis_sq(&o, c).is_ok_and(|v| v > own));
            if nearest {
                placed = Some(o);
                break;
            }
        }
        out.push(placed.ok_or(TdcError::ShellPlacementFailed {
            cluster: j,
            tries: SHELL_TRIES,
        })?);
    }
    Ok(out)
}

pub fn sample_diffuse_outliers<R: Rng + ?Sized>(
    mu: &[f64],
    v: f64,
    count: usize,
    normal: &mut StandardNormal,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let s = v.sqrt();
    (0..count)
        .map(|_| mu.iter().map(|m| m + s * normal.sample(rng)).collect())
        .collect()
}

/// Regular observations cluster by cluster, followed by the outliers.
pub fn generate(spec: &GeneratorSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let d = spec.d;
    let (all_centers, cov) = make_centers(d, spec.alpha);
    let centers = &all_centers[..spec.cluster_count()];
    let true_params: Vec<NormalParams> = centers
        .iter()
        .map(|c| NormalParams::new(c.clone(), &cov))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = StandardNormal::default();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (j, p) in true_params.iter().enumerate() {
        for _ in 0..spec.per_cluster {
            rows.push(sample_normal(p, &mut normal, &mut rng));
            labels.push(j + 1);
        }
    }
    let outliers = match &spec.outlier_mode {
        OutlierMode::Shell { beta } => {
            sample_shell_outliers(centers, &cov, *beta, spec.outliers(), &mut normal, &mut rng)?
        }
        OutlierMode::Diffuse { mu, v } => {
            sample_diffuse_outliers(mu, *v, spec.outliers(), &mut normal, &mut rng)
        }
        OutlierMode::None => Vec::new(),
    };
    labels.extend(std::iter::repeat_n(0, outliers.len()));
    rows.extend(outliers);
    Ok(LabeledDataset {
        dataset: Dataset::from_rows(&rows)?,
        true_labels: labels,
        true_params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: GeneratorSpec,
    pub n: usize,
    pub d: usize,
    pub labels: Vec<usize>,
    pub params: Vec<NormalParams>,
}

impl LabeledDataset {
    pub fn truth(&self, spec: &GeneratorSpec) -> Truth {
        Truth {
            spec: spec.clone(),
            n: self.dataset.n(),
            d: self.dataset.d(),
            labels: self.true_labels.clone(),
            params: self.true_params.clone(),
        }
    }

    pub fn write_truth<W: Write>(&self, spec: &GeneratorSpec, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.truth(spec))?;
        Ok(())
    }
}
