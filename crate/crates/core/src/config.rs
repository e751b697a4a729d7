//! Observations, configurations and the pooled SSP matrix.
//!
//! Indices are 0-based inside the library; the command-line layer converts
//! them to the 1-based convention of its JSON outputs. Cluster labels are
//! likewise `0..g` here.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{binomial, combinations};
use crate::error::{Result, TdcError};
use crate::linalg::{det_general, factorize, SpdMatrix, SymMatrix};

/// Immutable `n x d` table of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n: usize,
    d: usize,
    points: Vec<f64>,
}

impl Dataset {
    pub fn new(d: usize, points: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(TdcError::InvalidDataset(
                "dimension must be positive".into(),
            ));
        }
        if points.is_empty() || points.len() % d != 0 {
            return Err(TdcError::InvalidDataset(format!(
                "{} coordinates do not form rows of length {d}",
                points.len()
            )));
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(TdcError::InvalidDataset(format!(
                "non-finite coordinate in row {}",
                pos / d
            )));
        }
        Ok(Self {
            n: points.len() / d,
            d,
            points,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(TdcError::InvalidDataset("ragged rows".into()));
        }
        Self::new(d, rows.iter().flatten().copied().collect())
    }

    /// Builds a one-dimensional dataset.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(1, values.to_vec())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks(self.d)
    }

    pub fn mean_of(&self, indices: &[usize]) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for &i in indices {
            for (acc, x) in m.iter_mut().zip(self.point(i)) {
                *acc += x;
            }
        }
        let k = indices.len() as f64;
        m.iter_mut().for_each(|v| *v /= k);
        m
    }

    pub fn grand_mean(&self) -> Vec<f64> {
        self.mean_of(&(0..self.n).collect::<Vec<_>>())
    }

    /// SSP matrix `W_E` of a nonempty index set.
    pub fn ssp_of(&self, indices: &[usize]) -> SymMatrix {
        let m = self.mean_of(indices);
        let mut w = SymMatrix::zeros(self.d);
        let mut diff = vec![0.0; self.d];
        for &i in indices {
            for ((t, x), mu) in diff.iter_mut().zip(self.point(i)).zip(&m) {
                *t = x - mu;
            }
            w.add_outer(&diff, 1.0);
        }
        w
    }

    /// Largest side of the coordinate bounding box.
    pub fn coordinate_scale(&self) -> f64 {
        (0..self.d)
            .map(|k| {
                let (lo, hi) = self
                    .rows()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                        (lo.min(r[k]), hi.max(r[k]))
                    });
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    /// Returns a copy with row `i` replaced.
    pub fn with_row(&self, i: usize, row: &[f64]) -> Result<Self> {
        if row.len() != self.d {
            return Err(TdcError::DimensionMismatch {
                expected: self.d,
                found: row.len(),
            });
        }
        let mut points = self.points.clone();
        points[i * self.d..(i + 1) * self.d].copy_from_slice(row);
        Self::new(self.d, points)
    }

    /// Applies `x -> T x + b` to every observation (`T` row-major `d x d`).
    pub fn affine_transform(&self, t: &[f64], b: &[f64]) -> Result<Self> {
        let d = self.d;
        let mut points = Vec::with_capacity(self.points.len());
        for row in self.rows() {
            for i in 0..d {
                points.push((0..d).map(|k| t[i * d + k] * row[k]).sum::<f64>() + b[i]);
            }
        }
        Self::new(d, points)
    }

    /// Reads comma-separated observations. A first row that does not parse
    /// as numbers is treated as a header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut points = Vec::new();
        let mut d = None;
        for (row_no, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| TdcError::Parse {
                line: e.position().map_or(row_no + 1, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(row_no + 1, |p| p.line() as usize);
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> =
                record.iter().map(|f| f.parse::<f64>()).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if row_no == 0 => continue,
                Err(e) => {
                    return Err(TdcError::Parse {
                        line,
                        message: format!("non-numeric field: {e}"),
                    })
                }
            };
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(TdcError::Parse {
                    line,
                    message: format!("non-finite value {v}"),
                });
            }
            match d {
                None => d = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(TdcError::Parse {
                        line,
                        message: format!("expected {d} columns, found {}", values.len()),
                    })
                }
                _ => {}
            }
            points.extend(values);
        }
        let d = d.ok_or(TdcError::Parse {
            line: 1,
            message: "no observations".into(),
        })?;
        Self::new(d, points)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        Self::read_csv(text.as_bytes())
    }

    /// Writes one row per observation using the shortest round-trip
    /// representation of each coordinate.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// A retained `r`-subset of the observations together with a cluster label
/// per retained index. Clusters may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    g: usize,
    /// Sorted ascending, distinct.
    retained: Vec<usize>,
    labels: Vec<usize>,
}

impl Configuration {
    /// Builds a configuration from `(index, label)` pairs in any order.
    pub fn new(g: usize, mut pairs: Vec<(usize, usize)>) -> Result<Self> {
        if g == 0 {
            return Err(TdcError::InvalidConfiguration("g must be positive".into()));
        }
        pairs.sort_unstable();
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(TdcError::InvalidConfiguration(
                "duplicate retained index".into(),
            ));
        }
        if let Some(&(_, l)) = pairs.iter().find(|(_, l)| *l >= g) {
            return Err(TdcError::InvalidConfiguration(format!(
                "label {l} out of range for g = {g}"
            )));
        }
        let (retained, labels) = pairs.into_iter().unzip();
        Ok(Self {
            g,
            retained,
            labels,
        })
    }

    pub fn from_parts(g: usize, retained: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        if retained.len() != labels.len() {
            return Err(TdcError::InvalidConfiguration(
                "retained and labels differ in length".into(),
            ));
        }
        Self::new(g, retained.into_iter().zip(labels).collect())
    }

    /// Builds a configuration from explicit clusters.
    pub fn from_clusters(clusters: &[Vec<usize>]) -> Result<Self> {
        let pairs = clusters
            .iter()
            .enumerate()
            .flat_map(|(j, c)| c.iter().map(move |&i| (i, j)))
            .collect();
        Self::new(clusters.len(), pairs)
    }

    pub fn validate_for(&self, n: usize) -> Result<()> {
        match self.retained.last() {
            Some(&last) if last >= n => Err(TdcError::InvalidConfiguration(format!(
                "index {last} out of range for n = {n}"
            ))),
            None => Err(TdcError::InvalidConfiguration("empty configuration".into())),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn g(&self) -> usize {
        self.g
    }

    #[inline]
    pub fn r(&self) -> usize {
        self.retained.len()
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.retained
            .iter()
            .copied()
            .zip(self.labels.iter().copied())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.g];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    pub fn cluster(&self, j: usize) -> Vec<usize> {
        self.iter()
            .filter(|&(_, l)| l == j)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn clusters(&self) -> Vec<Vec<usize>> {
        (0..self.g).map(|j| self.cluster(j)).collect()
    }

    /// Per-observation label over `0..n` (`None` = discarded).
    pub fn assignment(&self, n: usize) -> Vec<Option<usize>> {
        let mut a = vec![None; n];
        for (i, l) in self.iter() {
            a[i] = Some(l);
        }
        a
    }

    pub fn discarded(&self, n: usize) -> Vec<usize> {
        let a = self.assignment(n);
        (0..n).filter(|&i| a[i].is_none()).collect()
    }

    /// Applies a relabeling `j -> perm[j]`.
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        Self {
            g: self.g,
            retained: self.retained.clone(),
            labels: self.labels.iter().map(|&l| perm[l]).collect(),
        }
    }
}

/// Determinant of the pooled SSP matrix, in both linear and log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub det: f64,
    pub log_det: f64,
}

/// Cluster means, sizes and the factorized pooled SSP matrix of a
/// configuration.
#[derive(Debug, Clone)]
pub struct PooledStats {
    /// `g` mean vectors. Empty clusters carry the supplied a-priori mean.
    pub means: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    pub ssp: SpdMatrix,
}

impl PooledStats {
    pub fn g(&self) -> usize {
        self.sizes.len()
    }

    pub fn r(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn is_empty_cluster(&self, j: usize) -> bool {
        self.sizes[j] == 0
    }

    /// MLE of the common covariance matrix, `W / r`.
    pub fn mle_covariance(&self) -> SymMatrix {
        self.ssp.matrix().scaled(1.0 / self.r() as f64)
    }

    /// Trace of the between-groups SSP matrix of the retained observations.
    pub fn between_groups_trace(&self) -> f64 {
        let r = self.r() as f64;
        let d = self.ssp.dim();
        let mut grand = vec![0.0; d];
        for (m, &s) in self.means.iter().zip(&self.sizes) {
            for (acc, v) in grand.iter_mut().zip(m) {
                *acc += s as f64 * v;
            }
        }
        grand.iter_mut().for_each(|v| *v /= r);
        self.means
            .iter()
            .zip(&self.sizes)
            .filter(|(_, &s)| s > 0)
            .map(|(m, &s)| {
                s as f64
                    * m.iter()
                        .zip(&grand)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
            })
            .sum()
    }
}

/// Cluster means (with carried means for empty clusters), sizes and the
/// unfactorized pooled SSP matrix. Two-pass: means first, then centered
/// outer products.
pub fn pooled_ssp(
    data: &Dataset,
    cfg: &Configuration,
    carried_means: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<usize>, SymMatrix)> {
    let d = data.d();
    let g = cfg.g();
    cfg.validate_for(data.n())?;
    if carried_means.len() != g {
        return Err(TdcError::DimensionMismatch {
            expected: g,
            found: carried_means.len(),
        });
    }
    let mut sums = vec![vec![0.0; d]; g];
    let mut sizes = vec![0usize; g];
    for (i, l) in cfg.iter() {
        sizes[l] += 1;
        for (acc, x) in sums[l].iter_mut().zip(data.point(i)) {
            *acc += x;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&sizes)
        .zip(carried_means)
        .map(|((s, &k), carried)| {
            if k == 0 {
                carried.clone()
            } else {
                s.into_iter().map(|v| v / k as f64).collect()
            }
        })
        .collect();
    // Lower triangle accumulation, mirrored once at the end.
    let mut w = vec![0.0; d * d];
    let mut diff = vec![0.0; d];
    for (i, l) in cfg.iter() {
        for ((t, x), m) in diff.iter_mut().zip(data.point(i)).zip(&means[l]) {
            *t = x - m;
        }
        for a in 0..d {
            let da = diff[a];
            let row = &mut w[a * d..a * d + a + 1];
            for (b, cell) in row.iter_mut().enumerate() {
                *cell += da * diff[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            w[b * d + a] = w[a * d + b];
        }
    }
    Ok((means, sizes, SymMatrix::from_row_major(d, w)?))
}

/// Means, sizes and factorized pooled SSP matrix of `cfg`.
///
/// Fails with [`TdcError::SingularSsp`] when the pooled SSP matrix is not
/// positive definite.
pub fn pooled_stats(
    data: &Dataset,
    cfg: &Configuration,
    carried_means: &[Vec<f64>],
) -> Result<PooledStats> {
    let (means, sizes, w) = pooled_ssp(data, cfg, carried_means)?;
    let ssp = factorize(&w).map_err(|_| TdcError::SingularSsp {
        retained: cfg.retained().to_vec(),
        labels: cfg.labels().to_vec(),
    })?;
    Ok(PooledStats { means, sizes, ssp })
}

/// Carried means used before any iterate exists: the grand mean, `g` times.
pub fn initial_carried_means(data: &Dataset, g: usize) -> Vec<Vec<f64>> {
    vec![data.grand_mean(); g]
}

pub fn tdc_cost(stats: &PooledStats) -> Cost {
    let log_det = stats.ssp.log_det();
    Cost {
        det: log_det.exp(),
        log_det,
    }
}

/// `|det(x_1 - x_0, ..., x_d - x_0)|` for `d + 1` points in `R^d`.
pub fn parallelepiped_volume(points: &[&[f64]]) -> Result<f64> {
    let d = points.len().saturating_sub(1);
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(TdcError::DimensionMismatch {
            expected: d + 1,
            found: points.len(),
        });
    }
    let mut m = Vec::with_capacity(d * d);
    for p in &points[1..] {
        m.extend(p.iter().zip(points[0]).map(|(a, b)| a - b));
    }
    Ok(det_general(d, &m).abs())
}

/// How thoroughly to screen a dataset for affine dependencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneralPositionMode {
    /// Every `(d + 1)`-subset; fails with `InstanceTooLarge` beyond the guard.
    Exhaustive,
    /// Exhaustive within the guard, otherwise `samples` random subsets.
    Auto { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralPositionReport {
    /// Violating `(d + 1)`-subsets, 0-based.
    pub violations: Vec<Vec<usize>>,
    pub exhaustive: bool,
    pub subsets_checked: usize,
    pub threshold: f64,
}

/// Largest number of `(d + 1)`-subsets checked exhaustively.
pub const GP_SUBSET_LIMIT: f64 = 1e7;
/// Relative volume threshold, scaled by `coordinate_scale^d`.
pub const EPS_GP: f64 = 1e-9;

pub fn check_general_position(
    data: &Dataset,
    mode: GeneralPositionMode,
) -> Result<GeneralPositionReport> {
    check_general_position_eps(data, mode, EPS_GP)
}

/// As [`check_general_position`] with a custom relative volume threshold.
pub fn check_general_position_eps(
    data: &Dataset,
    mode: GeneralPositionMode,
    eps: f64,
) -> Result<GeneralPositionReport> {
    let (n, d) = (data.n(), data.d());
    let k = d + 1;
    let threshold = eps * data.coordinate_scale().powi(d as i32);
    let total = binomial(n, k);
    let within_guard = (n <= 25 || d <= 3) && total <= GP_SUBSET_LIMIT;
    let volume_of = |subset: &[usize]| -> f64 {
        let pts: Vec<&[f64]> = subset.iter().map(|&i| data.point(i)).collect();
        parallelepiped_volume(&pts).expect("subset has d + 1 points")
    };
    if n < k {
        return Ok(GeneralPositionReport {
            violations: Vec::new(),
            exhaustive: true,
            subsets_checked: 0,
            threshold,
        });
    }
    match mode {
        GeneralPositionMode::Exhaustive if !within_guard => Err(TdcError::InstanceTooLarge {
            count: total,
            limit: GP_SUBSET_LIMIT,
        }),
        GeneralPositionMode::Auto { samples, seed } if !within_guard => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut violations = Vec::new();
            for _ in 0..samples {
                let mut subset = sample(&mut rng, n, k).into_vec();
                subset.sort_unstable();
                if volume_of(&subset) <= threshold {
                    violations.push(subset);
                }
            }
            violations.sort();
            violations.dedup();
            Ok(GeneralPositionReport {
                violations,
                exhaustive: false,
                subsets_checked: samples,
                threshold,
            })
        }
        _ => {
            let mut violations = Vec::new();
            let mut checked = 0;
            for subset in combinations(n, k) {
                checked += 1;
                if volume_of(&subset) <= threshold {
                    violations.push(subset);
                }
            }
            Ok(GeneralPositionReport {
                violations,
                exhaustive: true,
                subsets_checked: checked,
                threshold,
            })
        }
    }
}
