mod manifest;
mod output;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tdc_core::breakdown::{
    check_separation_property, locate_ten_point_flip, probe_mean_breakdown, probe_ssp_breakdown,
    ten_point_critical_gap, Placement, ReplacementPlan, SeparationMode, SeparationSpec,
};
use tdc_core::datagen::{generate, GeneratorSpec, OutlierMode};
use tdc_core::oracle::{enumerate_optimum, impartial_trimming_oracle};
use tdc_core::stats::{best_matching, sweep_r, NormalParams, DEFAULT_GAMMAS};
use tdc_core::{multistart, Dataset, InitMethod, SolverSettings, TdcError};

use manifest::RunManifest;
use output::*;

#[derive(Parser)]
#[command(
    name = "tdc",
    version,
    about = "Trimmed determinant criterion clustering"
)]
struct Cli {
    /// Worker threads for the solver (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multistart solve of a CSV data set.
    Cluster(ClusterArgs),
    /// Synthetic data with planted clusters and outliers.
    Generate(GenerateArgs),
    /// Compare a cluster result with the truth sidecar of `generate`.
    Evaluate(EvaluateArgs),
    /// Solve for several trimming levels and recommend one.
    SweepR(SweepArgs),
    /// Exact optimum by enumeration (tiny inputs only).
    Oracle(OracleArgs),
    /// Replacement experiments and the separation property.
    #[command(subcommand)]
    Breakdown(BreakdownCommand),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Init {
    A,
    B,
}

#[derive(Args, Serialize)]
struct SolverArgs {
    #[arg(long)]
    g: usize,
    #[arg(long, default_value_t = 2000)]
    starts: usize,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    /// Stop after this many starts without improvement; 0 runs every start.
    #[arg(long, default_value_t = 200)]
    patience: usize,
    #[arg(long, value_enum, default_value = "a")]
    init: Init,
    #[arg(long, env = "TDC_SEED", default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn settings(&self, r: usize) -> SolverSettings {
        SolverSettings::new(self.g, r)
            .with_starts(self.starts)
            .with_max_iters(self.max_iters)
            .with_seed(self.seed)
            .with_patience((self.patience > 0).then_some(self.patience))
            .with_init(match self.init {
                Init::A => InitMethod::A,
                Init::B => InitMethod::B,
            })
    }
}

#[derive(Args, Serialize)]
struct ClusterArgs {
    #[serde(skip)]
    csv: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    r: usize,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Outliers {
    Shell,
    Diffuse,
    None,
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    /// Generator spec as JSON; other generator flags are ignored, except `--seed`.
    #[arg(long)]
    #[serde(skip)]
    spec: Option<PathBuf>,
    #[arg(long, required_unless_present = "spec")]
    d: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long, default_value_t = 100)]
    per_cluster: usize,
    #[arg(long, default_value_t = 0.999)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "shell")]
    outliers: Outliers,
    #[arg(long, default_value_t = 0.999)]
    beta: f64,
    /// Diffuse outlier mean (default: origin).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu: Option<Vec<f64>>,
    /// Diffuse outlier variance.
    #[arg(long, default_value_t = 16.0)]
    v: f64,
    #[arg(long)]
    outlier_count: Option<usize>,
    #[arg(long, env = "TDC_SEED")]
    seed: Option<u64>,
    /// Writes `<prefix>.csv` and `<prefix>.truth.json`.
    #[arg(long)]
    #[serde(skip)]
    out_prefix: PathBuf,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[serde(skip)]
    result: PathBuf,
    #[serde(skip)]
    truth: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[serde(skip)]
    csv: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    /// Candidate trimming levels; overrides `--fractions`.
    #[arg(long, value_delimiter = ',')]
    r: Option<Vec<usize>>,
    /// Candidates as fractions of n, rounded.
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.85,0.9,0.95,1.0")]
    fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ObjectiveArg {
    Determinant,
    Trace,
}

#[derive(Args, Serialize)]
struct OracleArgs {
    #[serde(skip)]
    csv: PathBuf,
    #[arg(long)]
    g: usize,
    #[arg(long)]
    r: usize,
    #[arg(long, value_enum, default_value = "determinant")]
    objective: ObjectiveArg,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BreakdownCommand {
    /// Exact optima along a replacement schedule; tests the mean vectors.
    Mean(ProbeArgs),
    /// Extreme eigenvalues of the optimal pooled SSP along a schedule.
    Ssp(ProbeArgs),
    /// Both sides of the separation property for a partition.
    Separation(SeparationArgs),
    /// Bisection for the gap where twin replacements on the ten-point line
    /// stop being retained.
    Flip(FlipArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PlacementArg {
    TwinPair,
    FarApart,
}

#[derive(Args, Serialize)]
struct ProbeArgs {
    #[serde(skip)]
    csv: PathBuf,
    #[arg(long)]
    g: usize,
    #[arg(long)]
    r: usize,
    /// Replaced observations (1-based).
    #[arg(long, value_delimiter = ',', required_unless_present = "plan")]
    indices: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', default_value = "1e2,1e4,1e6")]
    magnitudes: Vec<f64>,
    #[arg(long, value_enum, default_value = "twin-pair")]
    placement: PlacementArg,
    #[arg(long, default_value_t = 1e-3)]
    gap: f64,
    #[arg(long, default_value_t = 2.0)]
    factor: f64,
    /// Replacement plan as JSON (1-based indices); overrides the plan flags.
    #[arg(long)]
    #[serde(skip)]
    plan: Option<PathBuf>,
    /// Also run multistart at each magnitude (mean probe only).
    #[arg(long)]
    multistart: bool,
    #[arg(long, default_value_t = 500)]
    starts: usize,
    #[arg(long, env = "TDC_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Exact,
    Fast,
}

#[derive(Args, Serialize)]
struct SeparationArgs {
    #[serde(skip)]
    csv: PathBuf,
    #[arg(long)]
    r: usize,
    /// Groups of 1-based indices separated by `;`, e.g. `1,2,3;4,5,6`.
    #[arg(long, value_parser = parse_partition)]
    partition: PartitionArg,
    #[arg(long)]
    u: usize,
    #[arg(long, value_enum, default_value = "fast")]
    mode: ModeArg,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct FlipArgs {
    #[arg(long, default_value_t = 1.1)]
    lo: f64,
    #[arg(long, default_value_t = 1.4)]
    hi: f64,
    #[arg(long, default_value_t = 1e-3)]
    gap: f64,
    #[arg(long, default_value_t = 1e6)]
    magnitude: f64,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
struct PartitionArg(Vec<Vec<usize>>);

fn parse_partition(s: &str) -> Result<PartitionArg, String> {
    s.split(';')
        .map(|group| {
            group
                .split(',')
                .map(|t| match t.trim().parse::<usize>() {
                    Ok(0) => Err("indices are 1-based".to_string()),
                    Ok(i) => Ok(i - 1),
                    Err(e) => Err(format!("bad index {t:?}: {e}")),
                })
                .collect()
        })
        .collect::<Result<_, _>>()
        .map(PartitionArg)
}

#[derive(Debug)]
enum CliError {
    Core(TdcError),
    Io(PathBuf, std::io::Error),
    Json(PathBuf, serde_json::Error),
    Usage(String),
}

impl From<TdcError> for CliError {
    fn from(e: TdcError) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Json(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(TdcError::Parse { .. }) | CliError::Json(..) | CliError::Usage(_) => 2,
            CliError::Core(TdcError::AllStartsFailed { .. }) => 3,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<(T, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let value =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Json(path.to_path_buf(), e))?;
    Ok((value, bytes))
}

fn load_csv(path: &Path) -> CliResult<(Dataset, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let data = Dataset::read_csv(bytes.as_slice()).map_err(|e| match e {
        TdcError::Parse { line, message } => CliError::Core(TdcError::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        }),
        other => CliError::Core(other),
    })?;
    Ok((data, bytes))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(p.to_path_buf(), e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(PathBuf::from("<stdout>"), e)),
    }
}

fn cmd_cluster(a: &ClusterArgs) -> CliResult<()> {
    let (data, bytes) = load_csv(&a.csv)?;
    let report = multistart(&data, &a.solver.settings(a.r))?;
    let manifest = RunManifest::new("cluster", a, Some(a.solver.seed), &[&bytes]);
    emit(
        &ClusterOutput::new(manifest, data.n(), data.d(), &report),
        a.out.as_deref(),
    )
}

fn generator_spec(a: &GenerateArgs) -> CliResult<(GeneratorSpec, Vec<u8>)> {
    if let Some(path) = &a.spec {
        let (mut spec, bytes): (GeneratorSpec, _) = read_json(path)?;
        if let Some(seed) = a.seed {
            spec.seed = seed;
        }
        return Ok((spec, bytes));
    }
    let d = a.d.expect("clap enforces --d without --spec");
    let outlier_mode = match a.outliers {
        Outliers::Shell => OutlierMode::Shell { beta: a.beta },
        Outliers::Diffuse => OutlierMode::Diffuse {
            mu: a.mu.clone().unwrap_or_else(|| vec![0.0; d]),
            v: a.v,
        },
        Outliers::None => OutlierMode::None,
    };
    let spec = GeneratorSpec {
        d,
        clusters: a.clusters,
        per_cluster: a.per_cluster,
        alpha: a.alpha,
        outlier_mode,
        outlier_count: a.outlier_count,
        seed: a.seed.unwrap_or(0),
    };
    Ok((spec, Vec::new()))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let (spec, bytes) = generator_spec(a)?;
    let data = generate(&spec)?;
    let inputs: Vec<&[u8]> = if bytes.is_empty() {
        Vec::new()
    } else {
        vec![&bytes]
    };
    let manifest = RunManifest::new("generate", &spec, Some(spec.seed), &inputs);
    let csv_path = with_suffix(&a.out_prefix, ".csv");
    let mut csv = Vec::new();
    data.dataset.write_csv(&mut csv)?;
    fs::write(&csv_path, csv).map_err(|e| CliError::Io(csv_path, e))?;
    let truth = TruthOutput {
        manifest,
        truth: data.truth(&spec),
    };
    emit(&truth, Some(&with_suffix(&a.out_prefix, ".truth.json")))
}

fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let (result, rb): (ClusterOutput, _) = read_json(&a.result)?;
    let (truth, tb): (TruthOutput, _) = read_json(&a.truth)?;
    if result.partition.labels.len() != truth.truth.labels.len() {
        return Err(CliError::Usage(format!(
            "result covers {} observations, truth {}",
            result.partition.labels.len(),
            truth.truth.labels.len()
        )));
    }
    let cov = tdc_core::linalg::SymMatrix::from_rows(&result.covariance)?;
    let estimated = result
        .means
        .iter()
        .map(|m| NormalParams::new(m.clone(), &cov))
        .collect::<tdc_core::Result<Vec<_>>>()?;
    let matching = best_matching(&estimated, &truth.truth.params)?;
    let manifest = RunManifest::new("evaluate", a, None, &[&rb, &tb]);
    emit(
        &EvaluateOutput::new(
            manifest,
            &matching,
            &result.partition.labels,
            &truth.truth.labels,
        ),
        a.out.as_deref(),
    )
}

fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let (data, bytes) = load_csv(&a.csv)?;
    let n = data.n();
    let mut candidates = match &a.r {
        Some(r) => r.clone(),
        None => a
            .fractions
            .iter()
            .map(|f| {
                if *f > 0.0 && *f <= 1.0 {
                    Ok((f * n as f64).round() as usize)
                } else {
                    Err(CliError::Usage(format!("fraction {f} outside (0, 1]")))
                }
            })
            .collect::<CliResult<_>>()?,
    };
    candidates.sort_unstable();
    candidates.dedup();
    let gammas = a.gammas.clone().unwrap_or_else(|| DEFAULT_GAMMAS.to_vec());
    if let Some(g) = gammas.iter().find(|&&g| !(g > 0.0 && g < 1.0)) {
        return Err(CliError::Usage(format!("gamma {g} outside (0, 1)")));
    }
    let report = sweep_r(&data, &candidates, &a.solver.settings(n), &gammas);
    let manifest = RunManifest::new("sweep-r", a, Some(a.solver.seed), &[&bytes]);
    emit(&SweepOutput::new(manifest, n, report), a.out.as_deref())
}

fn cmd_oracle(a: &OracleArgs) -> CliResult<()> {
    let (data, bytes) = load_csv(&a.csv)?;
    let res = match a.objective {
        ObjectiveArg::Determinant => enumerate_optimum(&data, a.g, a.r)?,
        ObjectiveArg::Trace => impartial_trimming_oracle(&data, a.g, a.r)?,
    };
    let manifest = RunManifest::new("oracle", a, None, &[&bytes]);
    emit(
        &OracleOutput::new(manifest, data.n(), data.d(), &res),
        a.out.as_deref(),
    )
}

fn replacement_plan(a: &ProbeArgs) -> CliResult<(ReplacementPlan, Vec<u8>)> {
    let zero_based = |v: &[usize]| {
        v.iter()
            .map(|&i| {
                i.checked_sub(1)
                    .ok_or_else(|| CliError::Usage("indices are 1-based".into()))
            })
            .collect::<CliResult<Vec<_>>>()
    };
    if let Some(path) = &a.plan {
        let (p, bytes): (PlanOutput, _) = read_json(path)?;
        return Ok((
            ReplacementPlan::new(zero_based(&p.indices)?, p.magnitudes, p.placement),
            bytes,
        ));
    }
    let indices = zero_based(a.indices.as_deref().unwrap_or_default())?;
    let placement = match a.placement {
        PlacementArg::TwinPair => Placement::TwinPair { gap: a.gap },
        PlacementArg::FarApart => Placement::FarApart { factor: a.factor },
    };
    Ok((
        ReplacementPlan::new(indices, a.magnitudes.clone(), placement),
        Vec::new(),
    ))
}

fn cmd_probe(a: &ProbeArgs, ssp: bool) -> CliResult<()> {
    let (data, bytes) = load_csv(&a.csv)?;
    let (plan, plan_bytes) = replacement_plan(a)?;
    let inputs: Vec<&[u8]> = [bytes.as_slice(), plan_bytes.as_slice()]
        .into_iter()
        .filter(|b| !b.is_empty())
        .collect();
    if ssp {
        let rep = probe_ssp_breakdown(&data, a.g, a.r, &plan)?;
        let manifest = RunManifest::new("breakdown ssp", a, None, &inputs);
        emit(
            &SspProbeOutput::new(manifest, data.n(), &rep),
            a.out.as_deref(),
        )
    } else {
        let settings = a.multistart.then(|| {
            SolverSettings::new(a.g, a.r)
                .with_starts(a.starts)
                .with_seed(a.seed)
        });
        let rep = probe_mean_breakdown(&data, a.g, a.r, &plan, settings.as_ref())?;
        let seed = a.multistart.then_some(a.seed);
        let manifest = RunManifest::new("breakdown mean", a, seed, &inputs);
        emit(
            &MeanProbeOutput::new(manifest, data.n(), &rep),
            a.out.as_deref(),
        )
    }
}

fn cmd_separation(a: &SeparationArgs) -> CliResult<()> {
    let (data, bytes) = load_csv(&a.csv)?;
    let spec = SeparationSpec {
        partition: a.partition.0.clone(),
        u: a.u,
    };
    let mode = match a.mode {
        ModeArg::Exact => SeparationMode::Exact,
        ModeArg::Fast => SeparationMode::Fast,
    };
    let result = check_separation_property(&data, &spec, a.r, mode)?;
    let manifest = RunManifest::new("breakdown separation", a, None, &[&bytes]);
    emit(&SeparationOutput { manifest, result }, a.out.as_deref())
}

fn cmd_flip(a: &FlipArgs) -> CliResult<()> {
    let flip = locate_ten_point_flip(a.lo, a.hi, a.gap, a.magnitude, a.tol)?;
    let eps = a.gap * a.gap / 2.0;
    let out = FlipOutput {
        manifest: RunManifest::new("breakdown flip", a, None, &[]),
        flip,
        critical_gap: ten_point_critical_gap(eps),
    };
    emit(&out, a.out.as_deref())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {t} threads: {e}")))?;
    }
    match &cli.command {
        Command::Cluster(a) => cmd_cluster(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::SweepR(a) => cmd_sweep(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Breakdown(BreakdownCommand::Mean(a)) => cmd_probe(a, false),
        Command::Breakdown(BreakdownCommand::Ssp(a)) => cmd_probe(a, true),
        Command::Breakdown(BreakdownCommand::Separation(a)) => cmd_separation(a),
        Command::Breakdown(BreakdownCommand::Flip(a)) => cmd_flip(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tdc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
