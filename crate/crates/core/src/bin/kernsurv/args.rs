use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kernsurv::neural::Architecture;
use serde::{Serialize, Serializer};

#[derive(Debug, Parser)]
#[command(name = "kernsurv", version, about = "Learned-kernel survival analysis with conformal prediction intervals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Train an embedding kernel, optionally selecting hyperparameters by cross-validation.
    Fit(FitArgs),
    /// Survival curves and survival-time estimates for query rows.
    Predict(PredictArgs),
    /// Nonconformity scores of a calibration set.
    Calibrate(CalibrateArgs),
    /// Conformal prediction intervals for query rows.
    Intervals(IntervalsArgs),
    /// Concordance and coverage reports on a test set.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic dataset with a known survival function.
    Synth(SynthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Predict(_) => "predict",
            Command::Calibrate(_) => "calibrate",
            Command::Intervals(_) => "intervals",
            Command::Evaluate(_) => "evaluate",
            Command::Synth(_) => "synth",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Fit(a) => &a.common,
            Command::Predict(a) => &a.common,
            Command::Calibrate(a) => &a.common,
            Command::Intervals(a) => &a.common,
            Command::Evaluate(a) => &a.common,
            Command::Synth(a) => &a.common,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Seed for every random stream of the run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory (created if missing).
    #[arg(long, default_value = "kernsurv-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Schema {
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "event")]
    pub event_col: String,
    /// Comma-separated feature columns; defaults to the model's features, or
    /// every other column.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeEstimatorKind {
    Median,
    Mean,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimatorArgs {
    #[arg(long, value_enum, default_value_t = TimeEstimatorKind::Median)]
    pub time_estimator: TimeEstimatorKind,
    /// Integration horizon of the mean; defaults to the last grid time.
    #[arg(long)]
    pub horizon: Option<f64>,
}

/// Kernel selection: `learned`, `constant`, `box:SIGMA` or `precomputed:PATH`.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelChoice {
    Learned,
    Constant,
    Box(f64),
    Precomputed(PathBuf),
}

impl FromStr for KernelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "learned" => return Ok(KernelChoice::Learned),
            "constant" => return Ok(KernelChoice::Constant),
            _ => {}
        }
        if let Some(sigma) = s.strip_prefix("box:") {
            let sigma: f64 = sigma.parse().map_err(|_| format!("invalid box width `{sigma}`"))?;
            if !(sigma > 0.0) || sigma.is_infinite() {
                return Err(format!("box width must be positive, got {sigma}"));
            }
            return Ok(KernelChoice::Box(sigma));
        }
        if let Some(path) = s.strip_prefix("precomputed:") {
            return Ok(KernelChoice::Precomputed(PathBuf::from(path)));
        }
        Err(format!("unknown kernel `{s}`; expected learned, constant, box:SIGMA or precomputed:PATH"))
    }
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelChoice::Learned => f.write_str("learned"),
            KernelChoice::Constant => f.write_str("constant"),
            KernelChoice::Box(s) => write!(f, "box:{s}"),
            KernelChoice::Precomputed(p) => write!(f, "precomputed:{}", p.display()),
        }
    }
}

impl Serialize for KernelChoice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Time-grid size: a point count, or `all` for the unique observed times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GridSize {
    All,
    Points(usize),
}

impl GridSize {
    pub fn points(self) -> Option<usize> {
        match self {
            GridSize::All => None,
            GridSize::Points(m) => Some(m),
        }
    }
}

impl FromStr for GridSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(GridSize::All);
        }
        match s.parse::<usize>() {
            Ok(m) if m >= 2 => Ok(GridSize::Points(m)),
            _ => Err(format!("grid size must be `all` or an integer ≥ 2, got `{s}`")),
        }
    }
}

impl fmt::Display for GridSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSize::All => f.write_str("all"),
            GridSize::Points(m) => write!(f, "{m}"),
        }
    }
}

impl Serialize for GridSize {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvMetric {
    Ctd,
    Loss,
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    s.parse::<Architecture>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[command(flatten)]
    pub schema: Schema,
    /// Standardize features with statistics fitted on the training file.
    #[arg(long)]
    pub standardize: bool,
    /// basic, diag, res-basic, res-diag or mlp.
    #[arg(long, value_parser = parse_arch, default_value = "basic")]
    #[serde(serialize_with = "display")]
    pub arch: Architecture,
    /// Headerless kernel matrix over the training rows used for MDS warm-starting.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    /// Fixes the epoch count instead of searching over it.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Number of grid points, or `all` for the unique observed times.
    #[arg(long)]
    pub m_times: Option<GridSize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Train once with the given (or default) hyperparameters.
    #[arg(long)]
    pub no_cv: bool,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = CvMetric::Ctd)]
    pub cv_metric: CvMetric,
    #[command(flatten)]
    pub common: Common,
}

fn display<T: fmt::Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub query: PathBuf,
    #[command(flatten)]
    pub schema: Schema,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Kernel weighting the training subjects.
    #[arg(long, default_value = "learned")]
    pub kernel: KernelChoice,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    #[command(flatten)]
    pub schema: Schema,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMode {
    Marginal,
    Local,
}

/// Local-mode center: a query row index, or a comma-separated feature vector
/// (write `3.0`, not `3`, for a one-feature vector).
#[derive(Debug, Clone, PartialEq)]
pub enum CenterSpec {
    Index(usize),
    Vector(Vec<f64>),
}

impl FromStr for CenterSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(i) = s.trim().parse::<usize>() {
            return Ok(CenterSpec::Index(i));
        }
        s.split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| format!("invalid center coordinate `{v}`"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(CenterSpec::Vector)
    }
}

impl Serialize for CenterSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            CenterSpec::Index(i) => s.serialize_u64(*i as u64),
            CenterSpec::Vector(v) => v.serialize(s),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IntervalsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub query: PathBuf,
    #[command(flatten)]
    pub schema: Schema,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Comma-separated miscoverage levels.
    #[arg(long, value_delimiter = ',', default_value = "0.2")]
    pub alpha: Vec<f64>,
    #[arg(long, value_enum, default_value_t = IntervalMode::Marginal)]
    pub mode: IntervalMode,
    /// Local mode: shared center; by default each query is its own center.
    #[arg(long)]
    pub center: Option<CenterSpec>,
    /// Local-mode weighting kernel; a precomputed matrix indexes the
    /// calibration rows followed by the query rows.
    #[arg(long, default_value = "learned")]
    pub kernel: KernelChoice,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Ctd,
    MarginalCoverage,
    LocalCoverage,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub schema: Schema,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ctd")]
    pub metric: Vec<Metric>,
    #[arg(long, value_delimiter = ',', default_value = "0.2")]
    pub alpha: Vec<f64>,
    /// Bootstrap resamples for C^td and repetitions for coverage experiments;
    /// 0 disables the C^td bootstrap.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Comma-separated fractions of the calibration half (marginal coverage).
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub calib_fraction: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub centers: usize,
    #[arg(long, default_value_t = 100)]
    pub points_per_center: usize,
    /// Local-coverage weighting kernel; a precomputed matrix indexes the test rows.
    #[arg(long, default_value = "learned")]
    pub kernel: KernelChoice,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthModel {
    /// Exponential times with log-rate `beta . x`.
    Exp,
    /// Two Gaussian clusters with cluster-specific Weibull times.
    Clusters,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthModel::Exp)]
    pub model: SynthModel,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub d: usize,
    /// Target censored fraction.
    #[arg(long, default_value_t = 0.3)]
    pub censor: f64,
    /// Exponential coefficients; missing trailing entries are 0.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub beta: Vec<f64>,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 2.0)]
    pub shape: f64,
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "1.0,4.0")]
    pub scales: Vec<f64>,
    #[command(flatten)]
    pub common: Common,
}
