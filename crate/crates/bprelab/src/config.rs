//! Experiment configuration: TOML parsing, validation, and line-anchored
//! error reporting.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::PathBuf;
use std::str::FromStr;

use bprelab_core::estimators::{DEFAULT_PROXY_GAP, MIN_REPLICAS, SIGMA_SLACK};
use bprelab_core::exact::MAX_ORDER;
use bprelab_core::rates::{default_rho_grid, geometric_grid, SERIES_MARGIN};
use bprelab_core::simulate::{DEFAULT_POP_CAP, MAX_POP_CAP};
use bprelab_core::{EnvironmentModel, OffspringLaw};
use serde::{Deserialize, Serialize};
use toml::Spanned;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Rates,
    Exact,
    QuenchedRate,
    AnnealedRate,
    Burkholder,
    Criteria,
    Identity,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Rates,
        Suite::Exact,
        Suite::QuenchedRate,
        Suite::AnnealedRate,
        Suite::Burkholder,
        Suite::Criteria,
        Suite::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Rates => "rates",
            Suite::Exact => "exact",
            Suite::QuenchedRate => "quenched-rate",
            Suite::AnnealedRate => "annealed-rate",
            Suite::Burkholder => "burkholder",
            Suite::Criteria => "criteria",
            Suite::Identity => "identity",
        }
    }

    pub fn simulates(self) -> bool {
        matches!(self, Suite::QuenchedRate | Suite::AnnealedRate | Suite::Burkholder | Suite::Identity)
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL.into_iter().find(|suite| suite.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
            format!("unknown suite `{s}` (expected one of {})", names.join(", "))
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyCheck {
    P2Identities,
    RecursiveInequality,
    GrowthEnvelope,
    Burkholder,
    Identity,
}

impl VerifyCheck {
    pub const ALL: [VerifyCheck; 5] = [
        VerifyCheck::P2Identities,
        VerifyCheck::RecursiveInequality,
        VerifyCheck::GrowthEnvelope,
        VerifyCheck::Burkholder,
        VerifyCheck::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VerifyCheck::P2Identities => "p2-identities",
            VerifyCheck::RecursiveInequality => "recursive-inequality",
            VerifyCheck::GrowthEnvelope => "growth-envelope",
            VerifyCheck::Burkholder => "burkholder",
            VerifyCheck::Identity => "identity",
        }
    }
}

impl FromStr for VerifyCheck {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VerifyCheck::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<&str> = VerifyCheck::ALL.iter().map(|c| c.name()).collect();
            format!("unknown verify check `{s}` (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryOutput {
    #[default]
    None,
    Csv,
    Binary,
    Both,
}

impl TrajectoryOutput {
    pub fn csv(self) -> bool {
        matches!(self, Self::Csv | Self::Both)
    }

    pub fn binary(self) -> bool {
        matches!(self, Self::Binary | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub sigma_slack: f64,
    pub series_margin: f64,
    /// Relative tolerance for exact-arithmetic identities.
    pub exact: f64,
    /// Relative tolerance for the algebraic A / Ahat identity.
    pub identity: f64,
    /// Replaces the lower Burkholder constant (fault injection).
    pub burkholder_a: Option<f64>,
    /// Replaces the upper Burkholder constant (fault injection).
    pub burkholder_b: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            sigma_slack: SIGMA_SLACK,
            series_margin: SERIES_MARGIN,
            exact: 1e-9,
            identity: 1e-9,
            burkholder_a: None,
            burkholder_b: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub environment: EnvironmentModel,
    pub suites: Vec<Suite>,
    pub p: Vec<f64>,
    pub rho_grid: Vec<f64>,
    /// Largest generation in estimation windows and exact tables.
    pub n_max: usize,
    pub replicas: usize,
    pub master_seed: u64,
    pub proxy_gap: usize,
    pub pop_cap: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub quenched_paths: usize,
    pub r_max: usize,
    pub burkholder_rho: Vec<f64>,
    pub burkholder_n: usize,
    pub tolerances: Tolerances,
    pub output_dir: PathBuf,
    pub trajectories: TrajectoryOutput,
    pub verify: Vec<VerifyCheck>,
}

impl ExperimentConfig {
    /// Generations simulated by the rate suites: the window plus the proxy gap.
    pub fn rate_horizon(&self) -> usize {
        self.n_max + self.proxy_gap
    }
}

/// A configuration problem anchored to a line and column of the source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}: {}", self.origin, self.line, self.column, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum Number {
    Int(i64),
    Float(f64),
}

impl Number {
    fn get(self) -> f64 {
        match self {
            Number::Int(i) => i as f64,
            Number::Float(x) => x,
        }
    }
}

type RawLaw = BTreeMap<String, Number>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: Spanned<i64>,
    environment: Spanned<RawEnvironment>,
    experiment: Spanned<RawExperiment>,
    rho_grid: Option<Spanned<RawRhoGrid>>,
    #[serde(default)]
    tolerances: RawTolerances,
    #[serde(default)]
    output: RawOutput,
    verify: Option<RawVerify>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvironment {
    kind: Spanned<String>,
    states: Option<Vec<Spanned<RawLaw>>>,
    weights: Option<Spanned<Vec<Number>>>,
    path: Option<Vec<Spanned<RawLaw>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    suites: Spanned<Vec<Spanned<String>>>,
    p: Option<Spanned<Vec<Number>>>,
    n_max: Spanned<i64>,
    replicas: Option<Spanned<i64>>,
    master_seed: Option<Spanned<i64>>,
    proxy_gap: Option<Spanned<i64>>,
    pop_cap: Option<Spanned<Number>>,
    threads: Option<Spanned<i64>>,
    quenched_paths: Option<Spanned<i64>>,
    r_max: Option<Spanned<i64>>,
    burkholder_rho: Option<Spanned<Vec<Number>>>,
    burkholder_n: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRhoGrid {
    values: Option<Vec<Number>>,
    lo: Option<Number>,
    hi: Option<Number>,
    points: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    sigma_slack: Option<Number>,
    series_margin: Option<Number>,
    exact: Option<Number>,
    identity: Option<Number>,
    burkholder_a: Option<Number>,
    burkholder_b: Option<Number>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
    trajectories: Option<TrajectoryOutput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVerify {
    checks: Spanned<Vec<String>>,
}

struct Anchor<'a> {
    origin: &'a str,
    source: &'a str,
}

impl Anchor<'_> {
    fn at(&self, span: Range<usize>, message: impl Into<String>) -> ConfigError {
        let offset = span.start.min(self.source.len());
        let before = &self.source[..offset];
        let line = before.matches('\n').count() + 1;
        let column = offset - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        ConfigError { origin: self.origin.to_string(), line, column, message: message.into() }
    }

    fn count<T: TryFrom<i64>>(&self, v: &Spanned<i64>, name: &str, min: i64) -> Result<T, ConfigError> {
        let x = *v.get_ref();
        if x < min {
            return Err(self.at(v.span(), format!("{name} must be >= {min}, got {x}")));
        }
        T::try_from(x).map_err(|_| self.at(v.span(), format!("{name} = {x} is out of range")))
    }

    fn law(&self, raw: &Spanned<RawLaw>) -> Result<OffspringLaw, ConfigError> {
        let mut pairs = Vec::with_capacity(raw.get_ref().len());
        for (key, prob) in raw.get_ref() {
            let value: u32 = key
                .trim()
                .parse()
                .map_err(|_| self.at(raw.span(), format!("support value `{key}` is not a non-negative integer")))?;
            pairs.push((value, prob.get()));
        }
        OffspringLaw::new(pairs).map_err(|e| self.at(raw.span(), e.to_string()))
    }
}

/// Parses and validates a configuration. `origin` names the source in
/// error messages.
pub fn parse_config(source: &str, origin: &str) -> Result<ExperimentConfig, ConfigError> {
    let anchor = Anchor { origin, source };
    let raw: RawConfig = toml::from_str(source).map_err(|e| {
        let span = e.span().unwrap_or(0..0);
        anchor.at(span, e.message().trim().to_string())
    })?;

    if *raw.schema_version.get_ref() != i64::from(SCHEMA_VERSION) {
        return Err(anchor.at(
            raw.schema_version.span(),
            format!("unsupported schema_version {}, expected {SCHEMA_VERSION}", raw.schema_version.get_ref()),
        ));
    }

    let env_span = raw.environment.span();
    let env_raw = raw.environment.into_inner();
    let environment = match env_raw.kind.get_ref().as_str() {
        "iid" | "iid_mixture" => {
            if env_raw.path.is_some() {
                return Err(anchor.at(env_raw.kind.span(), "an i.i.d. environment takes `states`, not `path`"));
            }
            let states = env_raw
                .states
                .as_ref()
                .ok_or_else(|| anchor.at(env_span.clone(), "i.i.d. environment needs `states`"))?;
            let laws = states.iter().map(|s| anchor.law(s)).collect::<Result<Vec<_>, _>>()?;
            let weights = match &env_raw.weights {
                Some(w) => w.get_ref().iter().map(|x| x.get()).collect(),
                None if laws.len() == 1 => vec![1.0],
                None => return Err(anchor.at(env_span.clone(), "mixture with several states needs `weights`")),
            };
            let weight_span = env_raw.weights.as_ref().map_or(env_span.clone(), |w| w.span());
            EnvironmentModel::iid(laws, weights).map_err(|e| anchor.at(weight_span, e.to_string()))?
        }
        "fixed" | "fixed_path" => {
            if env_raw.states.is_some() || env_raw.weights.is_some() {
                return Err(anchor.at(env_raw.kind.span(), "a fixed environment takes `path`, not `states`/`weights`"));
            }
            let path = env_raw
                .path
                .as_ref()
                .ok_or_else(|| anchor.at(env_span.clone(), "fixed environment needs `path`"))?;
            let laws = path.iter().map(|s| anchor.law(s)).collect::<Result<Vec<_>, _>>()?;
            EnvironmentModel::fixed(laws).map_err(|e| anchor.at(env_span.clone(), e.to_string()))?
        }
        other => {
            return Err(anchor.at(
                env_raw.kind.span(),
                format!("unknown environment kind `{other}` (expected `iid` or `fixed`)"),
            ))
        }
    };

    let exp_span = raw.experiment.span();
    let exp = raw.experiment.into_inner();
    let mut suites = Vec::new();
    for s in exp.suites.get_ref() {
        let suite: Suite = s.get_ref().parse().map_err(|m: String| anchor.at(s.span(), m))?;
        if suites.contains(&suite) {
            return Err(anchor.at(s.span(), format!("suite `{suite}` listed twice")));
        }
        suites.push(suite);
    }
    if suites.is_empty() {
        return Err(anchor.at(exp.suites.span(), "at least one suite is required"));
    }

    let p: Vec<f64> = match &exp.p {
        Some(list) => {
            let values: Vec<f64> = list.get_ref().iter().map(|x| x.get()).collect();
            if values.is_empty() {
                return Err(anchor.at(list.span(), "`p` must list at least one exponent"));
            }
            if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 1.0)) {
                return Err(anchor.at(list.span(), format!("every p must be finite and > 1, got {bad}")));
            }
            values
        }
        None => vec![2.0],
    };

    let n_max: usize = anchor.count(&exp.n_max, "n_max", 1)?;
    let replicas: usize = match &exp.replicas {
        Some(v) => anchor.count(v, "replicas", 1)?,
        None => 10_000,
    };
    let master_seed: u64 = match &exp.master_seed {
        Some(v) => anchor.count(v, "master_seed", 0)?,
        None => 0,
    };
    let proxy_gap: usize = match &exp.proxy_gap {
        Some(v) => anchor.count(v, "proxy_gap", 1)?,
        None => DEFAULT_PROXY_GAP,
    };
    let pop_cap: u64 = match &exp.pop_cap {
        Some(v) => {
            let cap = v.get_ref().get();
            if !(cap.fract() == 0.0 && (1000.0..=MAX_POP_CAP as f64).contains(&cap)) {
                return Err(anchor.at(v.span(), format!("pop_cap must be a whole number in [1000, {MAX_POP_CAP}], got {cap}")));
            }
            cap as u64
        }
        None => DEFAULT_POP_CAP,
    };
    let threads: usize = match &exp.threads {
        Some(v) => anchor.count(v, "threads", 0)?,
        None => 0,
    };
    let quenched_paths: usize = match &exp.quenched_paths {
        Some(v) => anchor.count(v, "quenched_paths", 1)?,
        None => 3,
    };
    let r_max: usize = match &exp.r_max {
        Some(v) => {
            let r: usize = anchor.count(v, "r_max", 1)?;
            if r > MAX_ORDER {
                return Err(anchor.at(v.span(), format!("r_max must be <= {MAX_ORDER}")));
            }
            r
        }
        None => 4,
    };
    let burkholder_rho: Vec<f64> = match &exp.burkholder_rho {
        Some(list) => {
            let values: Vec<f64> = list.get_ref().iter().map(|x| x.get()).collect();
            if values.is_empty() || values.iter().any(|r| !(r.is_finite() && *r >= 1.0)) {
                return Err(anchor.at(list.span(), "burkholder_rho must be a non-empty list of values >= 1"));
            }
            values
        }
        None => vec![1.0, 1.05],
    };
    let burkholder_n: usize = match &exp.burkholder_n {
        Some(v) => anchor.count(v, "burkholder_n", 0)?,
        None => 8,
    };

    if suites.iter().any(|s| s.simulates()) && replicas < MIN_REPLICAS {
        let span = exp.replicas.as_ref().map_or(exp_span.clone(), |v| v.span());
        return Err(anchor.at(span, format!("simulation suites need replicas >= {MIN_REPLICAS}")));
    }
    let rate_suite = suites.iter().any(|s| matches!(s, Suite::AnnealedRate | Suite::QuenchedRate));
    if rate_suite && n_max < 3 {
        return Err(anchor.at(exp.n_max.span(), "rate suites need n_max >= 3 for a four-point fit"));
    }
    if let EnvironmentModel::FixedPath { path } = &environment {
        let mut need = n_max;
        if rate_suite {
            need = need.max(n_max + proxy_gap);
        }
        if suites.contains(&Suite::Burkholder) {
            need = need.max(burkholder_n + 1);
        }
        if path.len() < need {
            return Err(anchor.at(
                env_span.clone(),
                format!("fixed path has {} laws but the requested suites need {need}", path.len()),
            ));
        }
    }

    let rho_grid = match &raw.rho_grid {
        Some(spec) => {
            let span = spec.span();
            let spec = spec.get_ref();
            let grid = match (&spec.values, spec.lo, spec.hi, spec.points) {
                (Some(values), None, None, None) => values.iter().map(|x| x.get()).collect(),
                (None, Some(lo), Some(hi), points) => {
                    let points = points.unwrap_or(bprelab_core::rates::RHO_GRID_POINTS as i64);
                    let points = usize::try_from(points).unwrap_or(0);
                    geometric_grid(lo.get(), hi.get(), points).map_err(|e| anchor.at(span.clone(), e.to_string()))?
                }
                _ => return Err(anchor.at(span, "rho_grid takes either `values` or `lo`, `hi` (and `points`)")),
            };
            if grid.is_empty() || grid.iter().any(|r: &f64| !(r.is_finite() && *r >= 1.0)) {
                return Err(anchor.at(spec_span(&raw.rho_grid), "rho values must be finite and >= 1"));
            }
            grid
        }
        None => default_grid(&environment, &p),
    };

    let tol = &raw.tolerances;
    let defaults = Tolerances::default();
    let tolerances = Tolerances {
        sigma_slack: tol.sigma_slack.map_or(defaults.sigma_slack, Number::get),
        series_margin: tol.series_margin.map_or(defaults.series_margin, Number::get),
        exact: tol.exact.map_or(defaults.exact, Number::get),
        identity: tol.identity.map_or(defaults.identity, Number::get),
        burkholder_a: tol.burkholder_a.map(Number::get),
        burkholder_b: tol.burkholder_b.map(Number::get),
    };
    let positive = [tolerances.sigma_slack, tolerances.series_margin, tolerances.exact, tolerances.identity];
    if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(anchor.at(find_table(source, "tolerances"), "tolerances must be finite and > 0"));
    }

    let verify = match &raw.verify {
        Some(v) => {
            let mut checks = Vec::new();
            for name in v.checks.get_ref() {
                checks.push(name.parse().map_err(|m: String| anchor.at(v.checks.span(), m))?);
            }
            checks
        }
        None => VerifyCheck::ALL.to_vec(),
    };

    Ok(ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        environment,
        suites,
        p,
        rho_grid,
        n_max,
        replicas,
        master_seed,
        proxy_gap,
        pop_cap,
        threads,
        quenched_paths,
        r_max,
        burkholder_rho,
        burkholder_n,
        tolerances,
        output_dir: PathBuf::from(raw.output.dir.unwrap_or_else(|| "bprelab-out".to_string())),
        trajectories: raw.output.trajectories.unwrap_or_default(),
        verify,
    })
}

fn spec_span(spec: &Option<Spanned<RawRhoGrid>>) -> Range<usize> {
    spec.as_ref().map_or(0..0, |s| s.span())
}

fn find_table(source: &str, name: &str) -> Range<usize> {
    let header = format!("[{name}]");
    source.find(&header).map_or(0..0, |i| i..i + header.len())
}

/// Geometric scan up to 1.2 times the quenched critical rate of the
/// largest exponent, or `[1, 1.05]` when no critical rate is defined.
fn default_grid(env: &EnvironmentModel, p: &[f64]) -> Vec<f64> {
    let p_max = p.iter().copied().fold(2.0, f64::max);
    default_rho_grid(env, p_max).unwrap_or_else(|_| vec![1.0, 1.05])
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
    let origin = path.display().to_string();
    let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
        origin: origin.clone(),
        line: 0,
        column: 0,
        message: format!("cannot read config: {e}"),
    })?;
    parse_config(&source, &origin)
}
