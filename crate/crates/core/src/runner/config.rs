//! Run configuration.
//!
//! The config file is flat UTF-8 text, one `key = value` per line. Blank
//! lines and lines starting with `#` are ignored; values are taken verbatim
//! after trimming, with optional surrounding double quotes removed. Relative
//! paths are resolved against the directory of the config file. Later keys
//! override earlier ones, and command-line overrides go through the same
//! [`RunConfig::set`] entry point.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus_io::Stage;
use crate::evaluation::OverlapMode;
use crate::llm_gateway::{CompletionProfile, RetryPolicy};
use crate::rag_compare::{ComparisonContext, QueryMode};
use crate::summarizer::SummaryConfig;
use crate::text_units::BoundaryPolicy;

pub const RUN_DIR_ENV: &str = "ASC2END_RUN_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("`{key}`: {message}")]
    Value { key: String, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("{0}")]
    Invalid(String),
}

/// Pipeline variant. `Full` runs every module; the others each remove one
/// (or, for `Baseline`, all but the comparison call).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    Baseline,
    NoDs,
    NoRag,
    NoCa,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Full, Mode::Baseline, Mode::NoDs, Mode::NoRag, Mode::NoCa];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Baseline => "baseline",
            Self::NoDs => "no_ds",
            Self::NoRag => "no_rag",
            Self::NoCa => "no_ca",
        }
    }

    /// Stages whose artifacts this mode writes, in execution order.
    pub fn stages(self) -> &'static [Stage] {
        match self {
            Self::Full | Self::NoCa => &[Stage::Summary, Stage::Retrieval, Stage::Assessment],
            Self::Baseline => &[Stage::Assessment],
            Self::NoDs => &[Stage::Retrieval, Stage::Assessment],
            Self::NoRag => &[Stage::Summary, Stage::Assessment],
        }
    }

    pub fn summarizes(self) -> bool {
        self.stages().contains(&Stage::Summary)
    }

    pub fn retrieves(self) -> bool {
        self.stages().contains(&Stage::Retrieval)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == normalized)
            .ok_or_else(|| format!("unknown mode `{s}` (expected full, baseline, no-ds, no-rag or no-ca)"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            "http" => Ok(Self::Http),
            other => Err(format!("unknown backend `{other}` (expected mock or http)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub key_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            key_env: None,
            timeout_secs: 120,
        }
    }
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    /// Reads the API key from the configured variable, if any.
    pub fn api_key(&self) -> Result<Option<String>, ConfigError> {
        match &self.key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ConfigError::Invalid(format!("environment variable `{var}` is not set"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockSetting {
    /// Fixed when every backend is a mock, system time otherwise.
    #[default]
    Auto,
    System,
    Fixed,
}

impl FromStr for ClockSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Self::Auto),
            "system" => Ok(Self::System),
            "fixed" => Ok(Self::Fixed),
            other => Err(format!("unknown clock `{other}` (expected auto, system or fixed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub criteria: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    pub company: String,
    pub target_topic: String,
    pub mode: Mode,
    pub k: usize,
    pub workers: usize,
    pub summary: SummaryConfig,
    pub query_mode: QueryMode,
    pub sample: Option<usize>,
    pub seed: u64,
    pub machine: CompletionProfile,
    pub human: CompletionProfile,
    pub machine_backend: BackendConfig,
    pub human_backend: BackendConfig,
    pub embedding_backend: BackendConfig,
    pub embedding_model: String,
    pub embedding_dim: usize,
    pub max_in_flight: usize,
    pub retry_max_attempts: u32,
    pub retry_initial_backoff_ms: u64,
    pub clock: ClockSetting,
    pub rouge_overlap: OverlapMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            criteria: None,
            run_dir: None,
            company: String::new(),
            target_topic: String::new(),
            mode: Mode::Full,
            k: 3,
            workers: 4,
            summary: SummaryConfig::default(),
            query_mode: QueryMode::default(),
            sample: None,
            seed: 0,
            machine: CompletionProfile::machine_level(),
            human: CompletionProfile::human_level(),
            machine_backend: BackendConfig::default(),
            human_backend: BackendConfig::default(),
            embedding_backend: BackendConfig::default(),
            embedding_model: "mock".into(),
            embedding_dim: 256,
            max_in_flight: 8,
            retry_max_attempts: RetryPolicy::default().max_attempts,
            retry_initial_backoff_ms: RetryPolicy::default().initial_backoff.as_millis() as u64,
            clock: ClockSetting::Auto,
            rouge_overlap: OverlapMode::default(),
        }
    }
}

fn parsed<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_owned(),
        message: e.to_string(),
    })
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            cfg.set(key, value, base)?;
        }
        Ok(cfg)
    }

    /// Applies one `key = value` setting. Relative paths resolve against
    /// `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), ConfigError> {
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        match key {
            "corpus" => self.corpus = Some(resolve(base, value)),
            "criteria" => self.criteria = Some(resolve(base, value)),
            "run_dir" => self.run_dir = Some(resolve(base, value)),
            "company" => self.company = value.to_owned(),
            "target_topic" => self.target_topic = value.to_owned(),
            "mode" => self.mode = parsed(key, value)?,
            "k" => self.k = parsed(key, value)?,
            "workers" => self.workers = parsed(key, value)?,
            "query_mode" => self.query_mode = parsed(key, value)?,
            "sample" => self.sample = Some(parsed(key, value)?),
            "seed" => self.seed = parsed(key, value)?,
            "clock" => self.clock = parsed(key, value)?,
            "max_in_flight" => self.max_in_flight = parsed(key, value)?,
            "rouge_overlap" => self.rouge_overlap = parsed(key, value)?,
            "retry.max_attempts" => self.retry_max_attempts = parsed(key, value)?,
            "retry.initial_backoff_ms" => self.retry_initial_backoff_ms = parsed(key, value)?,
            "summary.chunk_budget_tokens" => self.summary.chunk_budget_tokens = parsed(key, value)?,
            "summary.segment_budget_tokens" => self.summary.segment_budget_tokens = parsed(key, value)?,
            "summary.threshold_tokens" => self.summary.threshold_tokens = parsed(key, value)?,
            "summary.max_passes" => self.summary.max_passes = parsed(key, value)?,
            "summary.boundary_policy" => self.summary.boundary_policy = parsed::<BoundaryPolicy>(key, value)?,
            "embedding.model" => self.embedding_model = value.to_owned(),
            "embedding.dim" => self.embedding_dim = parsed(key, value)?,
            _ => return self.set_tiered(key, value),
        }
        Ok(())
    }

    fn set_tiered(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let unknown = || ConfigError::UnknownKey(key.to_owned());
        let (prefix, field) = key.split_once('.').ok_or_else(unknown)?;
        let (backend, profile) = match prefix {
            "machine" => (&mut self.machine_backend, Some(&mut self.machine)),
            "human" => (&mut self.human_backend, Some(&mut self.human)),
            "embedding" => (&mut self.embedding_backend, None),
            _ => return Err(unknown()),
        };
        match (field, profile) {
            ("backend", _) => backend.kind = parsed(key, value)?,
            ("endpoint", _) => backend.endpoint = Some(value.to_owned()),
            ("key_env", _) => backend.key_env = Some(value.to_owned()),
            ("timeout_secs", _) => backend.timeout_secs = parsed(key, value)?,
            ("model", Some(p)) => p.model = value.to_owned(),
            ("temperature", Some(p)) => p.temperature = parsed(key, value)?,
            ("max_new_tokens", Some(p)) => p.max_new_tokens = parsed(key, value)?,
            (f, Some(p)) if f.starts_with("option.") => {
                p.options.insert(f["option.".len()..].to_owned(), value.to_owned());
            }
            _ => return Err(unknown()),
        }
        Ok(())
    }

    pub fn comparison_context(&self) -> Result<ComparisonContext, ConfigError> {
        ComparisonContext::new(&self.company, &self.target_topic).map_err(ConfigError::Invalid)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.retry_max_attempts,
            initial_backoff: Duration::from_millis(self.retry_initial_backoff_ms),
        }
    }

    pub fn all_mock(&self) -> bool {
        [&self.machine_backend, &self.human_backend, &self.embedding_backend]
            .iter()
            .all(|b| b.kind == BackendKind::Mock)
    }

    pub fn uses_fixed_clock(&self) -> bool {
        match self.clock {
            ClockSetting::Auto => self.all_mock(),
            ClockSetting::System => false,
            ClockSetting::Fixed => true,
        }
    }

    /// The configured run directory, else `$ASC2END_RUN_DIR`, else
    /// `runs/<mode>` under the working directory.
    pub fn resolved_run_dir(&self) -> PathBuf {
        self.run_dir
            .clone()
            .or_else(|| std::env::var_os(RUN_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs").join(self.mode.as_str()))
    }

    /// Checks everything that can be checked before touching any file.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.corpus.is_none() {
            return invalid("`corpus` is required".into());
        }
        if self.criteria.is_none() {
            return invalid(format!(
                "`criteria` is required (mode {} compares against it)",
                self.mode
            ));
        }
        self.comparison_context()?;
        if self.k == 0 {
            return invalid("`k` must be at least 1".into());
        }
        if self.workers == 0 {
            return invalid("`workers` must be at least 1".into());
        }
        if self.max_in_flight == 0 {
            return invalid("`max_in_flight` must be at least 1".into());
        }
        if self.retry_max_attempts == 0 {
            return invalid("`retry.max_attempts` must be at least 1".into());
        }
        if self.sample == Some(0) {
            return invalid("`sample` must be at least 1".into());
        }
        if self.embedding_dim == 0 {
            return invalid("`embedding.dim` must be at least 1".into());
        }
        self.summary.validate().map_err(ConfigError::Invalid)?;
        for (name, profile) in [("machine", &self.machine), ("human", &self.human)] {
            if profile.max_new_tokens == 0 {
                return invalid(format!("`{name}.max_new_tokens` must be at least 1"));
            }
            if !profile.temperature.is_finite() || profile.temperature < 0.0 {
                return invalid(format!("`{name}.temperature` must be a non-negative number"));
            }
        }
        for (name, backend) in [
            ("machine", &self.machine_backend),
            ("human", &self.human_backend),
            ("embedding", &self.embedding_backend),
        ] {
            if backend.kind == BackendKind::Http && backend.endpoint.is_none() {
                return invalid(format!("`{name}.endpoint` is required for an http backend"));
            }
        }
        Ok(())
    }
}
