//! Experiment configuration, multi-chain execution and persistence.
//!
//! A run directory looks like
//!
//! ```text
//! <out>/config.toml                 effective configuration (re-runnable)
//! <out>/manifest.json               config echo, file list, version, wall clock
//! <out>/traces/<sampler>/chain_NNN.csv         step, pi_0..pi_{n-1}
//! <out>/traces/<sampler>/chain_NNN_timing.csv  step, seconds_elapsed
//! <out>/diagnostics/<sampler>_<metric>.json
//! <out>/oracle/moments.json, <out>/oracle/density.csv
//! ```
//!
//! Sample values and elapsed seconds live in separate files so that the
//! sample CSVs are byte-for-byte reproducible from the seed while timings
//! are still kept per step.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::aux_gibbs::{run_aux_chain, AuxMode};
use crate::diagnostics::{
    autocorrelation_summary, checkpoints, mpsrf, percentile, pooled_moments,
    statistic_convergence, AutocorrSummary, ConvergenceCurves,
};
use crate::error::{Error, Result};
use crate::mh::{run_mh_chain, MhConfig, MhStats};
use crate::oracle::{
    compare_moments, default_resolution, grid_posterior, GridPosterior, MomentReport,
    MomentTolerance, SampleSource, MAX_GRID_DIM,
};
use crate::simplex::{sample_dirichlet, DirichletParams};
use crate::trace::{ChainEnsemble, ChainTrace, SamplerKind, TraceMetadata};
use crate::truncated::{ObservationModel, TruncatedCounts, TruncationSet};

/// Version tag written into every JSON output.
pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_CHECKPOINTS: usize = 25;
pub const DEFAULT_TARGET_ACCEPTANCE: f64 = 0.24;
pub const DEFAULT_ADAPT_STEPS: usize = 20_000;
pub const DEFAULT_INITIAL_BETA: f64 = 160.0;
pub const DEFAULT_MAX_LAG: usize = 50;

/// Tolerances for the oracle check written by `experiment`.
pub const ORACLE_CHECK_TOLERANCE: MomentTolerance = MomentTolerance {
    mean_floor: 0.01,
    variance_floor: 0.002,
    se_multiplier: 3.0,
};

const TIMING_METHODOLOGY: &str = "seconds_elapsed is monotonic wall-clock time from the start of the \
chain's recorded sampling phase to the end of that step, measured per sample inside the chain's \
worker thread. MH burn-in tuning happens before the clock starts; its duration is reported in the \
chain's tuning record.";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerSelection {
    Aux,
    Mh,
    #[default]
    Both,
}

impl SamplerSelection {
    pub fn kinds(self) -> Vec<SamplerKind> {
        match self {
            SamplerSelection::Aux => vec![SamplerKind::Aux],
            SamplerSelection::Mh => vec![SamplerKind::Mh],
            SamplerSelection::Both => vec![SamplerKind::Aux, SamplerKind::Mh],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    /// Truncated indices (0-based).
    #[serde(default)]
    pub truncated: Vec<usize>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MhSection {
    #[serde(default = "default_target")]
    pub target_acceptance: f64,
    #[serde(default = "default_adapt_steps")]
    pub adapt_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_beta: Option<f64>,
    /// Disables tuning and samples with this `beta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_beta: Option<f64>,
}

fn default_target() -> f64 {
    DEFAULT_TARGET_ACCEPTANCE
}

fn default_adapt_steps() -> usize {
    DEFAULT_ADAPT_STEPS
}

impl Default for MhSection {
    fn default() -> Self {
        MhSection {
            target_acceptance: DEFAULT_TARGET_ACCEPTANCE,
            adapt_steps: DEFAULT_ADAPT_STEPS,
            initial_beta: None,
            fixed_beta: None,
        }
    }
}

impl MhSection {
    pub fn mh_config(&self) -> MhConfig {
        match self.fixed_beta {
            Some(beta) => MhConfig {
                beta,
                target_acceptance: self.target_acceptance,
                adapt_steps: 0,
            },
            None => MhConfig {
                beta: self.initial_beta.unwrap_or(DEFAULT_INITIAL_BETA),
                target_acceptance: self.target_acceptance,
                adapt_steps: self.adapt_steps,
            },
        }
    }
}

/// Reference moments for convergence curves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    /// Oracle moments when the oracle is enabled, pooled otherwise.
    #[default]
    Auto,
    /// Pooled moments of every chain of every sampler at the final step.
    Pooled,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// Autocorrelation lags; defaults to `0..=50` clipped to the retained slice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lags: Option<Vec<usize>>,
    /// Components for autocorrelation; defaults to all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<usize>>,
    #[serde(default)]
    pub reference: ReferenceKind,
}

fn default_checkpoints() -> usize {
    DEFAULT_CHECKPOINTS
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            checkpoints: DEFAULT_CHECKPOINTS,
            lags: None,
            components: None,
            reference: ReferenceKind::Auto,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
}

/// A complete experiment description. `n` is implied by `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub sampler: SamplerSelection,
    pub chains: usize,
    pub steps: usize,
    /// Worker threads; absent means one per available core.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub aux_mode: AuxMode,
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub terms: Vec<TermConfig>,
    #[serde(default)]
    pub mh: MhSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub oracle: OracleSection,
}

/// Mirror of [`ExperimentConfig`] that keeps source spans for error messages.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n: Option<Spanned<usize>>,
    seed: u64,
    #[serde(default)]
    sampler: SamplerSelection,
    chains: Spanned<usize>,
    steps: Spanned<usize>,
    threads: Option<Spanned<usize>>,
    #[serde(default)]
    aux_mode: AuxMode,
    alpha: Spanned<Vec<f64>>,
    #[serde(default)]
    terms: Vec<Spanned<TermConfig>>,
    mh: Option<Spanned<MhSection>>,
    diagnostics: Option<Spanned<DiagnosticsSection>>,
    oracle: Option<Spanned<OracleSection>>,
}

/// Where a semantic config problem lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Locus {
    N,
    Chains,
    Steps,
    Threads,
    Alpha,
    Term(usize),
    Mh,
    Diagnostics,
    Oracle,
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, col)
}

impl ExperimentConfig {
    /// Parses and validates TOML. Errors carry line and column.
    pub fn from_toml(src: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        let span_of = |locus: Locus| -> Option<Range<usize>> {
            match locus {
                Locus::N => raw.n.as_ref().map(|s| s.span()),
                Locus::Chains => Some(raw.chains.span()),
                Locus::Steps => Some(raw.steps.span()),
                Locus::Threads => raw.threads.as_ref().map(|s| s.span()),
                Locus::Alpha => Some(raw.alpha.span()),
                Locus::Term(k) => raw.terms.get(k).map(|s| s.span()),
                Locus::Mh => raw.mh.as_ref().map(|s| s.span()),
                Locus::Diagnostics => raw.diagnostics.as_ref().map(|s| s.span()),
                Locus::Oracle => raw.oracle.as_ref().map(|s| s.span()),
            }
        };
        let located = |locus: Locus, msg: String| -> Error {
            match span_of(locus) {
                Some(span) => {
                    let (line, col) = line_col(src, span.start);
                    Error::Config(format!("line {line}, column {col}: {msg}"))
                }
                None => Error::Config(msg),
            }
        };
        if let Some(n) = &raw.n {
            if *n.get_ref() != raw.alpha.get_ref().len() {
                return Err(located(
                    Locus::N,
                    format!("n = {} but alpha has {} entries", n.get_ref(), raw.alpha.get_ref().len()),
                ));
            }
        }
        let cfg = ExperimentConfig {
            seed: raw.seed,
            sampler: raw.sampler,
            chains: *raw.chains.get_ref(),
            steps: *raw.steps.get_ref(),
            threads: raw.threads.as_ref().map(|t| *t.get_ref()),
            aux_mode: raw.aux_mode,
            alpha: raw.alpha.get_ref().clone(),
            terms: raw.terms.iter().map(|t| t.get_ref().clone()).collect(),
            mh: raw.mh.as_ref().map(|s| s.get_ref().clone()).unwrap_or_default(),
            diagnostics: raw.diagnostics.as_ref().map(|s| s.get_ref().clone()).unwrap_or_default(),
            oracle: raw.oracle.as_ref().map(|s| s.get_ref().clone()).unwrap_or_default(),
        };
        cfg.check().map_err(|(locus, msg)| located(locus, msg))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&src).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks a config built or modified in code (no line information).
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(_, msg)| Error::Config(msg))
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    fn check(&self) -> std::result::Result<(), (Locus, String)> {
        if self.chains == 0 {
            return Err((Locus::Chains, "chains must be >= 1".into()));
        }
        if self.steps == 0 {
            return Err((Locus::Steps, "steps must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err((Locus::Threads, "threads must be >= 1".into()));
        }
        DirichletParams::new(self.alpha.clone()).map_err(|e| (Locus::Alpha, e.to_string()))?;
        for (k, term) in self.terms.iter().enumerate() {
            term_counts(term, self.dim()).map_err(|e| (Locus::Term(k), format!("term {k}: {e}")))?;
        }
        let mh = &self.mh;
        if mh.fixed_beta.is_some() && mh.initial_beta.is_some() {
            return Err((Locus::Mh, "set either fixed_beta or initial_beta, not both".into()));
        }
        let mh_cfg = mh.mh_config();
        mh_cfg.validate().map_err(|e| (Locus::Mh, e.to_string()))?;
        if mh.fixed_beta.is_none() && mh.adapt_steps == 0 {
            return Err((Locus::Mh, "adapt_steps must be >= 1 unless fixed_beta is set".into()));
        }
        let diag = &self.diagnostics;
        if diag.checkpoints == 0 {
            return Err((Locus::Diagnostics, "checkpoints must be >= 1".into()));
        }
        if let Some(c) = diag.components.as_ref().and_then(|cs| cs.iter().find(|&&c| c >= self.dim())) {
            return Err((Locus::Diagnostics, format!("component {c} out of range for n = {}", self.dim())));
        }
        if let Some(lags) = &diag.lags {
            let retained = self.steps - self.steps / 2;
            if let Some(l) = lags.iter().find(|&&l| l >= retained) {
                return Err((
                    Locus::Diagnostics,
                    format!("lag {l} needs more than {retained} retained samples"),
                ));
            }
        }
        if self.oracle.enabled && self.dim() > MAX_GRID_DIM {
            return Err((
                Locus::Oracle,
                format!("oracle supports n <= {MAX_GRID_DIM}, config has n = {}", self.dim()),
            ));
        }
        if self.oracle.resolution == Some(0) {
            return Err((Locus::Oracle, "resolution must be >= 1".into()));
        }
        if diag.reference == ReferenceKind::Oracle && !self.oracle.enabled {
            return Err((Locus::Diagnostics, "reference = \"oracle\" needs [oracle] enabled = true".into()));
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<DirichletParams> {
        DirichletParams::new(self.alpha.clone())
    }

    /// The observation model; a config without terms gives a single empty term
    /// so the posterior equals the prior.
    pub fn model(&self) -> Result<ObservationModel> {
        let n = self.dim();
        let terms = if self.terms.is_empty() {
            vec![TruncatedCounts::new(TruncationSet::empty(n), vec![0; n].into())?]
        } else {
            self.terms.iter().map(|t| term_counts(t, n)).collect::<Result<Vec<_>>>()?
        };
        ObservationModel::new(terms)
    }

    pub fn oracle_resolution(&self) -> usize {
        self.oracle.resolution.unwrap_or_else(|| default_resolution(self.dim()))
    }

    pub fn lags(&self) -> Vec<usize> {
        match &self.diagnostics.lags {
            Some(lags) => lags.clone(),
            None => {
                let retained = self.steps - self.steps / 2;
                (0..=DEFAULT_MAX_LAG.min(retained.saturating_sub(1))).collect()
            }
        }
    }

    pub fn components(&self) -> Vec<usize> {
        self.diagnostics
            .components
            .clone()
            .unwrap_or_else(|| (0..self.dim()).collect())
    }
}

fn term_counts(term: &TermConfig, n: usize) -> Result<TruncatedCounts> {
    let trunc = TruncationSet::new(term.truncated.clone(), n)?;
    TruncatedCounts::new(trunc, term.counts.clone().into())
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub steps: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(chains) = self.chains {
            cfg.chains = chains;
        }
        if let Some(steps) = self.steps {
            cfg.steps = steps;
        }
        cfg.validate()
    }
}

fn sampler_tag(kind: SamplerKind) -> u64 {
    match kind {
        SamplerKind::Aux => 1,
        SamplerKind::Mh => 2,
        SamplerKind::Exact => 3,
    }
}

/// Stream id of one chain: the sampler tag in the high 32 bits, the chain
/// index in the low 32 bits.
pub fn chain_stream(kind: SamplerKind, chain: usize) -> u64 {
    (sampler_tag(kind) << 32) | chain as u64
}

/// The generator of one chain. Every chain has its own ChaCha stream under
/// the master seed, so chains are reproducible individually and independent
/// of scheduling.
pub fn chain_rng(seed: u64, kind: SamplerKind, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain_stream(kind, chain));
    rng
}

/// Runs one chain from a `Dir(alpha)` initial point drawn from its own stream.
pub fn run_chain(cfg: &ExperimentConfig, kind: SamplerKind, chain: usize) -> Result<ChainTrace> {
    let alpha = cfg.prior()?;
    let model = cfg.model()?;
    let mut rng = chain_rng(cfg.seed, kind, chain);
    let init = sample_dirichlet(&alpha, &mut rng);
    let mut trace = match kind {
        SamplerKind::Aux => run_aux_chain(&alpha, &model, init, cfg.steps, cfg.aux_mode, &mut rng)?,
        SamplerKind::Mh => run_mh_chain(&alpha, &model, init, cfg.steps, &cfg.mh.mh_config(), &mut rng)?,
        SamplerKind::Exact => {
            return Err(Error::Config("the exact sampler is not a chain sampler".into()))
        }
    };
    trace.metadata.seed = Some(cfg.seed);
    Ok(trace)
}

fn worker_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every configured chain of every selected sampler in one worker pool.
pub fn run_experiment_chains(cfg: &ExperimentConfig) -> Result<Vec<(SamplerKind, ChainEnsemble)>> {
    cfg.validate()?;
    let pool = worker_pool(cfg.threads)?;
    let jobs: Vec<(SamplerKind, usize)> = cfg
        .sampler
        .kinds()
        .into_iter()
        .flat_map(|k| (0..cfg.chains).map(move |c| (k, c)))
        .collect();
    let traces: Vec<ChainTrace> = pool.install(|| {
        jobs.par_iter()
            .map(|&(kind, chain)| run_chain(cfg, kind, chain))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut traces = traces.into_iter();
    cfg.sampler
        .kinds()
        .into_iter()
        .map(|kind| {
            let chains: Vec<ChainTrace> = traces.by_ref().take(cfg.chains).collect();
            ChainEnsemble::new(chains).map(|e| (kind, e))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Trace files

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the sample CSV (`step, pi_0..`) and the timing CSV
/// (`step, seconds_elapsed`). Steps are 1-based. Floats use the shortest
/// representation that round-trips.
pub fn write_trace(trace: &ChainTrace, samples: &Path, timing: &Path) -> Result<()> {
    let mut w = csv_writer(samples)?;
    let mut header = vec!["step".to_string()];
    header.extend((0..trace.dim()).map(|i| format!("pi_{i}")));
    w.write_record(&header).map_err(csv_err(samples))?;
    for (t, row) in trace.rows().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(csv_err(samples))?;
    }
    w.flush().map_err(|e| Error::io(samples, e))?;

    let mut w = csv_writer(timing)?;
    w.write_record(["step", "seconds_elapsed"]).map_err(csv_err(timing))?;
    for (t, s) in trace.timestamps().iter().enumerate() {
        w.write_record([(t + 1).to_string(), s.to_string()])
            .map_err(csv_err(timing))?;
    }
    w.flush().map_err(|e| Error::io(timing, e))
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedTrace {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn read_csv_rows(path: &Path, expect_header: impl Fn(&csv::StringRecord) -> bool) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if !expect_header(&header) {
        return Err(malformed(path, format!("unexpected header {:?}", header)));
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let step: usize = rec[0]
            .parse()
            .map_err(|_| malformed(path, format!("row {}: bad step {:?}", k + 1, &rec[0])))?;
        if step != k + 1 {
            return Err(malformed(path, format!("row {}: step {step} out of sequence", k + 1)));
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| malformed(path, format!("row {}: bad number {v:?}", k + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(values);
    }
    Ok(rows)
}

/// Reads a trace written by [`write_trace`].
pub fn read_trace(samples: &Path, timing: &Path, metadata: TraceMetadata) -> Result<ChainTrace> {
    let rows = read_csv_rows(samples, |h| {
        h.len() >= 2
            && &h[0] == "step"
            && h.iter().skip(1).enumerate().all(|(i, name)| name == format!("pi_{i}"))
    })?;
    let times = read_csv_rows(timing, |h| h.len() == 2 && &h[0] == "step" && &h[1] == "seconds_elapsed")?;
    if times.len() != rows.len() {
        return Err(malformed(
            timing,
            format!("{} timing rows for {} samples", times.len(), rows.len()),
        ));
    }
    let timestamps = times.into_iter().map(|r| r[0]).collect();
    ChainTrace::from_rows(rows, timestamps, metadata).map_err(|e| match e {
        Error::MalformedTrace { reason, .. } => malformed(samples, reason),
        other => other,
    })
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub sampler: SamplerKind,
    pub chain: usize,
    pub stream: u64,
    /// Paths relative to the run directory.
    pub trace: String,
    pub timing: String,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mh: Option<MhStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub software_version: String,
    pub config: ExperimentConfig,
    pub config_file: String,
    pub started_unix_seconds: f64,
    pub finished_unix_seconds: f64,
    pub timing_methodology: String,
    pub chains: Vec<ChainRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn trace_paths(kind: SamplerKind, chain: usize) -> (String, String) {
    let dir = format!("traces/{kind}");
    (
        format!("{dir}/chain_{chain:03}.csv"),
        format!("{dir}/chain_{chain:03}_timing.csv"),
    )
}

/// Runs all chains and writes traces, the config echo and the manifest.
pub fn cmd_sample(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let started = unix_now();
    create_dir(out)?;
    let ensembles = run_experiment_chains(cfg)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml()?)?;
    let mut records = Vec::new();
    for (kind, ensemble) in &ensembles {
        create_dir(&out.join(format!("traces/{kind}")))?;
        for (chain, trace) in ensemble.chains().iter().enumerate() {
            let (samples, timing) = trace_paths(*kind, chain);
            write_trace(trace, &out.join(&samples), &out.join(&timing))?;
            records.push(ChainRecord {
                sampler: *kind,
                chain,
                stream: chain_stream(*kind, chain),
                trace: samples,
                timing,
                steps: trace.len(),
                mh: trace.metadata.mh.clone(),
            });
        }
    }
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        config_file: CONFIG_FILE.to_string(),
        started_unix_seconds: started,
        finished_unix_seconds: unix_now(),
        timing_methodology: TIMING_METHODOLOGY.to_string(),
        chains: records,
    };
    for path in manifest.referenced_files() {
        if !out.join(&path).is_file() {
            return Err(malformed(&out.join(path), "missing at manifest write time"));
        }
    }
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

impl RunManifest {
    pub fn referenced_files(&self) -> Vec<String> {
        let mut files = vec![self.config_file.clone()];
        for c in &self.chains {
            files.push(c.trace.clone());
            files.push(c.timing.clone());
        }
        files
    }
}

/// Traces of a finished run, grouped by sampler.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub ensembles: Vec<(SamplerKind, ChainEnsemble)>,
}

impl LoadedRun {
    pub fn ensemble(&self, kind: SamplerKind) -> Option<&ChainEnsemble> {
        self.ensembles.iter().find(|(k, _)| *k == kind).map(|(_, e)| e)
    }
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let manifest: RunManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let mut ensembles: Vec<(SamplerKind, Vec<ChainTrace>)> = Vec::new();
    for rec in &manifest.chains {
        let mut metadata = TraceMetadata::new(rec.sampler);
        metadata.seed = Some(manifest.config.seed);
        metadata.mh = rec.mh.clone();
        let trace = read_trace(&dir.join(&rec.trace), &dir.join(&rec.timing), metadata)?;
        match ensembles.iter_mut().find(|(k, _)| *k == rec.sampler) {
            Some((_, chains)) => chains.push(trace),
            None => ensembles.push((rec.sampler, vec![trace])),
        }
    }
    let ensembles = ensembles
        .into_iter()
        .map(|(k, chains)| ChainEnsemble::new(chains).map(|e| (k, e)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedRun { manifest, ensembles })
}

// ---------------------------------------------------------------------------
// Diagnostics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagnosticKind {
    Autocorr,
    Mpsrf,
    Convergence,
}

impl DiagnosticKind {
    pub const ALL: [DiagnosticKind; 3] = [DiagnosticKind::Autocorr, DiagnosticKind::Mpsrf, DiagnosticKind::Convergence];
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutocorrFile {
    pub schema_version: u32,
    pub sampler: SamplerKind,
    pub steps: usize,
    /// First retained step (1-based); the slice runs to `steps`.
    pub retained_from: usize,
    pub components: Vec<AutocorrSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpsrfFile {
    pub schema_version: u32,
    pub sampler: SamplerKind,
    pub chains: usize,
    pub checkpoints: Vec<usize>,
    pub r_hat: Vec<f64>,
    pub jittered: Vec<bool>,
}

/// R̂ against elapsed time. Kept apart from [`MpsrfFile`] because timings
/// differ between otherwise identical runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpsrfElapsedFile {
    pub schema_version: u32,
    pub sampler: SamplerKind,
    pub checkpoints: Vec<usize>,
    /// Median over chains of the elapsed seconds at each checkpoint.
    pub median_seconds: Vec<f64>,
    pub r_hat: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceFile {
    pub schema_version: u32,
    pub sampler: SamplerKind,
    pub reference: ReferenceKind,
    pub reference_mean: Vec<f64>,
    pub reference_variance: Vec<f64>,
    pub curves: ConvergenceCurves,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleCheckFile {
    pub schema_version: u32,
    pub sampler: SamplerKind,
    pub resolution: usize,
    pub tolerance: MomentTolerance,
    pub report: MomentReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleMomentsFile {
    pub schema_version: u32,
    pub alpha: Vec<f64>,
    pub terms: Vec<TermConfig>,
    pub resolution: usize,
    pub cells: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub log_normalizer: f64,
}

pub fn mpsrf_curve(ensemble: &ChainEnsemble, count: usize) -> Result<MpsrfFile> {
    if ensemble.num_chains() < 2 {
        return Err(Error::TooFewChains {
            needed: 2,
            found: ensemble.num_chains(),
        });
    }
    let points: Vec<usize> = checkpoints(ensemble.steps(), count)
        .into_iter()
        .filter(|&t| t >= 4)
        .collect();
    let mut r_hat = Vec::with_capacity(points.len());
    let mut jittered = Vec::with_capacity(points.len());
    for &t in &points {
        let res = mpsrf(ensemble, t)?;
        r_hat.push(res.r_hat);
        jittered.push(res.jittered);
    }
    Ok(MpsrfFile {
        schema_version: SCHEMA_VERSION,
        sampler: ensemble.chains()[0].metadata.sampler,
        chains: ensemble.num_chains(),
        checkpoints: points,
        r_hat,
        jittered,
    })
}

fn elapsed_curve(ensemble: &ChainEnsemble, curve: &MpsrfFile) -> MpsrfElapsedFile {
    let median_seconds = curve
        .checkpoints
        .iter()
        .map(|&t| {
            let times: Vec<f64> = ensemble.chains().iter().map(|c| c.timestamps()[t - 1]).collect();
            percentile(&times, 0.5)
        })
        .collect();
    MpsrfElapsedFile {
        schema_version: SCHEMA_VERSION,
        sampler: curve.sampler,
        checkpoints: curve.checkpoints.clone(),
        median_seconds,
        r_hat: curve.r_hat.clone(),
    }
}

fn oracle_for(cfg: &ExperimentConfig) -> Result<GridPosterior> {
    grid_posterior(&cfg.prior()?, &cfg.model()?, cfg.oracle_resolution())
}

/// Computes the requested diagnostics for a loaded run and writes one JSON
/// file per metric and sampler into `out`. Returns the written paths.
pub fn diagnose_run(run: &LoadedRun, which: &[DiagnosticKind], out: &Path) -> Result<Vec<PathBuf>> {
    let cfg = &run.manifest.config;
    create_dir(out)?;
    let mut written = Vec::new();
    let mut emit = |name: String, value: &dyn erased::Json| -> Result<()> {
        let path = out.join(name);
        value.write(&path)?;
        written.push(path);
        Ok(())
    };

    let reference = if which.contains(&DiagnosticKind::Convergence) {
        Some(convergence_reference(run)?)
    } else {
        None
    };

    for (kind, ensemble) in &run.ensembles {
        let steps = ensemble.steps();
        for &metric in which {
            match metric {
                DiagnosticKind::Autocorr => {
                    let lags = cfg.lags();
                    let components = cfg
                        .components()
                        .into_iter()
                        .map(|c| autocorrelation_summary(ensemble, c, &lags, steps))
                        .collect::<Result<Vec<_>>>()?;
                    let file = AutocorrFile {
                        schema_version: SCHEMA_VERSION,
                        sampler: *kind,
                        steps,
                        retained_from: steps / 2 + 1,
                        components,
                    };
                    emit(format!("{kind}_autocorr.json"), &file)?;
                }
                DiagnosticKind::Mpsrf => {
                    let curve = mpsrf_curve(ensemble, cfg.diagnostics.checkpoints)?;
                    let elapsed = elapsed_curve(ensemble, &curve);
                    emit(format!("{kind}_mpsrf.json"), &curve)?;
                    emit(format!("{kind}_mpsrf_elapsed.json"), &elapsed)?;
                }
                DiagnosticKind::Convergence => {
                    let (reference, mean, var) = reference.as_ref().expect("computed above");
                    let points: Vec<usize> = checkpoints(steps, cfg.diagnostics.checkpoints);
                    let curves = statistic_convergence(ensemble, mean, var, &points)?;
                    let file = ConvergenceFile {
                        schema_version: SCHEMA_VERSION,
                        sampler: *kind,
                        reference: *reference,
                        reference_mean: mean.clone(),
                        reference_variance: var.clone(),
                        curves,
                    };
                    emit(format!("{kind}_convergence.json"), &file)?;
                }
            }
        }
    }
    Ok(written)
}

fn convergence_reference(run: &LoadedRun) -> Result<(ReferenceKind, Vec<f64>, Vec<f64>)> {
    let cfg = &run.manifest.config;
    let use_oracle = match cfg.diagnostics.reference {
        ReferenceKind::Oracle => true,
        ReferenceKind::Pooled => false,
        ReferenceKind::Auto => cfg.oracle.enabled && cfg.dim() <= MAX_GRID_DIM,
    };
    if use_oracle {
        let grid = oracle_for(cfg)?;
        return Ok((ReferenceKind::Oracle, grid.mean, grid.variance));
    }
    // pool every sampler's chains at the final step
    let all: Vec<ChainTrace> = run
        .ensembles
        .iter()
        .flat_map(|(_, e)| e.chains().iter().cloned())
        .collect();
    let pooled = ChainEnsemble::new(all)?;
    let (mean, var) = pooled_moments(&pooled, pooled.steps())?;
    Ok((ReferenceKind::Pooled, mean, var))
}

/// Small object-safe wrapper so heterogeneous result files share one writer.
mod erased {
    use super::*;

    pub trait Json {
        fn write(&self, path: &Path) -> Result<()>;
    }

    impl<T: Serialize> Json for T {
        fn write(&self, path: &Path) -> Result<()> {
            write_json(path, self)
        }
    }
}

pub const DIAGNOSTICS_DIR: &str = "diagnostics";
pub const ORACLE_DIR: &str = "oracle";

/// Loads the run in `trace_dir` and writes diagnostics under
/// `trace_dir/diagnostics`.
pub fn cmd_diagnose(trace_dir: &Path, which: &[DiagnosticKind]) -> Result<Vec<PathBuf>> {
    let run = load_run(trace_dir)?;
    diagnose_run(&run, which, &trace_dir.join(DIAGNOSTICS_DIR))
}

/// Writes `moments.json` and a `density.csv` dump over the grid cell
/// centers into `out`.
pub fn cmd_oracle(cfg: &ExperimentConfig, out: &Path) -> Result<OracleMomentsFile> {
    cfg.validate()?;
    if cfg.dim() > MAX_GRID_DIM {
        return Err(Error::GridDimension { n: cfg.dim() });
    }
    let grid = oracle_for(cfg)?;
    create_dir(out)?;
    let moments = OracleMomentsFile {
        schema_version: SCHEMA_VERSION,
        alpha: cfg.alpha.clone(),
        terms: cfg.terms.clone(),
        resolution: grid.grid.resolution,
        cells: grid.grid.points.len(),
        mean: grid.mean.clone(),
        variance: grid.variance.clone(),
        log_normalizer: grid.log_normalizer,
    };
    write_json(&out.join("moments.json"), &moments)?;

    let path = out.join("density.csv");
    let mut w = csv_writer(&path)?;
    let mut header: Vec<String> = (0..cfg.dim()).map(|i| format!("pi_{i}")).collect();
    header.push("density".into());
    w.write_record(&header).map_err(csv_err(&path))?;
    for (p, d) in grid.grid.points.iter().zip(grid.densities()) {
        let mut rec: Vec<String> = p.coords().iter().map(|x| x.to_string()).collect();
        rec.push(d.to_string());
        w.write_record(&rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(moments)
}

/// Output of the full pipeline.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub manifest: RunManifest,
    pub diagnostics: Vec<PathBuf>,
    pub oracle: Option<OracleMomentsFile>,
}

/// `sample`, then `diagnose` (R̂ only with two or more chains), then the
/// oracle and a per-sampler moment check when the oracle is enabled.
pub fn cmd_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    let manifest = cmd_sample(cfg, out)?;
    let run = load_run(out)?;
    let which: Vec<DiagnosticKind> = DiagnosticKind::ALL
        .into_iter()
        .filter(|k| *k != DiagnosticKind::Mpsrf || cfg.chains >= 2)
        .collect();
    let diag_dir = out.join(DIAGNOSTICS_DIR);
    let mut diagnostics = diagnose_run(&run, &which, &diag_dir)?;
    let oracle = if cfg.oracle.enabled {
        let moments = cmd_oracle(cfg, &out.join(ORACLE_DIR))?;
        let grid = oracle_for(cfg)?;
        for (kind, ensemble) in &run.ensembles {
            let source = if ensemble.num_chains() >= 2 {
                SampleSource::Ensemble(ensemble)
            } else {
                SampleSource::Trace(&ensemble.chains()[0])
            };
            let report = compare_moments(&grid, source, ensemble.steps(), &ORACLE_CHECK_TOLERANCE)?;
            let path = diag_dir.join(format!("{kind}_oracle_check.json"));
            write_json(
                &path,
                &OracleCheckFile {
                    schema_version: SCHEMA_VERSION,
                    sampler: *kind,
                    resolution: grid.grid.resolution,
                    tolerance: ORACLE_CHECK_TOLERANCE,
                    report,
                },
            )?;
            diagnostics.push(path);
        }
        Some(moments)
    } else {
        None
    };
    Ok(ExperimentOutput {
        manifest,
        diagnostics,
        oracle,
    })
}
