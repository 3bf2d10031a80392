//! Resumable execution of run plans.
//!
//! A run is described by a [`RunSpec`], expanded into a [`RunPlan`] and
//! executed batch by batch. Progress lives in a JSON checkpoint that is
//! rewritten atomically after every chunk of `checkpoint_every` requests and
//! after every batch, so an interrupted run resumes where it stopped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use dmba_core::corpus::stratified_sample;
use dmba_core::metrics::{CompletionResult, MetricSummary, PairResult, RecordKey};
use dmba_core::plan::{plan_run, plan_sweep, PlanSettings, SweepPoint, SweepSpec};
use dmba_core::prompting::{PromptTemplate, StimulusKind, Variant};
use dmba_core::request::{DecodingConfig, FinishReason, GenerationRequest, RequestId, RetryPolicy};
use dmba_core::scoring::{classify_completion, parse_agreement, AgreementScore};
use dmba_core::{Dataset, RunPlan, SentencePair};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, load_template, DatasetFormat};
use crate::error::{Error, Result};
use crate::gateway::{
    FixtureEntry, FixtureStore, Gateway, GatewayError, OpenRouterBackend, ReplayBackend, SyntheticBackend, API_KEY_ENV,
};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 50;
pub const DEFAULT_PER_MODEL_LIMIT: usize = 4;
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Replay,
    Record,
    /// Deterministic offline generator, for demos and fixture generation.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunMode {
    Main,
    Sweep { per_type: usize, spec: SweepSpec },
}

/// Everything needed to rebuild a plan and its backend. Stored in the
/// checkpoint so `resume` needs nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub mode: RunMode,
    pub data: PathBuf,
    pub format: DatasetFormat,
    pub models: Vec<String>,
    pub template: Option<PathBuf>,
    pub settings: PlanSettings,
    pub backend: BackendKind,
    pub fixtures: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub per_model_limit: usize,
    pub checkpoint_every: usize,
    pub policy: RetryPolicy,
}

impl RunSpec {
    pub fn default_checkpoint(&self) -> PathBuf {
        self.out_dir.join(CHECKPOINT_FILE)
    }
}

/// The evaluated pairs, the template and the expanded plan.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub template: PromptTemplate,
    pub plan: RunPlan,
}

pub fn prepare(spec: &RunSpec) -> Result<Prepared> {
    if spec.per_model_limit == 0 {
        return Err(GatewayError::ZeroLimit.into());
    }
    if spec.checkpoint_every == 0 {
        return Err(Error::Usage("checkpoint interval must be at least 1".into()));
    }
    spec.policy.validate()?;
    let full = load_dataset(&spec.data, spec.format)?;
    let template = match &spec.template {
        Some(p) => load_template(p)?,
        None => PromptTemplate::default(),
    };
    let (dataset, plan) = match &spec.mode {
        RunMode::Main => {
            let plan = plan_run(&full, &spec.models, &template, &spec.settings)?;
            (full, plan)
        }
        RunMode::Sweep { per_type, spec: sweep } => {
            let sample = stratified_sample(&full, *per_type, spec.settings.seed)?;
            let plan = plan_sweep(&sample, &spec.models, &template, &spec.settings, sweep)?;
            (sample, plan)
        }
    };
    Ok(Prepared { dataset, template, plan })
}

pub fn build_gateway(spec: &RunSpec, prepared: &Prepared) -> Result<Gateway> {
    let timeout = Duration::from_secs_f64(spec.policy.request_timeout_ms / 1000.0);
    let gateway = match spec.backend {
        BackendKind::Replay => {
            let path = spec.fixtures.as_deref().ok_or_else(|| Error::Usage("--fixtures is required for replay".into()))?;
            Gateway::new(ReplayBackend::new(FixtureStore::load(path)?), spec.policy.clone())
        }
        BackendKind::Live | BackendKind::Record => {
            let backend = OpenRouterBackend::from_env(timeout)
                .ok_or_else(|| Error::Usage(format!("{API_KEY_ENV} must be set for the live backend")))?;
            if spec.backend == BackendKind::Record && spec.fixtures.is_none() {
                return Err(Error::Usage("--fixtures is required for record".into()));
            }
            Gateway::new(backend, spec.policy.clone())
        }
        BackendKind::Synthetic => Gateway::new(SyntheticBackend::new(&prepared.dataset), spec.policy.clone()),
    };
    Ok(gateway)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub attempt_count: u32,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchProgress {
    pub index: usize,
    pub requests: usize,
    pub done: usize,
    pub failed: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub run_id: String,
    pub plan_digest: String,
    /// Unix seconds.
    pub created_at: u64,
    pub written_at: u64,
    pub spec: RunSpec,
    pub status: BTreeMap<RequestId, RequestState>,
    pub batch_progress: Vec<BatchProgress>,
    pub interim_metrics: BTreeMap<usize, MetricSummary>,
    pub responses: BTreeMap<RequestId, StoredResponse>,
    pub failures: BTreeMap<RequestId, String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl Checkpoint {
    pub fn new(plan: &RunPlan, spec: &RunSpec) -> Self {
        let status = plan.requests.iter().map(|r| (r.request.request_id.clone(), RequestState::Pending)).collect();
        let t = now();
        let mut ck = Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            run_id: plan.run_id.clone(),
            plan_digest: plan.digest.clone(),
            created_at: t,
            written_at: t,
            spec: spec.clone(),
            status,
            batch_progress: Vec::new(),
            interim_metrics: BTreeMap::new(),
            responses: BTreeMap::new(),
            failures: BTreeMap::new(),
        };
        ck.refresh_progress(plan);
        ck
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::dataset::read_text(path)?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, &text, &e))?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::schema(
                path,
                format!("checkpoint schema version {} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})", ck.schema_version),
            ));
        }
        Ok(ck)
    }

    /// Write-to-temporary then rename, so readers never see a torn file.
    pub fn save(&mut self, path: &Path) -> Result<()> {
        self.written_at = now();
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        let body = serde_json::to_vec_pretty(self).expect("checkpoint serializes");
        tmp.write_all(&body).and_then(|_| tmp.as_file().sync_all()).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    fn verify(&self, plan: &RunPlan, path: &Path) -> Result<()> {
        if self.plan_digest != plan.digest {
            return Err(Error::CheckpointMismatch {
                path: path.to_path_buf(),
                expected: plan.digest.clone(),
                found: self.plan_digest.clone(),
            });
        }
        let planned: BTreeSet<&RequestId> = plan.requests.iter().map(|r| &r.request.request_id).collect();
        if !planned.iter().copied().eq(self.status.keys()) {
            return Err(Error::schema(path, "status map does not cover the plan's request set"));
        }
        Ok(())
    }

    pub fn state(&self, id: &RequestId) -> RequestState {
        self.status.get(id).copied().unwrap_or(RequestState::Pending)
    }

    fn refresh_progress(&mut self, plan: &RunPlan) {
        let old: BTreeMap<usize, bool> = self.batch_progress.iter().map(|b| (b.index, b.complete)).collect();
        self.batch_progress = plan
            .batches
            .iter()
            .map(|b| {
                let ids: BTreeSet<&RequestId> = plan.requests_in_batch(b.index).map(|r| &r.request.request_id).collect();
                let count = |s: RequestState| ids.iter().filter(|id| self.state(id) == s).count();
                BatchProgress {
                    index: b.index,
                    requests: ids.len(),
                    done: count(RequestState::Done),
                    failed: count(RequestState::Failed),
                    complete: old.get(&b.index).copied().unwrap_or(false),
                }
            })
            .collect();
    }

    fn mark_complete(&mut self, index: usize) {
        if let Some(b) = self.batch_progress.iter_mut().find(|b| b.index == index) {
            b.complete = true;
        }
    }

    pub fn is_finished(&self) -> bool {
        self.status.values().all(|s| *s != RequestState::Pending) && self.batch_progress.iter().all(|b| b.complete)
    }
}

/// Exclusive advisory lock on `<checkpoint>.lock`, held for the lifetime of
/// the guard.
pub struct CheckpointLock {
    _file: File,
}

pub fn lock_checkpoint(path: &Path) -> Result<CheckpointLock> {
    let mut name = path.as_os_str().to_owned();
    name.push(".lock");
    let lock_path = PathBuf::from(name);
    if let Some(dir) = lock_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock_path)
        .map_err(|e| Error::io(&lock_path, e))?;
    match file.try_lock() {
        Ok(()) => Ok(CheckpointLock { _file: file }),
        Err(TryLockError::WouldBlock) => Err(Error::Locked(path.to_path_buf())),
        Err(TryLockError::Error(e)) => Err(Error::io(&lock_path, e)),
    }
}

#[derive(Debug)]
pub enum Outcome {
    Complete(RunResults),
    /// Stopped on request after the given batch; the checkpoint is current.
    Halted { batch: usize },
}

/// Dispatches every request not yet done. Failed requests from an earlier
/// attempt are retried; done requests never are. A fresh checkpoint records
/// `spec`; an existing one must belong to the same plan.
pub fn execute(
    spec: &RunSpec,
    prepared: &Prepared,
    gateway: &Gateway,
    checkpoint_path: &Path,
    halt_after_batch: Option<usize>,
) -> Result<Outcome> {
    let plan = &prepared.plan;
    let _lock = lock_checkpoint(checkpoint_path)?;
    let mut ck = if checkpoint_path.exists() {
        let ck = Checkpoint::load(checkpoint_path)?;
        ck.verify(plan, checkpoint_path)?;
        log::info!("resuming {} from {}", ck.run_id, checkpoint_path.display());
        ck
    } else {
        let mut ck = Checkpoint::new(plan, spec);
        ck.save(checkpoint_path)?;
        ck
    };
    run_batches(prepared, gateway, checkpoint_path, &mut ck, halt_after_batch)
}

fn run_batches(
    prepared: &Prepared,
    gateway: &Gateway,
    checkpoint_path: &Path,
    ck: &mut Checkpoint,
    halt_after_batch: Option<usize>,
) -> Result<Outcome> {
    let plan = &prepared.plan;
    let every = ck.spec.checkpoint_every.max(1);
    let limit = ck.spec.per_model_limit;
    for batch in &plan.batches {
        let mut seen = BTreeSet::new();
        let pending: Vec<GenerationRequest> = plan
            .requests_in_batch(batch.index)
            .map(|r| &r.request)
            .filter(|r| ck.state(&r.request_id) != RequestState::Done && seen.insert(r.request_id.clone()))
            .cloned()
            .collect();
        let already_complete = ck.batch_progress.iter().any(|b| b.index == batch.index && b.complete);
        if pending.is_empty() && already_complete {
            continue;
        }
        log::info!("batch {} ({}): {} request(s) to dispatch", batch.index, batch.config.config_id(), pending.len());
        for chunk in pending.chunks(every) {
            let results = gateway.bounded_dispatch(chunk, limit)?;
            let mut fatal = None;
            for (req, res) in chunk.iter().zip(results) {
                let id = req.request_id.clone();
                match res {
                    Ok(resp) => {
                        ck.status.insert(id.clone(), RequestState::Done);
                        ck.failures.remove(&id);
                        ck.responses.insert(
                            id,
                            StoredResponse {
                                text: resp.text,
                                finish_reason: resp.finish_reason,
                                attempt_count: resp.attempt_count,
                                latency_ms: resp.latency_ms,
                            },
                        );
                    }
                    Err(GatewayError::Aborted { .. }) => {}
                    Err(e) => {
                        log::warn!("{e}");
                        ck.status.insert(id.clone(), RequestState::Failed);
                        ck.failures.insert(id, e.to_string());
                        if e.is_fatal() && fatal.is_none() {
                            fatal = Some(e);
                        }
                    }
                }
            }
            ck.refresh_progress(plan);
            ck.save(checkpoint_path)?;
            if let Some(e) = fatal {
                return Err(e.into());
            }
        }
        let outcome = batch_outcome(prepared, ck, batch.index)?;
        ck.interim_metrics.insert(batch.index, outcome.summary());
        ck.mark_complete(batch.index);
        ck.save(checkpoint_path)?;
        if halt_after_batch == Some(batch.index) {
            return Ok(Outcome::Halted { batch: batch.index });
        }
    }
    Ok(Outcome::Complete(collect_results(prepared, ck)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Unparseable,
    Failed,
}

impl ExclusionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::Unparseable => "unparseable",
            ExclusionReason::Failed => "failed",
        }
    }
}

/// A response left out of the metrics.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Exclusion {
    pub key: RecordKey,
    pub kind: StimulusKind,
    pub variant: Variant,
    pub reason: ExclusionReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub index: usize,
    pub config: DecodingConfig,
    pub sweep_point: Option<SweepPoint>,
    pub pairs: Vec<PairResult>,
    pub completions: Vec<CompletionResult>,
    pub exclusions: Vec<Exclusion>,
}

fn count(exclusions: &[Exclusion], reason: ExclusionReason) -> usize {
    exclusions.iter().filter(|e| e.reason == reason).count()
}

impl BatchOutcome {
    pub fn summary(&self) -> MetricSummary {
        MetricSummary::compute(
            &self.pairs,
            &self.completions,
            count(&self.exclusions, ExclusionReason::Unparseable),
            count(&self.exclusions, ExclusionReason::Failed),
        )
    }
}

/// Scored records of a run. Top-level lists hold each
/// `(pair, model, config)` once, sorted; `batches` keep per-batch views.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResults {
    pub batches: Vec<BatchOutcome>,
    pub pairs: Vec<PairResult>,
    pub completions: Vec<CompletionResult>,
    pub exclusions: Vec<Exclusion>,
}

impl RunResults {
    pub fn unparseable_count(&self) -> usize {
        count(&self.exclusions, ExclusionReason::Unparseable)
    }

    pub fn failed_count(&self) -> usize {
        count(&self.exclusions, ExclusionReason::Failed)
    }

    pub fn summary(&self) -> MetricSummary {
        MetricSummary::compute(&self.pairs, &self.completions, self.unparseable_count(), self.failed_count())
    }
}

enum Slot<'a> {
    Done(&'a StoredResponse),
    Failed(String),
}

fn slot<'a>(ck: &'a Checkpoint, id: &RequestId) -> Slot<'a> {
    match (ck.state(id), ck.responses.get(id)) {
        (RequestState::Done, Some(r)) => Slot::Done(r),
        (RequestState::Failed, _) => Slot::Failed(ck.failures.get(id).cloned().unwrap_or_else(|| "failed".into())),
        _ => Slot::Failed("not dispatched".into()),
    }
}

fn key_for(pair: &SentencePair, model_id: &str, config_id: &str) -> RecordKey {
    RecordKey {
        pair_id: pair.pair_id.clone(),
        model_id: model_id.to_string(),
        config_id: config_id.to_string(),
        bias_type: Some(pair.bias_type),
        domain: Some(pair.domain.clone()),
    }
}

fn batch_outcome(prepared: &Prepared, ck: &Checkpoint, index: usize) -> Result<BatchOutcome> {
    let plan = &prepared.plan;
    let batch = plan.batch(index).ok_or(dmba_core::plan::PlanError::BatchIndex(index))?;
    let config_id = batch.config.config_id();
    let tau = plan.settings.tau;
    let pairs_by_id = prepared.dataset.index();
    let requests: Vec<_> = plan.requests_in_batch(index).collect();
    let mut out = BatchOutcome {
        index,
        config: batch.config.clone(),
        sweep_point: batch.sweep_point,
        pairs: Vec::new(),
        completions: Vec::new(),
        exclusions: Vec::new(),
    };
    // The planner emits four requests per (model, pair): agreement stereo,
    // agreement anti, completion stereo, completion anti.
    for quad in requests.chunks_exact(4) {
        let pair = pairs_by_id[quad[0].pair_id()];
        let key = key_for(pair, &quad[0].request.model_id, &config_id);
        let exclude = |out: &mut BatchOutcome, kind, variant, reason, detail: String| {
            out.exclusions.push(Exclusion { key: key.clone(), kind, variant, reason, detail })
        };

        let mut scores: Vec<AgreementScore> = Vec::with_capacity(2);
        for r in &quad[..2] {
            match slot(ck, &r.request.request_id) {
                Slot::Done(resp) => {
                    let score = parse_agreement(&resp.text);
                    if score.value.is_none() {
                        exclude(&mut out, StimulusKind::Agreement, r.variant(), ExclusionReason::Unparseable, resp.text.clone());
                    }
                    scores.push(score);
                }
                Slot::Failed(msg) => exclude(&mut out, StimulusKind::Agreement, r.variant(), ExclusionReason::Failed, msg),
            }
        }
        if let [s, a] = scores.as_slice() {
            if let Some(p) = dmba_core::metrics::pair_result(key.clone(), s, a) {
                out.pairs.push(p);
            }
        }

        for r in &quad[2..] {
            match slot(ck, &r.request.request_id) {
                Slot::Done(resp) if resp.text.trim().is_empty() => {
                    exclude(&mut out, StimulusKind::Completion, r.variant(), ExclusionReason::Unparseable, String::new())
                }
                Slot::Done(resp) => {
                    let label = classify_completion(&resp.text, &pair.stereo_text, &pair.anti_text, tau)?;
                    out.completions.push(CompletionResult::new(key.clone(), r.variant(), label));
                }
                Slot::Failed(msg) => exclude(&mut out, StimulusKind::Completion, r.variant(), ExclusionReason::Failed, msg),
            }
        }
    }
    Ok(out)
}

/// Scores every batch from the checkpoint's stored responses.
pub fn collect_results(prepared: &Prepared, ck: &Checkpoint) -> Result<RunResults> {
    let mut batches = Vec::with_capacity(prepared.plan.batches.len());
    let mut pairs = BTreeMap::new();
    let mut completions = BTreeMap::new();
    let mut exclusions = BTreeSet::new();
    for b in &prepared.plan.batches {
        let outcome = batch_outcome(prepared, ck, b.index)?;
        for p in &outcome.pairs {
            pairs.entry(p.key.clone()).or_insert_with(|| p.clone());
        }
        for c in &outcome.completions {
            completions.entry((c.key.clone(), c.variant)).or_insert_with(|| c.clone());
        }
        exclusions.extend(outcome.exclusions.iter().cloned());
        batches.push(outcome);
    }
    Ok(RunResults {
        batches,
        pairs: pairs.into_values().collect(),
        completions: completions.into_values().collect(),
        exclusions: exclusions.into_iter().collect(),
    })
}

/// Fixture entries for every completed response, for `--backend record`.
pub fn fixtures_from_checkpoint(prepared: &Prepared, ck: &Checkpoint) -> FixtureStore {
    let mut store = FixtureStore::default();
    for r in &prepared.plan.requests {
        if let Slot::Done(resp) = slot(ck, &r.request.request_id) {
            store.insert(FixtureEntry {
                request_id: r.request.request_id.clone(),
                model_id: r.request.model_id.clone(),
                config: r.request.config.clone(),
                prompt_text: r.request.stimulus.text.clone(),
                response_text: resp.text.clone(),
                finish_reason: resp.finish_reason,
            });
        }
    }
    store
}

/// Merges newly recorded responses into the fixture file.
pub fn write_recorded_fixtures(prepared: &Prepared, ck: &Checkpoint, path: &Path) -> Result<usize> {
    let mut store = if path.exists() { FixtureStore::load(path)? } else { FixtureStore::default() };
    for e in fixtures_from_checkpoint(prepared, ck).entries() {
        store.insert(e.clone());
    }
    store.save(path)?;
    Ok(store.len())
}
