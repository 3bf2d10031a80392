//! Result tables, summary JSON, correlation matrix and charts.
//!
//! Everything written here is a pure function of the scored records and the
//! run metadata. Numbers in CSV files carry six decimals; records are
//! quantized to six decimals when scored, so reading the tables back
//! reproduces the records exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dmba_core::corpus::BiasType;
use dmba_core::metrics::{
    compare_prevalence, correlation_matrix, domain_prevalence, join_records, sweep_summary, CompletionResult,
    CorrelationMatrix, GroupBy, MetricSummary, PairResult, PrevalenceComparison, RecordKey, SummaryAccumulator,
    SweepObservation, CORRELATION_COLUMNS, EFFECT_SIZE_CONVENTION,
};
use dmba_core::plan::SweepAxis;
use dmba_core::prompting::{StimulusKind, Variant, TRUNCATION_TOKENS};
use dmba_core::request::RetryPolicy;
use dmba_core::scoring::{CompletionLabel, Label, SimilarityPair, TOKENIZER_VERSION};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::{BackendKind, Exclusion, ExclusionReason, Prepared, RunMode, RunResults, RunSpec};
use crate::plots::{grouped_bar_chart, heatmap, line_chart, BarGroup, Series};

pub const PER_PAIR_FILE: &str = "per_pair.csv";
pub const PER_COMPLETION_FILE: &str = "per_completion.csv";
pub const EXCLUDED_FILE: &str = "excluded.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const METADATA_FILE: &str = "run_metadata.json";
pub const CORRELATION_FILE: &str = "correlation.csv";
pub const BIAS_BY_TYPE_FILE: &str = "bias_by_type.csv";

pub const PER_PAIR_COLUMNS: [&str; 11] = [
    "pair_id",
    "model_id",
    "config_id",
    "temperature",
    "top_p",
    "bias_type",
    "domain",
    "a_stereo",
    "a_anti",
    "bias_agreement",
    "delta",
];

pub const PER_COMPLETION_COLUMNS: [&str; 13] = [
    "pair_id",
    "model_id",
    "config_id",
    "temperature",
    "top_p",
    "bias_type",
    "domain",
    "variant",
    "sim_stereo",
    "sim_anti",
    "threshold",
    "label",
    "bias_completion",
];

pub const EXCLUDED_COLUMNS: [&str; 9] =
    ["pair_id", "model_id", "config_id", "bias_type", "domain", "kind", "variant", "reason", "detail"];

pub const SWEEP_COLUMNS: [&str; 12] = [
    "model_id",
    "value",
    "n_pairs",
    "n_biased_pairs",
    "mean_bias_agreement",
    "mean_magnitude",
    "n_completions",
    "bias_completion_rate",
    "mean_sim_stereo",
    "mean_sim_anti",
    "unparseable_count",
    "failed_count",
];

/// Label used for rows pooled over all models.
pub const ALL_MODELS: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMeta {
    pub index: usize,
    pub config_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub n_pairs: usize,
    pub sweep_axis: Option<SweepAxis>,
    pub sweep_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub per_type: usize,
    pub temperatures: Vec<f64>,
    pub top_ps: Vec<f64>,
    pub fixed_top_p: f64,
    pub fixed_temperature: f64,
    pub sample_pair_ids: Vec<String>,
}

/// All configuration behind a result set. Holds no timestamps or paths so
/// that identical runs emit identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub run_id: String,
    pub plan_digest: String,
    pub models: Vec<String>,
    pub template_id: String,
    pub template_body: String,
    pub tau: f64,
    pub seed: u64,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
    pub truncation: String,
    pub tokenizer_version: String,
    pub effect_size_convention: String,
    pub dataset_pairs: usize,
    pub batches: Vec<BatchMeta>,
    pub sweep: Option<SweepMeta>,
    pub backend: BackendKind,
    pub retry_policy: RetryPolicy,
    pub per_model_limit: usize,
    pub checkpoint_every: usize,
}

impl RunMetadata {
    pub fn from_run(spec: &RunSpec, prepared: &Prepared) -> Self {
        let plan = &prepared.plan;
        let sweep = match (&spec.mode, &plan.sweep) {
            (RunMode::Sweep { per_type, .. }, Some(s)) => Some(SweepMeta {
                per_type: *per_type,
                temperatures: s.temperatures.clone(),
                top_ps: s.top_ps.clone(),
                fixed_top_p: s.fixed_top_p,
                fixed_temperature: s.fixed_temperature,
                sample_pair_ids: prepared.dataset.pairs.iter().map(|p| p.pair_id.clone()).collect(),
            }),
            _ => None,
        };
        Self {
            run_id: plan.run_id.clone(),
            plan_digest: plan.digest.clone(),
            models: plan.models.clone(),
            template_id: prepared.template.template_id.clone(),
            template_body: prepared.template.body.clone(),
            tau: plan.settings.tau,
            seed: plan.settings.seed,
            max_tokens: plan.settings.max_tokens,
            stop_sequences: plan.settings.stop_sequences.clone(),
            truncation: format!("first {TRUNCATION_TOKENS} whitespace tokens of both the stereotypical and anti-stereotypical sentence"),
            tokenizer_version: TOKENIZER_VERSION.to_string(),
            effect_size_convention: EFFECT_SIZE_CONVENTION.to_string(),
            dataset_pairs: prepared.dataset.len(),
            batches: plan
                .batches
                .iter()
                .map(|b| BatchMeta {
                    index: b.index,
                    config_id: b.config.config_id(),
                    temperature: b.config.temperature,
                    top_p: b.config.top_p,
                    max_tokens: b.config.max_tokens,
                    n_pairs: b.pair_ids.len(),
                    sweep_axis: b.sweep_point.map(|p| p.axis),
                    sweep_value: b.sweep_point.map(|p| p.value),
                })
                .collect(),
            sweep,
            backend: spec.backend,
            retry_policy: spec.policy.clone(),
            per_model_limit: spec.per_model_limit,
            checkpoint_every: spec.checkpoint_every,
        }
    }

    fn config(&self, config_id: &str) -> Option<&BatchMeta> {
        self.batches.iter().find(|b| b.config_id == config_id)
    }

    fn sweep_config(&self, axis: SweepAxis, value: f64) -> Option<&str> {
        self.batches
            .iter()
            .find(|b| b.sweep_axis == Some(axis) && b.sweep_value.map(f64::to_bits) == Some(value.to_bits()))
            .map(|b| b.config_id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportInput {
    pub meta: RunMetadata,
    pub pairs: Vec<PairResult>,
    pub completions: Vec<CompletionResult>,
    pub exclusions: Vec<Exclusion>,
}

impl ReportInput {
    pub fn from_run(spec: &RunSpec, prepared: &Prepared, results: &RunResults) -> Self {
        Self {
            meta: RunMetadata::from_run(spec, prepared),
            pairs: results.pairs.clone(),
            completions: results.completions.clone(),
            exclusions: results.exclusions.clone(),
        }
    }

    fn accumulate<F: Fn(&RecordKey) -> Option<String>>(&self, group: F) -> BTreeMap<String, SummaryAccumulator> {
        let mut acc: BTreeMap<String, SummaryAccumulator> = BTreeMap::new();
        for p in &self.pairs {
            if let Some(g) = group(&p.key) {
                acc.entry(g).or_default().add_pair(p);
            }
        }
        for c in &self.completions {
            if let Some(g) = group(&c.key) {
                acc.entry(g).or_default().add_completion(c);
            }
        }
        for e in &self.exclusions {
            if let Some(g) = group(&e.key) {
                let a = acc.entry(g).or_default();
                match e.reason {
                    ExclusionReason::Unparseable => a.add_unparseable(1),
                    ExclusionReason::Failed => a.add_failed(1),
                }
            }
        }
        acc
    }

    fn summaries<F: Fn(&RecordKey) -> Option<String>>(&self, group: F) -> BTreeMap<String, MetricSummary> {
        self.accumulate(group).into_iter().map(|(k, a)| (k, a.finish())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub model_a: String,
    pub model_b: String,
    #[serde(flatten)]
    pub stats: PrevalenceComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prevalences {
    pub agreement_by_bias_type: BTreeMap<String, f64>,
    pub agreement_by_domain: BTreeMap<String, f64>,
    pub completion_by_bias_type: BTreeMap<String, f64>,
    pub completion_by_domain: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub model_id: String,
    pub value: f64,
    pub summary: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweeps {
    pub fixed_top_p: f64,
    pub fixed_temperature: f64,
    pub temperature: Vec<SweepEntry>,
    pub top_p: Vec<SweepEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_id: String,
    pub tau: f64,
    pub tokenizer_version: String,
    pub effect_size_convention: String,
    pub overall: MetricSummary,
    pub by_model: BTreeMap<String, MetricSummary>,
    pub by_config: BTreeMap<String, MetricSummary>,
    pub by_bias_type: BTreeMap<String, MetricSummary>,
    pub by_model_bias_type: BTreeMap<String, BTreeMap<String, MetricSummary>>,
    /// Percentages.
    pub prevalence: Prevalences,
    pub comparisons: Vec<Comparison>,
    pub correlation: Option<CorrelationMatrix>,
    pub sweeps: Option<Sweeps>,
}

fn bias_type_of(key: &RecordKey) -> Option<String> {
    key.bias_type.map(|b| b.as_str().to_string())
}

pub fn correlation(input: &ReportInput) -> Option<CorrelationMatrix> {
    join_records(&input.pairs, &input.completions).ok().and_then(|j| correlation_matrix(&j).ok())
}

fn sweep_entries(input: &ReportInput, axis: SweepAxis, grid: &[f64]) -> Result<Vec<SweepEntry>> {
    let mut models: Vec<Option<&str>> = vec![None];
    models.extend(input.meta.models.iter().map(|m| Some(m.as_str())));
    let mut out = Vec::new();
    for model in models {
        let mut selected = Vec::new();
        for &value in grid {
            let Some(config_id) = input.meta.sweep_config(axis, value) else { continue };
            let keep = |k: &RecordKey| k.config_id == config_id && model.is_none_or(|m| k.model_id == m);
            let pairs: Vec<PairResult> = input.pairs.iter().filter(|p| keep(&p.key)).cloned().collect();
            let completions: Vec<CompletionResult> = input.completions.iter().filter(|c| keep(&c.key)).cloned().collect();
            let excluded = |r: ExclusionReason| input.exclusions.iter().filter(|e| e.reason == r && keep(&e.key)).count();
            selected.push((value, pairs, completions, excluded(ExclusionReason::Unparseable), excluded(ExclusionReason::Failed)));
        }
        let observations: Vec<SweepObservation<'_>> = selected
            .iter()
            .map(|(v, p, c, u, f)| SweepObservation { value: Some(*v), pairs: p, completions: c, unparseable: *u, failed: *f })
            .collect();
        for (value, summary) in sweep_summary(&observations)? {
            out.push(SweepEntry { model_id: model.unwrap_or(ALL_MODELS).to_string(), value, summary });
        }
    }
    Ok(out)
}

pub fn build_summary(input: &ReportInput) -> Result<Summary> {
    let overall = input.summaries(|_| Some(String::new())).remove("").unwrap_or_else(|| SummaryAccumulator::default().finish());
    let by_model = input.summaries(|k| Some(k.model_id.clone()));
    let mut by_model_bias_type: BTreeMap<String, BTreeMap<String, MetricSummary>> = BTreeMap::new();
    for model in by_model.keys() {
        let inner = input.summaries(|k| if &k.model_id == model { bias_type_of(k) } else { None });
        by_model_bias_type.insert(model.clone(), inner);
    }

    let mut comparisons = Vec::new();
    let models: Vec<&String> = by_model.keys().collect();
    for (i, a) in models.iter().enumerate() {
        for b in &models[i + 1..] {
            let (sa, sb) = (&by_model[*a], &by_model[*b]);
            let metrics = [
                ("bias_agreement", sa.n_biased_pairs, sa.n_pairs, sb.n_biased_pairs, sb.n_pairs),
                (
                    "bias_completion",
                    sa.n_stereotypical_completions,
                    sa.n_completions,
                    sb.n_stereotypical_completions,
                    sb.n_completions,
                ),
            ];
            for (metric, ba, na, bb, nb) in metrics {
                if let Some(stats) = compare_prevalence(ba, na, bb, nb) {
                    comparisons.push(Comparison {
                        metric: metric.to_string(),
                        model_a: (*a).clone(),
                        model_b: (*b).clone(),
                        stats,
                    });
                }
            }
        }
    }

    let sweeps = match &input.meta.sweep {
        Some(s) => Some(Sweeps {
            fixed_top_p: s.fixed_top_p,
            fixed_temperature: s.fixed_temperature,
            temperature: sweep_entries(input, SweepAxis::Temperature, &s.temperatures)?,
            top_p: sweep_entries(input, SweepAxis::TopP, &s.top_ps)?,
        }),
        None => None,
    };

    Ok(Summary {
        run_id: input.meta.run_id.clone(),
        tau: input.meta.tau,
        tokenizer_version: input.meta.tokenizer_version.clone(),
        effect_size_convention: input.meta.effect_size_convention.clone(),
        overall,
        by_model,
        by_config: input.summaries(|k| Some(k.config_id.clone())),
        by_bias_type: input.summaries(bias_type_of),
        by_model_bias_type,
        prevalence: Prevalences {
            agreement_by_bias_type: domain_prevalence(&input.pairs, GroupBy::BiasType)?,
            agreement_by_domain: domain_prevalence(&input.pairs, GroupBy::Domain)?,
            completion_by_bias_type: domain_prevalence(&input.completions, GroupBy::BiasType)?,
            completion_by_domain: domain_prevalence(&input.completions, GroupBy::Domain)?,
        },
        comparisons,
        correlation: correlation(input),
        sweeps,
    })
}

/// Paths of every file written by [`export_results`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub per_pair_csv: PathBuf,
    pub per_completion_csv: PathBuf,
    pub excluded_csv: PathBuf,
    pub summary_json: PathBuf,
    pub metadata_json: PathBuf,
    pub correlation_csv: PathBuf,
    pub plot_data_csvs: Vec<PathBuf>,
    pub sweep_csvs: Vec<PathBuf>,
    pub svg_paths: Vec<PathBuf>,
}

impl ReportBundle {
    pub fn all_paths(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = vec![
            &self.per_pair_csv,
            &self.per_completion_csv,
            &self.excluded_csv,
            &self.summary_json,
            &self.metadata_json,
            &self.correlation_csv,
        ];
        v.extend(self.plot_data_csvs.iter().map(PathBuf::as_path));
        v.extend(self.sweep_csvs.iter().map(PathBuf::as_path));
        v.extend(self.svg_paths.iter().map(PathBuf::as_path));
        v
    }
}

fn num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(path: PathBuf, header: &[&str]) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(header).map_err(|e| Error::csv(&path, e))?;
        Ok(Self { path, writer })
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| Error::csv(&self.path, e))
    }

    fn finish(self) -> Result<PathBuf> {
        let bytes = self.writer.into_inner().map_err(|e| Error::io(&self.path, e.into_error()))?;
        write_file(&self.path, &bytes)?;
        Ok(self.path)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report values serialize");
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn key_fields(key: &RecordKey) -> [String; 2] {
    [key.bias_type.map(|b| b.as_str().to_string()).unwrap_or_default(), key.domain.clone().unwrap_or_default()]
}

fn config_fields(meta: &RunMetadata, config_id: &str) -> [String; 2] {
    match meta.config(config_id) {
        Some(b) => [num(b.temperature), num(b.top_p)],
        None => [String::new(), String::new()],
    }
}

fn write_sweep_csv(path: PathBuf, entries: &[SweepEntry]) -> Result<PathBuf> {
    let mut t = Table::new(path, &SWEEP_COLUMNS)?;
    for e in entries {
        let s = &e.summary;
        t.row([
            e.model_id.clone(),
            num(e.value),
            s.n_pairs.to_string(),
            s.n_biased_pairs.to_string(),
            opt(s.mean_bias_agreement),
            opt(s.mean_magnitude),
            s.n_completions.to_string(),
            opt(s.bias_completion_rate),
            opt(s.mean_sim_stereo),
            opt(s.mean_sim_anti),
            s.unparseable_count.to_string(),
            s.failed_count.to_string(),
        ])?;
    }
    t.finish()
}

fn sweep_chart(entries: &[SweepEntry], grid: &[f64], axis: &str, metric: &str, pick: fn(&MetricSummary) -> Option<f64>) -> String {
    let mut labels: Vec<&str> = Vec::new();
    for e in entries {
        if !labels.contains(&e.model_id.as_str()) {
            labels.push(&e.model_id);
        }
    }
    let series: Vec<Series> = labels
        .iter()
        .map(|m| Series {
            label: m.to_string(),
            values: grid
                .iter()
                .map(|v| {
                    entries.iter().find(|e| e.model_id == *m && e.value.to_bits() == v.to_bits()).and_then(|e| pick(&e.summary))
                })
                .collect(),
        })
        .collect();
    line_chart(&format!("{metric} vs {axis}"), axis, metric, 1.0, grid, &series)
}

/// Writes the full report for `input` into `out_dir`.
pub fn export_results(input: &ReportInput, out_dir: &Path) -> Result<ReportBundle> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let meta = &input.meta;

    let mut t = Table::new(out_dir.join(PER_PAIR_FILE), &PER_PAIR_COLUMNS)?;
    for p in &input.pairs {
        let [bt, domain] = key_fields(&p.key);
        let [temp, top_p] = config_fields(meta, &p.key.config_id);
        t.row([
            p.key.pair_id.clone(),
            p.key.model_id.clone(),
            p.key.config_id.clone(),
            temp,
            top_p,
            bt,
            domain,
            num(p.a_stereo),
            num(p.a_anti),
            u8::from(p.bias_agreement).to_string(),
            num(p.delta),
        ])?;
    }
    let per_pair_csv = t.finish()?;

    let mut t = Table::new(out_dir.join(PER_COMPLETION_FILE), &PER_COMPLETION_COLUMNS)?;
    for c in &input.completions {
        let [bt, domain] = key_fields(&c.key);
        let [temp, top_p] = config_fields(meta, &c.key.config_id);
        let sims = c.label.similarities;
        t.row([
            c.key.pair_id.clone(),
            c.key.model_id.clone(),
            c.key.config_id.clone(),
            temp,
            top_p,
            bt,
            domain,
            c.variant.as_str().to_string(),
            num(sims.sim_stereo),
            num(sims.sim_anti),
            num(c.label.threshold),
            c.label.label.as_str().to_string(),
            u8::from(c.label.label == Label::Stereotypical).to_string(),
        ])?;
    }
    let per_completion_csv = t.finish()?;

    let mut t = Table::new(out_dir.join(EXCLUDED_FILE), &EXCLUDED_COLUMNS)?;
    for e in &input.exclusions {
        let [bt, domain] = key_fields(&e.key);
        t.row([
            e.key.pair_id.as_str(),
            &e.key.model_id,
            &e.key.config_id,
            &bt,
            &domain,
            e.kind.as_str(),
            e.variant.as_str(),
            e.reason.as_str(),
            &e.detail,
        ])?;
    }
    let excluded_csv = t.finish()?;

    let summary = build_summary(input)?;
    let summary_json = out_dir.join(SUMMARY_FILE);
    write_json(&summary_json, &summary)?;
    let metadata_json = out_dir.join(METADATA_FILE);
    write_json(&metadata_json, meta)?;

    let matrix = summary.correlation.clone().unwrap_or_else(|| CorrelationMatrix {
        labels: CORRELATION_COLUMNS.iter().map(|s| s.to_string()).collect(),
        cells: vec![vec![None; CORRELATION_COLUMNS.len()]; CORRELATION_COLUMNS.len()],
    });
    let mut header = vec!["metric"];
    header.extend(matrix.labels.iter().map(String::as_str));
    let mut t = Table::new(out_dir.join(CORRELATION_FILE), &header)?;
    for (label, row) in matrix.labels.iter().zip(&matrix.cells) {
        let mut fields = vec![label.clone()];
        fields.extend(row.iter().map(|v| opt(*v)));
        t.row(fields)?;
    }
    let correlation_csv = t.finish()?;

    let mut t = Table::new(
        out_dir.join(BIAS_BY_TYPE_FILE),
        &["model_id", "bias_type", "n_pairs", "mean_bias_agreement", "n_completions", "bias_completion_rate"],
    )?;
    for (model, inner) in &summary.by_model_bias_type {
        for (bt, s) in inner {
            t.row([
                model.clone(),
                bt.clone(),
                s.n_pairs.to_string(),
                opt(s.mean_bias_agreement),
                s.n_completions.to_string(),
                opt(s.bias_completion_rate),
            ])?;
        }
    }
    let plot_data_csvs = vec![t.finish()?];

    let mut svg_paths = Vec::new();
    let mut svg = |name: &str, body: String| -> Result<()> {
        let path = out_dir.join(name);
        write_file(&path, body.as_bytes())?;
        svg_paths.push(path);
        Ok(())
    };
    let models: Vec<String> = summary.by_model.keys().cloned().collect();
    let groups = |pick: fn(&MetricSummary) -> Option<f64>| -> Vec<BarGroup> {
        BiasType::ALL
            .iter()
            .map(|bt| BarGroup {
                label: bt.as_str().to_string(),
                values: models
                    .iter()
                    .map(|m| summary.by_model_bias_type.get(m).and_then(|g| g.get(bt.as_str())).and_then(pick))
                    .collect(),
            })
            .collect()
    };
    svg(
        "agreement_by_type.svg",
        grouped_bar_chart(
            "Bias agreement rate by bias type",
            "mean bias agreement",
            1.0,
            &models,
            &groups(|s| s.mean_bias_agreement),
        ),
    )?;
    svg(
        "completion_by_type.svg",
        grouped_bar_chart(
            "Bias completion rate by bias type",
            "bias completion rate",
            1.0,
            &models,
            &groups(|s| s.bias_completion_rate),
        ),
    )?;
    svg("correlation_heatmap.svg", heatmap("Metric correlations (Pearson)", &matrix.labels, &matrix.cells))?;

    let mut sweep_csvs = Vec::new();
    if let (Some(sweeps), Some(sm)) = (&summary.sweeps, &meta.sweep) {
        sweep_csvs.push(write_sweep_csv(out_dir.join("sweep_temperature.csv"), &sweeps.temperature)?);
        sweep_csvs.push(write_sweep_csv(out_dir.join("sweep_top_p.csv"), &sweeps.top_p)?);
        let agreement: fn(&MetricSummary) -> Option<f64> = |s| s.mean_bias_agreement;
        let completion: fn(&MetricSummary) -> Option<f64> = |s| s.bias_completion_rate;
        for (name, entries, grid, axis) in [
            ("temperature", &sweeps.temperature, &sm.temperatures, "temperature"),
            ("top_p", &sweeps.top_p, &sm.top_ps, "top_p"),
        ] {
            svg(&format!("sweep_{name}_agreement.svg"), sweep_chart(entries, grid, axis, "mean bias agreement", agreement))?;
            svg(&format!("sweep_{name}_completion.svg"), sweep_chart(entries, grid, axis, "bias completion rate", completion))?;
        }
    }

    Ok(ReportBundle {
        per_pair_csv,
        per_completion_csv,
        excluded_csv,
        summary_json,
        metadata_json,
        correlation_csv,
        plot_data_csvs,
        sweep_csvs,
        svg_paths,
    })
}

fn reader(path: &Path) -> Result<(csv::Reader<fs::File>, csv::StringRecord)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let h = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    Ok((r, h))
}

struct Row<'a> {
    path: &'a Path,
    line: usize,
    header: &'a csv::StringRecord,
    record: csv::StringRecord,
}

impl Row<'_> {
    fn get(&self, name: &str) -> Result<&str> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::schema(self.path, format!("missing column `{name}`")))?;
        Ok(self.record.get(i).unwrap_or_default())
    }

    fn bad(&self, name: &str, value: &str) -> Error {
        Error::schema(self.path, format!("row {}: invalid {name} `{value}`", self.line))
    }

    fn real(&self, name: &str) -> Result<f64> {
        let v = self.get(name)?;
        v.parse().map_err(|_| self.bad(name, v))
    }

    fn key(&self) -> Result<RecordKey> {
        let bt = self.get("bias_type")?;
        let domain = self.get("domain")?;
        Ok(RecordKey {
            pair_id: self.get("pair_id")?.to_string(),
            model_id: self.get("model_id")?.to_string(),
            config_id: self.get("config_id")?.to_string(),
            bias_type: if bt.is_empty() { None } else { Some(bt.parse().map_err(|_| self.bad("bias_type", bt))?) },
            domain: (!domain.is_empty()).then(|| domain.to_string()),
        })
    }

    fn variant(&self) -> Result<Variant> {
        match self.get("variant")? {
            "stereo" => Ok(Variant::Stereo),
            "anti" => Ok(Variant::Anti),
            v => Err(self.bad("variant", v)),
        }
    }
}

fn rows<T>(path: &Path, mut f: impl FnMut(&Row<'_>) -> Result<T>) -> Result<Vec<T>> {
    let (mut r, header) = reader(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let record = rec.map_err(|e| Error::csv(path, e))?;
        out.push(f(&Row { path, line: i + 1, header: &header, record })?);
    }
    Ok(out)
}

/// Reads a result directory written by [`export_results`] back into
/// records.
pub fn load_results(dir: &Path) -> Result<ReportInput> {
    let meta_path = dir.join(METADATA_FILE);
    let text = crate::dataset::read_text(&meta_path)?;
    let meta: RunMetadata = serde_json::from_str(&text).map_err(|e| Error::json(&meta_path, &text, &e))?;

    let pairs = rows(&dir.join(PER_PAIR_FILE), |row| Ok(PairResult::new(row.key()?, row.real("a_stereo")?, row.real("a_anti")?)))?;
    let completions = rows(&dir.join(PER_COMPLETION_FILE), |row| {
        let label = match row.get("label")? {
            "stereotypical" => Label::Stereotypical,
            "anti_stereotypical" => Label::AntiStereotypical,
            v => return Err(row.bad("label", v)),
        };
        let similarities = SimilarityPair { sim_stereo: row.real("sim_stereo")?, sim_anti: row.real("sim_anti")? };
        let label = CompletionLabel { label, similarities, threshold: row.real("threshold")? };
        Ok(CompletionResult::new(row.key()?, row.variant()?, label))
    })?;
    let exclusions = rows(&dir.join(EXCLUDED_FILE), |row| {
        let kind = match row.get("kind")? {
            "agreement" => StimulusKind::Agreement,
            "completion" => StimulusKind::Completion,
            v => return Err(row.bad("kind", v)),
        };
        let reason = match row.get("reason")? {
            "unparseable" => ExclusionReason::Unparseable,
            "failed" => ExclusionReason::Failed,
            v => return Err(row.bad("reason", v)),
        };
        Ok(Exclusion { key: row.key()?, kind, variant: row.variant()?, reason, detail: row.get("detail")?.to_string() })
    })?;
    Ok(ReportInput { meta, pairs, completions, exclusions })
}
