//! Aggregation of per-pair measurements into summary statistics.
//!
//! Agreement scores and similarities are carried at six-decimal precision
//! (see [`round6`]). Summary sums are accumulated in integer micro-units, so
//! every aggregate here is exactly independent of record order and partial
//! accumulators merge without rounding drift.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::BiasType;
use crate::prompting::Variant;
use crate::scoring::{round6, AgreementScore, CompletionLabel, Label};

/// z for a two-sided 95% normal interval.
const Z_95: f64 = 1.959_963_984_540_054;

/// How pairwise model comparisons are expressed in reports.
pub const EFFECT_SIZE_CONVENTION: &str =
    "difference in prevalence proportions with normal-approximation 95% interval (harness convention)";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    Shape { left: usize, right: usize },
    #[error("need at least 2 observations, got {0}")]
    TooFew(usize),
    #[error("record `{pair_id}` has no {attribute} attribute")]
    MissingAttribute { pair_id: String, attribute: &'static str },
    #[error("agreement and completion results share no (pair, model, config) keys")]
    Alignment,
    #[error("sweep result has no grid value")]
    Untagged,
}

/// Identity and strata of one evaluated pair under one model and config.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub pair_id: String,
    pub model_id: String,
    pub config_id: String,
    pub bias_type: Option<BiasType>,
    pub domain: Option<String>,
}

impl RecordKey {
    fn join_key(&self) -> (&str, &str, &str) {
        (&self.pair_id, &self.model_id, &self.config_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub key: RecordKey,
    pub a_stereo: f64,
    pub a_anti: f64,
    pub bias_agreement: bool,
    pub delta: f64,
}

impl PairResult {
    pub fn new(key: RecordKey, a_stereo: f64, a_anti: f64) -> Self {
        let (a_stereo, a_anti) = (round6(a_stereo), round6(a_anti));
        Self { key, a_stereo, a_anti, bias_agreement: a_stereo > a_anti, delta: round6(a_stereo - a_anti) }
    }
}

/// Pairs two agreement scores. `None` means at least one was unparseable and
/// the pair must be excluded (the caller counts it as unparseable).
pub fn pair_result(key: RecordKey, a_stereo: &AgreementScore, a_anti: &AgreementScore) -> Option<PairResult> {
    Some(PairResult::new(key, a_stereo.value?, a_anti.value?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub key: RecordKey,
    pub variant: Variant,
    pub label: CompletionLabel,
}

impl CompletionResult {
    /// Stores similarities at six decimals; the label keeps the decision made
    /// on the unrounded values.
    pub fn new(key: RecordKey, variant: Variant, mut label: CompletionLabel) -> Self {
        label.similarities.sim_stereo = round6(label.similarities.sim_stereo);
        label.similarities.sim_anti = round6(label.similarities.sim_anti);
        Self { key, variant, label }
    }
}

/// Anything carrying a binary bias outcome.
pub trait BiasIndicator {
    fn key(&self) -> &RecordKey;
    fn is_biased(&self) -> bool;
}

impl BiasIndicator for PairResult {
    fn key(&self) -> &RecordKey {
        &self.key
    }
    fn is_biased(&self) -> bool {
        self.bias_agreement
    }
}

impl BiasIndicator for CompletionResult {
    fn key(&self) -> &RecordKey {
        &self.key
    }
    fn is_biased(&self) -> bool {
        self.label.label == Label::Stereotypical
    }
}

/// Percentage of biased results; `None` for an empty slice.
pub fn prevalence<T: BiasIndicator>(results: &[T]) -> Option<f64> {
    if results.is_empty() {
        return None;
    }
    let biased = results.iter().filter(|r| r.is_biased()).count();
    Some(biased as f64 * 100.0 / results.len() as f64)
}

/// Mean delta over biased pairs; `None` when no pair is biased.
pub fn mean_magnitude(results: &[PairResult]) -> Option<f64> {
    let mut acc = SummaryAccumulator::default();
    results.iter().for_each(|r| acc.add_pair(r));
    acc.finish().mean_magnitude
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    BiasType,
    Domain,
}

/// Prevalence computed independently inside each group. Empty groups never
/// appear in the output.
pub fn domain_prevalence<T: BiasIndicator>(results: &[T], group_by: GroupBy) -> Result<BTreeMap<String, f64>, MetricsError> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in results {
        let key = r.key();
        let group = match group_by {
            GroupBy::BiasType => key.bias_type.map(|t| t.as_str().to_string()),
            GroupBy::Domain => key.domain.clone(),
        }
        .ok_or_else(|| MetricsError::MissingAttribute {
            pair_id: key.pair_id.clone(),
            attribute: match group_by {
                GroupBy::BiasType => "bias_type",
                GroupBy::Domain => "domain",
            },
        })?;
        let slot = counts.entry(group).or_default();
        slot.0 += usize::from(r.is_biased());
        slot.1 += 1;
    }
    Ok(counts.into_iter().map(|(g, (b, n))| (g, b as f64 * 100.0 / n as f64)).collect())
}

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if libm::fabs(self.sum) >= libm::fabs(x) {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

/// Sample Pearson correlation, computed in one pass over running co-moments.
///
/// Returns `Ok(None)` when either series has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::Shape { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFew(x.len()));
    }
    let (mut mean_x, mut mean_y) = (0.0, 0.0);
    let (mut sxx, mut syy, mut sxy) = (CompensatedSum::default(), CompensatedSum::default(), CompensatedSum::default());
    for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
        let n = (i + 1) as f64;
        let dx = xi - mean_x;
        let dy = yi - mean_y;
        mean_x += dx / n;
        mean_y += dy / n;
        sxx.add(dx * (xi - mean_x));
        syy.add(dy * (yi - mean_y));
        sxy.add(dx * (yi - mean_y));
    }
    let (vx, vy) = (sxx.value(), syy.value());
    if vx <= 0.0 || vy <= 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy.value() / libm::sqrt(vx * vy)).clamp(-1.0, 1.0)))
}

pub const CORRELATION_COLUMNS: [&str; 7] =
    ["a_stereo", "a_anti", "bias_agreement", "delta", "bias_completion", "sim_stereo", "sim_anti"];

/// One completion joined with the agreement result of its pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JoinedRecord {
    pub a_stereo: f64,
    pub a_anti: f64,
    pub bias_agreement: f64,
    pub delta: f64,
    pub bias_completion: f64,
    pub sim_stereo: f64,
    pub sim_anti: f64,
}

impl JoinedRecord {
    pub fn column(&self, index: usize) -> f64 {
        [self.a_stereo, self.a_anti, self.bias_agreement, self.delta, self.bias_completion, self.sim_stereo, self.sim_anti]
            [index]
    }
}

/// Joins each completion to the agreement result with the same
/// (pair_id, model_id, config_id). Completions without a partner are dropped.
pub fn join_records(pairs: &[PairResult], completions: &[CompletionResult]) -> Result<Vec<JoinedRecord>, MetricsError> {
    let by_key: BTreeMap<_, _> = pairs.iter().map(|p| (p.key.join_key(), p)).collect();
    let joined: Vec<_> = completions
        .iter()
        .filter_map(|c| {
            let p = by_key.get(&c.key.join_key())?;
            Some(JoinedRecord {
                a_stereo: p.a_stereo,
                a_anti: p.a_anti,
                bias_agreement: f64::from(u8::from(p.bias_agreement)),
                delta: p.delta,
                bias_completion: f64::from(u8::from(c.is_biased())),
                sim_stereo: c.label.similarities.sim_stereo,
                sim_anti: c.label.similarities.sim_anti,
            })
        })
        .collect();
    if joined.is_empty() && !(pairs.is_empty() && completions.is_empty()) {
        return Err(MetricsError::Alignment);
    }
    Ok(joined)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    /// Row-major; `None` where a column has zero variance.
    pub cells: Vec<Vec<Option<f64>>>,
}

/// Pearson matrix over [`CORRELATION_COLUMNS`]. The upper triangle is
/// computed and mirrored, so the matrix is exactly symmetric; the diagonal is
/// 1 for every column with non-zero variance.
pub fn correlation_matrix(records: &[JoinedRecord]) -> Result<CorrelationMatrix, MetricsError> {
    if records.len() < 2 {
        return Err(MetricsError::TooFew(records.len()));
    }
    let k = CORRELATION_COLUMNS.len();
    let columns: Vec<Vec<f64>> = (0..k).map(|j| records.iter().map(|r| r.column(j)).collect()).collect();
    let mut cells = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let r = pearson(&columns[i], &columns[j])?;
            let r = if i == j { r.map(|_| 1.0) } else { r };
            cells[i][j] = r;
            cells[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { labels: CORRELATION_COLUMNS.iter().map(|s| s.to_string()).collect(), cells })
}

/// The seven headline metrics plus the counts behind them. Undefined
/// statistics are `None` and serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean_a_stereo: Option<f64>,
    pub mean_a_anti: Option<f64>,
    /// Mean of per-pair indicators, in `[0, 1]`.
    pub mean_bias_agreement: Option<f64>,
    pub mean_magnitude: Option<f64>,
    /// Indicator applied to the mean scores: `mean_a_stereo > mean_a_anti`.
    pub aggregate_indicator: Option<bool>,
    pub bias_completion_rate: Option<f64>,
    pub mean_sim_stereo: Option<f64>,
    pub mean_sim_anti: Option<f64>,
    pub n_pairs: usize,
    pub n_biased_pairs: usize,
    pub n_completions: usize,
    pub n_stereotypical_completions: usize,
    pub unparseable_count: usize,
    pub failed_count: usize,
}

fn micros(x: f64) -> i128 {
    libm::round(x * 1e6) as i128
}

fn mean_micros(sum: i128, n: usize) -> Option<f64> {
    (n > 0).then(|| sum as f64 / 1e6 / n as f64)
}

/// Mergeable partial aggregate. Merging is the count-weighted combination,
/// exact because every sum is an integer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SummaryAccumulator {
    n_pairs: usize,
    n_biased: usize,
    sum_a_stereo: i128,
    sum_a_anti: i128,
    sum_biased_delta: i128,
    n_completions: usize,
    n_stereotypical: usize,
    sum_sim_stereo: i128,
    sum_sim_anti: i128,
    unparseable: usize,
    failed: usize,
}

impl SummaryAccumulator {
    pub fn add_pair(&mut self, r: &PairResult) {
        self.n_pairs += 1;
        self.sum_a_stereo += micros(r.a_stereo);
        self.sum_a_anti += micros(r.a_anti);
        if r.bias_agreement {
            self.n_biased += 1;
            self.sum_biased_delta += micros(r.a_stereo) - micros(r.a_anti);
        }
    }

    pub fn add_completion(&mut self, c: &CompletionResult) {
        self.n_completions += 1;
        self.n_stereotypical += usize::from(c.is_biased());
        self.sum_sim_stereo += micros(c.label.similarities.sim_stereo);
        self.sum_sim_anti += micros(c.label.similarities.sim_anti);
    }

    pub fn add_unparseable(&mut self, n: usize) {
        self.unparseable += n;
    }

    pub fn add_failed(&mut self, n: usize) {
        self.failed += n;
    }

    pub fn merge(&mut self, other: &SummaryAccumulator) {
        self.n_pairs += other.n_pairs;
        self.n_biased += other.n_biased;
        self.sum_a_stereo += other.sum_a_stereo;
        self.sum_a_anti += other.sum_a_anti;
        self.sum_biased_delta += other.sum_biased_delta;
        self.n_completions += other.n_completions;
        self.n_stereotypical += other.n_stereotypical;
        self.sum_sim_stereo += other.sum_sim_stereo;
        self.sum_sim_anti += other.sum_sim_anti;
        self.unparseable += other.unparseable;
        self.failed += other.failed;
    }

    pub fn finish(&self) -> MetricSummary {
        let aggregate_indicator = (self.n_pairs > 0).then_some(self.sum_a_stereo > self.sum_a_anti);
        MetricSummary {
            mean_a_stereo: mean_micros(self.sum_a_stereo, self.n_pairs),
            mean_a_anti: mean_micros(self.sum_a_anti, self.n_pairs),
            mean_bias_agreement: (self.n_pairs > 0).then(|| self.n_biased as f64 / self.n_pairs as f64),
            mean_magnitude: mean_micros(self.sum_biased_delta, self.n_biased),
            aggregate_indicator,
            bias_completion_rate: (self.n_completions > 0)
                .then(|| self.n_stereotypical as f64 / self.n_completions as f64),
            mean_sim_stereo: mean_micros(self.sum_sim_stereo, self.n_completions),
            mean_sim_anti: mean_micros(self.sum_sim_anti, self.n_completions),
            n_pairs: self.n_pairs,
            n_biased_pairs: self.n_biased,
            n_completions: self.n_completions,
            n_stereotypical_completions: self.n_stereotypical,
            unparseable_count: self.unparseable,
            failed_count: self.failed,
        }
    }
}

impl MetricSummary {
    pub fn compute(pairs: &[PairResult], completions: &[CompletionResult], unparseable: usize, failed: usize) -> Self {
        summarize(pairs, completions, unparseable, failed).finish()
    }
}

pub fn summarize(
    pairs: &[PairResult],
    completions: &[CompletionResult],
    unparseable: usize,
    failed: usize,
) -> SummaryAccumulator {
    let mut acc = SummaryAccumulator::default();
    pairs.iter().for_each(|p| acc.add_pair(p));
    completions.iter().for_each(|c| acc.add_completion(c));
    acc.add_unparseable(unparseable);
    acc.add_failed(failed);
    acc
}

/// Results observed at one sweep grid value.
#[derive(Debug, Clone, Copy)]
pub struct SweepObservation<'a> {
    pub value: Option<f64>,
    pub pairs: &'a [PairResult],
    pub completions: &'a [CompletionResult],
    pub unparseable: usize,
    pub failed: usize,
}

/// One summary per distinct grid value, ascending. Observations sharing a
/// value are merged.
pub fn sweep_summary(observations: &[SweepObservation<'_>]) -> Result<Vec<(f64, MetricSummary)>, MetricsError> {
    let mut groups: Vec<(f64, SummaryAccumulator)> = Vec::new();
    for obs in observations {
        let value = obs.value.ok_or(MetricsError::Untagged)?;
        let acc = summarize(obs.pairs, obs.completions, obs.unparseable, obs.failed);
        match groups.iter_mut().find(|(v, _)| v.to_bits() == value.to_bits()) {
            Some((_, existing)) => existing.merge(&acc),
            None => groups.push((value, acc)),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(groups.into_iter().map(|(v, acc)| (v, acc.finish())).collect())
}

/// Difference of two prevalence proportions `a - b` with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceComparison {
    pub difference: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn compare_prevalence(biased_a: usize, n_a: usize, biased_b: usize, n_b: usize) -> Option<PrevalenceComparison> {
    if n_a == 0 || n_b == 0 {
        return None;
    }
    let pa = biased_a as f64 / n_a as f64;
    let pb = biased_b as f64 / n_b as f64;
    let std_error = libm::sqrt(pa * (1.0 - pa) / n_a as f64 + pb * (1.0 - pb) / n_b as f64);
    let difference = pa - pb;
    Some(PrevalenceComparison {
        difference,
        std_error,
        ci_low: difference - Z_95 * std_error,
        ci_high: difference + Z_95 * std_error,
    })
}
