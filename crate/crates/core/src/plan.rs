//! Run planning: pair-to-batch stratification, request expansion and
//! sensitivity-sweep grids.
//!
//! A main run splits the dataset into twelve near-equal batches. Batches
//! 1-4 decode deterministically (temperature 0, top_p 1.0), 5-8 sample at
//! temperature 0.7, and 9-12 combine temperature 0.7 with top_p 0.85. Every
//! pair and model expands into four requests: agreement on both sentences
//! and completion of both truncated sentences.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, SentencePair};
use crate::digest::ContentHasher;
use crate::prompting::{render_agreement_prompt, truncate_prompt, PromptError, PromptTemplate, StimulusKind, Variant};
use crate::request::{ConfigError, DecodingConfig, GenerationRequest, DEFAULT_MAX_TOKENS};
use crate::rng::SeededRng;
use crate::scoring::DEFAULT_TAU;

pub const BATCH_COUNT: usize = 12;
pub const DEFAULT_TEMPERATURE_GRID: [f64; 5] = [0.0, 0.3, 0.5, 0.7, 1.0];
pub const DEFAULT_TOP_P_GRID: [f64; 5] = [0.3, 0.5, 0.7, 0.85, 1.0];
pub const DEFAULT_SWEEP_PER_TYPE: usize = 135;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no models given")]
    NoModels,
    #[error("{0} grid is empty")]
    EmptyGrid(&'static str),
    #[error("batch index {0} outside 1..=12")]
    BatchIndex(usize),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Decoding regime of a main-run batch (1-based).
pub fn batch_config(index: usize, max_tokens: u32, stop_sequences: &[String]) -> Result<DecodingConfig, PlanError> {
    let (temperature, top_p) = match index {
        1..=4 => (0.0, 1.0),
        5..=8 => (0.7, 1.0),
        9..=12 => (0.7, 0.85),
        other => return Err(PlanError::BatchIndex(other)),
    };
    Ok(DecodingConfig { temperature, top_p, max_tokens, stop_sequences: stop_sequences.to_vec() })
}

/// Knobs shared by main runs and sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSettings {
    pub tau: f64,
    pub seed: u64,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, seed: 0, max_tokens: DEFAULT_MAX_TOKENS, stop_sequences: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Temperature,
    TopP,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Temperature => "temperature",
            SweepAxis::TopP => "top_p",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
}

/// Grids for the sensitivity analysis. Each sweep holds its partner
/// parameter at a fixed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub temperatures: Vec<f64>,
    pub top_ps: Vec<f64>,
    /// top_p held during the temperature sweep.
    pub fixed_top_p: f64,
    /// temperature held during the top_p sweep.
    pub fixed_temperature: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            temperatures: DEFAULT_TEMPERATURE_GRID.to_vec(),
            top_ps: DEFAULT_TOP_P_GRID.to_vec(),
            fixed_top_p: 1.0,
            fixed_temperature: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub index: usize,
    pub config: DecodingConfig,
    pub pair_ids: Vec<String>,
    /// Set for sweep plans, where each batch is one grid point.
    pub sweep_point: Option<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRequest {
    pub batch_index: usize,
    pub request: GenerationRequest,
}

impl PlannedRequest {
    pub fn pair_id(&self) -> &str {
        &self.request.stimulus.pair_id
    }

    pub fn variant(&self) -> Variant {
        self.request.stimulus.variant
    }

    pub fn kind(&self) -> StimulusKind {
        self.request.stimulus.kind
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub run_id: String,
    pub digest: String,
    pub models: Vec<String>,
    pub batches: Vec<Batch>,
    pub sweep: Option<SweepSpec>,
    pub template_id: String,
    pub settings: PlanSettings,
    /// Batch-major, then model, then pair, then the four stimuli.
    pub requests: Vec<PlannedRequest>,
}

impl RunPlan {
    pub fn batch(&self, index: usize) -> Option<&Batch> {
        self.batches.iter().find(|b| b.index == index)
    }

    pub fn requests_in_batch(&self, index: usize) -> impl Iterator<Item = &PlannedRequest> {
        self.requests.iter().filter(move |r| r.batch_index == index)
    }
}

/// Partitions the dataset into twelve stratified batches and expands requests.
pub fn plan_run(
    dataset: &Dataset,
    models: &[String],
    template: &PromptTemplate,
    settings: &PlanSettings,
) -> Result<RunPlan, PlanError> {
    if dataset.is_empty() {
        return Err(PlanError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    SeededRng::new(settings.seed).shuffle(&mut order);

    let base = order.len() / BATCH_COUNT;
    let extra = order.len() % BATCH_COUNT;
    let mut batches = Vec::with_capacity(BATCH_COUNT);
    let mut cursor = 0;
    for index in 1..=BATCH_COUNT {
        let size = base + usize::from(index <= extra);
        let mut members = order[cursor..cursor + size].to_vec();
        cursor += size;
        members.sort_unstable();
        batches.push(Batch {
            index,
            config: batch_config(index, settings.max_tokens, &settings.stop_sequences)?,
            pair_ids: members.into_iter().map(|i| dataset.pairs[i].pair_id.clone()).collect(),
            sweep_point: None,
        });
    }
    build(dataset, models, template, settings, batches, None)
}

/// One batch per grid point, each covering the whole sample: the temperature
/// grid first, then the top_p grid.
pub fn plan_sweep(
    sample: &Dataset,
    models: &[String],
    template: &PromptTemplate,
    settings: &PlanSettings,
    spec: &SweepSpec,
) -> Result<RunPlan, PlanError> {
    if spec.temperatures.is_empty() {
        return Err(PlanError::EmptyGrid("temperature"));
    }
    if spec.top_ps.is_empty() {
        return Err(PlanError::EmptyGrid("top_p"));
    }
    if sample.is_empty() {
        return Err(PlanError::EmptyDataset);
    }
    let pair_ids: Vec<String> = sample.pairs.iter().map(|p| p.pair_id.clone()).collect();
    let points = spec
        .temperatures
        .iter()
        .map(|&t| (SweepPoint { axis: SweepAxis::Temperature, value: t }, t, spec.fixed_top_p))
        .chain(spec.top_ps.iter().map(|&p| (SweepPoint { axis: SweepAxis::TopP, value: p }, spec.fixed_temperature, p)));
    let mut batches = Vec::new();
    for (i, (point, temperature, top_p)) in points.enumerate() {
        let config = DecodingConfig {
            temperature,
            top_p,
            max_tokens: settings.max_tokens,
            stop_sequences: settings.stop_sequences.clone(),
        };
        batches.push(Batch { index: i + 1, config, pair_ids: pair_ids.clone(), sweep_point: Some(point) });
    }
    build(sample, models, template, settings, batches, Some(spec.clone()))
}

fn build(
    dataset: &Dataset,
    models: &[String],
    template: &PromptTemplate,
    settings: &PlanSettings,
    batches: Vec<Batch>,
    sweep: Option<SweepSpec>,
) -> Result<RunPlan, PlanError> {
    if models.is_empty() {
        return Err(PlanError::NoModels);
    }
    let index = dataset.index();
    let mut requests = Vec::new();
    for batch in &batches {
        batch.config.validate()?;
        for model in models {
            for pair_id in &batch.pair_ids {
                let pair: &SentencePair = index[pair_id.as_str()];
                for variant in Variant::BOTH {
                    let stimulus = render_agreement_prompt(template, pair_id, variant, sentence(pair, variant))?;
                    requests.push(PlannedRequest {
                        batch_index: batch.index,
                        request: GenerationRequest::new(model.clone(), stimulus, batch.config.clone()),
                    });
                }
                for variant in Variant::BOTH {
                    let stimulus = truncate_prompt(pair_id, variant, sentence(pair, variant))?;
                    requests.push(PlannedRequest {
                        batch_index: batch.index,
                        request: GenerationRequest::new(model.clone(), stimulus, batch.config.clone()),
                    });
                }
            }
        }
    }

    let mut h = ContentHasher::new();
    h.str("dmba-plan-v1").u64(models.len() as u64);
    for m in models {
        h.str(m);
    }
    h.str(&template.template_id).str(&template.body).f64(settings.tau).u64(settings.seed);
    h.u64(batches.len() as u64);
    for b in &batches {
        h.u64(b.index as u64).str(&b.config.config_id()).u64(b.pair_ids.len() as u64);
        for id in &b.pair_ids {
            h.str(id);
        }
        if let Some(point) = b.sweep_point {
            h.str(point.axis.as_str()).f64(point.value);
        }
    }
    h.u64(requests.len() as u64);
    for r in &requests {
        h.str(r.request.request_id.as_str());
    }
    let digest = h.finish_hex(32);

    Ok(RunPlan {
        run_id: format!("run-{}", &digest[..12]),
        digest,
        models: models.to_vec(),
        batches,
        sweep,
        template_id: template.template_id.to_string(),
        settings: settings.clone(),
        requests,
    })
}

pub fn sentence(pair: &SentencePair, variant: Variant) -> &str {
    match variant {
        Variant::Stereo => &pair.stereo_text,
        Variant::Anti => &pair.anti_text,
    }
}

/// Batch sizes a near-equal split of `n` items into [`BATCH_COUNT`] batches
/// produces (remainder spread over the first batches).
pub fn batch_sizes(n: usize) -> Vec<usize> {
    let mut sizes = vec![n / BATCH_COUNT; BATCH_COUNT];
    for s in sizes.iter_mut().take(n % BATCH_COUNT) {
        *s += 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BiasType, SentencePair};

    fn dataset(n: usize) -> Dataset {
        let pairs = (0..n)
            .map(|i| SentencePair {
                pair_id: format!("p{i:04}"),
                bias_type: BiasType::ALL[i % 3],
                domain: "d".into(),
                stereo_text: format!("stereo sentence number {i} about a group here"),
                anti_text: format!("anti sentence number {i} about a group here"),
            })
            .collect();
        Dataset::new(pairs, "mem").unwrap()
    }

    fn models(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn twelve_equal_batches() {
        let plan = plan_run(&dataset(2400), &models(&["m"]), &PromptTemplate::default(), &PlanSettings::default()).unwrap();
        assert_eq!(plan.batches.len(), 12);
        assert!(plan.batches.iter().all(|b| b.pair_ids.len() == 200));
    }

    #[test]
    fn config_strata() {
        let plan = plan_run(&dataset(30), &models(&["m"]), &PromptTemplate::default(), &PlanSettings::default()).unwrap();
        for b in &plan.batches {
            let expected = match b.index {
                1..=4 => (0.0, 1.0),
                5..=8 => (0.7, 1.0),
                _ => (0.7, 0.85),
            };
            assert_eq!((b.config.temperature, b.config.top_p), expected);
        }
        let sizes: Vec<usize> = plan.batches.iter().map(|b| b.pair_ids.len()).collect();
        assert_eq!(sizes, batch_sizes(30));
        assert_eq!(sizes[..6], [3; 6]);
    }

    #[test]
    fn single_pair_four_requests() {
        let plan = plan_run(&dataset(1), &models(&["m"]), &PromptTemplate::default(), &PlanSettings::default()).unwrap();
        assert_eq!(plan.requests.len(), 4);
        let kinds: Vec<_> = plan.requests.iter().map(|r| (r.kind(), r.variant())).collect();
        assert_eq!(
            kinds,
            [
                (StimulusKind::Agreement, Variant::Stereo),
                (StimulusKind::Agreement, Variant::Anti),
                (StimulusKind::Completion, Variant::Stereo),
                (StimulusKind::Completion, Variant::Anti),
            ]
        );
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let ds = dataset(50);
        let t = PromptTemplate::default();
        let s = PlanSettings { seed: 9, ..PlanSettings::default() };
        let a = plan_run(&ds, &models(&["a", "b"]), &t, &s).unwrap();
        let b = plan_run(&ds, &models(&["a", "b"]), &t, &s).unwrap();
        assert_eq!(a.digest, b.digest);
        assert_eq!(a, b);
        let c = plan_run(&ds, &models(&["a", "b"]), &t, &PlanSettings { seed: 10, ..s }).unwrap();
        assert_ne!(a.digest, c.digest);
    }

    #[test]
    fn rejects_empty_inputs() {
        let t = PromptTemplate::default();
        assert_eq!(plan_run(&Dataset::default(), &models(&["m"]), &t, &PlanSettings::default()), Err(PlanError::EmptyDataset));
        assert_eq!(plan_run(&dataset(3), &[], &t, &PlanSettings::default()), Err(PlanError::NoModels));
    }

    #[test]
    fn sweep_default_grid_has_ten_points() {
        let plan = plan_sweep(&dataset(9), &models(&["m"]), &PromptTemplate::default(), &PlanSettings::default(), &SweepSpec::default())
            .unwrap();
        assert_eq!(plan.batches.len(), 10);
        assert!(plan.batches.iter().all(|b| b.pair_ids.len() == 9));
        let temps: Vec<_> = plan.batches[..5].iter().map(|b| (b.config.temperature, b.config.top_p)).collect();
        assert_eq!(temps, [(0.0, 1.0), (0.3, 1.0), (0.5, 1.0), (0.7, 1.0), (1.0, 1.0)]);
        let tops: Vec<_> = plan.batches[5..].iter().map(|b| (b.config.temperature, b.config.top_p)).collect();
        assert_eq!(tops, [(0.7, 0.3), (0.7, 0.5), (0.7, 0.7), (0.7, 0.85), (0.7, 1.0)]);
    }

    #[test]
    fn sweep_empty_grid_rejected() {
        let spec = SweepSpec { temperatures: Vec::new(), ..SweepSpec::default() };
        let err = plan_sweep(&dataset(3), &models(&["m"]), &PromptTemplate::default(), &PlanSettings::default(), &spec);
        assert_eq!(err, Err(PlanError::EmptyGrid("temperature")));
    }
}
