//! Sentence-pair datasets: validation, stratified sampling and label
//! validation agreement (LVA).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;

/// Columns every pair file must carry, in canonical order.
pub const PAIR_COLUMNS: [&str; 5] = ["pair_id", "bias_type", "domain", "stereo_text", "anti_text"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("duplicate pair_id values: {}", .0.join(", "))]
    DuplicatePairIds(Vec<String>),
    #[error("row {row}: unknown bias_type `{value}`")]
    UnknownBiasType { row: usize, value: String },
    #[error("pair `{pair_id}`: {field} is empty")]
    EmptyText { pair_id: String, field: &'static str },
    #[error("pair `{pair_id}`: stereotypical and anti-stereotypical texts are identical")]
    IdenticalTexts { pair_id: String },
    #[error("bias type {bias_type} has {available} pairs, {requested} requested (short by {shortfall})")]
    Capacity { bias_type: BiasType, available: usize, requested: usize, shortfall: usize },
    #[error("pair_id `{0}` appears more than once in the verdict sheets")]
    DuplicateVerdict(String),
    #[error("unknown verdict `{value}` at row {row}")]
    UnknownVerdict { row: usize, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasType {
    Gender,
    Race,
    #[serde(rename = "socioculture_religion")]
    SocioCultureReligion,
}

impl BiasType {
    pub const ALL: [BiasType; 3] = [BiasType::Gender, BiasType::Race, BiasType::SocioCultureReligion];

    pub fn as_str(self) -> &'static str {
        match self {
            BiasType::Gender => "gender",
            BiasType::Race => "race",
            BiasType::SocioCultureReligion => "socioculture_religion",
        }
    }
}

impl fmt::Display for BiasType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownBiasType(pub String);

impl FromStr for BiasType {
    type Err = UnknownBiasType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gender" => Ok(BiasType::Gender),
            "race" => Ok(BiasType::Race),
            "socioculture_religion" => Ok(BiasType::SocioCultureReligion),
            other => Err(UnknownBiasType(other.to_string())),
        }
    }
}

/// One stereotypical / anti-stereotypical sentence pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub pair_id: String,
    pub bias_type: BiasType,
    pub domain: String,
    pub stereo_text: String,
    pub anti_text: String,
}

impl SentencePair {
    /// Checks the per-pair invariants (non-empty, distinct texts).
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.stereo_text.trim().is_empty() {
            return Err(CorpusError::EmptyText { pair_id: self.pair_id.clone(), field: "stereo_text" });
        }
        if self.anti_text.trim().is_empty() {
            return Err(CorpusError::EmptyText { pair_id: self.pair_id.clone(), field: "anti_text" });
        }
        if self.stereo_text == self.anti_text {
            return Err(CorpusError::IdenticalTexts { pair_id: self.pair_id.clone() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub pairs: Vec<SentencePair>,
    pub metadata: BTreeMap<String, String>,
    pub source_path: String,
}

impl Dataset {
    /// Builds a dataset after validating every pair and pair_id uniqueness.
    /// Row order is preserved.
    pub fn new(pairs: Vec<SentencePair>, source_path: impl Into<String>) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        let mut dupes = BTreeSet::new();
        for pair in &pairs {
            pair.validate()?;
            if !seen.insert(pair.pair_id.as_str()) {
                dupes.insert(pair.pair_id.clone());
            }
        }
        if !dupes.is_empty() {
            return Err(CorpusError::DuplicatePairIds(dupes.into_iter().collect()));
        }
        Ok(Self { pairs, metadata: BTreeMap::new(), source_path: source_path.into() })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pair counts per bias type; every type is present, possibly with zero.
    pub fn type_counts(&self) -> BTreeMap<BiasType, usize> {
        let mut counts: BTreeMap<BiasType, usize> = BiasType::ALL.iter().map(|t| (*t, 0)).collect();
        for pair in &self.pairs {
            *counts.entry(pair.bias_type).or_default() += 1;
        }
        counts
    }

    pub fn get(&self, pair_id: &str) -> Option<&SentencePair> {
        self.pairs.iter().find(|p| p.pair_id == pair_id)
    }

    /// pair_id → pair lookup table.
    pub fn index(&self) -> BTreeMap<&str, &SentencePair> {
        self.pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect()
    }
}

/// Draws exactly `per_type` pairs of each bias type without replacement.
///
/// Types are visited in [`BiasType::ALL`] order from one seeded stream, and
/// the selected pairs keep their original dataset order.
pub fn stratified_sample(dataset: &Dataset, per_type: usize, seed: u64) -> Result<Dataset, CorpusError> {
    let mut rng = SeededRng::new(seed);
    let mut chosen = Vec::with_capacity(per_type * BiasType::ALL.len());
    for bias_type in BiasType::ALL {
        let members: Vec<usize> = dataset
            .pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.bias_type == bias_type)
            .map(|(i, _)| i)
            .collect();
        if members.len() < per_type {
            return Err(CorpusError::Capacity {
                bias_type,
                available: members.len(),
                requested: per_type,
                shortfall: per_type - members.len(),
            });
        }
        chosen.extend(rng.sample_indices(members.len(), per_type).into_iter().map(|k| members[k]));
    }
    chosen.sort_unstable();
    Ok(Dataset {
        pairs: chosen.into_iter().map(|i| dataset.pairs[i].clone()).collect(),
        metadata: dataset.metadata.clone(),
        source_path: dataset.source_path.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Validated,
    Flagged,
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "validated" => Ok(Verdict::Validated),
            "flagged" => Ok(Verdict::Flagged),
            other => Err(other.to_string()),
        }
    }
}

/// One annotator verdict on an author-assigned bias type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LvaVerdict {
    pub pair_id: String,
    pub assigned_type: BiasType,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryAgreement {
    pub total: usize,
    pub validated: usize,
    pub flagged: usize,
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvaReport {
    pub total_pairs: usize,
    pub validated_pairs: usize,
    pub flagged_pairs: usize,
    /// `None` when there are no verdicts at all.
    pub overall_agreement: Option<f64>,
    pub per_category: BTreeMap<BiasType, CategoryAgreement>,
}

impl LvaReport {
    pub fn per_category_agreement(&self) -> BTreeMap<BiasType, f64> {
        self.per_category.iter().map(|(t, c)| (*t, c.agreement)).collect()
    }
}

/// Label validation agreement over per-pair verdicts. Sheet boundaries are
/// irrelevant: any partition of pairs into sheets gives the same report.
pub fn compute_lva(verdicts: &[LvaVerdict]) -> Result<LvaReport, CorpusError> {
    let mut seen = BTreeSet::new();
    let mut per_category: BTreeMap<BiasType, CategoryAgreement> = BTreeMap::new();
    for v in verdicts {
        if !seen.insert(v.pair_id.as_str()) {
            return Err(CorpusError::DuplicateVerdict(v.pair_id.clone()));
        }
        let cat = per_category.entry(v.assigned_type).or_default();
        cat.total += 1;
        match v.verdict {
            Verdict::Validated => cat.validated += 1,
            Verdict::Flagged => cat.flagged += 1,
        }
    }
    for cat in per_category.values_mut() {
        cat.agreement = cat.validated as f64 / cat.total as f64;
    }
    let validated_pairs = per_category.values().map(|c| c.validated).sum();
    let flagged_pairs = per_category.values().map(|c| c.flagged).sum();
    let total_pairs = verdicts.len();
    Ok(LvaReport {
        total_pairs,
        validated_pairs,
        flagged_pairs,
        overall_agreement: (total_pairs > 0).then(|| validated_pairs as f64 / total_pairs as f64),
        per_category,
    })
}
