#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dmba::dataset::DatasetFormat;
use dmba::orchestrator::{BackendKind, RunMode, RunSpec, DEFAULT_CHECKPOINT_EVERY, DEFAULT_PER_MODEL_LIMIT};
use dmba_core::plan::PlanSettings;
use dmba_core::request::RetryPolicy;

pub const DEMO_MODELS: [&str; 3] = ["demo/alpha", "demo/beta", "demo/gamma"];
pub const DEMO_SEED: u64 = 2025;

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("demo")
}

pub fn demo_pairs() -> PathBuf {
    demo_dir().join("pairs.csv")
}

pub fn demo_template() -> PathBuf {
    demo_dir().join("agreement-demo.txt")
}

pub fn demo_fixtures() -> PathBuf {
    demo_dir().join("responses.jsonl")
}

pub fn demo_spec(backend: BackendKind, out_dir: &Path) -> RunSpec {
    RunSpec {
        mode: RunMode::Main,
        data: demo_pairs(),
        format: DatasetFormat::Csv,
        models: DEMO_MODELS.iter().map(|m| m.to_string()).collect(),
        template: Some(demo_template()),
        settings: PlanSettings { seed: DEMO_SEED, ..PlanSettings::default() },
        backend,
        fixtures: Some(demo_fixtures()),
        out_dir: out_dir.to_path_buf(),
        per_model_limit: DEFAULT_PER_MODEL_LIMIT,
        checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
        policy: RetryPolicy::default(),
    }
}

/// Arguments for `dmba run` over the bundled replay fixtures.
pub fn replay_args(out: &Path) -> Vec<String> {
    vec![
        "run".into(),
        "--data".into(),
        demo_pairs().display().to_string(),
        "--models".into(),
        DEMO_MODELS.join(","),
        "--template".into(),
        demo_template().display().to_string(),
        "--seed".into(),
        DEMO_SEED.to_string(),
        "--backend".into(),
        "replay".into(),
        "--fixtures".into(),
        demo_fixtures().display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ]
}
