//! The bundled replay fixtures are the synthetic backend's answers to the
//! demo plan. Set `DMBA_REGENERATE_FIXTURES=1` to rewrite them.

mod common;

use dmba::gateway::{record_fixtures, FixtureStore, SyntheticBackend};
use dmba::orchestrator::{prepare, BackendKind};
use dmba_core::GenerationRequest;

#[test]
fn bundled_fixtures_are_current() {
    let dir = tempfile::tempdir().unwrap();
    let prepared = prepare(&common::demo_spec(BackendKind::Synthetic, dir.path())).unwrap();
    let requests: Vec<GenerationRequest> = prepared.plan.requests.iter().map(|r| r.request.clone()).collect();
    let store = record_fixtures(SyntheticBackend::new(&prepared.dataset), &requests).unwrap();
    // Pairs whose variants share their first six tokens yield one
    // completion request for both variants.
    let unique: std::collections::BTreeSet<_> = requests.iter().map(|r| &r.request_id).collect();
    assert_eq!(requests.len(), 3 * 30 * 4);
    assert_eq!(store.len(), unique.len());

    let path = common::demo_fixtures();
    if std::env::var_os("DMBA_REGENERATE_FIXTURES").is_some() {
        store.save(&path).unwrap();
    }
    let bundled = FixtureStore::load(&path).expect("run with DMBA_REGENERATE_FIXTURES=1 to create the fixtures");
    assert_eq!(bundled, store, "fixtures are stale; rerun with DMBA_REGENERATE_FIXTURES=1");

    let configs: std::collections::BTreeSet<String> = bundled.entries().map(|e| e.config.config_id()).collect();
    assert_eq!(configs.len(), 3);
}
