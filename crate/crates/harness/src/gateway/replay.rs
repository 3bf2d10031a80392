use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use dmba_core::request::{DecodingConfig, FinishReason, GenerationRequest, RequestId};
use serde::{Deserialize, Serialize};

use super::{Backend, CallError, Completion};
use crate::error::{Error, Result};

/// One recorded provider response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub request_id: RequestId,
    pub model_id: String,
    pub config: DecodingConfig,
    pub prompt_text: String,
    pub response_text: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureStore {
    entries: BTreeMap<RequestId, FixtureEntry>,
}

impl FixtureStore {
    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::dataset::read_text(path)?;
        let mut entries = BTreeMap::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                let entry: FixtureEntry = serde_json::from_str(trimmed).map_err(|e| {
                    let inner = Error::json(path, trimmed, &e);
                    match inner {
                        Error::Json { path, offset: o, message } => Error::Json { path, offset: offset + o, message },
                        other => other,
                    }
                })?;
                entries.insert(entry.request_id.clone(), entry);
            }
            offset += line.len();
        }
        Ok(Self { entries })
    }

    /// Writes one entry per line, ordered by request id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for e in self.entries.values() {
            serde_json::to_writer(&mut out, e).expect("fixture entries serialize");
            out.push(b'\n');
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn insert(&mut self, entry: FixtureEntry) {
        self.entries.insert(entry.request_id.clone(), entry);
    }

    pub fn get(&self, id: &RequestId) -> Option<&FixtureEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &FixtureEntry> {
        self.entries.values()
    }
}

/// Serves responses from a fixture store without network access.
pub struct ReplayBackend {
    store: FixtureStore,
}

impl ReplayBackend {
    pub fn new(store: FixtureStore) -> Self {
        Self { store }
    }
}

impl Backend for ReplayBackend {
    fn call(&self, request: &GenerationRequest) -> Result<Completion, CallError> {
        let e = self.store.get(&request.request_id).ok_or(CallError::MissingFixture)?;
        Ok(Completion { text: e.response_text.clone(), finish_reason: e.finish_reason })
    }
}

/// Forwards to an inner backend and keeps every successful response.
pub struct RecordingBackend<B> {
    inner: B,
    store: Mutex<FixtureStore>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, store: Mutex::new(FixtureStore::default()) }
    }

    pub fn into_store(self) -> FixtureStore {
        self.store.into_inner().expect("fixture store lock")
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn call(&self, request: &GenerationRequest) -> Result<Completion, CallError> {
        let c = self.inner.call(request)?;
        self.store.lock().expect("fixture store lock").insert(FixtureEntry {
            request_id: request.request_id.clone(),
            model_id: request.model_id.clone(),
            config: request.config.clone(),
            prompt_text: request.stimulus.text.clone(),
            response_text: c.text.clone(),
            finish_reason: c.finish_reason,
        });
        Ok(c)
    }
}

/// Calls `backend` once per request and collects the results as fixtures.
pub fn record_fixtures<B: Backend>(backend: B, requests: &[GenerationRequest]) -> Result<FixtureStore, CallError> {
    let rec = RecordingBackend::new(backend);
    for r in requests {
        rec.call(r)?;
    }
    Ok(rec.into_store())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::tests::request;

    struct Upper;
    impl Backend for Upper {
        fn call(&self, r: &GenerationRequest) -> Result<Completion, CallError> {
            Ok(Completion { text: r.stimulus.text.to_uppercase(), finish_reason: FinishReason::Stop })
        }
    }

    #[test]
    fn record_save_load_replay() {
        let reqs = [request("a", "one"), request("b", "two")];
        let store = record_fixtures(Upper, &reqs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.jsonl");
        store.save(&path).unwrap();
        let loaded = FixtureStore::load(&path).unwrap();
        assert_eq!(loaded, store);
        let replay = ReplayBackend::new(loaded);
        assert_eq!(replay.call(&reqs[1]).unwrap().text, "TWO");
        assert_eq!(replay.call(&request("a", "three")), Err(CallError::MissingFixture));
    }

    #[test]
    fn bad_line_reports_absolute_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.jsonl");
        fs::write(&path, "\n{oops}\n").unwrap();
        match FixtureStore::load(&path).unwrap_err() {
            Error::Json { offset, .. } => assert_eq!(offset, 2),
            other => panic!("{other}"),
        }
    }
}
