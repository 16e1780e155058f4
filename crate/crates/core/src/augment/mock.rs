use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::backend::{Backend, BackendError, BackendResponse, ChatRequest, QueryKind};
use crate::data::DataError;

/// Canned reply for one scripted query.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
pub struct MockReply {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub logprobs: Option<Vec<(String, f64)>>,
    /// When set the call fails with a transport error carrying this message.
    #[serde(default)]
    pub error: Option<String>,
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        MockReply {
            text: text.into(),
            ..Default::default()
        }
    }

    pub fn with_logprobs(mut self, logprobs: Vec<(String, f64)>) -> Self {
        self.logprobs = Some(logprobs);
        self
    }

    pub fn failure(message: impl Into<String>) -> Self {
        MockReply {
            error: Some(message.into()),
            ..Default::default()
        }
    }
}

#[derive(Deserialize)]
struct ScriptLine {
    id: String,
    template: QueryKind,
    #[serde(default)]
    epoch: Option<u32>,
    #[serde(flatten)]
    reply: MockReply,
}

type Key = (String, QueryKind, Option<u32>);

/// Scripted backend keyed on (instance id, query kind, epoch).
///
/// Lookup falls back from the exact epoch to an epoch-less entry, then to
/// the same two keys under the id `*`.
#[derive(Debug, Default)]
pub struct MockBackend {
    script: HashMap<Key, MockReply>,
    calls: Mutex<Vec<ChatRequest>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: &str, kind: QueryKind, epoch: Option<u32>, reply: MockReply) {
        self.script.insert((id.to_string(), kind, epoch), reply);
    }

    pub fn with(mut self, id: &str, kind: QueryKind, epoch: Option<u32>, reply: MockReply) -> Self {
        self.insert(id, kind, epoch, reply);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
        let mut mock = MockBackend::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| DataError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptLine = serde_json::from_str(&line).map_err(|e| DataError::Json {
                line: i + 1,
                message: e.to_string(),
            })?;
            mock.insert(&entry.id, entry.template, entry.epoch, entry.reply);
        }
        Ok(mock)
    }

    fn lookup(&self, id: &str, kind: QueryKind, epoch: u32) -> Option<&MockReply> {
        [id, "*"].iter().find_map(|who| {
            self.script
                .get(&(who.to_string(), kind, Some(epoch)))
                .or_else(|| self.script.get(&(who.to_string(), kind, None)))
        })
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().unwrap().clone()
    }

    pub fn count(&self, id: &str, kind: QueryKind) -> usize {
        self.calls
            .lock()
            .unwrap()
            .iter()
            .filter(|c| c.instance_id == id && c.kind == kind)
            .count()
    }

    pub fn clear_calls(&self) {
        self.calls.lock().unwrap().clear();
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, BackendError> {
        self.calls.lock().unwrap().push(request.clone());
        let reply = self
            .lookup(&request.instance_id, request.kind, request.epoch)
            .ok_or_else(|| BackendError::ScriptMiss {
                id: request.instance_id.clone(),
                kind: request.kind,
                epoch: request.epoch,
            })?;
        if let Some(msg) = &reply.error {
            return Err(BackendError::Transport(msg.clone()));
        }
        Ok(BackendResponse::new(reply.text.clone(), reply.logprobs.clone()))
    }
}
