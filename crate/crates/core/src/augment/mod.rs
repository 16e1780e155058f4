//! LLM self-refinement of auxiliary aspect/opinion targets.
//!
//! Each instance goes through up to `max_epochs` rounds of
//! aspect → opinion → polarity queries. A round whose polarity answer
//! disagrees with the gold label is followed by a feedback query, and the
//! feedback is threaded into the next round's prompts.

mod backend;
mod confidence;
mod mock;
mod prompt;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

pub use backend::{
    parse_chat_completion, Backend, BackendError, BackendResponse, ChatRequest, HttpBackend,
    QueryKind, API_KEY_ENV,
};
pub use confidence::{
    choice_token_confidence, clip_confidence, estimate_confidence, markov_chain_confidence,
    ConfidenceMethod,
};
pub use mock::{MockBackend, MockReply};
pub use prompt::{
    extract_element, parse_polarity, parse_reported_confidence, render_choice_prompt,
    render_prompt, TemplateId, CHOICE_OPTIONS,
};

use crate::data::{AugmentedInstance, DataError, Dataset, Entry, Instance, Polarity};

/// Share of failed instances above which a run is aborted.
pub const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("{} template requires {field}", template.as_str())]
    MissingField {
        template: TemplateId,
        field: &'static str,
    },
    #[error("{method} confidence requires {field}")]
    MissingConfidenceInput {
        method: ConfidenceMethod,
        field: &'static str,
    },
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceRange(f64),
    #[error("token log-probability {0} is positive or not a number")]
    InvalidLogprob(f64),
    #[error("unknown confidence method {0:?}")]
    UnknownMethod(String),
    #[error("instance {id}: {source}")]
    Backend {
        id: String,
        #[source]
        source: BackendError,
    },
    #[error("instance {id}: backend returned an empty {kind}")]
    EmptyElement { id: String, kind: QueryKind },
    #[error("max_epochs must be at least 1")]
    InvalidMaxEpochs,
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
    #[error("cannot augment an empty dataset")]
    EmptyDataset,
    #[error(
        "{} of {} instances failed (limit {:.0}%)",
        .0.failures.len(),
        .0.total,
        MAX_FAILURE_RATE * 100.0
    )]
    TooManyFailures(Box<AugmentReport>),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Mutable state of one instance's refinement loop.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineState {
    pub instance: Instance,
    /// Last rendered prompt.
    pub prompt: String,
    pub feedback: Option<String>,
    pub predicted_polarity: Option<Polarity>,
    pub epoch: u32,
    pub max_epochs: u32,
    pub current_aspect: Option<(String, f64)>,
    pub current_opinion: Option<(String, f64)>,
}

impl RefineState {
    pub fn new(instance: Instance, max_epochs: u32) -> Result<Self, AugmentError> {
        if max_epochs == 0 {
            return Err(AugmentError::InvalidMaxEpochs);
        }
        Ok(RefineState {
            instance,
            prompt: String::new(),
            feedback: None,
            predicted_polarity: None,
            epoch: 0,
            max_epochs,
            current_aspect: None,
            current_opinion: None,
        })
    }
}

struct Session<'a> {
    backend: &'a dyn Backend,
    method: ConfidenceMethod,
    state: RefineState,
}

impl Session<'_> {
    fn request(&self, kind: QueryKind, prompt: String, logprobs: bool) -> ChatRequest {
        ChatRequest {
            instance_id: self.state.instance.id.clone(),
            kind,
            epoch: self.state.epoch,
            prompt,
            logprobs,
        }
    }

    fn ask(&mut self, template: TemplateId, kind: QueryKind) -> Result<BackendResponse, AugmentError> {
        self.state.prompt = render_prompt(template, &self.state)?;
        let logprobs = self.method == ConfidenceMethod::MarkovChain
            && matches!(kind, QueryKind::Aspect | QueryKind::Opinion);
        let req = self.request(kind, self.state.prompt.clone(), logprobs);
        self.backend
            .complete(&req)
            .map_err(|source| AugmentError::Backend {
                id: req.instance_id,
                source,
            })
    }

    fn element(&mut self, kind: QueryKind) -> Result<(String, f64), AugmentError> {
        let (template, check, label) = match kind {
            QueryKind::Aspect => (TemplateId::Aspect, QueryKind::ChoiceAspect, "Aspect"),
            _ => (TemplateId::Opinion, QueryKind::ChoiceOpinion, "Opinion"),
        };
        let resp = self.ask(template, kind)?;
        let text = extract_element(&resp.text);
        if text.is_empty() {
            return Err(AugmentError::EmptyElement {
                id: self.state.instance.id.clone(),
                kind,
            });
        }
        let follow_up = (self.method == ConfidenceMethod::ChoiceToken)
            .then(|| self.request(check, render_choice_prompt(&self.state, label, &text), true));
        let raw = estimate_confidence(
            &resp,
            self.method,
            follow_up.as_ref().map(|r| (self.backend, r)),
        )?;
        Ok((text, clip_confidence(raw)?))
    }
}

/// Runs the refinement loop for one instance.
pub fn run_refine_loop(
    instance: &Instance,
    backend: &dyn Backend,
    method: ConfidenceMethod,
    max_epochs: u32,
) -> Result<AugmentedInstance, AugmentError> {
    let mut s = Session {
        backend,
        method,
        state: RefineState::new(instance.clone(), max_epochs)?,
    };
    let mut epochs_used = 0;
    let mut consensus = false;
    for epoch in 0..max_epochs {
        s.state.epoch = epoch;
        s.state.current_aspect = Some(s.element(QueryKind::Aspect)?);
        s.state.current_opinion = Some(s.element(QueryKind::Opinion)?);
        let answer = s.ask(TemplateId::Polarity, QueryKind::Polarity)?;
        s.state.predicted_polarity = parse_polarity(&answer.text);
        epochs_used = epoch + 1;
        if s.state.predicted_polarity == Some(instance.polarity) {
            consensus = true;
            break;
        }
        if s.state.predicted_polarity.is_none() {
            log::debug!("{}: unparsable polarity answer {:?}", instance.id, answer.text);
        }
        let feedback = s.ask(TemplateId::Feedback, QueryKind::Feedback)?;
        s.state.feedback = Some(feedback.text.trim().to_string());
    }
    let (aspect, aspect_confidence) = s.state.current_aspect.take().expect("at least one epoch");
    let (opinion, opinion_confidence) = s.state.current_opinion.take().expect("at least one epoch");
    let out = AugmentedInstance {
        base: instance.clone(),
        aspect,
        aspect_confidence,
        opinion,
        opinion_confidence,
        refine_epochs_used: epochs_used,
        consensus_reached: consensus,
    };
    out.validate()?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceFailure {
    pub index: usize,
    pub id: String,
    pub error: String,
}

/// Augmented dataset plus the sidecar list of failed instances.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentReport {
    pub dataset: Dataset,
    pub failures: Vec<InstanceFailure>,
    pub total: usize,
}

impl AugmentReport {
    pub fn failure_rate(&self) -> f64 {
        self.failures.len() as f64 / self.total as f64
    }

    pub fn consensus_rate(&self) -> f64 {
        let n = self.dataset.len();
        if n == 0 {
            return 0.0;
        }
        let hits = self
            .dataset
            .iter()
            .filter_map(Entry::augmented)
            .filter(|a| a.consensus_reached)
            .count();
        hits as f64 / n as f64
    }

    /// One JSON object per failure.
    pub fn failures_jsonl(&self) -> String {
        self.failures
            .iter()
            .map(|f| serde_json::to_string(f).expect("serializable") + "\n")
            .collect()
    }
}

/// Augments every instance, up to `parallelism` at a time. Output order
/// follows input order regardless of scheduling.
pub fn augment_dataset(
    dataset: &Dataset,
    backend: &dyn Backend,
    method: ConfidenceMethod,
    max_epochs: u32,
    parallelism: usize,
) -> Result<AugmentReport, AugmentError> {
    if dataset.is_empty() {
        return Err(AugmentError::EmptyDataset);
    }
    if parallelism == 0 {
        return Err(AugmentError::InvalidParallelism);
    }
    if max_epochs == 0 {
        return Err(AugmentError::InvalidMaxEpochs);
    }
    let instances: Vec<&Instance> = dataset.instances().collect();
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(instances.len()));
    let workers = parallelism.min(instances.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(inst) = instances.get(i) else { break };
                let r = run_refine_loop(inst, backend, method, max_epochs);
                results.lock().unwrap().push((i, r));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (index, r) in results {
        match r {
            Ok(a) => entries.push(Entry::Augmented(a)),
            Err(e) => {
                log::warn!("{}: {e}", instances[index].id);
                failures.push(InstanceFailure {
                    index,
                    id: instances[index].id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let report = AugmentReport {
        dataset: Dataset::new(dataset.name.clone(), entries)?,
        failures,
        total: instances.len(),
    };
    if report.failure_rate() > MAX_FAILURE_RATE {
        return Err(AugmentError::TooManyFailures(Box::new(report)));
    }
    Ok(report)
}
