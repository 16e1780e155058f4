use std::fmt;
use std::str::FromStr;

use super::backend::{Backend, BackendResponse, ChatRequest};
use super::AugmentError;
use crate::data::MIN_CONFIDENCE;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ConfidenceMethod {
    #[default]
    Prompt,
    MarkovChain,
    ChoiceToken,
}

impl ConfidenceMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfidenceMethod::Prompt => "prompt",
            ConfidenceMethod::MarkovChain => "markov_chain",
            ConfidenceMethod::ChoiceToken => "choice_token",
        }
    }
}

impl fmt::Display for ConfidenceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfidenceMethod {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "prompt" => Ok(ConfidenceMethod::Prompt),
            "markov_chain" | "markov" => Ok(ConfidenceMethod::MarkovChain),
            "choice_token" | "choice" => Ok(ConfidenceMethod::ChoiceToken),
            _ => Err(AugmentError::UnknownMethod(s.to_string())),
        }
    }
}

fn absent(method: ConfidenceMethod, field: &'static str) -> AugmentError {
    AugmentError::MissingConfidenceInput { method, field }
}

/// Geometric mean of the token probabilities.
pub fn markov_chain_confidence(logprobs: &[(String, f64)]) -> Result<f64, AugmentError> {
    if logprobs.is_empty() {
        return Err(absent(ConfidenceMethod::MarkovChain, "token_logprobs"));
    }
    if let Some(&(_, lp)) = logprobs.iter().find(|(_, lp)| !(*lp <= 0.0)) {
        return Err(AugmentError::InvalidLogprob(lp));
    }
    let mean = logprobs.iter().map(|(_, lp)| lp).sum::<f64>() / logprobs.len() as f64;
    Ok(mean.exp().clamp(0.0, 1.0))
}

/// Probability of the first option letter in the reply.
pub fn choice_token_confidence(response: &BackendResponse) -> Result<f64, AugmentError> {
    let logprobs = response
        .token_logprobs
        .as_ref()
        .ok_or(absent(ConfidenceMethod::ChoiceToken, "token_logprobs"))?;
    let (_, lp) = logprobs
        .iter()
        .find(|(tok, _)| {
            let t = tok.trim().trim_matches(|c| c == '(' || c == ')');
            t.eq_ignore_ascii_case("a") || t.eq_ignore_ascii_case("b")
        })
        .ok_or(absent(ConfidenceMethod::ChoiceToken, "option token"))?;
    if *lp > 0.0 || lp.is_nan() {
        return Err(AugmentError::InvalidLogprob(*lp));
    }
    Ok(lp.exp())
}

/// Raw score in [0, 1] before clipping. `follow_up` is the binary
/// reasonableness query, required only for choice-token.
pub fn estimate_confidence(
    response: &BackendResponse,
    method: ConfidenceMethod,
    follow_up: Option<(&dyn Backend, &ChatRequest)>,
) -> Result<f64, AugmentError> {
    let raw = match method {
        ConfidenceMethod::Prompt => response
            .reported_confidence
            .ok_or(absent(method, "reported_confidence"))?,
        ConfidenceMethod::MarkovChain => markov_chain_confidence(
            response
                .token_logprobs
                .as_deref()
                .ok_or(absent(method, "token_logprobs"))?,
        )?,
        ConfidenceMethod::ChoiceToken => {
            let (backend, request) = follow_up.ok_or(absent(method, "backend"))?;
            let reply = backend
                .complete(request)
                .map_err(|source| AugmentError::Backend {
                    id: request.instance_id.clone(),
                    source,
                })?;
            choice_token_confidence(&reply)?
        }
    };
    if !(0.0..=1.0).contains(&raw) {
        return Err(AugmentError::ConfidenceRange(raw));
    }
    Ok(raw)
}

pub fn clip_confidence(raw: f64) -> Result<f64, AugmentError> {
    if !(0.0..=1.0).contains(&raw) {
        return Err(AugmentError::ConfidenceRange(raw));
    }
    Ok(raw.max(MIN_CONFIDENCE))
}
