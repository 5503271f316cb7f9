//! External verification of judgment-heavy criteria.
//!
//! The transport is abstract: the CLI supplies an HTTP implementation, tests
//! supply stubs. A verifier failure never aborts detection; the caller falls
//! back to the offline heuristic and records the outage on the criterion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Criterion, Mcq};

/// Request body sent to the verifier endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierRequest {
    pub stem: String,
    pub options: Vec<String>,
    pub correct_index: usize,
    pub criterion_name: String,
    pub criterion_definition: String,
}

impl VerifierRequest {
    pub fn new(item: &Mcq, criterion: Criterion) -> Self {
        VerifierRequest {
            stem: item.stem.clone(),
            options: item.options.clone(),
            correct_index: item.correct_index,
            criterion_name: criterion.name().to_string(),
            criterion_definition: criterion.definition().to_string(),
        }
    }
}

/// Response body expected from the verifier endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierResponse {
    pub flagged: bool,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifierError {
    #[error("verifier unreachable: {0}")]
    Unreachable(String),
    #[error("verifier timed out")]
    Timeout,
    #[error("malformed verifier response: {0}")]
    Malformed(String),
}

pub trait Verifier: Send + Sync {
    fn verify(&self, request: &VerifierRequest) -> Result<VerifierResponse, VerifierError>;
}

/// Asks the verifier whether `item` exhibits `criterion`.
pub fn verify_external(
    item: &Mcq,
    criterion: Criterion,
    verifier: &dyn Verifier,
) -> Result<(bool, String), VerifierError> {
    let resp = verifier.verify(&VerifierRequest::new(item, criterion))?;
    let rationale = if resp.rationale.trim().is_empty() && resp.flagged {
        format!("external verifier flagged {}", criterion.name())
    } else {
        resp.rationale
    };
    Ok((resp.flagged, rationale))
}

/// Parses a raw JSON response body.
pub fn parse_response(body: &str) -> Result<VerifierResponse, VerifierError> {
    serde_json::from_str(body).map_err(|e| VerifierError::Malformed(e.to_string()))
}
