//! Structured TD/SI/OS queries answered by a rule-based oracle or a remote model.

mod knowledge;
mod ops;
mod query;
mod remote;
mod rule;

use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

pub use knowledge::{compatible, knowledge_table, lookup, KnowledgeEntry};
pub use ops::{assign_cluster_labels, choose_grasp, classify_unlabeled, resolve_contradiction, task_reasoning};
pub use query::{
    round_si, to_fixed_json, CandidateInfo, ClusterInfo, GeomInfo, NeighborInfo, OutputSchema, ReasonerQuery,
    ReasonerResponse, RobotGraspRegion, Stage, StagePayload, SupportingInfo, TaskPlan, OS_HEADER, SI_DECIMALS,
    SI_HEADER, TD_HEADER,
};
pub use remote::{RemoteConfig, RemoteReasoner, TranscriptEntry, SYSTEM_PROMPT};
pub use rule::{RuleReasoner, COLLINEAR_DEG};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasonerError {
    #[error("network failure: {0}")]
    Network(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("answer does not match the output structure: {0}")]
    SchemaInvalid(String),
    #[error("no schema-valid answer after {attempts} attempts; last violation: {last_violation}")]
    RetriesExhausted { attempts: usize, last_violation: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("reasoner configuration: {0}")]
    Config(String),
}

pub trait Reasoner: Send + Sync {
    fn name(&self) -> &str;
    fn answer(&self, query: &ReasonerQuery) -> Result<ReasonerResponse, ReasonerError>;
}

impl<R: Reasoner + ?Sized> Reasoner for &R {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn answer(&self, query: &ReasonerQuery) -> Result<ReasonerResponse, ReasonerError> {
        (**self).answer(query)
    }
}

/// A query and what came back for it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Exchange {
    pub query: ReasonerQuery,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<ReasonerResponse>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Wraps a reasoner and keeps every exchange in call order.
pub struct RecordingReasoner<'a> {
    inner: &'a dyn Reasoner,
    log: Mutex<Vec<Exchange>>,
}

impl<'a> RecordingReasoner<'a> {
    pub fn new(inner: &'a dyn Reasoner) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().expect("exchange log").clone()
    }

    pub fn into_exchanges(self) -> Vec<Exchange> {
        self.log.into_inner().expect("exchange log")
    }
}

impl Reasoner for RecordingReasoner<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn answer(&self, query: &ReasonerQuery) -> Result<ReasonerResponse, ReasonerError> {
        let result = self.inner.answer(query);
        self.log.lock().expect("exchange log").push(Exchange {
            query: query.clone(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        });
        result
    }
}
