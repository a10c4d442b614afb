//! End-to-end batch composition: classify, retrieve, rewrite, filter.
//! Output order is input order regardless of worker count, and no record
//! is ever dropped.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, InstructionRecord};
use crate::gateway::{CompletionService, DecodingParams, SearchService};
use crate::postprocess::FilterConfig;
use crate::reformat::{realign_record, RealignOptions, RewriteMode, RewriteOutcome, TraceEntry};
use crate::taxonomy::CriteriaRegistry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub mode: RewriteMode,
    pub retrieval_enabled: bool,
    pub k_evidence: usize,
    pub params: DecodingParams,
    pub workers: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            mode: RewriteMode::Adaptive,
            retrieval_enabled: true,
            k_evidence: crate::retrieval::DEFAULT_K_EVIDENCE,
            params: DecodingParams::default(),
            workers: 4,
        }
    }
}

/// A per-record failure that degraded the record to passthrough but did
/// not abort the batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub record_id: String,
    pub stage: String,
    pub message: String,
}

/// The realigned dataset plus per-record provenance and failures.
#[derive(Debug)]
pub struct RealignRun {
    pub dataset: Dataset,
    pub outcomes: Vec<RewriteOutcome>,
    pub errors: Vec<RecordError>,
}

fn process_one(
    record: &InstructionRecord,
    registry: &CriteriaRegistry,
    completion: &dyn CompletionService,
    search: Option<&dyn SearchService>,
    filters: &FilterConfig,
    options: &PipelineOptions,
) -> (InstructionRecord, RewriteOutcome, Vec<RecordError>) {
    let mut errors = Vec::new();

    // A pre-set task that is already a registry member skips the
    // classification call entirely.
    let task_name = match record.task.as_deref().filter(|t| registry.get(t).is_some()) {
        Some(preset) => preset.to_string(),
        None => match registry.classify(&record.query, completion) {
            Ok(label) => label.name,
            Err(e) => {
                errors.push(RecordError {
                    record_id: record.id.clone(),
                    stage: "classify".to_string(),
                    message: e.to_string(),
                });
                let outcome = RewriteOutcome {
                    record_id: record.id.clone(),
                    mode: crate::reformat::OutcomeMode::Passthrough,
                    final_response: record.response.clone(),
                    realigned: false,
                    reasoning: None,
                    raw_candidates: Vec::new(),
                    filter_trace: vec![TraceEntry {
                        name: "classification_error".to_string(),
                        keep_original: true,
                        detail: "task unknown, record passed through".to_string(),
                    }],
                };
                return (record.clone(), outcome, errors);
            }
        },
    };

    let criteria = registry
        .get(&task_name)
        .expect("classify and the preset check only yield registry members");

    let realign_options = RealignOptions {
        mode: options.mode,
        retrieval_enabled: options.retrieval_enabled,
        k_evidence: options.k_evidence,
        params: options.params,
        filters,
    };
    let outcome = realign_record(record, criteria, completion, search, &realign_options);
    for entry in &outcome.filter_trace {
        if entry.name.ends_with("_error") {
            errors.push(RecordError {
                record_id: record.id.clone(),
                stage: entry.name.clone(),
                message: entry.detail.clone(),
            });
        }
    }

    let mut out_record = record.clone();
    out_record.task = Some(task_name);
    out_record.response = outcome.final_response.clone();
    (out_record, outcome, errors)
}

/// Runs the whole pipeline over a dataset with a bounded worker pool.
pub fn run_realign(
    dataset: &Dataset,
    registry: &CriteriaRegistry,
    completion: &dyn CompletionService,
    search: Option<&dyn SearchService>,
    filters: &FilterConfig,
    options: &PipelineOptions,
) -> RealignRun {
    let n = dataset.records.len();
    type Slot = Option<(InstructionRecord, RewriteOutcome, Vec<RecordError>)>;
    let slots: Mutex<Vec<Slot>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = options.workers.clamp(1, n.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let result = process_one(
                    &dataset.records[i],
                    registry,
                    completion,
                    search,
                    filters,
                    options,
                );
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });

    let mut records = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    let mut errors = Vec::new();
    for slot in slots.into_inner().unwrap() {
        let (record, outcome, mut record_errors) = slot.expect("every index was processed");
        records.push(record);
        outcomes.push(outcome);
        errors.append(&mut record_errors);
    }

    RealignRun {
        dataset: Dataset {
            name: format!("{}-realigned", dataset.name),
            records,
        },
        outcomes,
        errors,
    }
}
