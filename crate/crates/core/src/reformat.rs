//! Rewrite-prompt assembly, gateway calls, output parsing, and outcome
//! construction under adaptive or forced rewriting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{word_count, InstructionRecord};
use crate::gateway::{CompletionService, DecodingParams, GatewayError};
use crate::postprocess::{apply_filters, FilterConfig, FilterDecision};
use crate::retrieval::EvidenceSet;
use crate::taxonomy::TaskCriteria;

/// Shared instruction clauses of the rewriter system prompt. The adaptive
/// variant opens with the match-then-copy clause; the forced variant drops
/// the match determination and mandates the rewrite.
const ADAPTIVE_CLAUSE: &str = "1. Please first determine whether the given format meets the \
requirements of the user's question, if it does not, then copy the AI assistant's response, \
if it does, then modify the response's format following the provided format.";

const FORCED_CLAUSE: &str =
    "1. Please modify the response's format following the provided format.";

const EVIDENCE_CLAUSE: &str = "\n\n5. Evidence is the useful information. You should decide for \
yourself which parts of the evidence to help rewriting the response.";

fn rewrite_system(forced: bool, with_evidence: bool) -> String {
    format!(
        "Please act as a rewriter to modify the format of the AI assistant's response to the user's question presented below.\n\
         \n\
         Please follow the instructions below:\n\
         \n\
         {first_clause}\n\
         \n\
         2. Your task is limited to altering the format while keeping the original meaning and information intact.\n\
         \n\
         3. Please make sure that the revised response can answer the user's question correctly.\n\
         \n\
         4. Please make sure that the revised response is fluent and has no additional subheadings.{evidence_clause}\n\
         \n\
         Please first write \"Reasoning: <reason>\" to provide a brief reasoning you used to modify, \
         and then write \"Revised response: <response>\" to output your final revised response without \
         any additional information, ensuring its fluency.\n\
         \n\
         Do not output any additional subheadings.",
        first_clause = if forced { FORCED_CLAUSE } else { ADAPTIVE_CLAUSE },
        evidence_clause = if with_evidence { EVIDENCE_CLAUSE } else { "" },
    )
}

fn rewrite_user(question: &str, response: &str, format: &str, evidence: Option<&str>) -> String {
    match evidence {
        None => format!(
            "Below is a user's question, the AI assistant's response, and the provided format.\n\
             \n\
             [Question start]\n{question}\n[Question end]\n\
             \n\
             [Response start]\n{response}\n[Response end]\n\
             \n\
             [Format start]\n{format}\n[Format end]"
        ),
        Some(evidence) => format!(
            "Below is a user's question, the AI assistant's response, the provided format, and the evidences.\n\
             \n\
             [Question start]\n{question}\n[Question end]\n\
             \n\
             [Response start]\n{response}\n[Response end]\n\
             \n\
             [Format start]\n{format}\n[Format end]\n\
             \n\
             [Evidence start]\n{evidence}\n[Evidence end]"
        ),
    }
}

const EXPLANATION_INSTRUCTIONS: &str = "Please act as a mathematics explanation generator to \
generate a step-by-step explanation of the answer based on the question presented below.\n\
\n\
Please follow the instructions below:\n\
\n\
1. Please simply generate a step-by-step explanation, including the reason for each step of the calculation.\n\
\n\
2. Please do not change the essence of the answer.\n\
\n\
Please write \"The explanation: <answer>\" to output your explanation without any additional information.\n\
\n\
Here is an example for your reference:";

const GSM8K_EXAMPLE: &str = r"Question: Natalia sold clips to 48 of her friends in April, and then she sold half as many clips in May. How many clips did Natalia sell altogether in April and May?

Answer: Natalia sold 48/2 = <<48/2=24>>24 clips in May.\nNatalia sold 48+24 = <<48+24=72>>72 clips altogether in April and May.\n#### 72

Explanation:

1. The problem states that Natalia sold clips to 48 friends in April. In May, she sold half as many clips as she did in April. We are asked to find out the total number of clips she sold over these two months.

2. To find out how many clips Natalia sold in May, we take half of the number of clips sold in April. Since she sold clips to 48 friends in April, we calculate half of 48: \n$$\frac{48}{2} = 24$$\nThis step involves simple division, where we divide the number of clips sold in April by 2 to find the number of clips sold in May.

3. Now that we have the number of clips sold in May, we need to add this to the number of clips sold in April to get the total number of clips sold over both months:\n$$48 + 24 = 72$$\nThis step involves addition, where we sum the clips sold in April and May to find the total sales for the two months combined.

4. Natalia sold 72 clips in total during April and May. This final total gives us the answer to the question asked.";

const MATH_EXAMPLE: &str = r"Question: Each row of a seating arrangement seats 7 or 8 people. Forty-six people are to be seated. How many rows seat exactly 8 people if every seat is occupied?

Answer: Let $x$ be the number of rows with 8 people. If we removed a person from each of these rows, then every row would contain 7 people. Therefore, $46 - x$ must be divisible by 7.\n\nThen $x \equiv 46 \equiv 4 \pmod{7}$. The first few positive integers that satisfy this congruence are 4, 11, 18, and so on. However, each row contains at least 7 people. If there were 7 or more rows, then there would be at least $7 \cdot 7 = 49$ people. We only have 46 people, so there must be at most six rows. Therefore, the number of rows with 8 people is $\boxed{4}$.\n#### 4

Explanation:

We have a seating arrangement where each row seats either 7 or 8 people. A total of 46 people need to be seated, and all seats must be filled. The question asks how many rows seat exactly 8 people.

1. We let $x$ represent the number of rows that seat exactly 8 people.

2. To simplify the problem, imagine removing one person from each row that currently seats 8 people. This would convert every 8-person row into a 7-person row. Now, all rows (both the original 7-person rows and the adjusted 8-person rows) would seat 7 people.

3. With this adjustment, the total number of people would be reduced by $x$ (since we removed one person from each 8-person row), making it $46 - x$.

4. Since all rows now hypothetically seat 7 people, the adjusted total, $46 - x$, must be divisible by 7 for it to be a possible total number of people seated in rows of 7.

5. We analyze $46 - x$ in terms of modulo 7. Specifically, we want to find values of $x$ such that $46 - x$ is a multiple of 7. This simplifies to finding $x$ such that $x \equiv 46 \pmod{7}$. Calculating $46 \mod 7$ yields 4, because when 46 is divided by 7, the remainder is 4. This tells us $x$ must be equivalent to 4 modulo 7.

6. The numbers that satisfy $x \equiv 4 \pmod{7}$ are 4, 11, 18, etc. However, we need a practical value of $x$ that fits the total people and the row seating constraint.

7. If there were 7 or more rows of 7 people each, we'd have at least 49 people (since $7 \times 7 = 49$). But we only have 46 people, so there must be fewer than 7 rows in total. The plausible values of $x$ from the list 4, 11, 18, etc., must be reconsidered within this context.

8. Since the only value from our possible $x$ values (4, 11, 18) that is less than 7 and fits the total people count is 4, we conclude that there are 4 rows of 8 people each.";

fn explanation_user(question: &str, answer: &str) -> String {
    format!(
        "Below is a question and the answer:\n\
         \n\
         [Question start]\n{question}\n[Question end]\n\
         \n\
         [Answer start]\n{answer}\n[Answer end]"
    )
}

/// A fully assembled prompt: every slot substituted, decoding parameters
/// attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewritePrompt {
    pub system: String,
    pub user: String,
    pub params: DecodingParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewriteMode {
    Adaptive,
    Forced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeMode {
    Adaptive,
    Forced,
    Passthrough,
}

/// One step in the outcome's decision log: either a post-processing filter
/// or a pipeline event such as a gateway failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub name: String,
    pub keep_original: bool,
    #[serde(default)]
    pub detail: String,
}

impl From<FilterDecision> for TraceEntry {
    fn from(decision: FilterDecision) -> Self {
        let name = match decision.filter {
            crate::postprocess::FilterKind::Length => "length",
            crate::postprocess::FilterKind::Code => "code",
            crate::postprocess::FilterKind::Exam => "exam",
            crate::postprocess::FilterKind::Planning => "planning",
        };
        Self {
            name: name.to_string(),
            keep_original: decision.keep_original,
            detail: decision.detail,
        }
    }
}

/// The reformatted response plus full provenance for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteOutcome {
    pub record_id: String,
    pub mode: OutcomeMode,
    pub final_response: String,
    pub realigned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw_candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filter_trace: Vec<TraceEntry>,
}

impl RewriteOutcome {
    fn passthrough(record: &InstructionRecord, trace: Vec<TraceEntry>) -> Self {
        Self {
            record_id: record.id.clone(),
            mode: OutcomeMode::Passthrough,
            final_response: record.response.clone(),
            realigned: false,
            reasoning: None,
            raw_candidates: Vec::new(),
            filter_trace: trace,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReformatError {
    #[error("prompt assembly left slot {0} unfilled")]
    UnfilledSlot(&'static str),
    #[error("record {record_id}: {source}")]
    Gateway {
        record_id: String,
        #[source]
        source: GatewayError,
    },
}

const SLOT_TOKENS: [&str; 5] = ["{question}", "{response}", "{format}", "{evidence}", "{answer}"];

fn check_filled(prompt: &RewritePrompt, inputs: &[&str]) -> Result<(), ReformatError> {
    for token in SLOT_TOKENS {
        let in_inputs = inputs.iter().any(|i| i.contains(token));
        if !in_inputs && (prompt.system.contains(token) || prompt.user.contains(token)) {
            return Err(ReformatError::UnfilledSlot(match token {
                "{question}" => "question",
                "{response}" => "response",
                "{format}" => "format",
                "{evidence}" => "evidence",
                _ => "answer",
            }));
        }
    }
    Ok(())
}

/// Assembles the rewrite prompt for one record. Evidence must be present
/// exactly when the task is retrieval-flagged and retrieval succeeded.
pub fn build_rewrite_prompt(
    record: &InstructionRecord,
    criteria: &TaskCriteria,
    evidence: Option<&EvidenceSet>,
    mode: RewriteMode,
) -> Result<RewritePrompt, ReformatError> {
    let evidence_text = evidence.map(|e| e.numbered());
    let prompt = RewritePrompt {
        system: rewrite_system(mode == RewriteMode::Forced, evidence_text.is_some()),
        user: rewrite_user(
            &record.query,
            &record.response,
            &criteria.format_text,
            evidence_text.as_deref(),
        ),
        params: DecodingParams::default(),
    };
    check_filled(
        &prompt,
        &[
            record.query.as_str(),
            record.response.as_str(),
            criteria.format_text.as_str(),
            evidence_text.as_deref().unwrap_or(""),
        ],
    )?;
    Ok(prompt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationKind {
    Gsm8k,
    Math,
}

/// Assembles the step-by-step explanation prompt for a math record. The
/// answer slot takes the record's gold answer when present, otherwise its
/// response.
pub fn build_explanation_prompt(
    record: &InstructionRecord,
    kind: ExplanationKind,
) -> Result<RewritePrompt, ReformatError> {
    let example = match kind {
        ExplanationKind::Gsm8k => GSM8K_EXAMPLE,
        ExplanationKind::Math => MATH_EXAMPLE,
    };
    let answer = record.gold_answer.as_deref().unwrap_or(&record.response);
    let prompt = RewritePrompt {
        system: format!("{EXPLANATION_INSTRUCTIONS}\n\n{example}"),
        user: explanation_user(&record.query, answer),
        params: DecodingParams::default(),
    };
    check_filled(&prompt, &[record.query.as_str(), answer])?;
    Ok(prompt)
}

fn find_marker(raw: &str, marker: &str) -> Option<usize> {
    let lower = raw.to_lowercase();
    lower.find(&marker.to_lowercase())
}

/// Splits one gateway candidate into reasoning and revised text. Marker
/// matching is case-insensitive and tolerates leading markdown bullets;
/// the first "Revised response:" marker wins and the remainder is kept
/// verbatim (trimmed).
pub fn parse_rewrite_output(raw: &str) -> (Option<String>, Option<String>) {
    parse_marked_output(raw, "revised response:")
}

/// Same parsing rules, keyed on the explanation marker.
pub fn parse_explanation_output(raw: &str) -> Option<String> {
    parse_marked_output(raw, "the explanation:").1
}

fn parse_marked_output(raw: &str, marker: &str) -> (Option<String>, Option<String>) {
    let Some(marker_at) = find_marker(raw, marker) else {
        return (None, None);
    };
    let revised = raw[marker_at + marker.len()..].trim().to_string();

    let reasoning = find_marker(&raw[..marker_at], "reasoning:").map(|at| {
        raw[at + "reasoning:".len()..marker_at]
            .trim()
            .trim_end_matches(['-', '*', '#'])
            .trim()
            .to_string()
    });
    (reasoning, Some(revised))
}

/// The parsed form of one candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCandidate {
    pub reasoning: Option<String>,
    pub revised: String,
}

/// Of the candidates that parsed, the one with the most words; ties go to
/// the lowest index.
pub fn pick_candidate(candidates: &[ParsedCandidate]) -> Option<&ParsedCandidate> {
    candidates
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            word_count(&a.revised)
                .cmp(&word_count(&b.revised))
                .then(ib.cmp(ia))
        })
        .map(|(_, c)| c)
}

/// Everything `realign_record` needs beyond the record itself.
pub struct RealignOptions<'a> {
    pub mode: RewriteMode,
    pub retrieval_enabled: bool,
    pub k_evidence: usize,
    pub params: DecodingParams,
    pub filters: &'a FilterConfig,
}

impl<'a> RealignOptions<'a> {
    pub fn new(mode: RewriteMode, filters: &'a FilterConfig) -> Self {
        Self {
            mode,
            retrieval_enabled: true,
            k_evidence: crate::retrieval::DEFAULT_K_EVIDENCE,
            params: DecodingParams::default(),
            filters,
        }
    }
}

/// Runs one record end to end: evidence, prompt, completion, parsing,
/// candidate choice, filters. Never drops a record; every failure path
/// yields a passthrough outcome with the reason in the trace.
pub fn realign_record(
    record: &InstructionRecord,
    criteria: &TaskCriteria,
    completion: &dyn CompletionService,
    search: Option<&dyn crate::gateway::SearchService>,
    options: &RealignOptions,
) -> RewriteOutcome {
    if !criteria.rewrite {
        return RewriteOutcome::passthrough(record, Vec::new());
    }

    let mut trace: Vec<TraceEntry> = Vec::new();
    let evidence = if criteria.retrieval && options.retrieval_enabled {
        match search {
            Some(search) => {
                match crate::retrieval::retrieve_evidence(&record.query, search, options.k_evidence)
                {
                    Ok(set) if !set.is_empty() => Some(set),
                    Ok(_) => None,
                    Err(e) => {
                        trace.push(TraceEntry {
                            name: "retrieval_error".to_string(),
                            keep_original: false,
                            detail: e.to_string(),
                        });
                        None
                    }
                }
            }
            None => None,
        }
    } else {
        None
    };

    let prompt = match build_rewrite_prompt(record, criteria, evidence.as_ref(), options.mode) {
        Ok(p) => p,
        Err(e) => {
            trace.push(TraceEntry {
                name: "assembly_error".to_string(),
                keep_original: true,
                detail: e.to_string(),
            });
            return RewriteOutcome::passthrough(record, trace);
        }
    };

    let raw_candidates = match completion.complete(&prompt.system, &prompt.user, &options.params) {
        Ok(candidates) => candidates,
        Err(e) => {
            trace.push(TraceEntry {
                name: "gateway_error".to_string(),
                keep_original: true,
                detail: e.to_string(),
            });
            return RewriteOutcome::passthrough(record, trace);
        }
    };

    let parsed: Vec<ParsedCandidate> = raw_candidates
        .iter()
        .filter_map(|raw| {
            let (reasoning, revised) = parse_rewrite_output(raw);
            revised.map(|revised| ParsedCandidate { reasoning, revised })
        })
        .collect();

    let Some(chosen) = pick_candidate(&parsed) else {
        // Neither candidate produced a revised-response marker.
        trace.push(TraceEntry {
            name: "no_candidate".to_string(),
            keep_original: true,
            detail: "no candidate contained a revised response".to_string(),
        });
        let mut outcome = RewriteOutcome::passthrough(record, trace);
        outcome.raw_candidates = raw_candidates;
        return outcome;
    };

    let (final_response, decisions) = apply_filters(
        &record.query,
        &record.response,
        &chosen.revised,
        criteria,
        options.filters,
    );
    trace.extend(decisions.into_iter().map(TraceEntry::from));

    let realigned = final_response != record.response;
    RewriteOutcome {
        record_id: record.id.clone(),
        mode: match options.mode {
            RewriteMode::Adaptive => OutcomeMode::Adaptive,
            RewriteMode::Forced => OutcomeMode::Forced,
        },
        reasoning: chosen.reasoning.clone(),
        final_response,
        realigned,
        raw_candidates,
        filter_trace: trace,
    }
}
