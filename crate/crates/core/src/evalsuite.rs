//! Math-accuracy scoring and judge harnesses for readability and
//! factuality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::gateway::{CompletionService, DecodingParams, GatewayError};
use crate::numeric::extract_last_number;

pub const MATH_PROMPT_PREFIX: &str = "Question:\n";

/// The fixed zero-shot math prompt shape.
pub fn build_math_prompt(question: &str) -> String {
    format!("Question:\n{question}\nAnswer:\nLet's think step by step.\n")
}

/// The gold answer's number: after the final "####" marker when one
/// exists, otherwise the last number anywhere.
pub fn extract_gold(answer: &str) -> Option<crate::numeric::ExactDecimal> {
    if let Some(at) = answer.rfind("####") {
        let tail = &answer[at + 4..];
        if let Some(n) = extract_last_number(tail) {
            return Some(n);
        }
    }
    extract_last_number(answer)
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("datasets disagree on ids: {0}")]
    IdMismatch(String),
    #[error("no verdict token in judge output: {raw}")]
    NoVerdict { raw: String },
    #[error("missing or out-of-range rating in judge output: {raw}")]
    BadRating { raw: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// A prediction that could not be scored, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreFailure {
    pub record_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MathScore {
    pub n_total: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    pub failures: Vec<ScoreFailure>,
}

/// Scores predictions against golds by last-number extraction and exact
/// numeric equality. Gold text is the record's gold answer when present,
/// else its response. Unparseable records count incorrect and are listed.
pub fn score_math(predictions: &Dataset, golds: &Dataset) -> Result<MathScore, EvalError> {
    if predictions.records.len() != golds.records.len() {
        return Err(EvalError::IdMismatch(format!(
            "{} predictions vs {} golds",
            predictions.records.len(),
            golds.records.len()
        )));
    }
    let mut n_correct = 0usize;
    let mut failures = Vec::new();
    for (pred, gold) in predictions.records.iter().zip(&golds.records) {
        if pred.id != gold.id {
            return Err(EvalError::IdMismatch(format!("'{}' vs '{}'", pred.id, gold.id)));
        }
        let gold_text = gold.gold_answer.as_deref().unwrap_or(&gold.response);
        let Some(gold_number) = extract_gold(gold_text) else {
            failures.push(ScoreFailure {
                record_id: pred.id.clone(),
                reason: "gold has no numeric answer".to_string(),
            });
            continue;
        };
        match extract_last_number(&pred.response) {
            Some(pred_number) if pred_number == gold_number => n_correct += 1,
            Some(_) => {}
            None => failures.push(ScoreFailure {
                record_id: pred.id.clone(),
                reason: "prediction has no numeric answer".to_string(),
            }),
        }
    }
    let n_total = predictions.records.len();
    Ok(MathScore {
        n_total,
        n_correct,
        accuracy: if n_total == 0 {
            0.0
        } else {
            n_correct as f64 / n_total as f64
        },
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Pairwise,
    Rating,
}

/// One judging outcome. Pairwise verdicts carry a winner in the caller's
/// labeling; rating verdicts carry a 1 to 10 score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub kind: VerdictKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner: Option<Winner>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
    pub order_swapped: bool,
    pub raw: String,
}

const READABILITY_SYSTEM: &str = "Please act as an impartial judge and evaluate the quality of \
the responses provided by two AI assistants to the user question displayed below. You should \
choose the assistant that follows the user's instructions and answers the user's question better. \
Your evaluation should consider the readability including clarity, format, and ease of \
understanding. Well-organized, grammatically correct response is better. Begin your evaluation by \
comparing the two responses and provide a short explanation. Avoid any position biases and ensure \
that the order in which the responses were presented does not influence your decision. Do not \
allow the length of the responses to influence your evaluation. Do not favor certain names of the \
assistants. Be as objective as possible. After providing your explanation, output your final \
verdict by strictly following this format: \"[[A]]\" if assistant A is better, \"[[B]]\" if \
assistant B is better, and \"[[C]]\" for a tie.";

const FACTUALITY_SYSTEM: &str = "Please act as an impartial judge and evaluate the factuality of \
the response provided by an AI assistant to the user question displayed below. Your evaluation \
should consider correctness. You will be given a reference answer and the assistant's answer. \
Begin your evaluation by comparing the assistant's answer with the reference answer. Identify and \
correct any mistakes. Be as objective as possible. After providing your explanation, you must \
rate the response on a scale of 1 to 10 by strictly following this format: \"[[rating]]\", for \
example: \"Rating: [[5]]\".";

pub fn readability_prompt(question: &str, answer_a: &str, answer_b: &str) -> (String, String) {
    let user = format!(
        "[User Question]\n{question}\n\n\
         [The Start of Assistant A's Answer]\n{answer_a}\n[The End of Assistant A's Answer]\n\n\
         [The Start of Assistant B's Answer]\n{answer_b}\n[The End of Assistant B's Answer]"
    );
    (READABILITY_SYSTEM.to_string(), user)
}

pub fn factuality_prompt(question: &str, ref_answer: &str, answer: &str) -> (String, String) {
    let user = format!(
        "[Question]\n{question}\n\n\
         [The Start of Reference Answer]\n{ref_answer}\n[The End of Reference Answer]\n\n\
         [The Start of Assistant's Answer]\n{answer}\n[The End of Assistant's Answer]"
    );
    (FACTUALITY_SYSTEM.to_string(), user)
}

/// The last [[A]]/[[B]]/[[C]] token in the raw judge text, if any.
fn last_verdict_token(raw: &str) -> Option<Winner> {
    let mut found = None;
    let mut found_at = 0usize;
    for (token, winner) in [("[[A]]", Winner::A), ("[[B]]", Winner::B), ("[[C]]", Winner::Tie)] {
        if let Some(at) = raw.rfind(token) {
            if found.is_none() || at > found_at {
                found = Some(winner);
                found_at = at;
            }
        }
    }
    found
}

/// Judges A against B for readability. Position is coin-flipped under the
/// seed, and the parsed winner is mapped back so it always refers to the
/// caller's labels.
pub fn judge_pairwise(
    question: &str,
    response_a: &str,
    response_b: &str,
    gateway: &dyn CompletionService,
    seed: u64,
) -> Result<JudgeVerdict, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order_swapped: bool = rng.gen();
    let (first, second) = if order_swapped {
        (response_b, response_a)
    } else {
        (response_a, response_b)
    };
    let (system, user) = readability_prompt(question, first, second);
    let candidates = gateway.complete(&system, &user, &DecodingParams::default().single())?;
    let raw = candidates.into_iter().next().unwrap_or_default();

    let Some(as_presented) = last_verdict_token(&raw) else {
        return Err(EvalError::NoVerdict { raw });
    };
    let winner = match (as_presented, order_swapped) {
        (Winner::Tie, _) => Winner::Tie,
        (w, false) => w,
        (Winner::A, true) => Winner::B,
        (Winner::B, true) => Winner::A,
    };
    Ok(JudgeVerdict {
        kind: VerdictKind::Pairwise,
        winner: Some(winner),
        rating: None,
        order_swapped,
        raw,
    })
}

/// The last "Rating: [[n]]" in the raw judge text.
fn last_rating(raw: &str) -> Option<i64> {
    let re = regex::Regex::new(r"Rating:\s*\[\[(-?\d+)\]\]").unwrap();
    re.captures_iter(raw)
        .last()
        .and_then(|c| c[1].parse::<i64>().ok())
}

/// Rates an answer for factuality against a reference, 1 to 10.
pub fn judge_factuality(
    question: &str,
    reference: &str,
    answer: &str,
    gateway: &dyn CompletionService,
) -> Result<JudgeVerdict, EvalError> {
    let (system, user) = factuality_prompt(question, reference, answer);
    let candidates = gateway.complete(&system, &user, &DecodingParams::default().single())?;
    let raw = candidates.into_iter().next().unwrap_or_default();
    match last_rating(&raw) {
        Some(n) if (1..=10).contains(&n) => Ok(JudgeVerdict {
            kind: VerdictKind::Rating,
            winner: None,
            rating: Some(n as u8),
            order_swapped: false,
            raw,
        }),
        _ => Err(EvalError::BadRating { raw }),
    }
}
