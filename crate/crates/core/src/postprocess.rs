//! Filters that decide between the reformatted candidate and the original
//! response: a length floor plus task-specific rules for code, exam, and
//! planning records.

use serde::{Deserialize, Serialize};

use crate::corpus::word_count;
use crate::numeric::{extract_last_number, find_numbers, ExactDecimal};
use crate::taxonomy::TaskCriteria;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Length,
    Code,
    Exam,
    Planning,
}

/// One filter's verdict. `detail` explains the veto whenever
/// `keep_original` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub filter: FilterKind,
    pub keep_original: bool,
    pub detail: String,
}

impl FilterDecision {
    fn keep_reformatted(filter: FilterKind) -> Self {
        Self {
            filter,
            keep_original: false,
            detail: String::new(),
        }
    }

    fn keep_original(filter: FilterKind, detail: impl Into<String>) -> Self {
        Self {
            filter,
            keep_original: true,
            detail: detail.into(),
        }
    }
}

/// Tunable filter knobs; keyword lists are data so corpus owners can adjust
/// them per language mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// A rewrite shorter than `numerator/denominator` of the original (in
    /// words, strict) is rejected.
    pub length_threshold_numerator: u64,
    pub length_threshold_denominator: u64,
    pub code_keywords: Vec<String>,
    /// Distinct keyword hits needed before prose counts as code.
    pub code_keyword_min_hits: usize,
    pub planning_keywords: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            length_threshold_numerator: 1,
            length_threshold_denominator: 2,
            code_keywords: [
                "def ", "function", "#include", "import ", "return ", "public class", "=>", "};",
                "print(", "console.log",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            code_keyword_min_hits: 2,
            planning_keywords: ["plan", "planning", "itinerary", "schedule"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl FilterConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        toml::from_str(&text).map_err(|e| e.to_string())
    }
}

/// Keeps the original when the rewrite is strictly shorter than half the
/// original's word count (real-valued half, so 50 of 100 passes).
pub fn length_filter(original: &str, reformatted: &str, config: &FilterConfig) -> FilterDecision {
    let orig = word_count(original) as u64;
    let new = word_count(reformatted) as u64;
    if new * config.length_threshold_denominator < orig * config.length_threshold_numerator {
        FilterDecision::keep_original(
            FilterKind::Length,
            format!("rewrite has {new} words, below {}/{} of original {orig}",
                config.length_threshold_numerator, config.length_threshold_denominator),
        )
    } else {
        FilterDecision::keep_reformatted(FilterKind::Length)
    }
}

/// Keyword-matching code detector: a fenced block, an indented block of at
/// least two lines, or two distinct code-signal keywords.
pub fn contains_code(text: &str, config: &FilterConfig) -> bool {
    if text.contains("```") {
        return true;
    }
    let mut indented_run = 0usize;
    for line in text.lines() {
        if !line.trim().is_empty() && (line.starts_with("    ") || line.starts_with('\t')) {
            indented_run += 1;
            if indented_run >= 2 {
                return true;
            }
        } else if !line.trim().is_empty() {
            indented_run = 0;
        }
    }
    let hits = config
        .code_keywords
        .iter()
        .filter(|kw| text.contains(kw.as_str()))
        .count();
    hits >= config.code_keyword_min_hits
}

/// Rejects a rewrite of a Code-group record when exactly one side of the
/// pair contains code.
pub fn code_filter(original: &str, reformatted: &str, config: &FilterConfig) -> FilterDecision {
    let orig_has = contains_code(original, config);
    let new_has = contains_code(reformatted, config);
    if orig_has != new_has {
        let detail = if orig_has {
            "rewrite lost the code present in the original"
        } else {
            "rewrite introduced code absent from the original"
        };
        FilterDecision::keep_original(FilterKind::Code, detail)
    } else {
        FilterDecision::keep_reformatted(FilterKind::Code)
    }
}

/// The answer token carried by an exam response: the last number when one
/// exists, otherwise the last non-empty line.
enum AnswerToken {
    Number(ExactDecimal),
    Text(String),
}

fn answer_token(original: &str) -> Option<AnswerToken> {
    if let Some(number) = extract_last_number(original) {
        return Some(AnswerToken::Number(number));
    }
    original
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(|l| AnswerToken::Text(l.to_string()))
}

/// Rejects an exam rewrite that no longer carries the original's answer.
/// Numbers compare numerically ("3.0" matches "3"); text tokens by exact
/// substring.
pub fn exam_filter(original: &str, reformatted: &str) -> FilterDecision {
    let Some(token) = answer_token(original) else {
        return FilterDecision::keep_reformatted(FilterKind::Exam);
    };
    let present = match &token {
        AnswerToken::Number(number) => find_numbers(reformatted).iter().any(|n| n == number),
        AnswerToken::Text(text) => reformatted.contains(text.as_str()),
    };
    if present {
        FilterDecision::keep_reformatted(FilterKind::Exam)
    } else {
        let detail = match token {
            AnswerToken::Number(n) => format!("rewrite does not contain the answer {n}"),
            AnswerToken::Text(t) => format!("rewrite does not contain the answer '{t}'"),
        };
        FilterDecision::keep_original(FilterKind::Exam, detail)
    }
}

/// Keeps the original for planning records whose query has no
/// planning-related keyword.
pub fn planning_filter(query: &str, config: &FilterConfig) -> FilterDecision {
    let lower = query.to_lowercase();
    if config.planning_keywords.iter().any(|kw| lower.contains(kw.as_str())) {
        FilterDecision::keep_reformatted(FilterKind::Planning)
    } else {
        FilterDecision::keep_original(
            FilterKind::Planning,
            "query contains no planning-related keyword",
        )
    }
}

/// Runs every applicable filter; any single veto restores the original
/// response, so evaluation order never changes the outcome.
pub fn apply_filters(
    query: &str,
    original: &str,
    candidate: &str,
    criteria: &TaskCriteria,
    config: &FilterConfig,
) -> (String, Vec<FilterDecision>) {
    let mut trace = vec![length_filter(original, candidate, config)];
    if criteria.group == "Code" {
        trace.push(code_filter(original, candidate, config));
    }
    if criteria.name == "exam problem tutor" {
        trace.push(exam_filter(original, candidate));
    }
    if criteria.name == "planning" {
        trace.push(planning_filter(query, config));
    }
    let final_text = if trace.iter().any(|d| d.keep_original) {
        original.to_string()
    } else {
        candidate.to_string()
    };
    (final_text, trace)
}
