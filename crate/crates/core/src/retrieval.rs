//! Parsing and filtering of web-search evidence for knowledge-intensive
//! tasks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::word_count;
use crate::gateway::{GatewayError, SearchService};

pub const DEFAULT_K_EVIDENCE: usize = 5;
/// Snippets shorter than this are dropped as navigation fragments.
pub const DEFAULT_MIN_SNIPPET_WORDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    AnswerBox,
    KnowledgeGraph,
    Organic,
}

/// One retrieved snippet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub text: String,
    pub source_kind: SourceKind,
    /// 1-based rank; answer boxes outrank knowledge graphs outrank organic
    /// results.
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

/// The filtered top-k evidence for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub query: String,
    pub items: Vec<Evidence>,
    pub k: usize,
}

impl EvidenceSet {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items joined as a numbered list, the shape the rewrite prompt's
    /// evidence slot expects.
    pub fn numbered(&self) -> String {
        self.items
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{}. {}", i + 1, e.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("unparseable search payload for query '{query}': {message}")]
    BadPayload { query: String, message: String },
    #[error("search failed for query '{query}': {source}")]
    Search {
        query: String,
        #[source]
        source: GatewayError,
    },
}

fn push_snippet(
    out: &mut Vec<Evidence>,
    text: Option<&str>,
    source_kind: SourceKind,
    url: Option<&str>,
) {
    let Some(text) = text else { return };
    let text = text.trim();
    if text.is_empty() {
        return;
    }
    if out.iter().any(|e| e.text == text) {
        return;
    }
    out.push(Evidence {
        text: text.to_string(),
        source_kind,
        rank: out.len() + 1,
        url: url.map(|u| u.to_string()),
    });
}

/// Extracts ranked snippets from a provider payload. Answer-box snippets
/// come first, then the knowledge-graph description, then organic results in
/// provider order; exact duplicate texts are dropped and ranks re-packed.
pub fn parse_search_response(
    raw: &serde_json::Value,
) -> Result<Vec<Evidence>, RetrievalError> {
    if !raw.is_object() {
        return Err(RetrievalError::BadPayload {
            query: String::new(),
            message: "payload is not a JSON object".to_string(),
        });
    }
    let mut out = Vec::new();

    if let Some(answer_box) = raw.get("answerBox") {
        let text = answer_box
            .get("answer")
            .or_else(|| answer_box.get("snippet"))
            .and_then(|v| v.as_str());
        push_snippet(&mut out, text, SourceKind::AnswerBox, None);
    }
    if let Some(graph) = raw.get("knowledgeGraph") {
        let text = graph.get("description").and_then(|v| v.as_str());
        push_snippet(&mut out, text, SourceKind::KnowledgeGraph, None);
    }
    if let Some(organic) = raw.get("organic").and_then(|v| v.as_array()) {
        for result in organic {
            push_snippet(
                &mut out,
                result.get("snippet").and_then(|v| v.as_str()),
                SourceKind::Organic,
                result.get("link").and_then(|v| v.as_str()),
            );
        }
    }
    Ok(out)
}

/// Keeps the first `k` snippets after dropping short fragments and exact
/// duplicates.
pub fn select_evidence(snippets: Vec<Evidence>, query: &str, k: usize) -> EvidenceSet {
    select_evidence_with_min(snippets, query, k, DEFAULT_MIN_SNIPPET_WORDS)
}

pub fn select_evidence_with_min(
    snippets: Vec<Evidence>,
    query: &str,
    k: usize,
    min_words: usize,
) -> EvidenceSet {
    let mut items: Vec<Evidence> = Vec::new();
    for snippet in snippets {
        if word_count(&snippet.text) < min_words {
            continue;
        }
        if items.iter().any(|e| e.text == snippet.text) {
            continue;
        }
        items.push(snippet);
        if items.len() == k {
            break;
        }
    }
    for (i, item) in items.iter_mut().enumerate() {
        item.rank = i + 1;
    }
    EvidenceSet {
        query: query.to_string(),
        items,
        k,
    }
}

/// Search, parse, select. Only ever called for retrieval-flagged tasks;
/// the pipeline enforces that.
pub fn retrieve_evidence(
    query: &str,
    gateway: &dyn SearchService,
    k: usize,
) -> Result<EvidenceSet, RetrievalError> {
    let payload = gateway.search(query).map_err(|source| RetrievalError::Search {
        query: query.to_string(),
        source,
    })?;
    let snippets = parse_search_response(&payload).map_err(|e| match e {
        RetrievalError::BadPayload { message, .. } => RetrievalError::BadPayload {
            query: query.to_string(),
            message,
        },
        other => other,
    })?;
    Ok(select_evidence(snippets, query, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn organic(snippets: &[&str]) -> serde_json::Value {
        json!(snippets
            .iter()
            .map(|s| json!({"title": "t", "snippet": s, "link": "https://example.com"}))
            .collect::<Vec<_>>())
    }

    #[test]
    fn answer_box_ranks_first() {
        let payload = json!({
            "answerBox": {"snippet": "the boxed answer text right here"},
            "organic": organic(&[
                "first organic snippet with enough words",
                "second organic snippet with enough words",
                "third organic snippet with enough words",
            ]),
        });
        let parsed = parse_search_response(&payload).unwrap();
        assert_eq!(parsed.len(), 4);
        assert_eq!(parsed[0].source_kind, SourceKind::AnswerBox);
        assert_eq!(parsed[0].rank, 1);
        assert_eq!(parsed[3].rank, 4);
    }

    #[test]
    fn knowledge_graph_sits_between_answer_box_and_organic() {
        let payload = json!({
            "answerBox": {"answer": "boxed answer with plenty of words"},
            "knowledgeGraph": {"description": "graph description with plenty of words"},
            "organic": organic(&["an organic snippet with enough words"]),
        });
        let parsed = parse_search_response(&payload).unwrap();
        let kinds: Vec<SourceKind> = parsed.iter().map(|e| e.source_kind).collect();
        assert_eq!(
            kinds,
            vec![SourceKind::AnswerBox, SourceKind::KnowledgeGraph, SourceKind::Organic]
        );
    }

    #[test]
    fn empty_payload_gives_empty_list() {
        assert!(parse_search_response(&json!({})).unwrap().is_empty());
    }

    #[test]
    fn non_object_payload_is_an_error() {
        assert!(parse_search_response(&json!("nope")).is_err());
    }

    #[test]
    fn duplicate_snippets_removed_and_ranks_repacked() {
        let payload = json!({
            "organic": organic(&[
                "a repeated organic snippet with words",
                "a repeated organic snippet with words",
                "a different organic snippet with words",
            ]),
        });
        let parsed = parse_search_response(&payload).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[1].rank, 2);
    }

    #[test]
    fn select_caps_at_k() {
        let snippets: Vec<Evidence> = (0..8)
            .map(|i| Evidence {
                text: format!("snippet number {i} with enough words in it"),
                source_kind: SourceKind::Organic,
                rank: i + 1,
                url: None,
            })
            .collect();
        let set = select_evidence(snippets, "q", 5);
        assert_eq!(set.items.len(), 5);
        assert_eq!(set.k, 5);
    }

    #[test]
    fn select_returns_all_when_fewer_than_k() {
        let snippets: Vec<Evidence> = (0..2)
            .map(|i| Evidence {
                text: format!("snippet number {i} with enough words in it"),
                source_kind: SourceKind::Organic,
                rank: i + 1,
                url: None,
            })
            .collect();
        assert_eq!(select_evidence(snippets, "q", 5).items.len(), 2);
    }

    #[test]
    fn short_fragment_filtered_out() {
        let snippets = vec![
            Evidence {
                text: "Home page".to_string(),
                source_kind: SourceKind::Organic,
                rank: 1,
                url: None,
            },
            Evidence {
                text: "a real snippet with plenty of words".to_string(),
                source_kind: SourceKind::Organic,
                rank: 2,
                url: None,
            },
        ];
        let set = select_evidence(snippets, "q", 5);
        assert_eq!(set.items.len(), 1);
        assert_eq!(set.items[0].rank, 1);
    }

    #[test]
    fn retrieve_pipes_search_parse_select() {
        struct Fixture;
        impl SearchService for Fixture {
            fn search(&self, _query: &str) -> Result<serde_json::Value, GatewayError> {
                Ok(json!({
                    "organic": [
                        {"snippet": "Robot vacuums run fully autonomously and automatically. They self-navigate on any flooring type, from hardwoods to carpets."},
                    ]
                }))
            }
        }
        let set = retrieve_evidence("robotic vacuum", &Fixture, 5).unwrap();
        assert!(set.items[0].text.contains("self-navigate on any flooring type"));
    }

    #[test]
    fn search_failure_carries_query() {
        struct Failing;
        impl SearchService for Failing {
            fn search(&self, _query: &str) -> Result<serde_json::Value, GatewayError> {
                Err(GatewayError::Exhausted {
                    digest: "d".to_string(),
                    attempts: 3,
                    message: "HTTP 500".to_string(),
                })
            }
        }
        let err = retrieve_evidence("robotic vacuum", &Failing, 5).unwrap_err();
        assert!(err.to_string().contains("robotic vacuum"));
    }

    #[test]
    fn numbered_list_shape() {
        let set = EvidenceSet {
            query: "q".to_string(),
            items: vec![
                Evidence {
                    text: "first".to_string(),
                    source_kind: SourceKind::Organic,
                    rank: 1,
                    url: None,
                },
                Evidence {
                    text: "second".to_string(),
                    source_kind: SourceKind::Organic,
                    rank: 2,
                    url: None,
                },
            ],
            k: 5,
        };
        assert_eq!(set.numbered(), "1. first\n2. second");
    }
}
