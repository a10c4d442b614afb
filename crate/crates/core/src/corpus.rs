//! Loading, validating, and persisting line-delimited instruction datasets.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One (query, response) pair with its bookkeeping fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    pub query: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl InstructionRecord {
    pub fn new(id: impl Into<String>, query: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            query: query.into(),
            response: response.into(),
            gold_answer: None,
            task: None,
            meta: BTreeMap::new(),
        }
    }
}

/// An ordered collection of records. Immutable after load; order is stable
/// across save/load round-trips.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub records: Vec<InstructionRecord>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, records: Vec<InstructionRecord>) -> Self {
        Self { name: name.into(), records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&InstructionRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

/// A single malformed input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    /// 1-based line number in the source file.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("{} malformed line(s): {}", .0.len(), format_line_errors(.0))]
    Malformed(Vec<LineError>),
}

fn format_line_errors(errors: &[LineError]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

/// Intermediate schema for one input line. `id` is optional on input; a
/// synthetic `line-<n>` id is assigned when absent.
#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    query: String,
    #[serde(default)]
    response: Option<String>,
    #[serde(default)]
    gold_answer: Option<String>,
    #[serde(default)]
    task: Option<String>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// Parses a line-delimited JSON file, collecting per-line errors instead of
/// failing fast. Blank lines are skipped. Every non-blank line lands either
/// in the dataset or in the error list.
pub fn load_dataset_lenient(path: &Path) -> Result<(Dataset, Vec<LineError>), CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawRecord>(trimmed) {
            Ok(raw) => {
                let id = raw.id.unwrap_or_else(|| format!("line-{line_no}"));
                if !seen.insert(id.clone()) {
                    errors.push(LineError {
                        line: line_no,
                        message: format!("duplicate id {id}"),
                    });
                    continue;
                }
                if raw.query.is_empty() {
                    errors.push(LineError {
                        line: line_no,
                        message: "empty query".to_string(),
                    });
                    continue;
                }
                records.push(InstructionRecord {
                    id,
                    query: raw.query,
                    response: raw.response.unwrap_or_default(),
                    gold_answer: raw.gold_answer,
                    task: raw.task,
                    meta: raw.meta,
                });
            }
            Err(e) => errors.push(LineError {
                line: line_no,
                message: e.to_string(),
            }),
        }
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Ok((Dataset::new(name, records), errors))
}

/// Strict variant of [`load_dataset_lenient`]: any malformed line fails the
/// load with the full per-line error report.
pub fn load_dataset(path: &Path) -> Result<Dataset, CorpusError> {
    let (dataset, errors) = load_dataset_lenient(path)?;
    if let Some(dup) = errors.iter().find_map(|e| {
        e.message
            .strip_prefix("duplicate id ")
            .map(|id| id.to_string())
    }) {
        return Err(CorpusError::DuplicateId(dup));
    }
    if !errors.is_empty() {
        return Err(CorpusError::Malformed(errors));
    }
    Ok(dataset)
}

/// Writes one JSON object per line, LF line endings, preserving record order.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    for record in &dataset.records {
        let line = serde_json::to_string(record).expect("record serialization cannot fail");
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
    }
    writer.flush().map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Counts maximal whitespace-separated segments. Length statistics use this
/// as a consistent token proxy throughout.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_well_formed_lines_in_order() {
        let f = write_temp(
            r#"{"id":"a","query":"q1","response":"r1"}
{"id":"b","query":"q2","response":"r2"}
"#,
        );
        let d = load_dataset(f.path()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.records[0].id, "a");
        assert_eq!(d.records[1].id, "b");
    }

    #[test]
    fn missing_query_cites_line_number() {
        let f = write_temp(
            r#"{"id":"a","query":"q1","response":"r1"}
{"id":"b","response":"r2"}
"#,
        );
        let err = load_dataset(f.path()).unwrap_err();
        match err {
            CorpusError::Malformed(errors) => {
                assert_eq!(errors.len(), 1);
                assert_eq!(errors[0].line, 2);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let f = write_temp(
            r#"{"id":"a1","query":"q1","response":"r1"}
{"id":"a1","query":"q2","response":"r2"}
"#,
        );
        let err = load_dataset(f.path()).unwrap_err();
        assert_eq!(err.to_string(), "duplicate id a1");
    }

    #[test]
    fn blank_lines_are_skipped() {
        let f = write_temp("{\"id\":\"a\",\"query\":\"q\",\"response\":\"r\"}\n\n\n");
        let (d, errors) = load_dataset_lenient(f.path()).unwrap();
        assert_eq!(d.len(), 1);
        assert!(errors.is_empty());
    }

    #[test]
    fn missing_id_synthesized_from_line_number() {
        let f = write_temp("\n{\"query\":\"q\",\"response\":\"r\"}\n");
        let (d, _) = load_dataset_lenient(f.path()).unwrap();
        assert_eq!(d.records[0].id, "line-2");
    }

    #[test]
    fn crlf_accepted_on_read() {
        let f = write_temp("{\"id\":\"a\",\"query\":\"q\",\"response\":\"r\"}\r\n");
        let d = load_dataset(f.path()).unwrap();
        assert_eq!(d.records[0].response, "r");
    }

    #[test]
    fn round_trip_preserves_fields_and_order() {
        let mut rec = InstructionRecord::new("m", "q", "line one\nline two");
        rec.gold_answer = Some("#### 7".into());
        rec.task = Some("math puzzles".into());
        rec.meta.insert("source".into(), "unit".into());
        let d = Dataset::new(
            "t",
            vec![
                rec,
                InstructionRecord::new("a", "first?", "one"),
                InstructionRecord::new("b", "second?", "two"),
            ],
        );
        let f = tempfile::NamedTempFile::new().unwrap();
        save_dataset(&d, f.path()).unwrap();
        let loaded = load_dataset(f.path()).unwrap();
        assert_eq!(loaded.records, d.records);
    }

    #[test]
    fn empty_dataset_saves_to_empty_file() {
        let d = Dataset::new("empty", vec![]);
        let f = tempfile::NamedTempFile::new().unwrap();
        save_dataset(&d, f.path()).unwrap();
        assert_eq!(std::fs::read_to_string(f.path()).unwrap(), "");
    }

    #[test]
    fn word_count_examples() {
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("a b  c"), 3);
        assert_eq!(word_count("Total cost = $280"), 4);
    }

    #[test]
    fn word_count_ignores_surrounding_and_repeated_whitespace() {
        assert_eq!(word_count("  a\t b \n"), word_count("a b"));
    }

    #[test]
    fn lenient_load_accounts_for_every_line() {
        let f = write_temp(
            "{\"id\":\"a\",\"query\":\"q\",\"response\":\"r\"}\nnot json\n\n{\"id\":\"b\",\"query\":\"q\",\"response\":\"r\"}\n",
        );
        let (d, errors) = load_dataset_lenient(f.path()).unwrap();
        // 3 non-blank lines: 2 records + 1 error.
        assert_eq!(d.len() + errors.len(), 3);
    }
}
