//! Word-level edit statistics, dataset reports, and seeded mix sampling
//! for scaling experiments.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("datasets disagree on ids: {0}")]
    IdMismatch(String),
    #[error("k_pct must lie in [0, 100], got {0}")]
    BadPercentage(f64),
}

/// Word-level Levenshtein distance with unit costs, two-row DP.
pub fn edit_distance_words(a: &str, b: &str) -> usize {
    let a: Vec<&str> = a.split_whitespace().collect();
    let b: Vec<&str> = b.split_whitespace().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, wa) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, wb) in b.iter().enumerate() {
            let cost = usize::from(wa != wb);
            curr[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Distance divided by the longer side's word count; 0 when both are empty.
pub fn edit_rate(a: &str, b: &str) -> f64 {
    let longest = a.split_whitespace().count().max(b.split_whitespace().count());
    if longest == 0 {
        return 0.0;
    }
    edit_distance_words(a, b) as f64 / longest as f64
}

/// Rewritten means the rate strictly exceeds this.
pub const REWRITTEN_RATE_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditStats {
    pub distance: usize,
    pub rate: f64,
    pub rewritten: bool,
}

impl EditStats {
    pub fn between(a: &str, b: &str) -> Self {
        let distance = edit_distance_words(a, b);
        let rate = edit_rate(a, b);
        Self {
            distance,
            rate,
            rewritten: rate > REWRITTEN_RATE_THRESHOLD,
        }
    }
}

/// Corpus-level summary. Word counts stand in for tokens; they are a
/// consistent proxy, not a tokenizer match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    /// Mean whitespace word count of the realigned responses.
    pub avg_response_words: f64,
    /// Percent of records whose edit rate exceeds the rewritten threshold.
    pub realign_pct: f64,
    pub n_records: usize,
}

fn check_ids(original: &Dataset, realigned: &Dataset) -> Result<(), AnalyticsError> {
    if original.records.len() != realigned.records.len() {
        return Err(AnalyticsError::IdMismatch(format!(
            "{} original vs {} realigned records",
            original.records.len(),
            realigned.records.len()
        )));
    }
    for (o, r) in original.records.iter().zip(&realigned.records) {
        if o.id != r.id {
            return Err(AnalyticsError::IdMismatch(format!(
                "'{}' vs '{}'",
                o.id, r.id
            )));
        }
    }
    Ok(())
}

/// Pairs records positionally (ids must agree) and summarises rewrite
/// extent and realigned response length.
pub fn dataset_report(
    original: &Dataset,
    realigned: &Dataset,
) -> Result<DatasetReport, AnalyticsError> {
    check_ids(original, realigned)?;
    let n = original.records.len();
    if n == 0 {
        return Ok(DatasetReport {
            avg_response_words: 0.0,
            realign_pct: 0.0,
            n_records: 0,
        });
    }
    let mut total_words = 0usize;
    let mut rewritten = 0usize;
    for (o, r) in original.records.iter().zip(&realigned.records) {
        total_words += r.response.split_whitespace().count();
        if EditStats::between(&o.response, &r.response).rewritten {
            rewritten += 1;
        }
    }
    Ok(DatasetReport {
        avg_response_words: total_words as f64 / n as f64,
        realign_pct: 100.0 * rewritten as f64 / n as f64,
        n_records: n,
    })
}

/// Number of records that take the realigned response: k% of n, rounded
/// half-up.
pub fn mix_sample_count(n: usize, k_pct: f64) -> usize {
    ((k_pct / 100.0) * n as f64 + 0.5).floor() as usize
}

/// Builds a dataset where a seeded uniform sample of round(k%·n) records
/// carry the realigned response and the rest keep the original. Output
/// keeps the original record order.
pub fn sample_mix(
    realigned: &Dataset,
    original: &Dataset,
    k_pct: f64,
    seed: u64,
) -> Result<Dataset, AnalyticsError> {
    if !(0.0..=100.0).contains(&k_pct) || !k_pct.is_finite() {
        return Err(AnalyticsError::BadPercentage(k_pct));
    }
    check_ids(original, realigned)?;
    let n = original.records.len();
    let take = mix_sample_count(n, k_pct).min(n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    for idx in sample(&mut rng, n, take) {
        chosen[idx] = true;
    }

    let records = original
        .records
        .iter()
        .zip(&realigned.records)
        .zip(&chosen)
        .map(|((o, r), &take_realigned)| {
            if take_realigned {
                r.clone()
            } else {
                o.clone()
            }
        })
        .collect();
    Ok(Dataset {
        name: format!("{}-mix{}", original.name, k_pct),
        records,
    })
}
