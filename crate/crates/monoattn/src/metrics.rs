//! Sequence evaluation metrics over tokenized candidates and references.

use crate::{Error, Result};

/// One decoded candidate with its reference set (never empty).
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(candidate: Vec<String>, references: Vec<Vec<String>>) -> Result<EvalPair> {
        if references.is_empty() {
            return Err(Error::InvalidArgument(
                "evaluation pair needs at least one reference".to_string(),
            ));
        }
        Ok(EvalPair {
            candidate,
            references,
        })
    }
}

/// Unit-cost Levenshtein distance between two token sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// The reference closest to the candidate by edit distance; ties keep the
/// earliest reference. Returns (distance, reference index).
fn closest_reference(pair: &EvalPair) -> (usize, usize) {
    let mut best = (usize::MAX, 0);
    for (k, r) in pair.references.iter().enumerate() {
        let d = edit_distance(&pair.candidate, r);
        if d < best.0 {
            best = (d, k);
        }
    }
    best
}

fn check_nonempty(pairs: &[EvalPair], what: &str) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} over an empty corpus is undefined",
            what
        )));
    }
    Ok(())
}

fn matches_some_reference(pair: &EvalPair) -> bool {
    pair.references.iter().any(|r| *r == pair.candidate)
}

/// Word error rate: 100 times the fraction of candidates that equal none of
/// their references.
pub fn wer(pairs: &[EvalPair]) -> Result<f64> {
    check_nonempty(pairs, "wer")?;
    let wrong = pairs.iter().filter(|p| !matches_some_reference(p)).count();
    Ok(100.0 * wrong as f64 / pairs.len() as f64)
}

/// How per-token error rates are pooled across the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerPooling {
    /// Total edits over total closest-reference length.
    Micro,
    /// Mean of per-pair rates.
    Macro,
}

/// Position error rate: edit distance to the closest reference, normalized by
/// that reference's length, pooled per `PerPooling`.
pub fn per(pairs: &[EvalPair], pooling: PerPooling) -> Result<f64> {
    check_nonempty(pairs, "per")?;
    match pooling {
        PerPooling::Micro => {
            let mut edits = 0usize;
            let mut ref_len = 0usize;
            for p in pairs {
                let (d, k) = closest_reference(p);
                edits += d;
                ref_len += p.references[k].len();
            }
            if ref_len == 0 {
                return Err(Error::InvalidArgument(
                    "per is undefined when every closest reference is empty".to_string(),
                ));
            }
            Ok(100.0 * edits as f64 / ref_len as f64)
        }
        PerPooling::Macro => {
            let mut total = 0.0;
            for p in pairs {
                let (d, k) = closest_reference(p);
                let len = p.references[k].len();
                if len == 0 {
                    return Err(Error::InvalidArgument(
                        "per is undefined for an empty closest reference".to_string(),
                    ));
                }
                total += d as f64 / len as f64;
            }
            Ok(100.0 * total / pairs.len() as f64)
        }
    }
}

/// Exact-match accuracy (percent) and mean edit distance to the closest
/// reference.
pub fn accuracy_and_lev(pairs: &[EvalPair]) -> Result<(f64, f64)> {
    check_nonempty(pairs, "accuracy")?;
    let right = pairs.iter().filter(|p| matches_some_reference(p)).count();
    let acc = 100.0 * right as f64 / pairs.len() as f64;
    let lev: f64 = pairs
        .iter()
        .map(|p| closest_reference(p).0 as f64)
        .sum::<f64>()
        / pairs.len() as f64;
    Ok((acc, lev))
}

/// Mean F-score of longest-common-subsequence overlap with the closest
/// reference, in percent. LCS length falls out of the edit distance as
/// (|c| + |r| - dist) / 2 because every edit script over unit costs pairs
/// matched tokens one-to-one.
pub fn mfs(pairs: &[EvalPair]) -> Result<f64> {
    check_nonempty(pairs, "mfs")?;
    let mut total = 0.0;
    for p in pairs {
        let (d, k) = closest_reference(p);
        let c = p.candidate.len() as f64;
        let r = p.references[k].len() as f64;
        if d == 0 {
            total += 1.0;
            continue;
        }
        if c == 0.0 || r == 0.0 {
            continue;
        }
        let lcs = (c + r - d as f64) / 2.0;
        let recall = lcs / r;
        let precision = lcs / c;
        if recall + precision > 0.0 {
            total += 2.0 * recall * precision / (recall + precision);
        }
    }
    Ok(100.0 * total / pairs.len() as f64)
}

/// Metric names accepted by `eval_metric`.
pub const METRIC_NAMES: [&str; 5] = ["wer", "per", "acc", "lev", "mfs"];

/// Computes one metric by name; `per` uses micro pooling.
pub fn eval_metric(name: &str, pairs: &[EvalPair]) -> Result<f64> {
    match name {
        "wer" => wer(pairs),
        "per" => per(pairs, PerPooling::Micro),
        "acc" => accuracy_and_lev(pairs).map(|(a, _)| a),
        "lev" => accuracy_and_lev(pairs).map(|(_, l)| l),
        "mfs" => mfs(pairs),
        _ => Err(Error::Config(format!(
            "unknown metric {:?}, expected one of {}",
            name,
            METRIC_NAMES.join("/")
        ))),
    }
}

/// Whether larger values of the named metric are better.
pub fn metric_maximizes(name: &str) -> Result<bool> {
    match name {
        "acc" | "mfs" => Ok(true),
        "wer" | "per" | "lev" => Ok(false),
        _ => Err(Error::Config(format!(
            "unknown metric {:?}, expected one of {}",
            name,
            METRIC_NAMES.join("/")
        ))),
    }
}

/// Named metric values in a fixed order, printable as a key=value block or a
/// single CSV row.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    entries: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn new() -> MetricReport {
        MetricReport::default()
    }

    pub fn push(&mut self, name: &str, value: f64) {
        self.entries.push((name.to_string(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn kv_block(&self) -> String {
        let mut out = String::new();
        for (name, value) in &self.entries {
            out.push_str(name);
            out.push('=');
            out.push_str(&value.to_string());
            out.push('\n');
        }
        out
    }

    pub fn csv(&self) -> String {
        let header: Vec<&str> = self.entries.iter().map(|(n, _)| n.as_str()).collect();
        let row: Vec<String> = self.entries.iter().map(|(_, v)| v.to_string()).collect();
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}
