//! Opcode-frequency feature vectors.
//!
//! Dimension `i` of a full vector is `count(opcode_i) / total`, indexed by
//! vocabulary position, so every extracted vector sums to one regardless of
//! file size. Models prune dimensions never seen during training through a
//! [`VocabularyProjection`]; the mass that falls on pruned dimensions at
//! inference time is reported as `oov_mass` and not fed to the model.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disasm::{Disassembly, OpcodeEvent};
use crate::opcodes::VOCABULARY_SIZE;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("disassembly contains no opcode events")]
    EmptyDisassembly,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed csv row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub freqs: Vec<f64>,
    pub total_opcodes: u64,
    pub oov_mass: f64,
    /// Set once the vector has been reduced by a projection.
    #[serde(default)]
    pub projected: bool,
}

impl FeatureVector {
    pub fn from_counts(counts: &[u64; VOCABULARY_SIZE]) -> Result<Self, FeatureError> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(FeatureError::EmptyDisassembly);
        }
        let t = total as f64;
        Ok(FeatureVector {
            freqs: counts.iter().map(|&c| c as f64 / t).collect(),
            total_opcodes: total,
            oov_mass: 0.0,
            projected: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.freqs.len()
    }

    /// Indices with non-zero frequency.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.freqs.iter().enumerate().filter(|(_, &f)| f > 0.0).map(|(i, _)| i)
    }
}

pub fn count_events<'a>(events: impl IntoIterator<Item = &'a OpcodeEvent>) -> [u64; VOCABULARY_SIZE] {
    let mut counts = [0u64; VOCABULARY_SIZE];
    for e in events {
        counts[e.index as usize] += 1;
    }
    counts
}

/// Frequency vector of a single disassembly.
pub fn extract(d: &Disassembly) -> Result<FeatureVector, FeatureError> {
    FeatureVector::from_counts(&count_events(&d.events))
}

/// Frequency vector over the concatenated events of several segments.
pub fn extract_segments(segments: &[Disassembly]) -> Result<FeatureVector, FeatureError> {
    FeatureVector::from_counts(&count_events(segments.iter().flat_map(|d| d.events.iter())))
}

pub fn extract_events(events: &[OpcodeEvent]) -> Result<FeatureVector, FeatureError> {
    FeatureVector::from_counts(&count_events(events))
}

/// Vocabulary dimensions retained at training time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyProjection {
    pub kept_indices: Vec<usize>,
}

impl VocabularyProjection {
    pub fn identity() -> Self {
        VocabularyProjection { kept_indices: (0..VOCABULARY_SIZE).collect() }
    }

    pub fn dim(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn is_valid(&self) -> bool {
        !self.kept_indices.is_empty()
            && self.kept_indices.windows(2).all(|w| w[0] < w[1])
            && self.kept_indices.iter().all(|&i| i < VOCABULARY_SIZE)
    }
}

/// Keep every dimension that is non-zero in at least one corpus vector.
pub fn fit_projection<'a>(
    corpus: impl IntoIterator<Item = &'a FeatureVector>,
) -> Result<VocabularyProjection, FeatureError> {
    let mut seen = [false; VOCABULARY_SIZE];
    let mut any = false;
    for v in corpus {
        check_full(v)?;
        any = true;
        for i in v.support() {
            seen[i] = true;
        }
    }
    if !any {
        return Err(FeatureError::EmptyCorpus);
    }
    let kept_indices: Vec<usize> = (0..VOCABULARY_SIZE).filter(|&i| seen[i]).collect();
    if kept_indices.is_empty() {
        // Only reachable with all-zero vectors, which extraction never produces.
        return Err(FeatureError::EmptyCorpus);
    }
    Ok(VocabularyProjection { kept_indices })
}

fn check_full(v: &FeatureVector) -> Result<(), FeatureError> {
    if v.projected || v.freqs.len() != VOCABULARY_SIZE {
        return Err(FeatureError::DimensionMismatch { expected: VOCABULARY_SIZE, found: v.freqs.len() });
    }
    Ok(())
}

/// Reduce a full vector to the kept dimensions without renormalizing.
pub fn project(v: &FeatureVector, p: &VocabularyProjection) -> Result<FeatureVector, FeatureError> {
    check_full(v)?;
    let mut keep = [false; VOCABULARY_SIZE];
    for &i in &p.kept_indices {
        keep[i] = true;
    }
    let oov_mass: f64 = v.freqs.iter().zip(keep).filter(|(_, k)| !k).map(|(f, _)| f).sum();
    Ok(FeatureVector {
        freqs: p.kept_indices.iter().map(|&i| v.freqs[i]).collect(),
        total_opcodes: v.total_opcodes,
        oov_mass,
        projected: true,
    })
}

/// Round to 12 significant digits and print the shortest decimal that reads
/// back to the rounded value.
fn format_sig12(x: f64) -> String {
    let rounded: f64 = format!("{x:.11e}").parse().expect("LowerExp output parses");
    format!("{rounded}")
}

pub fn csv_header() -> Vec<String> {
    let mut h = Vec::with_capacity(VOCABULARY_SIZE + 2);
    h.push("label".to_string());
    h.extend((0..VOCABULARY_SIZE).map(|i| format!("f_{i}")));
    h.push("total".to_string());
    h
}

/// Write `label,f_0..f_67,total` rows for full-dimensional vectors.
pub fn export_csv<W: Write>(rows: &[(String, FeatureVector)], out: W) -> Result<(), FeatureError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header())?;
    for (label, v) in rows {
        check_full(v)?;
        let mut record = Vec::with_capacity(VOCABULARY_SIZE + 2);
        record.push(label.clone());
        record.extend(v.freqs.iter().map(|&f| format_sig12(f)));
        record.push(v.total_opcodes.to_string());
        w.write_record(&record)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<(String, FeatureVector)>, FeatureError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() != VOCABULARY_SIZE + 2 {
        return Err(FeatureError::BadRow { row: 0, reason: format!("{} header columns", header.len()) });
    }
    let mut rows = Vec::new();
    for (n, record) in r.records().enumerate() {
        let record = record?;
        let bad = |reason: String| FeatureError::BadRow { row: n + 1, reason };
        if record.len() != VOCABULARY_SIZE + 2 {
            return Err(bad(format!("{} columns", record.len())));
        }
        let freqs = (1..=VOCABULARY_SIZE)
            .map(|i| record[i].parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let total = record[VOCABULARY_SIZE + 1].parse::<u64>().map_err(|e| bad(e.to_string()))?;
        rows.push((
            record[0].to_string(),
            FeatureVector { freqs, total_opcodes: total, oov_mass: 0.0, projected: false },
        ));
    }
    Ok(rows)
}
