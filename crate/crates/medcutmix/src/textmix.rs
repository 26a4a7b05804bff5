//! Diagnostic-sentence masks and input-level report CutMix.
//!
//! A sentence is diagnostic for a disease when it mentions a disease
//! phrase AND labels Positive, so negated mentions are never cut out
//! and transplanted.

use serde::Serialize;

use crate::corpus::Report;
use crate::error::{Error, Result};
use crate::labeler::{label_sentence, RuleSet, Status};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceMask {
    pub bits: Vec<bool>,
}

impl SentenceMask {
    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    pub fn first_set(&self) -> Option<usize> {
        self.bits.iter().position(|&b| b)
    }
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct Provenance {
    pub source_id: String,
    pub target_id: String,
    pub disease: String,
    pub source_sentence: usize,
    pub target_sentence: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedReport {
    pub sentences: Vec<String>,
    pub provenance: Provenance,
}

impl AugmentedReport {
    pub fn as_report(&self) -> Report {
        Report {
            id: format!("{}+{}", self.provenance.source_id, self.provenance.target_id),
            sentences: self.sentences.clone(),
        }
    }
}

pub fn sentence_mask(report: &Report, disease: &str, rules: &RuleSet) -> Result<SentenceMask> {
    let bits = report
        .sentences
        .iter()
        .map(|s| Ok(label_sentence(s, disease, rules)? == Status::Positive))
        .collect::<Result<Vec<bool>>>()?;
    Ok(SentenceMask { bits })
}

/// Sentences at mask-1 positions, in order.
pub fn cutout<'a>(report: &'a Report, mask: &SentenceMask) -> Result<Vec<&'a str>> {
    if mask.bits.len() != report.sentences.len() {
        return Err(Error::Shape {
            expected: format!("mask of length {}", report.sentences.len()),
            got: format!("{}", mask.bits.len()),
        });
    }
    let picked: Vec<&str> = report
        .sentences
        .iter()
        .zip(&mask.bits)
        .filter(|(_, &b)| b)
        .map(|(s, _)| s.as_str())
        .collect();
    if picked.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(picked)
}

/// The first diagnostic sentence of the source replaces the first
/// diagnostic sentence of the target in place; any further diagnostic
/// target sentences are dropped so the augmented report carries exactly
/// one finding for the disease.
pub fn paste(
    source: &Report,
    target: &Report,
    m_src: &SentenceMask,
    m_tgt: &SentenceMask,
    disease: &str,
) -> Result<AugmentedReport> {
    let src_idx = m_src.first_set().ok_or(Error::EmptySelection)?;
    let tgt_idx = m_tgt.first_set().ok_or(Error::EmptySelection)?;
    let diagnostic = &source.sentences[src_idx];

    let mut sentences = Vec::with_capacity(target.sentences.len());
    for (i, s) in target.sentences.iter().enumerate() {
        if i == tgt_idx {
            sentences.push(diagnostic.clone());
        } else if m_tgt.bits[i] {
            // additional matched target sentence: removed
        } else {
            sentences.push(s.clone());
        }
    }
    Ok(AugmentedReport {
        sentences,
        provenance: Provenance {
            source_id: source.id.clone(),
            target_id: target.id.clone(),
            disease: disease.to_string(),
            source_sentence: src_idx,
            target_sentence: tgt_idx,
        },
    })
}
