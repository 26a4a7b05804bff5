//! Rule-based per-sentence disease labeler.
//!
//! A deliberately simple stand-in for heavyweight clinical labelers:
//! lowercase word-boundary phrase matching with sentence-prefix cue
//! scoping. Negation beats uncertainty when both precede the match.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Report;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Positive,
    Negative,
    Uncertain,
    Absent,
}

/// Per-disease status vector, indexed like the configured disease list.
pub type LabelVector = Vec<Status>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    /// disease id -> lowercase phrases that count as a mention
    pub phrases: BTreeMap<String, Vec<String>>,
    pub negation_cues: Vec<String>,
    pub uncertainty_cues: Vec<String>,
}

impl RuleSet {
    /// Default rules for a disease list: the disease name is its own phrase.
    pub fn for_diseases(diseases: &[String]) -> Self {
        RuleSet {
            phrases: diseases
                .iter()
                .map(|d| (d.clone(), vec![d.to_lowercase()]))
                .collect(),
            negation_cues: vec![
                "no".into(),
                "without".into(),
                "no evidence of".into(),
                "free of".into(),
                "negative for".into(),
            ],
            uncertainty_cues: vec![
                "possible".into(),
                "may".into(),
                "cannot exclude".into(),
                "suspected".into(),
            ],
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let rules: RuleSet =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("rule file: {e}")))?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phrases.values().any(|v| v.is_empty()) {
            return Err(Error::Config("empty phrase list for a disease".into()));
        }
        if self
            .negation_cues
            .iter()
            .any(|c| self.uncertainty_cues.contains(c))
        {
            return Err(Error::Config("negation and uncertainty cues must be disjoint".into()));
        }
        Ok(())
    }

    pub fn diseases(&self) -> impl Iterator<Item = &str> {
        self.phrases.keys().map(|s| s.as_str())
    }
}

fn tokenize_lower(sentence: &str) -> Vec<String> {
    sentence
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Token index of the first contiguous match of `phrase`, if any.
fn find_phrase(tokens: &[String], phrase: &str) -> Option<usize> {
    let ptoks: Vec<&str> = phrase.split_whitespace().collect();
    if ptoks.is_empty() || tokens.len() < ptoks.len() {
        return None;
    }
    (0..=tokens.len() - ptoks.len())
        .find(|&i| ptoks.iter().enumerate().all(|(j, p)| tokens[i + j] == *p))
}

pub fn label_sentence(sentence: &str, disease: &str, rules: &RuleSet) -> Result<Status> {
    let phrases = rules
        .phrases
        .get(disease)
        .ok_or_else(|| Error::UnknownDisease(disease.to_string()))?;
    let tokens = tokenize_lower(sentence);
    let hit = phrases
        .iter()
        .filter_map(|p| find_phrase(&tokens, p))
        .min();
    let hit = match hit {
        Some(h) => h,
        None => return Ok(Status::Absent),
    };
    // Cue scope is the whole sentence prefix before the match.
    let prefix = &tokens[..hit];
    let cue_in_prefix = |cues: &[String]| {
        cues.iter()
            .any(|c| find_phrase(prefix, c).is_some())
    };
    if cue_in_prefix(&rules.negation_cues) {
        Ok(Status::Negative)
    } else if cue_in_prefix(&rules.uncertainty_cues) {
        Ok(Status::Uncertain)
    } else {
        Ok(Status::Positive)
    }
}

/// Aggregate with precedence Positive > Uncertain > Negative > Absent.
pub fn label_report(report: &Report, diseases: &[String], rules: &RuleSet) -> Result<LabelVector> {
    let mut out = Vec::with_capacity(diseases.len());
    for disease in diseases {
        let mut agg = Status::Absent;
        for sentence in &report.sentences {
            let s = label_sentence(sentence, disease, rules)?;
            agg = match (agg, s) {
                (_, Status::Positive) | (Status::Positive, _) => Status::Positive,
                (_, Status::Uncertain) | (Status::Uncertain, _) => Status::Uncertain,
                (_, Status::Negative) | (Status::Negative, _) => Status::Negative,
                _ => Status::Absent,
            };
        }
        out.push(agg);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};

    fn rules() -> RuleSet {
        RuleSet::for_diseases(&["pneumonia".into(), "edema".into()])
    }

    #[test]
    fn plain_mention_is_positive() {
        let s = label_sentence("There is pneumonia in the left lung.", "pneumonia", &rules());
        assert_eq!(s.unwrap(), Status::Positive);
    }

    #[test]
    fn negation_cue_before_match() {
        let r = rules();
        assert_eq!(
            label_sentence("No evidence of pneumonia.", "pneumonia", &r).unwrap(),
            Status::Negative
        );
        assert_eq!(
            label_sentence("Possible pneumonia.", "pneumonia", &r).unwrap(),
            Status::Uncertain
        );
        // negation wins when both cues precede
        assert_eq!(
            label_sentence("No possible pneumonia.", "pneumonia", &r).unwrap(),
            Status::Negative
        );
    }

    #[test]
    fn word_boundaries_respected() {
        let r = rules();
        assert_eq!(
            label_sentence("Pseudopneumonia-like shadow.", "pneumonia", &r).unwrap(),
            Status::Absent
        );
        // punctuation does not break matching
        assert_eq!(
            label_sentence("Pneumonia, severe.", "pneumonia", &r).unwrap(),
            Status::Positive
        );
    }

    #[test]
    fn unknown_disease_errors() {
        assert!(label_sentence("anything", "gout", &rules()).is_err());
    }

    #[test]
    fn report_aggregation_positive_dominates() {
        let diseases = vec!["pneumonia".into(), "edema".into()];
        let r = rules();
        let rep = Report::new(
            "t".into(),
            vec!["No pneumonia.".into(), "Pneumonia in right lobe.".into()],
        )
        .unwrap();
        let lv = label_report(&rep, &diseases, &r).unwrap();
        assert_eq!(lv, vec![Status::Positive, Status::Absent]);

        let clear = Report::new("t2".into(), vec!["Lungs are clear.".into()]).unwrap();
        assert_eq!(
            label_report(&clear, &diseases, &r).unwrap(),
            vec![Status::Absent, Status::Absent]
        );
    }

    #[test]
    fn shuffling_sentences_preserves_positive() {
        let diseases = vec!["pneumonia".into(), "edema".into()];
        let r = rules();
        let fwd = Report::new(
            "a".into(),
            vec!["No pneumonia.".into(), "Pneumonia persists.".into(), "Heart normal.".into()],
        )
        .unwrap();
        let rev = Report::new(
            "a".into(),
            fwd.sentences.iter().rev().cloned().collect(),
        )
        .unwrap();
        assert_eq!(
            label_report(&fwd, &diseases, &r).unwrap()[0],
            label_report(&rev, &diseases, &r).unwrap()[0]
        );
    }

    #[test]
    fn recovers_planted_presence_on_synthetic_corpus() {
        let cfg = SynthConfig { n_pairs: 200, ..Default::default() };
        let recs = generate_synthetic(&cfg).unwrap();
        let rules = RuleSet::for_diseases(&cfg.diseases);
        for rec in &recs {
            let lv = label_report(&rec.report, &cfg.diseases, &rules).unwrap();
            for (c, disease) in cfg.diseases.iter().enumerate() {
                let planted = rec.ground_truth_regions.contains_key(disease);
                assert_eq!(
                    lv[c] == Status::Positive,
                    planted,
                    "{} / {disease}: {:?}",
                    rec.image.id,
                    lv[c]
                );
            }
        }
    }
}
