//! Zero-shot classification via image-prompt similarity, with AUROC
//! (Mann-Whitney, ties at half credit) and F1 metrics.

use std::fmt::Write as _;

use crate::corpus::PairRecord;
use crate::error::{Error, Result};
use crate::nn::tensor::dot;
use crate::nn::Model;

pub const PROMPT_TEMPLATE: &str = "findings consistent with {disease}";

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub diseases: Vec<String>,
    /// None when a disease lacks both classes in the split.
    pub auroc: Vec<Option<f64>>,
    pub f1: Vec<Option<f64>>,
    pub thresholds: Vec<f64>,
    pub macro_auroc: f64,
    pub macro_f1: f64,
    /// n_images × C cosine scores.
    pub scores: Vec<Vec<f64>>,
}

/// score(image, c) = cosine(v_image, t_prompt_c) on unit globals.
pub fn zero_shot_scores(
    model: &Model,
    records: &[PairRecord],
    diseases: &[String],
) -> Result<Vec<Vec<f64>>> {
    let mut prompts = Vec::with_capacity(diseases.len());
    for d in diseases {
        let sentence = PROMPT_TEMPLATE.replace("{disease}", d);
        prompts.push(model.text_encode(&[sentence])?.global);
    }
    let mut scores = Vec::with_capacity(records.len());
    for rec in records {
        let v = model.image_encode(&rec.image, model.cfg.layers)?.global;
        scores.push(prompts.iter().map(|t| dot(&v, t)).collect());
    }
    Ok(scores)
}

/// Probability a random positive outranks a random negative; ties ½.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invariant("auroc undefined for single-class labels".into()));
    }
    let mut wins = 0.0;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            wins += if sp > sn {
                1.0
            } else if sp == sn {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (n_pos * n_neg) as f64)
}

/// F1 at a fixed threshold: predictions are score > threshold.
pub fn f1_at(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s > threshold;
        match (pred, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    let p = tp / (tp + fp);
    let r = tp / (tp + fn_);
    2.0 * p * r / (p + r)
}

/// Threshold maximizing F1 over candidate midpoints of sorted scores.
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> f64 {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut cands = vec![sorted[0] - 1e-6];
    for w in sorted.windows(2) {
        cands.push((w[0] + w[1]) / 2.0);
    }
    let mut best = (f64::NEG_INFINITY, cands[0]);
    for &t in &cands {
        let f = f1_at(scores, labels, t);
        if f > best.0 {
            best = (f, t);
        }
    }
    best.1
}

/// Full evaluation: thresholds fitted on `validation` (falls back to the
/// test split itself when absent), metrics reported on `records`.
pub fn evaluate(
    model: &Model,
    records: &[PairRecord],
    validation: Option<&[PairRecord]>,
    diseases: &[String],
) -> Result<EvalResult> {
    let scores = zero_shot_scores(model, records, diseases)?;
    let labels_of = |recs: &[PairRecord], c: usize| -> Vec<bool> {
        recs.iter()
            .map(|r| r.ground_truth_regions.contains_key(&diseases[c]))
            .collect()
    };
    let val_scores = match validation {
        Some(v) => Some(zero_shot_scores(model, v, diseases)?),
        None => None,
    };

    let mut per_auroc = Vec::new();
    let mut per_f1 = Vec::new();
    let mut thresholds = Vec::new();
    for c in 0..diseases.len() {
        let col: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        let labels = labels_of(records, c);
        let n_pos = labels.iter().filter(|&&l| l).count();
        if n_pos == 0 || n_pos == labels.len() {
            per_auroc.push(None);
            per_f1.push(None);
            thresholds.push(0.0);
            continue;
        }
        per_auroc.push(Some(auroc(&col, &labels)?));
        let threshold = match (&val_scores, validation) {
            (Some(vs), Some(vr)) => {
                let vcol: Vec<f64> = vs.iter().map(|row| row[c]).collect();
                let vlabels = labels_of(vr, c);
                if vlabels.iter().any(|&l| l) && vlabels.iter().any(|&l| !l) {
                    best_f1_threshold(&vcol, &vlabels)
                } else {
                    best_f1_threshold(&col, &labels)
                }
            }
            _ => best_f1_threshold(&col, &labels),
        };
        thresholds.push(threshold);
        per_f1.push(Some(f1_at(&col, &labels, threshold)));
    }

    let macro_of = |vals: &[Option<f64>]| {
        let included: Vec<f64> = vals.iter().flatten().copied().collect();
        if included.is_empty() {
            f64::NAN
        } else {
            included.iter().sum::<f64>() / included.len() as f64
        }
    };
    Ok(EvalResult {
        diseases: diseases.to_vec(),
        macro_auroc: macro_of(&per_auroc),
        macro_f1: macro_of(&per_f1),
        auroc: per_auroc,
        f1: per_f1,
        thresholds,
        scores,
    })
}

impl EvalResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("disease,auroc,f1,threshold\n");
        for (i, d) in self.diseases.iter().enumerate() {
            let fmt = |v: Option<f64>| match v {
                Some(x) => format!("{x:.6}"),
                None => "NA".to_string(),
            };
            let _ = writeln!(
                out,
                "{d},{},{},{:.6}",
                fmt(self.auroc[i]),
                fmt(self.f1[i]),
                self.thresholds[i]
            );
        }
        let _ = writeln!(out, "macro,{:.6},{:.6},", self.macro_auroc, self.macro_f1);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn auroc_known_cases() {
        assert_eq!(
            auroc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(),
            1.0
        );
        assert_eq!(auroc(&[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]).unwrap(), 0.5);
        // 4 positive-negative pairs: 3 wins, 1 loss
        assert_eq!(
            auroc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap(),
            0.75
        );
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auroc_monotone_transform_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let scores: Vec<f64> = (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let labels: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
            let a = auroc(&scores, &labels).unwrap();
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).tanh() + 5.0).collect();
            let b = auroc(&transformed, &labels).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn auroc_negation_complements_for_tie_free_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let scores: Vec<f64> = (0..15).map(|i| i as f64 + rng.gen_range(0.0..0.5)).collect();
        let labels: Vec<bool> = (0..15).map(|i| i % 2 == 0).collect();
        let a = auroc(&scores, &labels).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = auroc(&neg, &labels).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f1_known_cases() {
        assert_eq!(f1_at(&[0.9, 0.2, 0.8, 0.1], &[true, false, true, false], 0.5), 1.0);
        assert_eq!(f1_at(&[0.1, 0.2], &[true, false], 0.5), 0.0);
    }

    #[test]
    fn best_threshold_recovers_separation() {
        let scores = [0.9, 0.85, 0.3, 0.2, 0.1];
        let labels = [true, true, false, false, false];
        let t = best_f1_threshold(&scores, &labels);
        assert_eq!(f1_at(&scores, &labels, t), 1.0);
    }
}
