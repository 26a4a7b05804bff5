//! Balanced disease-centric sampling of (source, target, disease)
//! augmentation triples: up to floor(N_max / C) ordered pairs per
//! disease, drawn without replacement from records Positive for it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::labeler::{LabelVector, Status};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_max: usize,
    pub n_diseases: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairAssignment {
    pub source: usize,
    pub target: usize,
    pub disease: usize,
}

/// Warnings for under-populated diseases are returned rather than logged
/// so callers decide how to surface them.
pub fn sample_pairs(
    labels: &[LabelVector],
    cfg: &SamplerConfig,
) -> (Vec<PairAssignment>, Vec<String>) {
    let quota = if cfg.n_diseases == 0 {
        0
    } else {
        cfg.n_max / cfg.n_diseases
    };
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for disease in 0..cfg.n_diseases {
        let positives: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, lv)| lv.get(disease) == Some(&Status::Positive))
            .map(|(i, _)| i)
            .collect();
        if positives.len() < 2 {
            if quota > 0 {
                warnings.push(format!(
                    "disease {disease}: only {} positive record(s), contributing 0 assignments",
                    positives.len()
                ));
            }
            continue;
        }
        // All ordered pairs of distinct positives, then a seeded draw
        // without replacement. Eligible sets are small at desk scale.
        let mut eligible: Vec<(usize, usize)> = Vec::new();
        for &i in &positives {
            for &j in &positives {
                if i != j {
                    eligible.push((i, j));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(disease as u64 * 0x51_7C_C1));
        eligible.shuffle(&mut rng);
        for &(source, target) in eligible.iter().take(quota) {
            out.push(PairAssignment { source, target, disease });
        }
    }
    (out, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize, c: usize, positive: impl Fn(usize, usize) -> bool) -> Vec<LabelVector> {
        (0..n)
            .map(|i| {
                (0..c)
                    .map(|d| if positive(i, d) { Status::Positive } else { Status::Absent })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn full_quota_when_well_populated() {
        let labels = corpus(30, 4, |_, _| true);
        let (out, warns) = sample_pairs(&labels, &SamplerConfig { n_max: 40, n_diseases: 4, seed: 3 });
        assert!(warns.is_empty());
        for d in 0..4 {
            assert_eq!(out.iter().filter(|a| a.disease == d).count(), 10);
        }
        assert_eq!(out.len(), 40);
    }

    #[test]
    fn zero_budget_is_empty() {
        let labels = corpus(10, 4, |_, _| true);
        let (out, _) = sample_pairs(&labels, &SamplerConfig { n_max: 0, n_diseases: 4, seed: 0 });
        assert!(out.is_empty());
    }

    #[test]
    fn underpopulated_disease_contributes_zero() {
        // disease 2 has a single positive record
        let labels = corpus(20, 4, |i, d| d != 2 || i == 5);
        let (out, warns) = sample_pairs(&labels, &SamplerConfig { n_max: 40, n_diseases: 4, seed: 1 });
        assert_eq!(out.iter().filter(|a| a.disease == 2).count(), 0);
        assert_eq!(out.len(), 30);
        assert_eq!(warns.len(), 1);
    }

    #[test]
    fn assignments_are_valid_and_deterministic() {
        let labels = corpus(25, 3, |i, d| (i + d) % 2 == 0);
        let cfg = SamplerConfig { n_max: 30, n_diseases: 3, seed: 42 };
        let (a, _) = sample_pairs(&labels, &cfg);
        let (b, _) = sample_pairs(&labels, &cfg);
        assert_eq!(a, b);
        for asg in &a {
            assert_ne!(asg.source, asg.target);
            assert_eq!(labels[asg.source][asg.disease], Status::Positive);
            assert_eq!(labels[asg.target][asg.disease], Status::Positive);
        }
        // without replacement within a disease
        let mut seen = std::collections::HashSet::new();
        for asg in &a {
            assert!(seen.insert((asg.disease, asg.source, asg.target)));
        }
    }
}
