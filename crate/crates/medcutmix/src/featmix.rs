//! Attentive feature-level image mixing: per-patch convex blend of
//! source and target layer-k features weighted by the source attention
//! map, plus the full augmented-pair construction.

use crate::corpus::PairRecord;
use crate::error::{Error, Result};
use crate::labeler::RuleSet;
use crate::localizer::{attention_map, AttentionMap, NormMode};
use crate::nn::encoder::select_sentence_rows;
use crate::nn::{Model, Tensor};
use crate::sampler::PairAssignment;
use crate::textmix::{cutout, paste, sentence_mask, AugmentedReport};

#[derive(Debug, Clone)]
pub struct AugmentedPair {
    pub report: AugmentedReport,
    /// E^k_(img,aug): N_patch × d
    pub mixed_features: Tensor,
    pub mix_layer: usize,
    pub weights: Vec<f64>,
    pub attention: AttentionMap,
    pub provenance: PairAssignment,
}

/// Row p = w_p · src[p] + (1−w_p) · tgt[p].
pub fn mix_features(e_src: &Tensor, e_tgt: &Tensor, weights: &[f64]) -> Result<Tensor> {
    if e_src.shape != e_tgt.shape {
        return Err(Error::Shape {
            expected: format!("{:?}", e_src.shape),
            got: format!("{:?}", e_tgt.shape),
        });
    }
    if weights.len() != e_src.rows() {
        return Err(Error::Shape {
            expected: format!("{} weights", e_src.rows()),
            got: format!("{}", weights.len()),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::Invariant(format!("mix weight {w} outside [0,1]")));
    }
    let n = e_src.cols();
    let mut out = Tensor::zeros(&e_src.shape);
    for r in 0..e_src.rows() {
        let w = weights[r];
        for j in 0..n {
            out.data[r * n + j] = w * e_src.data[r * n + j] + (1.0 - w) * e_tgt.data[r * n + j];
        }
    }
    Ok(out)
}

/// Runs the whole per-assignment pipeline: sentence masks, text
/// cutout/paste, source-side attention, and the layer-k feature mix.
#[allow(clippy::too_many_arguments)]
pub fn build_augmented_pair(
    assignment: PairAssignment,
    records: &[PairRecord],
    diseases: &[String],
    rules: &RuleSet,
    model: &Model,
    k: usize,
    tau1: f64,
    norm_mode: NormMode,
) -> Result<AugmentedPair> {
    let disease = diseases
        .get(assignment.disease)
        .ok_or_else(|| Error::UnknownDisease(format!("index {}", assignment.disease)))?;
    let src = &records[assignment.source];
    let tgt = &records[assignment.target];

    let m_src = sentence_mask(&src.report, disease, rules)?;
    let m_tgt = sentence_mask(&tgt.report, disease, rules)?;
    // surfaces EmptySelection when either side has no diagnostic sentence
    cutout(&src.report, &m_src)?;
    cutout(&tgt.report, &m_tgt)?;
    let report = paste(&src.report, &tgt.report, &m_src, &m_tgt, disease)?;

    // Source attention ℂ_i: diagnostic sentence tokens attend over the
    // source image's final local embeddings.
    let src_text = model.text_encode(&src.report.sentences)?;
    let e_sent = select_sentence_rows(
        &src_text.locals,
        src_text.spans.as_ref().expect("text encode returns spans"),
        &m_src.bits,
    )?;
    let src_img = model.image_encode(&src.image, k)?;
    let tgt_img = model.image_encode(&tgt.image, k)?;
    let attention = attention_map(&src_img.locals, &e_sent, tau1, norm_mode)?;

    let e_src_k = src_img.intermediates.as_ref().expect("image encode saves layer k");
    let e_tgt_k = tgt_img.intermediates.as_ref().expect("image encode saves layer k");
    let mixed_features = mix_features(e_src_k, e_tgt_k, &attention.normalized)?;

    Ok(AugmentedPair {
        report,
        mixed_features,
        mix_layer: k,
        weights: attention.normalized.clone(),
        attention,
        provenance: assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use crate::labeler::{label_report, Status};
    use crate::nn::{EncoderConfig, Vocab};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(&[rows, cols], (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap()
    }

    #[test]
    fn endpoints_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, 6, 5);
        let b = rand_tensor(&mut rng, 6, 5);
        assert_eq!(mix_features(&a, &b, &vec![1.0; 6]).unwrap(), a);
        assert_eq!(mix_features(&a, &b, &vec![0.0; 6]).unwrap(), b);

        let doubled = Tensor::from_vec(&b.shape, b.data.iter().map(|v| 2.0 * v).collect()).unwrap();
        let mid = mix_features(&doubled, &b, &vec![0.5; 6]).unwrap();
        for (m, t) in mid.data.iter().zip(&b.data) {
            assert!((m - 1.5 * t).abs() < 1e-12);
        }
    }

    #[test]
    fn output_stays_inside_elementwise_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let a = rand_tensor(&mut rng, 4, 7);
            let b = rand_tensor(&mut rng, 4, 7);
            let w: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let m = mix_features(&a, &b, &w).unwrap();
            for ((x, y), z) in a.data.iter().zip(&b.data).zip(&m.data) {
                assert!(*z >= x.min(*y) - 1e-12 && *z <= x.max(*y) + 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_under_weight_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_tensor(&mut rng, 5, 4);
        let b = rand_tensor(&mut rng, 5, 4);
        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let wc: Vec<f64> = w.iter().map(|v| 1.0 - v).collect();
        let m1 = mix_features(&a, &b, &w).unwrap();
        let m2 = mix_features(&b, &a, &wc).unwrap();
        for (x, y) in m1.data.iter().zip(&m2.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_weights_and_shapes() {
        let a = Tensor::zeros(&[3, 2]);
        let b = Tensor::zeros(&[3, 2]);
        assert!(mix_features(&a, &b, &[0.5, 1.5, 0.0]).is_err());
        assert!(mix_features(&a, &b, &[0.5, 0.5]).is_err());
        let c = Tensor::zeros(&[2, 2]);
        assert!(mix_features(&a, &c, &[0.5, 0.5, 0.5]).is_err());
    }

    fn synth_setup() -> (Vec<PairRecord>, Vec<String>, RuleSet, Model) {
        let cfg = SynthConfig { n_pairs: 30, seed: 5, ..Default::default() };
        let recs = generate_synthetic(&cfg).unwrap();
        let rules = RuleSet::for_diseases(&cfg.diseases);
        let vocab = Vocab::build(
            recs.iter().flat_map(|r| r.report.sentences.iter().map(|s| s.as_str())),
        );
        let model = Model::new(EncoderConfig { seed: 13, ..Default::default() }, vocab).unwrap();
        (recs, cfg.diseases, rules, model)
    }

    #[test]
    fn self_assignment_mix_is_identity() {
        let (recs, diseases, rules, model) = synth_setup();
        // find a record positive for disease 0
        let idx = recs
            .iter()
            .position(|r| r.ground_truth_regions.contains_key(&diseases[0]))
            .unwrap();
        let asg = PairAssignment { source: idx, target: idx, disease: 0 };
        let aug = build_augmented_pair(asg, &recs, &diseases, &rules, &model, 4, 0.005, NormMode::Max)
            .unwrap();
        let src_img = model.image_encode(&recs[idx].image, 4).unwrap();
        assert_eq!(aug.mixed_features, src_img.intermediates.unwrap());
        assert_eq!(aug.report.sentences, recs[idx].report.sentences);
    }

    #[test]
    fn augmented_report_is_positive_for_its_disease() {
        let (recs, diseases, rules, model) = synth_setup();
        let positives: Vec<usize> = recs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.ground_truth_regions.contains_key(&diseases[1]))
            .map(|(i, _)| i)
            .collect();
        assert!(positives.len() >= 2);
        let asg = PairAssignment { source: positives[0], target: positives[1], disease: 1 };
        let aug = build_augmented_pair(asg, &recs, &diseases, &rules, &model, 3, 0.005, NormMode::Max)
            .unwrap();
        let lv = label_report(&aug.report.as_report(), &diseases, &rules).unwrap();
        assert_eq!(lv[1], Status::Positive);
        assert!(aug.weights.iter().all(|w| (0.0..=1.0).contains(w)));
    }
}
