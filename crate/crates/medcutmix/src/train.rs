//! Training orchestration: warm-up on original pairs, then per-epoch
//! augmentation batches; plain gradient descent with decoupled weight
//! decay and cosine step-size decay.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PairRecord;
use crate::error::{Error, Result};
use crate::labeler::{label_report, LabelVector, RuleSet};
use crate::localizer::{attention_map, NormMode};
use crate::losses::{itc_loss_node, LossConfig};
use crate::nn::checkpoint;
use crate::nn::encoder::select_sentence_rows;
use crate::nn::graph::Graph;
use crate::nn::Model;
use crate::sampler::{sample_pairs, PairAssignment, SamplerConfig};
use crate::textmix::{cutout, paste, sentence_mask};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub n_max: usize,
    pub mix_layer: usize,
    pub tau1: f64,
    #[serde(default)]
    pub norm_mode: NormMode,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            warmup_epochs: 5,
            batch_size: 16,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            n_max: 40,
            mix_layer: 3,
            tau1: 0.005,
            norm_mode: NormMode::Max,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config("warmup_epochs must not exceed epochs".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("contrastive training needs batch_size >= 2".into()));
        }
        if self.mix_layer == 0 || self.mix_layer > n_layers {
            return Err(Error::Config(format!(
                "mix_layer {} outside 1..={n_layers}",
                self.mix_layer
            )));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_ita: f64,
    pub l_itc_aug: f64,
    pub l_total: f64,
    pub wallclock: f64,
}

#[derive(Debug, Default)]
pub struct TrainOutcome {
    pub steps: Vec<StepRecord>,
    pub warnings: Vec<String>,
    pub skipped_assignments: usize,
    pub final_checkpoint: Option<PathBuf>,
}

/// Metrics CSV with the wallclock column included.
pub fn metrics_csv(steps: &[StepRecord]) -> String {
    let mut out = String::from("epoch,step,l_ita,l_itc_aug,l_total,wallclock\n");
    for s in steps {
        let _ = writeln!(
            out,
            "{},{},{:.12},{:.12},{:.12},{:.3}",
            s.epoch, s.step, s.l_ita, s.l_itc_aug, s.l_total, s.wallclock
        );
    }
    out
}

fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    // cosine decay over epochs, floor at 10% of the base rate
    let t = (epoch - 1) as f64 / cfg.epochs.max(1) as f64;
    let scale = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
    cfg.learning_rate * (0.1 + 0.9 * scale)
}

fn sgd_step(model: &mut Model, lr: f64, weight_decay: f64) {
    for idx in 0..model.params.len() {
        let grad = model.params.grad(idx).data.clone();
        let value = model.params.value_mut(idx);
        for (v, g) in value.data.iter_mut().zip(&grad) {
            *v -= lr * (g + weight_decay * *v);
        }
    }
}

/// One contrastive step over a batch of (image, sentences) pairs built
/// fully in-graph.
fn original_step(
    model: &mut Model,
    batch: &[&PairRecord],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let mut v_rows = Vec::with_capacity(batch.len());
    let mut t_rows = Vec::with_capacity(batch.len());
    for rec in batch {
        let patches = model.patchify(&rec.image)?;
        let nodes = model.image_forward(&mut g, patches);
        v_rows.push(nodes.global);
        let (ids, _) = model.tokenize_report(&rec.report.sentences)?;
        let (_, t_global) = model.text_forward(&mut g, &ids);
        t_rows.push(t_global);
    }
    let v = g.concat_rows(&v_rows);
    let t = g.concat_rows(&t_rows);
    let loss = itc_loss_node(&mut g, v, t, cfg.loss.tau2);
    let value = g.value(loss).data[0];
    if !value.is_finite() {
        return Err(Error::NonFinite("ITA loss".into()));
    }
    model.params.zero_grads();
    g.backward(loss, &mut model.params)?;
    sgd_step(model, lr, cfg.weight_decay);
    Ok(value)
}

/// Augmented-pair mixing weights, computed against frozen weights.
fn assignment_weights(
    model: &Model,
    records: &[PairRecord],
    diseases: &[String],
    rules: &RuleSet,
    asg: &PairAssignment,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, Vec<String>)> {
    let disease = &diseases[asg.disease];
    let src = &records[asg.source];
    let tgt = &records[asg.target];
    let m_src = sentence_mask(&src.report, disease, rules)?;
    let m_tgt = sentence_mask(&tgt.report, disease, rules)?;
    cutout(&src.report, &m_src)?;
    cutout(&tgt.report, &m_tgt)?;
    let aug_report = paste(&src.report, &tgt.report, &m_src, &m_tgt, disease)?;

    let src_text = model.text_encode(&src.report.sentences)?;
    let e_sent = select_sentence_rows(
        &src_text.locals,
        src_text.spans.as_ref().expect("spans"),
        &m_src.bits,
    )?;
    let src_img = model.image_encode(&src.image, cfg.mix_layer)?;
    let am = attention_map(&src_img.locals, &e_sent, cfg.tau1, cfg.norm_mode)?;
    Ok((am.normalized, aug_report.sentences))
}

/// One contrastive step over augmented pairs; gradient flows through
/// both source and target trunks via the feature mix.
fn augmented_step(
    model: &mut Model,
    records: &[PairRecord],
    diseases: &[String],
    rules: &RuleSet,
    batch: &[PairAssignment],
    cfg: &TrainConfig,
    lr: f64,
    skipped: &mut usize,
) -> Result<Option<f64>> {
    // weights and augmented reports first, against frozen parameters
    let mut prepared = Vec::new();
    for asg in batch {
        match assignment_weights(model, records, diseases, rules, asg, cfg) {
            Ok(p) => prepared.push((asg, p)),
            Err(Error::EmptySelection) => *skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if prepared.len() < 2 {
        *skipped += prepared.len();
        return Ok(None);
    }

    let mut g = Graph::new();
    let mut v_rows = Vec::new();
    let mut t_rows = Vec::new();
    for (asg, (weights, sentences)) in &prepared {
        let src_patches = model.patchify(&records[asg.source].image)?;
        let tgt_patches = model.patchify(&records[asg.target].image)?;
        let src_k = model.image_trunk(&mut g, src_patches, cfg.mix_layer);
        let tgt_k = model.image_trunk(&mut g, tgt_patches, cfg.mix_layer);
        let mixed = g.mix_rows(src_k, tgt_k, weights);
        let (_, v_aug) = model.image_resume(&mut g, mixed, cfg.mix_layer);
        v_rows.push(v_aug);
        let (ids, _) = model.tokenize_report(sentences)?;
        let (_, t_aug) = model.text_forward(&mut g, &ids);
        t_rows.push(t_aug);
    }
    let v = g.concat_rows(&v_rows);
    let t = g.concat_rows(&t_rows);
    let loss = itc_loss_node(&mut g, v, t, cfg.loss.tau2);
    let value = g.value(loss).data[0];
    if !value.is_finite() {
        return Err(Error::NonFinite("ITC_aug loss".into()));
    }
    model.params.zero_grads();
    g.backward(loss, &mut model.params)?;
    sgd_step(model, lr, cfg.weight_decay);
    Ok(Some(value))
}

/// Warm-up epochs optimize ITA only; afterwards assignments are
/// re-drawn each epoch with an epoch-derived seed and appended as
/// extra mini-batches.
pub fn train(
    records: &[PairRecord],
    diseases: &[String],
    rules: &RuleSet,
    model: &mut Model,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate(model.cfg.layers)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let labels: Vec<LabelVector> = records
        .iter()
        .map(|r| {
            r.labels
                .clone()
                .map(Ok)
                .unwrap_or_else(|| label_report(&r.report, diseases, rules))
        })
        .collect::<Result<_>>()?;

    let start = Instant::now();
    let mut outcome = TrainOutcome::default();
    for epoch in 1..=cfg.epochs {
        let lr = lr_at(cfg, epoch);
        let mut order: Vec<usize> = (0..records.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64 * 0x9E37));
        order.shuffle(&mut rng);

        let mut step = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&PairRecord> = chunk.iter().map(|&i| &records[i]).collect();
            let l_ita = if cfg.loss.ita_enabled {
                original_step(model, &batch, cfg, lr)?
            } else {
                0.0
            };
            step += 1;
            outcome.steps.push(StepRecord {
                epoch,
                step,
                l_ita,
                l_itc_aug: 0.0,
                l_total: l_ita,
                wallclock: start.elapsed().as_secs_f64(),
            });
        }

        if epoch > cfg.warmup_epochs && cfg.n_max > 0 && cfg.loss.itc_aug_enabled {
            let sampler_cfg = SamplerConfig {
                n_max: cfg.n_max,
                n_diseases: diseases.len(),
                seed: cfg.seed.wrapping_add(epoch as u64 * 0xC0FFEE),
            };
            let (assignments, warns) = sample_pairs(&labels, &sampler_cfg);
            outcome.warnings.extend(warns);
            for chunk in assignments.chunks(cfg.batch_size) {
                let result = augmented_step(
                    model,
                    records,
                    diseases,
                    rules,
                    chunk,
                    cfg,
                    lr,
                    &mut outcome.skipped_assignments,
                )?;
                if let Some(l_aug) = result {
                    step += 1;
                    outcome.steps.push(StepRecord {
                        epoch,
                        step,
                        l_ita: 0.0,
                        l_itc_aug: l_aug,
                        l_total: l_aug,
                        wallclock: start.elapsed().as_secs_f64(),
                    });
                }
            }
        }

        if let Some(dir) = out_dir {
            let path = dir.join(format!("epoch-{epoch:03}.ckpt"));
            checkpoint::save(model, &path)?;
            outcome.final_checkpoint = Some(path);
        }
    }
    if let Some(dir) = out_dir {
        fs::write(dir.join("metrics.csv"), metrics_csv(&outcome.steps))
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    Ok(outcome)
}
