//! Command-line pipeline: synth, label, augment, train, eval, sweep, plot.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, CorpusSchema, PairRecord, SynthConfig};
use crate::error::Error;
use crate::eval::{self, PROMPT_TEMPLATE};
use crate::featmix::build_augmented_pair;
use crate::labeler::{label_report, RuleSet};
use crate::nn::{checkpoint, EncoderConfig, Model, Vocab};
use crate::plot::BarChart;
use crate::sampler::{sample_pairs, SamplerConfig};
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Paper-style sweep grids.
    pub nmax_sweep: Vec<usize>,
    pub layer_sweep: Vec<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            nmax_sweep: vec![0, 30, 40, 50, 100, 300],
            layer_sweep: vec![1, 2, 3],
        }
    }
}

#[derive(Parser)]
#[command(name = "medcutmix", version, about = "Disease-centric multi-modal CutMix augmentation pipeline")]
pub struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every sub-config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args)]
pub struct OutDir {
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted ground truth.
    Synth {
        #[command(flatten)]
        out: OutDir,
    },
    /// Label a corpus with the rule engine; writes labels JSONL.
    Label {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Emit augmented reports (and optional heatmaps) without training.
    Augment {
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint to localize with; a fresh seeded model otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        emit_heatmaps: bool,
        #[command(flatten)]
        out: OutDir,
    },
    /// Train the dual encoders; writes checkpoints and metrics CSV.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        nmax: Option<usize>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Zero-shot evaluation of a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional validation corpus for F1 threshold fitting.
        #[arg(long)]
        val_corpus: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Train+eval over N_max and layer grids; emits table-shaped CSVs.
    Sweep {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        test_corpus: PathBuf,
        /// Comma-separated N_max values; config grid otherwise.
        #[arg(long, value_delimiter = ',')]
        nmax: Option<Vec<usize>>,
        /// Comma-separated mix layers; config grid otherwise.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Render per-disease AUROC/F1 bars from an eval CSV as SVG.
    Plot {
        #[arg(long)]
        eval_csv: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Invariant(_)
        | Error::Shape { .. }
        | Error::NonFinite(_)
        | Error::GlyphOverflow(_)
        | Error::EmptySelection => 2,
        _ => 1,
    }
}

fn load_config(cli_config: &Option<PathBuf>, seed: Option<u64>) -> crate::Result<RunConfig> {
    let mut cfg: RunConfig = match cli_config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("config file: {e}")))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.synth.seed = s;
        cfg.encoder.seed = s;
        cfg.train.seed = s;
    }
    cfg.synth.validate()?;
    cfg.encoder.validate()?;
    Ok(cfg)
}

/// Every artifact-producing command drops a manifest beside its outputs.
fn write_manifest(dir: &Path, cfg: &RunConfig, seed: u64) -> crate::Result<()> {
    let config_json = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Config(e.to_string()))?;
    let hash = hex_digest(config_json.as_bytes());
    let manifest = serde_json::json!({
        "config_sha256": hash,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(dir.display().to_string(), e))
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_records(path: &Path, patch: usize) -> crate::Result<Vec<PairRecord>> {
    corpus::load_corpus(path, CorpusSchema { patch_size: patch })
}

/// Vocabulary over corpus sentences plus the zero-shot prompts.
fn build_vocab(records: &[PairRecord], diseases: &[String]) -> Vocab {
    let prompts: Vec<String> = diseases
        .iter()
        .map(|d| PROMPT_TEMPLATE.replace("{disease}", d))
        .collect();
    Vocab::build(
        records
            .iter()
            .flat_map(|r| r.report.sentences.iter().map(|s| s.as_str()))
            .chain(prompts.iter().map(|s| s.as_str())),
    )
}

pub fn run(cli: Cli) -> crate::Result<()> {
    let cfg = load_config(&cli.config, cli.seed)?;
    match cli.command {
        Command::Synth { out } => cmd_synth(&cfg, &out.out),
        Command::Label { corpus, rules, out } => cmd_label(&cfg, &corpus, rules.as_deref(), &out.out),
        Command::Augment { corpus, checkpoint, emit_heatmaps, out } => {
            cmd_augment(&cfg, &corpus, checkpoint.as_deref(), emit_heatmaps, &out.out)
        }
        Command::Train { corpus, nmax, out } => cmd_train(&cfg, &corpus, nmax, &out.out),
        Command::Eval { corpus, checkpoint, val_corpus, out } => {
            cmd_eval(&cfg, &corpus, &checkpoint, val_corpus.as_deref(), &out.out)
        }
        Command::Sweep { corpus, test_corpus, nmax, layers, out } => {
            cmd_sweep(&cfg, &corpus, &test_corpus, nmax, layers, &out.out)
        }
        Command::Plot { eval_csv, out } => cmd_plot(&eval_csv, &out.out),
    }
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> crate::Result<()> {
    let records = corpus::generate_synthetic(&cfg.synth)?;
    write_manifest(out, cfg, cfg.synth.seed)?;
    let jsonl = corpus::save_corpus(&records, out)?;
    println!("wrote {} pairs to {}", records.len(), jsonl.display());
    Ok(())
}

fn rules_for(cfg: &RunConfig, rules_path: Option<&Path>) -> crate::Result<RuleSet> {
    match rules_path {
        Some(p) => RuleSet::from_file(p),
        None => Ok(RuleSet::for_diseases(&cfg.synth.diseases)),
    }
}

fn cmd_label(cfg: &RunConfig, corpus_path: &Path, rules_path: Option<&Path>, out: &Path) -> crate::Result<()> {
    let records = load_records(corpus_path, cfg.encoder.patch)?;
    let rules = rules_for(cfg, rules_path)?;
    write_manifest(out, cfg, cfg.train.seed)?;
    let mut body = String::new();
    for rec in &records {
        let lv = label_report(&rec.report, &cfg.synth.diseases, &rules)?;
        let line = serde_json::json!({ "id": rec.image.id, "labels": lv });
        let _ = writeln!(body, "{line}");
    }
    let path = out.join("labels.jsonl");
    fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("labeled {} pairs -> {}", records.len(), path.display());
    Ok(())
}

fn model_for(cfg: &RunConfig, records: &[PairRecord], ckpt: Option<&Path>) -> crate::Result<Model> {
    match ckpt {
        Some(p) => checkpoint::load(p),
        None => Model::new(cfg.encoder.clone(), build_vocab(records, &cfg.synth.diseases)),
    }
}

fn cmd_augment(
    cfg: &RunConfig,
    corpus_path: &Path,
    ckpt: Option<&Path>,
    emit_heatmaps: bool,
    out: &Path,
) -> crate::Result<()> {
    let records = load_records(corpus_path, cfg.encoder.patch)?;
    let rules = rules_for(cfg, None)?;
    let model = model_for(cfg, &records, ckpt)?;
    let diseases = &cfg.synth.diseases;
    let labels = records
        .iter()
        .map(|r| label_report(&r.report, diseases, &rules))
        .collect::<crate::Result<Vec<_>>>()?;
    let (assignments, warnings) = sample_pairs(
        &labels,
        &SamplerConfig {
            n_max: cfg.train.n_max,
            n_diseases: diseases.len(),
            seed: cfg.train.seed,
        },
    );
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    write_manifest(out, cfg, cfg.train.seed)?;
    let heat_dir = out.join("heatmaps");
    if emit_heatmaps {
        fs::create_dir_all(&heat_dir).map_err(|e| Error::io(heat_dir.display().to_string(), e))?;
    }
    let mut body = String::new();
    let mut skipped = 0usize;
    for (i, asg) in assignments.iter().enumerate() {
        let aug = match build_augmented_pair(
            *asg,
            &records,
            diseases,
            &rules,
            &model,
            cfg.train.mix_layer,
            cfg.train.tau1,
            cfg.train.norm_mode,
        ) {
            Ok(a) => a,
            Err(Error::EmptySelection) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let line = serde_json::json!({
            "sentences": aug.report.sentences,
            "provenance": aug.report.provenance,
            "mix_layer": aug.mix_layer,
        });
        let _ = writeln!(body, "{line}");
        if emit_heatmaps {
            let pw = model.cfg.image_w / model.cfg.patch;
            let ph = model.cfg.image_h / model.cfg.patch;
            aug.attention.write_heatmap(
                &heat_dir.join(format!("aug-{i:04}.pgm")),
                pw,
                ph,
                model.cfg.patch,
            )?;
        }
    }
    let path = out.join("augmented.jsonl");
    fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
    println!(
        "wrote {} augmented reports ({skipped} skipped) -> {}",
        assignments.len() - skipped,
        path.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, corpus_path: &Path, nmax: Option<usize>, out: &Path) -> crate::Result<()> {
    let records = load_records(corpus_path, cfg.encoder.patch)?;
    let rules = rules_for(cfg, None)?;
    let mut train_cfg = cfg.train.clone();
    if let Some(n) = nmax {
        train_cfg.n_max = n;
    }
    let mut model = model_for(cfg, &records, None)?;
    write_manifest(out, cfg, train_cfg.seed)?;
    let outcome = train(&records, &cfg.synth.diseases, &rules, &mut model, &train_cfg, Some(out))?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    // final-epoch eval on the training corpus, for checkpoint parity checks
    let result = eval::evaluate(&model, &records, None, &cfg.synth.diseases)?;
    let eval_path = out.join("final_eval.csv");
    fs::write(&eval_path, result.to_csv())
        .map_err(|e| Error::io(eval_path.display().to_string(), e))?;
    println!(
        "trained {} epochs ({} steps, {} skipped assignments); final checkpoint {}",
        train_cfg.epochs,
        outcome.steps.len(),
        outcome.skipped_assignments,
        outcome
            .final_checkpoint
            .as_deref()
            .map(|p| p.display().to_string())
            .unwrap_or_default()
    );
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    corpus_path: &Path,
    ckpt: &Path,
    val_corpus: Option<&Path>,
    out: &Path,
) -> crate::Result<()> {
    let records = load_records(corpus_path, cfg.encoder.patch)?;
    let val = match val_corpus {
        Some(p) => Some(load_records(p, cfg.encoder.patch)?),
        None => None,
    };
    let model = checkpoint::load(ckpt)?;
    let result = eval::evaluate(&model, &records, val.as_deref(), &cfg.synth.diseases)?;
    write_manifest(out, cfg, cfg.train.seed)?;
    let path = out.join("eval.csv");
    fs::write(&path, result.to_csv()).map_err(|e| Error::io(path.display().to_string(), e))?;
    println!(
        "macro AUROC {:.4}, macro F1 {:.4} -> {}",
        result.macro_auroc,
        result.macro_f1,
        path.display()
    );
    Ok(())
}

fn sweep_row(
    cfg: &RunConfig,
    train_records: &[PairRecord],
    test_records: &[PairRecord],
    rules: &RuleSet,
    train_cfg: &TrainConfig,
) -> crate::Result<(Vec<Option<f64>>, f64)> {
    let mut model = Model::new(cfg.encoder.clone(), build_vocab(train_records, &cfg.synth.diseases))?;
    train(train_records, &cfg.synth.diseases, rules, &mut model, train_cfg, None)?;
    let result = eval::evaluate(&model, test_records, None, &cfg.synth.diseases)?;
    Ok((result.auroc, result.macro_auroc))
}

fn sweep_csv(header_name: &str, diseases: &[String], rows: &[(usize, Vec<Option<f64>>, f64)]) -> String {
    let mut out = format!("{header_name},{},avg_auc\n", diseases.join(","));
    for (value, per, avg) in rows {
        let cells: Vec<String> = per
            .iter()
            .map(|v| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into()))
            .collect();
        let _ = writeln!(out, "{value},{},{avg:.4}", cells.join(","));
    }
    out
}

fn cmd_sweep(
    cfg: &RunConfig,
    corpus_path: &Path,
    test_path: &Path,
    nmax: Option<Vec<usize>>,
    layers: Option<Vec<usize>>,
    out: &Path,
) -> crate::Result<()> {
    let train_records = load_records(corpus_path, cfg.encoder.patch)?;
    let test_records = load_records(test_path, cfg.encoder.patch)?;
    let rules = rules_for(cfg, None)?;
    let nmax_grid = nmax.unwrap_or_else(|| cfg.eval.nmax_sweep.clone());
    let layer_grid = layers.unwrap_or_else(|| cfg.eval.layer_sweep.clone());
    write_manifest(out, cfg, cfg.train.seed)?;

    let mut nmax_rows = Vec::new();
    for &n in &nmax_grid {
        let train_cfg = TrainConfig { n_max: n, ..cfg.train.clone() };
        let (per, avg) = sweep_row(cfg, &train_records, &test_records, &rules, &train_cfg)?;
        println!("nmax {n}: avg AUC {avg:.4}");
        nmax_rows.push((n, per, avg));
    }
    let nmax_csv = sweep_csv("nmax", &cfg.synth.diseases, &nmax_rows);
    let p1 = out.join("sweep_nmax.csv");
    fs::write(&p1, nmax_csv).map_err(|e| Error::io(p1.display().to_string(), e))?;

    let mut layer_rows = Vec::new();
    for &k in &layer_grid {
        let train_cfg = TrainConfig { mix_layer: k, ..cfg.train.clone() };
        let (per, avg) = sweep_row(cfg, &train_records, &test_records, &rules, &train_cfg)?;
        println!("layer {k}: avg AUC {avg:.4}");
        layer_rows.push((k, per, avg));
    }
    let layer_csv = sweep_csv("layer_k", &cfg.synth.diseases, &layer_rows);
    let p2 = out.join("sweep_layers.csv");
    fs::write(&p2, layer_csv).map_err(|e| Error::io(p2.display().to_string(), e))?;
    println!("sweep tables -> {} / {}", p1.display(), p2.display());
    Ok(())
}

fn cmd_plot(eval_csv: &Path, out: &Path) -> crate::Result<()> {
    let text = fs::read_to_string(eval_csv).map_err(|e| Error::io(eval_csv.display().to_string(), e))?;
    let mut labels = Vec::new();
    let mut auroc = Vec::new();
    let mut f1 = Vec::new();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 3 || cells[0] == "macro" {
            continue;
        }
        if let (Ok(a), Ok(f)) = (cells[1].parse::<f64>(), cells[2].parse::<f64>()) {
            labels.push(cells[0].to_string());
            auroc.push(a);
            f1.push(f);
        }
    }
    if labels.is_empty() {
        return Err(Error::Invariant("no plottable rows in eval CSV".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let charts = [
        ("auroc.svg", "Zero-shot AUROC per disease", auroc),
        ("f1.svg", "Zero-shot F1 per disease", f1),
    ];
    for (file, title, values) in charts {
        let chart = BarChart { title: title.into(), labels: labels.clone(), values };
        let path = out.join(file);
        fs::write(&path, chart.to_svg()).map_err(|e| Error::io(path.display().to_string(), e))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
