//! Data model, JSONL corpus ingestion, and a synthetic image-report
//! generator with planted ground-truth disease regions.
//!
//! Corpus layout on disk: one JSONL file where each line is a pair
//! record, with images stored as sibling PGM (P5) files referenced by
//! relative path. See `docs/corpus_format.md`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::LabelVector;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major, channel-last, values in [0,1].
    pub pixels: Vec<f64>,
}

impl ImageSample {
    pub fn new(id: String, height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::Shape {
                expected: format!("{height}x{width}x{channels} pixels"),
                got: format!("{}", pixels.len()),
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Invariant(format!("image {id}: intensity out of [0,1]")));
        }
        Ok(ImageSample { id, height, width, channels, pixels })
    }

    /// Grayscale view: channel-averaged when ingested as RGB.
    pub fn gray(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.pixels.clone();
        }
        self.pixels
            .chunks(self.channels)
            .map(|px| px.iter().sum::<f64>() / self.channels as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub sentences: Vec<String>,
}

impl Report {
    pub fn new(id: String, sentences: Vec<String>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Invariant(format!("report {id}: empty sentence list")));
        }
        if let Some(s) = sentences.iter().find(|s| s.trim().is_empty()) {
            return Err(Error::Invariant(format!(
                "report {id}: blank sentence {s:?}"
            )));
        }
        Ok(Report { id, sentences })
    }
}

/// Axis-aligned box in pixel coordinates: (x, y, w, h).
pub type Box2D = (usize, usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub image: ImageSample,
    pub report: Report,
    pub labels: Option<LabelVector>,
    /// Synthetic corpora only: planted glyph boxes per disease.
    pub ground_truth_regions: BTreeMap<String, Box2D>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub diseases: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub glyph_size: usize,
    /// Per-disease presence probability; one entry reused for all, or one per disease.
    pub co_occurrence: Vec<f64>,
    pub positive_templates: Vec<String>,
    pub negative_templates: Vec<String>,
    pub distractors: Vec<String>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pairs: 200,
            diseases: vec![
                "pneumonia".into(),
                "edema".into(),
                "atelectasis".into(),
                "cardiomegaly".into(),
            ],
            height: 32,
            width: 32,
            glyph_size: 10,
            co_occurrence: vec![0.4],
            positive_templates: vec![
                "There is {disease} in the right lung.".into(),
                "Findings are consistent with severe {disease}.".into(),
                "Persistent {disease} is noted.".into(),
            ],
            negative_templates: vec![
                "No evidence of {disease}.".into(),
                "The patient is free of {disease}.".into(),
            ],
            distractors: vec![
                "Heart size is normal.".into(),
                "The lungs are otherwise clear.".into(),
                "No acute osseous abnormality.".into(),
            ],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.diseases.len() < 2 {
            return Err(Error::Config("need at least 2 disease categories".into()));
        }
        if self.glyph_size >= self.height.min(self.width) {
            return Err(Error::Config("glyph size must be smaller than the image".into()));
        }
        if self.positive_templates.is_empty() || self.negative_templates.is_empty() {
            return Err(Error::Config("need at least one positive and one negative template".into()));
        }
        if self.co_occurrence.is_empty()
            || (self.co_occurrence.len() != 1 && self.co_occurrence.len() != self.diseases.len())
        {
            return Err(Error::Config(
                "co_occurrence must have length 1 or one entry per disease".into(),
            ));
        }
        if self.co_occurrence.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("co_occurrence probabilities must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn prob(&self, disease_idx: usize) -> f64 {
        if self.co_occurrence.len() == 1 {
            self.co_occurrence[0]
        } else {
            self.co_occurrence[disease_idx]
        }
    }
}

/// Distinct procedural glyphs so a localization failure cannot hide
/// behind glyph similarity.
fn stamp_glyph(pixels: &mut [f64], width: usize, kind: usize, bx: Box2D, level: f64) {
    let (x0, y0, w, h) = bx;
    for dy in 0..h {
        for dx in 0..w {
            let on = match kind % 4 {
                0 => true,                                          // filled square
                1 => dx == w / 2 || dy == h / 2,                    // cross
                2 => {
                    // ring
                    let cx = w as f64 / 2.0 - 0.5;
                    let cy = h as f64 / 2.0 - 0.5;
                    let r = (dx as f64 - cx).hypot(dy as f64 - cy);
                    let ro = w as f64 / 2.0;
                    r <= ro && r >= ro - 2.0
                }
                _ => dy % 3 == 0, // stripes
            };
            if on {
                pixels[(y0 + dy) * width + (x0 + dx)] = level;
            }
        }
    }
}

fn overlaps(a: Box2D, b: Box2D) -> bool {
    let (ax, ay, aw, ah) = a;
    let (bx, by, bw, bh) = b;
    ax < bx + bw && bx < ax + aw && ay < by + bh && by < ay + ah
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Deterministic synthetic corpus: per-disease glyphs stamped at
/// recorded boxes with matching template sentences.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<PairRecord>> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.n_pairs);
    for i in 0..cfg.n_pairs {
        // Per-pair stream keyed off (seed, index) so generation order and
        // thread count cannot affect the result.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64));
        let id = format!("pair-{i:05}");
        let mut pixels: Vec<f64> = (0..cfg.height * cfg.width)
            .map(|_| quantize(rng.gen_range(0.0..0.08)))
            .collect();
        let mut sentences: Vec<String> = Vec::new();
        let mut regions = BTreeMap::new();
        let mut placed: Vec<Box2D> = Vec::new();

        for (c, disease) in cfg.diseases.iter().enumerate() {
            if rng.gen_bool(cfg.prob(c)) {
                let mut attempts = 0;
                let bx = loop {
                    let x = rng.gen_range(0..=cfg.width - cfg.glyph_size);
                    let y = rng.gen_range(0..=cfg.height - cfg.glyph_size);
                    let cand = (x, y, cfg.glyph_size, cfg.glyph_size);
                    if !placed.iter().any(|p| overlaps(*p, cand)) {
                        break cand;
                    }
                    attempts += 1;
                    if attempts > 200 {
                        return Err(Error::GlyphOverflow(placed.len() + 1));
                    }
                };
                let level = quantize(rng.gen_range(0.7..1.0));
                stamp_glyph(&mut pixels, cfg.width, c, bx, level);
                placed.push(bx);
                regions.insert(disease.clone(), bx);
                let tpl = &cfg.positive_templates[rng.gen_range(0..cfg.positive_templates.len())];
                sentences.push(tpl.replace("{disease}", disease));
            } else if rng.gen_bool(0.5) {
                let tpl = &cfg.negative_templates[rng.gen_range(0..cfg.negative_templates.len())];
                sentences.push(tpl.replace("{disease}", disease));
            }
        }
        if !cfg.distractors.is_empty() {
            let d = &cfg.distractors[rng.gen_range(0..cfg.distractors.len())];
            sentences.push(d.clone());
        }
        if sentences.is_empty() {
            sentences.push("Unremarkable study.".to_string());
        }
        sentences.shuffle(&mut rng);

        records.push(PairRecord {
            image: ImageSample::new(id.clone(), cfg.height, cfg.width, 1, pixels)?,
            report: Report::new(id, sentences)?,
            labels: None,
            ground_truth_regions: regions,
        });
    }
    Ok(records)
}

// --- PGM (P5) ---

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[f64]) -> Result<()> {
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend(gray.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let data = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rd = BufReader::new(&data[..]);
    let mut header = Vec::new();
    let mut fields = Vec::new();
    // Header: magic, width, height, maxval; '#' comments allowed.
    while fields.len() < 4 {
        header.clear();
        rd.read_until(b'\n', &mut header)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let line = String::from_utf8_lossy(&header);
        let line = line.split('#').next().unwrap_or("");
        fields.extend(line.split_whitespace().map(|s| s.to_string()));
    }
    if fields[0] != "P5" {
        return Err(Error::Invariant(format!("{}: not a P5 PGM", path.display())));
    }
    let width: usize = fields[1].parse().map_err(|_| Error::Invariant("bad PGM width".into()))?;
    let height: usize = fields[2].parse().map_err(|_| Error::Invariant("bad PGM height".into()))?;
    let maxval: f64 = fields[3].parse().map_err(|_| Error::Invariant("bad PGM maxval".into()))?;
    let mut px = vec![0u8; width * height];
    rd.read_exact(&mut px)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok((width, height, px.iter().map(|&b| b as f64 / maxval).collect()))
}

// --- JSONL corpus ---

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    id: String,
    image: String,
    sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    regions: BTreeMap<String, Box2D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<LabelVector>,
}

#[derive(Debug, Clone, Copy)]
pub struct CorpusSchema {
    /// Encoder patch size; image dims must divide by it.
    pub patch_size: usize,
}

pub fn save_corpus(records: &[PairRecord], dir: &Path) -> Result<PathBuf> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(img_dir.display().to_string(), e))?;
    let jsonl = dir.join("corpus.jsonl");
    let mut out = fs::File::create(&jsonl).map_err(|e| Error::io(jsonl.display().to_string(), e))?;
    for rec in records {
        let rel = format!("images/{}.pgm", rec.image.id);
        write_pgm(&dir.join(&rel), rec.image.width, rec.image.height, &rec.image.gray())?;
        let line = PairLine {
            id: rec.image.id.clone(),
            image: rel,
            sentences: rec.report.sentences.clone(),
            regions: rec.ground_truth_regions.clone(),
            labels: rec.labels.clone(),
        };
        serde_json::to_writer(&mut out, &line)
            .map_err(|e| Error::Corpus { line: 0, msg: e.to_string() })?;
        out.write_all(b"\n").map_err(|e| Error::io(jsonl.display().to_string(), e))?;
    }
    Ok(jsonl)
}

pub fn load_corpus(path: &Path, schema: CorpusSchema) -> Result<Vec<PairRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pl: PairLine = serde_json::from_str(&line).map_err(|e| Error::Corpus {
            line: lineno,
            msg: e.to_string(),
        })?;
        let report = Report::new(pl.id.clone(), pl.sentences).map_err(|e| Error::Corpus {
            line: lineno,
            msg: e.to_string(),
        })?;
        let (w, h, px) = read_pgm(&base.join(&pl.image))?;
        if h % schema.patch_size != 0 || w % schema.patch_size != 0 {
            return Err(Error::Corpus {
                line: lineno,
                msg: format!("image {w}x{h} not divisible by patch size {}", schema.patch_size),
            });
        }
        let image = ImageSample::new(pl.id, h, w, 1, px).map_err(|e| Error::Corpus {
            line: lineno,
            msg: e.to_string(),
        })?;
        records.push(PairRecord {
            image,
            report,
            labels: pl.labels,
            ground_truth_regions: pl.regions,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig { n_pairs: 20, ..Default::default() };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_probability_yields_no_regions() {
        let cfg = SynthConfig {
            n_pairs: 15,
            co_occurrence: vec![0.0],
            ..Default::default()
        };
        for rec in generate_synthetic(&cfg).unwrap() {
            assert!(rec.ground_truth_regions.is_empty());
            for s in &rec.report.sentences {
                let lower = s.to_lowercase();
                for d in &cfg.diseases {
                    if lower.contains(d.as_str()) {
                        assert!(
                            lower.starts_with("no ") || lower.contains("free of"),
                            "unexpected positive sentence: {s}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn positives_have_box_and_verbatim_mention() {
        let cfg = SynthConfig { n_pairs: 60, ..Default::default() };
        for rec in generate_synthetic(&cfg).unwrap() {
            for (disease, _) in &rec.ground_truth_regions {
                let hit = rec.report.sentences.iter().any(|s| {
                    let l = s.to_lowercase();
                    l.contains(disease.as_str())
                        && !l.starts_with("no ")
                        && !l.contains("free of")
                });
                assert!(hit, "{}: no positive mention of {disease}", rec.image.id);
            }
        }
    }

    #[test]
    fn binomial_positive_counts() {
        let cfg = SynthConfig { n_pairs: 200, co_occurrence: vec![0.4], ..Default::default() };
        let recs = generate_synthetic(&cfg).unwrap();
        // 3σ bounds for Binomial(200, 0.4): mean 80, σ = √(200·0.4·0.6) ≈ 6.93.
        let lo = 80.0 - 3.0 * 6.93;
        let hi = 80.0 + 3.0 * 6.93;
        for d in &cfg.diseases {
            let count = recs
                .iter()
                .filter(|r| r.ground_truth_regions.contains_key(d))
                .count() as f64;
            assert!(count >= lo && count <= hi, "{d}: {count} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn save_load_round_trip_is_field_equal() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n_pairs: 8, ..Default::default() };
        let recs = generate_synthetic(&cfg).unwrap();
        let jsonl = save_corpus(&recs, dir.path()).unwrap();
        let loaded = load_corpus(&jsonl, CorpusSchema { patch_size: 8 }).unwrap();
        assert_eq!(recs, loaded);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n_pairs: 3, ..Default::default() };
        let recs = generate_synthetic(&cfg).unwrap();
        let jsonl = save_corpus(&recs, dir.path()).unwrap();
        let mut text = fs::read_to_string(&jsonl).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let broken = format!(
            "{}\n{}\n{}\n",
            lines[0],
            lines[1].replace("\"sentences\":[", "\"sentences\":[],\"x\":["),
            lines[2]
        );
        text = broken;
        fs::write(&jsonl, text).unwrap();
        let err = load_corpus(&jsonl, CorpusSchema { patch_size: 8 }).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
