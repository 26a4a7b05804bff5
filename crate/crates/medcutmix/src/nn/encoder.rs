//! Dual encoders: a patch-transformer image encoder that exposes
//! intermediate layer features and resume-encoding, and a token
//! transformer text encoder with sentence-aligned local embeddings.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ImageSample;
use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId, Params};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub patch: usize,
    pub max_tokens: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 64,
            layers: 4,
            heads: 4,
            patch: 8,
            max_tokens: 64,
            image_h: 32,
            image_w: 32,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config("embed_dim must divide by heads".into()));
        }
        if self.image_h % self.patch != 0 || self.image_w % self.patch != 0 {
            return Err(Error::Config("image dims must divide by patch size".into()));
        }
        if self.layers < 2 {
            return Err(Error::Config("need at least 2 transformer layers".into()));
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        (self.image_h / self.patch) * (self.image_w / self.patch)
    }
}

/// Whitespace+punctuation lowercase tokenizer; each punctuation
/// character is its own token.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in sentence.to_lowercase().chars() {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Vocab {
    pub words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

pub const UNK: &str = "<unk>";

impl Vocab {
    pub fn build<'a>(sentences: impl Iterator<Item = &'a str>) -> Self {
        let mut set: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
        for s in sentences {
            set.extend(tokenize(s));
        }
        let mut words = vec![UNK.to_string()];
        words.extend(set);
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let mut v = Vocab { words, index: HashMap::new() };
        v.rebuild_index();
        v
    }

    pub fn rebuild_index(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Output of one encoder pass.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    /// Unit-norm global embedding (v for images, t for text).
    pub global: Vec<f64>,
    /// N×d local embeddings (patches or tokens) after the final norm.
    pub locals: Tensor,
    /// Token→sentence spans, text only: half-open (start, end) per sentence.
    pub spans: Option<Vec<(usize, usize)>>,
    /// Saved layer-k activations, image only: N_patch×d.
    pub intermediates: Option<Tensor>,
}

pub struct Model {
    pub cfg: EncoderConfig,
    pub vocab: Vocab,
    pub params: Params,
}

/// Graph node handles for one in-graph image pass.
pub struct ImageNodes {
    /// Residual-stream activations after each block, `per_layer[i]` = after block i+1.
    pub per_layer: Vec<NodeId>,
    pub locals: NodeId,
    pub global: NodeId,
}

impl Model {
    pub fn new(cfg: EncoderConfig, vocab: Vocab) -> Result<Self> {
        cfg.validate()?;
        let mut params = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.embed_dim;
        let hidden = 4 * d;

        let init = |params: &mut Params, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            params.add(name, Tensor::from_vec(&[rows, cols], data).unwrap());
        };
        let ones = |params: &mut Params, name: &str, n: usize| {
            params.add(name, Tensor::from_vec(&[1, n], vec![1.0; n]).unwrap());
        };
        let zeros = |params: &mut Params, name: &str, n: usize| {
            params.add(name, Tensor::zeros(&[1, n]));
        };

        init(&mut params, "img.patch_w", cfg.patch * cfg.patch, d, &mut rng);
        zeros(&mut params, "img.patch_b", d);
        init(&mut params, "img.pos", cfg.n_patches(), d, &mut rng);
        init(&mut params, "txt.tok", vocab.len(), d, &mut rng);
        init(&mut params, "txt.pos", cfg.max_tokens, d, &mut rng);

        for side in ["img", "txt"] {
            for i in 0..cfg.layers {
                let p = format!("{side}.b{i}");
                ones(&mut params, &format!("{p}.ln1.g"), d);
                zeros(&mut params, &format!("{p}.ln1.b"), d);
                for w in ["wq", "wk", "wv", "wo"] {
                    init(&mut params, &format!("{p}.{w}"), d, d, &mut rng);
                }
                for b in ["bq", "bk", "bv", "bo"] {
                    zeros(&mut params, &format!("{p}.{b}"), d);
                }
                ones(&mut params, &format!("{p}.ln2.g"), d);
                zeros(&mut params, &format!("{p}.ln2.b"), d);
                init(&mut params, &format!("{p}.w1"), d, hidden, &mut rng);
                zeros(&mut params, &format!("{p}.b1"), hidden);
                init(&mut params, &format!("{p}.w2"), hidden, d, &mut rng);
                zeros(&mut params, &format!("{p}.b2"), d);
            }
            ones(&mut params, &format!("{side}.lnf.g"), d);
            zeros(&mut params, &format!("{side}.lnf.b"), d);
        }

        Ok(Model { cfg, vocab, params })
    }

    /// Flatten an image into N_patch rows of P·P intensities.
    pub fn patchify(&self, image: &ImageSample) -> Result<Tensor> {
        let p = self.cfg.patch;
        if image.height % p != 0 || image.width % p != 0 {
            return Err(Error::Shape {
                expected: format!("dims divisible by {p}"),
                got: format!("{}x{}", image.width, image.height),
            });
        }
        let gray = image.gray();
        let (ph, pw) = (image.height / p, image.width / p);
        let mut out = Tensor::zeros(&[ph * pw, p * p]);
        for py in 0..ph {
            for px in 0..pw {
                let row = out.row_mut(py * pw + px);
                for dy in 0..p {
                    for dx in 0..p {
                        row[dy * p + dx] = gray[(py * p + dy) * image.width + (px * p + dx)];
                    }
                }
            }
        }
        Ok(out)
    }

    fn linear(&self, g: &mut Graph, x: NodeId, w: &str, b: &str) -> NodeId {
        let wn = g.named(&self.params, w);
        let bn = g.named(&self.params, b);
        let y = g.matmul(x, wn);
        g.add_row(y, bn)
    }

    /// Pre-LN transformer block with residual connections.
    fn block(&self, g: &mut Graph, x: NodeId, prefix: &str) -> NodeId {
        let d = self.cfg.embed_dim;
        let heads = self.cfg.heads;
        let dh = d / heads;

        let g1 = g.named(&self.params, &format!("{prefix}.ln1.g"));
        let b1 = g.named(&self.params, &format!("{prefix}.ln1.b"));
        let h = g.layer_norm(x, g1, b1);
        let q = self.linear(g, h, &format!("{prefix}.wq"), &format!("{prefix}.bq"));
        let k = self.linear(g, h, &format!("{prefix}.wk"), &format!("{prefix}.bk"));
        let v = self.linear(g, h, &format!("{prefix}.wv"), &format!("{prefix}.bv"));

        let mut head_outs = Vec::with_capacity(heads);
        for i in 0..heads {
            let qh = g.slice_cols(q, i * dh, dh);
            let kh = g.slice_cols(k, i * dh, dh);
            let vh = g.slice_cols(v, i * dh, dh);
            let scores = g.matmul_nt(qh, kh);
            let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = g.softmax_rows(scaled);
            head_outs.push(g.matmul(attn, vh));
        }
        let cat = g.concat_cols(&head_outs);
        let proj = self.linear(g, cat, &format!("{prefix}.wo"), &format!("{prefix}.bo"));
        let x = g.add(x, proj);

        let g2 = g.named(&self.params, &format!("{prefix}.ln2.g"));
        let b2 = g.named(&self.params, &format!("{prefix}.ln2.b"));
        let h2 = g.layer_norm(x, g2, b2);
        let m = self.linear(g, h2, &format!("{prefix}.w1"), &format!("{prefix}.b1"));
        let m = g.relu(m);
        let m = self.linear(g, m, &format!("{prefix}.w2"), &format!("{prefix}.b2"));
        g.add(x, m)
    }

    fn pool(&self, g: &mut Graph, side: &str, last: NodeId) -> (NodeId, NodeId) {
        let gf = g.named(&self.params, &format!("{side}.lnf.g"));
        let bf = g.named(&self.params, &format!("{side}.lnf.b"));
        let locals = g.layer_norm(last, gf, bf);
        let mean = g.mean_rows(locals);
        let global = g.l2_norm_rows(mean);
        (locals, global)
    }

    /// Full in-graph image pass keeping every block output.
    pub fn image_forward(&self, g: &mut Graph, patches: Tensor) -> ImageNodes {
        let x = g.input(patches);
        let x = self.linear(g, x, "img.patch_w", "img.patch_b");
        let pos = g.named(&self.params, "img.pos");
        let mut x = g.add(x, pos);
        let mut per_layer = Vec::with_capacity(self.cfg.layers);
        for i in 0..self.cfg.layers {
            x = self.block(g, x, &format!("img.b{i}"));
            per_layer.push(x);
        }
        let (locals, global) = self.pool(g, "img", x);
        ImageNodes { per_layer, locals, global }
    }

    /// Embedding plus blocks 1..=k only; returns the layer-k residual
    /// stream for feature mixing.
    pub fn image_trunk(&self, g: &mut Graph, patches: Tensor, k: usize) -> NodeId {
        let x = g.input(patches);
        let x = self.linear(g, x, "img.patch_w", "img.patch_b");
        let pos = g.named(&self.params, "img.pos");
        let mut x = g.add(x, pos);
        for i in 0..k {
            x = self.block(g, x, &format!("img.b{i}"));
        }
        x
    }

    /// Resume from saved (or mixed) layer-k activations: runs blocks
    /// k+1..L then the shared pooling tail.
    pub fn image_resume(&self, g: &mut Graph, features: NodeId, k: usize) -> (NodeId, NodeId) {
        let mut x = features;
        for i in k..self.cfg.layers {
            x = self.block(g, x, &format!("img.b{i}"));
        }
        self.pool(g, "img", x)
    }

    /// Token ids + sentence spans for a report under the crate tokenizer.
    pub fn tokenize_report(&self, sentences: &[String]) -> Result<(Vec<usize>, Vec<(usize, usize)>)> {
        if sentences.is_empty() {
            return Err(Error::Invariant("empty report".into()));
        }
        let mut ids = Vec::new();
        let mut spans = Vec::with_capacity(sentences.len());
        for s in sentences {
            let start = ids.len();
            for tok in tokenize(s) {
                ids.push(self.vocab.id(&tok));
            }
            spans.push((start, ids.len()));
        }
        if ids.is_empty() {
            return Err(Error::Invariant("report tokenized to zero tokens".into()));
        }
        if ids.len() > self.cfg.max_tokens {
            return Err(Error::Invariant(format!(
                "report has {} tokens, max is {}",
                ids.len(),
                self.cfg.max_tokens
            )));
        }
        Ok((ids, spans))
    }

    /// In-graph text pass.
    pub fn text_forward(&self, g: &mut Graph, ids: &[usize]) -> (NodeId, NodeId) {
        let tok = g.named(&self.params, "txt.tok");
        let pos = g.named(&self.params, "txt.pos");
        let emb = g.gather_rows(tok, ids);
        let pos_rows: Vec<usize> = (0..ids.len()).collect();
        let pos_emb = g.gather_rows(pos, &pos_rows);
        let mut x = g.add(emb, pos_emb);
        for i in 0..self.cfg.layers {
            x = self.block(g, x, &format!("txt.b{i}"));
        }
        self.pool(g, "txt", x)
    }

    /// Inference-only image encode saving layer-k intermediates.
    pub fn image_encode(&self, image: &ImageSample, save_layer: usize) -> Result<EmbeddingSet> {
        if save_layer == 0 || save_layer > self.cfg.layers {
            return Err(Error::Config(format!(
                "save_layer {save_layer} outside 1..={}",
                self.cfg.layers
            )));
        }
        let patches = self.patchify(image)?;
        let mut g = Graph::new();
        let nodes = self.image_forward(&mut g, patches);
        Ok(EmbeddingSet {
            global: g.value(nodes.global).data.clone(),
            locals: g.value(nodes.locals).clone(),
            spans: None,
            intermediates: Some(g.value(nodes.per_layer[save_layer - 1]).clone()),
        })
    }

    /// Inference-only resume pass from layer-k features.
    pub fn image_encode_resume(&self, features: &Tensor, k: usize) -> Result<EmbeddingSet> {
        let d = self.cfg.embed_dim;
        if features.rows() != self.cfg.n_patches() || features.cols() != d {
            return Err(Error::Shape {
                expected: format!("{}x{d}", self.cfg.n_patches()),
                got: format!("{}x{}", features.rows(), features.cols()),
            });
        }
        let mut g = Graph::new();
        let f = g.input(features.clone());
        let (locals, global) = self.image_resume(&mut g, f, k);
        Ok(EmbeddingSet {
            global: g.value(global).data.clone(),
            locals: g.value(locals).clone(),
            spans: None,
            intermediates: None,
        })
    }

    /// Inference-only text encode with sentence span bookkeeping.
    pub fn text_encode(&self, sentences: &[String]) -> Result<EmbeddingSet> {
        let (ids, spans) = self.tokenize_report(sentences)?;
        let mut g = Graph::new();
        let (locals, global) = self.text_forward(&mut g, &ids);
        Ok(EmbeddingSet {
            global: g.value(global).data.clone(),
            locals: g.value(locals).clone(),
            spans: Some(spans),
            intermediates: None,
        })
    }
}

/// Rows of text locals covered by mask-1 sentences (Cutout on embeddings).
pub fn select_sentence_rows(
    locals: &Tensor,
    spans: &[(usize, usize)],
    mask_bits: &[bool],
) -> Result<Tensor> {
    if spans.len() != mask_bits.len() {
        return Err(Error::Shape {
            expected: format!("{} spans", mask_bits.len()),
            got: format!("{}", spans.len()),
        });
    }
    let d = locals.cols();
    let mut rows: Vec<f64> = Vec::new();
    let mut count = 0;
    for (span, &on) in spans.iter().zip(mask_bits) {
        if on {
            for r in span.0..span.1 {
                rows.extend_from_slice(locals.row(r));
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptySelection);
    }
    Tensor::from_vec(&[count, d], rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use crate::nn::tensor::l2_norm;

    fn tiny_model() -> Model {
        let vocab = Vocab::build(
            ["there is pneumonia .", "heart size is normal .", "no evidence of edema ."]
                .iter()
                .copied(),
        );
        Model::new(EncoderConfig { seed: 7, ..Default::default() }, vocab).unwrap()
    }

    #[test]
    fn tokenizer_counts() {
        assert_eq!(tokenize("There is pneumonia."), vec!["there", "is", "pneumonia", "."]);
        assert_eq!(tokenize("There is pneumonia.").len(), 4);
    }

    #[test]
    fn patch_count_and_unit_norm() {
        let model = tiny_model();
        let cfg = SynthConfig { n_pairs: 1, ..Default::default() };
        let rec = &generate_synthetic(&cfg).unwrap()[0];
        let e = model.image_encode(&rec.image, 4).unwrap();
        assert_eq!(e.locals.rows(), 16); // (32/8)²
        assert!((l2_norm(&e.global) - 1.0).abs() < 1e-9);
        // determinism
        let e2 = model.image_encode(&rec.image, 4).unwrap();
        assert_eq!(e.global, e2.global);
        assert_eq!(e.locals, e2.locals);
    }

    #[test]
    fn constant_image_patches_equal_before_positions() {
        let model = tiny_model();
        let img = ImageSample::new("z".into(), 32, 32, 1, vec![0.0; 1024]).unwrap();
        let patches = model.patchify(&img).unwrap();
        for r in 1..patches.rows() {
            assert_eq!(patches.row(r), patches.row(0));
        }
        // after positional encoding the locals differ
        let e = model.image_encode(&img, 1).unwrap();
        let inter = e.intermediates.unwrap();
        assert_ne!(inter.row(0), inter.row(1));
    }

    #[test]
    fn resume_reproduces_full_encode_for_every_layer() {
        let model = tiny_model();
        let cfg = SynthConfig { n_pairs: 1, seed: 3, ..Default::default() };
        let rec = &generate_synthetic(&cfg).unwrap()[0];
        for k in 1..=model.cfg.layers {
            let full = model.image_encode(&rec.image, k).unwrap();
            let resumed = model
                .image_encode_resume(full.intermediates.as_ref().unwrap(), k)
                .unwrap();
            for (a, b) in full.global.iter().zip(&resumed.global) {
                assert!((a - b).abs() < 1e-12, "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn resume_with_mixed_features_moves_the_global() {
        let model = tiny_model();
        let cfg = SynthConfig { n_pairs: 2, seed: 9, ..Default::default() };
        let recs = generate_synthetic(&cfg).unwrap();
        let k = 2;
        let a = model.image_encode(&recs[0].image, k).unwrap();
        let b = model.image_encode(&recs[1].image, k).unwrap();
        let (ia, ib) = (a.intermediates.unwrap(), b.intermediates.unwrap());
        let mixed = Tensor::from_vec(
            &ia.shape,
            ia.data.iter().zip(&ib.data).map(|(x, y)| 0.5 * x + 0.5 * y).collect(),
        )
        .unwrap();
        let m = model.image_encode_resume(&mixed, k).unwrap();
        let da: f64 = m.global.iter().zip(&a.global).map(|(x, y)| (x - y).abs()).sum();
        let db: f64 = m.global.iter().zip(&b.global).map(|(x, y)| (x - y).abs()).sum();
        assert!(da > 1e-9 && db > 1e-9);
    }

    #[test]
    fn text_spans_partition_tokens() {
        let model = tiny_model();
        let sentences = vec!["Heart size is normal.".to_string(), "There is pneumonia.".to_string()];
        let e = model.text_encode(&sentences).unwrap();
        let spans = e.spans.clone().unwrap();
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].0, 0);
        assert_eq!(spans[0].1, spans[1].0);
        assert_eq!(spans[1].1, e.locals.rows());
        assert!((l2_norm(&e.global) - 1.0).abs() < 1e-9);

        // Cutout on embeddings selects exactly sentence 2's token rows
        let sel = select_sentence_rows(&e.locals, &spans, &[false, true]).unwrap();
        assert_eq!(sel.rows(), spans[1].1 - spans[1].0);
        for r in 0..sel.rows() {
            assert_eq!(sel.row(r), e.locals.row(spans[1].0 + r));
        }
        // single sentence: full selection
        let one = model.text_encode(&sentences[1..]).unwrap();
        let sel_all =
            select_sentence_rows(&one.locals, one.spans.as_ref().unwrap(), &[true]).unwrap();
        assert_eq!(sel_all, one.locals);
    }
}
