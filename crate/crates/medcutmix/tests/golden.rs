//! Pins the committed golden corpus: regenerating with its manifest seed
//! must reproduce the committed bytes exactly.

use std::fs;
use std::path::PathBuf;

use medcutmix::corpus::{generate_synthetic, load_corpus, save_corpus, CorpusSchema, SynthConfig};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../testdata/golden")
}

#[test]
fn golden_corpus_loads() {
    let recs = load_corpus(&golden_dir().join("corpus.jsonl"), CorpusSchema { patch_size: 8 }).unwrap();
    assert_eq!(recs.len(), 8);
    for rec in &recs {
        assert_eq!((rec.image.height, rec.image.width), (32, 32));
        assert!(!rec.report.sentences.is_empty());
    }
}

#[test]
fn golden_corpus_regenerates_byte_identically() {
    let cfg = SynthConfig { n_pairs: 8, seed: 42, ..Default::default() };
    let recs = generate_synthetic(&cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    save_corpus(&recs, tmp.path()).unwrap();
    let golden = golden_dir();
    assert_eq!(
        fs::read(tmp.path().join("corpus.jsonl")).unwrap(),
        fs::read(golden.join("corpus.jsonl")).unwrap(),
        "JSONL drifted from the committed golden corpus"
    );
    for i in 0..8 {
        let name = format!("images/pair-{i:05}.pgm");
        assert_eq!(
            fs::read(tmp.path().join(&name)).unwrap(),
            fs::read(golden.join(&name)).unwrap(),
            "{name} drifted from the committed golden corpus"
        );
    }
}
