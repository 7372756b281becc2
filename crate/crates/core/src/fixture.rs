//! Synthetic picture-description corpus with planted class markers.
//!
//! Every document mixes scene words, function words and two "setting" words
//! drawn independently of the class. AD documents additionally contain
//! hesitation fillers (`uh`, `um`, ...) and control documents precise action
//! words (`overflowing`, `wobbling`, ...). The bundled dictionary maps these
//! onto categories, so a working pipeline must flag `filler` as an AD
//! feature and leave `setting` alone.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, Label};

pub const FIXTURE_SEED: u64 = 2024;
pub const FIXTURE_DOCS: usize = 60;

pub const CORPUS_JSONL: &str = include_str!("../fixtures/synthetic/corpus.jsonl");
pub const DICTIONARY: &str = include_str!("../fixtures/synthetic/dictionary.dic");
pub const CONFIG: &str = include_str!("../fixtures/synthetic/slime.toml");

const SCENE: &[&str] = &[
    "boy", "girl", "mother", "cookie", "jar", "stool", "sink", "water", "dishes", "plate", "cup",
    "window", "curtain", "kitchen", "floor", "cabinet", "shelf", "lid", "counter", "apron",
    "shoes", "hand", "dish", "towel", "faucet", "puddle", "door", "falling", "reaching", "washing",
    "drying", "standing", "spilling", "taking", "handing", "looking", "climbing",
];
const FUNCTION: &[&str] = &[
    "the", "a", "is", "and", "she", "he", "her", "his", "on", "in", "of", "to",
];
const SETTING: &[&str] = &[
    "yard",
    "sunny",
    "outside",
    "summer",
    "afternoon",
    "house",
    "room",
    "wall",
    "tile",
    "light",
    "glass",
    "bushes",
    "path",
    "grass",
    "fence",
    "sky",
    "cloud",
    "garden",
    "porch",
    "street",
];
const AD_MARKERS: &[&str] = &["uh", "um", "er", "hmm"];
const CONTROL_MARKERS: &[&str] = &["overflowing", "wobbling", "tipping", "distracted"];

fn document(rng: &mut ChaCha8Rng, label: Label) -> String {
    let mut words: Vec<&str> = Vec::new();
    for _ in 0..rng.random_range(10..15) {
        words.push(SCENE.choose(rng).expect("nonempty"));
    }
    for _ in 0..rng.random_range(4..7) {
        words.push(FUNCTION.choose(rng).expect("nonempty"));
    }
    for _ in 0..2 {
        words.push(SETTING.choose(rng).expect("nonempty"));
    }
    let markers = match label {
        Label::Ad => AD_MARKERS,
        Label::Control => CONTROL_MARKERS,
    };
    for _ in 0..rng.random_range(2..4) {
        words.push(markers.choose(rng).expect("nonempty"));
    }
    // shuffle, then punctuate into two sentences
    for i in (1..words.len()).rev() {
        let j = rng.random_range(0..=i);
        words.swap(i, j);
    }
    let split = words.len() / 2;
    let mut text = words[..split].join(" ");
    if let Some(first) = text.get(..1) {
        text.replace_range(..1, &first.to_uppercase());
    }
    text.push_str(". ");
    text.push_str(&words[split..].join(" "));
    text.push('.');
    text
}

/// `n_docs` documents, alternating AD and control, deterministic in `seed`.
pub fn generate_corpus(n_docs: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (0..n_docs)
        .map(|i| {
            let label = if i % 2 == 0 {
                Label::Ad
            } else {
                Label::Control
            };
            let prefix = match label {
                Label::Ad => "ad",
                Label::Control => "ctl",
            };
            Document::new(
                format!("{prefix}{:03}", i / 2),
                label,
                document(&mut rng, label),
            )
        })
        .collect();
    Corpus::new(docs).expect("generated ids are unique")
}

pub fn bundled_corpus() -> Corpus {
    Corpus::from_jsonl_str(
        CORPUS_JSONL,
        std::path::Path::new("fixtures/synthetic/corpus.jsonl"),
    )
    .expect("bundled corpus parses")
}

pub fn bundled_dictionary() -> crate::tagging::CategoryDictionary {
    crate::tagging::CategoryDictionary::parse_str(
        DICTIONARY,
        std::path::Path::new("fixtures/synthetic/dictionary.dic"),
    )
    .expect("bundled dictionary parses")
}
