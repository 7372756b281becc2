//! Labeled transcripts, word-level tokenization and stratified k-fold plans.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagnostic class of a document. Serialized as `0` (control) or `1` (AD).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub enum Label {
    Control,
    Ad,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Control => 0,
            Label::Ad => 1,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Control => Label::Ad,
            Label::Ad => Label::Control,
        }
    }
}

impl TryFrom<i64> for Label {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        match value {
            0 => Ok(Label::Control),
            1 => Ok(Label::Ad),
            other => Err(Error::InvalidLabel(other)),
        }
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label.as_u8()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    F,
    M,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub label: Label,
    pub text: String,
    pub tokens: Vec<String>,
    pub meta: Option<Meta>,
}

impl Document {
    pub fn new(id: impl Into<String>, label: Label, text: impl Into<String>) -> Self {
        let text = text.into();
        Document {
            id: id.into(),
            label,
            tokens: tokenize(&text),
            text,
            meta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub control: usize,
    pub ad: usize,
}

impl ClassCounts {
    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Control => self.control,
            Label::Ad => self.ad,
        }
    }

    pub fn total(&self) -> usize {
        self.control + self.ad
    }
}

/// On-disk corpus layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// `*.txt` files plus `labels.csv` (`id,label`).
    PlainDir,
    /// One `{"id", "label", "text", "meta"?}` object per line.
    Jsonl,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain-dir" => Ok(CorpusFormat::PlainDir),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::InvalidArgument(format!(
                "unknown corpus format {other:?} (expected plain-dir or jsonl)"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRecord {
    id: String,
    label: Label,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<Meta>,
}

impl Corpus {
    /// Builds a corpus, ordering documents by id and rejecting duplicates.
    pub fn new(mut documents: Vec<Document>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        documents.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in documents.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateId(pair[0].id.clone()));
            }
        }
        Ok(Corpus { documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents
            .binary_search_by(|d| d.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.documents[i])
    }

    pub fn class_counts(&self) -> ClassCounts {
        let mut counts = ClassCounts::default();
        for doc in &self.documents {
            match doc.label {
                Label::Control => counts.control += 1,
                Label::Ad => counts.ad += 1,
            }
        }
        counts
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            let record = JsonlRecord {
                id: doc.id.clone(),
                label: doc.label,
                text: doc.text.clone(),
                meta: doc.meta.clone(),
            };
            out.push_str(&serde_json::to_string(&record).expect("corpus record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Parses jsonl text; `origin` is only used in error messages.
    pub fn from_jsonl_str(text: &str, origin: &Path) -> Result<Self> {
        let mut documents = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: JsonlRecord = serde_json::from_str(line)
                .map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?;
            let mut doc = Document::new(record.id, record.label, record.text);
            doc.meta = record.meta;
            documents.push(doc);
        }
        Corpus::new(documents)
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    match format {
        CorpusFormat::Jsonl => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Corpus::from_jsonl_str(&text, path)
        }
        CorpusFormat::PlainDir => load_plain_dir(path),
    }
}

fn load_plain_dir(dir: &Path) -> Result<Corpus> {
    let labels_path = dir.join("labels.csv");
    let mut texts = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        texts.insert(id.to_string(), text);
    }
    if texts.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let labels = read_labels(&labels_path)?;
    for id in labels.keys() {
        if !texts.contains_key(id) {
            return Err(Error::OrphanLabel(id.clone()));
        }
    }
    let mut documents = Vec::with_capacity(texts.len());
    for (id, text) in texts {
        let label = *labels
            .get(&id)
            .ok_or_else(|| Error::MissingLabel(id.clone()))?;
        documents.push(Document::new(id, label, text));
    }
    Corpus::new(documents)
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, Label>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = BTreeMap::new();
    let mut lines = BufReader::new(file).lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header.trim() == "id,label" => {}
        Some((_, Err(e))) => return Err(Error::io(path, e)),
        _ => return Err(Error::parse(path, 1, "expected header \"id,label\"")),
    }
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (id, label) = line
            .rsplit_once(',')
            .ok_or_else(|| Error::parse(path, idx + 1, "expected \"id,label\""))?;
        let label: i64 = label
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, idx + 1, format!("invalid label {label:?}")))?;
        let label = Label::try_from(label)?;
        if labels.insert(id.trim().to_string(), label).is_some() {
            return Err(Error::DuplicateId(id.trim().to_string()));
        }
    }
    Ok(labels)
}

/// Lowercases `text`, splits on Unicode whitespace and emits every
/// non-alphanumeric character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in lowered.chars() {
        if ch.is_whitespace() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
        } else if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Stratified assignment of document ids to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &BTreeMap<String, usize> {
        &self.assignments
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &fold in self.assignments.values() {
            sizes[fold] += 1;
        }
        sizes
    }

    pub fn validation_ids(&self, fold: usize) -> BTreeSet<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Splits the corpus into (training, validation) documents for one fold.
    pub fn split<'a>(
        &self,
        corpus: &'a Corpus,
        fold: usize,
    ) -> (Vec<&'a Document>, Vec<&'a Document>) {
        corpus
            .documents()
            .iter()
            .partition(|doc| self.fold_of(&doc.id) != Some(fold))
    }
}

/// Deals each class, shuffled with `seed`, round-robin over the folds. The
/// second class continues where the first one stopped so that overall fold
/// sizes stay within one of each other.
pub fn kfold_split(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Folds(format!("k must be at least 2, got {k}")));
    }
    let counts = corpus.class_counts();
    for label in [Label::Control, Label::Ad] {
        if counts.get(label) < k {
            return Err(Error::Folds(format!(
                "class {label} has {} documents, fewer than k = {k}",
                counts.get(label)
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    let mut next = 0usize;
    for label in [Label::Control, Label::Ad] {
        let mut ids: Vec<&str> = corpus
            .documents()
            .iter()
            .filter(|d| d.label == label)
            .map(|d| d.id.as_str())
            .collect();
        ids.shuffle(&mut rng);
        for id in ids {
            assignments.insert(id.to_string(), next % k);
            next += 1;
        }
    }
    Ok(FoldPlan { k, assignments })
}
