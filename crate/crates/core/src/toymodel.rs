//! A small differentiable classifier: token embeddings, mean pooling, a
//! linear head and a logistic output. It stands in for the fine-tuned
//! transformer so that attribution can be run and checked end to end.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, FoldPlan, Label};
use crate::error::{Error, Result};

/// Token reserved for out-of-vocabulary words; always row 0.
pub const UNKNOWN_TOKEN: &str = "<unk>";

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy evaluated on the logit, stable for large |z|.
pub fn bce_with_logits(z: f64, target: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary with [`UNKNOWN_TOKEN`] at index 0 followed by
    /// `tokens` in iteration order (duplicates ignored).
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab {
            tokens: vec![UNKNOWN_TOKEN.to_string()],
            index: HashMap::from([(UNKNOWN_TOKEN.to_string(), 0)]),
        };
        for token in tokens {
            let token = token.into();
            if !vocab.index.contains_key(&token) {
                vocab.index.insert(token.clone(), vocab.tokens.len());
                vocab.tokens.push(token);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub vocab: Vocab,
    /// One row per vocabulary entry.
    pub embeddings: Array2<f64>,
    pub head_weights: Array1<f64>,
    pub head_bias: f64,
    /// Longer inputs are truncated to this many tokens.
    pub max_tokens: usize,
}

impl ModelParams {
    /// Embeddings uniform in ±1/√d, zero head.
    pub fn init(vocab: Vocab, dim: usize, max_tokens: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be ≥ 1".into(),
            ));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let embeddings = Array2::from_shape_fn((vocab.len(), dim), |_| dist.sample(rng));
        Ok(ModelParams {
            vocab,
            embeddings,
            head_weights: Array1::zeros(dim),
            head_bias: 0.0,
            max_tokens,
        })
    }

    pub fn dim(&self) -> usize {
        self.head_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::Shape("embedding dimension is 0".into()));
        }
        if self.embeddings.nrows() != self.vocab.len() || self.embeddings.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "embedding matrix is {}x{}, expected {}x{}",
                self.embeddings.nrows(),
                self.embeddings.ncols(),
                self.vocab.len(),
                self.dim()
            )));
        }
        if !self
            .embeddings
            .iter()
            .chain(self.head_weights.iter())
            .all(|v| v.is_finite())
            || !self.head_bias.is_finite()
        {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(())
    }

    /// Vocabulary indices of `tokens`, truncated to `max_tokens`.
    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .take(self.max_tokens)
            .map(|t| self.vocab.index_of(t))
            .collect()
    }

    /// Looks up the embedding rows of `tokens` (after truncation).
    pub fn embed(&self, tokens: &[String]) -> Result<Array2<f64>> {
        let ids = self.token_ids(tokens);
        if ids.is_empty() {
            return Err(Error::EmptyInput("token sequence"));
        }
        Ok(self.embeddings.select(Axis(0), &ids))
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::EmptyInput("token embeddings"));
        }
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, model dimension is {}",
                x.ncols(),
                self.dim()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("token embeddings"));
        }
        Ok(())
    }

    pub fn logit(&self, x: ArrayView2<f64>) -> Result<f64> {
        self.check_input(x)?;
        let pooled = x.mean_axis(Axis(0)).expect("nonempty input");
        Ok(pooled.dot(&self.head_weights) + self.head_bias)
    }

    /// F(x): probability of the AD class.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<f64> {
        Ok(logistic(self.logit(x)?))
    }

    /// ∂logit/∂x: every row equals `head_weights / n`.
    pub fn grad_logit_embeddings(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let row = &self.head_weights / x.nrows() as f64;
        Ok(row
            .broadcast(x.raw_dim())
            .expect("row broadcasts")
            .to_owned())
    }

    /// ∂F/∂x = F(1 − F) · w / n for every entry of row i, column j.
    pub fn grad_embeddings(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let p = self.forward(x)?;
        let mut grad = self.grad_logit_embeddings(x)?;
        grad *= p * (1.0 - p);
        Ok(grad)
    }

    pub fn predict_tokens(&self, tokens: &[String]) -> Result<f64> {
        let x = self.embed(tokens)?;
        self.forward(x.view())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dim: self.dim(),
            max_tokens: self.max_tokens,
            vocab: self.vocab.tokens.clone(),
            embeddings: self.embeddings.outer_iter().map(|r| r.to_vec()).collect(),
            head_weights: self.head_weights.to_vec(),
            head_bias: self.head_bias,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        if ckpt.vocab.first().map(String::as_str) != Some(UNKNOWN_TOKEN) {
            return Err(Error::InvalidArgument(format!(
                "checkpoint vocabulary must start with {UNKNOWN_TOKEN}"
            )));
        }
        let rows = ckpt.embeddings.len();
        let flat: Vec<f64> = ckpt.embeddings.into_iter().flatten().collect();
        let embeddings = Array2::from_shape_vec((rows, ckpt.dim), flat)
            .map_err(|e| Error::Shape(format!("checkpoint embeddings: {e}")))?;
        let vocab = Vocab::new(ckpt.vocab.into_iter().skip(1));
        let params = ModelParams {
            vocab,
            embeddings,
            head_weights: Array1::from(ckpt.head_weights),
            head_bias: ckpt.head_bias,
            max_tokens: ckpt.max_tokens,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        Self::from_checkpoint(ckpt)
    }
}

pub const CHECKPOINT_FORMAT: &str = "slime-toymodel";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint layout. `vocab[i]` names row `i` of `embeddings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub max_tokens: usize,
    pub vocab: Vec<String>,
    pub embeddings: Vec<Vec<f64>>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_tokens: usize,
    pub embedding_dim: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            weight_decay: 0.0,
            adam_eps: 1e-8,
            epochs: 200,
            batch_size: 1,
            max_tokens: 512,
            embedding_dim: 16,
            folds: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("train.{field}"), msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be finite and non-negative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be finite and non-negative");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens", "must be at least 1");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim", "must be at least 1");
        }
        if self.folds < 2 {
            return bad("folds", "must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub params: ModelParams,
    pub val_accuracy: f64,
    /// Mean training loss after each epoch.
    pub train_losses: Vec<f64>,
}

/// First-moment and second-moment state of AdamW for one parameter tensor.
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = f64>,
        cfg: &TrainConfig,
        t: i32,
    ) {
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps) + cfg.weight_decay * *p;
            *p -= cfg.learning_rate * update;
        }
    }
}

fn target_of(label: Label) -> f64 {
    f64::from(label.as_u8())
}

fn mean_loss(params: &ModelParams, docs: &[(Vec<usize>, f64)]) -> f64 {
    let total: f64 = docs
        .iter()
        .map(|(ids, y)| {
            let x = params.embeddings.select(Axis(0), ids);
            let z = params.logit(x.view()).expect("validated input");
            bce_with_logits(z, *y)
        })
        .sum();
    total / docs.len() as f64
}

/// Trains a fresh model on `docs`. `stream` selects an independent random
/// stream for initialization and shuffling.
pub fn fit(docs: &[&Document], cfg: &TrainConfig, stream: u64) -> Result<(ModelParams, Vec<f64>)> {
    cfg.validate()?;
    let docs: Vec<&Document> = docs
        .iter()
        .copied()
        .filter(|d| !d.tokens.is_empty())
        .collect();
    if docs.is_empty() {
        return Err(Error::EmptyInput("training fold"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);

    let words: BTreeSet<&str> = docs
        .iter()
        .flat_map(|d| d.tokens.iter().take(cfg.max_tokens).map(String::as_str))
        .collect();
    let vocab = Vocab::new(words);
    let mut params = ModelParams::init(vocab, cfg.embedding_dim, cfg.max_tokens, &mut rng)?;
    let examples: Vec<(Vec<usize>, f64)> = docs
        .iter()
        .map(|d| (params.token_ids(&d.tokens), target_of(d.label)))
        .collect();

    let dim = params.dim();
    let mut emb_moments = Moments::new(params.embeddings.len());
    let mut head_moments = Moments::new(dim + 1);
    let mut emb_grad = Array2::<f64>::zeros(params.embeddings.raw_dim());
    let mut head_grad = vec![0.0; dim + 1];
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut t = 0i32;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            emb_grad.fill(0.0);
            head_grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (ids, y) = &examples[i];
                let n = ids.len() as f64;
                let pooled = params
                    .embeddings
                    .select(Axis(0), ids)
                    .mean_axis(Axis(0))
                    .expect("nonempty document");
                let z = pooled.dot(&params.head_weights) + params.head_bias;
                let residual = (logistic(z) - y) * scale;
                for (g, h) in head_grad.iter_mut().zip(pooled.iter()) {
                    *g += residual * h;
                }
                head_grad[dim] += residual;
                for &id in ids {
                    let mut row = emb_grad.row_mut(id);
                    row.scaled_add(residual / n, &params.head_weights);
                }
            }
            t += 1;
            emb_moments.step(
                params.embeddings.iter_mut(),
                emb_grad.iter().copied(),
                cfg,
                t,
            );
            let ModelParams {
                head_weights,
                head_bias,
                ..
            } = &mut params;
            head_moments.step(
                head_weights.iter_mut().chain(std::iter::once(head_bias)),
                head_grad.iter().copied(),
                cfg,
                t,
            );
        }
        losses.push(mean_loss(&params, &examples));
    }
    params.validate()?;
    Ok((params, losses))
}

/// Fraction of `docs` classified correctly with threshold F(x) > 0.5 → AD.
/// Documents without tokens are skipped.
pub fn accuracy(params: &ModelParams, docs: &[&Document]) -> Result<f64> {
    let mut correct = 0usize;
    let mut seen = 0usize;
    for doc in docs {
        if doc.tokens.is_empty() {
            continue;
        }
        let predicted = if params.predict_tokens(&doc.tokens)? > 0.5 {
            Label::Ad
        } else {
            Label::Control
        };
        seen += 1;
        correct += usize::from(predicted == doc.label);
    }
    if seen == 0 {
        return Err(Error::EmptyInput("validation fold"));
    }
    Ok(correct as f64 / seen as f64)
}

/// Cross-validated training: one model per fold, evaluated on its held-out fold.
pub fn train(corpus: &Corpus, folds: &FoldPlan, cfg: &TrainConfig) -> Result<Vec<FoldResult>> {
    (0..folds.k())
        .map(|fold| {
            let (training, validation) = folds.split(corpus, fold);
            let (params, train_losses) = fit(&training, cfg, fold as u64)?;
            let val_accuracy = accuracy(&params, &validation)?;
            Ok(FoldResult {
                fold,
                params,
                val_accuracy,
                train_losses,
            })
        })
        .collect()
}

/// Highest validation accuracy; ties go to the lowest fold index.
pub fn select_best_fold(results: &[FoldResult]) -> Result<&FoldResult> {
    let mut best: Option<&FoldResult> = None;
    for result in results {
        if best.is_none_or(|b| result.val_accuracy > b.val_accuracy) {
            best = Some(result);
        }
    }
    best.ok_or(Error::EmptyInput("fold results"))
}
