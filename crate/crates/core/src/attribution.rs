//! Integrated Gradients over the embedding layer.
//!
//! For an input `x` and baseline `x'` (both `n × d`), the attribution of entry
//! `(i, j)` is `(x - x')[i, j]` times the average of `∂F/∂x[i, j]` along the
//! straight line `x' + α (x - x')`, α ∈ [0, 1]. The average is approximated
//! with `m` quadrature steps. Summing each row gives the scalar attribution of
//! token `i`; the token attributions add up to `F(x) - F(x')` up to the
//! quadrature error, which is reported as the completeness residual.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Label};
use crate::error::{Error, Result};
use crate::toymodel::ModelParams;

/// A scalar function of an `n × d` embedding matrix with an analytic gradient.
pub trait Differentiable {
    fn value(&self, x: ArrayView2<f64>) -> Result<f64>;
    fn gradient(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureRule {
    /// Riemann sum at α = k/m, k = 0..m-1.
    Left,
    /// Trapezoid rule on the grid α = k/m, k = 0..=m.
    #[default]
    Trapezoid,
}

/// Which model output the attributions explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributionTarget {
    #[default]
    Probability,
    Logit,
}

impl FromStr for QuadratureRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(QuadratureRule::Left),
            "trapezoid" => Ok(QuadratureRule::Trapezoid),
            other => Err(Error::InvalidArgument(format!(
                "unknown quadrature rule {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IgConfig {
    pub steps: usize,
    pub rule: QuadratureRule,
    pub target: AttributionTarget,
}

impl Default for IgConfig {
    fn default() -> Self {
        IgConfig {
            steps: 512,
            rule: QuadratureRule::Trapezoid,
            target: AttributionTarget::Probability,
        }
    }
}

impl IgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("ig.steps", "must be at least 1"));
        }
        Ok(())
    }
}

/// The toy classifier viewed as a function of its embedded input.
#[derive(Debug, Clone, Copy)]
pub struct ModelTarget<'a> {
    pub params: &'a ModelParams,
    pub target: AttributionTarget,
}

impl<'a> ModelTarget<'a> {
    pub fn new(params: &'a ModelParams, target: AttributionTarget) -> Self {
        ModelTarget { params, target }
    }
}

impl Differentiable for ModelTarget<'_> {
    fn value(&self, x: ArrayView2<f64>) -> Result<f64> {
        match self.target {
            AttributionTarget::Probability => self.params.forward(x),
            AttributionTarget::Logit => self.params.logit(x),
        }
    }

    fn gradient(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self.target {
            AttributionTarget::Probability => self.params.grad_embeddings(x),
            AttributionTarget::Logit => self.params.grad_logit_embeddings(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionResult {
    pub per_dim: Array2<f64>,
    pub per_token: Array1<f64>,
    pub f_x: f64,
    pub f_baseline: f64,
    pub completeness_residual: f64,
}

/// The all-zero baseline standing for absent tokens.
pub fn make_baseline(n: usize, d: usize) -> Array2<f64> {
    Array2::zeros((n, d))
}

/// Sums each row: one signed scalar per token.
pub fn reduce_token_attribution(per_dim: ArrayView2<f64>) -> Array1<f64> {
    per_dim.sum_axis(Axis(1))
}

pub fn integrated_gradients<M: Differentiable + ?Sized>(
    model: &M,
    input: ArrayView2<f64>,
    baseline: ArrayView2<f64>,
    cfg: &IgConfig,
) -> Result<AttributionResult> {
    cfg.validate()?;
    if input.shape() != baseline.shape() {
        return Err(Error::Shape(format!(
            "input is {:?}, baseline is {:?}",
            input.shape(),
            baseline.shape()
        )));
    }
    if !input.iter().chain(baseline.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("attribution input"));
    }

    let delta = &input - &baseline;
    let m = cfg.steps;
    let mut point = baseline.to_owned();
    let mut avg_grad = Array2::<f64>::zeros(input.raw_dim());
    let mut accumulate = |alpha: f64, weight: f64| -> Result<()> {
        Zip::from(&mut point)
            .and(&baseline)
            .and(&delta)
            .for_each(|p, &b, &d| *p = b + alpha * d);
        let grad = model.gradient(point.view())?;
        if grad.shape() != avg_grad.shape() {
            return Err(Error::Shape("gradient shape differs from input".into()));
        }
        avg_grad.scaled_add(weight, &grad);
        Ok(())
    };
    let h = 1.0 / m as f64;
    match cfg.rule {
        QuadratureRule::Left => {
            for k in 0..m {
                accumulate(k as f64 * h, h)?;
            }
        }
        QuadratureRule::Trapezoid => {
            accumulate(0.0, 0.5 * h)?;
            for k in 1..m {
                accumulate(k as f64 * h, h)?;
            }
            accumulate(1.0, 0.5 * h)?;
        }
    }

    let per_dim = delta * avg_grad;
    if !per_dim.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("attributions"));
    }
    let per_token = reduce_token_attribution(per_dim.view());
    let f_x = model.value(input)?;
    let f_baseline = model.value(baseline)?;
    let completeness_residual = (per_token.sum() - (f_x - f_baseline)).abs();
    Ok(AttributionResult {
        per_dim,
        per_token,
        f_x,
        f_baseline,
        completeness_residual,
    })
}

/// Token-level attributions of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributedDocument {
    pub id: String,
    pub label: Label,
    pub tokens: Vec<String>,
    pub attributions: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_x: Option<f64>,
}

impl AttributedDocument {
    fn check(&self) -> std::result::Result<(), String> {
        if self.tokens.len() != self.attributions.len() {
            return Err(format!(
                "document {:?} has {} tokens but {} attributions",
                self.id,
                self.tokens.len(),
                self.attributions.len()
            ));
        }
        if !self.attributions.iter().all(|a| a.is_finite()) {
            return Err(format!(
                "document {:?} has non-finite attributions",
                self.id
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttributedCorpus {
    pub documents: Vec<AttributedDocument>,
    /// Documents that were skipped, with the reason.
    pub warnings: Vec<String>,
}

impl AttributedCorpus {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&serde_json::to_string(doc).expect("attribution record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Parses the interchange format; `origin` appears in error messages.
    pub fn from_jsonl_str(text: &str, origin: &Path) -> Result<Self> {
        let mut documents = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let doc: AttributedDocument = serde_json::from_str(line)
                .map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?;
            doc.check()
                .map_err(|msg| Error::parse(origin, idx + 1, msg))?;
            if !seen.insert(doc.id.clone()) {
                return Err(Error::parse(
                    origin,
                    idx + 1,
                    format!("duplicate id {:?}", doc.id),
                ));
            }
            documents.push(doc);
        }
        if documents.is_empty() {
            return Err(Error::NoDocuments);
        }
        Ok(AttributedCorpus {
            documents,
            warnings: Vec::new(),
        })
    }
}

pub fn import_attributions(path: &Path) -> Result<AttributedCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AttributedCorpus::from_jsonl_str(&text, path)
}

fn attribute_document(
    params: &ModelParams,
    doc: &crate::corpus::Document,
    cfg: &IgConfig,
) -> Result<AttributedDocument> {
    let input = params.embed(&doc.tokens)?;
    let baseline = make_baseline(input.nrows(), input.ncols());
    let result = integrated_gradients(
        &ModelTarget::new(params, cfg.target),
        input.view(),
        baseline.view(),
        cfg,
    )?;
    Ok(AttributedDocument {
        id: doc.id.clone(),
        label: doc.label,
        tokens: doc.tokens[..input.nrows()].to_vec(),
        attributions: result.per_token.to_vec(),
        f_x: Some(result.f_x),
    })
}

/// Attributes every document of `corpus` with the zero baseline. Documents
/// without tokens are skipped and listed in `warnings`. Output follows corpus
/// order.
pub fn attribute_corpus(
    params: &ModelParams,
    corpus: &Corpus,
    cfg: &IgConfig,
) -> Result<AttributedCorpus> {
    cfg.validate()?;
    params.validate()?;
    let run = |doc: &crate::corpus::Document| -> Option<Result<AttributedDocument>> {
        (!doc.tokens.is_empty()).then(|| attribute_document(params, doc, cfg))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        corpus.documents().par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = corpus.documents().iter().map(run).collect();

    let mut out = AttributedCorpus::default();
    for (doc, result) in corpus.documents().iter().zip(results) {
        match result {
            Some(r) => out.documents.push(r?),
            None => out
                .warnings
                .push(format!("document {:?} has no tokens; skipped", doc.id)),
        }
    }
    if out.documents.is_empty() {
        return Err(Error::NoDocuments);
    }
    Ok(out)
}
