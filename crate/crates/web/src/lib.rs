//! Browser demo over the bundled synthetic corpus.
//!
//! The first call trains the toy classifier and attributes every document;
//! later calls reuse that session. Each exported function returns a JSON
//! string that carries ready-to-insert SVG markup next to the numbers.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use serde_json::{json, Value};
use slime_core::attribution::{
    attribute_corpus, integrated_gradients, make_baseline, AttributedCorpus, IgConfig, ModelTarget,
    QuadratureRule,
};
use slime_core::config::PipelineConfig;
use slime_core::corpus::{kfold_split, Corpus};
use slime_core::fixture::{bundled_corpus, bundled_dictionary, CONFIG};
use slime_core::report::{escape_xml, padded_range, render_bars, render_scatter, PlotSpec};
use slime_core::stats::{analyze_all, percentile, StatsConfig, TokenTable};
use slime_core::tagging::{tag_corpus, CategoryDictionary, TokenRecord};
use slime_core::toymodel::{select_best_fold, train, ModelParams};
use slime_core::Result;
use wasm_bindgen::prelude::*;

pub const MAX_LOG2_STEPS: u32 = 12;

pub struct Session {
    pub config: PipelineConfig,
    pub corpus: Corpus,
    pub params: ModelParams,
    pub attributed: AttributedCorpus,
    pub dictionary: CategoryDictionary,
    pub records: Vec<TokenRecord>,
}

impl Session {
    pub fn build() -> Result<Self> {
        let config = PipelineConfig::parse(CONFIG, Path::new(""))?;
        let corpus = bundled_corpus();
        let plan = kfold_split(&corpus, config.train.folds, config.seed)?;
        let folds = train(&corpus, &plan, &config.train)?;
        let params = select_best_fold(&folds)?.params.clone();
        let attributed = attribute_corpus(&params, &corpus, &config.ig)?;
        let dictionary = bundled_dictionary().with_excluded(&config.excluded);
        let records = tag_corpus(&attributed, &dictionary)?;
        Ok(Session {
            config,
            corpus,
            params,
            attributed,
            dictionary,
            records,
        })
    }

    fn stats_config(
        &self,
        n_subsamples: usize,
        low_pct: f64,
        high_pct: f64,
        seed: u64,
    ) -> Result<StatsConfig> {
        let cfg = StatsConfig {
            n_subsamples,
            low_pct,
            high_pct,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Document ids, labels and texts, plus the analyzable categories.
    pub fn overview(&self) -> Value {
        let documents: Vec<Value> = self
            .corpus
            .documents()
            .iter()
            .map(|d| json!({ "id": d.id, "label": d.label.as_u8(), "text": d.text }))
            .collect();
        json!({
            "documents": documents,
            "categories": self.dictionary.analyzable_categories(),
            "seed": self.config.seed,
        })
    }

    /// Completeness residual of one document against the number of steps,
    /// for both quadrature rules.
    pub fn convergence(&self, doc_id: &str, max_log2: u32) -> Result<Value> {
        let doc = self
            .corpus
            .get(doc_id)
            .ok_or_else(|| slime_core::Error::InvalidArgument(format!("no document {doc_id:?}")))?;
        let input = self.params.embed(&doc.tokens)?;
        let baseline = make_baseline(input.nrows(), input.ncols());
        let target = ModelTarget::new(&self.params, self.config.ig.target);
        let steps: Vec<usize> = (0..=max_log2.min(MAX_LOG2_STEPS))
            .map(|k| 1usize << k)
            .collect();
        let mut series = Vec::new();
        for rule in [QuadratureRule::Left, QuadratureRule::Trapezoid] {
            let residuals = steps
                .iter()
                .map(|&m| {
                    let cfg = IgConfig {
                        steps: m,
                        rule,
                        target: self.config.ig.target,
                    };
                    integrated_gradients(&target, input.view(), baseline.view(), &cfg)
                        .map(|r| r.completeness_residual.abs())
                })
                .collect::<Result<Vec<f64>>>()?;
            series.push(residuals);
        }
        let svg = render_convergence(&steps, &series[0], &series[1], &PlotSpec::default());
        let attributions = self
            .attributed
            .documents
            .iter()
            .find(|d| d.id == doc_id)
            .map(|d| json!({ "tokens": d.tokens, "values": d.attributions }));
        Ok(json!({
            "id": doc_id,
            "steps": steps,
            "left": series[0],
            "trapezoid": series[1],
            "attributions": attributions,
            "svg": svg,
        }))
    }

    /// Category significance table plus the scatter and bar charts.
    pub fn analyze(
        &self,
        n_subsamples: usize,
        low_pct: f64,
        high_pct: f64,
        seed: u64,
    ) -> Result<Value> {
        let cfg = self.stats_config(n_subsamples, low_pct, high_pct, seed)?;
        let stats = analyze_all(&self.records, &self.dictionary, &cfg)?;
        let spec = PlotSpec::default();
        Ok(json!({
            "rows": stats,
            "scatter": render_scatter(&stats, &spec)?,
            "bars": render_bars(&stats, &spec)?,
        }))
    }

    /// Histogram of the subset-mean null for one category with the observed
    /// mean and both thresholds marked.
    pub fn null_histogram(
        &self,
        category: &str,
        n_subsamples: usize,
        low_pct: f64,
        high_pct: f64,
        seed: u64,
    ) -> Result<Value> {
        let cfg = self.stats_config(n_subsamples, low_pct, high_pct, seed)?;
        let table = TokenTable::new(&self.records)?;
        let tokens = table.category_tokens(category);
        let null = table.attribution_null(category, &cfg)?;
        if null.is_empty() {
            return Ok(json!({
                "category": category,
                "n_tokens": tokens.len(),
                "svg": Value::Null,
                "note": if tokens.is_empty() { "category has no tokens" } else { "category covers every token" },
            }));
        }
        let observed = tokens
            .iter()
            .map(|&i| self.records[i].attribution)
            .sum::<f64>()
            / tokens.len() as f64;
        let low = percentile(&null, cfg.low_pct);
        let high = percentile(&null, cfg.high_pct);
        Ok(json!({
            "category": category,
            "n_tokens": tokens.len(),
            "observed": observed,
            "low_threshold": low,
            "high_threshold": high,
            "svg": render_histogram(&null, observed, low, high, &PlotSpec::default()),
        }))
    }
}

const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 20.0, 50.0); // left, right, top, bottom

fn frame(svg: &mut String, spec: &PlotSpec, x_label: &str, y_label: &str) -> (f64, f64, f64, f64) {
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let (left, right, top, bottom) = (MARGIN.0, w - MARGIN.1, MARGIN.2, h - MARGIN.3);
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif"><rect width="{w}" height="{h}" fill="#ffffff"/><rect x="{left}" y="{top}" width="{:.2}" height="{:.2}" fill="none" stroke="#333333"/><text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text><text x="18" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"##,
        right - left,
        bottom - top,
        (left + right) / 2.0,
        h - 12.0,
        escape_xml(x_label),
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape_xml(y_label),
    );
    (left, right, top, bottom)
}

/// Log-log line chart of residual against steps, one line per rule.
pub fn render_convergence(
    steps: &[usize],
    left_rule: &[f64],
    trapezoid: &[f64],
    spec: &PlotSpec,
) -> String {
    let mut svg = String::new();
    let (x0, x1, y0, y1) = frame(
        &mut svg,
        spec,
        "quadrature steps m (log2)",
        "|residual| (log10)",
    );
    let floor = 1e-17;
    let logs = |v: &[f64]| -> Vec<f64> { v.iter().map(|r| r.max(floor).log10()).collect() };
    let (l, t) = (logs(left_rule), logs(trapezoid));
    let (ymin, ymax) = padded_range(l.iter().chain(&t).copied());
    let xs: Vec<f64> = steps.iter().map(|&m| (m as f64).log2()).collect();
    let (xmin, xmax) = padded_range(xs.iter().copied());
    let px = |x: f64| x0 + (x - xmin) / (xmax - xmin) * (x1 - x0);
    let py = |y: f64| y1 - (y - ymin) / (ymax - ymin) * (y1 - y0);
    for (&x, &m) in xs.iter().zip(steps) {
        let _ = write!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{m}</text>"#,
            px(x),
            y1 + 16.0
        );
    }
    let ticks = (ymin.ceil() as i32)..=(ymax.floor() as i32);
    for e in ticks {
        let _ = write!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">1e{e}</text>"#,
            x0 - 6.0,
            py(f64::from(e)) + 4.0
        );
    }
    for (values, color, name) in [
        (&l, &spec.ad_color, "left"),
        (&t, &spec.control_color, "trapezoid"),
    ] {
        let points: Vec<String> = xs
            .iter()
            .zip(values.iter())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = write!(
            svg,
            r#"<polyline class="series" data-rule="{name}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
    }
    let _ = write!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" fill="{}">left</text><text x="{:.2}" y="{:.2}" font-size="12" fill="{}">trapezoid</text></svg>"#,
        x1 - 90.0,
        y0 + 18.0,
        spec.ad_color,
        x1 - 90.0,
        y0 + 34.0,
        spec.control_color
    );
    svg
}

/// Histogram of `null` with vertical markers for the thresholds and the
/// observed statistic.
pub fn render_histogram(
    null: &[f64],
    observed: f64,
    low: f64,
    high: f64,
    spec: &PlotSpec,
) -> String {
    const BINS: usize = 40;
    let mut svg = String::new();
    let (x0, x1, y0, y1) = frame(
        &mut svg,
        spec,
        "mean attribution of random token subsets",
        "count",
    );
    let (xmin, xmax) = padded_range(null.iter().copied().chain([observed]));
    let width = (xmax - xmin) / BINS as f64;
    let mut counts = [0usize; BINS];
    for &v in null {
        let bin = (((v - xmin) / width) as usize).min(BINS - 1);
        counts[bin] += 1;
    }
    let peak = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let px = |x: f64| x0 + (x - xmin) / (xmax - xmin) * (x1 - x0);
    for (i, &c) in counts.iter().enumerate() {
        let height = c as f64 / peak * (y1 - y0);
        let left = px(xmin + i as f64 * width);
        let _ = write!(
            svg,
            r#"<rect class="bin" x="{left:.2}" y="{:.2}" width="{:.2}" height="{height:.2}" fill="{}"/>"#,
            y1 - height,
            (px(xmin + width) - x0 - 1.0).max(0.5),
            spec.none_color
        );
    }
    for (x, color, class) in [
        (low, &spec.control_color, "low"),
        (high, &spec.ad_color, "high"),
        (observed, &"#000000".to_string(), "observed"),
    ] {
        let _ = write!(
            svg,
            r#"<line class="{class}" x1="{:.2}" y1="{y0:.2}" x2="{:.2}" y2="{y1:.2}" stroke="{color}" stroke-width="2"/>"#,
            px(x),
            px(x)
        );
    }
    for (value, anchor) in [(xmin, "start"), (xmax, "end")] {
        let _ = write!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="{anchor}">{value:.4}</text>"#,
            px(value),
            y1 + 16.0
        );
    }
    svg.push_str("</svg>");
    svg
}

static SESSION: OnceLock<std::result::Result<Session, String>> = OnceLock::new();

fn session() -> std::result::Result<&'static Session, JsError> {
    SESSION
        .get_or_init(|| Session::build().map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|e| JsError::new(e))
}

fn respond(value: Result<Value>) -> std::result::Result<String, JsError> {
    value
        .map(|v| v.to_string())
        .map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn overview() -> std::result::Result<String, JsError> {
    Ok(session()?.overview().to_string())
}

#[wasm_bindgen]
pub fn convergence(doc_id: &str, max_log2: u32) -> std::result::Result<String, JsError> {
    respond(session()?.convergence(doc_id, max_log2))
}

#[wasm_bindgen]
pub fn analyze(
    n_subsamples: usize,
    low_pct: f64,
    high_pct: f64,
    seed: u64,
) -> std::result::Result<String, JsError> {
    respond(session()?.analyze(n_subsamples, low_pct, high_pct, seed))
}

#[wasm_bindgen]
pub fn null_histogram(
    category: &str,
    n_subsamples: usize,
    low_pct: f64,
    high_pct: f64,
    seed: u64,
) -> std::result::Result<String, JsError> {
    respond(session()?.null_histogram(category, n_subsamples, low_pct, high_pct, seed))
}
