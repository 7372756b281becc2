//! SVG figures and result tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{AucImpact, FeatureStats, Group, Verdict};
use crate::validation::{CountStats, MethodComparison};

pub const FEATURE_STATS_FILE: &str = "feature_stats.csv";
pub const COUNT_STATS_FILE: &str = "count_stats.csv";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const SCATTER_FILE: &str = "scatter.svg";
pub const BARS_FILE: &str = "bars.svg";
pub const METHOD_SCATTER_FILE: &str = "method_scatter.svg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSpec {
    pub width: u32,
    pub height: u32,
    pub ad_color: String,
    pub control_color: String,
    pub none_color: String,
    /// Fill of scatter markers whose AUC impact is positive.
    pub impact_color: String,
    /// Opacity of bars whose AUC impact is not significant.
    pub faded_opacity: f64,
}

impl Default for PlotSpec {
    fn default() -> Self {
        PlotSpec {
            width: 720,
            height: 480,
            ad_color: "#d62728".into(),
            control_color: "#2ca02c".into(),
            none_color: "#7f7f7f".into(),
            impact_color: "#2ca02c".into(),
            faded_opacity: 0.35,
        }
    }
}

impl PlotSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config(
                "report.width",
                "plot dimensions must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.faded_opacity) {
            return Err(Error::config("report.faded_opacity", "must lie in [0, 1]"));
        }
        Ok(())
    }

    fn group_color(&self, group: Group) -> &str {
        match group {
            Group::Ad => &self.ad_color,
            Group::Control => &self.control_color,
            Group::None => &self.none_color,
        }
    }
}

const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

pub fn escape_xml(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Data extent padded by 5% on each side.
pub fn padded_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() || !hi.is_finite() {
        return (-1.0, 1.0);
    }
    let span = if hi > lo { hi - lo } else { hi.abs().max(1.0) };
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// Linear map from a data range onto the plotting area.
#[derive(Debug, Clone, Copy)]
struct Axes {
    x: (f64, f64),
    y: (f64, f64),
    width: f64,
    height: f64,
}

impl Axes {
    fn new(spec: &PlotSpec, x: (f64, f64), y: (f64, f64)) -> Self {
        Axes {
            x,
            y,
            width: f64::from(spec.width),
            height: f64::from(spec.height),
        }
    }

    fn px(&self, v: f64) -> f64 {
        let inner = self.width - MARGIN_LEFT - MARGIN_RIGHT;
        MARGIN_LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * inner
    }

    fn py(&self, v: f64) -> f64 {
        let inner = self.height - MARGIN_TOP - MARGIN_BOTTOM;
        self.height - MARGIN_BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * inner
    }

    fn frame(&self, svg: &mut String, x_label: &str, y_label: &str) {
        let (left, right) = (MARGIN_LEFT, self.width - MARGIN_RIGHT);
        let (top, bottom) = (MARGIN_TOP, self.height - MARGIN_BOTTOM);
        let _ = writeln!(
            svg,
            r##"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333333"/>"##,
            right - left,
            bottom - top
        );
        for k in 0..=4 {
            let t = f64::from(k) / 4.0;
            let xv = self.x.0 + t * (self.x.1 - self.x.0);
            let yv = self.y.0 + t * (self.y.1 - self.y.0);
            let (xp, yp) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                svg,
                r##"<line x1="{xp:.2}" y1="{bottom:.2}" x2="{xp:.2}" y2="{:.2}" stroke="#333333"/><text x="{xp:.2}" y="{:.2}" font-size="11" text-anchor="middle">{xv:.3}</text>"##,
                bottom + 5.0,
                bottom + 18.0
            );
            let _ = writeln!(
                svg,
                r##"<line x1="{:.2}" y1="{yp:.2}" x2="{left:.2}" y2="{yp:.2}" stroke="#333333"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{yv:.3}</text>"##,
                left - 5.0,
                left - 8.0,
                yp + 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text class="x-label" x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
            (left + right) / 2.0,
            self.height - 10.0,
            escape_xml(x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text class="y-label" x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (top + bottom) / 2.0,
            (top + bottom) / 2.0,
            escape_xml(y_label)
        );
    }
}

fn open_svg(spec: &PlotSpec, title: &str) -> String {
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#,
        w = spec.width,
        h = spec.height
    );
    let _ = writeln!(svg, "<title>{}</title>", escape_xml(title));
    let _ = writeln!(
        svg,
        r##"<rect width="{}" height="{}" fill="#ffffff"/>"##,
        spec.width, spec.height
    );
    svg
}

fn present(stats: &[FeatureStats]) -> Result<Vec<&FeatureStats>> {
    let kept: Vec<&FeatureStats> = stats
        .iter()
        .filter(|s| s.verdict != Verdict::Absent)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyInput(
            "features to plot (all categories are absent)",
        ));
    }
    Ok(kept)
}

/// Mean attribution (x) against ΔAUC (y), one marker per present category:
/// `X` for AD features, circles for control features, squares otherwise.
/// Markers with a positive AUC impact are filled with the impact color.
pub fn render_scatter(stats: &[FeatureStats], spec: &PlotSpec) -> Result<String> {
    spec.validate()?;
    let points = present(stats)?;
    let axes = Axes::new(
        spec,
        padded_range(points.iter().map(|s| s.mean_attr)),
        padded_range(points.iter().map(|s| s.delta_auc)),
    );
    let mut svg = open_svg(spec, "Category attribution versus AUC change");
    axes.frame(
        &mut svg,
        "mean attribution",
        "ΔAUC (feature − subsample mean)",
    );
    if axes.y.0 < 0.0 && axes.y.1 > 0.0 {
        let y0 = axes.py(0.0);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}" stroke="#bbbbbb" stroke-dasharray="4 3"/>"##,
            MARGIN_LEFT,
            axes.width - MARGIN_RIGHT
        );
    }
    const R: f64 = 5.0;
    for s in points {
        let (x, y) = (axes.px(s.mean_attr), axes.py(s.delta_auc));
        let fill = if s.auc_impact == AucImpact::Positive {
            spec.impact_color.as_str()
        } else {
            "none"
        };
        let stroke = if s.auc_impact == AucImpact::Positive {
            spec.impact_color.as_str()
        } else {
            spec.none_color.as_str()
        };
        let name = escape_xml(&s.category);
        match s.attr_group {
            Group::Ad => {
                let _ = writeln!(
                    svg,
                    r#"<path class="marker marker-x" data-category="{name}" d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}" stroke="{stroke}" stroke-width="2.5" fill="{fill}"/>"#,
                    x - R,
                    y - R,
                    x + R,
                    y + R,
                    x - R,
                    y + R,
                    x + R,
                    y - R
                );
            }
            Group::Control => {
                let _ = writeln!(
                    svg,
                    r#"<circle class="marker marker-circle" data-category="{name}" cx="{x:.2}" cy="{y:.2}" r="{R:.2}" stroke="{stroke}" stroke-width="1.5" fill="{fill}"/>"#
                );
            }
            Group::None => {
                let _ = writeln!(
                    svg,
                    r#"<rect class="marker marker-square" data-category="{name}" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" stroke="{stroke}" stroke-width="1.5" fill="{fill}"/>"#,
                    x - R * 0.8,
                    y - R * 0.8,
                    R * 1.6,
                    R * 1.6
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="10">{name}</text>"#,
            x + R + 2.0,
            y - R
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Present categories in bar order: largest mean attribution first, ties by name.
pub fn bar_order(stats: &[FeatureStats]) -> Vec<&FeatureStats> {
    let mut rows: Vec<&FeatureStats> = stats
        .iter()
        .filter(|s| s.verdict != Verdict::Absent)
        .collect();
    rows.sort_by(|a, b| {
        b.mean_attr
            .total_cmp(&a.mean_attr)
            .then_with(|| a.category.cmp(&b.category))
    });
    rows
}

/// Horizontal bars of mean attribution colored by group; bars without a
/// significant AUC impact are drawn translucent.
pub fn render_bars(stats: &[FeatureStats], spec: &PlotSpec) -> Result<String> {
    spec.validate()?;
    present(stats)?;
    let rows = bar_order(stats);
    let x_range = padded_range(rows.iter().map(|s| s.mean_attr).chain([0.0]));
    let axes = Axes::new(spec, x_range, (0.0, rows.len() as f64));
    let mut svg = open_svg(spec, "Mean attribution per category");
    axes.frame(&mut svg, "mean attribution", "category");
    let zero = axes.px(0.0);
    let _ = writeln!(
        svg,
        r##"<line x1="{zero:.2}" y1="{:.2}" x2="{zero:.2}" y2="{:.2}" stroke="#333333"/>"##,
        MARGIN_TOP,
        axes.height - MARGIN_BOTTOM
    );
    let slot = (axes.py(0.0) - axes.py(1.0)).abs();
    for (i, s) in rows.iter().enumerate() {
        let top = axes.py((rows.len() - i) as f64) + 0.15 * slot;
        let end = axes.px(s.mean_attr);
        let (x, w) = if end >= zero {
            (zero, end - zero)
        } else {
            (end, zero - end)
        };
        let opacity = if s.auc_impact == AucImpact::None {
            spec.faded_opacity
        } else {
            1.0
        };
        let name = escape_xml(&s.category);
        let _ = writeln!(
            svg,
            r#"<rect class="bar" data-category="{name}" x="{x:.2}" y="{top:.2}" width="{w:.2}" height="{:.2}" fill="{}" fill-opacity="{opacity}"/>"#,
            0.7 * slot,
            spec.group_color(s.attr_group)
        );
        let (label_x, anchor) = if s.mean_attr >= 0.0 {
            (zero - 4.0, "end")
        } else {
            (zero + 4.0, "start")
        };
        let _ = writeln!(
            svg,
            r#"<text x="{label_x:.2}" y="{:.2}" font-size="10" text-anchor="{anchor}">{name}</text>"#,
            top + 0.5 * slot
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Count-based AUC (x) against attribution-based AUC (y). Colors: blue when
/// the SLIME AUC impact is positive, red when the attribution group is
/// significant, black when the count test is significant, gray otherwise.
pub fn render_method_scatter(
    comparison: Option<&MethodComparison>,
    stats: &[FeatureStats],
    counts: &[CountStats],
    spec: &PlotSpec,
) -> Result<String> {
    spec.validate()?;
    let mut svg = open_svg(spec, "Count-based versus attribution-based AUC");
    let Some(comparison) = comparison else {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">comparison unavailable</text>"#,
            f64::from(spec.width) / 2.0,
            f64::from(spec.height) / 2.0
        );
        svg.push_str("</svg>\n");
        return Ok(svg);
    };
    let by_stat: HashMap<&str, &FeatureStats> =
        stats.iter().map(|s| (s.category.as_str(), s)).collect();
    let by_count: HashMap<&str, &CountStats> =
        counts.iter().map(|c| (c.category.as_str(), c)).collect();
    let range = padded_range(
        comparison
            .pairs
            .iter()
            .flat_map(|p| [p.slime_auc, p.count_auc]),
    );
    let axes = Axes::new(spec, range, range);
    axes.frame(&mut svg, "count-based AUC", "attribution-based AUC");
    let _ = writeln!(
        svg,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#bbbbbb" stroke-dasharray="4 3"/>"##,
        axes.px(range.0),
        axes.py(range.0),
        axes.px(range.1),
        axes.py(range.1)
    );
    for pair in &comparison.pairs {
        let stat = by_stat.get(pair.category.as_str());
        let count = by_count.get(pair.category.as_str());
        let color = if stat.is_some_and(|s| s.auc_impact == AucImpact::Positive) {
            "#1f77b4"
        } else if stat.is_some_and(|s| s.attr_group.is_significant()) {
            "#d62728"
        } else if count.is_some_and(|c| c.significant) {
            "#000000"
        } else {
            "#999999"
        };
        let _ = writeln!(
            svg,
            r#"<circle class="marker" data-category="{}" cx="{:.2}" cy="{:.2}" r="4.00" fill="{color}"/>"#,
            escape_xml(&pair.category),
            axes.px(pair.count_auc),
            axes.py(pair.slime_auc)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="20" font-size="12">r = {:.3}, U = {:.1}, p = {:.3e}</text>"#,
        MARGIN_LEFT, comparison.pearson_r, comparison.mwu_statistic, comparison.mwu_p
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn csv_writer() -> csv::WriterBuilder {
    let mut builder = csv::WriterBuilder::new();
    builder.terminator(csv::Terminator::Any(b'\n'));
    builder
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

pub fn feature_stats_csv(stats: &[FeatureStats]) -> String {
    let mut writer = csv_writer().from_writer(Vec::new());
    for s in stats {
        writer.serialize(s).expect("in-memory csv write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

pub fn parse_feature_stats(text: &str, origin: &Path) -> Result<Vec<FeatureStats>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|row| row.map_err(|e| csv_error(origin, e)))
        .collect()
}

pub fn read_feature_stats(path: &Path) -> Result<Vec<FeatureStats>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_stats(&text, path)
}

/// One line of `count_stats.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub category: String,
    pub u_control: f64,
    pub p_value: f64,
    pub auc_control: f64,
    #[serde(rename = "auc_AD")]
    pub auc_ad: f64,
    pub significant: bool,
}

impl From<&CountStats> for CountRow {
    fn from(c: &CountStats) -> Self {
        CountRow {
            category: c.category.clone(),
            u_control: c.u_control,
            p_value: c.p_value,
            auc_control: c.auc_control,
            auc_ad: c.auc_ad,
            significant: c.significant,
        }
    }
}

impl From<CountRow> for CountStats {
    fn from(r: CountRow) -> Self {
        CountStats {
            category: r.category,
            proportions_control: Vec::new(),
            proportions_ad: Vec::new(),
            u_control: r.u_control,
            p_value: r.p_value,
            auc_control: r.auc_control,
            auc_ad: r.auc_ad,
            significant: r.significant,
        }
    }
}

pub fn count_stats_csv(counts: &[CountStats]) -> String {
    let mut writer = csv_writer().from_writer(Vec::new());
    for c in counts {
        writer
            .serialize(CountRow::from(c))
            .expect("in-memory csv write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

/// Reads `count_stats.csv`; per-document proportions are not part of the
/// table and come back empty.
pub fn read_count_stats(path: &Path) -> Result<Vec<CountStats>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize::<CountRow>()
        .map(|row| row.map(CountStats::from).map_err(|e| csv_error(path, e)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonFile {
    pub pearson_r: Option<f64>,
    pub mwu_statistic: Option<f64>,
    pub mwu_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<crate::validation::AucPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ComparisonFile {
    pub fn from_result(result: &Result<MethodComparison>) -> Self {
        match result {
            Ok(c) => ComparisonFile {
                pearson_r: Some(c.pearson_r),
                mwu_statistic: Some(c.mwu_statistic),
                mwu_p: Some(c.mwu_p),
                pairs: c.pairs.clone(),
                error: None,
            },
            Err(e) => ComparisonFile {
                pearson_r: None,
                mwu_statistic: None,
                mwu_p: None,
                pairs: Vec::new(),
                error: Some(e.to_string()),
            },
        }
    }

    pub fn comparison(&self) -> Option<MethodComparison> {
        Some(MethodComparison {
            pearson_r: self.pearson_r?,
            mwu_statistic: self.mwu_statistic?,
            mwu_p: self.mwu_p?,
            pairs: self.pairs.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("comparison serializes");
        text.push('\n');
        text
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the six report files into `dir` (created if needed) and returns
/// their paths.
pub fn export_results(
    stats: &[FeatureStats],
    counts: &[CountStats],
    comparison: &ComparisonFile,
    dir: &Path,
    spec: &PlotSpec,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let outputs = [
        (FEATURE_STATS_FILE, feature_stats_csv(stats)),
        (COUNT_STATS_FILE, count_stats_csv(counts)),
        (COMPARISON_FILE, comparison.to_json()),
        (SCATTER_FILE, render_scatter(stats, spec)?),
        (BARS_FILE, render_bars(stats, spec)?),
        (
            METHOD_SCATTER_FILE,
            render_method_scatter(comparison.comparison().as_ref(), stats, counts, spec)?,
        ),
    ];
    let mut written = Vec::with_capacity(outputs.len());
    for (name, contents) in outputs {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}
