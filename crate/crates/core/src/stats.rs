//! Category-level significance of token attributions.
//!
//! For every dictionary category the analysis asks two questions:
//!
//! 1. Is the mean attribution of the category's tokens extreme compared with
//!    the means of random token subsets of the same size? Above the high
//!    percentile the category supports the AD class, below the low
//!    percentile the control class.
//! 2. Do per-document category scores separate the two classes better (or
//!    worse) than random token subsets of the same size? The difference
//!    between the category's AUC and the mean subsample AUC is the ΔAUC.
//!
//! Random subsets are drawn uniformly without replacement from all tokens.
//! Each category gets its own random stream derived from the master seed and
//! the category name, so results do not depend on which other categories are
//! analyzed or on evaluation order.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::tagging::{CategoryDictionary, TokenRecord};

/// ChaCha stream used for the attribution null.
pub const ATTRIBUTION_STREAM: u64 = 0;
/// ChaCha stream used for the AUC null; same key, independent draws.
pub const AUC_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub n_subsamples: usize,
    pub low_pct: f64,
    pub high_pct: f64,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            n_subsamples: 5000,
            low_pct: 5.0,
            high_pct: 95.0,
            seed: 0,
        }
    }
}

impl StatsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subsamples < 100 {
            return Err(Error::config("stats.n_subsamples", "must be at least 100"));
        }
        if !(0.0 < self.low_pct && self.low_pct < self.high_pct && self.high_pct < 100.0) {
            return Err(Error::config(
                "stats.low_pct",
                "percentiles must satisfy 0 < low_pct < high_pct < 100",
            ));
        }
        Ok(())
    }
}

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::InvalidArgument(format!(
                        concat!("invalid ", stringify!($name), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

string_enum!(Group { Ad => "AD", Control => "control", None => "none" });
string_enum!(AucImpact { Positive => "positive", Negative => "negative", None => "none" });
string_enum!(Verdict {
    Improves => "improves",
    Contributes => "contributes",
    Irrelevant => "irrelevant",
    Absent => "absent",
});

impl Group {
    pub fn is_significant(self) -> bool {
        self != Group::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttrSignificance {
    /// The category has no tokens.
    Absent,
    /// The category covers every token, so the null equals the statistic.
    Degenerate { mean_attr: f64 },
    Tested {
        mean_attr: f64,
        group: Group,
        /// Share of null means below the statistic (ties count half), in percent.
        percentile: f64,
        low_threshold: f64,
        high_threshold: f64,
    },
}

impl AttrSignificance {
    pub fn group(&self) -> Group {
        match self {
            AttrSignificance::Tested { group, .. } => *group,
            _ => Group::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AucSignificance {
    pub feature_auc: f64,
    pub null_auc_mean: f64,
    pub delta_auc: f64,
    pub impact: AucImpact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub category: String,
    pub n_tokens: usize,
    pub mean_attr: f64,
    pub attr_group: Group,
    pub attr_pctile: Option<f64>,
    pub feature_auc: f64,
    pub null_auc_mean: f64,
    pub delta_auc: f64,
    pub auc_impact: AucImpact,
    pub verdict: Verdict,
}

/// Linear interpolation between closest ranks (NumPy's default).
/// `sorted` must be ascending and nonempty.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Percent of `sorted` strictly below `value`, counting equal values as half.
pub fn percentile_rank(sorted: &[f64], value: f64) -> f64 {
    let below = sorted.partition_point(|&v| v < value);
    let not_above = sorted.partition_point(|&v| v <= value);
    100.0 * (below as f64 + 0.5 * (not_above - below) as f64) / sorted.len() as f64
}

/// Probability that a random AD document outscores a random control one,
/// ties counted as one half. Computed from average ranks.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if !scores.iter().all(|s| s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let n_ad = labels.iter().filter(|&&l| l == Label::Ad).count();
    let n_control = labels.len() - n_ad;
    if n_ad == 0 || n_control == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    Ok(auc_from_order(scores, labels, &order, n_ad, n_control))
}

fn auc_from_order(
    scores: &[f64],
    labels: &[Label],
    order: &[usize],
    n_ad: usize,
    n_control: usize,
) -> f64 {
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (1-based: start+1 ..= end)
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let ad_in_group = order[start..end]
            .iter()
            .filter(|&&i| labels[i] == Label::Ad)
            .count();
        rank_sum += avg_rank * ad_in_group as f64;
        start = end;
    }
    let u = rank_sum - (n_ad * (n_ad + 1)) as f64 / 2.0;
    u / (n_ad * n_control) as f64
}

/// Tokens grouped by document, ready for repeated subsampling.
#[derive(Debug, Clone)]
pub struct TokenTable<'a> {
    records: &'a [TokenRecord],
    doc_of: Vec<usize>,
    labels: Vec<Label>,
    n_ad: usize,
}

impl<'a> TokenTable<'a> {
    pub fn new(records: &'a [TokenRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("token records"));
        }
        let mut doc_of = Vec::with_capacity(records.len());
        let mut labels: Vec<Label> = Vec::new();
        let mut index = std::collections::HashMap::new();
        for r in records {
            let next = index.len();
            let doc = *index.entry(r.doc_id.as_str()).or_insert_with(|| {
                labels.push(r.doc_label);
                next
            });
            doc_of.push(doc);
        }
        let n_ad = labels.iter().filter(|&&l| l == Label::Ad).count();
        Ok(TokenTable {
            records,
            doc_of,
            labels,
            n_ad,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_documents(&self) -> usize {
        self.labels.len()
    }

    pub fn category_tokens(&self, category: &str) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.categories.contains(category))
            .map(|(i, _)| i)
            .collect()
    }

    fn mean_attribution(&self, tokens: &[usize]) -> f64 {
        tokens
            .iter()
            .map(|&i| self.records[i].attribution)
            .sum::<f64>()
            / tokens.len() as f64
    }

    /// Per-document mean attribution over `tokens`; documents without any score 0.
    pub fn document_scores(&self, tokens: &[usize]) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_documents()];
        let mut counts = vec![0usize; self.n_documents()];
        for &i in tokens {
            let d = self.doc_of[i];
            sums[d] += self.records[i].attribution;
            counts[d] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }

    fn auc_of(&self, tokens: &[usize], order: &mut [usize]) -> f64 {
        let scores = self.document_scores(tokens);
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        auc_from_order(
            &scores,
            &self.labels,
            order,
            self.n_ad,
            self.labels.len() - self.n_ad,
        )
    }

    fn check_classes(&self) -> Result<()> {
        if self.n_ad == 0 || self.n_ad == self.labels.len() {
            return Err(Error::SingleClass);
        }
        Ok(())
    }

    pub fn attribution_significance(
        &self,
        category: &str,
        cfg: &StatsConfig,
    ) -> Result<AttrSignificance> {
        cfg.validate()?;
        let tokens = self.category_tokens(category);
        Ok(self.attribution_test(category, &tokens, cfg))
    }

    fn attribution_test(
        &self,
        category: &str,
        tokens: &[usize],
        cfg: &StatsConfig,
    ) -> AttrSignificance {
        let n_f = tokens.len();
        if n_f == 0 {
            return AttrSignificance::Absent;
        }
        let mean_attr = self.mean_attribution(tokens);
        if n_f == self.len() {
            return AttrSignificance::Degenerate { mean_attr };
        }
        let null = self.null_means(category, n_f, cfg);
        let low_threshold = percentile(&null, cfg.low_pct);
        let high_threshold = percentile(&null, cfg.high_pct);
        let group = if mean_attr > high_threshold {
            Group::Ad
        } else if mean_attr < low_threshold {
            Group::Control
        } else {
            Group::None
        };
        AttrSignificance::Tested {
            mean_attr,
            group,
            percentile: percentile_rank(&null, mean_attr),
            low_threshold,
            high_threshold,
        }
    }

    /// Sorted mean attributions of `n_f`-token random subsets, drawn from the
    /// stream the attribution test for `category` uses.
    fn null_means(&self, category: &str, n_f: usize, cfg: &StatsConfig) -> Vec<f64> {
        let mut rng = category_rng(cfg.seed, category, ATTRIBUTION_STREAM);
        let mut null: Vec<f64> = (0..cfg.n_subsamples)
            .map(|_| {
                let sample = index::sample(&mut rng, self.len(), n_f);
                sample
                    .iter()
                    .map(|i| self.records[i].attribution)
                    .sum::<f64>()
                    / n_f as f64
            })
            .collect();
        null.sort_by(f64::total_cmp);
        null
    }

    /// The sorted null distribution behind [`Self::attribution_significance`].
    /// Empty when the test does not apply (absent or all-covering category).
    pub fn attribution_null(&self, category: &str, cfg: &StatsConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        let n_f = self.category_tokens(category).len();
        if n_f == 0 || n_f == self.len() {
            return Ok(Vec::new());
        }
        Ok(self.null_means(category, n_f, cfg))
    }

    pub fn auc_significance(&self, category: &str, cfg: &StatsConfig) -> Result<AucSignificance> {
        cfg.validate()?;
        self.check_classes()?;
        let tokens = self.category_tokens(category);
        Ok(self.auc_test(category, &tokens, cfg))
    }

    fn auc_test(&self, category: &str, tokens: &[usize], cfg: &StatsConfig) -> AucSignificance {
        let mut order: Vec<usize> = (0..self.n_documents()).collect();
        let feature_auc = self.auc_of(tokens, &mut order);
        let n_f = tokens.len();
        if n_f == 0 || n_f == self.len() {
            return AucSignificance {
                feature_auc,
                null_auc_mean: feature_auc,
                delta_auc: 0.0,
                impact: AucImpact::None,
            };
        }
        let mut rng = category_rng(cfg.seed, category, AUC_STREAM);
        let mut sample_buf = Vec::with_capacity(n_f);
        let mut null: Vec<f64> = (0..cfg.n_subsamples)
            .map(|_| {
                sample_buf.clear();
                sample_buf.extend(index::sample(&mut rng, self.len(), n_f).iter());
                self.auc_of(&sample_buf, &mut order)
            })
            .collect();
        let null_auc_mean = null.iter().sum::<f64>() / null.len() as f64;
        null.sort_by(f64::total_cmp);
        let impact = if feature_auc > percentile(&null, cfg.high_pct) {
            AucImpact::Positive
        } else if feature_auc < percentile(&null, cfg.low_pct) {
            AucImpact::Negative
        } else {
            AucImpact::None
        };
        AucSignificance {
            feature_auc,
            null_auc_mean,
            delta_auc: feature_auc - null_auc_mean,
            impact,
        }
    }

    pub fn feature_stats(&self, category: &str, cfg: &StatsConfig) -> Result<FeatureStats> {
        cfg.validate()?;
        self.check_classes()?;
        let tokens = self.category_tokens(category);
        let attr = self.attribution_test(category, &tokens, cfg);
        let auc = self.auc_test(category, &tokens, cfg);
        let (mean_attr, attr_pctile) = match attr {
            AttrSignificance::Absent => (0.0, None),
            AttrSignificance::Degenerate { mean_attr } => (mean_attr, None),
            AttrSignificance::Tested {
                mean_attr,
                percentile,
                ..
            } => (mean_attr, Some(percentile)),
        };
        let attr_group = attr.group();
        let verdict = match (attr, attr_group.is_significant(), auc.impact) {
            (AttrSignificance::Absent, _, _) => Verdict::Absent,
            (_, true, AucImpact::Positive) => Verdict::Improves,
            (_, true, _) => Verdict::Contributes,
            (_, false, _) => Verdict::Irrelevant,
        };
        Ok(FeatureStats {
            category: category.to_string(),
            n_tokens: tokens.len(),
            mean_attr,
            attr_group,
            attr_pctile,
            feature_auc: auc.feature_auc,
            null_auc_mean: auc.null_auc_mean,
            delta_auc: auc.delta_auc,
            auc_impact: auc.impact,
            verdict,
        })
    }
}

/// FNV-1a; stable across platforms and releases.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Random stream for one category: keyed by master seed and category name.
pub fn category_rng(seed: u64, category: &str, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&name_hash(category).to_le_bytes());
    key[16..24].copy_from_slice(&(category.len() as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

pub fn attribution_significance(
    records: &[TokenRecord],
    category: &str,
    cfg: &StatsConfig,
) -> Result<AttrSignificance> {
    TokenTable::new(records)?.attribution_significance(category, cfg)
}

pub fn auc_significance(
    records: &[TokenRecord],
    category: &str,
    cfg: &StatsConfig,
) -> Result<AucSignificance> {
    TokenTable::new(records)?.auc_significance(category, cfg)
}

/// Mean attribution of the document's tokens in `category`, or 0.
pub fn document_feature_score(records: &[TokenRecord], category: &str) -> f64 {
    let (sum, count) = records
        .iter()
        .filter(|r| r.categories.contains(category))
        .fold((0.0, 0usize), |(s, c), r| (s + r.attribution, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// One [`FeatureStats`] per non-excluded category, largest |ΔAUC| first.
pub fn analyze_all(
    records: &[TokenRecord],
    dict: &CategoryDictionary,
    cfg: &StatsConfig,
) -> Result<Vec<FeatureStats>> {
    cfg.validate()?;
    let table = TokenTable::new(records)?;
    table.check_classes()?;
    let categories = dict.analyzable_categories();

    #[cfg(feature = "parallel")]
    let results: Vec<Result<FeatureStats>> = {
        use rayon::prelude::*;
        categories
            .par_iter()
            .map(|c| table.feature_stats(c, cfg))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<FeatureStats>> = categories
        .iter()
        .map(|c| table.feature_stats(c, cfg))
        .collect();

    let mut stats = results.into_iter().collect::<Result<Vec<_>>>()?;
    sort_by_impact(&mut stats);
    Ok(stats)
}

pub fn sort_by_impact(stats: &mut [FeatureStats]) {
    stats.sort_by(|a, b| {
        b.delta_auc
            .abs()
            .total_cmp(&a.delta_auc.abs())
            .then_with(|| a.category.cmp(&b.category))
    });
}
