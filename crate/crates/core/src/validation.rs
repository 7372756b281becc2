//! Count-based baseline: per-document category proportions compared between
//! the classes with two-sided Mann-Whitney U tests, converted to AUCs and
//! gated with a Bonferroni threshold. [`compare_methods`] relates these AUCs
//! to the attribution-based ones.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::corpus::{Corpus, Document, Label};
use crate::error::{Error, Result};
use crate::stats::FeatureStats;
use crate::tagging::CategoryDictionary;

/// Samples at least this large on both sides use the normal approximation.
pub const EXACT_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountStats {
    pub category: String,
    pub proportions_control: Vec<f64>,
    pub proportions_ad: Vec<f64>,
    pub u_control: f64,
    pub p_value: f64,
    pub auc_control: f64,
    pub auc_ad: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucPair {
    pub category: String,
    pub slime_auc: f64,
    pub count_auc: f64,
    /// (slime − count) / count.
    pub relative_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub pearson_r: f64,
    pub mwu_statistic: f64,
    pub mwu_p: f64,
    pub pairs: Vec<AucPair>,
}

/// Percent of the document's tokens tagged with each analyzable category.
pub fn category_proportions(
    doc: &Document,
    dict: &CategoryDictionary,
) -> Result<BTreeMap<String, f64>> {
    if doc.tokens.is_empty() {
        return Err(Error::EmptyInput("document"));
    }
    let mut counts: BTreeMap<String, usize> = dict
        .analyzable_categories()
        .into_iter()
        .map(|c| (c, 0))
        .collect();
    for token in &doc.tokens {
        for category in dict.tag_token(token) {
            if let Some(c) = counts.get_mut(&category) {
                *c += 1;
            }
        }
    }
    let total = doc.tokens.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(k, c)| (k, 100.0 * c as f64 / total))
        .collect())
}

/// `u_x = Σ_ij [x_i > y_j] + ½ [x_i = y_j]` and its two-sided p-value.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("Mann-Whitney sample"));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("Mann-Whitney sample"));
    }
    let ranks = midranks(x, y);
    let n_x = x.len();
    let n_y = y.len();
    // Doubled ranks are integers, so the exact computation stays in integers.
    let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r) as u64).collect();
    let doubled_sum_x: u64 = doubled[..n_x].iter().sum();
    let u_x = doubled_sum_x as f64 / 2.0 - (n_x * (n_x + 1)) as f64 / 2.0;

    let p = if n_x.min(n_y) < EXACT_LIMIT {
        exact_p(&doubled, n_x, doubled_sum_x)
    } else {
        normal_p(u_x, n_x, n_y, &ranks)
    };
    Ok((u_x, p.min(1.0)))
}

/// Average ranks (1-based) of the pooled sample `x ++ y`.
fn midranks(x: &[f64], y: &[f64]) -> Vec<f64> {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Permutation distribution of the (doubled) rank sum of the first sample,
/// counted by dynamic programming over all size-`n_x` subsets of the pooled
/// ranks. Ties are handled through the midranks.
fn exact_p(doubled: &[u64], n_x: usize, observed: u64) -> f64 {
    let max_sum: u64 = {
        let mut sorted = doubled.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        sorted[..n_x].iter().sum()
    };
    let width = max_sum as usize + 1;
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0.0f64; width]; n_x + 1];
    ways[0][0] = 1.0;
    for &r in doubled {
        let r = r as usize;
        for j in (1..=n_x).rev() {
            let (lower, upper) = ways.split_at_mut(j);
            let prev = &lower[j - 1];
            let cur = &mut upper[0];
            for s in (r..width).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    let total: f64 = ways[n_x].iter().sum();
    let n = doubled.len() as u64;
    // E[doubled sum] = n_x (n + 1); compare deviations in doubled units.
    let center = n_x as u64 * (n + 1);
    let observed_dev = observed.abs_diff(center);
    let extreme: f64 = ways[n_x]
        .iter()
        .enumerate()
        .filter(|&(s, &w)| w > 0.0 && (s as u64).abs_diff(center) >= observed_dev)
        .map(|(_, &w)| w)
        .sum();
    extreme / total
}

fn normal_p(u_x: f64, n_x: usize, n_y: usize, ranks: &[f64]) -> f64 {
    let n = (n_x + n_y) as f64;
    let (nx, ny) = (n_x as f64, n_y as f64);
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end] == sorted[start] {
            end += 1;
        }
        let t = (end - start) as f64;
        tie_term += t * t * t - t;
        start = end;
    }
    let variance = nx * ny / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if variance <= 0.0 {
        return 1.0;
    }
    let deviation = ((u_x - nx * ny / 2.0).abs() - 0.5).max(0.0);
    let z = deviation / variance.sqrt();
    let normal = Normal::standard();
    2.0 * normal.sf(z)
}

/// `(u / (n_control · n_ad), 1 − that)`.
pub fn count_based_auc(u_control: f64, n_control: usize, n_ad: usize) -> Result<(f64, f64)> {
    if n_control == 0 || n_ad == 0 {
        return Err(Error::EmptyInput("class sample"));
    }
    let pairs = (n_control * n_ad) as f64;
    if !(0.0..=pairs).contains(&u_control) {
        return Err(Error::InvalidArgument(format!(
            "U statistic {u_control} outside [0, {pairs}]"
        )));
    }
    let auc_control = u_control / pairs;
    Ok((auc_control, 1.0 - auc_control))
}

pub fn bonferroni_threshold(alpha: f64, tests: usize) -> Result<f64> {
    if tests == 0 {
        return Err(Error::InvalidArgument(
            "Bonferroni correction over zero tests".into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} outside (0, 1)"
        )));
    }
    Ok(alpha / tests as f64)
}

/// Mann-Whitney comparison of category proportions between the classes for
/// every populated, non-excluded category.
pub fn count_based_analysis(
    corpus: &Corpus,
    dict: &CategoryDictionary,
    alpha: f64,
) -> Result<Vec<CountStats>> {
    let counts = corpus.class_counts();
    if counts.control == 0 || counts.ad == 0 {
        return Err(Error::SingleClass);
    }
    let categories = dict.populated_categories();
    let threshold = bonferroni_threshold(alpha, categories.len())?;

    let mut by_class: HashMap<&str, (Vec<f64>, Vec<f64>)> = categories
        .iter()
        .map(|c| (c.as_str(), (Vec::new(), Vec::new())))
        .collect();
    for doc in corpus.documents().iter().filter(|d| !d.tokens.is_empty()) {
        let props = category_proportions(doc, dict)?;
        for (category, (control, ad)) in by_class.iter_mut() {
            let value = props.get(*category).copied().unwrap_or(0.0);
            match doc.label {
                Label::Control => control.push(value),
                Label::Ad => ad.push(value),
            }
        }
    }

    categories
        .iter()
        .map(|category| {
            let (control, ad) = by_class
                .remove(category.as_str())
                .expect("category present");
            let (u_control, p_value) = mann_whitney_u(&control, &ad)?;
            let (auc_control, auc_ad) = count_based_auc(u_control, control.len(), ad.len())?;
            Ok(CountStats {
                category: category.clone(),
                proportions_control: control,
                proportions_ad: ad,
                u_control,
                p_value,
                auc_control,
                auc_ad,
                significant: p_value < threshold,
            })
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "correlation needs at least 3 pairs, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument(
            "correlation undefined: an AUC vector has zero variance".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// AUC of the class a feature favors: `max(auc, 1 − auc)`.
fn oriented(auc: f64) -> f64 {
    auc.max(1.0 - auc)
}

/// Pearson correlation and Mann-Whitney shift test between the two methods'
/// AUCs over the categories both report (absent SLIME categories excluded).
/// Each AUC is oriented toward the class the feature favors in that method.
pub fn compare_methods(slime: &[FeatureStats], counts: &[CountStats]) -> Result<MethodComparison> {
    let by_name: HashMap<&str, &CountStats> =
        counts.iter().map(|c| (c.category.as_str(), c)).collect();
    let mut pairs: Vec<AucPair> = slime
        .iter()
        .filter(|s| s.n_tokens > 0)
        .filter_map(|s| {
            by_name.get(s.category.as_str()).map(|c| {
                let slime_auc = oriented(s.feature_auc);
                let count_auc = oriented(c.auc_ad);
                AucPair {
                    category: s.category.clone(),
                    slime_auc,
                    count_auc,
                    relative_diff: (slime_auc - count_auc) / count_auc,
                }
            })
        })
        .collect();
    pairs.sort_by(|a, b| a.category.cmp(&b.category));
    let slime_aucs: Vec<f64> = pairs.iter().map(|p| p.slime_auc).collect();
    let count_aucs: Vec<f64> = pairs.iter().map(|p| p.count_auc).collect();
    compare_auc_vectors(&slime_aucs, &count_aucs).map(|(pearson_r, mwu_statistic, mwu_p)| {
        MethodComparison {
            pearson_r,
            mwu_statistic,
            mwu_p,
            pairs,
        }
    })
}

/// `(pearson r, U of the first vector, two-sided p)` for already oriented AUCs.
pub fn compare_auc_vectors(slime: &[f64], counts: &[f64]) -> Result<(f64, f64, f64)> {
    let r = pearson(slime, counts)?;
    let (u, p) = mann_whitney_u(slime, counts)?;
    Ok((r, u, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{roc_auc, AucImpact, Group, Verdict};
    use proptest::prelude::*;
    use std::path::Path;

    fn pair_count(x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .flat_map(|a| y.iter().map(move |b| (a, b)))
            .map(|(a, b)| {
                if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Two-sided permutation p-value by enumerating every split of the pool.
    fn brute_p(x: &[f64], y: &[f64]) -> f64 {
        let pool: Vec<f64> = x.iter().chain(y).copied().collect();
        let n = pool.len();
        let center = (x.len() * y.len()) as f64 / 2.0;
        let observed = (pair_count(x, y) - center).abs();
        let (mut extreme, mut total) = (0usize, 0usize);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != x.len() {
                continue;
            }
            let (a, b): (Vec<f64>, Vec<f64>) = {
                let mut a = Vec::new();
                let mut b = Vec::new();
                for (i, &v) in pool.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        a.push(v)
                    } else {
                        b.push(v)
                    }
                }
                (a, b)
            };
            total += 1;
            if (pair_count(&a, &b) - center).abs() >= observed - 1e-9 {
                extreme += 1;
            }
        }
        extreme as f64 / total as f64
    }

    #[test]
    fn u_examples() {
        assert_eq!(mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap().0, 0.0);
        assert_eq!(mann_whitney_u(&[1.0, 2.0], &[2.0, 3.0]).unwrap().0, 0.5);
        let x = [1.0, 2.0, 2.0, 5.0];
        let (u, p) = mann_whitney_u(&x, &x).unwrap();
        assert_eq!(u, 8.0);
        assert!(p >= 0.99);
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
    }

    #[test]
    fn exact_p_matches_tables() {
        // Complete separation with 3 vs 3: 2 of C(6, 3) = 20 splits are as extreme.
        let (_, p) = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((p - 0.1).abs() < 1e-12);
        let (_, p) = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert!((p - 2.0 / 6.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn u_matches_pair_counting(
            x in prop::collection::vec(0u8..10, 1..15),
            y in prop::collection::vec(0u8..10, 1..14),
        ) {
            prop_assume!(x.len() * y.len() <= 200);
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let y: Vec<f64> = y.into_iter().map(f64::from).collect();
            let (u, p) = mann_whitney_u(&x, &y).unwrap();
            prop_assert_eq!(u, pair_count(&x, &y));
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn exact_p_matches_enumeration(
            x in prop::collection::vec(0u8..6, 1..7),
            y in prop::collection::vec(0u8..6, 1..7),
        ) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let y: Vec<f64> = y.into_iter().map(f64::from).collect();
            let (_, p) = mann_whitney_u(&x, &y).unwrap();
            prop_assert!((p - brute_p(&x, &y)).abs() < 1e-9);
        }

        #[test]
        fn count_auc_matches_roc(values in prop::collection::vec((0u8..20, any::<bool>()), 2..40)) {
            let control: Vec<f64> = values.iter().filter(|v| !v.1).map(|v| f64::from(v.0)).collect();
            let ad: Vec<f64> = values.iter().filter(|v| v.1).map(|v| f64::from(v.0)).collect();
            prop_assume!(!control.is_empty() && !ad.is_empty());
            let (u, _) = mann_whitney_u(&control, &ad).unwrap();
            let (auc_control, auc_ad) = count_based_auc(u, control.len(), ad.len()).unwrap();
            // control as the positive class
            let scores: Vec<f64> = control.iter().chain(&ad).copied().collect();
            let labels: Vec<Label> = std::iter::repeat_n(Label::Ad, control.len())
                .chain(std::iter::repeat_n(Label::Control, ad.len()))
                .collect();
            prop_assert!((auc_control - roc_auc(&scores, &labels).unwrap()).abs() <= 1e-12);
            prop_assert_eq!(auc_ad, 1.0 - auc_control);
        }

        #[test]
        fn bonferroni_is_decreasing(m in 1usize..500) {
            prop_assert!(bonferroni_threshold(0.05, m + 1).unwrap() < bonferroni_threshold(0.05, m).unwrap());
        }
    }

    #[test]
    fn count_auc_examples() {
        assert_eq!(count_based_auc(6.0, 2, 3).unwrap(), (1.0, 0.0));
        assert_eq!(count_based_auc(3.0, 2, 3).unwrap(), (0.5, 0.5));
        assert_eq!(count_based_auc(0.0, 2, 2).unwrap(), (0.0, 1.0));
        assert!(count_based_auc(7.0, 2, 3).is_err());
        assert!(count_based_auc(-1.0, 2, 3).is_err());
    }

    #[test]
    fn bonferroni_examples() {
        let t = bonferroni_threshold(0.05, 111).unwrap();
        assert!((t - 0.000_450_450_450).abs() < 1e-12);
        // 0.000450… truncated to four decimals
        assert_eq!(format!("{:.4}", (t * 1e4).trunc() / 1e4), "0.0004");
        assert_eq!(bonferroni_threshold(0.05, 1).unwrap(), 0.05);
        assert!((bonferroni_threshold(0.01, 10).unwrap() - 0.001).abs() < 1e-18);
        assert!(bonferroni_threshold(0.05, 0).is_err());
    }

    fn dict() -> CategoryDictionary {
        CategoryDictionary::parse_str(
            "%\n1\tSocial\n2\tmarker\n3\tghost\n4\tempty\n%\nmother\t1\nboy\t1\nzzz\t2\nwraith\t3\n",
            Path::new("d.dic"),
        )
        .unwrap()
    }

    #[test]
    fn proportions_examples() {
        let d = dict();
        let props =
            category_proportions(&Document::new("a", Label::Ad, "the mother cooks"), &d).unwrap();
        assert!((props["Social"] - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(props["marker"], 0.0);
        let none = category_proportions(&Document::new("b", Label::Ad, "water sink"), &d).unwrap();
        assert!(none.values().all(|&v| v == 0.0));
        let all = category_proportions(&Document::new("c", Label::Ad, "zzz zzz"), &d).unwrap();
        assert_eq!(all["marker"], 100.0);
        assert!(category_proportions(&Document::new("e", Label::Ad, ""), &d).is_err());
    }

    fn planted_corpus() -> Corpus {
        let docs = (0..40)
            .map(|i| {
                let ad = i % 2 == 0;
                let extra = i % 3;
                let text = if ad {
                    format!("zzz zzz zzz the mother {} water", "sink ".repeat(extra))
                } else {
                    format!("zzz the mother boy {} water", "sink ".repeat(extra))
                };
                Document::new(
                    format!("d{i:02}"),
                    if ad { Label::Ad } else { Label::Control },
                    text,
                )
            })
            .collect();
        Corpus::new(docs).unwrap()
    }

    #[test]
    fn count_analysis_on_planted_corpus() {
        let stats = count_based_analysis(&planted_corpus(), &dict(), 0.05).unwrap();
        let names: Vec<&str> = stats.iter().map(|s| s.category.as_str()).collect();
        assert_eq!(names, ["Social", "marker", "ghost"]);
        let marker = &stats[1];
        assert!(marker.significant);
        assert!(marker.auc_ad > 0.5);
        let ghost = &stats[2];
        assert_eq!(ghost.u_control, 200.0);
        assert_eq!(ghost.auc_control, 0.5);
        assert!(!ghost.significant);
        let single = Corpus::new(vec![Document::new("a", Label::Ad, "zzz")]).unwrap();
        assert!(matches!(
            count_based_analysis(&single, &dict(), 0.05),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn bonferroni_denominator_counts_populated_categories() {
        let mut text = String::from("%\n");
        for i in 1..=117 {
            let name = match i {
                1 => "WC".to_string(),
                2 => "Analytic".to_string(),
                3 => "Clout".to_string(),
                4 => "Authentic".to_string(),
                5 => "Tone".to_string(),
                6 => "WPS".to_string(),
                n => format!("cat{n}"),
            };
            text.push_str(&format!("{i}\t{name}\n"));
        }
        text.push_str("%\n");
        for i in 1..=117 {
            text.push_str(&format!("w{i}\t{i}\n"));
        }
        let d = CategoryDictionary::parse_str(&text, Path::new("big.dic")).unwrap();
        assert_eq!(d.populated_categories().len(), 111);
        let docs = (0..20)
            .map(|i| {
                Document::new(
                    format!("d{i}"),
                    if i % 2 == 0 {
                        Label::Ad
                    } else {
                        Label::Control
                    },
                    format!("w{} w7", 7 + i),
                )
            })
            .collect();
        let stats = count_based_analysis(&Corpus::new(docs).unwrap(), &d, 0.05).unwrap();
        assert_eq!(stats.len(), 111);
        let threshold = 0.05 / 111.0;
        for s in &stats {
            assert_eq!(s.significant, s.p_value < threshold);
        }
    }

    fn feature(category: &str, auc: f64) -> FeatureStats {
        FeatureStats {
            category: category.into(),
            n_tokens: 10,
            mean_attr: 0.1,
            attr_group: Group::Ad,
            attr_pctile: Some(99.0),
            feature_auc: auc,
            null_auc_mean: 0.5,
            delta_auc: auc - 0.5,
            auc_impact: AucImpact::Positive,
            verdict: Verdict::Improves,
        }
    }

    fn counts(category: &str, auc_ad: f64) -> CountStats {
        CountStats {
            category: category.into(),
            proportions_control: vec![],
            proportions_ad: vec![],
            u_control: 0.0,
            p_value: 0.5,
            auc_control: 1.0 - auc_ad,
            auc_ad,
            significant: false,
        }
    }

    #[test]
    fn comparison_examples() {
        let aucs = [0.6, 0.7, 0.65, 0.8, 0.55];
        let slime: Vec<_> = aucs
            .iter()
            .enumerate()
            .map(|(i, &a)| feature(&format!("c{i}"), a))
            .collect();
        let count: Vec<_> = aucs
            .iter()
            .enumerate()
            .map(|(i, &a)| counts(&format!("c{i}"), a))
            .collect();
        let cmp = compare_methods(&slime, &count).unwrap();
        assert!((cmp.pearson_r - 1.0).abs() < 1e-12);
        assert_eq!(cmp.pairs.len(), 5);

        let flat: Vec<_> = (0..5).map(|i| counts(&format!("c{i}"), 0.6)).collect();
        assert!(compare_methods(&slime, &flat).is_err());
        assert!(compare_methods(&slime[..2], &count).is_err());
    }

    #[test]
    fn comparison_detects_shift_on_40_categories() {
        let count_aucs: Vec<f64> = (0..40).map(|i| 0.55 + 0.2 * i as f64 / 39.0).collect();
        let slime: Vec<_> = count_aucs
            .iter()
            .enumerate()
            .map(|(i, &a)| feature(&format!("c{i:02}"), (a + 0.1).min(1.0)))
            .collect();
        let count: Vec<_> = count_aucs
            .iter()
            .enumerate()
            .map(|(i, &a)| counts(&format!("c{i:02}"), a))
            .collect();
        let cmp = compare_methods(&slime, &count).unwrap();
        assert!(cmp.pearson_r > 0.95);
        assert!(cmp.mwu_p < 0.05, "p = {}", cmp.mwu_p);
        assert!(cmp.pairs.iter().all(|p| p.relative_diff > 0.0));
    }
}
