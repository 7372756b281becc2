//! Acceptance checks. Runs as a plain binary (`harness = false`) so every
//! check prints its own PASS/FAIL line; exits non-zero if any check fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView2};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slime_core::attribution::{
    import_attributions, integrated_gradients, make_baseline, AttributedCorpus, AttributedDocument,
    AttributionTarget, Differentiable, IgConfig, ModelTarget, QuadratureRule,
};
use slime_core::config::PipelineConfig;
use slime_core::corpus::Label;
use slime_core::error::{Error, Result};
use slime_core::pipeline;
use slime_core::report::{read_feature_stats, FEATURE_STATS_FILE};
use slime_core::stats::{
    roc_auc, AucImpact, FeatureStats, Group, StatsConfig, TokenTable, Verdict,
};
use slime_core::tagging::TokenRecord;
use slime_core::toymodel::{ModelParams, Vocab};
use slime_core::validation::{
    bonferroni_threshold, compare_methods, count_based_auc, mann_whitney_u, CountStats,
};

type Outcome = std::result::Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> std::result::Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn random_model(rng: &mut ChaCha8Rng, vocab_size: usize, dim: usize) -> ModelParams {
    let vocab = Vocab::new((0..vocab_size).map(|i| format!("w{i}")));
    let mut params = ModelParams::init(vocab, dim, 512, rng).expect("valid model");
    let scale = Uniform::new_inclusive(-3.0, 3.0).expect("finite");
    params.embeddings.mapv_inplace(|_| scale.sample(rng));
    params.head_weights = Array1::from_shape_fn(dim, |_| scale.sample(rng));
    params.head_bias = scale.sample(rng);
    params
}

fn random_tokens(rng: &mut ChaCha8Rng, vocab_size: usize) -> Vec<String> {
    let n = rng.random_range(1..30);
    (0..n)
        .map(|_| format!("w{}", rng.random_range(0..vocab_size)))
        .collect()
}

fn ig_completeness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = IgConfig {
        steps: 2048,
        rule: QuadratureRule::Trapezoid,
        target: AttributionTarget::Probability,
    };
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let params = random_model(&mut rng, 40, 16);
        let input = params
            .embed(&random_tokens(&mut rng, 40))
            .map_err(|e| e.to_string())?;
        let baseline = make_baseline(input.nrows(), input.ncols());
        let target = ModelTarget::new(&params, cfg.target);
        let result = integrated_gradients(&target, input.view(), baseline.view(), &cfg)
            .map_err(|e| e.to_string())?;
        let direct = (result.per_token.sum() - (result.f_x - result.f_baseline)).abs();
        worst = worst.max(direct).max(result.completeness_residual.abs());
    }
    ensure(worst <= 1e-4, || format!("max residual {worst:e}"))?;
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "max residual {worst:.2e} over 50 inputs in {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

struct Linear {
    weights: Array2<f64>,
}

impl Differentiable for Linear {
    fn value(&self, x: ArrayView2<f64>) -> Result<f64> {
        Ok((&self.weights * &x).sum())
    }

    fn gradient(&self, _x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.weights.clone())
    }
}

fn ig_linear_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dist = Uniform::new_inclusive(-5.0, 5.0).expect("finite");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, d) = (rng.random_range(1..20), rng.random_range(1..12));
        let model = Linear {
            weights: Array2::from_shape_fn((n, d), |_| dist.sample(&mut rng)),
        };
        let x = Array2::from_shape_fn((n, d), |_| dist.sample(&mut rng));
        let baseline = make_baseline(n, d);
        for steps in [1, 8, 512] {
            for rule in [QuadratureRule::Left, QuadratureRule::Trapezoid] {
                let cfg = IgConfig {
                    steps,
                    rule,
                    target: AttributionTarget::Probability,
                };
                let result = integrated_gradients(&model, x.view(), baseline.view(), &cfg)
                    .map_err(|e| e.to_string())?;
                let expected = &model.weights * &x;
                let err = (&result.per_dim - &expected)
                    .mapv(f64::abs)
                    .fold(0.0f64, |a, &b| a.max(b));
                worst = worst.max(err);
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!(
        "max deviation {worst:.2e} over 100 draws, m in {{1, 8, 512}}"
    ))
}

fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut params = random_model(&mut rng, 30, 8);
        // keep the logistic away from saturation so differences stay resolvable
        params.head_weights.mapv_inplace(|w| w / 3.0);
        params.head_bias /= 3.0;
        let x = params
            .embed(&random_tokens(&mut rng, 30))
            .map_err(|e| e.to_string())?;
        for target in [AttributionTarget::Probability, AttributionTarget::Logit] {
            let model = ModelTarget::new(&params, target);
            let analytic = model.gradient(x.view()).map_err(|e| e.to_string())?;
            let norm = analytic.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            for ((i, j), &g) in analytic.indexed_iter() {
                let mut plus = x.clone();
                let mut minus = x.clone();
                plus[[i, j]] += h;
                minus[[i, j]] -= h;
                let fd = (model.value(plus.view()).map_err(|e| e.to_string())?
                    - model.value(minus.view()).map_err(|e| e.to_string())?)
                    / (2.0 * h);
                // relative to the entry, floored at 1e-3 of the largest entry
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-3 * norm).max(1e-12);
                worst = worst.max(rel);
            }
        }
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.2e} over 100 draws"))
}

fn pair_count_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (s_ad, _) in scores.iter().zip(labels).filter(|(_, &l)| l == Label::Ad) {
        for (s_ctl, _) in scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == Label::Control)
        {
            pairs += 1.0;
            if s_ad > s_ctl {
                wins += 1.0;
            } else if s_ad == s_ctl {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn random_two_class(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, Vec<Label>) {
    loop {
        let n = rng.random_range(2..=max_n);
        let scores: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..6u8)) / 2.0)
            .collect();
        let labels: Vec<Label> = (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    Label::Ad
                } else {
                    Label::Control
                }
            })
            .collect();
        if labels.contains(&Label::Ad) && labels.contains(&Label::Control) {
            return (scores, labels);
        }
    }
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..500 {
        let (scores, labels) = random_two_class(&mut rng, 12);
        let auc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let expected = pair_count_auc(&scores, &labels);
        ensure(auc == expected, || {
            format!("trial {trial}: {auc} != {expected}")
        })?;
    }
    Ok("500 instances equal to pair counting".into())
}

fn mwu_auc_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (scores, labels) = random_two_class(&mut rng, 40);
        let split = |want: Label| -> Vec<f64> {
            scores
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == want)
                .map(|(&s, _)| s)
                .collect()
        };
        let (control, ad) = (split(Label::Control), split(Label::Ad));
        let (u_control, _) = mann_whitney_u(&control, &ad).map_err(|e| e.to_string())?;
        let (_, auc_ad) =
            count_based_auc(u_control, control.len(), ad.len()).map_err(|e| e.to_string())?;
        let auc = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((auc_ad - auc).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    let threshold = bonferroni_threshold(0.05, 111).map_err(|e| e.to_string())?;
    ensure((threshold - 0.05 / 111.0).abs() < 1e-18, || {
        format!("threshold {threshold}")
    })?;
    ensure(format!("{threshold:.6}") == "0.000450", || {
        format!("threshold {threshold}")
    })?;
    let truncated = (threshold * 1e4).floor() / 1e4;
    ensure(format!("{truncated:.4}") == "0.0004", || {
        format!("truncated {truncated}")
    })?;
    Ok(format!(
        "max deviation {worst:.1e} over 200 instances; Bonferroni(0.05, 111) = {threshold:.8}"
    ))
}

fn record(doc: usize, label: Label, attribution: f64, categories: &[&str]) -> TokenRecord {
    TokenRecord {
        doc_id: format!("d{doc:03}"),
        position: 0,
        surface: String::new(),
        attribution,
        categories: categories
            .iter()
            .map(|c| c.to_string())
            .collect::<BTreeSet<_>>(),
        doc_label: label,
    }
}

fn binomial_band(rate: f64, trials: usize) -> (f64, f64) {
    let se = (rate * (1.0 - rate) / trials as f64).sqrt();
    (rate - 3.0 * se, rate + 3.0 * se)
}

fn permutation_calibration() -> Outcome {
    const TRIALS: usize = 1000;
    const DOCS: usize = 100;
    const TOKENS_PER_DOC: usize = 20;
    const N_F: usize = 50;
    let start = Instant::now();
    let dist = Uniform::new_inclusive(-1.0, 1.0).expect("finite");
    let cfg_base = StatsConfig::default();
    let mut attr_flags = 0usize;
    let mut auc_flags = 0usize;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + trial as u64);
        let total = DOCS * TOKENS_PER_DOC;
        let chosen: BTreeSet<usize> = rand::seq::index::sample(&mut rng, total, N_F)
            .into_iter()
            .collect();
        let records: Vec<TokenRecord> = (0..total)
            .map(|i| {
                let doc = i / TOKENS_PER_DOC;
                let label = if doc.is_multiple_of(2) {
                    Label::Ad
                } else {
                    Label::Control
                };
                let cats: &[&str] = if chosen.contains(&i) { &["f"] } else { &[] };
                record(doc, label, dist.sample(&mut rng), cats)
            })
            .collect();
        let cfg = StatsConfig {
            seed: trial as u64,
            ..cfg_base
        };
        let table = TokenTable::new(&records).map_err(|e| e.to_string())?;
        let stats = table.feature_stats("f", &cfg).map_err(|e| e.to_string())?;
        attr_flags += usize::from(stats.attr_group != Group::None);
        auc_flags += usize::from(stats.auc_impact != AucImpact::None);
    }
    let (lo, hi) = binomial_band(0.10, TRIALS);
    let attr_rate = attr_flags as f64 / TRIALS as f64;
    let auc_rate = auc_flags as f64 / TRIALS as f64;
    ensure((lo..=hi).contains(&attr_rate), || {
        format!("attribution flag rate {attr_rate:.3} outside [{lo:.4}, {hi:.4}]")
    })?;
    ensure((lo..=hi).contains(&auc_rate), || {
        format!("AUC flag rate {auc_rate:.3} outside [{lo:.4}, {hi:.4}]")
    })?;
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "flag rates {attr_rate:.3} (attribution), {auc_rate:.3} (AUC), band [{lo:.4}, {hi:.4}], {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn fixture_config(out: &Path) -> std::result::Result<PipelineConfig, String> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic");
    let mut cfg = PipelineConfig::load(&dir.join("slime.toml")).map_err(|e| e.to_string())?;
    cfg.output_dir = out.to_path_buf();
    Ok(cfg)
}

fn find<'a>(
    stats: &'a [FeatureStats],
    name: &str,
) -> std::result::Result<&'a FeatureStats, String> {
    stats
        .iter()
        .find(|s| s.category == name)
        .ok_or_else(|| format!("category {name} missing"))
}

fn planted_signal() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline::run_all(&fixture_config(&a)?).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    pipeline::run_all(&fixture_config(&b)?).map_err(|e| e.to_string())?;
    let stats = read_feature_stats(&a.join(FEATURE_STATS_FILE)).map_err(|e| e.to_string())?;
    let again = read_feature_stats(&b.join(FEATURE_STATS_FILE)).map_err(|e| e.to_string())?;
    ensure(stats == again, || {
        "feature stats differ between runs".into()
    })?;

    let filler = find(&stats, "filler")?;
    ensure(
        filler.verdict == Verdict::Improves
            && filler.attr_group == Group::Ad
            && filler.delta_auc > 0.0,
        || format!("filler: {filler:?}"),
    )?;
    let setting = find(&stats, "setting")?;
    ensure(setting.verdict == Verdict::Irrelevant, || {
        format!("setting: {setting:?}")
    })?;
    within(elapsed, 30.0)?;
    Ok(format!(
        "filler improves (delta {:+.3}), setting irrelevant, single run {:.2}s",
        filler.delta_auc,
        elapsed.as_secs_f64()
    ))
}

fn feature(category: &str, auc: f64) -> FeatureStats {
    FeatureStats {
        category: category.into(),
        n_tokens: 10,
        mean_attr: 0.0,
        attr_group: Group::None,
        attr_pctile: Some(50.0),
        feature_auc: auc,
        null_auc_mean: 0.5,
        delta_auc: auc - 0.5,
        auc_impact: AucImpact::None,
        verdict: Verdict::Irrelevant,
    }
}

fn count_row(category: &str, auc_ad: f64) -> CountStats {
    CountStats {
        category: category.into(),
        proportions_control: Vec::new(),
        proportions_ad: Vec::new(),
        u_control: 0.0,
        p_value: 1.0,
        auc_control: 1.0 - auc_ad,
        auc_ad,
        significant: false,
    }
}

/// Two-sided exact p of U for `x` against `y` by enumerating every split of
/// the pooled sample (no ties assumed beyond midranks).
fn exact_two_sided_p(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let ranks: Vec<f64> = pooled
        .iter()
        .map(|v| {
            let below = pooled.iter().filter(|w| *w < v).count() as f64;
            let equal = pooled.iter().filter(|w| *w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let k = x.len();
    let offset = (k * (k + 1)) as f64 / 2.0;
    let center = (k * y.len()) as f64 / 2.0;
    let observed = (ranks[..k].iter().sum::<f64>() - offset - center).abs();
    let (mut extreme, mut total) = (0u64, 0u64);
    let mut mask: u64 = (1 << k) - 1;
    while mask < (1u64 << n) {
        let rank_sum: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        total += 1;
        if (rank_sum - offset - center).abs() >= observed - 1e-9 {
            extreme += 1;
        }
        // next subset of the same size
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        mask = (((r ^ mask) >> 2) / c) | r;
    }
    extreme as f64 / total as f64
}

fn comparison_harness() -> Outcome {
    // evenly spread over a typical range of weak-to-moderate category AUCs
    let count_aucs: Vec<f64> = (0..12).map(|i| 0.55 + 0.2 * i as f64 / 11.0).collect();
    let slime_aucs: Vec<f64> = count_aucs.iter().map(|a| (a + 0.1).min(1.0)).collect();
    let slime: Vec<FeatureStats> = slime_aucs
        .iter()
        .enumerate()
        .map(|(i, &a)| feature(&format!("c{i:02}"), a))
        .collect();
    let counts: Vec<CountStats> = count_aucs
        .iter()
        .enumerate()
        .map(|(i, &a)| count_row(&format!("c{i:02}"), a))
        .collect();
    let result = compare_methods(&slime, &counts).map_err(|e| e.to_string())?;
    ensure(result.pairs.len() == 12, || {
        format!("{} pairs", result.pairs.len())
    })?;
    ensure(result.pearson_r > 0.95, || {
        format!("r = {}", result.pearson_r)
    })?;
    let exact = exact_two_sided_p(&slime_aucs, &count_aucs);
    ensure(result.mwu_p < 0.05, || {
        format!("p = {} (exact {exact})", result.mwu_p)
    })?;
    ensure(exact < 0.05, || format!("exact p = {exact}"))?;
    Ok(format!(
        "r = {:.4}, U = {}, p = {:.4} (exact enumeration {:.4})",
        result.pearson_r, result.mwu_statistic, result.mwu_p, exact
    ))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline::run_all(&fixture_config(&a)?).map_err(|e| e.to_string())?;
    pipeline::run_all(&fixture_config(&b)?).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for entry in fs::read_dir(&a).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !matches!(ext, "csv" | "svg") {
            continue;
        }
        let name = path.file_name().expect("file name");
        let left = fs::read(&path).map_err(|e| e.to_string())?;
        let right = fs::read(b.join(name)).map_err(|e| e.to_string())?;
        ensure(left == right, || {
            format!("{} differs", name.to_string_lossy())
        })?;
        compared += 1;
    }
    ensure(compared >= 6, || format!("only {compared} csv/svg files"))?;
    Ok(format!("{compared} csv/svg files byte-identical"))
}

const DOCUMENTED: &str = r#"{"id":"s01","label":1,"tokens":["the","boy","uh","fell"],"attributions":[0.01,-0.02,0.31,0.004]}
{"id":"s02","label":0,"tokens":["water","overflowing"],"attributions":[0.0,-0.25],"f_x":0.12}
"#;

fn interchange() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = tmp.path().join("attr.jsonl");
    fs::write(&path, DOCUMENTED).map_err(|e| e.to_string())?;
    let parsed = import_attributions(&path).map_err(|e| e.to_string())?;
    ensure(parsed.documents.len() == 2, || {
        "expected 2 documents".into()
    })?;

    let broken = DOCUMENTED.to_string()
        + "{\"id\":\"s03\",\"label\":0,\"tokens\":[\"a\",\"b\"],\"attributions\":[0.5]}\n";
    fs::write(&path, broken).map_err(|e| e.to_string())?;
    match import_attributions(&path) {
        Err(Error::Parse { line: 3, .. }) => {}
        other => return Err(format!("length mismatch not rejected at line 3: {other:?}")),
    }

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dist = Uniform::new_inclusive(-1e3, 1e3).expect("finite");
    let documents: Vec<AttributedDocument> = (0..25)
        .map(|i| {
            let n = rng.random_range(1..15);
            AttributedDocument {
                id: format!("r{i:02}"),
                label: if i % 2 == 0 {
                    Label::Ad
                } else {
                    Label::Control
                },
                tokens: (0..n).map(|t| format!("tok{t}\"\\é")).collect(),
                attributions: (0..n)
                    .map(|_| dist.sample(&mut rng) * 1e-7_f64.powi(rng.random_range(0..3)))
                    .collect(),
                f_x: rng.random_bool(0.5).then(|| rng.random::<f64>()),
            }
        })
        .collect();
    let original = AttributedCorpus {
        documents,
        warnings: Vec::new(),
    };
    let export = tmp.path().join("export.jsonl");
    original.export(&export).map_err(|e| e.to_string())?;
    let back = import_attributions(&export).map_err(|e| e.to_string())?;
    ensure(back.documents == original.documents, || {
        "round trip changed documents".into()
    })?;
    Ok(
        "documented format accepted, mismatch rejected at line 3, 25-document round trip lossless"
            .into(),
    )
}

fn main() {
    let checks: [Check; 10] = [
        ("IG completeness", ig_completeness),
        ("IG linear closed form", ig_linear_closed_form),
        ("gradient oracle", gradient_oracle),
        ("AUC oracle", auc_oracle),
        ("MWU/AUC consistency", mwu_auc_consistency),
        ("permutation calibration", permutation_calibration),
        ("planted-signal recovery", planted_signal),
        ("method comparison harness", comparison_harness),
        ("pipeline determinism", determinism),
        ("interchange robustness", interchange),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} acceptance checks passed",
        checks.len() - failed,
        checks.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
