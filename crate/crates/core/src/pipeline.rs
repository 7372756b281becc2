//! File-backed pipeline stages. Each stage reads its inputs from disk and
//! writes its outputs under the configured output directory, so running the
//! stages one by one gives the same files as [`run_all`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::attribution::{
    attribute_corpus, import_attributions, make_baseline, AttributedCorpus, Differentiable,
    ModelTarget,
};
use crate::config::PipelineConfig;
use crate::corpus::{kfold_split, load_corpus, Corpus};
use crate::error::{Error, Result};
use crate::report::{self, ComparisonFile};
use crate::stats::{analyze_all, Verdict};
use crate::tagging::{parse_dictionary, tag_corpus, CategoryDictionary};
use crate::toymodel::{select_best_fold, train, ModelParams};
use crate::validation::{compare_methods, count_based_analysis};

pub const MODEL_FILE: &str = "model.json";
pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const ATTRIBUTIONS_FILE: &str = "attributions.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

fn out_path(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn ensure_out(cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))
}

/// Checks for a file that an earlier stage should have produced.
fn require_stage_input(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingStageOutput {
            path: path.to_path_buf(),
            stage,
        })
    }
}

pub fn load_config_corpus(cfg: &PipelineConfig) -> Result<Corpus> {
    PipelineConfig::require_exists("corpus.path", &cfg.corpus_path)?;
    load_corpus(&cfg.corpus_path, cfg.corpus_format)
}

pub fn load_config_dictionary(cfg: &PipelineConfig) -> Result<CategoryDictionary> {
    PipelineConfig::require_exists("dictionary.path", &cfg.dictionary_path)?;
    Ok(parse_dictionary(&cfg.dictionary_path)?.with_excluded(&cfg.excluded))
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_validation: usize,
    pub val_accuracy: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub folds: Vec<FoldSummary>,
    pub best_fold: usize,
    pub model: PathBuf,
}

pub fn run_train(cfg: &PipelineConfig) -> Result<TrainSummary> {
    let corpus = load_config_corpus(cfg)?;
    let plan = kfold_split(&corpus, cfg.train.folds, cfg.seed)?;
    let results = train(&corpus, &plan, &cfg.train)?;
    let best = select_best_fold(&results)?;

    let checkpoints = cfg.output_dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&checkpoints).map_err(|e| Error::io(&checkpoints, e))?;
    let sizes = plan.fold_sizes();
    let mut folds = Vec::with_capacity(results.len());
    let mut accuracy_csv = String::from("fold,n_validation,val_accuracy,final_loss,selected\n");
    for r in &results {
        r.params
            .save(&checkpoints.join(format!("fold_{}.json", r.fold)))?;
        let final_loss = r.train_losses.last().copied().unwrap_or(f64::NAN);
        accuracy_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.fold,
            sizes[r.fold],
            r.val_accuracy,
            final_loss,
            r.fold == best.fold
        ));
        folds.push(FoldSummary {
            fold: r.fold,
            n_validation: sizes[r.fold],
            val_accuracy: r.val_accuracy,
            final_loss,
        });
    }
    report::write_file(&out_path(cfg, ACCURACY_FILE), &accuracy_csv)?;
    let model = out_path(cfg, MODEL_FILE);
    best.params.save(&model)?;
    Ok(TrainSummary {
        folds,
        best_fold: best.fold,
        model,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AttributeSummary {
    pub documents: usize,
    pub tokens: usize,
    pub max_abs_residual: Option<f64>,
    pub warnings: Vec<String>,
    pub output: PathBuf,
}

fn write_attributions(
    cfg: &PipelineConfig,
    attributed: &AttributedCorpus,
    residual: Option<f64>,
) -> Result<AttributeSummary> {
    ensure_out(cfg)?;
    let output = out_path(cfg, ATTRIBUTIONS_FILE);
    attributed.export(&output)?;
    Ok(AttributeSummary {
        documents: attributed.documents.len(),
        tokens: attributed.documents.iter().map(|d| d.tokens.len()).sum(),
        max_abs_residual: residual,
        warnings: attributed.warnings.clone(),
        output,
    })
}

/// Integrated gradients for every corpus document under the trained model.
pub fn run_attribute(cfg: &PipelineConfig) -> Result<AttributeSummary> {
    let corpus = load_config_corpus(cfg)?;
    let model_path = out_path(cfg, MODEL_FILE);
    require_stage_input(&model_path, "train")?;
    let params = ModelParams::load(&model_path)?;
    let attributed = attribute_corpus(&params, &corpus, &cfg.ig)?;
    let target = ModelTarget::new(&params, cfg.ig.target);
    let residual = attributed
        .documents
        .iter()
        .filter_map(|d| {
            let f_x = d.f_x?;
            let zeros = make_baseline(d.tokens.len(), params.dim());
            let f_base = target.value(zeros.view()).ok()?;
            Some((d.attributions.iter().sum::<f64>() - (f_x - f_base)).abs())
        })
        .fold(None, |acc: Option<f64>, r| {
            Some(acc.map_or(r, |a| a.max(r)))
        });
    write_attributions(cfg, &attributed, residual)
}

/// Validates externally computed attributions and stores them as the stage
/// output. `input` falls back to `attribution.import` from the config.
pub fn run_import(cfg: &PipelineConfig, input: Option<&Path>) -> Result<AttributeSummary> {
    let path = input
        .map(Path::to_path_buf)
        .or_else(|| cfg.import_path.clone())
        .ok_or_else(|| {
            Error::config(
                "attribution.import",
                "no input given; pass --input or set attribution.import",
            )
        })?;
    PipelineConfig::require_exists("attribution.import", &path)?;
    let attributed = import_attributions(&path)?;
    write_attributions(cfg, &attributed, None)
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeSummary {
    pub categories: usize,
    pub improves: Vec<String>,
    pub contributes: Vec<String>,
    pub absent: usize,
    pub output: PathBuf,
}

pub fn run_analyze(cfg: &PipelineConfig) -> Result<AnalyzeSummary> {
    let dict = load_config_dictionary(cfg)?;
    let input = out_path(cfg, ATTRIBUTIONS_FILE);
    require_stage_input(&input, "attribute")?;
    let attributed = import_attributions(&input)?;
    let records = tag_corpus(&attributed, &dict)?;
    let stats = analyze_all(&records, &dict, &cfg.stats)?;
    let output = out_path(cfg, report::FEATURE_STATS_FILE);
    report::write_file(&output, &report::feature_stats_csv(&stats))?;
    let with = |v: Verdict| {
        stats
            .iter()
            .filter(|s| s.verdict == v)
            .map(|s| s.category.clone())
            .collect::<Vec<_>>()
    };
    Ok(AnalyzeSummary {
        categories: stats.len(),
        improves: with(Verdict::Improves),
        contributes: with(Verdict::Contributes),
        absent: with(Verdict::Absent).len(),
        output,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateSummary {
    pub categories: usize,
    pub significant: Vec<String>,
    pub comparison: ComparisonFile,
    pub outputs: Vec<PathBuf>,
}

/// Count-based baseline plus its comparison against the attribution AUCs.
/// A failed comparison is recorded in the output file rather than aborting.
pub fn run_validate(cfg: &PipelineConfig) -> Result<ValidateSummary> {
    let corpus = load_config_corpus(cfg)?;
    let dict = load_config_dictionary(cfg)?;
    let stats_path = out_path(cfg, report::FEATURE_STATS_FILE);
    require_stage_input(&stats_path, "analyze")?;
    let stats = report::read_feature_stats(&stats_path)?;
    let counts = count_based_analysis(&corpus, &dict, cfg.alpha)?;
    let comparison = ComparisonFile::from_result(&compare_methods(&stats, &counts));

    let count_path = out_path(cfg, report::COUNT_STATS_FILE);
    let comparison_path = out_path(cfg, report::COMPARISON_FILE);
    report::write_file(&count_path, &report::count_stats_csv(&counts))?;
    report::write_file(&comparison_path, &comparison.to_json())?;
    Ok(ValidateSummary {
        categories: counts.len(),
        significant: counts
            .iter()
            .filter(|c| c.significant)
            .map(|c| c.category.clone())
            .collect(),
        comparison,
        outputs: vec![count_path, comparison_path],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub outputs: Vec<PathBuf>,
}

/// Re-renders all result files from the analyze and validate outputs.
pub fn run_report(cfg: &PipelineConfig) -> Result<ReportSummary> {
    let stats_path = out_path(cfg, report::FEATURE_STATS_FILE);
    let count_path = out_path(cfg, report::COUNT_STATS_FILE);
    let comparison_path = out_path(cfg, report::COMPARISON_FILE);
    require_stage_input(&stats_path, "analyze")?;
    require_stage_input(&count_path, "validate")?;
    require_stage_input(&comparison_path, "validate")?;
    let stats = report::read_feature_stats(&stats_path)?;
    let counts = report::read_count_stats(&count_path)?;
    let comparison = ComparisonFile::read(&comparison_path)?;
    let outputs =
        report::export_results(&stats, &counts, &comparison, &cfg.output_dir, &cfg.report)?;
    Ok(ReportSummary { outputs })
}

#[derive(Debug, Clone, Serialize)]
pub struct AllSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSummary>,
    pub attribute: AttributeSummary,
    pub analyze: AnalyzeSummary,
    pub validate: ValidateSummary,
    pub report: ReportSummary,
}

/// Every stage in order. With `attribution.import` set, training is skipped
/// and the external attributions are used instead.
pub fn run_all(cfg: &PipelineConfig) -> Result<AllSummary> {
    let (train, attribute) = match &cfg.import_path {
        Some(path) => (None, run_import(cfg, Some(path))?),
        None => {
            let t = run_train(cfg)?;
            (Some(t), run_attribute(cfg)?)
        }
    };
    Ok(AllSummary {
        train,
        attribute,
        analyze: run_analyze(cfg)?,
        validate: run_validate(cfg)?,
        report: run_report(cfg)?,
    })
}
