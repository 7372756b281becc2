//! TOML pipeline configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::attribution::IgConfig;
use crate::corpus::CorpusFormat;
use crate::error::{Error, Result};
use crate::report::PlotSpec;
use crate::stats::StatsConfig;
use crate::tagging::DEFAULT_EXCLUDED;
use crate::toymodel::TrainConfig;

/// Environment variable that overrides the configured master seed.
pub const SEED_ENV: &str = "SLIME_SEED";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    corpus: Option<RawCorpus>,
    dictionary: Option<RawDictionary>,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    ig: IgConfig,
    #[serde(default)]
    stats: StatsConfig,
    #[serde(default)]
    validation: RawValidation,
    #[serde(default)]
    report: PlotSpec,
    #[serde(default)]
    output: RawOutput,
    #[serde(default)]
    attribution: RawAttribution,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCorpus {
    path: Option<PathBuf>,
    format: Option<CorpusFormat>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDictionary {
    path: Option<PathBuf>,
    excluded: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawValidation {
    alpha: f64,
}

impl Default for RawValidation {
    fn default() -> Self {
        RawValidation { alpha: 0.05 }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttribution {
    import: Option<PathBuf>,
}

/// Fully resolved pipeline settings. Paths are absolute or relative to the
/// process working directory; `seed` drives every random draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corpus_path: PathBuf,
    pub corpus_format: CorpusFormat,
    pub dictionary_path: PathBuf,
    pub excluded: Vec<String>,
    pub train: TrainConfig,
    pub ig: IgConfig,
    pub stats: StatsConfig,
    pub alpha: f64,
    pub report: PlotSpec,
    pub output_dir: PathBuf,
    pub import_path: Option<PathBuf>,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    /// Parses TOML text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("byte {}", s.start))
                .unwrap_or_else(|| "config".into());
            Error::config(field, e.message().to_string())
        })?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let corpus = raw
            .corpus
            .ok_or_else(|| Error::config("corpus", "section is required"))?;
        let corpus_path = corpus
            .path
            .map(resolve)
            .ok_or_else(|| Error::config("corpus.path", "is required"))?;
        let dictionary = raw
            .dictionary
            .ok_or_else(|| Error::config("dictionary.path", "is required"))?;
        let dictionary_path = dictionary
            .path
            .map(resolve)
            .ok_or_else(|| Error::config("dictionary.path", "is required"))?;
        let seed = raw.seed.unwrap_or(0);

        let config = PipelineConfig {
            corpus_path,
            corpus_format: corpus.format.unwrap_or(CorpusFormat::Jsonl),
            dictionary_path,
            excluded: dictionary
                .excluded
                .unwrap_or_else(|| DEFAULT_EXCLUDED.iter().map(|s| s.to_string()).collect()),
            train: raw.train,
            ig: raw.ig,
            stats: raw.stats,
            alpha: raw.validation.alpha,
            report: raw.report,
            output_dir: resolve(raw.output.dir.unwrap_or_else(|| PathBuf::from("out"))),
            import_path: raw.attribution.import.map(resolve),
            seed,
        }
        .with_seed(seed);
        config.validate()?;
        Ok(config)
    }

    /// Sets the master seed and propagates it to every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.stats.seed = seed;
        self
    }

    /// Applies `SLIME_SEED` when set.
    pub fn with_env_seed(self) -> Result<Self> {
        match std::env::var(SEED_ENV) {
            Ok(value) => {
                let seed = value.trim().parse().map_err(|_| {
                    Error::config(SEED_ENV, format!("not an unsigned integer: {value:?}"))
                })?;
                Ok(self.with_seed(seed))
            }
            Err(_) => Ok(self),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.ig.validate()?;
        self.stats.validate()?;
        self.report.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("validation.alpha", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Checks that an input path named by `field` exists.
    pub fn require_exists(field: &str, path: &Path) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::config(
                field,
                format!("{} does not exist", path.display()),
            ))
        }
    }
}
