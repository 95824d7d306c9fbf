//! Pipeline configuration: one JSON document with a section per module.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use claims_ssl::embeddings::CbowConfig;
use claims_ssl::eval::{LimeConfig, SanityConfig, StabilityConfig};
use claims_ssl::models::{GbmConfig, LogitConfig, ModelKind, SplitSpec, SvmConfig, TransformerConfig};
use claims_ssl::narrative::DEFAULT_MIN_COUNT;
use claims_ssl::rng::derive_seed;
use claims_ssl::synthgen::{GeneratorConfig, DEFAULT_SEED};
use claims_ssl::Execution;
use serde::{Deserialize, Serialize};

/// File names inside the workspace directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub root: PathBuf,
    pub cohort: PathBuf,
    pub pretrain: PathBuf,
    pub generator: PathBuf,
    pub vocab: PathBuf,
    pub embeddings: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
    /// Risk-factor map for the logistic model; the bundled map when absent.
    pub risk_map: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            root: "work".into(),
            cohort: "cohort.jsonl".into(),
            pretrain: "pretrain.jsonl".into(),
            generator: "generator.json".into(),
            vocab: "vocab.tsv".into(),
            embeddings: "embeddings.bin".into(),
            models: "models".into(),
            reports: "reports".into(),
            risk_map: None,
        }
    }
}

impl Paths {
    pub fn file(&self, name: &Path) -> PathBuf {
        self.root.join(name)
    }

    pub fn cohort(&self) -> PathBuf {
        self.file(&self.cohort)
    }

    pub fn pretrain(&self) -> PathBuf {
        self.file(&self.pretrain)
    }

    pub fn generator(&self) -> PathBuf {
        self.file(&self.generator)
    }

    pub fn vocab(&self) -> PathBuf {
        self.file(&self.vocab)
    }

    pub fn embeddings(&self) -> PathBuf {
        self.file(&self.embeddings)
    }

    pub fn models_dir(&self) -> PathBuf {
        self.file(&self.models)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.file(&self.reports)
    }

    pub fn model(&self, kind: ModelKind) -> PathBuf {
        self.models_dir().join(format!("{}.json", kind.name()))
    }

    pub fn encoder(&self) -> PathBuf {
        self.models_dir().join("mlm-encoder.json")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.reports_dir().join(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub n_pairs: usize,
    pub skip_lime: bool,
    /// Models evaluated by `stability` when none is named on the command line.
    pub models: Vec<ModelKind>,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection {
            n_pairs: 5000,
            skip_lime: false,
            models: vec![ModelKind::BowSvm, ModelKind::EmbedGbm, ModelKind::MlmTransformer],
        }
    }
}

/// Everything the subcommands need. Module seeds are derived from `seed`;
/// seeds written inside module sections are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Forces CBOW, the only trainer whose parallel mode is order dependent,
    /// to run sequentially.
    pub deterministic: bool,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub paths: Paths,
    pub generator: GeneratorConfig,
    pub min_count: u64,
    pub split: SplitSpec,
    pub cbow: CbowConfig,
    pub risk_logit: LogitConfig,
    pub bow_svm: SvmConfig,
    pub embed_gbm: GbmConfig,
    pub mlm: TransformerConfig,
    pub lime: LimeConfig,
    pub stability: StabilitySection,
    pub sanity: SanityConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut config = PipelineConfig {
            seed: DEFAULT_SEED,
            deterministic: true,
            threads: 0,
            paths: Paths::default(),
            generator: GeneratorConfig::default(),
            min_count: DEFAULT_MIN_COUNT,
            split: SplitSpec::default(),
            cbow: CbowConfig::default(),
            risk_logit: LogitConfig::default(),
            bow_svm: SvmConfig::default(),
            embed_gbm: GbmConfig {
                n_trees: 300,
                ..GbmConfig::default()
            },
            mlm: TransformerConfig {
                dim: 32,
                ffn_dim: 64,
                max_len: 64,
                max_pretrain_sequences: 50_000,
                ..TransformerConfig::default()
            },
            lime: LimeConfig::default(),
            stability: StabilitySection::default(),
            sanity: SanityConfig::default(),
        };
        config.apply_seed(DEFAULT_SEED);
        config
    }
}

const SPLIT_STREAM: u64 = 1;
const CBOW_STREAM: u64 = 2;
const SVM_STREAM: u64 = 3;
const GBM_STREAM: u64 = 4;
const MLM_STREAM: u64 = 5;
const STABILITY_STREAM: u64 = 6;
const SANITY_STREAM: u64 = 7;
const EXPLAIN_STREAM: u64 = 8;
const SEQUENCE_STREAM: u64 = 9;

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut config: PipelineConfig = serde_json::from_str(text)?;
        config.apply_seed(config.seed);
        config.validate()?;
        Ok(config)
    }

    /// Sets `seed` and rederives every module seed from it.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.generator.seed = seed;
        let derive = |stream| derive_seed(seed, stream, 0);
        self.split.seed = derive(SPLIT_STREAM);
        self.cbow.seed = derive(CBOW_STREAM);
        self.bow_svm.seed = derive(SVM_STREAM);
        self.embed_gbm.seed = derive(GBM_STREAM);
        self.mlm.seed = derive(MLM_STREAM);
        self.sanity.seed = derive(SANITY_STREAM);
    }

    pub fn validate(&self) -> Result<()> {
        self.cbow.validate()?;
        self.embed_gbm.validate()?;
        self.mlm.validate()?;
        self.lime.validate()?;
        Ok(())
    }

    pub fn cbow_config(&self) -> CbowConfig {
        let mut c = self.cbow.clone();
        if self.deterministic {
            c.execution = Execution::Sequential;
        }
        c
    }

    pub fn stability_config(&self) -> StabilityConfig {
        StabilityConfig {
            n_pairs: self.stability.n_pairs,
            seed: derive_seed(self.seed, STABILITY_STREAM, 0),
            skip_lime: self.stability.skip_lime,
            lime: self.lime.clone(),
            execution: Execution::Parallel,
        }
    }

    pub fn explain_seed(&self) -> u64 {
        derive_seed(self.seed, EXPLAIN_STREAM, 0)
    }

    pub fn sequence_seed(&self) -> u64 {
        derive_seed(self.seed, SEQUENCE_STREAM, 0)
    }
}
