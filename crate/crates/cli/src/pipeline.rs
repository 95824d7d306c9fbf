//! Pipeline stages over on-disk artifacts. Each stage reads its inputs from
//! the workspace directory and writes only its declared outputs.

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use claims_ssl::claims::{build_cohort, load_claims_corpus, save_claims_corpus, Cohort, LabeledExample, PatientHistory, RiskFactorMap};
use claims_ssl::embeddings::{load_embeddings, save_embeddings, train_cbow, EmbeddingTable, NeighborIndex};
use claims_ssl::eval::{
    compute_metrics, highrisk_sanity_check, lime_explain, stability_eval, EmbeddingPerturber, Explanation, MetricsReport,
    SanityRow, StabilityConfig, StabilityReport,
};
use claims_ssl::models::{
    finetune_classifier, load_model_with, predict_all, pretrain_mlm, save_model, split_train_test, train_bow_svm,
    train_embed_gbm, train_risk_logit, Classifier, ModelKind, ModelRefs, ProbabilityModel, Provided,
};
use claims_ssl::narrative::{build_vocab, pretraining_sequences, Vocabulary};
use claims_ssl::synthgen::{Generator, GeneratorConfig};
use claims_ssl::Execution;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

pub fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        bail!("missing artifact {}", path.display());
    }
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Path of `target` as seen from directory `from`, when both sit under the
/// same root; absolute otherwise.
fn relative_to(from: &Path, target: &Path, root: &Path) -> PathBuf {
    match (from.strip_prefix(root), target.strip_prefix(root)) {
        (Ok(f), Ok(t)) if f.components().all(|c| matches!(c, Component::Normal(_))) => {
            let mut p: PathBuf = f.components().map(|_| "..").collect();
            p.push(t);
            p
        }
        _ => std::path::absolute(target).unwrap_or_else(|_| target.to_path_buf()),
    }
}

fn model_refs(cfg: &PipelineConfig, kind: Option<ModelKind>) -> ModelRefs {
    let dir = cfg.paths.models_dir();
    let root = &cfg.paths.root;
    let vocab = relative_to(&dir, &cfg.paths.vocab(), root);
    let embeddings = (kind == Some(ModelKind::EmbedGbm)).then(|| relative_to(&dir, &cfg.paths.embeddings(), root));
    match kind {
        Some(ModelKind::RiskLogit) => ModelRefs::default(),
        _ => ModelRefs {
            vocab: Some(vocab),
            embeddings,
        },
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DataSummary {
    pub cohort_records: usize,
    pub labeled: usize,
    pub indeterminate: usize,
    pub positive_rate: f64,
    pub pretrain_patients: usize,
    pub pretrain_claims: usize,
}

pub fn gen_data(cfg: &PipelineConfig) -> Result<DataSummary> {
    let generator = Generator::new(&cfg.generator)?;
    let raw = generator.generate_raw_cohort(Execution::Parallel);
    let records: Vec<&PatientHistory> = raw.iter().map(|r| &r.record).collect();
    let cohort = build_cohort(records.iter().copied(), &cfg.generator.covid_code_set()?);
    let pretrain = generator.generate_pretrain_corpus(Execution::Parallel);
    std::fs::create_dir_all(&cfg.paths.root).with_context(|| format!("creating {}", cfg.paths.root.display()))?;
    save_claims_corpus(records.iter().copied(), cfg.paths.cohort())?;
    save_claims_corpus(&pretrain, cfg.paths.pretrain())?;
    write_json(&cfg.paths.generator(), &cfg.generator)?;
    let summary = DataSummary {
        cohort_records: raw.len(),
        labeled: cohort.examples.len(),
        indeterminate: cohort.n_indeterminate,
        positive_rate: cohort.positive_rate(),
        pretrain_patients: pretrain.len(),
        pretrain_claims: pretrain.iter().map(|h| h.claims.len()).sum(),
    };
    info!(
        "stage=gen-data records={} labeled={} indeterminate={} positive_rate={:.4} pretrain_claims={}",
        summary.cohort_records, summary.labeled, summary.indeterminate, summary.positive_rate, summary.pretrain_claims
    );
    Ok(summary)
}

fn load_pretrain(cfg: &PipelineConfig) -> Result<Vec<PatientHistory>> {
    let path = cfg.paths.pretrain();
    require(&path)?;
    Ok(load_claims_corpus(&path)?)
}

pub fn build_vocab_stage(cfg: &PipelineConfig) -> Result<Vocabulary> {
    let corpus = load_pretrain(cfg)?;
    let vocab = build_vocab(&corpus, cfg.min_count, &cfg.generator.age_buckets)?;
    vocab.save(cfg.paths.vocab())?;
    info!("stage=build-vocab tokens={} min_count={}", vocab.len(), cfg.min_count);
    Ok(vocab)
}

pub fn load_vocab(cfg: &PipelineConfig) -> Result<Arc<Vocabulary>> {
    let path = cfg.paths.vocab();
    require(&path)?;
    Ok(Arc::new(Vocabulary::load(&path)?))
}

pub fn load_table(cfg: &PipelineConfig, vocab: Arc<Vocabulary>) -> Result<Arc<EmbeddingTable>> {
    let path = cfg.paths.embeddings();
    require(&path)?;
    Ok(Arc::new(load_embeddings(&path, vocab)?))
}

pub fn train_embeddings_stage(cfg: &PipelineConfig) -> Result<EmbeddingTable> {
    let vocab = load_vocab(cfg)?;
    let corpus = load_pretrain(cfg)?;
    let seqs = pretraining_sequences(&corpus, &vocab, cfg.sequence_seed());
    let (table, stats) = train_cbow(&seqs, vocab, &cfg.cbow_config())?;
    save_embeddings(&table, cfg.paths.embeddings())?;
    info!(
        "stage=train-embeddings dim={} epochs={} final_loss={:.4}",
        table.dim(),
        stats.epoch_losses.len(),
        stats.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(table)
}

pub fn pretrain_mlm_stage(cfg: &PipelineConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let corpus = load_pretrain(cfg)?;
    let seqs = pretraining_sequences(&corpus, &vocab, cfg.sequence_seed());
    let (encoder, stats) = pretrain_mlm(&seqs, vocab, &cfg.mlm)?;
    let path = cfg.paths.encoder();
    create_parent(&path)?;
    let model = Classifier::MlmTransformer(claims_ssl::models::MlmTransformer::new(encoder));
    save_model(&model, &path, model_refs(cfg, None))?;
    let tail = &stats.step_losses[stats.step_losses.len().saturating_sub(20)..];
    info!(
        "stage=pretrain-mlm steps={} mask_rate={:.4} final_loss={:.4}",
        stats.step_losses.len(),
        stats.mask_rate(),
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    );
    Ok(())
}

/// Labeled cohort and its train/test split.
pub struct Split {
    pub cohort: Cohort,
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl Split {
    pub fn test_histories(&self) -> Vec<&PatientHistory> {
        self.test.iter().map(|e| &e.history).collect()
    }

    pub fn test_labels(&self) -> Vec<bool> {
        self.test.iter().map(|e| e.label.is_positive()).collect()
    }
}

pub fn load_split(cfg: &PipelineConfig) -> Result<Split> {
    let path = cfg.paths.cohort();
    require(&path)?;
    let records = load_claims_corpus(&path)?;
    let cohort = build_cohort(&records, &cfg.generator.covid_code_set()?);
    let (train, test) = split_train_test(&cohort.examples, &cfg.split)?;
    Ok(Split { cohort, train, test })
}

pub fn risk_map(cfg: &PipelineConfig) -> Result<RiskFactorMap> {
    match &cfg.paths.risk_map {
        Some(p) => Ok(RiskFactorMap::load(p)?),
        None => Ok(RiskFactorMap::default()),
    }
}

/// Trains `kind` on in-memory inputs. `encoder` is only used for the MLM.
pub fn fit_model(
    cfg: &PipelineConfig,
    kind: ModelKind,
    train: &[LabeledExample],
    vocab: Option<Arc<Vocabulary>>,
    table: Option<Arc<EmbeddingTable>>,
    encoder: Option<&claims_ssl::models::MlmEncoder>,
) -> Result<Classifier> {
    let need = |what: &str| anyhow::anyhow!("{kind} needs {what}");
    Ok(match kind {
        ModelKind::RiskLogit => {
            let model = train_risk_logit(train, &risk_map(cfg)?, &cfg.generator.age_buckets, &cfg.risk_logit)?;
            if !model.converged() {
                warn!("stage=train model=risk-logit converged=false");
            }
            Classifier::RiskLogit(model)
        }
        ModelKind::BowSvm => Classifier::BowSvm(train_bow_svm(train, vocab.ok_or_else(|| need("a vocabulary"))?, &cfg.bow_svm)?),
        ModelKind::EmbedGbm => {
            let (model, fit) = train_embed_gbm(train, table.ok_or_else(|| need("embeddings"))?, &cfg.embed_gbm)?;
            info!("stage=train model=embed-gbm final_loss={:.4}", fit.stage_losses.last().copied().unwrap_or(f64::NAN));
            Classifier::EmbedGbm(model)
        }
        ModelKind::MlmTransformer => {
            let encoder = encoder.ok_or_else(|| need("a pretrained encoder"))?;
            let (model, stats) = finetune_classifier(encoder, train, &cfg.mlm)?;
            info!("stage=train model=mlm best_epoch={} epochs={}", stats.best_epoch, stats.train_losses.len());
            Classifier::MlmTransformer(model)
        }
    })
}

pub fn load_encoder(cfg: &PipelineConfig, vocab: Arc<Vocabulary>) -> Result<claims_ssl::models::MlmEncoder> {
    let path = cfg.paths.encoder();
    require(&path)?;
    match load_model_with(&path, Provided { vocab: Some(vocab), embeddings: None })? {
        Classifier::MlmTransformer(m) => Ok(m.encoder().clone()),
        other => bail!("{} holds a {} model, not an encoder", path.display(), other.kind()),
    }
}

pub fn train_stage(cfg: &PipelineConfig, kind: ModelKind) -> Result<Classifier> {
    let split = load_split(cfg)?;
    let (vocab, table, encoder) = match kind {
        ModelKind::RiskLogit => (None, None, None),
        ModelKind::BowSvm => (Some(load_vocab(cfg)?), None, None),
        ModelKind::EmbedGbm => {
            let vocab = load_vocab(cfg)?;
            (Some(vocab.clone()), Some(load_table(cfg, vocab)?), None)
        }
        ModelKind::MlmTransformer => {
            let vocab = load_vocab(cfg)?;
            (Some(vocab.clone()), None, Some(load_encoder(cfg, vocab)?))
        }
    };
    let model = fit_model(cfg, kind, &split.train, vocab, table, encoder.as_ref())?;
    let path = cfg.paths.model(kind);
    create_parent(&path)?;
    save_model(&model, &path, model_refs(cfg, Some(kind)))?;
    info!("stage=train model={kind} train={} path={}", split.train.len(), path.display());
    Ok(model)
}

pub fn load_classifier(cfg: &PipelineConfig, kind: ModelKind) -> Result<Classifier> {
    let path = cfg.paths.model(kind);
    require(&path)?;
    Ok(load_model_with(&path, Provided::default())?)
}

fn trained_kinds(cfg: &PipelineConfig, requested: &[ModelKind]) -> Result<Vec<ModelKind>> {
    if !requested.is_empty() {
        return Ok(requested.to_vec());
    }
    let found: Vec<ModelKind> = ModelKind::ALL.into_iter().filter(|k| cfg.paths.model(*k).exists()).collect();
    if found.is_empty() {
        bail!("missing artifact {}: no trained model found", cfg.paths.models_dir().display());
    }
    Ok(found)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub n_test: usize,
    pub positive_rate: f64,
    pub models: Vec<ModelMetrics>,
    /// The generator's exact probabilities scored as a model.
    pub bayes: Option<MetricsReport>,
    pub sanity: Vec<SanityRow>,
}

pub fn bayes_metrics(cfg: &PipelineConfig, split: &Split) -> Result<Option<MetricsReport>> {
    let path = cfg.paths.generator();
    if !path.exists() {
        return Ok(None);
    }
    let generator = Generator::new(&GeneratorConfig::load(&path)?)?;
    let probs: std::result::Result<Vec<f64>, _> = split.test.iter().map(|e| generator.oracle_probability(&e.history)).collect();
    match probs {
        Ok(p) => Ok(Some(compute_metrics(&p, &split.test_labels())?)),
        Err(e) => {
            warn!("stage=evaluate bayes=unavailable reason={e}");
            Ok(None)
        }
    }
}

pub fn evaluate_stage(cfg: &PipelineConfig, requested: &[ModelKind]) -> Result<EvaluationReport> {
    let kinds = trained_kinds(cfg, requested)?;
    let split = load_split(cfg)?;
    let histories = split.test_histories();
    let labels = split.test_labels();
    let models: Vec<(ModelKind, Classifier)> = kinds.iter().map(|&k| Ok((k, load_classifier(cfg, k)?))).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (kind, model) in &models {
        let p = predict_all(model, &histories, Execution::Parallel);
        rows.push(ModelMetrics {
            model: kind.name().to_string(),
            metrics: compute_metrics(&p, &labels)?,
        });
    }
    let sanity = if cfg.paths.vocab().exists() {
        let vocab = load_vocab(cfg)?;
        let named: Vec<(&str, &dyn ProbabilityModel)> = models.iter().map(|(k, m)| (k.name(), m as &dyn ProbabilityModel)).collect();
        highrisk_sanity_check(&named, &risk_map(cfg)?, &vocab, &cfg.sanity)?
    } else {
        Vec::new()
    };
    let report = EvaluationReport {
        seed: cfg.seed,
        n_test: split.test.len(),
        positive_rate: labels.iter().filter(|&&l| l).count() as f64 / labels.len().max(1) as f64,
        models: rows,
        bayes: bayes_metrics(cfg, &split)?,
        sanity,
    };
    write_json(&cfg.paths.report("metrics.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelStability {
    pub model: String,
    pub report: StabilityReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityOutput {
    pub config: StabilityConfig,
    pub models: Vec<ModelStability>,
}

pub fn stability_stage(cfg: &PipelineConfig, requested: &[ModelKind], n_pairs: Option<usize>) -> Result<StabilityOutput> {
    let kinds = if requested.is_empty() { cfg.stability.models.clone() } else { requested.to_vec() };
    let split = load_split(cfg)?;
    let vocab = load_vocab(cfg)?;
    let table = load_table(cfg, vocab)?;
    let perturber = EmbeddingPerturber::new(&table);
    let mut config = cfg.stability_config();
    if let Some(n) = n_pairs {
        config.n_pairs = n;
    }
    let histories = split.test_histories();
    let mut models = Vec::new();
    for kind in kinds {
        let model = load_classifier(cfg, kind)?;
        let report = stability_eval(&model, &histories, &perturber, &config)?;
        info!(
            "stage=stability model={kind} pairs={} diff={:.3} agreement={:.2}",
            report.n_pairs, report.predict_prob_diff_mean, report.predict_agreement
        );
        models.push(ModelStability {
            model: kind.name().to_string(),
            report,
        });
    }
    let out = StabilityOutput { config, models };
    write_json(&cfg.paths.report("stability.json"), &out)?;
    Ok(out)
}

pub fn explain_stage(cfg: &PipelineConfig, kind: ModelKind, patient: &str, samples: Option<usize>) -> Result<Explanation> {
    let split = load_split(cfg)?;
    let example = split
        .cohort
        .examples
        .iter()
        .find(|e| e.history.patient_id == patient)
        .ok_or_else(|| anyhow::anyhow!("patient {patient} is not in the labeled cohort"))?;
    let model = load_classifier(cfg, kind)?;
    let mut lime = cfg.lime.clone();
    if let Some(n) = samples {
        lime.n_samples = n;
    }
    Ok(lime_explain(&model, &example.history, &lime, cfg.explain_seed())?)
}

pub fn nearest_stage(cfg: &PipelineConfig, token: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let vocab = load_vocab(cfg)?;
    let table = load_table(cfg, vocab.clone())?;
    let id = vocab.get(token).ok_or_else(|| anyhow::anyhow!("token {token} is not in the vocabulary"))?;
    let index = NeighborIndex::new(&table);
    index.nearest(id)?;
    Ok(index
        .top_k(id, k.max(1))
        .into_iter()
        .map(|(n, cos)| (vocab.surface(n).to_string(), cos))
        .collect())
}
