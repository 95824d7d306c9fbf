//! Model files: a JSON manifest next to a binary parameter blob.
//!
//! Blob layout (little-endian): `"CLEM"`, u32 version = 2, u32 section
//! count, then per section u32 name length, UTF-8 name, u32 rank, u32 dims,
//! and the f32 values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::gbm::{EmbedGbm, GbmModel, Node, Tree};
use super::logit::RiskLogit;
use super::svm::BowSvm;
use super::transformer::{MlmEncoder, MlmTransformer, TransformerConfig};
use super::{Classifier, ModelKind};
use crate::claims::{AgeBuckets, RiskFactorMap};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::narrative::Vocabulary;

pub const BLOB_VERSION: u32 = 2;
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamBlob {
    pub sections: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl ParamBlob {
    pub fn push(&mut self, name: &str, shape: Vec<usize>, values: impl IntoIterator<Item = f64>) {
        let v: Vec<f32> = values.into_iter().map(|x| x as f32).collect();
        debug_assert_eq!(v.len(), shape.iter().product::<usize>());
        self.sections.push((name.to_string(), shape, v));
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f32])> {
        self.sections
            .iter()
            .find(|s| s.0 == name)
            .map(|s| (s.1.as_slice(), s.2.as_slice()))
            .ok_or_else(|| Error::Invalid(format!("parameter blob has no section {name:?}")))
    }

    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.get(name)?.1.iter().map(|&x| f64::from(x)).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(crate::embeddings::MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, shape, values) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let corrupt = |m: String| Error::Corrupt {
            path: origin.to_path_buf(),
            message: m,
        };
        if bytes.len() < 4 || &bytes[..4] != crate::embeddings::MAGIC {
            return Err(Error::Version(format!("{}: not a parameter blob (bad magic)", origin.display())));
        }
        let mut at = 4;
        let word = |at: &mut usize| -> Result<u32> {
            let b = bytes
                .get(*at..*at + 4)
                .ok_or_else(|| corrupt(format!("unexpected end of file at byte {}", *at)))?;
            *at += 4;
            Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
        };
        let version = word(&mut at)?;
        if version != BLOB_VERSION {
            return Err(Error::Version(format!(
                "{}: blob version {version}, expected {BLOB_VERSION}",
                origin.display()
            )));
        }
        let n = word(&mut at)? as usize;
        let mut sections = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let len = word(&mut at)? as usize;
            let name = bytes
                .get(at..at + len)
                .and_then(|b| std::str::from_utf8(b).ok())
                .ok_or_else(|| corrupt("bad section name".into()))?
                .to_string();
            at += len;
            let rank = word(&mut at)? as usize;
            let shape = (0..rank).map(|_| word(&mut at).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let body = bytes
                .get(at..at + 4 * count)
                .ok_or_else(|| corrupt(format!("section {name:?} truncated")))?;
            at += 4 * count;
            let values = body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            sections.push((name, shape, values));
        }
        if at != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - at)));
        }
        Ok(ParamBlob { sections })
    }
}

/// Files a model depends on, recorded in the manifest. Relative paths are
/// resolved against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelRefs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub version: u32,
    pub kind: ModelKind,
    pub blob: PathBuf,
    #[serde(default)]
    pub references: ModelRefs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_fingerprint: Option<String>,
    /// Kind-specific settings needed to rebuild the model.
    #[serde(default)]
    pub config: serde_json::Value,
}

fn encode(model: &Classifier) -> (ParamBlob, serde_json::Value, Option<String>) {
    let mut blob = ParamBlob::default();
    match model {
        Classifier::RiskLogit(m) => {
            blob.push("weights", vec![m.weights().len()], m.weights().iter().copied());
            blob.push("intercept", vec![1], [m.intercept()]);
            let config = serde_json::json!({
                "risk_map": m.risk_map().to_tsv(),
                "age_buckets": m.age_buckets(),
                "converged": m.converged(),
            });
            (blob, config, None)
        }
        Classifier::BowSvm(m) => {
            blob.push("weights", vec![m.weights().len()], m.weights().iter().copied());
            blob.push("bias", vec![1], [m.bias()]);
            blob.push("platt", vec![2], [m.platt().0, m.platt().1]);
            (blob, serde_json::json!({}), Some(m.vocab().fingerprint()))
        }
        Classifier::EmbedGbm(m) => {
            let g = m.model();
            blob.push("init", vec![1], [f64::from(g.init)]);
            let mut rows = Vec::new();
            for (t, tree) in g.trees.iter().enumerate() {
                for node in &tree.nodes {
                    let r = match *node {
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => [t as f64, 0.0, feature as f64, f64::from(threshold), left as f64, right as f64, 0.0],
                        Node::Leaf { value } => [t as f64, 1.0, 0.0, 0.0, 0.0, 0.0, f64::from(value)],
                    };
                    rows.extend(r);
                }
            }
            blob.push("nodes", vec![rows.len() / 7, 7], rows);
            let config = serde_json::json!({ "n_features": g.n_features, "n_trees": g.trees.len() });
            (blob, config, Some(m.table().vocab().fingerprint()))
        }
        Classifier::MlmTransformer(m) => {
            let e = m.encoder();
            for s in e.layout().sections() {
                blob.push(&s.name, s.shape.clone(), e.params()[s.offset..s.offset + s.len()].iter().copied());
            }
            let config = serde_json::to_value(e.config()).expect("config serializes");
            (blob, config, Some(e.vocab().fingerprint()))
        }
    }
}

/// Writes `<stem>.json` and `<stem>.bin` for `path = <stem>.json`.
pub fn save_model(model: &Classifier, path: impl AsRef<Path>, references: ModelRefs) -> Result<()> {
    let path = path.as_ref();
    let blob_path = path.with_extension("bin");
    let (blob, config, vocab_fingerprint) = encode(model);
    let manifest = ModelManifest {
        version: MANIFEST_VERSION,
        kind: model.kind(),
        blob: PathBuf::from(blob_path.file_name().expect("blob file name")),
        references,
        vocab_fingerprint,
        config,
    };
    std::fs::write(&blob_path, blob.to_bytes()).map_err(|e| Error::io(&blob_path, e))?;
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Dependencies supplied by the caller instead of read from the manifest
/// references.
#[derive(Clone, Debug, Default)]
pub struct Provided {
    pub vocab: Option<Arc<Vocabulary>>,
    pub embeddings: Option<Arc<EmbeddingTable>>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn check_fingerprint(manifest: &ModelManifest, vocab: &Vocabulary) -> Result<()> {
    match &manifest.vocab_fingerprint {
        Some(fp) if *fp != vocab.fingerprint() => Err(Error::Mismatch(format!(
            "{} model was trained with vocabulary {}, got {}",
            manifest.kind,
            &fp[..12.min(fp.len())],
            &vocab.fingerprint()[..12]
        ))),
        _ => Ok(()),
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Classifier> {
    load_model_with(path, Provided::default())
}

pub fn load_model_with(path: impl AsRef<Path>, provided: Provided) -> Result<Classifier> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: ModelManifest = serde_json::from_str(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Version(format!(
            "{}: manifest version {}, expected {MANIFEST_VERSION}",
            path.display(),
            manifest.version
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let blob_path = resolve(base, &manifest.blob);
    let bytes = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let blob = ParamBlob::from_bytes(&bytes, &blob_path)?;
    let vocab = || -> Result<Arc<Vocabulary>> {
        if let Some(v) = &provided.vocab {
            return Ok(v.clone());
        }
        if let Some(t) = &provided.embeddings {
            return Ok(t.vocab().clone());
        }
        let p = manifest
            .references
            .vocab
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("{} manifest has no vocabulary reference", manifest.kind)))?;
        Ok(Arc::new(Vocabulary::load(resolve(base, p))?))
    };
    let classifier = match manifest.kind {
        ModelKind::RiskLogit => {
            let tsv = manifest.config["risk_map"]
                .as_str()
                .ok_or_else(|| Error::Invalid("risk-logit manifest lacks risk_map".into()))?;
            let map = RiskFactorMap::parse(tsv)?;
            let ages: AgeBuckets = serde_json::from_value(manifest.config["age_buckets"].clone())?;
            let intercept = blob.values("intercept")?[0];
            let mut model = RiskLogit::from_parts(map, ages, blob.values("weights")?, intercept)?;
            model.converged = manifest.config["converged"].as_bool().unwrap_or(true);
            Classifier::RiskLogit(model)
        }
        ModelKind::BowSvm => {
            let vocab = vocab()?;
            check_fingerprint(&manifest, &vocab)?;
            let platt = blob.values("platt")?;
            Classifier::BowSvm(BowSvm::from_parts(vocab, blob.values("weights")?, blob.values("bias")?[0], (platt[0], platt[1]))?)
        }
        ModelKind::EmbedGbm => {
            let table = match &provided.embeddings {
                Some(t) => t.clone(),
                None => {
                    let vocab = vocab()?;
                    let p = manifest
                        .references
                        .embeddings
                        .as_ref()
                        .ok_or_else(|| Error::Invalid("embed-gbm manifest has no embeddings reference".into()))?;
                    Arc::new(EmbeddingTable::load(resolve(base, p), vocab)?)
                }
            };
            check_fingerprint(&manifest, table.vocab())?;
            let n_features = manifest.config["n_features"]
                .as_u64()
                .ok_or_else(|| Error::Invalid("embed-gbm manifest lacks n_features".into()))? as usize;
            let (shape, nodes) = blob.get("nodes")?;
            if shape.len() != 2 || shape[1] != 7 {
                return Err(Error::Dimension(format!("gbm node table has shape {shape:?}")));
            }
            let mut trees: BTreeMap<usize, Vec<Node>> = BTreeMap::new();
            for r in nodes.chunks_exact(7) {
                let node = if r[1] == 1.0 {
                    Node::Leaf { value: r[6] }
                } else {
                    Node::Split {
                        feature: r[2] as usize,
                        threshold: r[3],
                        left: r[4] as usize,
                        right: r[5] as usize,
                    }
                };
                trees.entry(r[0] as usize).or_default().push(node);
            }
            let trees: Vec<Tree> = trees.into_values().map(|nodes| Tree { nodes }).collect();
            for t in &trees {
                for n in &t.nodes {
                    if let Node::Split { feature, left, right, .. } = *n {
                        if feature >= n_features || left >= t.nodes.len() || right >= t.nodes.len() {
                            return Err(Error::Corrupt {
                                path: blob_path.clone(),
                                message: "gbm node index out of range".into(),
                            });
                        }
                    }
                }
            }
            let init = blob.get("init")?.1[0];
            Classifier::EmbedGbm(EmbedGbm::new(table, GbmModel { init, trees, n_features })?)
        }
        ModelKind::MlmTransformer => {
            let vocab = vocab()?;
            check_fingerprint(&manifest, &vocab)?;
            let config: TransformerConfig = serde_json::from_value(manifest.config.clone())?;
            let probe = MlmEncoder::random(vocab.clone(), &config)?;
            let mut params = vec![0.0; probe.layout().total];
            for s in probe.layout().sections() {
                let (shape, values) = blob.get(&s.name)?;
                if shape != s.shape.as_slice() {
                    return Err(Error::Dimension(format!(
                        "section {} has shape {shape:?}, expected {:?}",
                        s.name, s.shape
                    )));
                }
                for (dst, &v) in params[s.offset..s.offset + s.len()].iter_mut().zip(values) {
                    *dst = f64::from(v);
                }
            }
            Classifier::MlmTransformer(MlmTransformer::new(MlmEncoder::from_parts(vocab, config, params)?))
        }
    };
    Ok(classifier)
}
