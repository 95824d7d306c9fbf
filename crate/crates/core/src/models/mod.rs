//! The four hospitalization classifiers behind one probability interface.

pub mod artifact;
pub mod gbm;
pub mod logit;
pub mod split;
pub mod svm;
pub mod transformer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::claims::PatientHistory;
use crate::error::Error;
use crate::exec::{self, Execution};

pub use artifact::{load_model, load_model_with, save_model, ModelManifest, ModelRefs, ParamBlob, Provided};
pub use gbm::{train_embed_gbm, train_gbm, EmbedGbm, GbmConfig, GbmFit, GbmModel, Matrix};
pub use logit::{train_risk_logit, LogitConfig, RiskLogit};
pub use split::{split_indices, split_train_test, SplitSpec};
pub use svm::{train_bow_svm, BowSvm, SvmConfig};
pub use transformer::{finetune_classifier, pretrain_mlm, MlmEncoder, MlmTransformer, TransformerConfig};

/// Decision threshold on predicted probability.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    RiskLogit,
    BowSvm,
    EmbedGbm,
    MlmTransformer,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::RiskLogit,
        ModelKind::BowSvm,
        ModelKind::EmbedGbm,
        ModelKind::MlmTransformer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::RiskLogit => "risk-logit",
            ModelKind::BowSvm => "bow-svm",
            ModelKind::EmbedGbm => "embed-gbm",
            ModelKind::MlmTransformer => "mlm-transformer",
        }
    }

    /// Models built on self-supervised pretraining.
    pub fn is_pretrained(self) -> bool {
        matches!(self, ModelKind::EmbedGbm | ModelKind::MlmTransformer)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "risk-logit" => Ok(ModelKind::RiskLogit),
            "bow-svm" => Ok(ModelKind::BowSvm),
            "embed-gbm" => Ok(ModelKind::EmbedGbm),
            "mlm" | "mlm-transformer" => Ok(ModelKind::MlmTransformer),
            other => Err(Error::Invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Anything that scores a history with P(hospitalized).
pub trait ProbabilityModel: Sync {
    fn predict_proba(&self, history: &PatientHistory) -> f64;

    fn predict(&self, history: &PatientHistory) -> bool {
        self.predict_proba(history) >= THRESHOLD
    }
}

impl<F: Fn(&PatientHistory) -> f64 + Sync> ProbabilityModel for F {
    fn predict_proba(&self, history: &PatientHistory) -> f64 {
        self(history)
    }
}

macro_rules! probability_model {
    ($($t:ty),*) => {$(
        impl ProbabilityModel for $t {
            fn predict_proba(&self, history: &PatientHistory) -> f64 {
                <$t>::predict_proba(self, history)
            }
        }
    )*};
}

probability_model!(RiskLogit, BowSvm, EmbedGbm, MlmTransformer);

#[derive(Clone, Debug, PartialEq)]
pub enum Classifier {
    RiskLogit(RiskLogit),
    BowSvm(BowSvm),
    EmbedGbm(EmbedGbm),
    MlmTransformer(MlmTransformer),
}

impl Classifier {
    pub fn kind(&self) -> ModelKind {
        match self {
            Classifier::RiskLogit(_) => ModelKind::RiskLogit,
            Classifier::BowSvm(_) => ModelKind::BowSvm,
            Classifier::EmbedGbm(_) => ModelKind::EmbedGbm,
            Classifier::MlmTransformer(_) => ModelKind::MlmTransformer,
        }
    }
}

impl ProbabilityModel for Classifier {
    fn predict_proba(&self, history: &PatientHistory) -> f64 {
        match self {
            Classifier::RiskLogit(m) => m.predict_proba(history),
            Classifier::BowSvm(m) => m.predict_proba(history),
            Classifier::EmbedGbm(m) => m.predict_proba(history),
            Classifier::MlmTransformer(m) => m.predict_proba(history),
        }
    }
}

/// Scores every history, in input order.
pub fn predict_all<M: ProbabilityModel + ?Sized>(model: &M, histories: &[&PatientHistory], execution: Execution) -> Vec<f64> {
    exec::map(execution, histories, |h| model.predict_proba(h))
}
