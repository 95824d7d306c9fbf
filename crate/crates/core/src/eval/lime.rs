use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::claims::{MedicalCode, PatientHistory};
use crate::error::{Error, Result};
use crate::models::ProbabilityModel;
use crate::narrative::code_surface;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// Kernel width is this factor times the square root of the feature count.
    pub kernel_width_factor: f64,
    pub ridge: f64,
    pub drop_probability: f64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 1000,
            kernel_width_factor: 0.25,
            ridge: 1.0,
            drop_probability: 0.5,
        }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("lime: {m}")));
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2");
        }
        if !(self.kernel_width_factor > 0.0 && self.kernel_width_factor.is_finite()) {
            return bad("kernel_width_factor must be positive");
        }
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return bad("ridge must be positive");
        }
        if !(self.drop_probability > 0.0 && self.drop_probability < 1.0) {
            return bad("drop_probability must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Local surrogate for one history. Keys are code token surfaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub importances: BTreeMap<String, f64>,
    pub intercept: f64,
    /// Weighted R² of the surrogate on its own samples.
    pub r2: f64,
    pub kernel_width: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Explanation {
    pub fn importance(&self, code: &MedicalCode) -> Option<f64> {
        self.importances.get(&code_surface(code)).copied()
    }
}

/// Copy of `history` keeping only the codes whose feature is switched on.
/// Claims left without codes are dropped.
fn masked_history(history: &PatientHistory, index: &HashMap<&MedicalCode, usize>, keep: &[bool]) -> PatientHistory {
    let claims = history
        .claims
        .iter()
        .filter_map(|c| c.map_codes(|code| keep[index[code]].then(|| code.clone())))
        .collect();
    history.with_claims(claims)
}

/// Explains `model` around `history` with a kernel-weighted ridge fit on
/// binary code-presence features. The first sample is the unperturbed input;
/// the rest drop each distinct code independently.
pub fn lime_explain<M: ProbabilityModel + ?Sized>(
    model: &M,
    history: &PatientHistory,
    config: &LimeConfig,
    seed: u64,
) -> Result<Explanation> {
    config.validate()?;
    let features: Vec<&MedicalCode> = history.distinct_codes().into_iter().collect();
    let m = features.len();
    if m == 0 {
        return Err(Error::Empty("history has no code tokens to explain"));
    }
    let index: HashMap<&MedicalCode, usize> = features.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let kernel_width = config.kernel_width_factor * (m as f64).sqrt();

    let mut rng = Rng::new(seed);
    let n = config.n_samples;
    let mut z = DMatrix::<f64>::zeros(n, m);
    let mut y = DVector::<f64>::zeros(n);
    let mut w = DVector::<f64>::zeros(n);
    let mut keep = vec![true; m];
    for s in 0..n {
        if s > 0 {
            for k in keep.iter_mut() {
                *k = !rng.bernoulli(config.drop_probability);
            }
        }
        let dropped = keep.iter().filter(|k| !**k).count();
        for (j, &k) in keep.iter().enumerate() {
            z[(s, j)] = if k { 1.0 } else { 0.0 };
        }
        let d = dropped as f64 / m as f64;
        w[s] = (-(d * d) / (kernel_width * kernel_width)).exp();
        y[s] = model.predict_proba(&masked_history(history, &index, &keep));
    }

    // Weighted centring removes the intercept from the penalized system.
    let w_sum = w.sum();
    let z_mean: DVector<f64> = z.tr_mul(&w) / w_sum;
    let y_mean = w.dot(&y) / w_sum;
    let mut zc = z;
    for s in 0..n {
        let sw = w[s].sqrt();
        for j in 0..m {
            zc[(s, j)] = (zc[(s, j)] - z_mean[j]) * sw;
        }
    }
    let yc = DVector::from_fn(n, |s, _| (y[s] - y_mean) * w[s].sqrt());
    let mut gram = zc.tr_mul(&zc);
    for j in 0..m {
        gram[(j, j)] += config.ridge;
    }
    let rhs = zc.tr_mul(&yc);
    let beta = gram
        .cholesky()
        .ok_or_else(|| Error::Invalid("lime: ridge system is not positive definite".into()))?
        .solve(&rhs);
    let intercept = y_mean - z_mean.dot(&beta);

    let residual = &yc - &zc * &beta;
    let ss_tot = yc.norm_squared();
    let ss_res = residual.norm_squared();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    let importances = features.iter().zip(beta.iter()).map(|(c, &b)| (code_surface(c), b)).collect();
    Ok(Explanation {
        importances,
        intercept,
        r2,
        kernel_width,
        n_samples: n,
        seed,
    })
}
