use serde::{Deserialize, Serialize};

use super::lime::{lime_explain, Explanation, LimeConfig};
use super::perturb::{perturb_with, PerturbedPair, Perturber};
use crate::claims::PatientHistory;
use crate::error::Result;
use crate::exec::{self, Execution};
use crate::models::{ProbabilityModel, THRESHOLD};
use crate::narrative::code_surface;
use crate::rng::{derive_seed, Rng};

const LIME_STREAM: u64 = 0x11AE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub n_pairs: usize,
    pub seed: u64,
    /// Skip LIME and report only probability drift and agreement.
    pub skip_lime: bool,
    pub lime: LimeConfig,
    pub execution: Execution,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            n_pairs: 5000,
            seed: 23,
            skip_lime: false,
            lime: LimeConfig::default(),
            execution: Execution::Parallel,
        }
    }
}

/// Drift between predictions on original and perturbed histories.
///
/// `predict_prob_diff_mean` is the mean of `|p_orig - p_pert|` in percentage
/// points; `predict_agreement` the percentage of pairs on the same side of
/// 0.5; `var_importance_mse` the mean squared difference over every paired
/// LIME importance (an original code pairs with its replacement, an
/// unsubstituted code with itself), pooled across pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub predict_prob_diff_mean: f64,
    pub predict_agreement: f64,
    pub var_importance_mse: Option<f64>,
    pub n_pairs: usize,
    pub requested_pairs: usize,
    /// Set when fewer histories were available than requested.
    pub truncated: bool,
    /// Pairs whose original history has no codes, hence no LIME term.
    pub lime_skipped: usize,
    pub importance_terms: usize,
    pub seed: u64,
}

struct PairOutcome {
    diff: f64,
    agree: bool,
    squared: Option<Vec<f64>>,
}

/// Squared importance differences for every code of the original history.
pub fn paired_importance_errors(pair: &PerturbedPair, original: &Explanation, perturbed: &Explanation) -> Vec<f64> {
    pair.original
        .distinct_codes()
        .into_iter()
        .map(|code| {
            let a = original.importances.get(&code_surface(code)).copied().unwrap_or(0.0);
            let b = perturbed.importance(pair.partner(code)).unwrap_or(0.0);
            (a - b) * (a - b)
        })
        .collect()
}

/// Indices of `n` histories out of `len`, drawn without replacement.
pub fn sample_without_replacement(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    Rng::new(seed).shuffle(&mut idx);
    idx.truncate(n.min(len));
    idx
}

pub fn stability_eval<M, P>(
    model: &M,
    histories: &[&PatientHistory],
    perturber: &P,
    config: &StabilityConfig,
) -> Result<StabilityReport>
where
    M: ProbabilityModel + ?Sized,
    P: Perturber + ?Sized,
{
    if !config.skip_lime {
        config.lime.validate()?;
    }
    let sample = sample_without_replacement(histories.len(), config.n_pairs, config.seed);
    let outcomes = exec::map_range(config.execution, sample.len(), |i| -> Result<PairOutcome> {
        let pair = perturb_with(histories[sample[i]], perturber);
        let p_o = model.predict_proba(&pair.original);
        let p_p = model.predict_proba(&pair.perturbed);
        let squared = if config.skip_lime || pair.original.codes().next().is_none() {
            None
        } else {
            let seed = derive_seed(config.seed, LIME_STREAM, i as u64);
            let e_o = lime_explain(model, &pair.original, &config.lime, seed)?;
            let e_p = lime_explain(model, &pair.perturbed, &config.lime, seed)?;
            Some(paired_importance_errors(&pair, &e_o, &e_p))
        };
        Ok(PairOutcome {
            diff: (p_o - p_p).abs() * 100.0,
            agree: (p_o >= THRESHOLD) == (p_p >= THRESHOLD),
            squared,
        })
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let n = outcomes.len();
    let diff_sum = exec::ordered_sum(outcomes.iter().map(|o| o.diff));
    let agreed = outcomes.iter().filter(|o| o.agree).count();
    let terms: Vec<f64> = outcomes.iter().filter_map(|o| o.squared.as_deref()).flatten().copied().collect();
    let lime_skipped = if config.skip_lime { 0 } else { outcomes.iter().filter(|o| o.squared.is_none()).count() };
    let mse = (!terms.is_empty()).then(|| exec::ordered_sum(terms.iter().copied()) / terms.len() as f64);
    let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(StabilityReport {
        predict_prob_diff_mean: mean(diff_sum),
        predict_agreement: if n == 0 { 100.0 } else { 100.0 * agreed as f64 / n as f64 },
        var_importance_mse: mse,
        n_pairs: n,
        requested_pairs: config.n_pairs,
        truncated: histories.len() < config.n_pairs,
        lime_skipped,
        importance_terms: terms.len(),
        seed: config.seed,
    })
}
