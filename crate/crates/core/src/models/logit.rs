use serde::{Deserialize, Serialize};

use crate::claims::{map_risk_factors, AgeBuckets, LabeledExample, PatientHistory, RiskFactorMap};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::math::{dot, logistic_loss, sigmoid};

const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogitConfig {
    pub l2: f64,
    pub max_iter: usize,
    /// Convergence when the largest gradient component falls below this.
    pub tol: f64,
    pub execution: Execution,
}

impl Default for LogitConfig {
    fn default() -> Self {
        LogitConfig {
            l2: 1e-4,
            max_iter: 500,
            tol: 1e-5,
            execution: Execution::Parallel,
        }
    }
}

/// Mean logistic loss plus `l2/2 * |w|^2` (intercept unpenalized), with its
/// gradient. `x` is row-major with `w.len()` columns.
pub fn logistic_objective(
    x: &[f64],
    y: &[f64],
    w: &[f64],
    b: f64,
    l2: f64,
    execution: Execution,
) -> (f64, Vec<f64>, f64) {
    let p = w.len();
    let n = y.len();
    let rows: Vec<usize> = (0..n).collect();
    let parts = exec::map_chunks(execution, &rows, CHUNK, |chunk| {
        let mut loss = 0.0;
        let mut gw = vec![0.0; p];
        let mut gb = 0.0;
        for &i in chunk {
            let row = &x[i * p..(i + 1) * p];
            let z = dot(row, w) + b;
            loss += logistic_loss(z, y[i]);
            let r = sigmoid(z) - y[i];
            for (g, &v) in gw.iter_mut().zip(row) {
                *g += r * v;
            }
            gb += r;
        }
        (loss, gw, gb)
    });
    let mut loss = 0.0;
    let mut gw = vec![0.0; p];
    let mut gb = 0.0;
    for (l, g, b) in parts {
        loss += l;
        gb += b;
        for (a, v) in gw.iter_mut().zip(g) {
            *a += v;
        }
    }
    let inv = 1.0 / n as f64;
    let penalty = 0.5 * l2 * dot(w, w);
    for (g, &wj) in gw.iter_mut().zip(w) {
        *g = *g * inv + l2 * wj;
    }
    (loss * inv + penalty, gw, gb * inv)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogitFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective on the standardized problem at the returned point.
    pub loss: f64,
}

/// Largest eigenvalue of `[1 x]^T [1 x] / n` by power iteration.
fn gram_top_eigenvalue(x: &[f64], p: usize, n: usize) -> f64 {
    let q = p + 1;
    let mut g = vec![0.0; q * q];
    for i in 0..n {
        let row = &x[i * p..(i + 1) * p];
        let ext = |j: usize| if j == 0 { 1.0 } else { row[j - 1] };
        for a in 0..q {
            let va = ext(a);
            for b in a..q {
                g[a * q + b] += va * ext(b);
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            g[a * q + b] = g[b * q + a];
        }
    }
    g.iter_mut().for_each(|v| *v /= n as f64);
    let mut v = vec![1.0 / (q as f64).sqrt(); q];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let mut next = vec![0.0; q];
        for a in 0..q {
            next[a] = dot(&g[a * q..(a + 1) * q], &v);
        }
        let norm = dot(&next, &next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = next.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// L2-regularized logistic regression by full-batch gradient descent on
/// standardized columns. Returned weights are on the original scale and
/// rounded to f32 precision.
pub fn fit_logistic(x: &[f64], y: &[f64], config: &LogitConfig) -> Result<LogitFit> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Empty("logistic regression training set"));
    }
    if !x.len().is_multiple_of(n) {
        return Err(Error::Dimension(format!("{} values for {n} rows", x.len())));
    }
    let p = x.len() / n;
    let mut mean = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for row in x.chunks_exact(p) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in x.chunks_exact(p) {
        for j in 0..p {
            sd[j] += (row[j] - mean[j]).powi(2);
        }
    }
    for s in &mut sd {
        *s = (*s / n as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let xs: Vec<f64> = x
        .chunks_exact(p)
        .flat_map(|row| (0..p).map(|j| (row[j] - mean[j]) / sd[j]).collect::<Vec<_>>())
        .collect();
    let smooth = 0.25 * gram_top_eigenvalue(&xs, p, n) * 1.01 + config.l2;
    let step = 1.0 / smooth;
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut loss;
    loop {
        let (l, gw, gb) = logistic_objective(&xs, y, &w, b, config.l2, config.execution);
        loss = l;
        let gmax = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if gmax < config.tol {
            converged = true;
            break;
        }
        if iterations == config.max_iter {
            break;
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= step * g;
        }
        b -= step * gb;
        iterations += 1;
    }
    let weights: Vec<f64> = (0..p).map(|j| f64::from((w[j] / sd[j]) as f32)).collect();
    let shift: f64 = (0..p).map(|j| w[j] * mean[j] / sd[j]).sum();
    Ok(LogitFit {
        weights,
        intercept: f64::from((b - shift) as f32),
        iterations,
        converged,
        loss,
    })
}

/// Logistic regression over the risk-factor bits plus age ordinal and sex.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskLogit {
    map: RiskFactorMap,
    ages: AgeBuckets,
    weights: Vec<f64>,
    intercept: f64,
    pub(crate) converged: bool,
}

impl RiskLogit {
    pub fn from_parts(map: RiskFactorMap, ages: AgeBuckets, weights: Vec<f64>, intercept: f64) -> Result<Self> {
        if weights.len() != map.len() + 2 {
            return Err(Error::Dimension(format!(
                "{} weights for {} risk factors plus age and sex",
                weights.len(),
                map.len()
            )));
        }
        Ok(RiskLogit {
            map,
            ages,
            weights,
            intercept,
            converged: true,
        })
    }

    pub fn risk_map(&self) -> &RiskFactorMap {
        &self.map
    }

    pub fn age_buckets(&self) -> &AgeBuckets {
        &self.ages
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    /// False when training stopped at the iteration limit.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn features(&self, history: &PatientHistory) -> Vec<f64> {
        map_risk_factors(history, &self.map, &self.ages)
    }

    pub fn predict_proba(&self, history: &PatientHistory) -> f64 {
        sigmoid(self.intercept + dot(&self.weights, &self.features(history)))
    }
}

pub fn train_risk_logit(
    train: &[LabeledExample],
    map: &RiskFactorMap,
    ages: &AgeBuckets,
    config: &LogitConfig,
) -> Result<RiskLogit> {
    if train.is_empty() {
        return Err(Error::Empty("risk-logit training set"));
    }
    let x: Vec<f64> = exec::map(config.execution, train, |e| map_risk_factors(&e.history, map, ages))
        .into_iter()
        .flatten()
        .collect();
    let y: Vec<f64> = train.iter().map(|e| e.label.as_f64()).collect();
    let fit = fit_logistic(&x, &y, config)?;
    let mut model = RiskLogit::from_parts(map.clone(), ages.clone(), fit.weights, fit.intercept)?;
    model.converged = fit.converged;
    Ok(model)
}
