//! Aligned-column text renderings of the JSON reports.

use std::fmt::Write as _;

use crate::pipeline::{EvaluationReport, StabilityOutput};

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        writeln!(out, "{}", parts.join("  ").trim_end()).expect("write to string");
    };
    line(&mut out, &header.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    for row in rows {
        line(&mut out, row);
    }
    out
}

pub fn render_metrics(report: &EvaluationReport) -> String {
    let mut rows: Vec<Vec<String>> = report
        .models
        .iter()
        .map(|m| (m.model.as_str(), &m.metrics))
        .chain(report.bayes.as_ref().map(|b| ("bayes-oracle", b)))
        .map(|(name, m)| {
            vec![
                name.to_string(),
                opt(m.precision),
                opt(m.recall),
                opt(m.f1),
                format!("{:.2}", m.accuracy),
                m.auc.map_or_else(|| "n/a".into(), |a| format!("{a:.4}")),
            ]
        })
        .collect();
    let mut out = format!("test patients: {}  positive rate: {:.4}\n", report.n_test, report.positive_rate);
    out += &table(&["model", "precision", "recall", "f1", "accuracy", "auc"], &rows);
    if !report.sanity.is_empty() {
        rows = report
            .sanity
            .iter()
            .map(|s| {
                vec![
                    s.model.clone(),
                    format!("{:.4}", s.high_risk_mean),
                    format!("{:.4}", s.no_risk_mean),
                    format!("{:.4}", s.empty_mean),
                    format!("{:.4}", s.margin()),
                ]
            })
            .collect();
        out += "\nhigh-risk sanity check (mean probability)\n";
        out += &table(&["model", "high-risk", "no-risk", "empty", "margin"], &rows);
    }
    out
}

pub fn render_stability(output: &StabilityOutput) -> String {
    let rows: Vec<Vec<String>> = output
        .models
        .iter()
        .map(|m| {
            let r = &m.report;
            vec![
                m.model.clone(),
                format!("{:.3}", r.predict_prob_diff_mean),
                format!("{:.2}", r.predict_agreement),
                r.var_importance_mse.map_or_else(|| "n/a".into(), |v| format!("{v:.3e}")),
                r.n_pairs.to_string(),
            ]
        })
        .collect();
    let mut out = format!("seed: {}  requested pairs: {}\n", output.config.seed, output.config.n_pairs);
    out += &table(&["model", "prob-diff-mean", "agreement", "importance-mse", "pairs"], &rows);
    out
}
