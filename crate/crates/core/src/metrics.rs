//! Ranking metrics, run aggregation and Welch's t-test.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[f64]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::dim("metric inputs", scores.len(), labels.len()));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("score {s} is not a number")));
    }
    let mut pos = 0;
    for &l in labels {
        if l == 1.0 {
            pos += 1;
        } else if l != 0.0 {
            return Err(Error::Label(format!("metric labels must be 0 or 1, got {l}")));
        }
    }
    Ok((pos, labels.len() - pos))
}

/// Groups of tied scores in descending score order, as `(positives, negatives)`.
fn tie_groups_desc(scores: &[f64], labels: &[f64]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last = f64::NAN;
    for i in order {
        if groups.is_empty() || scores[i] != last {
            groups.push((0, 0));
            last = scores[i];
        }
        let g = groups.last_mut().expect("pushed above");
        if labels[i] == 1.0 {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties counting one
/// half.
pub fn au_roc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AU-ROC needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    // Walking from the highest score down, each negative is beaten by every
    // positive seen before its group and ties with the positives inside it.
    let mut pos_above = 0usize;
    let mut twice_wins = 0u128;
    for (gp, gn) in tie_groups_desc(scores, labels) {
        twice_wins += (gn as u128) * (2 * pos_above as u128 + gp as u128);
        pos_above += gp;
    }
    Ok(twice_wins as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Average precision: precision at each distinct threshold weighted by the
/// recall gained there.
pub fn au_prc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("AU-PRC needs at least one positive".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (gp, gn) in tie_groups_desc(scores, labels) {
        tp += gp;
        fp += gn;
        if gp > 0 {
            ap += (gp as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Unweighted mean of per-output metrics. Outputs whose metric is undefined
/// (a single class present) are skipped; if every output is undefined the
/// result is an error.
pub fn macro_average(
    scores: &[Vec<f64>],
    targets: &[Vec<f64>],
    metric: fn(&[f64], &[f64]) -> Result<f64>,
) -> Result<f64> {
    if scores.len() != targets.len() {
        return Err(Error::dim("macro_average", scores.len(), targets.len()));
    }
    let outputs = scores.first().map_or(0, Vec::len);
    let mut values = Vec::new();
    for o in 0..outputs {
        let s: Vec<f64> = scores.iter().map(|r| r[o]).collect();
        let l: Vec<f64> = targets.iter().map(|r| r[o]).collect();
        match metric(&s, &l) {
            Ok(v) => values.push(v),
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(Error::UndefinedMetric("no output has both classes".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Mean and sample (n−1) variance.
fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided survival probability `P(|T| > |t|)` for Student's t with `df`
/// degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Welch's unequal-variance two-sample t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "Welch's t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if ma == mb {
            WelchResult { t: 0.0, df, p_value: 1.0 }
        } else {
            WelchResult {
                t: (ma - mb).signum() * f64::INFINITY,
                df,
                p_value: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    Ok(WelchResult {
        t,
        df,
        p_value: t_two_sided_p(t, df),
    })
}

/// Significance stars: `***` below 0.001, `**` below 0.01, `*` below 0.05.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub au_roc: f64,
    pub au_prc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub model: String,
    pub au_roc: Vec<f64>,
    pub au_prc: Vec<f64>,
    pub au_roc_mean: f64,
    pub au_roc_std: f64,
    pub au_prc_mean: f64,
    pub au_prc_std: f64,
}

/// Mean and sample standard deviation; one value gives std 0.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.len() < 2 {
        return (x.first().copied().unwrap_or(f64::NAN), 0.0);
    }
    let (m, v) = mean_var(x);
    (m, v.sqrt())
}

pub fn aggregate_runs(task: &str, model: &str, runs: &[RunMetrics]) -> Result<RunReport> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate zero runs".into()));
    }
    let au_roc: Vec<f64> = runs.iter().map(|r| r.au_roc).collect();
    let au_prc: Vec<f64> = runs.iter().map(|r| r.au_prc).collect();
    let (au_roc_mean, au_roc_std) = mean_std(&au_roc);
    let (au_prc_mean, au_prc_std) = mean_std(&au_prc);
    Ok(RunReport {
        task: task.into(),
        model: model.into(),
        au_roc,
        au_prc,
        au_roc_mean,
        au_roc_std,
        au_prc_mean,
        au_prc_std,
    })
}

/// One line of a significance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub model: String,
    pub task: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub reference: String,
    pub p_value: Option<f64>,
    pub stars: String,
}

/// Compares every report against the reference model's report for the same
/// task on both metrics.
pub fn significance_table(reports: &[RunReport], reference: &str) -> Result<Vec<StatsRow>> {
    let mut rows = Vec::new();
    for r in reports {
        let base = reports.iter().find(|b| b.model == reference && b.task == r.task);
        for (metric, values, mean, std) in [
            ("au_roc", &r.au_roc, r.au_roc_mean, r.au_roc_std),
            ("au_prc", &r.au_prc, r.au_prc_mean, r.au_prc_std),
        ] {
            let p_value = match base {
                Some(b) if values.len() >= 2 => {
                    let other = if metric == "au_roc" { &b.au_roc } else { &b.au_prc };
                    if other.len() >= 2 {
                        Some(welch_t_test(values, other)?.p_value)
                    } else {
                        None
                    }
                }
                _ => None,
            };
            rows.push(StatsRow {
                model: r.model.clone(),
                task: r.task.clone(),
                metric: metric.into(),
                mean,
                std,
                reference: reference.into(),
                p_value,
                stars: p_value.map_or("", stars).into(),
            });
        }
    }
    Ok(rows)
}

pub fn write_stats_csv(path: &Path, rows: &[StatsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::preprocess::csv_err)?;
    w.write_record(["model", "task", "metric", "mean", "std", "reference", "p_value", "stars"])
        .map_err(crate::preprocess::csv_err)?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.task.clone(),
            r.metric.clone(),
            crate::preprocess::format_float(r.mean),
            crate::preprocess::format_float(r.std),
            r.reference.clone(),
            r.p_value.map(crate::preprocess::format_float).unwrap_or_default(),
            r.stars.clone(),
        ])
        .map_err(crate::preprocess::csv_err)?;
    }
    w.flush()?;
    Ok(())
}
