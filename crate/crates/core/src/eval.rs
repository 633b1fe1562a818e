//! ROC analysis for attack scores.
//!
//! Curves are built by sweeping a threshold down through the distinct
//! scores; tied scores cross the threshold together, which gives ties half
//! credit in the AUC. TPR at a fixed FPR is read off the realized
//! thresholds without interpolation.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocSummary {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    /// `(requested fpr, achieved tpr)`.
    pub tpr_at: Vec<(f64, f64)>,
}

/// ROC points from `(0, 0)` to `(1, 1)`; `labels[i]` is true for members.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("score {i} is NaN")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidArgument(
            "ROC needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
        });
    }
    Ok(points)
}

/// Trapezoidal area under the curve.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Best TPR over realized thresholds whose FPR does not exceed `fpr_target`.
/// With fewer than `1 / fpr_target` negatives this is the TPR at zero false
/// positives.
pub fn tpr_at_fpr(points: &[RocPoint], fpr_target: f64) -> f64 {
    points
        .iter()
        .filter(|p| p.fpr <= fpr_target)
        .map(|p| p.tpr)
        .fold(0.0, f64::max)
}

pub fn summarize(scores: &[f64], labels: &[bool], fpr_targets: &[f64]) -> Result<RocSummary> {
    let points = roc_curve(scores, labels)?;
    let tpr_at = fpr_targets.iter().map(|&f| (f, tpr_at_fpr(&points, f))).collect();
    Ok(RocSummary {
        auc: auc(&points),
        tpr_at,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub mean: f64,
    /// Sample standard deviation (n - 1); zero for a single run.
    pub std: f64,
    pub values: Vec<f64>,
}

pub fn aggregate_runs(values: &[f64]) -> Result<RunAggregate> {
    if values.is_empty() {
        return Err(Error::Empty("aggregate over zero runs"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(RunAggregate {
        mean,
        std,
        values: values.to_vec(),
    })
}

pub fn write_roc_csv<W: Write>(points: &[RocPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// One `metric,seed,value` line of an evaluation report. Aggregate rows use
/// `mean` and `std` in the seed column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub metric: String,
    pub seed: String,
    pub value: f64,
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_report_csv<R: Read>(reader: R) -> Result<Vec<ReportRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
