//! Performance indicators for simulation studies and their aggregation.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use crate::error::{Result, SicError};

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(SicError::Dimension(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Relative Frobenius error `‖B - B̂‖_F / ‖B‖_F`.
pub fn estimation_error(b_true: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> Result<f64> {
    same_shape(b_true, b_hat, "estimation error")?;
    let denom = b_true.norm();
    if denom == 0.0 {
        return Err(SicError::Domain("true coefficients are all zero".into()));
    }
    Ok((b_true - b_hat).norm() / denom)
}

/// Share of truly-zero coefficients estimated as exactly zero. Row 0 (the
/// intercept) is left out of both counts. An estimate of `1e-9` is not zero.
pub fn tnr(b_true: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> Result<f64> {
    same_shape(b_true, b_hat, "TNR")?;
    let mut zeros = 0usize;
    let mut hits = 0usize;
    for j in 0..b_true.ncols() {
        for k in 1..b_true.nrows() {
            if b_true[(k, j)] == 0.0 {
                zeros += 1;
                if b_hat[(k, j)] == 0.0 {
                    hits += 1;
                }
            }
        }
    }
    if zeros == 0 {
        return Err(SicError::Domain("true coefficients have no zero outside the intercept".into()));
    }
    Ok(hits as f64 / zeros as f64)
}

/// Mean squared difference over all entries.
pub fn prediction_mse(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> Result<f64> {
    same_shape(y, y_hat, "prediction MSE")?;
    if y.is_empty() {
        return Err(SicError::Dimension("empty count matrix".into()));
    }
    Ok((y - y_hat).norm_squared() / y.len() as f64)
}

/// One method on one replication of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub scenario: String,
    pub method: String,
    pub replication: u64,
    pub estimation_error: f64,
    pub tnr: f64,
    pub prediction_mse: f64,
    /// Seconds.
    pub wall_time: f64,
}

/// Location summary of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Summary {
    /// `None` when `values` is empty.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let mut data = Data::new(values.to_vec());
        Some(Self {
            mean,
            median: data.median(),
            q25: data.lower_quartile(),
            q75: data.upper_quartile(),
        })
    }
}

/// Per-(scenario, method) summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub method: String,
    pub count: usize,
    pub estimation_error: Summary,
    pub tnr: Summary,
    pub prediction_mse: Summary,
    pub wall_time: Summary,
}

impl AggregateRow {
    pub const HEADER: [&'static str; 19] = [
        "scenario",
        "method",
        "count",
        "error_mean",
        "error_median",
        "error_q25",
        "error_q75",
        "tnr_mean",
        "tnr_median",
        "tnr_q25",
        "tnr_q75",
        "mse_mean",
        "mse_median",
        "mse_q25",
        "mse_q75",
        "time_mean",
        "time_median",
        "time_q25",
        "time_q75",
    ];

    pub fn fields(&self) -> Vec<String> {
        let mut out = vec![self.scenario.clone(), self.method.clone(), self.count.to_string()];
        for s in [&self.estimation_error, &self.tnr, &self.prediction_mse, &self.wall_time] {
            out.extend([s.mean, s.median, s.q25, s.q75].iter().map(|v| v.to_string()));
        }
        out
    }
}

/// Groups records by `(scenario, method)`, sorted lexicographically. Records
/// inside a group are ordered by replication so the result does not depend on
/// the input order.
pub fn aggregate(records: &[BenchRecord]) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        return Err(SicError::Usage("nothing to aggregate".into()));
    }
    let mut groups: BTreeMap<(&str, &str), Vec<&BenchRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((&r.scenario, &r.method)).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((scenario, method), mut group) in groups {
        group.sort_by_key(|r| r.replication);
        let column = |f: fn(&BenchRecord) -> f64| {
            let values: Vec<f64> = group.iter().map(|r| f(r)).collect();
            Summary::of(&values).expect("groups are nonempty")
        };
        rows.push(AggregateRow {
            scenario: scenario.to_string(),
            method: method.to_string(),
            count: group.len(),
            estimation_error: column(|r| r.estimation_error),
            tnr: column(|r| r.tnr),
            prediction_mse: column(|r| r.prediction_mse),
            wall_time: column(|r| r.wall_time),
        });
    }
    Ok(rows)
}
