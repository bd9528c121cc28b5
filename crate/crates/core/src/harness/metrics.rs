use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One scalar observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    /// Training step, user id or sweep value, depending on the metric.
    pub key: String,
    pub value: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Append-only table of scalar series, each row stamped with a config hash
/// and seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    rows: Vec<MetricRow>,
}

impl MetricsRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, metric: &str, key: impl ToString, value: f64, seed: u64, config_hash: &str) {
        self.rows.push(MetricRow {
            metric: metric.to_string(),
            key: key.to_string(),
            value,
            seed,
            config_hash: config_hash.to_string(),
        });
    }

    pub fn extend(&mut self, other: &MetricsRecord) {
        self.rows.extend(other.rows.iter().cloned());
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn series(&self, metric: &str) -> impl Iterator<Item = &MetricRow> {
        let metric = metric.to_string();
        self.rows.iter().filter(move |r| r.metric == metric)
    }

    pub fn last(&self, metric: &str) -> Option<f64> {
        self.series(metric).last().map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,key,value,seed,config_hash\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.metric, r.key, r.value, r.seed, r.config_hash);
        }
        out
    }
}

/// Mean and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            stderr: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, stderr, n }
}

/// Groups values by key and summarizes each group.
pub fn summarize_by<K: Ord + Clone>(items: impl IntoIterator<Item = (K, f64)>) -> BTreeMap<K, Summary> {
    let mut groups: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for (k, v) in items {
        groups.entry(k).or_default().push(v);
    }
    groups.into_iter().map(|(k, v)| (k, summarize(&v))).collect()
}
