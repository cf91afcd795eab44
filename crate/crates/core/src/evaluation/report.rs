use serde::{Deserialize, Serialize};

use super::consistency::MetricRun;
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;
/// Depth errors in the report are scene units times this.
pub const DEPTH_REPORT_SCALE: f64 = 100.0;

/// Settings echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub seed: u64,
    pub n_identities: usize,
    pub depth_resolution: usize,
    pub id_resolution: usize,
    pub render_steps: usize,
    pub visibility_factor: f64,
    pub side_yaw_range: (f64, f64),
    pub side_yaw_override: Option<f64>,
    pub id_mode: String,
    pub generator: String,
    pub hyper: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyReport {
    pub version: u32,
    pub config: ReportConfig,
    pub n_identities: usize,
    /// Scene units x100.
    pub depth_error_mean: f64,
    pub depth_error_per_identity: Vec<f64>,
    pub depth_excluded_fraction_per_identity: Vec<f64>,
    pub depth_skipped: Vec<usize>,
    pub id_similarity_mean: f64,
    pub id_similarity_per_identity: Vec<f64>,
    pub id_skipped: Vec<usize>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn build_report(depth: &MetricRun, id: &MetricRun, config: ReportConfig) -> Result<ConsistencyReport> {
    let depth_errors: Vec<f64> = depth.completed().iter().map(|d| d * DEPTH_REPORT_SCALE).collect();
    let id_values = id.completed();
    if depth_errors.is_empty() {
        return Err(Error::Report("every identity was skipped for depth error".into()));
    }
    if id_values.is_empty() {
        return Err(Error::Report("every identity was skipped for ID similarity".into()));
    }
    if id_values.iter().any(|c| !(-1.0..=1.0).contains(c)) {
        return Err(Error::Report("ID similarity outside [-1, 1]".into()));
    }
    Ok(ConsistencyReport {
        version: REPORT_VERSION,
        n_identities: depth.values.len().max(id.values.len()),
        depth_error_mean: mean(&depth_errors),
        depth_excluded_fraction_per_identity: depth.excluded_fraction.iter().flatten().copied().collect(),
        depth_skipped: depth.skip_reasons.iter().map(|(i, _)| *i).collect(),
        depth_error_per_identity: depth_errors,
        id_similarity_mean: mean(&id_values),
        id_similarity_per_identity: id_values,
        id_skipped: id.skip_reasons.iter().map(|(i, _)| *i).collect(),
        config,
    })
}

impl ConsistencyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
