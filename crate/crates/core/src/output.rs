//! CSV and JSON writers plus the run manifest.
//!
//! Data files are byte-identical across reruns with the same inputs. The
//! manifest, which carries the wall-clock timestamp, lives beside each data
//! file as `<file>.manifest.json`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::RunSettings;
use crate::engine::{BatchSummary, TrajectoryResult};
use crate::error::Result;
use crate::metrics::MetricsRecord;

/// Bumped on any column or field change.
pub const SCHEMA_VERSION: u32 = 1;

pub const SERIES_HEADER: &str = "n,outcome,lambda,overlap,entropy,c_lur,purity,mean_jzp,mean_jym,mean_jxm,mean_jxp,var_jzp,var_jym,var_jxm";

pub const SWEEP_HEADER: &str = "point,assignment,threshold,fraction,ci_lower,ci_upper,mean_final_overlap,mean_final_c_lur,broken_count,runs";

/// Rounds to 12 significant digits.
pub fn round_sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n
                .as_f64()
                .map(round_sig12)
                .and_then(serde_json::Number::from_f64)
            {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 12 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    Ok(text)
}

fn push_row(out: &mut String, outcome: &str, lambda: f64, m: &MetricsRecord) {
    let entropy = m.entropy.map(|e| e.to_string()).unwrap_or_default();
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.step,
        outcome,
        lambda,
        m.overlap,
        entropy,
        m.c_lur,
        m.purity,
        m.mean_jzp,
        m.mean_jym,
        m.mean_jxm,
        m.mean_jxp,
        m.var_jzp,
        m.var_jym,
        m.var_jxm
    );
}

/// Time series of one trajectory; the first row is the initial state.
pub fn series_csv(result: &TrajectoryResult) -> String {
    let mut out = String::with_capacity(128 * (result.series.len() + 1));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for row in &result.series {
        let outcome = row.outcome.map_or("init", |o| o.as_str());
        push_row(&mut out, outcome, row.lambda, &row.metrics);
    }
    out
}

#[derive(Debug, Serialize)]
struct BatchDocument<'a> {
    schema_version: u32,
    #[serde(flatten)]
    summary: &'a BatchSummary,
}

pub fn batch_json(summary: &BatchSummary) -> Result<String> {
    to_json(&BatchDocument {
        schema_version: SCHEMA_VERSION,
        summary,
    })
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub assignment: String,
    pub summary: BatchSummary,
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for p in points {
        let s = &p.summary;
        for (i, t) in s.thresholds.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                p.index,
                p.assignment,
                t,
                s.fractions[i],
                s.wilson_ci[i][0],
                s.wilson_ci[i][1],
                s.mean_final_overlap,
                s.mean_final_c_lur,
                s.broken_count,
                s.runs
            );
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub artifact_version: String,
    pub command: String,
    pub timestamp: String,
    pub master_seed: u64,
    pub settings: RunSettings,
    /// Canonical config-file text reproducing the run.
    pub config_text: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, settings: &RunSettings, outputs: Vec<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            master_seed: settings.protocol.seed,
            settings: settings.clone(),
            config_text: settings.emit(),
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, to_json(self)?)?;
        Ok(())
    }
}

/// `<file>.manifest.json` next to a data file or directory.
pub fn manifest_path(data: &Path) -> PathBuf {
    let mut name = data.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
