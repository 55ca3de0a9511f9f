//! Flat `key = value` run configuration. Keys mirror the command-line flag
//! names; `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::engine::DEFAULT_THRESHOLDS;
use crate::error::{Error, Result};
use crate::protocol::ProtocolConfig;

/// Everything a run needs: the protocol plus batch-level settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSettings {
    pub protocol: ProtocolConfig,
    pub runs: usize,
    pub thresholds: Vec<f64>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            protocol: ProtocolConfig::default(),
            runs: 50,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{}`", raw.trim())))
}

pub fn parse_thresholds(raw: &str) -> Result<Vec<f64>> {
    let values = raw
        .split(',')
        .map(|t| parse_num::<f64>("thresholds", t))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() || values.iter().any(|t| !t.is_finite()) {
        return Err(Error::config(
            "thresholds",
            "need finite comma-separated values",
        ));
    }
    Ok(values)
}

impl RunSettings {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let p = &mut self.protocol;
        match key {
            "n-atoms" => p.n_atoms = parse_num(key, raw)?,
            "chi" => p.chi = parse_num(key, raw)?,
            "omega-div-pi" => p.omega_div_pi = parse_num(key, raw)?,
            "eta" => p.eta = parse_num(key, raw)?,
            "photons" => p.n_photons = parse_num(key, raw)?,
            "feedback" => p.policy.mode = raw.trim().parse()?,
            "adiabatic-base" => p.policy.adiabatic_base = raw.trim().parse()?,
            "cut-scale" => p.policy.cut_scale = parse_num(key, raw)?,
            "activation-step" => p.policy.activation_step = parse_num(key, raw)?,
            "frame-angle" => p.frame_angle = raw.trim().parse()?,
            "lambda-noise" => p.lambda_noise = parse_num(key, raw)?,
            "seed" => p.seed = parse_num(key, raw)?,
            "stride" => p.record_stride = parse_num(key, raw)?,
            "runs" => self.runs = parse_num(key, raw)?,
            "thresholds" => self.thresholds = parse_thresholds(raw)?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut settings = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(
                    "config",
                    format!("line {}: expected `key = value`", lineno + 1),
                ));
            };
            settings.set(key.trim(), value)?;
        }
        Ok(settings)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; `parse(emit())` returns an equal value.
    pub fn emit(&self) -> String {
        let p = &self.protocol;
        let thresholds: Vec<String> = self.thresholds.iter().map(|t| t.to_string()).collect();
        let pairs: [(&str, String); 15] = [
            ("n-atoms", p.n_atoms.to_string()),
            ("chi", p.chi.to_string()),
            ("omega-div-pi", p.omega_div_pi.to_string()),
            ("eta", p.eta.to_string()),
            ("photons", p.n_photons.to_string()),
            ("feedback", p.policy.mode.to_string()),
            ("adiabatic-base", p.policy.adiabatic_base.to_string()),
            ("cut-scale", p.policy.cut_scale.to_string()),
            ("activation-step", p.policy.activation_step.to_string()),
            ("frame-angle", p.frame_angle.to_string()),
            ("lambda-noise", p.lambda_noise.to_string()),
            ("seed", p.seed.to_string()),
            ("stride", p.record_stride.to_string()),
            ("runs", self.runs.to_string()),
            ("thresholds", thresholds.join(",")),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        if self.runs == 0 {
            return Err(Error::config("runs", "must be at least 1"));
        }
        self.protocol.validate()
    }
}

/// Grid over configuration keys, written `key=v1,v2;key2=w1,w2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axes: Vec<(String, Vec<String>)>,
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut axes: Vec<(String, Vec<String>)> = Vec::new();
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| Error::SweepSpec(format!("`{part}` is not `key=v1,v2`")))?;
            let key = key.trim().to_string();
            let values: Vec<String> = values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            if values.is_empty() {
                return Err(Error::SweepSpec(format!("no values for `{key}`")));
            }
            if axes.iter().any(|(k, _)| *k == key) {
                return Err(Error::SweepSpec(format!("`{key}` appears twice")));
            }
            // reject unknown keys and unparsable values up front
            let mut probe = RunSettings::default();
            for v in &values {
                probe
                    .set(&key, v)
                    .map_err(|e| Error::SweepSpec(e.to_string()))?;
            }
            axes.push((key, values));
        }
        if axes.is_empty() {
            return Err(Error::SweepSpec("empty grid".into()));
        }
        Ok(Self { axes })
    }

    /// Grid points in lexicographic order, the first axis outermost.
    pub fn points(&self) -> Vec<Vec<(String, String)>> {
        let mut points = vec![Vec::new()];
        for (key, values) in &self.axes {
            points = points
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push((key.clone(), v.clone()));
                        p
                    })
                })
                .collect();
        }
        points
    }

    /// Applies one grid point on top of a template.
    pub fn apply(template: &RunSettings, point: &[(String, String)]) -> Result<RunSettings> {
        let mut s = template.clone();
        for (k, v) in point {
            s.set(k, v)?;
        }
        Ok(s)
    }
}
