use serde::Serialize;

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilsonInterval {
    pub lower: f64,
    pub upper: f64,
}

impl WilsonInterval {
    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> WilsonInterval {
    if trials == 0 {
        return WilsonInterval {
            lower: 0.0,
            upper: 1.0,
        };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    WilsonInterval {
        lower: (center - half).max(0.0),
        upper: (center + half).min(1.0),
    }
}

/// Fraction of values strictly above `threshold`, with its 95% Wilson interval.
pub fn success_fraction(finals: &[f64], threshold: f64) -> Result<(f64, WilsonInterval)> {
    if finals.is_empty() {
        return Err(Error::EmptyResults);
    }
    let hits = finals.iter().filter(|&&v| v > threshold).count();
    Ok((
        hits as f64 / finals.len() as f64,
        wilson_interval(hits, finals.len(), Z_95),
    ))
}
