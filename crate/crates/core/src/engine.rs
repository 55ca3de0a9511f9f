//! Trajectories, seeded Monte Carlo batches and the feedback-noise study.
//!
//! Seeds: trajectory `i` of a batch with master seed `s` uses
//! `mix64(s + (i + 1) · 0x9E3779B97F4A7C15)` where `mix64` is the SplitMix64
//! finalizer. The seed feeds a ChaCha8 generator; stream 0 samples outcomes and
//! stream 1 samples feedback-angle noise, so perturbing the feedback never
//! changes the outcome draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{MetricsContext, MetricsRecord};
use crate::protocol::{Outcome, Protocol, ProtocolConfig};
use crate::state::QuantumState;
use crate::stats::{success_fraction, WilsonInterval};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.99, 0.999, 0.9999];

/// Overlap a run must have exceeded before a collapse counts as broken.
pub const BROKEN_ARM: f64 = 0.9;
/// Overlap drop within one recorded stride that marks a broken run.
pub const BROKEN_DROP: f64 = 0.5;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; `mix64(0) == 0`.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeedPlan {
    pub master: u64,
}

impl SeedPlan {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn trajectory_seed(&self, index: usize) -> u64 {
        mix64(
            self.master
                .wrapping_add((index as u64).wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Master seed of grid point `index` in a sweep; point 0 keeps the master.
    pub fn grid_point(&self, index: usize) -> SeedPlan {
        SeedPlan::new(self.master ^ mix64(index as u64))
    }
}

fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let outcomes = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(1);
    (outcomes, noise)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OutcomeCounts {
    pub plus: usize,
    pub minus: usize,
    pub none: usize,
}

impl OutcomeCounts {
    pub fn total(&self) -> usize {
        self.plus + self.minus + self.none
    }

    fn record(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Plus => self.plus += 1,
            Outcome::Minus => self.minus += 1,
            Outcome::None => self.none += 1,
        }
    }
}

/// One recorded row: the outcome and angle of the step that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesRow {
    pub outcome: Option<Outcome>,
    pub lambda: f64,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub config: ProtocolConfig,
    pub seed: u64,
    pub final_metrics: MetricsRecord,
    pub series: Vec<SeriesRow>,
    pub counts: OutcomeCounts,
    pub degenerate_steps: usize,
    pub first_degenerate_step: Option<usize>,
    /// Overlap collapsed after having approached the target.
    pub collapsed: bool,
    pub final_state: QuantumState,
}

/// Whether the recorded overlaps up to `step` show a collapse: a drop of more
/// than `BROKEN_DROP` between consecutive records after exceeding `BROKEN_ARM`.
pub fn collapsed_by(series: &[SeriesRow], step: usize) -> bool {
    let mut armed = false;
    let mut last: Option<f64> = None;
    for row in series.iter().take_while(|r| r.metrics.step <= step) {
        let o = row.metrics.overlap;
        if armed && last.is_some_and(|l| l - o > BROKEN_DROP) {
            return true;
        }
        armed |= o > BROKEN_ARM;
        last = Some(o);
    }
    false
}

impl TrajectoryResult {
    pub fn broken(&self) -> bool {
        self.collapsed || self.degenerate_steps > 0
    }

    /// Record at photon count `step`, if one was taken.
    pub fn record_at(&self, step: usize) -> Option<&SeriesRow> {
        self.series.iter().find(|r| r.metrics.step == step)
    }

    /// Broken flag restricted to the first `step` photons.
    pub fn broken_by(&self, step: usize) -> bool {
        collapsed_by(&self.series, step) || self.first_degenerate_step.is_some_and(|n| n < step)
    }
}

pub fn run_trajectory(config: &ProtocolConfig, seed: u64) -> Result<TrajectoryResult> {
    let protocol = Protocol::new(config.clone())?;
    let metrics = MetricsContext::new(protocol.basis());
    run_with(&protocol, &metrics, seed)
}

/// Full health check applied at every recorded step.
fn audit(state: &QuantumState, step: usize) -> Result<()> {
    state
        .check_health(1e-8, 1e-8, -1e-7)
        .map_err(|reason| Error::StateHealth { step, reason })
}

pub fn run_with(
    protocol: &Protocol,
    metrics: &MetricsContext,
    seed: u64,
) -> Result<TrajectoryResult> {
    let config = protocol.config();
    let stride = config.record_stride;
    let (mut outcome_rng, mut noise_rng) = streams(seed);
    let mut state = protocol.initial_state();
    let mut counts = OutcomeCounts::default();
    let mut degenerate_steps = 0;
    let mut first_degenerate_step = None;

    let first = metrics.measure(0, &state, protocol.ops())?;
    let mut series = vec![SeriesRow {
        outcome: None,
        lambda: 0.0,
        metrics: first,
    }];

    for n in 0..config.n_photons {
        let draw: f64 = outcome_rng.random();
        let u: f64 = noise_rng.random();
        let scale = 1.0 + config.lambda_noise * (2.0 * u - 1.0);
        let (next, outcome) =
            protocol
                .step_scaled(&state, n, draw, scale)
                .map_err(|e| match e {
                    Error::NotNormalized { trace } => Error::StateHealth {
                        step: n,
                        reason: format!("trace {trace} before step"),
                    },
                    other => other,
                })?;
        state = next;
        counts.record(outcome.kind);
        if outcome.degenerate {
            degenerate_steps += 1;
            first_degenerate_step.get_or_insert(n);
        }

        let done = n + 1;
        if done % stride == 0 || done == config.n_photons {
            audit(&state, done)?;
            let record = metrics.measure(done, &state, protocol.ops())?;
            series.push(SeriesRow {
                outcome: Some(outcome.kind),
                lambda: outcome.lambda_applied,
                metrics: record,
            });
        }
    }

    let collapsed = collapsed_by(&series, config.n_photons);
    Ok(TrajectoryResult {
        config: config.clone(),
        seed,
        final_metrics: series.last().expect("initial row").metrics,
        series,
        counts,
        degenerate_steps,
        first_degenerate_step,
        collapsed,
        final_state: state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
    pub wilson_ci: Vec<[f64; 2]>,
    pub mean_final_overlap: f64,
    pub mean_final_c_lur: f64,
    pub broken_count: usize,
    pub failed_count: usize,
    pub master_seed: u64,
    pub config: ProtocolConfig,
    #[serde(skip)]
    pub final_overlaps: Vec<f64>,
}

impl BatchSummary {
    pub fn interval(&self, i: usize) -> WilsonInterval {
        WilsonInterval {
            lower: self.wilson_ci[i][0],
            upper: self.wilson_ci[i][1],
        }
    }
}

/// Runs `n_runs` trajectories on the current rayon pool. The result depends
/// only on `(config, n_runs, plan, thresholds)`.
pub fn run_batch(
    config: &ProtocolConfig,
    n_runs: usize,
    plan: SeedPlan,
    thresholds: &[f64],
) -> Result<BatchSummary> {
    if n_runs == 0 {
        return Err(Error::config("runs", "must be at least 1"));
    }
    let outcomes = run_trajectories(config, n_runs, plan)?;
    summarize(config, plan, thresholds, &outcomes)
}

/// The individual trajectories of a batch, in index order.
pub fn run_trajectories(
    config: &ProtocolConfig,
    n_runs: usize,
    plan: SeedPlan,
) -> Result<Vec<Result<TrajectoryResult>>> {
    if n_runs == 0 {
        return Err(Error::config("runs", "must be at least 1"));
    }
    let protocol = Protocol::new(config.clone())?;
    let metrics = MetricsContext::new(protocol.basis());
    Ok((0..n_runs)
        .into_par_iter()
        .map(|i| run_with(&protocol, &metrics, plan.trajectory_seed(i)))
        .collect())
}

/// Aggregates trajectory outcomes; failed runs count as unsuccessful.
pub fn summarize(
    config: &ProtocolConfig,
    plan: SeedPlan,
    thresholds: &[f64],
    outcomes: &[Result<TrajectoryResult>],
) -> Result<BatchSummary> {
    summarize_at(config, plan, thresholds, outcomes, config.n_photons)
}

/// Summary as if the batch had stopped after `step` photons. `step` must be a
/// recorded photon count; runs lacking that record count as failed.
pub fn summarize_at(
    config: &ProtocolConfig,
    plan: SeedPlan,
    thresholds: &[f64],
    outcomes: &[Result<TrajectoryResult>],
    step: usize,
) -> Result<BatchSummary> {
    if outcomes.is_empty() {
        return Err(Error::EmptyResults);
    }
    let mut failed_count = 0;
    let mut finals = Vec::with_capacity(outcomes.len());
    let mut c_lurs = Vec::new();
    let mut broken_count = 0;
    for outcome in outcomes {
        match outcome.as_ref().map(|r| (r, r.record_at(step))) {
            Ok((r, Some(row))) => {
                finals.push(row.metrics.overlap);
                c_lurs.push(row.metrics.c_lur);
                broken_count += usize::from(r.broken_by(step));
            }
            Ok((_, None)) => {
                log::warn!("no record at photon {step}");
                failed_count += 1;
                finals.push(f64::NEG_INFINITY);
            }
            Err(e) => {
                log::warn!("trajectory failed: {e}");
                failed_count += 1;
                // never counts as a success at any threshold
                finals.push(f64::NEG_INFINITY);
            }
        }
    }
    let mut fractions = Vec::with_capacity(thresholds.len());
    let mut wilson_ci = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let (f, ci) = success_fraction(&finals, t)?;
        fractions.push(f);
        wilson_ci.push([ci.lower, ci.upper]);
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let ok_finals: Vec<f64> = finals.iter().copied().filter(|v| v.is_finite()).collect();
    Ok(BatchSummary {
        runs: outcomes.len(),
        thresholds: thresholds.to_vec(),
        fractions,
        wilson_ci,
        mean_final_overlap: mean(&ok_finals),
        mean_final_c_lur: mean(&c_lurs),
        broken_count,
        failed_count,
        master_seed: plan.master,
        config: ProtocolConfig {
            n_photons: step,
            ..config.clone()
        },
        final_overlaps: finals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationRow {
    pub relative_noise: f64,
    pub summary: BatchSummary,
}

/// Success fractions with each applied angle multiplied by `1 + r·u`,
/// `u ~ U[−1, 1]`, for every level `r`. Every level reuses the same seeds.
pub fn lambda_perturbation_study(
    config: &ProtocolConfig,
    relative_noise_levels: &[f64],
    n_runs: usize,
    plan: SeedPlan,
    thresholds: &[f64],
) -> Result<Vec<PerturbationRow>> {
    if config.policy.source().is_none() {
        return Err(Error::config(
            "feedback",
            "the perturbation study needs a feedback policy",
        ));
    }
    relative_noise_levels
        .iter()
        .map(|&r| {
            let perturbed = ProtocolConfig {
                lambda_noise: r,
                ..config.clone()
            };
            Ok(PerturbationRow {
                relative_noise: r,
                summary: run_batch(&perturbed, n_runs, plan, thresholds)?,
            })
        })
        .collect()
}
