//! Fast invariant table behind the `verify` subcommand.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::metrics::maximally_entangled_state;
use crate::protocol::{FeedbackMode, FeedbackPolicy, Protocol, ProtocolConfig};
use crate::spin::{build_joint_ops, commutator, max_abs_diff, SpinBasis};
use crate::state::QuantumState;
use crate::C64;

pub const VERIFY_ATOMS: [usize; 4] = [1, 2, 4, 10];
pub const POSTCONDITION_STEPS: usize = 100;

/// Deliberate model error used to show the table can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// The feedback controller assumes `−χ` while the Kraus update uses `χ`.
    ChiSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub n_atoms: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst.is_finite() && self.worst <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<26} N={:<3} worst={:<10.3e} tol={:<8.1e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.n_atoms,
            self.worst,
            self.tolerance
        )
    }
}

fn cyclic_commutators(ops: [&DMatrix<C64>; 3]) -> f64 {
    let i = C64::new(0.0, 1.0);
    (0..3)
        .map(|a| {
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            max_abs_diff(&commutator(ops[a], ops[b]), &(ops[c] * i))
        })
        .fold(0.0, f64::max)
}

fn norm_of(op: &DMatrix<C64>, psi: &QuantumState) -> f64 {
    match psi {
        QuantumState::Pure(v) => (op * v).norm(),
        QuantumState::Mixed(_) => f64::NAN,
    }
}

/// Largest `|⟨Jz⁺⟩| / N` after each detection over a simple-exact run.
pub fn feedback_postcondition(n_atoms: usize, steps: usize, fault: Option<Fault>) -> Result<f64> {
    let config = ProtocolConfig {
        n_atoms,
        eta: 1.0,
        n_photons: steps,
        policy: FeedbackPolicy::with_mode(FeedbackMode::SimpleExact),
        ..ProtocolConfig::default()
    };
    let real = Protocol::new(config.clone())?;
    let model = match fault {
        None => None,
        Some(Fault::ChiSign) => Some(Protocol::new(ProtocolConfig {
            chi: -config.chi,
            ..config
        })?),
    };
    let jz = real.ops().jz_plus.matrix().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2024 + n_atoms as u64);
    let mut state = real.initial_state();
    let mut worst: f64 = 0.0;
    for n in 0..steps {
        let draw: f64 = rng.random();
        state = match &model {
            None => real.step(&state, n, draw)?.0,
            Some(model) => {
                let which = real
                    .step_probabilities(&state)?
                    .sample(draw)
                    .detection()
                    .expect("lossless detector");
                let post = real.apply_detection(&state, which)?;
                let believed = model.apply_detection(&state, which)?;
                let lambda = model.feedback_angle_exact(&believed).unwrap_or(0.0);
                real.apply_feedback(&post.0, lambda).normalized()
            }
        };
        worst = worst.max(state.trace_with(&jz).re.abs() / n_atoms as f64);
    }
    Ok(worst)
}

/// Runs every check for `N ∈ {1, 2, 4, 10}`.
pub fn run_checks(fault: Option<Fault>) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for &n in &VERIFY_ATOMS {
        let basis = SpinBasis::new(n)?;
        let ops = build_joint_ops(&basis)?;
        let s = &ops.single;
        let d = basis.single_dim();
        let j = basis.spin();

        checks.push(Check {
            name: "single commutators",
            n_atoms: n,
            worst: cyclic_commutators([s.jx.matrix(), s.jy.matrix(), s.jz.matrix()]),
            tolerance: 1e-12,
        });
        checks.push(Check {
            name: "joint commutators",
            n_atoms: n,
            worst: cyclic_commutators([
                ops.jx_plus.matrix(),
                ops.jy_plus.matrix(),
                ops.jz_plus.matrix(),
            ]),
            tolerance: 1e-12,
        });
        let cross = ops
            .first
            .iter()
            .flat_map(|a| {
                ops.second
                    .iter()
                    .map(move |b| commutator(a.matrix(), b.matrix()).camax())
            })
            .fold(0.0, f64::max);
        checks.push(Check {
            name: "ensembles commute",
            n_atoms: n,
            worst: cross,
            tolerance: 1e-12,
        });
        let casimir = s.jx.matrix() * s.jx.matrix()
            + s.jy.matrix() * s.jy.matrix()
            + s.jz.matrix() * s.jz.matrix();
        let expected = DMatrix::<C64>::identity(d, d) * C64::new(j * (j + 1.0), 0.0);
        checks.push(Check {
            name: "Casimir",
            n_atoms: n,
            worst: max_abs_diff(&casimir, &expected),
            tolerance: 1e-10,
        });

        let protocol = Protocol::new(ProtocolConfig {
            n_atoms: n,
            ..ProtocolConfig::default()
        })?;
        checks.push(Check {
            name: "POVM completeness",
            n_atoms: n,
            worst: protocol.kraus().completeness_defect(),
            tolerance: 1e-12,
        });

        let me = maximally_entangled_state(&basis);
        let triple = [&ops.jz_plus, &ops.jy_minus, &ops.jx_minus]
            .iter()
            .map(|op| norm_of(op.matrix(), &me))
            .fold(0.0, f64::max);
        checks.push(Check {
            name: "target null triple",
            n_atoms: n,
            worst: triple,
            tolerance: 1e-10,
        });

        checks.push(Check {
            name: "feedback postcondition",
            n_atoms: n,
            worst: feedback_postcondition(n, POSTCONDITION_STEPS, fault)?,
            tolerance: 1e-8,
        });
    }
    Ok(checks)
}
