//! Figures of merit: overlap with the maximally entangled state, reduced-state
//! entropy, local-uncertainty violation, purity and collective moments.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::local;
use crate::spin::{CollectiveOperator, JointOps, SpinBasis};
use crate::state::QuantumState;
use crate::C64;

/// Reduced-state eigenvalues below this contribute nothing to the entropy.
pub const ENTROPY_FLOOR: f64 = 1e-14;
/// Imaginary parts of `Tr[Aρ]` above this are reported as an error.
pub const IMAG_TOL: f64 = 1e-9;
/// Variances in `[−VARIANCE_CLIP, 0)` are rounded up to zero.
pub const VARIANCE_CLIP: f64 = 1e-9;

/// `(N+1)^{−1/2} Σ_m |m⟩ ⊗ |−m⟩`.
pub fn maximally_entangled_state(basis: &SpinBasis) -> QuantumState {
    let n = basis.n_atoms();
    let amp = C64::new(1.0 / ((n + 1) as f64).sqrt(), 0.0);
    let mut psi = DVector::<C64>::zeros(basis.joint_dim());
    for k in 0..=n {
        psi[basis.joint_index(k, n - k)] = amp;
    }
    QuantumState::Pure(psi)
}

/// `⟨t|ρ|t⟩` for a normalized state and a pure target.
pub fn overlap(state: &QuantumState, target: &DVector<C64>) -> Result<f64> {
    if state.dim() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            found: state.dim(),
        });
    }
    Ok(match state {
        QuantumState::Pure(v) => target.dotc(v).norm_sqr(),
        QuantumState::Mixed(r) => target.dotc(&(r * target)).re,
    })
}

/// Reduced density matrix of ensemble 1.
pub fn partial_trace(state: &QuantumState, basis: &SpinBasis) -> Result<DMatrix<C64>> {
    if state.dim() != basis.joint_dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.joint_dim(),
            found: state.dim(),
        });
    }
    Ok(state.reduce_first(basis.single_dim()))
}

/// Base-2 von Neumann entropy of the reduced state of a pure joint state.
pub fn entanglement_entropy(state: &QuantumState, basis: &SpinBasis) -> Result<f64> {
    if !state.is_pure() {
        return Err(Error::MixedStateEntropy);
    }
    let reduced = partial_trace(state, basis)?;
    let eig = SymmetricEigen::new(reduced);
    Ok(eig
        .eigenvalues
        .iter()
        .filter(|&&p| p > ENTROPY_FLOOR)
        .map(|&p| -p * p.log2())
        .sum())
}

pub fn purity(state: &QuantumState) -> f64 {
    state.purity()
}

/// `Re Tr[Aρ]`; rejects non-Hermitian operators.
pub fn expectation(state: &QuantumState, op: &CollectiveOperator) -> Result<f64> {
    op.ensure_hermitian()?;
    if state.dim() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: state.dim(),
        });
    }
    let value = match state {
        QuantumState::Pure(v) => {
            let av = op.apply(v.as_slice());
            v.iter().zip(&av).map(|(a, b)| a.conj() * b).sum::<C64>()
        }
        QuantumState::Mixed(_) => state.trace_with(op.matrix()),
    };
    if value.im.abs() > IMAG_TOL {
        return Err(Error::NotHermitian {
            label: format!("Tr[{} rho]", op.label()),
            deviation: value.im.abs(),
        });
    }
    Ok(value.re)
}

/// `⟨A²⟩ − ⟨A⟩²`, clipped at zero within `VARIANCE_CLIP`.
pub fn variance(state: &QuantumState, op: &CollectiveOperator) -> Result<f64> {
    let mean = expectation(state, op)?;
    let second = match (state, op.local()) {
        (QuantumState::Pure(v), _) => op.apply(v.as_slice()).iter().map(|z| z.norm_sqr()).sum(),
        (QuantumState::Mixed(r), Some(local)) => {
            // (a ⊗ I + I ⊗ b)² = a² ⊗ I + I ⊗ b² + 2 a ⊗ b
            let d = local.first.nrows();
            let r1 = state.reduce_first(d);
            let r2 = state.reduce_second(d);
            let a2 = &local.first * &local.first;
            let b2 = &local.second * &local.second;
            (a2.component_mul(&r1.transpose()).sum()
                + b2.component_mul(&r2.transpose()).sum()
                + local::product_expectation(r, &local.first, &local.second) * 2.0)
                .re
        }
        (QuantumState::Mixed(r), None) => {
            let a = op.matrix();
            let ar = a * r;
            // Tr[A (A ρ)]
            let mut acc = C64::default();
            for j in 0..ar.nrows() {
                for i in 0..ar.nrows() {
                    acc += a[(j, i)] * ar[(i, j)];
                }
            }
            acc.re
        }
    };
    Ok(clip_variance(second - mean * mean))
}

fn clip_variance(v: f64) -> f64 {
    if (-VARIANCE_CLIP..0.0).contains(&v) {
        0.0
    } else {
        v
    }
}

/// `1 − (δJz⁺ + δJy⁻ + δJx⁻) / N`.
pub fn c_lur(state: &QuantumState, ops: &JointOps) -> Result<f64> {
    let n = ops.basis.n_atoms() as f64;
    let total = variance(state, &ops.jz_plus)?
        + variance(state, &ops.jy_minus)?
        + variance(state, &ops.jx_minus)?;
    Ok(1.0 - total / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub overlap: f64,
    /// Only defined on the pure path.
    pub entropy: Option<f64>,
    pub c_lur: f64,
    pub purity: f64,
    pub mean_jzp: f64,
    pub mean_jym: f64,
    pub mean_jxm: f64,
    pub mean_jxp: f64,
    pub var_jzp: f64,
    pub var_jym: f64,
    pub var_jxm: f64,
}

impl MetricsRecord {
    /// Sum of the three variances that vanish on the target state.
    pub fn variance_sum(&self) -> f64 {
        self.var_jzp + self.var_jym + self.var_jxm
    }
}

/// Target state and operators reused for every metrics snapshot.
#[derive(Debug, Clone)]
pub struct MetricsContext {
    basis: SpinBasis,
    target: DVector<C64>,
}

impl MetricsContext {
    pub fn new(basis: &SpinBasis) -> Self {
        let QuantumState::Pure(target) = maximally_entangled_state(basis) else {
            unreachable!()
        };
        Self {
            basis: *basis,
            target,
        }
    }

    pub fn target(&self) -> &DVector<C64> {
        &self.target
    }

    pub fn measure(
        &self,
        step: usize,
        state: &QuantumState,
        ops: &JointOps,
    ) -> Result<MetricsRecord> {
        let n = self.basis.n_atoms() as f64;
        let var_jzp = variance(state, &ops.jz_plus)?;
        let var_jym = variance(state, &ops.jy_minus)?;
        let var_jxm = variance(state, &ops.jx_minus)?;
        Ok(MetricsRecord {
            step,
            overlap: overlap(state, &self.target)?,
            entropy: if state.is_pure() {
                Some(entanglement_entropy(state, &self.basis)?)
            } else {
                None
            },
            c_lur: 1.0 - (var_jzp + var_jym + var_jxm) / n,
            purity: state.purity(),
            mean_jzp: expectation(state, &ops.jz_plus)?,
            mean_jym: expectation(state, &ops.jy_minus)?,
            mean_jxm: expectation(state, &ops.jx_minus)?,
            mean_jxp: expectation(state, &ops.jx_plus)?,
            var_jzp,
            var_jym,
            var_jxm,
        })
    }
}
