//! Conditional state of the joint two-ensemble system.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::local;
use crate::spin::hermitian_deviation;
use crate::C64;

/// Trace tolerance for a state flagged as normalized.
pub const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum QuantumState {
    Pure(DVector<C64>),
    Mixed(DMatrix<C64>),
}

/// A state whose trace carries the probability of the branch that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Unnormalized(pub QuantumState);

impl Unnormalized {
    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn normalize(self) -> QuantumState {
        self.0.normalized()
    }
}

impl QuantumState {
    pub fn dim(&self) -> usize {
        match self {
            QuantumState::Pure(v) => v.len(),
            QuantumState::Mixed(m) => m.nrows(),
        }
    }

    pub fn is_pure(&self) -> bool {
        matches!(self, QuantumState::Pure(_))
    }

    /// `‖ψ‖²` or `Tr ρ`.
    pub fn trace(&self) -> f64 {
        match self {
            QuantumState::Pure(v) => v.norm_squared(),
            QuantumState::Mixed(m) => m.diagonal().iter().map(|z| z.re).sum(),
        }
    }

    pub fn normalized(self) -> Self {
        let t = self.trace();
        match self {
            QuantumState::Pure(v) => QuantumState::Pure(v / C64::new(t.sqrt(), 0.0)),
            QuantumState::Mixed(m) => QuantumState::Mixed(m / C64::new(t, 0.0)),
        }
    }

    pub fn ensure_normalized(&self) -> Result<()> {
        let trace = self.trace();
        if (trace - 1.0).abs() > NORM_TOL || !trace.is_finite() {
            return Err(Error::NotNormalized { trace });
        }
        Ok(())
    }

    pub fn to_density(&self) -> DMatrix<C64> {
        match self {
            QuantumState::Pure(v) => v * v.adjoint(),
            QuantumState::Mixed(m) => m.clone(),
        }
    }

    pub fn into_mixed(self) -> Self {
        match self {
            QuantumState::Pure(v) => QuantumState::Mixed(&v * v.adjoint()),
            mixed => mixed,
        }
    }

    /// `Tr ρ²` of the normalized state; exactly 1 for the pure representation.
    pub fn purity(&self) -> f64 {
        match self {
            QuantumState::Pure(_) => 1.0,
            QuantumState::Mixed(m) => {
                let t = self.trace();
                m.iter().map(|z| z.norm_sqr()).sum::<f64>() / (t * t)
            }
        }
    }

    /// `Tr[Aρ]` (complex; the caller decides how to treat the imaginary part).
    pub fn trace_with(&self, a: &DMatrix<C64>) -> C64 {
        match self {
            QuantumState::Pure(v) => {
                let av = a * v;
                v.dotc(&av)
            }
            QuantumState::Mixed(m) => {
                let n = m.nrows();
                let mut acc = C64::default();
                for j in 0..n {
                    for i in 0..n {
                        acc += a[(j, i)] * m[(i, j)];
                    }
                }
                acc
            }
        }
    }

    /// Reduced state of ensemble 1; `d` is the single-ensemble dimension.
    pub fn reduce_first(&self, d: usize) -> DMatrix<C64> {
        match self {
            QuantumState::Pure(v) => local::reduce_pure_first(v.as_slice(), d),
            QuantumState::Mixed(m) => local::reduce_mixed_first(m, d),
        }
    }

    /// Reduced state of ensemble 2.
    pub fn reduce_second(&self, d: usize) -> DMatrix<C64> {
        match self {
            QuantumState::Pure(v) => local::reduce_pure_second(v.as_slice(), d),
            QuantumState::Mixed(m) => local::reduce_mixed_second(m, d),
        }
    }

    /// Applies `(a ⊗ b)` to the state (conjugation for the mixed case).
    pub fn apply_local_unitary(&mut self, a: &DMatrix<C64>, b: &DMatrix<C64>) {
        match self {
            QuantumState::Pure(v) => {
                let out = local::apply_product(a, b, v.as_slice());
                v.as_mut_slice().copy_from_slice(&out);
            }
            QuantumState::Mixed(m) => local::conjugate_product(m, a, b),
        }
    }

    /// Cheap health check: trace, Hermiticity and positivity, the latter via a
    /// Cholesky factorization of the real form of `ρ + |eig_floor|·I`. The full eigenvalue
    /// report is only computed when a check fails.
    pub fn check_health(
        &self,
        trace_tol: f64,
        herm_tol: f64,
        eig_floor: f64,
    ) -> Result<(), String> {
        let QuantumState::Mixed(m) = self else {
            return self.health().check(trace_tol, herm_tol, eig_floor);
        };
        let trace = self.trace();
        let finite = m.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        let deviation = hermitian_deviation(m);
        if finite
            && (trace - 1.0).abs() <= trace_tol
            && deviation <= herm_tol
            && Cholesky::new(real_embedding(m, eig_floor.abs())).is_some()
        {
            return Ok(());
        }
        self.health().check(trace_tol, herm_tol, eig_floor)
    }

    /// Health report for a normalized state.
    pub fn health(&self) -> Health {
        let trace = self.trace();
        match self {
            QuantumState::Pure(v) => Health {
                trace,
                hermitian_deviation: 0.0,
                min_eigenvalue: 0.0,
                finite: v.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
            },
            QuantumState::Mixed(m) => {
                let finite = m.iter().all(|z| z.re.is_finite() && z.im.is_finite());
                let min_eigenvalue = if finite {
                    SymmetricEigen::new(m.clone()).eigenvalues.min()
                } else {
                    f64::NAN
                };
                Health {
                    trace,
                    hermitian_deviation: hermitian_deviation(m),
                    min_eigenvalue,
                    finite,
                }
            }
        }
    }
}

/// `[[Re, −Im], [Im, Re]]` of `m + shift·I`; positive definite iff `m + shift·I` is.
fn real_embedding(m: &DMatrix<C64>, shift: f64) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = m[(i % n, j % n)];
        let base = match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        };
        if i == j {
            base + shift
        } else {
            base
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Health {
    pub trace: f64,
    pub hermitian_deviation: f64,
    /// Zero for the pure representation.
    pub min_eigenvalue: f64,
    pub finite: bool,
}

impl Health {
    pub fn check(&self, trace_tol: f64, herm_tol: f64, eig_floor: f64) -> Result<(), String> {
        if !self.finite {
            return Err("non-finite entries".into());
        }
        if (self.trace - 1.0).abs() > trace_tol {
            return Err(format!("trace {} drifted from 1", self.trace));
        }
        if self.hermitian_deviation > herm_tol {
            return Err(format!(
                "Hermiticity defect {:.3e}",
                self.hermitian_deviation
            ));
        }
        if self.min_eigenvalue < eig_floor {
            return Err(format!("negative eigenvalue {:.3e}", self.min_eigenvalue));
        }
        Ok(())
    }
}
