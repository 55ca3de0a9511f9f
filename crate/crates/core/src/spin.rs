//! Collective angular momentum of two identical ensembles in the symmetric
//! Dicke basis.
//!
//! Each ensemble of `N` two-level atoms is represented by its spin-`N/2`
//! multiplet. Basis index `k ∈ [0, N]` carries magnetic number `m = k − N/2`
//! (ascending), and the joint basis is ordered `k1 * (N + 1) + k2`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::local;
use crate::C64;

/// Hermiticity tolerance used when an operator is built or decomposed.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpinBasis {
    n_atoms: usize,
}

impl SpinBasis {
    pub fn new(n_atoms: usize) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::InvalidAtomCount("0".into()));
        }
        Ok(Self { n_atoms })
    }

    /// Accepts a real-valued atom number, rejecting anything that is not a
    /// positive integer.
    pub fn from_real(n_atoms: f64) -> Result<Self> {
        if !n_atoms.is_finite() || n_atoms.fract() != 0.0 || n_atoms < 1.0 {
            return Err(Error::InvalidAtomCount(n_atoms.to_string()));
        }
        Self::new(n_atoms as usize)
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn single_dim(&self) -> usize {
        self.n_atoms + 1
    }

    pub fn joint_dim(&self) -> usize {
        self.single_dim() * self.single_dim()
    }

    /// Spin quantum number `j = N/2` of each ensemble.
    pub fn spin(&self) -> f64 {
        self.n_atoms as f64 / 2.0
    }

    pub fn magnetic(&self, k: usize) -> f64 {
        k as f64 - self.spin()
    }

    /// Inverse of [`SpinBasis::magnetic`]; `None` when `m` is not in the multiplet.
    pub fn index_of(&self, m: f64) -> Option<usize> {
        let k = m + self.spin();
        if k.fract() != 0.0 || k < 0.0 || k > self.n_atoms as f64 {
            return None;
        }
        Some(k as usize)
    }

    pub fn joint_index(&self, k1: usize, k2: usize) -> usize {
        k1 * self.single_dim() + k2
    }

    pub fn split_index(&self, joint: usize) -> (usize, usize) {
        (joint / self.single_dim(), joint % self.single_dim())
    }
}

/// Decomposition of a joint operator as `first ⊗ I + I ⊗ second`.
#[derive(Debug, Clone)]
pub struct LocalSum {
    pub first: DMatrix<C64>,
    pub second: DMatrix<C64>,
}

#[derive(Debug, Clone)]
pub struct CollectiveOperator {
    label: String,
    matrix: DMatrix<C64>,
    local: Option<LocalSum>,
    hermitian_deviation: f64,
}

impl CollectiveOperator {
    pub fn new(label: impl Into<String>, matrix: DMatrix<C64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        let hermitian_deviation = hermitian_deviation(&matrix);
        Ok(Self {
            label: label.into(),
            matrix,
            local: None,
            hermitian_deviation,
        })
    }

    /// Builds `first ⊗ I + I ⊗ second`, keeping the factors for fast products.
    pub fn from_local(
        label: impl Into<String>,
        first: DMatrix<C64>,
        second: DMatrix<C64>,
    ) -> Result<Self> {
        if first.shape() != second.shape() || !first.is_square() {
            return Err(Error::DimensionMismatch {
                expected: first.nrows(),
                found: second.nrows(),
            });
        }
        let id = DMatrix::<C64>::identity(first.nrows(), first.nrows());
        let matrix = first.kronecker(&id) + id.kronecker(&second);
        let mut op = Self::new(label, matrix)?;
        op.local = Some(LocalSum { first, second });
        Ok(op)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn local(&self) -> Option<&LocalSum> {
        self.local.as_ref()
    }

    pub fn hermitian_deviation(&self) -> f64 {
        self.hermitian_deviation
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian_deviation <= HERMITIAN_TOL
    }

    pub fn ensure_hermitian(&self) -> Result<()> {
        if self.is_hermitian() {
            Ok(())
        } else {
            Err(Error::NotHermitian {
                label: self.label.clone(),
                deviation: self.hermitian_deviation,
            })
        }
    }

    /// `A psi`, using the tensor factors when available.
    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        match &self.local {
            Some(l) => local::apply_sum(&l.first, &l.second, psi),
            None => {
                let v = &self.matrix * DVector::from_column_slice(psi);
                v.as_slice().to_vec()
            }
        }
    }
}

/// Largest entrywise `|M - M†|`.
pub fn hermitian_deviation(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Spin-`N/2` operators of one ensemble.
#[derive(Debug, Clone)]
pub struct SingleOps {
    pub jx: CollectiveOperator,
    pub jy: CollectiveOperator,
    pub jz: CollectiveOperator,
}

pub fn build_single_ops(basis: &SpinBasis) -> Result<SingleOps> {
    let d = basis.single_dim();
    let j = basis.spin();
    let mut raise = DMatrix::<C64>::zeros(d, d);
    let mut jz = DMatrix::<C64>::zeros(d, d);
    for k in 0..d {
        let m = basis.magnetic(k);
        jz[(k, k)] = C64::new(m, 0.0);
        if k + 1 < d {
            // <m+1| J+ |m>
            raise[(k + 1, k)] = C64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
    }
    let lower = raise.adjoint();
    let jx = (&raise + &lower) * C64::new(0.5, 0.0);
    // (J+ - J-) / 2i
    let jy = (&raise - &lower) * C64::new(0.0, -0.5);
    Ok(SingleOps {
        jx: CollectiveOperator::new("Jx", jx)?,
        jy: CollectiveOperator::new("Jy", jy)?,
        jz: CollectiveOperator::new("Jz", jz)?,
    })
}

/// Joint operators `J_k^± = J_k^(1) ± J_k^(2)` and the single-side embeddings.
#[derive(Debug, Clone)]
pub struct JointOps {
    pub basis: SpinBasis,
    pub single: SingleOps,
    pub jx_plus: CollectiveOperator,
    pub jy_plus: CollectiveOperator,
    pub jz_plus: CollectiveOperator,
    pub jx_minus: CollectiveOperator,
    pub jy_minus: CollectiveOperator,
    pub jz_minus: CollectiveOperator,
    /// `J_k ⊗ I` for k = x, y, z.
    pub first: [CollectiveOperator; 3],
    /// `I ⊗ J_k` for k = x, y, z.
    pub second: [CollectiveOperator; 3],
}

pub fn build_joint_ops(basis: &SpinBasis) -> Result<JointOps> {
    let single = build_single_ops(basis)?;
    let d = basis.single_dim();
    let zero = DMatrix::<C64>::zeros(d, d);
    let plus = |name: &str, op: &CollectiveOperator| {
        CollectiveOperator::from_local(name, op.matrix().clone(), op.matrix().clone())
    };
    let minus = |name: &str, op: &CollectiveOperator| {
        CollectiveOperator::from_local(name, op.matrix().clone(), -op.matrix())
    };
    let embed_first = |name: &str, op: &CollectiveOperator| {
        CollectiveOperator::from_local(name, op.matrix().clone(), zero.clone())
    };
    let embed_second = |name: &str, op: &CollectiveOperator| {
        CollectiveOperator::from_local(name, zero.clone(), op.matrix().clone())
    };
    Ok(JointOps {
        basis: *basis,
        jx_plus: plus("Jx+", &single.jx)?,
        jy_plus: plus("Jy+", &single.jy)?,
        jz_plus: plus("Jz+", &single.jz)?,
        jx_minus: minus("Jx-", &single.jx)?,
        jy_minus: minus("Jy-", &single.jy)?,
        jz_minus: minus("Jz-", &single.jz)?,
        first: [
            embed_first("Jx1", &single.jx)?,
            embed_first("Jy1", &single.jy)?,
            embed_first("Jz1", &single.jz)?,
        ],
        second: [
            embed_second("Jx2", &single.jx)?,
            embed_second("Jy2", &single.jy)?,
            embed_second("Jz2", &single.jz)?,
        ],
        single,
    })
}

/// Cached eigendecomposition of a Hermitian generator, giving `exp(i θ G)`
/// for any angle without a fresh decomposition.
#[derive(Debug, Clone)]
pub struct RotationCache {
    generator_label: String,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<C64>,
}

impl RotationCache {
    pub fn new(generator: &CollectiveOperator) -> Result<Self> {
        generator.ensure_hermitian()?;
        Ok(Self::from_matrix(generator.label(), generator.matrix()))
    }

    fn from_matrix(label: &str, m: &DMatrix<C64>) -> Self {
        let eig = SymmetricEigen::new(m.clone());
        Self {
            generator_label: label.to_string(),
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        }
    }

    pub fn generator_label(&self) -> &str {
        &self.generator_label
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<C64> {
        &self.eigenvectors
    }

    /// `V diag(λ) V†`.
    pub fn reconstruct(&self) -> DMatrix<C64> {
        let mut scaled = self.eigenvectors.clone();
        for (mut col, &lam) in scaled.column_iter_mut().zip(self.eigenvalues.iter()) {
            col *= C64::new(lam, 0.0);
        }
        scaled * self.eigenvectors.adjoint()
    }

    /// `exp(i · angle · G) = V diag(e^{i·angle·λ}) V†`.
    pub fn unitary(&self, angle: f64) -> DMatrix<C64> {
        let mut scaled = self.eigenvectors.clone();
        for (mut col, &lam) in scaled.column_iter_mut().zip(self.eigenvalues.iter()) {
            col *= C64::from_polar(1.0, angle * lam);
        }
        scaled * self.eigenvectors.adjoint()
    }
}

/// Rotation generated by an operator of the form `A ⊗ I + I ⊗ B`, which
/// factorizes as `exp(iθA) ⊗ exp(iθB)`.
#[derive(Debug, Clone)]
pub struct LocalRotation {
    label: String,
    first: RotationCache,
    second: RotationCache,
}

impl LocalRotation {
    pub fn new(generator: &CollectiveOperator) -> Result<Self> {
        generator.ensure_hermitian()?;
        let local = generator.local().ok_or_else(|| Error::NotHermitian {
            label: format!("{} (no tensor decomposition)", generator.label()),
            deviation: f64::NAN,
        })?;
        Ok(Self {
            label: generator.label().to_string(),
            first: RotationCache::from_matrix(generator.label(), &local.first),
            second: RotationCache::from_matrix(generator.label(), &local.second),
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Single-ensemble factors `(exp(iθA), exp(iθB))`.
    pub fn factors(&self, angle: f64) -> (DMatrix<C64>, DMatrix<C64>) {
        (self.first.unitary(angle), self.second.unitary(angle))
    }

    /// The full joint unitary `exp(iθ(A ⊗ I + I ⊗ B))`.
    pub fn unitary(&self, angle: f64) -> DMatrix<C64> {
        let (a, b) = self.factors(angle);
        a.kronecker(&b)
    }
}

/// Largest entrywise `|U†U − I|`.
pub fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
    let prod = u.adjoint() * u;
    let id = DMatrix::<C64>::identity(u.nrows(), u.ncols());
    max_abs_diff(&prod, &id)
}

pub fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// `AB − BA`.
pub fn commutator(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a * b - b * a
}
