//! Kernels for operators with two-ensemble tensor structure.
//!
//! Joint vectors are indexed `k1 * d + k2`. Density matrices are stored column
//! major, so each column is itself a joint vector and row-side products reduce
//! to the vector kernels applied column by column.

use nalgebra::DMatrix;

use crate::C64;

/// `out = (a ⊗ b) psi`. `tmp` must have the same length as `psi`.
pub fn apply_product_into(
    a: &DMatrix<C64>,
    b: &DMatrix<C64>,
    psi: &[C64],
    tmp: &mut [C64],
    out: &mut [C64],
) {
    let d = a.nrows();
    debug_assert_eq!(psi.len(), d * d);
    tmp.fill(C64::default());
    for k1 in 0..d {
        let row = &psi[k1 * d..(k1 + 1) * d];
        let dst = &mut tmp[k1 * d..(k1 + 1) * d];
        for (k2, &v) in row.iter().enumerate() {
            if v == C64::default() {
                continue;
            }
            let col = b.column(k2);
            for (t, &bc) in dst.iter_mut().zip(col.iter()) {
                *t += bc * v;
            }
        }
    }
    out.fill(C64::default());
    for k1 in 0..d {
        let src = &tmp[k1 * d..(k1 + 1) * d];
        for k1p in 0..d {
            let coeff = a[(k1p, k1)];
            if coeff == C64::default() {
                continue;
            }
            let dst = &mut out[k1p * d..(k1p + 1) * d];
            for (o, &s) in dst.iter_mut().zip(src.iter()) {
                *o += coeff * s;
            }
        }
    }
}

/// `(a ⊗ b) psi` as a fresh vector.
pub fn apply_product(a: &DMatrix<C64>, b: &DMatrix<C64>, psi: &[C64]) -> Vec<C64> {
    let mut tmp = vec![C64::default(); psi.len()];
    let mut out = vec![C64::default(); psi.len()];
    apply_product_into(a, b, psi, &mut tmp, &mut out);
    out
}

/// `(a ⊗ I + I ⊗ b) psi`.
pub fn apply_sum(a: &DMatrix<C64>, b: &DMatrix<C64>, psi: &[C64]) -> Vec<C64> {
    let d = a.nrows();
    debug_assert_eq!(psi.len(), d * d);
    let mut out = vec![C64::default(); psi.len()];
    for k1 in 0..d {
        let row = &psi[k1 * d..(k1 + 1) * d];
        // I ⊗ b
        for (k2, &v) in row.iter().enumerate() {
            if v == C64::default() {
                continue;
            }
            for k2p in 0..d {
                out[k1 * d + k2p] += b[(k2p, k2)] * v;
            }
        }
        // a ⊗ I
        for k1p in 0..d {
            let coeff = a[(k1p, k1)];
            if coeff == C64::default() {
                continue;
            }
            for k2 in 0..d {
                out[k1p * d + k2] += coeff * row[k2];
            }
        }
    }
    out
}

/// `out = x · (a ⊗ b)†` for a column-major `d² × d²` matrix `x`.
///
/// Column index `j1 * d + j2` splits into two mode products: `b†` acts on
/// `j2` inside each contiguous block of `d` columns, then `a†` acts on `j1`
/// across blocks.
fn right_multiply_adjoint(
    x: &[C64],
    a_adj: &DMatrix<C64>,
    b_adj: &DMatrix<C64>,
    tmp: &mut [C64],
    out: &mut [C64],
) {
    let d = a_adj.nrows();
    let dim = d * d;
    assert!(x.len() == dim * dim && tmp.len() == x.len() && out.len() == x.len());
    let one = [1.0, 0.0];
    let zero = [0.0, 0.0];
    let cast = |p: *const C64| p as *const [f64; 2];
    // SAFETY: `Complex<f64>` is `repr(C)` with layout `[f64; 2]`. Every block
    // addressed below lies inside the asserted buffers: the blocks start at
    // `dim * d * j1` (resp. `dim * j2`) and span rows `0..dim` and `d` columns
    // with the column strides used.
    unsafe {
        for j1 in 0..d {
            let off = dim * d * j1;
            matrixmultiply::zgemm(
                matrixmultiply::CGemmOption::Standard,
                matrixmultiply::CGemmOption::Standard,
                dim,
                d,
                d,
                one,
                cast(x.as_ptr().add(off)),
                1,
                dim as isize,
                cast(b_adj.as_ptr()),
                1,
                d as isize,
                zero,
                tmp.as_mut_ptr().add(off) as *mut [f64; 2],
                1,
                dim as isize,
            );
        }
        let stride = (dim * d) as isize;
        for j2 in 0..d {
            let off = dim * j2;
            matrixmultiply::zgemm(
                matrixmultiply::CGemmOption::Standard,
                matrixmultiply::CGemmOption::Standard,
                dim,
                d,
                d,
                one,
                cast(tmp.as_ptr().add(off)),
                1,
                stride,
                cast(a_adj.as_ptr()),
                1,
                d as isize,
                zero,
                out.as_mut_ptr().add(off) as *mut [f64; 2],
                1,
                stride,
            );
        }
    }
}

/// Replace `rho` with `(a ⊗ b) rho (a ⊗ b)†`, re-symmetrizing the result.
pub fn conjugate_product(rho: &mut DMatrix<C64>, a: &DMatrix<C64>, b: &DMatrix<C64>) {
    let a_adj = a.adjoint();
    let b_adj = b.adjoint();
    let mut tmp = vec![C64::default(); rho.len()];
    let mut w = DMatrix::<C64>::zeros(rho.nrows(), rho.ncols());
    // w = rho U†, then U w = (w† U†)†
    right_multiply_adjoint(rho.as_slice(), &a_adj, &b_adj, &mut tmp, w.as_mut_slice());
    w.adjoint_mut();
    right_multiply_adjoint(w.as_slice(), &a_adj, &b_adj, &mut tmp, rho.as_mut_slice());
    rho.adjoint_mut();
    hermitize(rho);
}

/// `Tr[(a ⊗ b) rho]` for a joint density matrix.
pub fn product_expectation(rho: &DMatrix<C64>, a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    let d = a.nrows();
    let mut acc = C64::default();
    // Σ a[i1, j1] b[i2, j2] rho[(j1, j2), (i1, i2)]
    for i1 in 0..d {
        for j1 in 0..d {
            let aij = a[(i1, j1)];
            if aij == C64::default() {
                continue;
            }
            for i2 in 0..d {
                let col = i1 * d + i2;
                let mut inner = C64::default();
                for j2 in 0..d {
                    inner += b[(i2, j2)] * rho[(j1 * d + j2, col)];
                }
                acc += aij * inner;
            }
        }
    }
    acc
}

/// Overwrite `m` with `(m + m†) / 2`.
pub fn hermitize(m: &mut DMatrix<C64>) {
    let n = m.nrows();
    for j in 0..n {
        m[(j, j)].im = 0.0;
        for i in 0..j {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Reduced density matrix of ensemble 1 for a joint vector.
pub fn reduce_pure_first(psi: &[C64], d: usize) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let mut acc = C64::default();
            for c in 0..d {
                acc += psi[a * d + c] * psi[b * d + c].conj();
            }
            out[(a, b)] = acc;
        }
    }
    out
}

/// Reduced density matrix of ensemble 2 for a joint vector.
pub fn reduce_pure_second(psi: &[C64], d: usize) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let mut acc = C64::default();
            for c in 0..d {
                acc += psi[c * d + a] * psi[c * d + b].conj();
            }
            out[(a, b)] = acc;
        }
    }
    out
}

/// `rho1[a, b] = sum_c rho[(a, c), (b, c)]`.
pub fn reduce_mixed_first(rho: &DMatrix<C64>, d: usize) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let mut acc = C64::default();
            for c in 0..d {
                acc += rho[(a * d + c, b * d + c)];
            }
            out[(a, b)] = acc;
        }
    }
    out
}

/// `rho2[a, b] = sum_c rho[(c, a), (c, b)]`.
pub fn reduce_mixed_second(rho: &DMatrix<C64>, d: usize) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let mut acc = C64::default();
            for c in 0..d {
                acc += rho[(c * d + a, c * d + b)];
            }
            out[(a, b)] = acc;
        }
    }
    out
}
