//! Sylvester inertia of `H - σI` through a banded LDLᵀ factorization.

use crate::lattice::SparseOperator;

/// Number of eigenvalues of `op` strictly below `sigma`, counted with
/// multiplicity.
///
/// Factorizes `op - σI = L D Lᵀ` inside the band (no pivoting) and counts
/// negative pivots. An exactly vanishing pivot is replaced by a tiny
/// positive value, so an eigenvalue equal to `sigma` is not counted.
/// Cost is `O(N b²)` time and `O(N b)` memory for half-bandwidth `b`.
pub fn count_below(op: &SparseOperator, sigma: f64) -> usize {
    let n = op.dim();
    let b = op.half_bandwidth();
    let (lo, hi) = op.spectral_enclosure();
    let tiny = f64::EPSILON * (lo - sigma).abs().max((hi - sigma).abs()).max(1.0);
    if b == 0 {
        return op.diagonal().iter().filter(|&&v| v - sigma < 0.0).count();
    }
    // row i stores L[i, i-b+t] at l[i*b + t]
    let mut l = vec![0.0f64; n * b];
    let mut pivots = vec![0.0f64; n];
    // w[t] = L[i, i-b+t] * D[i-b+t] for the current row
    let mut w = vec![0.0f64; b];
    let mut negative = 0usize;
    for i in 0..n {
        let (done, rest) = l.split_at_mut(i * b);
        let row = &mut rest[..b];
        row.fill(0.0);
        let mut diag = 0.0;
        for (j, v) in op.row(i) {
            if j < i {
                row[j + b - i] = v;
            } else if j == i {
                diag = v - sigma;
            }
        }
        let start = i.saturating_sub(b);
        for j in start..i {
            let t = j + b - i;
            let k0 = start.max(j.saturating_sub(b));
            let wi = &w[k0 + b - i..t];
            let lj = &done[j * b + (k0 + b - j)..(j + 1) * b];
            let wij = row[t] - dot(wi, lj);
            w[t] = wij;
            row[t] = wij / pivots[j];
        }
        let t0 = start + b - i;
        diag -= dot(&w[t0..], &row[t0..]);
        if diag.abs() < tiny {
            diag = tiny;
        }
        if diag < 0.0 {
            negative += 1;
        }
        pivots[i] = diag;
    }
    negative
}

/// Number of eigenvalues in the half-open interval `[a, b)`.
pub fn count_between(op: &SparseOperator, a: f64, b: f64) -> usize {
    if b <= a {
        return 0;
    }
    count_below(op, b).saturating_sub(count_below(op, a))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for r in 0..4 {
            acc[r] += a[4 * c + r] * b[4 * c + r];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}
