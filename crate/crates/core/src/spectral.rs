//! Eigenvalues and singular values of truncations, weak quasinorms,
//! Dixmier partial sums, and the Connes and Cwikel operators.

use std::io::Write;

use faer::{c64, Mat, Side};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::banded::count_below;
use crate::error::{Error, Result};
use crate::lattice::{Boundary, Grid, PotentialField, SparseOperator};

/// Default row cap for dense eigen/singular value decompositions.
pub const DEFAULT_DENSE_CAP: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub dense_cap: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

impl SpectralConfig {
    pub(crate) fn check(&self, rows: usize) -> Result<()> {
        if rows > self.dense_cap {
            Err(Error::DenseCap {
                rows,
                cap: self.dense_cap,
            })
        } else {
            Ok(())
        }
    }
}

/// Sorted eigenvalues of `op`, optionally restricted to the window `[a, b)`.
///
/// Without a window the dense path is used and `N ≤ dense_cap` is required.
/// With a window and `N > dense_cap`, eigenvalues are located by bisection
/// on LDLᵀ inertia counts to an absolute accuracy of about `1e-12·‖H‖`.
pub fn dirichlet_eigenvalues(
    op: &SparseOperator,
    window: Option<(f64, f64)>,
    cfg: &SpectralConfig,
) -> Result<Vec<f64>> {
    let (lo, hi) = op.spectral_enclosure();
    if let Some((a, b)) = window {
        if b <= a || b < lo || a > hi {
            return Ok(Vec::new());
        }
    }
    if op.dim() <= cfg.dense_cap {
        let eigs = op
            .to_dense()
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::LinAlg(format!("{e:?}")))?;
        return Ok(match window {
            Some((a, b)) => eigs.into_iter().filter(|&e| e >= a && e < b).collect(),
            None => eigs,
        });
    }
    let Some((a, b)) = window else {
        return Err(Error::DenseCap {
            rows: op.dim(),
            cap: cfg.dense_cap,
        });
    };
    // clamp the window to the enclosure (inclusive of hi)
    let a = a.max(lo);
    let b = b.min(hi + 1e-9 * hi.abs().max(1.0));
    let tol = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
    let mut out = Vec::new();
    let ca = count_below(op, a);
    let cb = count_below(op, b);
    bisect(op, a, b, ca, cb, tol, &mut out);
    Ok(out)
}

fn bisect(
    op: &SparseOperator,
    a: f64,
    b: f64,
    ca: usize,
    cb: usize,
    tol: f64,
    out: &mut Vec<f64>,
) {
    if cb <= ca {
        return;
    }
    if b - a <= tol {
        let mid = 0.5 * (a + b);
        out.extend(std::iter::repeat(mid).take(cb - ca));
        return;
    }
    let mid = 0.5 * (a + b);
    let cm = count_below(op, mid);
    bisect(op, a, mid, ca, cm, tol, out);
    bisect(op, mid, b, cm, cb, tol, out);
}

/// Number of entries of a sorted list in `[a, b)`.
pub fn count_in_interval(eigs: &[f64], a: f64, b: f64) -> usize {
    if b <= a {
        return 0;
    }
    let lo = eigs.partition_point(|&e| e < a);
    let hi = eigs.partition_point(|&e| e < b);
    hi - lo
}

/// Number of eigenvalues of `op` in `[a, b)` by matrix inertia.
pub fn inertia_count(op: &SparseOperator, a: f64, b: f64) -> usize {
    crate::banded::count_between(op, a, b)
}

/// Non-increasing list of singular values `μ(0) ≥ μ(1) ≥ … ≥ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularValueList {
    values: Vec<f64>,
    source_dim: usize,
}

impl SingularValueList {
    /// Takes absolute values and sorts non-increasingly.
    pub fn new(mut values: Vec<f64>, source_dim: usize) -> Self {
        for v in values.iter_mut() {
            *v = v.abs();
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Self { values, source_dim }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| alpha * v).collect(),
            source_dim: self.source_dim,
        }
    }

    /// CSV with columns `k,mu`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "mu"])?;
        for (k, mu) in self.values.iter().enumerate() {
            w.write_record([k.to_string(), format_real(*mu)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fixed textual form for reals in CSV exports.
pub(crate) fn format_real(v: f64) -> String {
    format!("{v:.15e}")
}

/// Singular values of a dense real matrix.
pub fn singular_values(m: &Mat<f64>, cfg: &SpectralConfig) -> Result<SingularValueList> {
    cfg.check(m.nrows().max(m.ncols()))?;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(SingularValueList::new(Vec::new(), 0));
    }
    let s = m
        .singular_values()
        .map_err(|e| Error::LinAlg(format!("{e:?}")))?;
    Ok(SingularValueList::new(s, m.nrows()))
}

fn complex_singular_values(m: &Mat<c64>) -> Result<Vec<f64>> {
    m.singular_values()
        .map_err(|e| Error::LinAlg(format!("{e:?}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakQuasinorm {
    pub value: f64,
    pub argmax: usize,
}

/// `sup_k (k+1)^{1/p} μ(k)` over the available `k`, with its maximizer.
pub fn weak_quasinorm(sv: &SingularValueList, p: f64) -> Result<WeakQuasinorm> {
    if !(p > 0.0) {
        return Err(Error::InvalidArgument(format!("quasinorm order p = {p} must be > 0")));
    }
    let mut best = WeakQuasinorm {
        value: 0.0,
        argmax: 0,
    };
    for (k, &mu) in sv.values().iter().enumerate() {
        let v = ((k + 1) as f64).powf(1.0 / p) * mu;
        if v > best.value {
            best = WeakQuasinorm { value: v, argmax: k };
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Decreasing,
    Constant,
    Mixed,
}

impl Trend {
    pub fn of(values: &[f64]) -> Self {
        let up = values.windows(2).all(|w| w[1] >= w[0]);
        let down = values.windows(2).all(|w| w[1] <= w[0]);
        match (up, down) {
            (true, true) => Trend::Constant,
            (true, false) => Trend::Increasing,
            (false, true) => Trend::Decreasing,
            (false, false) => Trend::Mixed,
        }
    }

    pub fn is_monotone(self) -> bool {
        self != Trend::Mixed
    }
}

/// Dixmier partial sums `Σ_{k≤N} μ(k) / log(2+N)` on a grid of `N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialSumTrace {
    pub n_grid: Vec<usize>,
    pub sums: Vec<f64>,
    /// Two-point Richardson extrapolation in `1/log(2+N)` from the last
    /// two grid points (the last sum if only one is available).
    pub limit_estimate: f64,
    pub trend: Trend,
    /// Set when part of the requested grid exceeded the list length.
    pub truncated: bool,
}

impl PartialSumTrace {
    /// CSV with columns `N,sum`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["N", "sum"])?;
        for (n, s) in self.n_grid.iter().zip(&self.sums) {
            w.write_record([n.to_string(), format_real(*s)])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn dixmier_partial_sums(sv: &SingularValueList, n_grid: &[usize]) -> PartialSumTrace {
    let mu = sv.values();
    let mut grid: Vec<usize> = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let before = grid.len();
    grid.retain(|&n| n < mu.len());
    let truncated = grid.len() < before;
    let mut sums = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    let mut next = 0usize;
    for &n in &grid {
        while next <= n {
            acc += mu[next];
            next += 1;
        }
        sums.push(acc / (2.0 + n as f64).ln());
    }
    let limit_estimate = match sums.len() {
        0 => 0.0,
        1 => sums[0],
        m => {
            let u1 = 1.0 / (2.0 + grid[m - 2] as f64).ln();
            let u2 = 1.0 / (2.0 + grid[m - 1] as f64).ln();
            (sums[m - 1] * u1 - sums[m - 2] * u2) / (u1 - u2)
        }
    };
    PartialSumTrace {
        trend: Trend::of(&sums),
        n_grid: grid,
        sums,
        limit_estimate,
        truncated,
    }
}

/// Symbol used for `-Δ` on the torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianSymbol {
    /// `Σ_i (4/h²) sin²(k_i h/2)`, the symbol of the lattice stencil.
    #[default]
    FiniteDifference,
    /// `|k|²` on the lattice Brillouin zone.
    Spectral,
}

/// Fourier multiplier values `(1 + λ(k))^{-d/2}` on the frequency grid,
/// in the grid's flat index order (frequency index `m` per axis, `m` and
/// `m - n` identified).
pub fn torus_multiplier(grid: &Grid, symbol: LaplacianSymbol) -> Vec<f64> {
    let n = grid.points_per_axis();
    let d = grid.dim();
    let h = grid.spacing();
    let period = n as f64 * h;
    let axis_symbol: Vec<f64> = (0..n)
        .map(|m| {
            let signed = if m < n.div_ceil(2) { m as f64 } else { m as f64 - n as f64 };
            let k = 2.0 * std::f64::consts::PI * signed / period;
            match symbol {
                LaplacianSymbol::FiniteDifference => {
                    let s = (0.5 * k * h).sin();
                    4.0 / (h * h) * s * s
                }
                LaplacianSymbol::Spectral => k * k,
            }
        })
        .collect();
    (0..grid.len())
        .map(|i| {
            let m = grid.multi_index(i);
            let lambda: f64 = (0..d).map(|a| axis_symbol[m[a]]).sum();
            (1.0 + lambda).powf(-(d as f64) / 2.0)
        })
        .collect()
}

/// In-place d-dimensional FFT over a cube of side `n`.
fn fft_nd(data: &mut [Complex64], n: usize, d: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let block = stride * n;
        for base in (0..data.len()).step_by(block) {
            for off in 0..stride {
                for (k, v) in line.iter_mut().enumerate() {
                    *v = data[base + off + k * stride];
                }
                fft.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    data[base + off + k * stride] = *v;
                }
            }
        }
    }
}

/// Dense matrix of `M_f (1 - Δ)^{-d/2}` on a periodic grid.
///
/// The multiplier is diagonal in the discrete Fourier basis, so
/// `(1-Δ)^{-d/2}` is the circulant convolution with the inverse transform
/// of the multiplier; one FFT gives the whole kernel.
pub fn connes_operator(
    f: &PotentialField,
    symbol: LaplacianSymbol,
    cfg: &SpectralConfig,
) -> Result<Mat<f64>> {
    let grid = f.grid();
    if grid.boundary() != Boundary::Periodic {
        return Err(Error::InvalidGrid(
            "the Connes operator needs a periodic grid (Fourier multiplier on the torus)".into(),
        ));
    }
    let len = grid.len();
    cfg.check(len)?;
    let n = grid.points_per_axis();
    let d = grid.dim();
    let mut kernel: Vec<Complex64> = torus_multiplier(grid, symbol)
        .into_iter()
        .map(|v| Complex64::new(v, 0.0))
        .collect();
    fft_nd(&mut kernel, n, d, true);
    let kernel: Vec<f64> = kernel.iter().map(|c| c.re / len as f64).collect();
    let values = f.values();
    let multi: Vec<[usize; 3]> = (0..len).map(|i| grid.multi_index(i)).collect();
    Ok(Mat::from_fn(len, len, |i, j| {
        if values[i] == 0.0 {
            return 0.0;
        }
        let (mi, mj) = (&multi[i], &multi[j]);
        let mut flat = 0usize;
        for a in 0..d {
            flat = flat * n + (mi[a] + n - mj[a]) % n;
        }
        values[i] * kernel[flat]
    }))
}

/// One row of a Cwikel table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CwikelRow {
    pub half_width: f64,
    pub matrix_dim: usize,
    pub quasinorm: f64,
    pub argmax: usize,
    /// `(q_i/q_{i-1})^{1/log2(L_i/L_{i-1})}` for rows after the first.
    pub growth_per_doubling: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CwikelTable {
    pub p: u32,
    pub dim: usize,
    /// Quasinorm order `d/p`.
    pub order: f64,
    pub z: (f64, f64),
    pub rows: Vec<CwikelRow>,
}

impl CwikelTable {
    pub fn max_growth(&self) -> f64 {
        self.rows
            .iter()
            .filter_map(|r| r.growth_per_doubling)
            .fold(0.0, f64::max)
    }
}

/// Minimal CSR matrix for products of banded operators.
#[derive(Clone, Debug)]
struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_operator(op: &SparseOperator, shift: f64) -> Self {
        let n = op.dim();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for i in 0..n {
            for (j, v) in op.row(i) {
                cols.push(j);
                vals.push(if i == j { v + shift } else { v });
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    /// `self * other + c·I`
    fn mul_plus_identity(&self, other: &Csr, c: f64) -> Csr {
        let n = self.n;
        let mut acc = vec![0.0f64; n];
        let mut mark = vec![false; n];
        let mut touched = Vec::new();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for i in 0..n {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if !mark[j] {
                        mark[j] = true;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            if c != 0.0 && !mark[i] {
                mark[i] = true;
                touched.push(i);
            }
            acc[i] += c;
            touched.sort_unstable();
            for &j in &touched {
                cols.push(j);
                vals.push(acc[j]);
                acc[j] = 0.0;
                mark[j] = false;
            }
            acc[i] = 0.0;
            touched.clear();
            row_ptr.push(cols.len());
        }
        Csr {
            n,
            row_ptr,
            cols,
            vals,
        }
    }
}

fn japanese_bracket(grid: &Grid, i: usize) -> f64 {
    let r = grid.radius(i);
    (1.0 + r * r).sqrt()
}

fn check_shift(z: (f64, f64)) -> Result<()> {
    if z.1 == 0.0 {
        return Err(Error::InvalidArgument(
            "complex shift z must have nonzero imaginary part".into(),
        ));
    }
    Ok(())
}

/// Singular values of `(H + z)^{-p} ⟨x⟩^{-p}` via the Gram route.
///
/// For real symmetric `H`, `T*T` has inverse
/// `B = ⟨x⟩^p ((H + Re z)² + (Im z)²)^p ⟨x⟩^p`, a sparse banded matrix, so
/// `μ_k(T) = λ_k(B)^{-1/2}` with the eigenvalues of `B` ascending.
pub fn cwikel_singular_values(
    op: &SparseOperator,
    p: u32,
    z: (f64, f64),
    cfg: &SpectralConfig,
) -> Result<SingularValueList> {
    check_shift(z)?;
    let n = op.dim();
    cfg.check(n)?;
    let shifted = Csr::from_operator(op, z.0);
    let g = shifted.mul_plus_identity(&shifted, z.1 * z.1);
    let mut power = Csr::identity(n);
    for _ in 0..p {
        power = power.mul_plus_identity(&g, 0.0);
    }
    let grid = op.grid();
    let weight: Vec<f64> = (0..n)
        .map(|i| japanese_bracket(grid, i).powi(p as i32))
        .collect();
    let mut b = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        for (j, v) in power.row(i) {
            b[(i, j)] = weight[i] * v * weight[j];
        }
    }
    let eigs = b
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::LinAlg(format!("{e:?}")))?;
    let mu = eigs.iter().map(|&l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt()).collect();
    Ok(SingularValueList::new(mu, n))
}

/// Same singular values through the eigendecomposition of `H` and a complex
/// dense SVD; slower, used as an oracle on small truncations.
pub fn cwikel_singular_values_dense(
    op: &SparseOperator,
    p: u32,
    z: (f64, f64),
    cfg: &SpectralConfig,
) -> Result<SingularValueList> {
    check_shift(z)?;
    let n = op.dim();
    cfg.check(n)?;
    let evd = op
        .to_dense()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinAlg(format!("{e:?}")))?;
    let u = evd.U();
    let lambda = evd.S().column_vector();
    let zc = c64::new(z.0, z.1);
    let resolvent: Vec<c64> = (0..n)
        .map(|k| {
            let base = c64::new(lambda[k], 0.0) + zc;
            let mut acc = c64::new(1.0, 0.0);
            for _ in 0..p {
                acc /= base;
            }
            acc
        })
        .collect();
    let grid = op.grid();
    let weight: Vec<f64> = (0..n)
        .map(|i| japanese_bracket(grid, i).powi(-(p as i32)))
        .collect();
    // (U diag(r) Uᵀ)_{ij} w_j
    let scaled = Mat::<c64>::from_fn(n, n, |i, k| resolvent[k] * u[(i, k)]);
    let ut = Mat::<c64>::from_fn(n, n, |k, j| c64::new(u[(j, k)] * weight[j], 0.0));
    let t = &scaled * &ut;
    Ok(SingularValueList::new(complex_singular_values(&t)?, n))
}

/// Weak quasinorms `‖(H+z)^{-p}⟨x⟩^{-p}‖_{d/p,∞}` for a family of
/// truncations of increasing half-width.
pub fn cwikel_table(
    ops: &[SparseOperator],
    p: u32,
    z: (f64, f64),
    cfg: &SpectralConfig,
) -> Result<CwikelTable> {
    check_shift(z)?;
    if p == 0 {
        return Err(Error::InvalidArgument("p must be a positive integer".into()));
    }
    let dim = ops.first().map(|o| o.grid().dim()).unwrap_or(0);
    let order = dim as f64 / p as f64;
    let mut rows: Vec<CwikelRow> = Vec::with_capacity(ops.len());
    for op in ops {
        if op.grid().dim() != dim {
            return Err(Error::GridMismatch("Cwikel family mixes dimensions".into()));
        }
        let sv = cwikel_singular_values(op, p, z, cfg)?;
        let q = weak_quasinorm(&sv, order)?;
        let growth = rows.last().map(|prev| {
            let doublings = (op.grid().half_width() / prev.half_width).log2();
            (q.value / prev.quasinorm).powf(1.0 / doublings)
        });
        rows.push(CwikelRow {
            half_width: op.grid().half_width(),
            matrix_dim: op.dim(),
            quasinorm: q.value,
            argmax: q.argmax,
            growth_per_doubling: growth,
        });
    }
    Ok(CwikelTable {
        p,
        dim,
        order,
        z,
        rows,
    })
}
