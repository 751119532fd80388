//! Heat semigroup `e^{-sH}` by Chebyshev expansion, kernel diagonals and
//! weighted traces.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Boundary, Grid, SparseOperator};
use crate::spectral::format_real;

/// Hard cap on the Chebyshev truncation order.
pub const MAX_CHEBYSHEV_ORDER: usize = 4096;

/// Default uniform tolerance of the scalar approximation.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Smallest time for which lattice heat quantities are compared with the
/// continuum: `10 h²`.
pub fn s_min(spacing: f64) -> f64 {
    10.0 * spacing * spacing
}

/// Width `6√s` of the boundary layer excluded from bulk statistics.
pub fn boundary_layer(s: f64) -> f64 {
    6.0 * s.sqrt()
}

/// Lattice points farther than `6√s` from the boundary of the cube (all
/// points on a periodic grid).
pub fn bulk_mask(grid: &Grid, s: f64) -> Vec<bool> {
    if grid.boundary() == Boundary::Periodic {
        return vec![true; grid.len()];
    }
    let layer = boundary_layer(s);
    (0..grid.len())
        .map(|i| grid.distance_to_boundary(i) > layer)
        .collect()
}

/// Truncated Chebyshev series of `t ↦ e^{-st}` on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevSeries {
    pub s: f64,
    pub lo: f64,
    pub hi: f64,
    pub coeffs: Vec<f64>,
    /// Largest error found at the certification sample points.
    pub certified_error: f64,
}

impl ChebyshevSeries {
    /// Build and certify the series to absolute accuracy `tol` on `[lo, hi]`.
    pub fn new(s: f64, lo: f64, hi: f64, tol: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!("heat time s = {s} must be > 0")));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance {tol} must be > 0")));
        }
        if !(hi > lo) {
            return Err(Error::InvalidArgument(format!("empty enclosure [{lo}, {hi}]")));
        }
        let w = 0.5 * (hi - lo);
        let prefactor = (-s * lo).exp();
        // |a_k| ≈ 2 e^{-s lo} e^{-k²/(2sw)} for k ≪ sw: reject hopeless
        // cases before running the recurrence
        let log_ratio = (10.0 * prefactor / tol).ln();
        let cap = MAX_CHEBYSHEV_ORDER as f64;
        if log_ratio > 0.0 && s * w > cap * cap / (2.0 * log_ratio) {
            return Err(Error::OrderCap {
                order: (2.0 * s * w * log_ratio).sqrt().ceil() as usize,
                cap: MAX_CHEBYSHEV_ORDER,
                spread: s * (hi - lo),
                suggested_tol: 10.0 * prefactor * (-cap * cap / (2.0 * s * w)).exp(),
            });
        }
        // with c the centre, e^{-s(c + w x)} = e^{-sc} [I_0(sw) + 2 Σ_k (-1)^k I_k(sw) T_k(x)]
        // and e^{-sc} I_k(sw) = e^{-s lo} e^{-sw} I_k(sw)
        let scaled = scaled_bessel_i(s * w);
        let all: Vec<f64> = scaled
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let two = if k == 0 { 1.0 } else { 2.0 };
                two * sign * prefactor * b
            })
            .collect();
        let order = truncation_order(&all, tol / 10.0);
        if order > MAX_CHEBYSHEV_ORDER {
            let tail: f64 = all[MAX_CHEBYSHEV_ORDER + 1..].iter().map(|a| a.abs()).sum();
            return Err(Error::OrderCap {
                order,
                cap: MAX_CHEBYSHEV_ORDER,
                spread: s * (hi - lo),
                suggested_tol: 10.0 * tail,
            });
        }
        let mut series = Self {
            s,
            lo,
            hi,
            coeffs: all[..=order].to_vec(),
            certified_error: 0.0,
        };
        series.certified_error = series.max_sampled_error(10 * (order + 1));
        if series.certified_error > tol {
            return Err(Error::LinAlg(format!(
                "Chebyshev certification failed: sampled error {:.3e} > tol {tol:.3e} \
                 (roundoff floor of e^(-s*lo) = {prefactor:.3e})",
                series.certified_error
            )));
        }
        Ok(series)
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    fn centre_width(&self) -> (f64, f64) {
        (0.5 * (self.hi + self.lo), 0.5 * (self.hi - self.lo))
    }

    /// Clenshaw evaluation at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let (c, w) = self.centre_width();
        let x = (t - c) / w;
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for &a in self.coeffs.iter().skip(1).rev() {
            let b0 = a + 2.0 * x * b1 - b2;
            b2 = b1;
            b1 = b0;
        }
        self.coeffs[0] + x * b1 - b2
    }

    /// Largest `|series - e^{-st}|` over `samples` equispaced points.
    pub fn max_sampled_error(&self, samples: usize) -> f64 {
        let samples = samples.max(2);
        (0..samples)
            .map(|j| {
                let t = self.lo + (self.hi - self.lo) * j as f64 / (samples - 1) as f64;
                (self.eval(t) - (-self.s * t).exp()).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// `e^{-x} I_k(x)` for `k = 0..K`, with `K` past the point where the terms
/// drop below `1e-18`, by Miller's backward recurrence normalized with
/// `I_0 + 2 Σ I_k = e^x`.
fn scaled_bessel_i(x: f64) -> Vec<f64> {
    if x == 0.0 {
        return vec![1.0];
    }
    let top = (x + 12.0 * x.sqrt() + 60.0).ceil() as usize;
    let mut vals = vec![0.0f64; top + 2];
    vals[top] = 1e-300;
    for k in (1..=top).rev() {
        vals[k - 1] = 2.0 * k as f64 / x * vals[k] + vals[k + 1];
        if vals[k - 1] > 1e250 {
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let norm = vals[0] + 2.0 * vals[1..].iter().sum::<f64>();
    vals.truncate(top + 1);
    vals.iter_mut().for_each(|v| *v /= norm);
    vals
}

/// Smallest `K` with `Σ_{k>K} |a_k| < bound`.
fn truncation_order(coeffs: &[f64], bound: f64) -> usize {
    let mut tail = 0.0;
    for k in (0..coeffs.len()).rev() {
        if tail + coeffs[k].abs() >= bound {
            return k;
        }
        tail += coeffs[k].abs();
    }
    0
}

/// `e^{-sH}` for a fixed operator and time, as a certified Chebyshev series.
#[derive(Clone, Debug)]
pub struct HeatPropagator<'a> {
    op: &'a SparseOperator,
    s: f64,
    tol: f64,
    /// `None` for `s = 0` (identity).
    series: Option<ChebyshevSeries>,
}

/// Build the propagator; `s = 0` gives the identity.
pub fn build_propagator(op: &SparseOperator, s: f64, tol: f64) -> Result<HeatPropagator<'_>> {
    if s == 0.0 {
        return Ok(HeatPropagator {
            op,
            s,
            tol,
            series: None,
        });
    }
    let (lo, hi) = op.spectral_enclosure();
    // degenerate enclosure (1x1 operators): widen slightly
    let hi = if hi > lo { hi } else { lo + 1.0 };
    Ok(HeatPropagator {
        op,
        s,
        tol,
        series: Some(ChebyshevSeries::new(s, lo, hi, tol)?),
    })
}

impl<'a> HeatPropagator<'a> {
    pub fn op(&self) -> &'a SparseOperator {
        self.op
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn series(&self) -> Option<&ChebyshevSeries> {
        self.series.as_ref()
    }

    pub fn order(&self) -> usize {
        self.series.as_ref().map_or(0, |c| c.order())
    }

    /// `y ≈ e^{-sH} v` with `‖y - e^{-sH}v‖ ≤ tol·‖v‖`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(apply_heat_batch(std::slice::from_ref(self), v)?.remove(0))
    }
}

pub fn apply_heat(prop: &HeatPropagator<'_>, v: &[f64]) -> Result<Vec<f64>> {
    prop.apply(v)
}

/// Apply several propagators of the same operator to `v`, sharing one
/// Chebyshev recurrence (run to the largest order).
pub fn apply_heat_batch(props: &[HeatPropagator<'_>], v: &[f64]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = props.first() else {
        return Ok(Vec::new());
    };
    let op = first.op;
    let n = op.dim();
    if v.len() != n {
        return Err(Error::GridMismatch(format!(
            "vector of length {} applied to an operator of size {n}",
            v.len()
        )));
    }
    if props.iter().any(|p| !std::ptr::eq(p.op, op)) {
        return Err(Error::InvalidArgument(
            "batched propagators must share one operator".into(),
        ));
    }
    let mut out: Vec<Vec<f64>> = props
        .iter()
        .map(|p| match &p.series {
            None => v.to_vec(),
            Some(c) => v.iter().map(|x| c.coeffs[0] * x).collect(),
        })
        .collect();
    let active: Vec<(usize, &ChebyshevSeries)> = props
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.series.as_ref().map(|c| (i, c)))
        .collect();
    let Some(max_order) = active.iter().map(|(_, c)| c.order()).max() else {
        return Ok(out);
    };
    if max_order == 0 {
        return Ok(out);
    }
    // all active series live on the operator's enclosure
    let (c, w) = active[0].1.centre_width();
    let inv_w = 1.0 / w;
    let mut t_prev = v.to_vec();
    let mut t_cur = vec![0.0; n];
    let mut hv = vec![0.0; n];
    op.matvec(&t_prev, &mut hv);
    for i in 0..n {
        t_cur[i] = (hv[i] - c * t_prev[i]) * inv_w;
    }
    accumulate(&mut out, &active, 1, &t_cur);
    for k in 2..=max_order {
        op.matvec(&t_cur, &mut hv);
        for i in 0..n {
            t_prev[i] = 2.0 * (hv[i] - c * t_cur[i]) * inv_w - t_prev[i];
        }
        std::mem::swap(&mut t_prev, &mut t_cur);
        accumulate(&mut out, &active, k, &t_cur);
    }
    Ok(out)
}

fn accumulate(out: &mut [Vec<f64>], active: &[(usize, &ChebyshevSeries)], k: usize, t: &[f64]) {
    for &(slot, series) in active {
        if let Some(&a) = series.coeffs.get(k) {
            for (y, x) in out[slot].iter_mut().zip(t) {
                *y += a * x;
            }
        }
    }
}

/// How the kernel diagonal is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DiagonalMode {
    /// One propagator column per requested point (all points when `points`
    /// is `None`), subject to the column budget.
    Exact { points: Option<Vec<usize>> },
    /// Hutchinson estimator with ±1 probes.
    Stochastic { probes: usize, seed: u64 },
    /// Coloring probes: lattice points congruent modulo `D` along every axis
    /// share a probe, with `D·h ≥ √(4 s ln(1/ε)) + 2h` so that the neglected
    /// off-diagonal kernel entries are below `ε` relative to the diagonal.
    Probing { epsilon: f64 },
}

/// Default cap on the number of propagator columns in exact mode.
pub const DEFAULT_COLUMN_BUDGET: usize = 20_000;

/// Continuum kernel diagonal `K_{s,V}(x,x)` estimated on lattice points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalField {
    pub s: f64,
    pub tol: f64,
    pub mode: DiagonalMode,
    /// Lattice points carrying an estimate, ascending.
    pub points: Vec<usize>,
    /// `(e^{-sH})_{xx} / h^d` at `points`.
    pub values: Vec<f64>,
    /// Per-point standard error (stochastic mode only).
    pub stderr: Option<Vec<f64>>,
    #[serde(skip)]
    grid: Option<Grid>,
}

impl DiagonalField {
    pub fn grid(&self) -> &Grid {
        self.grid.as_ref().expect("diagonal field carries its grid")
    }

    /// Values on the full grid, if every point was estimated.
    pub fn full(&self) -> Option<&[f64]> {
        (self.points.len() == self.grid().len()).then_some(&self.values[..])
    }

    /// Mean over the estimated points satisfying `keep`.
    pub fn mean_where(&self, keep: impl Fn(usize) -> bool) -> Option<f64> {
        let (sum, count) = self
            .points
            .iter()
            .zip(&self.values)
            .filter(|(&p, _)| keep(p))
            .fold((0.0, 0usize), |(s, c), (_, &v)| (s + v, c + 1));
        (count > 0).then(|| sum / count as f64)
    }

    /// CSV with columns `x1..xd,value,stderr`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let grid = self.grid();
        let d = grid.dim();
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=d).map(|a| format!("x{a}")).collect();
        header.push("value".into());
        header.push("stderr".into());
        w.write_record(&header)?;
        for (k, (&p, &v)) in self.points.iter().zip(&self.values).enumerate() {
            let x = grid.position(p);
            let mut rec: Vec<String> = x[..d].iter().map(|c| format_real(*c)).collect();
            rec.push(format_real(v));
            rec.push(match &self.stderr {
                Some(e) => format_real(e[k]),
                None => String::new(),
            });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Kernel diagonal of one propagator.
pub fn heat_diagonal(prop: &HeatPropagator<'_>, mode: &DiagonalMode) -> Result<DiagonalField> {
    Ok(heat_diagonals(std::slice::from_ref(prop), mode, DEFAULT_COLUMN_BUDGET)?.remove(0))
}

/// Kernel diagonals of several propagators of one operator, sharing the
/// probe vectors and the Chebyshev recurrence.
pub fn heat_diagonals(
    props: &[HeatPropagator<'_>],
    mode: &DiagonalMode,
    column_budget: usize,
) -> Result<Vec<DiagonalField>> {
    let Some(first) = props.first() else {
        return Ok(Vec::new());
    };
    let op = first.op;
    let grid = op.grid();
    let n = op.dim();
    let inv_vol = 1.0 / grid.volume_element();
    let finish = |points: Vec<usize>, values: Vec<Vec<f64>>, stderr: Option<Vec<Vec<f64>>>| {
        let mut stderr = stderr.map(|e| e.into_iter());
        props
            .iter()
            .zip(values)
            .map(|(p, v)| DiagonalField {
                s: p.s,
                tol: p.tol,
                mode: mode.clone(),
                points: points.clone(),
                values: v,
                stderr: stderr.as_mut().and_then(|e| e.next()),
                grid: Some(grid.clone()),
            })
            .collect::<Vec<_>>()
    };
    match mode {
        DiagonalMode::Exact { points } => {
            let mut points = points.clone().unwrap_or_else(|| (0..n).collect());
            points.sort_unstable();
            points.dedup();
            if let Some(&bad) = points.iter().find(|&&p| p >= n) {
                return Err(Error::InvalidArgument(format!(
                    "diagonal point {bad} outside the grid of {n} points"
                )));
            }
            if points.len() > column_budget {
                return Err(Error::InvalidArgument(format!(
                    "exact diagonal needs {} propagator columns, budget is {column_budget}; \
                     use probing or stochastic mode or a point subset",
                    points.len()
                )));
            }
            let columns: Vec<Vec<f64>> = points
                .par_iter()
                .map(|&p| {
                    let mut e = vec![0.0; n];
                    e[p] = 1.0;
                    let cols = apply_heat_batch(props, &e)?;
                    Ok(cols.iter().map(|c| c[p] * inv_vol).collect())
                })
                .collect::<Result<_>>()?;
            let values = (0..props.len())
                .map(|k| columns.iter().map(|c| c[k]).collect())
                .collect();
            Ok(finish(points, values, None))
        }
        DiagonalMode::Stochastic { probes, seed } => {
            if *probes < 2 {
                return Err(Error::InvalidArgument(format!(
                    "stochastic diagonal needs at least 2 probes for a variance estimate, got {probes}"
                )));
            }
            let samples: Vec<Vec<Vec<f64>>> = (0..*probes)
                .into_par_iter()
                .map(|k| {
                    let z = sign_probe(*seed, k as u64, n);
                    let ys = apply_heat_batch(props, &z)?;
                    Ok(ys
                        .into_iter()
                        .map(|y| y.iter().zip(&z).map(|(a, b)| a * b * inv_vol).collect())
                        .collect())
                })
                .collect::<Result<_>>()?;
            let m = *probes as f64;
            let mut values = Vec::with_capacity(props.len());
            let mut errors = Vec::with_capacity(props.len());
            for slot in 0..props.len() {
                let mut mean = vec![0.0; n];
                for s in &samples {
                    for (acc, v) in mean.iter_mut().zip(&s[slot]) {
                        *acc += v;
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                let mut var = vec![0.0; n];
                for s in &samples {
                    for i in 0..n {
                        let dlt = s[slot][i] - mean[i];
                        var[i] += dlt * dlt;
                    }
                }
                errors.push(var.iter().map(|v| (v / (m - 1.0) / m).sqrt()).collect());
                values.push(mean);
            }
            Ok(finish((0..n).collect(), values, Some(errors)))
        }
        DiagonalMode::Probing { epsilon } => {
            if !(*epsilon > 0.0 && *epsilon < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "probing epsilon {epsilon} must lie in (0, 1)"
                )));
            }
            let s_max = props.iter().map(|p| p.s).fold(0.0, f64::max);
            let dist = probing_distance(grid, s_max, *epsilon);
            let d = grid.dim();
            let colors = dist.pow(d as u32);
            let per_color: Vec<Vec<Vec<f64>>> = (0..colors)
                .into_par_iter()
                .map(|color| {
                    let z: Vec<f64> = (0..n)
                        .map(|i| if color_of(grid, i, dist) == color { 1.0 } else { 0.0 })
                        .collect();
                    apply_heat_batch(props, &z)
                })
                .collect::<Result<_>>()?;
            let mut values = vec![vec![0.0; n]; props.len()];
            for i in 0..n {
                let color = color_of(grid, i, dist);
                for (slot, vals) in values.iter_mut().enumerate() {
                    vals[i] = per_color[color][slot][i] * inv_vol;
                }
            }
            Ok(finish((0..n).collect(), values, None))
        }
    }
}

/// Probe spacing `D` (in lattice steps) for the coloring probes. On a
/// periodic grid `D` divides the axis length so colors stay `D` apart
/// across the wrap.
pub fn probing_distance(grid: &Grid, s: f64, epsilon: f64) -> usize {
    let h = grid.spacing();
    let n = grid.points_per_axis();
    let reach = (4.0 * s * (1.0 / epsilon).ln()).sqrt() + 2.0 * h;
    let dist = ((reach / h).ceil() as usize).clamp(1, n);
    match grid.boundary() {
        Boundary::Periodic => (dist..=n).find(|k| n % k == 0).unwrap_or(n),
        Boundary::Dirichlet => dist,
    }
}

fn color_of(grid: &Grid, i: usize, dist: usize) -> usize {
    let m = grid.multi_index(i);
    (0..grid.dim()).fold(0, |acc, a| acc * dist + m[a] % dist)
}

/// ±1 probe vector number `k` from the counter-based stream keyed by `seed`.
pub fn sign_probe(seed: u64, k: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    (0..n)
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// Weighted trace `h^d Σ_x w(x) K(x,x)` with an aggregated standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// `∫ w(x) K_{s,V}(x,x) dx ≈ h^d Σ_x w(x)·diagonal(x)` over the points of
/// the field. `w` is indexed by lattice point.
pub fn weighted_heat_trace(field: &DiagonalField, w: &[f64]) -> Result<TraceEstimate> {
    let grid = field.grid();
    if w.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "weight has {} values, grid has {} points",
            w.len(),
            grid.len()
        )));
    }
    let vol = grid.volume_element();
    let mut value = 0.0;
    let mut var = 0.0;
    for (k, (&p, &v)) in field.points.iter().zip(&field.values).enumerate() {
        value += w[p] * v;
        if let Some(e) = &field.stderr {
            var += (w[p] * e[k]).powi(2);
        }
    }
    Ok(TraceEstimate {
        value: vol * value,
        stderr: vol * var.sqrt(),
    })
}

/// Weight `⟨x⟩^{-r} = (1 + |x|²)^{-r/2}` on the lattice.
pub fn bracket_weight(grid: &Grid, r: f64) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let rad = grid.radius(i);
            (1.0 + rad * rad).powf(-0.5 * r)
        })
        .collect()
}

/// Indicator of the open ball `|x| < radius`.
pub fn ball_indicator(grid: &Grid, radius: f64) -> Vec<f64> {
    (0..grid.len())
        .map(|i| if grid.radius(i) < radius { 1.0 } else { 0.0 })
        .collect()
}
