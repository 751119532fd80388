//! DOS estimates by eigenvalue counting, heat-kernel ball averages and the
//! weighted-trace residue, plus the comparisons between them.

use std::f64::consts::PI;
use std::io::Write;

use faer::Side;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_ur};

use crate::banded::count_below;
use crate::closedform::{closed_form_laplace, gauss_legendre, sphere_area, SphereQuadrature};
use crate::error::{Error, Result};
use crate::heat::{
    boundary_layer, build_propagator, bulk_mask, heat_diagonals, s_min, DiagonalField,
    DiagonalMode, DEFAULT_COLUMN_BUDGET, DEFAULT_TOL,
};
use crate::lattice::{
    assemble_hamiltonian, sample_potential, Boundary, Grid, GridParams, PotentialSpec,
    SparseOperator,
};
use crate::spectral::{format_real, SpectralConfig};

/// Upper end of the trusted energy window is `C_WIN / h²`.
pub const C_WIN: f64 = 1.0;

/// Slack below `min V` for the lower end of the window.
pub const WINDOW_EPS: f64 = 1e-9;

/// Trusted energy window `[min V - ε, C_WIN/h²]` of a lattice operator.
pub fn trusted_window(op: &SparseOperator) -> (f64, f64) {
    let min_v = op.potential().iter().copied().fold(f64::INFINITY, f64::min);
    let h = op.grid().spacing();
    (min_v - WINDOW_EPS, C_WIN / (h * h))
}

/// Equally spaced edges `lo, lo+w, …` up to the first edge `≥ hi`.
pub fn uniform_edges(lo: f64, hi: f64, width: f64) -> Result<Vec<f64>> {
    if !(width > 0.0) || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bins need lo < hi and width > 0 (got [{lo}, {hi}], width {width})"
        )));
    }
    let n = ((hi - lo) / width).ceil() as usize;
    Ok((0..=n).map(|k| lo + k as f64 * width).collect())
}

/// Which finite-volume count feeds the histogram.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountEstimator {
    /// Eigenvalues of the Dirichlet restriction.
    Dirichlet,
    /// Mean of the Dirichlet count and the reflecting-boundary count; the
    /// leading surface terms of the two cancel.
    #[default]
    Bracketed,
}

/// How a histogram was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramMethod {
    EigencountDirichlet,
    EigencountBracketed,
}

/// Binned DOS measure on half-open bins `[e_k, e_{k+1})`; the last bin is
/// closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DOSHistogram {
    pub dim: usize,
    pub bin_edges: Vec<f64>,
    /// Eigenvalue count per bin (half-integers for the bracketed count).
    pub counts: Vec<f64>,
    /// ν-mass per bin, `count / volume`.
    pub mass: Vec<f64>,
    pub volume: f64,
    pub window: (f64, f64),
    pub method: HistogramMethod,
    /// Bins lying below or reaching above the trusted window.
    pub flagged: Vec<bool>,
}

impl DOSHistogram {
    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn width(&self, k: usize) -> f64 {
        self.bin_edges[k + 1] - self.bin_edges[k]
    }

    /// Mass per unit energy.
    pub fn density(&self) -> Vec<f64> {
        (0..self.bins()).map(|k| self.mass[k] / self.width(k)).collect()
    }

    pub fn total_count(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// `ν((-∞, e_k])` at every edge, starting with 0 at the first edge.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.bins() + 1);
        out.push(0.0);
        for c in &self.counts {
            acc += c;
            out.push(acc / self.volume);
        }
        out
    }

    /// Integrated DOS at `lambda`, which must be one of the edges.
    pub fn integrated_at(&self, lambda: f64) -> Result<f64> {
        let k = self
            .bin_edges
            .iter()
            .position(|&e| e == lambda)
            .ok_or_else(|| Error::InvalidArgument(format!("{lambda} is not a bin edge")))?;
        Ok(self.cumulative()[k])
    }

    /// CSV with columns `lo,hi,count,mass,density,flagged`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lo", "hi", "count", "mass", "density", "flagged"])?;
        let density = self.density();
        for k in 0..self.bins() {
            w.write_record([
                format_real(self.bin_edges[k]),
                format_real(self.bin_edges[k + 1]),
                format_real(self.counts[k]),
                format_real(self.mass[k]),
                format_real(density[k]),
                self.flagged[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn cumulative_counts(op: &SparseOperator, edges: &[f64]) -> Vec<usize> {
    let last = edges.len() - 1;
    edges
        .par_iter()
        .enumerate()
        .map(|(k, &e)| count_below(op, if k == last { e.next_up() } else { e }))
        .collect()
}

/// Histogram of `N_L(bin)/(2L)^d` from inertia counts at the bin edges.
pub fn eigencount_dos(
    op: &SparseOperator,
    edges: &[f64],
    estimator: CountEstimator,
) -> Result<DOSHistogram> {
    let grid = op.grid();
    if grid.boundary() != Boundary::Dirichlet || op.is_reflecting() {
        return Err(Error::InvalidArgument(
            "eigencount needs the Dirichlet restriction".into(),
        ));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "bin edges must be strictly increasing, at least two".into(),
        ));
    }
    let dirichlet = cumulative_counts(op, edges);
    let (cum, method): (Vec<f64>, _) = match estimator {
        CountEstimator::Dirichlet => (
            dirichlet.iter().map(|&c| c as f64).collect(),
            HistogramMethod::EigencountDirichlet,
        ),
        CountEstimator::Bracketed => {
            let reflecting = cumulative_counts(&op.reflecting_boundary()?, edges);
            (
                dirichlet
                    .iter()
                    .zip(&reflecting)
                    .map(|(&a, &b)| 0.5 * (a + b) as f64)
                    .collect(),
                HistogramMethod::EigencountBracketed,
            )
        }
    };
    let volume = grid.box_volume();
    let window = trusted_window(op);
    let counts: Vec<f64> = cum.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(DOSHistogram {
        dim: grid.dim(),
        mass: counts.iter().map(|c| c / volume).collect(),
        counts,
        flagged: edges
            .windows(2)
            .map(|w| w[1] <= window.0 || w[1] > window.1)
            .collect(),
        bin_edges: edges.to_vec(),
        volume,
        window,
        method,
    })
}

/// Histogram over `[min V - ε, C_WIN/h²]` with bins of roughly `width`.
pub fn eigencount_window(
    op: &SparseOperator,
    width: f64,
    estimator: CountEstimator,
) -> Result<DOSHistogram> {
    let (lo, hi) = trusted_window(op);
    let lo = (lo / width).floor() * width;
    let n = ((hi - lo) / width).floor().max(1.0) as usize;
    let edges: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
    eigencount_dos(op, &edges, estimator)
}

/// Sampled Laplace transform `s ↦ ∫ e^{-sλ} dν(λ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceCurve {
    pub s_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Estimated mass beyond the last bin (histogram curves only).
    pub tail_bound: Vec<f64>,
    pub flagged: Vec<bool>,
}

impl LaplaceCurve {
    /// CSV with columns `s,value,stderr,tail_bound,flagged`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["s", "value", "stderr", "tail_bound", "flagged"])?;
        for k in 0..self.s_grid.len() {
            w.write_record([
                format_real(self.s_grid[k]),
                format_real(self.values[k]),
                format_real(self.stderr[k]),
                format_real(self.tail_bound[k]),
                self.flagged[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Weyl estimate of `∫_{top}^∞ e^{-sλ} dν` for a measure dominated by the
/// free one shifted to `c`.
fn weyl_tail(d: usize, s: f64, top: f64, c: f64) -> Result<f64> {
    let a = d as f64 / 2.0;
    let x = s * (top - c).max(0.0);
    let upper = if x == 0.0 { 1.0 } else { gamma_ur(a, x) };
    Ok(sphere_area(d)? / (2.0 * (2.0 * PI).powi(d as i32))
        * (-s * c).exp()
        * s.powf(-a)
        * gamma(a)
        * upper)
}

/// `Σ_bins e^{-s·midpoint}·mass` with a Weyl tail estimate beyond the
/// last edge; points whose tail exceeds 10% of the value are flagged.
pub fn laplace_of_histogram(hist: &DOSHistogram, s_grid: &[f64]) -> Result<LaplaceCurve> {
    let top = *hist.bin_edges.last().expect("histogram has edges");
    let mut curve = LaplaceCurve {
        s_grid: s_grid.to_vec(),
        values: Vec::new(),
        stderr: Vec::new(),
        tail_bound: Vec::new(),
        flagged: Vec::new(),
    };
    for &s in s_grid {
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("Laplace variable s = {s} must be > 0")));
        }
        let value: f64 = (0..hist.bins())
            .map(|k| {
                let mid = 0.5 * (hist.bin_edges[k] + hist.bin_edges[k + 1]);
                (-s * mid).exp() * hist.mass[k]
            })
            .sum();
        let tail = weyl_tail(hist.dim, s, top, hist.window.0)?;
        curve.values.push(value);
        curve.stderr.push(0.0);
        curve.tail_bound.push(tail);
        curve.flagged.push(tail > 0.1 * value);
    }
    Ok(curve)
}

/// `Tr(χ_B P_I χ_B)/|B(0,R)|` over a list of radii.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionDos {
    pub interval: (f64, f64),
    pub eigenvalues_in_interval: usize,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// Radii within `6√τ` of the boundary, `τ = 1/|I|`.
    pub flagged: Vec<bool>,
}

/// Projection-trace DOS from dense eigenpairs. Eigenvectors are
/// ℓ²-normalized, so `Σ_{x∈B} ψ(x)²` already is the continuum `‖χ_B ψ‖²`.
pub fn projection_dos(
    op: &SparseOperator,
    interval: (f64, f64),
    radii: &[f64],
    cfg: &SpectralConfig,
) -> Result<ProjectionDos> {
    let (a, b) = interval;
    if !(b > a) {
        return Err(Error::InvalidArgument(format!("empty interval [{a}, {b})")));
    }
    cfg.check(op.dim())?;
    let grid = op.grid();
    let d = grid.dim();
    let eig = op
        .to_dense()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinAlg(format!("{e:?}")))?;
    let lambdas = eig.S().column_vector();
    let u = eig.U();
    let selected: Vec<usize> = (0..op.dim())
        .filter(|&j| lambdas[j] >= a && lambdas[j] < b)
        .collect();
    // weight of each lattice point in the projection
    let mass: Vec<f64> = (0..op.dim())
        .map(|x| selected.iter().map(|&j| u[(x, j)] * u[(x, j)]).sum())
        .collect();
    let omega = sphere_area(d)?;
    let limit = grid.half_width() - boundary_layer(1.0 / (b - a));
    let values = radii
        .iter()
        .map(|&r| {
            let inside: f64 = (0..op.dim())
                .filter(|&x| grid.radius(x) < r)
                .map(|x| mass[x])
                .sum();
            inside / (omega * r.powi(d as i32) / d as f64)
        })
        .collect();
    Ok(ProjectionDos {
        interval,
        eigenvalues_in_interval: selected.len(),
        radii: radii.to_vec(),
        values,
        flagged: radii.iter().map(|&r| r > limit).collect(),
    })
}

/// Least-squares line `y ≈ intercept + slope·x`, with the rms residual.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let weights = fit_weights(x)?;
    let intercept: f64 = weights.iter().zip(y).map(|(c, v)| c.0 * v).sum();
    let slope: f64 = weights.iter().zip(y).map(|(c, v)| c.1 * v).sum();
    let rms = (x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    Ok((intercept, slope, rms))
}

/// Coefficients `(c_i, e_i)` with intercept `Σ c_i y_i` and slope `Σ e_i y_i`.
fn fit_weights(x: &[f64]) -> Result<Vec<(f64, f64)>> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return Err(Error::InvalidArgument("a line fit needs two points".into()));
    }
    let mean = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument("a line fit needs distinct abscissae".into()));
    }
    Ok(x
        .iter()
        .map(|v| {
            let e = (v - mean) / sxx;
            (1.0 / n - mean * e, e)
        })
        .collect())
}

/// Normalizing volume of the balls in the ball-average route.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallVolume {
    /// `ω_d R^d / d`.
    #[default]
    Continuum,
    /// Number of lattice points in the ball times `h^d`.
    LatticeCount,
}

/// Heat-trace ball averages at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallAverage {
    pub s: f64,
    pub radii: Vec<f64>,
    pub averages: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Intercept of the line through `(1/R, average)`.
    pub extrapolated: f64,
    /// Mean over the radii `≥ 0.75·R_max`.
    pub plain_average: f64,
    pub value_stderr: f64,
}

/// Largest radius whose ball stays outside the boundary layer.
pub fn max_admissible_radius(grid: &Grid, s: f64) -> f64 {
    match grid.boundary() {
        Boundary::Dirichlet => grid.half_width() - boundary_layer(s),
        Boundary::Periodic => grid.half_width(),
    }
}

/// `R_max·{0.5, 0.625, 0.75, 0.875, 1}`.
pub fn default_radii(grid: &Grid, s: f64) -> Vec<f64> {
    let r_max = max_admissible_radius(grid, s);
    [0.5, 0.625, 0.75, 0.875, 1.0].iter().map(|f| f * r_max).collect()
}

/// `|B(0,R)|^{-1} ∫_{B(0,R)} K_{s,V}(x,x) dx` over the admissible radii,
/// extrapolated in `1/R`. Inadmissible radii are dropped.
pub fn ball_average_route(
    field: &DiagonalField,
    radii: Option<&[f64]>,
    volume: BallVolume,
) -> Result<BallAverage> {
    let grid = field.grid();
    let s = field.s;
    let r_max = max_admissible_radius(grid, s);
    if !(r_max > 0.0) {
        let layer = boundary_layer(s);
        return Err(Error::NoAdmissibleRadius(format!(
            "the boundary layer 6√s = {layer:.3} at s = {s} covers the box of half-width {}; \
             use L > {layer:.1} (h = {})",
            grid.half_width(),
            grid.spacing()
        )));
    }
    let radii: Vec<f64> = match radii {
        Some(r) => r.iter().copied().filter(|&r| r > 0.0 && r <= r_max).collect(),
        None => default_radii(grid, s),
    };
    if radii.is_empty() {
        return Err(Error::NoAdmissibleRadius(format!(
            "all radii exceed L - 6√s = {r_max:.3} at s = {s}"
        )));
    }
    let d = grid.dim();
    let omega = sphere_area(d)?;
    let vol = grid.volume_element();
    let mut averages = Vec::with_capacity(radii.len());
    let mut stderr = Vec::with_capacity(radii.len());
    for &r in &radii {
        let mut sum = 0.0;
        let mut var = 0.0;
        let mut count = 0usize;
        for (k, (&p, &v)) in field.points.iter().zip(&field.values).enumerate() {
            if grid.radius(p) < r {
                sum += v;
                count += 1;
                if let Some(e) = &field.stderr {
                    var += e[k] * e[k];
                }
            }
        }
        let inside = (0..grid.len()).filter(|&i| grid.radius(i) < r).count();
        if inside != count {
            return Err(Error::InvalidArgument(format!(
                "diagonal is missing {} points inside the ball of radius {r}",
                inside - count
            )));
        }
        let ball = match volume {
            BallVolume::Continuum => omega * r.powi(d as i32) / d as f64,
            BallVolume::LatticeCount => count as f64 * vol,
        };
        averages.push(vol * sum / ball);
        stderr.push(vol * var.sqrt() / ball);
    }
    let largest = radii.iter().copied().fold(0.0, f64::max);
    let big: Vec<usize> = (0..radii.len())
        .filter(|&k| radii[k] >= 0.75 * largest)
        .collect();
    let plain_average = big.iter().map(|&k| averages[k]).sum::<f64>() / big.len() as f64;
    let (extrapolated, value_stderr) = if radii.len() >= 2 {
        let inv: Vec<f64> = radii.iter().map(|r| 1.0 / r).collect();
        let c = fit_weights(&inv)?;
        (
            c.iter().zip(&averages).map(|(c, a)| c.0 * a).sum(),
            c.iter().zip(&stderr).map(|(c, e)| c.0.abs() * e).sum(),
        )
    } else {
        (averages[0], stderr[0])
    };
    Ok(BallAverage {
        s,
        radii,
        averages,
        stderr,
        extrapolated,
        plain_average,
        value_stderr,
    })
}

/// `∫_{ℝ^d} ⟨x⟩^{-r} dx = π^{d/2} Γ((r-d)/2) / Γ(r/2)`.
pub fn bracket_integral(d: usize, r: f64) -> f64 {
    let df = d as f64;
    PI.powf(df / 2.0) * gamma((r - df) / 2.0) / gamma(r / 2.0)
}

/// Default exponents: `d + t` for 8 values of `t` from 2 down to `2/ln L`,
/// strictly decreasing toward `d`.
pub fn default_r_grid(dim: usize, half_width: f64) -> Vec<f64> {
    let t_min = 2.0 / half_width.ln().max(f64::MIN_POSITIVE);
    let t_max = (2.0f64).max(2.0 * t_min);
    (0..8)
        .map(|k| dim as f64 + t_max - (t_max - t_min) * k as f64 / 7.0)
        .collect()
}

/// Residue extrapolation of `(r - d)·Tr(e^{-sH}⟨x⟩^{-r})` to `r = d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidueFit {
    pub s: f64,
    pub dim: usize,
    pub half_width: f64,
    pub r_grid: Vec<f64>,
    /// `(r-d)·h^d Σ_bulk ⟨x⟩^{-r} K(x,x)`.
    pub scaled: Vec<f64>,
    /// Share of `∫⟨x⟩^{-r}` captured by the bulk sum.
    pub truncation: Vec<f64>,
    /// `scaled / truncation`, the values entering the fit.
    pub corrected: Vec<f64>,
    pub limit: f64,
    pub slope: f64,
    pub fit_residual: f64,
    pub limit_stderr: f64,
    pub adequate: bool,
    /// `limit / ω_d`, the Laplace-transform estimate.
    pub laplace_estimate: f64,
}

/// Check `(r-d)·ln L ≥ 2` for every exponent.
pub fn check_adequacy(dim: usize, half_width: f64, r_grid: &[f64]) -> Result<()> {
    let ln_l = half_width.ln();
    for &r in r_grid {
        let t = r - dim as f64;
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("exponent r = {r} must exceed d = {dim}")));
        }
        let product = t * ln_l;
        // a few ulps of slack: default grids put t exactly on 2/ln L
        if product < 2.0 * (1.0 - 8.0 * f64::EPSILON) {
            return Err(Error::Adequacy {
                r_minus_d: t,
                product,
                min_half_width: (2.0 / t).exp(),
            });
        }
    }
    Ok(())
}

/// Fit `corrected ≈ limit + slope·(r-d)`; returns `(limit, slope, residual)`.
pub fn fit_residue(r_minus_d: &[f64], corrected: &[f64]) -> Result<(f64, f64, f64)> {
    linear_fit(r_minus_d, corrected)
}

/// Residue route from a kernel diagonal covering the bulk.
///
/// The bulk sum misses the part of `∫⟨x⟩^{-r}` outside the bulk; each
/// scaled value is divided by the captured share before the linear fit,
/// and by `t·∫⟨x⟩^{-r}/ω_d` (identically 1 in d = 2, curved in t otherwise).
pub fn residue_route(field: &DiagonalField, r_grid: Option<&[f64]>) -> Result<ResidueFit> {
    let grid = field.grid();
    let d = grid.dim();
    let l = grid.half_width();
    let r_grid = match r_grid {
        Some(r) => r.to_vec(),
        None => default_r_grid(d, l),
    };
    if r_grid.len() < 2 || r_grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument(
            "r grid must be strictly decreasing with at least two exponents".into(),
        ));
    }
    check_adequacy(d, l, &r_grid)?;
    let omega = sphere_area(d)?;
    let bulk = bulk_mask(grid, field.s);
    if !field.points.iter().any(|&p| bulk[p]) {
        return Err(Error::NoAdmissibleRadius(format!(
            "no estimated point lies outside the boundary layer 6√s = {:.3} at s = {}; use L > {:.1}",
            boundary_layer(field.s),
            field.s,
            boundary_layer(field.s)
        )));
    }
    let vol = grid.volume_element();
    let mut scaled = Vec::new();
    let mut truncation = Vec::new();
    let mut corrected = Vec::new();
    let mut errs = Vec::new();
    for &r in &r_grid {
        let t = r - d as f64;
        let weight = |p: usize| {
            let rad = grid.radius(p);
            (1.0 + rad * rad).powf(-0.5 * r)
        };
        let captured: f64 = (0..grid.len()).filter(|&p| bulk[p]).map(weight).sum::<f64>() * vol;
        let mut sum = 0.0;
        let mut var = 0.0;
        for (k, (&p, &v)) in field.points.iter().zip(&field.values).enumerate() {
            if bulk[p] {
                let w = weight(p);
                sum += w * v;
                if let Some(e) = &field.stderr {
                    var += (w * e[k]).powi(2);
                }
            }
        }
        let integral = bracket_integral(d, r);
        let share = captured / integral;
        let shape = t * integral / omega;
        let value = t * vol * sum;
        scaled.push(value);
        truncation.push(share);
        corrected.push(value / (share * shape));
        errs.push(t * vol * var.sqrt() / (share * shape));
    }
    let ts: Vec<f64> = r_grid.iter().map(|r| r - d as f64).collect();
    let (limit, slope, fit_residual) = fit_residue(&ts, &corrected)?;
    let limit_stderr = fit_weights(&ts)?
        .iter()
        .zip(&errs)
        .map(|(c, e)| c.0.abs() * e)
        .sum();
    Ok(ResidueFit {
        s: field.s,
        dim: d,
        half_width: l,
        r_grid,
        scaled,
        truncation,
        corrected,
        limit,
        slope,
        fit_residual,
        limit_stderr,
        adequate: true,
        laplace_estimate: limit / omega,
    })
}

/// Quadrature resolution for [`abelian_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbelianQuadrature {
    /// Angular nodes (circle points for d = 2, latitudes for d = 3).
    pub angular: usize,
    /// Radial Gauss–Legendre panels per unit radius on the ball side.
    pub panels_per_unit: usize,
    /// Panels on the mapped tail `u ∈ (0, 1]` of the weighted side.
    pub tail_panels: usize,
    /// Nodes per panel.
    pub panel_nodes: usize,
}

impl Default for AbelianQuadrature {
    fn default() -> Self {
        Self {
            angular: 256,
            panels_per_unit: 2,
            tail_panels: 256,
            panel_nodes: 8,
        }
    }
}

/// Both sides of the abelian comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbelianReport {
    pub dim: usize,
    pub radii: Vec<f64>,
    /// `|B_R|^{-1} ∫_{B_R} F`.
    pub ball: Vec<f64>,
    /// Intercept in `1/R`.
    pub ball_limit: f64,
    pub r_grid: Vec<f64>,
    /// `|B_1|^{-1} (r-1) ∫ ⟨t⟩^{-dr} F(t) dt`.
    pub weighted: Vec<f64>,
    /// Intercept in `r - 1`.
    pub weighted_limit: f64,
    pub discrepancy: f64,
}

fn composite_gl(a: f64, b: f64, panels: usize, nodes: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(nodes);
    let step = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * nodes);
    for p in 0..panels {
        let lo = a + p as f64 * step;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((lo + 0.5 * step * (xi + 1.0), 0.5 * step * wi));
        }
    }
    out
}

/// Diagnostic comparison of ball averages of a bounded `F` on `ℝ^d` with
/// the weighted integrals `(r-1)∫⟨t⟩^{-dr}F` as `r ↓ 1`.
///
/// The weighted integral over `|t| > 1` is mapped by `ρ = u^{-1/δ}`,
/// `δ = d(r-1)`, which turns the power-law tail into a bounded integrand
/// on `(0, 1]`.
pub fn abelian_check(
    f: impl Fn(&[f64]) -> f64 + Sync,
    dim: usize,
    r_grid: &[f64],
    radii: &[f64],
    quad: &AbelianQuadrature,
) -> Result<AbelianReport> {
    if !(2..=3).contains(&dim) {
        return Err(Error::InvalidArgument(format!(
            "abelian check supports d = 2, 3 (got {dim})"
        )));
    }
    if r_grid.iter().any(|&r| !(r > 1.0)) || radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidArgument(
            "need exponents r > 1 and positive radii".into(),
        ));
    }
    let sphere = SphereQuadrature::new(dim, quad.angular)?;
    let unit_ball = sphere_area(dim)? / dim as f64;
    let df = dim as f64;
    let shell = |rho: f64| -> f64 {
        sphere.integrate(|xi| {
            let mut x = [0.0; 3];
            for (a, c) in xi.iter().enumerate() {
                x[a] = rho * c;
            }
            f(&x[..dim])
        })
    };
    let ball: Vec<f64> = radii
        .par_iter()
        .map(|&r| {
            let panels = (quad.panels_per_unit as f64 * r).ceil().max(1.0) as usize;
            let integral: f64 = composite_gl(0.0, r, panels, quad.panel_nodes)
                .into_iter()
                .map(|(rho, w)| w * rho.powi(dim as i32 - 1) * shell(rho))
                .sum();
            integral / (unit_ball * r.powi(dim as i32))
        })
        .collect();
    let inner_nodes = composite_gl(0.0, 1.0, 8, quad.panel_nodes);
    let inner_shells: Vec<f64> = inner_nodes.iter().map(|&(rho, _)| shell(rho)).collect();
    let weighted: Vec<f64> = r_grid
        .par_iter()
        .map(|&r| {
            let delta = df * (r - 1.0);
            let inner: f64 = inner_nodes
                .iter()
                .zip(&inner_shells)
                .map(|(&(rho, w), fs)| {
                    w * rho.powi(dim as i32 - 1) * (1.0 + rho * rho).powf(-df * r / 2.0) * fs
                })
                .sum();
            let tail: f64 = composite_gl(0.0, 1.0, quad.tail_panels, quad.panel_nodes)
                .into_iter()
                .map(|(u, w)| {
                    let rho = u.powf(-1.0 / delta);
                    if !rho.is_finite() {
                        return 0.0;
                    }
                    let g = (1.0 + rho.powi(-2)).powf(-df * r / 2.0);
                    w * g * shell(rho)
                })
                .sum::<f64>()
                / delta;
            (r - 1.0) * (inner + tail) / unit_ball
        })
        .collect();
    let ball_limit = if radii.len() >= 2 {
        linear_fit(&radii.iter().map(|r| 1.0 / r).collect::<Vec<_>>(), &ball)?.0
    } else {
        ball[0]
    };
    let weighted_limit = if r_grid.len() >= 2 {
        linear_fit(&r_grid.iter().map(|r| r - 1.0).collect::<Vec<_>>(), &weighted)?.0
    } else {
        weighted[0]
    };
    Ok(AbelianReport {
        dim,
        radii: radii.to_vec(),
        ball,
        ball_limit,
        r_grid: r_grid.to_vec(),
        weighted,
        weighted_limit,
        discrepancy: (ball_limit - weighted_limit).abs(),
    })
}

/// `|a - b| / min(|a|, |b|)`.
pub fn relative_deviation(a: f64, b: f64) -> f64 {
    let scale = a.abs().min(b.abs());
    if scale == 0.0 {
        if a == b {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (a - b).abs() / scale
    }
}

/// Settings of a route comparison on one grid and potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub grid: GridParams,
    pub potential: PotentialSpec,
    pub s_grid: Vec<f64>,
    #[serde(default)]
    pub r_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub radii: Option<Vec<f64>>,
    pub bin_width: f64,
    #[serde(default)]
    pub estimator: CountEstimator,
    pub diagonal: DiagonalMode,
    #[serde(default = "default_heat_tol")]
    pub heat_tol: f64,
    #[serde(default)]
    pub ball_volume: BallVolume,
    /// Largest accepted pairwise relative deviation.
    pub tolerance: f64,
}

fn default_heat_tol() -> f64 {
    DEFAULT_TOL
}

/// One pairwise deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub first: String,
    pub second: String,
    pub value: f64,
}

/// All estimates at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub s: f64,
    pub eigencount: f64,
    pub ball_average: f64,
    pub residue: f64,
    pub closed_form: Option<f64>,
    pub deviations: Vec<Deviation>,
    pub max_deviation: f64,
    pub pass: bool,
}

/// Result of [`compare_methods`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub s_min: f64,
    /// Times dropped for lying below `s_min`.
    pub skipped_s: Vec<f64>,
    pub histogram: DOSHistogram,
    pub eigencount_curve: LaplaceCurve,
    pub ball: Vec<BallAverage>,
    pub residue: Vec<ResidueFit>,
    pub rows: Vec<CompareRow>,
    pub tolerance: f64,
    pub pass: bool,
}

impl CompareReport {
    pub fn ball_curve(&self) -> LaplaceCurve {
        LaplaceCurve {
            s_grid: self.ball.iter().map(|b| b.s).collect(),
            values: self.ball.iter().map(|b| b.extrapolated).collect(),
            stderr: self.ball.iter().map(|b| b.value_stderr).collect(),
            tail_bound: vec![0.0; self.ball.len()],
            flagged: vec![false; self.ball.len()],
        }
    }

    pub fn residue_curve(&self) -> LaplaceCurve {
        let omega = self
            .residue
            .first()
            .map_or(1.0, |r| r.limit / r.laplace_estimate);
        LaplaceCurve {
            s_grid: self.residue.iter().map(|r| r.s).collect(),
            values: self.residue.iter().map(|r| r.laplace_estimate).collect(),
            stderr: self.residue.iter().map(|r| r.limit_stderr / omega).collect(),
            tail_bound: vec![0.0; self.residue.len()],
            flagged: vec![false; self.residue.len()],
        }
    }

    /// CSV with columns `s,eigencount,ball_average,residue,closed_form,max_deviation,pass`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "s",
            "eigencount",
            "ball_average",
            "residue",
            "closed_form",
            "max_deviation",
            "pass",
        ])?;
        for r in &self.rows {
            w.write_record([
                format_real(r.s),
                format_real(r.eigencount),
                format_real(r.ball_average),
                format_real(r.residue),
                r.closed_form.map(format_real).unwrap_or_default(),
                format_real(r.max_deviation),
                r.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Kernel diagonals of `op` at every time in `s_grid`.
pub fn diagonals_for(
    op: &SparseOperator,
    s_grid: &[f64],
    mode: &DiagonalMode,
    tol: f64,
) -> Result<Vec<DiagonalField>> {
    let props = s_grid
        .iter()
        .map(|&s| build_propagator(op, s, tol))
        .collect::<Result<Vec<_>>>()?;
    heat_diagonals(&props, mode, DEFAULT_COLUMN_BUDGET)
}

/// Run the three numeric routes on one grid and potential and compare
/// their Laplace transforms at every admissible time.
pub fn compare_methods(cfg: &CompareConfig) -> Result<CompareReport> {
    if !(cfg.tolerance > 0.0) || !(cfg.heat_tol > 0.0) {
        return Err(Error::InvalidArgument("tolerances must be positive".into()));
    }
    let grid = cfg.grid.build()?;
    cfg.potential.validate(grid.dim())?;
    let op = assemble_hamiltonian(&grid, &sample_potential(&cfg.potential, &grid)?)?;
    let smin = s_min(grid.spacing());
    let (s_grid, skipped_s): (Vec<f64>, Vec<f64>) = cfg.s_grid.iter().partition(|&&s| s >= smin);
    if s_grid.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no time in the s grid reaches s_min = {smin}"
        )));
    }
    let histogram = eigencount_window(&op, cfg.bin_width, cfg.estimator)?;
    let eigencount_curve = laplace_of_histogram(&histogram, &s_grid)?;
    let fields = diagonals_for(&op, &s_grid, &cfg.diagonal, cfg.heat_tol)?;
    let ball = fields
        .iter()
        .map(|f| ball_average_route(f, cfg.radii.as_deref(), cfg.ball_volume))
        .collect::<Result<Vec<_>>>()?;
    let residue = fields
        .iter()
        .map(|f| residue_route(f, cfg.r_grid.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (k, &s) in s_grid.iter().enumerate() {
        let closed_form = closed_form_laplace(&cfg.potential, grid.dim(), s)?;
        let mut named = vec![
            ("eigencount", eigencount_curve.values[k]),
            ("ball_average", ball[k].extrapolated),
            ("residue", residue[k].laplace_estimate),
        ];
        if let Some(c) = closed_form {
            named.push(("closed_form", c));
        }
        let mut deviations = Vec::new();
        for i in 0..named.len() {
            for j in i + 1..named.len() {
                deviations.push(Deviation {
                    first: named[i].0.into(),
                    second: named[j].0.into(),
                    value: relative_deviation(named[i].1, named[j].1),
                });
            }
        }
        let max_deviation = deviations.iter().map(|d| d.value).fold(0.0, f64::max);
        rows.push(CompareRow {
            s,
            eigencount: named[0].1,
            ball_average: named[1].1,
            residue: named[2].1,
            closed_form,
            deviations,
            max_deviation,
            pass: max_deviation <= cfg.tolerance,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(CompareReport {
        s_min: smin,
        skipped_s,
        histogram,
        eigencount_curve,
        ball,
        residue,
        rows,
        tolerance: cfg.tolerance,
        pass,
    })
}

/// Ball-average curves of `V` and `V + V₀` over a sequence of boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub dim: usize,
    pub spacing: f64,
    pub half_widths: Vec<f64>,
    pub base: PotentialSpec,
    pub perturbation: PotentialSpec,
    pub s_grid: Vec<f64>,
    pub diagonal: DiagonalMode,
    #[serde(default = "default_heat_tol")]
    pub heat_tol: f64,
    /// Largest accepted relative difference on the largest box.
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub half_width: f64,
    pub s: f64,
    pub base: f64,
    pub perturbed: f64,
    pub relative_difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    /// Largest difference on the largest box.
    pub final_difference: f64,
    /// Differences shrink with `L` at every time.
    pub decreasing: bool,
    pub pass: bool,
}

impl StabilityReport {
    /// CSV with columns `L,s,base,perturbed,relative_difference`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["L", "s", "base", "perturbed", "relative_difference"])?;
        for r in &self.rows {
            w.write_record([
                format_real(r.half_width),
                format_real(r.s),
                format_real(r.base),
                format_real(r.perturbed),
                format_real(r.relative_difference),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ball averages (mean over the largest radii) for `V` and `V + V₀`.
pub fn stability_experiment(cfg: &StabilityConfig) -> Result<StabilityReport> {
    if cfg.half_widths.is_empty() || !(cfg.tolerance > 0.0) {
        return Err(Error::InvalidArgument(
            "need at least one box and a positive tolerance".into(),
        ));
    }
    let perturbed = PotentialSpec::Sum {
        terms: vec![cfg.base.clone(), cfg.perturbation.clone()],
    };
    let mut rows = Vec::new();
    for &l in &cfg.half_widths {
        let grid = GridParams {
            dim: cfg.dim,
            half_width: l,
            spacing: cfg.spacing,
            boundary: Boundary::Dirichlet,
        }
        .build()?;
        let mut values = Vec::new();
        for spec in [&cfg.base, &perturbed] {
            let op = assemble_hamiltonian(&grid, &sample_potential(spec, &grid)?)?;
            let fields = diagonals_for(&op, &cfg.s_grid, &cfg.diagonal, cfg.heat_tol)?;
            values.push(
                fields
                    .iter()
                    .map(|f| Ok(ball_average_route(f, None, BallVolume::Continuum)?.plain_average))
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        for (k, &s) in cfg.s_grid.iter().enumerate() {
            rows.push(StabilityRow {
                half_width: l,
                s,
                base: values[0][k],
                perturbed: values[1][k],
                relative_difference: relative_deviation(values[0][k], values[1][k]),
            });
        }
    }
    let ns = cfg.s_grid.len();
    let last = &rows[rows.len() - ns..];
    let final_difference = last.iter().map(|r| r.relative_difference).fold(0.0, f64::max);
    let decreasing = (0..ns).all(|k| {
        rows[k..]
            .iter()
            .step_by(ns)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[1].relative_difference < w[0].relative_difference)
    });
    Ok(StabilityReport {
        pass: final_difference <= cfg.tolerance && decreasing,
        rows,
        final_difference,
        decreasing,
    })
}
