//! Declarative experiment configs, presets and report generation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::closedform::{closed_form_integrated_dos, closed_form_laplace, sphere_area};
use crate::dos::{
    abelian_check, ball_average_route, compare_methods, diagonals_for, eigencount_dos,
    laplace_of_histogram, projection_dos, relative_deviation, residue_route,
    stability_experiment, trusted_window, AbelianQuadrature, BallVolume, CompareConfig,
    CountEstimator, LaplaceCurve, StabilityConfig,
};
use crate::error::{Error, Result};
use crate::heat::{DiagonalMode, DEFAULT_TOL};
use crate::lattice::{
    assemble_hamiltonian, sample_potential, Boundary, BumpProfile, GridParams, PotentialSpec,
    Sign, SparseOperator,
};
use crate::spectral::{
    connes_operator, cwikel_table, dixmier_partial_sums, format_real, singular_values,
    torus_multiplier, LaplacianSymbol, SpectralConfig, DEFAULT_DENSE_CAP,
};

/// Library version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Preset names accepted by [`preset`].
pub const PRESETS: &[&str] = &[
    "example1-free",
    "thm-homogeneous",
    "thm-stability",
    "asymptotic-homogeneous",
    "connes-check",
    "cwikel-check",
    "abelian-check",
];

/// What an experiment computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Eigencount,
    Projection,
    HeatBall,
    Residue,
    Closedform,
    Compare,
    Stability,
    Connes,
    Cwikel,
    Abelian,
}

/// Histogram bins: explicit edges, or a width over the trusted window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bins {
    #[serde(default)]
    pub width: Option<f64>,
    #[serde(default)]
    pub edges: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    pub half_widths: Vec<f64>,
    pub perturbation: PotentialSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnesSection {
    #[serde(default)]
    pub symbol: LaplacianSymbol,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwikelSection {
    pub half_widths: Vec<f64>,
    pub p: u32,
    /// `z = re + i·im`.
    pub z: (f64, f64),
}

/// Bounded test functions for the abelian check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbelianFunction {
    /// `1`
    One,
    /// `e^{-|t|²}`
    Gaussian,
    /// `(1 + |t|²)^{-1}`
    Lorentzian,
    /// `cos |t|`
    CosRadius,
}

impl AbelianFunction {
    pub fn eval(self, t: &[f64]) -> f64 {
        let r2: f64 = t.iter().map(|v| v * v).sum();
        match self {
            AbelianFunction::One => 1.0,
            AbelianFunction::Gaussian => (-r2).exp(),
            AbelianFunction::Lorentzian => 1.0 / (1.0 + r2),
            AbelianFunction::CosRadius => r2.sqrt().cos(),
        }
    }

    pub fn sup_norm(self) -> f64 {
        1.0
    }

    fn name(self) -> &'static str {
        match self {
            AbelianFunction::One => "one",
            AbelianFunction::Gaussian => "gaussian",
            AbelianFunction::Lorentzian => "lorentzian",
            AbelianFunction::CosRadius => "cos_radius",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbelianSection {
    pub functions: Vec<AbelianFunction>,
    #[serde(default)]
    pub quadrature: Option<AbelianQuadrature>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    /// Directory for the report and CSV files.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// A complete, reproducible experiment description.
///
/// `tolerance` is read per method: relative deviation for the DOS routes
/// and comparisons, largest relative difference on the largest box for
/// `stability`, relative error of the extrapolated trace for `connes`,
/// allowed growth per doubling minus one for `cwikel`, and the largest
/// discrepancy relative to `sup|F|` for `abelian`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub method: Method,
    pub grid: GridParams,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub s_grid: Vec<f64>,
    #[serde(default)]
    pub r_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub radii: Option<Vec<f64>>,
    #[serde(default)]
    pub bins: Option<Bins>,
    /// Energies where the integrated DOS is checked against a closed form.
    #[serde(default)]
    pub check_points: Vec<f64>,
    /// Energy interval of the projection route.
    #[serde(default)]
    pub interval: Option<(f64, f64)>,
    #[serde(default)]
    pub estimator: CountEstimator,
    #[serde(default)]
    pub diagonal: Option<DiagonalMode>,
    #[serde(default = "default_heat_tol")]
    pub heat_tol: f64,
    #[serde(default)]
    pub ball_volume: BallVolume,
    #[serde(default)]
    pub dense_cap: Option<usize>,
    pub tolerance: f64,
    /// Seed of every stochastic path; overrides the seed in a stochastic
    /// diagonal mode.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub stability: Option<StabilitySection>,
    #[serde(default)]
    pub connes: Option<ConnesSection>,
    #[serde(default)]
    pub cwikel: Option<CwikelSection>,
    #[serde(default)]
    pub abelian: Option<AbelianSection>,
    #[serde(default)]
    pub output: Output,
}

fn default_heat_tol() -> f64 {
    DEFAULT_TOL
}

fn default_diagonal() -> DiagonalMode {
    DiagonalMode::Probing { epsilon: 1e-6 }
}

impl ExperimentConfig {
    /// Parse and validate; parse errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.tolerance > 0.0) {
            return bad(format!("tolerance must be positive (got {})", self.tolerance));
        }
        if !(self.heat_tol > 0.0) {
            return bad(format!("heat_tol must be positive (got {})", self.heat_tol));
        }
        self.grid.build()?;
        self.potential.validate(self.grid.dim)?;
        if self.s_grid.iter().any(|&s| !(s > 0.0)) {
            return bad("every s must be positive".into());
        }
        if let Some(DiagonalMode::Stochastic { .. }) = self.diagonal {
            if self.seed.is_none() {
                return bad("a stochastic diagonal needs a seed".into());
            }
        }
        if let Some(DiagonalMode::Probing { epsilon }) = self.diagonal {
            if !(epsilon > 0.0 && epsilon < 1.0) {
                return bad(format!("probing epsilon must lie in (0, 1) (got {epsilon})"));
            }
        }
        let needs_s = matches!(
            self.method,
            Method::HeatBall | Method::Residue | Method::Compare | Method::Stability
        );
        if needs_s && self.s_grid.is_empty() {
            return bad(format!("method {:?} needs a non-empty s_grid", self.method));
        }
        match self.method {
            Method::Compare if self.bins.as_ref().and_then(|b| b.width).is_none() => {
                bad("compare needs bins.width".into())
            }
            Method::Projection if self.interval.is_none() || self.radii.is_none() => {
                bad("projection needs interval and radii".into())
            }
            Method::Stability if self.stability.is_none() => bad("missing stability section".into()),
            Method::Cwikel if self.cwikel.is_none() => bad("missing cwikel section".into()),
            Method::Abelian => match &self.abelian {
                None => bad("missing abelian section".into()),
                Some(_) if self.r_grid.is_none() || self.radii.is_none() => {
                    bad("abelian needs r_grid and radii".into())
                }
                _ => Ok(()),
            },
            Method::Connes if self.grid.boundary != Boundary::Periodic => {
                bad("connes needs a periodic grid".into())
            }
            _ => Ok(()),
        }
    }

    fn diagonal_mode(&self) -> DiagonalMode {
        match (self.diagonal.clone().unwrap_or_else(default_diagonal), self.seed) {
            (DiagonalMode::Stochastic { probes, .. }, Some(seed)) => {
                DiagonalMode::Stochastic { probes, seed }
            }
            (mode, _) => mode,
        }
    }

    fn spectral(&self) -> SpectralConfig {
        SpectralConfig {
            dense_cap: self.dense_cap.unwrap_or(DEFAULT_DENSE_CAP),
        }
    }

    fn operator(&self) -> Result<SparseOperator> {
        let grid = self.grid.build()?;
        assemble_hamiltonian(&grid, &sample_potential(&self.potential, &grid)?)
    }
}

/// One checked quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label: String,
    pub value: f64,
    pub reference: f64,
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Comparison {
    fn relative(label: impl Into<String>, value: f64, reference: f64, tolerance: f64) -> Self {
        let deviation = relative_deviation(value, reference);
        Self {
            label: label.into(),
            value,
            reference,
            deviation,
            tolerance,
            pass: deviation <= tolerance,
        }
    }

    fn bound(label: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            label: label.into(),
            value,
            reference: limit,
            deviation: value,
            tolerance: limit,
            pass: value <= limit,
        }
    }
}

/// Output of one route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteOutput {
    pub curve: Option<LaplaceCurve>,
    pub diagnostics: serde_json::Value,
}

/// Everything a run produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub version: String,
    pub per_route: BTreeMap<String, RouteOutput>,
    pub comparisons: Vec<Comparison>,
    pub pass: bool,
    /// CSV files by name.
    #[serde(skip)]
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Report {
    /// Write `report.json` and the CSV files into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let path = dir.join("report.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        written.push(path);
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn route(curve: Option<LaplaceCurve>, diagnostics: impl Serialize) -> Result<RouteOutput> {
    Ok(RouteOutput {
        curve,
        diagnostics: serde_json::to_value(diagnostics)?,
    })
}

#[derive(Default)]
struct Outcome {
    per_route: BTreeMap<String, RouteOutput>,
    comparisons: Vec<Comparison>,
    files: BTreeMap<String, Vec<u8>>,
}

/// Run an experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let outcome = match cfg.method {
        Method::Eigencount => run_eigencount(cfg)?,
        Method::Projection => run_projection(cfg)?,
        Method::HeatBall | Method::Residue => run_heat(cfg)?,
        Method::Closedform => run_closed_form(cfg)?,
        Method::Compare => run_compare(cfg)?,
        Method::Stability => run_stability(cfg)?,
        Method::Connes => run_connes(cfg)?,
        Method::Cwikel => run_cwikel(cfg)?,
        Method::Abelian => run_abelian(cfg)?,
    };
    Ok(Report {
        config: cfg.clone(),
        config_hash: cfg.hash()?,
        version: VERSION.to_string(),
        pass: outcome.comparisons.iter().all(|c| c.pass),
        per_route: outcome.per_route,
        comparisons: outcome.comparisons,
        files: outcome.files,
    })
}

fn closed_laplace_curve(cfg: &ExperimentConfig) -> Result<Option<LaplaceCurve>> {
    let mut values = Vec::new();
    for &s in &cfg.s_grid {
        match closed_form_laplace(&cfg.potential, cfg.grid.dim, s)? {
            Some(v) => values.push(v),
            None => return Ok(None),
        }
    }
    let n = values.len();
    Ok(Some(LaplaceCurve {
        s_grid: cfg.s_grid.clone(),
        values,
        stderr: vec![0.0; n],
        tail_bound: vec![0.0; n],
        flagged: vec![false; n],
    }))
}

fn run_eigencount(cfg: &ExperimentConfig) -> Result<Outcome> {
    let op = cfg.operator()?;
    let mut edges = match &cfg.bins {
        Some(Bins {
            edges: Some(e), ..
        }) => e.clone(),
        other => {
            let width = other.as_ref().and_then(|b| b.width).unwrap_or(0.1);
            let (lo, hi) = trusted_window(&op);
            let lo = (lo / width).floor() * width;
            let n = ((hi - lo) / width).floor().max(1.0) as usize;
            (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
        }
    };
    edges.extend(cfg.check_points.iter().copied());
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let hist = eigencount_dos(&op, &edges, cfg.estimator)?;
    let mut out = Outcome::default();
    for &lambda in &cfg.check_points {
        if let Some(exact) = closed_form_integrated_dos(&cfg.potential, cfg.grid.dim, lambda)? {
            out.comparisons.push(Comparison::relative(
                format!("integrated DOS at {lambda}"),
                hist.integrated_at(lambda)?,
                exact,
                cfg.tolerance,
            ));
        }
    }
    let curve = if cfg.s_grid.is_empty() {
        None
    } else {
        let curve = laplace_of_histogram(&hist, &cfg.s_grid)?;
        if let Some(exact) = closed_laplace_curve(cfg)? {
            for (k, &s) in cfg.s_grid.iter().enumerate() {
                out.comparisons.push(Comparison::relative(
                    format!("eigencount Laplace at s={s}"),
                    curve.values[k],
                    exact.values[k],
                    cfg.tolerance,
                ));
            }
        }
        out.files
            .insert("laplace_eigencount.csv".into(), csv_bytes(|b| curve.write_csv(b))?);
        Some(curve)
    };
    out.files.insert("histogram.csv".into(), csv_bytes(|b| hist.write_csv(b))?);
    out.per_route.insert("eigencount".into(), route(curve, &hist)?);
    Ok(out)
}

fn run_projection(cfg: &ExperimentConfig) -> Result<Outcome> {
    let op = cfg.operator()?;
    let interval = cfg.interval.expect("validated");
    let radii = cfg.radii.as_deref().expect("validated");
    let proj = projection_dos(&op, interval, radii, &cfg.spectral())?;
    let mut out = Outcome::default();
    let d = cfg.grid.dim;
    let lo = closed_form_integrated_dos(&cfg.potential, d, interval.0.next_down())?;
    let hi = closed_form_integrated_dos(&cfg.potential, d, interval.1.next_down())?;
    if let (Some(lo), Some(hi)) = (lo, hi) {
        for (k, &r) in radii.iter().enumerate() {
            if !proj.flagged[k] {
                out.comparisons.push(Comparison::relative(
                    format!("projection DOS at R={r}"),
                    proj.values[k],
                    hi - lo,
                    cfg.tolerance,
                ));
            }
        }
    }
    out.files.insert(
        "projection.csv".into(),
        csv_bytes(|b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["R", "value", "flagged"])?;
            for k in 0..proj.radii.len() {
                w.write_record([
                    format_real(proj.radii[k]),
                    format_real(proj.values[k]),
                    proj.flagged[k].to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })?,
    );
    out.per_route.insert("projection".into(), route(None, &proj)?);
    Ok(out)
}

fn residue_csv(fits: &[crate::dos::ResidueFit]) -> Result<Vec<u8>> {
    csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["s", "r", "scaled", "truncation", "corrected"])?;
        for fit in fits {
            for k in 0..fit.r_grid.len() {
                w.write_record([
                    format_real(fit.s),
                    format_real(fit.r_grid[k]),
                    format_real(fit.scaled[k]),
                    format_real(fit.truncation[k]),
                    format_real(fit.corrected[k]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })
}

fn run_heat(cfg: &ExperimentConfig) -> Result<Outcome> {
    let op = cfg.operator()?;
    let fields = diagonals_for(&op, &cfg.s_grid, &cfg.diagonal_mode(), cfg.heat_tol)?;
    let exact = closed_laplace_curve(cfg)?;
    let mut out = Outcome::default();
    let n = cfg.s_grid.len();
    let (name, values, stderr, diagnostics) = if cfg.method == Method::HeatBall {
        let balls = fields
            .iter()
            .map(|f| ball_average_route(f, cfg.radii.as_deref(), cfg.ball_volume))
            .collect::<Result<Vec<_>>>()?;
        (
            "heat_ball",
            balls.iter().map(|b| b.extrapolated).collect::<Vec<_>>(),
            balls.iter().map(|b| b.value_stderr).collect::<Vec<_>>(),
            serde_json::to_value(&balls)?,
        )
    } else {
        let fits = fields
            .iter()
            .map(|f| residue_route(f, cfg.r_grid.as_deref()))
            .collect::<Result<Vec<_>>>()?;
        let omega = sphere_area(cfg.grid.dim)?;
        out.files.insert("residue.csv".into(), residue_csv(&fits)?);
        (
            "residue",
            fits.iter().map(|f| f.laplace_estimate).collect(),
            fits.iter().map(|f| f.limit_stderr / omega).collect(),
            serde_json::to_value(&fits)?,
        )
    };
    let curve = LaplaceCurve {
        s_grid: cfg.s_grid.clone(),
        values,
        stderr,
        tail_bound: vec![0.0; n],
        flagged: vec![false; n],
    };
    if let Some(exact) = exact {
        for (k, &s) in cfg.s_grid.iter().enumerate() {
            out.comparisons.push(Comparison::relative(
                format!("{name} Laplace at s={s}"),
                curve.values[k],
                exact.values[k],
                cfg.tolerance,
            ));
        }
    }
    out.files
        .insert(format!("laplace_{name}.csv"), csv_bytes(|b| curve.write_csv(b))?);
    out.per_route.insert(
        name.into(),
        RouteOutput {
            curve: Some(curve),
            diagnostics,
        },
    );
    Ok(out)
}

fn run_closed_form(cfg: &ExperimentConfig) -> Result<Outcome> {
    let curve = closed_laplace_curve(cfg)?.ok_or_else(|| {
        Error::InvalidArgument("no closed form for this potential".into())
    })?;
    let mut integrated = Vec::new();
    for &t in &cfg.check_points {
        integrated.push((t, closed_form_integrated_dos(&cfg.potential, cfg.grid.dim, t)?));
    }
    let mut out = Outcome::default();
    out.files
        .insert("laplace_closed_form.csv".into(), csv_bytes(|b| curve.write_csv(b))?);
    out.per_route
        .insert("closed_form".into(), route(Some(curve), integrated)?);
    Ok(out)
}

fn run_compare(cfg: &ExperimentConfig) -> Result<Outcome> {
    let ccfg = CompareConfig {
        grid: cfg.grid.clone(),
        potential: cfg.potential.clone(),
        s_grid: cfg.s_grid.clone(),
        r_grid: cfg.r_grid.clone(),
        radii: cfg.radii.clone(),
        bin_width: cfg.bins.as_ref().and_then(|b| b.width).expect("validated"),
        estimator: cfg.estimator,
        diagonal: cfg.diagonal_mode(),
        heat_tol: cfg.heat_tol,
        ball_volume: cfg.ball_volume,
        tolerance: cfg.tolerance,
    };
    let rep = compare_methods(&ccfg)?;
    let mut out = Outcome::default();
    for row in &rep.rows {
        for d in &row.deviations {
            out.comparisons.push(Comparison {
                label: format!("{} vs {} at s={}", d.first, d.second, row.s),
                value: d.value,
                reference: 0.0,
                deviation: d.value,
                tolerance: cfg.tolerance,
                pass: d.value <= cfg.tolerance,
            });
        }
    }
    let ball = rep.ball_curve();
    let residue = rep.residue_curve();
    out.files
        .insert("histogram.csv".into(), csv_bytes(|b| rep.histogram.write_csv(b))?);
    out.files.insert(
        "laplace_eigencount.csv".into(),
        csv_bytes(|b| rep.eigencount_curve.write_csv(b))?,
    );
    out.files
        .insert("laplace_heat_ball.csv".into(), csv_bytes(|b| ball.write_csv(b))?);
    out.files
        .insert("laplace_residue.csv".into(), csv_bytes(|b| residue.write_csv(b))?);
    out.files.insert("residue.csv".into(), residue_csv(&rep.residue)?);
    out.files.insert("compare.csv".into(), csv_bytes(|b| rep.write_csv(b))?);
    out.per_route.insert(
        "eigencount".into(),
        route(Some(rep.eigencount_curve.clone()), &rep.histogram)?,
    );
    out.per_route
        .insert("heat_ball".into(), route(Some(ball), &rep.ball)?);
    out.per_route
        .insert("residue".into(), route(Some(residue), &rep.residue)?);
    out.per_route.insert(
        "comparison".into(),
        route(
            None,
            serde_json::json!({
                "s_min": rep.s_min,
                "skipped_s": rep.skipped_s,
                "rows": rep.rows,
            }),
        )?,
    );
    Ok(out)
}

fn run_stability(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sec = cfg.stability.as_ref().expect("validated");
    let rep = stability_experiment(&StabilityConfig {
        dim: cfg.grid.dim,
        spacing: cfg.grid.spacing,
        half_widths: sec.half_widths.clone(),
        base: cfg.potential.clone(),
        perturbation: sec.perturbation.clone(),
        s_grid: cfg.s_grid.clone(),
        diagonal: cfg.diagonal_mode(),
        heat_tol: cfg.heat_tol,
        tolerance: cfg.tolerance,
    })?;
    let mut out = Outcome::default();
    out.comparisons.push(Comparison::bound(
        "relative difference on the largest box",
        rep.final_difference,
        cfg.tolerance,
    ));
    out.comparisons.push(Comparison {
        label: "difference decreases with L".into(),
        value: if rep.decreasing { 1.0 } else { 0.0 },
        reference: 1.0,
        deviation: if rep.decreasing { 0.0 } else { 1.0 },
        tolerance: 0.0,
        pass: rep.decreasing,
    });
    out.files.insert("stability.csv".into(), csv_bytes(|b| rep.write_csv(b))?);
    out.per_route.insert("stability".into(), route(None, &rep)?);
    Ok(out)
}

/// Number of singular values of `M_f (1-Δ)^{-d/2}` resolved by the lattice:
/// the Weyl law `μ(k) ≈ c∫f / k` meets the floor `max f · min multiplier`.
pub fn connes_resolved_rank(integral: f64, max_f: f64, min_multiplier: f64, dim: usize) -> Result<f64> {
    let c = sphere_area(dim)? / (dim as f64 * (2.0 * PI).powi(dim as i32));
    Ok(c * integral / (max_f * min_multiplier))
}

fn run_connes(cfg: &ExperimentConfig) -> Result<Outcome> {
    let symbol = cfg.connes.as_ref().map(|c| c.symbol).unwrap_or_default();
    let grid = cfg.grid.build()?;
    let d = grid.dim();
    let f = sample_potential(&cfg.potential, &grid)?;
    let integral: f64 = f.values().iter().sum::<f64>() * grid.volume_element();
    let c = sphere_area(d)? / (d as f64 * (2.0 * PI).powi(d as i32));
    let target = c * integral;
    let multiplier = torus_multiplier(&grid, symbol);
    let min_mult = multiplier.iter().copied().fold(f64::INFINITY, f64::min);
    let max_f = f.values().iter().map(|v| v.abs()).fold(0.0, f64::max);
    let rank = connes_resolved_rank(integral, max_f, min_mult, d)?;
    // powers of two in the last resolved decade
    let n_grid: Vec<usize> = (0..64)
        .map(|k| 1usize << k)
        .filter(|&n| n as f64 >= rank / 10.0 && n as f64 <= rank)
        .collect();
    if n_grid.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "only {rank:.0} singular values are resolved; refine the torus"
        )));
    }
    let m = connes_operator(&f, symbol, &cfg.spectral())?;
    let sv = singular_values(&m, &cfg.spectral())?;
    let trace = dixmier_partial_sums(&sv, &n_grid);
    let mut out = Outcome::default();
    out.comparisons.push(Comparison::relative(
        "extrapolated Dixmier trace",
        trace.limit_estimate,
        target,
        cfg.tolerance,
    ));
    let first = trace.sums[0];
    let last = trace.sums[trace.sums.len() - 1];
    let toward = trace.trend.is_monotone() && (last - target).abs() < (first - target).abs();
    out.comparisons.push(Comparison {
        label: "partial sums trend toward the trace".into(),
        value: last,
        reference: target,
        deviation: (last - target).abs(),
        tolerance: (first - target).abs(),
        pass: toward,
    });
    out.files
        .insert("singular_values.csv".into(), csv_bytes(|b| sv.write_csv(b))?);
    out.files
        .insert("partial_sums.csv".into(), csv_bytes(|b| trace.write_csv(b))?);
    out.per_route.insert(
        "connes".into(),
        route(
            None,
            serde_json::json!({
                "target": target,
                "integral": integral,
                "resolved_rank": rank,
                "partial_sums": trace,
            }),
        )?,
    );
    Ok(out)
}

fn run_cwikel(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sec = cfg.cwikel.as_ref().expect("validated");
    let ops = sec
        .half_widths
        .iter()
        .map(|&l| {
            let mut g = cfg.grid.clone();
            g.half_width = l;
            let grid = g.build()?;
            assemble_hamiltonian(&grid, &sample_potential(&cfg.potential, &grid)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let table = cwikel_table(&ops, sec.p, sec.z, &cfg.spectral())?;
    let mut out = Outcome::default();
    for row in &table.rows {
        if let Some(g) = row.growth_per_doubling {
            out.comparisons.push(Comparison::bound(
                format!("quasinorm growth per doubling at L={}", row.half_width),
                g - 1.0,
                cfg.tolerance,
            ));
        }
    }
    out.files.insert(
        "cwikel.csv".into(),
        csv_bytes(|b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["L", "matrix_dim", "quasinorm", "argmax", "growth_per_doubling"])?;
            for r in &table.rows {
                w.write_record([
                    format_real(r.half_width),
                    r.matrix_dim.to_string(),
                    format_real(r.quasinorm),
                    r.argmax.to_string(),
                    r.growth_per_doubling.map(format_real).unwrap_or_default(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })?,
    );
    out.per_route.insert("cwikel".into(), route(None, &table)?);
    Ok(out)
}

fn run_abelian(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sec = cfg.abelian.as_ref().expect("validated");
    let quad = sec.quadrature.unwrap_or_default();
    let r_grid = cfg.r_grid.as_deref().expect("validated");
    let radii = cfg.radii.as_deref().expect("validated");
    let mut out = Outcome::default();
    let mut reports = BTreeMap::new();
    let mut rows = Vec::new();
    for &func in &sec.functions {
        let rep = abelian_check(|t| func.eval(t), cfg.grid.dim, r_grid, radii, &quad)?;
        out.comparisons.push(Comparison::bound(
            format!("abelian discrepancy for {}", func.name()),
            rep.discrepancy / func.sup_norm(),
            cfg.tolerance,
        ));
        for (r, v) in rep.radii.iter().zip(&rep.ball) {
            rows.push([func.name().to_string(), "ball".into(), format_real(*r), format_real(*v)]);
        }
        for (r, v) in rep.r_grid.iter().zip(&rep.weighted) {
            rows.push([func.name().to_string(), "weighted".into(), format_real(*r), format_real(*v)]);
        }
        reports.insert(func.name().to_string(), rep);
    }
    out.files.insert(
        "abelian.csv".into(),
        csv_bytes(|b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["function", "side", "parameter", "value"])?;
            for r in &rows {
                w.write_record(r)?;
            }
            w.flush()?;
            Ok(())
        })?,
    );
    out.per_route.insert("abelian".into(), route(None, &reports)?);
    Ok(out)
}

fn base(name: &str, method: Method, grid: GridParams, potential: PotentialSpec) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        method,
        grid,
        potential,
        s_grid: Vec::new(),
        r_grid: None,
        radii: None,
        bins: None,
        check_points: Vec::new(),
        interval: None,
        estimator: CountEstimator::Bracketed,
        diagonal: None,
        heat_tol: DEFAULT_TOL,
        ball_volume: BallVolume::Continuum,
        dense_cap: None,
        tolerance: 0.05,
        seed: None,
        stability: None,
        connes: None,
        cwikel: None,
        abelian: None,
        output: Output::default(),
    }
}

fn dirichlet(dim: usize, half_width: f64, spacing: f64) -> GridParams {
    GridParams {
        dim,
        half_width,
        spacing,
        boundary: Boundary::Dirichlet,
    }
}

fn half_space(level: f64) -> PotentialSpec {
    PotentialSpec::HalfSpace {
        level,
        axis: 1,
        sign: Sign::Plus,
    }
}

/// Fully specified config of a named preset.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let cfg = match name {
        "example1-free" => ExperimentConfig {
            s_grid: vec![0.5, 1.0, 2.0],
            bins: Some(Bins {
                width: Some(0.1),
                edges: None,
            }),
            diagonal: Some(default_diagonal()),
            ..base(name, Method::Compare, dirichlet(2, 20.0, 0.25), PotentialSpec::Zero)
        },
        "thm-homogeneous" | "homogeneous-halfspace" => ExperimentConfig {
            check_points: vec![1.0, 3.0],
            s_grid: vec![1.0, 2.0],
            bins: Some(Bins {
                width: Some(0.1),
                edges: None,
            }),
            ..base(
                "thm-homogeneous",
                Method::Eigencount,
                dirichlet(2, 20.0, 0.25),
                half_space(2.0),
            )
        },
        "thm-stability" => ExperimentConfig {
            s_grid: vec![1.0, 2.0],
            diagonal: Some(DiagonalMode::Probing { epsilon: 1e-4 }),
            tolerance: 0.01,
            stability: Some(StabilitySection {
                half_widths: vec![10.0, 20.0, 40.0],
                perturbation: PotentialSpec::Bump {
                    amplitude: 5.0,
                    center: vec![0.0, 0.0],
                    radius: 2.0,
                    profile: BumpProfile::Gaussian,
                },
            }),
            ..base(name, Method::Stability, dirichlet(2, 40.0, 0.25), half_space(2.0))
        },
        "asymptotic-homogeneous" => ExperimentConfig {
            s_grid: vec![1.0, 2.0],
            bins: Some(Bins {
                width: Some(0.1),
                edges: None,
            }),
            diagonal: Some(default_diagonal()),
            ..base(
                name,
                Method::Compare,
                dirichlet(2, 16.0, 0.25),
                PotentialSpec::Sum {
                    terms: vec![
                        PotentialSpec::Homogeneous {
                            angular: crate::lattice::AngularTable::circle_from_fn(256, |t| {
                                1.0 + t.cos()
                            }),
                        },
                        PotentialSpec::Bump {
                            amplitude: 2.0,
                            center: vec![0.0, 0.0],
                            radius: 1.5,
                            profile: BumpProfile::Gaussian,
                        },
                    ],
                },
            )
        },
        "connes-check" => ExperimentConfig {
            tolerance: 0.10,
            connes: Some(ConnesSection {
                symbol: LaplacianSymbol::Spectral,
            }),
            ..base(
                name,
                Method::Connes,
                GridParams {
                    dim: 2,
                    half_width: 4.0,
                    spacing: 0.125,
                    boundary: Boundary::Periodic,
                },
                // unit mass
                PotentialSpec::Bump {
                    amplitude: 1.0 / PI,
                    center: vec![0.0, 0.0],
                    radius: 1.0,
                    profile: BumpProfile::Gaussian,
                },
            )
        },
        "cwikel-check" => ExperimentConfig {
            tolerance: 0.15,
            dense_cap: Some(10_000),
            cwikel: Some(CwikelSection {
                half_widths: vec![6.0, 12.0, 24.0],
                p: 1,
                z: (0.0, 1.0),
            }),
            ..base(name, Method::Cwikel, dirichlet(2, 6.0, 0.5), PotentialSpec::Zero)
        },
        "abelian-check" => ExperimentConfig {
            tolerance: 0.02,
            r_grid: Some(vec![1.2, 1.1, 1.05]),
            radii: Some(vec![100.0, 200.0, 400.0]),
            abelian: Some(AbelianSection {
                functions: vec![
                    AbelianFunction::One,
                    AbelianFunction::Gaussian,
                    AbelianFunction::Lorentzian,
                ],
                quadrature: None,
            }),
            ..base(name, Method::Abelian, dirichlet(2, 1.0, 0.5), PotentialSpec::Zero)
        },
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset `{name}`; known presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let text = cfg.to_json().unwrap();
            let back = ExperimentConfig::from_json(&text).unwrap();
            assert_eq!(back, cfg, "{name}");
            assert_eq!(back.to_json().unwrap(), text);
            assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        }
        assert_eq!(preset("homogeneous-halfspace").unwrap(), preset("thm-homogeneous").unwrap());
    }

    #[test]
    fn example1_fixture() {
        let cfg = preset("example1-free").unwrap();
        assert_eq!(cfg.grid.dim, 2);
        assert_eq!(cfg.grid.spacing, 0.25);
        assert_eq!(cfg.grid.half_width, 20.0);
        assert_eq!(cfg.s_grid, vec![0.5, 1.0, 2.0]);
        let stab = preset("thm-stability").unwrap();
        assert!(stab.stability.is_some());
    }

    #[test]
    fn unknown_preset_lists_names() {
        let err = preset("unknown").unwrap_err().to_string();
        assert!(err.contains("example1-free") && err.contains("abelian-check"));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = ExperimentConfig::from_json("{\n  \"name\": \"x\",\n  oops\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let mut cfg = preset("example1-free").unwrap();
        cfg.tolerance = 0.0;
        assert!(cfg.validate().is_err());
        cfg.tolerance = 0.05;
        cfg.diagonal = Some(DiagonalMode::Stochastic { probes: 4, seed: 1 });
        assert!(cfg.validate().is_err());
        assert!(cfg.with_seed(9).validate().is_ok());
    }

    #[test]
    fn seed_overrides_stochastic_mode() {
        let mut cfg = preset("example1-free").unwrap();
        cfg.diagonal = Some(DiagonalMode::Stochastic { probes: 4, seed: 1 });
        let cfg = cfg.with_seed(42);
        assert_eq!(
            cfg.diagonal_mode(),
            DiagonalMode::Stochastic { probes: 4, seed: 42 }
        );
    }

    fn small_stochastic() -> ExperimentConfig {
        ExperimentConfig {
            s_grid: vec![1.0],
            diagonal: Some(DiagonalMode::Stochastic { probes: 8, seed: 0 }),
            seed: Some(5),
            tolerance: 0.5,
            ..base(
                "small",
                Method::HeatBall,
                dirichlet(2, 8.0, 0.25),
                PotentialSpec::Random {
                    seed: 11,
                    amplitude: 1.0,
                    cell: 1.0,
                },
            )
        }
    }

    #[test]
    fn runs_are_byte_identical() {
        let cfg = small_stochastic();
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.files, b.files);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = run(&cfg.clone().with_seed(6)).unwrap();
        assert_ne!(a.files, c.files);
    }

    #[test]
    fn closed_form_method_and_eigencount_checks() {
        let mut cfg = base(
            "cf",
            Method::Closedform,
            dirichlet(2, 6.0, 0.5),
            half_space(2.0),
        );
        cfg.s_grid = vec![1.0];
        let rep = run(&cfg).unwrap();
        assert!(rep.pass);
        let v = rep.per_route["closed_form"].curve.as_ref().unwrap().values[0];
        assert!((v - (1.0 + (-2.0f64).exp()) / (8.0 * PI)).abs() < 1e-15);
        cfg.potential = PotentialSpec::Random {
            seed: 1,
            amplitude: 1.0,
            cell: 1.0,
        };
        assert!(run(&cfg).is_err());

        let mut eig = base("e", Method::Eigencount, dirichlet(2, 6.0, 0.25), PotentialSpec::Zero);
        eig.check_points = vec![2.0];
        eig.tolerance = 0.2;
        let rep = run(&eig).unwrap();
        assert_eq!(rep.comparisons.len(), 1);
        assert!(rep.files.contains_key("histogram.csv"));
    }

    #[test]
    fn report_files_written() {
        let rep = run(&small_stochastic()).unwrap();
        let dir = std::env::temp_dir().join(format!("doslab-report-{}", std::process::id()));
        let paths = rep.write_to(&dir).unwrap();
        assert!(paths.iter().any(|p| p.ends_with("report.json")));
        assert!(paths.iter().any(|p| p.ends_with("laplace_heat_ball.csv")));
        let text = fs::read_to_string(dir.join("report.json")).unwrap();
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["config_hash"], rep.config_hash);
        assert_eq!(json["version"], VERSION);
        fs::remove_dir_all(dir).unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn config_round_trips_bitwise(
            s in proptest::collection::vec(1e-3..10.0f64, 1..5),
            tol in 1e-6..1.0f64,
            l in 1.0..30.0f64,
            seed in any::<u64>(),
        ) {
            let mut cfg = preset("example1-free").unwrap();
            cfg.s_grid = s;
            cfg.tolerance = tol;
            cfg.grid.half_width = l;
            cfg.seed = Some(seed);
            let back: ExperimentConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
            prop_assert_eq!(back.s_grid.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            cfg.s_grid.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, cfg);
        }
    }
}
