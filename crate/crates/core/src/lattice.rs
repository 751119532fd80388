//! Cubic lattice truncations of ℝ^d, declarative potentials and the
//! finite-difference Hamiltonian `H = -Δ + V`.
//!
//! Lattice points are enumerated lexicographically in their integer
//! coordinates with the first axis slowest, so neighbours along the last
//! axis differ by one in the flat index and neighbours along axis 0 by
//! `n^(d-1)`. Dirichlet grids hold the `2L/h - 1` interior points of the
//! cube `(-L, L)` per axis; periodic grids hold `2L/h` points covering
//! `[-L, L)`.
//!
//! Positions are always computed as `integer offset * h`, so scaling a
//! lattice point by two lands bit-exactly on another lattice position.

use std::f64::consts::PI;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 3;

/// Hard cap on the number of lattice points of a single grid.
pub const MAX_POINTS: usize = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Dirichlet,
    Periodic,
}

/// Serializable grid parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub dim: usize,
    pub half_width: f64,
    pub spacing: f64,
    pub boundary: Boundary,
}

impl GridParams {
    pub fn build(&self) -> Result<Grid> {
        build_grid(self.dim, self.half_width, self.spacing, self.boundary)
    }
}

/// A cubic lattice truncation of ℝ^d.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    spacing: f64,
    boundary: Boundary,
    steps: usize,
    per_axis: usize,
}

/// Build a grid, checking that `half_width / spacing` is a positive integer.
pub fn build_grid(dim: usize, half_width: f64, spacing: f64, boundary: Boundary) -> Result<Grid> {
    if dim == 0 {
        return Err(Error::InvalidGrid("dimension must be at least 1".into()));
    }
    if dim > MAX_DIM {
        return Err(Error::InvalidGrid(format!(
            "dimension {dim} exceeds the supported maximum {MAX_DIM} (memory guard)"
        )));
    }
    if !(half_width.is_finite() && half_width > 0.0 && spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InvalidGrid(format!(
            "half_width and spacing must be positive and finite (got L = {half_width}, h = {spacing})"
        )));
    }
    let ratio = half_width / spacing;
    let steps = ratio.round();
    if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::InvalidGrid(format!(
            "half_width / spacing = {half_width} / {spacing} = {ratio} is not a positive integer"
        )));
    }
    let steps = steps as usize;
    let per_axis = match boundary {
        Boundary::Dirichlet => 2 * steps - 1,
        Boundary::Periodic => 2 * steps,
    };
    let total = (per_axis as f64).powi(dim as i32);
    if total > MAX_POINTS as f64 {
        return Err(Error::InvalidGrid(format!(
            "{per_axis}^{dim} lattice points exceed the cap of {MAX_POINTS}"
        )));
    }
    Ok(Grid {
        dim,
        half_width,
        spacing,
        boundary,
        steps,
        per_axis,
    })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn params(&self) -> GridParams {
        GridParams {
            dim: self.dim,
            half_width: self.half_width,
            spacing: self.spacing,
            boundary: self.boundary,
        }
    }

    /// Number of lattice points along each axis.
    pub fn points_per_axis(&self) -> usize {
        self.per_axis
    }

    /// Total number of lattice points.
    pub fn len(&self) -> usize {
        self.per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume element `h^d` attached to each lattice point.
    pub fn volume_element(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Volume `(2L)^d` of the truncation cube.
    pub fn box_volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.dim as i32)
    }

    /// Stride of axis `axis` in the flat index.
    pub fn stride(&self, axis: usize) -> usize {
        self.per_axis.pow((self.dim - 1 - axis) as u32)
    }

    pub fn multi_index(&self, index: usize) -> [usize; MAX_DIM] {
        let mut out = [0usize; MAX_DIM];
        let mut rest = index;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.per_axis;
            rest /= self.per_axis;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi[..self.dim]
            .iter()
            .fold(0, |acc, &k| acc * self.per_axis + k)
    }

    /// Signed integer offset of axis index `k` from the centre of the cube.
    pub fn offset(&self, k: usize) -> i64 {
        match self.boundary {
            Boundary::Dirichlet => k as i64 - (self.steps as i64 - 1),
            Boundary::Periodic => k as i64 - self.steps as i64,
        }
    }

    /// Position of a lattice point; unused trailing entries are zero.
    pub fn position(&self, index: usize) -> [f64; MAX_DIM] {
        let multi = self.multi_index(index);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = self.offset(multi[axis]) as f64 * self.spacing;
        }
        x
    }

    pub fn radius(&self, index: usize) -> f64 {
        let x = self.position(index);
        x[..self.dim].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Distance from a lattice point to the boundary of the cube
    /// (`+inf` on periodic grids).
    pub fn distance_to_boundary(&self, index: usize) -> f64 {
        if self.boundary == Boundary::Periodic {
            return f64::INFINITY;
        }
        let x = self.position(index);
        let max_abs = x[..self.dim].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.half_width - max_abs
    }

}

/// Sign selecting one side of a half-space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+", alias = "positive")]
    Plus,
    #[serde(rename = "-", alias = "negative")]
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpProfile {
    /// `A exp(-|x-c|^2 / r^2)`
    Gaussian,
    /// `A` on the open ball `|x-c| < r`
    Indicator,
}

/// Tabulated function on the unit sphere `S^{d-1}`.
///
/// * `two_point`: `S^0 = {-1, +1}` (d = 1).
/// * `circle`: values at angles `2πj/n`, nearest-angle lookup (d = 2).
/// * `lat_long`: values at `θ_i = π i/(n_theta-1)` (poles included) and
///   `φ_j = 2πj/n_phi`, row-major in `θ`, bilinear interpolation (d = 3).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case", deny_unknown_fields)]
pub enum AngularTable {
    TwoPoint {
        negative: f64,
        positive: f64,
    },
    Circle {
        values: Vec<f64>,
    },
    LatLong {
        n_theta: usize,
        n_phi: usize,
        values: Vec<f64>,
    },
}

impl AngularTable {
    /// Sample `f` on the nodes of a circle table.
    pub fn circle_from_fn(n: usize, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..n).map(|j| f(2.0 * PI * j as f64 / n as f64)).collect();
        AngularTable::Circle { values }
    }

    /// Sample `f(θ, φ)` on the nodes of a latitude-longitude table.
    pub fn lat_long_from_fn(n_theta: usize, n_phi: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_theta * n_phi);
        for i in 0..n_theta {
            let theta = PI * i as f64 / (n_theta - 1) as f64;
            for j in 0..n_phi {
                values.push(f(theta, 2.0 * PI * j as f64 / n_phi as f64));
            }
        }
        AngularTable::LatLong {
            n_theta,
            n_phi,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AngularTable::TwoPoint { .. } => 1,
            AngularTable::Circle { .. } => 2,
            AngularTable::LatLong { .. } => 3,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::InvalidPotential(format!(
                "angular table covers S^{} but the grid needs S^{}",
                self.dim() - 1,
                dim - 1
            )));
        }
        let values: &[f64] = match self {
            AngularTable::TwoPoint { negative, positive } => {
                if !(negative.is_finite() && positive.is_finite()) {
                    return Err(Error::InvalidPotential("non-finite angular value".into()));
                }
                return Ok(());
            }
            AngularTable::Circle { values } => {
                if values.is_empty() {
                    return Err(Error::InvalidPotential(
                        "circle table is empty and does not cover S^1".into(),
                    ));
                }
                values
            }
            AngularTable::LatLong {
                n_theta,
                n_phi,
                values,
            } => {
                if *n_theta < 2 || *n_phi < 1 || values.len() != n_theta * n_phi {
                    return Err(Error::InvalidPotential(format!(
                        "lat_long table needs n_theta >= 2 (poles), n_phi >= 1 and \
                         n_theta*n_phi values; got {n_theta} x {n_phi} with {} values",
                        values.len()
                    )));
                }
                values
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPotential("non-finite angular value".into()));
        }
        Ok(())
    }

    /// Value in the direction of `x` (need not be normalized, must be nonzero).
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            AngularTable::TwoPoint { negative, positive } => {
                if x[0] > 0.0 {
                    *positive
                } else {
                    *negative
                }
            }
            AngularTable::Circle { values } => {
                let n = values.len();
                let theta = x[1].atan2(x[0]);
                let j = (theta / (2.0 * PI) * n as f64).round() as i64;
                values[j.rem_euclid(n as i64) as usize]
            }
            AngularTable::LatLong {
                n_theta,
                n_phi,
                values,
            } => {
                let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                let theta = (x[2] / r).clamp(-1.0, 1.0).acos();
                let phi = x[1].atan2(x[0]).rem_euclid(2.0 * PI);
                let u = theta / PI * (*n_theta - 1) as f64;
                let i0 = (u.floor() as usize).min(n_theta - 2);
                let fu = u - i0 as f64;
                let v = phi / (2.0 * PI) * *n_phi as f64;
                let j0 = (v.floor() as usize) % n_phi;
                let j1 = (j0 + 1) % n_phi;
                let fv = v - v.floor();
                let at = |i: usize, j: usize| values[i * n_phi + j];
                (1.0 - fu) * ((1.0 - fv) * at(i0, j0) + fv * at(i0, j1))
                    + fu * ((1.0 - fv) * at(i0 + 1, j0) + fv * at(i0 + 1, j1))
            }
        }
    }

    /// Mean of the table over the sphere (surface-measure weighted).
    pub fn mean(&self) -> f64 {
        match self {
            AngularTable::TwoPoint { negative, positive } => 0.5 * (negative + positive),
            AngularTable::Circle { values } => values.iter().sum::<f64>() / values.len() as f64,
            AngularTable::LatLong {
                n_theta,
                n_phi,
                values,
            } => {
                // trapezoid in θ with sin θ weights
                let mut num = 0.0;
                let mut den = 0.0;
                for i in 0..*n_theta {
                    let theta = PI * i as f64 / (*n_theta - 1) as f64;
                    let edge = if i == 0 || i == n_theta - 1 { 0.5 } else { 1.0 };
                    let w = edge * theta.sin();
                    let row: f64 = values[i * n_phi..(i + 1) * n_phi].iter().sum();
                    num += w * row;
                    den += w * *n_phi as f64;
                }
                if den > 0.0 {
                    num / den
                } else {
                    values.iter().sum::<f64>() / values.len() as f64
                }
            }
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        match self {
            AngularTable::TwoPoint { negative, positive } => {
                (negative.min(*positive), negative.max(*positive))
            }
            AngularTable::Circle { values } | AngularTable::LatLong { values, .. } => values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                }),
        }
    }
}

/// Declarative description of a bounded real potential.
///
/// Serialized as a JSON object with a `"kind"` discriminator, e.g.
/// `{"kind": "half_space", "level": 2.0, "axis": 1, "sign": "+"}`.
/// `axis` is 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Zero,
    Constant {
        value: f64,
    },
    HalfSpace {
        level: f64,
        axis: usize,
        sign: Sign,
    },
    Homogeneous {
        angular: AngularTable,
    },
    Periodic {
        cell: Vec<f64>,
        shape: Vec<usize>,
        samples: Vec<f64>,
    },
    Bump {
        amplitude: f64,
        center: Vec<f64>,
        radius: f64,
        profile: BumpProfile,
    },
    Random {
        seed: u64,
        amplitude: f64,
        cell: f64,
    },
    Sum {
        terms: Vec<PotentialSpec>,
    },
}

impl PotentialSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidPotential(format!("{what} must be finite")))
            }
        };
        match self {
            PotentialSpec::Zero => Ok(()),
            PotentialSpec::Constant { value } => finite(*value, "constant value"),
            PotentialSpec::HalfSpace { level, axis, .. } => {
                finite(*level, "half-space level")?;
                if *axis == 0 || *axis > dim {
                    return Err(Error::InvalidPotential(format!(
                        "half-space axis {axis} outside 1..={dim}"
                    )));
                }
                Ok(())
            }
            PotentialSpec::Homogeneous { angular } => angular.validate(dim),
            PotentialSpec::Periodic {
                cell,
                shape,
                samples,
            } => {
                if cell.len() != dim || shape.len() != dim {
                    return Err(Error::InvalidPotential(format!(
                        "periodic cell/shape must have {dim} entries"
                    )));
                }
                if cell.iter().any(|c| !(c.is_finite() && *c > 0.0)) || shape.contains(&0) {
                    return Err(Error::InvalidPotential(
                        "periodic cell lengths and shape must be positive".into(),
                    ));
                }
                let expected: usize = shape.iter().product();
                if samples.len() != expected {
                    return Err(Error::InvalidPotential(format!(
                        "periodic potential expects {expected} samples, got {}",
                        samples.len()
                    )));
                }
                samples.iter().try_for_each(|&v| finite(v, "periodic sample"))
            }
            PotentialSpec::Bump {
                amplitude,
                center,
                radius,
                ..
            } => {
                finite(*amplitude, "bump amplitude")?;
                if center.len() != dim {
                    return Err(Error::InvalidPotential(format!(
                        "bump centre must have {dim} coordinates"
                    )));
                }
                center.iter().try_for_each(|&v| finite(v, "bump centre"))?;
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidPotential("bump radius must be positive".into()));
                }
                Ok(())
            }
            PotentialSpec::Random {
                amplitude, cell, ..
            } => {
                finite(*amplitude, "random amplitude")?;
                if !(cell.is_finite() && *cell > 0.0) {
                    return Err(Error::InvalidPotential("random cell must be positive".into()));
                }
                Ok(())
            }
            PotentialSpec::Sum { terms } => terms.iter().try_for_each(|t| t.validate(dim)),
        }
    }

    /// Pointwise value at `x` (length = dimension). Homogeneous potentials
    /// take their angular mean at the origin; half-spaces take the midpoint
    /// `level/2` on the separating plane.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        match self {
            PotentialSpec::Zero => 0.0,
            PotentialSpec::Constant { value } => *value,
            PotentialSpec::HalfSpace { level, axis, sign } => {
                let c = x[axis - 1] * sign.factor();
                if c > 0.0 {
                    *level
                } else if c == 0.0 {
                    0.5 * level
                } else {
                    0.0
                }
            }
            PotentialSpec::Homogeneous { angular } => {
                if x.iter().all(|&v| v == 0.0) {
                    angular.mean()
                } else {
                    angular.eval(x)
                }
            }
            PotentialSpec::Periodic {
                cell,
                shape,
                samples,
            } => {
                let mut flat = 0usize;
                for (i, &xi) in x.iter().enumerate() {
                    let frac = xi.rem_euclid(cell[i]) / cell[i];
                    let k = ((frac * shape[i] as f64).floor() as usize).min(shape[i] - 1);
                    flat = flat * shape[i] + k;
                }
                samples[flat]
            }
            PotentialSpec::Bump {
                amplitude,
                center,
                radius,
                profile,
            } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                match profile {
                    BumpProfile::Gaussian => amplitude * (-r2 / (radius * radius)).exp(),
                    BumpProfile::Indicator => {
                        if r2 < radius * radius {
                            *amplitude
                        } else {
                            0.0
                        }
                    }
                }
            }
            PotentialSpec::Random {
                seed,
                amplitude,
                cell,
            } => {
                let mut cell_index = [0i64; MAX_DIM];
                for (i, &xi) in x.iter().enumerate() {
                    cell_index[i] = (xi / cell).floor() as i64;
                }
                amplitude * (2.0 * uniform_for_cell(*seed, &cell_index[..x.len()]) - 1.0)
            }
            PotentialSpec::Sum { terms } => terms.iter().map(|t| t.value_at(x)).sum(),
        }
    }
}

/// Counter-based uniform[0,1) value keyed by `(seed, cell)`.
fn uniform_for_cell(seed: u64, cell: &[i64]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(cell));
    rng.gen::<f64>()
}

/// Pack up to three signed cell indices (|k| < 2^20) into a stream id.
pub(crate) fn stream_id(cell: &[i64]) -> u64 {
    cell.iter().fold(0u64, |acc, &k| {
        let zigzag = ((k << 1) ^ (k >> 63)) as u64;
        (acc << 21) | (zigzag & 0x1F_FFFF)
    })
}

/// Potential values sampled on the points of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    grid: Grid,
    values: Vec<f64>,
}

impl PotentialField {
    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "field has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPotential("non-finite potential value".into()));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `‖V‖_∞` over the lattice.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Field shifted by a constant.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }
}

/// Sample a potential pointwise on the lattice.
pub fn sample_potential(spec: &PotentialSpec, grid: &Grid) -> Result<PotentialField> {
    spec.validate(grid.dim())?;
    let d = grid.dim();
    let values = (0..grid.len())
        .map(|i| spec.value_at(&grid.position(i)[..d]))
        .collect();
    PotentialField::from_values(grid, values)
}

/// Symmetric sparse matrix of the discretized `H = -Δ + V` (CSR, both
/// triangles stored).
#[derive(Clone, Debug)]
pub struct SparseOperator {
    grid: Grid,
    potential: Vec<f64>,
    reflecting: bool,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    enclosure: (f64, f64),
}

/// Assemble the `(2d+1)`-point finite-difference `-Δ` plus the diagonal `V`.
pub fn assemble_hamiltonian(grid: &Grid, potential: &PotentialField) -> Result<SparseOperator> {
    if potential.grid() != grid {
        return Err(Error::GridMismatch(format!(
            "potential sampled on {:?}, operator requested on {:?}",
            potential.grid().params(),
            grid.params()
        )));
    }
    Ok(SparseOperator::build(grid, potential.values().to_vec(), false))
}

impl SparseOperator {
    fn build(grid: &Grid, potential: Vec<f64>, reflecting: bool) -> Self {
        let d = grid.dim();
        let n = grid.points_per_axis();
        let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
        let stencil_diag = 2.0 * d as f64 * inv_h2;
        let len = grid.len();
        let mut row_ptr = Vec::with_capacity(len + 1);
        let mut cols = Vec::with_capacity(len * (2 * d + 1));
        let mut vals = Vec::with_capacity(len * (2 * d + 1));
        row_ptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * d + 1);
        for i in 0..len {
            row.clear();
            let multi = grid.multi_index(i);
            let mut missing = 0usize;
            for axis in 0..d {
                let stride = grid.stride(axis);
                let k = multi[axis];
                match grid.boundary() {
                    Boundary::Dirichlet => {
                        if k > 0 {
                            row.push((i - stride, -inv_h2));
                        } else {
                            missing += 1;
                        }
                        if k + 1 < n {
                            row.push((i + stride, -inv_h2));
                        } else {
                            missing += 1;
                        }
                    }
                    Boundary::Periodic => {
                        let down = if k > 0 { i - stride } else { i + (n - 1) * stride };
                        let up = if k + 1 < n { i + stride } else { i - (n - 1) * stride };
                        row.push((down, -inv_h2));
                        row.push((up, -inv_h2));
                    }
                }
            }
            let diag = if reflecting {
                (stencil_diag - missing as f64 * inv_h2) + potential[i]
            } else {
                stencil_diag + potential[i]
            };
            row.push((i, diag));
            row.sort_by_key(|&(j, _)| j);
            // merge duplicates (periodic axes with two points)
            let mut last: Option<usize> = None;
            for &(j, v) in row.iter() {
                if last == Some(j) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    vals.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(cols.len());
        }
        let vmin = potential.iter().copied().fold(f64::INFINITY, f64::min);
        let vmax = potential.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let enclosure = (vmin, 2.0 * stencil_diag + vmax);
        Self {
            grid: grid.clone(),
            potential,
            reflecting,
            row_ptr,
            cols,
            vals,
            enclosure,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Matrix size `N`.
    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// Whether boundary rows use the reflecting (Neumann-type) stencil.
    pub fn is_reflecting(&self) -> bool {
        self.reflecting
    }

    /// Interval `[λ_lo, λ_hi]` containing the whole spectrum.
    pub fn spectral_enclosure(&self) -> (f64, f64) {
        self.enclosure
    }

    /// `h^d`.
    pub fn volume_element(&self) -> f64 {
        self.grid.volume_element()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(pos) => self.vals[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entry(i, i)).collect()
    }

    /// Largest `|i - j|` over stored entries.
    pub fn half_bandwidth(&self) -> usize {
        (0..self.dim())
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// `y = H x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        for (i, yi) in y.iter_mut().enumerate() {
            let span = self.row_ptr[i]..self.row_ptr[i + 1];
            let mut acc = 0.0;
            for (&j, &v) in self.cols[span.clone()].iter().zip(&self.vals[span]) {
                acc += v * x[j];
            }
            *yi = acc;
        }
    }

    /// Union of the Gershgorin discs.
    pub fn gershgorin(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.dim() {
            let mut center = 0.0;
            let mut radius = 0.0;
            for (j, v) in self.row(i) {
                if i == j {
                    center = v;
                } else {
                    radius += v.abs();
                }
            }
            lo = lo.min(center - radius);
            hi = hi.max(center + radius);
        }
        (lo, hi)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.dim()).all(|i| self.row(i).all(|(j, v)| self.entry(j, i) == v))
    }

    /// `H + cI`, realized as the same stencil with potential `V + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let potential = self.potential.iter().map(|v| v + c).collect();
        Self::build(&self.grid, potential, self.reflecting)
    }

    /// Same potential with reflecting boundary rows: the diagonal of each
    /// boundary row loses `1/h^2` per missing neighbour (ghost value equal to
    /// the boundary value). Its eigenvalue count bounds the Dirichlet count
    /// from above.
    pub fn reflecting_boundary(&self) -> Result<Self> {
        if self.grid.boundary() != Boundary::Dirichlet {
            return Err(Error::InvalidArgument(
                "reflecting boundary rows only apply to Dirichlet grids".into(),
            ));
        }
        Ok(Self::build(&self.grid, self.potential.clone(), true))
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let n = self.dim();
        let mut m = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid2(l: f64, h: f64) -> Grid {
        build_grid(2, l, h, Boundary::Dirichlet).unwrap()
    }

    #[test]
    fn grid_point_counts() {
        let g = build_grid(1, 4.0, 1.0, Boundary::Dirichlet).unwrap();
        assert_eq!(g.len(), 7);
        let g = build_grid(2, 8.0, 0.5, Boundary::Dirichlet).unwrap();
        assert_eq!(g.points_per_axis(), 31);
        assert_eq!(g.len(), 31 * 31);
        let g = build_grid(2, 8.0, 0.5, Boundary::Periodic).unwrap();
        assert_eq!(g.points_per_axis(), 32);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        let err = build_grid(2, 8.0, 0.3, Boundary::Dirichlet).unwrap_err();
        assert!(err.to_string().contains("not a positive integer"), "{err}");
        assert!(build_grid(4, 2.0, 1.0, Boundary::Dirichlet).is_err());
        assert!(build_grid(0, 2.0, 1.0, Boundary::Dirichlet).is_err());
        assert!(build_grid(2, -1.0, 1.0, Boundary::Dirichlet).is_err());
    }

    #[test]
    fn points_lie_inside_open_cube() {
        let g = build_grid(3, 2.0, 0.5, Boundary::Dirichlet).unwrap();
        for i in 0..g.len() {
            let x = g.position(i);
            assert!(x.iter().all(|v| v.abs() < 2.0));
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
        }
        // lexicographic, first axis slowest
        assert_eq!(g.position(1)[2] - g.position(0)[2], 0.5);
        assert_eq!(g.stride(0), 49);
    }

    #[test]
    fn simple_potentials() {
        let g = grid2(4.0, 1.0);
        let zero = sample_potential(&PotentialSpec::Zero, &g).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let c = sample_potential(&PotentialSpec::Constant { value: 3.5 }, &g).unwrap();
        assert!(c.values().iter().all(|&v| v == 3.5));
        let hs = PotentialSpec::HalfSpace {
            level: 2.0,
            axis: 1,
            sign: Sign::Plus,
        };
        assert_eq!(hs.value_at(&[1.0, 1.0]), 2.0);
        assert_eq!(hs.value_at(&[-1.0, 1.0]), 0.0);
        assert_eq!(hs.value_at(&[0.0, 1.0]), 1.0);
    }

    #[test]
    fn angular_table_must_cover_sphere() {
        let g = grid2(4.0, 1.0);
        let empty = PotentialSpec::Homogeneous {
            angular: AngularTable::Circle { values: vec![] },
        };
        assert!(sample_potential(&empty, &g).is_err());
        let wrong_dim = PotentialSpec::Homogeneous {
            angular: AngularTable::lat_long_from_fn(5, 8, |_, _| 1.0),
        };
        assert!(sample_potential(&wrong_dim, &g).is_err());
    }

    #[test]
    fn homogeneous_origin_takes_angular_mean() {
        let g = grid2(4.0, 1.0);
        let spec = PotentialSpec::Homogeneous {
            angular: AngularTable::Circle {
                values: vec![1.0, 2.0, 3.0, 6.0],
            },
        };
        let f = sample_potential(&spec, &g).unwrap();
        let origin = g.len() / 2;
        assert_eq!(g.radius(origin), 0.0);
        assert_eq!(f.values()[origin], 3.0);
    }

    #[test]
    fn free_stencil_rows() {
        let g = build_grid(2, 4.0, 1.0, Boundary::Dirichlet).unwrap();
        let op = assemble_hamiltonian(&g, &sample_potential(&PotentialSpec::Zero, &g).unwrap())
            .unwrap();
        assert!(op.diagonal().iter().all(|&v| v == 4.0));
        for i in 0..op.dim() {
            if g.distance_to_boundary(i) > 1.0 {
                assert_eq!(op.row(i).map(|(_, v)| v).sum::<f64>(), 0.0);
                assert_eq!(op.row(i).count(), 5);
            }
        }
        assert_eq!(op.spectral_enclosure(), (0.0, 8.0));
    }

    #[test]
    fn grid_mismatch_rejected() {
        let a = grid2(4.0, 1.0);
        let b = grid2(4.0, 0.5);
        let v = sample_potential(&PotentialSpec::Zero, &a).unwrap();
        assert!(matches!(
            assemble_hamiltonian(&b, &v),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn periodic_two_point_axis_merges_neighbours() {
        let g = build_grid(1, 1.0, 1.0, Boundary::Periodic).unwrap();
        let op = assemble_hamiltonian(&g, &sample_potential(&PotentialSpec::Zero, &g).unwrap())
            .unwrap();
        assert_eq!(op.entry(0, 1), -2.0);
        assert_eq!(op.entry(0, 0), 2.0);
    }

    #[test]
    fn reflecting_rows_sum_to_zero() {
        let g = grid2(3.0, 1.0);
        let op = assemble_hamiltonian(&g, &sample_potential(&PotentialSpec::Zero, &g).unwrap())
            .unwrap()
            .reflecting_boundary()
            .unwrap();
        for i in 0..op.dim() {
            assert!(op.row(i).map(|(_, v)| v).sum::<f64>().abs() < 1e-15);
        }
        assert!(op.is_symmetric());
    }

    #[test]
    fn potential_spec_json_schema() {
        let spec: PotentialSpec = serde_json::from_str(
            r#"{"kind":"sum","terms":[
                {"kind":"half_space","level":2.0,"axis":1,"sign":"+"},
                {"kind":"bump","amplitude":5.0,"center":[0.0,0.0],"radius":2.0,"profile":"gaussian"},
                {"kind":"homogeneous","angular":{"layout":"circle","values":[0.0,1.0]}}
            ]}"#,
        )
        .unwrap();
        spec.validate(2).unwrap();
        let back: PotentialSpec =
            serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<PotentialSpec>(r#"{"kind":"nope"}"#).is_err());
    }

    fn arb_spec() -> impl Strategy<Value = PotentialSpec> {
        let leaf = prop_oneof![
            Just(PotentialSpec::Zero),
            (-5.0..5.0f64).prop_map(|value| PotentialSpec::Constant { value }),
            (-3.0..3.0f64, 1usize..=2, any::<bool>()).prop_map(|(level, axis, s)| {
                PotentialSpec::HalfSpace {
                    level,
                    axis,
                    sign: if s { Sign::Plus } else { Sign::Minus },
                }
            }),
            prop::collection::vec(-2.0..2.0f64, 1..12).prop_map(|values| {
                PotentialSpec::Homogeneous {
                    angular: AngularTable::Circle { values },
                }
            }),
            (0.1..4.0f64, -2.0..2.0f64, 0.5..3.0f64).prop_map(|(a, c, r)| PotentialSpec::Bump {
                amplitude: a,
                center: vec![c, -c],
                radius: r,
                profile: BumpProfile::Gaussian,
            }),
            (any::<u64>(), 0.1..3.0f64, 0.5..2.0f64).prop_map(|(seed, amplitude, cell)| {
                PotentialSpec::Random {
                    seed,
                    amplitude,
                    cell,
                }
            }),
        ];
        leaf.prop_recursive(2, 6, 3, |inner| {
            prop::collection::vec(inner, 1..3).prop_map(|terms| PotentialSpec::Sum { terms })
        })
    }

    proptest! {
        #[test]
        fn assembled_operator_is_symmetric_and_enclosed(
            spec in arb_spec(),
            steps in 2usize..6,
            periodic in any::<bool>(),
        ) {
            let boundary = if periodic { Boundary::Periodic } else { Boundary::Dirichlet };
            let g = build_grid(2, steps as f64 * 0.5, 0.5, boundary).unwrap();
            let v = sample_potential(&spec, &g).unwrap();
            prop_assert!(v.sup_norm().is_finite());
            let op = assemble_hamiltonian(&g, &v).unwrap();
            prop_assert!(op.is_symmetric());
            let (glo, ghi) = op.gershgorin();
            let (lo, hi) = op.spectral_enclosure();
            prop_assert!(glo >= lo - 1e-12 && ghi <= hi + 1e-12);
        }

        #[test]
        fn shift_covariance_is_exact(spec in arb_spec(), c in -4.0..4.0f64) {
            let g = grid2(2.0, 0.5);
            let v = sample_potential(&spec, &g).unwrap();
            let a = assemble_hamiltonian(&g, &v.shifted(c)).unwrap();
            let b = assemble_hamiltonian(&g, &v).unwrap().shifted(c);
            prop_assert_eq!(&a.vals, &b.vals);
            prop_assert_eq!(&a.cols, &b.cols);
        }

        #[test]
        fn homogeneous_samples_are_scale_invariant(
            values in prop::collection::vec(-3.0..3.0f64, 1..40),
            three_d in any::<bool>(),
        ) {
            let (g, angular) = if three_d {
                let n_phi = values.len().max(1);
                let table = AngularTable::lat_long_from_fn(7, n_phi, |t, p| {
                    values[(p * 7.0 + t * 3.0) as usize % values.len()]
                });
                (build_grid(3, 4.0, 1.0, Boundary::Dirichlet).unwrap(), table)
            } else {
                (grid2(8.0, 1.0), AngularTable::Circle { values: values.clone() })
            };
            let spec = PotentialSpec::Homogeneous { angular };
            let field = sample_potential(&spec, &g).unwrap();
            let d = g.dim();
            let centre = (g.points_per_axis() - 1) / 2;
            for i in 0..g.len() {
                let m = g.multi_index(i);
                let mut doubled = [0usize; MAX_DIM];
                let mut inside = true;
                for axis in 0..d {
                    let k = 2 * m[axis] as i64 - centre as i64;
                    if k < 0 || k >= g.points_per_axis() as i64 { inside = false; break; }
                    doubled[axis] = k as usize;
                }
                if inside {
                    let j = g.flat_index(&doubled);
                    prop_assert_eq!(field.values()[i], field.values()[j]);
                }
            }
        }
    }
}
