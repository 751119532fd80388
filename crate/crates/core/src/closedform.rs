//! Analytic reference values: sphere areas, free and homogeneous-potential
//! DOS and their Laplace transforms, and sphere quadrature.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::lattice::{AngularTable, PotentialSpec};

/// `ω_d = 2π^{d/2} / Γ(d/2)`, the area of `S^{d-1}`.
pub fn sphere_area(d: usize) -> Result<f64> {
    if d < 1 {
        return Err(Error::InvalidArgument("sphere_area needs d >= 1".into()));
    }
    let half = d as f64 / 2.0;
    Ok(2.0 * PI.powf(half) / gamma(half))
}

/// `|B(0,1)| = ω_d / d`.
pub fn unit_ball_volume(d: usize) -> Result<f64> {
    Ok(sphere_area(d)? / d as f64)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton on `P_n`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Quadrature rule on `S^{d-1}` with positive weights summing to `ω_d`.
///
/// * d = 1: the two points `±1`.
/// * d = 2: trapezoid at the offset angles `2π(j+½)/n`.
/// * d = 3: Gauss–Legendre in `cos θ` (`n` nodes) times the offset
///   trapezoid in `φ` (`2n` nodes).
///
/// With `n` a multiple of four no node lies on a coordinate hyperplane, and
/// nodes pair up symmetrically across each of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereQuadrature {
    dim: usize,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl SphereQuadrature {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("quadrature resolution must be positive".into()));
        }
        let (nodes, weights) = match dim {
            1 => (vec![vec![-1.0], vec![1.0]], vec![1.0, 1.0]),
            2 => {
                let w = 2.0 * PI / n as f64;
                (0..n)
                    .map(|j| {
                        let a = 2.0 * PI * (j as f64 + 0.5) / n as f64;
                        (vec![a.cos(), a.sin()], w)
                    })
                    .unzip()
            }
            3 => {
                let (z, wz) = gauss_legendre(n);
                let n_phi = 2 * n;
                let wphi = 2.0 * PI / n_phi as f64;
                let mut nodes = Vec::with_capacity(n * n_phi);
                let mut weights = Vec::with_capacity(n * n_phi);
                for (zi, wi) in z.iter().zip(&wz) {
                    let rho = (1.0 - zi * zi).sqrt();
                    for j in 0..n_phi {
                        let phi = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
                        nodes.push(vec![rho * phi.cos(), rho * phi.sin(), *zi]);
                        weights.push(wi * wphi);
                    }
                }
                (nodes, weights)
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "sphere quadrature implemented for d = 1, 2, 3 (got {dim})"
                )))
            }
        };
        Ok(Self {
            dim,
            nodes,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `∫_{S^{d-1}} f(ξ) dξ`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum()
    }
}

/// `ν_{H_0+c}((-∞, t]) = ω_d/(d(2π)^d) (t-c)_+^{d/2}`.
pub fn free_integrated_dos(d: usize, t: f64, c: f64) -> Result<f64> {
    let omega = sphere_area(d)?;
    let x = (t - c).max(0.0);
    Ok(omega / (d as f64 * (2.0 * PI).powi(d as i32)) * x.powf(d as f64 / 2.0))
}

/// `(4πs)^{-d/2} e^{-sc}`.
pub fn free_laplace(d: usize, s: f64, c: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("Laplace variable s = {s} must be > 0")));
    }
    Ok((4.0 * PI * s).powf(-(d as f64) / 2.0) * (-s * c).exp())
}

/// `(1/(d(2π)^d)) ∫_{S^{d-1}} (t - V(ξ))_+^{d/2} dξ`.
pub fn homogeneous_integrated_dos(
    angular: impl Fn(&[f64]) -> f64,
    quad: &SphereQuadrature,
    t: f64,
) -> f64 {
    let d = quad.dim();
    let half = d as f64 / 2.0;
    quad.integrate(|xi| (t - angular(xi)).max(0.0).powf(half))
        / (d as f64 * (2.0 * PI).powi(d as i32))
}

/// `(4πs)^{-d/2} (1/ω_d) ∫_{S^{d-1}} e^{-sV(ξ)} dξ`.
pub fn homogeneous_laplace(
    angular: impl Fn(&[f64]) -> f64,
    quad: &SphereQuadrature,
    s: f64,
) -> Result<f64> {
    let d = quad.dim();
    let base = free_laplace(d, s, 0.0)?;
    Ok(base * quad.integrate(|xi| (-s * angular(xi)).exp()) / sphere_area(d)?)
}

/// Integrated DOS of a half-space potential of level `a`: exactly half the
/// sphere sees each value.
pub fn half_space_integrated_dos(d: usize, level: f64, t: f64) -> Result<f64> {
    Ok(0.5 * (free_integrated_dos(d, t, 0.0)? + free_integrated_dos(d, t, level)?))
}

pub fn half_space_laplace(d: usize, level: f64, s: f64) -> Result<f64> {
    Ok(0.5 * (free_laplace(d, s, 0.0)? + free_laplace(d, s, level)?))
}

/// Radial limit `V_h(ξ) = lim_{R→∞} V(Rξ)` of a homogeneous-at-infinity
/// potential, or `None` for kinds that have no pointwise radial limit
/// (periodic, random).
fn radial_limit_exact(spec: &PotentialSpec, xi: &[f64]) -> Option<f64> {
    match spec {
        PotentialSpec::Zero => Some(0.0),
        PotentialSpec::Constant { value } => Some(*value),
        PotentialSpec::HalfSpace { .. } | PotentialSpec::Homogeneous { .. } => {
            Some(spec.value_at(xi))
        }
        PotentialSpec::Bump { .. } => Some(0.0),
        PotentialSpec::Sum { terms } => terms.iter().map(|t| radial_limit_exact(t, xi)).sum(),
        PotentialSpec::Periodic { .. } | PotentialSpec::Random { .. } => None,
    }
}

/// Closed-form Laplace transform `∫ e^{-sλ} dν_H(λ)` for potentials whose
/// DOS is determined by the radial limit (homogeneous kinds plus decaying
/// bumps). `None` when no closed form applies.
pub fn closed_form_laplace(spec: &PotentialSpec, d: usize, s: f64) -> Result<Option<f64>> {
    match spec {
        PotentialSpec::Zero => return free_laplace(d, s, 0.0).map(Some),
        PotentialSpec::Constant { value } => return free_laplace(d, s, *value).map(Some),
        PotentialSpec::HalfSpace { level, .. } => {
            return half_space_laplace(d, *level, s).map(Some)
        }
        _ => {}
    }
    let quad = SphereQuadrature::new(d, default_resolution(d))?;
    if quad.nodes().iter().any(|xi| radial_limit_exact(spec, xi).is_none()) {
        return Ok(None);
    }
    homogeneous_laplace(|xi| radial_limit_exact(spec, xi).unwrap_or(0.0), &quad, s).map(Some)
}

/// Closed-form integrated DOS, same scope as [`closed_form_laplace`].
pub fn closed_form_integrated_dos(spec: &PotentialSpec, d: usize, t: f64) -> Result<Option<f64>> {
    match spec {
        PotentialSpec::Zero => return free_integrated_dos(d, t, 0.0).map(Some),
        PotentialSpec::Constant { value } => return free_integrated_dos(d, t, *value).map(Some),
        PotentialSpec::HalfSpace { level, .. } => {
            return half_space_integrated_dos(d, *level, t).map(Some)
        }
        _ => {}
    }
    let quad = SphereQuadrature::new(d, default_resolution(d))?;
    if quad.nodes().iter().any(|xi| radial_limit_exact(spec, xi).is_none()) {
        return Ok(None);
    }
    Ok(Some(homogeneous_integrated_dos(
        |xi| radial_limit_exact(spec, xi).unwrap_or(0.0),
        &quad,
        t,
    )))
}

fn default_resolution(d: usize) -> usize {
    match d {
        1 => 1,
        2 => 2048,
        _ => 64,
    }
}

/// Settings for [`asymptotic_limit_potential`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialLimitConfig {
    pub start_radius: f64,
    pub max_doublings: usize,
    pub tolerance: f64,
    /// Consecutive small differences required to accept a limit.
    pub settle: usize,
}

impl Default for RadialLimitConfig {
    fn default() -> Self {
        Self {
            start_radius: 1.0,
            max_doublings: 60,
            tolerance: 1e-9,
            settle: 3,
        }
    }
}

/// Numerical radial limit `V_h(ξ) = lim V(Rξ)` on the nodes of an angular
/// table with `resolution` nodes (circle for d = 2; `resolution ×
/// 2·resolution` latitude-longitude for d = 3), evaluating `V(Rξ)` over
/// doublings of `R`.
pub fn asymptotic_limit_potential(
    spec: &PotentialSpec,
    dim: usize,
    resolution: usize,
    cfg: &RadialLimitConfig,
) -> Result<AngularTable> {
    spec.validate(dim)?;
    asymptotic_limit_of(|x| spec.value_at(x), dim, resolution, cfg)
}

/// [`asymptotic_limit_potential`] for an arbitrary pointwise function.
pub fn asymptotic_limit_of(
    potential: impl Fn(&[f64]) -> f64,
    dim: usize,
    resolution: usize,
    cfg: &RadialLimitConfig,
) -> Result<AngularTable> {
    let directions: Vec<Vec<f64>> = match dim {
        1 => vec![vec![-1.0], vec![1.0]],
        2 => (0..resolution)
            .map(|j| {
                let a = 2.0 * PI * j as f64 / resolution as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let n_theta = resolution.max(2);
            let n_phi = 2 * resolution;
            let mut out = Vec::new();
            for i in 0..n_theta {
                let theta = PI * i as f64 / (n_theta - 1) as f64;
                for j in 0..n_phi {
                    let phi = 2.0 * PI * j as f64 / n_phi as f64;
                    out.push(vec![
                        theta.sin() * phi.cos(),
                        theta.sin() * phi.sin(),
                        theta.cos(),
                    ]);
                }
            }
            out
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "radial limits implemented for d = 1, 2, 3 (got {dim})"
            )))
        }
    };
    let mut values = Vec::with_capacity(directions.len());
    for (node, xi) in directions.iter().enumerate() {
        values.push(radial_limit_at(&potential, node, xi, cfg)?);
    }
    Ok(match dim {
        1 => AngularTable::TwoPoint {
            negative: values[0],
            positive: values[1],
        },
        2 => AngularTable::Circle { values },
        _ => AngularTable::LatLong {
            n_theta: resolution.max(2),
            n_phi: 2 * resolution,
            values,
        },
    })
}

fn radial_limit_at(
    potential: &impl Fn(&[f64]) -> f64,
    node: usize,
    xi: &[f64],
    cfg: &RadialLimitConfig,
) -> Result<f64> {
    let at = |r: f64| {
        let x: Vec<f64> = xi.iter().map(|c| c * r).collect();
        potential(&x)
    };
    let mut r = cfg.start_radius;
    let mut prev = at(r);
    let mut calm = 0usize;
    let mut largest_late_jump = 0.0f64;
    for _ in 0..cfg.max_doublings {
        r *= 2.0;
        let cur = at(r);
        let jump = (cur - prev).abs();
        if jump < cfg.tolerance {
            calm += 1;
            if calm >= cfg.settle {
                return Ok(cur);
            }
        } else {
            calm = 0;
            largest_late_jump = jump;
        }
        prev = cur;
    }
    Err(Error::NoRadialLimit {
        node,
        direction: xi.to_vec(),
        detail: format!(
            "V(R·ξ) still moves by {largest_late_jump:.3e} between doublings up to R = {r:.3e}"
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{BumpProfile, Sign};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_area(2).unwrap(), 2.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(sphere_area(3).unwrap(), 4.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_area(1).unwrap(), 2.0, max_relative = 1e-14);
        assert!(sphere_area(0).is_err());
    }

    #[test]
    fn free_formulas() {
        assert_eq!(free_integrated_dos(2, -1.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(free_integrated_dos(2, 4.0 * PI, 0.0).unwrap(), 1.0, max_relative = 1e-14);
        assert_eq!(free_integrated_dos(2, 1.0, 1.0).unwrap(), 0.0);
        assert_relative_eq!(free_laplace(2, 1.0, 0.0).unwrap(), 0.079_577_471_545_947_67, max_relative = 1e-14);
        for d in 1..=3 {
            assert_relative_eq!(
                free_laplace(d, 1.0, 0.0).unwrap(),
                (4.0 * PI).powf(-(d as f64) / 2.0),
                max_relative = 1e-15
            );
        }
        let s = 1.7;
        assert_relative_eq!(
            free_laplace(2, s, 2f64.ln() / s).unwrap(),
            0.5 * free_laplace(2, s, 0.0).unwrap(),
            max_relative = 1e-14
        );
        assert!(free_laplace(2, 0.0, 0.0).is_err());
    }

    #[test]
    fn gauss_legendre_exactness() {
        let (x, w) = gauss_legendre(7);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, max_relative = 1e-14);
        // exact through degree 13
        let m12: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert_relative_eq!(m12, 2.0 / 13.0, max_relative = 1e-13);
    }

    #[test]
    fn quadrature_weights_and_degree_two() {
        for (d, n) in [(1, 1), (2, 8), (2, 33), (3, 6), (3, 11)] {
            let q = SphereQuadrature::new(d, n).unwrap();
            let omega = sphere_area(d).unwrap();
            assert_relative_eq!(q.weights().iter().sum::<f64>(), omega, max_relative = 1e-12);
            assert!(q.weights().iter().all(|&w| w > 0.0));
            // ∫ ξ_1² = ω_d / d and ∫ ξ_1 ξ_2 = 0
            let sq = q.integrate(|x| x[0] * x[0]);
            assert!((sq - omega / d as f64).abs() < 1e-10 * omega);
            if d > 1 {
                assert!(q.integrate(|x| x[0] * x[1]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn homogeneous_reductions() {
        let q = SphereQuadrature::new(2, 64).unwrap();
        for t in [0.5, 2.0, 7.0] {
            assert_relative_eq!(
                homogeneous_integrated_dos(|_| 0.0, &q, t),
                free_integrated_dos(2, t, 0.0).unwrap(),
                max_relative = 1e-14
            );
            assert_relative_eq!(
                homogeneous_integrated_dos(|_| 1.5, &q, t),
                free_integrated_dos(2, t, 1.5).unwrap(),
                max_relative = 1e-14
            );
        }
        assert_relative_eq!(
            homogeneous_laplace(|_| 0.0, &q, 2.0).unwrap(),
            free_laplace(2, 2.0, 0.0).unwrap(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            homogeneous_laplace(|_| 0.7, &q, 2.0).unwrap(),
            free_laplace(2, 2.0, 0.7).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn half_space_quadrature_is_exact() {
        let a = 2.0;
        let spec = PotentialSpec::HalfSpace {
            level: a,
            axis: 1,
            sign: Sign::Plus,
        };
        for (d, n) in [(2, 8), (2, 128), (3, 8)] {
            let q = SphereQuadrature::new(d, n).unwrap();
            for t in [1.0, 3.0] {
                let quad = homogeneous_integrated_dos(|xi| spec.value_at(xi), &q, t);
                let exact = half_space_integrated_dos(d, a, t).unwrap();
                assert_relative_eq!(quad, exact, max_relative = 1e-13);
            }
            let lap = homogeneous_laplace(|xi| spec.value_at(xi), &q, 1.0).unwrap();
            assert_relative_eq!(lap, half_space_laplace(d, a, 1.0).unwrap(), max_relative = 1e-13);
        }
        assert_relative_eq!(
            half_space_laplace(2, a, 1.0).unwrap(),
            (1.0 + (-a).exp()) / 2.0 / (4.0 * PI),
            max_relative = 1e-14
        );
    }

    #[test]
    fn closed_form_dispatch() {
        let bumped = PotentialSpec::Sum {
            terms: vec![
                PotentialSpec::HalfSpace {
                    level: 2.0,
                    axis: 1,
                    sign: Sign::Plus,
                },
                PotentialSpec::Bump {
                    amplitude: 5.0,
                    center: vec![0.0, 0.0],
                    radius: 2.0,
                    profile: BumpProfile::Gaussian,
                },
            ],
        };
        let a = closed_form_laplace(&bumped, 2, 1.0).unwrap().unwrap();
        assert_relative_eq!(a, half_space_laplace(2, 2.0, 1.0).unwrap(), max_relative = 1e-12);
        let random = PotentialSpec::Random {
            seed: 1,
            amplitude: 1.0,
            cell: 1.0,
        };
        assert!(closed_form_laplace(&random, 2, 1.0).unwrap().is_none());
    }

    /// Stieltjes-Laplace `∫ e^{-sλ} dN(λ) = s ∫ e^{-sλ} N(λ) dλ`
    /// by composite Simpson on `[λ0, λ0 + 60/s]`.
    fn laplace_of_counting(n: impl Fn(f64) -> f64, lambda0: f64, s: f64) -> f64 {
        let top = lambda0 + 60.0 / s;
        let m = 20_000;
        let step = (top - lambda0) / m as f64;
        let mut acc = 0.0;
        for k in 0..=m {
            let x = lambda0 + k as f64 * step;
            let w = if k == 0 || k == m {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * (-s * x).exp() * n(x);
        }
        s * acc * step / 3.0
    }

    #[test]
    fn laplace_of_integrated_dos_matches() {
        let q = SphereQuadrature::new(2, 256).unwrap();
        let family: Vec<Box<dyn Fn(&[f64]) -> f64>> = vec![
            Box::new(|_| 0.0),
            Box::new(|x| 1.0 + x[0]),
            Box::new(|x| (3.0 * x[1]).sin().abs()),
            Box::new(|x| if x[0] > 0.0 { 2.0 } else { 0.0 }),
        ];
        for f in &family {
            for s in [0.5, 1.0, 2.0] {
                let numeric = laplace_of_counting(|t| homogeneous_integrated_dos(f, &q, t), -1.0, s);
                let closed = homogeneous_laplace(f, &q, s).unwrap();
                assert!((numeric / closed - 1.0).abs() < 5e-3, "s={s}: {numeric} vs {closed}");
            }
        }
    }

    #[test]
    fn quadrature_refinement_is_stable() {
        let f = |x: &[f64]| (x[0] + 0.3 * x[1]).abs();
        for (d, n) in [(2, 64), (3, 32)] {
            let f3 = |x: &[f64]| f(x) + if d == 3 { x[2].abs() } else { 0.0 };
            let q1 = SphereQuadrature::new(d, n).unwrap();
            let q2 = SphereQuadrature::new(d, 2 * n).unwrap();
            let a = homogeneous_laplace(f3, &q1, 1.0).unwrap();
            let b = homogeneous_laplace(f3, &q2, 1.0).unwrap();
            assert!((a / b - 1.0).abs() < 1e-3, "d={d}: {a} vs {b}");
            let a = homogeneous_integrated_dos(f3, &q1, 3.0);
            let b = homogeneous_integrated_dos(f3, &q2, 3.0);
            assert!((a / b - 1.0).abs() < 1e-3, "d={d}: {a} vs {b}");
        }
    }

    #[test]
    fn radial_limits() {
        let table = AngularTable::circle_from_fn(16, |a| a.cos() + 2.0);
        let hom = PotentialSpec::Homogeneous {
            angular: table.clone(),
        };
        let cfg = RadialLimitConfig::default();
        assert_eq!(asymptotic_limit_potential(&hom, 2, 16, &cfg).unwrap(), table);

        let bumped = PotentialSpec::Sum {
            terms: vec![
                hom.clone(),
                PotentialSpec::Bump {
                    amplitude: 3.0,
                    center: vec![1.0, -1.0],
                    radius: 2.0,
                    profile: BumpProfile::Gaussian,
                },
            ],
        };
        let limit = asymptotic_limit_potential(&bumped, 2, 16, &cfg).unwrap();
        let (AngularTable::Circle { values: got }, AngularTable::Circle { values: want }) =
            (&limit, &table)
        else {
            unreachable!()
        };
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-9);
        }

        let radial_cos = |x: &[f64]| x.iter().map(|c| c * c).sum::<f64>().sqrt().cos();
        assert!(matches!(
            asymptotic_limit_of(radial_cos, 2, 8, &cfg),
            Err(Error::NoRadialLimit { node: 0, .. })
        ));
        let periodic = PotentialSpec::Periodic {
            cell: vec![3.0, 3.0],
            shape: vec![3, 3],
            samples: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        };
        match asymptotic_limit_potential(&periodic, 2, 8, &cfg) {
            Err(Error::NoRadialLimit { node, .. }) => assert!(node < 8),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn integrated_dos_monotone_and_vanishing(
            values in prop::collection::vec(-3.0..3.0f64, 4..24),
            t1 in -5.0..10.0f64,
            dt in 0.0..5.0f64,
        ) {
            let table = AngularTable::Circle { values: values.clone() };
            let q = SphereQuadrature::new(2, 64).unwrap();
            let f = |x: &[f64]| table.eval(x);
            let a = homogeneous_integrated_dos(f, &q, t1);
            let b = homogeneous_integrated_dos(f, &q, t1 + dt);
            prop_assert!(b >= a);
            let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(homogeneous_integrated_dos(f, &q, vmin), 0.0);
        }
    }
}
