use std::f64::consts::PI;

use doslab_core::dos::BallVolume;
use doslab_core::heat::DiagonalMode;
use doslab_core::{preset, run, Boundary, Error, ExperimentConfig, Method, PotentialSpec};

fn free_laplace(dim: usize, s: f64, shift: f64) -> f64 {
    (4.0 * PI * s).powf(-(dim as f64) / 2.0) * (-s * shift).exp()
}

fn small(method: Method, dim: usize, l: f64, h: f64, potential: PotentialSpec) -> ExperimentConfig {
    let mut cfg = preset("example1-free").unwrap();
    cfg.name = format!("{method:?}").to_lowercase();
    cfg.method = method;
    cfg.grid.dim = dim;
    cfg.grid.half_width = l;
    cfg.grid.spacing = h;
    cfg.potential = potential;
    cfg.s_grid = vec![1.0];
    cfg.diagonal = Some(DiagonalMode::Probing { epsilon: 1e-8 });
    cfg
}

#[test]
fn heat_ball_matches_constant_shift() {
    let cfg = small(Method::HeatBall, 2, 10.0, 0.25, PotentialSpec::Constant { value: 1.0 });
    let rep = run(&cfg).unwrap();
    let v = rep.per_route["heat_ball"].curve.as_ref().unwrap().values[0];
    let exact = free_laplace(2, 1.0, 1.0);
    // lattice dispersion plus finite-R extrapolation: within the route tolerance
    assert!((v / exact - 1.0).abs() < 0.05, "{v} vs {exact}");
    assert!(rep.pass);
}

#[test]
fn residue_matches_free_kernel_in_one_and_two_dimensions() {
    for (dim, l, h) in [(1, 20.0, 0.25), (2, 12.0, 0.25)] {
        let cfg = small(Method::Residue, dim, l, h, PotentialSpec::Zero);
        let rep = run(&cfg).unwrap();
        let v = rep.per_route["residue"].curve.as_ref().unwrap().values[0];
        let exact = free_laplace(dim, 1.0, 0.0);
        assert!((v / exact - 1.0).abs() < 0.05, "d={dim}: {v} vs {exact}");
        assert!(rep.files.contains_key("residue.csv"));
    }
}

#[test]
fn residue_without_bulk_is_an_error() {
    let cfg = small(Method::Residue, 2, 6.0, 0.5, PotentialSpec::Zero);
    assert!(matches!(run(&cfg), Err(Error::NoAdmissibleRadius(_))));
}

#[test]
fn periodic_heat_ball_matches_lattice_kernel() {
    let (l, h, s) = (8.0, 0.25, 1.0);
    let mut cfg = small(Method::HeatBall, 1, l, h, PotentialSpec::Zero);
    cfg.grid.boundary = Boundary::Periodic;
    cfg.ball_volume = BallVolume::LatticeCount;
    let rep = run(&cfg).unwrap();
    let v = rep.per_route["heat_ball"].curve.as_ref().unwrap().values[0];
    // e^{-sH}(x, x)/h on the ring of n points, summed over the discrete Fourier modes
    let n = (2.0 * l / h) as usize;
    let exact: f64 = (0..n)
        .map(|k| (-s * 4.0 / (h * h) * (PI * k as f64 / n as f64).sin().powi(2)).exp())
        .sum::<f64>()
        / (n as f64 * h);
    assert!((v / exact - 1.0).abs() < 1e-9, "{v} vs {exact}");
}

#[test]
fn stability_rows_cover_every_box() {
    let mut cfg = preset("thm-stability").unwrap();
    cfg.grid.spacing = 0.5;
    cfg.s_grid = vec![1.0];
    cfg.stability.as_mut().unwrap().half_widths = vec![8.0, 12.0];
    let rep = run(&cfg).unwrap();
    let csv = String::from_utf8(rep.files["stability.csv"].clone()).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("L,s,base,perturbed,relative_difference"));
}

#[test]
fn report_json_reproduces_the_config() {
    let cfg = small(Method::Eigencount, 2, 4.0, 0.5, PotentialSpec::Zero);
    let rep = run(&cfg).unwrap();
    let json = serde_json::to_string(&rep).unwrap();
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    let back = ExperimentConfig::from_json(&value["config"].to_string()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash().unwrap(), rep.config_hash);
}
