//! Closed-form limits against direct simulation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::{self, CurveOptions, Method, BOUNDARY_TOL};
use crate::floquet::{BandGrid, ThetaGrid};
use crate::lattice::{build_lattice, presets, Lattice, LatticeSpec, VertexId};
use crate::limits::{self, dist_moment};
use crate::state::StateVector;

/// Largest number of torus nodes a run may request.
pub const MAX_GRID_NODES: usize = 1 << 22;
pub const MAX_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSource {
    /// JSON state file.
    File(String),
    /// `delta` at the given 1-based vertex of cell 0.
    Delta(usize),
    /// Uniform state on sites `0..n` of Z^1.
    UniformZ1(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: String,
    /// Preset name or path to a lattice file.
    pub lattice: String,
    pub state: StateSource,
    pub m: u32,
    pub times: Vec<f64>,
    pub grid: usize,
    pub safety: f64,
    /// Fixed box radius in cells.
    pub radius: Option<i64>,
    /// `auto`, `dense` or `chebyshev`.
    pub method: String,
    pub tolerance: f64,
    /// Second-moment tolerance for distribution runs.
    pub moment_tolerance: f64,
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            subcommand: "compare".into(),
            lattice: "z1".into(),
            state: StateSource::Delta(1),
            m: 1,
            times: vec![25.0, 50.0, 75.0, 100.0],
            grid: 64,
            safety: 1.5,
            radius: None,
            method: "auto".into(),
            tolerance: 0.05,
            moment_tolerance: 0.05,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Parse { context: "run config".into(), source })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| Error::Parse {
            context: format!("run config {}", path.display()),
            source,
        })
    }

    pub fn method(&self) -> Result<Method> {
        parse_method(&self.method)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.m < 1 || self.m > limits::MAX_MOMENT {
            return Err(Error::InvalidParameter(format!("m = {} outside 1..={}", self.m, limits::MAX_MOMENT)));
        }
        check_grid(self.grid, dim)?;
        if self.times.is_empty() || self.times.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidParameter("times must be a nonempty list of positive values".into()));
        }
        if !(self.safety >= 1.0) {
            return Err(Error::InvalidParameter("safety must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) || !(self.moment_tolerance > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        self.method()?;
        Ok(())
    }

    fn curve_options(&self) -> Result<CurveOptions> {
        Ok(CurveOptions { safety: self.safety, radius: self.radius, method: self.method()?, ..CurveOptions::default() })
    }
}

pub fn parse_method(s: &str) -> Result<Method> {
    match s {
        "auto" => Ok(Method::Auto),
        "dense" => Ok(Method::Dense),
        "chebyshev" => Ok(Method::Chebyshev),
        other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
    }
}

/// `n` must be a power of two and `n^d` at most [`MAX_GRID_NODES`].
pub fn check_grid(n: usize, dim: usize) -> Result<()> {
    let nodes = (n as u128).checked_pow(dim as u32).unwrap_or(u128::MAX);
    if !n.is_power_of_two() || nodes > MAX_GRID_NODES as u128 {
        return Err(Error::InvalidParameter(format!(
            "grid {n} must be a power of two with {n}^{dim} <= {MAX_GRID_NODES}"
        )));
    }
    Ok(())
}

/// Preset name or lattice file.
pub fn load_lattice(source: &str) -> Result<Lattice> {
    let spec = match presets::by_name(source) {
        Some(spec) => spec,
        None => LatticeSpec::from_file(Path::new(source))?,
    };
    build_lattice(spec)
}

pub fn load_state(lattice: &Lattice, source: &StateSource) -> Result<StateVector> {
    let psi = match source {
        StateSource::File(path) => StateVector::from_file(Path::new(path))?,
        StateSource::Delta(i) => {
            if *i < 1 || *i > lattice.cell_size() {
                return Err(Error::InvalidParameter(format!("vertex {i} outside 1..={}", lattice.cell_size())));
            }
            StateVector::delta(VertexId::origin(lattice.dim(), i - 1))
        }
        StateSource::UniformZ1(n) => {
            if lattice.dim() != 1 || lattice.cell_size() != 1 {
                return Err(Error::InvalidParameter("uniform_z1 needs a one-vertex 1D lattice".into()));
            }
            StateVector::uniform_z1(*n)
        }
    };
    psi.check_against(lattice)?;
    Ok(psi)
}

/// True for the standard `Z^d`: one vertex per cell, identity basis, unit nearest-neighbour edges.
pub fn is_integer_lattice(lattice: &Lattice) -> bool {
    let d = lattice.dim();
    if lattice.cell_size() != 1 || lattice.edges().len() != 2 * d || lattice.potential().iter().any(|w| *w != 0.0) {
        return false;
    }
    let identity = lattice
        .basis()
        .iter()
        .enumerate()
        .all(|(i, row)| row.iter().enumerate().all(|(j, x)| *x == if i == j { 1.0 } else { 0.0 }));
    identity
        && lattice
            .edges()
            .iter()
            .all(|e| e.offset.iter().map(|x| x.abs()).sum::<i64>() == 1)
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool_version: String,
    pub lattice: String,
    pub grid: usize,
    pub radius: Vec<i64>,
    pub vertices: usize,
    pub boundary_mass: f64,
    pub tolerance: f64,
    pub boundary_tolerance: f64,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub closed_form: f64,
    /// Grid quadrature of the limit, also when `closed_form` is exact.
    pub quadrature: f64,
    /// `(t, ratio)` pairs; for distribution runs the ratio column holds the CDF distance.
    pub series: Vec<(f64, f64)>,
    pub final_rel_err: f64,
    /// Largest per-axis CDF distance (distribution runs).
    pub cdf_distance: Option<f64>,
    /// Second-moment gap (distribution runs).
    pub moment_gap: Option<f64>,
    pub pass: bool,
    pub provenance: Provenance,
}

fn provenance(config: &RunConfig, lattice: &Lattice, radius: Vec<i64>, vertices: usize, bm: f64) -> Provenance {
    Provenance {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        lattice: lattice.name().into(),
        grid: config.grid,
        radius,
        vertices,
        boundary_mass: bm,
        tolerance: config.tolerance,
        boundary_tolerance: BOUNDARY_TOL,
        config: config.clone(),
    }
}

/// Closed-form limit against `ballistic_curve` at the last time.
pub fn run_compare(config: &RunConfig) -> Result<CompareReport> {
    let lattice = load_lattice(&config.lattice)?;
    config.validate(lattice.dim())?;
    let psi = load_state(&lattice, &config.state)?;
    let bands = BandGrid::compute(&lattice, ThetaGrid::new(lattice.dim(), config.grid)?)?;
    let quadrature = limits::periodic_limit(&lattice, &bands, &psi, config.m)?;
    let closed_form = if is_integer_lattice(&lattice) {
        limits::zd_limit(&psi, lattice.dim(), config.m)?
    } else {
        quadrature
    };
    let curve = evolve::ballistic_curve(&lattice, &psi, config.m, &config.times, &config.curve_options()?)?;
    let last = curve.last().expect("times are nonempty");
    let bm = curve.iter().map(|p| p.boundary_mass).fold(0.0, f64::max);
    let final_rel_err = if closed_form.abs() > 0.0 {
        (last.ratio - closed_form).abs() / closed_form.abs()
    } else {
        last.ratio.abs()
    };
    Ok(CompareReport {
        closed_form,
        quadrature,
        series: curve.iter().map(|p| (p.t, p.ratio)).collect(),
        final_rel_err,
        cdf_distance: None,
        moment_gap: None,
        pass: final_rel_err <= config.tolerance && bm < BOUNDARY_TOL,
        provenance: provenance(config, &lattice, last.radius.clone(), last.vertices, bm),
    })
}

/// Limiting velocity law against the empirical law of `X_t / t` at each time.
pub fn run_dist_compare(config: &RunConfig) -> Result<CompareReport> {
    let lattice = load_lattice(&config.lattice)?;
    config.validate(lattice.dim())?;
    let psi = load_state(&lattice, &config.state)?.normalized()?;
    let bands = BandGrid::compute(&lattice, ThetaGrid::new(lattice.dim(), config.grid)?)?;
    let limit = limits::limit_distribution(&lattice, &bands, &psi)?;
    let limit_second = dist_moment(&limit, |v| v.iter().map(|x| x * x).sum());
    let marginals: Vec<_> = (0..lattice.dim()).map(|a| limit.marginal(a)).collect();
    let opts = config.curve_options()?;
    let mut series = Vec::new();
    let mut last = None;
    let mut bm: f64 = 0.0;
    for &t in &config.times {
        let ev = evolve::evolve_in_box(&lattice, &psi, t, &opts)?;
        let origin = vec![0.0; lattice.dim()];
        let emp = ev.empirical(&origin)?;
        let dist = (0..lattice.dim()).map(|a| emp.marginal(a).sup_distance(&marginals[a])).fold(0.0, f64::max);
        let gap = (emp.moment(1) - limit_second).abs();
        bm = bm.max(emp.leak);
        series.push((t, dist));
        last = Some((dist, gap, ev.op.cell_box().clone(), ev.op.len()));
    }
    let (dist, gap, cbox, vertices) = last.expect("times are nonempty");
    let radius = cbox.hi.iter().zip(&cbox.lo).map(|(h, l)| (h - l) / 2).collect();
    Ok(CompareReport {
        closed_form: limit_second,
        quadrature: limit_second,
        series,
        final_rel_err: gap / limit_second.abs().max(f64::MIN_POSITIVE),
        cdf_distance: Some(dist),
        moment_gap: Some(gap),
        pass: dist <= config.tolerance && gap <= config.moment_tolerance && bm < BOUNDARY_TOL,
        provenance: provenance(config, &lattice, radius, vertices, bm),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip_and_defaults() {
        let c = RunConfig::from_json(r#"{"lattice": "hexagonal", "state": {"delta": 2}, "times": [10]}"#).unwrap();
        assert_eq!(c.state, StateSource::Delta(2));
        assert_eq!(c.m, 1);
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        assert!(c.validate(1).is_ok());
        c.grid = 48;
        assert!(c.validate(1).is_err());
        c.grid = 4096;
        assert!(c.validate(1).is_ok());
        assert!(c.validate(2).is_err());
        c.grid = 64;
        c.m = 9;
        assert!(c.validate(1).is_err());
    }

    #[test]
    fn integer_lattice_detection() {
        assert!(is_integer_lattice(&load_lattice("z2").unwrap()));
        assert!(!is_integer_lattice(&load_lattice("triangular").unwrap()));
        assert!(!is_integer_lattice(&load_lattice("hexagonal").unwrap()));
    }

    #[test]
    fn missing_lattice_file_is_io_error() {
        assert!(matches!(load_lattice("/nonexistent/lattice.json"), Err(Error::Io(_))));
    }

    #[test]
    fn z1_compare_passes() {
        let c = RunConfig { times: vec![50.0, 100.0], ..RunConfig::default() };
        let r = run_compare(&c).unwrap();
        assert_eq!(r.closed_form, 2.0);
        assert!(r.pass, "{r:?}");
        assert!((r.quadrature - 2.0).abs() < 1e-10);
    }
}
