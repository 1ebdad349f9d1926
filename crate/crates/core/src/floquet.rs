//! Bloch transform, fiber matrices, bands and group velocities.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::state::StateVector;

/// Eigenvalues closer than this are treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;
/// Step of the central finite difference used at degenerate points.
pub const FD_STEP: f64 = 1e-5;

/// Uniform grid on the torus `[0, 1)^d` with `N` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaGrid {
    pub dim: usize,
    pub resolution: usize,
}

impl ThetaGrid {
    pub fn new(dim: usize, resolution: usize) -> Result<Self> {
        if resolution == 0 || dim == 0 {
            return Err(Error::InvalidParameter("grid needs N >= 1 and d >= 1".into()));
        }
        Ok(ThetaGrid { dim, resolution })
    }

    pub fn len(&self) -> usize {
        self.resolution.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Node coordinates, row-major with the last axis fastest.
    pub fn node(&self, mut idx: usize) -> Vec<f64> {
        let n = self.resolution;
        let mut theta = vec![0.0; self.dim];
        for k in (0..self.dim).rev() {
            theta[k] = (idx % n) as f64 / n as f64;
            idx /= n;
        }
        theta
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|i| self.node(i))
    }
}

#[derive(Debug, Clone)]
pub struct FiberMatrix {
    pub theta: Vec<f64>,
    pub matrix: DMatrix<Complex64>,
}

fn phase(theta: &[f64], x: &[f64]) -> Complex64 {
    let arg: f64 = theta.iter().zip(x).map(|(t, y)| t * y).sum();
    Complex64::from_polar(1.0, 2.0 * PI * arg)
}

/// `H(theta)`: entry `(i, j)` sums `exp(i 2 pi theta . (n + s_j - s_i))` over
/// edges `i -> j` with offset `n`, plus `Q(v_i)` on the diagonal.
pub fn fiber_matrix(lattice: &Lattice, theta: &[f64]) -> FiberMatrix {
    let nu = lattice.cell_size();
    let mut h = DMatrix::from_element(nu, nu, Complex64::new(0.0, 0.0));
    for e in lattice.edges() {
        h[(e.from, e.to)] += phase(theta, &lattice.edge_fractional(e));
    }
    for (i, q) in lattice.potential().iter().enumerate() {
        h[(i, i)] += q;
    }
    FiberMatrix { theta: theta.to_vec(), matrix: h }
}

/// Derivative of the fiber matrix with respect to `theta_axis`.
pub fn fiber_derivative(lattice: &Lattice, theta: &[f64], axis: usize) -> DMatrix<Complex64> {
    let nu = lattice.cell_size();
    let mut h = DMatrix::from_element(nu, nu, Complex64::new(0.0, 0.0));
    for e in lattice.edges() {
        let x = lattice.edge_fractional(e);
        h[(e.from, e.to)] += Complex64::new(0.0, 2.0 * PI * x[axis]) * phase(theta, &x);
    }
    h
}

#[derive(Debug, Clone)]
pub struct BandPoint {
    pub theta: Vec<f64>,
    /// Ascending.
    pub energies: Vec<f64>,
    /// Column `n` is the eigenvector of `energies[n]`.
    pub vectors: DMatrix<Complex64>,
    pub velocities: Vec<Vec<f64>>,
    /// Set where the velocity came from finite differences.
    pub degenerate: Vec<bool>,
}

impl BandPoint {
    /// Squared norm of the projection of `v` on band `n`.
    pub fn projection_weight(&self, n: usize, v: &DVector<Complex64>) -> f64 {
        self.vectors.column(n).dotc(v).norm_sqr()
    }
}

fn sorted_eigen(m: &DMatrix<Complex64>) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::EigSolverFailure("non-finite matrix entry".into()));
    }
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((energies, vectors))
}

/// Sorted eigen-decomposition of a fiber matrix. Velocities are left empty.
pub fn band_decomposition(fiber: &FiberMatrix) -> Result<BandPoint> {
    let (energies, vectors) = sorted_eigen(&fiber.matrix)?;
    let nu = energies.len();
    Ok(BandPoint {
        theta: fiber.theta.clone(),
        energies,
        vectors,
        velocities: Vec::new(),
        degenerate: vec![false; nu],
    })
}

fn sorted_energies(lattice: &Lattice, theta: &[f64]) -> Result<Vec<f64>> {
    let mut e: Vec<f64> = fiber_matrix(lattice, theta)
        .matrix
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    e.sort_by(f64::total_cmp);
    Ok(e)
}

fn is_degenerate(energies: &[f64], n: usize) -> bool {
    (n > 0 && (energies[n] - energies[n - 1]).abs() < DEGENERACY_TOL)
        || (n + 1 < energies.len() && (energies[n + 1] - energies[n]).abs() < DEGENERACY_TOL)
}

/// Group velocity `(1/2pi) sum_l a_l dE_n/dtheta_l`. Returns the velocity
/// and whether the finite-difference fallback was used.
pub fn group_velocity(lattice: &Lattice, n: usize, point: &BandPoint) -> Result<(Vec<f64>, bool)> {
    let d = lattice.dim();
    let mut grad = vec![0.0; d];
    let degenerate = is_degenerate(&point.energies, n);
    if degenerate {
        for (l, g) in grad.iter_mut().enumerate() {
            let mut tp = point.theta.clone();
            let mut tm = point.theta.clone();
            tp[l] += FD_STEP;
            tm[l] -= FD_STEP;
            let ep = sorted_energies(lattice, &tp)?;
            let em = sorted_energies(lattice, &tm)?;
            *g = (ep[n] - em[n]) / (2.0 * FD_STEP);
        }
    } else {
        let w = point.vectors.column(n);
        for (l, g) in grad.iter_mut().enumerate() {
            let dh = fiber_derivative(lattice, &point.theta, l);
            *g = w.dotc(&(&dh * w)).re;
        }
    }
    let mut v = vec![0.0; d];
    for (l, g) in grad.iter().enumerate() {
        for (vk, a) in v.iter_mut().zip(&lattice.basis()[l]) {
            *vk += a * g / (2.0 * PI);
        }
    }
    Ok((v, degenerate))
}

/// Fiber, eigenpairs and velocities at one point.
pub fn band_point(lattice: &Lattice, theta: &[f64]) -> Result<BandPoint> {
    let mut p = band_decomposition(&fiber_matrix(lattice, theta))?;
    let nu = p.energies.len();
    let mut velocities = Vec::with_capacity(nu);
    for n in 0..nu {
        let (v, flag) = group_velocity(lattice, n, &p)?;
        velocities.push(v);
        p.degenerate[n] = flag;
    }
    p.velocities = velocities;
    Ok(p)
}

/// Band data on every node of a grid.
#[derive(Debug, Clone)]
pub struct BandGrid {
    pub grid: ThetaGrid,
    pub points: Vec<BandPoint>,
    pub lattice_name: String,
}

impl BandGrid {
    pub fn compute(lattice: &Lattice, grid: ThetaGrid) -> Result<Self> {
        if grid.dim != lattice.dim() {
            return Err(Error::InvalidParameter(format!(
                "grid dimension {} does not match lattice dimension {}",
                grid.dim,
                lattice.dim()
            )));
        }
        let points = (0..grid.len())
            .into_par_iter()
            .map(|i| band_point(lattice, &grid.node(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BandGrid { grid, points, lattice_name: lattice.name().to_string() })
    }

    pub fn bands(&self) -> usize {
        self.points.first().map_or(0, |p| p.energies.len())
    }

    /// Per-band `(min, max)` over the grid.
    pub fn band_ranges(&self) -> Vec<(f64, f64)> {
        (0..self.bands())
            .map(|n| {
                self.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p.energies[n]), hi.max(p.energies[n]))
                })
            })
            .collect()
    }

    /// Bands whose spread over the grid is below `1e-9`.
    pub fn flat_bands(&self) -> Vec<usize> {
        self.band_ranges()
            .iter()
            .enumerate()
            .filter(|(_, (lo, hi))| hi - lo < 1e-9)
            .map(|(n, _)| n)
            .collect()
    }
}

/// Values of `U psi` on every grid node.
#[derive(Debug, Clone)]
pub struct BlochField {
    pub grid: ThetaGrid,
    pub values: Vec<DVector<Complex64>>,
}

impl BlochField {
    /// `sum_theta w |value(theta)|^2`.
    pub fn grid_norm_sqr(&self) -> f64 {
        let terms: Vec<f64> = self.values.iter().map(|v| v.norm_squared()).collect();
        crate::numerics::pairwise_sum(&terms) * self.grid.weight()
    }
}

/// `(U psi)_theta(n) = sum_k exp(-i 2 pi theta . (k + s_n)) psi(k, n)`.
pub fn bloch_transform(lattice: &Lattice, psi: &StateVector, grid: ThetaGrid) -> Result<BlochField> {
    psi.check_against(lattice)?;
    let bounds = psi.cell_bounds().ok_or(Error::EmptyState)?;
    for (axis, (lo, hi)) in bounds.iter().enumerate() {
        let extent = hi - lo;
        if extent >= grid.resolution as i64 {
            return Err(Error::SupportExceedsGrid { axis, extent, resolution: grid.resolution });
        }
    }
    let nu = lattice.cell_size();
    let entries: Vec<(Vec<f64>, usize, Complex64)> = psi
        .iter()
        .map(|(v, a)| {
            let x: Vec<f64> = v
                .cell
                .iter()
                .zip(&lattice.fractions()[v.index])
                .map(|(&k, &s)| k as f64 + s)
                .collect();
            (x, v.index, *a)
        })
        .collect();
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let theta = grid.node(i);
            let mut out = DVector::from_element(nu, Complex64::new(0.0, 0.0));
            for (x, n, a) in &entries {
                out[*n] += phase(&theta, x).conj() * a;
            }
            out
        })
        .collect();
    Ok(BlochField { grid, values })
}
