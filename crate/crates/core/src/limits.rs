//! Closed-form ballistic limits and the limiting velocity distribution.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::floquet::{bloch_transform, BandGrid};
use crate::lattice::{Lattice, VertexId};
use crate::numerics::{binomial, pairwise_sum, Atoms1d};
use crate::state::StateVector;

pub const MAX_MOMENT: u32 = 8;

fn check_m(m: u32) -> Result<()> {
    if m == 0 || m > MAX_MOMENT {
        return Err(Error::InvalidParameter(format!("moment order m = {m} must be in 1..=8")));
    }
    Ok(())
}

/// `<psi, S_k psi>` with `(S_k psi)(n) = sum_j psi(n - k e_j) + psi(n + k e_j)`.
fn shift_form(psi: &StateVector, d: usize, k: i64) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (v, a) in psi.iter() {
        for j in 0..d {
            for s in [-k, k] {
                let mut cell = v.cell.clone();
                cell[j] += s;
                acc += a.conj() * psi.get(&VertexId::new(cell, 0));
            }
        }
    }
    acc.re
}

/// Limit of `||n^m e^{-itA} psi||^2 / t^{2m}` on Z^d.
pub fn zd_limit(psi: &StateVector, d: usize, m: u32) -> Result<f64> {
    check_m(m)?;
    if psi.is_empty() || psi.norm_sqr() == 0.0 {
        return Err(Error::EmptyState);
    }
    if psi.iter().any(|(v, _)| v.index != 0 || v.cell.len() != d) {
        return Err(Error::InvalidParameter(format!("state does not live on Z^{d}")));
    }
    let mut total = d as f64 * binomial(2 * m, m) as f64 * psi.norm_sqr();
    for q in 0..m {
        let sign = if (q + m) % 2 == 0 { 1.0 } else { -1.0 };
        let k = i64::from(2 * m - 2 * q);
        total += sign * binomial(2 * m, q) as f64 * shift_form(psi, d, k);
    }
    Ok(total)
}

/// Per-node band weights `|<w_n, (U psi)_theta>|^2`.
fn band_weights(lattice: &Lattice, bands: &BandGrid, psi: &StateVector) -> Result<Vec<Vec<f64>>> {
    let field = bloch_transform(lattice, psi, bands.grid)?;
    Ok(bands
        .points
        .par_iter()
        .zip(field.values.par_iter())
        .map(|(p, u)| (0..p.energies.len()).map(|n| p.projection_weight(n, u)).collect())
        .collect())
}

/// Quadrature of `sum_n |h(theta, n)^m|^2 ||P_n (U psi)_theta||^2` over the torus.
pub fn periodic_limit(lattice: &Lattice, bands: &BandGrid, psi: &StateVector, m: u32) -> Result<f64> {
    check_m(m)?;
    if psi.is_empty() {
        return Err(Error::EmptyState);
    }
    let weights = band_weights(lattice, bands, psi)?;
    let terms: Vec<f64> = bands
        .points
        .iter()
        .zip(&weights)
        .map(|(p, w)| {
            p.velocities
                .iter()
                .zip(w)
                .map(|(h, wn)| h.iter().map(|x| x.powi(2 * m as i32)).sum::<f64>() * wn)
                .sum()
        })
        .collect();
    Ok(pairwise_sum(&terms) * bands.grid.weight())
}

/// Weighted point cloud of velocities.
#[derive(Debug, Clone)]
pub struct LimitDistribution {
    pub dim: usize,
    pub atoms: Vec<(Vec<f64>, f64)>,
    pub resolution: usize,
    pub lattice: String,
}

impl LimitDistribution {
    pub fn total_mass(&self) -> f64 {
        let w: Vec<f64> = self.atoms.iter().map(|a| a.1).collect();
        pairwise_sum(&w)
    }

    /// Marginal along one Cartesian axis.
    pub fn marginal(&self, axis: usize) -> Atoms1d {
        Atoms1d::new(self.atoms.iter().map(|(v, w)| (v[axis], *w)).collect())
    }

    /// Mass outside the cube `[-r, r]^d`.
    pub fn mass_outside_cube(&self, r: f64) -> f64 {
        dist_moment(self, |v| if v.iter().any(|x| x.abs() > r) { 1.0 } else { 0.0 })
    }
}

/// One atom per (node, band) with velocity `h(theta, n)` and weight
/// `w_theta ||P_n (U psi)_theta||^2`.
pub fn limit_distribution(
    lattice: &Lattice,
    bands: &BandGrid,
    psi: &StateVector,
) -> Result<LimitDistribution> {
    psi.require_normalized()?;
    let weights = band_weights(lattice, bands, psi)?;
    let w = bands.grid.weight();
    let mut atoms = Vec::with_capacity(bands.points.len() * bands.bands());
    for (p, ws) in bands.points.iter().zip(&weights) {
        for (h, wn) in p.velocities.iter().zip(ws) {
            atoms.push((h.clone(), w * wn));
        }
    }
    Ok(LimitDistribution {
        dim: lattice.dim(),
        atoms,
        resolution: bands.grid.resolution,
        lattice: bands.lattice_name.clone(),
    })
}

/// `sum w f(v)` over the atoms.
pub fn dist_moment<F: Fn(&[f64]) -> f64>(dist: &LimitDistribution, f: F) -> f64 {
    let terms: Vec<f64> = dist.atoms.iter().map(|(v, w)| w * f(v)).collect();
    pairwise_sum(&terms)
}
