//! Direct simulation of `e^{-itH} psi` on a truncated box of cells.
//!
//! Edges leaving the box are dropped. Box sizes are chosen from the speed
//! bound `L D` so that the outermost shell carries negligible mass; that mass
//! is reported with every run.

use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, VertexId};
use crate::numerics::{bessel_j_sequence, binomial, pairwise_sum};
use crate::state::StateVector;

/// Largest box solved by full diagonalization.
pub const DENSE_CAP: usize = 2048;
/// Default cap on the number of box vertices.
pub const DEFAULT_BOX_CAP: usize = 4_000_000;
/// Outer-shell mass above which a run is flagged.
pub const BOUNDARY_TOL: f64 = 1e-8;
/// Target uniform error of the Chebyshev expansion.
pub const CHEBYSHEV_TOL: f64 = 1e-10;

const PAR_MIN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Auto,
    Dense,
    Chebyshev,
}

/// Rectangular range of cells `lo..=hi` with `nu` vertices per cell.
/// Vertices are ordered by cell (row-major, last axis fastest), then index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
    pub nu: usize,
    extent: Vec<usize>,
}

impl CellBox {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>, nu: usize) -> Self {
        let extent = lo.iter().zip(&hi).map(|(a, b)| (b - a + 1).max(0) as usize).collect();
        CellBox { lo, hi, nu, extent }
    }

    pub fn centered(center: &[i64], radius: &[i64], nu: usize) -> Self {
        let lo = center.iter().zip(radius).map(|(c, r)| c - r).collect();
        let hi = center.iter().zip(radius).map(|(c, r)| c + r).collect();
        Self::new(lo, hi, nu)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn cells(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn len(&self) -> usize {
        self.cells() * self.nu
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, v: &VertexId) -> Option<usize> {
        if v.index >= self.nu || v.cell.len() != self.dim() {
            return None;
        }
        let mut flat = 0usize;
        for ((k, lo), (hi, ext)) in v.cell.iter().zip(&self.lo).zip(self.hi.iter().zip(&self.extent)) {
            if k < lo || k > hi {
                return None;
            }
            flat = flat * ext + (k - lo) as usize;
        }
        Some(flat * self.nu + v.index)
    }

    pub fn cell_of(&self, idx: usize) -> Vec<i64> {
        let mut c = idx / self.nu;
        let mut cell = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            cell[k] = self.lo[k] + (c % self.extent[k]) as i64;
            c /= self.extent[k];
        }
        cell
    }

    /// Like [`CellBox::cell_of`], writing into `out` instead of allocating.
    pub fn cell_into(&self, idx: usize, out: &mut [i64]) {
        let mut c = idx / self.nu;
        for k in (0..self.dim()).rev() {
            out[k] = self.lo[k] + (c % self.extent[k]) as i64;
            c /= self.extent[k];
        }
    }

    pub fn vertex(&self, idx: usize) -> VertexId {
        VertexId::new(self.cell_of(idx), idx % self.nu)
    }

    /// Whether the vertex lies in a cell on the outer face of the box.
    pub fn on_shell(&self, idx: usize) -> bool {
        self.cell_of(idx)
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .any(|(k, (lo, hi))| k == lo || k == hi)
    }
}

/// `H = A + Q` restricted to a box, stored in CSR form.
#[derive(Debug)]
pub struct TruncatedOperator {
    lattice: Lattice,
    cbox: CellBox,
    positions: Vec<f64>,
    shell: Vec<bool>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    bound: f64,
    eigen: OnceLock<Option<(DVector<f64>, DMatrix<f64>)>>,
}

pub fn build_truncated(lattice: &Lattice, radius: &[i64], center: &[i64]) -> Result<TruncatedOperator> {
    build_truncated_with_cap(lattice, radius, center, DEFAULT_BOX_CAP)
}

pub fn build_truncated_with_cap(
    lattice: &Lattice,
    radius: &[i64],
    center: &[i64],
    cap: usize,
) -> Result<TruncatedOperator> {
    let d = lattice.dim();
    if radius.len() != d || center.len() != d {
        return Err(Error::InvalidParameter("radius and center must match the lattice dimension".into()));
    }
    if radius.iter().any(|&r| r < 1) {
        return Err(Error::InvalidParameter("box radius must be at least 1".into()));
    }
    let count = radius
        .iter()
        .try_fold(lattice.cell_size(), |acc, &r| acc.checked_mul(2 * r as usize + 1));
    match count {
        Some(n) if n <= cap => {}
        other => {
            return Err(Error::BoxTooLarge { vertices: other.unwrap_or(usize::MAX), cap });
        }
    }
    let cbox = CellBox::centered(center, radius, lattice.cell_size());
    let n = cbox.len();

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(n * (lattice.max_degree() + 1));
    let mut vals = Vec::with_capacity(n * (lattice.max_degree() + 1));
    let mut positions = Vec::with_capacity(n * d);
    let mut shell = Vec::with_capacity(n);
    row_ptr.push(0);
    for idx in 0..n {
        let v = cbox.vertex(idx);
        positions.extend(lattice.position(&v));
        shell.push(cbox.on_shell(idx));
        let q = lattice.potential()[v.index];
        let mut row: Vec<(usize, f64)> = Vec::new();
        if q != 0.0 {
            row.push((idx, q));
        }
        for w in lattice.neighbors(&v) {
            if let Some(j) = cbox.index_of(&w) {
                row.push((j, 1.0));
            }
        }
        row.sort_by_key(|e| e.0);
        for (j, x) in row {
            match (cols.last(), row_ptr.last()) {
                (Some(&last), Some(&start)) if cols.len() > start && last == j => {
                    *vals.last_mut().expect("nonempty") += x;
                }
                _ => {
                    cols.push(j);
                    vals.push(x);
                }
            }
        }
        row_ptr.push(cols.len());
    }
    Ok(TruncatedOperator {
        lattice: lattice.clone(),
        cbox,
        positions,
        shell,
        row_ptr,
        cols,
        vals,
        bound: lattice.max_degree() as f64 + lattice.max_abs_potential(),
        eigen: OnceLock::new(),
    })
}

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

impl TruncatedOperator {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn cell_box(&self) -> &CellBox {
        &self.cbox
    }

    pub fn len(&self) -> usize {
        self.cbox.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cbox.is_empty()
    }

    /// Spectral bound `D + max|Q|` used to scale the Chebyshev expansion.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn position(&self, idx: usize) -> &[f64] {
        let d = self.cbox.dim();
        &self.positions[idx * d..(idx + 1) * d]
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, x) in self.row(i) {
                m[(i, j)] += x;
            }
        }
        m
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let f = |i: usize| self.row(i).map(|(j, v)| x[j] * v).sum::<Complex64>();
        if self.len() >= PAR_MIN {
            (0..self.len()).into_par_iter().with_min_len(1024).map(f).collect()
        } else {
            (0..self.len()).map(f).collect()
        }
    }

    pub fn embed(&self, psi: &StateVector) -> Result<Vec<Complex64>> {
        let mut out = vec![czero(); self.len()];
        for (v, a) in psi.iter() {
            let i = self.cbox.index_of(v).ok_or(Error::NotInBox)?;
            out[i] += a;
        }
        Ok(out)
    }

    pub fn extract(&self, amps: &[Complex64]) -> StateVector {
        StateVector::from_entries(
            amps.iter()
                .enumerate()
                .filter(|(_, a)| a.norm_sqr() > 0.0)
                .map(|(i, a)| (self.cbox.vertex(i), *a)),
        )
    }

    fn eigen(&self) -> Result<&(DVector<f64>, DMatrix<f64>)> {
        self.eigen
            .get_or_init(|| {
                SymmetricEigen::try_new(self.to_dense(), f64::EPSILON, 0)
                    .map(|e| (e.eigenvalues, e.eigenvectors))
            })
            .as_ref()
            .ok_or_else(|| Error::EigSolverFailure("dense symmetric eigensolver did not converge".into()))
    }

    fn propagate_dense(&self, psi: &[Complex64], t: f64) -> Result<Vec<Complex64>> {
        let (vals, vecs) = self.eigen()?;
        let re = DVector::from_iterator(psi.len(), psi.iter().map(|a| a.re));
        let im = DVector::from_iterator(psi.len(), psi.iter().map(|a| a.im));
        let cre = vecs.tr_mul(&re);
        let cim = vecs.tr_mul(&im);
        let mut are = DVector::zeros(psi.len());
        let mut aim = DVector::zeros(psi.len());
        for k in 0..psi.len() {
            let c = Complex64::new(cre[k], cim[k]) * Complex64::from_polar(1.0, -t * vals[k]);
            are[k] = c.re;
            aim[k] = c.im;
        }
        let ore = vecs * are;
        let oim = vecs * aim;
        Ok(ore.iter().zip(oim.iter()).map(|(&a, &b)| Complex64::new(a, b)).collect())
    }

    /// Number of Chebyshev terms kept for time `t`.
    pub fn chebyshev_order(&self, t: f64) -> usize {
        chebyshev_coefficients(t * self.bound).len() - 1
    }

    fn propagate_chebyshev(&self, psi: &[Complex64], t: f64) -> Vec<Complex64> {
        let coeffs = chebyshev_coefficients(t * self.bound);
        let s = 1.0 / self.bound;
        let n = psi.len();
        let mut prev: Vec<Complex64> = psi.to_vec();
        let mut cur: Vec<Complex64> = self.apply(psi).into_iter().map(|z| z * s).collect();
        let mut out: Vec<Complex64> = prev.iter().map(|z| z * coeffs[0]).collect();
        if coeffs.len() > 1 {
            for (o, c) in out.iter_mut().zip(&cur) {
                *o += coeffs[1] * c;
            }
        }
        for &ck in coeffs.iter().skip(2) {
            // prev <- 2 s H cur - prev, then accumulate
            let step = |(i, (p, o)): (usize, (&mut Complex64, &mut Complex64))| {
                let hc: Complex64 = self.row(i).map(|(j, v)| cur[j] * v).sum();
                *p = hc * (2.0 * s) - *p;
                *o += ck * *p;
            };
            if n >= PAR_MIN {
                prev.par_iter_mut().zip(out.par_iter_mut()).enumerate().with_min_len(1024).for_each(step);
            } else {
                prev.iter_mut().zip(out.iter_mut()).enumerate().for_each(step);
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        out
    }

    /// `e^{-itH} psi` on the box.
    pub fn propagate(&self, psi: &[Complex64], t: f64, method: Method) -> Result<Vec<Complex64>> {
        if psi.len() != self.len() {
            return Err(Error::InvalidParameter("vector length does not match the box".into()));
        }
        if t == 0.0 {
            return Ok(psi.to_vec());
        }
        let dense = match method {
            Method::Dense => true,
            Method::Chebyshev => false,
            Method::Auto => self.len() <= DENSE_CAP,
        };
        if dense {
            self.propagate_dense(psi, t)
        } else if t < 0.0 {
            // e^{itH} psi = conj(e^{-itH} conj psi) since H is real
            let conj: Vec<Complex64> = psi.iter().map(|z| z.conj()).collect();
            Ok(self.propagate_chebyshev(&conj, -t).into_iter().map(|z| z.conj()).collect())
        } else {
            Ok(self.propagate_chebyshev(psi, t))
        }
    }

    /// Mass on the outermost shell of cells.
    pub fn boundary_mass(&self, amps: &[Complex64]) -> f64 {
        let terms: Vec<f64> = amps
            .iter()
            .zip(&self.shell)
            .filter(|(_, s)| **s)
            .map(|(a, _)| a.norm_sqr())
            .collect();
        pairwise_sum(&terms)
    }

    /// `sum_v sum_j (x_j(v) - o_j)^{2m} |amp(v)|^2`.
    pub fn moment(&self, amps: &[Complex64], m: u32, origin: &[f64]) -> f64 {
        let terms: Vec<f64> = amps
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let w = a.norm_sqr();
                if w == 0.0 {
                    return 0.0;
                }
                self.position(i)
                    .iter()
                    .zip(origin)
                    .map(|(x, o)| (x - o).powi(2 * m as i32))
                    .sum::<f64>()
                    * w
            })
            .collect();
        pairwise_sum(&terms)
    }

    /// `|| |x - o|_2^p psi ||^2` for a real power `p`.
    pub fn radial_moment(&self, amps: &[Complex64], p: f64, origin: &[f64]) -> f64 {
        let terms: Vec<f64> = amps
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let r2: f64 = self.position(i).iter().zip(origin).map(|(x, o)| (x - o).powi(2)).sum();
                if p == 0.0 {
                    a.norm_sqr()
                } else {
                    r2.powf(p) * a.norm_sqr()
                }
            })
            .collect();
        pairwise_sum(&terms)
    }
}

/// Coefficients `c_0 = J_0(x)`, `c_k = 2 (-i)^k J_k(x)` of
/// `e^{-ix y} = sum c_k T_k(y)` on `[-1, 1]`, truncated where the tail
/// `sum_{k > K} 2 |J_k(x)|` drops below the tolerance.
pub fn chebyshev_coefficients(x: f64) -> Vec<Complex64> {
    let nmax = (1.3 * x.abs() + 60.0).ceil() as usize;
    let j = bessel_j_sequence(x, nmax);
    let mut tail = 0.0;
    let mut order = 0;
    for k in (1..=nmax).rev() {
        tail += 2.0 * j[k].abs();
        if tail >= CHEBYSHEV_TOL * 0.1 {
            order = k;
            break;
        }
    }
    let mi = [
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, -1.0),
        Complex64::new(-1.0, 0.0),
        Complex64::new(0.0, 1.0),
    ];
    (0..=order)
        .map(|k| if k == 0 { Complex64::new(j[0], 0.0) } else { mi[k % 4] * (2.0 * j[k]) })
        .collect()
}

/// Evolves a sparse state on a given box and returns it as a sparse state.
pub fn evolve_state(op: &TruncatedOperator, psi: &StateVector, t: f64) -> Result<StateVector> {
    let amps = op.embed(psi)?;
    Ok(op.extract(&op.propagate(&amps, t, Method::Auto)?))
}

/// Cartesian moment `sum_v sum_j (x_j(v) - o_j)^{2m} |psi(v)|^2` of a sparse state.
pub fn moment(lattice: &Lattice, psi: &StateVector, m: u32, origin: &[f64]) -> f64 {
    let terms: Vec<f64> = psi
        .iter()
        .map(|(v, a)| {
            lattice
                .position(v)
                .iter()
                .zip(origin)
                .map(|(x, o)| (x - o).powi(2 * m as i32))
                .sum::<f64>()
                * a.norm_sqr()
        })
        .collect();
    pairwise_sum(&terms)
}

#[derive(Debug, Clone)]
pub struct CurveOptions {
    pub safety: f64,
    /// Fixed cell radius for every axis, overriding the speed-based choice.
    pub radius: Option<i64>,
    /// Moment origin in Cartesian coordinates (default 0).
    pub origin: Option<Vec<f64>>,
    pub method: Method,
    pub box_cap: usize,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions { safety: 1.5, radius: None, origin: None, method: Method::Auto, box_cap: DEFAULT_BOX_CAP }
    }
}

/// Box center (rounded support midpoint) and per-axis radius in cells.
pub fn box_for(lattice: &Lattice, psi: &StateVector, t: f64, opts: &CurveOptions) -> Result<(Vec<i64>, Vec<i64>)> {
    let bounds = psi.cell_bounds().ok_or(Error::EmptyState)?;
    let center: Vec<i64> = bounds.iter().map(|(lo, hi)| (lo + hi).div_euclid(2)).collect();
    let radius = match opts.radius {
        Some(r) => {
            let need = bounds.iter().zip(&center).map(|((lo, hi), c)| (hi - c).max(c - lo)).max().unwrap_or(0);
            if r <= need {
                return Err(Error::NotInBox);
            }
            vec![r; lattice.dim()]
        }
        None => {
            let speed = lattice.max_edge_length() * lattice.max_degree() as f64 * t.abs();
            bounds
                .iter()
                .zip(&center)
                .zip(lattice.dual_basis())
                .map(|(((lo, hi), c), b)| {
                    let supp = ((hi - c).max(c - lo) + 1) as f64;
                    let b_norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let cells = speed * b_norm / (2.0 * PI);
                    // the front has an Airy-type tail of width ~ (speed)^(1/3)
                    let r = opts.safety * (cells + supp) + 12.0 + 4.0 * cells.cbrt();
                    r.ceil() as i64
                })
                .collect()
        }
    };
    Ok((center, radius))
}

/// A state evolved on its own box.
#[derive(Debug)]
pub struct EvolvedState {
    pub op: TruncatedOperator,
    pub amps: Vec<Complex64>,
    pub t: f64,
}

impl EvolvedState {
    pub fn boundary_mass(&self) -> f64 {
        self.op.boundary_mass(&self.amps)
    }

    pub fn moment(&self, m: u32, origin: &[f64]) -> f64 {
        self.op.moment(&self.amps, m, origin)
    }

    pub fn to_state(&self) -> StateVector {
        self.op.extract(&self.amps)
    }

    pub fn empirical(&self, origin: &[f64]) -> Result<EmpiricalDist> {
        empirical_distribution(&self.op, &self.amps, self.t, origin)
    }
}

/// Picks a box for `(psi, t)`, builds it and evolves.
pub fn evolve_in_box(lattice: &Lattice, psi: &StateVector, t: f64, opts: &CurveOptions) -> Result<EvolvedState> {
    psi.check_against(lattice)?;
    let (center, radius) = box_for(lattice, psi, t, opts)?;
    let op = build_truncated_with_cap(lattice, &radius, &center, opts.box_cap)?;
    let amps = op.embed(psi)?;
    let amps = op.propagate(&amps, t, opts.method)?;
    Ok(EvolvedState { op, amps, t })
}

#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub t: f64,
    pub moment: f64,
    pub ratio: f64,
    pub boundary_mass: f64,
    pub flagged: bool,
    pub radius: Vec<i64>,
    pub vertices: usize,
}

/// `moment / t^{2m}` along a list of times, each on a box sized for that time.
pub fn ballistic_curve(
    lattice: &Lattice,
    psi: &StateVector,
    m: u32,
    times: &[f64],
    opts: &CurveOptions,
) -> Result<Vec<CurvePoint>> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("times must be ascending".into()));
    }
    if times.iter().any(|&t| t <= 0.0) {
        return Err(Error::ZeroTime);
    }
    let origin = opts.origin.clone().unwrap_or_else(|| vec![0.0; lattice.dim()]);
    let mut out = Vec::with_capacity(times.len());
    let mut cached: Option<(Vec<i64>, Vec<i64>, TruncatedOperator)> = None;
    for &t in times {
        let (center, radius) = box_for(lattice, psi, t, opts)?;
        let reuse = matches!(&cached, Some((c, r, _)) if *c == center && *r == radius);
        if !reuse {
            let op = build_truncated_with_cap(lattice, &radius, &center, opts.box_cap)?;
            cached = Some((center, radius.clone(), op));
        }
        let op = &cached.as_ref().expect("operator built").2;
        let amps = op.propagate(&op.embed(psi)?, t, opts.method)?;
        let mom = op.moment(&amps, m, &origin);
        let bm = op.boundary_mass(&amps);
        out.push(CurvePoint {
            t,
            moment: mom,
            ratio: mom / t.powi(2 * m as i32),
            boundary_mass: bm,
            flagged: bm >= BOUNDARY_TOL,
            radius,
            vertices: op.len(),
        });
    }
    Ok(out)
}

/// Law of `X_t / t` on the interior of the box; the outer shell counts as leak.
#[derive(Debug, Clone)]
pub struct EmpiricalDist {
    pub t: f64,
    pub dim: usize,
    pub atoms: Vec<(Vec<f64>, f64)>,
    pub leak: f64,
}

impl EmpiricalDist {
    pub fn total(&self) -> f64 {
        let w: Vec<f64> = self.atoms.iter().map(|a| a.1).collect();
        pairwise_sum(&w)
    }

    pub fn marginal(&self, axis: usize) -> crate::numerics::Atoms1d {
        crate::numerics::Atoms1d::new(self.atoms.iter().map(|(v, w)| (v[axis], *w)).collect())
    }

    pub fn mass_outside_cube(&self, r: f64) -> f64 {
        let w: Vec<f64> = self
            .atoms
            .iter()
            .filter(|(v, _)| v.iter().any(|x| x.abs() > r))
            .map(|a| a.1)
            .collect();
        pairwise_sum(&w) + self.leak
    }

    /// Mass of the half-open box `[lo, hi)`.
    pub fn box_mass(&self, lo: &[f64], hi: &[f64]) -> f64 {
        let w: Vec<f64> = self
            .atoms
            .iter()
            .filter(|(v, _)| v.iter().zip(lo.iter().zip(hi)).all(|(x, (a, b))| x >= a && x < b))
            .map(|a| a.1)
            .collect();
        pairwise_sum(&w)
    }

    pub fn moment(&self, m: u32) -> f64 {
        let w: Vec<f64> = self
            .atoms
            .iter()
            .map(|(v, w)| w * v.iter().map(|x| x.powi(2 * m as i32)).sum::<f64>())
            .collect();
        pairwise_sum(&w)
    }
}

pub fn empirical_distribution(
    op: &TruncatedOperator,
    amps: &[Complex64],
    t: f64,
    origin: &[f64],
) -> Result<EmpiricalDist> {
    if t <= 0.0 {
        return Err(Error::ZeroTime);
    }
    let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized(norm));
    }
    let mut atoms = Vec::new();
    let mut leak = Vec::new();
    for (i, a) in amps.iter().enumerate() {
        let w = a.norm_sqr();
        if op.shell[i] {
            leak.push(w);
        } else if w > 0.0 {
            let v = op.position(i).iter().zip(origin).map(|(x, o)| (x - o) / t).collect();
            atoms.push((v, w));
        }
    }
    Ok(EmpiricalDist { t, dim: op.cbox.dim(), atoms, leak: pairwise_sum(&leak) })
}

/// Graph distance from `origin` to every target, by breadth-first search.
pub fn graph_distances(lattice: &Lattice, origin: &VertexId, targets: &[VertexId]) -> Vec<usize> {
    let wanted: HashSet<&VertexId> = targets.iter().collect();
    let mut dist: HashMap<VertexId, usize> = HashMap::new();
    dist.insert(origin.clone(), 0);
    let mut found = usize::from(wanted.contains(origin));
    let mut queue = VecDeque::from([origin.clone()]);
    while found < wanted.len() {
        let Some(v) = queue.pop_front() else { break };
        let dv = dist[&v];
        for w in lattice.neighbors(&v) {
            if !dist.contains_key(&w) {
                if wanted.contains(&w) {
                    found += 1;
                }
                dist.insert(w.clone(), dv + 1);
                queue.push_back(w);
            }
        }
    }
    targets.iter().map(|t| dist.get(t).copied().unwrap_or(usize::MAX)).collect()
}

/// Coefficients (ascending powers of `t`) of the a priori bound `B_m(t)` on
/// `|| |x|^m e^{-itH} psi ||` with `|x|` the graph distance to the origin:
/// `B_0 = ||psi||`,
/// `B_m = || |x|^m psi || + D m sum_{q<m} C(m-1, q) 2^{m-1-q} int_0^t B_q`.
pub fn moment_bound_polynomials(radial_norms: &[f64], degree: usize) -> Vec<Vec<f64>> {
    let mmax = radial_norms.len() - 1;
    let dd = degree as f64;
    let mut polys: Vec<Vec<f64>> = vec![vec![radial_norms[0]]];
    for m in 1..=mmax {
        let mut p = vec![0.0; m + 1];
        p[0] = radial_norms[m];
        for (q, bq) in polys.iter().enumerate() {
            let c = dd * m as f64 * binomial(m as u32 - 1, q as u32) as f64 * 2f64.powi((m - 1 - q) as i32);
            for (k, coef) in bq.iter().enumerate() {
                p[k + 1] += c * coef / (k + 1) as f64;
            }
        }
        polys.push(p);
    }
    polys
}

pub fn eval_poly(p: &[f64], t: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

/// Free propagation kernels `e^{-itH} delta_(0, n)` for each cell vertex `n`,
/// cropped to their numerical support. Any finitely supported state is then
/// evolved by superposing translated kernels.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub t: f64,
    /// Per cell vertex: (cells lo, cells hi, amplitudes on that sub-box).
    parts: Vec<(CellBox, Vec<Complex64>)>,
    pub boundary_mass: f64,
}

impl Kernel {
    pub fn new(lattice: &Lattice, t: f64, opts: &CurveOptions) -> Result<Self> {
        let d = lattice.dim();
        let mut parts = Vec::new();
        let mut boundary_mass: f64 = 0.0;
        for n in 0..lattice.cell_size() {
            let ev = evolve_in_box(lattice, &StateVector::delta(VertexId::origin(d, n)), t, opts)?;
            boundary_mass = boundary_mass.max(ev.boundary_mass());
            let cb = ev.op.cell_box();
            let (mut lo, mut hi) = (cb.hi.clone(), cb.lo.clone());
            for (i, a) in ev.amps.iter().enumerate() {
                if a.norm_sqr() > 1e-32 {
                    for (k, c) in cb.cell_of(i).into_iter().enumerate() {
                        lo[k] = lo[k].min(c);
                        hi[k] = hi[k].max(c);
                    }
                }
            }
            let sub = CellBox::new(lo, hi, cb.nu);
            let mut amps = vec![czero(); sub.len()];
            for (i, a) in ev.amps.iter().enumerate() {
                if let Some(j) = sub.index_of(&cb.vertex(i)) {
                    amps[j] = *a;
                }
            }
            parts.push((sub, amps));
        }
        Ok(Kernel { t, parts, boundary_mass })
    }

    /// `e^{-itH} psi` as a dense vector on a box covering all translated kernels.
    pub fn apply(&self, psi: &StateVector) -> Result<(CellBox, Vec<Complex64>)> {
        let bounds = psi.cell_bounds().ok_or(Error::EmptyState)?;
        let d = bounds.len();
        let nu = self.parts[0].0.nu;
        let lo: Vec<i64> = (0..d).map(|k| bounds[k].0 + self.parts.iter().map(|p| p.0.lo[k]).min().unwrap_or(0)).collect();
        let hi: Vec<i64> = (0..d).map(|k| bounds[k].1 + self.parts.iter().map(|p| p.0.hi[k]).max().unwrap_or(0)).collect();
        let target = CellBox::new(lo, hi, nu);
        let mut out = vec![czero(); target.len()];
        for (v, a) in psi.iter() {
            let (sub, amps) = &self.parts[v.index];
            for (i, k) in amps.iter().enumerate() {
                if k.norm_sqr() == 0.0 {
                    continue;
                }
                let w = sub.vertex(i);
                let cell: Vec<i64> = w.cell.iter().zip(&v.cell).map(|(x, y)| x + y).collect();
                let j = target.index_of(&VertexId::new(cell, w.index)).ok_or(Error::NotInBox)?;
                out[j] += a * k;
            }
        }
        Ok((target, out))
    }
}

#[derive(Debug, Clone)]
pub struct BoundPoint {
    pub t: f64,
    /// `moment(psi_t, m)^{1/2}` in Cartesian coordinates.
    pub root_moment: f64,
    /// `(1 + slack) D^m t^m ||psi|| + C_fit`.
    pub bound: f64,
    /// `B_m(t)`, the a priori graph-distance bound.
    pub a_priori: f64,
}

#[derive(Debug, Clone)]
pub struct UpperBoundReport {
    pub m: u32,
    pub c_fit: f64,
    pub points: Vec<BoundPoint>,
    pub violations: Vec<String>,
}

impl UpperBoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const BOUND_SLACK: f64 = 0.01;

/// Checks the polynomial moment bound and the interpolation inequalities
/// `|| |x|^j psi_t ||^m <= || |x|^m psi_t ||^j ||psi_t||^{m-j}` for a state
/// evolved with precomputed kernels.
pub fn upper_bound_check_with(lattice: &Lattice, kernels: &[Kernel], psi: &StateVector, m: u32) -> Result<UpperBoundReport> {
    let d = lattice.dim();
    let origin_v = VertexId::origin(d, 0);
    let origin = lattice.position(&origin_v);
    let targets: Vec<VertexId> = psi.iter().map(|(v, _)| v.clone()).collect();
    let dist = graph_distances(lattice, &origin_v, &targets);
    if dist.contains(&usize::MAX) {
        return Err(Error::InvalidParameter("state support is not connected to the origin".into()));
    }
    let radial: Vec<f64> = (0..=m)
        .map(|q| {
            psi.iter()
                .zip(&dist)
                .map(|((_, a), &r)| (r as f64).powi(2 * q as i32) * a.norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let polys = moment_bound_polynomials(&radial, lattice.max_degree());
    let bm = &polys[m as usize];
    let lm = lattice.max_edge_length().powi(m as i32);
    let dm = (lattice.max_degree() as f64).powi(m as i32);
    let norm = psi.norm();
    let t_max = kernels.iter().map(|k| k.t).fold(1.0, f64::max);
    let lead = |t: f64| (1.0 + BOUND_SLACK) * dm * t.powi(m as i32) * norm;
    let c_fit = (0..=2000)
        .map(|i| 1.0 + (t_max - 1.0) * i as f64 / 2000.0)
        .map(|t| (lm * eval_poly(bm, t) - lead(t)).max(0.0))
        .fold(0.0, f64::max);

    let mut points = Vec::new();
    let mut violations = Vec::new();
    for k in kernels {
        let (cb, amps) = k.apply(psi)?;
        let mut mom_terms = Vec::with_capacity(amps.len());
        let mut radial_terms: Vec<Vec<f64>> = vec![Vec::with_capacity(amps.len()); m as usize + 1];
        let mut cell = vec![0i64; d];
        let mut x = vec![0.0; d];
        for (i, a) in amps.iter().enumerate() {
            let w = a.norm_sqr();
            if w == 0.0 {
                continue;
            }
            cb.cell_into(i, &mut cell);
            x.copy_from_slice(&origin);
            x.iter_mut().for_each(|v| *v = -*v);
            for (l, (c, s)) in cell.iter().zip(&lattice.fractions()[i % cb.nu]).enumerate() {
                let f = *c as f64 + s;
                for (xk, ak) in x.iter_mut().zip(&lattice.basis()[l]) {
                    *xk += f * ak;
                }
            }
            mom_terms.push(w * x.iter().map(|y| y.powi(2 * m as i32)).sum::<f64>());
            let r2: f64 = x.iter().map(|y| y * y).sum();
            for (j, rt) in radial_terms.iter_mut().enumerate() {
                rt.push(w * r2.powi(j as i32));
            }
        }
        let root = pairwise_sum(&mom_terms).sqrt();
        let bound = lead(k.t) + c_fit;
        if root > bound * (1.0 + 1e-12) {
            violations.push(format!("t = {}: moment root {root:e} exceeds bound {bound:e}", k.t));
        }
        let r: Vec<f64> = radial_terms.iter().map(|v| pairwise_sum(v).sqrt()).collect();
        for j in 0..=m as usize {
            let lhs = r[j].powi(m as i32);
            let rhs = r[m as usize].powi(j as i32) * r[0].powi(m as i32 - j as i32);
            if lhs > rhs * (1.0 + 1e-10) {
                violations.push(format!("t = {}: interpolation j = {j} fails ({lhs:e} > {rhs:e})", k.t));
            }
        }
        points.push(BoundPoint { t: k.t, root_moment: root, bound, a_priori: eval_poly(bm, k.t) });
    }
    Ok(UpperBoundReport { m, c_fit, points, violations })
}

/// Convenience wrapper that builds kernels for `times` first.
pub fn upper_bound_check(lattice: &Lattice, psi: &StateVector, m: u32, times: &[f64]) -> Result<UpperBoundReport> {
    let opts = CurveOptions { safety: 1.1, ..CurveOptions::default() };
    let kernels = times
        .iter()
        .map(|&t| Kernel::new(lattice, t, &opts))
        .collect::<Result<Vec<_>>>()?;
    upper_bound_check_with(lattice, &kernels, psi, m)
}

/// A finitely supported eigenvector of energy `energy`, searched among
/// states living in the cells `[0, window]^d`. Returns `None` when the
/// null space is trivial.
pub fn compact_eigenvector(lattice: &Lattice, energy: f64, window: i64) -> Result<Option<StateVector>> {
    let d = lattice.dim();
    let inner = CellBox::new(vec![0; d], vec![window; d], lattice.cell_size());
    let outer = CellBox::new(vec![-1; d], vec![window + 1; d], lattice.cell_size());
    let cols: Vec<VertexId> = (0..inner.len()).map(|i| inner.vertex(i)).collect();
    let mut m = DMatrix::<f64>::zeros(outer.len(), cols.len());
    for (c, v) in cols.iter().enumerate() {
        let r = outer.index_of(v).expect("inner box inside outer box");
        m[(r, c)] += lattice.potential()[v.index] - energy;
        for w in lattice.neighbors(v) {
            let r = outer
                .index_of(&w)
                .ok_or_else(|| Error::InvalidParameter("edges longer than one cell are not supported here".into()))?;
            m[(r, c)] += 1.0;
        }
    }
    let gram = m.tr_mul(&m);
    let eig = SymmetricEigen::try_new(gram, f64::EPSILON, 0)
        .ok_or_else(|| Error::EigSolverFailure("null-space search".into()))?;
    let (k, &lam) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Error::EmptyState)?;
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    if lam > 1e-12 * top {
        return Ok(None);
    }
    let vec = eig.eigenvectors.column(k);
    let state = StateVector::from_entries(
        cols.iter()
            .zip(vec.iter())
            .filter(|(_, x)| x.abs() > 1e-12)
            .map(|(v, x)| (v.clone(), Complex64::new(*x, 0.0))),
    );
    Ok(Some(state.normalized()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, presets};
    use rand::{Rng, SeedableRng};

    fn z(d: usize) -> Lattice {
        build_lattice(presets::integer(d)).unwrap()
    }

    fn dist(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn z1_box_is_tridiagonal() {
        let op = build_truncated(&z(1), &[2], &[0]).unwrap();
        let h = op.to_dense();
        assert_eq!(h.nrows(), 5);
        for i in 0..5 {
            for j in 0..5 {
                let want = if (i as i64 - j as i64).abs() == 1 { 1.0 } else { 0.0 };
                assert_eq!(h[(i, j)], want);
            }
        }
    }

    #[test]
    fn hexagonal_box_degrees() {
        let lat = build_lattice(presets::hexagonal(1.0)).unwrap();
        let op = build_truncated(&lat, &[1, 1], &[0, 0]).unwrap();
        assert_eq!(op.len(), 18);
        let h = op.to_dense();
        assert_eq!(h, h.transpose());
        for i in 0..18 {
            assert!(op.row(i).count() <= 3);
        }
    }

    #[test]
    fn constant_potential_on_diagonal() {
        let lat = build_lattice(presets::triangular().with_constant_potential(0.7)).unwrap();
        let h = build_truncated(&lat, &[1, 1], &[0, 0]).unwrap().to_dense();
        assert!(h.diagonal().iter().all(|&x| x == 0.7));
    }

    #[test]
    fn box_cap_is_enforced() {
        let r = build_truncated_with_cap(&z(2), &[100, 100], &[0, 0], 1000);
        assert!(matches!(r, Err(Error::BoxTooLarge { .. })));
    }

    #[test]
    fn cell_box_indexing_round_trips() {
        let b = CellBox::new(vec![-2, 3], vec![1, 5], 2);
        for i in 0..b.len() {
            assert_eq!(b.index_of(&b.vertex(i)), Some(i));
        }
        assert_eq!(b.index_of(&VertexId::new(vec![2, 3], 0)), None);
    }

    #[test]
    fn zero_time_is_identity_and_norm_is_kept() {
        let lat = build_lattice(presets::hexagonal(1.0)).unwrap();
        let op = build_truncated(&lat, &[6, 6], &[0, 0]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let psi = StateVector::random(&lat, 6, 2, &mut rng);
        let x = op.embed(&psi).unwrap();
        assert_eq!(op.propagate(&x, 0.0, Method::Auto).unwrap(), x);
        for method in [Method::Dense, Method::Chebyshev] {
            let y = op.propagate(&x, 3.7, method).unwrap();
            let n: f64 = y.iter().map(|a| a.norm_sqr()).sum();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn chebyshev_matches_dense() {
        let lat = build_lattice(presets::lieb().with_constant_potential(0.3)).unwrap();
        let op = build_truncated(&lat, &[8, 8], &[0, 0]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let psi = StateVector::random(&lat, 5, 2, &mut rng);
        let x = op.embed(&psi).unwrap();
        for t in [0.5, 4.0, 11.0] {
            let a = op.propagate(&x, t, Method::Dense).unwrap();
            let b = op.propagate(&x, t, Method::Chebyshev).unwrap();
            assert!(dist(&a, &b) < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn semigroup_property() {
        let op = build_truncated(&z(2), &[10, 10], &[0, 0]).unwrap();
        let x = op.embed(&StateVector::delta(VertexId::origin(2, 0))).unwrap();
        for method in [Method::Dense, Method::Chebyshev] {
            let a = op.propagate(&op.propagate(&x, 1.3, method).unwrap(), 2.1, method).unwrap();
            let b = op.propagate(&x, 3.4, method).unwrap();
            assert!(dist(&a, &b) < 1e-8);
        }
    }

    #[test]
    fn negative_time_inverts() {
        let op = build_truncated(&z(1), &[30], &[0]).unwrap();
        let x = op.embed(&StateVector::delta(VertexId::origin(1, 0))).unwrap();
        let y = op.propagate(&op.propagate(&x, 5.0, Method::Chebyshev).unwrap(), -5.0, Method::Chebyshev).unwrap();
        assert!(dist(&x, &y) < 1e-9);
    }

    #[test]
    fn chebyshev_coefficients_truncate() {
        let c = chebyshev_coefficients(100.0);
        assert!(c.len() > 100 && c.len() < 200);
        assert_eq!(chebyshev_coefficients(0.0).len(), 1);
    }

    #[test]
    fn moments_of_delta_vanish() {
        let lat = build_lattice(presets::hexagonal(1.0)).unwrap();
        let v = VertexId::new(vec![1, 2], 1);
        let psi = StateVector::delta(v.clone());
        assert_eq!(moment(&lat, &psi, 3, &lat.position(&v)), 0.0);
    }

    #[test]
    fn z1_delta_ratio_is_two() {
        let lat = z(1);
        let opts = CurveOptions::default();
        let curve = ballistic_curve(&lat, &StateVector::delta(VertexId::origin(1, 0)), 1, &[5.0, 20.0], &opts).unwrap();
        for p in curve {
            assert!((p.ratio - 2.0).abs() < 1e-8);
            assert!(!p.flagged);
        }
    }

    #[test]
    fn box_choice_covers_speed() {
        let lat = build_lattice(presets::hexagonal(1.0)).unwrap();
        let psi = StateVector::delta(VertexId::origin(2, 0));
        let (c, r) = box_for(&lat, &psi, 10.0, &CurveOptions::default()).unwrap();
        assert_eq!(c, vec![0, 0]);
        // L D t |b| / 2 pi = sqrt(3) * 10 * 2 / sqrt(3) = 20 cells
        let want = (1.5 * 21.0 + 12.0 + 4.0 * 20f64.cbrt()).ceil() as i64;
        assert_eq!(r, vec![want, want]);
        let fixed = CurveOptions { radius: Some(7), ..CurveOptions::default() };
        assert_eq!(box_for(&lat, &psi, 10.0, &fixed).unwrap().1, vec![7, 7]);
    }

    #[test]
    fn ascending_times_required() {
        let lat = z(1);
        let psi = StateVector::delta(VertexId::origin(1, 0));
        assert!(ballistic_curve(&lat, &psi, 1, &[2.0, 1.0], &CurveOptions::default()).is_err());
        assert!(matches!(
            ballistic_curve(&lat, &psi, 1, &[0.0], &CurveOptions::default()),
            Err(Error::ZeroTime)
        ));
    }

    #[test]
    fn empirical_mass_balance() {
        let lat = z(1);
        let psi = StateVector::delta(VertexId::origin(1, 0));
        let opts = CurveOptions { radius: Some(35), ..CurveOptions::default() };
        let ev = evolve_in_box(&lat, &psi, 10.0, &opts).unwrap();
        let e = ev.empirical(&[0.0]).unwrap();
        assert!((e.total() + e.leak - 1.0).abs() < 1e-9);
        assert!(e.leak > 0.0 && e.leak < 1e-11);
        assert!(matches!(empirical_distribution(&ev.op, &ev.amps, 0.0, &[0.0]), Err(Error::ZeroTime)));
    }

    #[test]
    fn graph_distance_on_hexagonal() {
        let lat = build_lattice(presets::hexagonal(1.0)).unwrap();
        let o = VertexId::origin(2, 0);
        let d = graph_distances(&lat, &o, &[o.clone(), VertexId::origin(2, 1), VertexId::new(vec![1, 0], 0)]);
        assert_eq!(d, vec![0, 1, 2]);
    }

    #[test]
    fn bound_polynomials_lead_with_d_power() {
        let p = moment_bound_polynomials(&[1.0, 0.0, 0.0, 0.0], 3);
        assert_eq!(p[1], vec![0.0, 3.0]);
        assert!((p[2][2] - 9.0).abs() < 1e-12);
        assert!((p[3][3] - 27.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_superposition_matches_direct() {
        let lat = build_lattice(presets::hexagonal(1.0)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let psi = StateVector::random(&lat, 4, 2, &mut rng);
        let opts = CurveOptions::default();
        let k = Kernel::new(&lat, 3.0, &opts).unwrap();
        let (cb, amps) = k.apply(&psi).unwrap();
        let direct = evolve_in_box(&lat, &psi, 3.0, &opts).unwrap().to_state();
        let mut err: f64 = 0.0;
        for (v, a) in direct.iter() {
            let b = cb.index_of(v).map_or(czero(), |i| amps[i]);
            err = err.max((a - b).norm());
        }
        assert!(err < 1e-9);
    }

    #[test]
    fn upper_bound_on_z1_delta() {
        let lat = z(1);
        let times: Vec<f64> = vec![1.0, 5.0, 20.0];
        let r = upper_bound_check(&lat, &StateVector::delta(VertexId::origin(1, 0)), 1, &times).unwrap();
        assert!(r.passed(), "{:?}", r.violations);
        for p in &r.points {
            assert!(p.root_moment / p.t <= 2.0 + 1e-9);
        }
    }

    #[test]
    fn interpolation_on_random_states() {
        let lat = z(1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let opts = CurveOptions { safety: 1.1, ..CurveOptions::default() };
        let kernels: Vec<Kernel> = (1..=20).map(|t| Kernel::new(&lat, t as f64, &opts).unwrap()).collect();
        for _ in 0..5 {
            let psi = StateVector::random(&lat, 10, rng.random_range(5..9), &mut rng);
            let r = upper_bound_check_with(&lat, &kernels, &psi, 2).unwrap();
            assert!(r.passed(), "{:?}", r.violations);
        }
    }

    #[test]
    fn lieb_compact_eigenvector() {
        let lat = build_lattice(presets::lieb()).unwrap();
        let psi = compact_eigenvector(&lat, 0.0, 1).unwrap().expect("flat band state");
        let op = build_truncated(&lat, &[4, 4], &[0, 0]).unwrap();
        let x = op.embed(&psi).unwrap();
        let hx = op.apply(&x);
        assert!(hx.iter().all(|z| z.norm() < 1e-10));
        // no compact state at an energy off the flat band
        assert!(compact_eigenvector(&lat, 0.5, 1).unwrap().is_none());
    }
}
