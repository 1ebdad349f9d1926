//! Free Schrödinger evolution on R^d (d = 1, 2) by a periodic spectral grid.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numerics::{pairwise_sum, Atoms1d};

/// Spectral or spatial mass allowed in the outer tenth of the box.
pub const EDGE_TOL: f64 = 1e-10;
/// Relative tolerance for the inequality checks.
pub const INEQUALITY_RTOL: f64 = 1e-10;

/// Samples on the grid `x_i = -X + i dx`, `dx = 2X / M`, row-major.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub dim: usize,
    pub half_width: f64,
    pub points: usize,
    pub values: Vec<Complex64>,
}

impl GridFunction {
    pub fn from_fn<F: Fn(&[f64]) -> Complex64>(dim: usize, half_width: f64, points: usize, f: F) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidParameter("grid dimension must be 1 or 2".into()));
        }
        if points < 2 || points % 2 != 0 || !(half_width > 0.0) {
            return Err(Error::InvalidParameter("grid needs an even point count and positive width".into()));
        }
        let mut g = GridFunction { dim, half_width, points, values: Vec::new() };
        let n = points.pow(dim as u32);
        g.values = (0..n).map(|i| f(&g.coords(i))).collect();
        Ok(g)
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    pub fn coords(&self, mut i: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for k in (0..self.dim).rev() {
            x[k] = -self.half_width + (i % self.points) as f64 * self.dx();
            i /= self.points;
        }
        x
    }

    /// Angular wavenumber of FFT index `i` along one axis.
    pub fn wavenumber(&self, i: usize) -> f64 {
        let m = self.points as i64;
        let f = if (i as i64) < m / 2 { i as i64 } else { i as i64 - m };
        2.0 * PI * f as f64 / (m as f64 * self.dx())
    }

    pub fn k_nyquist(&self) -> f64 {
        PI / self.dx()
    }

    pub fn wavevector(&self, mut i: usize) -> Vec<f64> {
        let mut k = vec![0.0; self.dim];
        for kk in (0..self.dim).rev() {
            k[kk] = self.wavenumber(i % self.points);
            i /= self.points;
        }
        k
    }

    pub fn norm_sqr(&self) -> f64 {
        let t: Vec<f64> = self.values.iter().map(|z| z.norm_sqr()).collect();
        pairwise_sum(&t) * self.cell_volume()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::EmptyState);
        }
        for v in &mut self.values {
            *v /= n;
        }
        Ok(self)
    }

    /// Unnormalized discrete Fourier transform of the samples.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut data = self.values.clone();
        fft_nd(&mut data, self.dim, self.points, false);
        data
    }

    fn from_spectrum(&self, mut spec: Vec<Complex64>) -> Self {
        fft_nd(&mut spec, self.dim, self.points, true);
        let scale = 1.0 / self.values.len() as f64;
        for v in &mut spec {
            *v *= scale;
        }
        GridFunction { values: spec, ..self.clone() }
    }

    /// Fraction of spectral mass with some `|k_j| > 0.9 k_nyq`.
    pub fn spectral_edge_mass(&self) -> f64 {
        let spec = self.spectrum();
        let cut = 0.9 * self.k_nyquist();
        let mut outer = Vec::new();
        let mut all = Vec::with_capacity(spec.len());
        for (i, z) in spec.iter().enumerate() {
            let w = z.norm_sqr();
            all.push(w);
            if self.wavevector(i).iter().any(|k| k.abs() > cut) {
                outer.push(w);
            }
        }
        pairwise_sum(&outer) / pairwise_sum(&all)
    }

    /// Fraction of mass with some `|x_j| > 0.9 X`.
    pub fn spatial_edge_mass(&self) -> f64 {
        let cut = 0.9 * self.half_width;
        let mut outer = Vec::new();
        for (i, z) in self.values.iter().enumerate() {
            if self.coords(i).iter().any(|x| x.abs() > cut) {
                outer.push(z.norm_sqr());
            }
        }
        pairwise_sum(&outer) * self.cell_volume() / self.norm_sqr()
    }

    pub fn check_spectrum(&self) -> Result<()> {
        let mass = self.spectral_edge_mass();
        if mass > EDGE_TOL {
            return Err(Error::AliasRisk { mass, limit: EDGE_TOL });
        }
        Ok(())
    }

    /// `|| x_axis^j f ||`.
    pub fn x_norm(&self, axis: usize, j: u32) -> f64 {
        let t: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, z)| self.coords(i)[axis].powi(2 * j as i32) * z.norm_sqr())
            .collect();
        (pairwise_sum(&t) * self.cell_volume()).sqrt()
    }

    /// `|| D_axis^j f ||` computed spectrally.
    pub fn d_norm(&self, axis: usize, j: u32) -> f64 {
        d_norm_from(self, &self.spectrum(), axis, j)
    }

    /// `sum_j || x_j^m f ||^2`.
    pub fn moment(&self, m: u32) -> f64 {
        (0..self.dim).map(|k| self.x_norm(k, m).powi(2)).sum()
    }
}

fn d_norm_from(f: &GridFunction, spec: &[Complex64], axis: usize, j: u32) -> f64 {
    let t: Vec<f64> = spec
        .iter()
        .enumerate()
        .map(|(i, z)| f.wavevector(i)[axis].powi(2 * j as i32) * z.norm_sqr())
        .collect();
    (pairwise_sum(&t) * f.cell_volume() / spec.len() as f64).sqrt()
}

fn fft_nd(data: &mut [Complex64], dim: usize, m: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse { planner.plan_fft_inverse(m) } else { planner.plan_fft_forward(m) };
    // last axis is contiguous
    fft.process(data);
    if dim == 2 {
        let mut col = vec![Complex64::new(0.0, 0.0); m];
        for c in 0..m {
            for r in 0..m {
                col[r] = data[r * m + c];
            }
            fft.process(&mut col);
            for r in 0..m {
                data[r * m + c] = col[r];
            }
        }
    }
}

/// `e^{it Delta} f`: multiplies the spectrum by `exp(-it |k|^2)`.
pub fn free_evolve(f: &GridFunction, t: f64) -> Result<GridFunction> {
    f.check_spectrum()?;
    if t == 0.0 {
        return Ok(f.clone());
    }
    let mut spec = f.spectrum();
    for (i, z) in spec.iter_mut().enumerate() {
        let k2: f64 = f.wavevector(i).iter().map(|k| k * k).sum();
        *z *= Complex64::from_polar(1.0, -t * k2);
    }
    let out = f.from_spectrum(spec);
    let mass = out.spatial_edge_mass();
    if mass > EDGE_TOL {
        return Err(Error::BoundaryContact { mass, limit: EDGE_TOL });
    }
    Ok(out)
}

/// `4^m sum_j || D_j^m f ||^2`.
pub fn cont_free_limit(f: &GridFunction, m: u32) -> Result<f64> {
    f.check_spectrum()?;
    let spec = f.spectrum();
    Ok(4f64.powi(m as i32) * (0..f.dim).map(|k| d_norm_from(f, &spec, k, m).powi(2)).sum::<f64>())
}

/// Density `2^{-d} |f^(v/2)|^2` on the velocity grid `v = 2k`.
#[derive(Debug, Clone)]
pub struct VelocityDensity {
    pub dim: usize,
    /// Velocity nodes along one axis, ascending.
    pub axis: Vec<f64>,
    pub spacing: f64,
    /// Row-major over `axis^dim`.
    pub values: Vec<f64>,
}

impl VelocityDensity {
    pub fn total(&self) -> f64 {
        pairwise_sum(&self.values) * self.spacing.powi(self.dim as i32)
    }

    pub fn marginal(&self, axis: usize) -> Atoms1d {
        let n = self.axis.len();
        let cell = self.spacing.powi(self.dim as i32);
        let mut w = vec![0.0; n];
        for (i, p) in self.values.iter().enumerate() {
            let idx = if self.dim == 1 || axis == 1 { i % n } else { i / n };
            w[idx] += p * cell;
        }
        Atoms1d::new(self.axis.iter().copied().zip(w).collect())
    }
}

pub fn cont_limit_density(f: &GridFunction) -> Result<VelocityDensity> {
    let n2 = f.norm_sqr();
    if (n2 - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized(n2));
    }
    let spec = f.spectrum();
    let m = f.points;
    let d = f.dim;
    // |f^(k)|^2 = (dx^2 / 2 pi)^d |F_k|^2 for the unitary transform
    let scale = (f.dx() * f.dx() / (2.0 * PI)).powi(d as i32) / 2f64.powi(d as i32);
    let order: Vec<usize> = (0..m).map(|i| (i + m / 2) % m).collect();
    let axis: Vec<f64> = order.iter().map(|&i| 2.0 * f.wavenumber(i)).collect();
    let values = if d == 1 {
        order.iter().map(|&i| scale * spec[i].norm_sqr()).collect()
    } else {
        let mut v = Vec::with_capacity(m * m);
        for &r in &order {
            for &c in &order {
                v.push(scale * spec[r * m + c].norm_sqr());
            }
        }
        v
    };
    Ok(VelocityDensity { dim: d, axis, spacing: 4.0 * PI / (m as f64 * f.dx()), values })
}

/// Law of `x / t` under `|f_t(x)|^2 dx`, per axis.
pub fn empirical_marginal(f: &GridFunction, t: f64, axis: usize) -> Result<Atoms1d> {
    if t <= 0.0 {
        return Err(Error::ZeroTime);
    }
    let cell = f.cell_volume();
    Ok(Atoms1d::new(
        f.values
            .iter()
            .enumerate()
            .map(|(i, z)| (f.coords(i)[axis] / t, z.norm_sqr() * cell))
            .collect(),
    ))
}

#[derive(Debug, Clone)]
pub struct Gaussian {
    pub amplitude: Complex64,
    pub center: Vec<f64>,
    pub sigma: f64,
    pub momentum: Vec<f64>,
}

impl Gaussian {
    pub fn eval(&self, x: &[f64]) -> Complex64 {
        let mut r2 = 0.0;
        let mut ph = 0.0;
        for ((xi, c), p) in x.iter().zip(&self.center).zip(&self.momentum) {
            r2 += (xi - c).powi(2);
            ph += p * xi;
        }
        self.amplitude * (-r2 / (2.0 * self.sigma * self.sigma)).exp() * Complex64::from_polar(1.0, ph)
    }
}

/// Normalized sum of Gaussians sampled on a grid.
pub fn gaussian_mixture(dim: usize, half_width: f64, points: usize, parts: &[Gaussian]) -> Result<GridFunction> {
    GridFunction::from_fn(dim, half_width, points, |x| parts.iter().map(|g| g.eval(x)).sum())?.normalized()
}

/// `exp(-|x|^2 / (2 sigma^2))`, normalized.
pub fn gaussian(dim: usize, half_width: f64, points: usize, sigma: f64) -> Result<GridFunction> {
    let g = Gaussian {
        amplitude: Complex64::new(1.0, 0.0),
        center: vec![0.0; dim],
        sigma,
        momentum: vec![0.0; dim],
    };
    gaussian_mixture(dim, half_width, points, &[g])
}

/// A random mixture of 1 to 4 Gaussians with centers in `[-4, 4]`, widths in
/// `[0.6, 2]` and momenta in `[-1, 1]`.
pub fn random_mixture<R: Rng>(dim: usize, rng: &mut R) -> Vec<Gaussian> {
    let n = rng.random_range(1..=4);
    (0..n)
        .map(|_| Gaussian {
            amplitude: Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            center: (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect(),
            sigma: rng.random_range(0.6..2.0),
            momentum: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct InequalityReport {
    pub checks: usize,
    pub violations: Vec<String>,
    /// Smallest `rhs - lhs` relative to `rhs` over all checks.
    pub min_slack: f64,
}

impl InequalityReport {
    fn check(&mut self, name: &str, lhs: f64, rhs: f64) {
        self.checks += 1;
        let slack = if rhs > 0.0 { (rhs - lhs) / rhs } else { rhs - lhs };
        if self.checks == 1 || slack < self.min_slack {
            self.min_slack = slack;
        }
        if lhs > rhs * (1.0 + INEQUALITY_RTOL) + 1e-300 {
            self.violations.push(format!("{name}: {lhs:e} > {rhs:e}"));
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Interpolation, Gagliardo-Nirenberg, uncertainty and product bounds for
/// every axis and every `j, n <= m`.
pub fn inequality_suite(f: &GridFunction, m: u32) -> Result<InequalityReport> {
    f.check_spectrum()?;
    let spec = f.spectrum();
    let norm = f.norm_sqr().sqrt();
    let mut rep = InequalityReport::default();
    let mf = f64::from(m);
    for k in 0..f.dim {
        let xs: Vec<f64> = (0..=m).map(|j| f.x_norm(k, j)).collect();
        let ds: Vec<f64> = (0..=m).map(|j| d_norm_from(f, &spec, k, j)).collect();
        let (xm, dm) = (xs[m as usize], ds[m as usize]);
        for j in 0..=m {
            let jf = f64::from(j);
            let (xj, dj) = (xs[j as usize], ds[j as usize]);
            rep.check(
                &format!("axis {k} holder x^{j}"),
                xj * xj,
                xm.powf(2.0 * jf / mf) * norm.powf(2.0 * (mf - jf) / mf),
            );
            rep.check(
                &format!("axis {k} interpolation D^{j}"),
                dj,
                dm.powf(jf / mf) * norm.powf((mf - jf) / mf),
            );
            rep.check(
                &format!("axis {k} product j = {j}"),
                xj * dj,
                2f64.powf(mf - jf) * xm * dm,
            );
            for n in 0..=m {
                let nf = f64::from(n);
                rep.check(
                    &format!("axis {k} mixed product j = {j}, n = {n}"),
                    xj * ds[n as usize],
                    2f64.powf((2.0 * mf - jf - nf) / 2.0)
                        * xm.powf((2.0 * mf + jf - nf) / (2.0 * mf))
                        * dm.powf((2.0 * mf - jf + nf) / (2.0 * mf)),
                );
            }
        }
        rep.check(&format!("axis {k} uncertainty"), norm * norm, 2f64.powf(mf) * xm * dm);
    }
    Ok(rep)
}
