//! Independent reference computations used by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// `J_n(x)` from the integral `(1/2pi) int_0^{2pi} cos(n s - x sin s) ds`
/// by the periodic trapezoid rule.
pub fn bessel_j(n: i64, x: f64) -> f64 {
    let nodes = 2048 + 8 * (n.unsigned_abs() as usize + x.abs() as usize);
    let h = 2.0 * PI / nodes as f64;
    (0..nodes)
        .map(|k| {
            let s = k as f64 * h;
            (n as f64 * s - x * s.sin()).cos()
        })
        .sum::<f64>()
        / nodes as f64
}

/// `(e^{-itA} delta_0)(n) = (-i)^n J_n(2t)` on Z.
pub fn z1_amplitude(n: i64, t: f64) -> Complex64 {
    Complex64::new(0.0, -1.0).powi(n.rem_euclid(4) as i32) * bessel_j(n, 2.0 * t)
}

/// CDF of `2 sin(2 pi U)` with `U` uniform.
pub fn arcsine_cdf(v: f64) -> f64 {
    if v <= -2.0 {
        0.0
    } else if v >= 2.0 {
        1.0
    } else {
        0.5 + (v / 2.0).asin() / PI
    }
}

/// Root of `q z^2 - gamma z + 1 = 0` with negative imaginary part.
pub fn quadratic_zeta(q: f64, gamma: Complex64) -> Complex64 {
    let d = (gamma * gamma - 4.0 * q).sqrt();
    let r1 = (gamma + d) / (2.0 * q);
    let r2 = (gamma - d) / (2.0 * q);
    if r1.im < 0.0 {
        r1
    } else {
        r2
    }
}

/// `G(o, o)` of the `(q+1)`-regular tree with zero potential.
pub fn quadratic_green(q: f64, gamma: Complex64) -> Complex64 {
    1.0 / ((q + 1.0) * quadratic_zeta(q, gamma) - gamma)
}

/// `sum_r r^beta S_r` for the `(q+1)`-regular tree, from the radial Jacobi
/// chain (hopping `sqrt(q+1)` then `sqrt(q)`) truncated at `len` sites.
pub fn radial_chain_moment(q: f64, gamma: Complex64, beta: f64, len: usize) -> f64 {
    // Thomas algorithm for (J - gamma) x = e_0 with J symmetric tridiagonal
    let hop = |r: usize| if r == 0 { (q + 1.0).sqrt() } else { q.sqrt() };
    let diag = -gamma;
    let mut c = vec![Complex64::new(0.0, 0.0); len];
    let mut d = vec![Complex64::new(0.0, 0.0); len];
    let mut denom = diag;
    c[0] = hop(0) / denom;
    d[0] = 1.0 / denom;
    for r in 1..len {
        denom = diag - hop(r - 1) * c[r - 1];
        if r + 1 < len {
            c[r] = hop(r) / denom;
        }
        d[r] = (0.0 - hop(r - 1) * d[r - 1]) / denom;
    }
    let mut x = vec![Complex64::new(0.0, 0.0); len];
    x[len - 1] = d[len - 1];
    for r in (0..len - 1).rev() {
        x[r] = d[r] - c[r] * x[r + 1];
    }
    x.iter().enumerate().map(|(r, v)| (r as f64).powf(beta) * v.norm_sqr()).sum()
}

/// A finite piece of the universal cover of a graph, built vertex by vertex.
pub struct ExplicitCover {
    /// Base vertex of each cover vertex.
    pub class: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    pub depth: Vec<usize>,
    pub children: Vec<Vec<usize>>,
}

impl ExplicitCover {
    /// Non-backtracking walks from `root` of length at most `depth`.
    pub fn build(adj: &[Vec<usize>], root: usize, depth: usize) -> Self {
        let mut cover = ExplicitCover { class: vec![root], parent: vec![None], depth: vec![0], children: vec![vec![]] };
        let mut frontier = vec![0usize];
        for level in 1..=depth {
            let mut next = Vec::new();
            for &v in &frontier {
                let cv = cover.class[v];
                let back = cover.parent[v].map(|p| cover.class[p]);
                for &w in &adj[cv] {
                    if Some(w) == back {
                        continue;
                    }
                    let id = cover.class.len();
                    cover.class.push(w);
                    cover.parent.push(Some(v));
                    cover.depth.push(level);
                    cover.children.push(vec![]);
                    cover.children[v].push(id);
                    next.push(id);
                }
            }
            frontier = next;
        }
        cover
    }

    pub fn len(&self) -> usize {
        self.class.len()
    }

    /// Diagonal of `H - gamma`; leaves get `boundary(parent class, leaf class)` added.
    pub fn diagonal<F: Fn(usize, usize) -> Complex64>(
        &self,
        potential: &[f64],
        gamma: Complex64,
        max_depth: usize,
        boundary: F,
    ) -> Vec<Complex64> {
        (0..self.len())
            .map(|v| {
                let mut x = potential[self.class[v]] - gamma;
                if self.depth[v] == max_depth {
                    let p = self.parent[v].map(|p| self.class[p]).expect("leaves have parents");
                    x += boundary(p, self.class[v]);
                }
                x
            })
            .collect()
    }

    /// Leaf-first elimination. Returns the pivots; `G(o, o) = 1 / pivot[0]`
    /// and `zeta_(parent -> v) = -1 / pivot[v]`.
    pub fn eliminate(&self, diag: &[Complex64]) -> Vec<Complex64> {
        let mut pivot = diag.to_vec();
        for v in (1..self.len()).rev() {
            let p = self.parent[v].expect("non-root vertex");
            pivot[p] = pivot[p] - 1.0 / pivot[v];
        }
        pivot
    }

    /// Dense `(H - gamma)^{-1}` entry `(0, 0)` via LU.
    pub fn dense_root_green(&self, diag: &[Complex64]) -> Complex64 {
        let n = self.len();
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for v in 0..n {
            m[(v, v)] = diag[v];
            if let Some(p) = self.parent[v] {
                m[(v, p)] = Complex64::new(1.0, 0.0);
                m[(p, v)] = Complex64::new(1.0, 0.0);
            }
        }
        let mut rhs = DVector::<Complex64>::zeros(n);
        rhs[0] = Complex64::new(1.0, 0.0);
        m.lu().solve(&rhs).expect("nonsingular")[0]
    }
}

/// Honeycomb band velocity `(1/2pi) sum_l a_l d/dtheta_l |xi(theta)|` with
/// `xi = 1 + e^{-2 pi i theta_1} + e^{-2 pi i theta_2}`, by central differences.
pub fn honeycomb_velocity(theta: &[f64], basis: &[Vec<f64>], sign: f64) -> Vec<f64> {
    let xi = |a: f64, b: f64| {
        (Complex64::new(1.0, 0.0)
            + Complex64::from_polar(1.0, -2.0 * PI * a)
            + Complex64::from_polar(1.0, -2.0 * PI * b))
        .norm()
    };
    let h = 1e-6;
    let d1 = (xi(theta[0] + h, theta[1]) - xi(theta[0] - h, theta[1])) / (2.0 * h);
    let d2 = (xi(theta[0], theta[1] + h) - xi(theta[0], theta[1] - h)) / (2.0 * h);
    (0..2).map(|k| sign * (basis[0][k] * d1 + basis[1][k] * d2) / (2.0 * PI)).collect()
}
