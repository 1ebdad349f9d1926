//! Green functions on universal covering trees of finite graphs.
//!
//! Directed edges of the cover fall into finitely many classes (the directed
//! edges of the base graph), and `zeta_v(w) = G(v, w) / G(v, v)` depends only
//! on the class of `(v, w)`. Everything here works on those classes.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::pairwise_sum;

/// Base graph as written in a graph file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSpec {
    pub vertices: Vec<i64>,
    pub edges: Vec<(i64, i64)>,
    pub potential: Vec<f64>,
    pub root: i64,
}

impl GraphSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Parse { context: "graph file".into(), source })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| Error::Parse {
            context: format!("graph file {}", path.display()),
            source,
        })
    }

    /// Complete bipartite graph `K_{a,b}` with zero potential, rooted on the `a` side.
    pub fn complete_bipartite(a: usize, b: usize) -> Self {
        let vertices: Vec<i64> = (0..(a + b) as i64).collect();
        let mut edges = Vec::new();
        for i in 0..a as i64 {
            for j in a as i64..(a + b) as i64 {
                edges.push((i, j));
            }
        }
        GraphSpec { vertices, edges, potential: vec![0.0; a + b], root: 0 }
    }

    /// Complete graph `K_n` with zero potential.
    pub fn complete(n: usize) -> Self {
        let vertices: Vec<i64> = (0..n as i64).collect();
        let mut edges = Vec::new();
        for i in 0..n as i64 {
            for j in i + 1..n as i64 {
                edges.push((i, j));
            }
        }
        GraphSpec { vertices, edges, potential: vec![0.0; n], root: 0 }
    }
}

/// Universal cover of a finite graph, described through its directed-edge classes.
#[derive(Debug, Clone)]
pub struct TreeModel {
    name: String,
    potential: Vec<f64>,
    root: usize,
    /// `(from, to)` vertex classes of each directed-edge class.
    edges: Vec<(usize, usize)>,
    /// Classes of the edges leaving `to` other than the reverse, with multiplicity.
    children: Vec<Vec<usize>>,
    reverse: Vec<usize>,
    out_edges: Vec<Vec<usize>>,
    min_degree: usize,
}

impl TreeModel {
    /// The `(q + 1)`-regular tree with constant potential `w`.
    pub fn regular(q: usize, w: f64) -> Result<Self> {
        if q < 1 {
            return Err(Error::InvalidModel("regular tree needs q >= 1".into()));
        }
        Ok(TreeModel {
            name: format!("regular-q{q}"),
            potential: vec![w],
            root: 0,
            edges: vec![(0, 0)],
            children: vec![vec![0; q]],
            reverse: vec![0],
            out_edges: vec![vec![0; q + 1]],
            min_degree: q + 1,
        })
    }

    pub fn from_graph(spec: &GraphSpec) -> Result<Self> {
        let n = spec.vertices.len();
        if n == 0 {
            return Err(Error::InvalidModel("graph has no vertices".into()));
        }
        if spec.potential.len() != n {
            return Err(Error::InvalidModel(format!("{} potential values for {n} vertices", spec.potential.len())));
        }
        let mut ids = BTreeMap::new();
        for (i, v) in spec.vertices.iter().enumerate() {
            if ids.insert(*v, i).is_some() {
                return Err(Error::InvalidModel(format!("duplicate vertex id {v}")));
            }
        }
        let lookup = |v: i64| ids.get(&v).copied().ok_or_else(|| Error::InvalidModel(format!("unknown vertex id {v}")));
        let root = lookup(spec.root)?;
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &spec.edges {
            let (i, j) = (lookup(a)?, lookup(b)?);
            if i == j {
                return Err(Error::InvalidModel(format!("self-loop at {a}")));
            }
            if adj[i].contains(&j) {
                return Err(Error::InvalidModel(format!("multi-edge between {a} and {b}")));
            }
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidModel("graph is not connected".into()));
        }
        let min_degree = adj.iter().map(Vec::len).min().unwrap_or(0);
        if min_degree < 2 {
            return Err(Error::InvalidModel("minimal degree must be at least 2".into()));
        }

        let mut edges = Vec::new();
        let mut index = BTreeMap::new();
        for (v, nb) in adj.iter().enumerate() {
            for &w in nb {
                index.insert((v, w), edges.len());
                edges.push((v, w));
            }
        }
        let children = edges
            .iter()
            .map(|&(w, v)| adj[v].iter().filter(|&&u| u != w).map(|&u| index[&(v, u)]).collect())
            .collect();
        let reverse = edges.iter().map(|&(a, b)| index[&(b, a)]).collect();
        let out_edges = adj.iter().enumerate().map(|(v, nb)| nb.iter().map(|&w| index[&(v, w)]).collect()).collect();
        Ok(TreeModel {
            name: "graph".into(),
            potential: spec.potential.clone(),
            root,
            edges,
            children,
            reverse,
            out_edges,
            min_degree,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn edge_classes(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn children(&self, e: usize) -> &[usize] {
        &self.children[e]
    }

    pub fn reverse(&self, e: usize) -> usize {
        self.reverse[e]
    }

    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.out_edges[v]
    }

    pub fn vertex_classes(&self) -> usize {
        self.potential.len()
    }

    pub fn min_degree(&self) -> usize {
        self.min_degree
    }

    /// Same cover with the potential replaced.
    pub fn with_potential(mut self, potential: Vec<f64>) -> Result<Self> {
        if potential.len() != self.potential.len() {
            return Err(Error::InvalidModel("potential length mismatch".into()));
        }
        self.potential = potential;
        Ok(self)
    }

    fn map(&self, zeta: &[Complex64], gamma: Complex64, e: usize) -> Complex64 {
        let v = self.edges[e].1;
        let s: Complex64 = self.children[e].iter().map(|&c| zeta[c]).sum();
        -1.0 / (self.potential[v] + s - gamma)
    }

    fn defect(&self, zeta: &[Complex64], gamma: Complex64) -> f64 {
        (0..zeta.len()).map(|e| (zeta[e] - self.map(zeta, gamma, e)).norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct GreenCache {
    pub gamma: Complex64,
    /// One value per directed-edge class.
    pub zeta: Vec<Complex64>,
    /// One value per vertex class.
    pub g_diag: Vec<Complex64>,
    pub residual: f64,
    pub iterations: usize,
}

impl GreenCache {
    pub fn g_root(&self, model: &TreeModel) -> Complex64 {
        self.g_diag[model.root]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Plain iterations tried before switching to continuation in `eta`.
    pub plain_budget: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { damping: 0.5, tol: 1e-12, max_iter: 100_000, plain_budget: 2_000 }
    }
}

fn herglotz(zeta: &[Complex64]) -> bool {
    zeta.iter().all(|z| z.im < 0.0 && z.re.is_finite())
}

/// Damped iteration `zeta <- (1 - a) zeta + a F(zeta)`. Returns the iteration count on success.
fn damped(model: &TreeModel, zeta: &mut [Complex64], gamma: Complex64, opts: &SolverOptions, budget: usize) -> Option<usize> {
    let a = opts.damping;
    let mut next = zeta.to_vec();
    for it in 1..=budget {
        let mut change: f64 = 0.0;
        for (e, n) in next.iter_mut().enumerate() {
            *n = (1.0 - a) * zeta[e] + a * model.map(zeta, gamma, e);
            change = change.max((*n - zeta[e]).norm());
        }
        zeta.copy_from_slice(&next);
        if !herglotz(zeta) {
            return None;
        }
        if change < opts.tol {
            return Some(it);
        }
    }
    None
}

/// Newton's method on `zeta - F(zeta) = 0`.
fn newton(model: &TreeModel, zeta: &mut [Complex64], gamma: Complex64) -> bool {
    let n = zeta.len();
    for _ in 0..60 {
        let f: Vec<Complex64> = (0..n).map(|e| model.map(zeta, gamma, e)).collect();
        let r = DVector::from_iterator(n, (0..n).map(|e| f[e] - zeta[e]));
        let mut j = DMatrix::<Complex64>::identity(n, n);
        for e in 0..n {
            for &c in &model.children[e] {
                j[(e, c)] -= f[e] * f[e];
            }
        }
        let Some(step) = j.lu().solve(&r) else { return false };
        let mut size: f64 = 0.0;
        for (z, s) in zeta.iter_mut().zip(step.iter()) {
            *z += s;
            size = size.max(s.norm());
        }
        if !zeta.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return false;
        }
        if size < 1e-15 * (1.0 + zeta.iter().map(|z| z.norm()).fold(0.0, f64::max)) {
            return herglotz(zeta);
        }
    }
    model.defect(zeta, gamma) < 1e-13 && herglotz(zeta)
}

/// Solves `-1/zeta_(w->v) = W(v) + sum_{u in N_v \ w} zeta_(v->u) - gamma`.
pub fn zeta_fixed_point(model: &TreeModel, gamma: Complex64) -> Result<GreenCache> {
    zeta_fixed_point_with(model, gamma, &SolverOptions::default())
}

pub fn zeta_fixed_point_with(model: &TreeModel, gamma: Complex64, opts: &SolverOptions) -> Result<GreenCache> {
    let eta = gamma.im;
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter("energy must have positive imaginary part".into()));
    }
    let n = model.edges.len();
    let start = vec![Complex64::new(0.0, -1.0); n];
    let mut zeta = start.clone();
    let mut iterations = 0;
    let mut ok = match damped(model, &mut zeta, gamma, opts, opts.plain_budget.min(opts.max_iter)) {
        Some(it) => {
            iterations = it;
            newton(model, &mut zeta, gamma) || herglotz(&zeta)
        }
        None => false,
    };
    if !ok {
        // continuation from eta = 1 down to the target
        let mut etas = vec![eta.max(1.0)];
        while *etas.last().expect("nonempty") > eta {
            let next = (etas.last().expect("nonempty") * 0.5).max(eta);
            etas.push(next);
        }
        zeta = start;
        ok = true;
        for e in etas {
            let g = Complex64::new(gamma.re, e);
            let saved = zeta.clone();
            if newton(model, &mut zeta, g) {
                continue;
            }
            zeta = saved;
            match damped(model, &mut zeta, g, opts, opts.max_iter) {
                Some(it) => {
                    iterations += it;
                    newton(model, &mut zeta, g);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
    }
    let residual = model.defect(&zeta, gamma);
    if !ok || !herglotz(&zeta) || residual > opts.tol.max(1e-12) {
        return Err(Error::NoConvergence { iterations: opts.max_iter, residual });
    }
    let mut cache = GreenCache { gamma, zeta, g_diag: Vec::new(), residual, iterations };
    cache.g_diag = green_diagonal(model, &cache)?;
    Ok(cache)
}

/// `1/G(v, v) = W(v) + sum_{u ~ v} zeta_v(u) - gamma` for every vertex class.
pub fn green_diagonal(model: &TreeModel, cache: &GreenCache) -> Result<Vec<Complex64>> {
    (0..model.vertex_classes())
        .map(|v| {
            let s: Complex64 = model.out_edges[v].iter().map(|&e| cache.zeta[e]).sum();
            let den = model.potential[v] + s - cache.gamma;
            if den.norm() < 1e-14 {
                Err(Error::DegenerateDenominator(den.norm()))
            } else {
                Ok(1.0 / den)
            }
        })
        .collect()
}

/// Largest defect of `|Im zeta_e| / |zeta_e|^2 - Im gamma - sum_children |Im zeta_c|`.
pub fn redu_residual(model: &TreeModel, cache: &GreenCache) -> f64 {
    (0..model.edges.len())
        .map(|e| {
            let z = cache.zeta[e];
            let s: f64 = model.children[e].iter().map(|&c| cache.zeta[c].im.abs()).sum();
            (z.im.abs() / z.norm_sqr() - cache.gamma.im - s).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest defect of `1/zeta_(w->v) - zeta_(v->w) + 1/G(v, v)`.
pub fn zetainv_residual(model: &TreeModel, cache: &GreenCache) -> f64 {
    (0..model.edges.len())
        .map(|e| {
            let v = model.edges[e].1;
            (1.0 / cache.zeta[e] - cache.zeta[model.reverse[e]] + 1.0 / cache.g_diag[v]).norm()
        })
        .fold(0.0, f64::max)
}

/// `z = min over edge classes of |Im zeta|` at `lambda + i eta`.
pub fn spectral_floor(model: &TreeModel, lambda: f64, eta: f64) -> Result<f64> {
    let cache = zeta_fixed_point(model, Complex64::new(lambda, eta))?;
    Ok(floor_of(&cache))
}

fn floor_of(cache: &GreenCache) -> f64 {
    cache.zeta.iter().map(|z| z.im.abs()).fold(f64::INFINITY, f64::min)
}

/// Quadrature nodes and weights in energy.
#[derive(Debug, Clone)]
pub struct LambdaGrid {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LambdaGrid {
    /// Midpoint rule with `n` cells on `[a, b]`.
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self> {
        if n == 0 || !(b > a) {
            return Err(Error::InvalidParameter("energy grid needs n >= 1 and a < b".into()));
        }
        let h = (b - a) / n as f64;
        Ok(LambdaGrid {
            points: (0..n).map(|i| a + (i as f64 + 0.5) * h).collect(),
            weights: vec![h; n],
        })
    }
}

/// Sphere sums `S_r = sum_{|v| = r} |G(o, v)|^2` for `r = 0..=depth`.
pub fn sphere_sums(model: &TreeModel, cache: &GreenCache, depth: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(depth + 1);
    let g2 = cache.g_root(model).norm_sqr();
    out.push(g2);
    let mut p = first_shell(model, cache);
    for _ in 1..=depth {
        out.push(g2 * pairwise_sum(&p));
        p = next_shell(model, cache, &p);
    }
    out
}

fn first_shell(model: &TreeModel, cache: &GreenCache) -> Vec<f64> {
    let mut p = vec![0.0; model.edges.len()];
    for &e in &model.out_edges[model.root] {
        p[e] += cache.zeta[e].norm_sqr();
    }
    p
}

fn next_shell(model: &TreeModel, cache: &GreenCache, p: &[f64]) -> Vec<f64> {
    let mut next = vec![0.0; p.len()];
    for (e, &pe) in p.iter().enumerate() {
        if pe == 0.0 {
            continue;
        }
        for &c in &model.children[e] {
            next[c] += pe * cache.zeta[c].norm_sqr();
        }
    }
    next
}

/// Tail target for the radial sums, relative to the partial sum.
pub const MOMENT_TAIL_TOL: f64 = 1e-10;

/// `sum_r r^beta S_r` with geometric tail extrapolation.
/// Returns the sum and the depth that was needed.
pub fn radial_moment_sum(model: &TreeModel, cache: &GreenCache, beta: f64, depth_cap: usize) -> Result<(f64, usize)> {
    let g2 = cache.g_root(model).norm_sqr();
    let mut sum = if beta == 0.0 { g2 } else { 0.0 };
    let mut p = first_shell(model, cache);
    let mut s_hist: Vec<f64> = vec![g2];
    let mut last_tail = f64::INFINITY;
    for r in 1..=depth_cap {
        let s_r = g2 * pairwise_sum(&p);
        s_hist.push(s_r);
        let term = (r as f64).powf(beta) * s_r;
        sum += term;
        if r >= 3 {
            // two-step ratio so that period-two structures are handled
            let rho2 = (s_hist[r] / s_hist[r - 2]).max(s_hist[r - 1] / s_hist[r - 3]);
            let rho2 = rho2 * ((r as f64 + 2.0) / r as f64).powf(beta);
            if rho2 < 1.0 {
                let prev = (r as f64 - 1.0).powf(beta) * s_hist[r - 1];
                let tail = (term + prev) * rho2 / (1.0 - rho2);
                last_tail = tail;
                if tail < MOMENT_TAIL_TOL * sum {
                    return Ok((sum + tail, r));
                }
            }
        }
        p = next_shell(model, cache, &p);
    }
    Err(Error::DepthInsufficient { depth: depth_cap, tail: last_tail / sum })
}

/// `eta^beta <x^beta>_{delta_o, eta} = (eta^{beta+1} / pi) sum_lambda w sum_r r^beta S_r`.
pub fn averaged_moment(model: &TreeModel, beta: f64, eta: f64, grid: &LambdaGrid, depth_cap: usize) -> Result<f64> {
    let terms = grid
        .points
        .par_iter()
        .zip(grid.weights.par_iter())
        .map(|(&l, &w)| {
            let cache = zeta_fixed_point(model, Complex64::new(l, eta))?;
            Ok(w * radial_moment_sum(model, &cache, beta, depth_cap)?.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(eta.powf(beta + 1.0) / PI * pairwise_sum(&terms))
}

/// Only energies with `Im G(o, o)` above this count as inside a band.
pub const BAND_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LowerBound {
    /// Bound evaluated at `eta`.
    pub value: f64,
    /// Bound evaluated at `2 eta`.
    pub value_double: f64,
    /// `2 value - value_double`.
    pub extrapolated: f64,
    /// Energies that passed the band threshold.
    pub points_used: usize,
}

/// `(1 / (2^{beta+1} pi)) int z^beta Im G(o, o) d lambda`, with `eta` standing in for the boundary values.
pub fn pertree_lower_bound(model: &TreeModel, beta: f64, grid: &LambdaGrid, eta_small: f64) -> Result<LowerBound> {
    let eval = |eta: f64| -> Result<(f64, usize)> {
        let terms = grid
            .points
            .par_iter()
            .zip(grid.weights.par_iter())
            .map(|(&l, &w)| {
                let cache = zeta_fixed_point(model, Complex64::new(l, eta))?;
                let im_g = cache.g_root(model).im;
                if im_g > BAND_THRESHOLD {
                    Ok((w * floor_of(&cache).powf(beta) * im_g, 1))
                } else {
                    Ok((0.0, 0))
                }
            })
            .collect::<Result<Vec<(f64, usize)>>>()?;
        let vals: Vec<f64> = terms.iter().map(|t| t.0).collect();
        let scale = 1.0 / (2f64.powf(beta + 1.0) * PI);
        Ok((scale * pairwise_sum(&vals), terms.iter().map(|t| t.1).sum()))
    };
    let (value, points_used) = eval(eta_small)?;
    let (value_double, _) = eval(2.0 * eta_small)?;
    Ok(LowerBound { value, value_double, extrapolated: 2.0 * value - value_double, points_used })
}

/// Random potential `W(v) = epsilon * U(-1, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct AndersonConfig {
    pub epsilon: f64,
    pub depth: usize,
    pub samples: usize,
    pub seed: u64,
}

impl AndersonConfig {
    fn validate(&self, model: &TreeModel) -> Result<()> {
        if !(self.epsilon >= 0.0) || self.depth < 1 || self.samples < 1 {
            return Err(Error::InvalidParameter("need epsilon >= 0, depth >= 1, samples >= 1".into()));
        }
        if model.min_degree < 3 {
            return Err(Error::InvalidModel("random potentials need minimal degree >= 3".into()));
        }
        Ok(())
    }
}

fn task_rng(seed: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}

fn draw<R: Rng>(rng: &mut R, epsilon: f64) -> f64 {
    if epsilon == 0.0 {
        0.0
    } else {
        epsilon * rng.random_range(-1.0..1.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AndersonSample {
    pub zeta_root: Complex64,
    pub g_root: Complex64,
    pub herglotz: bool,
    pub max_redu_residual: f64,
}

/// Largest cone (number of recursion nodes) sampled exactly.
pub const EXACT_CONE_CAP: f64 = 2e7;

/// One exact sample: fresh potentials on every vertex of the depth-`depth`
/// cone below the root, seeded at the bottom with the non-random fixed point.
pub fn anderson_sample(model: &TreeModel, cfg: &AndersonConfig, gamma: Complex64, index: u64) -> Result<AndersonSample> {
    cfg.validate(model)?;
    let base = zeta_fixed_point(model, gamma)?;
    let branching = model.children.iter().map(Vec::len).max().unwrap_or(1).max(1) as f64;
    let size = model.out_edges[model.root].len() as f64 * branching.powi(cfg.depth as i32);
    if size > EXACT_CONE_CAP {
        return Err(Error::InvalidParameter(format!(
            "exact cone of depth {} has ~{size:e} nodes; use anderson_statistics",
            cfg.depth
        )));
    }
    let mut rng = task_rng(cfg.seed, index);
    let mut worst: f64 = 0.0;
    let mut herg = true;

    fn rec<R: Rng>(
        model: &TreeModel,
        base: &GreenCache,
        eps: f64,
        e: usize,
        left: usize,
        rng: &mut R,
        worst: &mut f64,
        herg: &mut bool,
    ) -> Complex64 {
        if left == 0 {
            return base.zeta[e];
        }
        let v = model.edges[e].1;
        let w = model.potential[v] + draw(rng, eps);
        let kids: Vec<Complex64> = model.children[e]
            .iter()
            .map(|&c| rec(model, base, eps, c, left - 1, rng, worst, herg))
            .collect();
        let s: Complex64 = kids.iter().sum();
        let z = -1.0 / (w + s - base.gamma);
        let im_sum: f64 = kids.iter().map(|k| k.im.abs()).sum();
        *worst = worst.max((z.im.abs() / z.norm_sqr() - base.gamma.im - im_sum).abs());
        *herg &= z.im < 0.0;
        z
    }

    let w0 = model.potential[model.root] + draw(&mut rng, cfg.epsilon);
    let zs: Vec<Complex64> = model.out_edges[model.root]
        .iter()
        .map(|&e| rec(model, &base, cfg.epsilon, e, cfg.depth, &mut rng, &mut worst, &mut herg))
        .collect();
    let den = w0 + zs.iter().sum::<Complex64>() - gamma;
    if den.norm() < 1e-14 {
        return Err(Error::DegenerateDenominator(den.norm()));
    }
    let g = 1.0 / den;
    herg &= g.im > 0.0;
    Ok(AndersonSample { zeta_root: zs[0], g_root: g, herglotz: herg, max_redu_residual: worst })
}

#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub s: f64,
    pub mean: f64,
    pub std_error: f64,
    /// Top 1% of samples carry more than half of the mean.
    pub heavy_tail: bool,
}

#[derive(Debug, Clone)]
pub struct AndersonStats {
    pub lambda: f64,
    pub eta: f64,
    pub samples: usize,
    pub depth: usize,
    /// Independent populations the samples were split over.
    pub replicas: usize,
    pub mean_im_g: f64,
    pub std_error_im_g: f64,
    pub inverse_moments: Vec<MomentEstimate>,
    pub herglotz_fraction: f64,
    pub max_redu_residual: f64,
    /// Values of the non-random model at the same energy.
    pub periodic_im_g: f64,
    pub periodic_zeta_root: Complex64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1.0)).sqrt() / n.sqrt())
}

/// Upper limit on independent populations in [`anderson_statistics`].
pub const MAX_REPLICAS: usize = 32;

struct Population {
    roots: Vec<(Complex64, Complex64)>,
    worst: f64,
    bad: usize,
}

/// One population of `size` values per edge class, updated `depth` times.
fn population(model: &TreeModel, cfg: &AndersonConfig, base: &GreenCache, size: usize, replica: u64) -> Population {
    let gamma = base.gamma;
    let eta = gamma.im;
    let ne = model.edges.len();
    let mut rng = task_rng(cfg.seed, replica);
    let mut pools: Vec<Vec<Complex64>> = (0..ne).map(|e| vec![base.zeta[e]; size]).collect();
    let mut next = pools.clone();
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    for _ in 0..cfg.depth {
        for (e, out) in next.iter_mut().enumerate() {
            let v = model.edges[e].1;
            for slot in out.iter_mut() {
                let w = model.potential[v] + draw(&mut rng, cfg.epsilon);
                let mut s = Complex64::new(0.0, 0.0);
                let mut im_sum = 0.0;
                for &c in &model.children[e] {
                    let k = pools[c][rng.random_range(0..size)];
                    s += k;
                    im_sum += k.im.abs();
                }
                let z = -1.0 / (w + s - gamma);
                worst = worst.max((z.im.abs() / z.norm_sqr() - eta - im_sum).abs());
                if z.im >= 0.0 {
                    bad += 1;
                }
                *slot = z;
            }
        }
        std::mem::swap(&mut pools, &mut next);
    }
    let root = model.root;
    let root_edges = &model.out_edges[root];
    let roots = (0..size)
        .map(|i| {
            let w = model.potential[root] + draw(&mut rng, cfg.epsilon);
            let first = pools[root_edges[0]][i];
            let mut s = first;
            for &e in &root_edges[1..] {
                s += pools[e][rng.random_range(0..size)];
            }
            (first, 1.0 / (w + s - gamma))
        })
        .collect();
    Population { roots, worst, bad }
}

/// Monte-Carlo estimates of `E[Im G(o, o)]` and `E[|Im zeta|^{-s}]` by
/// population dynamics, starting from the non-random fixed point and applying
/// `depth` updates with fresh potentials. The samples are split over
/// independent populations; standard errors come from the spread of their means,
/// since values inside one population share ancestors.
pub fn anderson_statistics(
    model: &TreeModel,
    cfg: &AndersonConfig,
    lambda: f64,
    eta: f64,
    s_list: &[f64],
) -> Result<AndersonStats> {
    cfg.validate(model)?;
    if cfg.samples < 100 {
        return Err(Error::InvalidParameter("statistics need at least 100 samples".into()));
    }
    let gamma = Complex64::new(lambda, eta);
    let base = zeta_fixed_point(model, gamma)?;
    let n = cfg.samples;
    let replicas = (n / 100).clamp(2, MAX_REPLICAS);
    let pops: Vec<Population> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let size = n / replicas + usize::from(r < n % replicas);
            population(model, cfg, &base, size, r as u64)
        })
        .collect();

    let replica_stat = |f: &dyn Fn(&(Complex64, Complex64)) -> f64| -> (Vec<f64>, f64, f64) {
        let all: Vec<f64> = pops.iter().flat_map(|p| p.roots.iter().map(f)).collect();
        let means: Vec<f64> = pops
            .iter()
            .map(|p| pairwise_sum(&p.roots.iter().map(f).collect::<Vec<_>>()) / p.roots.len() as f64)
            .collect();
        let (_, se) = mean_se(&means);
        let mean = pairwise_sum(&all) / all.len() as f64;
        (all, mean, se)
    };

    let (im_g, mean_im_g, std_error_im_g) = replica_stat(&|r| r.1.im);
    let mut herg_bad: usize = pops.iter().map(|p| p.bad).sum();
    herg_bad += im_g.iter().filter(|&&x| x <= 0.0).count();
    let inverse_moments = s_list
        .iter()
        .map(|&s| {
            let (vals, mean, std_error) = replica_stat(&|r| r.0.im.abs().powf(-s));
            let mut sorted = vals.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let top = (vals.len() / 100).max(1);
            let heavy_tail = pairwise_sum(&sorted[..top]) > 0.5 * pairwise_sum(&vals);
            MomentEstimate { s, mean, std_error, heavy_tail }
        })
        .collect();
    let total = (cfg.depth * model.edges.len() + 1) * n;
    let root_edge = model.out_edges[model.root][0];
    Ok(AndersonStats {
        lambda,
        eta,
        samples: n,
        depth: cfg.depth,
        replicas,
        mean_im_g,
        std_error_im_g,
        inverse_moments,
        herglotz_fraction: 1.0 - herg_bad as f64 / total as f64,
        max_redu_residual: pops.iter().map(|p| p.worst).fold(0.0, f64::max),
        periodic_im_g: base.g_root(model).im,
        periodic_zeta_root: base.zeta[root_edge],
    })
}

/// Closed-form `zeta` of the `(q+1)`-regular tree with zero potential:
/// the root of `q z^2 - gamma z + 1 = 0` with negative imaginary part.
pub fn regular_zeta(q: usize, gamma: Complex64) -> Complex64 {
    let q = q as f64;
    let disc = (gamma * gamma - 4.0 * q).sqrt();
    let a = (gamma + disc) / (2.0 * q);
    let b = (gamma - disc) / (2.0 * q);
    if a.im < b.im {
        a
    } else {
        b
    }
}
