//! Periodic discrete graphs in R^d.
//!
//! A lattice is described by a basis `a_1..a_d`, a set of cell vertices given
//! in fractional coordinates, and a list of directed edge records
//! `(i, j, n)` meaning that vertex `i` of cell `k` is joined to vertex `j` of
//! cell `k + n`. Every record must have its reverse `(j, i, -n)`.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRACTION_TOL: f64 = 1e-9;
const DUALITY_TOL: f64 = 1e-12;

/// One directed edge record. Indices are 0-based in memory.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EdgeRecord {
    pub from: usize,
    pub to: usize,
    pub offset: Vec<i64>,
}

/// Edge as written in a spec file: `[i, j, offset]` or `[i, j, offset, weight]`,
/// with 1-based vertex indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeEntry {
    Plain(usize, usize, Vec<i64>),
    Weighted(usize, usize, Vec<i64>, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub dim: usize,
    pub basis: Vec<Vec<f64>>,
    pub cell_vertices: Vec<Vec<f64>>,
    pub edges: Vec<EdgeEntry>,
    pub potential: Vec<f64>,
}

impl LatticeSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Parse {
            context: "lattice spec".into(),
            source,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| Error::Parse {
            context: format!("lattice spec {}", path.display()),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lattice spec serializes")
    }

    /// Replace the potential with a constant value on every cell vertex.
    pub fn with_constant_potential(mut self, value: f64) -> Self {
        self.potential = vec![value; self.cell_vertices.len()];
        self
    }
}

/// A cell-vertex identifier: integer cell offset plus 0-based index in the cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexId {
    pub cell: Vec<i64>,
    pub index: usize,
}

impl VertexId {
    pub fn new(cell: Vec<i64>, index: usize) -> Self {
        VertexId { cell, index }
    }

    pub fn origin(dim: usize, index: usize) -> Self {
        VertexId { cell: vec![0; dim], index }
    }
}

/// A validated periodic graph with derived constants.
#[derive(Debug, Clone)]
pub struct Lattice {
    name: String,
    dim: usize,
    basis: Vec<Vec<f64>>,
    dual: Vec<Vec<f64>>,
    fractions: Vec<Vec<f64>>,
    edges: Vec<EdgeRecord>,
    potential: Vec<f64>,
    max_degree: usize,
    max_edge_length: f64,
}

/// Dual basis `b_j` with `a_i . b_j = 2 pi delta_ij`.
pub fn dual_basis(basis: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = basis.len();
    if d == 0 || basis.iter().any(|row| row.len() != d) {
        return Err(Error::InvalidLattice(format!(
            "basis must be {d} vectors of length {d}"
        )));
    }
    let a = DMatrix::from_fn(d, d, |i, j| basis[i][j]);
    let det = a.determinant();
    let scale: f64 = basis
        .iter()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .product();
    if !det.is_finite() || det.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::SingularBasis { det });
    }
    let inv = a.try_inverse().ok_or(Error::SingularBasis { det })?;
    // B = 2 pi (A^{-1})^T, rows are the b_j
    Ok((0..d)
        .map(|j| (0..d).map(|k| 2.0 * PI * inv[(k, j)]).collect())
        .collect())
}

pub fn build_lattice(spec: LatticeSpec) -> Result<Lattice> {
    let d = spec.dim;
    if d == 0 {
        return Err(Error::InvalidLattice("dimension must be at least 1".into()));
    }
    if spec.basis.len() != d {
        return Err(Error::InvalidLattice(format!(
            "expected {d} basis vectors, got {}",
            spec.basis.len()
        )));
    }
    let dual = dual_basis(&spec.basis)?;
    for i in 0..d {
        for j in 0..d {
            let dot: f64 = (0..d).map(|k| spec.basis[i][k] * dual[j][k]).sum();
            let want = if i == j { 2.0 * PI } else { 0.0 };
            if (dot - want).abs() > DUALITY_TOL * 2.0 * PI * 1e3 {
                return Err(Error::SingularBasis { det: 0.0 });
            }
        }
    }

    let nu = spec.cell_vertices.len();
    if nu == 0 {
        return Err(Error::InvalidLattice("no cell vertices".into()));
    }
    if spec.potential.len() != nu {
        return Err(Error::InvalidLattice(format!(
            "potential has {} values for {nu} cell vertices",
            spec.potential.len()
        )));
    }
    for (v, s) in spec.cell_vertices.iter().enumerate() {
        if s.len() != d {
            return Err(Error::InvalidLattice(format!(
                "cell vertex {} has {} coordinates",
                v + 1,
                s.len()
            )));
        }
        for &x in s {
            if !(x >= -FRACTION_TOL && x < 1.0 - FRACTION_TOL) {
                return Err(Error::BadFraction { vertex: v + 1, value: x });
            }
        }
    }

    let mut edges = Vec::with_capacity(spec.edges.len());
    let mut seen = HashSet::new();
    for entry in &spec.edges {
        let (i, j, offset) = match entry {
            EdgeEntry::Plain(i, j, o) => (*i, *j, o.clone()),
            EdgeEntry::Weighted(i, j, o, w) => {
                if (*w - 1.0).abs() > 0.0 {
                    return Err(Error::WeightedEdge(*w));
                }
                (*i, *j, o.clone())
            }
        };
        if i == 0 || j == 0 || i > nu || j > nu {
            return Err(Error::InvalidLattice(format!(
                "edge ({i}, {j}) references a vertex outside 1..={nu}"
            )));
        }
        if offset.len() != d {
            return Err(Error::InvalidLattice(format!(
                "edge ({i}, {j}) offset has length {}",
                offset.len()
            )));
        }
        let rec = EdgeRecord { from: i - 1, to: j - 1, offset };
        if rec.from == rec.to && rec.offset.iter().all(|&x| x == 0) {
            return Err(Error::SelfLoop(i));
        }
        if !seen.insert(rec.clone()) {
            return Err(Error::DuplicateEdge { i, j, offset: rec.offset });
        }
        edges.push(rec);
    }
    for e in &edges {
        let rev = EdgeRecord {
            from: e.to,
            to: e.from,
            offset: e.offset.iter().map(|x| -x).collect(),
        };
        if !seen.contains(&rev) {
            return Err(Error::AsymmetricEdges {
                i: e.from + 1,
                j: e.to + 1,
                offset: e.offset.clone(),
            });
        }
    }

    let mut degree = vec![0usize; nu];
    for e in &edges {
        degree[e.from] += 1;
    }
    let max_degree = degree.into_iter().max().unwrap_or(0);

    let mut lattice = Lattice {
        name: spec.name.clone().unwrap_or_else(|| "custom".into()),
        dim: d,
        basis: spec.basis.clone(),
        dual,
        fractions: spec.cell_vertices.clone(),
        edges,
        potential: spec.potential.clone(),
        max_degree,
        max_edge_length: 0.0,
    };
    lattice.max_edge_length = lattice
        .edges
        .iter()
        .map(|e| norm(&lattice.edge_vector(e)))
        .fold(0.0, f64::max);
    Ok(lattice)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Lattice {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of vertices per unit cell.
    pub fn cell_size(&self) -> usize {
        self.fractions.len()
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn dual_basis(&self) -> &[Vec<f64>] {
        &self.dual
    }

    pub fn fractions(&self) -> &[Vec<f64>] {
        &self.fractions
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// Maximal vertex degree D.
    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Longest Euclidean edge length L.
    pub fn max_edge_length(&self) -> f64 {
        self.max_edge_length
    }

    pub fn max_abs_potential(&self) -> f64 {
        self.potential.iter().fold(0.0, |m, q| m.max(q.abs()))
    }

    /// Maps fractional (lattice) coordinates to Cartesian ones.
    pub fn to_cartesian(&self, frac: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (j, &c) in frac.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(&self.basis[j]) {
                *o += c * a;
            }
        }
        out
    }

    /// Lattice coordinates `alpha` of a Cartesian point, `x = sum alpha_j a_j`.
    pub fn to_fractional(&self, x: &[f64]) -> Vec<f64> {
        self.dual
            .iter()
            .map(|b| b.iter().zip(x).map(|(bi, xi)| bi * xi).sum::<f64>() / (2.0 * PI))
            .collect()
    }

    pub fn position(&self, v: &VertexId) -> Vec<f64> {
        let frac: Vec<f64> = v
            .cell
            .iter()
            .zip(&self.fractions[v.index])
            .map(|(&k, &s)| k as f64 + s)
            .collect();
        self.to_cartesian(&frac)
    }

    /// Displacement `n + s_j - s_i` of an edge in fractional coordinates.
    pub fn edge_fractional(&self, e: &EdgeRecord) -> Vec<f64> {
        (0..self.dim)
            .map(|k| e.offset[k] as f64 + self.fractions[e.to][k] - self.fractions[e.from][k])
            .collect()
    }

    /// Cartesian displacement vector of an edge.
    pub fn edge_vector(&self, e: &EdgeRecord) -> Vec<f64> {
        self.to_cartesian(&self.edge_fractional(e))
    }

    /// Number of cells per axis covering a Cartesian distance `r`.
    pub fn cells_for_distance(&self, r: f64) -> Vec<f64> {
        self.dual.iter().map(|b| norm(b) * r / (2.0 * PI)).collect()
    }

    /// Neighbors of a vertex in the infinite graph.
    pub fn neighbors<'a>(&'a self, v: &'a VertexId) -> impl Iterator<Item = VertexId> + 'a {
        self.edges.iter().filter(move |e| e.from == v.index).map(move |e| VertexId {
            cell: v.cell.iter().zip(&e.offset).map(|(a, b)| a + b).collect(),
            index: e.to,
        })
    }
}

/// Bundled lattice presets.
pub mod presets {
    use super::*;

    pub const NAMES: &[&str] = &["z1", "z2", "z3", "triangular", "hexagonal", "lieb"];

    pub fn by_name(name: &str) -> Option<LatticeSpec> {
        match name {
            "z1" => Some(integer(1)),
            "z2" => Some(integer(2)),
            "z3" => Some(integer(3)),
            "triangular" => Some(triangular()),
            "hexagonal" => Some(hexagonal(1.0)),
            "lieb" => Some(lieb()),
            _ => None,
        }
    }

    fn unit(d: usize, j: usize, sign: i64) -> Vec<i64> {
        (0..d).map(|k| if k == j { sign } else { 0 }).collect()
    }

    /// The integer lattice Z^d with nearest-neighbor edges.
    pub fn integer(d: usize) -> LatticeSpec {
        let basis = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let mut edges = Vec::new();
        for j in 0..d {
            edges.push(EdgeEntry::Plain(1, 1, unit(d, j, 1)));
            edges.push(EdgeEntry::Plain(1, 1, unit(d, j, -1)));
        }
        LatticeSpec {
            name: Some(format!("z{d}")),
            dim: d,
            basis,
            cell_vertices: vec![vec![0.0; d]],
            edges,
            potential: vec![0.0],
        }
    }

    /// Z^2 with the extra diagonal links +-(1, 1).
    pub fn triangular() -> LatticeSpec {
        let mut spec = integer(2);
        spec.name = Some("triangular".into());
        spec.edges.push(EdgeEntry::Plain(1, 1, vec![1, 1]));
        spec.edges.push(EdgeEntry::Plain(1, 1, vec![-1, -1]));
        spec
    }

    /// Honeycomb lattice with lattice constant `a`.
    pub fn hexagonal(a: f64) -> LatticeSpec {
        let s3 = 3f64.sqrt();
        let third = 1.0 / 3.0;
        let edges = vec![
            EdgeEntry::Plain(1, 2, vec![0, 0]),
            EdgeEntry::Plain(1, 2, vec![-1, 0]),
            EdgeEntry::Plain(1, 2, vec![0, -1]),
            EdgeEntry::Plain(2, 1, vec![0, 0]),
            EdgeEntry::Plain(2, 1, vec![1, 0]),
            EdgeEntry::Plain(2, 1, vec![0, 1]),
        ];
        LatticeSpec {
            name: Some("hexagonal".into()),
            dim: 2,
            basis: vec![vec![a, 0.0], vec![a / 2.0, a * s3 / 2.0]],
            cell_vertices: vec![vec![0.0, 0.0], vec![third, third]],
            edges,
            potential: vec![0.0, 0.0],
        }
    }

    /// Lieb lattice: square-lattice corners plus edge midpoints. Has a flat band at 0.
    pub fn lieb() -> LatticeSpec {
        let edges = vec![
            EdgeEntry::Plain(1, 2, vec![0, 0]),
            EdgeEntry::Plain(2, 1, vec![0, 0]),
            EdgeEntry::Plain(2, 1, vec![1, 0]),
            EdgeEntry::Plain(1, 2, vec![-1, 0]),
            EdgeEntry::Plain(1, 3, vec![0, 0]),
            EdgeEntry::Plain(3, 1, vec![0, 0]),
            EdgeEntry::Plain(3, 1, vec![0, 1]),
            EdgeEntry::Plain(1, 3, vec![0, -1]),
        ];
        LatticeSpec {
            name: Some("lieb".into()),
            dim: 2,
            basis: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            cell_vertices: vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.0, 0.5]],
            edges,
            potential: vec![0.0, 0.0, 0.0],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn z1_constants() {
        let lat = build_lattice(presets::integer(1)).unwrap();
        assert_eq!(lat.max_degree(), 2);
        assert!((lat.max_edge_length() - 1.0).abs() < 1e-15);
        assert!(close(&lat.dual_basis()[0], &[2.0 * PI], 1e-15));
        assert_eq!(lat.position(&VertexId::new(vec![3], 0)), vec![3.0]);
    }

    #[test]
    fn triangular_is_six_regular() {
        let lat = build_lattice(presets::triangular()).unwrap();
        assert_eq!(lat.max_degree(), 6);
        let p = lat.position(&VertexId::new(vec![1, -1], 0));
        assert!(close(&p, &[1.0, -1.0], 1e-15));
    }

    #[test]
    fn hexagonal_constants() {
        let lat = build_lattice(presets::hexagonal(1.0)).unwrap();
        assert_eq!(lat.max_degree(), 3);
        assert_eq!(lat.cell_size(), 2);
        let a = lat.basis();
        let v = lat.position(&VertexId::new(vec![0, 0], 1));
        let want = [(a[0][0] + a[1][0]) / 3.0, (a[0][1] + a[1][1]) / 3.0];
        assert!(close(&v, &want, 1e-15));
        // nearest-neighbor distance a / sqrt(3)
        assert!((lat.max_edge_length() - 1.0 / 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn dual_of_identity() {
        let b = dual_basis(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(close(&b[0], &[2.0 * PI, 0.0], 1e-15));
        assert!(close(&b[1], &[0.0, 2.0 * PI], 1e-15));
    }

    #[test]
    fn dual_of_hexagonal_basis() {
        // Oracle: solve [a1; a2] b = 2 pi e_j by hand.
        // a1 = (1, 0), a2 = (1/2, sqrt3/2):
        //   b1 = 2 pi (1, -1/sqrt3), b2 = 2 pi (0, 2/sqrt3)
        let s3 = 3f64.sqrt();
        let b = dual_basis(&[vec![1.0, 0.0], vec![0.5, s3 / 2.0]]).unwrap();
        assert!(close(&b[0], &[2.0 * PI, -2.0 * PI / s3], 1e-13));
        assert!(close(&b[1], &[0.0, 4.0 * PI / s3], 1e-13));
    }

    #[test]
    fn dual_scales_inversely() {
        let a = vec![vec![2.0, 0.3], vec![-0.4, 1.1]];
        let b = dual_basis(&a).unwrap();
        let scaled: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|x| 3.0 * x).collect()).collect();
        let bs = dual_basis(&scaled).unwrap();
        for (r, rs) in b.iter().zip(&bs) {
            assert!(close(&r.iter().map(|x| x / 3.0).collect::<Vec<_>>(), rs, 1e-13));
        }
    }

    #[test]
    fn dual_of_dual_recovers_basis() {
        let a = vec![vec![1.3, 0.2, 0.0], vec![0.1, 0.9, -0.3], vec![0.0, 0.4, 2.0]];
        let b = dual_basis(&a).unwrap();
        let b_scaled: Vec<Vec<f64>> =
            b.iter().map(|r| r.iter().map(|x| x / (2.0 * PI)).collect()).collect();
        let back = dual_basis(&b_scaled).unwrap();
        for (r, want) in back.iter().zip(&a) {
            let r: Vec<f64> = r.iter().map(|x| x / (2.0 * PI)).collect();
            assert!(close(&r, want, 1e-10));
        }
    }

    #[test]
    fn rejects_singular_basis() {
        let mut spec = presets::integer(2);
        spec.basis = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(matches!(build_lattice(spec), Err(Error::SingularBasis { .. })));
    }

    #[test]
    fn rejects_asymmetric_edges() {
        let mut spec = presets::integer(1);
        spec.edges.pop();
        assert!(matches!(build_lattice(spec), Err(Error::AsymmetricEdges { .. })));
    }

    #[test]
    fn rejects_bad_fraction() {
        let mut spec = presets::integer(1);
        spec.cell_vertices = vec![vec![1.0]];
        assert!(matches!(build_lattice(spec), Err(Error::BadFraction { .. })));
    }

    #[test]
    fn rejects_self_loop_and_duplicates() {
        let mut spec = presets::integer(1);
        spec.edges.push(EdgeEntry::Plain(1, 1, vec![0]));
        assert!(matches!(build_lattice(spec), Err(Error::SelfLoop(1))));
        let mut spec = presets::integer(1);
        spec.edges.push(EdgeEntry::Plain(1, 1, vec![1]));
        assert!(matches!(build_lattice(spec), Err(Error::DuplicateEdge { .. })));
    }

    #[test]
    fn rejects_weighted_edges() {
        let mut spec = presets::integer(1);
        spec.edges[0] = EdgeEntry::Weighted(1, 1, vec![1], 2.0);
        assert!(matches!(build_lattice(spec), Err(Error::WeightedEdge(_))));
    }

    #[test]
    fn json_round_trip_of_presets() {
        for name in presets::NAMES {
            let spec = presets::by_name(name).unwrap();
            let back = LatticeSpec::from_json(&spec.to_json()).unwrap();
            let a = build_lattice(spec).unwrap();
            let b = build_lattice(back).unwrap();
            assert_eq!(a.edges(), b.edges());
            assert_eq!(a.max_degree(), b.max_degree());
        }
    }

    #[test]
    fn translation_shifts_positions_by_lattice_vectors() {
        let lat = build_lattice(presets::hexagonal(1.0)).unwrap();
        let v = VertexId::new(vec![2, -1], 1);
        let w = VertexId::new(vec![5, 3], 1);
        let dv = lat.position(&w);
        let pv = lat.position(&v);
        let shift = lat.to_cartesian(&[3.0, 4.0]);
        for k in 0..2 {
            assert!((dv[k] - pv[k] - shift[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn lieb_degrees() {
        let lat = build_lattice(presets::lieb()).unwrap();
        assert_eq!(lat.max_degree(), 4);
        let deg: Vec<usize> = (0..3).map(|i| lat.neighbors(&VertexId::origin(2, i)).count()).collect();
        assert_eq!(deg, vec![4, 2, 2]);
    }
}
