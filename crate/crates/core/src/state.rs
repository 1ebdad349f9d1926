//! Sparse complex states on lattice vertices.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, VertexId};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateVector {
    entries: BTreeMap<VertexId, Complex64>,
}

impl StateVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn delta(v: VertexId) -> Self {
        let mut s = Self::new();
        s.set(v, Complex64::new(1.0, 0.0));
        s
    }

    pub fn from_entries<I: IntoIterator<Item = (VertexId, Complex64)>>(items: I) -> Self {
        let mut s = Self::new();
        for (v, a) in items {
            s.add(v, a);
        }
        s
    }

    /// Uniform amplitude `1/sqrt(n)` on the sites `0..n` of Z^1.
    pub fn uniform_z1(n: usize) -> Self {
        let a = 1.0 / (n as f64).sqrt();
        Self::from_entries((0..n).map(|k| (VertexId::new(vec![k as i64], 0), Complex64::new(a, 0.0))))
    }

    /// Random normalized state with `sites` nonzero amplitudes drawn inside the
    /// cell box `[-radius, radius]^d`.
    pub fn random<R: Rng>(lattice: &Lattice, sites: usize, radius: i64, rng: &mut R) -> Self {
        let d = lattice.dim();
        let mut s = Self::new();
        while s.len() < sites.max(1) {
            let cell: Vec<i64> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
            let index = rng.random_range(0..lattice.cell_size());
            let a = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if a.norm() > 1e-3 {
                s.set(VertexId::new(cell, index), a);
            }
        }
        s.normalized().expect("nonzero random state")
    }

    pub fn set(&mut self, v: VertexId, a: Complex64) {
        if a == Complex64::new(0.0, 0.0) {
            self.entries.remove(&v);
        } else {
            self.entries.insert(v, a);
        }
    }

    pub fn add(&mut self, v: VertexId, a: Complex64) {
        let e = self.entries.entry(v).or_default();
        *e += a;
    }

    pub fn get(&self, v: &VertexId) -> Complex64 {
        self.entries.get(v).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VertexId, &Complex64)> {
        self.entries.iter()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.entries.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self::from_entries(self.entries.iter().map(|(v, a)| (v.clone(), a * c)))
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::EmptyState);
        }
        Ok(self.scaled(Complex64::new(1.0 / n, 0.0)))
    }

    pub fn require_normalized(&self) -> Result<()> {
        let n2 = self.norm_sqr();
        if (n2 - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized(n2));
        }
        Ok(())
    }

    /// `<self, other>`, antilinear in the first slot.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.entries
            .iter()
            .map(|(v, a)| a.conj() * other.get(v))
            .sum()
    }

    pub fn sub(&self, other: &StateVector) -> Self {
        let mut out = self.clone();
        for (v, a) in &other.entries {
            out.add(v.clone(), -a);
        }
        out
    }

    /// Per-axis (min, max) of the support cell offsets.
    pub fn cell_bounds(&self) -> Option<Vec<(i64, i64)>> {
        let mut it = self.entries.keys();
        let first = it.next()?;
        let mut b: Vec<(i64, i64)> = first.cell.iter().map(|&k| (k, k)).collect();
        for v in it {
            for (bb, &k) in b.iter_mut().zip(&v.cell) {
                bb.0 = bb.0.min(k);
                bb.1 = bb.1.max(k);
            }
        }
        Some(b)
    }

    pub fn check_against(&self, lattice: &Lattice) -> Result<()> {
        for v in self.entries.keys() {
            if v.cell.len() != lattice.dim() || v.index >= lattice.cell_size() {
                return Err(Error::InvalidParameter(format!(
                    "state entry {:?}/{} does not fit the lattice",
                    v.cell,
                    v.index + 1
                )));
            }
        }
        Ok(())
    }

    /// Parses `[[cell...], index, re, im]` records with 1-based indices.
    pub fn from_json(text: &str) -> Result<Self> {
        let rows: Vec<(Vec<i64>, usize, f64, f64)> =
            serde_json::from_str(text).map_err(|source| Error::Parse {
                context: "state file".into(),
                source,
            })?;
        let mut s = Self::new();
        for (cell, index, re, im) in rows {
            if index == 0 {
                return Err(Error::InvalidParameter("state vertex indices are 1-based".into()));
            }
            s.add(VertexId::new(cell, index - 1), Complex64::new(re, im));
        }
        if s.is_empty() {
            return Err(Error::EmptyState);
        }
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<(Vec<i64>, usize, f64, f64)> = self
            .entries
            .iter()
            .map(|(v, a)| (v.cell.clone(), v.index + 1, a.re, a.im))
            .collect();
        serde_json::to_string(&rows).expect("state serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, presets};
    use rand::SeedableRng;

    #[test]
    fn json_round_trip() {
        let s = StateVector::from_json("[[[0, 1], 2, 0.5, -0.5], [[3, 0], 1, 1.0, 0.0]]").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(&VertexId::new(vec![0, 1], 1)), Complex64::new(0.5, -0.5));
        let back = StateVector::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_zero_index() {
        assert!(StateVector::from_json("[[[0], 0, 1.0, 0.0]]").is_err());
    }

    #[test]
    fn random_states_are_normalized() {
        let lat = build_lattice(presets::integer(2)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s = StateVector::random(&lat, 7, 3, &mut rng);
        assert_eq!(s.len(), 7);
        assert!((s.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_z1_norm() {
        let s = StateVector::uniform_z1(8);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-14);
        assert_eq!(s.cell_bounds().unwrap(), vec![(0, 7)]);
    }
}
