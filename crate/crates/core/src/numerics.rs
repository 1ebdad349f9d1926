//! Small numerical helpers shared across modules.

use std::cmp::Ordering;

/// Pairwise (tree) summation with a fixed split order, so the result does not
/// depend on how the inputs were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Exact binomial coefficient.
pub fn binomial(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is always divisible by (i + 1)
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc
}

/// Bessel functions of the first kind `J_0(x) ..= J_nmax(x)` for real `x`,
/// by Miller's backward recurrence normalized with `J_0 + 2 sum J_2k = 1`.
pub fn bessel_j_sequence(x: f64, nmax: usize) -> Vec<f64> {
    if x == 0.0 {
        let mut out = vec![0.0; nmax + 1];
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let top = (nmax as f64).max(ax);
    let start = (top + 30.0 + 6.0 * top.sqrt()).ceil() as usize;
    let start = start + (start % 2);

    let mut vals = vec![0.0f64; start + 2];
    let mut next = 0.0f64; // J_{k+1}
    let mut cur = 1e-300f64; // J_k
    vals[start] = cur;
    let mut norm = 0.0f64;
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / ax * cur - next;
        next = cur;
        cur = prev;
        vals[k - 1] = cur;
        if cur.abs() > 1e250 {
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
            next *= 1e-250;
            cur *= 1e-250;
            norm *= 1e-250;
        }
        if (k - 1) % 2 == 0 && k - 1 > 0 {
            norm += 2.0 * cur;
        }
    }
    norm += vals[0];
    let mut out: Vec<f64> = vals[..=nmax].iter().map(|v| v / norm).collect();
    if x < 0.0 {
        for (k, v) in out.iter_mut().enumerate() {
            if k % 2 == 1 {
                *v = -*v;
            }
        }
    }
    out
}

/// A one-dimensional weighted point cloud, sorted by position.
#[derive(Debug, Clone)]
pub struct Atoms1d {
    points: Vec<(f64, f64)>,
    total: f64,
}

impl Atoms1d {
    pub fn new(mut points: Vec<(f64, f64)>) -> Self {
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
        let total = points.iter().map(|p| p.1).sum();
        Atoms1d { points, total }
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Cumulative masses at each distinct position: (x, F(x-), F(x)).
    fn steps(&self) -> Vec<(f64, f64, f64)> {
        let mut out: Vec<(f64, f64, f64)> = Vec::new();
        let mut acc = 0.0;
        for &(x, w) in &self.points {
            match out.last_mut() {
                Some(last) if last.0 == x => {
                    acc += w;
                    last.2 = acc;
                }
                _ => {
                    let before = acc;
                    acc += w;
                    out.push((x, before, acc));
                }
            }
        }
        out
    }

    /// Sup distance between this atom CDF and a continuous CDF.
    pub fn sup_distance_to<F: Fn(f64) -> f64>(&self, cdf: F) -> f64 {
        self.steps()
            .iter()
            .map(|&(x, lo, hi)| {
                let c = cdf(x);
                (lo - c).abs().max((hi - c).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Sup distance between two atom CDFs (Kolmogorov distance).
    pub fn sup_distance(&self, other: &Atoms1d) -> f64 {
        let a = self.steps();
        let b = other.steps();
        let (mut i, mut j) = (0, 0);
        let (mut fa, mut fb) = (0.0f64, 0.0f64);
        let mut best = 0.0f64;
        while i < a.len() || j < b.len() {
            let xa = a.get(i).map_or(f64::INFINITY, |s| s.0);
            let xb = b.get(j).map_or(f64::INFINITY, |s| s.0);
            let x = xa.min(xb);
            if xa == x {
                fa = a[i].2;
                i += 1;
            }
            if xb == x {
                fb = b[j].2;
                j += 1;
            }
            best = best.max((fa - fb).abs());
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials_are_exact() {
        assert_eq!(binomial(16, 8), 12870);
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(2, 3), 0);
        assert_eq!(binomial(60, 30), 118264581564861424);
    }

    #[test]
    fn pairwise_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-12);
    }

    #[test]
    fn bessel_small_values() {
        // J_0(1), J_1(1), J_5(10) from standard tables
        let j = bessel_j_sequence(1.0, 3);
        assert!((j[0] - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!((j[1] - 0.440_050_585_744_933_5).abs() < 1e-14);
        let j = bessel_j_sequence(10.0, 6);
        assert!((j[5] - (-0.234_061_528_186_793_6)).abs() < 1e-14);
        assert!((j[0] - (-0.245_935_764_451_348_3)).abs() < 1e-14);
    }

    #[test]
    fn bessel_negative_argument_parity() {
        let p = bessel_j_sequence(3.5, 8);
        let n = bessel_j_sequence(-3.5, 8);
        for k in 0..=8 {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert!((n[k] - s * p[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn atom_cdf_distances() {
        let a = Atoms1d::new(vec![(0.0, 0.5), (1.0, 0.5)]);
        let b = Atoms1d::new(vec![(0.5, 1.0)]);
        assert!((a.sup_distance(&b) - 0.5).abs() < 1e-15);
        assert_eq!(a.sup_distance(&a), 0.0);
        let uniform = |x: f64| x.clamp(0.0, 1.0);
        assert!((a.sup_distance_to(uniform) - 0.5).abs() < 1e-15);
    }
}
