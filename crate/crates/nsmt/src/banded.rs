//! Complex banded matrices with an LU factorization (partial pivoting inside the band).

use crate::error::{NsmtError, Result};
use crate::scalar::{Cx, Scalar};
use num_traits::Zero;

/// Square banded matrix with `kl` sub- and `ku` super-diagonals.
///
/// Storage is column-major with room for the `kl` extra super-diagonals that
/// pivoting can fill in, so a copy can be factored in place.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix<S> {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<Cx<S>>,
}

impl<S: Scalar> BandedMatrix<S> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let w = 2 * kl + ku + 1;
        BandedMatrix { n, kl, ku, data: vec![Cx::zero(); w * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn width(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.width() + (i + self.ku + self.kl - j)
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i <= j + self.kl && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> Cx<S> {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            Cx::zero()
        }
    }

    /// Adds `v` to entry `(i, j)`; panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: Cx<S>) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band");
        let id = self.idx(i, j);
        self.data[id] += v;
    }

    /// `alpha * self + beta * other`, both with the same shape.
    pub fn combine(&self, alpha: Cx<S>, other: &Self, beta: Cx<S>) -> Self {
        assert_eq!((self.n, self.kl, self.ku), (other.n, other.kl, other.ku));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| alpha * *a + beta * *b).collect();
        BandedMatrix { n: self.n, kl: self.kl, ku: self.ku, data }
    }

    pub fn matvec(&self, x: &[Cx<S>]) -> Vec<Cx<S>> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![Cx::zero(); self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for i in lo..=hi {
                y[i] += self.data[self.idx(i, j)] * x[j];
            }
        }
        y
    }

    /// `A^H x`.
    pub fn matvec_adjoint(&self, x: &[Cx<S>]) -> Vec<Cx<S>> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![Cx::zero(); self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            let mut s = Cx::zero();
            for i in lo..=hi {
                s += self.data[self.idx(i, j)].conj() * x[i];
            }
            y[j] = s;
        }
        y
    }

    pub fn factor(&self) -> Result<BandedLu<S>> {
        let mut a = self.clone();
        let n = a.n;
        let (kl, ku) = (a.kl, a.ku);
        let scale = a.data.iter().fold(S::zero(), |m, z| m.max(z.norm()));
        let floor = scale * S::epsilon() * S::c(1e-2);
        let mut piv = vec![0usize; n];
        for j in 0..n {
            let last = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = a.get(j, j).norm();
            for i in j + 1..=last {
                let v = a.get(i, j).norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > floor) || !best.is_finite() {
                return Err(NsmtError::Singular(j));
            }
            piv[j] = p;
            let cmax = (j + ku + kl).min(n - 1);
            if p != j {
                for c in j..=cmax {
                    let (ij, ip) = (a.idx(j, c), a.idx(p, c));
                    a.data.swap(ij, ip);
                }
            }
            let d = a.data[a.idx(j, j)];
            for i in j + 1..=last {
                let id = a.idx(i, j);
                let l = a.data[id] / d;
                a.data[id] = l;
                if l.is_zero() {
                    continue;
                }
                for c in j + 1..=cmax {
                    let u = a.data[a.idx(j, c)];
                    let ic = a.idx(i, c);
                    a.data[ic] -= l * u;
                }
            }
        }
        Ok(BandedLu { a, piv })
    }
}

/// LU factors of a [`BandedMatrix`] with the row interchanges applied during elimination.
#[derive(Debug, Clone)]
pub struct BandedLu<S> {
    a: BandedMatrix<S>,
    piv: Vec<usize>,
}

impl<S: Scalar> BandedLu<S> {
    pub fn dim(&self) -> usize {
        self.a.n
    }

    /// Overwrites `b` with `A^{-1} b`.
    pub fn solve_in_place(&self, b: &mut [Cx<S>]) {
        let a = &self.a;
        let n = a.n;
        assert_eq!(b.len(), n);
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            for i in j + 1..=(j + a.kl).min(n - 1) {
                b[i] -= a.data[a.idx(i, j)] * bj;
            }
        }
        let reach = a.kl + a.ku;
        for j in (0..n).rev() {
            b[j] /= a.data[a.idx(j, j)];
            let bj = b[j];
            for i in j.saturating_sub(reach)..j {
                b[i] -= a.data[a.idx(i, j)] * bj;
            }
        }
    }

    pub fn solve(&self, b: &[Cx<S>]) -> Vec<Cx<S>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Overwrites `b` with `A^{-H} b`.
    pub fn solve_adjoint_in_place(&self, b: &mut [Cx<S>]) {
        let a = &self.a;
        let n = a.n;
        assert_eq!(b.len(), n);
        let reach = a.kl + a.ku;
        for j in 0..n {
            let mut s = b[j];
            for i in j.saturating_sub(reach)..j {
                s -= a.data[a.idx(i, j)].conj() * b[i];
            }
            b[j] = s / a.data[a.idx(j, j)].conj();
        }
        for j in (0..n).rev() {
            let mut s = b[j];
            for i in j + 1..=(j + a.kl).min(n - 1) {
                s -= a.data[a.idx(i, j)].conj() * b[i];
            }
            b[j] = s;
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
        }
    }

    pub fn solve_adjoint(&self, b: &[Cx<S>]) -> Vec<Cx<S>> {
        let mut x = b.to_vec();
        self.solve_adjoint_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> (BandedMatrix<f64>, Vec<Vec<Complex64>>) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut m = BandedMatrix::zeros(n, kl, ku);
        let mut dense = vec![vec![Complex64::zero(); n]; n];
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // weak diagonal so that pivoting actually happens
                let v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                    * if i == j { 0.05 } else { 1.0 };
                m.add(i, j, v);
                dense[i][j] = v;
            }
        }
        (m, dense)
    }

    fn dense_mul(d: &[Vec<Complex64>], x: &[Complex64]) -> Vec<Complex64> {
        d.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    #[test]
    fn matvec_matches_dense() {
        let (m, d) = random_banded(12, 2, 2, 1);
        let x: Vec<Complex64> = (0..12).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect();
        let y = m.matvec(&x);
        let yd = dense_mul(&d, &x);
        for (a, b) in y.iter().zip(&yd) {
            assert!((a - b).norm() < 1e-13);
        }
        let ya = m.matvec_adjoint(&x);
        for j in 0..12 {
            let s: Complex64 = (0..12).map(|i| d[i][j].conj() * x[i]).sum();
            assert!((ya[j] - s).norm() < 1e-13);
        }
    }

    #[test]
    fn solve_and_adjoint_solve() {
        for (n, kl, ku, seed) in [(15, 2, 2, 3), (9, 1, 3, 4), (20, 3, 1, 5)] {
            let (m, _) = random_banded(n, kl, ku, seed);
            let lu = m.factor().unwrap();
            let b: Vec<Complex64> = (0..n).map(|i| Complex64::new((i as f64).sin(), (i as f64).cos())).collect();
            let x = lu.solve(&b);
            let r = m.matvec(&x);
            for (a, c) in r.iter().zip(&b) {
                assert!((a - c).norm() < 1e-10);
            }
            let xa = lu.solve_adjoint(&b);
            let ra = m.matvec_adjoint(&xa);
            for (a, c) in ra.iter().zip(&b) {
                assert!((a - c).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_detected() {
        let m: BandedMatrix<f64> = BandedMatrix::zeros(5, 2, 2);
        assert!(matches!(m.factor(), Err(NsmtError::Singular(0))));
    }
}
