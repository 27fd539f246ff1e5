//! Linear least squares over a Euclidean ball.

use nalgebra::{DMatrix, DVector, SVD};
use num_complex::Complex64;

/// Minimizer `z` and the multiplier `kappa >= 0` with `(C^H C + kappa I) z = -C^H d`.
#[derive(Debug, Clone)]
pub(crate) struct BallSolution {
    pub z: DVector<Complex64>,
    pub kappa: f64,
}

/// `min 1/2 |C z + d|^2` over `|z| <= r`, through the singular value decomposition of `C`
/// so that the conditioning is that of `C` and not of `C^H C`.
pub(crate) struct BallLsq {
    sv: Vec<f64>,
    v: DMatrix<Complex64>,
    /// `U^H d`, one entry per kept singular value.
    ud: Vec<Complex64>,
}

impl BallLsq {
    pub fn new(c: DMatrix<Complex64>, d: &DVector<Complex64>) -> Self {
        let svd = SVD::new(c, true, true);
        let u = svd.u.expect("left vectors requested");
        let vt = svd.v_t.expect("right vectors requested");
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > smax * 1e-14)
            .collect();
        let sv = keep.iter().map(|&i| svd.singular_values[i]).collect();
        let ud = keep.iter().map(|&i| (u.column(i).adjoint() * d)[(0, 0)]).collect();
        let v = DMatrix::from_fn(vt.ncols(), keep.len(), |r, c| vt[(keep[c], r)].conj());
        BallLsq { sv, v, ud }
    }

    fn coeffs(&self, kappa: f64) -> Vec<Complex64> {
        self.sv.iter().zip(&self.ud).map(|(s, u)| -*u * (s / (s * s + kappa))).collect()
    }

    fn norm2(&self, kappa: f64) -> f64 {
        self.coeffs(kappa).iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn solve(&self, r: f64) -> BallSolution {
        let r2 = r * r;
        let build = |kappa: f64| self.v.clone() * DVector::from_vec(self.coeffs(kappa));
        if self.sv.is_empty() || self.norm2(0.0) <= r2 {
            let z = if self.sv.is_empty() { DVector::zeros(self.v.nrows()) } else { build(0.0) };
            return BallSolution { z, kappa: 0.0 };
        }
        // |z(kappa)| decreases in kappa; bracket, then bisect geometrically
        let smax = self.sv[0].max(self.sv.iter().cloned().fold(0.0, f64::max));
        let mut lo = 0.0;
        let mut hi = smax * smax;
        while self.norm2(hi) > r2 {
            lo = hi;
            hi *= 4.0;
        }
        for _ in 0..400 {
            let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
            if self.norm2(mid) > r2 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        let kappa = 0.5 * (lo + hi);
        let z = build(kappa);
        let n = z.norm();
        // land exactly on the sphere
        let z = if n > 0.0 { z * Complex64::new(r / n, 0.0) } else { z };
        BallSolution { z, kappa }
    }
}
