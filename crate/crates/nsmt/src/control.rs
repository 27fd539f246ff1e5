//! Scalar boundary controls on the rescaled interval `[0, 1]` and the `V_1` geometry
//! (`||w||^2 = int |w'|^2`, `w(0) = 0`).

use crate::error::{NsmtError, Result};
use crate::scalar::{re, Cx, Scalar};
use num_traits::Zero;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory<S> {
    /// `w(t_n)`, `t_n = n / Nt`.
    pub samples: Vec<Cx<S>>,
}

impl<S: Scalar> ControlTrajectory<S> {
    pub fn new(samples: Vec<Cx<S>>) -> Self {
        assert!(samples.len() >= 2, "a control needs at least one time step");
        ControlTrajectory { samples }
    }

    pub fn zeros(nt: usize) -> Self {
        ControlTrajectory::new(vec![Cx::zero(); nt + 1])
    }

    pub fn from_fn(nt: usize, f: impl Fn(S) -> Cx<S>) -> Self {
        ControlTrajectory::new((0..=nt).map(|n| f(S::n(n) / S::n(nt))).collect())
    }

    pub fn nt(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn dt(&self) -> S {
        S::one() / S::n(self.nt())
    }

    pub fn times(&self) -> Vec<S> {
        (0..=self.nt()).map(|n| S::n(n) * self.dt()).collect()
    }

    /// Forward differences `(w_{n+1} - w_n) / dt`, one per step.
    pub fn derivative_midpoints(&self) -> Vec<Cx<S>> {
        let dt = self.dt();
        self.samples.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
    }

    pub fn scale(&self, s: Cx<S>) -> Self {
        ControlTrajectory::new(self.samples.iter().map(|z| *z * s).collect())
    }

    pub fn axpy(&self, s: Cx<S>, other: &Self) -> Self {
        ControlTrajectory::new(self.samples.iter().zip(&other.samples).map(|(a, b)| *a + s * *b).collect())
    }

    pub fn conj(&self) -> Self {
        ControlTrajectory::new(self.samples.iter().map(|z| z.conj()).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub(crate) fn check_start(&self) -> Result<()> {
        if self.samples[0].norm() > S::c(1e-12) {
            return Err(NsmtError::ConstraintViolation(format!(
                "control must vanish at t = 0, got |w(0)| = {:e}",
                self.samples[0].norm()
            )));
        }
        Ok(())
    }

    /// Linear interpolation at `t` in `[0, 1]`.
    pub fn eval(&self, t: S) -> Cx<S> {
        let nt = self.nt();
        let x = (t * S::n(nt)).max(S::zero()).min(S::n(nt));
        let i = x.floor().to_usize().unwrap_or(0).min(nt - 1);
        let f = x - S::n(i);
        self.samples[i] * (S::one() - f) + self.samples[i + 1] * f
    }
}

/// `V_1` inner product `int w1' conj(w2)'` with forward differences and the rectangle rule.
pub fn v1_inner<S: Scalar>(a: &ControlTrajectory<S>, b: &ControlTrajectory<S>) -> Cx<S> {
    assert_eq!(a.nt(), b.nt());
    let da = a.derivative_midpoints();
    let db = b.derivative_midpoints();
    da.iter().zip(&db).map(|(x, y)| *x * y.conj()).sum::<Cx<S>>() * a.dt()
}

/// `||w||_{V_1}`; rejects controls that do not start at zero.
pub fn v1_norm<S: Scalar>(w: &ControlTrajectory<S>) -> Result<S> {
    w.check_start()?;
    Ok(v1_norm_unchecked(w))
}

pub(crate) fn v1_norm_unchecked<S: Scalar>(w: &ControlTrajectory<S>) -> S {
    v1_inner(w, w).re.max(S::zero()).sqrt()
}

/// Radial projection onto `{||w||_{V_1} <= radius}`.
pub fn project_v1_ball<S: Scalar>(w: &ControlTrajectory<S>, radius: S) -> ControlTrajectory<S> {
    let nrm = v1_norm_unchecked(w);
    if nrm <= radius {
        return w.clone();
    }
    w.scale(re(radius / nrm))
}

/// Trapezoidal weights on the control time mesh.
pub fn time_weights<S: Scalar>(nt: usize) -> Vec<S> {
    let dt = S::one() / S::n(nt);
    let mut w = vec![dt; nt + 1];
    w[0] = dt * S::c(0.5);
    w[nt] = dt * S::c(0.5);
    w
}

/// `V_1` Riesz representative of the functional `delta -> sum_m conj(g_m) delta_m`.
///
/// The representative `G` solves the discrete `-G'' = g`, `G(0) = 0`, with no flux
/// beyond `t = 1`; it is the discrete `G(t) = int_0^t int_s^1 g`.
pub fn riesz_v1<S: Scalar>(functional: &[Cx<S>]) -> ControlTrajectory<S> {
    let nt = functional.len() - 1;
    let dt = S::one() / S::n(nt);
    let mut d = vec![Cx::zero(); nt];
    let mut acc = Cx::zero();
    for n in (0..nt).rev() {
        acc += functional[n + 1];
        d[n] = acc;
    }
    let mut g = vec![Cx::zero(); nt + 1];
    for n in 0..nt {
        g[n + 1] = g[n] + d[n] * dt;
    }
    ControlTrajectory::new(g)
}

/// Inverse of [`riesz_v1`]: the functional represented by `w`, i.e. `-w''` weighted by the mesh.
pub fn v1_functional<S: Scalar>(w: &ControlTrajectory<S>) -> Vec<Cx<S>> {
    let nt = w.nt();
    let d = w.derivative_midpoints();
    let mut g = vec![Cx::zero(); nt + 1];
    for m in 1..=nt {
        let next = if m < nt { d[m] } else { Cx::zero() };
        g[m] = d[m - 1] - next;
    }
    g
}

/// `||g||_{V_1^*}` for a functional given by weighted samples.
pub fn v1_dual_norm<S: Scalar>(functional: &[Cx<S>]) -> S {
    v1_norm_unchecked(&riesz_v1(functional))
}
