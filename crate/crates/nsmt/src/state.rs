//! Forward integration of one Fourier mode on the rescaled interval `[0, 1]`:
//! `E v_t + T F v = 0`, clamped at `y = 0`, `v = w(t)` and `v' = 0` at `y = L`.

use crate::banded::{BandedLu, BandedMatrix};
use crate::channel::{lifting_unchecked, mode_source_coeffs, ChannelConfig};
use crate::control::ControlTrajectory;
use crate::error::{NsmtError, Result};
use crate::grid::{derivative_y, Grid, GridFunction, ModeStencil, OperatorKind};
use crate::scalar::{im, re, Cx, Scalar};
use num_traits::Zero;

/// Sampled states `v(t_n, .)` of one mode, `t_n = n / Nt` in rescaled time.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTrajectory<S> {
    pub k: i32,
    /// Physical horizon `T`.
    pub t_horizon: S,
    pub states: Vec<GridFunction<S>>,
}

impl<S: Scalar> ModeTrajectory<S> {
    pub fn nt(&self) -> usize {
        self.states.len() - 1
    }

    pub fn terminal(&self) -> &GridFunction<S> {
        &self.states[self.states.len() - 1]
    }

    pub fn conj(&self) -> Self {
        ModeTrajectory {
            k: -self.k,
            t_horizon: self.t_horizon,
            states: self.states.iter().map(|s| s.conj()).collect(),
        }
    }

    /// `max_n max_j |self - other|`.
    pub fn max_diff(&self, other: &Self) -> S {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.sub(b).max_abs())
            .fold(S::zero(), |m, x| m.max(x))
    }
}

/// Crank-Nicolson operators of one mode for a fixed step `tau = T dt`.
#[derive(Debug, Clone)]
pub struct ModeStepper<S> {
    pub k: i32,
    pub t_horizon: S,
    pub nt: usize,
    pub(crate) e_st: ModeStencil<S>,
    pub(crate) f_st: ModeStencil<S>,
    pub(crate) f: BandedMatrix<S>,
    /// `E + tau/2 F`, factored.
    pub(crate) m_lu: BandedLu<S>,
    /// `E - tau/2 F`.
    pub(crate) p: BandedMatrix<S>,
    pub(crate) a_int: Vec<Cx<S>>,
    pub(crate) b_int: Vec<Cx<S>>,
    pub(crate) beta: Vec<S>,
}

impl<S: Scalar> ModeStepper<S> {
    pub fn new(k: i32, t_horizon: S, nt: usize, cfg: &ChannelConfig<S>, grid: &Grid<S>) -> Result<Self> {
        if !(t_horizon > S::zero()) || !t_horizon.is_finite() {
            return Err(NsmtError::Config(format!("horizon must be positive, got {t_horizon}")));
        }
        let coeffs = mode_source_coeffs(k, cfg, grid)?;
        let e_st = ModeStencil::new(OperatorKind::E, k, cfg, grid);
        let f_st = ModeStencil::new(OperatorKind::F, k, cfg, grid);
        let e = e_st.banded();
        let f = f_st.banded();
        let half_tau = re(t_horizon / S::n(nt) * S::c(0.5));
        let one = re(S::one());
        let m_lu = e.combine(one, &f, half_tau).factor()?;
        let p = e.combine(one, &f, -half_tau);
        let beta = grid.nodes.iter().map(|&y| lifting_unchecked(y, grid.l)[0]).collect();
        Ok(ModeStepper {
            k,
            t_horizon,
            nt,
            e_st,
            f_st,
            f,
            m_lu,
            p,
            a_int: coeffs.a_k.interior().to_vec(),
            b_int: coeffs.b_k.interior().to_vec(),
            beta,
        })
    }

    pub fn dt(&self) -> S {
        S::one() / S::n(self.nt)
    }

    pub fn tau(&self) -> S {
        self.t_horizon * self.dt()
    }

    /// Homogeneous step `x -> (E + tau/2 F)^{-1} (E - tau/2 F) x` on interior values.
    pub fn step(&self, x: &[Cx<S>]) -> Vec<Cx<S>> {
        let mut y = self.p.matvec(x);
        self.m_lu.solve_in_place(&mut y);
        y
    }

    /// Conjugate transpose of [`ModeStepper::step`].
    pub fn adjoint_step(&self, y: &[Cx<S>]) -> Vec<Cx<S>> {
        let mu = self.m_lu.solve_adjoint(y);
        self.p.matvec_adjoint(&mu)
    }

    /// Lifting source over one step: `tau a_k (w0 + w1)/2 + b_k (w1 - w0)`.
    pub(crate) fn lift_source(&self, w0: Cx<S>, w1: Cx<S>) -> Vec<Cx<S>> {
        let tau = self.tau();
        let mean = (w0 + w1) * S::c(0.5);
        let jump = w1 - w0;
        self.a_int.iter().zip(&self.b_int).map(|(a, b)| *a * mean * tau + *b * jump).collect()
    }

    /// `v = v_tilde + beta w` on the full grid.
    pub(crate) fn unlift(&self, x: &[Cx<S>], w: Cx<S>) -> GridFunction<S> {
        let n = self.beta.len() - 1;
        let mut v = Vec::with_capacity(n + 1);
        v.push(w * self.beta[0]);
        for (j, xi) in x.iter().enumerate() {
            v.push(*xi + w * self.beta[j + 1]);
        }
        v.push(w * self.beta[n]);
        GridFunction::new(v)
    }

    /// Interior values of `v - beta w`, with `w` read from the top wall.
    pub(crate) fn lift_off(&self, v: &GridFunction<S>) -> (Vec<Cx<S>>, Cx<S>) {
        let n = self.beta.len() - 1;
        let w = v.values[n];
        let x = (1..n).map(|j| v.values[j] - w * self.beta[j]).collect();
        (x, w)
    }
}

/// Interior forcing `s(t, .)` added to the right-hand side of `E v_t + T F v = s`.
pub type Forcing<'a, S> = &'a dyn Fn(S) -> GridFunction<S>;

fn check_inputs<S: Scalar>(
    k: i32,
    w: &ControlTrajectory<S>,
    v0: &GridFunction<S>,
    grid: &Grid<S>,
) -> Result<()> {
    if k == 0 {
        return Err(NsmtError::InvalidMode);
    }
    v0.check_len(grid)?;
    w.check_start()?;
    if !v0.is_finite() || !w.is_finite() {
        return Err(NsmtError::InvalidInitialDatum("non-finite data".into()));
    }
    let tol = S::c(1e-8) * S::one().max(v0.max_abs());
    let n = grid.ny;
    if v0.values[0].norm() > tol || v0.values[n].norm() > tol {
        return Err(NsmtError::InvalidInitialDatum(format!(
            "initial state must vanish at both walls, got |v0(0)| = {:e}, |v0(L)| = {:e}",
            v0.values[0].norm(),
            v0.values[n].norm()
        )));
    }
    Ok(())
}

/// Lifted Crank-Nicolson solve: `v = v_tilde + beta w` where
/// `(E + tau/2 F) x^{n+1} = (E - tau/2 F) x^n + tau a_k w^{n+1/2} + b_k (w^{n+1} - w^n)`.
pub fn solve_state_homogenized<S: Scalar>(
    k: i32,
    t_horizon: S,
    w: &ControlTrajectory<S>,
    v0: &GridFunction<S>,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<ModeTrajectory<S>> {
    solve_state_forced(k, t_horizon, w, v0, None, cfg, grid)
}

/// [`solve_state_homogenized`] with an optional interior forcing, integrated by the trapezoidal rule.
pub fn solve_state_forced<S: Scalar>(
    k: i32,
    t_horizon: S,
    w: &ControlTrajectory<S>,
    v0: &GridFunction<S>,
    forcing: Option<Forcing<'_, S>>,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<ModeTrajectory<S>> {
    check_inputs(k, w, v0, grid)?;
    let st = ModeStepper::new(k, t_horizon, w.nt(), cfg, grid)?;
    run_lifted(&st, w, v0, forcing)
}

pub(crate) fn run_lifted<S: Scalar>(
    st: &ModeStepper<S>,
    w: &ControlTrajectory<S>,
    v0: &GridFunction<S>,
    forcing: Option<Forcing<'_, S>>,
) -> Result<ModeTrajectory<S>> {
    let nt = w.nt();
    let dt = st.dt();
    let ws = &w.samples;
    let mut x: Vec<Cx<S>> = v0.interior().to_vec();
    let mut states = Vec::with_capacity(nt + 1);
    states.push(st.unlift(&x, ws[0]));
    let mut f_prev = forcing.map(|f| f(S::zero()));
    for n in 0..nt {
        let mut rhs = st.p.matvec(&x);
        for (r, s) in rhs.iter_mut().zip(st.lift_source(ws[n], ws[n + 1])) {
            *r += s;
        }
        if let Some(f) = forcing {
            let f_next = f(S::n(n + 1) * dt);
            let fp = f_prev.as_ref().expect("forcing sampled");
            for (j, r) in rhs.iter_mut().enumerate() {
                *r += (fp.values[j + 1] + f_next.values[j + 1]) * (dt * S::c(0.5));
            }
            f_prev = Some(f_next);
        }
        st.m_lu.solve_in_place(&mut rhs);
        x = rhs;
        if !x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(NsmtError::Instability(n + 1));
        }
        states.push(st.unlift(&x, ws[n + 1]));
    }
    Ok(ModeTrajectory { k: st.k, t_horizon: st.t_horizon, states })
}

/// Crank-Nicolson solve on the unlifted state with `v(t, L) = w(t)` imposed as a boundary row.
pub fn solve_state_direct<S: Scalar>(
    k: i32,
    t_horizon: S,
    w: &ControlTrajectory<S>,
    v0: &GridFunction<S>,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<ModeTrajectory<S>> {
    check_inputs(k, w, v0, grid)?;
    let nt = w.nt();
    let n = grid.ny;
    let st = ModeStepper::new(k, t_horizon, nt, cfg, grid)?;
    let half_tau = st.tau() * S::c(0.5);
    let mut v = v0.values.clone();
    v[0] = Cx::zero();
    v[n] = w.samples[0];
    let mut states = vec![GridFunction::new(v.clone())];
    for step in 0..nt {
        let ev = st.e_st.apply(&v);
        let fv = st.f_st.apply(&v);
        let mut top = vec![Cx::zero(); n + 1];
        top[n] = w.samples[step + 1];
        let et = st.e_st.apply(&top);
        let ft = st.f_st.apply(&top);
        let mut rhs: Vec<Cx<S>> =
            (1..n).map(|j| ev[j] - fv[j] * half_tau - et[j] - ft[j] * half_tau).collect();
        st.m_lu.solve_in_place(&mut rhs);
        if !rhs.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(NsmtError::Instability(step + 1));
        }
        v = GridFunction::from_interior(&rhs, Cx::zero(), w.samples[step + 1]).values;
        states.push(GridFunction::new(v.clone()));
    }
    Ok(ModeTrajectory { k, t_horizon, states })
}

/// Response to a boundary variation `omega` from rest.
pub fn solve_variation_y<S: Scalar>(
    k: i32,
    t_horizon: S,
    omega: &ControlTrajectory<S>,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<ModeTrajectory<S>> {
    solve_state_homogenized(k, t_horizon, omega, &GridFunction::zeros(grid), cfg, grid)
}

/// Derivative of the state with respect to the horizon:
/// `E Z_t + T F Z = -F v*`, clamped, `Z(0) = 0`, discretized consistently with the lifted scheme.
pub fn solve_variation_z<S: Scalar>(
    k: i32,
    t_horizon: S,
    v_star: &ModeTrajectory<S>,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<ModeTrajectory<S>> {
    if v_star.states.iter().any(|s| s.len() != grid.len()) {
        return Err(NsmtError::MeshMismatch("state trajectory does not match the grid".into()));
    }
    let st = ModeStepper::new(k, t_horizon, v_star.nt(), cfg, grid)?;
    let lifted: Vec<(Vec<Cx<S>>, Cx<S>)> = v_star.states.iter().map(|s| st.lift_off(s)).collect();
    let z0 = Cx::zero();
    let mut z = vec![z0; grid.interior()];
    let mut states = vec![GridFunction::zeros(grid)];
    for n in 0..v_star.nt() {
        let r = horizon_source(&st, &lifted[n], &lifted[n + 1]);
        let mut rhs = st.p.matvec(&z);
        for (a, b) in rhs.iter_mut().zip(&r) {
            *a += *b;
        }
        st.m_lu.solve_in_place(&mut rhs);
        if !rhs.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(NsmtError::Instability(n + 1));
        }
        z = rhs;
        states.push(GridFunction::from_interior(&z, z0, z0));
    }
    Ok(ModeTrajectory { k, t_horizon, states })
}

/// `d/dT` of the step residual: `-dt/2 F (x^n + x^{n+1}) + dt a_k w^{n+1/2}`.
pub(crate) fn horizon_source<S: Scalar>(
    st: &ModeStepper<S>,
    prev: &(Vec<Cx<S>>, Cx<S>),
    next: &(Vec<Cx<S>>, Cx<S>),
) -> Vec<Cx<S>> {
    let dt = st.dt();
    let sum: Vec<Cx<S>> = prev.0.iter().zip(&next.0).map(|(a, b)| *a + *b).collect();
    let fx = st.f.matvec(&sum);
    let wm = (prev.1 + next.1) * (dt * S::c(0.5));
    fx.iter().zip(&st.a_int).map(|(f, a)| -*f * (dt * S::c(0.5)) + *a * wm).collect()
}

/// `u_k = (i/k) v_k'` at every stored time.
pub fn reconstruct_u_mode<S: Scalar>(
    k: i32,
    v: &ModeTrajectory<S>,
    grid: &Grid<S>,
) -> Result<ModeTrajectory<S>> {
    if k == 0 {
        return Err(NsmtError::InvalidMode);
    }
    let factor = im(S::one() / S::c(k as f64));
    let states = v
        .states
        .iter()
        .map(|s| derivative_y(s, grid).map(|d| d.scale(factor)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModeTrajectory { k, t_horizon: v.t_horizon, states })
}
