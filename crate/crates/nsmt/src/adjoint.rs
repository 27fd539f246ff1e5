//! Backward dual system `-E p_t + T F^* p = 0` with the penalized terminal datum,
//! the wall flux `p'''(t, L)` and the duality check against boundary variations.

use crate::channel::ChannelConfig;
use crate::control::{time_weights, ControlTrajectory};
use crate::error::{NsmtError, Result};
use crate::grid::{
    apply_e_clamped, bilinear_h, solve_e, third_derivative_top, Grid, GridFunction, ModeStencil,
    OperatorKind, Resolvent,
};
use crate::scalar::{re, Cx, Scalar};
use crate::state::{solve_variation_y, ModeStepper};
use num_traits::Zero;

/// How the dual trajectory is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointMode {
    /// Conjugate transpose of the assembled forward step; gradients are exact for the discrete cost.
    #[default]
    Discrete,
    /// Crank-Nicolson on the dual equation with the literal terminal condition.
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory<S> {
    pub k: i32,
    pub t_horizon: S,
    pub eps: S,
    pub mode: AdjointMode,
    /// `p(t_n, .)`.
    pub states: Vec<GridFunction<S>>,
    /// `p'''(t_n, L)`.
    pub boundary_flux: Vec<Cx<S>>,
    /// `E p(1)`, the density paired with the terminal state.
    pub terminal_moment: GridFunction<S>,
}

impl<S: Scalar> AdjointTrajectory<S> {
    pub fn nt(&self) -> usize {
        self.states.len() - 1
    }
}

pub(crate) fn check_eps<S: Scalar>(eps: S) -> Result<()> {
    if !(eps >= S::c(1e-10)) {
        return Err(NsmtError::EpsilonTooSmall(eps.as_f64()));
    }
    Ok(())
}

/// `p(1) = E^{-1} (sigma I + A_k)^{-2} (conj(v(1)) / eps)`.
pub fn terminal_adjoint_datum<S: Scalar>(
    k: i32,
    v_terminal: &GridFunction<S>,
    eps: S,
    sigma: S,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<GridFunction<S>> {
    check_eps(eps)?;
    v_terminal.check_len(grid)?;
    let r = Resolvent::new(k, sigma, cfg, grid)?;
    let g = r.apply(&v_terminal.conj().scale(re(S::one() / eps)), 2);
    solve_e(k, &g, grid)
}

/// Output of the exact discrete adjoint sweep.
#[derive(Debug, Clone)]
pub(crate) struct DiscreteSweep<S> {
    /// Sensitivities of the cost to the lifted state after each step, `0..=Nt`.
    pub lambda: Vec<Vec<Cx<S>>>,
    /// Sensitivities to the step right-hand sides, `0..Nt`.
    pub mu: Vec<Vec<Cx<S>>>,
    /// `dJ = Re sum conj(g_m) dw_m` for the terminal penalty alone.
    pub control_functional: Vec<Cx<S>>,
}

/// Sweep for the penalty `(1/2 eps) h sum |R f|^2` with `f` the interior terminal state.
pub(crate) fn discrete_sweep<S: Scalar>(
    st: &ModeStepper<S>,
    res: &Resolvent<S>,
    f: &[Cx<S>],
    eps: S,
    h: S,
) -> DiscreteSweep<S> {
    discrete_sweep_from(st, penalty_sensitivity(res, f, eps, h))
}

/// `(h/eps) R^H R f`, the gradient of the penalty with respect to `f`.
pub(crate) fn penalty_sensitivity<S: Scalar>(res: &Resolvent<S>, f: &[Cx<S>], eps: S, h: S) -> Vec<Cx<S>> {
    let g = res.apply_interior(f);
    let scaled: Vec<Cx<S>> = g.iter().map(|z| *z * (h / eps)).collect();
    res.apply_adjoint_interior(&scaled)
}

/// Backward sweep from a given terminal sensitivity.
pub(crate) fn discrete_sweep_from<S: Scalar>(st: &ModeStepper<S>, lam_t: Vec<Cx<S>>) -> DiscreteSweep<S> {
    let nt = st.nt;
    let mut lambda = vec![Vec::new(); nt + 1];
    let mut mu = vec![Vec::new(); nt];
    lambda[nt] = lam_t;
    for n in (0..nt).rev() {
        let m = st.m_lu.solve_adjoint(&lambda[n + 1]);
        lambda[n] = st.p.matvec_adjoint(&m);
        mu[n] = m;
    }
    let half_tau = st.tau() * S::c(0.5);
    let dot = |c: &dyn Fn(usize) -> Cx<S>, v: &[Cx<S>]| -> Cx<S> {
        v.iter().enumerate().map(|(j, x)| c(j).conj() * *x).sum()
    };
    let plus = |j: usize| st.a_int[j] * half_tau + st.b_int[j];
    let minus = |j: usize| st.a_int[j] * half_tau - st.b_int[j];
    let mut gfun = vec![Cx::zero(); nt + 1];
    for (m, gm) in gfun.iter_mut().enumerate() {
        let mut s = Cx::zero();
        if m < nt {
            s += dot(&minus, &mu[m]);
        }
        if m > 0 {
            s += dot(&plus, &mu[m - 1]);
        }
        if m == nt {
            s += lambda[nt].iter().enumerate().map(|(j, x)| *x * st.beta[j + 1]).sum::<Cx<S>>();
        }
        *gm = s;
    }
    DiscreteSweep { lambda, mu, control_functional: gfun }
}

/// Solves the dual system backward from `t = 1`.
#[allow(clippy::too_many_arguments)]
pub fn solve_adjoint<S: Scalar>(
    k: i32,
    t_horizon: S,
    v_terminal: &GridFunction<S>,
    eps: S,
    nt: usize,
    mode: AdjointMode,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<AdjointTrajectory<S>> {
    check_eps(eps)?;
    v_terminal.check_len(grid)?;
    if k == 0 {
        return Err(NsmtError::InvalidMode);
    }
    let sigma = cfg.sigma_for(k);
    match mode {
        AdjointMode::Continuous => continuous(k, t_horizon, v_terminal, eps, sigma, nt, cfg, grid),
        AdjointMode::Discrete => {
            let st = ModeStepper::new(k, t_horizon, nt, cfg, grid)?;
            let res = Resolvent::new(k, sigma, cfg, grid)?;
            Ok(discrete_trajectory(&st, &res, v_terminal, eps, cfg, grid))
        }
    }
}

pub(crate) fn discrete_trajectory<S: Scalar>(
    st: &ModeStepper<S>,
    res: &Resolvent<S>,
    v_terminal: &GridFunction<S>,
    eps: S,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> AdjointTrajectory<S> {
    let sw = discrete_sweep(st, res, v_terminal.interior(), eps, grid.h);
    flux_from_sweep(st, &sw, eps, cfg, grid)
}

pub(crate) fn flux_from_sweep<S: Scalar>(
    st: &ModeStepper<S>,
    sw: &DiscreteSweep<S>,
    eps: S,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> AdjointTrajectory<S> {
    let nt = st.nt;
    let k = st.k;
    let z = Cx::zero();
    let inv_h = S::one() / grid.h;
    let states = sw
        .lambda
        .iter()
        .map(|l| {
            let lf = GridFunction::from_interior(l, z, z);
            solve_e(k, &lf, grid).expect("E is coercive").conj().scale(re(inv_h))
        })
        .collect();
    let wts = time_weights::<S>(nt);
    let boundary_flux = sw
        .control_functional
        .iter()
        .zip(&wts)
        .map(|(g, wq)| g.conj() / (st.t_horizon * cfg.nu * *wq))
        .collect();
    let terminal_moment = GridFunction::from_interior(&sw.lambda[nt], z, z).conj().scale(re(inv_h));
    AdjointTrajectory { k, t_horizon: st.t_horizon, eps, mode: AdjointMode::Discrete, states, boundary_flux, terminal_moment }
}

#[allow(clippy::too_many_arguments)]
fn continuous<S: Scalar>(
    k: i32,
    t_horizon: S,
    v_terminal: &GridFunction<S>,
    eps: S,
    sigma: S,
    nt: usize,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<AdjointTrajectory<S>> {
    if !(t_horizon > S::zero()) {
        return Err(NsmtError::Config("horizon must be positive".into()));
    }
    let p1 = terminal_adjoint_datum(k, v_terminal, eps, sigma, cfg, grid)?;
    let e = ModeStencil::new(OperatorKind::E, k, cfg, grid).banded();
    let fs = ModeStencil::new(OperatorKind::FStar, k, cfg, grid).banded();
    let half_tau = re(t_horizon / S::n(nt) * S::c(0.5));
    let one = re(S::one());
    let lhs = e.combine(one, &fs, half_tau).factor()?;
    let rhs_op = e.combine(one, &fs, -half_tau);
    let z = Cx::zero();
    let mut states = vec![GridFunction::zeros(grid); nt + 1];
    let mut x = p1.interior().to_vec();
    states[nt] = p1.clone();
    for n in (0..nt).rev() {
        let mut r = rhs_op.matvec(&x);
        lhs.solve_in_place(&mut r);
        if !r.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(NsmtError::Instability(n));
        }
        x = r;
        states[n] = GridFunction::from_interior(&x, z, z);
    }
    let boundary_flux = states.iter().map(|p| third_derivative_top(p, grid)).collect();
    let terminal_moment = apply_e_clamped(k, &p1, grid)?;
    Ok(AdjointTrajectory { k, t_horizon, eps, mode: AdjointMode::Continuous, states, boundary_flux, terminal_moment })
}

/// Relative mismatch of `int E p(1) Y(1) dy` and `T int omega nu p'''(t, L) dt`, where `Y`
/// is the response to the boundary variation `omega`.
pub fn discrete_duality_residual<S: Scalar>(
    k: i32,
    t_horizon: S,
    omega: &ControlTrajectory<S>,
    p: &AdjointTrajectory<S>,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<S> {
    let (lhs, rhs) = duality_sides(k, t_horizon, omega, p, cfg, grid)?;
    Ok((lhs - rhs).norm() / (lhs.norm() + rhs.norm() + S::min_positive_value()))
}

/// Both sides of the duality identity.
pub fn duality_sides<S: Scalar>(
    k: i32,
    t_horizon: S,
    omega: &ControlTrajectory<S>,
    p: &AdjointTrajectory<S>,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<(Cx<S>, Cx<S>)> {
    if omega.nt() != p.nt() {
        return Err(NsmtError::MeshMismatch(format!(
            "variation has {} steps, adjoint has {}",
            omega.nt(),
            p.nt()
        )));
    }
    p.terminal_moment.check_len(grid)?;
    let y = solve_variation_y(k, t_horizon, omega, cfg, grid)?;
    let lhs = bilinear_h(&p.terminal_moment, y.terminal(), grid)?;
    let wts = time_weights::<S>(omega.nt());
    let rhs: Cx<S> = omega
        .samples
        .iter()
        .zip(&p.boundary_flux)
        .zip(&wts)
        .map(|((o, f), wq)| *o * *f * *wq)
        .sum::<Cx<S>>()
        * (t_horizon * cfg.nu);
    Ok((lhs, rhs))
}
