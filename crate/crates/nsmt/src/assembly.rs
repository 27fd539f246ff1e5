//! Streamwise Fourier split of 2-D data, budget allocation, mode selection and
//! assembly of the per-mode answers into one wall control.
//!
//! Convention: `f(x) = sum_k f_k e^{ikx}` on `x_i = 2 pi i / Nx`, so
//! `f_k = (1/Nx) sum_i f(x_i) e^{-ikx_i}`.

use crate::channel::{smallness_constant, ChannelConfig};
use crate::control::ControlTrajectory;
use crate::error::{NsmtError, Result};
use crate::grid::{derivative_y, norm_h, Grid, GridFunction};
use crate::optimizer::OptimalModePair;
use crate::scalar::{re, Cx, Scalar};
use crate::state::{reconstruct_u_mode, solve_state_homogenized, ModeTrajectory};
use num_traits::Zero;
use rustfft::{FftNum, FftPlanner};
use std::collections::BTreeMap;

/// Scalars the transforms run on.
pub trait FftScalar: Scalar + FftNum {}
impl<T: Scalar + FftNum> FftScalar for T {}

/// Real samples on the tensor grid `(x_i, y_j)`, stored row by row in `x`:
/// entry `i * (Ny + 1) + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<S> {
    pub nx: usize,
    pub ny: usize,
    pub u: Vec<S>,
    pub v: Vec<S>,
}

impl<S: Scalar> FlowField<S> {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        FlowField { nx, ny, u: vec![S::zero(); nx * (ny + 1)], v: vec![S::zero(); nx * (ny + 1)] }
    }

    /// Samples `u(x, y)` and `v(x, y)`.
    pub fn from_fn(nx: usize, grid: &Grid<S>, f: impl Fn(S, S) -> (S, S)) -> Self {
        let mut out = Self::zeros(nx, grid.ny);
        for i in 0..nx {
            let x = x_node::<S>(i, nx);
            for (j, &y) in grid.nodes.iter().enumerate() {
                let (u, v) = f(x, y);
                out.u[i * (grid.ny + 1) + j] = u;
                out.v[i * (grid.ny + 1) + j] = v;
            }
        }
        out
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * (self.ny + 1) + j
    }
}

pub fn x_node<S: Scalar>(i: usize, nx: usize) -> S {
    S::c(2.0 * std::f64::consts::PI) * S::n(i) / S::n(nx)
}

/// Mode coefficients `(u_k, v_k)` for `0 < |k| <= Kmax` and the per-mode budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpectrum<S> {
    pub entries: BTreeMap<i32, (GridFunction<S>, GridFunction<S>)>,
    pub rho_alloc: BTreeMap<i32, S>,
    /// Largest magnitude of the dropped mean (`k = 0`) component.
    pub discarded_mean: S,
}

impl<S: Scalar> ModeSpectrum<S> {
    pub fn kmax(&self) -> usize {
        self.entries.keys().map(|k| k.unsigned_abs() as usize).max().unwrap_or(0)
    }

    /// Largest `|c_k - conj(c_{-k})|` over both components.
    pub fn symmetry_residual(&self) -> S {
        let mut r = S::zero();
        for (k, (u, v)) in &self.entries {
            if let Some((um, vm)) = self.entries.get(&-k) {
                for (a, b) in u.values.iter().zip(&um.values).chain(v.values.iter().zip(&vm.values)) {
                    r = r.max((*a - b.conj()).norm());
                }
            } else {
                r = S::infinity();
            }
        }
        r
    }

    /// `||v_k||_H^2` per mode.
    pub fn energies(&self, grid: &Grid<S>) -> Result<BTreeMap<i32, S>> {
        self.entries
            .iter()
            .map(|(k, (_, v))| norm_h(v, grid).map(|n| (*k, n * n)))
            .collect()
    }
}

fn check_nx(nx: usize, kmax: usize) -> Result<()> {
    let need = 2 * kmax + 2;
    if nx < need {
        return Err(NsmtError::Aliasing { nx, need });
    }
    Ok(())
}

/// Coefficients `c_k`, `|k| <= kmax`, of real samples along `x`; index `k + kmax`.
fn forward_row<S: FftScalar>(planner: &mut FftPlanner<S>, row: &[S], kmax: usize) -> Vec<Cx<S>> {
    let nx = row.len();
    let mut buf: Vec<Cx<S>> = row.iter().map(|&x| re(x)).collect();
    planner.plan_fft_forward(nx).process(&mut buf);
    let scale = S::one() / S::n(nx);
    (-(kmax as i64)..=kmax as i64)
        .map(|k| buf[k.rem_euclid(nx as i64) as usize] * scale)
        .collect()
}

/// Samples `sum_k c_k e^{ikx_i}` at `nx` points.
fn synth_row<S: FftScalar>(planner: &mut FftPlanner<S>, coeffs: &BTreeMap<i32, Cx<S>>, nx: usize) -> Vec<Cx<S>> {
    let mut buf = vec![Cx::zero(); nx];
    for (k, c) in coeffs {
        buf[(*k as i64).rem_euclid(nx as i64) as usize] += *c;
    }
    planner.plan_fft_inverse(nx).process(&mut buf);
    buf
}

/// Splits `(u0, v0)` into streamwise modes `0 < |k| <= kmax` and averages each pair
/// into exact conjugate symmetry. The mean is dropped.
pub fn decompose_initial<S: FftScalar>(
    field: &FlowField<S>,
    kmax: usize,
    grid: &Grid<S>,
) -> Result<ModeSpectrum<S>> {
    if kmax == 0 {
        return Err(NsmtError::Config("Kmax must be at least 1".into()));
    }
    check_nx(field.nx, kmax)?;
    if field.ny != grid.ny || field.u.len() != field.nx * (grid.ny + 1) || field.v.len() != field.u.len() {
        return Err(NsmtError::MeshMismatch("field and grid disagree".into()));
    }
    if field.u.iter().chain(&field.v).any(|x| !x.is_finite()) {
        return Err(NsmtError::InvalidInitialDatum("non-finite samples".into()));
    }
    let nk = 2 * kmax + 1;
    let mut cu = vec![vec![Cx::zero(); grid.ny + 1]; nk];
    let mut cv = cu.clone();
    let mut planner = FftPlanner::new();
    let mut mean = S::zero();
    for j in 0..=grid.ny {
        let col = |data: &[S]| (0..field.nx).map(|i| data[field.index(i, j)]).collect::<Vec<S>>();
        let fu = forward_row(&mut planner, &col(&field.u), kmax);
        let fv = forward_row(&mut planner, &col(&field.v), kmax);
        mean = mean.max(fu[kmax].norm()).max(fv[kmax].norm());
        for m in 0..nk {
            cu[m][j] = fu[m];
            cv[m][j] = fv[m];
        }
    }
    // transform round-off would otherwise leave absent modes with a tiny nonzero datum
    let scale = cu.iter().chain(&cv).flatten().fold(S::zero(), |m, z| m.max(z.norm()));
    let floor = S::epsilon() * S::c(64.0) * scale;
    for z in cu.iter_mut().chain(cv.iter_mut()).flatten() {
        if z.norm() <= floor {
            *z = Cx::zero();
        }
    }
    let mut entries = BTreeMap::new();
    for kk in 1..=kmax {
        let (p, m) = (kmax + kk, kmax - kk);
        let half = S::c(0.5);
        let sym = |a: &[Cx<S>], b: &[Cx<S>]| -> Vec<Cx<S>> {
            a.iter().zip(b).map(|(x, y)| (*x + y.conj()) * half).collect()
        };
        let up = sym(&cu[p], &cu[m]);
        let vp = sym(&cv[p], &cv[m]);
        let um: Vec<Cx<S>> = up.iter().map(|z| z.conj()).collect();
        let vm: Vec<Cx<S>> = vp.iter().map(|z| z.conj()).collect();
        let k = kk as i32;
        entries.insert(k, (GridFunction::new(up), GridFunction::new(vp)));
        entries.insert(-k, (GridFunction::new(um), GridFunction::new(vm)));
    }
    Ok(ModeSpectrum { entries, rho_alloc: BTreeMap::new(), discarded_mean: mean })
}

/// Real field `sum_k c_k(y) e^{ikx}` from mode coefficients, with the imaginary residue.
pub fn synthesize<S: FftScalar>(
    modes: &BTreeMap<i32, GridFunction<S>>,
    nx: usize,
    ny: usize,
) -> Result<Vec<Cx<S>>> {
    let kmax = modes.keys().map(|k| k.unsigned_abs() as usize).max().unwrap_or(0);
    check_nx(nx, kmax)?;
    let mut out = vec![Cx::zero(); nx * (ny + 1)];
    let mut planner = FftPlanner::new();
    for j in 0..=ny {
        let coeffs: BTreeMap<i32, Cx<S>> = modes.iter().map(|(k, g)| (*k, g.values[j])).collect();
        for (i, z) in synth_row(&mut planner, &coeffs, nx).into_iter().enumerate() {
            out[i * (ny + 1) + j] = z;
        }
    }
    Ok(out)
}

/// Inverse of [`decompose_initial`] on the kept modes.
pub fn reconstruct_field<S: FftScalar>(spectrum: &ModeSpectrum<S>, nx: usize, grid: &Grid<S>) -> Result<(FlowField<S>, S)> {
    let us = spectrum.entries.iter().map(|(k, (u, _))| (*k, u.clone())).collect();
    let vs = spectrum.entries.iter().map(|(k, (_, v))| (*k, v.clone())).collect();
    let u = synthesize(&us, nx, grid.ny)?;
    let v = synthesize(&vs, nx, grid.ny)?;
    let mut all = u.clone();
    all.extend_from_slice(&v);
    let residue = realness_check(&all);
    Ok((
        FlowField { nx, ny: grid.ny, u: u.iter().map(|z| z.re).collect(), v: v.iter().map(|z| z.re).collect() },
        residue,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetPolicy {
    /// `rho_k^2` proportional to `||v_k0||_H^2`.
    #[default]
    Energy,
    Uniform,
}

/// Per-mode budgets with `sum rho_k^2 = rho^2` over the spectrum's modes.
pub fn allocate_budget<S: Scalar>(
    rho: S,
    spectrum: &ModeSpectrum<S>,
    policy: BudgetPolicy,
    grid: &Grid<S>,
) -> Result<BTreeMap<i32, S>> {
    if !(rho > S::zero()) {
        return Err(NsmtError::Config("rho must be positive".into()));
    }
    let en = spectrum.energies(grid)?;
    let total: S = en.values().copied().sum();
    if en.is_empty() || total == S::zero() {
        return Err(NsmtError::NothingToControl);
    }
    let rho2 = rho * rho;
    let n = S::n(en.len());
    Ok(en
        .into_iter()
        .map(|(k, e)| {
            let share = match policy {
                BudgetPolicy::Energy => e / total,
                BudgetPolicy::Uniform => S::one() / n,
            };
            (k, (rho2 * share).sqrt())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSelection<S> {
    pub modes: Vec<i32>,
    /// No bound on the controllability cost was given; every mode is kept.
    pub indeterminate: bool,
    /// Share of the initial `v` energy carried by the dropped modes.
    pub discarded_energy_fraction: S,
}

/// Keeps the modes with `C_k (1 + k^2) |gamma| (sqrt(T) + 1) < 1`.
pub fn select_modes<S: Scalar>(
    spectrum: &ModeSpectrum<S>,
    t_horizon: S,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<ModeSelection<S>> {
    let en = spectrum.energies(grid)?;
    let total: S = en.values().copied().sum();
    let indeterminate = cfg.gamma_l1 == S::zero();
    let keep = |k: i32| {
        if indeterminate {
            return true;
        }
        let kk = S::c(k as f64);
        smallness_constant(k, cfg) * (S::one() + kk * kk) * cfg.gamma_l1 * (t_horizon.sqrt() + S::one()) < S::one()
    };
    let modes: Vec<i32> = spectrum
        .entries
        .keys()
        .copied()
        .filter(|k| keep(*k) && spectrum.entries.contains_key(&-k) && keep(-k))
        .collect();
    let dropped: S = en.iter().filter(|(k, _)| !modes.contains(k)).map(|(_, e)| *e).sum();
    let frac = if total > S::zero() { dropped / total } else { S::zero() };
    Ok(ModeSelection { modes, indeterminate, discarded_energy_fraction: frac })
}

/// One mode carried to the common time mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledMode<S> {
    pub k: i32,
    pub t_k: S,
    /// Positions of the mode's own time nodes in the common mesh.
    pub own_nodes: Vec<usize>,
    /// Control on the common mesh, zero after `t_k`.
    pub w: Vec<Cx<S>>,
    /// `v_k` and `u_k` on the common mesh.
    pub v: Vec<GridFunction<S>>,
    pub u: Vec<GridFunction<S>>,
    pub terminal_residual: S,
    /// `max ||v_k(t)|| / ||v_k(t_k)||` over `t > t_k`; one when nothing is left to grow.
    pub tail_growth: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyDiagnostics<S> {
    pub parseval: S,
    pub divergence: S,
    pub realness: S,
    /// `||v(T*)||` over the channel cross-section, per unit length in `x`.
    pub terminal_field_norm: S,
    /// Sum over modes of `||v_k(T*)||_H`.
    pub terminal_mode_sum: S,
    pub max_tail_growth: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuasiMinimalSolution<S> {
    pub t_star: S,
    /// Mode attaining `t_star`.
    pub argmax: i32,
    pub nx: usize,
    /// Common physical time mesh on `[0, t_star]`: the union of the modes' own meshes.
    pub times: Vec<S>,
    /// `w*(t_n, x_i)`, row `n`.
    pub w_star: Vec<Vec<S>>,
    pub modes: BTreeMap<i32, AssembledMode<S>>,
    pub s_rho: Vec<i32>,
    pub diagnostics: AssemblyDiagnostics<S>,
}

/// Union of sorted meshes with near-duplicates merged.
fn merge_meshes<S: Scalar>(meshes: &[Vec<S>], t_end: S) -> Vec<S> {
    let mut all: Vec<S> = meshes.iter().flatten().copied().collect();
    all.push(t_end);
    all.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let tol = S::c(1e-13) * t_end;
    let mut out: Vec<S> = Vec::with_capacity(all.len());
    for t in all {
        if out.last().map_or(true, |l| t - *l > tol) {
            out.push(t);
        }
    }
    out
}

fn position<S: Scalar>(mesh: &[S], t: S) -> usize {
    let i = mesh.partition_point(|x| *x < t);
    if i > 0 && (i == mesh.len() || (t - mesh[i - 1]) < (mesh[i] - t)) {
        i - 1
    } else {
        i
    }
}

/// Linear interpolation of stored states at `t` on a uniform mesh over `[t0, t1]`.
fn interp_states<S: Scalar>(states: &[GridFunction<S>], t0: S, t1: S, t: S) -> GridFunction<S> {
    let n = states.len() - 1;
    if n == 0 || t1 <= t0 {
        return states[0].clone();
    }
    let x = ((t - t0) / (t1 - t0) * S::n(n)).max(S::zero()).min(S::n(n));
    let i = x.floor().to_usize().unwrap_or(0).min(n - 1);
    let f = x - S::n(i);
    states[i].scale(re(S::one() - f)).axpy(re(f), &states[i + 1])
}

/// Free evolution of a mode after its own horizon, from the state with the wall
/// value released to zero.
fn tail<S: Scalar>(
    k: i32,
    start: &GridFunction<S>,
    length: S,
    steps: usize,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<ModeTrajectory<S>> {
    let mut v0 = start.clone();
    v0.values[0] = Cx::zero();
    v0.values[grid.ny] = Cx::zero();
    solve_state_homogenized(k, length, &ControlTrajectory::zeros(steps), &v0, cfg, grid)
}

fn check_symmetric<S>(pairs: &BTreeMap<i32, OptimalModePair<S>>) -> Result<()> {
    if pairs.is_empty() {
        return Err(NsmtError::EmptyModeSet);
    }
    if let Some(k) = pairs.keys().find(|k| !pairs.contains_key(&-**k)) {
        return Err(NsmtError::Config(format!("mode {k} has no partner {}", -k)));
    }
    Ok(())
}

/// `T* = max T_k*`, `w*(t, x) = sum_k w_k*(t / T_k*) e^{ikx}` extended by zero after each
/// `T_k*`, with the modes' states carried to `T*`.
pub fn assemble_solution<S: FftScalar>(
    pairs: &BTreeMap<i32, OptimalModePair<S>>,
    nx: usize,
    grid: &Grid<S>,
    cfg: &ChannelConfig<S>,
) -> Result<QuasiMinimalSolution<S>> {
    check_symmetric(pairs)?;
    let kmax = pairs.keys().map(|k| k.unsigned_abs() as usize).max().unwrap_or(0);
    check_nx(nx, kmax)?;
    let (mut t_star, mut argmax) = (S::zero(), 0);
    for (k, p) in pairs {
        if p.t_star > t_star {
            t_star = p.t_star;
            argmax = *k;
        }
    }
    let own: Vec<Vec<S>> = pairs.values().map(|p| p.w_star.times().iter().map(|s| *s * p.t_star).collect()).collect();
    let times = merge_meshes(&own, t_star);
    let nt_common = times.len() - 1;
    let dt_min = times.windows(2).map(|w| w[1] - w[0]).fold(t_star, |a, b| a.min(b));
    let mut modes = BTreeMap::new();
    for (k, p) in pairs {
        let tk = p.t_star;
        let own_nodes: Vec<usize> = p.w_star.times().iter().map(|s| position(&times, *s * tk)).collect();
        let w: Vec<Cx<S>> = times
            .iter()
            .enumerate()
            .map(|(n, t)| match own_nodes.binary_search(&n) {
                Ok(m) => p.w_star.samples[m],
                Err(_) if *t < tk => p.w_star.eval(*t / tk),
                Err(_) => Cx::zero(),
            })
            .collect();
        let residual = norm_h(p.v_star.terminal(), grid)?;
        let rest = t_star - tk;
        let tail_traj = if rest > S::c(1e-13) * t_star {
            let steps = (rest / dt_min).ceil().to_usize().unwrap_or(1).clamp(1, 4 * nt_common.max(1));
            Some(tail(*k, p.v_star.terminal(), rest, steps, cfg, grid)?)
        } else {
            None
        };
        let mut v = Vec::with_capacity(times.len());
        for (n, t) in times.iter().enumerate() {
            let s = match own_nodes.binary_search(&n) {
                Ok(m) => p.v_star.states[m].clone(),
                Err(_) if *t <= tk => interp_states(&p.v_star.states, S::zero(), tk, *t),
                Err(_) => interp_states(&tail_traj.as_ref().expect("tail exists past t_k").states, tk, t_star, *t),
            };
            v.push(s);
        }
        let tail_growth = match &tail_traj {
            Some(tr) if residual > S::zero() => {
                tr.states.iter().map(|s| norm_h(s, grid).unwrap_or(S::nan())).fold(S::zero(), |a, b| a.max(b)) / residual
            }
            _ => S::one(),
        };
        let vt = ModeTrajectory { k: *k, t_horizon: t_star, states: v };
        let u = reconstruct_u_mode(*k, &vt, grid)?;
        modes.insert(
            *k,
            AssembledMode { k: *k, t_k: tk, own_nodes, w, v: vt.states, u: u.states, terminal_residual: residual, tail_growth },
        );
    }
    let mut planner = FftPlanner::new();
    let mut w_star = Vec::with_capacity(times.len());
    let mut realness = S::zero();
    let mut w_complex = Vec::new();
    for n in 0..times.len() {
        let coeffs: BTreeMap<i32, Cx<S>> = modes.iter().map(|(k, m)| (*k, m.w[n])).collect();
        let row = synth_row(&mut planner, &coeffs, nx);
        w_star.push(row.iter().map(|z| z.re).collect::<Vec<S>>());
        w_complex.extend(row);
    }
    realness = realness.max(realness_check(&w_complex));
    let mode_w: BTreeMap<i32, Vec<Cx<S>>> = modes.iter().map(|(k, m)| (*k, m.w.clone())).collect();
    let parseval = parseval_residual(&w_star, &times, &mode_w)?;
    let mut divergence = S::zero();
    for (k, m) in &modes {
        let ut = ModeTrajectory { k: *k, t_horizon: t_star, states: m.u.clone() };
        let vt = ModeTrajectory { k: *k, t_horizon: t_star, states: m.v.clone() };
        divergence = divergence.max(divergence_residual(&ut, &vt, *k, grid)?);
    }
    let last: BTreeMap<i32, GridFunction<S>> = modes.iter().map(|(k, m)| (*k, m.v[nt_common].clone())).collect();
    let field = synthesize(&last, nx, grid.ny)?;
    realness = realness.max(realness_check(&field));
    let terminal_field_norm = field_norm(&field, nx, grid);
    let terminal_mode_sum = last.values().map(|g| norm_h(g, grid).unwrap_or(S::nan())).sum();
    let max_tail_growth = modes.values().map(|m| m.tail_growth).fold(S::zero(), |a, b| a.max(b));
    Ok(QuasiMinimalSolution {
        t_star,
        argmax,
        nx,
        times,
        w_star,
        s_rho: pairs.keys().copied().collect(),
        modes,
        diagnostics: AssemblyDiagnostics {
            parseval,
            divergence,
            realness,
            terminal_field_norm,
            terminal_mode_sum,
            max_tail_growth,
        },
    })
}

/// `sqrt((1/2pi) int int |f|^2 dx dy)` of complex samples on the tensor grid.
fn field_norm<S: Scalar>(f: &[Cx<S>], nx: usize, grid: &Grid<S>) -> S {
    let ny = grid.ny;
    let mut acc = S::zero();
    for i in 0..nx {
        let col = GridFunction::new(f[i * (ny + 1)..(i + 1) * (ny + 1)].to_vec());
        let n = norm_h(&col, grid).unwrap_or(S::nan());
        acc += n * n;
    }
    (acc / S::n(nx)).sqrt()
}

impl<S: FftScalar> QuasiMinimalSolution<S> {
    /// Real field `(u, v)` at common time index `n`.
    pub fn field_at(&self, n: usize, grid: &Grid<S>) -> Result<FlowField<S>> {
        let us = self.modes.iter().map(|(k, m)| (*k, m.u[n].clone())).collect();
        let vs = self.modes.iter().map(|(k, m)| (*k, m.v[n].clone())).collect();
        let u = synthesize(&us, self.nx, grid.ny)?;
        let v = synthesize(&vs, self.nx, grid.ny)?;
        Ok(FlowField { nx: self.nx, ny: grid.ny, u: u.iter().map(|z| z.re).collect(), v: v.iter().map(|z| z.re).collect() })
    }

    /// Re-runs every mode from the Fourier coefficients of the assembled real control
    /// and returns the largest change in the per-mode terminal residual.
    pub fn resimulation_mismatch(
        &self,
        initial: &BTreeMap<i32, GridFunction<S>>,
        cfg: &ChannelConfig<S>,
        grid: &Grid<S>,
    ) -> Result<S> {
        let kmax = self.modes.keys().map(|k| k.unsigned_abs() as usize).max().unwrap_or(0);
        let mut planner = FftPlanner::new();
        let coeffs: Vec<Vec<Cx<S>>> = self.w_star.iter().map(|row| forward_row(&mut planner, row, kmax)).collect();
        let mut worst = S::zero();
        for (k, m) in &self.modes {
            let idx = (*k as i64 + kmax as i64) as usize;
            let w = ControlTrajectory::new(m.own_nodes.iter().map(|&n| coeffs[n][idx]).collect());
            let v0 = initial.get(k).ok_or_else(|| NsmtError::MeshMismatch(format!("no initial data for mode {k}")))?;
            let traj = solve_state_homogenized(*k, m.t_k, &w, v0, cfg, grid)?;
            let r = norm_h(traj.terminal(), grid)?;
            worst = worst.max((r - m.terminal_residual).abs());
        }
        Ok(worst)
    }
}

/// Relative mismatch between `sum_k int |w_k'|^2 dt` and `(1/2pi) int int |w_t|^2 dx dt`,
/// each side from its own samples with forward differences on the shared mesh.
pub fn parseval_residual<S: Scalar>(
    field: &[Vec<S>],
    times: &[S],
    modes: &BTreeMap<i32, Vec<Cx<S>>>,
) -> Result<S> {
    if field.len() != times.len() || modes.values().any(|m| m.len() != times.len()) {
        return Err(NsmtError::MeshMismatch("field, modes and time mesh disagree".into()));
    }
    let mut lhs = S::zero();
    let mut rhs = S::zero();
    for n in 0..times.len().saturating_sub(1) {
        let dt = times[n + 1] - times[n];
        for m in modes.values() {
            lhs += (m[n + 1] - m[n]).norm_sqr() / dt;
        }
        let nx = field[n].len();
        let s: S = field[n + 1].iter().zip(&field[n]).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
        rhs += s / (S::n(nx) * dt);
    }
    let scale = lhs.max(rhs);
    if scale == S::zero() {
        return Ok(S::zero());
    }
    Ok((lhs - rhs).abs() / scale)
}

/// `max_n ||ik u_k + D_y v_k||_H` with the same `D_y` as [`reconstruct_u_mode`].
pub fn divergence_residual<S: Scalar>(
    u: &ModeTrajectory<S>,
    v: &ModeTrajectory<S>,
    k: i32,
    grid: &Grid<S>,
) -> Result<S> {
    if u.states.len() != v.states.len() {
        return Err(NsmtError::MeshMismatch("u and v have different time meshes".into()));
    }
    let ik = Cx::new(S::zero(), S::c(k as f64));
    let mut worst = S::zero();
    for (us, vs) in u.states.iter().zip(&v.states) {
        let d = derivative_y(vs, grid)?;
        worst = worst.max(norm_h(&d.axpy(ik, us), grid)?);
    }
    Ok(worst)
}

/// `max |Im| / (max |Re| + tiny)`.
pub fn realness_check<S: Scalar>(samples: &[Cx<S>]) -> S {
    let mi = samples.iter().fold(S::zero(), |a, z| a.max(z.im.abs()));
    let mr = samples.iter().fold(S::zero(), |a, z| a.max(z.re.abs()));
    mi / (mr + S::min_positive_value())
}
