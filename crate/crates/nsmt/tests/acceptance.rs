//! Acceptance checks, one line per criterion.
//!
//! Runs as a plain binary so the verdict lines always reach the test log. Criteria listed in
//! `KNOWN_FAILURES` are reported as FAIL and must keep failing; everything else must pass.

use nsmt::adjoint::{discrete_duality_residual, solve_adjoint};
use nsmt::assembly::{allocate_budget, assemble_solution, decompose_initial, BudgetPolicy, FlowField};
use nsmt::channel::laminar_profile;
use nsmt::control::v1_inner;
use nsmt::grid::{apply_e, apply_f, norm_h, resolvent_apply};
use nsmt::optimizer::{
    check_smallness_condition, control_gradient, cost_j_eps, optimality_residuals, solve_mode, time_gradient,
    SmallnessForm,
};
use nsmt::state::{solve_state_direct, solve_state_forced, solve_state_homogenized, ModeStepper};
use nsmt::{AdjointMode, ChannelConfig, ControlTrajectory, Grid, GridFunction, PenaltyParams, Smallness};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

/// The literal stationarity residual does not vanish at the discrete optimum; see the notes.
const KNOWN_FAILURES: &[usize] = &[7];

/// Wall-clock budget per criterion.
const TIME_LIMIT_S: f64 = 300.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn cfg(a: f64) -> ChannelConfig<f64> {
    let mut c = ChannelConfig::new(1.0, 1.0, a, 1.0);
    c.sigma = Some(1.0);
    c
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn orders(e: &[f64]) -> Vec<f64> {
    e.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn rand_cx(rng: &mut rand::rngs::StdRng, n: usize) -> Vec<C> {
    (0..n).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn rand_control(rng: &mut rand::rngs::StdRng, nt: usize, scale: f64) -> ControlTrajectory<f64> {
    let mut s: Vec<C> = rand_cx(rng, nt + 1).into_iter().map(|z| z * scale).collect();
    s[0] = C::new(0.0, 0.0);
    ControlTrajectory::new(s)
}

/// Forced solve whose exact solution is `e^{-t} y^2 (1-y)^2` in rescaled time.
fn manufactured_solve(ny: usize, nt: usize) -> (Grid<f64>, Vec<GridFunction<f64>>) {
    let (k, t_h, a) = (1, 1.0, 2.0);
    let c = cfg(a);
    let g = Grid::new(ny, 1.0).unwrap();
    let q = |y: f64| y * y * (1.0 - y).powi(2);
    let q2 = |y: f64| 2.0 - 12.0 * y + 12.0 * y * y;
    let kf = k as f64;
    let src = |t: f64| -> GridFunction<f64> {
        g.sample(|y| {
            let p = laminar_profile(y, &c).unwrap();
            let e = kf * kf * q(y) - q2(y);
            let f = C::new(24.0 - 2.0 * kf * kf * q2(y) + kf.powi(4) * q(y), 0.0)
                + C::new(0.0, kf * p.u) * (-q2(y))
                + C::new(0.0, kf.powi(3) * p.u + kf * p.d2u) * q(y);
            (C::new(-e, 0.0) + f * t_h) * (-t).exp()
        })
    };
    let v0 = g.sample_real(q);
    let w = ControlTrajectory::zeros(nt);
    let tr = solve_state_forced(k, t_h, &w, &v0, Some(&src), &c, &g).unwrap();
    (g, tr.states)
}

fn manufactured_error(ny: usize, nt: usize) -> f64 {
    let (g, states) = manufactured_solve(ny, nt);
    let q = |y: f64| y * y * (1.0 - y).powi(2);
    states
        .iter()
        .enumerate()
        .map(|(n, s)| {
            let exact = g.sample_real(|y| (-(n as f64) / nt as f64).exp() * q(y));
            norm_h(&s.sub(&exact), &g).unwrap()
        })
        .fold(0.0, f64::max)
}

fn discrete_manufactured_error(ny: usize, nt: usize) -> f64 {
    let (k, t_h) = (1, 1.0);
    let c = cfg(2.0);
    let g = Grid::new(ny, 1.0).unwrap();
    let q = g.sample_real(|y: f64| y * y * (1.0 - y).powi(2));
    let base = apply_f(k, &q, &c, &g).unwrap().scale(C::new(t_h, 0.0)).sub(&apply_e(k, &q, &g).unwrap());
    let src = |t: f64| base.scale(C::new((-t).exp(), 0.0));
    let tr = solve_state_forced(k, t_h, &ControlTrajectory::zeros(nt), &q, Some(&src), &c, &g).unwrap();
    tr.states
        .iter()
        .enumerate()
        .map(|(n, s)| norm_h(&s.sub(&q.scale(C::new((-(n as f64) / nt as f64).exp(), 0.0))), &g).unwrap())
        .fold(0.0, f64::max)
}

fn c1() -> Verdict {
    let levels = [32, 64, 128];
    let joint: Vec<f64> = levels.iter().map(|&n| manufactured_error(n, n)).collect();
    let space: Vec<f64> = levels.iter().map(|&n| manufactured_error(n, 4096)).collect();
    // Step error alone: the source is built from the discrete operators applied to the
    // exact samples, so those samples solve the semi-discrete problem exactly. With the
    // continuous source the O(h^2) wall mismatch of the datum excites stiff modes that
    // Crank-Nicolson barely damps, and the step order collapses to about 0.5.
    let time: Vec<f64> = levels.iter().map(|&n| discrete_manufactured_error(64, n)).collect();
    let all: Vec<f64> = [orders(&joint), orders(&space), orders(&time)].concat();
    let ok = all.iter().all(|p| (p - 2.0).abs() <= 0.1);
    verdict(
        ok,
        format!(
            "orders joint {:.3?} in h {:.3?} in dt {:.3?} (need 2.0 +- 0.1) dt errs {}",
            orders(&joint),
            orders(&space),
            orders(&time), sci(&time)
        ),
    )
}

fn c2() -> Verdict {
    let c = cfg(2.0);
    let t_h = 0.5;
    let mut consts = vec![];
    for n in [16, 32, 64, 128] {
        let g = Grid::new(n, 1.0).unwrap();
        let w = ControlTrajectory::from_fn(n, |t: f64| C::new((2.0 * t).sin(), t * t));
        let v0 = g.sample(|y: f64| C::new(y * y * (1.0 - y).powi(2) * 16.0, (PI * y).sin().powi(2)));
        let a = solve_state_homogenized(1, t_h, &w, &v0, &c, &g).unwrap();
        let b = solve_state_direct(1, t_h, &w, &v0, &c, &g).unwrap();
        let e = a.states.iter().zip(&b.states).map(|(x, y)| norm_h(&x.sub(y), &g).unwrap()).fold(0.0, f64::max);
        let (h, dt) = (g.h, t_h / n as f64);
        consts.push(e / (h * h + dt * dt));
    }
    let spread = consts[1..].iter().cloned().fold(0.0, f64::max) / consts[1..].iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(spread <= 1.5, format!("C = {}; spread over the last three {spread:.3} (need <= 1.5)", sci(&consts)))
}

fn c3() -> Verdict {
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (k, a) = (1 + (i % 3) as i32, if i % 2 == 0 { 0.0 } else { 2.0 });
        let g = Grid::new(24, 1.0).unwrap();
        let st = ModeStepper::new(k, 0.3 + 0.1 * (i % 5) as f64, 16, &cfg(a), &g).unwrap();
        let v = rand_cx(&mut rng, 23);
        let p = rand_cx(&mut rng, 23);
        let lhs: C = st.step(&v).iter().zip(&p).map(|(x, y)| x * y.conj()).sum();
        let rhs: C = v.iter().zip(&st.adjoint_step(&p)).map(|(x, y)| x * y.conj()).sum();
        let nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let np = p.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        worst = worst.max((lhs - rhs).norm() / (nv * np));
    }
    let c = cfg(2.0);
    let duality = |n: usize, mode: AdjointMode| {
        let g = Grid::new(n, 1.0).unwrap();
        let v0 = g.sample(|y: f64| C::new(y * y * (1.0 - y).powi(2), 0.0));
        let w = ControlTrajectory::from_fn(n, |t: f64| C::new(t, -t * t));
        let v = solve_state_homogenized(1, 0.4, &w, &v0, &c, &g).unwrap();
        let p = solve_adjoint(1, 0.4, v.terminal(), 1e-2, n, mode, &c, &g).unwrap();
        let omega = ControlTrajectory::from_fn(n, |t: f64| C::new((3.0 * t).sin(), t));
        discrete_duality_residual(1, 0.4, &omega, &p, &c, &g).unwrap()
    };
    let disc = duality(32, AdjointMode::Discrete);
    let cont: Vec<f64> = [16, 32, 64].iter().map(|&n| duality(n, AdjointMode::Continuous)).collect();
    let decay: Vec<f64> = cont.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = worst <= 1e-12 && disc <= 1e-10 && cont[2] <= 5e-2 && decay.iter().all(|d| *d >= 3.0);
    verdict(
        ok,
        format!(
            "transpose {worst:.2e} (<= 1e-12); discrete duality {disc:.2e} (<= 1e-10); \
             continuous {} (last <= 5e-2), decay {decay:.2?} (>= 3)",
            sci(&cont)
        ),
    )
}

fn c4() -> Verdict {
    let mut rng = rand::rngs::StdRng::seed_from_u64(4);
    let (mut wc, mut wt) = (0.0f64, 0.0f64);
    let eps = 1e-2;
    for a in [0.0, 2.0] {
        for k in [1, 2] {
            let c = cfg(a);
            let g = Grid::new(24, 1.0).unwrap();
            let v0 = g.sample(|y: f64| C::new((PI * y).sin() - PI * y * (1.0 - y), 0.3 * y * y * (1.0 - y).powi(2)));
            let t = 0.4;
            for _ in 0..10 {
                let w = rand_control(&mut rng, 32, 1.0);
                let w_ref = rand_control(&mut rng, 32, 0.5);
                let gr = control_gradient(k, t, &w, &w_ref, eps, &v0, &c, &g).unwrap();
                let d = rand_control(&mut rng, 32, 1.0);
                let lam = 1e-6;
                let jp = cost_j_eps(k, t, &w.axpy(C::new(lam, 0.0), &d), &w_ref, eps, &v0, &c, &g).unwrap();
                let jm = cost_j_eps(k, t, &w.axpy(C::new(-lam, 0.0), &d), &w_ref, eps, &v0, &c, &g).unwrap();
                let fd = (jp - jm) / (2.0 * lam);
                let an = v1_inner(&gr, &d).re;
                wc = wc.max((fd - an).abs() / an.abs());

                let an = time_gradient(k, t, &w, eps, &v0, &c, &g).unwrap();
                let lam = 1e-5;
                let jp = cost_j_eps(k, t + lam, &w, &w, eps, &v0, &c, &g).unwrap();
                let jm = cost_j_eps(k, t - lam, &w, &w, eps, &v0, &c, &g).unwrap();
                let fd = (jp - jm) / (2.0 * lam);
                wt = wt.max((fd - an).abs() / an.abs());
            }
        }
    }
    verdict(wc <= 1e-5 && wt <= 1e-4, format!("control {wc:.2e} (<= 1e-5); horizon {wt:.2e} (<= 1e-4); 40 directions each"))
}

/// First even root of `m tan(m/2) = -k tanh(k/2)`.
fn clamped_root(k: f64) -> f64 {
    let f = |m: f64| m * (m / 2.0).sin() * (k / 2.0).cosh() + k * (k / 2.0).sinh() * (m / 2.0).cos();
    let (mut a, mut b) = (PI, 2.0 * PI);
    for _ in 0..200 {
        let c = 0.5 * (a + b);
        if f(c) > 0.0 {
            a = c;
        } else {
            b = c;
        }
    }
    0.5 * (a + b)
}

fn c5() -> Verdict {
    let c = cfg(0.0);
    let k = 2;
    let kf = k as f64;
    let (mut comp, mut ferr, mut rerr) = (0.0f64, vec![], vec![]);
    // even about both walls, so the ghost reflection is exact
    let v = |y: f64| (2.0 * PI * y).cos() - 1.0;
    let w = 2.0 * PI;
    let e2 = |y: f64| {
        // (k^2 - D^2)^2 v with v = cos(w y) - 1
        (kf * kf + w * w).powi(2) * (w * y).cos() - kf.powi(4)
    };
    let m = clamped_root(1.0);
    for n in [32, 64, 128] {
        let g = Grid::new(n, 1.0).unwrap();
        let vs = g.sample_real(v);
        let f = apply_f(k, &vs, &c, &g).unwrap();
        let ee = apply_e(k, &apply_e(k, &vs, &g).unwrap(), &g).unwrap();
        let scale = f.max_abs();
        // the two must agree up to round-off, which the stencils amplify by h^-4
        let unit = f64::EPSILON * (n as f64).powi(4) * vs.max_abs();
        for j in 2..n - 1 {
            comp = comp.max((f.values[j] - ee.values[j] * c.nu).norm() / unit);
        }
        ferr.push((1..n).map(|j| (f.values[j] - e2(g.nodes[j]) * c.nu).norm()).fold(0.0, f64::max) / scale);

        let gf = g.sample_real(|y| (m * (y - 0.5)).cos());
        let sigma = 50.0;
        let r = resolvent_apply(1, sigma, &gf, 1, &c, &g).unwrap();
        let s = 1.0 / (sigma + c.nu * (1.0 + m * m));
        rerr.push((1..n).map(|j| (r.values[j] - gf.values[j] * s).norm()).fold(0.0, f64::max) / s);
    }
    let (fo, ro) = (orders(&ferr), orders(&rerr));
    let ok = comp <= 64.0 && fo.iter().all(|p| (p - 2.0).abs() <= 0.1) && ro.iter().all(|p| (p - 2.0).abs() <= 0.2);
    verdict(
        ok,
        format!(
            "F - nu E E away from walls {comp:.1} round-off units (limit 64); F vs exact {} orders {fo:.3?}; \
             resolvent scaling {} orders {ro:.3?}",
            sci(&ferr),
            sci(&rerr)
        ),
    )
}

struct Fixture {
    cfg: ChannelConfig<f64>,
    grid: Grid<f64>,
    v0: GridFunction<f64>,
}

fn fixture() -> Fixture {
    let mut c = ChannelConfig::new(1.0, 1.0, 0.0, 1e4);
    c.sigma = Some(1.0);
    c.ny = 32;
    c.nt = 64;
    let grid = Grid::new(32, 1.0).unwrap();
    let v0 = grid.sample_real(|y| 2e5 * ((PI * y).sin() - PI * y * (1.0 - y)));
    Fixture { cfg: c, grid, v0 }
}

fn fixture_pair(f: &Fixture) -> nsmt::OptimalModePair<f64> {
    let mut p = PenaltyParams::new(1e4);
    p.full_schedule = true;
    solve_mode(1, &p, &f.v0, &f.cfg, &f.grid).unwrap()
}

fn c6() -> Verdict {
    let f = fixture();
    let pair = fixture_pair(&f);
    let res: Vec<f64> = pair.history.iter().map(|h| h.terminal_residual).collect();
    let eps: Vec<f64> = pair.history.iter().map(|h| h.eps).collect();
    let mono = res.windows(2).all(|w| w[1] < w[0]);
    let target = 1e-3 * norm_h(&f.v0, &f.grid).unwrap();
    let below = res.last().is_some_and(|r| *r < target);
    let capped = pair.history.iter().all(|h| h.t <= pair.t_admissible);
    let ok = eps == [1e-1, 1e-2, 1e-3, 1e-4] && mono && below && capped;
    verdict(
        ok,
        format!(
            "residuals {} (decreasing, last < {target:.3e}); T {:.4?} <= T_adm {:.4}",
            sci(&res),
            pair.history.iter().map(|h| h.t).collect::<Vec<_>>(),
            pair.t_admissible
        ),
    )
}

fn c7() -> Verdict {
    let f = fixture();
    let pair = fixture_pair(&f);
    let r = optimality_residuals(&pair, &f.v0, &f.cfg, &f.grid);
    let ok = r.constraint_activity <= 1e-2 && r.collinearity_residual <= 1e-2 && r.stationarity_residual <= 5e-2;
    verdict(
        ok,
        format!(
            "activity {:.2e} (<= 1e-2); collinearity {:.2e} (<= 1e-2); stationarity {:.3e} (<= 5e-2); \
             rederived stationarity {:.3e}",
            r.constraint_activity, r.collinearity_residual, r.stationarity_residual, r.stationarity_residual_derived
        ),
    )
}

fn c8() -> Verdict {
    let (amp, rho) = (2e5, 2e4);
    let mut c = ChannelConfig::new(1.0, 1.0, 0.0, rho);
    c.sigma = Some(1.0);
    c.ny = 32;
    c.nt = 64;
    let g = Grid::new(32, 1.0).unwrap();
    let d = |y: f64| (PI * y).sin() - PI * y * (1.0 - y);
    let dd = |y: f64| PI * (PI * y).cos() - PI * (1.0 - 2.0 * y);
    // divergence-free: u = -(1/k) sin(kx) v_k'(y) for v = cos(kx) v_k(y)
    let field = FlowField::from_fn(8, &g, |x: f64, y: f64| {
        (-amp * (x.sin() + 0.25 * (2.0 * x).sin()) * dd(y), amp * (x.cos() + 0.5 * (2.0 * x).cos()) * d(y))
    });
    let spec = decompose_initial(&field, 2, &g).unwrap();
    let budget = allocate_budget(rho, &spec, BudgetPolicy::Energy, &g).unwrap();
    let mut pairs = BTreeMap::new();
    let mut init = BTreeMap::new();
    for (k, (_, v)) in &spec.entries {
        pairs.insert(*k, solve_mode(*k, &PenaltyParams::new(budget[k]), v, &c, &g).unwrap());
        init.insert(*k, v.clone());
    }
    let sol = assemble_solution(&pairs, 8, &g, &c).unwrap();
    let dg = &sol.diagnostics;
    let t_max = pairs.values().map(|p| p.t_star).fold(0.0, f64::max);
    let arg_ok = pairs[&sol.argmax].t_star == sol.t_star;
    let resim = sol.resimulation_mismatch(&init, &c, &g).unwrap();
    let vscale = pairs.values().flat_map(|p| p.v_star.states.iter().map(|s| s.max_abs())).fold(0.0, f64::max);
    let ok = dg.parseval <= 1e-10
        && dg.divergence <= 1e-12 * vscale
        && dg.realness <= 1e-12
        && sol.t_star == t_max
        && arg_ok
        && resim <= 1e-8;
    verdict(
        ok,
        format!(
            "modes {:?}; Parseval {:.1e}; divergence {:.1e}; realness {:.1e}; T* {:.4} at k = {}; re-simulation {:.1e}",
            pairs.keys().collect::<Vec<_>>(),
            dg.parseval,
            dg.divergence,
            dg.realness,
            sol.t_star,
            sol.argmax,
            resim
        ),
    )
}

fn c9() -> Verdict {
    // C_k = C k^4 (nu + a (4 + L) / (8 nu)), base = C_k (1 + k^2) gamma, s = sqrt(T),
    // Q = base s (T + s) < 1 and rho (1 - Q) > base s ||v0||
    struct Case {
        k: i32,
        nu: f64,
        a: f64,
        gamma: f64,
        t: f64,
        rho: f64,
        v0: f64,
        expect: Smallness,
    }
    let cases = [
        // unknown controllability cost
        Case { k: 1, nu: 1.0, a: 0.0, gamma: 0.0, t: 1e-4, rho: 1.0, v0: 1.0, expect: Smallness::Indeterminate },
        // base 2, Q 2.02e-4; 0.999798 > 0.02
        Case { k: 1, nu: 1.0, a: 0.0, gamma: 1.0, t: 1e-4, rho: 1.0, v0: 1.0, expect: Smallness::Pass },
        // 0.00999798 < 0.02
        Case { k: 1, nu: 1.0, a: 0.0, gamma: 1.0, t: 1e-4, rho: 0.01, v0: 1.0, expect: Smallness::Fail },
        // C_k 96, base 0.48, Q 0.18; 0.82 > 0.72
        Case { k: 2, nu: 1.0, a: 8.0, gamma: 1e-3, t: 0.25, rho: 1.0, v0: 3.0, expect: Smallness::Pass },
        // 0.82 < 0.84
        Case { k: 2, nu: 1.0, a: 8.0, gamma: 1e-3, t: 0.25, rho: 1.0, v0: 3.5, expect: Smallness::Fail },
        // base 4.8, Q 1.8
        Case { k: 2, nu: 1.0, a: 8.0, gamma: 1e-2, t: 0.25, rho: 1e6, v0: 1e-6, expect: Smallness::Fail },
    ];
    let mut got = vec![];
    let mut ok = true;
    for c in &cases {
        let mut cfg = ChannelConfig::new(c.nu, 1.0, c.a, 1.0);
        cfg.gamma_l1 = c.gamma;
        let r = check_smallness_condition(c.k, c.t, c.rho, c.v0, &cfg, SmallnessForm::Original);
        ok &= r == c.expect;
        got.push(r);
    }
    verdict(ok, format!("{got:?}"))
}

fn main() {
    let criteria: [(usize, &str, fn() -> Verdict); 9] = [
        (1, "manufactured-solution convergence", c1),
        (2, "homogenized vs boundary-row solver", c2),
        (3, "discrete adjoint exactness", c3),
        (4, "gradients vs central differences", c4),
        (5, "operator reductions", c5),
        (6, "penalty continuation", c6),
        (7, "optimality residuals", c7),
        (8, "assembly integrity", c8),
        (9, "smallness classification", c9),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = vec![];
    for (n, name, run) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let v = run();
        let secs = t0.elapsed().as_secs_f64();
        let pass = v.pass && secs <= TIME_LIMIT_S;
        let known = KNOWN_FAILURES.contains(&n);
        println!(
            "criterion {n} {}: {name}: {} [{secs:.2}s]{}",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            if known && !pass { " (known failure)" } else { "" }
        );
        if pass == known {
            unexpected.push(n);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
