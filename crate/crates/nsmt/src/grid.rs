//! Wall-normal grid, grid functions and the finite-difference realizations of
//! `E_k = k^2 - d^2/dy^2`, the fourth-order mode operator `F_k` and its dual `F_k^*`.
//!
//! Functions carry values at all `Ny + 1` nodes. Operators return results on
//! interior nodes and zero at the walls. The clamped derivative condition
//! enters through the ghost reflection `z_{-1} = z_1`, `z_{N+1} = z_{N-1}`.

use crate::banded::{BandedLu, BandedMatrix};
use crate::channel::{profile_unchecked, ChannelConfig};
use crate::error::{NsmtError, Result};
use crate::scalar::{cx, re, Cx, Scalar};
use num_traits::Zero;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<S> {
    pub ny: usize,
    pub l: S,
    pub h: S,
    pub nodes: Vec<S>,
}

impl<S: Scalar> Grid<S> {
    pub fn new(ny: usize, l: S) -> Result<Self> {
        if ny < 8 {
            return Err(NsmtError::GridTooCoarse(ny));
        }
        if !(l > S::zero()) {
            return Err(NsmtError::Config("L must be positive".into()));
        }
        let h = l / S::n(ny);
        let mut nodes: Vec<S> = (0..=ny).map(|j| S::n(j) * h).collect();
        nodes[ny] = l;
        Ok(Grid { ny, l, h, nodes })
    }

    /// Number of nodes, `Ny + 1`.
    pub fn len(&self) -> usize {
        self.ny + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of interior unknowns, `Ny - 1`.
    pub fn interior(&self) -> usize {
        self.ny - 1
    }

    pub fn sample(&self, f: impl Fn(S) -> Cx<S>) -> GridFunction<S> {
        GridFunction::new(self.nodes.iter().map(|&y| f(y)).collect())
    }

    pub fn sample_real(&self, f: impl Fn(S) -> S) -> GridFunction<S> {
        self.sample(|y| re(f(y)))
    }
}

/// Complex samples aligned with the nodes of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<S> {
    pub values: Vec<Cx<S>>,
}

impl<S: Scalar> GridFunction<S> {
    pub fn new(values: Vec<Cx<S>>) -> Self {
        GridFunction { values }
    }

    pub fn zeros(grid: &Grid<S>) -> Self {
        GridFunction { values: vec![Cx::zero(); grid.len()] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn interior(&self) -> &[Cx<S>] {
        &self.values[1..self.values.len() - 1]
    }

    /// Pads interior values with the given wall values.
    pub fn from_interior(int: &[Cx<S>], bottom: Cx<S>, top: Cx<S>) -> Self {
        let mut v = Vec::with_capacity(int.len() + 2);
        v.push(bottom);
        v.extend_from_slice(int);
        v.push(top);
        GridFunction { values: v }
    }

    pub fn conj(&self) -> Self {
        GridFunction { values: self.values.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: Cx<S>) -> Self {
        GridFunction { values: self.values.iter().map(|z| *z * s).collect() }
    }

    pub fn axpy(&self, s: Cx<S>, other: &Self) -> Self {
        GridFunction { values: self.values.iter().zip(&other.values).map(|(a, b)| *a + s * *b).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(re(-S::one()), other)
    }

    pub fn max_abs(&self) -> S {
        self.values.iter().fold(S::zero(), |m, z| m.max(z.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub(crate) fn check_len(&self, grid: &Grid<S>) -> Result<()> {
        if self.len() != grid.len() {
            return Err(NsmtError::LengthMismatch { expected: grid.len(), got: self.len() });
        }
        Ok(())
    }
}

/// Trapezoidal `int_0^L f conj(g) dy`.
pub fn inner_product_h<S: Scalar>(f: &GridFunction<S>, g: &GridFunction<S>, grid: &Grid<S>) -> Result<Cx<S>> {
    f.check_len(grid)?;
    g.check_len(grid)?;
    let n = grid.ny;
    let mut s: Cx<S> = (0..=n).map(|j| f.values[j] * g.values[j].conj()).sum();
    s -= (f.values[0] * g.values[0].conj() + f.values[n] * g.values[n].conj()) * S::c(0.5);
    Ok(s * grid.h)
}

pub fn norm_h<S: Scalar>(f: &GridFunction<S>, grid: &Grid<S>) -> Result<S> {
    Ok(inner_product_h(f, f, grid)?.re.max(S::zero()).sqrt())
}

/// Trapezoidal `int_0^L f g dy` without conjugation.
pub fn bilinear_h<S: Scalar>(f: &GridFunction<S>, g: &GridFunction<S>, grid: &Grid<S>) -> Result<Cx<S>> {
    inner_product_h(f, &g.conj(), grid)
}

/// Which of the three mode operators a stencil realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    E,
    F,
    FStar,
}

/// Per-node stencil coefficients of `E_k`, `F_k` or `F_k^*` for one mode.
#[derive(Debug, Clone)]
pub struct ModeStencil<S> {
    pub k: i32,
    pub kind: OperatorKind,
    n: usize,
    /// `coef[j][d]` multiplies `z_{j + d - 2}` in row `j`.
    coef: Vec<[Cx<S>; 5]>,
}

impl<S: Scalar> ModeStencil<S> {
    pub fn new(kind: OperatorKind, k: i32, cfg: &ChannelConfig<S>, grid: &Grid<S>) -> Self {
        let n = grid.ny;
        let h = grid.h;
        let h2 = h * h;
        let h4 = h2 * h2;
        let kk = S::c(k as f64);
        let k2 = kk * kk;
        let nu = cfg.nu;
        let z = Cx::zero();
        let mut coef = vec![[z; 5]; n + 1];
        for (j, row) in coef.iter_mut().enumerate().take(n).skip(1) {
            let y = grid.nodes[j];
            match kind {
                OperatorKind::E => {
                    row[1] = re(-S::one() / h2);
                    row[2] = re(S::c(2.0) / h2 + k2);
                    row[3] = re(-S::one() / h2);
                }
                OperatorKind::F | OperatorKind::FStar => {
                    let p = profile_unchecked(y, cfg);
                    let c2 = cx(S::c(2.0) * nu * k2, kk * p.u);
                    let (c1, c0) = if kind == OperatorKind::F {
                        (z, cx(nu * k2 * k2, k2 * kk * p.u + kk * p.d2u))
                    } else {
                        (cx(S::zero(), -S::c(2.0) * kk * p.du), cx(nu * k2 * k2, k2 * kk * p.u))
                    };
                    let d4 = nu / h4;
                    let half = c1 / (S::c(2.0) * h);
                    row[0] = re(d4);
                    row[1] = re(S::c(-4.0) * d4) - c2 / h2 - half;
                    row[2] = re(S::c(6.0) * d4) + c2 * S::c(2.0) / h2 + c0;
                    row[3] = re(S::c(-4.0) * d4) - c2 / h2 + half;
                    row[4] = re(d4);
                }
            }
        }
        ModeStencil { k, kind, n, coef }
    }

    /// Node index used for the stencil entry `j + d - 2`, with ghost reflection.
    #[inline]
    fn node(&self, j: usize, d: usize) -> usize {
        let m = j as isize + d as isize - 2;
        let n = self.n as isize;
        let m = if m < 0 {
            -m
        } else if m > n {
            2 * n - m
        } else {
            m
        };
        m as usize
    }

    /// Applies the operator to a full grid function (wall values as given).
    pub fn apply(&self, v: &[Cx<S>]) -> Vec<Cx<S>> {
        let mut out = vec![Cx::zero(); self.n + 1];
        for (j, o) in out.iter_mut().enumerate().take(self.n).skip(1) {
            let mut s = Cx::zero();
            for d in 0..5 {
                let c = self.coef[j][d];
                if !c.is_zero() {
                    s += c * v[self.node(j, d)];
                }
            }
            *o = s;
        }
        out
    }

    /// Banded matrix acting on interior unknowns of functions vanishing at both walls.
    pub fn banded(&self) -> BandedMatrix<S> {
        let m = self.n - 1;
        let mut b = BandedMatrix::zeros(m, 2, 2);
        for j in 1..self.n {
            for d in 0..5 {
                let c = self.coef[j][d];
                let col = self.node(j, d);
                if c.is_zero() || col == 0 || col == self.n {
                    continue;
                }
                b.add(j - 1, col - 1, c);
            }
        }
        b
    }
}

fn checked<S: Scalar>(v: &GridFunction<S>, grid: &Grid<S>) -> Result<()> {
    v.check_len(grid)
}

/// `E_k v = k^2 v - v''` on interior nodes (Dirichlet rows read the wall values of `v`).
pub fn apply_e<S: Scalar>(k: i32, v: &GridFunction<S>, grid: &Grid<S>) -> Result<GridFunction<S>> {
    checked(v, grid)?;
    let cfg = ChannelConfig::new(S::one(), grid.l, S::zero(), S::one());
    Ok(GridFunction::new(ModeStencil::new(OperatorKind::E, k, &cfg, grid).apply(&v.values)))
}

/// `F_k v = nu v'''' - (2 nu k^2 + i k U) v'' + (nu k^4 + i k^3 U + i k U'') v`.
pub fn apply_f<S: Scalar>(
    k: i32,
    v: &GridFunction<S>,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<GridFunction<S>> {
    checked(v, grid)?;
    Ok(GridFunction::new(ModeStencil::new(OperatorKind::F, k, cfg, grid).apply(&v.values)))
}

/// `F_k^* p = nu p'''' - (2 nu k^2 + i k U) p'' - 2 i k U' p' + (nu k^4 + i k^3 U) p`.
pub fn apply_f_star<S: Scalar>(
    k: i32,
    p: &GridFunction<S>,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<GridFunction<S>> {
    checked(p, grid)?;
    Ok(GridFunction::new(ModeStencil::new(OperatorKind::FStar, k, cfg, grid).apply(&p.values)))
}

/// Factored `sigma E + F` for one mode, used to apply `(sigma I + A_k)^{-1}` with `A_k = F E^{-1}`.
#[derive(Debug, Clone)]
pub struct Resolvent<S> {
    pub k: i32,
    pub sigma: S,
    e: BandedMatrix<S>,
    lu: BandedLu<S>,
}

impl<S: Scalar> Resolvent<S> {
    pub fn new(k: i32, sigma: S, cfg: &ChannelConfig<S>, grid: &Grid<S>) -> Result<Self> {
        let e = ModeStencil::new(OperatorKind::E, k, cfg, grid).banded();
        let f = ModeStencil::new(OperatorKind::F, k, cfg, grid).banded();
        let a = e.combine(re(sigma), &f, re(S::one()));
        let lu = a.factor().map_err(|err| match err {
            NsmtError::Singular(j) => NsmtError::ShiftTooSmall(j),
            other => other,
        })?;
        Ok(Resolvent { k, sigma, e, lu })
    }

    /// `(sigma I + A_k)^{-1}` on interior values.
    pub fn apply_interior(&self, f: &[Cx<S>]) -> Vec<Cx<S>> {
        let phi = self.lu.solve(f);
        self.e.matvec(&phi)
    }

    /// `((sigma I + A_k)^{-1})^H` on interior values (Euclidean adjoint).
    pub fn apply_adjoint_interior(&self, g: &[Cx<S>]) -> Vec<Cx<S>> {
        let t = self.e.matvec(g);
        self.lu.solve_adjoint(&t)
    }

    pub fn apply(&self, f: &GridFunction<S>, power: u32) -> GridFunction<S> {
        let z = Cx::zero();
        let mut cur = f.clone();
        for _ in 0..power {
            cur = GridFunction::from_interior(&self.apply_interior(cur.interior()), z, z);
        }
        cur
    }
}

/// `(sigma I + A_k)^{-power} f`; the wall values of `f` are ignored and those of the result are zero.
pub fn resolvent_apply<S: Scalar>(
    k: i32,
    sigma: S,
    f: &GridFunction<S>,
    power: u32,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<GridFunction<S>> {
    checked(f, grid)?;
    if !(1..=2).contains(&power) {
        return Err(NsmtError::Config(format!("resolvent power must be 1 or 2, got {power}")));
    }
    Ok(Resolvent::new(k, sigma, cfg, grid)?.apply(f, power))
}

/// Dirichlet solve `E_k phi = f` on interior nodes; `phi` vanishes at the walls.
pub fn solve_e<S: Scalar>(k: i32, f: &GridFunction<S>, grid: &Grid<S>) -> Result<GridFunction<S>> {
    checked(f, grid)?;
    let cfg = ChannelConfig::new(S::one(), grid.l, S::zero(), S::one());
    let lu = ModeStencil::new(OperatorKind::E, k, &cfg, grid).banded().factor()?;
    let z = Cx::zero();
    Ok(GridFunction::from_interior(&lu.solve(f.interior()), z, z))
}

/// First derivative: central differences inside, second-order one-sided at the walls.
pub fn derivative_y<S: Scalar>(v: &GridFunction<S>, grid: &Grid<S>) -> Result<GridFunction<S>> {
    checked(v, grid)?;
    let n = grid.ny;
    let h2 = grid.h * S::c(2.0);
    let x = &v.values;
    let mut d = vec![Cx::zero(); n + 1];
    d[0] = (x[0] * S::c(-3.0) + x[1] * S::c(4.0) - x[2]) / h2;
    d[n] = (x[n] * S::c(3.0) - x[n - 1] * S::c(4.0) + x[n - 2]) / h2;
    for j in 1..n {
        d[j] = (x[j + 1] - x[j - 1]) / h2;
    }
    Ok(GridFunction::new(d))
}

/// `p'''(L)` from the wall value and the four nodes below it, exact for quartics.
///
/// The slope at the wall is fitted rather than assumed zero. Clamped solutions of the
/// ghost-reflected scheme carry an `O(h^2)` wall slope, which a zero-slope stencil would
/// turn into an `O(1)` error in `p'''`.
pub fn third_derivative_top<S: Scalar>(p: &GridFunction<S>, grid: &Grid<S>) -> Cx<S> {
    let n = grid.ny;
    let x = &p.values;
    let d = |j: usize| x[n - j] - x[n];
    (d(2) * S::c(12.0) - d(1) * S::c(9.0) - d(3) * S::c(7.0) + d(4) * S::c(1.5)) / (grid.h * grid.h * grid.h)
}

/// `E_k p` for a clamped `p`, with wall values from the one-sided `p''` that uses `p = p' = 0`.
pub fn apply_e_clamped<S: Scalar>(k: i32, p: &GridFunction<S>, grid: &Grid<S>) -> Result<GridFunction<S>> {
    let mut out = apply_e(k, p, grid)?;
    let n = grid.ny;
    let h2 = grid.h * grid.h * S::c(2.0);
    let x = &p.values;
    let kk = S::c(k as f64);
    let bottom = (x[1] * S::c(8.0) - x[2]) / h2;
    let top = (x[n - 1] * S::c(8.0) - x[n - 2]) / h2;
    out.values[0] = x[0] * kk * kk - bottom;
    out.values[n] = x[n] * kk * kk - top;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn cfg(a: f64) -> ChannelConfig<f64> {
        ChannelConfig::new(1.0, 1.0, a, 1.0)
    }

    fn clamped_quartic(g: &Grid<f64>) -> GridFunction<f64> {
        let l = g.l;
        g.sample_real(|y| y * y * (l - y) * (l - y))
    }

    #[test]
    fn grid_basics() {
        let g = Grid::new(10, 2.0).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g.nodes[0], 0.0);
        assert_eq!(g.nodes[10], 2.0);
        assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(Grid::new(4, 1.0), Err(NsmtError::GridTooCoarse(4)));
    }

    #[test]
    fn inner_products() {
        let g = Grid::new(64, 1.0).unwrap();
        let one = g.sample_real(|_| 1.0);
        assert!((inner_product_h(&one, &one, &g).unwrap() - 1.0).norm() < 1e-14);
        let s1 = g.sample_real(|y| (PI * y).sin());
        let s2 = g.sample_real(|y| (2.0 * PI * y).sin());
        assert!(inner_product_h(&s1, &s2, &g).unwrap().norm() < 1e-12);
        let z = g.sample(|y| Complex64::new(y, 1.0 - y * y));
        let ip = inner_product_h(&z, &z, &g).unwrap();
        assert!(ip.im.abs() < 1e-15 && ip.re > 0.0);
        let short = GridFunction::new(vec![Complex64::zero(); 3]);
        assert!(matches!(inner_product_h(&short, &z, &g), Err(NsmtError::LengthMismatch { .. })));
    }

    #[test]
    fn e_on_sine_is_second_order() {
        let mut errs = vec![];
        for ny in [32, 64] {
            let g = Grid::new(ny, 1.0).unwrap();
            let v = g.sample_real(|y| (2.0 * PI * y).sin());
            let ev = apply_e(3, &v, &g).unwrap();
            let lam = 9.0 + 4.0 * PI * PI;
            let e = (1..ny).map(|j| (ev.values[j] - v.values[j] * lam).norm()).fold(0.0, f64::max);
            errs.push(e);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!((order - 2.0).abs() < 0.05, "order {order}");
        let g = Grid::new(16, 1.0).unwrap();
        let zero = GridFunction::zeros(&g);
        assert_eq!(apply_e(1, &zero, &g).unwrap(), zero);
    }

    #[test]
    fn e_reduces_to_minus_second_derivative_at_k0() {
        // v = y^2 (1 - y)^2, v'' = 2 - 12 y + 12 y^2; central differences are exact up to O(h^2)
        let g = Grid::new(40, 1.0).unwrap();
        let v = clamped_quartic(&g);
        let ev = apply_e(0, &v, &g).unwrap();
        for j in 1..40 {
            let y = g.nodes[j];
            let exact = -(2.0 - 12.0 * y + 12.0 * y * y);
            // the second difference of a quartic is off by exactly h^2 v''''/12 = 2 h^2
            assert!((ev.values[j].re - (exact - 2.0 * g.h * g.h)).abs() < 1e-9);
        }
    }

    #[test]
    fn f_matches_symbolic_expansion_for_quartic() {
        // nu = 1, k = 1, a = 0: F v = 24 - 2 v'' + v; the fourth difference is exact on
        // quartics and the second difference carries + 2 h^2
        let g = Grid::new(64, 1.0).unwrap();
        let v = clamped_quartic(&g);
        let fv = apply_f(1, &v, &cfg(0.0), &g).unwrap();
        for j in 2..63 {
            let y = g.nodes[j];
            let exact = 24.0 - 2.0 * (12.0 * y * y - 12.0 * y + 2.0 + 2.0 * g.h * g.h) + v.values[j].re;
            assert!((fv.values[j].re - exact).abs() < 1e-8, "j={j}");
        }
    }

    #[test]
    fn f_star_equals_f_without_flow() {
        let g = Grid::new(32, 1.0).unwrap();
        let v = g.sample(|y: f64| Complex64::new(y * y * (1.0 - y).powi(2), y.powi(3) * (1.0 - y).powi(2)));
        let a = apply_f(2, &v, &cfg(0.0), &g).unwrap();
        let b = apply_f_star(2, &v, &cfg(0.0), &g).unwrap();
        assert_eq!(a, b);
        let zero = GridFunction::zeros(&g);
        assert_eq!(apply_f_star(2, &zero, &cfg(2.0), &g).unwrap(), zero);
    }

    #[test]
    fn conjugation_flips_mode() {
        let g = Grid::new(24, 1.0).unwrap();
        let v = g.sample(|y| Complex64::new(y * (1.0 - y), (3.0 * y).sin()));
        for kind in [OperatorKind::E, OperatorKind::F, OperatorKind::FStar] {
            let a = GridFunction::new(ModeStencil::new(kind, 3, &cfg(2.0), &g).apply(&v.values));
            let b = GridFunction::new(ModeStencil::new(kind, -3, &cfg(2.0), &g).apply(&v.conj().values));
            assert!(a.conj().sub(&b).max_abs() < 1e-9);
        }
    }

    #[test]
    fn banded_agrees_with_apply_on_clamped_functions() {
        let g = Grid::new(20, 1.0).unwrap();
        let v = g.sample(|y: f64| Complex64::new(y * y * (1.0 - y).powi(2), (PI * y).sin().powi(2)));
        for kind in [OperatorKind::E, OperatorKind::F, OperatorKind::FStar] {
            let st = ModeStencil::new(kind, 2, &cfg(2.0), &g);
            let full = st.apply(&v.values);
            let band = st.banded().matvec(v.interior());
            for j in 1..20 {
                assert!((full[j] - band[j - 1]).norm() < 1e-9);
            }
        }
    }

    /// First even clamped eigenvalue root: `m tan(m/2) = -k tanh(k/2)` on `L = 1`.
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

    #[test]
    fn resolvent_scales_clamped_eigenfunction() {
        // without flow, g = cos(m (y - 1/2)) satisfies A g = (k^2 + m^2) g on the clamped domain
        let c = cfg(0.0);
        let m = clamped_root(1.0);
        let mut errs = vec![];
        for ny in [32, 64, 128] {
            let g = Grid::new(ny, 1.0).unwrap();
            let f = g.sample_real(|y| (m * (y - 0.5)).cos());
            let sigma = 50.0;
            let r = resolvent_apply(1, sigma, &f, 1, &c, &g).unwrap();
            let scale = 1.0 / (sigma + 1.0 + m * m);
            let e = (1..ny).map(|j| (r.values[j] - f.values[j] * scale).norm()).fold(0.0, f64::max);
            errs.push(e / scale);
            let r2 = resolvent_apply(1, sigma, &f, 2, &c, &g).unwrap();
            let twice = resolvent_apply(1, sigma, &r, 1, &c, &g).unwrap();
            assert_eq!(r2, twice);
        }
        assert!(errs[2] < 1e-3, "{errs:?}");
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
        let g = Grid::new(16, 1.0).unwrap();
        let zero = GridFunction::zeros(&g);
        assert_eq!(resolvent_apply(1, 1.0, &zero, 1, &c, &g).unwrap(), zero);
    }

    #[test]
    fn third_derivative_stencil_is_exact_on_quartics() {
        let g = Grid::<f64>::new(16, 1.0).unwrap();
        // p = (1 - y)^2 (c2 + c3 (1-y) + c4 (1-y)^2) has p(1) = p'(1) = 0
        let p = g.sample_real(|y| {
            let s = 1.0 - y;
            s * s * (0.3 + 2.0 * s - 1.5 * s * s)
        });
        // p''' at y = 1: d^3/dy^3 of (0.3 s^2 + 2 s^3 - 1.5 s^4) at s = 0 is -12
        let d3 = third_derivative_top(&p, &g);
        assert!((d3.re + 12.0).abs() < 1e-9, "{d3}");
        // a wall slope does not leak into the third derivative
        let q = g.sample_real(|y| {
            let s = 1.0 - y;
            0.7 * s + s * s * (0.3 + 2.0 * s - 1.5 * s * s)
        });
        assert!((third_derivative_top(&q, &g).re + 12.0).abs() < 1e-9);
    }

    #[test]
    fn wall_flux_of_discrete_clamped_solution_is_second_order() {
        // p = y^2 - y^3 - y^4 + y^5 is clamped at both walls with p'''(1) = 30; solve F p = f
        let c = cfg(0.0);
        let mut errs = vec![];
        for n in [32, 64, 128] {
            let g = Grid::new(n, 1.0).unwrap();
            let f = g.sample_real(|y: f64| {
                let (d2, d4) = (2.0 - 6.0 * y - 12.0 * y * y + 20.0 * y.powi(3), -24.0 + 120.0 * y);
                d4 - 2.0 * d2 + y * y - y.powi(3) - y.powi(4) + y.powi(5)
            });
            let lu = ModeStencil::new(OperatorKind::F, 1, &c, &g).banded().factor().unwrap();
            let z = Complex64::new(0.0, 0.0);
            let p = GridFunction::from_interior(&lu.solve(f.interior()), z, z);
            errs.push((third_derivative_top(&p, &g).re - 30.0).abs());
        }
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5 && errs[2] < 0.05, "{errs:?}");
    }

    #[test]
    fn derivative_is_second_order() {
        let g = Grid::new(64, 1.0).unwrap();
        let v = g.sample_real(|y| (PI * y).sin());
        let d = derivative_y(&v, &g).unwrap();
        for j in 0..=64 {
            assert!((d.values[j].re - PI * (PI * g.nodes[j]).cos()).abs() < 1e-2);
        }
    }
}
