//! Laminar base flow, lifting polynomial, per-mode source terms and the
//! smallness constants used by the mode-selection rules.

use crate::error::{NsmtError, Result};
use crate::grid::{Grid, GridFunction};
use crate::scalar::{cx, Scalar};

/// Which expression is used for `C_{nu,U,k}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantForm {
    /// `C k^4 (nu + a (4 + L) / (8 nu))`.
    #[default]
    ClosedForm,
    /// `C k^4 (nu + sup|U| + sup|U'|)`.
    SobolevNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig<S> {
    pub nu: S,
    pub l: S,
    pub a: S,
    pub rho: S,
    /// Resolvent shift; `None` selects the per-mode default.
    pub sigma: Option<S>,
    pub c_const: S,
    /// Bound on the controllability cost in L^1; zero means unknown.
    pub gamma_l1: S,
    pub ny: usize,
    pub nt: usize,
    pub kmax: usize,
    pub constant_form: ConstantForm,
}

impl<S: Scalar> ChannelConfig<S> {
    /// Config with the documented defaults for everything but `nu`, `L`, `a`, `rho`.
    pub fn new(nu: S, l: S, a: S, rho: S) -> Self {
        ChannelConfig {
            nu,
            l,
            a,
            rho,
            sigma: None,
            c_const: S::one(),
            gamma_l1: S::zero(),
            ny: 64,
            nt: 128,
            kmax: 4,
            constant_form: ConstantForm::ClosedForm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NsmtError::Config(m.to_string()));
        if !(self.nu > S::zero()) {
            return bad("nu must be positive");
        }
        if !(self.l > S::zero()) {
            return bad("L must be positive");
        }
        if !(self.a >= S::zero()) {
            return bad("a must be nonnegative");
        }
        if !(self.rho > S::zero()) {
            return bad("rho must be positive");
        }
        if let Some(s) = self.sigma {
            if !(s > S::zero()) {
                return bad("sigma must be positive");
            }
        }
        if !(self.c_const > S::zero()) {
            return bad("C must be positive");
        }
        if !(self.gamma_l1 >= S::zero()) {
            return bad("gamma_l1 must be nonnegative");
        }
        if self.ny < 8 {
            return Err(NsmtError::GridTooCoarse(self.ny));
        }
        if self.nt < 8 {
            return bad("time grid too coarse: Nt must be at least 8");
        }
        if self.kmax < 1 {
            return bad("Kmax must be at least 1");
        }
        Ok(())
    }

    /// Shift `sigma` for mode `k`: the configured value, or
    /// `10 nu (k^2 + pi^2/L^2)^2 + 10 sup|U| |k|^3`.
    pub fn sigma_for(&self, k: i32) -> S {
        if let Some(s) = self.sigma {
            return s;
        }
        let kk = S::c(k as f64);
        let pi = S::c(std::f64::consts::PI);
        let mu = kk * kk + pi * pi / (self.l * self.l);
        let (su, _) = profile_sup_norms(self);
        S::c(10.0) * self.nu * mu * mu + S::c(10.0) * su * kk.abs().powi(3)
    }
}

/// `U`, `U'`, `U''` at one wall-normal position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint<S> {
    pub u: S,
    pub du: S,
    pub d2u: S,
}

fn check_position<S: Scalar>(y: S, l: S) -> Result<()> {
    let slack = l * S::c(1e-12);
    if y < -slack || y > l + slack || y.is_nan() {
        return Err(NsmtError::Domain { y: y.as_f64(), l: l.as_f64() });
    }
    Ok(())
}

/// Poiseuille profile `U(y) = -(a / 2 nu)(y^2/L - y)` and its derivatives.
pub fn laminar_profile<S: Scalar>(y: S, cfg: &ChannelConfig<S>) -> Result<ProfilePoint<S>> {
    check_position(y, cfg.l)?;
    Ok(profile_unchecked(y, cfg))
}

pub(crate) fn profile_unchecked<S: Scalar>(y: S, cfg: &ChannelConfig<S>) -> ProfilePoint<S> {
    let g = cfg.a / (S::c(2.0) * cfg.nu);
    let l = cfg.l;
    ProfilePoint {
        u: -g * (y * y / l - y),
        du: -g * (S::c(2.0) * y / l - S::one()),
        d2u: -cfg.a / (cfg.nu * l),
    }
}

/// `(sup|U|, sup|U'|)` over the channel: `a L / 8 nu` and `a / 2 nu`.
pub fn profile_sup_norms<S: Scalar>(cfg: &ChannelConfig<S>) -> (S, S) {
    let a = cfg.a.abs();
    (a * cfg.l / (S::c(8.0) * cfg.nu), a / (S::c(2.0) * cfg.nu))
}

/// The cubic `beta(y) = -2y^3/L^3 + 3y^2/L^2` with derivatives 0..=4.
pub fn lifting<S: Scalar>(y: S, l: S) -> Result<[S; 5]> {
    check_position(y, l)?;
    Ok(lifting_unchecked(y, l))
}

pub(crate) fn lifting_unchecked<S: Scalar>(y: S, l: S) -> [S; 5] {
    let l2 = l * l;
    let l3 = l2 * l;
    let two = S::c(2.0);
    let three = S::c(3.0);
    let six = S::c(6.0);
    let twelve = S::c(12.0);
    [
        -two * y * y * y / l3 + three * y * y / l2,
        -six * y * y / l3 + six * y / l2,
        -twelve * y / l3 + six / l2,
        -twelve / l3,
        S::zero(),
    ]
}

/// Source coefficients of the lifted mode equation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCoefficients<S> {
    pub k: i32,
    pub a_k: GridFunction<S>,
    pub b_k: GridFunction<S>,
}

/// `b_k = beta'' - k^2 beta` and
/// `a_k = (2 nu k^2 + i k U) beta'' - (nu k^4 + i k^3 U + i k U'') beta` on the grid.
pub fn mode_source_coeffs<S: Scalar>(
    k: i32,
    cfg: &ChannelConfig<S>,
    grid: &Grid<S>,
) -> Result<ModeCoefficients<S>> {
    if k == 0 {
        return Err(NsmtError::InvalidMode);
    }
    let kk = S::c(k as f64);
    let k2 = kk * kk;
    let nu = cfg.nu;
    let mut a_k = Vec::with_capacity(grid.len());
    let mut b_k = Vec::with_capacity(grid.len());
    for &y in &grid.nodes {
        let b = lifting_unchecked(y, grid.l);
        let p = profile_unchecked(y, cfg);
        b_k.push(cx(b[2] - k2 * b[0], S::zero()));
        let c2 = cx(S::c(2.0) * nu * k2, kk * p.u);
        let c0 = cx(nu * k2 * k2, k2 * kk * p.u + kk * p.d2u);
        a_k.push(c2 * b[2] - c0 * b[0] - cx(nu * b[4], S::zero()));
    }
    Ok(ModeCoefficients { k, a_k: GridFunction::new(a_k), b_k: GridFunction::new(b_k) })
}

/// `C_{nu,U,k}` in the form selected by `cfg.constant_form`.
pub fn smallness_constant<S: Scalar>(k: i32, cfg: &ChannelConfig<S>) -> S {
    smallness_constant_with(k, cfg, cfg.constant_form)
}

pub fn smallness_constant_with<S: Scalar>(k: i32, cfg: &ChannelConfig<S>, form: ConstantForm) -> S {
    let k4 = S::c(k as f64).powi(4);
    let inner = match form {
        ConstantForm::ClosedForm => cfg.nu + cfg.a / (S::c(8.0) * cfg.nu) * (S::c(4.0) + cfg.l),
        ConstantForm::SobolevNorm => {
            let (su, sdu) = profile_sup_norms(cfg);
            cfg.nu + su + sdu
        }
    };
    cfg.c_const * k4 * inner
}
