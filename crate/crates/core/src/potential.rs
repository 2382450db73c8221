//! Convex even potentials, numerical checks of their local and growth
//! behaviour, the localized replacement potential and the noise scaling.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{abs_pow, gauss_legendre5, sgn};

/// Pointwise evaluation of a potential and its first two derivatives.
pub trait Shape: Send + Sync + fmt::Debug {
    fn value(&self, z: f64) -> f64;
    fn deriv1(&self, z: f64) -> f64;
    fn deriv2(&self, z: f64) -> f64;
}

/// Constants of the lower growth bound `V'(z) >= c0 z^(1+beta)` for `z >= r0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Growth {
    pub c0: f64,
    pub beta: f64,
    pub r0: f64,
}

/// A potential together with its local exponent `alpha`, the local constant
/// `C0` of `V'(z) ~ C0 |z|^(1+alpha) sgn(z)` near the origin, and growth
/// metadata.
///
/// `alpha = 0` is allowed and describes the hyperbolic (harmonic) case.
#[derive(Clone)]
pub struct Potential {
    shape: Arc<dyn Shape>,
    alpha: f64,
    c0_local: f64,
    growth: Growth,
    label: String,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential")
            .field("label", &self.label)
            .field("alpha", &self.alpha)
            .field("c0_local", &self.c0_local)
            .field("growth", &self.growth)
            .finish()
    }
}

impl Potential {
    pub fn new(
        shape: Arc<dyn Shape>,
        alpha: f64,
        c0_local: f64,
        growth: Growth,
        label: impl Into<String>,
    ) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::param("alpha", format!("must be >= 0, got {alpha}")));
        }
        if !(c0_local >= 0.0 && c0_local.is_finite()) {
            return Err(Error::param("c0_local", format!("must be >= 0, got {c0_local}")));
        }
        Ok(Self {
            shape,
            alpha,
            c0_local,
            growth,
            label: label.into(),
        })
    }

    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        self.shape.value(z)
    }

    #[inline]
    pub fn deriv1(&self, z: f64) -> f64 {
        self.shape.deriv1(z)
    }

    #[inline]
    pub fn deriv2(&self, z: f64) -> f64 {
        self.shape.deriv2(z)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c0_local(&self) -> f64 {
        self.c0_local
    }

    pub fn growth(&self) -> Growth {
        self.growth
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Same shape, different claimed local behaviour. Used to test the
    /// hypothesis checks against potentials that do not satisfy them.
    pub fn with_local_behavior(&self, alpha: f64, c0_local: f64) -> Result<Self> {
        Potential::new(
            self.shape.clone(),
            alpha,
            c0_local,
            self.growth,
            self.label.clone(),
        )
    }

    /// Requires a degenerate fixed point (`alpha > 0`).
    pub fn require_degenerate(&self) -> Result<()> {
        if self.alpha > 0.0 {
            Ok(())
        } else {
            Err(Error::param(
                "alpha",
                format!("potential `{}` has a hyperbolic fixed point", self.label),
            ))
        }
    }
}

#[derive(Debug)]
struct PowerShape {
    coef: f64,
    alpha: f64,
}

impl Shape for PowerShape {
    fn value(&self, z: f64) -> f64 {
        self.coef * abs_pow(z, 2.0 + self.alpha)
    }
    fn deriv1(&self, z: f64) -> f64 {
        self.coef * (2.0 + self.alpha) * abs_pow(z, 1.0 + self.alpha) * sgn(z)
    }
    fn deriv2(&self, z: f64) -> f64 {
        self.coef * (2.0 + self.alpha) * (1.0 + self.alpha) * abs_pow(z, self.alpha)
    }
}

/// `V(z) = |z|^(2+alpha)`.
pub fn make_power_potential(alpha: f64) -> Result<Potential> {
    make_scaled_power(1.0, alpha)
}

/// `V(z) = coef |z|^(2+alpha)`, so `C0 = coef (2+alpha)`.
pub fn make_scaled_power(coef: f64, alpha: f64) -> Result<Potential> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param("alpha", format!("must be positive, got {alpha}")));
    }
    if !(coef > 0.0 && coef.is_finite()) {
        return Err(Error::param("coef", format!("must be positive, got {coef}")));
    }
    let c0 = coef * (2.0 + alpha);
    let label = if coef == 1.0 {
        format!("power:{alpha}")
    } else {
        format!("power:{alpha}:{coef}")
    };
    Potential::new(
        Arc::new(PowerShape { coef, alpha }),
        alpha,
        c0,
        Growth {
            c0,
            beta: alpha,
            r0: 1.0,
        },
        label,
    )
}

/// `sum_{k >= k0} z^(2k + parity) / (2k + parity)!` for small |z|.
fn even_odd_series(z: f64, first_power: i32) -> f64 {
    let mut term = 1.0;
    for k in 1..=first_power {
        term *= z / k as f64;
    }
    let z2 = z * z;
    let mut sum = 0.0;
    let mut p = first_power;
    loop {
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() || term == 0.0 {
            break;
        }
        term *= z2 / ((p + 1) * (p + 2)) as f64;
        p += 2;
    }
    sum
}

#[derive(Debug)]
struct GinzburgLandauShape;

impl Shape for GinzburgLandauShape {
    fn value(&self, z: f64) -> f64 {
        if z.abs() < 1.0 {
            even_odd_series(z, 4)
        } else {
            z.cosh() - 0.5 * z * z - 1.0
        }
    }
    fn deriv1(&self, z: f64) -> f64 {
        if z.abs() < 1.0 {
            even_odd_series(z, 3)
        } else {
            z.sinh() - z
        }
    }
    fn deriv2(&self, z: f64) -> f64 {
        let s = (0.5 * z).sinh();
        2.0 * s * s
    }
}

/// Critical Ginzburg–Landau potential `cosh(z) - z^2/2 - 1`.
pub fn make_ginzburg_landau() -> Potential {
    Potential::new(
        Arc::new(GinzburgLandauShape),
        2.0,
        1.0 / 6.0,
        Growth {
            c0: 1.0 / 6.0,
            beta: 2.0,
            r0: 1.0,
        },
        "ginzburg-landau",
    )
    .expect("static parameters are valid")
}

#[derive(Debug)]
struct HarmonicShape {
    kappa: f64,
}

impl Shape for HarmonicShape {
    fn value(&self, z: f64) -> f64 {
        0.5 * self.kappa * z * z
    }
    fn deriv1(&self, z: f64) -> f64 {
        self.kappa * z
    }
    fn deriv2(&self, _z: f64) -> f64 {
        self.kappa
    }
}

/// `V(z) = kappa z^2 / 2`: the hyperbolic contrast case (Ornstein–Uhlenbeck
/// drift `-kappa z`), recorded with `alpha = 0`, `C0 = kappa`.
pub fn make_harmonic(kappa: f64) -> Result<Potential> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::param("kappa", format!("must be positive, got {kappa}")));
    }
    let label = if kappa == 1.0 {
        "harmonic".to_string()
    } else {
        format!("harmonic:{kappa}")
    };
    Potential::new(
        Arc::new(HarmonicShape { kappa }),
        0.0,
        kappa,
        Growth {
            c0: kappa,
            beta: 0.0,
            r0: 1.0,
        },
        label,
    )
}

#[derive(Debug)]
struct FlatShape;

impl Shape for FlatShape {
    fn value(&self, _z: f64) -> f64 {
        0.0
    }
    fn deriv1(&self, _z: f64) -> f64 {
        0.0
    }
    fn deriv2(&self, _z: f64) -> f64 {
        0.0
    }
}

/// `V = 0`; gives pure Brownian motion. Not confining.
pub fn make_flat() -> Potential {
    Potential::new(
        Arc::new(FlatShape),
        0.0,
        0.0,
        Growth {
            c0: 0.0,
            beta: 0.0,
            r0: 1.0,
        },
        "flat",
    )
    .expect("static parameters are valid")
}

/// Smooth step: 0 on `(-inf, 1/2]`, 1 on `[1, inf)`, C-infinity in between.
pub fn mollifier(u: f64) -> f64 {
    let x = 2.0 * u - 1.0;
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / x).exp();
        let b = (-1.0 / (1.0 - x)).exp();
        a / (a + b)
    }
}

const LOCALIZE_PANELS: usize = 1024;

#[derive(Debug)]
struct LocalizedShape {
    base: Potential,
    m: f64,
    t: f64,
    alpha: f64,
    panel: f64,
    // Cumulative values of the first derivative and the potential at the
    // panel nodes of [m, t].
    node_d1: Vec<f64>,
    node_v: Vec<f64>,
}

impl LocalizedShape {
    fn blended_d2(&self, a: f64) -> f64 {
        let g = mollifier(a * a / (2.0 * self.m * self.m));
        if g == 0.0 {
            self.base.deriv2(a)
        } else if g == 1.0 {
            a.powf(self.alpha)
        } else {
            (1.0 - g) * self.base.deriv2(a) + g * a.powf(self.alpha)
        }
    }

    /// (H, V) at `a` in [m, t], integrating from the nearest panel node.
    fn transition(&self, a: f64) -> (f64, f64) {
        let k = (((a - self.m) / self.panel).floor() as usize).min(LOCALIZE_PANELS - 1);
        let node = self.m + k as f64 * self.panel;
        let h = self.node_d1[k] + gauss_legendre5(|s| self.blended_d2(s), node, a);
        let v = self.node_v[k]
            + self.node_d1[k] * (a - node)
            + gauss_legendre5(|s| (a - s) * self.blended_d2(s), node, a);
        (h, v)
    }

    fn tail_d1(&self, a: f64) -> f64 {
        let h_t = self.node_d1[LOCALIZE_PANELS];
        let p = 1.0 + self.alpha;
        h_t + (a.powf(p) - self.t.powf(p)) / p
    }

    fn tail_value(&self, a: f64) -> f64 {
        let h_t = self.node_d1[LOCALIZE_PANELS];
        let v_t = self.node_v[LOCALIZE_PANELS];
        let p = 1.0 + self.alpha;
        let q = 2.0 + self.alpha;
        v_t + h_t * (a - self.t) + (a.powf(q) - self.t.powf(q)) / (p * q)
            - self.t.powf(p) * (a - self.t) / p
    }
}

impl Shape for LocalizedShape {
    fn value(&self, z: f64) -> f64 {
        let a = z.abs();
        if a <= self.m {
            self.base.value(z)
        } else if a <= self.t {
            self.transition(a).1
        } else {
            self.tail_value(a)
        }
    }
    fn deriv1(&self, z: f64) -> f64 {
        let a = z.abs();
        if a <= self.m {
            self.base.deriv1(z)
        } else if a <= self.t {
            sgn(z) * self.transition(a).0
        } else {
            sgn(z) * self.tail_d1(a)
        }
    }
    fn deriv2(&self, z: f64) -> f64 {
        let a = z.abs();
        if a <= self.m {
            self.base.deriv2(z)
        } else {
            self.blended_d2(a)
        }
    }
}

/// Replacement potential `V_M`: equal to `p` on `[-M, M]`, second derivative
/// `|u|^alpha` beyond `sqrt(2) M`, blended by [`mollifier`] in between.
pub fn localize(p: &Potential, m_cut: f64) -> Result<Potential> {
    if !(m_cut > 0.0 && m_cut.is_finite()) {
        return Err(Error::param("m_cut", format!("must be positive, got {m_cut}")));
    }
    let t = std::f64::consts::SQRT_2 * m_cut;
    let panel = (t - m_cut) / LOCALIZE_PANELS as f64;
    let mut shape = LocalizedShape {
        base: p.clone(),
        m: m_cut,
        t,
        alpha: p.alpha(),
        panel,
        node_d1: Vec::with_capacity(LOCALIZE_PANELS + 1),
        node_v: Vec::with_capacity(LOCALIZE_PANELS + 1),
    };
    let mut h = p.deriv1(m_cut);
    let mut v = p.value(m_cut);
    shape.node_d1.push(h);
    shape.node_v.push(v);
    for k in 0..LOCALIZE_PANELS {
        let a = m_cut + k as f64 * panel;
        let b = if k + 1 == LOCALIZE_PANELS { t } else { a + panel };
        let dh = gauss_legendre5(|s| shape.blended_d2(s), a, b);
        let dv = h * (b - a) + gauss_legendre5(|s| (b - s) * shape.blended_d2(s), a, b);
        h += dh;
        v += dv;
        shape.node_d1.push(h);
        shape.node_v.push(v);
    }
    let h_t = shape.node_d1[LOCALIZE_PANELS];
    let p1 = 1.0 + p.alpha();
    let c0 = (1.0 / p1).min(h_t / t.powf(p1));
    let label = format!("localized:{}:{}", p.label(), m_cut);
    Potential::new(
        Arc::new(shape),
        p.alpha(),
        p.c0_local(),
        Growth {
            c0,
            beta: p.alpha(),
            r0: t,
        },
        label,
    )
}

impl FromStr for Potential {
    type Err = Error;

    /// Accepts `power:<alpha>`, `power:<alpha>:<coef>`, `ginzburg-landau`,
    /// `harmonic`, `harmonic:<kappa>`, `flat` and `localized:<base>:<M>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |reason: &str| Error::InvalidInput(format!("potential `{s}`: {reason}"));
        let num = |t: &str| -> Result<f64> {
            t.parse::<f64>()
                .map_err(|_| bad(&format!("`{t}` is not a number")))
        };
        if let Some(rest) = s.strip_prefix("localized:") {
            let (base, m) = rest
                .rsplit_once(':')
                .ok_or_else(|| bad("expected localized:<base>:<M>"))?;
            let base: Potential = base.parse()?;
            return localize(&base, num(m)?);
        }
        let mut parts = s.split(':');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("power"), Some(a), None, None) => make_power_potential(num(a)?),
            (Some("power"), Some(a), Some(c), None) => make_scaled_power(num(c)?, num(a)?),
            (Some("ginzburg-landau"), None, None, None) => Ok(make_ginzburg_landau()),
            (Some("harmonic"), None, None, None) => make_harmonic(1.0),
            (Some("harmonic"), Some(k), None, None) => make_harmonic(num(k)?),
            (Some("flat"), None, None, None) => Ok(make_flat()),
            _ => Err(bad("unknown potential")),
        }
    }
}

/// Time and space scales `(a_eps, b_eps)` removing `eps` from the rescaled
/// dynamics: `a b^alpha = 1` and `eps a = b^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingPair {
    pub a_eps: f64,
    pub b_eps: f64,
    pub eps: f64,
    pub alpha: f64,
}

impl ScalingPair {
    /// Relative residuals of the two defining equations.
    pub fn residuals(&self) -> (f64, f64) {
        let r1 = (self.a_eps * self.b_eps.powf(self.alpha) - 1.0).abs();
        let lhs = self.eps * self.a_eps;
        let rhs = self.b_eps * self.b_eps;
        (r1, (lhs - rhs).abs() / rhs)
    }
}

pub fn scaling(eps: f64, alpha: f64) -> Result<ScalingPair> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::param("eps", format!("must lie in (0, 1], got {eps}")));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::param("alpha", format!("must be non-negative, got {alpha}")));
    }
    Ok(ScalingPair {
        a_eps: eps.powf(-alpha / (2.0 + alpha)),
        b_eps: eps.powf(1.0 / (2.0 + alpha)),
        eps,
        alpha,
    })
}

/// Outcome of [`check_hypotheses`].
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub h1_ok: bool,
    pub h2_ok: bool,
    pub h3_ok: bool,
    pub h2_sup_errors: Vec<(f64, f64)>,
    pub h3_witness: f64,
    pub notes: Vec<String>,
}

/// Numerical protocol for [`check_hypotheses`].
#[derive(Debug, Clone)]
pub struct HypothesisProtocol {
    pub lambda_seq: Vec<f64>,
    pub k_window: f64,
    pub z_max: f64,
    pub tol: f64,
}

impl Default for HypothesisProtocol {
    fn default() -> Self {
        Self {
            lambda_seq: vec![1e-1, 1e-2, 1e-3, 1e-4],
            k_window: 1.0,
            z_max: 20.0,
            tol: 1e-3,
        }
    }
}

const HYP_GRID: usize = 2001;

fn finite(z: f64, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericDomain { z, value: v })
    }
}

fn linspace(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = if n > 1 { (b - a) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |i| if i + 1 == n { b } else { a + i as f64 * step })
}

/// Regularity, local behaviour at the origin, and growth at infinity,
/// checked on sample grids.
pub fn check_hypotheses(
    p: &Potential,
    lambda_seq: &[f64],
    k_window: f64,
    z_max: f64,
    tol: f64,
) -> Result<HypothesisReport> {
    if lambda_seq.is_empty() {
        return Err(Error::param("lambda_seq", "must be nonempty"));
    }
    if lambda_seq.iter().any(|&l| !(l > 0.0)) || lambda_seq.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("lambda_seq", "must be positive and strictly decreasing"));
    }
    for (name, v) in [("k_window", k_window), ("z_max", z_max), ("tol", tol)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::param(name, format!("must be positive, got {v}")));
        }
    }
    let mut notes = vec![format!(
        "thresholds are numerical conventions: H2 final sup-error < {tol:e} with a \
         non-increasing sequence; H1 sampled on [-{z_max}, {z_max}]"
    )];

    // H1: regularity, evenness, convexity, derivative consistency.
    let mut h1_ok = finite(0.0, p.value(0.0))?.abs() <= 1e-14 && p.deriv1(0.0).abs() <= 1e-14;
    let mut worst_fd = 0.0f64;
    for z in linspace(-z_max, z_max, HYP_GRID) {
        let v = finite(z, p.value(z))?;
        let vm = finite(-z, p.value(-z))?;
        let d1 = finite(z, p.deriv1(z))?;
        let d1m = finite(-z, p.deriv1(-z))?;
        let d2 = finite(z, p.deriv2(z))?;
        let d2m = finite(-z, p.deriv2(-z))?;
        if (v - vm).abs() > 1e-12 * (1.0 + v.abs())
            || (d1 + d1m).abs() > 1e-12 * (1.0 + d1.abs())
            || (d2 - d2m).abs() > 1e-12 * (1.0 + d2.abs())
            || d2 < -1e-10
        {
            h1_ok = false;
        }
        let h = 1e-5 * (1.0 + z.abs());
        let fd1 = (p.value(z + h) - p.value(z - h)) / (2.0 * h);
        let fd2 = (p.deriv1(z + h) - p.deriv1(z - h)) / (2.0 * h);
        let scale1 = 1.0 + d1.abs() + v.abs() / (1.0 + z.abs());
        let scale2 = 1.0 + d2.abs() + d1.abs() / (1.0 + z.abs());
        let e = ((fd1 - d1).abs() / scale1).max((fd2 - d2).abs() / scale2);
        worst_fd = worst_fd.max(e);
    }
    if worst_fd > 1e-6 {
        h1_ok = false;
        notes.push(format!("finite-difference mismatch {worst_fd:e}"));
    }

    // H2: sup |V'(lambda z)/lambda^(1+alpha) - C0 |z|^(1+alpha) sgn z| on [-K, K].
    let alpha = p.alpha();
    let c0 = p.c0_local();
    let mut h2_sup_errors = Vec::with_capacity(lambda_seq.len());
    for &lambda in lambda_seq {
        let scale = lambda.powf(1.0 + alpha);
        let mut sup = 0.0f64;
        for z in linspace(-k_window, k_window, HYP_GRID) {
            let d = finite(lambda * z, p.deriv1(lambda * z))?;
            let target = c0 * z.abs().powf(1.0 + alpha) * sgn(z);
            let err = finite(z, (d / scale - target).abs())?;
            sup = sup.max(err);
        }
        h2_sup_errors.push((lambda, sup));
    }
    // Increases at the level of rounding in the target do not count.
    let slack = 64.0 * f64::EPSILON * c0 * k_window.powf(1.0 + alpha);
    let decreasing = h2_sup_errors.windows(2).all(|w| w[1].1 <= w[0].1 + slack);
    let last = h2_sup_errors.last().map(|e| e.1).unwrap_or(f64::INFINITY);
    let h2_ok = alpha > 0.0 && decreasing && last < tol;
    if alpha == 0.0 {
        notes.push("alpha = 0: hyperbolic fixed point, H2 requires alpha > 0".into());
    }

    // H3: V'(z) >= c0 z^(1+beta) on [R0, z_max].
    let g = p.growth();
    let hi = z_max.max(g.r0);
    let n3 = if hi > g.r0 { HYP_GRID } else { 1 };
    let mut witness = f64::INFINITY;
    for z in linspace(g.r0, hi, n3) {
        let d = finite(z, p.deriv1(z))?;
        witness = witness.min(d / z.powf(1.0 + g.beta));
    }
    let h3_ok = g.c0 > 0.0 && g.beta > -1.0 && witness >= g.c0 * (1.0 - 1e-12);

    Ok(HypothesisReport {
        h1_ok,
        h2_ok,
        h3_ok,
        h2_sup_errors,
        h3_witness: witness,
        notes,
    })
}

/// [`check_hypotheses`] with a [`HypothesisProtocol`].
pub fn check_hypotheses_with(p: &Potential, protocol: &HypothesisProtocol) -> Result<HypothesisReport> {
    check_hypotheses(
        p,
        &protocol.lambda_seq,
        protocol.k_window,
        protocol.z_max,
        protocol.tol,
    )
}
