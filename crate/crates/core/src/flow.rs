//! Deterministic companions of the diffusion: the noiseless flow, descent
//! from an infinite initial condition, and the second-moment envelope.

use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{adaptive_simpson, bisect};
use crate::potential::Potential;

type Field = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A locally Lipschitz velocity field `G` for `d psi / dt = G(psi)`.
#[derive(Clone)]
pub struct ScalarField {
    g: Field,
    dg: Option<Field>,
    pub lipschitz_hint: Option<f64>,
    pub label: String,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("label", &self.label)
            .field("lipschitz_hint", &self.lipschitz_hint)
            .finish()
    }
}

impl ScalarField {
    pub fn new(label: impl Into<String>, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            g: Arc::new(g),
            dg: None,
            lipschitz_hint: None,
            label: label.into(),
        }
    }

    /// Attach the analytic derivative used by the implicit solver.
    pub fn with_derivative(mut self, dg: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.dg = Some(Arc::new(dg));
        self
    }

    /// `G = -V'` with `G' = -V''`.
    pub fn gradient_flow(p: &Potential) -> Self {
        let p1 = p.clone();
        let p2 = p.clone();
        ScalarField::new(format!("-grad {}", p.label()), move |z| -p1.deriv1(z))
            .with_derivative(move |z| -p2.deriv2(z))
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        (self.g)(u)
    }

    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        match &self.dg {
            Some(dg) => dg(u),
            None => {
                let h = 1e-7 * (1.0 + u.abs());
                ((self.g)(u + h) - (self.g)(u - h)) / (2.0 * h)
            }
        }
    }

    /// Largest difference quotient of `G` on a sample grid of `[a, b]`.
    pub fn lipschitz_estimate(&self, a: f64, b: f64, n: usize) -> f64 {
        let n = n.max(2);
        let h = (b - a) / (n - 1) as f64;
        (0..n - 1)
            .map(|i| {
                let x = a + i as f64 * h;
                ((self.eval(x + h) - self.eval(x)) / h).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Time-stepping scheme for [`integrate_field`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlowScheme {
    /// Backward Euler. Order one, but the one-step map is strictly increasing
    /// for non-increasing `G`, so ordering of initial data is kept exactly.
    #[default]
    BackwardEuler,
    /// Backward Euler on `h, h/2, h/4` with local Richardson extrapolation;
    /// order three. Not order preserving in stiff regions.
    Extrapolated,
}

/// A sampled trajectory of the deterministic flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPath {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub initial: f64,
}

impl FlowPath {
    pub fn final_state(&self) -> f64 {
        *self.states.last().expect("flow path is never empty")
    }
}

pub const NEWTON_MAX_ITER: usize = 20;
pub const NEWTON_RESIDUAL: f64 = 1e-12;
pub const DT_MIN: f64 = 1e-12;

/// Solve `y - h G(y) = x` by safeguarded Newton iteration.
fn implicit_solve(field: &ScalarField, x: f64, h: f64) -> Option<f64> {
    let r = |y: f64| y - h * field.eval(y) - x;
    let tol = NEWTON_RESIDUAL * x.abs().max(1.0);
    let r0 = r(x);
    if !r0.is_finite() {
        return None;
    }
    if r0.abs() <= tol {
        return Some(x);
    }
    // Bracket the root: r is increasing when G is non-increasing.
    let mut width = (h * field.eval(x)).abs().max(tol);
    let (mut lo, mut hi) = if r0 > 0.0 { (x - width, x) } else { (x, x + width) };
    for _ in 0..200 {
        let (rl, rh) = (r(lo), r(hi));
        if rl <= 0.0 && rh >= 0.0 {
            break;
        }
        width *= 2.0;
        if rl > 0.0 {
            lo = x - width;
        }
        if rh < 0.0 {
            hi = x + width;
        }
    }
    let mut y = if r0 > 0.0 { hi } else { lo };
    for _ in 0..NEWTON_MAX_ITER {
        let ry = r(y);
        if !ry.is_finite() {
            return None;
        }
        if ry.abs() <= tol {
            return Some(y);
        }
        if ry > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let slope = 1.0 - h * field.derivative(y);
        let mut next = y - ry / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        y = next;
    }
    let ry = r(y);
    (ry.abs() <= tol).then_some(y)
}

/// One backward-Euler step of size `h` (solves `y - h G(y) = x`), halving
/// the step on Newton failure down to [`DT_MIN`].
pub fn backward_euler_step(field: &ScalarField, x: f64, h: f64) -> Result<f64> {
    if let Some(y) = implicit_solve(field, x, h) {
        return Ok(y);
    }
    if h * 0.5 < DT_MIN {
        return Err(Error::Stiffness {
            state: x,
            dt_min: DT_MIN,
        });
    }
    let mid = backward_euler_step(field, x, 0.5 * h)?;
    backward_euler_step(field, mid, 0.5 * h)
}

fn scheme_step(field: &ScalarField, x: f64, h: f64, scheme: FlowScheme) -> Result<f64> {
    match scheme {
        FlowScheme::BackwardEuler => backward_euler_step(field, x, h),
        FlowScheme::Extrapolated => {
            let y1 = backward_euler_step(field, x, h)?;
            let mut y2 = x;
            for _ in 0..2 {
                y2 = backward_euler_step(field, y2, 0.5 * h)?;
            }
            let mut y4 = x;
            for _ in 0..4 {
                y4 = backward_euler_step(field, y4, 0.25 * h)?;
            }
            Ok((8.0 * y4 - 6.0 * y2 + y1) / 3.0)
        }
    }
}

/// Integrate `d psi / dt = G(psi)` from a finite `x` on the grid `k dt`,
/// ending exactly at `t_end`.
pub fn integrate_field(
    field: &ScalarField,
    x: f64,
    t_end: f64,
    dt: f64,
    scheme: FlowScheme,
) -> Result<FlowPath> {
    if !x.is_finite() {
        return Err(Error::param(
            "x",
            "infinite initial data: use descend_from_infinity",
        ));
    }
    if !(t_end > 0.0 && dt > 0.0 && dt < t_end) {
        return Err(Error::param(
            "dt",
            format!("need 0 < dt < t_end, got dt = {dt}, t_end = {t_end}"),
        ));
    }
    let n = (t_end / dt).ceil() as usize;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    times.push(0.0);
    states.push(x);
    let mut y = x;
    for k in 1..=n {
        let t_prev = (k - 1) as f64 * dt;
        let t_next = if k == n { t_end } else { k as f64 * dt };
        y = scheme_step(field, y, t_next - t_prev, scheme)?;
        times.push(t_next);
        states.push(y);
    }
    Ok(FlowPath {
        times,
        states,
        initial: x,
    })
}

/// Noiseless gradient flow `d phi / dt = -V'(phi)`, backward Euler.
pub fn integrate_flow(p: &Potential, x: f64, t_end: f64, dt: f64) -> Result<FlowPath> {
    integrate_field(
        &ScalarField::gradient_flow(p),
        x,
        t_end,
        dt,
        FlowScheme::BackwardEuler,
    )
}

const QUAD_TOL: f64 = 1e-12;
const TAIL_MIN_LEVELS: usize = 8;
const TAIL_MAX_LEVELS: usize = 900;
const TAIL_DIVERGENT_RATIO: f64 = 0.98;

/// `F_L(x) = int_L^x du / G(u)` with `x` possibly `+inf`.
///
/// Computed after the substitution `u = L / v`, which maps `[L, inf)` onto
/// `(0, 1]`. At infinity the integral over dyadic blocks `[2^-(k+1), 2^-k]`
/// is summed and its geometric tail extrapolated; a block ratio that does
/// not decay marks a divergent entrance integral.
pub fn entrance_integral(field: &ScalarField, level: f64, x_upper: f64) -> Result<f64> {
    if !(level > 0.0 && level.is_finite()) {
        return Err(Error::param("L", format!("must be positive and finite, got {level}")));
    }
    if x_upper.is_nan() || x_upper < level {
        return Err(Error::param("x_upper", format!("must be >= L = {level}, got {x_upper}")));
    }
    if x_upper == level {
        return Ok(0.0);
    }
    let bad = Cell::new(None::<f64>);
    let integrand = |v: f64| {
        let u = level / v;
        let g = field.eval(u);
        if !(g < 0.0) {
            if bad.get().is_none() {
                bad.set(Some(u));
            }
            return 0.0;
        }
        let r = (u / level) * (u / g);
        if r.is_finite() {
            r
        } else {
            0.0
        }
    };
    let check = |v: f64| -> Result<f64> {
        match bad.get() {
            Some(u) => Err(Error::EntranceCondition(format!(
                "G({u}) = {} is not negative above L = {level}",
                field.eval(u)
            ))),
            None => Ok(v),
        }
    };

    if x_upper.is_finite() {
        let v = adaptive_simpson(integrand, level / x_upper, 1.0, QUAD_TOL)?;
        return check(v);
    }

    let mut total = adaptive_simpson(integrand, 0.5, 1.0, QUAD_TOL)?;
    check(total)?;
    let mut prev_block = total;
    let mut hi = 0.5f64;
    for k in 1..TAIL_MAX_LEVELS {
        let lo = 0.5 * hi;
        let block = adaptive_simpson(integrand, lo, hi, QUAD_TOL * hi)?;
        check(block)?;
        total += block;
        let ratio = if prev_block != 0.0 { block / prev_block } else { 0.0 };
        if k >= TAIL_MIN_LEVELS {
            if ratio >= TAIL_DIVERGENT_RATIO {
                return Err(Error::EntranceCondition(format!(
                    "int^inf du / G(u) diverges (dyadic block ratio {ratio:.4})"
                )));
            }
            let tail = if ratio > 0.0 { block * ratio / (1.0 - ratio) } else { 0.0 };
            if tail.abs() < QUAD_TOL {
                return Ok(total + tail);
            }
        }
        prev_block = block;
        hi = lo;
    }
    Err(Error::EntranceCondition(
        "tail of the entrance integral did not converge".into(),
    ))
}

/// `psi_t(+inf)` for `d psi / dt = G(psi)`, from `F_L(psi) = t + F_L(inf)`.
pub fn descend_from_infinity(field: &ScalarField, level: f64, t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    let f_inf = entrance_integral(field, level, f64::INFINITY)?;
    let target = t + f_inf;
    if target > 0.0 {
        return Err(Error::Range(format!(
            "at t = {t} the descent has passed below L = {level} (F_L(inf) = {f_inf}); \
             continue with integrate_field from psi at an earlier time"
        )));
    }
    if target == 0.0 {
        return Ok(level);
    }
    let f_at = |u: f64| entrance_integral(field, level, u);
    let mut hi = 2.0 * level;
    let mut doublings = 0;
    while f_at(hi)? > target {
        hi *= 2.0;
        doublings += 1;
        if doublings > 1000 || !hi.is_finite() {
            return Err(Error::Range(format!("could not bracket psi_{t}(inf)")));
        }
    }
    let failure = Cell::new(None::<Error>);
    let root = bisect(
        |u| match f_at(u) {
            Ok(v) => v - target,
            Err(e) => {
                failure.set(Some(e));
                0.0
            }
        },
        level,
        hi,
        200,
    );
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(root),
    }
}

/// Time needed to come down from `+inf` to `level`; infinite if the level is
/// at or below a zero of `G`.
fn descent_time(field: &ScalarField, level: f64) -> Result<f64> {
    if !(field.eval(level) < 0.0) {
        return Ok(f64::INFINITY);
    }
    Ok(-entrance_integral(field, level, f64::INFINITY)?)
}

/// [`descend_from_infinity`] with the level `L` chosen automatically below
/// the state reached at time `t`.
pub fn descend(field: &ScalarField, t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    let mut level = 1.0f64;
    // Move up until G < 0 (entrance side), then down until reachable.
    let mut ups = 0;
    while !(field.eval(level) < 0.0) {
        level *= 2.0;
        ups += 1;
        if ups > 1000 {
            return Err(Error::EntranceCondition(format!(
                "{} is never negative on the positive axis",
                field.label
            )));
        }
    }
    let mut time = descent_time(field, level)?;
    if time >= t {
        while descent_time(field, 2.0 * level)? >= t {
            level *= 2.0;
        }
        return descend_from_infinity(field, level, t);
    }
    // Shrink toward the largest zero of G (or toward 0). Close to a positive
    // zero the entrance integral becomes nearly singular, so the remaining
    // time is covered by integrating the field forward from `psi_s = L`.
    let mut floor = 0.0f64;
    for _ in 0..2000 {
        let candidate = 0.5 * (level + floor);
        if floor > 0.0 && level - floor < NEAR_ZERO_GAP * floor {
            break;
        }
        if candidate == level || candidate == floor {
            break;
        }
        if !(field.eval(candidate) < 0.0) {
            floor = candidate;
            continue;
        }
        time = descent_time(field, candidate)?;
        level = candidate;
        if time >= t {
            return descend_from_infinity(field, level, t);
        }
    }
    let rest = t - time;
    let dt = (rest / 16.0).min(1e-3);
    let path = integrate_field(field, level, rest, dt, FlowScheme::Extrapolated)?;
    Ok(path.final_state())
}

const NEAR_ZERO_GAP: f64 = 1e-2;

/// The comparison field `-2 c_* |y|^(1 + alpha/2) + 1` whose descent from
/// infinity bounds second moments.
pub fn l2_envelope_field(alpha: f64, c_star: f64) -> ScalarField {
    let p = 1.0 + 0.5 * alpha;
    ScalarField::new(format!("l2-envelope({alpha},{c_star})"), move |y: f64| {
        -2.0 * c_star * y.abs().powf(p) + 1.0
    })
    .with_derivative(move |y: f64| -2.0 * c_star * p * y.abs().powf(p - 1.0) * y.signum())
}

/// Upper bound `psi~_t(inf)` for `sup_x E|Y_t(x)|^2`.
pub fn l2_envelope(alpha: f64, c_star: f64, t: f64) -> Result<f64> {
    for (name, v) in [("alpha", alpha), ("c_star", c_star), ("t", t)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::param(name, format!("must be positive, got {v}")));
        }
    }
    descend(&l2_envelope_field(alpha, c_star), t)
}

/// Positive zero of the envelope field, `(2 c_*)^(-2 / (2 + alpha))`.
pub fn l2_envelope_limit(alpha: f64, c_star: f64) -> f64 {
    (2.0 * c_star).powf(-2.0 / (2.0 + alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{make_power_potential, make_scaled_power};

    fn neg_pow(p: f64) -> ScalarField {
        ScalarField::new(format!("-u^{p}"), move |u: f64| -u.abs().powf(p) * u.signum())
            .with_derivative(move |u: f64| -p * u.abs().powf(p - 1.0))
    }

    #[test]
    fn flow_from_origin_stays() {
        let p = make_power_potential(2.0).unwrap();
        let path = integrate_flow(&p, 0.0, 1.0, 0.01).unwrap();
        assert!(path.states.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn flow_matches_closed_form() {
        // V'(z) = z^3: phi_t = x (1 + 2 t x^2)^(-1/2)
        let p = make_scaled_power(0.25, 2.0).unwrap();
        let be = integrate_flow(&p, 1.0, 1.0, 1e-6).unwrap();
        let exact = 1.0 / 3f64.sqrt();
        assert!((be.final_state() - exact).abs() < 1e-6, "{}", be.final_state());
        let field = ScalarField::gradient_flow(&p);
        let ex = integrate_field(&field, 1.0, 1.0, 1e-3, FlowScheme::Extrapolated).unwrap();
        assert!((ex.final_state() - exact).abs() < 1e-8);
    }

    #[test]
    fn flow_is_odd_and_abs_non_increasing() {
        let p = make_power_potential(2.0).unwrap();
        let a = integrate_flow(&p, 3.0, 2.0, 1e-3).unwrap();
        let b = integrate_flow(&p, -3.0, 2.0, 1e-3).unwrap();
        for (x, y) in a.states.iter().zip(b.states.iter()) {
            assert_eq!(*x, -*y);
        }
        assert!(a.states.windows(2).all(|w| w[1].abs() <= w[0].abs()));
    }

    #[test]
    fn flow_rejects_bad_steps() {
        let p = make_power_potential(2.0).unwrap();
        assert!(integrate_flow(&p, 1.0, 1.0, 2.0).is_err());
        assert!(integrate_flow(&p, f64::INFINITY, 1.0, 0.1).is_err());
    }

    #[test]
    fn entrance_integral_examples() {
        let g = neg_pow(2.0);
        let v = entrance_integral(&g, 1.0, f64::INFINITY).unwrap();
        assert!((v + 1.0).abs() < 1e-10, "{v}");
        assert_eq!(entrance_integral(&g, 1.0, 1.0).unwrap(), 0.0);
        let finite = entrance_integral(&g, 1.0, 4.0).unwrap();
        assert!((finite - (0.25 - 1.0)).abs() < 1e-11);
        let err = entrance_integral(&neg_pow(1.0), 1.0, f64::INFINITY).unwrap_err();
        assert!(matches!(err, Error::EntranceCondition(_)));
    }

    #[test]
    fn entrance_classification_by_exponent() {
        for p in [0.5, 1.0] {
            assert!(
                matches!(
                    entrance_integral(&neg_pow(p), 1.0, f64::INFINITY),
                    Err(Error::EntranceCondition(_))
                ),
                "p = {p}"
            );
        }
        for p in [1.5f64, 2.0] {
            let v = entrance_integral(&neg_pow(p), 1.0, f64::INFINITY).unwrap();
            // int_1^inf u^-p du = 1 / (p - 1)
            assert!((v + 1.0 / (p - 1.0)).abs() < 1e-8, "p = {p}: {v}");
        }
    }

    #[test]
    fn entrance_rejects_positive_field() {
        let g = ScalarField::new("1-u", |u| 1.0 - u);
        assert!(matches!(
            entrance_integral(&g, 0.5, f64::INFINITY),
            Err(Error::EntranceCondition(_))
        ));
    }

    #[test]
    fn descend_closed_forms() {
        for t in [0.1, 0.5, 1.0, 2.0] {
            let psi2 = descend_from_infinity(&neg_pow(2.0), 0.25, t).unwrap();
            assert!((psi2 * t - 1.0).abs() < 1e-9, "t={t}: {psi2}");
            let psi3 = descend_from_infinity(&neg_pow(3.0), 0.25, t).unwrap();
            assert!((psi3 - (2.0 * t).powf(-0.5)).abs() < 1e-9 * psi3);
        }
    }

    #[test]
    fn descend_out_of_range() {
        assert!(matches!(
            descend_from_infinity(&neg_pow(2.0), 1.0, 2.0),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn descend_matches_large_finite_start() {
        let g = neg_pow(2.0);
        let psi = descend(&g, 0.5).unwrap();
        assert!((psi - 2.0).abs() < 1e-9);
        // From x = 1e6 the exact value is 1 / (0.5 + 1e-6); backward Euler
        // is first order, so compare at its accuracy.
        let path = integrate_field(&g, 1e6, 0.5, 1e-5, FlowScheme::BackwardEuler).unwrap();
        assert!((path.final_state() - psi).abs() < 1e-3 * psi, "{}", path.final_state());
    }

    #[test]
    fn descend_then_integrate_is_semiflow() {
        let g = neg_pow(2.0);
        let (t1, t2) = (0.5, 1.25);
        let start = descend(&g, t1).unwrap();
        let path = integrate_field(&g, start, t2 - t1, 1e-3, FlowScheme::Extrapolated).unwrap();
        let direct = descend(&g, t2).unwrap();
        assert!((path.final_state() - direct).abs() < 1e-8);
    }

    #[test]
    fn envelope_is_coth() {
        let v = l2_envelope(2.0, 0.5, 1.0).unwrap();
        assert!((v - 1.0 / 1f64.tanh()).abs() < 1e-8, "{v}");
        let a = l2_envelope(2.0, 0.5, 0.1).unwrap();
        let b = l2_envelope(2.0, 0.5, 0.5).unwrap();
        assert!(a > b && b > v);
        let late = l2_envelope(2.0, 0.5, 40.0).unwrap();
        assert!((late - 1.0).abs() < 1e-8, "{late}");
        assert_eq!(l2_envelope_limit(2.0, 0.5), 1.0);
    }

    #[test]
    fn lipschitz_spot_check() {
        let g = neg_pow(2.0);
        let est = g.lipschitz_estimate(0.0, 2.0, 201);
        assert!((est - 4.0).abs() < 0.05);
    }
}
