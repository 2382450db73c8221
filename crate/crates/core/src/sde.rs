//! Monte Carlo ensembles for the original, rescaled and limiting
//! diffusions, with synchronous coupling and entrance from infinity.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{backward_euler_step, descend, ScalarField};
use crate::numerics::{abs_pow, sgn};
use crate::potential::{scaling, Potential, ScalingPair};
use crate::rng::NoiseStream;

/// Which velocity field a [`DriftField`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// `-V'(z)`, driven by noise of size `sqrt(eps)`.
    Original,
    /// `F_eps(z) = -V'(b z) / b^(1+alpha)` in the rescaled clock.
    RescaledEps,
    /// `F_0(z) = -C0 |z|^(1+alpha) sgn z`.
    Limit,
    /// Any other field supplied by the caller.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftParams {
    pub eps: f64,
    pub alpha: f64,
    pub c0: f64,
}

type Antiderivative = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A scalar drift with optional antiderivative `W` (`f = W'`).
#[derive(Clone)]
pub struct DriftField {
    pub kind: DriftKind,
    pub params: DriftParams,
    field: ScalarField,
    antiderivative: Option<Antiderivative>,
    potential: Option<Potential>,
    power_law: Option<(f64, f64)>,
}

impl fmt::Debug for DriftField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftField")
            .field("kind", &self.kind)
            .field("params", &self.params)
            .field("label", &self.field.label)
            .finish()
    }
}

impl DriftField {
    /// The limit field `-c0 |z|^(1+alpha) sgn z`.
    pub fn limit(alpha: f64, c0: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::param("alpha", format!("must be non-negative, got {alpha}")));
        }
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(Error::param("c0", format!("must be positive, got {c0}")));
        }
        let p = 1.0 + alpha;
        let field = ScalarField::new(format!("limit:{alpha}:{c0}"), move |z| {
            -c0 * abs_pow(z, p) * sgn(z)
        })
        .with_derivative(move |z| -c0 * p * abs_pow(z, alpha));
        Ok(Self {
            kind: DriftKind::Limit,
            params: DriftParams { eps: 0.0, alpha, c0 },
            field,
            antiderivative: Some(Arc::new(move |z| -c0 * abs_pow(z, p + 1.0) / (p + 1.0))),
            potential: None,
            power_law: Some((c0, alpha)),
        })
    }

    /// A caller-supplied drift. Fokker–Planck fluxes fall back to quadrature.
    pub fn custom(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kind: DriftKind::Custom,
            params: DriftParams {
                eps: 1.0,
                alpha: f64::NAN,
                c0: f64::NAN,
            },
            field: ScalarField::new(label, f),
            antiderivative: None,
            potential: None,
            power_law: None,
        }
    }

    /// Exact time-`h` flow of `z' = f(z)` when `f` is a pure power law.
    pub fn flow_map(&self, x: f64, h: f64) -> Option<f64> {
        let (c, alpha) = self.power_law?;
        if x == 0.0 {
            return Some(0.0);
        }
        if alpha == 0.0 {
            return Some(x * (-c * h).exp());
        }
        let inv = if x.is_infinite() { 0.0 } else { x.abs().powf(-alpha) };
        Some(sgn(x) * (inv + alpha * c * h).powf(-1.0 / alpha))
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        self.field.eval(z)
    }

    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        self.field.derivative(z)
    }

    /// `W(z)` with `W' = f` and `W(0) = 0`, when known in closed form.
    pub fn antiderivative(&self, z: f64) -> Option<f64> {
        self.antiderivative.as_ref().map(|w| w(z))
    }

    pub fn has_antiderivative(&self) -> bool {
        self.antiderivative.is_some()
    }

    pub fn label(&self) -> &str {
        &self.field.label
    }

    pub fn potential(&self) -> Option<&Potential> {
        self.potential.as_ref()
    }

    pub fn as_scalar_field(&self) -> &ScalarField {
        &self.field
    }

    /// `sqrt(eps)` for the original clock, `1` otherwise.
    pub fn default_noise_scale(&self) -> f64 {
        match self.kind {
            DriftKind::Original => self.params.eps.sqrt(),
            _ => 1.0,
        }
    }

    /// Checks `f(0) = 0`, oddness and `sgn f(z) = -sgn z` on a grid of
    /// `[-z_max, z_max]`.
    pub fn is_confining(&self, z_max: f64, n: usize) -> bool {
        if self.eval(0.0) != 0.0 {
            return false;
        }
        (1..=n).all(|i| {
            let z = z_max * i as f64 / n as f64;
            let (fp, fm) = (self.eval(z), self.eval(-z));
            fp < 0.0 && fm > 0.0 && (fp + fm).abs() <= 1e-12 * fp.abs().max(1.0)
        })
    }
}

/// Build the drift of the requested kind from a potential. `eps` is required
/// for [`DriftKind::RescaledEps`] and sets the noise of
/// [`DriftKind::Original`] (default 1).
pub fn make_drift(p: &Potential, kind: DriftKind, eps: Option<f64>) -> Result<DriftField> {
    let alpha = p.alpha();
    let c0 = p.c0_local();
    let check_eps = |e: f64| -> Result<f64> {
        if e > 0.0 && e <= 1.0 {
            Ok(e)
        } else {
            Err(Error::param("eps", format!("must lie in (0, 1], got {e}")))
        }
    };
    match kind {
        DriftKind::Original => {
            let eps = check_eps(eps.unwrap_or(1.0))?;
            let (p1, p2, p3) = (p.clone(), p.clone(), p.clone());
            let field = ScalarField::new(format!("-V' {}", p.label()), move |z| -p1.deriv1(z))
                .with_derivative(move |z| -p2.deriv2(z));
            Ok(DriftField {
                kind,
                params: DriftParams { eps, alpha, c0 },
                field,
                antiderivative: Some(Arc::new(move |z| -p3.value(z))),
                potential: Some(p.clone()),
                power_law: None,
            })
        }
        DriftKind::RescaledEps => {
            let eps = check_eps(eps.ok_or_else(|| {
                Error::param("eps", "required for the rescaled drift")
            })?)?;
            let s = scaling(eps, alpha)?;
            let b = s.b_eps;
            let b1 = b.powf(1.0 + alpha);
            let b_alpha = b.powf(alpha);
            let (p1, p2, p3) = (p.clone(), p.clone(), p.clone());
            let field = ScalarField::new(format!("F_eps {} eps={eps}", p.label()), move |z| {
                -p1.deriv1(b * z) / b1
            })
            .with_derivative(move |z| -p2.deriv2(b * z) / b_alpha);
            Ok(DriftField {
                kind,
                params: DriftParams { eps, alpha, c0 },
                field,
                antiderivative: Some(Arc::new(move |z| -p3.value(b * z) / eps)),
                potential: Some(p.clone()),
                power_law: None,
            })
        }
        DriftKind::Limit => {
            let mut d = DriftField::limit(alpha, c0)?;
            d.potential = Some(p.clone());
            Ok(d)
        }
        DriftKind::Custom => Err(Error::param(
            "kind",
            "custom drifts are built with DriftField::custom",
        )),
    }
}

/// Time stepping for [`simulate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeScheme {
    /// `x + dt f / (1 + dt |f|) + sigma sqrt(dt) xi`.
    #[default]
    TamedEuler,
    /// `y - dt f(y) = x + sigma sqrt(dt) xi`, solved by Newton's method.
    DriftImplicit,
    /// `y = Phi_dt(x + sigma sqrt(dt) xi)` with the exact drift flow `Phi`.
    /// Needs a drift with a closed-form flow.
    FlowSplitting,
}

/// Descent time used to bootstrap paths started at `+-inf`.
pub const DEFAULT_T0: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SdeConfig {
    pub drift: DriftField,
    pub noise_scale: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub x0: f64,
    pub scheme: SdeScheme,
    /// Store every `record_every`-th step (the final step is always kept).
    pub record_every: usize,
    /// Extra step indices to store regardless of `record_every`.
    pub record_steps: Vec<usize>,
    /// Negate every noise increment.
    pub mirror_noise: bool,
}

impl SdeConfig {
    pub fn new(drift: DriftField, t_end: f64, dt: f64, n_paths: usize, seed: u64, x0: f64) -> Self {
        let noise_scale = drift.default_noise_scale();
        Self {
            drift,
            noise_scale,
            t_end,
            dt,
            n_paths,
            seed,
            x0,
            scheme: SdeScheme::TamedEuler,
            record_every: 1,
            record_steps: Vec::new(),
            mirror_noise: false,
        }
    }

    pub fn with_noise_scale(mut self, s: f64) -> Self {
        self.noise_scale = s;
        self
    }

    pub fn with_scheme(mut self, scheme: SdeScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    /// Record only at the grid steps nearest to `times` (plus the first and
    /// last step).
    pub fn with_record_times(mut self, times: &[f64]) -> Self {
        self.record_every = usize::MAX;
        self.record_steps = times.iter().map(|t| (t / self.dt).round() as usize).collect();
        self
    }

    pub fn with_mirror_noise(mut self, mirror: bool) -> Self {
        self.mirror_noise = mirror;
        self
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    /// Number of steps of size `dt` to `t_end`.
    pub fn n_steps(&self) -> Result<usize> {
        self.validate()?;
        Ok((self.t_end / self.dt).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::param("t_end", format!("must be positive, got {}", self.t_end)));
        }
        if !(self.dt > 0.0 && self.dt <= self.t_end / 10.0 * (1.0 + 1e-12)) {
            return Err(Error::param(
                "dt",
                format!("need 0 < dt <= t_end / 10, got dt = {}", self.dt),
            ));
        }
        let steps = self.t_end / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps {
            return Err(Error::param("dt", "t_end must be an integer multiple of dt"));
        }
        if self.n_paths == 0 {
            return Err(Error::param("n_paths", "must be at least 1"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::param("noise_scale", "must be finite and non-negative"));
        }
        if self.record_every == 0 {
            return Err(Error::param("record_every", "must be at least 1"));
        }
        if self.x0.is_nan() {
            return Err(Error::param("x0", "NaN initial condition"));
        }
        Ok(())
    }
}

/// Seeded trajectories on a common time grid, stored path-major.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub paths: Vec<f64>,
    pub config: SdeConfig,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.config.n_paths
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let n = self.n_times();
        &self.paths[i * n..(i + 1) * n]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("ensembles record at least one time")
    }

    /// Index of the recorded time equal to `t` (to rounding of the grid).
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-9 * self.config.dt.max(t.abs() * 1e-3);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= tol.max(1e-12))
            .ok_or_else(|| {
                Error::Range(format!(
                    "t = {t} is not a recorded time (grid {}..{}, record_every {})",
                    self.times[0],
                    self.horizon(),
                    self.config.record_every
                ))
            })
    }

    pub fn marginal(&self, t: f64) -> Result<Vec<f64>> {
        let k = self.time_index(t)?;
        Ok(self.column(k))
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        let n = self.n_times();
        (0..self.n_paths()).map(|i| self.paths[i * n + k]).collect()
    }

    /// Sample mean of `Y_t^2` and its standard error.
    pub fn second_moment(&self, t: f64) -> Result<(f64, f64)> {
        let xs: Vec<f64> = self.marginal(t)?.into_iter().map(|x| x * x).collect();
        Ok(mean_and_standard_error(&xs))
    }

    /// Delimiter-separated export: header `t,path_0,...` and one row per time.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "t")?;
        for i in 0..self.n_paths() {
            write!(w, ",path_{i}")?;
        }
        writeln!(w)?;
        let n = self.n_times();
        for (k, t) in self.times.iter().enumerate() {
            write!(w, "{t}")?;
            for i in 0..self.n_paths() {
                write!(w, ",{}", self.paths[i * n + k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Binary export: a 32-byte header (magic `GRDPATH1`, `n_paths: u64`,
    /// `n_times: u64`, `dt: f64`), the time grid, then the path matrix
    /// path-major; all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.n_paths() as u64).to_le_bytes())?;
        w.write_all(&(self.n_times() as u64).to_le_bytes())?;
        w.write_all(&self.config.dt.to_le_bytes())?;
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for x in &self.paths {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
}

pub const BINARY_MAGIC: &[u8; 8] = b"GRDPATH1";

pub fn mean_and_standard_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct Stepper<'a> {
    drift: &'a DriftField,
    scheme: SdeScheme,
    dt: f64,
    noise: f64,
}

impl Stepper<'_> {
    #[inline]
    fn step(&self, x: f64, xi: f64) -> Result<f64> {
        match self.scheme {
            SdeScheme::TamedEuler => {
                let f = self.drift.eval(x);
                Ok(x + self.dt * f / (1.0 + self.dt * f.abs()) + self.noise * xi)
            }
            SdeScheme::DriftImplicit => {
                backward_euler_step(self.drift.as_scalar_field(), x + self.noise * xi, self.dt)
            }
            SdeScheme::FlowSplitting => self
                .drift
                .flow_map(x + self.noise * xi, self.dt)
                .ok_or_else(|| Error::param("scheme", "flow splitting needs a power-law drift")),
        }
    }
}

/// Run all paths from `start` (already signed) beginning at step `k0`.
fn run(config: &SdeConfig, k0: usize, start: f64) -> Result<PathEnsemble> {
    let n_steps = config.n_steps()?;
    if k0 >= n_steps {
        return Err(Error::param("t0", "starting step lies beyond t_end"));
    }
    let mut steps: Vec<usize> = (k0..=n_steps).step_by(config.record_every).collect();
    steps.extend(config.record_steps.iter().copied().filter(|&k| k > k0 && k <= n_steps));
    steps.push(n_steps);
    steps.sort_unstable();
    steps.dedup();
    let times: Vec<f64> = steps.iter().map(|&k| k as f64 * config.dt).collect();
    let n_times = times.len();
    let stepper = Stepper {
        drift: &config.drift,
        scheme: config.scheme,
        dt: config.dt,
        noise: config.noise_scale * config.dt.sqrt(),
    };
    let sign = if config.mirror_noise { -1.0 } else { 1.0 };
    let mut paths = vec![0.0; config.n_paths * n_times];
    let outcomes: Vec<Result<()>> = paths
        .par_chunks_mut(n_times)
        .enumerate()
        .map(|(i, row)| {
            let mut noise = NoiseStream::new(config.seed, i as u64, k0 as u64);
            let mut x = start;
            row[0] = x;
            let mut slot = 1;
            for k in k0..n_steps {
                let xi = sign * noise.next_normal();
                x = stepper.step(x, xi)?;
                if !x.is_finite() {
                    return Err(Error::BlowUp { path: i, step: k + 1 });
                }
                if slot < n_times && steps[slot] == k + 1 {
                    row[slot] = x;
                    slot += 1;
                }
            }
            Ok(())
        })
        .collect();
    outcomes.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(PathEnsemble {
        times,
        paths,
        config: config.clone(),
    })
}

/// Simulate from a finite initial condition.
pub fn simulate(config: &SdeConfig) -> Result<PathEnsemble> {
    config.validate()?;
    if !config.x0.is_finite() {
        return Err(Error::param(
            "x0",
            "infinite initial condition: use simulate_from_infinity",
        ));
    }
    run(config, 0, config.x0)
}

/// Simulate from `x0 = +-inf`: paths start at the grid time nearest `t0` from
/// the deterministic descent state, then evolve as in [`simulate`].
pub fn simulate_from_infinity(config: &SdeConfig, t0: f64) -> Result<PathEnsemble> {
    config.validate()?;
    if config.x0.is_finite() {
        return Err(Error::param("x0", "must be +inf or -inf"));
    }
    if !matches!(config.drift.kind, DriftKind::Limit | DriftKind::RescaledEps) {
        return Err(Error::param(
            "drift",
            "entrance from infinity needs the limit or rescaled drift",
        ));
    }
    if !(t0 > 0.0 && t0 < config.t_end / 10.0) {
        return Err(Error::param("t0", format!("need 0 < t0 < t_end / 10, got {t0}")));
    }
    let k0 = ((t0 / config.dt).round() as usize).max(1);
    let psi = descend(config.drift.as_scalar_field(), k0 as f64 * config.dt)?;
    run(config, k0, psi * config.x0.signum())
}

/// [`simulate`] or [`simulate_from_infinity`] depending on `x0`.
pub fn simulate_any(config: &SdeConfig, t0: f64) -> Result<PathEnsemble> {
    if config.x0.is_finite() {
        simulate(config)
    } else {
        simulate_from_infinity(config, t0)
    }
}

/// Ensembles from each initial condition driven by identical noise
/// increments per (path, step).
pub fn synchronous_couple(config: &SdeConfig, x_list: &[f64]) -> Result<Vec<PathEnsemble>> {
    synchronous_couple_with(config, x_list, DEFAULT_T0)
}

pub fn synchronous_couple_with(config: &SdeConfig, x_list: &[f64], t0: f64) -> Result<Vec<PathEnsemble>> {
    if x_list.len() < 2 {
        return Err(Error::param("x_list", "need at least two initial conditions"));
    }
    x_list
        .iter()
        .map(|&x| simulate_any(&config.clone().with_x0(x), t0))
        .collect()
}

/// Fraction of paths for which `lower` exceeds `upper` at some common
/// recorded time.
pub fn order_violation_fraction(lower: &PathEnsemble, upper: &PathEnsemble) -> Result<f64> {
    if lower.n_paths() != upper.n_paths() {
        return Err(Error::param("ensembles", "path counts differ"));
    }
    let dt = lower.config.dt;
    let pairs: Vec<(usize, usize)> = lower
        .times
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| {
            upper
                .times
                .iter()
                .position(|&s| (s - t).abs() <= 1e-9 * dt)
                .map(|j| (i, j))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::Range("ensembles share no recorded time".into()));
    }
    let bad = (0..lower.n_paths())
        .filter(|&p| {
            let (lp, up) = (lower.path(p), upper.path(p));
            pairs.iter().any(|&(i, j)| lp[i] > up[j])
        })
        .count();
    Ok(bad as f64 / lower.n_paths() as f64)
}

/// Index of the first recorded state with `|x| > half_width`.
pub fn first_exit(path: &[f64], half_width: f64) -> Option<usize> {
    path.iter().position(|x| x.abs() > half_width)
}

/// Fraction of paths leaving `[-half_width, half_width]` by the end of the
/// ensemble.
pub fn exit_fraction(ens: &PathEnsemble, half_width: f64) -> f64 {
    let exits = (0..ens.n_paths())
        .filter(|&i| first_exit(ens.path(i), half_width).is_some())
        .count();
    exits as f64 / ens.n_paths() as f64
}

/// Per-path first exit times from `[-half_width, half_width]` checked at
/// every step, with the final states. Paths use the same noise as
/// [`simulate`] and keep running after they exit.
#[derive(Debug, Clone)]
pub struct ExitRecord {
    pub exit_times: Vec<Option<f64>>,
    pub finals: Vec<f64>,
}

impl ExitRecord {
    pub fn fraction(&self) -> f64 {
        self.exit_times.iter().filter(|t| t.is_some()).count() as f64 / self.exit_times.len() as f64
    }
}

pub fn monitor_exits(config: &SdeConfig, half_width: f64) -> Result<ExitRecord> {
    config.validate()?;
    if !config.x0.is_finite() {
        return Err(Error::param("x0", "exit monitoring needs a finite start"));
    }
    if !(half_width > 0.0) {
        return Err(Error::param("half_width", "must be positive"));
    }
    let n_steps = config.n_steps()?;
    let stepper = Stepper {
        drift: &config.drift,
        scheme: config.scheme,
        dt: config.dt,
        noise: config.noise_scale * config.dt.sqrt(),
    };
    let sign = if config.mirror_noise { -1.0 } else { 1.0 };
    let rows: Vec<Result<(Option<f64>, f64)>> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut noise = NoiseStream::new(config.seed, i as u64, 0);
            let mut x = config.x0;
            let mut exit = (x.abs() >= half_width).then_some(0.0);
            for k in 0..n_steps {
                x = stepper.step(x, sign * noise.next_normal())?;
                if !x.is_finite() {
                    return Err(Error::BlowUp { path: i, step: k + 1 });
                }
                if exit.is_none() && x.abs() >= half_width {
                    exit = Some((k + 1) as f64 * config.dt);
                }
            }
            Ok((exit, x))
        })
        .collect();
    let mut record = ExitRecord {
        exit_times: Vec::with_capacity(config.n_paths),
        finals: Vec::with_capacity(config.n_paths),
    };
    for r in rows {
        let (e, x) = r?;
        record.exit_times.push(e);
        record.finals.push(x);
    }
    Ok(record)
}

/// `t -> X_{a t} / b` on the rescaled clock, up to rescaled time `t_end`.
pub fn rescale_ensemble(ens: &PathEnsemble, s: &ScalingPair, t_end: f64) -> Result<PathEnsemble> {
    let (a, b) = (s.a_eps, s.b_eps);
    let needed = a * t_end;
    if needed > ens.horizon() * (1.0 + 1e-12) {
        return Err(Error::Range(format!(
            "rescaled horizon {t_end} needs original time {needed}, ensemble ends at {}",
            ens.horizon()
        )));
    }
    let keep: Vec<usize> = (0..ens.n_times())
        .filter(|&k| ens.times[k] <= needed * (1.0 + 1e-12))
        .collect();
    let times = keep.iter().map(|&k| ens.times[k] / a).collect();
    let mut paths = Vec::with_capacity(keep.len() * ens.n_paths());
    for i in 0..ens.n_paths() {
        let row = ens.path(i);
        paths.extend(keep.iter().map(|&k| row[k] / b));
    }
    let mut config = ens.config.clone();
    if config.drift.kind == DriftKind::Original {
        if let Some(p) = config.drift.potential() {
            config.drift = make_drift(p, DriftKind::RescaledEps, Some(s.eps))?;
        }
    }
    config.noise_scale = ens.config.noise_scale * a.sqrt() / b;
    config.t_end = t_end;
    config.dt = ens.config.dt / a;
    config.x0 = ens.config.x0 / b;
    Ok(PathEnsemble {
        times,
        paths,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::integrate_flow;
    use crate::potential::{make_flat, make_ginzburg_landau, make_harmonic, make_power_potential};

    fn power_limit() -> DriftField {
        make_drift(&make_power_potential(2.0).unwrap(), DriftKind::Limit, None).unwrap()
    }

    #[test]
    fn rescaled_power_drift_is_eps_free() {
        let p = make_power_potential(2.0).unwrap();
        let f0 = power_limit();
        for eps in [1e-1, 1e-3, 1e-6] {
            let fe = make_drift(&p, DriftKind::RescaledEps, Some(eps)).unwrap();
            for z in [-3.0, -0.5, 0.0, 0.7, 2.0] {
                let (a, b) = (fe.eval(z), f0.eval(z));
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "eps={eps} z={z}");
                assert!((b + 4.0 * z * z * z).abs() <= 1e-14 * b.abs());
            }
        }
        assert_eq!(f0.eval(0.0), 0.0);
    }

    #[test]
    fn ginzburg_landau_rescaled_value() {
        let fe = make_drift(&make_ginzburg_landau(), DriftKind::RescaledEps, Some(1e-4)).unwrap();
        let u: f64 = 0.1;
        let series = u.powi(3) / 6.0 + u.powi(5) / 120.0 + u.powi(7) / 5040.0 + u.powi(9) / 362_880.0;
        assert!((fe.eval(1.0) + series / 1e-3).abs() < 1e-12);
        assert!((fe.eval(1.0) + 0.16675).abs() < 1e-5);
    }

    #[test]
    fn drift_kinds_are_confining() {
        let gl = make_ginzburg_landau();
        for d in [
            power_limit(),
            make_drift(&gl, DriftKind::Original, Some(0.1)).unwrap(),
            make_drift(&gl, DriftKind::RescaledEps, Some(1e-2)).unwrap(),
            make_drift(&gl, DriftKind::Limit, None).unwrap(),
        ] {
            assert!(d.is_confining(10.0, 500), "{d:?}");
        }
    }

    #[test]
    fn antiderivatives_match_fields() {
        let gl = make_ginzburg_landau();
        for d in [
            power_limit(),
            make_drift(&gl, DriftKind::RescaledEps, Some(1e-2)).unwrap(),
        ] {
            for z in [0.3, 1.1, 2.5] {
                let h = 1e-5;
                let num = (d.antiderivative(z + h).unwrap() - d.antiderivative(z - h).unwrap()) / (2.0 * h);
                assert!((num - d.eval(z)).abs() < 1e-6 * d.eval(z).abs().max(1.0));
            }
        }
    }

    #[test]
    fn config_validation() {
        let d = power_limit();
        assert!(SdeConfig::new(d.clone(), 1.0, 0.2, 10, 1, 0.0).validate().is_err());
        assert!(SdeConfig::new(d.clone(), 1.0, 0.01, 0, 1, 0.0).validate().is_err());
        assert!(SdeConfig::new(d.clone(), 1.0, 0.003, 1, 1, 0.0).validate().is_err());
        assert!(simulate(&SdeConfig::new(d, 1.0, 0.01, 1, 1, f64::INFINITY)).is_err());
    }

    #[test]
    fn zero_noise_matches_flow() {
        let p = make_power_potential(2.0).unwrap();
        let d = make_drift(&p, DriftKind::Original, Some(1.0)).unwrap();
        let dt = 1e-3;
        let cfg = SdeConfig::new(d, 1.0, dt, 1, 0, 1.0).with_noise_scale(0.0);
        let ens = simulate(&cfg).unwrap();
        let flow = integrate_flow(&p, 1.0, 1.0, dt).unwrap();
        let sup = ens
            .path(0)
            .iter()
            .zip(flow.states.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(sup < 5.0 * dt, "{sup}");
    }

    #[test]
    fn reproducible_and_mirror_symmetric() {
        let cfg = SdeConfig::new(power_limit(), 0.5, 1e-3, 64, 9, f64::INFINITY).with_record_every(50);
        let a = simulate_from_infinity(&cfg, DEFAULT_T0).unwrap();
        let b = simulate_from_infinity(&cfg, DEFAULT_T0).unwrap();
        assert_eq!(a.paths, b.paths);
        let m = simulate_from_infinity(
            &cfg.clone().with_x0(f64::NEG_INFINITY).with_mirror_noise(true),
            DEFAULT_T0,
        )
        .unwrap();
        assert!(a.paths.iter().zip(m.paths.iter()).all(|(x, y)| *x == -*y));
        assert!(a.paths.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn identical_starts_give_identical_ensembles() {
        let cfg = SdeConfig::new(power_limit(), 1.0, 1e-3, 32, 4, 0.0).with_record_every(100);
        let e = synchronous_couple(&cfg, &[1.0, 1.0]).unwrap();
        assert_eq!(e[0].paths, e[1].paths);
        assert!(synchronous_couple(&cfg, &[1.0]).is_err());
    }

    #[test]
    fn brownian_and_ou_moments() {
        let n = 20_000;
        let flat = make_drift(&make_flat(), DriftKind::Original, Some(1.0)).unwrap();
        let bm = simulate(&SdeConfig::new(flat, 1.0, 0.01, n, 3, 0.0).with_record_every(100)).unwrap();
        let xs = bm.marginal(1.0).unwrap();
        let (m, se) = mean_and_standard_error(&xs);
        assert!(m.abs() < 4.0 * se);
        let v = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((v - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());

        let ou = make_drift(&make_harmonic(1.0).unwrap(), DriftKind::Original, Some(1.0)).unwrap();
        let e = simulate(&SdeConfig::new(ou, 1.0, 1e-3, n, 5, 2.0).with_record_every(1000)).unwrap();
        let xs = e.marginal(1.0).unwrap();
        let (m, se) = mean_and_standard_error(&xs);
        // tamed Euler with dt = 1e-3 biases the mean by O(dt)
        assert!((m - 2.0 * (-1f64).exp()).abs() < 4.0 * se + 2e-3, "{m}");
    }

    #[test]
    fn rescale_identity_at_unit_eps() {
        let p = make_power_potential(2.0).unwrap();
        let d = make_drift(&p, DriftKind::Original, Some(1.0)).unwrap();
        let e = simulate(&SdeConfig::new(d, 1.0, 0.01, 8, 2, 0.5)).unwrap();
        let r = rescale_ensemble(&e, &scaling(1.0, 2.0).unwrap(), 1.0).unwrap();
        assert_eq!(r.paths, e.paths);
        assert_eq!(r.times, e.times);
        assert!(rescale_ensemble(&e, &scaling(1e-2, 2.0).unwrap(), 1.0).is_err());
    }

    #[test]
    fn binary_export_layout() {
        let e = simulate(&SdeConfig::new(power_limit(), 0.1, 0.01, 3, 2, 0.5)).unwrap();
        let mut buf = Vec::new();
        e.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..8], BINARY_MAGIC);
        assert_eq!(buf.len(), 32 + 8 * (e.n_times() + e.paths.len()));
        let mut csv = Vec::new();
        e.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,path_0,path_1,path_2\n"));
        assert_eq!(text.lines().count(), e.n_times() + 1);
    }
}
