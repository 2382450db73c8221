//! Densities on uniform grids: Gibbs invariant laws by quadrature, time
//! marginals by a conservative Fokker–Planck solver, and total-variation
//! distances between densities or samples.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{abs_pow, adaptive_simpson, gauss_legendre5, normal_cdf, quantile_sorted, sgn, solve_tridiagonal, trapezoid};
use crate::potential::{scaling, Potential};
use crate::rng::{NoiseStream, AUX_STREAM_BASE};
use crate::sde::DriftField;

/// Uniform grid `z_min = z_0 < ... < z_{n-1} = z_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(z_min: f64, z_max: f64, n: usize) -> Result<Self> {
        if !(z_min < z_max && z_min.is_finite() && z_max.is_finite()) {
            return Err(Error::param("grid", format!("need z_min < z_max, got [{z_min}, {z_max}]")));
        }
        if n < 3 {
            return Err(Error::param("grid", "need at least 3 nodes"));
        }
        Ok(Self { z_min, z_max, n })
    }

    /// `[-z, z]` with `n` nodes; odd `n` keeps `0` on the grid.
    pub fn symmetric(z: f64, n: usize) -> Result<Self> {
        Self::new(-z, z, n)
    }

    #[inline]
    pub fn dz(&self) -> f64 {
        (self.z_max - self.z_min) / (self.n - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        // Weighted form keeps symmetric grids exactly symmetric.
        let m = (self.n - 1) as f64;
        let k = i as f64;
        (self.z_min * (m - k) + self.z_max * k) / m
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weights.
    pub fn volume(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5 * self.dz()
        } else {
            self.dz()
        }
    }
}

/// Bound on the mass of the analytic density outside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationCertificate {
    pub tail_bound: f64,
    pub limit: f64,
}

/// Tail-mass limit for tabulated invariant densities.
pub const TAIL_LIMIT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub mass: f64,
    /// Normalizing constant of the analytic density, when one exists.
    pub normalizer: Option<f64>,
    pub certificate: Option<TruncationCertificate>,
    pub label: String,
}

impl DensityGrid {
    /// Tabulated values rescaled to unit trapezoid mass. Negative entries
    /// above `-1e-12` (relative to the peak) are clipped.
    pub fn from_values(grid: GridSpec, mut values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if values.len() != grid.n {
            return Err(Error::IncompatibleGrid(format!(
                "{} values for a {}-node grid",
                values.len(),
                grid.n
            )));
        }
        let peak = values.iter().cloned().fold(0.0, f64::max);
        for (i, v) in values.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::NumericDomain { z: grid.node(i), value: *v });
            }
            if *v < 0.0 {
                if *v < -1e-12 * peak.max(f64::MIN_POSITIVE) {
                    return Err(Error::InvalidInput(format!(
                        "negative density {v} at z = {}",
                        grid.node(i)
                    )));
                }
                *v = 0.0;
            }
        }
        let mass = trapezoid(&values, grid.dz());
        if !(mass > 0.0) {
            return Err(Error::InvalidInput("density has zero mass on the grid".into()));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        let mass = trapezoid(&values, grid.dz());
        Ok(Self {
            grid,
            values,
            mass,
            normalizer: None,
            certificate: None,
            label: label.into(),
        })
    }

    /// Gaussian `N(mean, sd^2)` tabulated on `grid`.
    pub fn gaussian(grid: GridSpec, mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) {
            return Err(Error::param("sd", "must be positive"));
        }
        let values = grid
            .nodes()
            .iter()
            .map(|z| (-0.5 * ((z - mean) / sd).powi(2)).exp())
            .collect();
        Self::from_values(grid, values, format!("gaussian({mean},{sd})"))
    }

    /// Narrow Gaussian of standard deviation `2 dz` standing in for `delta_x`.
    pub fn point_mass(grid: GridSpec, x: f64) -> Result<Self> {
        if !(x >= grid.z_min && x <= grid.z_max) {
            return Err(Error::param("x", format!("{x} lies outside the grid")));
        }
        let mut d = Self::gaussian(grid, x, 2.0 * grid.dz())?;
        d.label = format!("delta({x})");
        Ok(d)
    }

    /// Indicator of `[a, b]`, normalized.
    pub fn uniform(grid: GridSpec, a: f64, b: f64) -> Result<Self> {
        let values = grid
            .nodes()
            .iter()
            .map(|&z| if z >= a && z <= b { 1.0 } else { 0.0 })
            .collect();
        Self::from_values(grid, values, format!("uniform({a},{b})"))
    }

    pub fn dz(&self) -> f64 {
        self.grid.dz()
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.grid.nodes()
    }

    pub fn moment(&self, k: i32) -> f64 {
        let v: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, r)| r * self.grid.node(i).powi(k))
            .collect();
        trapezoid(&v, self.dz())
    }

    pub fn mean(&self) -> f64 {
        self.moment(1) / self.mass
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.moment(2) / self.mass - m * m
    }

    /// Piecewise-linear interpolation; zero outside the grid.
    pub fn value_at(&self, z: f64) -> f64 {
        if z < self.grid.z_min || z > self.grid.z_max {
            return 0.0;
        }
        let pos = (z - self.grid.z_min) / self.dz();
        let i = (pos.floor() as usize).min(self.grid.n - 2);
        let frac = pos - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    /// Cumulative trapezoid mass at the nodes, ending at `mass`.
    pub fn cdf(&self) -> Vec<f64> {
        let h = self.dz();
        let mut c = Vec::with_capacity(self.grid.n);
        let mut acc = 0.0;
        c.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            c.push(acc);
        }
        c
    }

    /// Inverse of the piecewise-linear CDF.
    pub fn quantile(&self, q: f64) -> f64 {
        let c = self.cdf();
        self.quantile_with(&c, q)
    }

    fn quantile_with(&self, cdf: &[f64], q: f64) -> f64 {
        let target = q.clamp(0.0, 1.0) * cdf[cdf.len() - 1];
        let j = cdf.partition_point(|&c| c < target).clamp(1, cdf.len() - 1);
        let (c0, c1) = (cdf[j - 1], cdf[j]);
        let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        self.grid.node(j - 1) + frac * self.dz()
    }

    /// `n` inverse-CDF draws keyed by `seed` on an auxiliary stream.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let c = self.cdf();
        let mut s = NoiseStream::new(seed, AUX_STREAM_BASE, 0);
        (0..n).map(|_| self.quantile_with(&c, s.next_uniform())).collect()
    }

    pub fn same_grid(&self, other: &DensityGrid) -> bool {
        self.grid == other.grid
    }

    /// Two-column export with a comment header carrying grid metadata.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "# density {} z_min={} z_max={} n={} mass={}",
            self.label, self.grid.z_min, self.grid.z_max, self.grid.n, self.mass
        )?;
        if let Some(c) = self.normalizer {
            writeln!(w, "# normalizer={c}")?;
        }
        if let Some(cert) = self.certificate {
            writeln!(w, "# tail_bound={} tail_limit={}", cert.tail_bound, cert.limit)?;
        }
        writeln!(w, "z,rho")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.grid.node(i), v)?;
        }
        Ok(())
    }
}

/// Tangent-line bound for `int_Z^inf e^{-W}` when `W` is convex with
/// `W'(Z) > 0`.
fn tail_bound(w_at: f64, dw_at: f64) -> f64 {
    if dw_at > 0.0 {
        (-w_at).exp() / dw_at
    } else {
        f64::INFINITY
    }
}

/// Tabulate `exp(-W(z))` normalized, where `W` is convex and even-like;
/// `dw` is `W'`.
pub fn gibbs_density<W, D>(grid: GridSpec, w: W, dw: D, label: impl Into<String>) -> Result<DensityGrid>
where
    W: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let label = label.into();
    let values: Vec<f64> = grid.nodes().iter().map(|&z| (-w(z)).exp()).collect();
    let rough = trapezoid(&values, grid.dz());
    if !(rough > 0.0 && rough.is_finite()) {
        return Err(Error::InvalidInput(format!("{label}: density not normalizable on the grid")));
    }
    let c = adaptive_simpson(|z| (-w(z)).exp(), grid.z_min, grid.z_max, 1e-12 * rough)?;
    let tails = |lo: f64, hi: f64| tail_bound(w(hi), dw(hi)) + tail_bound(w(lo), -dw(lo));
    let tail = tails(grid.z_min, grid.z_max) / c;
    if !(tail < TAIL_LIMIT) {
        let mut z = grid.z_max.abs().max(grid.z_min.abs()).max(1.0);
        let mut tries = 0;
        while !(tails(-z, z) / c < TAIL_LIMIT) && tries < 60 {
            z *= 1.25;
            tries += 1;
        }
        let suggested = if tries < 60 { z } else { f64::INFINITY };
        return Err(Error::DomainTooSmall {
            tail,
            limit: TAIL_LIMIT,
            suggested,
        });
    }
    let mut d = DensityGrid::from_values(grid, values, label)?;
    d.normalizer = Some(c);
    d.certificate = Some(TruncationCertificate {
        tail_bound: tail,
        limit: TAIL_LIMIT,
    });
    Ok(d)
}

fn check_eps(eps: f64) -> Result<f64> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(eps)
    } else {
        Err(Error::param("eps", format!("must lie in (0, 1], got {eps}")))
    }
}

/// `rho^eps ∝ exp(-2 V / eps)`.
pub fn invariant_density(p: &Potential, eps: f64, grid: GridSpec) -> Result<DensityGrid> {
    let eps = check_eps(eps)?;
    gibbs_density(
        grid,
        |z| 2.0 * p.value(z) / eps,
        |z| 2.0 * p.deriv1(z) / eps,
        format!("invariant {} eps={eps}", p.label()),
    )
}

/// `nu ∝ exp(-2 V_0)` with `V_0 = c0 |z|^(2+alpha) / (2+alpha)`.
pub fn limit_invariant_density(alpha: f64, c0: f64, grid: GridSpec) -> Result<DensityGrid> {
    if !(alpha >= 0.0 && c0 > 0.0) {
        return Err(Error::param("alpha/c0", "need alpha >= 0 and c0 > 0"));
    }
    let q = 2.0 + alpha;
    gibbs_density(
        grid,
        |z| 2.0 * c0 * abs_pow(z, q) / q,
        |z| 2.0 * c0 * abs_pow(z, q - 1.0) * sgn(z),
        format!("limit invariant alpha={alpha} c0={c0}"),
    )
}

/// Law of `X^eps_inf / b_eps`: density `∝ exp(-2 V(b z) / eps)`.
pub fn rescaled_invariant_density(p: &Potential, eps: f64, grid: GridSpec) -> Result<DensityGrid> {
    let eps = check_eps(eps)?;
    let b = scaling(eps, p.alpha())?.b_eps;
    gibbs_density(
        grid,
        |z| 2.0 * p.value(b * z) / eps,
        |z| 2.0 * b * p.deriv1(b * z) / eps,
        format!("rescaled invariant {} eps={eps}", p.label()),
    )
}

/// Invariant law `∝ exp(2 W / sigma^2)` of a drift with antiderivative `W`.
pub fn drift_invariant_density(drift: &DriftField, noise_scale: f64, grid: GridSpec) -> Result<DensityGrid> {
    if !drift.has_antiderivative() {
        return Err(Error::param("drift", "needs a closed-form antiderivative"));
    }
    let s2 = noise_scale * noise_scale;
    gibbs_density(
        grid,
        |z| -2.0 * drift.antiderivative(z).unwrap_or(f64::NAN) / s2,
        |z| -2.0 * drift.eval(z) / s2,
        format!("invariant {}", drift.label()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    NoFlux,
}

#[derive(Debug, Clone)]
pub struct FpConfig {
    pub drift: DriftField,
    pub grid: GridSpec,
    /// Largest time step; steps start small and grow geometrically.
    pub dt: f64,
    pub t_end: f64,
    pub boundary: Boundary,
    pub noise_scale: f64,
}

impl FpConfig {
    pub fn new(drift: DriftField, grid: GridSpec, dt: f64, t_end: f64) -> Self {
        let noise_scale = drift.default_noise_scale();
        Self {
            drift,
            grid,
            dt,
            t_end,
            boundary: Boundary::NoFlux,
            noise_scale,
        }
    }

    pub fn with_noise_scale(mut self, s: f64) -> Self {
        self.noise_scale = s;
        self
    }

    /// `dt max|f| / dz` on the grid (advisory: the scheme is implicit).
    pub fn cfl_number(&self) -> f64 {
        let m = self
            .grid
            .nodes()
            .iter()
            .map(|&z| self.drift.eval(z).abs())
            .fold(0.0, f64::max);
        self.dt * m / self.grid.dz()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_end > 0.0) {
            return Err(Error::param("dt", "dt and t_end must be positive"));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::param("noise_scale", "the solver needs positive diffusion"));
        }
        Ok(())
    }
}

/// Bernoulli function `w / (e^w - 1)`.
#[inline]
fn bernoulli(w: f64) -> f64 {
    if w.abs() < 1e-10 {
        1.0 - 0.5 * w
    } else {
        w / w.exp_m1()
    }
}

const DT_FIRST: f64 = 1e-6;
const DT_GROWTH: f64 = 1.1;
const RANNACHER_STEPS: usize = 4;
const MASS_DRIFT_LIMIT: f64 = 1e-6;

/// Time-marginal solver for `d rho/dt = D rho'' - (f rho)'` with `D = sigma^2/2`.
///
/// Exponentially fitted (Scharfetter–Gummel) fluxes on cells between nodes,
/// half-volume boundary nodes and zero boundary flux: the discrete mass is
/// the trapezoid integral and is conserved exactly, and the discrete fixed
/// point is `∝ exp(W / D)` at the nodes whenever `W` is known in closed form.
/// Time stepping is Crank–Nicolson after a few backward-Euler start-up
/// steps. The state is kept as the deviation from the discrete fixed point,
/// so small distances keep their relative precision at long times.
#[derive(Debug, Clone)]
pub struct FpEvolution {
    cfg: FpConfig,
    cplus: Vec<f64>,
    cminus: Vec<f64>,
    vol: Vec<f64>,
    stationary: Vec<f64>,
    deviation: Vec<f64>,
    mass0: f64,
    t: f64,
    dt_next: f64,
    steps: usize,
    label: String,
    scratch: Scratch,
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    work: Vec<f64>,
}

/// Start the Fokker–Planck evolution of `rho0` under `cfg`.
pub fn fp_evolve(cfg: &FpConfig, rho0: &DensityGrid) -> Result<FpEvolution> {
    cfg.validate()?;
    if rho0.grid != cfg.grid {
        return Err(Error::IncompatibleGrid("initial density is not on the solver grid".into()));
    }
    let g = cfg.grid;
    let n = g.n;
    let h = g.dz();
    let diff = 0.5 * cfg.noise_scale * cfg.noise_scale;
    let nodes = g.nodes();
    let mut cplus = Vec::with_capacity(n - 1);
    let mut cminus = Vec::with_capacity(n - 1);
    let mut w_cells = Vec::with_capacity(n - 1);
    for j in 0..n - 1 {
        let (a, b) = (nodes[j], nodes[j + 1]);
        let integral = match (cfg.drift.antiderivative(a), cfg.drift.antiderivative(b)) {
            (Some(wa), Some(wb)) => wb - wa,
            _ => gauss_legendre5(|z| cfg.drift.eval(z), a, b),
        };
        let w = integral / diff;
        if !w.is_finite() {
            return Err(Error::NumericDomain { z: a, value: w });
        }
        w_cells.push(w);
        cplus.push(diff / h * bernoulli(-w));
        cminus.push(diff / h * bernoulli(w));
    }
    let vol: Vec<f64> = (0..n).map(|i| g.volume(i)).collect();

    // Discrete fixed point: rho_{j+1} / rho_j = exp(w_j).
    let mut log_pi = vec![0.0; n];
    for j in 0..n - 1 {
        log_pi[j + 1] = log_pi[j] + w_cells[j];
    }
    let top = log_pi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut stationary: Vec<f64> = log_pi.iter().map(|l| (l - top).exp()).collect();
    let mass0: f64 = rho0.values.iter().zip(&vol).map(|(r, v)| r * v).sum();
    let pi_mass: f64 = stationary.iter().zip(&vol).map(|(r, v)| r * v).sum();
    stationary.iter_mut().for_each(|p| *p *= mass0 / pi_mass);
    let deviation = rho0
        .values
        .iter()
        .zip(&stationary)
        .map(|(r, p)| r - p)
        .collect();
    Ok(FpEvolution {
        cfg: cfg.clone(),
        cplus,
        cminus,
        vol,
        stationary,
        deviation,
        mass0,
        t: 0.0,
        dt_next: DT_FIRST.min(cfg.dt),
        steps: 0,
        label: format!("fp {}", cfg.drift.label()),
        scratch: Scratch::default(),
    })
}

impl FpEvolution {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// The discrete fixed point normalized to the initial mass.
    pub fn stationary(&self) -> DensityGrid {
        DensityGrid {
            grid: self.cfg.grid,
            mass: trapezoid(&self.stationary, self.cfg.grid.dz()),
            values: self.stationary.clone(),
            normalizer: None,
            certificate: None,
            label: format!("{} stationary", self.label),
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..n - 1 {
            let flux = self.cplus[j] * x[j] - self.cminus[j] * x[j + 1];
            out[j] -= flux;
            out[j + 1] += flux;
        }
        for (o, v) in out.iter_mut().zip(&self.vol) {
            *o /= v;
        }
    }

    fn step(&mut self, h: f64, theta: f64) -> Result<()> {
        let n = self.deviation.len();
        let mut s = std::mem::take(&mut self.scratch);
        s.lower.resize(n, 0.0);
        s.diag.resize(n, 0.0);
        s.upper.resize(n, 0.0);
        s.rhs.resize(n, 0.0);
        s.work.resize(n, 0.0);
        self.apply(&self.deviation, &mut s.rhs);
        for j in 0..n {
            s.rhs[j] = self.deviation[j] + (1.0 - theta) * h * s.rhs[j];
            let inv_vol = theta * h / self.vol[j];
            let mut d = 1.0;
            if j + 1 < n {
                d += inv_vol * self.cplus[j];
                s.upper[j] = -inv_vol * self.cminus[j];
            } else {
                s.upper[j] = 0.0;
            }
            if j > 0 {
                d += inv_vol * self.cminus[j - 1];
                s.lower[j] = -inv_vol * self.cplus[j - 1];
            } else {
                s.lower[j] = 0.0;
            }
            s.diag[j] = d;
        }
        let solved = solve_tridiagonal(&s.lower, &s.diag, &s.upper, &mut s.rhs, &mut s.work);
        if let Err(e) = solved {
            self.scratch = s;
            return Err(e);
        }
        std::mem::swap(&mut self.deviation, &mut s.rhs);
        self.scratch = s;
        self.t += h;
        self.steps += 1;
        Ok(())
    }

    /// Advance to time `t` (not before the current time, not past `t_end`).
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        if t < self.t - 1e-12 {
            return Err(Error::Range(format!("cannot step back from {} to {t}", self.t)));
        }
        if t > self.cfg.t_end * (1.0 + 1e-12) {
            return Err(Error::Range(format!("t = {t} is past t_end = {}", self.cfg.t_end)));
        }
        while t - self.t > 1e-14 * t.max(1.0) {
            let remaining = t - self.t;
            let h = if self.dt_next >= remaining {
                remaining
            } else if self.dt_next * 1.5 > remaining {
                // avoid a sliver step before the target
                0.5 * remaining
            } else {
                self.dt_next
            };
            let theta = if self.steps < RANNACHER_STEPS { 1.0 } else { 0.5 };
            self.step(h, theta)?;
            self.dt_next = (self.dt_next * DT_GROWTH).min(self.cfg.dt);
        }
        self.t = t;
        let drift = (self.current_mass() - self.mass0).abs();
        if drift > MASS_DRIFT_LIMIT {
            return Err(Error::Conservation {
                drift,
                limit: MASS_DRIFT_LIMIT,
            });
        }
        Ok(())
    }

    fn current_mass(&self) -> f64 {
        self.deviation
            .iter()
            .zip(&self.stationary)
            .zip(&self.vol)
            .map(|((d, p), v)| (d + p) * v)
            .sum()
    }

    /// Mass change since the start.
    pub fn mass_drift(&self) -> f64 {
        self.current_mass() - self.mass0
    }

    /// The current marginal, negatives clipped and renormalized.
    pub fn snapshot(&self) -> Result<DensityGrid> {
        let values: Vec<f64> = self
            .deviation
            .iter()
            .zip(&self.stationary)
            .map(|(d, p)| (d + p).max(0.0))
            .collect();
        let mut out = DensityGrid::from_values(self.cfg.grid, values, format!("{} t={}", self.label, self.t))?;
        out.mass = trapezoid(&out.values, out.dz());
        Ok(out)
    }

    /// Total variation between the current marginal and `target`, computed
    /// from the deviation so that values near zero keep relative accuracy.
    pub fn tv_to(&self, target: &DensityGrid) -> Result<f64> {
        if target.grid != self.cfg.grid {
            return Err(Error::IncompatibleGrid("target density is on another grid".into()));
        }
        let diff: Vec<f64> = self
            .deviation
            .iter()
            .zip(&self.stationary)
            .zip(&target.values)
            .map(|((d, p), q)| (d + (p - q)).abs())
            .collect();
        Ok((0.5 * trapezoid(&diff, self.cfg.grid.dz())).clamp(0.0, 1.0))
    }
}

/// Marginals at each of the increasing `times`.
pub fn fp_marginals(cfg: &FpConfig, rho0: &DensityGrid, times: &[f64]) -> Result<Vec<DensityGrid>> {
    let mut ev = fp_evolve(cfg, rho0)?;
    times
        .iter()
        .map(|&t| {
            ev.advance_to(t)?;
            ev.snapshot()
        })
        .collect()
}

/// `1 - ∫ min(f, g)`, cross-checked against `½ ∫ |f - g|`.
pub fn tv_density(f: &DensityGrid, g: &DensityGrid) -> Result<f64> {
    if !f.same_grid(g) {
        return Err(Error::IncompatibleGrid(format!(
            "[{}, {}; {}] vs [{}, {}; {}]",
            f.grid.z_min, f.grid.z_max, f.grid.n, g.grid.z_min, g.grid.z_max, g.grid.n
        )));
    }
    let h = f.dz();
    let mins: Vec<f64> = f.values.iter().zip(&g.values).map(|(a, b)| a.min(*b)).collect();
    let absd: Vec<f64> = f.values.iter().zip(&g.values).map(|(a, b)| (a - b).abs()).collect();
    let overlap = 1.0 - trapezoid(&mins, h);
    let half_l1 = 0.5 * trapezoid(&absd, h);
    if (overlap - half_l1).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!(
            "TV forms disagree ({overlap} vs {half_l1}): densities are not normalized"
        )));
    }
    Ok(half_l1.clamp(0.0, 1.0))
}

/// Histogram binning for [`tv_samples`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinRule {
    /// Width `2 IQR n^(-1/3)` from the pooled sample, `n` the smaller size.
    #[default]
    FreedmanDiaconis,
    Width(f64),
    Bins(usize),
}

pub const MIN_SAMPLES: usize = 100;
const MAX_BINS: usize = 10_000_000;

/// Half the L1 distance between normalized histograms on a common binning.
pub fn tv_samples(s1: &[f64], s2: &[f64], rule: BinRule) -> Result<f64> {
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::InvalidInput("empty sample".into()));
    }
    if s1.len() < MIN_SAMPLES || s2.len() < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_SAMPLES} samples per set, got {} and {}",
            s1.len(),
            s2.len()
        )));
    }
    if s1.iter().chain(s2).any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample".into()));
    }
    let mut pooled: Vec<f64> = s1.iter().chain(s2).cloned().collect();
    pooled.sort_by(|a, b| a.total_cmp(b));
    let (lo, hi) = (pooled[0], pooled[pooled.len() - 1]);
    let range = hi - lo;
    if range == 0.0 {
        return Ok(0.0);
    }
    let n_min = s1.len().min(s2.len()) as f64;
    let width = match rule {
        BinRule::FreedmanDiaconis => {
            let iqr = quantile_sorted(&pooled, 0.75) - quantile_sorted(&pooled, 0.25);
            let w = 2.0 * iqr * n_min.powf(-1.0 / 3.0);
            if w > 0.0 {
                w
            } else {
                range * n_min.powf(-1.0 / 3.0)
            }
        }
        BinRule::Width(w) if w > 0.0 => w,
        BinRule::Bins(k) if k > 0 => range / k as f64,
        _ => return Err(Error::param("bin_rule", "non-positive width or bin count")),
    };
    let bins = ((range / width).ceil() as usize).clamp(1, MAX_BINS);
    let index = |x: f64| (((x - lo) / width) as usize).min(bins - 1);
    let mut c1 = vec![0u32; bins];
    let mut c2 = vec![0u32; bins];
    s1.iter().for_each(|&x| c1[index(x)] += 1);
    s2.iter().for_each(|&x| c2[index(x)] += 1);
    let (n1, n2) = (s1.len() as f64, s2.len() as f64);
    let tv = 0.5
        * c1
            .iter()
            .zip(&c2)
            .map(|(&a, &b)| (a as f64 / n1 - b as f64 / n2).abs())
            .sum::<f64>();
    Ok(tv.clamp(0.0, 1.0))
}

/// Closed-form total variation between `N(m1, s1^2)` and `N(m2, s2^2)`.
pub fn gaussian_tv(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    if (s1 - s2).abs() <= 1e-14 * s1.max(s2) {
        let d = (m1 - m2).abs() / (2.0 * s1);
        return (normal_cdf(d) - normal_cdf(-d)).clamp(0.0, 1.0);
    }
    // Crossing points of the two densities.
    let a = 0.5 / (s2 * s2) - 0.5 / (s1 * s1);
    let b = m1 / (s1 * s1) - m2 / (s2 * s2);
    let c = 0.5 * m2 * m2 / (s2 * s2) - 0.5 * m1 * m1 / (s1 * s1) + (s2 / s1).ln();
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    let q = -0.5 * (b + b.signum() * disc);
    let (mut r1, mut r2) = (q / a, c / q);
    if r1 > r2 {
        std::mem::swap(&mut r1, &mut r2);
    }
    let mass = |m: f64, s: f64| normal_cdf((r2 - m) / s) - normal_cdf((r1 - m) / s);
    let inner = if s1 < s2 {
        mass(m1, s1) - mass(m2, s2)
    } else {
        mass(m2, s2) - mass(m1, s1)
    };
    inner.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{make_flat, make_ginzburg_landau, make_harmonic, make_power_potential};
    use crate::sde::{make_drift, DriftKind};

    #[test]
    fn grid_geometry() {
        let g = GridSpec::symmetric(2.0, 5).unwrap();
        assert_eq!(g.nodes(), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert!(GridSpec::new(1.0, 0.0, 10).is_err());
    }

    #[test]
    fn harmonic_normalizer_is_sqrt_pi() {
        let p = make_harmonic(1.0).unwrap();
        let d = invariant_density(&p, 1.0, GridSpec::symmetric(10.0, 2001).unwrap()).unwrap();
        assert!((d.normalizer.unwrap() - std::f64::consts::PI.sqrt()).abs() < 1e-10);
        assert!((d.variance() - 0.5).abs() < 1e-9);
        let n = d.values.len();
        assert!((0..n).all(|i| d.values[i] == d.values[n - 1 - i]));
    }

    #[test]
    fn small_domain_is_rejected_with_suggestion() {
        let p = make_harmonic(1.0).unwrap();
        match invariant_density(&p, 1.0, GridSpec::symmetric(2.0, 201).unwrap()) {
            Err(Error::DomainTooSmall { suggested, .. }) => {
                assert!(suggested > 2.0 && suggested < 10.0);
                assert!(invariant_density(&p, 1.0, GridSpec::symmetric(suggested, 801).unwrap()).is_ok());
            }
            other => panic!("{other:?}"),
        }
        assert!(invariant_density(&make_flat(), 1.0, GridSpec::symmetric(5.0, 101).unwrap()).is_err());
    }

    #[test]
    fn tv_density_basics() {
        let g = GridSpec::new(-1.0, 3.0, 4001).unwrap();
        let f = DensityGrid::uniform(g, 0.0, 1.0).unwrap();
        let h = DensityGrid::uniform(g, 0.5, 1.5).unwrap();
        let far = DensityGrid::uniform(g, 2.0, 3.0).unwrap();
        assert_eq!(tv_density(&f, &f).unwrap(), 0.0);
        assert!((tv_density(&f, &h).unwrap() - 0.5).abs() < 2e-3);
        assert!((tv_density(&f, &far).unwrap() - 1.0).abs() < 1e-12);
        let other = DensityGrid::uniform(GridSpec::new(-1.0, 3.0, 401).unwrap(), 0.0, 1.0).unwrap();
        assert!(matches!(tv_density(&f, &other), Err(Error::IncompatibleGrid(_))));
    }

    #[test]
    fn gaussian_tv_reference() {
        let v = gaussian_tv(0.0, 1.0, 1.0, 1.0);
        assert!((v - (2.0 * normal_cdf(0.5) - 1.0)).abs() < 1e-15);
        assert_eq!(gaussian_tv(0.3, 0.7, 0.3, 0.7), 0.0);
        let (a, b) = (gaussian_tv(0.0, 1.0, 0.5, 2.0), gaussian_tv(0.5, 2.0, 0.0, 1.0));
        assert!((a - b).abs() < 1e-14);
        let g = GridSpec::symmetric(20.0, 40_001).unwrap();
        let f1 = DensityGrid::gaussian(g, 0.0, 1.0).unwrap();
        let f2 = DensityGrid::gaussian(g, 0.5, 2.0).unwrap();
        assert!((tv_density(&f1, &f2).unwrap() - a).abs() < 1e-6);
    }

    #[test]
    fn tv_samples_checks() {
        assert!(tv_samples(&[], &[1.0; 200], BinRule::default()).is_err());
        assert!(tv_samples(&[1.0; 10], &[1.0; 200], BinRule::default()).is_err());
        let g = GridSpec::symmetric(8.0, 4001).unwrap();
        let d = DensityGrid::gaussian(g, 0.0, 1.0).unwrap();
        let s = d.sample(1000, 3);
        assert_eq!(tv_samples(&s, &s, BinRule::default()).unwrap(), 0.0);
    }

    #[test]
    fn sampling_matches_density() {
        let g = GridSpec::symmetric(8.0, 4001).unwrap();
        let d = DensityGrid::gaussian(g, 0.5, 1.5).unwrap();
        let s = d.sample(100_000, 11);
        let m = s.iter().sum::<f64>() / s.len() as f64;
        assert!((m - 0.5).abs() < 4.0 * 1.5 / (s.len() as f64).sqrt());
        assert_eq!(s, d.sample(100_000, 11));
    }

    fn ou() -> DriftField {
        make_drift(&make_harmonic(1.0).unwrap(), DriftKind::Original, Some(1.0)).unwrap()
    }

    #[test]
    fn fp_stationary_is_fixed_point() {
        let drift = ou();
        let g = GridSpec::symmetric(8.0, 1601).unwrap();
        let inv = drift_invariant_density(&drift, 1.0, g).unwrap();
        let cfg = FpConfig::new(drift, g, 1e-2, 5.0);
        let mut ev = fp_evolve(&cfg, &inv).unwrap();
        for t in [1.0, 5.0] {
            ev.advance_to(t).unwrap();
            assert!(tv_density(&ev.snapshot().unwrap(), &inv).unwrap() < 1e-12);
        }
        assert!(ev.mass_drift().abs() < 1e-12);
    }

    #[test]
    fn fp_heat_kernel_variance() {
        let drift = make_drift(&make_flat(), DriftKind::Original, Some(1.0)).unwrap();
        let g = GridSpec::symmetric(10.0, 2001).unwrap();
        let rho0 = DensityGrid::gaussian(g, 0.0, 0.2).unwrap();
        let v0 = rho0.variance();
        let out = fp_marginals(&FpConfig::new(drift, g, 1e-3, 1.0), &rho0, &[1.0]).unwrap();
        assert!((out[0].variance() - v0 - 1.0).abs() < 1e-4, "{}", out[0].variance());
    }

    #[test]
    fn fp_rejects_mismatched_grid_and_backwards_time() {
        let g = GridSpec::symmetric(6.0, 601).unwrap();
        let rho0 = DensityGrid::gaussian(GridSpec::symmetric(6.0, 401).unwrap(), 0.0, 1.0).unwrap();
        assert!(fp_evolve(&FpConfig::new(ou(), g, 1e-3, 1.0), &rho0).is_err());
        let mut ev = fp_evolve(&FpConfig::new(ou(), g, 1e-3, 1.0), &DensityGrid::gaussian(g, 0.0, 1.0).unwrap()).unwrap();
        ev.advance_to(0.5).unwrap();
        assert!(ev.advance_to(0.25).is_err());
        assert!(ev.advance_to(2.0).is_err());
    }

    #[test]
    fn power_rescaled_invariant_is_limit() {
        let p = make_power_potential(2.0).unwrap();
        let g = GridSpec::symmetric(4.0, 2001).unwrap();
        let nu = limit_invariant_density(2.0, 4.0, g).unwrap();
        for eps in [1e-1, 1e-2, 1e-3] {
            let r = rescaled_invariant_density(&p, eps, g).unwrap();
            assert!(tv_density(&r, &nu).unwrap() < 1e-10);
        }
    }

    #[test]
    fn ginzburg_landau_invariant_mass() {
        let p = make_ginzburg_landau();
        let d = invariant_density(&p, 0.1, GridSpec::symmetric(6.0, 2001).unwrap()).unwrap();
        assert!((d.mass - 1.0).abs() < 1e-12);
    }
}
