//! Half-line boundary-layer profiles `u`, `v`, `w` and `theta`.
//!
//! The leading profile `u` is integrated in the deviation `delta = u - phi*`
//! with classic RK4 plus projection onto the first integral
//! `u'^2 = -2 F(u)`. Since `u` is strictly monotone, every quadrature needed
//! by the correctors is carried out in `delta` rather than in `t`: on each
//! grid interval `dt = d(delta) / u'(delta)` with `u'(delta)` known in closed
//! form, so no interpolation of `u` between nodes is ever needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinearity::{decay_rate, Nonlinearity};
use crate::numerics;

/// Robin data `phi + gamma * sqrt(eps) * d_nu phi = phi_bd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobinData {
    pub gamma: f64,
    pub phi_bd: f64,
}

impl RobinData {
    pub fn new(gamma: f64, phi_bd: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() || !phi_bd.is_finite() {
            return Err(Error::InvalidInput(format!("bad Robin data gamma={gamma}, phi_bd={phi_bd}")));
        }
        Ok(Self { gamma, phi_bd })
    }

    pub fn dirichlet(phi_bd: f64) -> Self {
        Self { gamma: 0.0, phi_bd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    U,
    V,
    W,
    Theta,
}

/// `value(t) ~ limit + amplitude * exp(-rate * t)` beyond the last node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tail {
    pub limit: f64,
    pub amplitude: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub reference: f64,
    pub gamma: f64,
    pub phi_bd: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub u0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub du0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub v0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub w0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t_star: Option<f64>,
    /// `int_0^inf u'^2` accumulated on the grid (kind `v`).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub energy: Option<f64>,
}

/// Dense samples on `[0, T_max]` plus an exponential tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub kind: ProfileKind,
    pub t: Vec<f64>,
    pub value: Vec<f64>,
    pub deriv: Vec<f64>,
    pub tail: Tail,
    pub meta: ProfileMeta,
    /// `u - phi*` at the nodes, kept at full relative precision (kind `u`).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub deviation: Vec<f64>,
    /// `int_t^inf u'^2` at the nodes (kind `v`).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub flux_tail: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileOptions {
    /// Number of Chebyshev-clustered nodes on `[0, T_max]`.
    pub nodes: usize,
    /// `T_max` is where `|u - phi*|` first drops below this fraction of `|U0 - phi*|`.
    pub decay_fraction: f64,
    /// RK4 substep is `step_scale / sqrt(max |f'|)`.
    pub step_scale: f64,
    /// Upper limit for `T_max` in units of `1 / m_f`.
    pub t_cap: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { nodes: 4001, decay_fraction: 1e-12, step_scale: 2e-3, t_cap: 40.0 }
    }
}

/// Nodes `T (1 - cos(pi j / (2 (n-1))))`, clustered at `t = 0`.
pub fn chebyshev_grid(t_max: f64, n: usize) -> Vec<f64> {
    let mut t: Vec<f64> =
        (0..n).map(|j| t_max * (1.0 - (std::f64::consts::FRAC_PI_2 * j as f64 / (n - 1) as f64).cos())).collect();
    t[n - 1] = t_max;
    t
}

fn same_sign(a: f64, b: f64) -> bool {
    (a > 0.0 && b > 0.0) || (a < 0.0 && b < 0.0)
}

/// `|u'|` on the trajectory as a function of the deviation.
pub(crate) fn speed(f: &Nonlinearity, delta: f64) -> f64 {
    (-2.0 * f.antiderivative_dev(delta)).max(0.0).sqrt()
}

/// Tail anchored at the last node so that the model is continuous there.
fn fit_tail(t: &[f64], value: &[f64], limit: f64, rate: f64) -> Tail {
    let n = t.len();
    let amplitude = (value[n - 1] - limit) * (rate * t[n - 1]).exp();
    Tail { limit, amplitude, rate }
}

impl Profile {
    fn constant(kind: ProfileKind, grid: Vec<f64>, level: f64, rate: f64, meta: ProfileMeta) -> Self {
        let n = grid.len();
        Profile {
            kind,
            t: grid,
            value: vec![level; n],
            deriv: vec![0.0; n],
            tail: Tail { limit: level, amplitude: 0.0, rate },
            meta,
            deviation: if kind == ProfileKind::U { vec![0.0; n] } else { Vec::new() },
            flux_tail: if kind == ProfileKind::V { vec![0.0; n] } else { Vec::new() },
        }
    }

    pub fn t_max(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn is_constant(&self) -> bool {
        self.deriv.iter().all(|d| *d == 0.0)
    }

    /// Value and derivative at `t`: cubic Hermite between nodes, tail model beyond.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        if !(t >= 0.0) {
            return Err(Error::NegativeTime(t));
        }
        let n = self.t.len();
        if t > self.t[n - 1] {
            let e = (-self.tail.rate * t).exp();
            return Ok((self.tail.limit + self.tail.amplitude * e, -self.tail.rate * self.tail.amplitude * e));
        }
        let i = self.t.partition_point(|x| *x <= t);
        if i > 0 && self.t[i - 1] == t {
            return Ok((self.value[i - 1], self.deriv[i - 1]));
        }
        let (a, b) = (i - 1, i);
        let h = self.t[b] - self.t[a];
        let s = (t - self.t[a]) / h;
        let (y0, y1, d0, d1) = (self.value[a], self.value[b], self.deriv[a] * h, self.deriv[b] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let v =
            (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * d0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * d1;
        let dv = ((6.0 * s2 - 6.0 * s) * y0
            + (3.0 * s2 - 4.0 * s + 1.0) * d0
            + (-6.0 * s2 + 6.0 * s) * y1
            + (3.0 * s2 - 2.0 * s) * d1)
            / h;
        Ok((v, dv))
    }

    /// Gap between the last node and the tail model, relative to the tail size.
    pub fn tail_mismatch(&self) -> f64 {
        let n = self.t.len();
        let model = self.tail.amplitude * (-self.tail.rate * self.t[n - 1]).exp();
        let actual = self.value[n - 1] - self.tail.limit;
        (actual - model).abs() / model.abs().max(actual.abs()).max(f64::MIN_POSITIVE)
    }

    /// CSV rows `t,value,derivative` in shortest round-trip decimal form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value,derivative\n");
        for j in 0..self.t.len() {
            let row = [self.t[j], self.value[j], self.deriv[j]].map(numerics::format_number);
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    fn u_parts(&self) -> Result<(f64, f64, f64)> {
        if self.kind != ProfileKind::U {
            return Err(Error::InvalidInput("expected a u-profile".into()));
        }
        let d0 = self.deviation[0];
        Ok((d0, self.deriv[0], d0.signum()))
    }
}

/// Free-function form of [`Profile::eval`].
pub fn profile_eval(p: &Profile, t: f64) -> Result<(f64, f64)> {
    p.eval(t)
}

fn check_nodes(opts: &ProfileOptions) -> Result<()> {
    if opts.nodes < 5 {
        return Err(Error::GridTooCoarse(format!("{} nodes, need at least 5", opts.nodes)));
    }
    Ok(())
}

/// Boundary deviation `U0 - phi*` and slope `u'(0)` of the leading layer:
/// `phi_bd - U0 = sgn(phi_bd - phi*) gamma sqrt(-2 F(U0))`, solved by
/// bisection to machine precision.
pub fn boundary_state(f: &Nonlinearity, robin: RobinData) -> Result<(f64, f64)> {
    let d_bd = robin.phi_bd - f.reference();
    if d_bd == 0.0 {
        return Ok((0.0, 0.0));
    }
    let s = d_bd.signum();
    let d0 = if robin.gamma == 0.0 {
        d_bd
    } else {
        numerics::bisect(|d| d_bd - d - s * robin.gamma * speed(f, d), 0.0, d_bd, 0.0)
            .map_err(|e| Error::RootBracketFailure(e.to_string()))?
    };
    Ok((d0, -s * speed(f, d0)))
}

/// Leading-order layer: `u'' + f(u) = 0`, `u(0) - gamma u'(0) = phi_bd`, `u -> phi*`.
pub fn solve_u(f: &Nonlinearity, robin: RobinData, opts: &ProfileOptions) -> Result<Profile> {
    if !f.is_monotone() {
        return Err(Error::UnsupportedProvenance(f.provenance()));
    }
    check_nodes(opts)?;
    RobinData::new(robin.gamma, robin.phi_bd)?;
    let star = f.reference();
    let mu2 = -f.df_dev(0.0);
    if !(mu2 > 0.0) {
        return Err(Error::NonDecreasingDetected(star));
    }
    let mu = mu2.sqrt();
    let d_bd = robin.phi_bd - star;
    let mut meta = ProfileMeta { reference: star, gamma: robin.gamma, phi_bd: robin.phi_bd, ..Default::default() };
    if d_bd == 0.0 {
        meta.u0 = Some(star);
        meta.du0 = Some(0.0);
        let grid = chebyshev_grid(opts.t_cap / mu, opts.nodes);
        return Ok(Profile::constant(ProfileKind::U, grid, star, mu, meta));
    }
    let s = d_bd.signum();
    let (d0, du0) = boundary_state(f, robin)?;
    let m_f = decay_rate(f, star.min(robin.phi_bd), star.max(robin.phi_bd))?;

    let y_end = -opts.decay_fraction.ln();
    let t_decay = numerics::integrate(
        &|y| {
            let d = d0 * (-y).exp();
            d.abs() / speed(f, d)
        },
        0.0,
        y_end,
        1e-12,
    );
    let t_max = t_decay.min(opts.t_cap / m_f);
    let grid = chebyshev_grid(t_max, opts.nodes);

    let rate_max = (0..=32).map(|k| (-f.df_dev(d0 * k as f64 / 32.0)).sqrt()).fold(mu, f64::max);
    let h_base = opts.step_scale / rate_max;
    let norm = 1.0 + du0 * du0;
    let project = |d: f64| -s * speed(f, d);
    let rhs = |d: f64, p: f64| (p, -f.f_dev(d));

    let n = grid.len();
    let mut dev = vec![0.0; n];
    let mut der = vec![0.0; n];
    dev[0] = d0;
    der[0] = du0;
    for j in 1..n {
        let h = grid[j] - grid[j - 1];
        let mut m = (h / h_base).ceil().max(1.0) as usize;
        let mut done = None;
        while m <= 1 << 20 {
            let dt = h / m as f64;
            let (mut d, mut p) = (dev[j - 1], der[j - 1]);
            let mut ok = true;
            for _ in 0..m {
                let k1 = rhs(d, p);
                let k2 = rhs(d + 0.5 * dt * k1.0, p + 0.5 * dt * k1.1);
                let k3 = rhs(d + 0.5 * dt * k2.0, p + 0.5 * dt * k2.1);
                let k4 = rhs(d + dt * k3.0, p + dt * k3.1);
                let dn = d + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
                let pn = p + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
                let drift = (pn * pn + 2.0 * f.antiderivative_dev(dn)).abs();
                if !same_sign(dn, s) || dn.abs() > d.abs() || drift > 1e-10 * norm {
                    ok = false;
                    break;
                }
                d = dn;
                p = project(dn);
            }
            if ok {
                done = Some((d, p));
                break;
            }
            m *= 2;
        }
        let (d, p) = done.ok_or(Error::NonMonotoneTrajectory(grid[j]))?;
        dev[j] = d;
        der[j] = p;
    }
    let value: Vec<f64> = dev.iter().map(|d| star + d).collect();
    let tail = fit_tail(&grid, &dev, 0.0, mu);
    meta.u0 = Some(star + d0);
    meta.du0 = Some(du0);
    Ok(Profile {
        kind: ProfileKind::U,
        t: grid,
        value,
        deriv: der,
        tail: Tail { limit: star, ..tail },
        meta,
        deviation: dev,
        flux_tail: Vec::new(),
    })
}

fn check_pair(u: &Profile, f: &Nonlinearity) -> Result<()> {
    if u.kind != ProfileKind::U {
        return Err(Error::InvalidInput("expected a u-profile".into()));
    }
    if u.meta.reference != f.reference() {
        return Err(Error::MismatchedReference(u.meta.reference, f.reference()));
    }
    Ok(())
}

fn denominator(du0: f64, gamma: f64, f_at_u0: f64) -> Result<f64> {
    let d = du0 + gamma * f_at_u0;
    if d.abs() <= 1e-300 || !d.is_finite() {
        return Err(Error::DenominatorNearZero(d));
    }
    Ok(d)
}

/// Potential-space panel integral `int_a^b g` (8-point Gauss-Legendre).
fn panel(a: f64, b: f64, g: &dyn Fn(f64) -> f64) -> f64 {
    numerics::panel_rule().integrate(a, b, g)
}

/// `int_0^inf u'^2 dt` as the potential-space integral of `sqrt(-2F)`.
pub fn energy_integral(f: &Nonlinearity, u: &Profile) -> Result<f64> {
    check_pair(u, f)?;
    let (d0, _, s) = u.u_parts()?;
    if d0 == 0.0 {
        return Ok(0.0);
    }
    Ok(s * numerics::integrate(&|d| speed(f, d), 0.0, d0, 1e-14))
}

/// `int_t^inf u'^2` at every node from time-domain quadrature: Gauss-Legendre
/// on the Hermite interpolant of `u'` (with `u'' = -f(u)`) plus the tail.
pub fn flux_by_time_quadrature(f: &Nonlinearity, u: &Profile) -> Result<Vec<f64>> {
    check_pair(u, f)?;
    let n = u.t.len();
    let t_max = u.t_max();
    let (c, mu) = (u.tail.amplitude, u.tail.rate);
    let mut flux = vec![0.0; n];
    flux[n - 1] = c * c * mu / 2.0 * (-2.0 * mu * t_max).exp();
    let rule = numerics::panel_rule();
    for i in (0..n - 1).rev() {
        let (ta, tb) = (u.t[i], u.t[i + 1]);
        let h = tb - ta;
        let (p0, p1) = (u.deriv[i], u.deriv[i + 1]);
        let (q0, q1) = (-f.f_dev(u.deviation[i]) * h, -f.f_dev(u.deviation[i + 1]) * h);
        let piece = rule.integrate(0.0, 1.0, |x| {
            let x2 = x * x;
            let x3 = x2 * x;
            let p = (2.0 * x3 - 3.0 * x2 + 1.0) * p0
                + (x3 - 2.0 * x2 + x) * q0
                + (-2.0 * x3 + 3.0 * x2) * p1
                + (x3 - x2) * q1;
            p * p
        }) * h;
        flux[i] = flux[i + 1] + piece;
    }
    Ok(flux)
}

/// Curvature corrector: `v'' + f'(u) v = u'`, `v(0) - gamma v'(0) = 0`, `v -> 0`.
pub fn solve_v(u: &Profile, f: &Nonlinearity, robin: RobinData) -> Result<Profile> {
    check_pair(u, f)?;
    let (d0, du0, s) = u.u_parts()?;
    let mut meta = ProfileMeta { reference: 0.0, gamma: robin.gamma, phi_bd: robin.phi_bd, ..Default::default() };
    let rate = u.tail.rate;
    if d0 == 0.0 {
        meta.v0 = Some(0.0);
        meta.energy = Some(0.0);
        return Ok(Profile::constant(ProfileKind::V, u.t.clone(), 0.0, rate, meta));
    }
    let g = |d: f64| -s * speed(f, d);
    let dev = &u.deviation;
    let n = u.t.len();

    let mut flux = vec![0.0; n];
    flux[n - 1] = panel(dev[n - 1], 0.0, &g);
    for i in (0..n - 1).rev() {
        flux[i] = flux[i + 1] + panel(dev[i], dev[i + 1], &g);
    }
    let mut cum = vec![0.0; n];
    for i in 0..n - 1 {
        let (a, b, base) = (dev[i], dev[i + 1], flux[i + 1]);
        let inner = |x: f64| {
            let gx = g(x);
            (base + panel(x, b, &g)) / (gx * gx * gx)
        };
        cum[i + 1] = cum[i] + panel(a, b, &inner);
    }
    let energy = flux[0];
    let big_d = denominator(du0, robin.gamma, f.f_dev(d0))?;
    let v0 = -robin.gamma * energy / big_d;
    let c0 = v0 / du0;
    let mut value = vec![0.0; n];
    let mut deriv = vec![0.0; n];
    for i in 0..n {
        let h = c0 - cum[i];
        value[i] = u.deriv[i] * h;
        deriv[i] = -f.f_dev(dev[i]) * h - flux[i] / u.deriv[i];
    }
    value[0] = v0;
    meta.t_star = locate_extremum(&u.t, &deriv);
    meta.v0 = Some(v0);
    meta.energy = Some(energy);
    let tail = fit_tail(&u.t, &value, 0.0, rate);
    Ok(Profile {
        kind: ProfileKind::V,
        t: u.t.clone(),
        value,
        deriv,
        tail,
        meta,
        deviation: Vec::new(),
        flux_tail: flux,
    })
}

/// First sign change of the derivative, linearly interpolated.
fn locate_extremum(t: &[f64], deriv: &[f64]) -> Option<f64> {
    for i in 0..t.len() - 1 {
        let (a, b) = (deriv[i], deriv[i + 1]);
        if a != 0.0 && (b == 0.0 || a.signum() != b.signum()) {
            return Some(t[i] + (t[i + 1] - t[i]) * a / (a - b));
        }
    }
    None
}

/// Auxiliary layer: `theta = 1 - u'(t) / (u'(0) + gamma f0(u(0)))`.
pub fn solve_theta(u: &Profile, f0: &Nonlinearity, robin: RobinData) -> Result<Profile> {
    check_pair(u, f0)?;
    let (d0, du0, _) = u.u_parts()?;
    let meta = ProfileMeta { reference: 1.0, gamma: robin.gamma, phi_bd: robin.phi_bd, ..Default::default() };
    if d0 == 0.0 {
        return Ok(Profile::constant(ProfileKind::Theta, u.t.clone(), 1.0, u.tail.rate, meta));
    }
    let big_d = denominator(du0, robin.gamma, f0.f_dev(d0))?;
    let value: Vec<f64> = u.deriv.iter().map(|p| 1.0 - p / big_d).collect();
    let deriv: Vec<f64> = u.deviation.iter().map(|d| f0.f_dev(*d) / big_d).collect();
    let tail = fit_tail(&u.t, &value, 1.0, u.tail.rate);
    Ok(Profile {
        kind: ProfileKind::Theta,
        t: u.t.clone(),
        value,
        deriv,
        tail,
        meta,
        deviation: Vec::new(),
        flux_tail: Vec::new(),
    })
}

/// Nonlocal corrector: `w'' + f0'(u) w = -f1(u)`, `w(0) - gamma w'(0) = 0`.
///
/// `f1 = -Q f0' + fhat1`, so its antiderivative is `-Q f0 + Fhat1` and the
/// integrand `Q f0(u) - Fhat1(u)` equals `-F1(u)`.
pub fn solve_w(u: &Profile, f0: &Nonlinearity, f1: &Nonlinearity, q: f64, robin: RobinData) -> Result<Profile> {
    check_pair(u, f0)?;
    if f1.reference() != f0.reference() {
        return Err(Error::MismatchedReference(f0.reference(), f1.reference()));
    }
    let (d0, du0, s) = u.u_parts()?;
    let limit = -f1.f_dev(0.0) / f0.df_dev(0.0);
    let mut meta =
        ProfileMeta { reference: limit, gamma: robin.gamma, phi_bd: robin.phi_bd, q: Some(q), ..Default::default() };
    if d0 == 0.0 {
        meta.w0 = Some(limit);
        return Ok(Profile::constant(ProfileKind::W, u.t.clone(), limit, u.tail.rate, meta));
    }
    let g = |d: f64| -s * speed(f0, d);
    let source = |d: f64| -f1.antiderivative_dev(d);
    let dev = &u.deviation;
    let n = u.t.len();
    let big_d = denominator(du0, robin.gamma, f0.f_dev(d0))?;
    let w0 = robin.gamma * source(d0) / big_d;
    let mut cum = vec![0.0; n];
    for i in 0..n - 1 {
        let integrand = |x: f64| {
            let gx = g(x);
            source(x) / (gx * gx * gx)
        };
        cum[i + 1] = cum[i] + panel(dev[i], dev[i + 1], &integrand);
    }
    let c0 = w0 / du0;
    let mut value = vec![0.0; n];
    let mut deriv = vec![0.0; n];
    for i in 0..n {
        let k = c0 + cum[i];
        value[i] = u.deriv[i] * k;
        deriv[i] = -f0.f_dev(dev[i]) * k + source(dev[i]) / u.deriv[i];
    }
    value[0] = w0;
    meta.w0 = Some(w0);
    let tail = fit_tail(&u.t, &value, limit, u.tail.rate);
    Ok(Profile {
        kind: ProfileKind::W,
        t: u.t.clone(),
        value,
        deriv,
        tail,
        meta,
        deviation: Vec::new(),
        flux_tail: Vec::new(),
    })
}

/// Which half-line equation a profile is checked against.
#[derive(Clone, Copy)]
pub enum Equation<'a> {
    /// `y'' + f(y) = 0`
    U { f: &'a Nonlinearity },
    /// `y'' + f'(u) y = u'`
    V { f: &'a Nonlinearity, u: &'a Profile },
    /// `y'' + f0'(u) y = -f1(u)`
    W { f0: &'a Nonlinearity, f1: &'a Nonlinearity, u: &'a Profile },
    /// `y'' + f0'(u) y = f0'(u)`
    Theta { f0: &'a Nonlinearity, u: &'a Profile },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    /// Second-order three-point second difference.
    ThreePoint,
    /// Five-point second difference.
    FivePoint,
    /// Centered first difference of the stored derivative samples.
    DerivativeCentral,
}

fn u_at(u: &Profile, grid: &[f64], j: usize) -> Result<(f64, f64, f64)> {
    if u.t.len() == grid.len() && u.t[j] == grid[j] {
        Ok((u.value[j], u.deriv[j], u.deviation[j]))
    } else {
        let (v, d) = u.eval(grid[j])?;
        Ok((v, d, v - u.meta.reference))
    }
}

/// Max over interior nodes of `|y'' + a(t) y - b(t)|` with `y''` from finite differences.
pub fn ode_residual(p: &Profile, eq: Equation<'_>, stencil: Stencil) -> Result<f64> {
    let n = p.t.len();
    let half = match stencil {
        Stencil::ThreePoint => 1,
        Stencil::FivePoint => 2,
        Stencil::DerivativeCentral => 1,
    };
    if n < 5 {
        return Err(Error::GridTooCoarse(format!("{n} nodes, need at least 5")));
    }
    let mut worst: f64 = 0.0;
    for j in half..n - half {
        let xs = &p.t[j - half..=j + half];
        let ypp: f64 = if stencil == Stencil::DerivativeCentral {
            let w = numerics::fd_weights(p.t[j], xs, 1);
            w.iter().zip(&p.deriv[j - 1..=j + 1]).map(|(a, b)| a * b).sum()
        } else {
            let w = numerics::fd_weights(p.t[j], xs, 2);
            w.iter().zip(&p.value[j - half..=j + half]).map(|(a, b)| a * b).sum()
        };
        let y = p.value[j];
        let r = match eq {
            Equation::U { f } => ypp + f.f(y),
            Equation::V { f, u } => {
                let (_, du, d) = u_at(u, &p.t, j)?;
                ypp + f.df_dev(d) * y - du
            }
            Equation::W { f0, f1, u } => {
                let (_, _, d) = u_at(u, &p.t, j)?;
                ypp + f0.df_dev(d) * y + f1.f_dev(d)
            }
            Equation::Theta { f0, u } => {
                let (_, _, d) = u_at(u, &p.t, j)?;
                let a = f0.df_dev(d);
                ypp + a * y - a
            }
        };
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// Direct solve of `y'' + f0'(u) y = f0'(u)` with `y(0) - gamma y'(0) = 0`
/// and `y(T_max) = 1`: second-order finite differences on the grid of `u`
/// and on its midpoint refinement, combined by Richardson extrapolation.
pub fn theta_by_linear_solve(u: &Profile, f0: &Nonlinearity, robin: RobinData) -> Result<Vec<f64>> {
    check_pair(u, f0)?;
    let n = u.t.len();
    let coarse_coef: Vec<f64> = u.deviation.iter().map(|d| f0.df_dev(*d)).collect();
    let coarse = linear_theta(&u.t, &coarse_coef, robin.gamma);
    let mut fine_t = Vec::with_capacity(2 * n - 1);
    let mut fine_coef = Vec::with_capacity(2 * n - 1);
    for j in 0..n {
        if j > 0 {
            let tm = 0.5 * (u.t[j - 1] + u.t[j]);
            let (val, _) = u.eval(tm)?;
            fine_t.push(tm);
            fine_coef.push(f0.df(val));
        }
        fine_t.push(u.t[j]);
        fine_coef.push(coarse_coef[j]);
    }
    let fine = linear_theta(&fine_t, &fine_coef, robin.gamma);
    Ok((0..n).map(|j| (4.0 * fine[2 * j] - coarse[j]) / 3.0).collect())
}

fn linear_theta(t: &[f64], coef: &[f64], gamma: f64) -> Vec<f64> {
    let n = t.len();
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for j in 1..n - 1 {
        let (hm, hp) = (t[j] - t[j - 1], t[j + 1] - t[j]);
        lower[j] = 2.0 / (hm * (hm + hp));
        upper[j] = 2.0 / (hp * (hm + hp));
        diag[j] = -2.0 / (hm * hp) + coef[j];
        rhs[j] = coef[j];
    }
    diag[n - 1] = 1.0;
    rhs[n - 1] = 1.0;
    // One-sided three-point y'(0); the third node is eliminated against the
    // first interior row to keep the system tridiagonal.
    let w = numerics::fd_weights(t[0], &t[0..3], 1);
    let (r0, r1, r2) = (1.0 - gamma * w[0], -gamma * w[1], -gamma * w[2]);
    let scale = r2 / upper[1];
    diag[0] = r0 - scale * lower[1];
    upper[0] = r1 - scale * diag[1];
    rhs[0] = -scale * rhs[1];
    numerics::solve_tridiagonal(&lower, &diag, &upper, &rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::{make_classical_pb, make_f0, make_f1, make_fhat1, IonSpecies};
    use approx::assert_relative_eq;

    fn sinh_f() -> Nonlinearity {
        make_classical_pb(&[IonSpecies::bulk(1.0, 1.0), IonSpecies::bulk(-1.0, 1.0)]).unwrap()
    }

    fn gouy_chapman(phi_bd: f64, t: f64) -> f64 {
        4.0 * ((phi_bd / 4.0).tanh() * (-(2f64.sqrt()) * t).exp()).atanh()
    }

    #[test]
    fn dirichlet_layer_matches_gouy_chapman() {
        let f = sinh_f();
        let u = solve_u(&f, RobinData::dirichlet(1.0), &ProfileOptions::default()).unwrap();
        assert_relative_eq!(u.deriv[0], -2.0 * 2f64.sqrt() * 0.5f64.sinh(), max_relative = 1e-13);
        let (v, _) = u.eval(1.0).unwrap();
        assert_relative_eq!(v, gouy_chapman(1.0, 1.0), max_relative = 1e-9);
        assert_relative_eq!(v, 0.238_457_382_833_861_1, max_relative = 1e-9);
    }

    #[test]
    fn robin_boundary_value() {
        let f = sinh_f();
        let u = solve_u(&f, RobinData::new(0.1, 1.0).unwrap(), &ProfileOptions::default()).unwrap();
        let u0 = u.meta.u0.unwrap();
        assert!((u0 - 0.873).abs() < 5e-4, "U0 = {u0}");
        assert!((u.value[0] - 0.1 * u.deriv[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_profiles_when_boundary_equals_reference() {
        let f = sinh_f();
        let r = RobinData::new(0.1, 0.0).unwrap();
        let u = solve_u(&f, r, &ProfileOptions::default()).unwrap();
        assert!(u.value.iter().all(|x| *x == 0.0) && u.is_constant());
        let v = solve_v(&u, &f, r).unwrap();
        assert!(v.value.iter().all(|x| *x == 0.0));
        let th = solve_theta(&u, &f, r).unwrap();
        assert!(th.value.iter().all(|x| *x == 1.0));
        assert!(ode_residual(&u, Equation::U { f: &f }, Stencil::ThreePoint).unwrap() == 0.0);
    }

    #[test]
    fn eval_contract() {
        let f = sinh_f();
        let u = solve_u(&f, RobinData::dirichlet(1.0), &ProfileOptions::default()).unwrap();
        assert_eq!(u.eval(u.t[17]).unwrap(), (u.value[17], u.deriv[17]));
        assert!(matches!(u.eval(-1.0), Err(Error::NegativeTime(_))));
        let t = u.t_max() + 10.0;
        let (v, d) = u.eval(t).unwrap();
        let e = u.tail.amplitude * (-u.tail.rate * t).exp();
        assert_eq!(v, u.tail.limit + e);
        assert_eq!(d, -u.tail.rate * e);
    }

    #[test]
    fn dirichlet_corrector_starts_at_zero() {
        let f = sinh_f();
        let r = RobinData::dirichlet(1.0);
        let u = solve_u(&f, r, &ProfileOptions::default()).unwrap();
        let v = solve_v(&u, &f, r).unwrap();
        assert_eq!(v.value[0], 0.0);
        let th = solve_theta(&u, &f, r).unwrap();
        assert_eq!(th.value[0], 0.0);
    }

    #[test]
    fn grid_too_coarse() {
        let f = sinh_f();
        let opts = ProfileOptions { nodes: 4, ..Default::default() };
        assert!(matches!(solve_u(&f, RobinData::dirichlet(1.0), &opts), Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn decreasing_boundary_gives_increasing_layer() {
        let f = sinh_f();
        let u = solve_u(&f, RobinData::dirichlet(-1.0), &ProfileOptions::default()).unwrap();
        assert!(u.deriv.iter().all(|d| *d > 0.0));
        assert!(u.value.iter().all(|v| *v >= -1.0 && *v < 0.0));
    }

    #[test]
    fn theta_slope_formula_matches_finite_difference() {
        let f = sinh_f();
        let r = RobinData::new(0.1, 1.0).unwrap();
        let u = solve_u(&f, r, &ProfileOptions::default()).unwrap();
        let th = solve_theta(&u, &f, r).unwrap();
        let w = numerics::fd_weights(0.0, &th.t[0..3], 1);
        let slope: f64 = w.iter().zip(&th.value[0..3]).map(|(a, b)| a * b).sum();
        assert!((slope - th.deriv[0]).abs() < 1e-8);
        assert!(th.deriv[0] > 0.0);
        assert!((th.value[0] - 0.1 * th.deriv[0]).abs() < 1e-10);
    }

    #[test]
    fn v_has_single_interior_maximum() {
        let f = sinh_f();
        let r = RobinData::new(0.1, 1.0).unwrap();
        let u = solve_u(&f, r, &ProfileOptions::default()).unwrap();
        let v = solve_v(&u, &f, r).unwrap();
        assert!(v.value.iter().all(|x| *x > 0.0));
        let t_star = v.meta.t_star.unwrap();
        // Reference values from a 30-digit Taylor IVP solve.
        assert!((t_star - 0.621_321_020_767_044_1).abs() < 1e-6, "{t_star}");
        assert!((v.meta.v0.unwrap() - 0.037_185_249_461_187_58).abs() < 1e-12);
        assert!((u.meta.u0.unwrap() - 0.872_637_340_907_619_1).abs() < 1e-12);
        let (vmax, _) = v.eval(t_star).unwrap();
        assert!((vmax - 0.124_153_071_748_540_1).abs() < 1e-9);
        assert!((v.value[0] - 0.1 * v.deriv[0]).abs() < 1e-10);
    }

    #[test]
    fn w_vanishes_for_zero_data() {
        let species = [IonSpecies::mass(1.0, 1.0), IonSpecies::mass(-1.0, 1.0)];
        let f0 = make_f0(&species, 1.0, 0.0).unwrap();
        let fhat1 = make_fhat1(&species, 1.0, 0.0, &[0.0, 0.0]).unwrap();
        let f1 = make_f1(&f0, &fhat1, 0.0).unwrap();
        let r = RobinData::new(0.1, 1.0).unwrap();
        let u = solve_u(&f0, r, &ProfileOptions::default()).unwrap();
        let w = solve_w(&u, &f0, &f1, 0.0, r).unwrap();
        assert!(w.value.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn w_limit_for_non_neutral_correction() {
        let species = [IonSpecies::mass(1.0, 1.0), IonSpecies::mass(-1.0, 1.0)];
        let f0 = make_f0(&species, 1.0, 0.0).unwrap();
        let fhat1 = make_fhat1(&species, 1.0, 0.0, &[1.0, -1.0]).unwrap();
        let f1 = make_f1(&f0, &fhat1, 1.0).unwrap();
        let r = RobinData::new(0.1, 1.0).unwrap();
        let u = solve_u(&f0, r, &ProfileOptions::default()).unwrap();
        let w = solve_w(&u, &f0, &f1, 1.0, r).unwrap();
        assert_eq!(w.tail.limit, 2.0);
        assert!((w.value.last().unwrap() - 2.0).abs() < 1e-9);
        assert!((w.value[0] - 0.1 * w.deriv[0]).abs() < 1e-10);
        let d = w.deriv.iter().skip(1).map(|x| x.abs()).fold(0.0, f64::max);
        assert!(d.is_finite());
    }

    #[test]
    fn gouy_chapman_residual_on_uniform_grid() {
        let f = sinh_f();
        let n = 4001;
        let t: Vec<f64> = (0..n).map(|j| 20.0 * j as f64 / (n - 1) as f64).collect();
        let value: Vec<f64> = t.iter().map(|x| gouy_chapman(1.0, *x)).collect();
        let deriv: Vec<f64> = value.iter().map(|v| -2.0 * (v / 2.0).sinh()).collect();
        let p = Profile {
            kind: ProfileKind::U,
            tail: Tail { limit: 0.0, amplitude: 0.0, rate: 2f64.sqrt() },
            meta: ProfileMeta::default(),
            deviation: value.clone(),
            flux_tail: Vec::new(),
            t,
            value,
            deriv,
        };
        let three = ode_residual(&p, Equation::U { f: &f }, Stencil::ThreePoint).unwrap();
        let five = ode_residual(&p, Equation::U { f: &f }, Stencil::FivePoint).unwrap();
        assert!(three > 1e-5 && three < 5e-5, "{three}");
        assert!(five < 1e-6, "{five}");
    }
}
