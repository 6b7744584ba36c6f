//! Brute-force radial solvers used as ground truth for the expansions.
//!
//! The radial operator is discretized by vertex-centred finite volumes on a
//! grid clustered geometrically toward each boundary. Boundary nodes own half
//! cells whose outer face carries the Robin flux, so the discrete equations
//! telescope to an exact divergence identity. Nonlinear systems are solved by
//! Newton's method with a halving line search and Thomas solves.

use serde::{Deserialize, Serialize};

use crate::asymptotics::{field_normal_component, potential, Envelope, ExpansionQuery, Layers, Model};
use crate::error::{Error, Result};
use crate::geometry::{make_ball, unit_sphere_area, DomainSpec, Orientation, RegionParams, Shape};
use crate::nonlinearity::{decay_rate, make_classical_pb, IonSpecies, Nonlinearity};
use crate::numerics;
use crate::profiles::RobinData;

/// Layer resolution demanded of every grid: `MIN_LAYER_NODES` nodes within
/// `LAYER_CHECK_WIDTHS * sqrt(eps)` of each boundary.
const LAYER_CHECK_WIDTHS: f64 = 10.0;
const MIN_LAYER_NODES: usize = 64;
const MAX_HALVINGS: usize = 8;
const MAX_NEWTON: usize = 80;
const RESIDUAL_TOL: f64 = 1e-10;
const OUTER_TOL: f64 = 1e-12;
const MAX_OUTER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOptions {
    /// Nodes placed within `layer_widths * sqrt(eps)` of each boundary.
    pub layer_points: usize,
    pub layer_widths: f64,
    /// Spacing at the boundary in units of `sqrt(eps)`.
    pub first_spacing: f64,
    /// Spacing cap as a fraction of the radial extent.
    pub max_spacing: f64,
    /// Also solve on the midpoint-refined grid and Richardson-extrapolate onto this one.
    pub extrapolate: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            layer_points: 640,
            layer_widths: 10.0,
            first_spacing: 0.005,
            max_spacing: 1.0 / 1024.0,
            extrapolate: true,
        }
    }
}

impl GridOptions {
    pub fn check(&self) -> Result<()> {
        let ok = self.layer_points >= 2
            && self.layer_widths > 0.0
            && self.first_spacing > 0.0
            && self.max_spacing > 0.0
            && (self.layer_points as f64) * self.first_spacing < self.layer_widths;
        if !ok {
            return Err(Error::InvalidInput(format!("bad grid options {self:?}")));
        }
        Ok(())
    }
}

/// Stretch map `s -> int_0^s dσ / h(σ)` for the spacing `h(σ) = min(h_max, h0 + a σ)`.
struct Stretch {
    h0: f64,
    a: f64,
    h_max: f64,
    s_c: f64,
    g_c: f64,
}

impl Stretch {
    /// Growth `a` chosen so that `layer_points` nodes fill `layer_widths` at first spacing `h0`.
    fn new(opts: &GridOptions, eps: f64, extent: f64) -> Self {
        let ratio = opts.layer_widths / opts.first_spacing;
        let n = opts.layer_points as f64;
        let count = |a: f64| (a * ratio).ln_1p() / a - n;
        let a = numerics::bisect(count, 1e-9, 10.0, 0.0).unwrap_or(1e-9);
        let h0 = opts.first_spacing * eps.sqrt();
        let h_max = opts.max_spacing * extent;
        let s_c = ((h_max - h0) / a).max(0.0);
        let g_c = (a * s_c / h0).ln_1p() / a;
        Self { h0, a, h_max, s_c, g_c }
    }

    fn forward(&self, s: f64) -> f64 {
        if self.h0 >= self.h_max {
            return s / self.h_max;
        }
        if s <= self.s_c {
            (self.a * s / self.h0).ln_1p() / self.a
        } else {
            self.g_c + (s - self.s_c) / self.h_max
        }
    }

    fn inverse(&self, y: f64) -> f64 {
        if self.h0 >= self.h_max {
            return y * self.h_max;
        }
        if y <= self.g_c {
            self.h0 * (self.a * y).exp_m1() / self.a
        } else {
            self.s_c + (y - self.g_c) * self.h_max
        }
    }
}

/// Radial extent of a supported shape: `(inner radius or None for a ball, outer radius)`.
fn extent(domain: &DomainSpec) -> Result<(Option<f64>, f64)> {
    match domain.shape {
        Shape::Ball { radius } => Ok((None, radius)),
        Shape::Annulus { inner, outer } => Ok((Some(inner), outer)),
        Shape::General => Err(Error::InvalidInput("radial solvers need a ball or an annulus".into())),
    }
}

/// Nodes clustered toward every boundary of the shape.
pub fn radial_grid(domain: &DomainSpec, eps: f64, opts: &GridOptions) -> Result<Vec<f64>> {
    opts.check()?;
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let (inner, outer) = extent(domain)?;
    let r = match inner {
        None => {
            let st = Stretch::new(opts, eps, outer);
            let total = st.forward(outer);
            let n = total.ceil().max(4.0) as usize;
            let mut r: Vec<f64> = (0..=n).map(|j| outer - st.inverse(total * (1.0 - j as f64 / n as f64))).collect();
            r[0] = 0.0;
            r[n] = outer;
            r
        }
        Some(a) => {
            let st = Stretch::new(opts, eps, outer - a);
            let half = st.forward(0.5 * (outer - a));
            let n = (2.0 * half).ceil().max(4.0) as usize;
            let total = 2.0 * half;
            let mut r: Vec<f64> = (0..=n)
                .map(|j| {
                    let y = total * j as f64 / n as f64;
                    if y <= half {
                        a + st.inverse(y)
                    } else {
                        outer - st.inverse(total - y)
                    }
                })
                .collect();
            r[0] = a;
            r[n] = outer;
            r
        }
    };
    let width = LAYER_CHECK_WIDTHS * eps.sqrt();
    let near_outer = r.iter().filter(|x| outer - **x <= width).count();
    let near_inner = inner.map(|a| r.iter().filter(|x| **x - a <= width).count()).unwrap_or(usize::MAX);
    let fewest = near_outer.min(near_inner);
    if fewest < MIN_LAYER_NODES {
        return Err(Error::GridTooCoarse(format!(
            "{fewest} nodes within {LAYER_CHECK_WIDTHS} sqrt(eps) of a boundary, need {MIN_LAYER_NODES}"
        )));
    }
    Ok(r)
}

/// Boundary treatment at one end of the radial interval.
#[derive(Debug, Clone, Copy)]
enum End {
    /// Ball centre: zero flux by symmetry.
    Centre,
    Robin {
        robin: RobinData,
        area: f64,
    },
}

impl End {
    fn dirichlet(&self) -> Option<f64> {
        match self {
            End::Robin { robin, .. } if robin.gamma == 0.0 => Some(robin.phi_bd),
            _ => None,
        }
    }
}

struct Mesh {
    eps: f64,
    r: Vec<f64>,
    vol: Vec<f64>,
    /// Face conductances `|S_{j+1/2}| / (r_{j+1} - r_j)`.
    cond: Vec<f64>,
    lo: End,
    hi: End,
}

impl Mesh {
    fn new(domain: &DomainSpec, r: Vec<f64>, eps: f64) -> Result<Self> {
        let d = domain.dimension;
        let w = unit_sphere_area(d);
        let n = r.len();
        let face: Vec<f64> = (0..n - 1).map(|j| 0.5 * (r[j] + r[j + 1])).collect();
        let edge = |j: usize| -> (f64, f64) {
            let a = if j == 0 { r[0] } else { face[j - 1] };
            let b = if j == n - 1 { r[n - 1] } else { face[j] };
            (a, b)
        };
        let vol = (0..n)
            .map(|j| {
                let (a, b) = edge(j);
                w * (b.powi(d as i32) - a.powi(d as i32)) / d as f64
            })
            .collect();
        let cond = (0..n - 1).map(|j| w * face[j].powi(d as i32 - 1) / (r[j + 1] - r[j])).collect();
        let (inner, _) = extent(domain)?;
        let outer = domain.component(0)?;
        let hi = End::Robin { robin: outer.robin, area: outer.surface_area };
        let lo = match inner {
            None => End::Centre,
            Some(_) => {
                let c = domain
                    .components
                    .iter()
                    .find(|c| c.orientation == Orientation::Hole)
                    .ok_or_else(|| Error::InvalidInput("annulus without a hole component".into()))?;
                End::Robin { robin: c.robin, area: c.surface_area }
            }
        };
        Ok(Self { eps, r, vol, cond, lo, hi })
    }

    fn n(&self) -> usize {
        self.r.len()
    }

    /// Outward normal derivative carried by the boundary face at an end, given the node value.
    fn robin_flux(&self, end: &End, phi: f64) -> (f64, f64) {
        match end {
            End::Robin { robin, area } if robin.gamma > 0.0 => {
                let k = area * self.eps.sqrt() / robin.gamma;
                (k * (robin.phi_bd - phi), -k)
            }
            _ => (0.0, 0.0),
        }
    }

    /// Cell balances `eps * (net outward flux) + |cell| f(phi)`; Dirichlet rows read `phi - phi_bd`.
    fn residual(&self, f: &Nonlinearity, phi: &[f64]) -> Vec<f64> {
        let n = self.n();
        let eps = self.eps;
        let mut g: Vec<f64> = (0..n).map(|j| self.vol[j] * f.f(phi[j])).collect();
        for j in 0..n - 1 {
            let flux = eps * self.cond[j] * (phi[j + 1] - phi[j]);
            g[j] += flux;
            g[j + 1] -= flux;
        }
        g[0] += self.robin_flux(&self.lo, phi[0]).0;
        g[n - 1] += self.robin_flux(&self.hi, phi[n - 1]).0;
        if let Some(v) = self.lo.dirichlet() {
            g[0] = phi[0] - v;
        }
        if let Some(v) = self.hi.dirichlet() {
            g[n - 1] = phi[n - 1] - v;
        }
        g
    }

    fn jacobian(&self, f: &Nonlinearity, phi: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n();
        let eps = self.eps;
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut diag: Vec<f64> = (0..n).map(|j| self.vol[j] * f.df(phi[j])).collect();
        for j in 0..n - 1 {
            let c = eps * self.cond[j];
            upper[j] = c;
            lower[j + 1] = c;
            diag[j] -= c;
            diag[j + 1] -= c;
        }
        diag[0] += self.robin_flux(&self.lo, phi[0]).1;
        diag[n - 1] += self.robin_flux(&self.hi, phi[n - 1]).1;
        if self.lo.dirichlet().is_some() {
            diag[0] = 1.0;
            upper[0] = 0.0;
        }
        if self.hi.dirichlet().is_some() {
            diag[n - 1] = 1.0;
            lower[n - 1] = 0.0;
        }
        (lower, diag, upper)
    }

    /// Sup norm of the residual per unit cell measure.
    fn norm(&self, g: &[f64]) -> f64 {
        let n = self.n();
        (0..n)
            .map(|j| {
                let dirichlet =
                    (j == 0 && self.lo.dirichlet().is_some()) || (j == n - 1 && self.hi.dirichlet().is_some());
                if dirichlet {
                    g[j].abs()
                } else {
                    (g[j] / self.vol[j]).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    /// `|eps * sum_k int dnu phi + int f(phi)|`, boundary derivatives taken from the Robin faces
    /// and, for Dirichlet ends, from the half-cell balance.
    fn conservation(&self, f: &Nonlinearity, phi: &[f64]) -> f64 {
        let n = self.n();
        let interior: f64 = (0..n).map(|j| self.vol[j] * f.f(phi[j])).sum();
        let mut boundary = self.robin_flux(&self.lo, phi[0]).0 + self.robin_flux(&self.hi, phi[n - 1]).0;
        if self.lo.dirichlet().is_some() {
            boundary += -(self.vol[0] * f.f(phi[0]) + self.eps * self.cond[0] * (phi[1] - phi[0]));
        }
        if self.hi.dirichlet().is_some() {
            boundary += -(self.vol[n - 1] * f.f(phi[n - 1]) - self.eps * self.cond[n - 2] * (phi[n - 1] - phi[n - 2]));
        }
        (boundary + interior).abs()
    }
}

/// Residual scale `1 + max |f|` over the potentials spanned by the data.
fn residual_scale(f: &Nonlinearity, mesh: &Mesh) -> f64 {
    let mut lo = f.reference();
    let mut hi = lo;
    for end in [&mesh.lo, &mesh.hi] {
        if let End::Robin { robin, .. } = end {
            lo = lo.min(robin.phi_bd);
            hi = hi.max(robin.phi_bd);
        }
    }
    1.0 + f.f(lo).abs().max(f.f(hi).abs())
}

struct NewtonOutcome {
    phi: Vec<f64>,
    iterations: usize,
    residual: f64,
}

fn newton(mesh: &Mesh, f: &Nonlinearity, mut phi: Vec<f64>, scale: f64) -> Result<NewtonOutcome> {
    let n = mesh.n();
    if let Some(v) = mesh.lo.dirichlet() {
        phi[0] = v;
    }
    if let Some(v) = mesh.hi.dirichlet() {
        phi[n - 1] = v;
    }
    let tol = RESIDUAL_TOL * scale;
    let mut g = mesh.residual(f, &phi);
    let mut norm = mesh.norm(&g);
    let mut damping = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_NEWTON {
        if norm <= 1e-6 * tol {
            break;
        }
        let (lower, diag, upper) = mesh.jacobian(f, &phi);
        let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        let step = numerics::solve_tridiagonal(&lower, &diag, &upper, &rhs);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = phi.iter().zip(&step).map(|(p, s)| p + lambda * s).collect();
            let gt = mesh.residual(f, &trial);
            let nt = mesh.norm(&gt);
            if nt.is_finite() && nt < (1.0 - 1e-4 * lambda) * norm {
                accepted = Some((trial, gt, nt));
                break;
            }
            lambda *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((trial, gt, nt)) => {
                damping.push(lambda);
                let moved = step.iter().map(|s| (lambda * s).abs()).fold(0.0, f64::max);
                phi = trial;
                g = gt;
                norm = nt;
                let size = phi.iter().map(|p| p.abs()).fold(1.0, f64::max);
                if norm <= tol && moved <= 1e-15 * size {
                    break;
                }
            }
            None if norm <= tol => break,
            None => return Err(Error::NewtonDivergence { iterations, residual: norm, damping }),
        }
    }
    if !(norm <= tol) {
        return Err(Error::NewtonDivergence { iterations, residual: norm, damping });
    }
    Ok(NewtonOutcome { phi, iterations, residual: norm })
}

/// Newton from `guess`; on failure, walks down from `64 eps` on the same grid.
fn solve_on_mesh(mesh: &mut Mesh, f: &Nonlinearity, guess: Vec<f64>, scale: f64) -> Result<NewtonOutcome> {
    match newton(mesh, f, guess.clone(), scale) {
        Ok(out) => Ok(out),
        Err(first) => {
            let target = mesh.eps;
            let mut phi = guess;
            let mut total = 0;
            for k in (0..=3).rev() {
                mesh.eps = target * 4f64.powi(2 * k);
                let out = newton(mesh, f, phi, scale).map_err(|_| first.clone())?;
                total += out.iterations;
                phi = out.phi;
            }
            mesh.eps = target;
            let mut out = newton(mesh, f, phi, scale)?;
            out.iterations += total;
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleChecks {
    /// Strict monotonicity in `r` in the direction set by the boundary data (ball, Dirichlet).
    pub monotone: Option<bool>,
    /// Pointwise exponential bound `2 |phi_bd - phi*| exp(-m_f (R - r) / (8 sqrt(eps)))` (ball, Dirichlet).
    pub decay_bound: Option<bool>,
    /// Rate `m_f` used by the bound.
    pub decay_rate: Option<f64>,
    /// Solution lies between the smallest and largest boundary potential (CCPB).
    pub within_bounds: Option<bool>,
    /// The bulk potential lies strictly between the boundary potentials (CCPB).
    pub star_inside: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcpbOracle {
    pub species: Vec<IonSpecies>,
    /// `int_Omega exp(-z_i phi)` on the grid.
    pub integrals: Vec<f64>,
    pub outer_iterations: usize,
    pub anderson: bool,
    /// Final relative change of the integral vector.
    pub final_change: f64,
    /// `|int f_eps(phi)| / sum m_i |z_i|`.
    pub neutrality: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialSolveResult {
    pub model: Model,
    pub domain: DomainSpec,
    pub eps: f64,
    pub r: Vec<f64>,
    pub phi: Vec<f64>,
    /// Cell measures, used as quadrature weights.
    pub weights: Vec<f64>,
    pub newton_iterations: usize,
    pub residual: f64,
    pub residual_scale: f64,
    /// Zero of the density the solution was computed with.
    pub reference: f64,
    /// Discrete divergence identity `|eps * boundary flux + int f(phi)|`.
    pub conservation: f64,
    /// `sup |phi_fine - phi_coarse|` when the result is extrapolated.
    pub discretization_gap: Option<f64>,
    pub ccpb: Option<CcpbOracle>,
    pub checks: OracleChecks,
    #[serde(skip)]
    pub density: Option<Nonlinearity>,
}

impl RadialSolveResult {
    /// `d phi / d r` at every node from five-point stencils.
    pub fn gradient(&self) -> Vec<f64> {
        let n = self.r.len();
        (0..n)
            .map(|j| {
                let a = j.saturating_sub(2).min(n.saturating_sub(5));
                let b = (a + 5).min(n);
                let w = numerics::fd_weights(self.r[j], &self.r[a..b], 1);
                w.iter().zip(&self.phi[a..b]).map(|(w, p)| w * p).sum()
            })
            .collect()
    }

    /// Rows `r,phi` in shortest round-trip decimal form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,phi\n");
        for (r, p) in self.r.iter().zip(&self.phi) {
            out.push_str(&format!("{},{}\n", numerics::format_number(*r), numerics::format_number(*p)));
        }
        out
    }

    fn density(&self) -> Result<&Nonlinearity> {
        self.density.as_ref().ok_or_else(|| Error::InvalidInput("solve result carries no density".into()))
    }
}

fn finish(
    model: Model,
    domain: &DomainSpec,
    mesh: &Mesh,
    f: &Nonlinearity,
    out: NewtonOutcome,
    scale: f64,
) -> RadialSolveResult {
    RadialSolveResult {
        model,
        domain: domain.clone(),
        eps: mesh.eps,
        conservation: mesh.conservation(f, &out.phi),
        r: mesh.r.clone(),
        phi: out.phi,
        weights: mesh.vol.clone(),
        newton_iterations: out.iterations,
        residual: out.residual,
        residual_scale: scale,
        reference: f.reference(),
        discretization_gap: None,
        ccpb: None,
        checks: OracleChecks::default(),
        density: Some(f.clone()),
    }
}

fn check_radial_pb(domain: &DomainSpec, f: &Nonlinearity) -> Result<()> {
    domain.validate()?;
    extent(domain)?;
    if !f.is_monotone() {
        return Err(Error::UnsupportedProvenance(f.provenance()));
    }
    Ok(())
}

/// Robin PB problem `-eps Δphi = f(phi)` on a ball or annulus.
pub fn solve_radial_robin_pb(
    domain: &DomainSpec,
    f: &Nonlinearity,
    eps: f64,
    grid: &GridOptions,
) -> Result<RadialSolveResult> {
    check_radial_pb(domain, f)?;
    let r = radial_grid(domain, eps, grid)?;
    if grid.extrapolate {
        let fine = robin_pb_on(domain, f, eps, refine_midpoints(&r))?;
        let coarse = robin_pb_on(domain, f, eps, r)?;
        return extrapolate(coarse, fine);
    }
    robin_pb_on(domain, f, eps, r)
}

fn robin_pb_on(domain: &DomainSpec, f: &Nonlinearity, eps: f64, r: Vec<f64>) -> Result<RadialSolveResult> {
    let mut mesh = Mesh::new(domain, r, eps)?;
    let scale = residual_scale(f, &mesh);
    let guess = vec![f.reference(); mesh.n()];
    let out = solve_on_mesh(&mut mesh, f, guess, scale)?;
    Ok(finish(Model::Pb, domain, &mesh, f, out, scale))
}

/// Grid with the midpoint of every interval inserted.
pub fn refine_midpoints(r: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * r.len() - 1);
    for w in r.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*r.last().unwrap());
    out
}

/// Richardson combination `(4 fine - coarse) / 3` on the coarse nodes. Solver
/// diagnostics report the worse of the two discrete solves.
pub fn extrapolate(coarse: RadialSolveResult, fine: RadialSolveResult) -> Result<RadialSolveResult> {
    let n = coarse.r.len();
    if fine.r.len() != 2 * n - 1 || (0..n).any(|j| fine.r[2 * j] != coarse.r[j]) {
        return Err(Error::InvalidInput("fine grid is not the midpoint refinement of the coarse grid".into()));
    }
    let mut out = coarse.clone();
    out.phi = (0..n).map(|j| (4.0 * fine.phi[2 * j] - coarse.phi[j]) / 3.0).collect();
    out.discretization_gap = Some((0..n).map(|j| (fine.phi[2 * j] - coarse.phi[j]).abs()).fold(0.0, f64::max));
    out.newton_iterations += fine.newton_iterations;
    out.residual = coarse.residual.max(fine.residual);
    out.conservation = coarse.conservation.max(fine.conservation);
    if let (Some(c), Some(f)) = (&coarse.ccpb, &fine.ccpb) {
        let integrals: Vec<f64> = c.integrals.iter().zip(&f.integrals).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
        let density = ccpb_density(&c.species, &integrals)?;
        out.reference = density.reference();
        out.density = Some(density);
        out.ccpb = Some(CcpbOracle {
            species: c.species.clone(),
            integrals,
            outer_iterations: c.outer_iterations + f.outer_iterations,
            anderson: c.anderson || f.anderson,
            final_change: c.final_change.max(f.final_change),
            neutrality: c.neutrality.max(f.neutrality),
        });
        let lo = out.domain.components.iter().map(|c| c.robin.phi_bd).fold(f64::INFINITY, f64::min);
        let hi = out.domain.components.iter().map(|c| c.robin.phi_bd).fold(f64::NEG_INFINITY, f64::max);
        out.checks.within_bounds = Some(out.phi.iter().all(|p| *p >= lo && *p <= hi));
        out.checks.star_inside = Some(out.reference > lo && out.reference < hi);
    }
    Ok(out)
}

/// Dirichlet problem on the ball of radius `radius` in `R^dimension`, with the
/// monotonicity and exponential-decay checks of the radial theory.
pub fn solve_radial_dirichlet(
    f: &Nonlinearity,
    dimension: usize,
    radius: f64,
    phi_bd: f64,
    eps: f64,
    grid: &GridOptions,
) -> Result<RadialSolveResult> {
    let domain = make_ball(dimension, radius, RobinData::dirichlet(phi_bd))?;
    let mut res = solve_radial_robin_pb(&domain, f, eps, grid)?;
    let star = f.reference();
    let dev = phi_bd - star;
    let monotone = if dev == 0.0 {
        res.phi.iter().all(|p| *p == star)
    } else {
        res.phi.windows(2).all(|w| dev.signum() * (w[1] - w[0]) > 0.0)
    };
    let rate = if dev == 0.0 { None } else { Some(decay_rate(f, star.min(phi_bd), star.max(phi_bd))?) };
    let bound = rate.map(|m| {
        res.r
            .iter()
            .zip(&res.phi)
            .all(|(r, p)| (p - star).abs() <= 2.0 * dev.abs() * (-m * (radius - r) / (8.0 * eps.sqrt())).exp())
    });
    res.checks.monotone = Some(monotone);
    res.checks.decay_bound = bound.or(Some(true));
    res.checks.decay_rate = rate;
    Ok(res)
}

/// Anderson mixing on `x -> g(x)` with memory `m`.
struct Anderson {
    m: usize,
    xs: Vec<Vec<f64>>,
    gs: Vec<Vec<f64>>,
}

impl Anderson {
    fn next(&mut self, x: &[f64], g: &[f64]) -> Vec<f64> {
        self.xs.push(x.to_vec());
        self.gs.push(g.to_vec());
        if self.xs.len() > self.m + 1 {
            self.xs.remove(0);
            self.gs.remove(0);
        }
        let k = self.xs.len();
        let res: Vec<Vec<f64>> =
            (0..k).map(|i| self.gs[i].iter().zip(&self.xs[i]).map(|(a, b)| a - b).collect()).collect();
        if k < 2 {
            return g.to_vec();
        }
        let dim = x.len();
        let cols = k - 1;
        let dr: Vec<Vec<f64>> = (0..cols).map(|j| (0..dim).map(|i| res[j + 1][i] - res[j][i]).collect()).collect();
        let dg: Vec<Vec<f64>> =
            (0..cols).map(|j| (0..dim).map(|i| self.gs[j + 1][i] - self.gs[j][i]).collect()).collect();
        let last = &res[k - 1];
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut a: Vec<Vec<f64>> = (0..cols).map(|p| (0..cols).map(|q| dot(&dr[p], &dr[q])).collect()).collect();
        let trace: f64 = (0..cols).map(|p| a[p][p]).sum();
        for (p, row) in a.iter_mut().enumerate() {
            row[p] += 1e-14 * trace;
        }
        let b: Vec<f64> = (0..cols).map(|p| dot(&dr[p], last)).collect();
        match numerics::solve_dense(a, b) {
            Some(gamma) => (0..dim).map(|i| g[i] - (0..cols).map(|j| gamma[j] * dg[j][i]).sum::<f64>()).collect(),
            None => {
                self.xs.clear();
                self.gs.clear();
                g.to_vec()
            }
        }
    }
}

fn ccpb_density(species: &[IonSpecies], integrals: &[f64]) -> Result<Nonlinearity> {
    let scaled: Vec<IonSpecies> =
        species.iter().zip(integrals).map(|(s, a)| IonSpecies::bulk(s.z, s.amount / a)).collect();
    make_classical_pb(&scaled)
}

fn grid_integrals(species: &[IonSpecies], vol: &[f64], phi: &[f64]) -> Vec<f64> {
    species.iter().map(|s| vol.iter().zip(phi).map(|(v, p)| v * (-s.z * p).exp()).sum()).collect()
}

/// Charge-conserving problem on an annulus: fixed-point iteration on the
/// vector of integrals `int exp(-z_i phi)`, switching to Anderson mixing when
/// plain iteration contracts too slowly.
pub fn solve_radial_ccpb(
    domain: &DomainSpec,
    species: &[IonSpecies],
    eps: f64,
    grid: &GridOptions,
) -> Result<RadialSolveResult> {
    domain.validate_ccpb()?;
    if !matches!(domain.shape, Shape::Annulus { .. }) {
        return Err(Error::InvalidInput("the charge-conserving oracle needs an annulus".into()));
    }
    if crate::nonlinearity::neutrality_defect(species) > 1e-12 {
        return Err(Error::NeutralityViolated(species.iter().map(|s| s.amount * s.z).sum()));
    }
    let r = radial_grid(domain, eps, grid)?;
    if grid.extrapolate {
        let fine = ccpb_on(domain, species, eps, refine_midpoints(&r))?;
        let coarse = ccpb_on(domain, species, eps, r)?;
        return extrapolate(coarse, fine);
    }
    ccpb_on(domain, species, eps, r)
}

fn ccpb_on(domain: &DomainSpec, species: &[IonSpecies], eps: f64, r: Vec<f64>) -> Result<RadialSolveResult> {
    let mut mesh = Mesh::new(domain, r, eps)?;
    let n = mesh.n();
    let total_area: f64 = domain.components.iter().map(|c| c.surface_area).sum();
    let mean_bd = domain.components.iter().map(|c| c.surface_area * c.robin.phi_bd).sum::<f64>() / total_area;
    let size: f64 = mesh.vol.iter().sum();
    let mut x: Vec<f64> = species.iter().map(|s| size.ln() - s.z * mean_bd).collect();
    let mut phi = vec![mean_bd; n];

    let mut anderson: Option<Anderson> = None;
    let mut previous_change = f64::INFINITY;
    let mut iterations = 0;
    let mut newton_total = 0;
    loop {
        let integrals: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let f = ccpb_density(species, &integrals)?;
        let scale = residual_scale(&f, &mesh);
        let out = solve_on_mesh(&mut mesh, &f, phi, scale)?;
        newton_total += out.iterations;
        let g: Vec<f64> = grid_integrals(species, &mesh.vol, &out.phi).iter().map(|a| a.ln()).collect();
        let change = g.iter().zip(&x).map(|(a, b)| (a - b).exp_m1().abs()).fold(0.0, f64::max);
        iterations += 1;
        if change <= OUTER_TOL {
            let charge_scale: f64 = species.iter().map(|s| s.amount * s.z.abs()).sum();
            let charge: f64 = mesh.vol.iter().zip(&out.phi).map(|(v, p)| v * f.f(*p)).sum();
            let lo = domain.components.iter().map(|c| c.robin.phi_bd).fold(f64::INFINITY, f64::min);
            let hi = domain.components.iter().map(|c| c.robin.phi_bd).fold(f64::NEG_INFINITY, f64::max);
            let star = f.reference();
            let within = out.phi.iter().all(|p| *p >= lo && *p <= hi);
            let mut res = finish(Model::Ccpb, domain, &mesh, &f, out, scale);
            res.newton_iterations = newton_total;
            res.checks.within_bounds = Some(within);
            res.checks.star_inside = Some(star > lo && star < hi);
            res.ccpb = Some(CcpbOracle {
                species: species.to_vec(),
                integrals,
                outer_iterations: iterations,
                anderson: anderson.is_some(),
                final_change: change,
                neutrality: charge.abs() / charge_scale,
            });
            return Ok(res);
        }
        if iterations >= MAX_OUTER {
            return Err(Error::FixedPointStall { iterations, change });
        }
        if anderson.is_none() && iterations >= 2 && change > 0.5 * previous_change {
            anderson = Some(Anderson { m: species.len().max(2), xs: Vec::new(), gs: Vec::new() });
        }
        previous_change = change;
        x = match anderson.as_mut() {
            Some(acc) => acc.next(&x, &g),
            None => g,
        };
        phi = out.phi;
    }
}

/// Comparison window: stretched depth `t` of Region I and the Region II exponent `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareOptions {
    pub t: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCharges {
    pub params: RegionParams,
    /// Oracle charge in Region I.
    pub region_i: f64,
    /// Oracle charge in Region II.
    pub region_ii: f64,
    pub formula_i: f64,
    pub formula_ii: f64,
    /// Oracle-side `region_ii / region_i`.
    pub ratio: f64,
    pub envelope: Option<Envelope>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentComparison {
    pub k: usize,
    pub nodes: usize,
    /// `sup |phi - u|`.
    pub e1: f64,
    /// `sup |phi - u - sqrt(eps) (...)| / sqrt(eps)`.
    pub e2: f64,
    /// `sup |sqrt(eps) E - u'|` for the normal field coefficient `E`.
    pub field_e1: f64,
    /// `sup |E - (two-term field)|`.
    pub field_e2: f64,
    /// Present when the region parameters are consistent at this `eps`.
    pub charges: Option<RegionCharges>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model: Model,
    pub eps: f64,
    pub options: CompareOptions,
    pub components: Vec<ComponentComparison>,
    /// `|int f(phi)|`, normalized by `sum m_i |z_i|` for CCPB.
    pub neutrality: f64,
    /// `(phi_eps* - phi0*) / sqrt(eps)` for CCPB.
    pub drift: Option<f64>,
    pub q: Option<f64>,
}

/// Boundary radius and outward direction sign of `e_r` for component `k`.
fn boundary_of(domain: &DomainSpec, k: usize) -> Result<(f64, f64)> {
    let c = domain.component(k)?;
    let (inner, outer) = extent(domain)?;
    match c.orientation {
        Orientation::Outer => Ok((outer, 1.0)),
        Orientation::Hole => Ok((inner.ok_or(Error::RegionEmpty)?, -1.0)),
    }
}

/// `int |S_r| f(phi(r)) dr` over `[a, b]` with cubic Hermite interpolation of phi.
fn band_charge(res: &RadialSolveResult, f: &Nonlinearity, slope: &[f64], a: f64, b: f64) -> f64 {
    let w = unit_sphere_area(res.domain.dimension);
    let d = res.domain.dimension as i32;
    let r = &res.r;
    let mut total = 0.0;
    for j in 0..r.len() - 1 {
        let (lo, hi) = (r[j].max(a), r[j + 1].min(b));
        if !(hi > lo) {
            continue;
        }
        let h = r[j + 1] - r[j];
        let (y0, y1, d0, d1) = (res.phi[j], res.phi[j + 1], slope[j] * h, slope[j + 1] * h);
        total += numerics::panel_rule().integrate(lo, hi, |x| {
            let s = (x - r[j]) / h;
            let (s2, s3) = (s * s, s * s * s);
            let p = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
                + (s3 - 2.0 * s2 + s) * d0
                + (-2.0 * s3 + 3.0 * s2) * y1
                + (s3 - s2) * d1;
            w * x.powi(d - 1) * f.f(p)
        });
    }
    total
}

/// Log-linear fit of `|f(phi)|` against `t` over Region II, with the amplitude
/// raised until the envelope covers every node.
fn fit_envelope(ts: &[f64], values: &[f64]) -> Option<Envelope> {
    let pts: Vec<(f64, f64)> =
        ts.iter().zip(values).filter(|(_, v)| v.abs() > 0.0).map(|(t, v)| (*t, v.abs().ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let rate = -sxy / sxx;
    if !(rate > 0.0) {
        return None;
    }
    let amplitude = pts.iter().map(|(t, y)| (y + rate * t).exp()).fold(0.0, f64::max);
    Some(Envelope { rate, amplitude })
}

/// Errors of the one- and two-term expansions against an oracle solution, per component.
pub fn compare_expansion(
    oracle: &RadialSolveResult,
    expansions: &[Layers],
    options: CompareOptions,
) -> Result<ComparisonReport> {
    if expansions.is_empty() {
        return Err(Error::InvalidInput("no expansions to compare".into()));
    }
    if !(options.t > 0.0) {
        return Err(Error::InvalidInput(format!("window depth must be positive, got {}", options.t)));
    }
    let eps = oracle.eps;
    let se = eps.sqrt();
    let dom = &oracle.domain;
    let f = oracle.density()?;
    let slope = oracle.gradient();
    let params = RegionParams::new(eps, options.beta, options.t).ok();
    let mut components = Vec::new();
    for l in expansions {
        if l.model != oracle.model {
            return Err(Error::ModelProfileMismatch(format!(
                "{:?} layers against a {:?} oracle",
                l.model, oracle.model
            )));
        }
        let c = dom.component(l.k)?;
        let (rb, dir) = boundary_of(dom, l.k)?;
        let h = c.mean_curvature(0);
        let mut q = ExpansionQuery { model: l.model, k: l.k, h, dimension: dom.dimension, t: 0.0, eps, order: 2 };
        let (mut e1, mut e2, mut fe1, mut fe2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut nodes = 0;
        for j in 0..oracle.r.len() {
            let t = dir * (rb - oracle.r[j]) / se;
            if !(t >= 0.0 && t <= options.t) {
                continue;
            }
            nodes += 1;
            q.t = t;
            q.order = 1;
            let u = potential(&q, l)?;
            let du = field_normal_component(&q, l)? * se;
            q.order = 2;
            let two = potential(&q, l)?;
            let field_two = field_normal_component(&q, l)?;
            let field = -dir * slope[j];
            e1 = e1.max((oracle.phi[j] - u).abs());
            e2 = e2.max((oracle.phi[j] - two).abs() / se);
            fe1 = fe1.max((se * field - du).abs());
            fe2 = fe2.max((field - field_two).abs());
        }
        if nodes == 0 {
            return Err(Error::RegionEmpty);
        }
        let charges = match params {
            Some(p) => {
                let (w1, w2) = (p.inner_width(), p.outer_width());
                let (band_i, band_ii) =
                    if dir > 0.0 { ((rb - w1, rb), (rb - w2, rb - w1)) } else { ((rb, rb + w1), (rb + w1, rb + w2)) };
                let region_i = band_charge(oracle, f, &slope, band_i.0, band_i.1);
                let region_ii = band_charge(oracle, f, &slope, band_ii.0, band_ii.1);
                let formula = crate::asymptotics::region_charge(dom, &p, l, None)?;
                let (ts, vals): (Vec<f64>, Vec<f64>) = oracle
                    .r
                    .iter()
                    .zip(&oracle.phi)
                    .map(|(r, phi)| (dir * (rb - r) / se, f.f(*phi)))
                    .filter(|(t, _)| *t >= p.t && *t <= p.outer_stretched())
                    .unzip();
                Some(RegionCharges {
                    params: p,
                    region_i,
                    region_ii,
                    formula_i: formula.region_i,
                    formula_ii: formula.region_ii,
                    ratio: region_ii / region_i,
                    envelope: fit_envelope(&ts, &vals),
                })
            }
            None => None,
        };
        components.push(ComponentComparison { k: l.k, nodes, e1, e2, field_e1: fe1, field_e2: fe2, charges });
    }
    let (neutrality, drift, q) = match (&oracle.ccpb, oracle.model) {
        (Some(c), Model::Ccpb) => {
            let l = &expansions[0];
            let drift = (oracle.reference - l.u.meta.reference) / se;
            (c.neutrality, Some(drift), l.w.as_ref().and_then(|w| w.meta.q))
        }
        _ => (oracle.conservation, None, None),
    };
    Ok(ComparisonReport { model: oracle.model, eps, options, components, neutrality, drift, q })
}
