//! Global constants of the charge-conserving problem: the limiting bulk
//! potential, the first-order mass corrections, the bulk drift `Q`, and the
//! bulk-concentration expansions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::DomainSpec;
use crate::nonlinearity::{make_f0, make_f1, make_fhat1, neutrality_defect, IonSpecies, Nonlinearity};
use crate::numerics;
use crate::profiles::{
    boundary_state, energy_integral, flux_by_time_quadrature, solve_theta, solve_u, solve_v, solve_w, speed, Profile,
    ProfileOptions,
};

/// Layer profiles attached to one boundary component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentProfiles {
    pub u: Profile,
    pub v: Profile,
    pub theta: Profile,
    pub w: Profile,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CcpbDiagnostics {
    /// Max over components of the boundary-value equation residual.
    pub boundary_residual: f64,
    /// Area-weighted flux balance across components.
    pub balance_residual: f64,
    /// Relative residual of the curvature/mass identity that `Q` enforces.
    pub identity_residual: f64,
    /// `|sum mhat_i z_i| / sum |mhat_i z_i|`.
    pub mhat_charge: f64,
    /// The balance residual changed sign once and monotonically on a 64-point scan.
    pub scan_monotone: bool,
    /// Max relative gap between potential-space and time-space `int u'^2`.
    pub energy_cross_check: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcpbConstants {
    pub phi0_star: f64,
    pub u0_per_boundary: Vec<f64>,
    pub q: f64,
    pub mhat: Vec<f64>,
    pub bulk_conc0: Vec<f64>,
    pub species: Vec<IonSpecies>,
    pub volume: f64,
    pub dimension: usize,
    pub diagnostics: CcpbDiagnostics,
    #[serde(skip)]
    pub profiles: Vec<ComponentProfiles>,
    #[serde(skip)]
    pub f0: Option<Nonlinearity>,
    #[serde(skip)]
    pub f1: Option<Nonlinearity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phi0Solution {
    pub phi0_star: f64,
    pub u0: Vec<f64>,
    pub du0: Vec<f64>,
    pub boundary_residual: f64,
    pub balance_residual: f64,
    pub scan_monotone: bool,
}

fn check_species(species: &[IonSpecies]) -> Result<()> {
    let defect = neutrality_defect(species);
    if !(defect <= 1e-12) {
        return Err(Error::NeutralityViolated(species.iter().map(|s| s.amount * s.z).sum()));
    }
    Ok(())
}

/// Boundary states of every component for the limiting density with bulk potential `s`.
fn states(domain: &DomainSpec, species: &[IonSpecies], s: f64, exec: Execution) -> Result<Vec<(f64, f64)>> {
    let f0 = make_f0(species, domain.volume, s)?;
    exec.map(&domain.components, |c| boundary_state(&f0, c.robin)).into_iter().collect()
}

/// `sum_k |dOmega_k| (phi_bd,k - u_k(0)) / gamma_k`, with `-u_k'(0)` standing in when `gamma_k = 0`.
fn balance(domain: &DomainSpec, st: &[(f64, f64)], s: f64) -> f64 {
    domain
        .components
        .iter()
        .zip(st)
        .map(|(c, (d0, du0))| {
            let g = c.robin.gamma;
            let flux = if g > 0.0 { (c.robin.phi_bd - (s + d0)) / g } else { -du0 };
            c.surface_area * flux
        })
        .sum()
}

/// Limiting bulk potential and boundary values of the leading layers.
pub fn solve_phi0(domain: &DomainSpec, species: &[IonSpecies], exec: Execution) -> Result<Phi0Solution> {
    check_species(species)?;
    domain.validate_ccpb()?;
    let lo = domain.components.iter().map(|c| c.robin.phi_bd).fold(f64::INFINITY, f64::min);
    let hi = domain.components.iter().map(|c| c.robin.phi_bd).fold(f64::NEG_INFINITY, f64::max);
    let residual = |s: f64| match states(domain, species, s, exec) {
        Ok(st) => balance(domain, &st, s),
        Err(_) => f64::NAN,
    };
    let phi0 = numerics::bisect(residual, lo, hi, 0.0).map_err(|e| Error::BracketFailure(e.to_string()))?;

    let scan: Vec<f64> = (0..64).map(|j| residual(lo + (hi - lo) * j as f64 / 63.0)).collect();
    let scan_monotone = scan.windows(2).all(|w| w[1] < w[0]) && scan[0] > 0.0 && scan[63] < 0.0;

    let st = states(domain, species, phi0, exec)?;
    let f0 = make_f0(species, domain.volume, phi0)?;
    let boundary_residual = domain
        .components
        .iter()
        .zip(&st)
        .map(|(c, (d0, _))| {
            let u0 = phi0 + d0;
            let sign = (c.robin.phi_bd - phi0).signum();
            (c.robin.phi_bd - u0 - sign * c.robin.gamma * speed(&f0, *d0)).abs()
        })
        .fold(0.0, f64::max);
    Ok(Phi0Solution {
        phi0_star: phi0,
        u0: st.iter().map(|(d0, _)| phi0 + d0).collect(),
        du0: st.iter().map(|(_, p)| *p).collect(),
        boundary_residual,
        balance_residual: balance(domain, &st, phi0).abs(),
        scan_monotone,
    })
}

/// First-order mass corrections
/// `mhat_i = (m_i/|Omega|) sum_k |dOmega_k| int_0^inf [1 - exp(-z_i (u_k - phi0*))] ds`,
/// with each integral taken in the potential variable.
pub fn compute_mhat(domain: &DomainSpec, species: &[IonSpecies], f0: &Nonlinearity, u: &[Profile]) -> Result<Vec<f64>> {
    if u.len() != domain.components.len() {
        return Err(Error::InvalidInput("one u-profile per boundary component expected".into()));
    }
    let mut mhat = vec![0.0; species.len()];
    for (c, uk) in domain.components.iter().zip(u) {
        let d0 = uk.deviation[0];
        if d0 == 0.0 {
            continue;
        }
        let s = d0.signum();
        for (i, sp) in species.iter().enumerate() {
            let g = |d: f64| -(-sp.z * d).exp_m1() / (-s * speed(f0, d));
            let integral = numerics::integrate(&g, d0, 0.0, 1e-14);
            mhat[i] += sp.amount / domain.volume * c.surface_area * integral;
        }
    }
    Ok(mhat)
}

/// Per-component pieces entering `Q`.
struct QTerms {
    area: f64,
    curvature_integral: f64,
    energy: f64,
    f0_at_u0: f64,
    fhat1_at_u0: f64,
    denominator: f64,
}

fn q_terms(domain: &DomainSpec, f0: &Nonlinearity, fhat1: &Nonlinearity, u: &[Profile]) -> Result<Vec<QTerms>> {
    domain
        .components
        .iter()
        .zip(u)
        .map(|(c, uk)| {
            let d0 = uk.deviation[0];
            let f0_at_u0 = f0.f_dev(d0);
            Ok(QTerms {
                area: c.surface_area,
                curvature_integral: c.curvature_integral,
                energy: energy_integral(f0, uk)?,
                f0_at_u0,
                fhat1_at_u0: fhat1.antiderivative_dev(d0),
                denominator: uk.deriv[0] + c.robin.gamma * f0_at_u0,
            })
        })
        .collect()
}

/// Bulk drift `Q`: ratio of area/curvature-weighted sums over components.
pub fn compute_q(domain: &DomainSpec, f0: &Nonlinearity, fhat1: &Nonlinearity, u: &[Profile]) -> Result<f64> {
    let dm1 = domain.dimension as f64 - 1.0;
    let terms = q_terms(domain, f0, fhat1, u)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for t in &terms {
        if t.denominator == 0.0 {
            continue;
        }
        num += (t.area * t.fhat1_at_u0 + dm1 * t.curvature_integral * t.energy) / t.denominator;
        den += t.area * t.f0_at_u0 / t.denominator;
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateDenominator);
    }
    Ok(num / den)
}

/// Full set of constants with profiles and diagnostics.
pub fn ccpb_constants(
    domain: &DomainSpec,
    species: &[IonSpecies],
    opts: &ProfileOptions,
    exec: Execution,
) -> Result<CcpbConstants> {
    let sol = solve_phi0(domain, species, exec)?;
    let phi0 = sol.phi0_star;
    let f0 = make_f0(species, domain.volume, phi0)?;
    let layers: Vec<(Profile, Profile, Profile)> = exec
        .map(&domain.components, |c| -> Result<_> {
            let u = solve_u(&f0, c.robin, opts)?;
            let v = solve_v(&u, &f0, c.robin)?;
            let th = solve_theta(&u, &f0, c.robin)?;
            Ok((u, v, th))
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let us: Vec<Profile> = layers.iter().map(|l| l.0.clone()).collect();
    let mhat = compute_mhat(domain, species, &f0, &us)?;
    let fhat1 = make_fhat1(species, domain.volume, phi0, &mhat)?;
    let q = compute_q(domain, &f0, &fhat1, &us)?;
    let f1 = make_f1(&f0, &fhat1, q)?;
    let ws: Vec<Profile> = exec
        .map_range(domain.components.len(), |k| solve_w(&us[k], &f0, &f1, q, domain.components[k].robin))
        .into_iter()
        .collect::<Result<_>>()?;

    let dm1 = domain.dimension as f64 - 1.0;
    let mut identity = 0.0;
    let mut identity_scale = 0.0;
    let mut energy_gap: f64 = 0.0;
    for (k, c) in domain.components.iter().enumerate() {
        let a = dm1 * c.curvature_integral * layers[k].1.deriv[0];
        let b = c.surface_area * ws[k].deriv[0];
        identity += a + b;
        identity_scale += a.abs() + b.abs();
        let e = layers[k].1.meta.energy.unwrap_or(0.0);
        if e > 0.0 {
            let by_time = flux_by_time_quadrature(&f0, &us[k])?[0];
            energy_gap = energy_gap.max((by_time - e).abs() / e);
        }
    }
    let charge: f64 = mhat.iter().zip(species).map(|(m, s)| m * s.z).sum();
    let charge_scale: f64 = mhat.iter().zip(species).map(|(m, s)| (m * s.z).abs()).sum();

    let profiles = layers.into_iter().zip(ws).map(|((u, v, theta), w)| ComponentProfiles { u, v, theta, w }).collect();
    Ok(CcpbConstants {
        phi0_star: phi0,
        u0_per_boundary: sol.u0.clone(),
        q,
        bulk_conc0: species.iter().map(|s| s.amount * (s.z * phi0).exp() / domain.volume).collect(),
        mhat,
        species: species.to_vec(),
        volume: domain.volume,
        dimension: domain.dimension,
        diagnostics: CcpbDiagnostics {
            boundary_residual: sol.boundary_residual,
            balance_residual: sol.balance_residual,
            identity_residual: if identity_scale > 0.0 { identity.abs() / identity_scale } else { 0.0 },
            mhat_charge: if charge_scale > 0.0 { charge.abs() / charge_scale } else { 0.0 },
            scan_monotone: sol.scan_monotone,
            energy_cross_check: energy_gap,
        },
        profiles,
        f0: Some(f0),
        f1: Some(f1),
    })
}

/// Two-term expansions for one species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BulkTerm {
    pub z: f64,
    /// `c_i^b`.
    pub conc0: f64,
    /// Coefficient of `sqrt(eps)` in the bulk concentration.
    pub conc1: f64,
    /// `int_Omega exp(-z_i phi)` at leading order, `|Omega| exp(-z_i phi0*)`.
    pub integral0: f64,
    /// Coefficient of `sqrt(eps)` in that integral.
    pub integral1: f64,
    pub conc_at_eps: f64,
    pub integral_at_eps: f64,
}

pub fn bulk_expansion(c: &CcpbConstants, eps: f64) -> Result<Vec<BulkTerm>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let se = eps.sqrt();
    Ok(c.species
        .iter()
        .zip(&c.mhat)
        .map(|(s, mh)| {
            let e = (s.z * c.phi0_star).exp();
            let conc0 = s.amount * e / c.volume;
            let conc1 = (s.amount * s.z * c.q * e + mh * e) / c.volume;
            let integral0 = c.volume / e;
            let integral1 = -integral0 * (s.z * c.q + mh / s.amount);
            BulkTerm {
                z: s.z,
                conc0,
                conc1,
                integral0,
                integral1,
                conc_at_eps: conc0 + se * conc1,
                integral_at_eps: integral0 + se * integral1,
            }
        })
        .collect())
}
