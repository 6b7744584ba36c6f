//! Charge-density functions `f`, their derivatives and antiderivatives.
//!
//! Every built-in nonlinearity is an exponential sum
//! `f(phi) = sum_i a_i z_i exp(-z_i (phi - s))` around a shift `s` that is the
//! reference potential. Monotone provenances are stored relative to their own
//! zero so that `f(s) = 0` and `F(s) = 0` hold exactly and `F < 0` elsewhere.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics;

/// What the `amount` of a species denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    BulkConcentration,
    TotalMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonSpecies {
    pub z: f64,
    pub amount: f64,
    pub role: Role,
}

impl IonSpecies {
    pub fn bulk(z: f64, c: f64) -> Self {
        Self { z, amount: c, role: Role::BulkConcentration }
    }

    pub fn mass(z: f64, m: f64) -> Self {
        Self { z, amount: m, role: Role::TotalMass }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Classical,
    F0,
    Fhat1,
    F1,
    Custom,
}

impl Provenance {
    pub fn is_monotone(self) -> bool {
        !matches!(self, Provenance::Fhat1 | Provenance::F1)
    }
}

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// User-supplied evaluators for a custom monotone nonlinearity.
pub struct CustomFns {
    pub f: Box<ScalarFn>,
    pub df: Box<ScalarFn>,
    pub antiderivative: Option<Box<ScalarFn>>,
}

#[derive(Debug, Clone, PartialEq)]
struct ExpSum {
    a: Vec<f64>,
    z: Vec<f64>,
    /// Constant term `sum a_i z_i`, kept only for non-monotone provenances.
    linear: f64,
}

#[derive(Clone)]
enum Repr {
    Exp(ExpSum),
    Custom(Arc<CustomFns>),
}

/// A charge-density function with derivative, antiderivative and reference.
#[derive(Clone)]
pub struct Nonlinearity {
    repr: Repr,
    reference: f64,
    provenance: Provenance,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = fm.debug_struct("Nonlinearity");
        d.field("provenance", &self.provenance).field("reference", &self.reference);
        if let Repr::Exp(e) = &self.repr {
            d.field("a", &e.a).field("z", &e.z);
        }
        d.finish()
    }
}

/// `sum b_i exp(x_i)`, factoring out the dominant exponent when it is large.
fn stable_exp_sum(b: &[f64], x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m > 30.0 {
        let s: f64 = b.iter().zip(x).map(|(bi, xi)| bi * (xi - m).exp()).sum();
        if s == 0.0 {
            0.0
        } else {
            s * m.exp()
        }
    } else {
        b.iter().zip(x).map(|(bi, xi)| bi * xi.exp()).sum()
    }
}

/// `exp(-y) - 1 + y` without cancellation for small `y`.
fn g_fun(y: f64) -> f64 {
    if y.abs() < 0.1 {
        let mut term = y * y / 2.0;
        let mut sum = term;
        for k in 3..16 {
            term *= -y / k as f64;
            sum += term;
        }
        sum
    } else {
        (-y).exp_m1() + y
    }
}

impl ExpSum {
    fn exps(&self, delta: f64) -> Vec<f64> {
        self.z.iter().map(|z| -z * delta).collect()
    }

    fn max_exp(x: &[f64]) -> f64 {
        x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn f(&self, delta: f64) -> f64 {
        let x = self.exps(delta);
        let az: Vec<f64> = self.a.iter().zip(&self.z).map(|(a, z)| a * z).collect();
        if Self::max_exp(&x) > 30.0 {
            self.linear + stable_exp_sum(&az, &x) - az.iter().sum::<f64>()
        } else {
            self.linear + az.iter().zip(&x).map(|(b, xi)| b * xi.exp_m1()).sum::<f64>()
        }
    }

    fn df(&self, delta: f64) -> f64 {
        let x = self.exps(delta);
        let azz: Vec<f64> = self.a.iter().zip(&self.z).map(|(a, z)| a * z * z).collect();
        -stable_exp_sum(&azz, &x)
    }

    fn big_f(&self, delta: f64) -> f64 {
        let x = self.exps(delta);
        let g = if Self::max_exp(&x) > 30.0 {
            stable_exp_sum(&self.a, &x)
                - self.a.iter().sum::<f64>()
                - self.a.iter().zip(&x).map(|(a, xi)| a * xi).sum::<f64>()
        } else {
            self.a.iter().zip(&self.z).map(|(a, z)| a * g_fun(z * delta)).sum()
        };
        self.linear * delta - g
    }
}

impl Nonlinearity {
    pub fn f(&self, phi: f64) -> f64 {
        match &self.repr {
            Repr::Exp(e) => e.f(phi - self.reference),
            Repr::Custom(c) => (c.f)(phi),
        }
    }

    pub fn df(&self, phi: f64) -> f64 {
        match &self.repr {
            Repr::Exp(e) => e.df(phi - self.reference),
            Repr::Custom(c) => (c.df)(phi),
        }
    }

    /// Antiderivative `F(phi) = int_{phi*}^{phi} f`.
    pub fn antiderivative(&self, phi: f64) -> f64 {
        match &self.repr {
            Repr::Exp(e) => e.big_f(phi - self.reference),
            Repr::Custom(c) => match &c.antiderivative {
                Some(big_f) => big_f(phi) - big_f(self.reference),
                None => numerics::integrate(&|s| (c.f)(s), self.reference, phi, 1e-13),
            },
        }
    }

    /// `f(phi* + delta)` evaluated without forming `phi* + delta`.
    pub fn f_dev(&self, delta: f64) -> f64 {
        match &self.repr {
            Repr::Exp(e) => e.f(delta),
            Repr::Custom(c) => (c.f)(self.reference + delta),
        }
    }

    pub fn df_dev(&self, delta: f64) -> f64 {
        match &self.repr {
            Repr::Exp(e) => e.df(delta),
            Repr::Custom(c) => (c.df)(self.reference + delta),
        }
    }

    pub fn antiderivative_dev(&self, delta: f64) -> f64 {
        match &self.repr {
            Repr::Exp(e) => e.big_f(delta),
            Repr::Custom(_) => self.antiderivative(self.reference + delta),
        }
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_monotone(&self) -> bool {
        self.provenance.is_monotone()
    }

    /// Coefficients `(a_i, z_i)` of the exponential-sum form, if any.
    pub fn exp_terms(&self) -> Option<(&[f64], &[f64])> {
        match &self.repr {
            Repr::Exp(e) => Some((&e.a, &e.z)),
            Repr::Custom(_) => None,
        }
    }
}

fn check_species(species: &[IonSpecies]) -> Result<()> {
    if species.is_empty() {
        return Err(Error::InvalidInput("empty species list".into()));
    }
    for s in species {
        if s.z == 0.0 || !s.z.is_finite() {
            return Err(Error::InvalidInput(format!("valence must be nonzero, got {}", s.z)));
        }
        if !(s.amount > 0.0) || !s.amount.is_finite() {
            return Err(Error::InvalidInput(format!("amount must be positive, got {}", s.amount)));
        }
    }
    if species.iter().all(|s| s.z > 0.0) || species.iter().all(|s| s.z < 0.0) {
        return Err(Error::AllSameSignValences);
    }
    Ok(())
}

/// Relative neutrality defect `|sum m z| / sum m |z|`.
pub fn neutrality_defect(species: &[IonSpecies]) -> f64 {
    let s: f64 = species.iter().map(|s| s.amount * s.z).sum();
    let n: f64 = species.iter().map(|s| s.amount * s.z.abs()).sum();
    s.abs() / n
}

fn check_neutral(species: &[IonSpecies]) -> Result<()> {
    check_species(species)?;
    if neutrality_defect(species) > 1e-12 {
        return Err(Error::NeutralityViolated(species.iter().map(|s| s.amount * s.z).sum()));
    }
    Ok(())
}

/// Root of a strictly decreasing `f`: bracket by geometric expansion from 0,
/// bisect to width 1e-13, then at most three Newton polish steps.
fn decreasing_root(f: &dyn Fn(f64) -> f64, df: &dyn Fn(f64) -> f64) -> Result<f64> {
    let mut half = 1.0;
    let mut bracket = None;
    for _ in 0..64 {
        let (flo, fhi) = (f(-half), f(half));
        if flo.is_finite() && fhi.is_finite() && flo >= 0.0 && fhi <= 0.0 {
            bracket = Some((-half, half));
            break;
        }
        half *= 2.0;
    }
    let (lo, hi) = bracket.ok_or(Error::NoSignChange)?;
    let mut x = numerics::bisect(f, lo, hi, 1e-13).map_err(|_| Error::NoSignChange)?;
    for _ in 0..3 {
        let (fx, dfx) = (f(x), df(x));
        if fx == 0.0 || dfx == 0.0 {
            break;
        }
        let y = x - fx / dfx;
        if f(y).abs() < fx.abs() {
            x = y;
        } else {
            break;
        }
    }
    Ok(x)
}

/// Classical PB charge density `f(phi) = sum z_i c_i exp(-z_i phi)`.
pub fn make_classical_pb(species: &[IonSpecies]) -> Result<Nonlinearity> {
    check_species(species)?;
    let raw = ExpSum {
        a: species.iter().map(|s| s.amount).collect(),
        z: species.iter().map(|s| s.z).collect(),
        linear: species.iter().map(|s| s.amount * s.z).sum(),
    };
    let star = decreasing_root(&|p| raw.f(p), &|p| raw.df(p))?;
    let a = species.iter().map(|s| s.amount * (-s.z * star).exp()).collect();
    Ok(Nonlinearity {
        repr: Repr::Exp(ExpSum { a, z: raw.z, linear: 0.0 }),
        reference: star,
        provenance: Provenance::Classical,
    })
}

/// Leading-order CCPB density `f0(phi) = |Omega|^-1 sum m_i z_i exp(-z_i (phi - phi0))`.
pub fn make_f0(species: &[IonSpecies], volume: f64, phi0_star: f64) -> Result<Nonlinearity> {
    check_neutral(species)?;
    if !(volume > 0.0) {
        return Err(Error::InvalidInput(format!("volume must be positive, got {volume}")));
    }
    Ok(Nonlinearity {
        repr: Repr::Exp(ExpSum {
            a: species.iter().map(|s| s.amount / volume).collect(),
            z: species.iter().map(|s| s.z).collect(),
            linear: 0.0,
        }),
        reference: phi0_star,
        provenance: Provenance::F0,
    })
}

/// First-order mass correction density built from signed weights `mhat`.
pub fn make_fhat1(species: &[IonSpecies], volume: f64, phi0_star: f64, mhat: &[f64]) -> Result<Nonlinearity> {
    check_neutral(species)?;
    if mhat.len() != species.len() {
        return Err(Error::InvalidInput("mhat length differs from species count".into()));
    }
    if !(volume > 0.0) {
        return Err(Error::InvalidInput(format!("volume must be positive, got {volume}")));
    }
    let a: Vec<f64> = mhat.iter().map(|m| m / volume).collect();
    let z: Vec<f64> = species.iter().map(|s| s.z).collect();
    let linear = a.iter().zip(&z).map(|(a, z)| a * z).sum();
    Ok(Nonlinearity { repr: Repr::Exp(ExpSum { a, z, linear }), reference: phi0_star, provenance: Provenance::Fhat1 })
}

/// `f1 = -Q f0' + fhat1`.
pub fn make_f1(f0: &Nonlinearity, fhat1: &Nonlinearity, q: f64) -> Result<Nonlinearity> {
    if f0.reference != fhat1.reference {
        return Err(Error::MismatchedReference(f0.reference, fhat1.reference));
    }
    let (Repr::Exp(e0), Repr::Exp(e1)) = (&f0.repr, &fhat1.repr) else {
        return Err(Error::UnsupportedProvenance(Provenance::Custom));
    };
    if e0.z != e1.z {
        return Err(Error::InvalidInput("f0 and fhat1 have different valences".into()));
    }
    let a: Vec<f64> = e0.a.iter().zip(&e0.z).zip(&e1.a).map(|((a0, z), a1)| q * a0 * z + a1).collect();
    let linear = a.iter().zip(&e0.z).map(|(a, z)| a * z).sum();
    Ok(Nonlinearity {
        repr: Repr::Exp(ExpSum { a, z: e0.z.clone(), linear }),
        reference: f0.reference,
        provenance: Provenance::F1,
    })
}

/// Custom strictly decreasing nonlinearity; the reference is located numerically.
pub fn make_custom(fns: CustomFns) -> Result<Nonlinearity> {
    let star = decreasing_root(&*fns.f, &*fns.df)?;
    Ok(Nonlinearity { repr: Repr::Custom(Arc::new(fns)), reference: star, provenance: Provenance::Custom })
}

/// Locates the zero of a monotone nonlinearity.
pub fn find_reference_potential(f: &Nonlinearity) -> Result<f64> {
    if !f.is_monotone() {
        return Err(Error::UnsupportedProvenance(f.provenance));
    }
    decreasing_root(&|p| f.f(p), &|p| f.df(p))
}

/// `m_f = sqrt(-max f')` over `[lo, hi]`.
pub fn decay_rate(f: &Nonlinearity, lo: f64, hi: f64) -> Result<f64> {
    if !(lo <= hi) {
        return Err(Error::InvalidInput(format!("decay_rate interval [{lo}, {hi}] is empty")));
    }
    let (x, best) = if lo == hi {
        (lo, f.df(lo))
    } else {
        let n = 2048;
        let h = (hi - lo) / (n - 1) as f64;
        let node = |i: usize| if i == n - 1 { hi } else { lo + h * i as f64 };
        let (imax, vmax) =
            (0..n).map(|i| (i, f.df(node(i)))).fold((0, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
        let a = node(imax.saturating_sub(1));
        let b = node((imax + 1).min(n - 1));
        let (xg, vg) = numerics::golden_max(|p| f.df(p), a, b, 1e-12 * (1.0 + hi.abs().max(lo.abs())));
        if vg > vmax {
            (xg, vg)
        } else {
            (node(imax), vmax)
        }
    };
    if !(best < 0.0) {
        return Err(Error::NonDecreasingDetected(x));
    }
    Ok((-best).sqrt())
}
