//! Evaluators for the two-term boundary-layer expansions: potential, normal
//! field, charge density, Maxwell traction, and region-wise total charge.

use serde::{Deserialize, Serialize};

use crate::ccpb::CcpbConstants;
use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, RegionParams};
use crate::nonlinearity::Nonlinearity;
use crate::profiles::{solve_u, solve_v, Profile, ProfileOptions, RobinData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Pb,
    Ccpb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Potential,
    Field,
    Density,
    Traction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionQuery {
    pub model: Model,
    pub k: usize,
    /// Mean curvature at the boundary point.
    pub h: f64,
    pub dimension: usize,
    pub t: f64,
    pub eps: f64,
    pub order: u8,
}

impl ExpansionQuery {
    fn check(&self) -> Result<()> {
        if !(self.eps > 0.0) || !(self.order == 1 || self.order == 2) || !(self.t >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "bad query: eps={}, order={}, t={}",
                self.eps, self.order, self.t
            )));
        }
        Ok(())
    }

    fn curvature_weight(&self) -> f64 {
        (self.dimension as f64 - 1.0) * self.h
    }
}

/// Layer profiles of one boundary component together with the densities they solve.
#[derive(Debug, Clone)]
pub struct Layers {
    pub model: Model,
    pub k: usize,
    pub u: Profile,
    pub v: Profile,
    pub w: Option<Profile>,
    /// `f` for PB, `f0` for CCPB.
    pub f: Nonlinearity,
    pub f1: Option<Nonlinearity>,
}

impl Layers {
    pub fn pb(k: usize, f: &Nonlinearity, robin: RobinData, opts: &ProfileOptions) -> Result<Self> {
        let u = solve_u(f, robin, opts)?;
        let v = solve_v(&u, f, robin)?;
        Ok(Self { model: Model::Pb, k, u, v, w: None, f: f.clone(), f1: None })
    }

    pub fn ccpb(c: &CcpbConstants, k: usize) -> Result<Self> {
        let p =
            c.profiles.get(k).ok_or_else(|| Error::ModelProfileMismatch(format!("no profiles for component {k}")))?;
        let (f0, f1) = match (&c.f0, &c.f1) {
            (Some(a), Some(b)) => (a.clone(), b.clone()),
            _ => return Err(Error::ModelProfileMismatch("constants carry no densities".into())),
        };
        Ok(Self { model: Model::Ccpb, k, u: p.u.clone(), v: p.v.clone(), w: Some(p.w.clone()), f: f0, f1: Some(f1) })
    }

    fn check(&self, q: &ExpansionQuery) -> Result<()> {
        q.check()?;
        if q.model != self.model || q.k != self.k {
            return Err(Error::ModelProfileMismatch(format!(
                "query for {:?}/{} against layers for {:?}/{}",
                q.model, q.k, self.model, self.k
            )));
        }
        if self.model == Model::Ccpb && (self.w.is_none() || self.f1.is_none()) {
            return Err(Error::ModelProfileMismatch("CCPB layers need w and f1".into()));
        }
        Ok(())
    }

    fn w_at(&self, t: f64) -> Result<(f64, f64)> {
        match &self.w {
            Some(w) => w.eval(t),
            None => Ok((0.0, 0.0)),
        }
    }

    /// Leading layer as (deviation from the reference, slope) at `t`.
    fn u_at(&self, t: f64) -> Result<(f64, f64)> {
        let (value, slope) = self.u.eval(t)?;
        if t > self.u.t_max() {
            return Ok((value - self.u.tail.limit, slope));
        }
        let j = self.u.t.partition_point(|x| *x < t);
        if j < self.u.t.len() && self.u.t[j] == t {
            return Ok((self.u.deviation[j], slope));
        }
        Ok((value - self.u.meta.reference, slope))
    }
}

pub fn potential(q: &ExpansionQuery, l: &Layers) -> Result<f64> {
    l.check(q)?;
    let (u, _) = l.u.eval(q.t)?;
    if q.order == 1 {
        return Ok(u);
    }
    let (v, _) = l.v.eval(q.t)?;
    let (w, _) = l.w_at(q.t)?;
    Ok(u + q.eps.sqrt() * (q.curvature_weight() * v + w))
}

/// Coefficient of `-nu_p` in the gradient of the potential.
pub fn field_normal_component(q: &ExpansionQuery, l: &Layers) -> Result<f64> {
    l.check(q)?;
    let (_, du) = l.u.eval(q.t)?;
    if q.order == 1 {
        return Ok(du / q.eps.sqrt());
    }
    let (_, dv) = l.v.eval(q.t)?;
    let (_, dw) = l.w_at(q.t)?;
    Ok(du / q.eps.sqrt() + q.curvature_weight() * dv + dw)
}

pub fn charge_density(q: &ExpansionQuery, l: &Layers) -> Result<f64> {
    l.check(q)?;
    let (d, _) = l.u_at(q.t)?;
    let lead = l.f.f_dev(d);
    if q.order == 1 {
        return Ok(lead);
    }
    let (v, _) = l.v.eval(q.t)?;
    let mut next = q.curvature_weight() * l.f.df_dev(d) * v;
    if let (Some(_), Some(f1)) = (&l.w, &l.f1) {
        let (w, _) = l.w_at(q.t)?;
        next += l.f.df_dev(d) * w + f1.f_dev(d);
    }
    Ok(lead + q.eps.sqrt() * next)
}

/// Normal component of the Maxwell stress acting on `nu_p`.
pub fn maxwell_traction(q: &ExpansionQuery, l: &Layers) -> Result<f64> {
    l.check(q)?;
    let (d, du) = l.u_at(q.t)?;
    let lead = -l.f.antiderivative_dev(d);
    if q.order == 1 {
        return Ok(lead);
    }
    let (_, dv) = l.v.eval(q.t)?;
    let (_, dw) = l.w_at(q.t)?;
    Ok(lead + q.eps.sqrt() * du * (q.curvature_weight() * dv + dw))
}

pub fn evaluate(quantity: Quantity, q: &ExpansionQuery, l: &Layers) -> Result<f64> {
    match quantity {
        Quantity::Potential => potential(q, l),
        Quantity::Field => field_normal_component(q, l),
        Quantity::Density => charge_density(q, l),
        Quantity::Traction => maxwell_traction(q, l),
    }
}

/// Constants `(M, M')` of an exponential envelope `M' exp(-M x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub rate: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    /// Argument is the stretched distance `t`.
    RegionII,
    /// Argument is `eps^(beta - 1/2)`.
    RegionIII,
}

pub fn decay_envelope(kind: EnvelopeKind, env: Envelope, x: f64) -> Result<f64> {
    if !(env.rate > 0.0 && env.amplitude > 0.0) {
        return Err(Error::InvalidInput(format!("envelope constants must be positive: {env:?}")));
    }
    let _ = kind;
    Ok(env.amplitude * (-env.rate * x).exp())
}

/// Region III bound argument `eps^(beta - 1/2)`.
pub fn region_iii_argument(params: &RegionParams) -> f64 {
    params.outer_stretched()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignVerdict {
    Negative,
    Positive,
    Zero,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionChargeReport {
    pub k: usize,
    pub model: Model,
    pub params: RegionParams,
    pub region_i: f64,
    pub region_ii: f64,
    /// Upper bound on the magnitude, not a value.
    pub region_iii_bound: Option<f64>,
    pub sign: SignVerdict,
    /// Formula-side `region_ii / region_i`.
    pub ratio: Option<f64>,
    /// `u'(T) / (u'(0) - u'(T))`.
    pub ratio_limit: Option<f64>,
}

/// Two-term totals of the charge density over the bands near component `k`.
pub fn region_charge(
    domain: &DomainSpec,
    params: &RegionParams,
    l: &Layers,
    envelope: Option<Envelope>,
) -> Result<RegionChargeReport> {
    let c = domain.component(l.k)?;
    let params = RegionParams::new(params.eps, params.beta, params.t)?;
    let (eps, t) = (params.eps, params.t);
    let se = eps.sqrt();
    let area = c.surface_area;
    let curv = (domain.dimension as f64 - 1.0) * c.curvature_integral;
    let (_, du0) = l.u.eval(0.0)?;
    let (_, du_t) = l.u.eval(t)?;
    let (_, dv0) = l.v.eval(0.0)?;
    let (_, dv_t) = l.v.eval(t)?;
    let (_, dw0) = l.w_at(0.0)?;
    let (_, dw_t) = l.w_at(t)?;

    let region_i = se * area * (du0 - du_t) + eps * (curv * (t * du_t + dv0 - dv_t) + area * (dw0 - dw_t));
    let region_ii = se * area * du_t + eps * (curv * (-t * du_t + dv_t) + area * dw_t);
    let region_iii_bound = envelope.map(|e| se * e.amplitude * (-e.rate * params.outer_stretched()).exp());

    let side = l.u.deviation[0];
    let sign = if side == 0.0 {
        SignVerdict::Zero
    } else {
        let want = -side.signum();
        if region_i.signum() == want && region_ii.signum() == want {
            if want < 0.0 {
                SignVerdict::Negative
            } else {
                SignVerdict::Positive
            }
        } else {
            SignVerdict::Violated
        }
    };
    let ratio = (region_i != 0.0).then(|| region_ii / region_i);
    let ratio_limit = (du0 != du_t).then(|| du_t / (du0 - du_t));
    Ok(RegionChargeReport {
        k: l.k,
        model: l.model,
        params,
        region_i,
        region_ii,
        region_iii_bound,
        sign,
        ratio,
        ratio_limit,
    })
}
