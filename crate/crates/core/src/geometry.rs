//! Domains with smooth boundary components, region bands near each
//! component, and the Steiner volume factor.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::RobinData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Outer,
    Hole,
}

/// Closed planar curve sampled at equally spaced parameter values,
/// traversed with the domain on the left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCurve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SampledCurve {
    fn derivs(&self, j: usize) -> (f64, f64, f64, f64) {
        let n = self.x.len();
        let at = |v: &[f64], k: isize| v[((j as isize + k).rem_euclid(n as isize)) as usize];
        let d1 = |v: &[f64]| (at(v, -2) - 8.0 * at(v, -1) + 8.0 * at(v, 1) - at(v, 2)) / 12.0;
        let d2 = |v: &[f64]| (-at(v, -2) + 16.0 * at(v, -1) - 30.0 * at(v, 0) + 16.0 * at(v, 1) - at(v, 2)) / 12.0;
        (d1(&self.x), d1(&self.y), d2(&self.x), d2(&self.y))
    }

    /// Signed curvature at sample `j`; positive where the domain is locally convex.
    pub fn curvature(&self, j: usize) -> f64 {
        let (xp, yp, xpp, ypp) = self.derivs(j);
        (xp * ypp - yp * xpp) / (xp * xp + yp * yp).powf(1.5)
    }

    fn speed(&self, j: usize) -> f64 {
        let (xp, yp, _, _) = self.derivs(j);
        xp.hypot(yp)
    }

    pub fn length(&self) -> f64 {
        (0..self.x.len()).map(|j| self.speed(j)).sum()
    }

    pub fn curvature_integral(&self) -> f64 {
        (0..self.x.len()).map(|j| self.curvature(j) * self.speed(j)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum CurvatureModel {
    Constant { h: f64 },
    Curve(SampledCurve),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryComponent {
    pub index: usize,
    pub surface_area: f64,
    pub curvature: CurvatureModel,
    pub curvature_integral: f64,
    pub robin: RobinData,
    pub orientation: Orientation,
}

impl BoundaryComponent {
    pub fn constant(
        index: usize,
        surface_area: f64,
        h: f64,
        robin: RobinData,
        orientation: Orientation,
    ) -> Result<Self> {
        if !(surface_area > 0.0) || !h.is_finite() {
            return Err(Error::InvalidInput(format!("bad component: area {surface_area}, H {h}")));
        }
        Ok(Self {
            index,
            surface_area,
            curvature: CurvatureModel::Constant { h },
            curvature_integral: h * surface_area,
            robin,
            orientation,
        })
    }

    pub fn from_curve(index: usize, curve: SampledCurve, robin: RobinData, orientation: Orientation) -> Result<Self> {
        if curve.x.len() != curve.y.len() || curve.x.len() < 8 {
            return Err(Error::InvalidInput("curve needs at least 8 matching x/y samples".into()));
        }
        let surface_area = curve.length();
        let curvature_integral = curve.curvature_integral();
        Ok(Self {
            index,
            surface_area,
            curvature: CurvatureModel::Curve(curve),
            curvature_integral,
            robin,
            orientation,
        })
    }

    /// Mean curvature; `at` indexes the sample for curve models and is ignored otherwise.
    pub fn mean_curvature(&self, at: usize) -> f64 {
        match &self.curvature {
            CurvatureModel::Constant { h } => *h,
            CurvatureModel::Curve(c) => c.curvature(at),
        }
    }
}

/// Radially symmetric shapes the finite-difference oracle can handle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum Shape {
    Ball { radius: f64 },
    Annulus { inner: f64, outer: f64 },
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub dimension: usize,
    pub volume: f64,
    pub components: Vec<BoundaryComponent>,
    pub separated: bool,
    pub shape: Shape,
}

/// Surface measure of the unit sphere in `R^d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    match d {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI * unit_sphere_area(d - 2) / (d - 2) as f64,
    }
}

fn check_dimension(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidInput(format!("dimension must be at least 2, got {d}")));
    }
    Ok(())
}

pub fn make_ball(d: usize, radius: f64, robin: RobinData) -> Result<DomainSpec> {
    check_dimension(d)?;
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::BadRadii(format!("radius {radius}")));
    }
    let area = unit_sphere_area(d) * radius.powi(d as i32 - 1);
    Ok(DomainSpec {
        dimension: d,
        volume: area * radius / d as f64,
        components: vec![BoundaryComponent::constant(0, area, 1.0 / radius, robin, Orientation::Outer)?],
        separated: true,
        shape: Shape::Ball { radius },
    })
}

pub fn make_disk(radius: f64, robin: RobinData) -> Result<DomainSpec> {
    make_ball(2, radius, robin)
}

/// Shell `inner < |x| < outer`; component 0 is the outer sphere, component 1 the hole.
pub fn make_annulus(
    d: usize,
    inner: f64,
    outer: f64,
    outer_robin: RobinData,
    inner_robin: RobinData,
) -> Result<DomainSpec> {
    check_dimension(d)?;
    if !(inner > 0.0 && inner < outer && outer.is_finite()) {
        return Err(Error::BadRadii(format!("need 0 < a < R, got a={inner}, R={outer}")));
    }
    let w = unit_sphere_area(d);
    let e = d as i32 - 1;
    let outer_area = w * outer.powi(e);
    let inner_area = w * inner.powi(e);
    Ok(DomainSpec {
        dimension: d,
        volume: w * (outer.powi(d as i32) - inner.powi(d as i32)) / d as f64,
        components: vec![
            BoundaryComponent::constant(0, outer_area, 1.0 / outer, outer_robin, Orientation::Outer)?,
            BoundaryComponent::constant(1, inner_area, -1.0 / inner, inner_robin, Orientation::Hole)?,
        ],
        separated: true,
        shape: Shape::Annulus { inner, outer },
    })
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        check_dimension(self.dimension)?;
        if !(self.volume > 0.0) {
            return Err(Error::InvalidInput(format!("volume must be positive, got {}", self.volume)));
        }
        if self.components.is_empty() {
            return Err(Error::InvalidInput("domain has no boundary components".into()));
        }
        for c in &self.components {
            if !(c.surface_area > 0.0) {
                return Err(Error::InvalidInput(format!("component {} has area {}", c.index, c.surface_area)));
            }
        }
        Ok(())
    }

    /// Extra conditions for the charge-conserving problem.
    pub fn validate_ccpb(&self) -> Result<()> {
        self.validate()?;
        let first = self.components[0].robin.phi_bd;
        if self.components.iter().all(|c| c.robin.phi_bd == first) {
            return Err(Error::AllBoundaryPotentialsEqual);
        }
        Ok(())
    }

    pub fn component(&self, k: usize) -> Result<&BoundaryComponent> {
        self.components.get(k).ok_or_else(|| Error::InvalidInput(format!("no boundary component {k}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    pub eps: f64,
    pub beta: f64,
    pub t: f64,
}

impl RegionParams {
    pub fn new(eps: f64, beta: f64, t: f64) -> Result<Self> {
        let p = Self { eps, beta, t };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.beta > 0.0 && self.beta < 0.5 && self.t > 0.0) {
            return Err(Error::InconsistentParams(format!("eps={}, beta={}, T={}", self.eps, self.beta, self.t)));
        }
        if self.inner_width() >= self.outer_width() {
            return Err(Error::InconsistentParams(format!(
                "T sqrt(eps) = {} is not below eps^beta = {}",
                self.inner_width(),
                self.outer_width()
            )));
        }
        Ok(())
    }

    /// `T sqrt(eps)`.
    pub fn inner_width(&self) -> f64 {
        self.t * self.eps.sqrt()
    }

    /// `eps^beta`.
    pub fn outer_width(&self) -> f64 {
        self.eps.powf(self.beta)
    }

    /// Upper end of Region II in the stretched variable, `eps^(beta - 1/2)`.
    pub fn outer_stretched(&self) -> f64 {
        self.eps.powf(self.beta - 0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    I,
    II,
    III,
}

pub fn classify_point(domain: &DomainSpec, k: usize, distance: f64, params: &RegionParams) -> Result<Region> {
    domain.component(k)?;
    params.check()?;
    if !(distance >= 0.0) {
        return Err(Error::InvalidInput(format!("negative distance {distance}")));
    }
    Ok(if distance < params.inner_width() {
        Region::I
    } else if distance <= params.outer_width() {
        Region::II
    } else {
        Region::III
    })
}

/// Two-term volume factor `1 - t sqrt(eps) (d-1) H` of the tube around a component.
pub fn steiner_factor(h: f64, t: f64, eps: f64, d: usize) -> f64 {
    1.0 - t * eps.sqrt() * (d as f64 - 1.0) * h
}
