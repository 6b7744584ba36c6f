//! Run configuration: one JSON document per experiment, plus built-in presets.

use std::path::{Path, PathBuf};

use edl_core::asymptotics::{Model, Quantity};
use edl_core::exec::Execution;
use edl_core::geometry::{make_annulus, make_ball, DomainSpec};
use edl_core::nonlinearity::{make_classical_pb, IonSpecies, Nonlinearity};
use edl_core::profiles::{ProfileKind, ProfileOptions, RobinData};
use edl_core::radial_oracle::{CompareOptions, GridOptions};
use serde::{Deserialize, Serialize};

/// Rejected configuration; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    pub z: f64,
    /// Bulk concentration for PB, total mass for CCPB.
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityPreset {
    /// Valences +1 and -1 with unit amounts: `f = exp(-phi) - exp(phi)`.
    SymmetricSalt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearitySpec {
    Species(Vec<SpeciesConfig>),
    Preset(NonlinearityPreset),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Ball {
        dimension: usize,
        radius: f64,
    },
    /// Robin entries are ordered (outer, inner).
    Annulus {
        dimension: usize,
        inner: f64,
        outer: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilesOptions {
    pub kinds: Vec<ProfileKind>,
}

impl Default for ProfilesOptions {
    fn default() -> Self {
        Self { kinds: vec![ProfileKind::U, ProfileKind::V, ProfileKind::Theta, ProfileKind::W] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpandOptions {
    pub quantities: Vec<Quantity>,
    /// Largest stretched distance sampled.
    pub t_max: f64,
    pub points: usize,
    pub order: u8,
}

impl Default for ExpandOptions {
    fn default() -> Self {
        Self {
            quantities: vec![Quantity::Potential, Quantity::Field, Quantity::Density, Quantity::Traction],
            t_max: 10.0,
            points: 201,
            order: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    /// Evaluate the expansion with the curvature sign reversed (negative control).
    pub flip_curvature: bool,
    /// Largest admissible neutrality or conservation residual.
    pub neutrality_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { flip_curvature: false, neutrality_tol: 1e-8 }
    }
}

fn default_region() -> CompareOptions {
    CompareOptions { t: 5.0, beta: 0.25 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Model,
    pub nonlinearity: NonlinearitySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
    pub robin: Vec<RobinData>,
    #[serde(default)]
    pub profile: ProfileOptions,
    #[serde(default)]
    pub grid: GridOptions,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default = "default_region")]
    pub region: CompareOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub profiles: ProfilesOptions,
    #[serde(default)]
    pub expand: ExpandOptions,
    #[serde(default)]
    pub verify: VerifyOptions,
}

pub const PRESETS: &[&str] =
    &["figure-U", "figure-V", "acceptance-pb-disk", "acceptance-ccpb-annulus", "corrupted-curvature"];

fn robin(gamma: f64, phi_bd: f64) -> RobinData {
    RobinData { gamma, phi_bd }
}

fn base(model: Model) -> RunConfig {
    RunConfig {
        model,
        nonlinearity: NonlinearitySpec::Preset(NonlinearityPreset::SymmetricSalt),
        domain: None,
        robin: Vec::new(),
        profile: ProfileOptions::default(),
        grid: GridOptions::default(),
        eps: Vec::new(),
        region: default_region(),
        output: None,
        execution: Execution::default(),
        profiles: ProfilesOptions::default(),
        expand: ExpandOptions::default(),
        verify: VerifyOptions::default(),
    }
}

pub fn preset(name: &str) -> anyhow::Result<RunConfig> {
    let figure = |kind| RunConfig {
        robin: vec![robin(0.1, 1.0), robin(0.1, -1.0)],
        profiles: ProfilesOptions { kinds: vec![kind] },
        ..base(Model::Pb)
    };
    let disk = || RunConfig {
        domain: Some(DomainConfig::Ball { dimension: 2, radius: 1.0 }),
        robin: vec![robin(0.1, 1.0)],
        eps: vec![1e-2, 1e-3, 1e-4],
        ..base(Model::Pb)
    };
    Ok(match name {
        "figure-U" => figure(ProfileKind::U),
        "figure-V" => figure(ProfileKind::V),
        "acceptance-pb-disk" => disk(),
        "acceptance-ccpb-annulus" => RunConfig {
            domain: Some(DomainConfig::Annulus { dimension: 2, inner: 1.0, outer: 2.0 }),
            robin: vec![robin(0.1, 1.0), robin(0.1, -1.0)],
            eps: vec![1e-2, 1e-3, 1e-4],
            ..base(Model::Ccpb)
        },
        "corrupted-curvature" => {
            let mut c = disk();
            c.verify.flip_curvature = true;
            c
        }
        other => return Err(bad(format!("unknown preset {other:?}; known: {}", PRESETS.join(", ")))),
    })
}

pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> anyhow::Result<RunConfig> {
    let c: RunConfig = serde_json::from_str(text).map_err(|e| bad(format!("config: {e}")))?;
    c.validate()?;
    Ok(c)
}

/// Which inputs a command needs beyond the common ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Profiles,
    Domain,
    Sweep,
}

impl RunConfig {
    pub fn species(&self) -> Vec<IonSpecies> {
        let list = match &self.nonlinearity {
            NonlinearitySpec::Species(s) => s.clone(),
            NonlinearitySpec::Preset(NonlinearityPreset::SymmetricSalt) => {
                vec![SpeciesConfig { z: 1.0, amount: 1.0 }, SpeciesConfig { z: -1.0, amount: 1.0 }]
            }
        };
        list.iter()
            .map(|s| match self.model {
                Model::Pb => IonSpecies::bulk(s.z, s.amount),
                Model::Ccpb => IonSpecies::mass(s.z, s.amount),
            })
            .collect()
    }

    pub fn pb_density(&self) -> anyhow::Result<Nonlinearity> {
        Ok(make_classical_pb(&self.species())?)
    }

    pub fn domain_spec(&self) -> anyhow::Result<DomainSpec> {
        let d = self.domain.ok_or_else(|| bad("this command needs a domain"))?;
        let spec = match d {
            DomainConfig::Ball { dimension, radius } => {
                if self.robin.len() != 1 {
                    return Err(bad(format!("a ball needs 1 Robin entry, got {}", self.robin.len())));
                }
                make_ball(dimension, radius, self.robin[0])
            }
            DomainConfig::Annulus { dimension, inner, outer } => {
                if self.robin.len() != 2 {
                    return Err(bad(format!(
                        "an annulus needs 2 Robin entries (outer, inner), got {}",
                        self.robin.len()
                    )));
                }
                make_annulus(dimension, inner, outer, self.robin[0], self.robin[1])
            }
        };
        spec.map_err(|e| bad(e.to_string()))
    }

    /// Checks everything that does not depend on the command.
    pub fn validate(&self) -> anyhow::Result<()> {
        let species = self.species();
        if species.is_empty() {
            return Err(bad("species list is empty"));
        }
        for s in &species {
            if !(s.z.is_finite() && s.z != 0.0 && s.amount.is_finite() && s.amount > 0.0) {
                return Err(bad(format!(
                    "species needs finite z != 0 and amount > 0, got z={}, amount={}",
                    s.z, s.amount
                )));
            }
        }
        if !(species.iter().any(|s| s.z > 0.0) && species.iter().any(|s| s.z < 0.0)) {
            return Err(bad("species need valences of both signs"));
        }
        if self.model == Model::Ccpb {
            let net: f64 = species.iter().map(|s| s.amount * s.z).sum();
            let scale: f64 = species.iter().map(|s| (s.amount * s.z).abs()).sum();
            if net.abs() > 1e-12 * scale {
                return Err(bad(format!("CCPB species are not neutral (sum m z = {net:e})")));
            }
        }
        if self.robin.is_empty() {
            return Err(bad("robin list is empty"));
        }
        for r in &self.robin {
            RobinData::new(r.gamma, r.phi_bd).map_err(|e| bad(e.to_string()))?;
        }
        if self.profile.nodes < 5 || !(self.profile.decay_fraction > 0.0 && self.profile.decay_fraction < 1.0) {
            return Err(bad(format!("bad profile options {:?}", self.profile)));
        }
        if !(self.profile.step_scale > 0.0 && self.profile.t_cap > 0.0) {
            return Err(bad(format!("bad profile options {:?}", self.profile)));
        }
        self.grid.check().map_err(|e| bad(e.to_string()))?;
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(bad(format!("eps must lie in (0, 1), got {e}")));
        }
        if !(self.region.t > 0.0 && self.region.beta > 0.0 && self.region.beta < 0.5) {
            return Err(bad(format!("bad region options {:?}", self.region)));
        }
        let x = &self.expand;
        if !(x.t_max > 0.0 && x.points >= 2 && (x.order == 1 || x.order == 2)) {
            return Err(bad(format!("bad expand options {x:?}")));
        }
        if !(self.verify.neutrality_tol > 0.0) {
            return Err(bad("verify.neutrality_tol must be positive"));
        }
        if self.domain.is_some() {
            self.domain_spec()?;
        }
        Ok(())
    }

    /// Command-specific requirements.
    pub fn require(&self, needs: Needs) -> anyhow::Result<()> {
        if self.model == Model::Ccpb || needs != Needs::Profiles {
            self.domain_spec()?;
        }
        if needs == Needs::Sweep && self.eps.is_empty() {
            return Err(bad("eps list is empty"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            c.validate().unwrap();
            let text = serde_json::to_string_pretty(&c).unwrap();
            assert_eq!(parse(&text).unwrap(), c, "{name}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(preset("acceptance-pb-disk").unwrap()).unwrap();
        v["grid"]["layer_pts"] = 3.into();
        assert!(parse(&v.to_string()).is_err());
        let mut v = serde_json::to_value(preset("acceptance-pb-disk").unwrap()).unwrap();
        v["colour"] = "blue".into();
        assert!(parse(&v.to_string()).is_err());
    }

    #[test]
    fn empty_species_is_a_config_error() {
        let text = r#"{"model":"pb","nonlinearity":{"species":[]},"robin":[{"gamma":0.1,"phi_bd":1}]}"#;
        let e = parse(text).unwrap_err();
        assert!(e.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn robin_count_must_match_shape() {
        let mut c = preset("acceptance-pb-disk").unwrap();
        c.robin.push(robin(0.1, -1.0));
        assert!(c.validate().is_err());
    }

    #[test]
    fn ccpb_needs_neutral_masses() {
        let mut c = preset("acceptance-ccpb-annulus").unwrap();
        c.nonlinearity = NonlinearitySpec::Species(vec![
            SpeciesConfig { z: 1.0, amount: 1.0 },
            SpeciesConfig { z: -1.0, amount: 2.0 },
        ]);
        assert!(c.validate().is_err());
    }
}
