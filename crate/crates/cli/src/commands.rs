//! Command implementations. Every command writes deterministic files into
//! the output directory and returns whether its assertions held.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use edl_core::asymptotics::{evaluate, region_charge, ExpansionQuery, Layers, Model, RegionChargeReport};
use edl_core::ccpb::{bulk_expansion, ccpb_constants, BulkTerm, CcpbConstants};
use edl_core::geometry::{CurvatureModel, DomainSpec, RegionParams, Shape};
use edl_core::numerics::format_number as num;
use edl_core::profiles::{solve_u, solve_v, Profile, ProfileKind, ProfileMeta, RobinData, Tail};
use edl_core::radial_oracle::{
    compare_expansion, solve_radial_ccpb, solve_radial_dirichlet, solve_radial_robin_pb, CcpbOracle, ComparisonReport,
    OracleChecks, RadialSolveResult,
};
use serde::Serialize;

use crate::config::{preset, Needs, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

pub struct Ctx {
    pub out: PathBuf,
    pub verbose: u8,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn dir(&self) -> anyhow::Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }

    fn write(&self, name: &str, text: &str) -> anyhow::Result<()> {
        let path = self.dir()?.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn sub(&self, name: &str) -> Ctx {
        Ctx { out: self.out.join(name), verbose: self.verbose }
    }
}

fn kind_name(k: ProfileKind) -> &'static str {
    match k {
        ProfileKind::U => "u",
        ProfileKind::V => "v",
        ProfileKind::W => "w",
        ProfileKind::Theta => "theta",
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileSummary {
    pub kind: ProfileKind,
    pub file: String,
    pub nodes: usize,
    pub t_max: f64,
    pub meta: ProfileMeta,
    pub tail: Tail,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentProfilesMeta {
    pub k: usize,
    pub robin: RobinData,
    pub profiles: Vec<ProfileSummary>,
}

#[derive(Debug, Serialize)]
struct ProfilesReport<'a> {
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi0_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    components: Vec<ComponentProfilesMeta>,
}

fn ccpb_setup(cfg: &RunConfig) -> anyhow::Result<(DomainSpec, CcpbConstants)> {
    let domain = cfg.domain_spec()?;
    let c = ccpb_constants(&domain, &cfg.species(), &cfg.profile, cfg.execution)?;
    Ok((domain, c))
}

/// Solves the requested profiles and writes one CSV per profile plus `profiles.json`.
pub fn profiles(cfg: &RunConfig, ctx: &Ctx) -> anyhow::Result<Vec<(usize, Vec<Profile>)>> {
    cfg.require(Needs::Profiles)?;
    let wanted = |k: ProfileKind| cfg.profiles.kinds.contains(&k);
    let (sets, phi0_star, q): (Vec<Vec<Profile>>, _, _) = match cfg.model {
        Model::Pb => {
            let f = cfg.pb_density()?;
            let sets = cfg
                .execution
                .map(&cfg.robin, |r| -> edl_core::Result<Vec<Profile>> {
                    let u = solve_u(&f, *r, &cfg.profile)?;
                    let v = if wanted(ProfileKind::V) { Some(solve_v(&u, &f, *r)?) } else { None };
                    Ok([Some(u), v].into_iter().flatten().collect())
                })
                .into_iter()
                .collect::<edl_core::Result<_>>()?;
            (sets, None, None)
        }
        Model::Ccpb => {
            let (_, c) = ccpb_setup(cfg)?;
            let sets =
                c.profiles.iter().map(|p| vec![p.u.clone(), p.v.clone(), p.theta.clone(), p.w.clone()]).collect();
            (sets, Some(c.phi0_star), Some(c.q))
        }
    };
    let mut components = Vec::new();
    let mut kept = Vec::new();
    for (k, set) in sets.into_iter().enumerate() {
        let set: Vec<Profile> = set.into_iter().filter(|p| wanted(p.kind)).collect();
        let mut summaries = Vec::new();
        for p in &set {
            let file = format!("{}_{k}.csv", kind_name(p.kind));
            ctx.write(&file, &p.to_csv())?;
            summaries.push(ProfileSummary {
                kind: p.kind,
                file,
                nodes: p.t.len(),
                t_max: p.t_max(),
                meta: p.meta.clone(),
                tail: p.tail,
            });
        }
        ctx.log(format!("component {k}: {} profiles", set.len()));
        components.push(ComponentProfilesMeta { k, robin: cfg.robin[k], profiles: summaries });
        kept.push((k, set));
    }
    ctx.write_json("profiles.json", &ProfilesReport { config: cfg, phi0_star, q, components })?;
    Ok(kept)
}

#[derive(Debug, Serialize)]
struct ConstantsReport<'a> {
    config: &'a RunConfig,
    constants: &'a CcpbConstants,
    bulk: Vec<BulkAt>,
}

#[derive(Debug, Serialize)]
struct BulkAt {
    eps: f64,
    species: Vec<BulkTerm>,
}

/// Limiting CCPB constants with diagnostics, and bulk expansions at each `eps`.
pub fn constants(cfg: &RunConfig, ctx: &Ctx) -> anyhow::Result<CcpbConstants> {
    if cfg.model != Model::Ccpb {
        return Err(crate::config::ConfigError("constants needs model \"ccpb\"".into()).into());
    }
    cfg.require(Needs::Domain)?;
    let (_, c) = ccpb_setup(cfg)?;
    let bulk = cfg
        .eps
        .iter()
        .map(|&eps| Ok(BulkAt { eps, species: bulk_expansion(&c, eps)? }))
        .collect::<anyhow::Result<_>>()?;
    ctx.log(format!("phi0* = {}, Q = {}", c.phi0_star, c.q));
    ctx.write_json("constants.json", &ConstantsReport { config: cfg, constants: &c, bulk })?;
    Ok(c)
}

fn layers(cfg: &RunConfig, domain: &DomainSpec) -> anyhow::Result<Vec<Layers>> {
    match cfg.model {
        Model::Pb => {
            let f = cfg.pb_density()?;
            let out = cfg.execution.map(&domain.components, |c| Layers::pb(c.index, &f, c.robin, &cfg.profile));
            Ok(out.into_iter().collect::<edl_core::Result<_>>()?)
        }
        Model::Ccpb => {
            let c = ccpb_constants(domain, &cfg.species(), &cfg.profile, cfg.execution)?;
            Ok((0..domain.components.len()).map(|k| Layers::ccpb(&c, k)).collect::<edl_core::Result<_>>()?)
        }
    }
}

#[derive(Debug, Serialize)]
struct SkippedCharge {
    eps: f64,
    reason: String,
}

#[derive(Debug, Serialize)]
struct ExpandReport<'a> {
    config: &'a RunConfig,
    charges: Vec<RegionChargeReport>,
    skipped: Vec<SkippedCharge>,
}

/// Grid evaluation of the expansions (`expand.csv`) and region charges (`region_charges.json`).
pub fn expand(cfg: &RunConfig, ctx: &Ctx) -> anyhow::Result<()> {
    cfg.require(Needs::Sweep)?;
    let domain = cfg.domain_spec()?;
    let ls = layers(cfg, &domain)?;
    let x = &cfg.expand;
    let mut csv = String::from("eps,k,t");
    for q in &x.quantities {
        csv.push(',');
        csv.push_str(serde_json::to_value(q)?.as_str().unwrap_or_default());
    }
    csv.push('\n');
    let mut charges = Vec::new();
    let mut skipped = Vec::new();
    for &eps in &cfg.eps {
        for l in &ls {
            let c = domain.component(l.k)?;
            for j in 0..x.points {
                let t = x.t_max * j as f64 / (x.points - 1) as f64;
                let q = ExpansionQuery {
                    model: cfg.model,
                    k: l.k,
                    h: c.mean_curvature(0),
                    dimension: domain.dimension,
                    t,
                    eps,
                    order: x.order,
                };
                csv.push_str(&format!("{},{},{}", num(eps), l.k, num(t)));
                for quantity in &x.quantities {
                    csv.push_str(&format!(",{}", num(evaluate(*quantity, &q, l)?)));
                }
                csv.push('\n');
            }
            match RegionParams::new(eps, cfg.region.beta, cfg.region.t) {
                Ok(p) => charges.push(region_charge(&domain, &p, l, None)?),
                Err(e) => {
                    if l.k == 0 {
                        skipped.push(SkippedCharge { eps, reason: e.to_string() });
                    }
                }
            }
        }
    }
    ctx.write("expand.csv", &csv)?;
    ctx.write_json("region_charges.json", &ExpandReport { config: cfg, charges, skipped })
}

fn solve_oracle(cfg: &RunConfig, domain: &DomainSpec, eps: f64) -> anyhow::Result<RadialSolveResult> {
    let res = match (cfg.model, domain.shape) {
        (Model::Ccpb, _) => solve_radial_ccpb(domain, &cfg.species(), eps, &cfg.grid)?,
        (Model::Pb, Shape::Ball { radius }) if cfg.robin[0].gamma == 0.0 => {
            solve_radial_dirichlet(&cfg.pb_density()?, domain.dimension, radius, cfg.robin[0].phi_bd, eps, &cfg.grid)?
        }
        (Model::Pb, _) => solve_radial_robin_pb(domain, &cfg.pb_density()?, eps, &cfg.grid)?,
    };
    Ok(res)
}

fn sweep(cfg: &RunConfig, domain: &DomainSpec, ctx: &Ctx) -> anyhow::Result<Vec<RadialSolveResult>> {
    let out = cfg.execution.map(&cfg.eps, |&eps| solve_oracle(cfg, domain, eps));
    let out: Vec<RadialSolveResult> = out.into_iter().collect::<anyhow::Result<_>>()?;
    for r in &out {
        ctx.log(format!("oracle eps={:e}: {} nodes, {} Newton steps", r.eps, r.r.len(), r.newton_iterations));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct OracleSummary {
    eps: f64,
    file: String,
    nodes: usize,
    newton_iterations: usize,
    residual: f64,
    residual_scale: f64,
    reference: f64,
    conservation: f64,
    discretization_gap: Option<f64>,
    ccpb: Option<CcpbOracle>,
    checks: OracleChecks,
}

#[derive(Debug, Serialize)]
struct OracleReport<'a> {
    config: &'a RunConfig,
    solves: Vec<OracleSummary>,
}

/// Radial oracle solves: `oracle_<i>.csv` per `eps` and `oracle.json`.
pub fn oracle(cfg: &RunConfig, ctx: &Ctx) -> anyhow::Result<Vec<RadialSolveResult>> {
    cfg.require(Needs::Sweep)?;
    let domain = cfg.domain_spec()?;
    let results = sweep(cfg, &domain, ctx)?;
    let mut solves = Vec::new();
    for (i, r) in results.iter().enumerate() {
        let file = format!("oracle_{i}.csv");
        ctx.write(&file, &r.to_csv())?;
        solves.push(OracleSummary {
            eps: r.eps,
            file,
            nodes: r.r.len(),
            newton_iterations: r.newton_iterations,
            residual: r.residual,
            residual_scale: r.residual_scale,
            reference: r.reference,
            conservation: r.conservation,
            discretization_gap: r.discretization_gap,
            ccpb: r.ccpb.clone(),
            checks: r.checks.clone(),
        });
    }
    ctx.write_json("oracle.json", &OracleReport { config: cfg, solves })?;
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Assertion {
    fn new(name: impl Into<String>, pass: bool, detail: String) -> Self {
        Self { name: name.into(), pass, detail }
    }
}

#[derive(Debug, Serialize)]
struct VerifyReport<'a> {
    config: &'a RunConfig,
    pass: bool,
    assertions: &'a [Assertion],
    reports: &'a [ComparisonReport],
}

fn flip_curvature(domain: &mut DomainSpec) {
    for c in &mut domain.components {
        if let CurvatureModel::Constant { h } = &mut c.curvature {
            *h = -*h;
        }
        c.curvature_integral = -c.curvature_integral;
    }
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(", ")
}

/// Convergence pattern of one error sequence ordered by decreasing `eps`.
fn pattern(out: &mut Vec<Assertion>, name: &str, xs: &[f64]) {
    out.push(Assertion::new(format!("{name}_decreasing"), strictly_decreasing(xs), list(xs)));
    let (first, last) = (xs[0], xs[xs.len() - 1]);
    out.push(Assertion::new(format!("{name}_halved"), last <= 0.5 * first, format!("{last:.6e} vs {first:.6e}")));
}

/// `x / sqrt(eps)` stays within a factor 2 across the sweep.
fn stable_constant(out: &mut Vec<Assertion>, name: &str, xs: &[f64], eps: &[f64]) {
    let c: Vec<f64> = xs.iter().zip(eps).map(|(x, e)| x / e.sqrt()).collect();
    let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = c.iter().copied().fold(0.0, f64::max);
    out.push(Assertion::new(format!("{name}_decreasing"), strictly_decreasing(xs), list(xs)));
    out.push(Assertion::new(format!("{name}_constant_stable"), lo > 0.0 && hi <= 2.0 * lo, list(&c)));
}

/// Checks a sweep of comparison reports ordered by decreasing `eps`. The
/// first-order constant must be stable only for PB.
pub fn assess(reports: &[ComparisonReport], neutrality_tol: f64) -> Vec<Assertion> {
    let mut out = Vec::new();
    let eps: Vec<f64> = reports.iter().map(|r| r.eps).collect();
    for k in 0..reports[0].components.len() {
        let pick = |g: fn(&edl_core::radial_oracle::ComponentComparison) -> f64| -> Vec<f64> {
            reports.iter().map(|r| g(&r.components[k])).collect()
        };
        pattern(&mut out, &format!("k{k}_e2"), &pick(|c| c.e2));
        pattern(&mut out, &format!("k{k}_field_e2"), &pick(|c| c.field_e2));
        let (e1, fe1) = (pick(|c| c.e1), pick(|c| c.field_e1));
        if reports[0].model == Model::Pb {
            stable_constant(&mut out, &format!("k{k}_e1"), &e1, &eps);
            stable_constant(&mut out, &format!("k{k}_field_e1"), &fe1, &eps);
        } else {
            out.push(Assertion::new(format!("k{k}_e1_decreasing"), strictly_decreasing(&e1), list(&e1)));
            out.push(Assertion::new(format!("k{k}_field_e1_decreasing"), strictly_decreasing(&fe1), list(&fe1)));
        }
    }
    let neutral: Vec<f64> = reports.iter().map(|r| r.neutrality).collect();
    let worst = neutral.iter().copied().fold(0.0, f64::max);
    out.push(Assertion::new("neutrality", worst <= neutrality_tol, list(&neutral)));
    if let Some(gaps) = reports.iter().map(|r| Some((r.drift? - r.q?).abs())).collect::<Option<Vec<f64>>>() {
        out.push(Assertion::new("drift_decreasing", strictly_decreasing(&gaps), list(&gaps)));
    }
    out
}

/// Oracle-vs-expansion sweep with `verify.json` and `summary.csv`.
pub fn verify(cfg: &RunConfig, ctx: &Ctx) -> anyhow::Result<(Outcome, Vec<Assertion>)> {
    cfg.require(Needs::Sweep)?;
    if cfg.eps.len() < 2 {
        return Err(crate::config::ConfigError("verify needs at least two eps values".into()).into());
    }
    let domain = cfg.domain_spec()?;
    let ls = layers(cfg, &domain)?;
    let mut results = sweep(cfg, &domain, ctx)?;
    results.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let mut reports = Vec::new();
    for mut r in results {
        if cfg.verify.flip_curvature {
            flip_curvature(&mut r.domain);
        }
        reports.push(compare_expansion(&r, &ls, cfg.region)?);
    }
    let assertions = assess(&reports, cfg.verify.neutrality_tol);
    let pass = assertions.iter().all(|a| a.pass);

    let mut csv =
        String::from("eps,k,nodes,e1,e2,field_e1,field_e2,neutrality,drift,envelope_rate,envelope_amplitude\n");
    for r in &reports {
        for c in &r.components {
            let env = c.charges.as_ref().and_then(|ch| ch.envelope);
            let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                num(r.eps),
                c.k,
                c.nodes,
                num(c.e1),
                num(c.e2),
                num(c.field_e1),
                num(c.field_e2),
                num(r.neutrality),
                opt(r.drift),
                opt(env.map(|e| e.rate)),
                opt(env.map(|e| e.amplitude)),
            ));
        }
    }
    ctx.write("summary.csv", &csv)?;
    ctx.write_json("verify.json", &VerifyReport { config: cfg, pass, assertions: &assertions, reports: &reports })?;
    for a in assertions.iter().filter(|a| !a.pass) {
        ctx.log(format!("FAIL {}: {}", a.name, a.detail));
    }
    Ok((if pass { Outcome::Pass } else { Outcome::Fail }, assertions))
}

/// `u` strictly monotone towards the reference, deviation never crossing it.
pub fn monotone_towards_reference(u: &Profile) -> bool {
    let s = (u.meta.phi_bd - u.meta.reference).signum();
    if s == 0.0 {
        return u.is_constant();
    }
    u.deviation.iter().all(|d| d * s > 0.0)
        && u.deriv.iter().all(|d| d * s < 0.0)
        && u.deviation.windows(2).all(|w| (w[1] - w[0]) * s < 0.0)
}

/// Sign of a profile that keeps one sign away from `t = 0` and whose magnitude
/// rises then falls once; `None` otherwise.
pub fn unimodal_sign(v: &Profile) -> Option<f64> {
    let s = v.value.iter().copied().find(|x| *x != 0.0)?.signum();
    if !(v.value[0] * s >= 0.0 && v.value[1..].iter().all(|x| x * s > 0.0)) {
        return None;
    }
    let peak = v.value.iter().enumerate().max_by(|a, b| (a.1 * s).total_cmp(&(b.1 * s)))?.0;
    let rising = v.value[..=peak].windows(2).all(|w| (w[1] - w[0]) * s >= 0.0);
    let falling = v.value[peak..].windows(2).all(|w| (w[1] - w[0]) * s <= 0.0);
    (rising && falling).then_some(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct FigureCheck {
    pub figure: String,
    pub k: usize,
    pub phi_bd: f64,
    pub kind: ProfileKind,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sign: Option<f64>,
}

/// Figure presets: `figure-U/` and `figure-V/` subdirectories plus `figures.json`.
pub fn figures(ctx: &Ctx) -> anyhow::Result<(Outcome, Vec<FigureCheck>)> {
    let mut checks = Vec::new();
    for name in ["figure-U", "figure-V"] {
        let cfg = preset(name)?;
        for (k, set) in profiles(&cfg, &ctx.sub(name))? {
            for p in set {
                let (pass, sign) = match p.kind {
                    ProfileKind::U => (monotone_towards_reference(&p), None),
                    _ => {
                        let s = unimodal_sign(&p);
                        (s.is_some(), s)
                    }
                };
                checks.push(FigureCheck { figure: name.into(), k, phi_bd: p.meta.phi_bd, kind: p.kind, pass, sign });
            }
        }
    }
    let v_signs: Vec<f64> = checks.iter().filter_map(|c| c.sign).collect();
    let opposite = v_signs.len() == 2 && v_signs[0] == -v_signs[1];
    let pass = opposite && checks.iter().all(|c| c.pass);
    #[derive(Serialize)]
    struct Report<'a> {
        pass: bool,
        v_signs_opposite: bool,
        checks: &'a [FigureCheck],
    }
    ctx.write_json("figures.json", &Report { pass, v_signs_opposite: opposite, checks: &checks })?;
    Ok((if pass { Outcome::Pass } else { Outcome::Fail }, checks))
}
