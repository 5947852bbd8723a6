//! Comparisons of built-in scenarios against their reference solutions.

use std::fmt;
use std::time::Instant;

use crate::coupling::PROFILE_FIELDS;
use crate::error::{Error, Result};
use crate::scenarios::buckley_leverett::{buckley_leverett_analytic, BlProblem};
use crate::scenarios::metrics::{front_position, interpolate, l1_error_excluding, rms_error};
use crate::scenarios::{builtin, simulate, ScenarioConfig, DAY, HOUR};

/// One pass/fail line.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

pub const BL_FRONT_TOLERANCE: f64 = 0.03;
pub const BL_L1_TOLERANCE: f64 = 0.02;
pub const BL_RUNTIME_LIMIT_S: f64 = 60.0;
pub const BL_TIME: f64 = 300.0 * DAY;

#[derive(Clone, Debug, PartialEq)]
pub struct BlReport {
    pub front_simulated: f64,
    pub front_exact: f64,
    /// Front offset relative to the domain length.
    pub front_error: f64,
    pub l1_error: f64,
    pub runtime_s: f64,
    pub z: Vec<f64>,
    pub s_w: Vec<f64>,
}

impl BlReport {
    pub fn passed(&self) -> bool {
        self.front_error <= BL_FRONT_TOLERANCE
            && self.l1_error <= BL_L1_TOLERANCE
            && self.runtime_s <= BL_RUNTIME_LIMIT_S
    }
}

/// Oracle data for a zero-capillarity configuration.
pub fn bl_problem(config: &ScenarioConfig) -> Result<BlProblem> {
    let stage = config
        .stages
        .first()
        .ok_or_else(|| Error::Config("no stages".into()))?;
    if config.rock.capillarity {
        return Err(Error::Oracle(
            "the Buckley-Leverett solution needs zero capillary pressure".into(),
        ));
    }
    let r = &config.rock;
    Ok(BlProblem {
        family: r.family,
        exponent: if r.family == crate::petrophysics::RelpermFamily::ClassicBc {
            r.theta
        } else {
            r.omega
        },
        k_rw0: r.k_rw0,
        k_ro0: r.k_ro0,
        n_w: r.n_w,
        n_o: r.n_o,
        mu_w: config.fluids.mu_w,
        mu_o: config.fluids.mu_o,
        s_wr: r.s_wr,
        s_or: r.s_or,
        s_w0: config.initial.s_w,
        s_w_in: stage.s_w_in.unwrap_or(1.0 - r.s_or),
        u_in: stage.u_in,
        phi: config.phi0,
    })
}

/// Runs the first stage up to `t` and compares the saturation profile with
/// the oracle.
pub fn buckley_leverett_report(config: &ScenarioConfig, t: f64) -> Result<BlReport> {
    let problem = bl_problem(config)?;
    let exact = buckley_leverett_analytic(problem, t)?;
    let mut cfg = config.clone().truncated(1);
    cfg.stages[0].duration = t;
    cfg.output.profile_times = vec![t];
    let start = Instant::now();
    let outcome = simulate(&cfg)?;
    let runtime_s = start.elapsed().as_secs_f64();
    if let Some(e) = outcome.error {
        return Err(e);
    }
    let profile = outcome
        .chronicle
        .profiles
        .last()
        .ok_or_else(|| Error::Oracle("no profile recorded".into()))?;
    let s_w = profile.values[PROFILE_FIELDS
        .iter()
        .position(|f| *f == "S_w")
        .expect("S_w is a profile field")]
    .clone();
    let z = profile.z.clone();
    let x_exact = exact.front_position();
    let level = exact.front_level();
    let front_simulated = front_position(&z, &s_w, level).unwrap_or(0.0);
    let h = cfg.mesh.length / cfg.mesh.elements as f64;
    let l1_error = l1_error_excluding(&z, &s_w, |x| exact.saturation(x), x_exact, 5.0 * h)?;
    Ok(BlReport {
        front_simulated,
        front_exact: x_exact,
        front_error: (front_simulated - x_exact).abs() / cfg.mesh.length,
        l1_error,
        runtime_s,
        z,
        s_w,
    })
}

pub fn bl_check(name: &str) -> Result<Check> {
    let cfg = builtin(name).ok_or_else(|| Error::Config(format!("unknown scenario `{name}`")))?;
    let r = buckley_leverett_report(&cfg, BL_TIME)?;
    Ok(Check::new(
        format!("{name} vs Welge oracle"),
        r.passed(),
        format!(
            "front {:.2} m (exact {:.2} m, error {:.2}% L <= 3%), L1 {:.4} <= 0.02, {:.1} s <= 60 s",
            r.front_simulated,
            r.front_exact,
            100.0 * r.front_error,
            r.l1_error,
            r.runtime_s
        ),
    ))
}

/// Effluent cell concentration relative to the injected one.
#[derive(Clone, Debug, PartialEq)]
pub struct Breakthrough {
    pub t: Vec<f64>,
    pub c_rel: Vec<f64>,
}

impl Breakthrough {
    /// First time the curve reaches `level`, interpolated.
    pub fn time_at(&self, level: f64) -> Option<f64> {
        let j = self.c_rel.iter().position(|&c| c >= level)?;
        if j == 0 {
            return Some(self.t[0]);
        }
        let (c0, c1) = (self.c_rel[j - 1], self.c_rel[j]);
        Some(self.t[j - 1] + (level - c0) / (c1 - c0) * (self.t[j] - self.t[j - 1]))
    }

    pub fn last(&self) -> f64 {
        *self.c_rel.last().unwrap_or(&0.0)
    }

    pub fn at(&self, t: f64) -> Option<f64> {
        interpolate(&self.t, &self.c_rel, t)
    }
}

pub fn breakthrough(config: &ScenarioConfig) -> Result<Breakthrough> {
    let c_in = config.stages[0].c_in[0];
    if !(c_in > 0.0) {
        return Err(Error::Oracle("breakthrough needs injected cells".into()));
    }
    let outcome = simulate(config)?;
    if let Some(e) = outcome.error {
        return Err(e);
    }
    let steps = outcome.chronicle.steps;
    let mut t = vec![0.0];
    let mut c_rel = vec![config.initial.c[0] / c_in];
    for s in &steps {
        t.push(s.t);
        c_rel.push(s.effluent[0] / c_in);
    }
    Ok(Breakthrough { t, c_rel })
}

/// The configuration with every reaction switched off.
pub fn tracer_mode(config: &ScenarioConfig) -> ScenarioConfig {
    let mut c = config.clone();
    if let Some(k) = c.kinetics.as_mut() {
        k.g_max = 0.0;
        k.d_m = 0.0;
        k.k_c1 = 0.0;
        k.k_c2 = 0.0;
        k.k_d = 0.0;
        k.m_n = 0.0;
        k.mu_surf_max = 0.0;
    }
    c.coupling.clogging = false;
    c.coupling.surfactant = false;
    c
}

/// Plug-flow arrival time L phi / u of the first stage.
pub fn plug_flow_time(config: &ScenarioConfig) -> f64 {
    config.mesh.length * config.phi0 * config.initial.s_w / config.stages[0].u_in
}

pub const HENDRY_BREAKTHROUGH_TOLERANCE: f64 = 0.05;
pub const HENDRY_GRID_RMS: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct HendryReport {
    pub plug_flow_h: f64,
    pub tracer_breakthrough_h: f64,
    pub plateau: f64,
    pub plateau_doubled_clogging: f64,
    pub grid_rms: f64,
}

pub fn hendry_report(config: &ScenarioConfig, coarse: usize, fine: usize) -> Result<HendryReport> {
    let tracer = breakthrough(&tracer_mode(config))?;
    let tracer_breakthrough_h = tracer
        .time_at(0.5)
        .ok_or_else(|| Error::Oracle("tracer never broke through".into()))?
        / HOUR;
    let base = breakthrough(config)?;
    let mut doubled = config.clone();
    if let Some(k) = doubled.kinetics.as_mut() {
        k.k_c1 *= 2.0;
        k.k_c2 *= 2.0;
    }
    let doubled = breakthrough(&doubled)?;
    let coarse_run = breakthrough(&config.clone().with_elements(coarse))?;
    let fine_run = breakthrough(&config.clone().with_elements(fine))?;
    let grid_rms = rms_error(
        &coarse_run.t,
        &coarse_run.c_rel,
        &fine_run.t,
        &fine_run.c_rel,
    )?;
    Ok(HendryReport {
        plug_flow_h: plug_flow_time(config) / HOUR,
        tracer_breakthrough_h,
        plateau: base.last(),
        plateau_doubled_clogging: doubled.last(),
        grid_rms,
    })
}

pub fn hendry_checks(name: &str) -> Result<Vec<Check>> {
    let cfg = builtin(name).ok_or_else(|| Error::Config(format!("unknown scenario `{name}`")))?;
    let r = hendry_report(&cfg, 80, 320)?;
    let bt_err = (r.tracer_breakthrough_h - r.plug_flow_h).abs() / r.plug_flow_h;
    Ok(vec![
        Check::new(
            format!("{name} tracer breakthrough"),
            bt_err <= HENDRY_BREAKTHROUGH_TOLERANCE,
            format!(
                "{:.2} h vs plug flow {:.2} h ({:.1}% <= 5%)",
                r.tracer_breakthrough_h,
                r.plug_flow_h,
                100.0 * bt_err
            ),
        ),
        Check::new(
            format!("{name} clogging plateau"),
            r.plateau < 1.0 && r.plateau_doubled_clogging < r.plateau,
            format!(
                "c/c_in {:.4} < 1, doubled k_c {:.4} < {:.4}",
                r.plateau, r.plateau_doubled_clogging, r.plateau
            ),
        ),
        Check::new(
            format!("{name} grid convergence"),
            r.grid_rms <= HENDRY_GRID_RMS,
            format!("RMS(80 vs 320 elements) {:.2e} <= 1e-3", r.grid_rms),
        ),
    ])
}

/// Runs the named validation group: `bl`, `hendry` or `all`.
pub fn run_validation(group: &str) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let bl = matches!(group, "bl" | "all");
    let hendry = matches!(group, "hendry" | "all");
    if !bl && !hendry {
        return Err(Error::Config(format!(
            "unknown validation group `{group}`; expected bl, hendry or all"
        )));
    }
    if bl {
        for case in ["bl-a", "bl-b", "bl-c"] {
            checks.push(bl_check(case)?);
        }
    }
    if hendry {
        checks.extend(hendry_checks("hendry-thiswork")?);
    }
    Ok(checks)
}
