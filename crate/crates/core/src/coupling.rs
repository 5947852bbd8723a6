//! Sequential flow/transport coupling: time stepping, the outer fixed-point
//! loop with porosity and residual-oil feedback, and stage scheduling.

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::biokinetics::{surfactant_chain, BondInputs, TrappingParams};
use crate::error::{Error, Result};
use crate::flow::{self, FlowBcs, FlowParams, FlowSolver, FlowStepInput};
use crate::mesh::{BoundarySet, Mesh};
use crate::numerics::bdf::{bdf_step, StepHistory};
use crate::numerics::newton::NewtonConfig;
use crate::petrophysics::{
    kozeny_carman, mobilities, normalized_saturation, porosity_update, relative_permeabilities,
    PetroState,
};
use crate::transport::{
    self, FlowView, TransportBcs, TransportParams, TransportSolver, TransportStepInput, CM, CN,
    CSURF, N_MOBILE, SI, SR,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    /// Relative L2 change of S_w and concentrations that ends the outer loop.
    pub tolerance: f64,
    pub max_outer: usize,
    /// Porosity and permeability follow the sessile fractions.
    pub clogging: bool,
    /// Residual oil and oil relative permeability follow the surfactant.
    pub surfactant: bool,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        CouplingConfig {
            tolerance: 1e-6,
            max_outer: 10,
            clogging: true,
            surfactant: true,
        }
    }
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_outer == 0 {
            return Err(Error::Config(
                "coupling needs tolerance > 0 and at least one outer iteration".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeConfig {
    pub dt_initial: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Step growth factor after an easy step.
    pub growth: f64,
    /// Consecutive rejections tolerated before giving up.
    pub max_rejections: usize,
    pub bdf_order: usize,
    pub flow_newton: NewtonConfig,
    pub transport_newton: NewtonConfig,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            dt_initial: 60.0,
            dt_min: 1e-3,
            dt_max: 3600.0,
            growth: 1.25,
            max_rejections: 10,
            bdf_order: 2,
            flow_newton: NewtonConfig::default(),
            transport_newton: NewtonConfig {
                rtol: 1e-9,
                atol: 1e-14,
                max_iterations: 25,
            },
        }
    }
}

impl TimeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_min > 0.0 && self.dt_initial >= self.dt_min && self.dt_max >= self.dt_initial)
        {
            return Err(Error::Config(
                "time steps must satisfy 0 < dt_min <= dt_initial <= dt_max".into(),
            ));
        }
        if !(self.growth >= 1.0) || !(1..=2).contains(&self.bdf_order) {
            return Err(Error::Config(
                "growth must be >= 1 and the BDF order 1 or 2".into(),
            ));
        }
        Ok(())
    }
}

/// One period of constant boundary conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    /// Duration (s).
    pub duration: f64,
    /// Injected Darcy velocity (m/s); zero for a shut-in stage.
    pub u_in: f64,
    pub s_w_in: Option<f64>,
    pub p_out: f64,
    /// Injected concentrations (kg/m3) of cells, nutrients and surfactant.
    pub c_in: [f64; N_MOBILE],
}

impl Stage {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!(
                "stage `{}` has invalid duration",
                self.name
            )));
        }
        FlowBcs {
            u_in: self.u_in,
            s_w_in: self.s_w_in,
            p_out: Some(self.p_out),
        }
        .validate()?;
        TransportBcs {
            u_in: self.u_in,
            c_in: self.c_in,
        }
        .validate()
    }

    pub fn is_shut_in(&self) -> bool {
        self.u_in == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub p_o: f64,
    pub s_w: f64,
    pub c: [f64; N_MOBILE],
    pub sigma_r: f64,
    pub sigma_i: f64,
}

/// Everything a simulation needs apart from its stage schedule.
#[derive(Clone, Debug)]
pub struct Model {
    pub mesh: Mesh,
    pub flow: FlowParams,
    /// `None` runs flow alone.
    pub transport: Option<TransportParams>,
    pub trapping: TrappingParams,
    pub petro: PetroState,
    pub initial: InitialState,
    pub coupling: CouplingConfig,
    pub time: TimeConfig,
    /// Evaluate the invariant checks after every accepted step.
    pub check_invariants: bool,
}

/// Summary of one accepted time step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub stage: usize,
    pub t: f64,
    pub dt: f64,
    pub p_in: f64,
    pub p_out: f64,
    pub dp: f64,
    /// Cumulative produced volumes since the start of the run (m3).
    pub v_oil: f64,
    pub v_water: f64,
    pub v_injected: f64,
    /// |injected - produced - change in storage| / injected.
    pub volume_balance_error: f64,
    /// Outlet concentrations (kg/m3).
    pub effluent: [f64; N_MOBILE],
    pub sigma_mean: f64,
    pub sigma_ow_inlet: f64,
    pub max_phi_change: f64,
    /// Largest increase of S_or over the step at any node.
    pub max_s_or_increase: f64,
    pub newton_flow: usize,
    pub newton_transport: usize,
    /// Outer-loop field changes, one per iteration after the first.
    pub outer_changes: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageSummary {
    pub name: String,
    pub t_start: f64,
    pub t_end: f64,
    pub oil_recovered: f64,
    pub water_produced: f64,
    pub final_dp: f64,
    pub steps: usize,
    pub rejections: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolverStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub newton_flow: usize,
    pub newton_transport: usize,
    pub outer_iterations: usize,
    pub plugged_nodes: usize,
    pub invariant_violations: Vec<String>,
}

/// Nodal profile quantities emitted on request.
pub const PROFILE_FIELDS: [&str; 16] = [
    "S_w",
    "p_o",
    "u_w",
    "dp",
    "c_m",
    "sigma",
    "c_n",
    "c_surf",
    "phi_minus_phi0",
    "k_minus_k0",
    "n_o",
    "sigma_ow",
    "N_To",
    "S_or",
    "k_ro0",
    "lambda_o",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub t: f64,
    pub z: Vec<f64>,
    /// One column per entry of `PROFILE_FIELDS`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Chronicle {
    pub steps: Vec<StepRecord>,
    pub stages: Vec<StageSummary>,
    pub profiles: Vec<Profile>,
    pub stats: SolverStats,
}

struct Trial {
    u_flow: Vec<f64>,
    u_tr: Vec<f64>,
    petro: PetroState,
    sigma_ow: Vec<f64>,
    n_to: Vec<f64>,
    rates: flow::BoundaryRates,
    newton_flow: usize,
    newton_transport: usize,
    outer_changes: Vec<f64>,
}

pub struct Simulation {
    mesh: Mesh,
    flow_params: FlowParams,
    transport_params: Option<TransportParams>,
    trapping: TrappingParams,
    coupling: CouplingConfig,
    time: TimeConfig,
    check_invariants: bool,

    petro: PetroState,
    u_flow: Vec<f64>,
    u_tr: Vec<f64>,
    prev_flow: Option<Vec<f64>>,
    prev_tr: Option<Vec<f64>>,
    prev_phi: Option<Vec<f64>>,
    sigma_ow: Vec<f64>,
    n_to: Vec<f64>,

    history: StepHistory,
    t: f64,
    dt: f64,
    /// Cumulative [water out, oil out, injected] volumes at levels n, n-1.
    volumes: [[f64; 3]; 2],
    stored0: [f64; 2],
    c_ref: [f64; N_MOBILE],

    flow_solver: FlowSolver,
    transport_solver: Option<TransportSolver>,
    inlet: Vec<usize>,
    outlet: Vec<usize>,
    profile_times: Vec<f64>,
    chronicle: Chronicle,
}

fn rel_change(new: &[f64], old: &[f64], floor: f64) -> f64 {
    let diff: f64 = new
        .iter()
        .zip(old)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = new.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm.max(floor * (new.len() as f64).sqrt())
}

fn mean(v: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len().max(1) as f64
}

impl Simulation {
    pub fn new(model: Model) -> Result<Self> {
        model.flow.validate()?;
        if let Some(t) = &model.transport {
            t.validate()?;
        }
        model.trapping.validate()?;
        model.coupling.validate()?;
        model.time.validate()?;
        let mesh = model.mesh;
        let n = mesh.n_nodes();
        if model.petro.n_nodes() != n {
            return Err(Error::InvalidState(
                "petrophysical state does not match the mesh".into(),
            ));
        }
        let ic = &model.initial;
        if !(0.0..=1.0).contains(&ic.s_w) {
            return Err(Error::Config(format!(
                "initial water saturation {} outside [0, 1]",
                ic.s_w
            )));
        }
        let u_flow = flow::interleave(&vec![ic.p_o; n], &vec![ic.s_w; n]);
        let node_tr = [ic.c[0], ic.c[1], ic.c[2], ic.sigma_r, ic.sigma_i];
        let u_tr: Vec<f64> = (0..n).flat_map(|_| node_tr).collect();
        let mut petro = model.petro;
        if model.transport.is_some() && model.coupling.clogging {
            petro.apply_clogging(&transport::sigma_total(&u_tr));
        }
        let flow_solver = FlowSolver::new(&mesh, ic.p_o.abs().max(1e5));
        let transport_solver = model
            .transport
            .as_ref()
            .map(|_| TransportSolver::new(&mesh, [1e-6; 5]));
        let inlet = mesh.boundary_nodes(BoundarySet::Inlet);
        let outlet = mesh.boundary_nodes(BoundarySet::Outlet);
        let mut sim = Simulation {
            flow_params: model.flow,
            transport_params: model.transport,
            trapping: model.trapping,
            coupling: model.coupling,
            time: model.time,
            check_invariants: model.check_invariants,
            petro,
            u_flow,
            u_tr,
            prev_flow: None,
            prev_tr: None,
            prev_phi: None,
            sigma_ow: vec![0.0; n],
            n_to: vec![0.0; n],
            history: StepHistory::new(model.time.bdf_order),
            t: 0.0,
            dt: model.time.dt_initial,
            volumes: [[0.0; 3]; 2],
            stored0: [0.0; 2],
            c_ref: [ic.c[0].max(1e-12), ic.c[1].max(1e-12), ic.c[2].max(1e-12)],
            flow_solver,
            transport_solver,
            inlet,
            outlet,
            profile_times: Vec::new(),
            chronicle: Chronicle::default(),
            mesh,
        };
        sim.stored0 = sim.stored_volumes();
        sim.refresh_chain_diagnostics(0.0)?;
        Ok(sim)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn petro(&self) -> &PetroState {
        &self.petro
    }

    pub fn flow_state(&self) -> &[f64] {
        &self.u_flow
    }

    pub fn transport_state(&self) -> &[f64] {
        &self.u_tr
    }

    pub fn flow_params(&self) -> &FlowParams {
        &self.flow_params
    }

    pub fn chronicle(&self) -> &Chronicle {
        &self.chronicle
    }

    pub fn into_chronicle(self) -> Chronicle {
        self.chronicle
    }

    /// Requests profiles at the given absolute times (s).
    pub fn request_profiles(&mut self, times: &[f64]) {
        self.profile_times.extend_from_slice(times);
        self.profile_times.sort_by(f64::total_cmp);
        self.profile_times.dedup();
    }

    /// Water and oil volumes stored in the pore space (m3).
    pub fn stored_volumes(&self) -> [f64; 2] {
        let (_, s) = flow::split_state(&self.u_flow);
        let lumped = &self.flow_solver.assembler().geometry().lumped;
        let mut w = 0.0;
        let mut o = 0.0;
        for i in 0..s.len() {
            w += lumped[i] * self.petro.phi[i] * s[i];
            o += lumped[i] * self.petro.phi[i] * (1.0 - s[i]);
        }
        [w, o]
    }

    fn refresh_chain_diagnostics(&mut self, u_in: f64) -> Result<()> {
        let (_, s) = flow::split_state(&self.u_flow);
        for i in 0..self.mesh.n_nodes() {
            let c_surf = if self.transport_params.is_some() {
                self.u_tr[i * 5 + CSURF]
            } else {
                0.0
            };
            let out = surfactant_chain(
                c_surf,
                u_in,
                self.flow_params.fluids.mu_w,
                &self.trapping,
                self.bond(i, s[i]),
            )?;
            self.sigma_ow[i] = out.sigma_ow;
            self.n_to[i] = out.n_to;
        }
        Ok(())
    }

    fn bond(&self, node: usize, s_w: f64) -> Option<BondInputs> {
        if !self.trapping.include_bond {
            return None;
        }
        let bc = self.flow_params.rock.with_oil_side(
            self.petro.s_or[node],
            self.petro.k_ro0[node],
            self.petro.n_o[node],
        );
        let (k_rw, _) = relative_permeabilities(normalized_saturation(s_w, bc.s_wr, bc.s_or), &bc);
        let f = &self.flow_params.fluids;
        Some(BondInputs {
            delta_rho: f.rho_w - f.rho_o,
            gravity: f.gravity,
            k: self.petro.k[node],
            k_rw,
        })
    }

    /// Runs a list of stages back to back.
    pub fn run(&mut self, stages: &[Stage]) -> Result<()> {
        for (i, stage) in stages.iter().enumerate() {
            self.run_stage(i, stage)?;
        }
        Ok(())
    }

    pub fn run_stage(&mut self, index: usize, stage: &Stage) -> Result<()> {
        stage.validate()?;
        if stage.duration == 0.0 {
            return Ok(());
        }
        for c in 0..N_MOBILE {
            self.c_ref[c] = self.c_ref[c].max(stage.c_in[c]);
        }
        info!(
            "stage `{}`: {:.1} h, u_in = {:.3e} m/s",
            stage.name,
            stage.duration / 3600.0,
            stage.u_in
        );
        // Boundary data jump at a stage boundary, so the multistep history
        // is not reused across it.
        self.history.restart();
        self.prev_flow = None;
        self.prev_tr = None;
        self.prev_phi = None;
        self.volumes[1] = self.volumes[0];
        self.dt = self.dt.min(self.time.dt_initial);

        let t_start = self.t;
        let t_end = t_start + stage.duration;
        let v0 = self.volumes[0];
        let mut steps = 0;
        let mut rejections_total = 0;
        let mut rejections = 0;
        while self.t < t_end * (1.0 - 1e-14) - 1e-9 {
            let next_event = self
                .profile_times
                .iter()
                .copied()
                .find(|&tp| tp > self.t * (1.0 + 1e-14) + 1e-9)
                .map_or(t_end, |tp| tp.min(t_end));
            let remaining = next_event - self.t;
            let dt = if remaining <= self.dt * 1.0001 {
                remaining
            } else if remaining < 2.0 * self.dt {
                0.5 * remaining
            } else {
                self.dt
            };
            match self.try_step(stage, dt) {
                Ok(trial) => {
                    rejections = 0;
                    let easy = trial.newton_flow <= 4;
                    self.commit(index, stage, dt, trial)?;
                    steps += 1;
                    if dt >= self.dt * 0.999 && easy {
                        self.dt = (self.dt * self.time.growth).min(self.time.dt_max);
                    }
                    if self
                        .profile_times
                        .iter()
                        .any(|&tp| (tp - self.t).abs() <= 1e-9 * tp.max(1.0))
                    {
                        let p = self.profile(stage)?;
                        self.chronicle.profiles.push(p);
                    }
                }
                Err(e) if e.is_step_failure() => {
                    rejections += 1;
                    rejections_total += 1;
                    self.chronicle.stats.rejected_steps += 1;
                    debug!(
                        "step rejected at t = {:.6e} s, dt = {:.3e} s: {e}",
                        self.t, dt
                    );
                    if rejections > self.time.max_rejections || dt * 0.5 < self.time.dt_min {
                        return Err(Error::SolverFailure {
                            t: self.t,
                            message: format!("{rejections} consecutive rejections, last: {e}"),
                        });
                    }
                    self.dt = dt * 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        let last_dp = self.chronicle.steps.last().map_or(0.0, |s| s.dp);
        self.chronicle.stages.push(StageSummary {
            name: stage.name.clone(),
            t_start,
            t_end: self.t,
            oil_recovered: self.volumes[0][1] - v0[1],
            water_produced: self.volumes[0][0] - v0[0],
            final_dp: last_dp,
            steps,
            rejections: rejections_total,
        });
        Ok(())
    }

    fn try_step(&mut self, stage: &Stage, dt: f64) -> Result<Trial> {
        let alpha = self.history.coefficients(dt);
        let order2 = alpha.len() == 3;
        let flow_hist_owned: Vec<&[f64]> = match (&self.prev_flow, order2) {
            (Some(p), true) => vec![&self.u_flow, p],
            _ => vec![&self.u_flow],
        };
        let phi_n = self.petro.phi.clone();
        let phi_nm1 = match (&self.prev_phi, order2) {
            (Some(p), true) => p.clone(),
            _ => phi_n.clone(),
        };
        let (_, s_n) = flow::split_state(&self.u_flow);
        let s_nm1 = match (&self.prev_flow, order2) {
            (Some(p), true) => flow::split_state(p).1,
            _ => s_n.clone(),
        };
        let tr_hist: Vec<&[f64]> = match (&self.prev_tr, order2) {
            (Some(p), true) => vec![&self.u_tr, p],
            _ => vec![&self.u_tr],
        };

        let bcs = FlowBcs {
            u_in: stage.u_in,
            s_w_in: stage.s_w_in,
            p_out: Some(stage.p_out),
        };
        let tbcs = TransportBcs {
            u_in: stage.u_in,
            c_in: stage.c_in,
        };
        let feedback =
            self.transport_params.is_some() && (self.coupling.clogging || self.coupling.surfactant);
        let mut petro = self.petro.clone();
        let mut u_flow = self.u_flow.clone();
        let mut u_tr = self.u_tr.clone();
        let mut sigma_ow = self.sigma_ow.clone();
        let mut n_to = self.n_to.clone();
        let n = self.mesh.n_nodes();
        let mut dphi_dt = vec![0.0; n];
        let mut newton_flow = 0;
        let mut newton_transport = 0;
        let mut outer_changes = Vec::new();
        let mut last: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut converged = false;
        let scales = [self.c_ref[0], self.c_ref[1], self.c_ref[2], 1e-6, 1e-6];

        for k in 1..=self.coupling.max_outer {
            let phi_new = petro.phi.clone();
            bdf_step(&alpha, &[&phi_new, &phi_n, &phi_nm1], &mut dphi_dt);
            let input = FlowStepInput {
                params: &self.flow_params,
                petro: &petro,
                phi_levels: [&phi_new, &phi_n, &phi_nm1],
                dphi_dt: &dphi_dt,
                bcs,
                alpha: &alpha,
                history: &flow_hist_owned,
                newton: self.time.flow_newton,
            };
            newton_flow += self.flow_solver.solve(&input, &mut u_flow)?.iterations;

            let (p_new, s_new) = flow::split_state(&u_flow);
            if let (Some(tp), Some(ts)) = (&self.transport_params, self.transport_solver.as_mut()) {
                let tinput = TransportStepInput {
                    params: tp,
                    bcs: tbcs,
                    flow: FlowView {
                        params: &self.flow_params,
                        petro: &petro,
                        p: &p_new,
                        s_w: &s_new,
                        s_w_levels: [&s_new, &s_n, &s_nm1],
                        phi_levels: [&phi_new, &phi_n, &phi_nm1],
                    },
                    scales,
                    alpha: &alpha,
                    history: &tr_hist,
                    newton: self.time.transport_newton,
                };
                newton_transport += ts.solve(&tinput, &mut u_tr)?.iterations;
            }

            if !feedback {
                converged = true;
                break;
            }
            if self.coupling.clogging {
                self.chronicle.stats.plugged_nodes =
                    petro.apply_clogging(&transport::sigma_total(&u_tr));
            }
            for i in 0..n {
                let out = surfactant_chain(
                    u_tr[i * 5 + CSURF],
                    stage.u_in,
                    self.flow_params.fluids.mu_w,
                    &self.trapping,
                    self.bond(i, s_new[i]),
                )?;
                sigma_ow[i] = out.sigma_ow;
                n_to[i] = out.n_to;
                if self.coupling.surfactant {
                    // Mobilized oil is not trapped again when the surfactant
                    // is diluted or the flow stops.
                    let s_or = out.s_or.min(self.petro.s_or[i]);
                    let (k_ro0, n_o) =
                        crate::biokinetics::relperm_endpoint_update(s_or, &self.trapping);
                    petro.s_or[i] = s_or;
                    petro.k_ro0[i] = k_ro0;
                    petro.n_o[i] = n_o;
                }
            }
            let fields: Vec<f64> = u_tr
                .iter()
                .enumerate()
                .filter(|(d, _)| d % 5 < N_MOBILE)
                .map(|(_, v)| *v)
                .collect();
            if let Some((s_old, c_old)) = &last {
                let mut change = rel_change(&s_new, s_old, 1.0);
                for c in 0..N_MOBILE {
                    let new_c: Vec<f64> =
                        fields.iter().skip(c).step_by(N_MOBILE).copied().collect();
                    let old_c: Vec<f64> = c_old.iter().skip(c).step_by(N_MOBILE).copied().collect();
                    change = change.max(rel_change(&new_c, &old_c, self.c_ref[c]));
                }
                outer_changes.push(change);
                if change <= self.coupling.tolerance {
                    converged = true;
                    break;
                }
            }
            last = Some((s_new, fields));
            if k == self.coupling.max_outer {
                break;
            }
        }
        if !converged {
            return Err(Error::OuterNotConverged {
                iterations: self.coupling.max_outer,
                change: outer_changes.last().copied().unwrap_or(f64::NAN),
            });
        }
        let phi_new = petro.phi.clone();
        bdf_step(&alpha, &[&phi_new, &phi_n, &phi_nm1], &mut dphi_dt);
        let input = FlowStepInput {
            params: &self.flow_params,
            petro: &petro,
            phi_levels: [&phi_new, &phi_n, &phi_nm1],
            dphi_dt: &dphi_dt,
            bcs,
            alpha: &alpha,
            history: &flow_hist_owned,
            newton: self.time.flow_newton,
        };
        let rates = self.flow_solver.boundary_rates(&input, &u_flow)?;
        Ok(Trial {
            u_flow,
            u_tr,
            petro,
            sigma_ow,
            n_to,
            rates,
            newton_flow,
            newton_transport,
            outer_changes,
        })
    }

    fn commit(&mut self, stage_index: usize, stage: &Stage, dt: f64, trial: Trial) -> Result<()> {
        let alpha = self.history.coefficients(dt);
        // Cumulative volumes follow the same recurrence as the stored
        // volumes, which keeps the discrete balance exact.
        let q = [
            trial.rates.water_out,
            trial.rates.oil_out,
            trial.rates.total_in,
        ];
        let mut v_new = [0.0; 3];
        for j in 0..3 {
            let mut rhs = q[j] - alpha[1] * self.volumes[0][j];
            if alpha.len() == 3 {
                rhs -= alpha[2] * self.volumes[1][j];
            }
            v_new[j] = rhs / alpha[0];
        }
        let max_s_or_increase = trial
            .petro
            .s_or
            .iter()
            .zip(&self.petro.s_or)
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max);

        self.prev_flow = Some(std::mem::replace(&mut self.u_flow, trial.u_flow));
        self.prev_tr = Some(std::mem::replace(&mut self.u_tr, trial.u_tr));
        self.prev_phi = Some(std::mem::replace(&mut self.petro, trial.petro).phi);
        self.sigma_ow = trial.sigma_ow;
        self.n_to = trial.n_to;
        self.volumes = [v_new, self.volumes[0]];
        self.history.accept(dt);
        self.t += dt;
        if self.transport_params.is_none() || !(self.coupling.clogging || self.coupling.surfactant)
        {
            self.refresh_chain_diagnostics(stage.u_in)?;
        }

        let (p, _) = flow::split_state(&self.u_flow);
        let p_in = mean(&p, &self.inlet);
        let p_out = mean(&p, &self.outlet);
        let stored = self.stored_volumes();
        let injected = v_new[2];
        let produced = v_new[0] + v_new[1];
        let delta_stored = stored[0] + stored[1] - self.stored0[0] - self.stored0[1];
        let volume_balance_error = if injected > 0.0 {
            (injected - produced - delta_stored).abs() / injected
        } else {
            0.0
        };
        let mut effluent = [0.0; N_MOBILE];
        for (c, e) in effluent.iter_mut().enumerate() {
            *e = self
                .outlet
                .iter()
                .map(|&i| self.u_tr[i * 5 + c])
                .sum::<f64>()
                / self.outlet.len().max(1) as f64;
        }
        let sigma = transport::sigma_total(&self.u_tr);
        let lumped = &self.flow_solver.assembler().geometry().lumped;
        let sigma_mean =
            sigma.iter().zip(lumped).map(|(s, w)| s * w).sum::<f64>() / self.mesh.volume();
        let max_phi_change = self
            .petro
            .phi
            .iter()
            .zip(&self.petro.phi0)
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max);
        let rec = StepRecord {
            stage: stage_index,
            t: self.t,
            dt,
            p_in,
            p_out,
            dp: p_in - p_out,
            v_oil: v_new[1],
            v_water: v_new[0],
            v_injected: injected,
            volume_balance_error,
            effluent,
            sigma_mean,
            sigma_ow_inlet: mean(&self.sigma_ow, &self.inlet),
            max_phi_change,
            max_s_or_increase,
            newton_flow: trial.newton_flow,
            newton_transport: trial.newton_transport,
            outer_changes: trial.outer_changes,
        };
        let stats = &mut self.chronicle.stats;
        stats.accepted_steps += 1;
        stats.newton_flow += rec.newton_flow;
        stats.newton_transport += rec.newton_transport;
        stats.outer_iterations += rec.outer_changes.len() + 1;
        debug!(
            "t = {:.4e} s dt = {:.3e} s dp = {:.4e} Pa V_o = {:.4e} m3 newton {}/{}",
            rec.t, dt, rec.dp, rec.v_oil, rec.newton_flow, rec.newton_transport
        );
        self.chronicle.steps.push(rec);
        if self.check_invariants {
            let found = self.invariant_violations();
            for v in &found {
                warn!("invariant violated at t = {:.6e} s: {v}", self.t);
            }
            self.chronicle.stats.invariant_violations.extend(found);
        }
        Ok(())
    }

    /// Checks the state invariants of the current accepted step.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let (_, s) = flow::split_state(&self.u_flow);
        let rock = &self.flow_params.rock;
        let s_max = 1.0 - self.trapping.s_or_high.min(rock.s_or);
        let tol = 1e-3;
        for (i, &sw) in s.iter().enumerate() {
            if sw < rock.s_wr - tol || sw > s_max + tol {
                out.push(format!(
                    "S_w = {sw:.6} outside [{:.4}, {:.4}] at node {i}",
                    rock.s_wr, s_max
                ));
                break;
            }
        }
        for (i, &sw) in s.iter().enumerate() {
            let bc = rock.with_oil_side(self.petro.s_or[i], self.petro.k_ro0[i], self.petro.n_o[i]);
            let (krw, kro) =
                relative_permeabilities(normalized_saturation(sw, bc.s_wr, bc.s_or), &bc);
            match mobilities(
                krw,
                kro,
                self.flow_params.fluids.mu_w,
                self.flow_params.fluids.mu_o,
            ) {
                Ok(m) if (m.f_w + m.f_o - 1.0).abs() <= 1e-12 => {}
                _ => {
                    out.push(format!("fractional flows do not sum to one at node {i}"));
                    break;
                }
            }
        }
        if let Some(tp) = &self.transport_params {
            let scales = [self.c_ref[0], self.c_ref[1], self.c_ref[2], 1e-6, 1e-6];
            if let Err(e) =
                transport::check_non_negative(&self.u_tr, &scales, tp.negativity_tolerance)
            {
                out.push(e.to_string());
            }
            if self.coupling.clogging {
                for (i, node) in self.u_tr.chunks_exact(5).enumerate() {
                    let sigma = node[SR] + node[SI];
                    let (phi, _) = porosity_update(self.petro.phi0[i], sigma);
                    if phi != self.petro.phi[i] {
                        out.push(format!(
                            "porosity at node {i} does not follow sigma_r + sigma_i"
                        ));
                        break;
                    }
                }
            }
        }
        for i in 0..self.petro.n_nodes() {
            if self.petro.phi[i] == self.petro.phi0[i]
                && kozeny_carman(self.petro.phi0[i], self.petro.k0[i], self.petro.phi0[i])
                    != self.petro.k[i]
            {
                out.push(format!(
                    "permeability at unclogged node {i} differs from k0"
                ));
                break;
            }
        }
        out
    }

    /// Nodal profiles of all `PROFILE_FIELDS` for the current state.
    pub fn profile(&self, stage: &Stage) -> Result<Profile> {
        let n = self.mesh.n_nodes();
        let (p, s) = flow::split_state(&self.u_flow);
        let vel =
            flow::reconstruct_velocities(&self.mesh, &self.u_flow, &self.petro, &self.flow_params)?;
        let axis = self.mesh.flow_axis();
        let tr = |f: usize| -> Vec<f64> {
            if self.transport_params.is_some() {
                transport::field(&self.u_tr, f)
            } else {
                vec![0.0; n]
            }
        };
        let mut lambda_o = Vec::with_capacity(n);
        for i in 0..n {
            let bc = self.flow_params.rock.with_oil_side(
                self.petro.s_or[i],
                self.petro.k_ro0[i],
                self.petro.n_o[i],
            );
            let (krw, kro) =
                relative_permeabilities(normalized_saturation(s[i], bc.s_wr, bc.s_or), &bc);
            lambda_o.push(
                mobilities(
                    krw,
                    kro,
                    self.flow_params.fluids.mu_w,
                    self.flow_params.fluids.mu_o,
                )?
                .lambda_o,
            );
        }
        let values = vec![
            s.clone(),
            p.clone(),
            vel.iter().map(|v| v.u_w[axis]).collect(),
            p.iter().map(|v| v - stage.p_out).collect(),
            tr(CM),
            if self.transport_params.is_some() {
                transport::sigma_total(&self.u_tr)
            } else {
                vec![0.0; n]
            },
            tr(CN),
            tr(CSURF),
            self.petro
                .phi
                .iter()
                .zip(&self.petro.phi0)
                .map(|(a, b)| a - b)
                .collect(),
            self.petro
                .k
                .iter()
                .zip(&self.petro.k0)
                .map(|(a, b)| a - b)
                .collect(),
            self.petro.n_o.clone(),
            self.sigma_ow.clone(),
            self.n_to.clone(),
            self.petro.s_or.clone(),
            self.petro.k_ro0.clone(),
            lambda_o,
        ];
        Ok(Profile {
            t: self.t,
            z: self.mesh.axial_coordinates().to_vec(),
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biokinetics::KineticParams;
    use crate::mesh::build_line_mesh;
    use crate::petrophysics::{BrooksCoreyParams, FluidProps, RelpermFamily};
    use crate::transport::{DispersionParams, ExchangeMode};

    fn model(transport: bool, clogging: bool) -> Model {
        let mesh = build_line_mesh(0.4, 40, 1e-3, false).unwrap();
        let rock = BrooksCoreyParams {
            s_wr: 0.0,
            s_or: 0.0,
            family: RelpermFamily::PowerOmega,
            omega: 1.0,
            capillarity: false,
            ..Default::default()
        };
        let flow = FlowParams {
            fluids: FluidProps {
                mu_w: 1e-3,
                mu_o: 1e-3,
                rho_w: 1000.0,
                rho_o: 800.0,
                gravity: 9.81,
            },
            rock,
            epsilon: 0.0,
        };
        let petro = PetroState::uniform(mesh.n_nodes(), 0.4, 1e-11, &rock);
        Model {
            mesh,
            flow,
            transport: transport.then(|| TransportParams {
                kinetics: KineticParams {
                    k_c1: 5.7e-5,
                    k_c2: 3.44e-6,
                    k_d: 6.408e-7,
                    rho_m: 1085.0,
                    ..Default::default()
                },
                dispersion: DispersionParams {
                    alpha_l: [0.0027; 3],
                    alpha_t: [0.0027; 3],
                    ..Default::default()
                },
                exchange: ExchangeMode::Conservative,
                negativity_tolerance: 1e-3,
            }),
            trapping: TrappingParams::default(),
            petro,
            initial: InitialState {
                p_o: 1e5,
                s_w: 1.0,
                c: [0.0; 3],
                sigma_r: 0.0,
                sigma_i: 0.0,
            },
            coupling: CouplingConfig {
                clogging,
                surfactant: false,
                ..Default::default()
            },
            time: TimeConfig {
                dt_initial: 600.0,
                dt_max: 3600.0,
                ..Default::default()
            },
            check_invariants: true,
        }
    }

    fn stage(hours: f64) -> Stage {
        Stage {
            name: "inject".into(),
            duration: hours * 3600.0,
            u_in: 2.17e-6,
            s_w_in: Some(1.0),
            p_out: 1e5,
            c_in: [4.32e-3, 0.0, 0.0],
        }
    }

    #[test]
    fn zero_duration_stage_is_a_no_op() {
        let mut sim = Simulation::new(model(true, true)).unwrap();
        let before = sim.flow_state().to_vec();
        sim.run(&[Stage {
            duration: 0.0,
            ..stage(1.0)
        }])
        .unwrap();
        assert_eq!(sim.flow_state(), before.as_slice());
        assert!(sim.chronicle().steps.is_empty());
        assert_eq!(sim.time(), 0.0);
    }

    #[test]
    fn without_feedback_rock_stays_fixed() {
        let mut sim = Simulation::new(model(true, false)).unwrap();
        let petro0 = sim.petro().clone();
        sim.run(&[stage(5.0)]).unwrap();
        assert_eq!(sim.petro(), &petro0);
        assert!((sim.time() - 5.0 * 3600.0).abs() < 1e-6);
        assert!(sim.chronicle().stats.invariant_violations.is_empty());
    }

    #[test]
    fn clogging_lowers_porosity_where_cells_attach() {
        let mut sim = Simulation::new(model(true, true)).unwrap();
        sim.run(&[stage(10.0)]).unwrap();
        let petro = sim.petro();
        let sigma = transport::sigma_total(sim.transport_state());
        for i in 0..petro.n_nodes() {
            assert!(petro.phi[i] <= petro.phi0[i]);
            if sigma[i] > 0.0 {
                assert!(petro.phi[i] < petro.phi0[i]);
                assert!(petro.k[i] < petro.k0[i]);
            }
        }
        let rec = sim.chronicle().steps.last().unwrap();
        assert!(rec.max_phi_change <= 0.0);
        assert!(
            sim.chronicle().stats.invariant_violations.is_empty(),
            "{:?}",
            sim.chronicle().stats
        );
    }

    #[test]
    fn flow_alone_matches_flow_with_passive_transport() {
        let mut a = Simulation::new(model(false, false)).unwrap();
        let mut b = Simulation::new(model(true, false)).unwrap();
        let stages = [stage(3.0)];
        a.run(&stages).unwrap();
        b.run(&stages).unwrap();
        for (x, y) in a.flow_state().iter().zip(b.flow_state()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn volume_balance_and_stage_summary() {
        let mut sim = Simulation::new(model(false, false)).unwrap();
        sim.request_profiles(&[3600.0]);
        sim.run(&[
            stage(2.0),
            Stage {
                u_in: 0.0,
                name: "shut-in".into(),
                ..stage(1.0)
            },
        ])
        .unwrap();
        let ch = sim.chronicle();
        assert_eq!(ch.stages.len(), 2);
        assert_eq!(ch.profiles.len(), 1);
        assert_eq!(ch.profiles[0].values.len(), PROFILE_FIELDS.len());
        assert!((ch.profiles[0].t - 3600.0).abs() < 1e-6);
        for s in &ch.steps {
            assert!(s.volume_balance_error < 1e-6, "{}", s.volume_balance_error);
        }
        let shut = ch.steps.iter().filter(|s| s.stage == 1);
        for s in shut {
            assert!(s.dp.abs() < 1e-3);
        }
    }
}
