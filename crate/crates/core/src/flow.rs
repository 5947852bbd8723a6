//! Two-phase incompressible flow in oil-pressure / water-saturation form.
//!
//! Unknowns are interleaved per node as `[p_o, S_w]`. The pressure equation
//! is the sum of both phase balances, `d(phi)/dt + div u = 0`, and the
//! saturation equation is the water balance `d(phi S_w)/dt + div u_w = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{BoundarySet, Mesh};
use crate::numerics::assembly::{Assembler, FormProblem, QpContext, WeakForm};
use crate::numerics::basis::nodal_gradients;
use crate::numerics::newton::{newton_solve, NewtonConfig, NewtonReport};
use crate::numerics::sparse::CsrMatrix;
use crate::petrophysics::{
    capillary_pressure, mobilities, normalized_saturation, relative_permeabilities,
    BrooksCoreyParams, FluidProps, Mobilities, PetroState,
};

pub const P: usize = 0;
pub const S: usize = 1;
pub const N_FIELDS: usize = 2;

const GRAVITY_DIR: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub fluids: FluidProps,
    pub rock: BrooksCoreyParams,
    /// Artificial diffusion added to the saturation equation (m2/s).
    pub epsilon: f64,
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        self.fluids.validate()?;
        self.rock.validate()?;
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

/// Boundary data for one stage. `u_in = 0` describes a shut-in stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowBcs {
    /// Injected total Darcy velocity (m/s).
    pub u_in: f64,
    /// Injected water saturation; `None` injects at 1 - S_or of the inlet.
    pub s_w_in: Option<f64>,
    /// Outlet oil pressure (Pa).
    pub p_out: Option<f64>,
}

impl FlowBcs {
    pub fn validate(&self) -> Result<()> {
        if !(self.u_in >= 0.0 && self.u_in.is_finite()) {
            return Err(Error::Config(format!(
                "injection velocity must be non-negative, got {}",
                self.u_in
            )));
        }
        if self.p_out.is_none() {
            return Err(Error::IllPosed(
                "outlet pressure missing: pressure equation would be pure Neumann".into(),
            ));
        }
        if let Some(s) = self.s_w_in {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config(format!(
                    "inlet saturation {s} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Coefficient blocks of the flow system at one point, in the notation
/// `d_a du/dt + div(-c grad u + gamma) + a u = f`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowCoefficients {
    pub d_a: [[f64; 2]; 2],
    /// Scalar diffusion blocks (each multiplies the identity tensor).
    pub c: [[f64; 2]; 2],
    pub gamma: [[f64; 3]; 2],
    pub a: [[f64; 2]; 2],
    pub f: [f64; 2],
    pub mobilities: Mobilities,
    pub p_cow: f64,
    pub dp_cow: f64,
}

/// Node- or point-local rock description.
#[derive(Clone, Copy, Debug)]
pub struct LocalRock {
    pub phi: f64,
    pub dphi_dt: f64,
    pub k: f64,
    pub s_or: f64,
    pub k_ro0: f64,
    pub n_o: f64,
}

pub fn flow_coefficients(
    s_w: f64,
    rock: &LocalRock,
    params: &FlowParams,
) -> Result<FlowCoefficients> {
    let bc = params.rock.with_oil_side(rock.s_or, rock.k_ro0, rock.n_o);
    let se = normalized_saturation(s_w, bc.s_wr, bc.s_or);
    let (k_rw, k_ro) = relative_permeabilities(se, &bc);
    let mob = mobilities(k_rw, k_ro, params.fluids.mu_w, params.fluids.mu_o)?;
    let k = rock.k;
    let (p_cow, dp_cow, c_cap) = if bc.capillarity {
        let (pc, dpc) = capillary_pressure(se, bc.entry_pressure, bc.theta, bc.se_slope());
        (pc, dpc, -mob.lambda_w * dpc * k)
    } else {
        (0.0, 0.0, 0.0)
    };
    let g = params.fluids.gravity;
    let (g1, g2) = if bc.capillarity {
        (
            -(mob.lambda_o * params.fluids.rho_o + mob.lambda_w * params.fluids.rho_w) * g * k,
            -mob.lambda_w * params.fluids.rho_w * g * k,
        )
    } else {
        (0.0, 0.0)
    };
    let gz = |v: f64| [v * GRAVITY_DIR[0], v * GRAVITY_DIR[1], v * GRAVITY_DIR[2]];
    Ok(FlowCoefficients {
        d_a: [[0.0, 0.0], [0.0, rock.phi]],
        c: [
            [mob.lambda * k, c_cap],
            [mob.lambda_w * k, c_cap + params.epsilon],
        ],
        gamma: [gz(g1), gz(g2)],
        a: [[0.0, 0.0], [0.0, rock.dphi_dt]],
        f: [-rock.dphi_dt, 0.0],
        mobilities: mob,
        p_cow,
        dp_cow,
    })
}

/// Phase velocities from coefficient blocks and gradients. The returned
/// water velocity excludes the artificial diffusion.
pub fn phase_velocities(
    coef: &FlowCoefficients,
    grad_p: [f64; 3],
    grad_s: [f64; 3],
    params: &FlowParams,
) -> Velocities {
    let eps = params.epsilon;
    let mut u = [0.0; 3];
    let mut u_w = [0.0; 3];
    for d in 0..3 {
        u[d] = -coef.c[0][0] * grad_p[d] - coef.c[0][1] * grad_s[d] + coef.gamma[0][d];
        u_w[d] = -coef.c[1][0] * grad_p[d] - (coef.c[1][1] - eps) * grad_s[d] + coef.gamma[1][d];
    }
    let u_o = [u[0] - u_w[0], u[1] - u_w[1], u[2] - u_w[2]];
    Velocities { u, u_w, u_o }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Velocities {
    pub u: [f64; 3],
    pub u_w: [f64; 3],
    pub u_o: [f64; 3],
}

/// Everything the flow weak form needs for one time step.
pub struct FlowForm<'a> {
    pub params: &'a FlowParams,
    pub petro: &'a PetroState,
    /// Porosity at levels n+1, n, n-1.
    pub phi_levels: [&'a [f64]; 3],
    /// d(phi)/dt at the new level, reported in the coefficient blocks.
    pub dphi_dt: &'a [f64],
    pub bcs: FlowBcs,
    pub inlet_nodes: &'a [usize],
    pub outlet_nodes: &'a [usize],
    pub pressure_scale: f64,
}

impl FlowForm<'_> {
    fn local_rock(&self, ctx: &QpContext) -> LocalRock {
        LocalRock {
            phi: ctx.interp(self.phi_levels[0]),
            dphi_dt: ctx.interp(self.dphi_dt),
            k: ctx.interp(&self.petro.k),
            s_or: ctx.interp(&self.petro.s_or),
            k_ro0: ctx.interp(&self.petro.k_ro0),
            n_o: ctx.interp(&self.petro.n_o),
        }
    }

    fn coefficients(&self, ctx: &QpContext, s_w: f64) -> Option<FlowCoefficients> {
        flow_coefficients(s_w, &self.local_rock(ctx), self.params).ok()
    }

    /// Inlet saturation actually imposed.
    pub fn inlet_saturation(&self) -> f64 {
        self.bcs.s_w_in.unwrap_or_else(|| {
            let node = self.inlet_nodes.first().copied().unwrap_or(0);
            1.0 - self.petro.s_or[node]
        })
    }
}

impl WeakForm for FlowForm<'_> {
    fn n_fields(&self) -> usize {
        N_FIELDS
    }

    fn field_scale(&self, field: usize) -> f64 {
        if field == P {
            self.pressure_scale
        } else {
            1.0
        }
    }

    fn storage(&self, ctx: &QpContext, level: usize, u: &[f64], out: &mut [f64]) {
        let phi = ctx.interp(self.phi_levels[level.min(2)]);
        out[P] = phi;
        out[S] = phi * u[S];
    }

    fn flux(&self, ctx: &QpContext, u: &[f64], grad: &[[f64; 3]], out: &mut [[f64; 3]]) {
        let Some(c) = self.coefficients(ctx, u[S]) else {
            out.iter_mut().for_each(|v| *v = [f64::NAN; 3]);
            return;
        };
        for i in 0..2 {
            for d in 0..3 {
                out[i][d] = -c.c[i][0] * grad[P][d] - c.c[i][1] * grad[S][d] + c.gamma[i][d];
            }
        }
    }

    fn boundary_flux(
        &self,
        ctx: &QpContext,
        set: BoundarySet,
        normal: [f64; 3],
        u: &[f64],
        grad: &[[f64; 3]],
        out: &mut [Option<f64>],
    ) {
        out.iter_mut().for_each(|v| *v = None);
        match set {
            BoundarySet::Inlet => {
                out[P] = Some(-self.bcs.u_in);
            }
            BoundarySet::Outlet => {
                // Water leaves by advection only: capillary and artificial
                // diffusion fluxes vanish across the outlet.
                let Some(c) = self.coefficients(ctx, u[S]) else {
                    out[S] = Some(f64::NAN);
                    return;
                };
                let mut jn = 0.0;
                for d in 0..3 {
                    jn += normal[d] * (-c.c[1][0] * grad[P][d] + c.gamma[1][d]);
                }
                out[S] = Some(jn);
            }
            BoundarySet::Wall => {}
        }
    }

    fn dirichlet(&self, out: &mut Vec<(usize, f64)>) {
        if let Some(p_out) = self.bcs.p_out {
            for &n in self.outlet_nodes {
                out.push((n * N_FIELDS + P, p_out));
            }
        }
        if self.bcs.u_in > 0.0 {
            let s_in = self.inlet_saturation();
            for &n in self.inlet_nodes {
                out.push((n * N_FIELDS + S, s_in));
            }
        }
    }
}

/// Volumetric boundary rates of one converged step (m3/s).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoundaryRates {
    pub total_out: f64,
    pub water_out: f64,
    pub oil_out: f64,
    pub total_in: f64,
}

pub struct FlowSolver {
    assembler: Assembler,
    jac: CsrMatrix,
    inlet: Vec<usize>,
    outlet: Vec<usize>,
    raw: Vec<f64>,
    residual: Vec<f64>,
}

pub struct FlowStepInput<'a> {
    pub params: &'a FlowParams,
    pub petro: &'a PetroState,
    pub phi_levels: [&'a [f64]; 3],
    pub dphi_dt: &'a [f64],
    pub bcs: FlowBcs,
    pub alpha: &'a [f64],
    pub history: &'a [&'a [f64]],
    pub newton: NewtonConfig,
}

impl FlowSolver {
    pub fn new(mesh: &Mesh, pressure_scale: f64) -> Self {
        let assembler =
            Assembler::with_layout(mesh, vec![false, false], vec![pressure_scale.max(1.0), 1.0]);
        let jac = assembler.pattern(mesh);
        let n = assembler.n_dofs();
        FlowSolver {
            assembler,
            jac,
            inlet: mesh.boundary_nodes(BoundarySet::Inlet),
            outlet: mesh.boundary_nodes(BoundarySet::Outlet),
            raw: vec![0.0; n],
            residual: vec![0.0; n],
        }
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    pub fn inlet_nodes(&self) -> &[usize] {
        &self.inlet
    }

    pub fn outlet_nodes(&self) -> &[usize] {
        &self.outlet
    }

    pub fn form<'a>(&'a self, input: &FlowStepInput<'a>) -> FlowForm<'a> {
        make_form(&self.inlet, &self.outlet, input)
    }

    /// Solves one implicit step in place and returns the Newton report.
    pub fn solve(&mut self, input: &FlowStepInput, u: &mut [f64]) -> Result<NewtonReport> {
        input.bcs.validate()?;
        let FlowSolver {
            assembler,
            jac,
            inlet,
            outlet,
            ..
        } = self;
        let form = make_form(inlet, outlet, input);
        assembler.prepare(&form, input.alpha, input.history);
        for &(dof, v) in assembler.dirichlet_dofs() {
            u[dof] = v;
        }
        let mut problem = FormProblem {
            assembler,
            form: &form,
        };
        newton_solve(&mut problem, u, jac, &input.newton)
    }

    /// Boundary rates for a converged state; call after `solve` with the
    /// same input.
    pub fn boundary_rates(&mut self, input: &FlowStepInput, u: &[f64]) -> Result<BoundaryRates> {
        let FlowSolver {
            assembler,
            inlet,
            outlet,
            raw,
            residual,
            ..
        } = self;
        let form = make_form(inlet, outlet, input);
        assembler.evaluate(&form, u, residual, None, Some(raw))?;
        let total_out: f64 = outlet.iter().map(|&n| -raw[n * N_FIELDS + P]).sum();
        let water_out = assembler.boundary_flux_integral(&form, u, BoundarySet::Outlet)[S];
        let inlet_area: f64 = assembler
            .geometry()
            .facets
            .iter()
            .filter(|f| f.set == BoundarySet::Inlet)
            .flat_map(|f| f.points.weights.iter())
            .sum();
        Ok(BoundaryRates {
            total_out,
            water_out,
            oil_out: total_out - water_out,
            total_in: input.bcs.u_in * inlet_area,
        })
    }

    /// Integral of phi S_w at a storage level for state `u`.
    pub fn stored_water(&self, input: &FlowStepInput, level: usize, u: &[f64]) -> f64 {
        let form = self.form(input);
        self.assembler.integrate_storage(&form, level, u)[S]
    }
}

fn make_form<'a>(
    inlet: &'a [usize],
    outlet: &'a [usize],
    input: &FlowStepInput<'a>,
) -> FlowForm<'a> {
    FlowForm {
        params: input.params,
        petro: input.petro,
        phi_levels: input.phi_levels,
        dphi_dt: input.dphi_dt,
        bcs: input.bcs,
        inlet_nodes: inlet,
        outlet_nodes: outlet,
        pressure_scale: input.bcs.p_out.unwrap_or(1.0).abs().max(1e5),
    }
}

/// Nodal phase velocities reconstructed from recovered gradients.
pub fn reconstruct_velocities(
    mesh: &Mesh,
    u: &[f64],
    petro: &PetroState,
    params: &FlowParams,
) -> Result<Vec<Velocities>> {
    let gp = nodal_gradients(mesh, u, N_FIELDS, P);
    let gs = nodal_gradients(mesh, u, N_FIELDS, S);
    (0..mesh.n_nodes())
        .map(|i| {
            let rock = LocalRock {
                phi: petro.phi[i],
                dphi_dt: 0.0,
                k: petro.k[i],
                s_or: petro.s_or[i],
                k_ro0: petro.k_ro0[i],
                n_o: petro.n_o[i],
            };
            let c = flow_coefficients(u[i * N_FIELDS + S], &rock, params)?;
            Ok(phase_velocities(&c, gp[i], gs[i], params))
        })
        .collect()
}

/// Splits an interleaved state into (p_o, S_w) vectors.
pub fn split_state(u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        u.iter().step_by(2).copied().collect(),
        u.iter().skip(1).step_by(2).copied().collect(),
    )
}

pub fn interleave(p: &[f64], s: &[f64]) -> Vec<f64> {
    p.iter().zip(s).flat_map(|(&a, &b)| [a, b]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_line_mesh;
    use crate::numerics::bdf::StepHistory;
    use crate::petrophysics::RelpermFamily;
    use approx::assert_relative_eq;

    fn bl_params(ratio: f64) -> FlowParams {
        FlowParams {
            fluids: FluidProps {
                mu_w: 1e-3,
                mu_o: 1e-3 / ratio,
                rho_w: 1000.0,
                rho_o: 800.0,
                gravity: 9.81,
            },
            rock: BrooksCoreyParams {
                s_wr: 0.0,
                s_or: 0.2,
                family: RelpermFamily::PowerOmega,
                omega: 1.0,
                capillarity: false,
                ..Default::default()
            },
            epsilon: 1e-7,
        }
    }

    fn rock(k: f64) -> LocalRock {
        LocalRock {
            phi: 0.2,
            dphi_dt: 0.0,
            k,
            s_or: 0.2,
            k_ro0: 1.0,
            n_o: 2.0,
        }
    }

    #[test]
    fn bl_mode_coefficients() {
        let p = bl_params(2.0);
        let c = flow_coefficients(0.4, &rock(1e-15), &p).unwrap();
        assert_eq!(c.c[1][1], 1e-7);
        assert_eq!(c.c[0][1], 0.0);
        assert_eq!(c.f, [0.0, 0.0]);
        assert_eq!(c.gamma, [[0.0; 3]; 2]);
        assert_relative_eq!(c.c[0][0], c.mobilities.lambda * 1e-15);
    }

    #[test]
    fn capillary_blocks_and_source() {
        let mut p = bl_params(1.0);
        p.rock.capillarity = true;
        p.epsilon = 0.0;
        let mut r = rock(1e-13);
        r.dphi_dt = -1e-6;
        let c = flow_coefficients(0.5, &r, &p).unwrap();
        assert!(c.dp_cow < 0.0);
        assert_relative_eq!(c.c[0][1], -c.mobilities.lambda_w * c.dp_cow * 1e-13);
        assert_eq!(c.c[0][1], c.c[1][1]);
        assert_eq!(c.f[0], 1e-6);
        assert_eq!(c.a[1][1], -1e-6);
        assert!(c.gamma[0][2] < 0.0 && c.gamma[0][0] == 0.0);
    }

    #[test]
    fn velocities_split_consistently() {
        let mut p = bl_params(1.0);
        p.rock.capillarity = true;
        let c = flow_coefficients(0.6, &rock(1e-13), &p).unwrap();
        let v = phase_velocities(&c, [0.0, 0.0, -1e4], [0.0, 0.0, 3.0], &p);
        for d in 0..3 {
            assert!((v.u[d] - v.u_w[d] - v.u_o[d]).abs() <= 1e-10 * v.u[d].abs().max(1e-30));
        }
        let still = phase_velocities(
            &flow_coefficients(0.6, &rock(1e-13), &bl_params(1.0)).unwrap(),
            [0.0; 3],
            [0.0; 3],
            &p,
        );
        assert_eq!(still.u, [0.0; 3]);
    }

    #[test]
    fn two_element_system_size() {
        let m = build_line_mesh(1.0, 2, 1.0, false).unwrap();
        let s = FlowSolver::new(&m, 1e7);
        assert_eq!(s.assembler().n_dofs(), 10);
    }

    #[test]
    fn missing_outlet_pressure_is_ill_posed() {
        let bcs = FlowBcs {
            u_in: 1e-6,
            s_w_in: None,
            p_out: None,
        };
        assert!(matches!(bcs.validate(), Err(Error::IllPosed(_))));
    }

    /// Single-phase steady column: saturation pinned at 1 - S_or so only
    /// water moves, and the pressure drop is the Darcy one.
    #[test]
    fn steady_single_phase_darcy() {
        let len = 2.0;
        let m = build_line_mesh(len, 10, 0.5, false).unwrap();
        let params = bl_params(1.0);
        let k = 1e-12;
        let bc = params.rock;
        let petro = PetroState::uniform(m.n_nodes(), 0.2, k, &bc);
        let phi = petro.phi.clone();
        let zero = vec![0.0; m.n_nodes()];
        let u_in = 1e-5;
        let mut solver = FlowSolver::new(&m, 1e7);
        let mut u = interleave(&vec![1e7; m.n_nodes()], &vec![0.8; m.n_nodes()]);
        let history = [u.clone()];
        let hist: Vec<&[f64]> = history.iter().map(|v| v.as_slice()).collect();
        let input = FlowStepInput {
            params: &params,
            petro: &petro,
            phi_levels: [&phi, &phi, &phi],
            dphi_dt: &zero,
            bcs: FlowBcs {
                u_in,
                s_w_in: None,
                p_out: Some(1e7),
            },
            alpha: &StepHistory::new(2).coefficients(3600.0),
            history: &hist,
            newton: NewtonConfig::default(),
        };
        solver.solve(&input, &mut u).unwrap();
        let lambda = 1.0 / 1e-3;
        let dp = u[0] - u[u.len() - 2];
        assert_relative_eq!(dp, u_in * len / (k * lambda), max_relative = 1e-8);
        let rates = solver.boundary_rates(&input, &u).unwrap();
        assert_relative_eq!(rates.total_out, u_in * 0.5, max_relative = 1e-8);
        // The effective-saturation clamp leaves oil a sliver of mobility.
        assert_relative_eq!(rates.water_out, u_in * 0.5, max_relative = 1e-5);
        let vel = reconstruct_velocities(&m, &u, &petro, &params).unwrap();
        for v in vel {
            assert_relative_eq!(v.u[0], u_in, max_relative = 1e-8);
        }
    }
}
