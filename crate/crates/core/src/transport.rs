//! Advection-dispersion-reaction transport of planktonic cells, nutrients
//! and surfactant, coupled to pointwise balances of the sessile fractions.
//!
//! Unknowns are interleaved per node as `[c_m, c_n, c_surf, sigma_r,
//! sigma_i]`. The first three are carried by the water phase; the sessile
//! fractions are nodal ODEs integrated with the same BDF coefficients.

use serde::{Deserialize, Serialize};

use crate::biokinetics::{surfactant_rate, KineticParams};
use crate::error::{Error, Result};
use crate::flow::{flow_coefficients, FlowParams, LocalRock};
use crate::mesh::{BoundarySet, Mesh};
use crate::numerics::assembly::{Assembler, FormProblem, QpContext, WeakForm};
use crate::numerics::newton::{newton_solve, NewtonConfig, NewtonReport};
use crate::numerics::sparse::CsrMatrix;
use crate::petrophysics::PetroState;

pub const CM: usize = 0;
pub const CN: usize = 1;
pub const CSURF: usize = 2;
pub const SR: usize = 3;
pub const SI: usize = 4;
pub const N_FIELDS: usize = 5;
pub const N_MOBILE: usize = 3;

pub const FIELD_NAMES: [&str; N_FIELDS] = ["c_m", "c_n", "c_surf", "sigma_r", "sigma_i"];

/// Nutrient level (kg/m3) below which maintenance consumption shuts off.
const MAINTENANCE_GATE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionParams {
    /// Longitudinal dispersivity per mobile component (m).
    pub alpha_l: [f64; N_MOBILE],
    /// Transverse dispersivity per mobile component (m).
    pub alpha_t: [f64; N_MOBILE],
    /// Molecular diffusion per mobile component (m2/s).
    pub d_m: [f64; N_MOBILE],
    pub tortuosity: f64,
}

impl Default for DispersionParams {
    fn default() -> Self {
        DispersionParams {
            alpha_l: [0.0; 3],
            alpha_t: [0.0; 3],
            d_m: [0.0; 3],
            tortuosity: 1.0,
        }
    }
}

impl DispersionParams {
    pub fn validate(&self) -> Result<()> {
        for c in 0..N_MOBILE {
            let (l, t, d) = (self.alpha_l[c], self.alpha_t[c], self.d_m[c]);
            if !(t >= 0.0 && l >= t && l.is_finite()) {
                return Err(Error::Config(format!(
                    "dispersivities of {} must satisfy alpha_L >= alpha_T >= 0",
                    FIELD_NAMES[c]
                )));
            }
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::Config(format!(
                    "molecular diffusion of {} must be non-negative",
                    FIELD_NAMES[c]
                )));
            }
        }
        if !(self.tortuosity > 0.0 && self.tortuosity.is_finite()) {
            return Err(Error::Config("tortuosity must be positive".into()));
        }
        Ok(())
    }
}

/// Hydrodynamic dispersion tensor for interstitial velocity `v`.
pub fn dispersion_tensor(
    v: [f64; 3],
    alpha_l: f64,
    alpha_t: f64,
    d_m: f64,
    tortuosity: f64,
) -> [[f64; 3]; 3] {
    let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let mut d = [[0.0; 3]; 3];
    for i in 0..3 {
        d[i][i] = alpha_t * speed + tortuosity * d_m;
        if speed > 0.0 {
            for j in 0..3 {
                d[i][j] += (alpha_l - alpha_t) * v[i] * v[j] / speed;
            }
        }
    }
    d
}

/// How cells move between the planktonic and sessile compartments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExchangeMode {
    /// Attachment removes cells from the water at the clogging rates and
    /// detachment returns them, so the exchange conserves biomass.
    #[default]
    Conservative,
    /// The planktonic balance loses cells at the declogging rate only.
    AsPrinted,
}

impl ExchangeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExchangeMode::Conservative => "conservative",
            ExchangeMode::AsPrinted => "as-printed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "conservative" => Ok(ExchangeMode::Conservative),
            "as-printed" => Ok(ExchangeMode::AsPrinted),
            other => Err(Error::Config(format!("unknown exchange mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportParams {
    pub kinetics: KineticParams,
    pub dispersion: DispersionParams,
    pub exchange: ExchangeMode,
    /// Accepted undershoot, relative to the field's reference scale.
    pub negativity_tolerance: f64,
}

impl TransportParams {
    pub fn validate(&self) -> Result<()> {
        self.kinetics.validate()?;
        self.dispersion.validate()?;
        if !(self.negativity_tolerance >= 0.0) {
            return Err(Error::Config(
                "negativity tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransportBcs {
    /// Injected total Darcy velocity (m/s); zero during shut-in.
    pub u_in: f64,
    /// Injected concentrations (kg/m3).
    pub c_in: [f64; N_MOBILE],
}

impl TransportBcs {
    pub fn validate(&self) -> Result<()> {
        for (c, v) in self.c_in.iter().enumerate() {
            if !(*v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "inlet {} must be non-negative, got {v}",
                    FIELD_NAMES[c]
                )));
            }
        }
        if !(self.u_in >= 0.0) {
            return Err(Error::Config(
                "injection velocity must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Sessile growth rates d(rho_m sigma)/dt (kg/(m3 s)) at a point.
pub fn sessile_rates(
    c_m: f64,
    c_n: f64,
    sigma_r: f64,
    sigma_i: f64,
    phi: f64,
    k: &KineticParams,
) -> (f64, f64) {
    let g = k.growth(c_n);
    let c_m = c_m.max(0.0);
    (
        (g - k.k_d - k.d_m) * k.rho_m * sigma_r + k.k_c1 * phi * c_m,
        (g - k.d_m) * k.rho_m * sigma_i + k.k_c2 * phi * c_m,
    )
}

/// Flow quantities seen by transport during one step.
pub struct FlowView<'a> {
    pub params: &'a FlowParams,
    pub petro: &'a PetroState,
    /// Nodal oil pressure and water saturation at the new level.
    pub p: &'a [f64],
    pub s_w: &'a [f64],
    /// Water saturation at levels n+1, n, n-1.
    pub s_w_levels: [&'a [f64]; 3],
    /// Porosity at levels n+1, n, n-1.
    pub phi_levels: [&'a [f64]; 3],
}

impl FlowView<'_> {
    fn local_rock(&self, ctx: &QpContext) -> LocalRock {
        LocalRock {
            phi: ctx.interp(self.phi_levels[0]),
            dphi_dt: 0.0,
            k: ctx.interp(&self.petro.k),
            s_or: ctx.interp(&self.petro.s_or),
            k_ro0: ctx.interp(&self.petro.k_ro0),
            n_o: ctx.interp(&self.petro.n_o),
        }
    }

    /// Water flux of the flow weak form at a point. The advective part
    /// alone (pressure and gravity terms) is returned second.
    fn water_flux(&self, ctx: &QpContext) -> Result<([f64; 3], [f64; 3])> {
        let s = ctx.interp(self.s_w);
        let gp = ctx.grad_of(self.p);
        let gs = ctx.grad_of(self.s_w);
        let c = flow_coefficients(s, &self.local_rock(ctx), self.params)?;
        let mut full = [0.0; 3];
        let mut adv = [0.0; 3];
        for d in 0..3 {
            adv[d] = -c.c[1][0] * gp[d] + c.gamma[1][d];
            full[d] = adv[d] - c.c[1][1] * gs[d];
        }
        Ok((full, adv))
    }
}

pub struct TransportForm<'a> {
    pub params: &'a TransportParams,
    pub bcs: TransportBcs,
    pub flow: &'a FlowView<'a>,
    /// Water flux at every volume quadrature point, element-major.
    pub water_flux: &'a [[f64; 3]],
    pub points_per_element: usize,
    pub scales: [f64; N_FIELDS],
}

impl TransportForm<'_> {
    fn phi_sw(&self, ctx: &QpContext, level: usize) -> f64 {
        let l = level.min(2);
        ctx.interp(self.flow.phi_levels[l]) * ctx.interp(self.flow.s_w_levels[l])
    }

    fn point_flux(&self, ctx: &QpContext) -> [f64; 3] {
        match ctx.point {
            Some(q) => self.water_flux[ctx.element * self.points_per_element + q],
            None => self
                .flow
                .water_flux(ctx)
                .map(|v| v.0)
                .unwrap_or([f64::NAN; 3]),
        }
    }
}

impl WeakForm for TransportForm<'_> {
    fn n_fields(&self) -> usize {
        N_FIELDS
    }

    fn is_nodal(&self, field: usize) -> bool {
        field >= N_MOBILE
    }

    fn field_scale(&self, field: usize) -> f64 {
        self.scales[field]
    }

    fn storage(&self, ctx: &QpContext, level: usize, u: &[f64], out: &mut [f64]) {
        let ps = self.phi_sw(ctx, level);
        for c in 0..N_MOBILE {
            out[c] = ps * u[c];
        }
        out[SR] = 0.0;
        out[SI] = 0.0;
    }

    fn flux(&self, ctx: &QpContext, u: &[f64], grad: &[[f64; 3]], out: &mut [[f64; 3]]) {
        let uw = self.point_flux(ctx);
        let ps = self.phi_sw(ctx, 0);
        let disp = &self.params.dispersion;
        for c in 0..N_MOBILE {
            // phi S_w D with v = u_w / (phi S_w) needs no division.
            let a = dispersion_tensor(uw, disp.alpha_l[c], disp.alpha_t[c], 0.0, 1.0);
            let diff = ps * disp.tortuosity * disp.d_m[c];
            for i in 0..3 {
                let mut j = uw[i] * u[c] - diff * grad[c][i];
                for k in 0..3 {
                    j -= a[i][k] * grad[c][k];
                }
                out[c][i] = j;
            }
        }
        out[SR] = [0.0; 3];
        out[SI] = [0.0; 3];
    }

    fn source(&self, ctx: &QpContext, u: &[f64], _grad: &[[f64; 3]], out: &mut [f64]) {
        let k = &self.params.kinetics;
        let phi = ctx.interp(self.flow.phi_levels[0]);
        let s_w = ctx.interp(self.flow.s_w_levels[0]);
        let c_m = u[CM].max(0.0);
        let c_n = u[CN];
        let sigma = u[SR].max(0.0) + u[SI].max(0.0);
        let g = k.growth(c_n);
        let biomass = phi * s_w * c_m + sigma * k.rho_m;
        let r_surf = surfactant_rate(c_n, c_m, sigma, phi, s_w, k);
        let phi_nodes = self.flow.phi_levels[0];
        let exchange = match self.params.exchange {
            ExchangeMode::Conservative => ctx.interp_nodal_fn(|node, v| {
                k.k_d * k.rho_m * v[SR].max(0.0)
                    - (k.k_c1 + k.k_c2) * phi_nodes[node] * v[CM].max(0.0)
            }),
            ExchangeMode::AsPrinted => k.k_d * k.rho_m * u[SR].max(0.0) - k.k_d * phi * s_w * c_m,
        };
        out[CM] = phi * s_w * (g - k.d_m) * c_m + exchange - r_surf / k.y_surf_m;
        let gate = c_n.max(0.0) / (c_n.max(0.0) + MAINTENANCE_GATE);
        out[CN] = -g * biomass / k.y_mn - r_surf / k.y_surf_n - k.m_n * biomass * gate;
        out[CSURF] = r_surf;
        out[SR] = 0.0;
        out[SI] = 0.0;
    }

    fn boundary_flux(
        &self,
        ctx: &QpContext,
        set: BoundarySet,
        normal: [f64; 3],
        u: &[f64],
        _grad: &[[f64; 3]],
        out: &mut [Option<f64>],
    ) {
        out.iter_mut().for_each(|v| *v = None);
        match set {
            BoundarySet::Inlet => {
                if self.bcs.u_in > 0.0 {
                    for c in 0..N_MOBILE {
                        out[c] = Some(-self.bcs.c_in[c] * self.bcs.u_in);
                    }
                }
            }
            BoundarySet::Outlet => {
                let un = match self.flow.water_flux(ctx) {
                    Ok((_, adv)) => adv[0] * normal[0] + adv[1] * normal[1] + adv[2] * normal[2],
                    Err(_) => f64::NAN,
                };
                for c in 0..N_MOBILE {
                    out[c] = Some(un * u[c]);
                }
            }
            BoundarySet::Wall => {}
        }
    }

    fn nodal_storage(&self, _node: usize, _level: usize, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[SR] = self.params.kinetics.rho_m * u[SR];
        out[SI] = self.params.kinetics.rho_m * u[SI];
    }

    fn nodal_rate(&self, node: usize, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let phi = self.flow.phi_levels[0][node];
        let (r, i) = sessile_rates(u[CM], u[CN], u[SR], u[SI], phi, &self.params.kinetics);
        out[SR] = r;
        out[SI] = i;
    }
}

/// Domain totals of one converged transport step, per field (kg and kg/s).
#[derive(Clone, Debug, PartialEq)]
pub struct TransportBalance {
    /// Stored mass at the new level: water-borne for mobile fields and
    /// `rho_m sigma` for the sessile ones.
    pub stored: Vec<f64>,
    pub inflow: Vec<f64>,
    pub outflow: Vec<f64>,
    /// Net reaction rate integrated over the domain.
    pub reaction: Vec<f64>,
}

pub struct TransportStepInput<'a> {
    pub params: &'a TransportParams,
    pub bcs: TransportBcs,
    pub flow: FlowView<'a>,
    pub scales: [f64; N_FIELDS],
    pub alpha: &'a [f64],
    pub history: &'a [&'a [f64]],
    pub newton: NewtonConfig,
}

pub struct TransportSolver {
    assembler: Assembler,
    jac: CsrMatrix,
    connectivity: Vec<Vec<usize>>,
    points_per_element: usize,
    water_flux: Vec<[f64; 3]>,
    outlet: Vec<usize>,
}

impl TransportSolver {
    pub fn new(mesh: &Mesh, scales: [f64; N_FIELDS]) -> Self {
        let nodal = (0..N_FIELDS).map(|f| f >= N_MOBILE).collect();
        let assembler = Assembler::with_layout(mesh, nodal, scales.to_vec());
        let jac = assembler.pattern(mesh);
        let points_per_element = assembler.geometry().elements.first().map_or(0, |p| p.len());
        TransportSolver {
            jac,
            connectivity: (0..mesh.n_elements())
                .map(|e| mesh.element_nodes(e).to_vec())
                .collect(),
            points_per_element,
            water_flux: Vec::new(),
            outlet: mesh.boundary_nodes(BoundarySet::Outlet),
            assembler,
        }
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    pub fn outlet_nodes(&self) -> &[usize] {
        &self.outlet
    }

    /// Evaluates the water flux at every volume quadrature point.
    fn refresh_water_flux(&mut self, flow: &FlowView) -> Result<()> {
        let geom = self.assembler.geometry();
        let mut out = Vec::with_capacity(geom.elements.len() * self.points_per_element);
        let empty = vec![0.0; 0];
        for (e, ps) in geom.elements.iter().enumerate() {
            let nodes = &self.connectivity[e];
            for q in 0..ps.len() {
                let ctx = QpContext {
                    element: e,
                    point: Some(q),
                    x: ps.x[q],
                    shape: ps.shape(q),
                    shape_grad: ps.shape_grad(q),
                    nodes,
                    u_nodes: &empty,
                    n_fields: 0,
                };
                out.push(flow.water_flux(&ctx)?.0);
            }
        }
        self.water_flux = out;
        Ok(())
    }

    /// Solves one implicit step in place. A field dropping below its
    /// tolerated undershoot is reported as a step failure.
    pub fn solve(&mut self, input: &TransportStepInput, u: &mut [f64]) -> Result<NewtonReport> {
        input.params.validate()?;
        input.bcs.validate()?;
        self.refresh_water_flux(&input.flow)?;
        let TransportSolver {
            assembler,
            jac,
            water_flux,
            points_per_element,
            ..
        } = self;
        let form = TransportForm {
            params: input.params,
            bcs: input.bcs,
            flow: &input.flow,
            water_flux,
            points_per_element: *points_per_element,
            scales: input.scales,
        };
        assembler.prepare(&form, input.alpha, input.history);
        let mut problem = FormProblem {
            assembler,
            form: &form,
        };
        let report = newton_solve(&mut problem, u, jac, &input.newton)?;
        check_non_negative(u, &input.scales, input.params.negativity_tolerance)?;
        Ok(report)
    }

    /// Mass totals and boundary fluxes for a converged state; call after
    /// `solve` with the same input.
    pub fn balance(&self, input: &TransportStepInput, u: &[f64]) -> TransportBalance {
        let form = TransportForm {
            params: input.params,
            bcs: input.bcs,
            flow: &input.flow,
            water_flux: &self.water_flux,
            points_per_element: self.points_per_element,
            scales: input.scales,
        };
        let a = &self.assembler;
        let inflow = a
            .boundary_flux_integral(&form, u, BoundarySet::Inlet)
            .iter()
            .map(|v| -v)
            .collect();
        TransportBalance {
            stored: a.integrate_storage(&form, 0, u),
            inflow,
            outflow: a.boundary_flux_integral(&form, u, BoundarySet::Outlet),
            reaction: a.integrate_source(&form, u),
        }
    }

    /// Stored mass per field of state `u` at storage level `level`.
    pub fn stored(&self, input: &TransportStepInput, level: usize, u: &[f64]) -> Vec<f64> {
        let form = TransportForm {
            params: input.params,
            bcs: input.bcs,
            flow: &input.flow,
            water_flux: &self.water_flux,
            points_per_element: self.points_per_element,
            scales: input.scales,
        };
        self.assembler.integrate_storage(&form, level, u)
    }
}

/// Fails on the first value below `-tolerance * scale` of its field.
pub fn check_non_negative(u: &[f64], scales: &[f64; N_FIELDS], tolerance: f64) -> Result<()> {
    for (dof, &v) in u.iter().enumerate() {
        let f = dof % N_FIELDS;
        if v < -tolerance * scales[f] || !v.is_finite() {
            return Err(Error::NegativeConcentration {
                field: FIELD_NAMES[f],
                node: dof / N_FIELDS,
                value: v,
            });
        }
    }
    Ok(())
}

/// Extracts one field from an interleaved transport state.
pub fn field(u: &[f64], f: usize) -> Vec<f64> {
    u.iter().skip(f).step_by(N_FIELDS).copied().collect()
}

/// Total sessile fraction per node.
pub fn sigma_total(u: &[f64]) -> Vec<f64> {
    u.chunks_exact(N_FIELDS).map(|n| n[SR] + n[SI]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_line_mesh;
    use crate::numerics::bdf::StepHistory;
    use crate::petrophysics::{BrooksCoreyParams, FluidProps, RelpermFamily};
    use approx::assert_relative_eq;

    #[test]
    fn tensor_without_flow_is_molecular() {
        let d = dispersion_tensor([0.0; 3], 0.1, 0.01, 2e-9, 0.7);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.7 * 2e-9 } else { 0.0 };
                assert_eq!(d[i][j], expect);
            }
        }
    }

    #[test]
    fn tensor_reduces_to_longitudinal_in_one_dimension() {
        let d = dispersion_tensor([3e-5, 0.0, 0.0], 0.02, 0.002, 1e-9, 1.0);
        assert_relative_eq!(d[0][0], 0.02 * 3e-5 + 1e-9, max_relative = 1e-14);
        assert_relative_eq!(d[1][1], 0.002 * 3e-5 + 1e-9, max_relative = 1e-14);
        assert_eq!(d[0][1], 0.0);
    }

    #[test]
    fn equal_dispersivities_are_isotropic() {
        let v = [1e-6, -2e-6, 2e-6];
        let d = dispersion_tensor(v, 0.0027, 0.0027, 0.0, 1.0);
        let speed = 3e-6;
        for i in 0..3 {
            assert_relative_eq!(d[i][i], 0.0027 * speed, max_relative = 1e-12);
            for j in 0..3 {
                if i != j {
                    assert!(d[i][j].abs() < 1e-22);
                }
            }
        }
    }

    #[test]
    fn sessile_steady_state_and_early_slope() {
        let k = KineticParams {
            k_c1: 5.7e-5,
            k_c2: 3.44e-6,
            k_d: 6.408e-7,
            rho_m: 1085.0,
            ..Default::default()
        };
        let (phi, c_m) = (0.4, 4.32e-3);
        let steady = k.k_c1 * phi * c_m / (k.k_d * k.rho_m);
        let (r, _) = sessile_rates(c_m, 0.0, steady, 0.0, phi, &k);
        assert!(r.abs() < 1e-18);
        let (_, i) = sessile_rates(c_m, 0.0, 0.0, 0.0, phi, &k);
        assert_relative_eq!(
            i / k.rho_m,
            k.k_c2 * phi * c_m / k.rho_m,
            max_relative = 1e-14
        );
    }

    #[test]
    fn sessile_ode_tracks_closed_form_with_bdf2() {
        // d(rho s)/dt = a - k_d rho s, integrated with the variable-step
        // BDF coefficients used by the solver.
        let k = KineticParams {
            k_c1: 5.7e-5,
            k_d: 6.408e-7,
            rho_m: 1085.0,
            ..Default::default()
        };
        let (phi, c_m) = (0.4, 4.32e-3);
        let a = k.k_c1 * phi * c_m;
        let exact = |t: f64| a / (k.k_d * k.rho_m) * (1.0 - (-k.k_d * t).exp());
        let mut hist = StepHistory::new(2);
        let dt = 3600.0;
        let mut levels = vec![0.0, 0.0];
        let mut t = 0.0;
        for _ in 0..400 {
            let alpha = hist.coefficients(dt);
            let mut rhs = 0.0;
            for (k_lvl, v) in levels.iter().enumerate().take(alpha.len() - 1) {
                rhs -= alpha[k_lvl + 1] * k.rho_m * v;
            }
            // alpha0 rho s - rhs_part = a - k_d rho s
            let s = (a + rhs) / (k.rho_m * (alpha[0] + k.k_d));
            levels.insert(0, s);
            levels.truncate(2);
            hist.accept(dt);
            t += dt;
        }
        assert_relative_eq!(levels[0], exact(t), max_relative = 1e-4);
    }

    fn water_column(
        n: usize,
        len: f64,
        u: f64,
    ) -> (Mesh, FlowParams, PetroState, Vec<f64>, Vec<f64>) {
        let mesh = build_line_mesh(len, n, 1.0, false).unwrap();
        let params = FlowParams {
            fluids: FluidProps {
                mu_w: 1e-3,
                mu_o: 1e-3,
                rho_w: 1000.0,
                rho_o: 800.0,
                gravity: 9.81,
            },
            rock: BrooksCoreyParams {
                s_wr: 0.0,
                s_or: 0.0,
                family: RelpermFamily::PowerOmega,
                omega: 1.0,
                capillarity: false,
                ..Default::default()
            },
            epsilon: 0.0,
        };
        let k = 1e-12;
        let petro = PetroState::uniform(mesh.n_nodes(), 0.4, k, &params.rock);
        let lambda_w = {
            let se = crate::petrophysics::normalized_saturation(1.0, 0.0, 0.0);
            let (krw, _) = crate::petrophysics::relative_permeabilities(se, &params.rock);
            krw / 1e-3
        };
        let p: Vec<f64> = mesh
            .axial_coordinates()
            .iter()
            .map(|&x| 1e5 + u / (k * lambda_w) * (len - x))
            .collect();
        let s = vec![1.0; mesh.n_nodes()];
        (mesh, params, petro, p, s)
    }

    fn scales() -> [f64; N_FIELDS] {
        [1e-3, 1e-3, 1e-3, 1e-6, 1e-6]
    }

    #[test]
    fn closed_column_diffusion_conserves_mass() {
        let (mesh, fp, petro, _, s) = water_column(20, 1.0, 0.0);
        let p = vec![1e5; mesh.n_nodes()];
        let phi = petro.phi.clone();
        let params = TransportParams {
            kinetics: KineticParams::default(),
            dispersion: DispersionParams {
                d_m: [1e-6; 3],
                ..Default::default()
            },
            exchange: ExchangeMode::Conservative,
            negativity_tolerance: 1e-3,
        };
        let mut u = vec![0.0; mesh.n_nodes() * N_FIELDS];
        for (i, x) in mesh.axial_coordinates().iter().enumerate() {
            u[i * N_FIELDS + CM] = (-(x - 0.5) * (x - 0.5) / 0.01).exp();
        }
        let mut solver = TransportSolver::new(&mesh, scales());
        let mut hist = StepHistory::new(2);
        let mut prev: Vec<Vec<f64>> = vec![u.clone()];
        let mut totals = Vec::new();
        for _ in 0..10 {
            let alpha = hist.coefficients(2000.0);
            let h: Vec<&[f64]> = prev.iter().map(|v| v.as_slice()).collect();
            let input = TransportStepInput {
                params: &params,
                bcs: TransportBcs {
                    u_in: 0.0,
                    c_in: [0.0; 3],
                },
                flow: FlowView {
                    params: &fp,
                    petro: &petro,
                    p: &p,
                    s_w: &s,
                    s_w_levels: [&s, &s, &s],
                    phi_levels: [&phi, &phi, &phi],
                },
                scales: scales(),
                alpha: &alpha,
                history: &h,
                newton: NewtonConfig {
                    rtol: 1e-12,
                    atol: 1e-16,
                    max_iterations: 10,
                },
            };
            solver.solve(&input, &mut u).unwrap();
            totals.push(solver.balance(&input, &u).stored[CM]);
            prev.insert(0, u.clone());
            prev.truncate(2);
            hist.accept(2000.0);
        }
        for t in &totals {
            assert_relative_eq!(*t, totals[0], max_relative = 1e-10);
        }
    }

    #[test]
    fn negative_values_are_rejected() {
        let mut u = vec![0.0; 2 * N_FIELDS];
        u[N_FIELDS + CN] = -1e-3;
        let err = check_non_negative(&u, &scales(), 1e-3).unwrap_err();
        assert!(matches!(
            err,
            Error::NegativeConcentration {
                field: "c_n",
                node: 1,
                ..
            }
        ));
        u[N_FIELDS + CN] = -1e-7;
        assert!(check_non_negative(&u, &scales(), 1e-3).is_ok());
    }

    #[test]
    fn exchange_mode_names_round_trip() {
        for m in [ExchangeMode::Conservative, ExchangeMode::AsPrinted] {
            assert_eq!(ExchangeMode::parse(m.as_str()).unwrap(), m);
        }
        assert!(ExchangeMode::parse("other").is_err());
    }

    #[test]
    fn negative_inlet_concentration_is_config_error() {
        let bcs = TransportBcs {
            u_in: 1e-6,
            c_in: [1.0, -0.1, 0.0],
        };
        assert!(matches!(bcs.validate(), Err(Error::Config(_))));
    }

    /// Step injection into uniform flow: the mid-concentration passes the
    /// outlet after one pore volume, and biomass is accounted for between
    /// storage, boundaries and reactions.
    #[test]
    fn tracer_front_and_biomass_ledger() {
        let (len, u_in) = (0.4, 2.17e-6);
        let (mesh, fp, petro, p, s) = water_column(80, len, u_in);
        let phi = petro.phi.clone();
        let params = TransportParams {
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
        };
        let tracer = TransportParams {
            kinetics: KineticParams::default(),
            ..params
        };
        let pore_volume_time = len * 0.4 / u_in;
        let dt = pore_volume_time / 400.0;
        for (prm, check_front) in [(&tracer, true), (&params, false)] {
            let mut u = vec![0.0; mesh.n_nodes() * N_FIELDS];
            let mut solver = TransportSolver::new(&mesh, [4.32e-3, 1e-3, 1e-3, 1e-6, 1e-6]);
            let mut hist = StepHistory::new(2);
            let mut prev: Vec<Vec<f64>> = vec![u.clone()];
            let out = *solver.outlet_nodes().first().unwrap();
            let mut t = 0.0;
            let mut crossing = None;
            let mut last_c = 0.0;
            for _ in 0..600 {
                let alpha = hist.coefficients(dt);
                let h: Vec<&[f64]> = prev.iter().map(|v| v.as_slice()).collect();
                let input = TransportStepInput {
                    params: prm,
                    bcs: TransportBcs {
                        u_in,
                        c_in: [4.32e-3, 0.0, 0.0],
                    },
                    flow: FlowView {
                        params: &fp,
                        petro: &petro,
                        p: &p,
                        s_w: &s,
                        s_w_levels: [&s, &s, &s],
                        phi_levels: [&phi, &phi, &phi],
                    },
                    scales: [4.32e-3, 1e-3, 1e-3, 1e-6, 1e-6],
                    alpha: &alpha,
                    history: &h,
                    newton: NewtonConfig {
                        rtol: 1e-12,
                        atol: 1e-18,
                        max_iterations: 10,
                    },
                };
                let old = solver.stored(&input, 1, &prev[0]);
                solver.solve(&input, &mut u).unwrap();
                let b = solver.balance(&input, &u);
                if hist.order() == 1 {
                    // Backward Euler step: exact discrete ledger.
                    let cells = |v: &[f64]| v[CM] + v[SR] + v[SI];
                    let lhs = (cells(&b.stored) - cells(&old)) / dt;
                    let rhs = b.inflow[CM] - b.outflow[CM]
                        + b.reaction[CM]
                        + b.reaction[SR]
                        + b.reaction[SI];
                    assert_relative_eq!(lhs, rhs, max_relative = 1e-6, epsilon = 1e-18);
                }
                t += dt;
                let c = u[out * N_FIELDS + CM] / 4.32e-3;
                if crossing.is_none() && c >= 0.5 {
                    crossing = Some(t - dt * (c - 0.5) / (c - last_c));
                }
                last_c = c;
                prev.insert(0, u.clone());
                prev.truncate(2);
                hist.accept(dt);
            }
            if check_front {
                let tb = crossing.expect("tracer reached the outlet");
                assert_relative_eq!(tb, pore_volume_time, max_relative = 0.02);
            } else {
                assert!(
                    last_c < 0.999,
                    "attachment must lower the plateau, got {last_c}"
                );
            }
        }
    }
}
