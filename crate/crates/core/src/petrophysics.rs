//! Rock-fluid constitutive laws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to the normalized saturation so that capillary pressure and
/// its derivative stay finite at the residual end points.
pub const SE_CLAMP: f64 = 1e-6;

/// Porosity never drops below this fraction of its initial value.
pub const POROSITY_FLOOR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidProps {
    /// Water viscosity (Pa s).
    pub mu_w: f64,
    /// Oil viscosity (Pa s).
    pub mu_o: f64,
    /// Water density (kg/m3).
    pub rho_w: f64,
    /// Oil density (kg/m3).
    pub rho_o: f64,
    /// Gravitational acceleration (m/s2).
    pub gravity: f64,
}

impl Default for FluidProps {
    fn default() -> Self {
        FluidProps {
            mu_w: 1e-3,
            mu_o: 1e-3,
            rho_w: 1000.0,
            rho_o: 1000.0,
            gravity: 9.81,
        }
    }
}

impl FluidProps {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mu_w", self.mu_w),
            ("mu_o", self.mu_o),
            ("rho_w", self.rho_w),
            ("rho_o", self.rho_o),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "fluid property {name} must be positive, got {v}"
                )));
            }
        }
        if !(self.gravity >= 0.0 && self.gravity.is_finite()) {
            return Err(Error::Config("gravity must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelpermFamily {
    /// k_rw = k_rw0 Se^n_w, k_ro = k_ro0 (1-Se)^n_o.
    ModifiedBc,
    /// k_rw = Se^w, k_ro = (1-Se)^w.
    PowerOmega,
    /// k_rw = Se^((2+3t)/t), k_ro = (1-Se)^2 (1 - Se^((2+t)/t)).
    ClassicBc,
}

impl RelpermFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            RelpermFamily::ModifiedBc => "modified-bc",
            RelpermFamily::PowerOmega => "power-omega",
            RelpermFamily::ClassicBc => "classic-bc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "modified-bc" => Ok(RelpermFamily::ModifiedBc),
            "power-omega" => Ok(RelpermFamily::PowerOmega),
            "classic-bc" => Ok(RelpermFamily::ClassicBc),
            other => Err(Error::Config(format!(
                "unknown relative permeability family `{other}` (expected modified-bc, power-omega or classic-bc)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrooksCoreyParams {
    /// Entry (threshold) pressure p_t (Pa).
    pub entry_pressure: f64,
    /// Pore-size distribution exponent theta.
    pub theta: f64,
    pub s_wr: f64,
    pub s_or: f64,
    pub k_rw0: f64,
    pub k_ro0: f64,
    pub n_w: f64,
    pub n_o: f64,
    pub family: RelpermFamily,
    pub omega: f64,
    /// When false p_cow is identically zero.
    pub capillarity: bool,
}

impl Default for BrooksCoreyParams {
    fn default() -> Self {
        BrooksCoreyParams {
            entry_pressure: 1e4,
            theta: 2.0,
            s_wr: 0.2,
            s_or: 0.2,
            k_rw0: 1.0,
            k_ro0: 1.0,
            n_w: 2.0,
            n_o: 2.0,
            family: RelpermFamily::ModifiedBc,
            omega: 1.0,
            capillarity: true,
        }
    }
}

impl BrooksCoreyParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.s_wr >= 0.0 && self.s_or >= 0.0 && self.s_wr + self.s_or < 1.0) {
            return bad("residual saturations must satisfy 0 <= s_wr, 0 <= s_or, s_wr + s_or < 1");
        }
        if self.capillarity && !(self.entry_pressure > 0.0 && self.theta > 0.0) {
            return bad("entry pressure and theta must be positive");
        }
        if self.family == RelpermFamily::ClassicBc && !(self.theta > 0.0) {
            return bad("classic Brooks-Corey relperm needs theta > 0");
        }
        if self.family == RelpermFamily::ModifiedBc {
            if !(self.k_rw0 > 0.0 && self.k_rw0 <= 1.0 && self.k_ro0 > 0.0 && self.k_ro0 <= 1.0) {
                return bad("relperm endpoints must lie in (0, 1]");
            }
            if !(self.n_w >= 1.0 && self.n_o >= 1.0) {
                return bad("relperm exponents must be >= 1");
            }
        }
        if self.family == RelpermFamily::PowerOmega && !(self.omega >= 1.0) {
            return bad("omega must be >= 1");
        }
        Ok(())
    }

    /// Parameter set with the oil-side values replaced by node-local ones.
    pub fn with_oil_side(&self, s_or: f64, k_ro0: f64, n_o: f64) -> Self {
        BrooksCoreyParams {
            s_or,
            k_ro0,
            n_o,
            ..*self
        }
    }

    /// dS_e/dS_w.
    pub fn se_slope(&self) -> f64 {
        1.0 / (1.0 - self.s_wr - self.s_or)
    }
}

/// S_e = (S_w - S_wr) / (1 - S_wr - S_or), clamped to [SE_CLAMP, 1 - SE_CLAMP].
pub fn normalized_saturation(s_w: f64, s_wr: f64, s_or: f64) -> f64 {
    let se = (s_w - s_wr) / (1.0 - s_wr - s_or);
    se.clamp(SE_CLAMP, 1.0 - SE_CLAMP)
}

/// Brooks-Corey capillary pressure and its derivative with respect to S_w.
///
/// `se_slope` is dS_e/dS_w. The derivative is evaluated at the given S_e even
/// when S_e sits on a clamp.
pub fn capillary_pressure(se: f64, entry_pressure: f64, theta: f64, se_slope: f64) -> (f64, f64) {
    let pc = entry_pressure * se.powf(-1.0 / theta);
    let dpc_dse = -pc / (theta * se);
    (pc, dpc_dse * se_slope)
}

/// Relative permeabilities (k_rw, k_ro) at normalized saturation `se`.
pub fn relative_permeabilities(se: f64, p: &BrooksCoreyParams) -> (f64, f64) {
    let se = se.clamp(0.0, 1.0);
    match p.family {
        RelpermFamily::ModifiedBc => (p.k_rw0 * se.powf(p.n_w), p.k_ro0 * (1.0 - se).powf(p.n_o)),
        RelpermFamily::PowerOmega => (se.powf(p.omega), (1.0 - se).powf(p.omega)),
        RelpermFamily::ClassicBc => {
            let t = p.theta;
            (
                se.powf((2.0 + 3.0 * t) / t),
                (1.0 - se).powi(2) * (1.0 - se.powf((2.0 + t) / t)),
            )
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mobilities {
    pub lambda_w: f64,
    pub lambda_o: f64,
    pub lambda: f64,
    pub f_w: f64,
    pub f_o: f64,
}

pub fn mobilities(k_rw: f64, k_ro: f64, mu_w: f64, mu_o: f64) -> Result<Mobilities> {
    let lambda_w = k_rw / mu_w;
    let lambda_o = k_ro / mu_o;
    let lambda = lambda_w + lambda_o;
    if !(lambda > 0.0) {
        return Err(Error::DegenerateMobility);
    }
    let f_w = lambda_w / lambda;
    Ok(Mobilities {
        lambda_w,
        lambda_o,
        lambda,
        f_w,
        f_o: 1.0 - f_w,
    })
}

/// phi = phi0 - sigma with a floor at POROSITY_FLOOR * phi0. The flag reports
/// whether the floor was hit (total plugging).
pub fn porosity_update(phi0: f64, sigma: f64) -> (f64, bool) {
    let floor = POROSITY_FLOOR * phi0;
    let phi = phi0 - sigma.max(0.0);
    if phi <= floor {
        (floor, true)
    } else {
        (phi, false)
    }
}

/// Kozeny-Carman permeability for porosity `phi` relative to (phi0, k0).
pub fn kozeny_carman(phi: f64, k0: f64, phi0: f64) -> f64 {
    if phi == phi0 {
        return k0;
    }
    k0 * ((1.0 - phi0).powi(2) / phi0.powi(3)) * (phi.powi(3) / (1.0 - phi).powi(2))
}

/// Node-wise petrophysical state mutated by the coupling loop.
#[derive(Clone, Debug, PartialEq)]
pub struct PetroState {
    pub phi0: Vec<f64>,
    pub k0: Vec<f64>,
    pub phi: Vec<f64>,
    pub k: Vec<f64>,
    pub s_or: Vec<f64>,
    pub k_ro0: Vec<f64>,
    pub n_o: Vec<f64>,
}

impl PetroState {
    pub fn uniform(n_nodes: usize, phi0: f64, k0: f64, bc: &BrooksCoreyParams) -> Self {
        PetroState {
            phi0: vec![phi0; n_nodes],
            k0: vec![k0; n_nodes],
            phi: vec![phi0; n_nodes],
            k: vec![k0; n_nodes],
            s_or: vec![bc.s_or; n_nodes],
            k_ro0: vec![bc.k_ro0; n_nodes],
            n_o: vec![bc.n_o; n_nodes],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.phi.len()
    }

    /// Applies porosity and Kozeny-Carman updates from nodal sessile
    /// fractions. Returns the number of nodes that hit the plugging floor.
    pub fn apply_clogging(&mut self, sigma: &[f64]) -> usize {
        let mut plugged = 0;
        for i in 0..self.phi.len() {
            let (phi, hit) = porosity_update(self.phi0[i], sigma[i]);
            if hit {
                plugged += 1;
            }
            self.phi[i] = phi;
            self.k[i] = kozeny_carman(phi, self.k0[i], self.phi0[i]);
        }
        plugged
    }
}
