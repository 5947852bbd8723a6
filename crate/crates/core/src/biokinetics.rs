//! Growth, surfactant production, interfacial tension and the
//! residual-oil mobilization chain.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KineticParams {
    /// Maximum specific growth rate (1/s).
    pub g_max: f64,
    /// Monod half-saturation constant (kg/m3).
    pub k_mn: f64,
    /// Decay rate (1/s).
    pub d_m: f64,
    /// Reversible clogging rate (1/s).
    pub k_c1: f64,
    /// Irreversible clogging rate (1/s).
    pub k_c2: f64,
    /// Declogging rate (1/s).
    pub k_d: f64,
    /// Maintenance coefficient, used as a rate (1/s).
    pub m_n: f64,
    pub y_mn: f64,
    pub y_surf_m: f64,
    pub y_surf_n: f64,
    /// Maximum surfactant formation rate (1/s).
    pub mu_surf_max: f64,
    pub k_surf_n: f64,
    /// Critical nutrient concentration for surfactant formation (kg/m3).
    pub c_n_crit: f64,
    /// Microbial density (kg/m3).
    pub rho_m: f64,
}

impl Default for KineticParams {
    fn default() -> Self {
        KineticParams {
            g_max: 0.0,
            k_mn: 1.0,
            d_m: 0.0,
            k_c1: 0.0,
            k_c2: 0.0,
            k_d: 0.0,
            m_n: 0.0,
            y_mn: 1.0,
            y_surf_m: 1.0,
            y_surf_n: 1.0,
            mu_surf_max: 0.0,
            k_surf_n: 1.0,
            c_n_crit: 0.0,
            rho_m: 1000.0,
        }
    }
}

impl KineticParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("g_max", self.g_max),
            ("K_mn", self.k_mn),
            ("d_m", self.d_m),
            ("k_c1", self.k_c1),
            ("k_c2", self.k_c2),
            ("k_d", self.k_d),
            ("m_n", self.m_n),
            ("mu_surf_max", self.mu_surf_max),
            ("K_surf_n", self.k_surf_n),
            ("c_nC", self.c_n_crit),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "kinetic parameter {name} must be non-negative, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("Y_mn", self.y_mn),
            ("Y_surf_m", self.y_surf_m),
            ("Y_surf_n", self.y_surf_n),
            ("rho_m", self.rho_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "kinetic parameter {name} must be positive, got {v}"
                )));
            }
        }
        if self.g_max > 0.0 && self.k_mn <= 0.0 {
            return Err(Error::Config(
                "K_mn must be positive when growth is enabled".into(),
            ));
        }
        Ok(())
    }

    pub fn growth(&self, c_n: f64) -> f64 {
        monod_growth(c_n, self.g_max, self.k_mn)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrappingParams {
    /// Contact angle (rad).
    pub theta_ow: f64,
    /// Critical surfactant concentration of the tension fit (kg/m3).
    pub c_crit: f64,
    pub s_or_low: f64,
    pub s_or_high: f64,
    pub n_to_low: f64,
    pub n_to_high: f64,
    pub k_ro0_low: f64,
    pub k_ro0_high: f64,
    pub n_o_low: f64,
    pub n_o_high: f64,
    pub include_bond: bool,
    /// Flow angle relative to the horizontal (rad).
    pub flow_angle: f64,
}

impl Default for TrappingParams {
    fn default() -> Self {
        TrappingParams {
            theta_ow: 0.0,
            c_crit: C_CRIT_DEFAULT,
            s_or_low: 0.2,
            s_or_high: 0.05,
            n_to_low: 1e-9,
            n_to_high: 1e-5,
            k_ro0_low: 0.12,
            k_ro0_high: 0.18,
            n_o_low: 3.1,
            n_o_high: 1.7,
            include_bond: false,
            flow_angle: FRAC_PI_2,
        }
    }
}

/// Critical concentration giving a 35.59 mN/m tension at zero surfactant.
pub const C_CRIT_DEFAULT: f64 = 7.8946e-3;

impl TrappingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_or_high < self.s_or_low && self.s_or_high >= 0.0) {
            return Err(Error::Config(
                "trapping: require 0 <= s_or_high < s_or_low".into(),
            ));
        }
        if !(self.n_to_low < self.n_to_high && self.n_to_low >= 0.0) {
            return Err(Error::Config(
                "trapping: require 0 <= n_to_low < n_to_high".into(),
            ));
        }
        if !(self.theta_ow >= 0.0 && self.theta_ow < FRAC_PI_2) {
            return Err(Error::Config(
                "trapping: contact angle must lie in [0, pi/2)".into(),
            ));
        }
        if !(self.c_crit > 0.0) {
            return Err(Error::Config("trapping: c_crit must be positive".into()));
        }
        Ok(())
    }
}

pub fn monod_growth(c_n: f64, g_max: f64, k_mn: f64) -> f64 {
    let c_n = c_n.max(0.0);
    if c_n == 0.0 {
        return 0.0;
    }
    g_max * c_n / (k_mn + c_n)
}

/// Surfactant production rate R_surf (kg/(m3 s)).
pub fn surfactant_rate(
    c_n: f64,
    c_m: f64,
    sigma: f64,
    phi: f64,
    s_w: f64,
    p: &KineticParams,
) -> f64 {
    let excess = c_n - p.c_n_crit;
    if excess <= 0.0 {
        return 0.0;
    }
    let biomass = phi * s_w * c_m.max(0.0) + sigma.max(0.0) * p.rho_m;
    p.mu_surf_max * excess / (p.k_surf_n + excess) * biomass
}

/// Oil-water interfacial tension (N/m) as a function of surfactant
/// concentration (kg/m3).
pub fn interfacial_tension(c_surf: f64, c_crit: f64) -> f64 {
    1e-3 * (10.0 / (c_surf.max(0.0) + c_crit)).sqrt()
}

/// Bond-number inputs used only when `TrappingParams::include_bond` is set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BondInputs {
    pub delta_rho: f64,
    pub gravity: f64,
    pub k: f64,
    pub k_rw: f64,
}

pub fn trapping_number(
    u_w_in: f64,
    mu_w: f64,
    sigma_ow: f64,
    theta_ow: f64,
    bond: Option<BondInputs>,
) -> Result<f64> {
    let denom = sigma_ow * theta_ow.cos();
    if !(sigma_ow > 0.0) || !(denom > 0.0) {
        return Err(Error::InvalidState(format!(
            "trapping number needs positive sigma_ow cos(theta), got sigma_ow={sigma_ow}, theta={theta_ow}"
        )));
    }
    let n_ca = u_w_in * mu_w / denom;
    Ok(match bond {
        None => n_ca,
        Some(b) => (n_ca + b.delta_rho * b.gravity * b.k * b.k_rw / denom).abs(),
    })
}

pub fn residual_oil_update(n_to: f64, p: &TrappingParams) -> f64 {
    let s =
        p.s_or_low - (p.s_or_low - p.s_or_high) * (n_to - p.n_to_low) / (p.n_to_high - p.n_to_low);
    s.clamp(p.s_or_high, p.s_or_low)
}

/// Oil end point and exponent for a given residual oil saturation.
pub fn relperm_endpoint_update(s_or: f64, p: &TrappingParams) -> (f64, f64) {
    let w = (p.s_or_low - s_or) / (p.s_or_low - p.s_or_high);
    (
        p.k_ro0_low + w * (p.k_ro0_high - p.k_ro0_low),
        p.n_o_low + w * (p.n_o_high - p.n_o_low),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainOutput {
    pub sigma_ow: f64,
    pub n_to: f64,
    pub s_or: f64,
    pub k_ro0: f64,
    pub n_o: f64,
}

pub fn surfactant_chain(
    c_surf: f64,
    u_w_in: f64,
    mu_w: f64,
    p: &TrappingParams,
    bond: Option<BondInputs>,
) -> Result<ChainOutput> {
    let sigma_ow = interfacial_tension(c_surf, p.c_crit);
    let bond = if p.include_bond {
        // Only the vertical component of buoyancy contributes.
        bond.map(|b| BondInputs {
            delta_rho: b.delta_rho * p.flow_angle.sin(),
            ..b
        })
    } else {
        None
    };
    let n_to = trapping_number(u_w_in, mu_w, sigma_ow, p.theta_ow, bond)?;
    let s_or = residual_oil_update(n_to, p);
    let (k_ro0, n_o) = relperm_endpoint_update(s_or, p);
    Ok(ChainOutput {
        sigma_ow,
        n_to,
        s_or,
        k_ro0,
        n_o,
    })
}
