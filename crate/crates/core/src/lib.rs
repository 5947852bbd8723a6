//! Finite-element simulator for microbial enhanced oil recovery core floods.
//!
//! Two-phase incompressible flow in oil-pressure / water-saturation form is
//! coupled sequentially to advection-dispersion-reaction transport of
//! microorganisms, nutrients and biosurfactant. Sessile biomass clogs the
//! pore space and surfactant lowers the interfacial tension, which in turn
//! mobilizes residual oil.

pub mod biokinetics;
pub mod coupling;
pub mod error;
pub mod flow;
pub mod io;
pub mod mesh;
pub mod numerics;
pub mod petrophysics;
pub mod scenarios;
pub mod transport;

pub use error::{Error, Result};
