//! Newton-Raphson iteration on assembled sparse systems.

use log::trace;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::lu::BandLu;
use crate::numerics::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_iterations: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            rtol: 1e-8,
            atol: 1e-12,
            max_iterations: 25,
        }
    }
}

/// A square nonlinear system R(u) = 0.
pub trait NonlinearProblem {
    fn n_fields(&self) -> usize;

    /// Fills the residual and, when requested, the Jacobian dR/du.
    fn evaluate(&mut self, u: &[f64], r: &mut [f64], jac: Option<&mut CsrMatrix>) -> Result<()>;

    /// Weights applied to residual entries before taking the norm.
    fn residual_weights(&self) -> Option<&[f64]> {
        None
    }

    /// Hook to modify an iterate after each update.
    fn project(&self, _u: &mut [f64]) {}
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub history: Vec<f64>,
}

const STALL_FACTOR: f64 = 100.0;

fn weighted_norm(r: &[f64], w: Option<&[f64]>) -> f64 {
    match w {
        Some(w) => r
            .iter()
            .zip(w)
            .fold(0.0f64, |m, (v, s)| m.max((v * s).abs())),
        None => r.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    }
}

/// Runs Newton iterations from `u` in place. `jac` must carry the pattern
/// the problem writes into.
pub fn newton_solve<P: NonlinearProblem>(
    problem: &mut P,
    u: &mut [f64],
    jac: &mut CsrMatrix,
    cfg: &NewtonConfig,
) -> Result<NewtonReport> {
    let n = u.len();
    let mut r = vec![0.0; n];
    problem.evaluate(u, &mut r, Some(jac))?;
    let r0 = weighted_norm(&r, problem.residual_weights());
    let mut history = vec![r0];
    if !r0.is_finite() {
        return Err(Error::NewtonDiverged {
            iterations: 0,
            residual: r0,
        });
    }
    let target = cfg.rtol * r0 + cfg.atol;
    if r0 <= cfg.atol {
        return Ok(NewtonReport {
            iterations: 0,
            initial_residual: r0,
            final_residual: r0,
            history,
        });
    }
    for it in 1..=cfg.max_iterations {
        let lu = BandLu::factor(jac, problem.n_fields())?;
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let du = lu.solve(&neg);
        for (ui, d) in u.iter_mut().zip(&du) {
            *ui += d;
        }
        problem.project(u);
        problem.evaluate(u, &mut r, Some(jac))?;
        let rn = weighted_norm(&r, problem.residual_weights());
        history.push(rn);
        trace!("newton it={it} residual={rn:.6e}");
        if !rn.is_finite() {
            return Err(Error::NewtonDiverged {
                iterations: it,
                residual: rn,
            });
        }
        let prev = history[history.len() - 2];
        // A residual that has stopped contracting close to the absolute
        // tolerance is at the round-off floor of the difference Jacobian.
        let stalled = rn <= STALL_FACTOR * cfg.atol && rn > 0.5 * prev;
        if rn <= target || stalled {
            return Ok(NewtonReport {
                iterations: it,
                initial_residual: r0,
                final_residual: rn,
                history,
            });
        }
    }
    Err(Error::NewtonDiverged {
        iterations: cfg.max_iterations,
        residual: *history.last().unwrap_or(&r0),
    })
}
