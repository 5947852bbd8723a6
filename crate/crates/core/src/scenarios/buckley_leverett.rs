//! Semi-analytic Buckley-Leverett solution by the Welge tangent
//! construction. The fractional flow is evaluated here from first
//! principles so the oracle does not share code with the simulator.

use crate::error::{Error, Result};
use crate::petrophysics::RelpermFamily;

const TANGENT_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlProblem {
    pub family: RelpermFamily,
    /// Exponent for the power family, pore-size index for classic
    /// Brooks-Corey.
    pub exponent: f64,
    /// Endpoints and exponents of the modified Brooks-Corey family.
    pub k_rw0: f64,
    pub k_ro0: f64,
    pub n_w: f64,
    pub n_o: f64,
    pub mu_w: f64,
    pub mu_o: f64,
    pub s_wr: f64,
    pub s_or: f64,
    pub s_w0: f64,
    pub s_w_in: f64,
    /// Injected Darcy velocity (m/s).
    pub u_in: f64,
    pub phi: f64,
}

impl BlProblem {
    /// Water fractional flow as a function of water saturation.
    pub fn fractional_flow(&self, s_w: f64) -> f64 {
        let se = ((s_w - self.s_wr) / (1.0 - self.s_wr - self.s_or)).clamp(0.0, 1.0);
        let (krw, kro) = match self.family {
            RelpermFamily::PowerOmega => (se.powf(self.exponent), (1.0 - se).powf(self.exponent)),
            RelpermFamily::ModifiedBc => (
                self.k_rw0 * se.powf(self.n_w),
                self.k_ro0 * (1.0 - se).powf(self.n_o),
            ),
            RelpermFamily::ClassicBc => {
                let t = self.exponent;
                (
                    se.powf((2.0 + 3.0 * t) / t),
                    (1.0 - se) * (1.0 - se) * (1.0 - se.powf((2.0 + t) / t)),
                )
            }
        };
        let lw = krw / self.mu_w;
        let lo = kro / self.mu_o;
        if lw + lo == 0.0 {
            return 0.0;
        }
        lw / (lw + lo)
    }

    /// Central-difference derivative of the fractional flow, one-sided at
    /// the ends of the mobile range.
    pub fn fractional_flow_slope(&self, s_w: f64) -> f64 {
        let h = 1e-7;
        let lo = (s_w - h).max(self.s_w0.min(self.s_w_in));
        let hi = (s_w + h).min(self.s_w0.max(self.s_w_in));
        (self.fractional_flow(hi) - self.fractional_flow(lo)) / (hi - lo)
    }
}

/// Solution at one time: a rarefaction from the inlet state down to the
/// frontal saturation, then a shock to the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct BlSolution {
    pub problem: BlProblem,
    pub t: f64,
    /// Saturation just behind the shock; equals `s_w0` when the wave is a
    /// pure rarefaction.
    pub s_front: f64,
    /// Shock position (m); for a rarefaction, the leading edge.
    pub x_front: f64,
}

pub fn buckley_leverett_analytic(problem: BlProblem, t: f64) -> Result<BlSolution> {
    let p = problem;
    if !(p.s_w_in > p.s_w0) || !(t >= 0.0) || !(p.phi > 0.0) || !(p.u_in >= 0.0) {
        return Err(Error::Oracle(
            "need s_w_in > s_w0, t >= 0, phi > 0, u_in >= 0".into(),
        ));
    }
    let f0 = p.fractional_flow(p.s_w0);
    // Brute-force tangent from the initial state.
    let mut best = (f64::NEG_INFINITY, p.s_w0);
    for i in 1..=TANGENT_SAMPLES {
        let s = p.s_w0 + (p.s_w_in - p.s_w0) * i as f64 / TANGENT_SAMPLES as f64;
        let slope = (p.fractional_flow(s) - f0) / (s - p.s_w0);
        if slope > best.0 {
            best = (slope, s);
        }
    }
    let (chord, s_star) = best;
    if !chord.is_finite() {
        return Err(Error::Oracle(
            "fractional flow has no finite tangent".into(),
        ));
    }
    // A chord no steeper than the initial slope means no shock forms.
    let initial_slope = p.fractional_flow_slope(p.s_w0);
    let speed = p.u_in * t / p.phi;
    if initial_slope >= chord * (1.0 - 1e-9)
        && s_star <= p.s_w0 + 2.0 * (p.s_w_in - p.s_w0) / TANGENT_SAMPLES as f64
    {
        return Ok(BlSolution {
            problem: p,
            t,
            s_front: p.s_w0,
            x_front: speed * initial_slope,
        });
    }
    Ok(BlSolution {
        problem: p,
        t,
        s_front: s_star,
        x_front: speed * chord,
    })
}

impl BlSolution {
    fn speed(&self) -> f64 {
        self.problem.u_in * self.t / self.problem.phi
    }

    /// Position of saturation `s` inside the rarefaction.
    pub fn position_of(&self, s: f64) -> f64 {
        self.speed() * self.problem.fractional_flow_slope(s)
    }

    /// Saturation at position `x`.
    pub fn saturation(&self, x: f64) -> f64 {
        let p = &self.problem;
        if x >= self.x_front {
            return p.s_w0;
        }
        if x <= self.position_of(p.s_w_in) {
            return p.s_w_in;
        }
        // x(S) decreases with S on [s_front, s_w_in]; bisect.
        let (mut lo, mut hi) = (self.s_front.max(p.s_w0), p.s_w_in);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.position_of(mid) > x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Saturation level used to locate the front in numerical profiles:
    /// halfway up the shock, or halfway between the end states for a
    /// rarefaction.
    pub fn front_level(&self) -> f64 {
        let p = &self.problem;
        if self.s_front > p.s_w0 {
            0.5 * (self.s_front + p.s_w0)
        } else {
            0.5 * (p.s_w_in + p.s_w0)
        }
    }

    /// Position where the exact profile crosses `front_level`.
    pub fn front_position(&self) -> f64 {
        if self.s_front > self.problem.s_w0 {
            self.x_front
        } else {
            self.position_of(self.front_level())
        }
    }

    /// Injected water volume per unit area recovered from the profile by
    /// integrating x(S) over saturation (m).
    pub fn stored_water(&self) -> f64 {
        let p = &self.problem;
        let n = 20_000;
        let a = self.s_front.max(p.s_w0);
        let h = (p.s_w_in - a) / n as f64;
        // Simpson's rule over the rarefaction.
        let mut sum = self.position_of(a) + self.position_of(p.s_w_in);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * self.position_of(a + h * i as f64);
        }
        let fan = sum * h / 3.0;
        p.phi * ((a - p.s_w0) * self.x_front + fan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn case(omega: f64, ratio: f64) -> BlProblem {
        BlProblem {
            family: RelpermFamily::PowerOmega,
            exponent: omega,
            k_rw0: 1.0,
            k_ro0: 1.0,
            n_w: 2.0,
            n_o: 2.0,
            mu_w: 1e-3,
            mu_o: 1e-3 / ratio,
            s_wr: 0.0,
            s_or: 0.2,
            s_w0: 0.0,
            s_w_in: 0.8,
            u_in: 3.4722e-7,
            phi: 0.2,
        }
    }

    const T300: f64 = 300.0 * 86400.0;

    #[test]
    fn linear_unit_ratio_is_a_single_contact_discontinuity() {
        let sol = buckley_leverett_analytic(case(1.0, 1.0), T300).unwrap();
        // f_w = S_e, so every saturation travels at u / (phi (1 - S_wr - S_or)).
        let x = 3.4722e-7 * T300 / (0.2 * 0.8);
        assert_relative_eq!(sol.x_front, x, max_relative = 1e-6);
        assert_relative_eq!(sol.saturation(0.5 * x), 0.8);
        assert_eq!(sol.saturation(1.01 * x), 0.0);
    }

    #[test]
    fn case_a_is_a_full_shock() {
        let sol = buckley_leverett_analytic(case(1.0, 2.0), T300).unwrap();
        assert_relative_eq!(sol.s_front, 0.8, max_relative = 1e-12);
        assert_relative_eq!(sol.x_front, 56.2496, max_relative = 1e-5);
    }

    #[test]
    fn case_b_is_a_rarefaction() {
        let sol = buckley_leverett_analytic(case(1.0, 2.0 / 3.0), T300).unwrap();
        assert_eq!(sol.s_front, 0.0);
        // df_w/dS_e = mu_o / mu_w = 1.5 at S_e = 0 for linear relperms.
        assert_relative_eq!(
            sol.x_front,
            1.5 / 0.8 * 3.4722e-7 * T300 / 0.2,
            max_relative = 1e-5
        );
    }

    /// Case (c) frontal state from the tangent condition solved in closed
    /// form: with f = S^2 / (S^2 + m (1 - S)^2), S_0 = 0 and S_e = S / 0.8,
    /// f(S_e) / S_e = f'(S_e) gives S_e = sqrt(m / (1 + m)).
    #[test]
    fn case_c_tangent_matches_closed_form() {
        let sol = buckley_leverett_analytic(case(2.0, 2.0 / 3.0), T300).unwrap();
        let m: f64 = 2.0 / 3.0;
        let se = (m / (1.0 + m)).sqrt();
        assert_relative_eq!(sol.s_front, 0.8 * se, max_relative = 2e-4);
        let f = se * se / (se * se + m * (1.0 - se) * (1.0 - se));
        let x = 3.4722e-7 * T300 / 0.2 * f / (0.8 * se);
        assert_relative_eq!(sol.x_front, x, max_relative = 1e-4);
    }

    #[test]
    fn oracle_conserves_injected_water() {
        for (omega, ratio) in [(1.0, 2.0), (1.0, 2.0 / 3.0), (2.0, 2.0 / 3.0), (1.0, 1.0)] {
            let sol = buckley_leverett_analytic(case(omega, ratio), T300).unwrap();
            assert_relative_eq!(sol.stored_water(), 3.4722e-7 * T300, max_relative = 1e-6);
        }
    }

    #[test]
    fn invalid_states_are_rejected() {
        let mut p = case(1.0, 1.0);
        p.s_w_in = 0.0;
        assert!(buckley_leverett_analytic(p, T300).is_err());
    }
}
