//! Error measures between simulated and reference data.

use crate::error::{Error, Result};

/// Linear interpolation in a series with increasing abscissae. Returns
/// `None` outside the sampled range.
pub fn interpolate(x: &[f64], y: &[f64], at: f64) -> Option<f64> {
    if x.is_empty() || at < x[0] || at > x[x.len() - 1] {
        return None;
    }
    let j = x.partition_point(|&v| v < at);
    if j == 0 || x[j] == at {
        return Some(y[j]);
    }
    let w = (at - x[j - 1]) / (x[j] - x[j - 1]);
    Some(y[j - 1] + w * (y[j] - y[j - 1]))
}

/// Root-mean-square difference, with the reference interpolated at the
/// simulated times that fall inside its range.
pub fn rms_error(sim_t: &[f64], sim: &[f64], ref_t: &[f64], reference: &[f64]) -> Result<f64> {
    if sim_t.len() != sim.len() || ref_t.len() != reference.len() {
        return Err(Error::Metric(
            "series and time vectors differ in length".into(),
        ));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (t, v) in sim_t.iter().zip(sim) {
        if let Some(r) = interpolate(ref_t, reference, *t) {
            sum += (v - r) * (v - r);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Metric(
            "simulated and reference series do not overlap".into(),
        ));
    }
    Ok((sum / n as f64).sqrt())
}

/// Last position where a profile decreasing along `z` crosses `level`.
pub fn front_position(z: &[f64], s: &[f64], level: f64) -> Option<f64> {
    let mut found = None;
    for i in 0..z.len().saturating_sub(1) {
        if s[i] >= level && s[i + 1] < level {
            found = Some(z[i] + (level - s[i]) / (s[i + 1] - s[i]) * (z[i + 1] - z[i]));
        }
    }
    found
}

/// Distance over which a profile falls from 90% to 10% of its span
/// between `low` and `high`.
pub fn front_width(z: &[f64], s: &[f64], low: f64, high: f64) -> Option<f64> {
    let upper = front_position(z, s, low + 0.9 * (high - low))?;
    let lower = front_position(z, s, low + 0.1 * (high - low))?;
    Some(lower - upper)
}

/// Trapezoidal L1 distance to `exact`, normalized by the covered length and
/// skipping intervals that touch the window `[x0 - half, x0 + half]`.
pub fn l1_error_excluding(
    z: &[f64],
    s: &[f64],
    exact: impl Fn(f64) -> f64,
    x0: f64,
    half: f64,
) -> Result<f64> {
    if z.len() < 2 || z.len() != s.len() {
        return Err(Error::Metric(
            "profile needs at least two matching samples".into(),
        ));
    }
    let mut sum = 0.0;
    for i in 0..z.len() - 1 {
        let (a, b) = (z[i], z[i + 1]);
        if b >= x0 - half && a <= x0 + half {
            continue;
        }
        sum += 0.5 * ((s[i] - exact(a)).abs() + (s[i + 1] - exact(b)).abs()) * (b - a);
    }
    Ok(sum / (z[z.len() - 1] - z[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_series_have_zero_rms() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y = [0.0, 0.5, 0.8, 1.0];
        assert_eq!(rms_error(&t, &y, &t, &y).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_gives_its_magnitude() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let r: Vec<f64> = t.iter().map(|x| x.sin()).collect();
        let s: Vec<f64> = r.iter().map(|v| v - 0.25).collect();
        assert_relative_eq!(
            rms_error(&t, &s, &t, &r).unwrap(),
            0.25,
            max_relative = 1e-12
        );
    }

    #[test]
    fn reference_is_interpolated_at_simulated_times() {
        let rms = rms_error(&[0.5, 1.5], &[1.0, 3.0], &[0.0, 1.0, 2.0], &[0.0, 2.0, 4.0]).unwrap();
        assert!(rms < 1e-15);
    }

    #[test]
    fn disjoint_series_are_an_error() {
        assert!(matches!(
            rms_error(&[5.0], &[1.0], &[0.0, 1.0], &[0.0, 1.0]),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn front_of_a_ramp() {
        let z = [0.0, 1.0, 2.0, 3.0];
        let s = [1.0, 1.0, 0.0, 0.0];
        assert_relative_eq!(front_position(&z, &s, 0.25).unwrap(), 1.75);
        assert_relative_eq!(front_width(&z, &s, 0.0, 1.0).unwrap(), 0.8);
    }

    #[test]
    fn l1_skips_the_window() {
        let z: Vec<f64> = (0..=10).map(f64::from).collect();
        let s: Vec<f64> = z
            .iter()
            .map(|&x| if x == 5.0 { 9.0 } else { 0.0 })
            .collect();
        assert_eq!(l1_error_excluding(&z, &s, |_| 0.0, 5.0, 0.5).unwrap(), 0.0);
        assert!(l1_error_excluding(&z, &s, |_| 0.0, 2.0, 0.5).unwrap() > 0.0);
    }
}
