//! Backward differentiation formulas of order 1 and 2 with variable steps.

/// Coefficients `alpha` such that `du/dt ~ sum_k alpha[k] * u^(n+1-k)`.
///
/// Order 2 requires the previous step size; with `dt_prev = None` the
/// formula falls back to order 1.
pub fn bdf_coefficients(order: usize, dt: f64, dt_prev: Option<f64>) -> Vec<f64> {
    match (order, dt_prev) {
        (2, Some(prev)) => {
            let w = dt / prev;
            vec![
                (1.0 + 2.0 * w) / ((1.0 + w) * dt),
                -(1.0 + w) / dt,
                w * w / ((1.0 + w) * dt),
            ]
        }
        _ => vec![1.0 / dt, -1.0 / dt],
    }
}

/// Applies the formula to a state history, most recent level first
/// (`levels[0]` is the new level).
pub fn bdf_step(alpha: &[f64], levels: &[&[f64]], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (a, lvl) in alpha.iter().zip(levels) {
        for (o, v) in out.iter_mut().zip(lvl.iter()) {
            *o += a * v;
        }
    }
}

/// Tracks accepted step sizes to pick the order and coefficients of the
/// next step.
#[derive(Clone, Debug, Default)]
pub struct StepHistory {
    last_dt: Option<f64>,
    max_order: usize,
}

impl StepHistory {
    pub fn new(max_order: usize) -> Self {
        StepHistory {
            last_dt: None,
            max_order: max_order.clamp(1, 2),
        }
    }

    /// Forgets the history so the next step starts with order 1.
    pub fn restart(&mut self) {
        self.last_dt = None;
    }

    pub fn order(&self) -> usize {
        if self.last_dt.is_some() {
            self.max_order
        } else {
            1
        }
    }

    pub fn coefficients(&self, dt: f64) -> Vec<f64> {
        bdf_coefficients(self.order(), dt, self.last_dt)
    }

    pub fn accept(&mut self, dt: f64) {
        self.last_dt = Some(dt);
    }

    pub fn last_dt(&self) -> Option<f64> {
        self.last_dt
    }
}
