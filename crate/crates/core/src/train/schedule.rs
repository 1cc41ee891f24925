//! Warm-up schedules for the adversarial and SAF loss weights.

/// `max · tanh(rate · t / T)` with `t` clamped to `T`.
fn tanh_ramp(t: usize, total: usize, max: f64, rate: f64) -> f64 {
    let total = total.max(1);
    let t = t.min(total);
    max * (rate * t as f64 / total as f64).tanh()
}

/// Adversarial weight `λ_D(t) = max · tanh(10t/T)`.
pub fn lambda_d_schedule(t: usize, total: usize, max: f64) -> f64 {
    tanh_ramp(t, total, max, 10.0)
}

/// SAF-supervision weight `λ_M(t) = max · tanh(5t/T)`, a slower ramp.
pub fn lambda_m_schedule(t: usize, total: usize, max: f64) -> f64 {
    tanh_ramp(t, total, max, 5.0)
}
