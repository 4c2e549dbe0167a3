use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar hyperparameters of the slow-fast map.
///
/// The per-step update for neuron `i` is
///
/// ```text
/// x(t+1) = -delta * y(t) + beta * I(t) + drive(t+1) + theta0
/// y(t+1) = eta_mem * y(t) + x(t+1)            (y frozen at 0 when !excitable)
/// s(t+1) = sin^2( 2*pi * (x(t+1) + phi_i) / kappa_i )
/// ```
///
/// where `drive` is the externally mixed injection term (see
/// [`crate::mnist::drive_series`] and the sweep protocols) and `phi_i`,
/// `kappa_i` come from the optics model. `I(t)` is the camera intensity
/// computed by the optics model from the previous state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    /// Feedback strength multiplying the camera intensity.
    pub beta: f64,
    /// Injection strength multiplying the input term.
    pub gamma: f64,
    /// Slow negative-feedback strength.
    pub delta: f64,
    /// Slow-variable retention factor (0 disables memory entirely).
    pub eta_mem: f64,
    /// Bias added to the internal state each step.
    pub theta0: f64,
    /// Amplitude threshold for registering a spike.
    pub spike_threshold: f64,
    /// Select the two-variable excitable map; when false the slow variable
    /// is frozen at zero and the map reduces to the plain one-variable form.
    pub excitable: bool,
    /// Transfer gain of the injection channel. The effective drive entering
    /// the state is `injection_gain * gamma * W u`. Calibrated together with
    /// the optics conversion factor; see [`crate::convention`].
    pub injection_gain: f64,
    /// Command-to-response pipeline latency of the simulated loop, in steps.
    /// Drive builders shift their schedules by this amount.
    pub loop_latency: usize,
}

impl NetworkParams {
    /// Parameter set used for the threshold, rate, refractory and latency
    /// protocols (the "optimized" operating point).
    pub fn tuned() -> Self {
        NetworkParams {
            beta: 0.475,
            gamma: 0.3,
            delta: 0.1,
            eta_mem: 0.995,
            theta0: -0.35,
            spike_threshold: 0.6,
            excitable: true,
            injection_gain: crate::convention::INJECTION_GAIN,
            loop_latency: crate::convention::LOOP_LATENCY,
        }
    }

    /// Parameter set of the initial excitability demonstration.
    pub fn baseline() -> Self {
        NetworkParams {
            beta: 0.45,
            theta0: -0.1 * std::f64::consts::PI,
            ..Self::tuned()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta_mem) {
            return Err(Error::InvalidParameter(format!(
                "eta_mem must be in [0, 1], got {}",
                self.eta_mem
            )));
        }
        if !(self.spike_threshold > 0.0 && self.spike_threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "spike_threshold must be in (0, 1), got {}",
                self.spike_threshold
            )));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !self.theta0.is_finite() {
            return Err(Error::InvalidParameter("theta0 must be finite".into()));
        }
        if !self.injection_gain.is_finite() || self.injection_gain <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "injection_gain must be finite and > 0, got {}",
                self.injection_gain
            )));
        }
        Ok(())
    }
}
