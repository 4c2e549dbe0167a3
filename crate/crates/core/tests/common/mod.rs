//! Straight-line scalar reference implementation of the map, kept
//! deliberately independent of the library's vectorized code paths. Used as
//! the ground-truth oracle for equivalence tests.

#![allow(dead_code)]

use spikemap::{NetworkParams, OpticsModel};

pub struct ScalarState {
    pub x: f64,
    pub y: f64,
    pub s: f64,
    pub intensity: f64,
}

/// One neuron, one step, written as plainly as possible.
pub fn scalar_step(
    state: &ScalarState,
    params: &NetworkParams,
    illumination: f64,
    phi: f64,
    kappa: f64,
    quantize: bool,
    powered_on: bool,
    drive: f64,
) -> ScalarState {
    let x_new = -params.delta * state.y + params.beta * state.intensity + drive + params.theta0;
    let y_new = if params.excitable {
        params.eta_mem * state.y + x_new
    } else {
        0.0
    };
    let phase = 2.0 * std::f64::consts::PI * (x_new + phi) / kappa;
    let s_new = phase.sin() * phase.sin();
    let mut intensity = if powered_on {
        let field = illumination.sqrt() * phase.sin();
        field * field
    } else {
        0.0
    };
    if quantize && powered_on {
        intensity = (intensity * 255.0).round() / 255.0;
    }
    ScalarState {
        x: x_new,
        y: y_new,
        s: s_new,
        intensity,
    }
}

/// Scalar trajectory of a homogeneous-or-heterogeneous uncoupled network:
/// every neuron evolves independently. Returns the s values, row-major.
pub fn scalar_run(
    params: &NetworkParams,
    optics: &OpticsModel,
    drive_rows: &[f64],
    steps: usize,
) -> Vec<f64> {
    let n = optics.len();
    let mut states: Vec<ScalarState> = (0..n)
        .map(|_| ScalarState {
            x: 0.0,
            y: 0.0,
            s: 0.0,
            intensity: 0.0,
        })
        .collect();
    let mut out = Vec::with_capacity(steps * n);
    for t in 0..steps {
        for i in 0..n {
            states[i] = scalar_step(
                &states[i],
                params,
                optics.illumination()[i],
                optics.phase_offset()[i],
                optics.conversion()[i],
                optics.spec().quantize_8bit,
                optics.powered_on(),
                drive_rows[t * n + i],
            );
        }
        out.extend(states.iter().map(|s| s.s));
    }
    out
}

/// Scalar settle under zero drive; mirrors the library's rest procedure.
pub fn scalar_rest(
    params: &NetworkParams,
    optics: &OpticsModel,
    tolerance: f64,
    cap: usize,
) -> (Vec<ScalarState>, bool, usize) {
    let n = optics.len();
    let mut states: Vec<ScalarState> = (0..n)
        .map(|_| ScalarState {
            x: 0.0,
            y: 0.0,
            s: 0.0,
            intensity: 0.0,
        })
        .collect();
    let mut prev: Vec<f64> = states.iter().map(|s| s.s).collect();
    for iteration in 1..=cap {
        for i in 0..n {
            states[i] = scalar_step(
                &states[i],
                params,
                optics.illumination()[i],
                optics.phase_offset()[i],
                optics.conversion()[i],
                optics.spec().quantize_8bit,
                optics.powered_on(),
                0.0,
            );
        }
        let worst = states
            .iter()
            .zip(prev.iter())
            .map(|(s, p)| (s.s - p).abs())
            .fold(0.0, f64::max);
        if worst < tolerance {
            return (states, true, iteration);
        }
        for (p, s) in prev.iter_mut().zip(states.iter()) {
            *p = s.s;
        }
    }
    (states, false, cap)
}
