use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optics::OpticsModel;
use crate::params::NetworkParams;
use crate::state::{NeuronArrays, Trajectory};

const TWO_PI: f64 = std::f64::consts::TAU;

/// Neuron count below which the update loop stays single threaded. The
/// per-neuron update is elementwise, so the threaded and serial paths are
/// bit-identical.
const PAR_THRESHOLD: usize = 16384;

/// Advance the network one step.
///
/// `drive` is the fully mixed injection term (`injection_gain * gamma * W u`
/// for the producers in this crate); the optics model supplies the camera
/// intensity that closes the loop.
pub fn step(
    state: &NeuronArrays,
    params: &NetworkParams,
    optics: &OpticsModel,
    drive: &[f64],
) -> Result<NeuronArrays> {
    let mut sim = Simulator::with_state(params.clone(), optics.clone(), state.clone())?;
    sim.step(drive)?;
    Ok(sim.into_state())
}

/// Reusable stepping loop holding scratch buffers so the hot path does not
/// allocate.
pub struct Simulator {
    params: NetworkParams,
    optics: OpticsModel,
    state: NeuronArrays,
    field: Vec<f64>,
}

impl Simulator {
    pub fn new(params: NetworkParams, optics: OpticsModel) -> Result<Self> {
        let n = optics.len();
        Self::with_state(params, optics, NeuronArrays::zeroed(n))
    }

    pub fn with_state(
        params: NetworkParams,
        optics: OpticsModel,
        state: NeuronArrays,
    ) -> Result<Self> {
        params.validate()?;
        state.check_consistent()?;
        if state.len() != optics.len() {
            return Err(Error::Dimension {
                expected: optics.len(),
                got: state.len(),
                context: "state vs optics size",
            });
        }
        let n = state.len();
        Ok(Simulator {
            params,
            optics,
            state,
            field: vec![0.0; n],
        })
    }

    pub fn state(&self) -> &NeuronArrays {
        &self.state
    }

    pub fn into_state(self) -> NeuronArrays {
        self.state
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn optics(&self) -> &OpticsModel {
        &self.optics
    }

    pub fn optics_mut(&mut self) -> &mut OpticsModel {
        &mut self.optics
    }

    pub fn set_state(&mut self, state: NeuronArrays) -> Result<()> {
        state.check_consistent()?;
        if state.len() != self.optics.len() {
            return Err(Error::Dimension {
                expected: self.optics.len(),
                got: state.len(),
                context: "state vs optics size",
            });
        }
        self.state = state;
        Ok(())
    }

    /// One update of every neuron followed by the optics intensity pass.
    pub fn step(&mut self, drive: &[f64]) -> Result<()> {
        let n = self.state.len();
        if drive.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: drive.len(),
                context: "drive vector",
            });
        }
        let p = &self.params;
        let excitable = p.excitable;
        let (beta, delta, eta, theta0) = (p.beta, p.delta, p.eta_mem, p.theta0);
        let phase_offset = self.optics.phase_offset();
        let conversion = self.optics.conversion();

        let body = |((x, (y, s)), ((&d, &intensity), (&phi, &kappa))): (
            (&mut f64, (&mut f64, &mut f64)),
            ((&f64, &f64), (&f64, &f64)),
        )| {
            let x_new = -delta * *y + beta * intensity + d + theta0;
            *y = if excitable { eta * *y + x_new } else { 0.0 };
            *x = x_new;
            *s = (TWO_PI * (x_new + phi) / kappa).sin().powi(2);
        };

        if n >= PAR_THRESHOLD {
            self.state
                .x
                .par_iter_mut()
                .zip(self.state.y.par_iter_mut().zip(self.state.s.par_iter_mut()))
                .zip(
                    drive
                        .par_iter()
                        .zip(self.state.intensity.par_iter())
                        .zip(phase_offset.par_iter().zip(conversion.par_iter())),
                )
                .for_each(body);
        } else {
            self.state
                .x
                .iter_mut()
                .zip(self.state.y.iter_mut().zip(self.state.s.iter_mut()))
                .zip(
                    drive
                        .iter()
                        .zip(self.state.intensity.iter())
                        .zip(phase_offset.iter().zip(conversion.iter())),
                )
                .for_each(body);
        }

        self.optics.field_into(&self.state.x, &mut self.field)?;
        self.optics
            .intensity_into(&self.field, &mut self.state.intensity)?;
        Ok(())
    }

    /// Run `rows` steps, the drive for step `t` produced by `drive_row`,
    /// recording `s` after every step.
    pub fn run_with<F>(&mut self, rows: usize, mut drive_row: F) -> Result<Trajectory>
    where
        F: FnMut(usize, &mut [f64]),
    {
        let n = self.state.len();
        let mut trajectory = Trajectory::with_capacity(n, rows);
        let mut drive = vec![0.0; n];
        for t in 0..rows {
            drive.fill(0.0);
            drive_row(t, &mut drive);
            self.step(&drive)?;
            trajectory.push_row(&self.state.s);
        }
        Ok(trajectory)
    }
}

/// Batched iteration of [`step`]: row `t` of the result is the `s` state
/// after `t + 1` steps, bit-identical to sequential `step` calls.
pub fn run(
    state: &NeuronArrays,
    params: &NetworkParams,
    optics: &OpticsModel,
    input_series: &[f64],
) -> Result<Trajectory> {
    let n = state.len();
    if n == 0 || input_series.len() % n != 0 {
        return Err(Error::Dimension {
            expected: n,
            got: input_series.len(),
            context: "input series not a multiple of neuron count",
        });
    }
    let rows = input_series.len() / n;
    let mut sim = Simulator::with_state(params.clone(), optics.clone(), state.clone())?;
    sim.run_with(rows, |t, out| {
        out.copy_from_slice(&input_series[t * n..(t + 1) * n])
    })
}

/// Result of settling the network under zero input.
#[derive(Debug, Clone)]
pub struct RestState {
    pub state: NeuronArrays,
    pub converged: bool,
    pub iterations: usize,
    pub tolerance: f64,
}

pub const REST_TOLERANCE: f64 = 1e-10;
pub const REST_MAX_STEPS: usize = 10_000;

/// Iterate with zero input until the output settles
/// (`max_i |s_i(t+1) - s_i(t)| < tolerance`) or the step cap is reached.
/// Non-convergence is reported, not fatal.
pub fn rest_state(params: &NetworkParams, optics: &OpticsModel) -> Result<RestState> {
    rest_state_with(params, optics, REST_TOLERANCE, REST_MAX_STEPS)
}

pub fn rest_state_with(
    params: &NetworkParams,
    optics: &OpticsModel,
    tolerance: f64,
    max_steps: usize,
) -> Result<RestState> {
    let n = optics.len();
    let mut sim = Simulator::new(params.clone(), optics.clone())?;
    let zero = vec![0.0; n];
    let mut prev = sim.state().s.clone();
    for iteration in 1..=max_steps {
        sim.step(&zero)?;
        let worst = sim
            .state()
            .s
            .iter()
            .zip(prev.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if worst < tolerance {
            return Ok(RestState {
                state: sim.into_state(),
                converged: true,
                iterations: iteration,
                tolerance,
            });
        }
        prev.copy_from_slice(&sim.state().s);
    }
    Ok(RestState {
        state: sim.into_state(),
        converged: false,
        iterations: max_steps,
        tolerance,
    })
}
