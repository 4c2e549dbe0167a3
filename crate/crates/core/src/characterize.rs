use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convention;
use crate::dynamics::{rest_state, run, RestState};
use crate::error::{Error, Result};
use crate::optics::{OpticsModel, OpticsSpec};
use crate::params::NetworkParams;
use crate::spikes::rising_crossings;
use crate::state::Trajectory;

/// Scalar stimulus window commanded on `[start, end)`; the loop latency in
/// the network parameters shifts when it reaches the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub start: usize,
    pub end: usize,
    pub value: f64,
}

impl Pulse {
    pub fn new(start: usize, end: usize, value: f64) -> Self {
        Pulse { start, end, value }
    }
}

/// Per-grid-point trajectory summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub max_amplitude: f64,
    pub spike_times: Vec<u32>,
    pub spike_count: usize,
    pub spike_rate: f64,
    pub latency: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub re_excited: Option<bool>,
}

/// Everything needed to rerun a sweep bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub protocol: String,
    pub params: NetworkParams,
    pub optics: OpticsSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Name of the swept variable.
    pub variable: String,
    pub grid: Vec<f64>,
    pub points: Vec<PointSummary>,
    pub meta: SweepMeta,
}

impl SweepResult {
    fn check_grid(grid: &[f64]) -> Result<()> {
        if grid.is_empty() {
            return Err(Error::InvalidParameter("empty sweep grid".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "sweep grid must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform scalar drive for every neuron: the commanded value passes the
/// injection channel (clamp then transfer gain) and the loop latency.
fn scalar_drive_rows(
    n: usize,
    horizon: usize,
    pulses: &[Pulse],
    gamma: f64,
    injection_gain: f64,
    loop_latency: usize,
) -> Vec<f64> {
    let mut rows = vec![0.0; horizon * n];
    for p in pulses {
        for t in p.start + loop_latency..(p.end + loop_latency).min(horizon) {
            let v = injection_gain
                * (gamma * p.value).clamp(-convention::INJECTION_CLAMP, convention::INJECTION_CLAMP);
            rows[t * n..(t + 1) * n].fill(v);
        }
    }
    rows
}

fn settled(params: &NetworkParams, optics: &OpticsModel) -> Result<RestState> {
    rest_state(params, optics)
}

fn run_pulses(
    params: &NetworkParams,
    optics: &OpticsModel,
    rest: &RestState,
    horizon: usize,
    pulses: &[Pulse],
    gamma: f64,
    injection_gain: f64,
) -> Result<Trajectory> {
    let rows = scalar_drive_rows(
        optics.len(),
        horizon,
        pulses,
        gamma,
        injection_gain,
        params.loop_latency,
    );
    run(&rest.state, params, optics, &rows)
}

fn summarize(
    trajectory: &Trajectory,
    threshold: f64,
    onset: usize,
    rate_window: Option<(usize, usize)>,
) -> PointSummary {
    let series: Vec<f64> = trajectory.neuron(0).collect();
    let max_amplitude = series.iter().cloned().fold(0.0, f64::max);
    let spike_times: Vec<u32> = rising_crossings(&series, threshold)
        .into_iter()
        .map(|t| t as u32)
        .collect();
    let (count, rate) = match rate_window {
        Some((a, b)) => {
            let c = spike_times.iter().filter(|&&t| (a as u32..b as u32).contains(&t)).count();
            (c, c as f64 / (b - a) as f64)
        }
        None => (spike_times.len(), 0.0),
    };
    let latency = spike_times
        .iter()
        .find(|&&t| t as usize >= onset)
        .map(|&t| t - onset as u32);
    PointSummary {
        max_amplitude,
        spike_times,
        spike_count: count,
        spike_rate: rate,
        latency,
        re_excited: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitabilitySweep {
    pub sweep: SweepResult,
    /// Midpoint of the steepest grid interval of max amplitude.
    pub threshold: f64,
}

/// Single pulse from rest per grid point, recording the maximum response.
pub fn excitability_sweep(
    params: &NetworkParams,
    optics: &OpticsModel,
    gamma_grid: &[f64],
    pulse: Pulse,
) -> Result<ExcitabilitySweep> {
    SweepResult::check_grid(gamma_grid)?;
    let horizon = pulse.end + params.loop_latency + 225;
    let rest = settled(params, optics)?;
    let points: Vec<PointSummary> = gamma_grid
        .par_iter()
        .map(|&gamma| {
            let tr = run_pulses(
                params,
                optics,
                &rest,
                horizon,
                &[pulse],
                gamma,
                params.injection_gain,
            )?;
            Ok(summarize(&tr, params.spike_threshold, pulse.start, None))
        })
        .collect::<Result<_>>()?;
    let threshold = steepest_midpoint(gamma_grid, &points.iter().map(|p| p.max_amplitude).collect::<Vec<_>>());
    Ok(ExcitabilitySweep {
        sweep: SweepResult {
            variable: "gamma".into(),
            grid: gamma_grid.to_vec(),
            points,
            meta: SweepMeta {
                protocol: "excitability".into(),
                params: params.clone(),
                optics: optics.spec().clone(),
            },
        },
        threshold,
    })
}

/// Threshold estimation by steepest-interval midpoint; robust on coarse grids.
fn steepest_midpoint(grid: &[f64], values: &[f64]) -> f64 {
    if grid.len() < 2 {
        return grid[0];
    }
    let mut best = 0;
    let mut best_jump = f64::NEG_INFINITY;
    for i in 0..values.len().saturating_sub(1) {
        let jump = values[i + 1] - values[i];
        if jump > best_jump {
            best_jump = jump;
            best = i;
        }
    }
    0.5 * (grid[best] + grid[best + 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateProtocol {
    /// Step at which the constant stimulus switches on.
    pub constant_from: usize,
    pub horizon: usize,
    /// Steps after stimulus onset discarded before counting.
    pub transient: usize,
    /// Injection gain of the sustained-drive session.
    pub injection_gain: f64,
}

impl Default for RateProtocol {
    fn default() -> Self {
        RateProtocol {
            constant_from: 500,
            horizon: 4000,
            transient: 100,
            injection_gain: convention::SUSTAINED_INJECTION_GAIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSweep {
    pub sweep: SweepResult,
    pub onset_gamma: Option<f64>,
    pub onset_rate: Option<f64>,
}

/// Constant stimulation per grid point; spikes counted with hysteresis in
/// the window after the transient.
pub fn spike_rate_sweep(
    params: &NetworkParams,
    optics: &OpticsModel,
    gamma_grid: &[f64],
    protocol: RateProtocol,
) -> Result<RateSweep> {
    SweepResult::check_grid(gamma_grid)?;
    if protocol.horizon <= protocol.constant_from + protocol.transient {
        return Err(Error::InvalidParameter(
            "rate horizon must extend past onset and transient".into(),
        ));
    }
    let rest = settled(params, optics)?;
    let window = (
        protocol.constant_from + protocol.transient,
        protocol.horizon,
    );
    let pulse = Pulse::new(protocol.constant_from, protocol.horizon, 1.0);
    let points: Vec<PointSummary> = gamma_grid
        .par_iter()
        .map(|&gamma| {
            let tr = run_pulses(
                params,
                optics,
                &rest,
                protocol.horizon,
                &[pulse],
                gamma,
                protocol.injection_gain,
            )?;
            Ok(summarize(
                &tr,
                params.spike_threshold,
                protocol.constant_from,
                Some(window),
            ))
        })
        .collect::<Result<_>>()?;
    // onset = first grid point with a persistent response (>= 3 spikes in
    // the window, so single transients do not count)
    let onset = points.iter().position(|p| p.spike_count >= 3);
    Ok(RateSweep {
        onset_gamma: onset.map(|i| gamma_grid[i]),
        onset_rate: onset.map(|i| points[i].spike_rate),
        sweep: SweepResult {
            variable: "gamma".into(),
            grid: gamma_grid.to_vec(),
            points,
            meta: SweepMeta {
                protocol: "spike-rate".into(),
                params: params.clone(),
                optics: optics.spec().clone(),
            },
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefractoryProtocol {
    pub first_start: usize,
    pub first_end: usize,
    pub second_len: usize,
    pub horizon: usize,
}

impl Default for RefractoryProtocol {
    fn default() -> Self {
        RefractoryProtocol {
            first_start: 500,
            first_end: 505,
            second_len: 4,
            horizon: 700,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefractorySweep {
    pub sweep: SweepResult,
    pub gain: f64,
    /// Smallest probed delay at which the second pulse elicited a new spike.
    pub min_reexcite_tau: Option<u32>,
    /// No re-excitation happened at any delay below `min_reexcite_tau`.
    pub clean_below: bool,
}

/// Twin-pulse probe: a fixed conditioning pulse, then a delayed second pulse
/// scaled by `second_pulse_gain`. A delay re-excites when its run contains
/// more threshold crossings than the conditioning-pulse-only reference.
pub fn refractory_probe(
    params: &NetworkParams,
    optics: &OpticsModel,
    gamma: f64,
    tau_grid: &[u32],
    second_pulse_gain: f64,
    protocol: RefractoryProtocol,
) -> Result<RefractorySweep> {
    if tau_grid.is_empty() {
        return Err(Error::InvalidParameter("empty tau grid".into()));
    }
    let rest = settled(params, optics)?;
    let first = Pulse::new(protocol.first_start, protocol.first_end, 1.0);
    let reference = run_pulses(
        params,
        optics,
        &rest,
        protocol.horizon,
        &[first],
        gamma,
        params.injection_gain,
    )?;
    let ref_series: Vec<f64> = reference.neuron(0).collect();
    let ref_count = rising_crossings(&ref_series, params.spike_threshold).len();

    let points: Vec<PointSummary> = tau_grid
        .par_iter()
        .map(|&tau| {
            let second_start = protocol.first_end + 1 + tau as usize;
            let second = Pulse::new(
                second_start,
                second_start + protocol.second_len,
                second_pulse_gain,
            );
            let tr = run_pulses(
                params,
                optics,
                &rest,
                protocol.horizon,
                &[first, second],
                gamma,
                params.injection_gain,
            )?;
            let mut summary =
                summarize(&tr, params.spike_threshold, protocol.first_start, None);
            summary.re_excited = Some(summary.spike_times.len() > ref_count);
            Ok(summary)
        })
        .collect::<Result<_>>()?;

    let min_idx = points
        .iter()
        .position(|p| p.re_excited == Some(true));
    let clean_below = match min_idx {
        Some(i) => points[..i].iter().all(|p| p.re_excited == Some(false)),
        None => true,
    };
    Ok(RefractorySweep {
        gain: second_pulse_gain,
        min_reexcite_tau: min_idx.map(|i| tau_grid[i]),
        clean_below,
        sweep: SweepResult {
            variable: "tau".into(),
            grid: tau_grid.iter().map(|&t| t as f64).collect(),
            points,
            meta: SweepMeta {
                protocol: "refractory".into(),
                params: params.clone(),
                optics: optics.spec().clone(),
            },
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySweep {
    pub sweep: SweepResult,
}

/// First-crossing latency per injection strength, from rest. Grid points
/// below threshold report no latency; that is not an error.
pub fn latency_curve(
    params: &NetworkParams,
    optics: &OpticsModel,
    gamma_grid: &[f64],
    pulse: Pulse,
) -> Result<LatencySweep> {
    SweepResult::check_grid(gamma_grid)?;
    let horizon = pulse.end + params.loop_latency + 225;
    let rest = settled(params, optics)?;
    let points: Vec<PointSummary> = gamma_grid
        .par_iter()
        .map(|&gamma| {
            let tr = run_pulses(
                params,
                optics,
                &rest,
                horizon,
                &[pulse],
                gamma,
                params.injection_gain,
            )?;
            Ok(summarize(&tr, params.spike_threshold, pulse.start, None))
        })
        .collect::<Result<_>>()?;
    Ok(LatencySweep {
        sweep: SweepResult {
            variable: "gamma".into(),
            grid: gamma_grid.to_vec(),
            points,
            meta: SweepMeta {
                protocol: "latency".into(),
                params: params.clone(),
                optics: optics.spec().clone(),
            },
        },
    })
}

/// CSV with one row per grid point.
pub fn write_sweep_csv<W: Write>(sweep: &SweepResult, mut w: W) -> Result<()> {
    writeln!(
        w,
        "{},max_amplitude,spike_count,spike_rate,latency,re_excited",
        sweep.variable
    )?;
    for (g, p) in sweep.grid.iter().zip(sweep.points.iter()) {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            g,
            p.max_amplitude,
            p.spike_count,
            p.spike_rate,
            p.latency.map(|l| l.to_string()).unwrap_or_default(),
            p.re_excited.map(|r| r.to_string()).unwrap_or_default(),
        )?;
    }
    Ok(())
}
