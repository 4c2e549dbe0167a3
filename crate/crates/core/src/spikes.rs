use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::Simulator;
use crate::error::{Error, Result};
use crate::optics::OpticsModel;
use crate::params::NetworkParams;
use crate::state::{NeuronArrays, Trajectory};

/// First threshold crossing per neuron for one stimulus presentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeRecord {
    pub stimulus_onset: u32,
    /// Absolute step of the first crossing, per neuron; `None` when the
    /// neuron never crossed.
    pub first_spike_time: Vec<Option<u32>>,
    /// Amplitude at the first crossing, per neuron.
    pub amplitude: Vec<Option<f64>>,
}

impl SpikeRecord {
    pub fn len(&self) -> usize {
        self.first_spike_time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_spike_time.is_empty()
    }

    /// Steps between stimulus onset and the first crossing.
    pub fn latency(&self, neuron: usize) -> Option<u32> {
        self.first_spike_time[neuron].map(|t| t - self.stimulus_onset)
    }

    pub fn latencies(&self) -> impl Iterator<Item = Option<u32>> + '_ {
        (0..self.len()).map(|i| self.latency(i))
    }

    /// Earliest first-spike time across the population.
    pub fn t0(&self) -> Option<u32> {
        self.first_spike_time.iter().flatten().min().copied()
    }
}

/// Rank-order gated feature vector for one stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseResponse {
    /// One entry per neuron; zero for gated-out or silent neurons.
    pub features: Vec<f64>,
    pub delta_l: u32,
    /// Population first-spike time; `None` when nothing spiked.
    pub t0: Option<u32>,
    pub active_count: usize,
    pub sparsity: f64,
}

/// What value a gated-in neuron contributes to the feature vector.
/// Amplitude is the default; the others exist for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    #[default]
    Amplitude,
    Binary,
    Latency,
}

/// First crossing of `spike_threshold` at or after `stimulus_onset`, per
/// neuron, with the amplitude at that step.
pub fn detect_spikes(
    trajectory: &Trajectory,
    stimulus_onset: usize,
    spike_threshold: f64,
) -> Result<SpikeRecord> {
    if stimulus_onset >= trajectory.len() {
        return Err(Error::TimeRange {
            index: stimulus_onset,
            len: trajectory.len(),
        });
    }
    let n = trajectory.n_neurons();
    let mut first = vec![None; n];
    let mut amplitude = vec![None; n];
    let mut remaining = n;
    for t in stimulus_onset..trajectory.len() {
        if remaining == 0 {
            break;
        }
        let row = trajectory.row(t);
        for i in 0..n {
            if first[i].is_none() && row[i] > spike_threshold {
                first[i] = Some(t as u32);
                amplitude[i] = Some(row[i]);
                remaining -= 1;
            }
        }
    }
    Ok(SpikeRecord {
        stimulus_onset: stimulus_onset as u32,
        first_spike_time: first,
        amplitude,
    })
}

/// Keep neurons whose first spike falls within `delta_l` steps of the
/// population's first spike (`c(t) <= delta_l`, ties included).
pub fn gate(record: &SpikeRecord, delta_l: u32) -> SparseResponse {
    gate_with(record, delta_l, FeatureMode::Amplitude)
}

pub fn gate_with(record: &SpikeRecord, delta_l: u32, mode: FeatureMode) -> SparseResponse {
    let n = record.len();
    let mut features = vec![0.0; n];
    let t0 = record.t0();
    let mut active = 0;
    if let Some(t0) = t0 {
        let cutoff = t0.saturating_add(delta_l);
        for i in 0..n {
            if let Some(t) = record.first_spike_time[i] {
                if t <= cutoff {
                    features[i] = match mode {
                        FeatureMode::Amplitude => record.amplitude[i].unwrap_or(0.0),
                        FeatureMode::Binary => 1.0,
                        FeatureMode::Latency => (t - record.stimulus_onset) as f64,
                    };
                    active += 1;
                }
            }
        }
    }
    SparseResponse {
        features,
        delta_l,
        t0,
        active_count: active,
        sparsity: 1.0 - active as f64 / n.max(1) as f64,
    }
}

/// Counts of onset-relative latencies of gated-in neurons across records.
pub fn latency_histogram(records: &[SpikeRecord], delta_l: u32) -> BTreeMap<u32, usize> {
    let mut hist = BTreeMap::new();
    for record in records {
        let Some(t0) = record.t0() else { continue };
        let cutoff = t0.saturating_add(delta_l);
        for i in 0..record.len() {
            if let Some(t) = record.first_spike_time[i] {
                if t <= cutoff {
                    *hist.entry(t - record.stimulus_onset).or_insert(0) += 1;
                }
            }
        }
    }
    hist
}

/// Gate every record at every window of an ascending `delta_l` ladder.
/// Active sets are nested: anything active at a smaller window stays active
/// at a larger one.
pub fn rank_order_feature_series(
    records: &[SpikeRecord],
    delta_l_values: &[u32],
) -> Result<Vec<Vec<SparseResponse>>> {
    if delta_l_values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::UnsortedDeltaL);
    }
    Ok(records
        .iter()
        .map(|r| delta_l_values.iter().map(|&d| gate(r, d)).collect())
        .collect())
}

/// Rising-edge crossing times with one-step hysteresis: a new spike counts
/// only after the signal has fallen back to or below the threshold.
pub fn rising_crossings(series: &[f64], threshold: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut above = false;
    for (t, &v) in series.iter().enumerate() {
        let now = v > threshold;
        if now && !above {
            out.push(t);
        }
        above = now;
    }
    out
}

/// Outcome of a run where the illumination is physically cut once the
/// gating window closes.
#[derive(Debug, Clone)]
pub struct QuenchedRun {
    pub trajectory: Trajectory,
    pub record: SpikeRecord,
    /// Step at which the power was cut, when a spike occurred.
    pub quench_time: Option<usize>,
}

/// Simulate with a hard cutoff: once the first population spike at `t0` is
/// observed and `delta_l` further steps have elapsed, switch the illumination
/// off for the remainder of the run. Features gated at the same `delta_l`
/// match the free-running run exactly, since the dynamics only diverge after
/// the window closes.
pub fn run_with_quench(
    start: &NeuronArrays,
    params: &NetworkParams,
    optics: &OpticsModel,
    input_series: &[f64],
    stimulus_onset: usize,
    delta_l: u32,
) -> Result<QuenchedRun> {
    let n = start.len();
    if n == 0 || input_series.len() % n != 0 {
        return Err(Error::Dimension {
            expected: n,
            got: input_series.len(),
            context: "input series not a multiple of neuron count",
        });
    }
    let rows = input_series.len() / n;
    let mut sim = Simulator::with_state(params.clone(), optics.clone(), start.clone())?;
    let mut trajectory = Trajectory::with_capacity(n, rows);
    let mut t0: Option<usize> = None;
    let mut quench_time = None;
    for t in 0..rows {
        if let Some(t0) = t0 {
            if quench_time.is_none() && t > t0 + delta_l as usize {
                sim.optics_mut().set_power(false);
                quench_time = Some(t);
            }
        }
        sim.step(&input_series[t * n..(t + 1) * n])?;
        trajectory.push_row(&sim.state().s);
        if t0.is_none()
            && t >= stimulus_onset
            && sim.state().s.iter().any(|&v| v > params.spike_threshold)
        {
            t0 = Some(t);
        }
    }
    let record = detect_spikes(&trajectory, stimulus_onset, params.spike_threshold)?;
    Ok(QuenchedRun {
        trajectory,
        record,
        quench_time,
    })
}

/// Columnar CSV: `neuron_id,first_spike_time,latency,amplitude`, empty
/// fields for silent neurons.
pub fn write_spike_csv<W: Write>(record: &SpikeRecord, mut w: W) -> Result<()> {
    writeln!(w, "neuron_id,first_spike_time,latency,amplitude")?;
    for i in 0..record.len() {
        match record.first_spike_time[i] {
            Some(t) => writeln!(
                w,
                "{},{},{},{}",
                i,
                t,
                t - record.stimulus_onset,
                record.amplitude[i].unwrap_or(0.0)
            )?,
            None => writeln!(w, "{},,,", i)?,
        }
    }
    Ok(())
}
