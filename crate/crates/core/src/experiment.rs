//! Response-generation pipeline: simulate one presentation per image from
//! the rest state, detect first spikes, and assemble gated feature batches
//! for readout training.
//!
//! Responses are generated independently per image (the zero-clamped gap in
//! the schedule exists precisely so presentations do not interact), which
//! makes the stage embarrassingly parallel and the cache reusable across
//! gating windows and trainers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rest_state, Simulator};
use crate::error::{Error, Result};
use crate::mnist::{build_projection, injection_row, InputProjection, MnistImages};
use crate::optics::{OpticsModel, OpticsSpec};
use crate::params::NetworkParams;
use crate::readout::{append_bias, one_hot, Batch};
use crate::spikes::{detect_spikes, gate_with, FeatureMode, SpikeRecord};

/// Everything that determines a response ensemble. Hash this (serialized)
/// to key caches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSettings {
    pub params: NetworkParams,
    pub optics: OpticsSpec,
    pub projection_seed: u64,
    /// Injection strength applied to the mixed image drive.
    pub gamma: f64,
    pub on_steps: usize,
    pub off_steps: usize,
}

impl ResponseSettings {
    pub fn presentation_len(&self) -> usize {
        self.on_steps + self.off_steps
    }
}

/// Simulate the listed images and return one spike record per image, in
/// order. Each presentation starts from the settled rest state.
pub fn generate_responses(
    settings: &ResponseSettings,
    images: &MnistImages,
    indices: &[usize],
) -> Result<Vec<SpikeRecord>> {
    settings.params.validate()?;
    let optics = OpticsModel::from_spec(&settings.optics)?;
    let n = optics.len();
    let projection = build_projection(n, images.n_pixels(), settings.projection_seed)?;
    let rest = rest_state(&settings.params, &optics)?;
    let plen = settings.presentation_len();
    let lag = settings.params.loop_latency;
    if lag + settings.on_steps > plen {
        return Err(Error::InvalidParameter(
            "loop latency pushes the on window outside the presentation".into(),
        ));
    }

    indices
        .par_iter()
        .map(|&idx| {
            let mixed = projection.mix(images.image(idx))?;
            let mut row = vec![0.0; n];
            injection_row(&mixed, settings.gamma, settings.params.injection_gain, &mut row);
            let mut sim = Simulator::with_state(
                settings.params.clone(),
                optics.clone(),
                rest.state.clone(),
            )?;
            let on = lag..lag + settings.on_steps;
            let trajectory = sim.run_with(plen, |t, out| {
                if on.contains(&t) {
                    out.copy_from_slice(&row);
                }
            })?;
            detect_spikes(&trajectory, 0, settings.params.spike_threshold)
        })
        .collect()
}

/// Gated feature batch (bias column appended) plus one-hot targets.
pub struct FeatureSet {
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub m: usize,
    pub d: usize,
    pub c: usize,
    /// Mean fraction of neurons gated in across records.
    pub active_fraction: f64,
}

impl FeatureSet {
    pub fn batch(&self) -> Batch<'_> {
        Batch::new(&self.features, &self.targets, self.m, self.d, self.c)
            .expect("internally consistent")
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.active_fraction
    }
}

pub fn build_features(
    records: &[SpikeRecord],
    labels: &[u8],
    delta_l: u32,
    mode: FeatureMode,
    n_classes: usize,
) -> Result<FeatureSet> {
    if records.len() != labels.len() {
        return Err(Error::Dimension {
            expected: records.len(),
            got: labels.len(),
            context: "records vs labels",
        });
    }
    if records.is_empty() {
        return Err(Error::InvalidParameter("no records to gate".into()));
    }
    let n = records[0].len();
    let m = records.len();
    let mut raw = Vec::with_capacity(m * n);
    let mut active = 0usize;
    for record in records {
        let resp = gate_with(record, delta_l, mode);
        active += resp.active_count;
        raw.extend_from_slice(&resp.features);
    }
    let features = append_bias(&raw, m, n);
    let targets = one_hot(labels, n_classes);
    Ok(FeatureSet {
        features,
        targets,
        m,
        d: n + 1,
        c: n_classes,
        active_fraction: active as f64 / (m * n) as f64,
    })
}

/// Projection regenerated from the settings, for callers that need the raw
/// mixing matrix (e.g. drive inspection).
pub fn projection_for(settings: &ResponseSettings, n_pixels: usize) -> Result<InputProjection> {
    let optics = OpticsModel::from_spec(&settings.optics)?;
    build_projection(optics.len(), n_pixels, settings.projection_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convention;

    fn tiny_images(count: usize, pixels: usize) -> MnistImages {
        let data: Vec<f64> = (0..count * pixels)
            .map(|k| ((k * 37 % 11) as f64) / 10.0)
            .collect();
        MnistImages {
            count,
            rows: 1,
            cols: pixels,
            pixels: data,
        }
    }

    fn settings(n: usize) -> ResponseSettings {
        ResponseSettings {
            params: NetworkParams::tuned(),
            optics: OpticsSpec::ideal((1, n)),
            projection_seed: 5,
            gamma: 8.0,
            on_steps: 23,
            off_steps: 25,
        }
    }

    #[test]
    fn responses_are_deterministic_and_ordered() {
        let images = tiny_images(4, 16);
        let s = settings(32);
        let a = generate_responses(&s, &images, &[0, 1, 2, 3]).unwrap();
        let b = generate_responses(&s, &images, &[0, 1, 2, 3]).unwrap();
        assert_eq!(a, b);
        // image subsets pick the same per-image records
        let c = generate_responses(&s, &images, &[2]).unwrap();
        assert_eq!(c[0], a[2]);
    }

    #[test]
    fn features_respect_window_nesting() {
        let images = tiny_images(6, 16);
        let s = settings(64);
        let records = generate_responses(&s, &images, &[0, 1, 2, 3, 4, 5]).unwrap();
        let labels = [0u8, 1, 2, 0, 1, 2];
        let narrow = build_features(&records, &labels, 1, FeatureMode::Amplitude, 10).unwrap();
        let wide =
            build_features(&records, &labels, u32::MAX, FeatureMode::Amplitude, 10).unwrap();
        assert!(narrow.active_fraction <= wide.active_fraction);
        assert_eq!(narrow.d, 65);
        assert_eq!(narrow.m, 6);
        // bias column present exactly once per row
        for i in 0..narrow.m {
            assert_eq!(narrow.features[i * narrow.d + narrow.d - 1], 1.0);
        }
    }

    #[test]
    fn presentation_window_respects_loop_latency() {
        let s = settings(8);
        assert_eq!(s.presentation_len(), 48);
        assert_eq!(convention::LOOP_LATENCY + 23 <= 48, true);
    }
}
