use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convention;
use crate::error::{Error, Result};

const TWO_PI: f64 = std::f64::consts::TAU;

/// Neuron count below which the optics paths stay single threaded.
const PAR_THRESHOLD: usize = 16384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpticsMode {
    Ideal,
    Heterogeneous,
    DoeCoupled,
}

/// Small real-valued convolution stencil coupling neighbouring pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeKernel {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

impl DoeKernel {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self> {
        if rows % 2 == 0 || cols % 2 == 0 {
            return Err(Error::InvalidParameter(
                "coupling kernel must have odd side lengths".into(),
            ));
        }
        if weights.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: weights.len(),
                context: "kernel weights",
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "kernel weights must be finite".into(),
            ));
        }
        Ok(DoeKernel {
            rows,
            cols,
            weights,
        })
    }

    /// Generic center-dominant 3x3 coupling; the physical element's actual
    /// footprint is device specific, so this is only a configurable default.
    pub fn center_dominant() -> Self {
        DoeKernel::new(
            3,
            3,
            vec![0.05, 0.10, 0.05, 0.10, 1.00, 0.10, 0.05, 0.10, 0.05],
        )
        .expect("static kernel is valid")
    }

    /// Identity coupling: a single unit tap.
    pub fn identity() -> Self {
        DoeKernel::new(1, 1, vec![1.0]).expect("static kernel is valid")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn abs_sum(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }
}

/// Parameters regenerating an optics model from scratch (seed and scalars,
/// never raw arrays). Serializes to JSON for run reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticsSpec {
    pub grid: (usize, usize),
    /// Nominal grayscale-to-phase conversion factor.
    pub kappa: f64,
    /// Nominal constant phase offset.
    pub phi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heterogeneity: Option<HeterogeneitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doe_kernel: Option<DoeKernel>,
    #[serde(default)]
    pub quantize_8bit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneitySpec {
    pub seed: u64,
    /// Gaussian illumination width as a fraction of each grid dimension.
    pub gaussian_width: f64,
    /// Standard deviation of the per-pixel phase offset around the nominal.
    pub phase_jitter: f64,
    /// Relative standard deviation of the per-pixel conversion factor.
    pub kappa_jitter: f64,
}

impl OpticsSpec {
    pub fn ideal(grid: (usize, usize)) -> Self {
        OpticsSpec {
            grid,
            kappa: convention::CONVERSION,
            phi: convention::PHASE_OFFSET,
            heterogeneity: None,
            doe_kernel: None,
            quantize_8bit: false,
        }
    }

    pub fn mode(&self) -> OpticsMode {
        if self.doe_kernel.is_some() {
            OpticsMode::DoeCoupled
        } else if self.heterogeneity.is_some() {
            OpticsMode::Heterogeneous
        } else {
            OpticsMode::Ideal
        }
    }
}

/// Maps the internal grayscale state to field amplitudes and camera
/// intensities, covering the ideal, heterogeneous and grid-coupled modes.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticsModel {
    spec: OpticsSpec,
    mode: OpticsMode,
    grid: (usize, usize),
    illumination: Vec<f64>,
    sqrt_illumination: Vec<f64>,
    phase_offset: Vec<f64>,
    conversion: Vec<f64>,
    doe_kernel: Option<DoeKernel>,
    quantize_8bit: bool,
    powered_on: bool,
    /// Fixed normalization chosen at construction so intensities land in
    /// [0, 1] independent of the input (per-frame normalization would make
    /// the map non-stationary).
    intensity_scale: f64,
}

impl OpticsModel {
    pub fn from_spec(spec: &OpticsSpec) -> Result<Self> {
        let (rows, cols) = spec.grid;
        let n = rows * cols;
        if n == 0 {
            return Err(Error::InvalidParameter("empty optics grid".into()));
        }
        if spec.kappa <= 0.0 || !spec.kappa.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "conversion factor must be positive, got {}",
                spec.kappa
            )));
        }

        let (illumination, phase_offset, conversion) = match &spec.heterogeneity {
            None => (
                vec![1.0; n],
                vec![spec.phi; n],
                vec![spec.kappa; n],
            ),
            Some(h) => synthesize_arrays(spec.grid, spec.kappa, spec.phi, h)?,
        };

        let sqrt_illumination = illumination.iter().map(|v| v.sqrt()).collect();
        let max_field: f64 = illumination.iter().cloned().fold(0.0, f64::max).sqrt();
        let intensity_scale = match &spec.doe_kernel {
            None => 1.0 / (max_field * max_field).max(f64::MIN_POSITIVE),
            Some(k) => {
                let peak = k.abs_sum() * max_field;
                1.0 / (peak * peak).max(f64::MIN_POSITIVE)
            }
        };

        Ok(OpticsModel {
            mode: spec.mode(),
            grid: spec.grid,
            illumination,
            sqrt_illumination,
            phase_offset,
            conversion,
            doe_kernel: spec.doe_kernel.clone(),
            quantize_8bit: spec.quantize_8bit,
            powered_on: true,
            intensity_scale,
            spec: spec.clone(),
        })
    }

    /// Homogeneous model with the calibrated conversion factor and phase
    /// offset; `n` is laid out as a single row.
    pub fn ideal(n: usize) -> Self {
        Self::from_spec(&OpticsSpec::ideal((1, n))).expect("ideal spec is valid")
    }

    pub fn ideal_grid(grid: (usize, usize)) -> Self {
        Self::from_spec(&OpticsSpec::ideal(grid)).expect("ideal spec is valid")
    }

    /// Deterministic synthetic device non-idealities: Gaussian illumination
    /// profile over the grid plus normal jitter on the per-pixel phase
    /// offset and conversion factor.
    pub fn synthesize_heterogeneity(
        grid: (usize, usize),
        seed: u64,
        gaussian_width: f64,
        phase_jitter: f64,
        kappa_jitter: f64,
    ) -> Result<Self> {
        if phase_jitter < 0.0 || kappa_jitter < 0.0 {
            return Err(Error::InvalidParameter("jitters must be >= 0".into()));
        }
        let spec = OpticsSpec {
            heterogeneity: Some(HeterogeneitySpec {
                seed,
                gaussian_width,
                phase_jitter,
                kappa_jitter,
            }),
            ..OpticsSpec::ideal(grid)
        };
        Self::from_spec(&spec)
    }

    pub fn spec(&self) -> &OpticsSpec {
        &self.spec
    }

    pub fn mode(&self) -> OpticsMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.illumination.len()
    }

    pub fn is_empty(&self) -> bool {
        self.illumination.is_empty()
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn powered_on(&self) -> bool {
        self.powered_on
    }

    pub fn illumination(&self) -> &[f64] {
        &self.illumination
    }

    pub fn phase_offset(&self) -> &[f64] {
        &self.phase_offset
    }

    pub fn conversion(&self) -> &[f64] {
        &self.conversion
    }

    /// Switch the illumination source. While off, fields and intensities
    /// are exactly zero.
    pub fn set_power(&mut self, on: bool) {
        self.powered_on = on;
    }

    fn check_len(&self, got: usize, context: &'static str) -> Result<()> {
        if got != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got,
                context,
            });
        }
        Ok(())
    }

    /// Signed field amplitude leaving the modulator:
    /// `E_i = sqrt(I0_i) * sin(2*pi*(x_i + phi_i)/kappa_i)`.
    pub fn field(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.field_into(x, &mut out)?;
        Ok(out)
    }

    pub fn field_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(x.len(), "field input")?;
        self.check_len(out.len(), "field output")?;
        if !self.powered_on {
            out.fill(0.0);
            return Ok(());
        }
        let body = |(out, ((&x, &amp), (&phi, &kappa))): (
            &mut f64,
            ((&f64, &f64), (&f64, &f64)),
        )| {
            *out = amp * (TWO_PI * (x + phi) / kappa).sin();
        };
        let iter = out.iter_mut().zip(
            x.iter()
                .zip(self.sqrt_illumination.iter())
                .zip(self.phase_offset.iter().zip(self.conversion.iter())),
        );
        if self.len() >= PAR_THRESHOLD {
            out.par_iter_mut()
                .zip(
                    x.par_iter()
                        .zip(self.sqrt_illumination.par_iter())
                        .zip(self.phase_offset.par_iter().zip(self.conversion.par_iter())),
                )
                .for_each(body);
        } else {
            iter.for_each(body);
        }
        Ok(())
    }

    /// Camera intensity from a field vector. Identity coupling squares the
    /// field; grid coupling convolves it with the kernel first (zero padding,
    /// light leaving the array is lost). The result is normalized by the
    /// construction-time scale and optionally quantized to 256 levels.
    pub fn intensity(&self, field: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.intensity_into(field, &mut out)?;
        Ok(out)
    }

    pub fn intensity_into(&self, field: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(field.len(), "intensity input")?;
        self.check_len(out.len(), "intensity output")?;
        if !self.powered_on {
            out.fill(0.0);
            return Ok(());
        }
        match (&self.mode, &self.doe_kernel) {
            (OpticsMode::DoeCoupled, None) => return Err(Error::MissingKernel),
            (OpticsMode::DoeCoupled, Some(kernel)) => {
                self.convolve_squared(field, kernel, out);
            }
            _ => {
                let scale = self.intensity_scale;
                for (o, &e) in out.iter_mut().zip(field.iter()) {
                    *o = e * e * scale;
                }
            }
        }
        if self.quantize_8bit {
            for v in out.iter_mut() {
                *v = (*v * 255.0).round() / 255.0;
            }
        }
        Ok(())
    }

    fn convolve_squared(&self, field: &[f64], kernel: &DoeKernel, out: &mut [f64]) {
        let (rows, cols) = self.grid;
        let (krows, kcols) = kernel.shape();
        let (hr, hc) = (krows as isize / 2, kcols as isize / 2);
        let weights = kernel.weights();
        let scale = self.intensity_scale;
        let row_body = |(r, out_row): (usize, &mut [f64])| {
            for (c, o) in out_row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for kr in 0..krows {
                    let rr = r as isize + kr as isize - hr;
                    if rr < 0 || rr >= rows as isize {
                        continue;
                    }
                    for kc in 0..kcols {
                        let cc = c as isize + kc as isize - hc;
                        if cc < 0 || cc >= cols as isize {
                            continue;
                        }
                        acc += weights[kr * kcols + kc]
                            * field[rr as usize * cols + cc as usize];
                    }
                }
                *o = acc * acc * scale;
            }
        };
        if self.len() >= PAR_THRESHOLD {
            out.par_chunks_mut(cols).enumerate().for_each(|(r, row)| row_body((r, row)));
        } else {
            out.chunks_mut(cols).enumerate().for_each(|(r, row)| row_body((r, row)));
        }
    }
}

fn synthesize_arrays(
    grid: (usize, usize),
    kappa_nominal: f64,
    phi_nominal: f64,
    h: &HeterogeneitySpec,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if h.phase_jitter < 0.0 || h.kappa_jitter < 0.0 {
        return Err(Error::InvalidParameter("jitters must be >= 0".into()));
    }
    let (rows, cols) = grid;
    let n = rows * cols;

    let mut illumination = Vec::with_capacity(n);
    if h.gaussian_width.is_finite() && h.gaussian_width > 0.0 {
        let (cr, cc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
        let (sr, sc) = (h.gaussian_width * rows as f64, h.gaussian_width * cols as f64);
        let mut peak = 0.0_f64;
        for r in 0..rows {
            for c in 0..cols {
                let dr = (r as f64 - cr) / sr;
                let dc = (c as f64 - cc) / sc;
                let v = (-0.5 * (dr * dr + dc * dc)).exp();
                peak = peak.max(v);
                illumination.push(v);
            }
        }
        for v in illumination.iter_mut() {
            *v /= peak;
        }
    } else {
        illumination.resize(n, 1.0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(h.seed);
    let mut phase_offset = Vec::with_capacity(n);
    for _ in 0..n {
        phase_offset.push(phi_nominal + h.phase_jitter * standard_normal(&mut rng));
    }
    let mut conversion = Vec::with_capacity(n);
    for _ in 0..n {
        let k = kappa_nominal * (1.0 + h.kappa_jitter * standard_normal(&mut rng));
        conversion.push(k.max(1e-3 * kappa_nominal));
    }
    Ok((illumination, phase_offset, conversion))
}

/// Box-Muller draw; two uniforms per sample keeps the stream layout simple
/// and reproducible.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (TWO_PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn field_zero_at_zero_phase() {
        let mut spec = OpticsSpec::ideal((1, 4));
        spec.phi = 0.0;
        let optics = OpticsModel::from_spec(&spec).unwrap();
        let field = optics.field(&[0.0; 4]).unwrap();
        assert!(field.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn field_peaks_at_quarter_period() {
        let spec = OpticsSpec::ideal((1, 3));
        let optics = OpticsModel::from_spec(&spec).unwrap();
        let x = spec.kappa / 4.0 - spec.phi;
        let field = optics.field(&[x; 3]).unwrap();
        for e in field {
            assert_abs_diff_eq!(e, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn heterogeneous_center_brighter_than_edge() {
        let optics =
            OpticsModel::synthesize_heterogeneity((9, 9), 42, 0.2, 0.0, 0.0).unwrap();
        // equal x everywhere: field ratio follows sqrt illumination
        let x = vec![optics.conversion()[0] / 4.0 - optics.phase_offset()[0]; 81];
        let field = optics.field(&x).unwrap();
        let center = field[4 * 9 + 4].abs();
        let corner = field[0].abs();
        assert!(center > corner, "center {center} vs corner {corner}");
        // exact value from regenerating the profile directly
        let expected = optics.sqrt_illumination[0]
            * (TWO_PI * (x[0] + optics.phase_offset()[0]) / optics.conversion()[0]).sin();
        assert_abs_diff_eq!(field[0], expected, epsilon = 1e-15);
    }

    #[test]
    fn same_seed_same_model() {
        let a = OpticsModel::synthesize_heterogeneity((8, 8), 7, 0.3, 0.02, 0.01).unwrap();
        let b = OpticsModel::synthesize_heterogeneity((8, 8), 7, 0.3, 0.02, 0.01).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_jitter_infinite_width_is_ideal() {
        let het =
            OpticsModel::synthesize_heterogeneity((4, 4), 1, f64::INFINITY, 0.0, 0.0).unwrap();
        let ideal = OpticsModel::ideal_grid((4, 4));
        assert_eq!(het.illumination(), ideal.illumination());
        assert_eq!(het.phase_offset(), ideal.phase_offset());
        assert_eq!(het.conversion(), ideal.conversion());
    }

    #[test]
    fn kappa_sample_mean_near_nominal() {
        let optics =
            OpticsModel::synthesize_heterogeneity((200, 200), 123, 0.25, 0.0, 0.02).unwrap();
        let n = optics.len() as f64;
        let mean: f64 = optics.conversion().iter().sum::<f64>() / n;
        let nominal = convention::CONVERSION;
        let stddev_of_mean = nominal * 0.02 / n.sqrt();
        assert!(
            (mean - nominal).abs() < 3.0 * stddev_of_mean,
            "mean {mean} vs nominal {nominal}"
        );
    }

    #[test]
    fn identity_kernel_matches_square() {
        let mut spec = OpticsSpec::ideal((5, 5));
        spec.doe_kernel = Some(DoeKernel::identity());
        let coupled = OpticsModel::from_spec(&spec).unwrap();
        let plain = OpticsModel::ideal_grid((5, 5));
        let field: Vec<f64> = (0..25).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = coupled.intensity(&field).unwrap();
        let b = plain.intensity(&field).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_field_zero_intensity() {
        let mut spec = OpticsSpec::ideal((5, 5));
        spec.doe_kernel = Some(DoeKernel::center_dominant());
        let optics = OpticsModel::from_spec(&spec).unwrap();
        let out = optics.intensity(&vec![0.0; 25]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_kernel_single_pixel_matches_brute_force() {
        let mut spec = OpticsSpec::ideal((5, 5));
        spec.doe_kernel = Some(DoeKernel::new(3, 3, vec![1.0; 9]).unwrap());
        let optics = OpticsModel::from_spec(&spec).unwrap();
        let mut field = vec![0.0; 25];
        field[2 * 5 + 2] = 0.8;

        let out = optics.intensity(&field).unwrap();

        // brute-force oracle: direct dense convolution then square
        let mut expected = vec![0.0; 25];
        for r in 0..5i32 {
            for c in 0..5i32 {
                let mut acc = 0.0;
                for dr in -1..=1i32 {
                    for dc in -1..=1i32 {
                        let (rr, cc) = (r + dr, c + dc);
                        if (0..5).contains(&rr) && (0..5).contains(&cc) {
                            acc += field[(rr * 5 + cc) as usize];
                        }
                    }
                }
                expected[(r * 5 + c) as usize] = acc * acc / (9.0f64 * 9.0);
            }
        }
        let nonzero = out.iter().filter(|&&v| v > 0.0).count();
        assert_eq!(nonzero, 9);
        for (a, b) in out.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn power_off_zeroes_everything_and_restores() {
        let mut optics = OpticsModel::ideal(6);
        let x: Vec<f64> = (0..6).map(|i| 0.1 * i as f64).collect();
        let before_field = optics.field(&x).unwrap();
        let before_int = optics.intensity(&before_field).unwrap();

        optics.set_power(false);
        assert!(optics.field(&x).unwrap().iter().all(|&v| v == 0.0));
        assert!(optics
            .intensity(&before_field)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        optics.set_power(true);
        assert_eq!(optics.field(&x).unwrap(), before_field);
        assert_eq!(optics.intensity(&before_field).unwrap(), before_int);
    }

    #[test]
    fn quantization_bound_holds() {
        let mut spec = OpticsSpec::ideal((1, 64));
        spec.quantize_8bit = true;
        let quant = OpticsModel::from_spec(&spec).unwrap();
        let exact = OpticsModel::ideal(64);
        let field: Vec<f64> = (0..64).map(|i| ((i as f64) * 0.473).sin()).collect();
        let a = quant.intensity(&field).unwrap();
        let b = exact.intensity(&field).unwrap();
        for (q, e) in a.iter().zip(b.iter()) {
            assert!((q - e).abs() <= 1.0 / 510.0 + 1e-15);
        }
    }

    #[test]
    fn missing_kernel_is_an_error() {
        let mut spec = OpticsSpec::ideal((3, 3));
        spec.doe_kernel = Some(DoeKernel::center_dominant());
        let mut optics = OpticsModel::from_spec(&spec).unwrap();
        optics.doe_kernel = None;
        assert!(matches!(
            optics.intensity(&vec![0.0; 9]),
            Err(Error::MissingKernel)
        ));
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(DoeKernel::new(2, 3, vec![0.0; 6]).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let mut spec = OpticsSpec::ideal((64, 64));
        spec.heterogeneity = Some(HeterogeneitySpec {
            seed: 99,
            gaussian_width: 0.3,
            phase_jitter: 0.01,
            kappa_jitter: 0.02,
        });
        spec.doe_kernel = Some(DoeKernel::center_dominant());
        let json = serde_json::to_string(&spec).unwrap();
        let back: OpticsSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        let a = OpticsModel::from_spec(&spec).unwrap();
        let b = OpticsModel::from_spec(&back).unwrap();
        assert_eq!(a, b);
    }
}
