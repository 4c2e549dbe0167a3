use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convention;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images decoded from an IDX container, pixels scaled to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MnistImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` values, row-major per image.
    pub pixels: Vec<f64>,
}

impl MnistImages {
    pub fn n_pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.n_pixels();
        &self.pixels[i * p..(i + 1) * p]
    }
}

/// Images paired with validated labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: MnistImages,
    pub labels: Vec<u8>,
}

pub fn load_idx_images(path: &Path) -> Result<MnistImages> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = r
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}",
            path.display()
        )));
    }
    let count = r.read_u32::<BigEndian>().map_err(truncated(path))? as usize;
    let rows = r.read_u32::<BigEndian>().map_err(truncated(path))? as usize;
    let cols = r.read_u32::<BigEndian>().map_err(truncated(path))? as usize;
    let mut bytes = vec![0u8; count * rows * cols];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("{}: truncated pixel data", path.display())))?;
    let pixels = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(MnistImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = r
        .read_u32::<BigEndian>()
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}",
            path.display()
        )));
    }
    let count = r.read_u32::<BigEndian>().map_err(truncated(path))? as usize;
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels)
        .map_err(|_| Error::Format(format!("{}: truncated label data", path.display())))?;
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!(
            "{}: label {bad} outside 0-9",
            path.display()
        )));
    }
    Ok(labels)
}

fn truncated(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |_| Error::Format(format!("{}: truncated file", path.display()))
}

pub fn load_dataset(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(Error::Format(format!(
            "image/label count mismatch: {} images vs {} labels",
            images.count,
            labels.len()
        )));
    }
    Ok(Dataset { images, labels })
}

/// Random input mixing matrix, entries uniform in [-1, 1] before
/// normalization by the largest singular value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputProjection {
    pub n_neurons: usize,
    pub n_pixels: usize,
    pub seed: u64,
    /// Largest singular value of the raw matrix, divided out.
    pub normalization_scale: f64,
    #[serde(skip)]
    pub weights: Vec<f64>,
}

pub const POWER_ITERATION_TOL: f64 = 1e-9;
pub const POWER_ITERATION_CAP: usize = 10_000;

/// Deterministic projection; the spectral norm is found by power iteration
/// on `W^T W` and divided out so the result has largest singular value 1.
pub fn build_projection(n_neurons: usize, n_pixels: usize, seed: u64) -> Result<InputProjection> {
    if n_neurons == 0 || n_pixels == 0 {
        return Err(Error::InvalidParameter(
            "projection dimensions must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights: Vec<f64> = (0..n_neurons * n_pixels)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();

    let sigma = largest_singular_value(&weights, n_neurons, n_pixels, &mut rng)?;
    for w in weights.iter_mut() {
        *w /= sigma;
    }
    Ok(InputProjection {
        n_neurons,
        n_pixels,
        seed,
        normalization_scale: sigma,
        weights,
    })
}

/// `out = W v` with deterministic block-parallel evaluation.
fn matvec(weights: &[f64], n_rows: usize, n_cols: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(v.len(), n_cols);
    debug_assert_eq!(out.len(), n_rows);
    if n_rows * n_cols >= 1 << 20 {
        out.par_chunks_mut(64)
            .zip(weights.par_chunks(64 * n_cols))
            .for_each(|(outs, rows)| {
                for (o, row) in outs.iter_mut().zip(rows.chunks_exact(n_cols)) {
                    *o = row.iter().zip(v.iter()).map(|(w, x)| w * x).sum();
                }
            });
    } else {
        for (o, row) in out.iter_mut().zip(weights.chunks_exact(n_cols)) {
            *o = row.iter().zip(v.iter()).map(|(w, x)| w * x).sum();
        }
    }
}

/// `out = W^T u`, accumulated in fixed row order for determinism.
fn matvec_t(weights: &[f64], n_rows: usize, n_cols: usize, u: &[f64], out: &mut [f64]) {
    debug_assert_eq!(u.len(), n_rows);
    debug_assert_eq!(out.len(), n_cols);
    const BLOCK: usize = 512;
    let partials: Vec<Vec<f64>> = weights
        .par_chunks(BLOCK * n_cols)
        .enumerate()
        .map(|(b, rows)| {
            let mut acc = vec![0.0; n_cols];
            for (k, row) in rows.chunks_exact(n_cols).enumerate() {
                let coef = u[b * BLOCK + k];
                for (a, w) in acc.iter_mut().zip(row.iter()) {
                    *a += coef * w;
                }
            }
            acc
        })
        .collect();
    out.fill(0.0);
    for acc in partials {
        for (o, a) in out.iter_mut().zip(acc.iter()) {
            *o += a;
        }
    }
}

fn largest_singular_value(
    weights: &[f64],
    n_rows: usize,
    n_cols: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut v: Vec<f64> = (0..n_cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
    let mut wu = vec![0.0; n_rows];
    let mut next = vec![0.0; n_cols];
    let mut lambda_prev = 0.0;
    for iteration in 1..=POWER_ITERATION_CAP {
        matvec(weights, n_rows, n_cols, &v, &mut wu);
        matvec_t(weights, n_rows, n_cols, &wu, &mut next);
        let lambda: f64 = wu.iter().map(|x| x * x).sum();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::PowerIteration {
                residual: f64::INFINITY,
                iterations: iteration,
            });
        }
        for (vi, ni) in v.iter_mut().zip(next.iter()) {
            *vi = ni / norm;
        }
        let residual = (lambda - lambda_prev).abs() / lambda.max(f64::MIN_POSITIVE);
        if iteration > 1 && residual < POWER_ITERATION_TOL {
            return Ok(lambda.sqrt());
        }
        lambda_prev = lambda;
    }
    Err(Error::PowerIteration {
        residual: (lambda_prev).abs(),
        iterations: POWER_ITERATION_CAP,
    })
}

impl InputProjection {
    /// Mixed drive direction `W u` for one image (no gamma or gain applied).
    pub fn mix(&self, image: &[f64]) -> Result<Vec<f64>> {
        if image.len() != self.n_pixels {
            return Err(Error::Dimension {
                expected: self.n_pixels,
                got: image.len(),
                context: "image pixels vs projection",
            });
        }
        let mut out = vec![0.0; self.n_neurons];
        matvec(&self.weights, self.n_neurons, self.n_pixels, image, &mut out);
        Ok(out)
    }
}

/// Presentation timing plus the image stream: each image drives the input
/// for `on_steps` and is followed by `off_steps` of exact zero input.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusSchedule {
    pub on_steps: usize,
    pub off_steps: usize,
    /// Command-to-response latency; the on window is shifted this many steps
    /// into each presentation.
    pub loop_latency: usize,
    /// `presentations * n_pixels` values in [0, 1].
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    pub n_pixels: usize,
}

impl StimulusSchedule {
    pub fn standard(images: Vec<f64>, labels: Vec<u8>, n_pixels: usize) -> Result<Self> {
        let sched = StimulusSchedule {
            on_steps: 23,
            off_steps: 25,
            loop_latency: convention::LOOP_LATENCY,
            images,
            labels,
            n_pixels,
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pixels == 0 || self.images.len() % self.n_pixels != 0 {
            return Err(Error::Dimension {
                expected: self.n_pixels,
                got: self.images.len(),
                context: "images not a multiple of pixel count",
            });
        }
        if self.images.len() / self.n_pixels != self.labels.len() {
            return Err(Error::Format(format!(
                "{} images vs {} labels in schedule",
                self.images.len() / self.n_pixels,
                self.labels.len()
            )));
        }
        if self.loop_latency + self.on_steps > self.presentation_len() {
            return Err(Error::InvalidParameter(
                "loop latency pushes the on window outside the presentation".into(),
            ));
        }
        Ok(())
    }

    pub fn presentations(&self) -> usize {
        self.labels.len()
    }

    pub fn presentation_len(&self) -> usize {
        self.on_steps + self.off_steps
    }

    pub fn total_steps(&self) -> usize {
        self.presentations() * self.presentation_len()
    }

    pub fn image(&self, p: usize) -> &[f64] {
        &self.images[p * self.n_pixels..(p + 1) * self.n_pixels]
    }

    /// Whether local step `t` within a presentation carries input.
    pub fn is_on(&self, local_t: usize) -> bool {
        (self.loop_latency..self.loop_latency + self.on_steps).contains(&local_t)
    }
}

/// Injection applied to the state for a mixed image direction: the channel
/// clamps `gamma * (W u)_i` to its range before the transfer gain.
pub fn injection_row(mixed: &[f64], gamma: f64, injection_gain: f64, out: &mut [f64]) {
    for (o, &m) in out.iter_mut().zip(mixed.iter()) {
        *o = injection_gain * (gamma * m).clamp(-1.0, 1.0);
    }
}

/// Materialized `T x N` drive matrix for the whole schedule. Prefer the
/// streaming path (`Simulator::run_with` + [`injection_row`]) at scale; this
/// exists for small runs and tests.
pub fn drive_series(
    projection: &InputProjection,
    schedule: &StimulusSchedule,
    gamma: f64,
    injection_gain: f64,
) -> Result<Vec<f64>> {
    schedule.validate()?;
    if schedule.presentations() == 0 {
        return Err(Error::InvalidParameter("empty schedule".into()));
    }
    if schedule.n_pixels != projection.n_pixels {
        return Err(Error::Dimension {
            expected: projection.n_pixels,
            got: schedule.n_pixels,
            context: "schedule pixels vs projection",
        });
    }
    let n = projection.n_neurons;
    let plen = schedule.presentation_len();
    let mut out = vec![0.0; schedule.total_steps() * n];
    let mut row = vec![0.0; n];
    for p in 0..schedule.presentations() {
        let mixed = projection.mix(schedule.image(p))?;
        injection_row(&mixed, gamma, injection_gain, &mut row);
        for local_t in 0..plen {
            if schedule.is_on(local_t) {
                let t = p * plen + local_t;
                out[t * n..(t + 1) * n].copy_from_slice(&row);
            }
        }
    }
    Ok(out)
}

/// Deterministic train/test example selection. Training examples are drawn
/// without replacement from the training pool; test examples come from the
/// separate test pool unless `test_from_train`, in which case they are drawn
/// from the unused remainder of the training pool.
pub fn select_split(
    train_pool: usize,
    test_pool: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
    test_from_train: bool,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train_pool).collect();
    partial_shuffle(&mut order, &mut rng);
    if test_from_train {
        if n_train + n_test > train_pool {
            return Err(Error::InvalidParameter(format!(
                "split {n_train}+{n_test} exceeds training pool {train_pool}"
            )));
        }
        let train = order[..n_train].to_vec();
        let test = order[n_train..n_train + n_test].to_vec();
        Ok((train, test))
    } else {
        if n_train > train_pool {
            return Err(Error::InvalidParameter(format!(
                "{n_train} training examples exceed pool {train_pool}"
            )));
        }
        if n_test > test_pool {
            return Err(Error::InvalidParameter(format!(
                "{n_test} test examples exceed pool {test_pool}"
            )));
        }
        let train = order[..n_train].to_vec();
        let mut test_order: Vec<usize> = (0..test_pool).collect();
        partial_shuffle(&mut test_order, &mut rng);
        Ok((train, test_order[..n_test].to_vec()))
    }
}

fn partial_shuffle(values: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..values.len()).rev() {
        let j = rng.gen_range(0..=i);
        values.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::TempDir;

    fn write_images(dir: &TempDir, name: &str, imgs: &[Vec<u8>], rows: u32, cols: u32) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(&IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(imgs.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&rows.to_be_bytes()).unwrap();
        f.write_all(&cols.to_be_bytes()).unwrap();
        for img in imgs {
            f.write_all(img).unwrap();
        }
        path
    }

    fn write_labels(dir: &TempDir, name: &str, labels: &[u8]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(&LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        path
    }

    #[test]
    fn single_zero_image_round_trips() {
        let dir = TempDir::new().unwrap();
        let img = write_images(&dir, "img", &[vec![0u8; 4]], 2, 2);
        let lab = write_labels(&dir, "lab", &[7]);
        let ds = load_dataset(&img, &lab).unwrap();
        assert_eq!(ds.images.count, 1);
        assert_eq!(ds.images.rows, 2);
        assert!(ds.images.pixels.iter().all(|&p| p == 0.0));
        assert_eq!(ds.labels, vec![7]);
    }

    #[test]
    fn empty_file_is_format_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("empty");
        File::create(&path).unwrap();
        assert!(matches!(load_idx_images(&path), Err(Error::Format(_))));
        assert!(matches!(load_idx_labels(&path), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad");
        let mut f = File::create(&path).unwrap();
        f.write_all(&0xdeadbeefu32.to_be_bytes()).unwrap();
        f.write_all(&[0u8; 12]).unwrap();
        assert!(matches!(load_idx_images(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_pixels_rejected() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("trunc");
        let mut f = File::create(&path).unwrap();
        f.write_all(&IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&[1u8; 5]).unwrap(); // needs 8
        assert!(matches!(load_idx_images(&path), Err(Error::Format(_))));
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = TempDir::new().unwrap();
        let img = write_images(&dir, "img", &[vec![0u8; 4], vec![1u8; 4]], 2, 2);
        let lab = write_labels(&dir, "lab", &[1]);
        assert!(matches!(load_dataset(&img, &lab), Err(Error::Format(_))));
    }

    #[test]
    fn one_by_one_projection_normalizes_to_unit() {
        let p = build_projection(1, 1, 3).unwrap();
        assert!((p.weights[0].abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn projection_is_seed_deterministic() {
        let a = build_projection(20, 15, 77).unwrap();
        let b = build_projection(20, 15, 77).unwrap();
        assert_eq!(a.weights, b.weights);
        let c = build_projection(20, 15, 78).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn spectral_norm_matches_dense_svd() {
        let p = build_projection(10, 10, 5).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(10, 10, &p.weights);
        let sigma = m.svd(false, false).singular_values[0];
        assert!(
            (sigma - 1.0).abs() < 1e-6,
            "largest singular value {sigma} after normalization"
        );
    }

    #[test]
    fn drive_rows_match_naive_product() {
        let proj = build_projection(6, 4, 11).unwrap();
        let image = vec![0.2, 0.9, 0.0, 0.5];
        let sched = StimulusSchedule {
            on_steps: 3,
            off_steps: 2,
            loop_latency: 1,
            images: image.clone(),
            labels: vec![3],
            n_pixels: 4,
        };
        let drive = drive_series(&proj, &sched, 0.4, 0.7).unwrap();
        assert_eq!(drive.len(), 5 * 6);
        // naive triple-loop oracle
        for t in 0..5 {
            for i in 0..6 {
                let expected = if (1..4).contains(&t) {
                    let mut acc = 0.0;
                    for j in 0..4 {
                        acc += proj.weights[i * 4 + j] * image[j];
                    }
                    0.7 * (0.4 * acc).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                assert!(
                    (drive[t * 6 + i] - expected).abs() < 1e-12,
                    "t={t} i={i}"
                );
            }
        }
    }

    #[test]
    fn off_rows_are_exactly_zero_and_schedule_arithmetic_holds() {
        let proj = build_projection(5, 9, 2).unwrap();
        let images: Vec<f64> = (0..2 * 9).map(|i| (i % 3) as f64 / 3.0).collect();
        let sched = StimulusSchedule::standard(images, vec![0, 1], 9).unwrap();
        assert_eq!(sched.total_steps(), 2 * 48);
        let drive = drive_series(&proj, &sched, 0.3, 1.0).unwrap();
        for p in 0..2 {
            for local in 0..48 {
                let t = p * 48 + local;
                let row = &drive[t * 5..(t + 1) * 5];
                if !sched.is_on(local) {
                    assert!(row.iter().all(|&v| v == 0.0), "off row {t} not zero");
                }
            }
        }
    }

    #[test]
    fn zero_image_or_zero_gamma_gives_zero_drive() {
        let proj = build_projection(4, 3, 1).unwrap();
        let sched =
            StimulusSchedule::standard(vec![0.0; 3], vec![5], 3).unwrap();
        let d1 = drive_series(&proj, &sched, 0.5, 1.0).unwrap();
        assert!(d1.iter().all(|&v| v == 0.0));
        let sched2 =
            StimulusSchedule::standard(vec![0.3, 0.8, 0.1], vec![5], 3).unwrap();
        let d2 = drive_series(&proj, &sched2, 0.0, 1.0).unwrap();
        assert!(d2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn drive_is_linear_in_gamma_below_the_clamp() {
        let proj = build_projection(7, 5, 9).unwrap();
        let images: Vec<f64> = (0..5).map(|i| i as f64 / 10.0).collect();
        let sched = StimulusSchedule::standard(images, vec![1], 5).unwrap();
        let g1 = 0.02;
        let g2 = 0.03;
        let a = drive_series(&proj, &sched, g1, 1.0).unwrap();
        let b = drive_series(&proj, &sched, g2, 1.0).unwrap();
        let c = drive_series(&proj, &sched, g1 + g2, 1.0).unwrap();
        for ((x, y), z) in a.iter().zip(b.iter()).zip(c.iter()) {
            assert!((x + y - z).abs() < 1e-12);
        }
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (train, test) = select_split(100, 0, 60, 20, 9, true).unwrap();
        assert_eq!(train.len(), 60);
        assert_eq!(test.len(), 20);
        let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 80, "split overlaps");
        let (train2, _) = select_split(100, 0, 60, 20, 9, true).unwrap();
        assert_eq!(train, train2);
    }

    #[test]
    fn split_from_official_test_pool() {
        let (train, test) = select_split(50, 30, 40, 25, 4, false).unwrap();
        assert!(train.iter().all(|&i| i < 50));
        assert!(test.iter().all(|&i| i < 30));
        assert!(select_split(50, 30, 40, 31, 4, false).is_err());
    }
}
