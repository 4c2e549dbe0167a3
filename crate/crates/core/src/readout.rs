use std::io::Write;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trainable output matrix, `n_classes x n_features` row-major, the bias
/// column folded into the last feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutWeights {
    pub n_classes: usize,
    pub n_features: usize,
    pub w: Vec<f64>,
    pub epoch: usize,
    pub rng_seed: u64,
}

impl ReadoutWeights {
    pub fn zeros(n_classes: usize, n_features: usize, rng_seed: u64) -> Self {
        ReadoutWeights {
            n_classes,
            n_features,
            w: vec![0.0; n_classes * n_features],
            epoch: 0,
            rng_seed,
        }
    }

    pub fn class_row(&self, c: usize) -> &[f64] {
        &self.w[c * self.n_features..(c + 1) * self.n_features]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpsaConfig {
    /// Perturbation magnitude.
    pub epsilon: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// History is recorded every this many epochs (and at the last epoch).
    pub record_every: usize,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        SpsaConfig {
            epsilon: 1.0 / 1024.0,
            learning_rate: 1e-4,
            epochs: 100_000,
            record_every: 100,
        }
    }
}

impl SpsaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter("epsilon must be > 0".into()));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Borrowed view of a feature/target batch. `features` is `m x d` row-major
/// with the bias column included; `targets` is `m x c` one-hot.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a [f64],
    pub targets: &'a [f64],
    pub m: usize,
    pub d: usize,
    pub c: usize,
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], targets: &'a [f64], m: usize, d: usize, c: usize) -> Result<Self> {
        if features.len() != m * d {
            return Err(Error::Dimension {
                expected: m * d,
                got: features.len(),
                context: "feature matrix",
            });
        }
        if targets.len() != m * c {
            return Err(Error::Dimension {
                expected: m * c,
                got: targets.len(),
                context: "target matrix",
            });
        }
        Ok(Batch {
            features,
            targets,
            m,
            d,
            c,
        })
    }

    fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    fn target_row(&self, i: usize) -> &[f64] {
        &self.targets[i * self.c..(i + 1) * self.c]
    }
}

/// Append a constant-one bias column to a raw `m x n` feature matrix.
pub fn append_bias(features: &[f64], m: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(features.len(), m * n);
    let mut out = Vec::with_capacity(m * (n + 1));
    for row in features.chunks_exact(n) {
        out.extend_from_slice(row);
        out.push(1.0);
    }
    out
}

/// One-hot target matrix for labels in `0..n_classes`.
pub fn one_hot(labels: &[u8], n_classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; labels.len() * n_classes];
    for (i, &l) in labels.iter().enumerate() {
        out[i * n_classes + l as usize] = 1.0;
    }
    out
}

/// Pairwise (cascade) summation: deterministic and accurate independent of
/// how the producing map was parallelized.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Normalized mean square error: total squared prediction error divided by
/// the total variance of the target matrix over the batch.
pub fn nmse_loss(weights: &ReadoutWeights, batch: &Batch) -> Result<f64> {
    if weights.n_features != batch.d || weights.n_classes != batch.c {
        return Err(Error::Dimension {
            expected: weights.n_features,
            got: batch.d,
            context: "weights vs batch features",
        });
    }
    Ok(raw_nmse(&weights.w, batch))
}

fn raw_nmse(w: &[f64], batch: &Batch) -> f64 {
    let (d, c) = (batch.d, batch.c);
    let errs: Vec<f64> = (0..batch.m)
        .into_par_iter()
        .map(|i| {
            let f = batch.feature_row(i);
            let y = batch.target_row(i);
            let mut err = 0.0;
            for k in 0..c {
                let row = &w[k * d..(k + 1) * d];
                let p: f64 = row.iter().zip(f.iter()).map(|(a, b)| a * b).sum();
                let e = p - y[k];
                err += e * e;
            }
            err
        })
        .collect();
    let numerator = pairwise_sum(&errs);

    let mut mean = vec![0.0; c];
    for i in 0..batch.m {
        for (mk, &yk) in mean.iter_mut().zip(batch.target_row(i)) {
            *mk += yk;
        }
    }
    for mk in mean.iter_mut() {
        *mk /= batch.m as f64;
    }
    let devs: Vec<f64> = (0..batch.m)
        .map(|i| {
            batch
                .target_row(i)
                .iter()
                .zip(mean.iter())
                .map(|(y, m)| (y - m) * (y - m))
                .sum()
        })
        .collect();
    let denominator = pairwise_sum(&devs);
    numerator / denominator.max(f64::MIN_POSITIVE)
}

/// Draw a fresh sign vector, evaluate the loss at `w + eps*L` and
/// `w - eps*L` (exactly two evaluations), and descend the estimated
/// gradient. The base weights are reconstructed exactly; perturbations never
/// accumulate.
pub fn spsa_step_with_loss<F>(
    weights: &mut ReadoutWeights,
    config: &SpsaConfig,
    rng: &mut ChaCha8Rng,
    mut loss: F,
) -> Result<(f64, f64)>
where
    F: FnMut(&[f64]) -> f64,
{
    config.validate()?;
    let k = weights.w.len();
    let signs: Vec<f64> = (0..k)
        .map(|_| if rng.next_u32() & 1 == 1 { 1.0 } else { -1.0 })
        .collect();

    let mut perturbed: Vec<f64> = weights
        .w
        .iter()
        .zip(signs.iter())
        .map(|(w, s)| w + config.epsilon * s)
        .collect();
    let loss_plus = loss(&perturbed);
    for ((p, w), s) in perturbed.iter_mut().zip(weights.w.iter()).zip(signs.iter()) {
        *p = w - config.epsilon * s;
    }
    let loss_minus = loss(&perturbed);

    // empirical variance of the drawn signs; equals 1 - mean^2 for +-1 draws.
    // A degenerate all-equal draw has zero empirical variance; fall back to
    // the population value so the scale stays finite.
    let mean = pairwise_sum(&signs) / k as f64;
    let var = 1.0 - mean * mean;
    let var = if var > 0.0 { var } else { 1.0 };
    let scale = (loss_plus - loss_minus) / (2.0 * config.epsilon * var);
    for (w, s) in weights.w.iter_mut().zip(signs.iter()) {
        *w -= config.learning_rate * scale * s;
    }
    weights.epoch += 1;
    Ok((loss_plus, loss_minus))
}

/// One descent epoch on a batch with the normalized-MSE loss.
pub fn spsa_step(
    weights: &mut ReadoutWeights,
    batch: &Batch,
    config: &SpsaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    if weights.n_features != batch.d || weights.n_classes != batch.c {
        return Err(Error::Dimension {
            expected: weights.n_features,
            got: batch.d,
            context: "weights vs batch features",
        });
    }
    spsa_step_with_loss(weights, config, rng, |w| raw_nmse(w, batch))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub weights: ReadoutWeights,
    pub history: Vec<HistoryRow>,
}

/// Serializable trainer snapshot; restoring continues the exact run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub weights: ReadoutWeights,
    pub config: SpsaConfig,
    pub history: Vec<HistoryRow>,
    rng_word_pos_lo: u64,
    rng_word_pos_hi: u64,
}

/// Epoch-counted descent trainer with history recording and resumability.
pub struct SpsaTrainer {
    pub weights: ReadoutWeights,
    pub config: SpsaConfig,
    pub history: Vec<HistoryRow>,
    rng: ChaCha8Rng,
}

impl SpsaTrainer {
    pub fn new(n_classes: usize, n_features: usize, config: SpsaConfig, seed: u64) -> Self {
        SpsaTrainer {
            weights: ReadoutWeights::zeros(n_classes, n_features, seed),
            config,
            history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let pos = self.rng.get_word_pos();
        Checkpoint {
            weights: self.weights.clone(),
            config: self.config,
            history: self.history.clone(),
            rng_word_pos_lo: pos as u64,
            rng_word_pos_hi: (pos >> 64) as u64,
        }
    }

    pub fn restore(ck: Checkpoint) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(ck.weights.rng_seed);
        rng.set_word_pos(((ck.rng_word_pos_hi as u128) << 64) | ck.rng_word_pos_lo as u128);
        SpsaTrainer {
            weights: ck.weights,
            config: ck.config,
            history: ck.history,
            rng,
        }
    }

    /// Run up to `config.epochs` total epochs (resuming counts previous
    /// epochs), recording history and aborting on a non-finite loss.
    pub fn run(
        &mut self,
        train: &Batch,
        train_labels: &[u8],
        test: Option<(&Batch, &[u8])>,
    ) -> Result<()> {
        while self.weights.epoch < self.config.epochs {
            let (lp, lm) = spsa_step(&mut self.weights, train, &self.config, &mut self.rng)?;
            let loss = 0.5 * (lp + lm);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.weights.epoch,
                    value: loss,
                });
            }
            let e = self.weights.epoch;
            if e % self.config.record_every == 0 || e == self.config.epochs {
                let train_accuracy =
                    evaluate(&self.weights, train.features, train.m, train_labels)?.accuracy;
                let test_accuracy = match test {
                    Some((batch, labels)) => {
                        Some(evaluate(&self.weights, batch.features, batch.m, labels)?.accuracy)
                    }
                    None => None,
                };
                self.history.push(HistoryRow {
                    epoch: e,
                    train_loss: loss,
                    train_accuracy,
                    test_accuracy,
                });
            }
        }
        Ok(())
    }
}

/// Convenience wrapper: fresh trainer, full run, deterministic from `seed`.
pub fn train_spsa(
    train: &Batch,
    train_labels: &[u8],
    test: Option<(&Batch, &[u8])>,
    config: SpsaConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut trainer = SpsaTrainer::new(train.c, train.d, config, seed);
    trainer.run(train, train_labels, test)?;
    Ok(TrainOutcome {
        weights: trainer.weights,
        history: trainer.history,
    })
}

/// Closed-form ridge readout `W = (F^T F + l I)^-1 F^T Y`, solved through
/// whichever Gram matrix is smaller. Singular systems at `l = 0` are
/// reported rather than silently regularized.
pub fn train_ridge(batch: &Batch, regularizer: f64) -> Result<ReadoutWeights> {
    if regularizer < 0.0 || !regularizer.is_finite() {
        return Err(Error::InvalidParameter(
            "regularizer must be finite and >= 0".into(),
        ));
    }
    let (m, d, c) = (batch.m, batch.d, batch.c);
    let f = DMatrix::from_row_slice(m, d, batch.features);
    let y = DMatrix::from_row_slice(m, c, batch.targets);
    let w: DMatrix<f64> = if d <= m {
        let mut gram = f.transpose() * &f;
        for i in 0..d {
            gram[(i, i)] += regularizer;
        }
        let chol = gram.cholesky().ok_or(Error::SingularSystem)?;
        chol.solve(&(f.transpose() * &y))
    } else {
        let mut gram = &f * f.transpose();
        for i in 0..m {
            gram[(i, i)] += regularizer;
        }
        let chol = gram.cholesky().ok_or(Error::SingularSystem)?;
        f.transpose() * chol.solve(&y)
    };
    // w is d x c; store row-major c x d
    let mut out = ReadoutWeights::zeros(c, d, 0);
    for k in 0..c {
        for j in 0..d {
            out.w[k * d + j] = w[(j, k)];
        }
    }
    Ok(out)
}

/// Ridge with the regularizer chosen on a validation batch by accuracy
/// (ties resolved toward stronger regularization).
pub fn train_ridge_validated(
    train: &Batch,
    lambdas: &[f64],
    validation: &Batch,
    validation_labels: &[u8],
) -> Result<(ReadoutWeights, f64)> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    let mut best: Option<(f64, f64, ReadoutWeights)> = None;
    for &l in lambdas {
        let w = train_ridge(train, l)?;
        let acc = evaluate(&w, validation.features, validation.m, validation_labels)?.accuracy;
        let better = match &best {
            None => true,
            Some((ba, bl, _)) => acc > *ba || (acc == *ba && l > *bl),
        };
        if better {
            best = Some((acc, l, w));
        }
    }
    let (_, l, w) = best.expect("non-empty grid");
    Ok((w, l))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Row = true class, column = predicted class.
    pub confusion: Vec<usize>,
    pub n_classes: usize,
}

impl Evaluation {
    pub fn confusion_at(&self, truth: usize, predicted: usize) -> usize {
        self.confusion[truth * self.n_classes + predicted]
    }
}

/// Argmax classification; ties break toward the lowest class index.
pub fn evaluate(
    weights: &ReadoutWeights,
    features: &[f64],
    m: usize,
    labels: &[u8],
) -> Result<Evaluation> {
    let (c, d) = (weights.n_classes, weights.n_features);
    if features.len() != m * d {
        return Err(Error::Dimension {
            expected: m * d,
            got: features.len(),
            context: "evaluation features",
        });
    }
    if labels.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: labels.len(),
            context: "evaluation labels",
        });
    }
    let predictions: Vec<usize> = (0..m)
        .into_par_iter()
        .map(|i| {
            let f = &features[i * d..(i + 1) * d];
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for k in 0..c {
                let row = weights.class_row(k);
                let score: f64 = row.iter().zip(f.iter()).map(|(a, b)| a * b).sum();
                if score > best_score {
                    best_score = score;
                    best = k;
                }
            }
            best
        })
        .collect();
    let mut confusion = vec![0usize; c * c];
    let mut correct = 0;
    for (&label, &pred) in labels.iter().zip(predictions.iter()) {
        confusion[label as usize * c + pred] += 1;
        if label as usize == pred {
            correct += 1;
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / m.max(1) as f64,
        confusion,
        n_classes: c,
    })
}

/// CSV: `epoch,train_loss,train_acc,test_acc`.
pub fn write_history_csv<W: Write>(history: &[HistoryRow], mut w: W) -> Result<()> {
    writeln!(w, "epoch,train_loss,train_acc,test_acc")?;
    for row in history {
        writeln!(
            w,
            "{},{},{},{}",
            row.epoch,
            row.train_loss,
            row.train_accuracy,
            row.test_accuracy.map(|a| a.to_string()).unwrap_or_default()
        )?;
    }
    Ok(())
}
