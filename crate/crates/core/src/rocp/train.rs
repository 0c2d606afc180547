use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RocpError};
use crate::graph::{partition_valid, SplitAssignment};
use crate::models::{GraphInputs, Model, ModelConfig};
use crate::rocp::smooth::{rocp_loss, smooth_quantile, soft_membership, LossVars, SizeLossKind, SizeTerm};
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape, Var};

/// Hyperparameters of conformal-aware training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Sigmoid temperature `T` of soft set membership.
    pub temperature: f64,
    /// Dispersion `δ` of soft ranks and the smooth quantile.
    pub dispersion: f64,
    pub tau: f64,
    /// Size-loss weight `λ`.
    pub lambda: f64,
    /// Fraction of the validation nodes used each epoch to calibrate the smooth threshold.
    pub calib_frac: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub size_loss: SizeLossKind,
    pub optimizer: AdamConfig,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            dispersion: 0.1,
            tau: 1.0,
            lambda: 0.001,
            calib_frac: 0.5,
            epsilon: 0.1,
            epochs: 200,
            size_loss: SizeLossKind::Linear,
            optimizer: AdamConfig::default(),
        }
    }
}

impl SmoothingConfig {
    /// Plain cross-entropy training with otherwise identical settings.
    pub fn cross_entropy_only(&self) -> Self {
        Self {
            lambda: 0.0,
            calib_frac: 0.0,
            ..self.clone()
        }
    }

    /// Whether the size term participates in training.
    pub fn uses_size_loss(&self) -> bool {
        self.lambda > 0.0 && self.calib_frac > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RocpError::InvalidArgument(m));
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if self.dispersion.is_nan() || self.dispersion <= 0.0 {
            return bad(format!("dispersion {} must be positive", self.dispersion));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return bad(format!("lambda {} must be non-negative", self.lambda));
        }
        if !(0.0..1.0).contains(&self.calib_frac) {
            return bad(format!("calib_frac {} outside [0, 1)", self.calib_frac));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon {} outside (0, 1)", self.epsilon));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub cross_entropy: f64,
    /// Unweighted size loss; zero when the size term is inactive.
    pub size: f64,
    pub total: f64,
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub losses: Vec<EpochLoss>,
    pub model: Model,
    pub seed: u64,
    pub wall_clock_secs: f64,
}

const PARTITION_STREAM: u64 = 0;
const DROPOUT_STREAM: u64 = 1;

/// Generator for one `(seed, epoch, purpose)` triple. Stream 0 is left to
/// parameter initialization.
fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + (((epoch as u64) << 1) | stream));
    rng
}

/// Records the objective of one epoch on `tape`: a training-mode forward
/// pass, and, when the size term is active, a fresh partition of the
/// validation nodes, the smooth threshold on the calibration part and the
/// soft memberships of the prediction part.
///
/// Returns the loss vars and the parameter leaves in the order of `model.params`.
pub fn epoch_objective(
    tape: &mut Tape,
    model: &Model,
    inputs: &GraphInputs,
    splits: &SplitAssignment,
    cfg: &SmoothingConfig,
    seed: u64,
    epoch: usize,
) -> Result<(LossVars, Vec<Var>)> {
    let labels = inputs.labels.as_slice();
    let mut drop_rng = epoch_rng(seed, epoch, DROPOUT_STREAM);
    let (logits, params) = model.forward(tape, inputs, Some(&mut drop_rng))?;
    let size_term = if cfg.uses_size_loss() {
        let mut part_rng = epoch_rng(seed, epoch, PARTITION_STREAM);
        let (train_calib, train_pred) = partition_valid(&splits.valid, cfg.calib_frac, &mut part_rng)?;
        if train_calib.is_empty() || train_pred.is_empty() {
            return Err(RocpError::Empty("in-training calibration or prediction set"));
        }
        let probs = tape.softmax_rows(logits);
        let entries: Vec<(usize, usize)> = train_calib.iter().map(|&v| (v, labels[v])).collect();
        let scores = tape.gather_entries(probs, &entries)?;
        let p = train_calib.len() as f64;
        let level = cfg.epsilon * (1.0 + 1.0 / p);
        let threshold = smooth_quantile(tape, scores, level, cfg.dispersion)?;
        let pred_probs = tape.gather_rows(probs, &train_pred)?;
        let memberships = soft_membership(tape, pred_probs, threshold, cfg.temperature)?;
        Some(SizeTerm {
            memberships,
            lambda: cfg.lambda,
            tau: cfg.tau,
            kind: cfg.size_loss,
        })
    } else {
        None
    };
    let loss = rocp_loss(tape, logits, labels, &splits.train, size_term)?;
    Ok((loss, params))
}

/// Trains a model, optionally with the conformal size term.
///
/// Each epoch splits the validation nodes into a calibration part and a
/// prediction part, computes a smooth threshold from the true-class
/// probabilities of the calibration part, and penalizes the relaxed set size
/// of the prediction part. The threshold is discarded after each step. With
/// `λ = 0` or `calib_frac = 0` this is plain cross-entropy training on the
/// same random streams.
pub fn train(
    inputs: &GraphInputs,
    splits: &SplitAssignment,
    model_config: &ModelConfig,
    cfg: &SmoothingConfig,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    splits.validate(inputs.num_nodes())?;
    if splits.train.is_empty() {
        return Err(RocpError::Empty("training set"));
    }
    let active = cfg.uses_size_loss();
    if active && splits.valid.len() < 2 {
        return Err(RocpError::InsufficientNodes(format!(
            "size loss needs at least 2 validation nodes, got {}",
            splits.valid.len()
        )));
    }
    let k = inputs.num_classes;
    let start = Instant::now();
    let mut model = Model::init(model_config.clone(), inputs.features.cols(), k, seed)?;
    let mut state = AdamState::new(&model.params.values);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut tape = Tape::new();

    for epoch in 0..cfg.epochs {
        tape.reset();
        let (loss, params) = epoch_objective(&mut tape, &model, inputs, splits, cfg, seed, epoch)
            .map_err(|e| e.context(format!("epoch {epoch}")))?;
        let total = tape.value(loss.total).item();
        if !total.is_finite() {
            return Err(RocpError::NonFiniteLoss(epoch));
        }
        losses.push(EpochLoss {
            cross_entropy: tape.value(loss.cross_entropy).item(),
            size: loss.size.map_or(0.0, |s| tape.value(s).item()),
            total,
        });

        let mut grads = tape.backward(loss.total)?;
        let grads: Vec<_> = params.iter().map(|&p| grads.take(p)).collect();
        adam_step(&mut model.params.values, &grads, &model.params.names, &mut state, &cfg.optimizer)
            .map_err(|e| e.context(format!("epoch {epoch}")))?;
        if (epoch + 1) % 50 == 0 {
            log::debug!("epoch {}: cross-entropy {:.4}, size {:.4}", epoch + 1, losses[epoch].cross_entropy, losses[epoch].size);
        }
    }

    Ok(TrainReport {
        losses,
        model,
        seed,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}
