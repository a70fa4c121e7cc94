use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{forward, init_params, loss_grad_params, Adam, ModelParams, NUM_PARAMS};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::metrics::{dice, mean_foreground_entropy, CalibrationAccumulator, CalibrationConvention};
use crate::rng::{substream, STREAM_SHUFFLE};
use crate::scalar::Real;
use crate::volume::{threshold, BinaryMask, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossSpec::default(),
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 50,
            batch_size: 4,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::OutOfRange {
                name: "learning_rate",
                value: self.learning_rate,
                range: "[0, inf)",
            });
        }
        if self.epochs == 0 {
            return Err(Error::OutOfRange {
                name: "epochs",
                value: 0.0,
                range: "[1, inf)",
            });
        }
        if self.batch_size == 0 {
            return Err(Error::OutOfRange {
                name: "batch_size",
                value: 0.0,
                range: "[1, inf)",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: Option<f64>,
    pub val_mean_fg_entropy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Aggregate quality of a model on a labelled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEvaluation {
    /// Mean of per-scan Dice.
    pub mean_dice: f64,
    /// Positive-probability ECE over all voxels of the set.
    pub ece: f64,
    /// Mean over scans of the mean foreground entropy (scans without foreground skipped).
    pub mean_fg_entropy: Option<f64>,
}

pub fn evaluate_set<T: Real>(params: &ModelParams<T>, set: &[(Volume<T>, BinaryMask)]) -> Result<SetEvaluation> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let half = T::cast(0.5);
    let mut dice_sum = 0.0;
    let mut ent = Vec::new();
    let mut calib = CalibrationAccumulator::new(10, CalibrationConvention::PositiveProb);
    for (x, gt) in set {
        let y = forward(params, x)?;
        dice_sum += dice(gt, &threshold(&y, half)?)?;
        if let Some(h) = mean_foreground_entropy(&y, half) {
            ent.push(h.as_f64());
        }
        for (&p, &g) in y.data().iter().zip(gt.data()) {
            calib.push(p.as_f64(), g)?;
        }
    }
    Ok(SetEvaluation {
        mean_dice: dice_sum / set.len() as f64,
        ece: calib.finish().ece,
        mean_fg_entropy: (!ent.is_empty()).then(|| ent.iter().sum::<f64>() / ent.len() as f64),
    })
}

/// Mini-batch Adam training from a seeded initialization.
///
/// Samples are shuffled each epoch by the seeded generator; per-sample
/// gradients are summed in batch order and averaged, so a given
/// `(data, cfg)` always produces bit-identical parameters. A non-finite loss
/// aborts with [`Error::Diverged`], which carries the epochs completed so far.
pub fn train<T: Real>(
    dataset: &[(Volume<T>, BinaryMask)],
    val: &[(Volume<T>, BinaryMask)],
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, TrainHistory)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut params = init_params::<T>(cfg.seed, cfg.init_scale)?;
    let mut opt = Adam::new(NUM_PARAMS, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut rng = substream(cfg.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = TrainHistory::default();
    let mut grads = vec![T::zero(); NUM_PARAMS];

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = T::zero());
            for &i in batch {
                let (x, gt) = &dataset[i];
                let out = match loss_grad_params(&params, x, gt, &cfg.loss) {
                    Ok(out) => out,
                    Err(Error::NonFinite(_)) => {
                        return Err(Error::Diverged {
                            epoch,
                            loss: f64::NAN,
                            history,
                        })
                    }
                    Err(e) => return Err(e),
                };
                loss_sum += out.value.as_f64();
                for (g, d) in grads.iter_mut().zip(&out.grads) {
                    *g += *d;
                }
            }
            let inv = T::one() / T::cast(batch.len() as f64);
            grads.iter_mut().for_each(|g| *g *= inv);
            opt.step(params.values_mut(), &grads);
        }
        let train_loss = loss_sum / dataset.len() as f64;
        if !train_loss.is_finite() || params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
                history,
            });
        }
        let (val_dice, val_mean_fg_entropy) = if val.is_empty() {
            (None, None)
        } else {
            let e = evaluate_set(&params, val)?;
            (Some(e.mean_dice), e.mean_fg_entropy)
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_dice,
            val_mean_fg_entropy,
        });
    }
    Ok((params, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub val_dice: f64,
    pub val_ece: f64,
    pub val_mean_fg_entropy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridSearch<T> {
    pub best_lambda: f64,
    pub best_index: usize,
    pub report: Vec<GridPoint>,
    /// Trained model and history for every grid entry, in grid order.
    pub models: Vec<(ModelParams<T>, TrainHistory)>,
}

/// Index of the preferred grid entry: highest validation Dice, where entries
/// within `dice_tolerance` of the best count as tied and the lowest validation
/// ECE among them wins (grid order breaks any remaining tie).
pub fn select_lambda(report: &[GridPoint], dice_tolerance: f64) -> Option<usize> {
    let best_dice = report.iter().map(|p| p.val_dice).fold(f64::NEG_INFINITY, f64::max);
    report
        .iter()
        .enumerate()
        .filter(|(_, p)| p.val_dice >= best_dice - dice_tolerance)
        .min_by(|(i, a), (j, b)| a.val_ece.total_cmp(&b.val_ece).then(i.cmp(j)))
        .map(|(i, _)| i)
}

/// Trains one model per `lambda` and picks the best on `val` with [`select_lambda`].
pub fn lambda_grid_search<T: Real>(
    train_set: &[(Volume<T>, BinaryMask)],
    val_set: &[(Volume<T>, BinaryMask)],
    cfg: &TrainConfig,
    grid: &[f64],
    dice_tolerance: f64,
) -> Result<GridSearch<T>> {
    if grid.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    let mut report = Vec::with_capacity(grid.len());
    let mut models = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut c = *cfg;
        c.loss.lambda = lambda;
        let (params, history) = train(train_set, val_set, &c)?;
        let e = evaluate_set(&params, val_set)?;
        report.push(GridPoint {
            lambda,
            val_dice: e.mean_dice,
            val_ece: e.ece,
            val_mean_fg_entropy: e.mean_fg_entropy,
        });
        models.push((params, history));
    }
    let best_index = select_lambda(&report, dice_tolerance).expect("grid is nonempty");
    Ok(GridSearch {
        best_lambda: grid[best_index],
        best_index,
        report,
        models,
    })
}
