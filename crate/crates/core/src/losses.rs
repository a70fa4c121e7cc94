//! Segmentation data terms and maximum-entropy regularizers with analytic gradients.
//!
//! Every logarithm is base 2, so data terms and regularizers are all measured in
//! bits and `lambda` weighs commensurable quantities. Probabilities are clamped to
//! `[clamp_eps, 1 - clamp_eps]` before any logarithm; the gradient is evaluated
//! at the clamped value (straight-through), so saturated voxels keep a training
//! signal.
//!
//! The error mask used by MEEP and KL is recomputed from the current prediction
//! but treated as a constant when differentiating.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{threshold, BinaryMask, ProbMap, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegKind {
    #[default]
    CrossEntropy,
    SoftDice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    #[default]
    None,
    /// Confidence penalty on every voxel.
    MeAll,
    /// Maximum entropy on erroneous predictions.
    Meep,
    /// KL divergence from the uniform Bernoulli on erroneous predictions.
    Kl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    /// Divide voxel sums by the total voxel count (also for masked regularizers).
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub seg_kind: SegKind,
    pub reg_kind: RegKind,
    pub lambda: f64,
    pub clamp_eps: f64,
    pub reduction: Reduction,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            seg_kind: SegKind::CrossEntropy,
            reg_kind: RegKind::None,
            lambda: 0.0,
            clamp_eps: 1e-6,
            reduction: Reduction::Mean,
        }
    }
}

impl LossSpec {
    pub fn new(seg_kind: SegKind, reg_kind: RegKind, lambda: f64) -> Self {
        Self {
            seg_kind,
            reg_kind,
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::OutOfRange {
                name: "lambda",
                value: self.lambda,
                range: "[0, inf)",
            });
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::OutOfRange {
                name: "clamp_eps",
                value: self.clamp_eps,
                range: "(0, 0.5)",
            });
        }
        Ok(())
    }

    fn scale<T: Real>(&self, n: usize) -> T {
        match self.reduction {
            Reduction::Sum => T::one(),
            Reduction::Mean => T::one() / T::cast(n as f64),
        }
    }

    /// Whether the regularizer contributes anything.
    pub fn is_regularized(&self) -> bool {
        self.reg_kind != RegKind::None && self.lambda != 0.0
    }
}

/// Loss value together with its gradient with respect to each voxel probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval<T> {
    pub value: T,
    pub grad: Volume<T>,
}

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy<T: Real>(p: T) -> Result<T> {
    if !(p >= T::zero() && p <= T::one()) {
        return Err(Error::OutOfRange {
            name: "p",
            value: p.as_f64(),
            range: "[0, 1]",
        });
    }
    Ok(entropy_bits(p))
}

#[inline]
pub(crate) fn entropy_bits<T: Real>(p: T) -> T {
    let q = T::one() - p;
    let mut h = T::zero();
    if p > T::zero() {
        h -= p * p.log2();
    }
    if q > T::zero() {
        h -= q * q.log2();
    }
    h
}

/// Per-voxel binary entropy of a probability map.
pub fn entropy_map<T: Real>(y: &ProbMap<T>) -> Volume<T> {
    y.volume()
        .map(entropy_bits)
        .expect("entropy of a valid probability is finite")
}

#[inline]
fn clamp<T: Real>(p: T, eps: T) -> T {
    p.max(eps).min(T::one() - eps)
}

fn ensure_dims<T: Real>(y: &ProbMap<T>, m: &BinaryMask) -> Result<()> {
    y.geometry().ensure_same_dims(m.geometry())
}

fn finish<T: Real>(y: &ProbMap<T>, value: T, grad: Vec<T>, what: &'static str) -> Result<LossEval<T>> {
    if !value.is_finite() {
        return Err(Error::NonFinite(what));
    }
    Ok(LossEval {
        value,
        grad: Volume::new(*y.geometry(), grad).map_err(|_| Error::NonFinite(what))?,
    })
}

/// Voxel-wise binary cross entropy in bits.
pub fn cross_entropy<T: Real>(y: &ProbMap<T>, gt: &BinaryMask, spec: &LossSpec) -> Result<LossEval<T>> {
    spec.validate()?;
    ensure_dims(y, gt)?;
    let eps = T::cast(spec.clamp_eps);
    let scale: T = spec.scale(y.len());
    let ln2 = T::LN_2();
    let mut sum = T::zero();
    let grad = y
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &label)| {
            let p = clamp(p, eps);
            if label {
                sum -= p.log2();
                -scale / (p * ln2)
            } else {
                sum -= (T::one() - p).log2();
                scale / ((T::one() - p) * ln2)
            }
        })
        .collect();
    finish(y, sum * scale, grad, "cross entropy")
}

/// Soft Dice loss `1 - (2 sum(y g) + s) / (sum(y) + sum(g) + s)` with smoothing `s = 1`.
///
/// The loss is a global ratio, so `reduction` does not apply.
pub fn soft_dice<T: Real>(y: &ProbMap<T>, gt: &BinaryMask, spec: &LossSpec) -> Result<LossEval<T>> {
    spec.validate()?;
    ensure_dims(y, gt)?;
    let smooth = T::one();
    let two = T::cast(2.0);
    let mut inter = T::zero();
    let mut sum_y = T::zero();
    let mut sum_g = T::zero();
    for (&p, &label) in y.data().iter().zip(gt.data()) {
        sum_y += p;
        if label {
            inter += p;
            sum_g += T::one();
        }
    }
    let num = two * inter + smooth;
    let den = sum_y + sum_g + smooth;
    let value = T::one() - num / den;
    let den2 = den * den;
    let grad = gt
        .data()
        .iter()
        .map(|&label| {
            let dnum = if label { two } else { T::zero() };
            -(dnum * den - num) / den2
        })
        .collect();
    finish(y, value, grad, "soft dice")
}

/// Voxels whose thresholded prediction disagrees with the ground truth.
pub fn error_mask<T: Real>(y: &ProbMap<T>, gt: &BinaryMask, t: T) -> Result<BinaryMask> {
    ensure_dims(y, gt)?;
    let pred = threshold(y, t)?;
    let data = pred.data().iter().zip(gt.data()).map(|(a, b)| a != b).collect();
    BinaryMask::new(*y.geometry(), data)
}

/// Negative entropy over the voxels selected by `mask` (all voxels when `None`).
fn negative_entropy<T: Real>(y: &ProbMap<T>, mask: Option<&BinaryMask>, spec: &LossSpec) -> Result<LossEval<T>> {
    spec.validate()?;
    let eps = T::cast(spec.clamp_eps);
    let scale: T = spec.scale(y.len());
    let mut sum = T::zero();
    let grad = y
        .data()
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if mask.is_some_and(|m| !m.data()[i]) {
                return T::zero();
            }
            let p = clamp(p, eps);
            let q = T::one() - p;
            sum += p * p.log2() + q * q.log2();
            scale * (p.log2() - q.log2())
        })
        .collect();
    finish(y, sum * scale, grad, "entropy regularizer")
}

/// Confidence penalty: negative binary entropy summed over every voxel.
pub fn reg_meall<T: Real>(y: &ProbMap<T>, spec: &LossSpec) -> Result<LossEval<T>> {
    negative_entropy(y, None, spec)
}

/// Negative binary entropy restricted to the erroneous voxels in `wrong`.
pub fn reg_meep<T: Real>(y: &ProbMap<T>, wrong: &BinaryMask, spec: &LossSpec) -> Result<LossEval<T>> {
    ensure_dims(y, wrong)?;
    negative_entropy(y, Some(wrong), spec)
}

/// KL divergence in bits from the uniform Bernoulli to `Bern(p)`.
#[inline]
pub fn kl_uniform_bits<T: Real>(p: T) -> T {
    -T::one() - T::cast(0.5) * (p * (T::one() - p)).log2()
}

/// `D_KL(Bern(0.5) || Bern(y))` summed over the erroneous voxels in `wrong`.
///
/// Added with a positive sign, so minimizing the total loss drives erroneous
/// predictions towards 0.5.
pub fn reg_kl<T: Real>(y: &ProbMap<T>, wrong: &BinaryMask, spec: &LossSpec) -> Result<LossEval<T>> {
    spec.validate()?;
    ensure_dims(y, wrong)?;
    let eps = T::cast(spec.clamp_eps);
    let scale: T = spec.scale(y.len());
    let two_ln2 = T::cast(2.0) * T::LN_2();
    let mut sum = T::zero();
    let grad = y
        .data()
        .iter()
        .zip(wrong.data())
        .map(|(&p, &w)| {
            if !w {
                return T::zero();
            }
            let p = clamp(p, eps);
            let q = T::one() - p;
            sum += kl_uniform_bits(p);
            -scale * (q - p) / (two_ln2 * p * q)
        })
        .collect();
    finish(y, sum * scale, grad, "kl regularizer")
}

/// Data term plus `lambda` times the selected regularizer.
pub fn combined_loss<T: Real>(y: &ProbMap<T>, gt: &BinaryMask, spec: &LossSpec) -> Result<LossEval<T>> {
    ensure_dims(y, gt)?;
    let wrong = match spec.reg_kind {
        RegKind::Meep | RegKind::Kl if spec.lambda != 0.0 => Some(error_mask(y, gt, T::cast(0.5))?),
        _ => None,
    };
    combined_with_mask(y, gt, wrong.as_ref(), spec)
}

/// [`combined_loss`] with an externally frozen error mask.
///
/// `wrong` is only consulted by MEEP and KL; when it is `None` for those
/// regularizers the mask is derived from `y`.
pub fn combined_loss_with_mask<T: Real>(
    y: &ProbMap<T>,
    gt: &BinaryMask,
    wrong: &BinaryMask,
    spec: &LossSpec,
) -> Result<LossEval<T>> {
    ensure_dims(y, gt)?;
    ensure_dims(y, wrong)?;
    combined_with_mask(y, gt, Some(wrong), spec)
}

fn combined_with_mask<T: Real>(
    y: &ProbMap<T>,
    gt: &BinaryMask,
    wrong: Option<&BinaryMask>,
    spec: &LossSpec,
) -> Result<LossEval<T>> {
    let data = match spec.seg_kind {
        SegKind::CrossEntropy => cross_entropy(y, gt, spec)?,
        SegKind::SoftDice => soft_dice(y, gt, spec)?,
    };
    if !spec.is_regularized() {
        return Ok(data);
    }
    let derived;
    let wrong = match wrong {
        Some(w) => w,
        None => {
            derived = error_mask(y, gt, T::cast(0.5))?;
            &derived
        }
    };
    let reg = match spec.reg_kind {
        RegKind::None => unreachable!(),
        RegKind::MeAll => reg_meall(y, spec)?,
        RegKind::Meep => reg_meep(y, wrong, spec)?,
        RegKind::Kl => reg_kl(y, wrong, spec)?,
    };
    let lambda = T::cast(spec.lambda);
    let grad = data
        .grad
        .data()
        .iter()
        .zip(reg.grad.data())
        .map(|(&a, &b)| a + lambda * b)
        .collect();
    finish(y, data.value + lambda * reg.value, grad, "combined loss")
}
