//! Self-supervised objectives on pooled graph embeddings.
//!
//! Each loss takes one or two `N × d` view embeddings already on the tape and
//! returns a `1 × 1` loss on the same tape.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::encoder::EncoderParams;
use crate::error::{GipError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    Grace,
    Mvgrl,
    Bgrl,
    Gbt,
}

impl ObjectiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Grace => "GRACE",
            ObjectiveKind::Mvgrl => "MVGRL",
            ObjectiveKind::Bgrl => "BGRL",
            ObjectiveKind::Gbt => "GBT",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = GipError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GRACE" => Ok(ObjectiveKind::Grace),
            "MVGRL" => Ok(ObjectiveKind::Mvgrl),
            "BGRL" => Ok(ObjectiveKind::Bgrl),
            "GBT" | "G-BT" => Ok(ObjectiveKind::Gbt),
            _ => Err(GipError::Config(format!("unknown objective: {}", s.trim()))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Off-diagonal weight of the redundancy term; `None` means `1 / d`.
    pub lambda: Option<f64>,
    /// Target-network decay for bootstrapping.
    pub ema_decay: f64,
    /// Average InfoNCE over both anchor directions.
    pub symmetric: bool,
}

impl ObjectiveConfig {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            tau: 0.5,
            lambda: None,
            ema_decay: 0.99,
            symmetric: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(GipError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(GipError::Config(format!("ema_decay must lie in (0, 1), got {}", self.ema_decay)));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) {
                return Err(GipError::Config(format!("lambda must be non-negative, got {l}")));
            }
        }
        Ok(())
    }

    pub fn lambda_for(&self, dim: usize) -> f64 {
        self.lambda.unwrap_or(1.0 / dim as f64)
    }
}

fn pair_shapes<F: Scalar>(tape: &Tape<F>, op: &'static str, z1: Var, z2: Var, min_rows: usize) -> Result<(usize, usize)> {
    let (a, b) = (tape.value(z1).shape(), tape.value(z2).shape());
    if a != b {
        return Err(GipError::shape(op, format!("views {a:?} vs {b:?}")));
    }
    if a.0 < min_rows {
        return Err(GipError::Config(format!("{op} needs at least {min_rows} graphs, got {}", a.0)));
    }
    Ok(a)
}

fn masks<F: Scalar>(tape: &mut Tape<F>, n: usize) -> Result<(Var, Var)> {
    let eye = Tensor::identity(n);
    let off = eye.map(|v| F::one() - v);
    Ok((tape.constant(eye)?, tape.constant(off)?))
}

/// InfoNCE with cosine similarity, positives on the diagonal, negatives
/// drawn from the second view only, averaged over anchors.
pub fn grace_loss<F: Scalar>(tape: &mut Tape<F>, z1: Var, z2: Var, tau: f64, symmetric: bool) -> Result<Var> {
    let (n, _) = pair_shapes(tape, "grace_loss", z1, z2, 2)?;
    let u = tape.row_l2_normalize(z1)?;
    let v = tape.row_l2_normalize(z2)?;
    let vt = tape.transpose(v)?;
    let sim = tape.matmul(u, vt)?;
    let logits = tape.scale(sim, F::of(1.0 / tau))?;
    let (eye, _) = masks(tape, n)?;
    let scale = if symmetric { -0.5 / n as f64 } else { -1.0 / n as f64 };

    let ls = tape.log_softmax_rows(logits)?;
    let picked = tape.mul(ls, eye)?;
    let mut total = tape.sum(picked)?;
    if symmetric {
        let lt = tape.transpose(logits)?;
        let ls2 = tape.log_softmax_rows(lt)?;
        let picked2 = tape.mul(ls2, eye)?;
        let s2 = tape.sum(picked2)?;
        total = tape.add(total, s2)?;
    }
    tape.scale(total, F::of(scale))
}

/// Negative Jensen–Shannon estimate with a bilinear discriminator
/// `σ(z1ᵢᵀ W z2ⱼ)`: matched rows are positives, all `N(N−1)` mismatched
/// pairs are negatives.
pub fn mvgrl_loss<F: Scalar>(tape: &mut Tape<F>, z1: Var, z2: Var, w_d: Var) -> Result<Var> {
    let (n, d) = pair_shapes(tape, "mvgrl_loss", z1, z2, 2)?;
    if tape.value(w_d).shape() != (d, d) {
        return Err(GipError::shape(
            "mvgrl_loss",
            format!("discriminator {:?} for dimension {d}", tape.value(w_d).shape()),
        ));
    }
    let left = tape.matmul(z1, w_d)?;
    let z2t = tape.transpose(z2)?;
    let logits = tape.matmul(left, z2t)?;
    let (eye, off) = masks(tape, n)?;

    let pos = tape.log_sigmoid(logits)?;
    let pos = tape.mul(pos, eye)?;
    let pos = tape.sum(pos)?;
    let pos = tape.scale(pos, F::of(1.0 / n as f64))?;

    let flipped = tape.scale(logits, -F::one())?;
    let neg = tape.log_sigmoid(flipped)?;
    let neg = tape.mul(neg, off)?;
    let neg = tape.sum(neg)?;
    let neg = tape.scale(neg, F::of(1.0 / (n * (n - 1)) as f64))?;

    let js = tape.add(pos, neg)?;
    tape.scale(js, -F::one())
}

/// Mean squared distance between online rows and stop-gradient target rows.
pub fn bgrl_loss<F: Scalar>(tape: &mut Tape<F>, online: Var, target: Var) -> Result<Var> {
    let (n, _) = pair_shapes(tape, "bgrl_loss", online, target, 1)?;
    let t = tape.detach(target)?;
    let diff = tape.sub(t, online)?;
    let sq = tape.mul(diff, diff)?;
    let s = tape.sum(sq)?;
    tape.scale(s, F::of(1.0 / n as f64))
}

/// `target ← decay·target + (1−decay)·online`, off the tape.
pub fn ema_update<F: Scalar>(target: &mut EncoderParams<F>, online: &EncoderParams<F>, decay: f64) -> Result<()> {
    if target.layers.len() != online.layers.len() {
        return Err(GipError::shape("ema_update", "layer counts differ"));
    }
    let (keep, mix) = (F::of(decay), F::of(1.0 - decay));
    for (t, o) in target.tensors_mut().zip(online.tensors()) {
        if t.shape() != o.shape() {
            return Err(GipError::shape("ema_update", format!("{:?} vs {:?}", t.shape(), o.shape())));
        }
        for (tv, &ov) in t.as_mut_slice().iter_mut().zip(o.as_slice()) {
            *tv = keep * *tv + mix * ov;
        }
    }
    Ok(())
}

/// Cross-correlation `C = ẑ1ᵀẑ2 / N` of per-column standardized views.
pub fn cross_correlation<F: Scalar>(tape: &mut Tape<F>, z1: Var, z2: Var) -> Result<Var> {
    let (n, _) = pair_shapes(tape, "cross_correlation", z1, z2, 2)?;
    let a = tape.batch_standardize(z1)?;
    let b = tape.batch_standardize(z2)?;
    let at = tape.transpose(a)?;
    let c = tape.matmul(at, b)?;
    tape.scale(c, F::of(1.0 / n as f64))
}

/// `Σᵢ(1−Cᵢᵢ)² + λ Σᵢ Σ_{j≠i} Cᵢⱼ²`.
pub fn gbt_loss<F: Scalar>(tape: &mut Tape<F>, z1: Var, z2: Var, lambda: f64) -> Result<Var> {
    let (_, d) = pair_shapes(tape, "gbt_loss", z1, z2, 2)?;
    let c = cross_correlation(tape, z1, z2)?;
    let (eye, off) = masks(tape, d)?;
    let m = tape.sub(c, eye)?;
    let sq = tape.mul(m, m)?;
    let on = tape.mul(sq, eye)?;
    let on = tape.sum(on)?;
    let offd = tape.mul(sq, off)?;
    let offd = tape.sum(offd)?;
    let offd = tape.scale(offd, F::of(lambda))?;
    tape.add(on, offd)
}
