//! Alignment-based sequence losses for non-autoregressive decoders.
//!
//! Every loss consumes a [`LogProbMatrix`] (one normalized log-distribution
//! per output position) and a target sequence, and returns the loss value in
//! nats together with its exact gradient with respect to the pre-softmax
//! logits. Losses built on a discrete best alignment (AXE, OAXE, M-OAXE) hold
//! that alignment fixed when differentiating.

mod assignment;
mod axe;
mod coco;
mod ctc;
mod logprob;
mod moaxe;
mod oaxe;
mod xe;

use std::fmt;
use std::str::FromStr;

pub use assignment::min_cost_assignment;
pub use axe::{axe_alignment, axe_loss, AxeMove};
pub use coco::{coco_loss, DEFAULT_LAMBDA};
pub use ctc::{ctc_decode_greedy, ctc_loss, ctc_min_length, ctc_posteriors};
pub use logprob::{log_add, log_sum_exp, LogProbMatrix};
pub use moaxe::{moaxe_loss, moaxe_spans, moaxe_stage1, moaxe_stage2_value, UNALIGNED};
pub use oaxe::{oaxe_alignment, oaxe_loss};
pub use xe::xe_loss;

use crate::error::{Error, Result};

/// Loss value plus `d value / d logits`, row-major `rows x vocab`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
    pub rows: usize,
    pub vocab: usize,
}

impl LossOutput {
    /// Gradient of `value = -sum_{k,v} w[k,v] * logp[k,v]` for fixed weights
    /// `w`: row `k` is `softmax_k * sum_v w[k,v] - w[k,.]`.
    pub(crate) fn from_weights(logp: &LogProbMatrix, value: f64, weights: Vec<f64>) -> Self {
        let vocab = logp.vocab();
        let mut grad = weights;
        for (k, row) in grad.chunks_exact_mut(vocab).enumerate() {
            let total: f64 = row.iter().sum();
            for (v, g) in row.iter_mut().enumerate() {
                *g = logp.get(k, v).exp() * total - *g;
            }
        }
        LossOutput { value, grad, rows: logp.rows(), vocab }
    }

    pub fn grad_row(&self, k: usize) -> &[f64] {
        &self.grad[k * self.vocab..(k + 1) * self.vocab]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.grad.chunks_exact(self.vocab).map(|r| r.iter().sum()).collect()
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &LossOutput, b: f64) -> LossOutput {
        assert_eq!((self.rows, self.vocab), (other.rows, other.vocab));
        LossOutput {
            value: a * self.value + b * other.value,
            grad: self.grad.iter().zip(&other.grad).map(|(x, y)| a * x + b * y).collect(),
            rows: self.rows,
            vocab: self.vocab,
        }
    }
}

pub(crate) fn check_target(logp: &LogProbMatrix, target: &[usize], reserved: &[usize]) -> Result<()> {
    if target.is_empty() {
        return Err(Error::Data("target sequence is empty".into()));
    }
    for &t in target {
        if t >= logp.vocab() {
            return Err(Error::Data(format!("target token {t} outside vocabulary of {}", logp.vocab())));
        }
        if reserved.contains(&t) {
            return Err(Error::Data(format!("target contains reserved token {t}")));
        }
    }
    Ok(())
}

/// Reserved output ids: the CTC blank and the AXE epsilon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Specials {
    pub blank: usize,
    pub epsilon: usize,
}

impl Specials {
    /// The last two slots of a vocabulary with `real` ordinary tokens.
    pub fn after(real: usize) -> Self {
        Specials { blank: real, epsilon: real + 1 }
    }
}

/// How long the decoder output is relative to the sentence pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderLength {
    /// Twice the source length.
    DoubleSource,
    /// The reference length.
    Golden,
}

impl DecoderLength {
    pub fn length(self, source_len: usize, target_len: usize) -> usize {
        match self {
            DecoderLength::DoubleSource => 2 * source_len,
            DecoderLength::Golden => target_len,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DecoderLength::DoubleSource => "double_source",
            DecoderLength::Golden => "golden",
        }
    }
}

impl FromStr for DecoderLength {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double_source" => Ok(DecoderLength::DoubleSource),
            "golden" => Ok(DecoderLength::Golden),
            _ => Err(Error::parse("decoder length", format!("unknown rule {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Loss {
    Xe,
    Axe,
    Ctc,
    Oaxe,
    Moaxe,
    Coco { lambda: f64 },
}

impl Loss {
    pub const NAMES: [&'static str; 6] = ["xe", "axe", "ctc", "oaxe", "moaxe", "coco"];

    pub fn name(&self) -> &'static str {
        match self {
            Loss::Xe => "xe",
            Loss::Axe => "axe",
            Loss::Ctc => "ctc",
            Loss::Oaxe => "oaxe",
            Loss::Moaxe => "moaxe",
            Loss::Coco { .. } => "coco",
        }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        match self {
            Loss::Coco { .. } => Loss::Coco { lambda },
            other => other,
        }
    }

    pub fn decoder_length(&self) -> DecoderLength {
        match self {
            Loss::Ctc | Loss::Moaxe | Loss::Coco { .. } => DecoderLength::DoubleSource,
            Loss::Xe | Loss::Axe | Loss::Oaxe => DecoderLength::Golden,
        }
    }

    /// Loss used for the first training phase.
    pub fn pretraining_loss(&self) -> Loss {
        match self {
            Loss::Oaxe => Loss::Xe,
            Loss::Coco { .. } | Loss::Moaxe => Loss::Ctc,
            other => *other,
        }
    }

    pub fn compute(&self, logp: &LogProbMatrix, target: &[usize], sp: Specials) -> Result<LossOutput> {
        check_target(logp, target, &[sp.blank, sp.epsilon])?;
        match *self {
            Loss::Xe => xe_loss(logp, target),
            Loss::Axe => axe_loss(logp, target, sp.epsilon),
            Loss::Ctc => ctc_loss(logp, target, sp.blank),
            Loss::Oaxe => oaxe_loss(logp, target),
            Loss::Moaxe => moaxe_loss(logp, target),
            Loss::Coco { lambda } => coco_loss(logp, target, sp.blank, lambda),
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Loss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "xe" => Loss::Xe,
            "axe" => Loss::Axe,
            "ctc" => Loss::Ctc,
            "oaxe" => Loss::Oaxe,
            "moaxe" | "m-oaxe" => Loss::Moaxe,
            "coco" => Loss::Coco { lambda: DEFAULT_LAMBDA },
            _ => {
                return Err(Error::parse(
                    "loss",
                    format!("unknown loss {s:?}; expected one of {}", Loss::NAMES.join(", ")),
                ))
            }
        })
    }
}
