//! LCS accuracy and decoding diagnostics.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Length of the longest common subsequence.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `lcs(pred, gold) / |gold|`.
pub fn sentence_accuracy<T: PartialEq>(pred: &[T], gold: &[T]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Data("empty reference sentence".into()));
    }
    Ok(lcs_length(pred, gold) as f64 / gold.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceScore {
    pub pred_len: usize,
    pub gold_len: usize,
    pub lcs: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub corpus_accuracy: f64,
    pub sentences: Vec<SentenceScore>,
    /// Mean of `pred_len / gold_len`.
    pub length_ratio: f64,
    /// Fraction of predicted tokens equal to their left neighbour.
    pub repeat_rate: f64,
}

/// Unweighted mean of sentence accuracies, plus diagnostics.
pub fn corpus_accuracy<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<AccuracyReport> {
    if pairs.is_empty() {
        return Err(Error::Data("no sentences to score".into()));
    }
    let mut sentences = Vec::with_capacity(pairs.len());
    let (mut repeats, mut tokens) = (0usize, 0usize);
    for (pred, gold) in pairs {
        let lcs = lcs_length(pred, gold);
        let accuracy = sentence_accuracy(pred, gold)?;
        repeats += pred.windows(2).filter(|w| w[0] == w[1]).count();
        tokens += pred.len();
        sentences.push(SentenceScore { pred_len: pred.len(), gold_len: gold.len(), lcs, accuracy });
    }
    let n = sentences.len() as f64;
    Ok(AccuracyReport {
        corpus_accuracy: sentences.iter().map(|s| s.accuracy).sum::<f64>() / n,
        length_ratio: sentences.iter().map(|s| s.pred_len as f64 / s.gold_len as f64).sum::<f64>() / n,
        repeat_rate: if tokens == 0 { 0.0 } else { repeats as f64 / tokens as f64 },
        sentences,
    })
}

impl AccuracyReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,pred_len,gold_len,lcs,accuracy\n");
        for (i, r) in self.sentences.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{},{},{}", r.pred_len, r.gold_len, r.lcs, r.accuracy);
        }
        s
    }
}
