use crate::error::{Error, Result};

/// `log(sum(exp(xs)))` with max subtraction. Empty or all `-inf` input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// Row-major `m x V` matrix of per-position log-distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbMatrix {
    rows: usize,
    vocab: usize,
    data: Vec<f64>,
}

impl LogProbMatrix {
    /// Log-softmax of raw logits.
    pub fn from_logits(rows: usize, vocab: usize, logits: &[f64]) -> Result<Self> {
        check_shape(rows, vocab, logits.len())?;
        let mut data = Vec::with_capacity(logits.len());
        for row in logits.chunks_exact(vocab) {
            let lse = log_sum_exp(row);
            data.extend(row.iter().map(|&x| x - lse));
        }
        Ok(LogProbMatrix { rows, vocab, data })
    }

    /// Wrap already-normalized log-probabilities (each row must log-sum-exp to 0 within 1e-6).
    pub fn from_log_probs(rows: usize, vocab: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(rows, vocab, data.len())?;
        for (k, row) in data.chunks_exact(vocab).enumerate() {
            let lse = log_sum_exp(row);
            if lse.is_nan() || lse.abs() > 1e-6 {
                return Err(Error::Data(format!("row {k} is not normalized (logsumexp = {lse})")));
            }
        }
        Ok(LogProbMatrix { rows, vocab, data })
    }

    pub fn from_probs(rows: usize, vocab: usize, probs: &[f64]) -> Result<Self> {
        Self::from_log_probs(rows, vocab, probs.iter().map(|p| p.ln()).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    #[inline]
    pub fn get(&self, k: usize, v: usize) -> f64 {
        self.data[k * self.vocab + v]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.vocab..(k + 1) * self.vocab]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Row `k` of the result is row `perm[k]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.rows);
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        LogProbMatrix { rows: self.rows, vocab: self.vocab, data }
    }

    /// Lowest-id argmax of each row.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|k| {
                let row = self.row(k);
                let mut best = 0;
                for (v, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = v;
                    }
                }
                best
            })
            .collect()
    }
}

fn check_shape(rows: usize, vocab: usize, len: usize) -> Result<()> {
    if rows == 0 || vocab == 0 {
        return Err(Error::Shape("log-prob matrix needs at least one row and one column".into()));
    }
    if rows * vocab != len {
        return Err(Error::Shape(format!("{rows}x{vocab} matrix given {len} values")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert!((log_add(-1e4, 0.0)).abs() < 1e-12);
        assert!((log_add(0.5f64.ln(), 0.5f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn rows_normalize() {
        let m = LogProbMatrix::from_logits(2, 3, &[1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap();
        for k in 0..2 {
            assert!(log_sum_exp(m.row(k)).abs() < 1e-12);
        }
        assert_eq!(m.argmax_rows(), vec![2, 2]);
    }

    #[test]
    fn unnormalized_rows_rejected() {
        assert!(LogProbMatrix::from_probs(1, 2, &[0.5, 0.6]).is_err());
        assert!(LogProbMatrix::from_probs(1, 2, &[0.5, 0.5]).is_ok());
        assert!(LogProbMatrix::from_logits(0, 2, &[]).is_err());
        assert!(LogProbMatrix::from_logits(2, 2, &[0.0; 3]).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest_id() {
        let m = LogProbMatrix::from_probs(1, 3, &[0.4, 0.4, 0.2]).unwrap();
        assert_eq!(m.argmax_rows(), vec![0]);
    }
}
