use super::{check_target, LogProbMatrix, LossOutput};
use crate::error::{Error, Result};

/// One step of a monotonic AXE alignment, 1-based: `(i, k)` is the state
/// after the step (`i` targets consumed, `k` output positions consumed).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxeMove {
    /// Target `i` is predicted at position `k`.
    Align { i: usize, k: usize },
    /// Position `k` predicts epsilon.
    SkipPrediction { i: usize, k: usize },
    /// Target `i` is charged again at position `k` without advancing `k`.
    SkipTarget { i: usize, k: usize },
}

/// Minimum-cost monotonic alignment.
///
/// `A[0][0] = 0`, and for `k >= 1`:
/// `A[i][k] = min(A[i-1][k-1] - logp[k][y_i], A[i][k-1] - logp[k][eps], A[i-1][k] - logp[k][y_i])`.
/// Ties prefer align, then skip-prediction, then skip-target.
pub fn axe_alignment(logp: &LogProbMatrix, target: &[usize], epsilon: usize) -> Result<(f64, Vec<AxeMove>)> {
    check_target(logp, target, &[epsilon])?;
    if epsilon >= logp.vocab() {
        return Err(Error::Data(format!("epsilon id {epsilon} outside vocabulary")));
    }
    let (n, m) = (target.len(), logp.rows());
    let w = m + 1;
    let mut cost = vec![f64::INFINITY; (n + 1) * w];
    // 0 = align, 1 = skip prediction, 2 = skip target
    let mut back = vec![u8::MAX; (n + 1) * w];
    cost[0] = 0.0;
    for k in 1..=m {
        let eps = -logp.get(k - 1, epsilon);
        cost[k] = cost[k - 1] + eps;
        back[k] = 1;
        for i in 1..=n {
            let y = -logp.get(k - 1, target[i - 1]);
            let candidates = [
                cost[(i - 1) * w + k - 1] + y,
                cost[i * w + k - 1] + eps,
                cost[(i - 1) * w + k] + y,
            ];
            let mut best = 0;
            for c in 1..3 {
                if candidates[c] < candidates[best] {
                    best = c;
                }
            }
            cost[i * w + k] = candidates[best];
            back[i * w + k] = best as u8;
        }
    }
    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut k) = (n, m);
    while i > 0 || k > 0 {
        match back[i * w + k] {
            0 => {
                path.push(AxeMove::Align { i, k });
                i -= 1;
                k -= 1;
            }
            1 => {
                path.push(AxeMove::SkipPrediction { i, k });
                k -= 1;
            }
            2 => {
                path.push(AxeMove::SkipTarget { i, k });
                i -= 1;
            }
            _ => unreachable!("unreachable DP state ({i}, {k})"),
        }
    }
    path.reverse();
    Ok((cost[n * w + m], path))
}

/// Aligned cross entropy along the best monotonic alignment (held fixed for the gradient).
pub fn axe_loss(logp: &LogProbMatrix, target: &[usize], epsilon: usize) -> Result<LossOutput> {
    let (value, path) = axe_alignment(logp, target, epsilon)?;
    let v = logp.vocab();
    let mut weights = vec![0.0; logp.rows() * v];
    for mv in path {
        let (k, tok) = match mv {
            AxeMove::Align { i, k } | AxeMove::SkipTarget { i, k } => (k, target[i - 1]),
            AxeMove::SkipPrediction { k, .. } => (k, epsilon),
        };
        weights[(k - 1) * v + tok] += 1.0;
    }
    Ok(LossOutput::from_weights(logp, value, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::xe_loss;

    #[test]
    fn perfect_rows_align_identically() {
        // vocab {A, B, eps}
        let lp = LogProbMatrix::from_probs(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let (value, path) = axe_alignment(&lp, &[0, 1], 2).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(path, vec![AxeMove::Align { i: 1, k: 1 }, AxeMove::Align { i: 2, k: 2 }]);
    }

    #[test]
    fn single_cell_is_align_cost() {
        let lp = LogProbMatrix::from_probs(1, 3, &[0.3, 0.5, 0.2]).unwrap();
        let out = axe_loss(&lp, &[1], 2).unwrap();
        assert!((out.value + 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn epsilon_positions_are_skipped() {
        // three outputs, middle one confidently epsilon
        let lp = LogProbMatrix::from_probs(
            3,
            3,
            &[0.9, 0.05, 0.05, 0.01, 0.01, 0.98, 0.05, 0.9, 0.05],
        )
        .unwrap();
        let (value, path) = axe_alignment(&lp, &[0, 1], 2).unwrap();
        assert!(path.contains(&AxeMove::SkipPrediction { i: 1, k: 2 }));
        let want = -(0.9f64.ln() + 0.98f64.ln() + 0.9f64.ln());
        assert!((value - want).abs() < 1e-12);
    }

    #[test]
    fn never_exceeds_xe_at_equal_length() {
        let logits: Vec<f64> = (0..12).map(|x| ((x * 7919) % 13) as f64 / 3.0).collect();
        let lp = LogProbMatrix::from_logits(3, 4, &logits).unwrap();
        let t = [1, 0, 2];
        assert!(axe_loss(&lp, &t, 3).unwrap().value <= xe_loss(&lp, &t).unwrap().value + 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits: Vec<f64> = (0..20).map(|x| ((x * 31) % 11) as f64 / 4.0).collect();
        let lp = LogProbMatrix::from_logits(5, 4, &logits).unwrap();
        let out = axe_loss(&lp, &[0, 2], 3).unwrap();
        assert!(out.row_sums().iter().all(|s| s.abs() < 1e-12));
    }

    #[test]
    fn epsilon_in_target_rejected() {
        let lp = LogProbMatrix::from_logits(2, 3, &[0.0; 6]).unwrap();
        assert!(axe_loss(&lp, &[2], 2).is_err());
    }
}
