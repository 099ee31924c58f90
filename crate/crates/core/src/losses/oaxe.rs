use super::{check_target, min_cost_assignment, LogProbMatrix, LossOutput};
use crate::error::{Error, Result};

/// Best injective alignment of target tokens to output positions:
/// `alpha[i]` minimizes `-sum_i logp[alpha[i]][y_i]`. Needs `n <= m`.
pub fn oaxe_alignment(logp: &LogProbMatrix, target: &[usize]) -> Result<(f64, Vec<usize>)> {
    check_target(logp, target, &[])?;
    let (n, m) = (target.len(), logp.rows());
    if n > m {
        return Err(Error::Shape(format!("{n} targets cannot be matched to {m} positions")));
    }
    let mut cost = Vec::with_capacity(n * m);
    for &y in target {
        cost.extend((0..m).map(|k| -logp.get(k, y)));
    }
    let alpha = min_cost_assignment(&cost, n, m)?;
    let value = alpha.iter().enumerate().map(|(i, &k)| cost[i * m + k]).sum();
    Ok((value, alpha))
}

/// Order-agnostic cross entropy: XE under the best one-to-one assignment.
pub fn oaxe_loss(logp: &LogProbMatrix, target: &[usize]) -> Result<LossOutput> {
    if logp.rows() != target.len() {
        return Err(Error::Shape(format!(
            "oaxe needs one output per target token ({} rows, {} targets)",
            logp.rows(),
            target.len()
        )));
    }
    let (value, alpha) = oaxe_alignment(logp, target)?;
    let v = logp.vocab();
    let mut weights = vec![0.0; logp.rows() * v];
    for (i, &k) in alpha.iter().enumerate() {
        weights[k * v + target[i]] += 1.0;
    }
    Ok(LossOutput::from_weights(logp, value, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::xe_loss;

    #[test]
    fn swap_example() {
        let lp = LogProbMatrix::from_probs(2, 2, &[0.2, 0.8, 0.9, 0.1]).unwrap();
        let (value, alpha) = oaxe_alignment(&lp, &[0, 1]).unwrap();
        assert_eq!(alpha, vec![1, 0]);
        assert!((value + 0.8f64.ln() + 0.9f64.ln()).abs() < 1e-12);
        assert!((value - 0.32850).abs() < 1e-5);
    }

    #[test]
    fn uniform_rows_invariant() {
        let lp = LogProbMatrix::from_logits(4, 3, &[0.0; 12]).unwrap();
        let out = oaxe_loss(&lp, &[2, 2, 0, 1]).unwrap();
        assert!((out.value - 4.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bounded_by_xe_and_row_permutation_invariant() {
        let logits: Vec<f64> = (0..20).map(|x| ((x * 37) % 17) as f64 / 5.0).collect();
        let lp = LogProbMatrix::from_logits(4, 5, &logits).unwrap();
        let t = [3, 1, 4, 1];
        let o = oaxe_loss(&lp, &t).unwrap().value;
        assert!(o <= xe_loss(&lp, &t).unwrap().value + 1e-12);
        let p = lp.permute_rows(&[2, 0, 3, 1]);
        assert!((oaxe_loss(&p, &t).unwrap().value - o).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        let lp = LogProbMatrix::from_logits(3, 2, &[0.0; 6]).unwrap();
        assert!(matches!(oaxe_loss(&lp, &[0, 1]), Err(Error::Shape(_))));
    }
}
