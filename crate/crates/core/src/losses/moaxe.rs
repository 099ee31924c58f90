//! Modified OAXE for outputs longer than the reference.
//!
//! Stage 1 matches each reference token to a distinct output position (the
//! anchors). Stage 2 grows every anchor into a contiguous span: each gap
//! between two position-consecutive anchors is split at the point that
//! minimizes cross entropy, and positions before the first anchor or after
//! the last join that anchor's token. Every output position then carries one
//! reference token and the loss is plain cross entropy against that labelling.

use super::{check_target, oaxe_alignment, LogProbMatrix, LossOutput};
use crate::error::{Error, Result};

/// Marker for an output position without a reference token.
pub const UNALIGNED: usize = usize::MAX;

/// Stage-1 anchors: `alpha[i]` is the output position matched to target `i`.
pub fn moaxe_stage1(logp: &LogProbMatrix, target: &[usize]) -> Result<Vec<usize>> {
    if logp.rows() < target.len() {
        return Err(Error::Shape(format!(
            "m-oaxe needs at least as many outputs as targets ({} < {})",
            logp.rows(),
            target.len()
        )));
    }
    oaxe_alignment(logp, target).map(|(_, alpha)| alpha)
}

/// Stage 2: extend anchors into a total labelling `beta` (target index per position).
/// Split points tie-break toward the lowest position.
pub fn moaxe_spans(logp: &LogProbMatrix, target: &[usize], alpha: &[usize]) -> Result<Vec<usize>> {
    let m = logp.rows();
    if alpha.len() != target.len() || alpha.is_empty() {
        return Err(Error::Shape(format!("{} anchors for {} targets", alpha.len(), target.len())));
    }
    let mut beta = vec![UNALIGNED; m];
    for (i, &k) in alpha.iter().enumerate() {
        if k >= m || beta[k] != UNALIGNED {
            return Err(Error::Data(format!("anchor {k} is out of range or reused")));
        }
        beta[k] = i;
    }
    let anchors: Vec<usize> = (0..m).filter(|&k| beta[k] != UNALIGNED).collect();
    let first = anchors[0];
    let last = *anchors.last().expect("at least one anchor");
    for k in 0..first {
        beta[k] = beta[first];
    }
    for k in last + 1..m {
        beta[k] = beta[last];
    }
    for pair in anchors.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b == a + 1 {
            continue;
        }
        let (yi, yj) = (target[beta[a]], target[beta[b]]);
        // split = a: the whole gap goes to the right anchor
        let mut cost: f64 = (a + 1..b).map(|k| -logp.get(k, yj)).sum();
        let (mut best, mut best_cost) = (a, cost);
        for split in a + 1..b {
            cost += logp.get(split, yj) - logp.get(split, yi);
            if cost < best_cost {
                best = split;
                best_cost = cost;
            }
        }
        let (left, right) = (beta[a], beta[b]);
        for (k, slot) in beta.iter_mut().enumerate().take(b).skip(a + 1) {
            *slot = if k <= best { left } else { right };
        }
    }
    Ok(beta)
}

/// Cross entropy of a total labelling.
pub fn moaxe_stage2_value(logp: &LogProbMatrix, target: &[usize], beta: &[usize]) -> f64 {
    beta.iter().enumerate().map(|(k, &i)| -logp.get(k, target[i])).sum()
}

pub fn moaxe_loss(logp: &LogProbMatrix, target: &[usize]) -> Result<LossOutput> {
    check_target(logp, target, &[])?;
    let alpha = moaxe_stage1(logp, target)?;
    let beta = moaxe_spans(logp, target, &alpha)?;
    let v = logp.vocab();
    let mut weights = vec![0.0; logp.rows() * v];
    for (k, &i) in beta.iter().enumerate() {
        weights[k * v + target[i]] = 1.0;
    }
    let value = moaxe_stage2_value(logp, target, &beta);
    Ok(LossOutput::from_weights(logp, value, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::oaxe_loss;

    fn probs_matrix(rows: &[[f64; 4]]) -> LogProbMatrix {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        LogProbMatrix::from_probs(rows.len(), 4, &flat).unwrap()
    }

    #[test]
    fn six_outputs_three_targets() {
        // vocab {A, B, C, blank}; anchors C@1, B@4, A@6 (1-based)
        let lp = probs_matrix(&[
            [0.05, 0.05, 0.85, 0.05],
            [0.1, 0.2, 0.6, 0.1],
            [0.1, 0.6, 0.2, 0.1],
            [0.05, 0.85, 0.05, 0.05],
            [0.5, 0.3, 0.1, 0.1],
            [0.85, 0.05, 0.05, 0.05],
        ]);
        let target = [0, 1, 2];
        let alpha = moaxe_stage1(&lp, &target).unwrap();
        assert_eq!(alpha, vec![5, 3, 0]);
        let beta = moaxe_spans(&lp, &target, &alpha).unwrap();
        // gap {2,3}: C then B; gap {5}: A beats B
        assert_eq!(beta, vec![2, 2, 1, 1, 0, 0]);
        let out = moaxe_loss(&lp, &target).unwrap();
        let want = -(0.85f64.ln() + 0.6f64.ln() + 0.6f64.ln() + 0.85f64.ln() + 0.5f64.ln() + 0.85f64.ln());
        assert!((out.value - want).abs() < 1e-12);
    }

    #[test]
    fn boundary_gaps_join_nearest_anchor() {
        let lp = probs_matrix(&[
            [0.25, 0.25, 0.25, 0.25],
            [0.9, 0.04, 0.03, 0.03],
            [0.04, 0.9, 0.03, 0.03],
            [0.25, 0.25, 0.25, 0.25],
        ]);
        let beta = moaxe_spans(&lp, &[0, 1], &[1, 2]).unwrap();
        assert_eq!(beta, vec![0, 0, 1, 1]);
    }

    #[test]
    fn equal_length_reduces_to_oaxe() {
        let logits: Vec<f64> = (0..16).map(|x| ((x * 29) % 13) as f64 / 3.0).collect();
        let lp = LogProbMatrix::from_logits(4, 4, &logits).unwrap();
        let t = [1, 2, 0, 1];
        let a = moaxe_loss(&lp, &t).unwrap();
        let b = oaxe_loss(&lp, &t).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
        let alpha = moaxe_stage1(&lp, &t).unwrap();
        let beta = moaxe_spans(&lp, &t, &alpha).unwrap();
        for (i, &k) in alpha.iter().enumerate() {
            assert_eq!(beta[k], i);
        }
    }

    #[test]
    fn too_few_outputs_rejected() {
        let lp = LogProbMatrix::from_logits(1, 3, &[0.0; 3]).unwrap();
        assert!(matches!(moaxe_loss(&lp, &[0, 1]), Err(Error::Shape(_))));
    }

    #[test]
    fn every_row_has_unit_weight() {
        let logits: Vec<f64> = (0..28).map(|x| ((x * 13) % 9) as f64 / 2.0).collect();
        let lp = LogProbMatrix::from_logits(7, 4, &logits).unwrap();
        let out = moaxe_loss(&lp, &[0, 2, 1]).unwrap();
        assert!(out.row_sums().iter().all(|s| s.abs() < 1e-12));
    }
}
