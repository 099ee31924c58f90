use super::{check_target, log_sum_exp, LogProbMatrix, LossOutput};
use crate::error::{Error, Result};

/// Shortest output that can emit `target`: one slot per token plus a blank
/// between each pair of equal neighbours.
pub fn ctc_min_length(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn extended(target: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &t in target {
        ext.push(t);
        ext.push(blank);
    }
    ext
}

/// Log-likelihood of the target and the posterior occupancy of each of the
/// `2n+1` lattice states at each position (row-major `m x (2n+1)`).
pub fn ctc_posteriors(logp: &LogProbMatrix, target: &[usize], blank: usize) -> Result<(f64, Vec<f64>)> {
    check_target(logp, target, &[blank])?;
    if blank >= logp.vocab() {
        return Err(Error::Data(format!("blank id {blank} outside vocabulary")));
    }
    let m = logp.rows();
    let need = ctc_min_length(target);
    if m < need {
        return Err(Error::Infeasible(format!(
            "ctc needs at least {need} output positions for this target, got {m}"
        )));
    }
    let ext = extended(target, blank);
    let s_len = ext.len();
    let skip_ok = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![ninf; m * s_len];
    alpha[0] = logp.get(0, ext[0]);
    alpha[1] = logp.get(0, ext[1]);
    for t in 1..m {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut terms = [prev[s], ninf, ninf];
            if s >= 1 {
                terms[1] = prev[s - 1];
            }
            if skip_ok(s) {
                terms[2] = prev[s - 2];
            }
            cur[s] = log_sum_exp(&terms) + logp.get(t, ext[s]);
        }
    }
    let last = (m - 1) * s_len;
    let log_like = log_sum_exp(&[alpha[last + s_len - 1], alpha[last + s_len - 2]]);
    if log_like == ninf {
        return Err(Error::Infeasible("no ctc path has nonzero probability".into()));
    }

    // beta[t][s]: log-probability of emitting positions t+1.. given state s at t
    let mut beta = vec![ninf; m * s_len];
    beta[last + s_len - 1] = 0.0;
    beta[last + s_len - 2] = 0.0;
    for t in (0..m - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let mut terms = [ninf; 3];
            terms[0] = next[s] + logp.get(t + 1, ext[s]);
            if s + 1 < s_len {
                terms[1] = next[s + 1] + logp.get(t + 1, ext[s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                terms[2] = next[s + 2] + logp.get(t + 1, ext[s + 2]);
            }
            cur[s] = log_sum_exp(&terms);
        }
    }

    let occupancy = alpha.iter().zip(&beta).map(|(a, b)| (a + b - log_like).exp()).collect();
    Ok((log_like, occupancy))
}

/// Negative log of the total probability of all label paths that collapse to
/// `target` (merge repeats, then drop blanks).
pub fn ctc_loss(logp: &LogProbMatrix, target: &[usize], blank: usize) -> Result<LossOutput> {
    let (log_like, occupancy) = ctc_posteriors(logp, target, blank)?;
    let ext = extended(target, blank);
    let v = logp.vocab();
    let mut weights = vec![0.0; logp.rows() * v];
    for (t, occ) in occupancy.chunks_exact(ext.len()).enumerate() {
        for (s, &p) in occ.iter().enumerate() {
            weights[t * v + ext[s]] += p;
        }
    }
    Ok(LossOutput::from_weights(logp, -log_like, weights))
}

/// Best-path decoding: per-position argmax (lowest id on ties), merge
/// consecutive repeats, drop blanks.
pub fn ctc_decode_greedy(logp: &LogProbMatrix, blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for tok in logp.argmax_rows() {
        if Some(tok) != prev && tok != blank {
            out.push(tok);
        }
        prev = Some(tok);
    }
    out
}
