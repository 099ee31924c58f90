use super::{check_target, LogProbMatrix, LossOutput};
use crate::error::{Error, Result};

/// Position-wise cross entropy: output `i` must predict `target[i]`.
pub fn xe_loss(logp: &LogProbMatrix, target: &[usize]) -> Result<LossOutput> {
    check_target(logp, target, &[])?;
    if logp.rows() != target.len() {
        return Err(Error::Shape(format!(
            "xe needs one output per target token ({} rows, {} targets)",
            logp.rows(),
            target.len()
        )));
    }
    let v = logp.vocab();
    let mut weights = vec![0.0; logp.rows() * v];
    let mut value = 0.0;
    for (i, &y) in target.iter().enumerate() {
        value -= logp.get(i, y);
        weights[i * v + y] = 1.0;
    }
    Ok(LossOutput::from_weights(logp, value, weights))
}
