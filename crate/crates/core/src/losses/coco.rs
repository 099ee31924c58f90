use super::{ctc_loss, moaxe_loss, LogProbMatrix, LossOutput};
use crate::error::{Error, Result};

/// Weight of the CTC term that puts both terms on the same order of magnitude.
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// `lambda * CTC + (1 - lambda) * M-OAXE` on the same output distributions.
/// The blank id never occurs in targets, so the M-OAXE term ignores it.
pub fn coco_loss(logp: &LogProbMatrix, target: &[usize], blank: usize, lambda: f64) -> Result<LossOutput> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("coco lambda {lambda} outside [0,1]")));
    }
    let ctc = ctc_loss(logp, target, blank)?;
    let moaxe = moaxe_loss(logp, target)?;
    Ok(ctc.combine(lambda, &moaxe, 1.0 - lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_reduce_to_components() {
        let logits: Vec<f64> = (0..24).map(|x| ((x * 11) % 7) as f64 / 2.0).collect();
        let lp = LogProbMatrix::from_logits(6, 4, &logits).unwrap();
        let t = [0, 2, 1];
        let ctc = ctc_loss(&lp, &t, 3).unwrap();
        let mo = moaxe_loss(&lp, &t).unwrap();
        assert!((coco_loss(&lp, &t, 3, 1.0).unwrap().value - ctc.value).abs() < 1e-12);
        assert!((coco_loss(&lp, &t, 3, 0.0).unwrap().value - mo.value).abs() < 1e-12);
        let half = coco_loss(&lp, &t, 3, 0.5).unwrap();
        assert!((half.value - 0.5 * (ctc.value + mo.value)).abs() < 1e-12);
    }

    #[test]
    fn two_position_example_mean() {
        // vocab {A, blank}: ctc = -ln 0.8; m-oaxe labels both rows A: -ln 0.6 - ln 0.5
        let lp = LogProbMatrix::from_probs(2, 2, &[0.6, 0.4, 0.5, 0.5]).unwrap();
        let out = coco_loss(&lp, &[0], 1, 0.5).unwrap();
        let want = 0.5 * (-(0.8f64.ln())) + 0.5 * (-(0.6f64.ln()) - 0.5f64.ln());
        assert!((out.value - want).abs() < 1e-12);
    }

    #[test]
    fn lambda_out_of_range() {
        let lp = LogProbMatrix::from_logits(2, 2, &[0.0; 4]).unwrap();
        assert!(coco_loss(&lp, &[0], 1, 1.5).is_err());
    }
}
