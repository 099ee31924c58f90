//! Three interactive operations for the browser page in `www/`. Each has a
//! plain Rust entry point returning JSON (used by the tests) and a thin
//! `wasm_bindgen` wrapper.

use natlab::corpus::{build_mapping, generate_pair, CorpusConfig, ReorderConfig, Side};
use natlab::losses::{
    axe_loss, coco_loss, ctc_loss, ctc_posteriors, moaxe_spans, moaxe_stage1, oaxe_loss, xe_loss, LogProbMatrix,
};
use natlab::metrics::{lcs_length, sentence_accuracy};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_PAIRS: usize = 50;

#[derive(Serialize)]
struct Pair {
    source: Vec<u32>,
    target: Vec<u32>,
    target_tags: Vec<String>,
    source_tree: String,
    target_tree: String,
    sen_swapped: bool,
}

/// Sample `n` sentence pairs from the scaled vocabulary under the given
/// reordering probabilities.
pub fn sample_pairs_json(p_lo: f64, p_so1: f64, p_so2: f64, p_op: f64, n: usize, seed: u64) -> Result<String, String> {
    let cfg = CorpusConfig {
        reorder: ReorderConfig { p_lo, p_so1, p_so2, p_op },
        vocab_scale: 100,
        seed,
        ..CorpusConfig::default()
    };
    cfg.reorder.validate().map_err(|e| e.to_string())?;
    let vocab = cfg.vocab().map_err(|e| e.to_string())?;
    let mapping = build_mapping(&vocab, seed).map_err(|e| e.to_string())?;
    let mut pairs = Vec::new();
    for i in 0..n.min(MAX_PAIRS) as u64 {
        let g = generate_pair(&cfg, &vocab, &mapping, i).map_err(|e| e.to_string())?;
        let target_tags = g
            .pair
            .target
            .iter()
            .map(|&t| vocab.tag_of(Side::Target, t).map_or_else(|| "?".into(), |tag| tag.to_string()))
            .collect();
        pairs.push(Pair {
            source: g.pair.source,
            target: g.pair.target,
            target_tags,
            source_tree: g.source_tree.bracketed(),
            target_tree: g.target_tree.bracketed(),
            sen_swapped: g.log.sen_swapped,
        });
    }
    serde_json::to_string(&pairs).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Losses {
    rows: usize,
    vocab: usize,
    blank: usize,
    /// `null` where the loss is undefined for this shape.
    xe: Option<f64>,
    axe: Option<f64>,
    ctc: Option<f64>,
    oaxe: Option<f64>,
    moaxe: Option<f64>,
    coco: Option<f64>,
    /// Per position, the posterior mass on each of the 2n+1 CTC lattice states.
    ctc_states: Vec<Vec<f64>>,
    /// Per position, the target index it is labelled with by M-OAXE.
    moaxe_beta: Vec<usize>,
}

fn finite(x: Result<f64, natlab::Error>) -> Option<f64> {
    x.ok().filter(|v| v.is_finite())
}

/// Every loss on a probability matrix given as whitespace-separated rows
/// separated by `;`. The last vocabulary column acts as blank and epsilon.
pub fn losses_json(probs: &str, target: &str, lambda: f64) -> Result<String, String> {
    let rows: Vec<Vec<f64>> = probs
        .split(';')
        .filter(|r| !r.trim().is_empty())
        .map(|r| r.split_whitespace().map(|x| x.parse::<f64>().map_err(|e| format!("{x}: {e}"))).collect())
        .collect::<Result<_, _>>()?;
    let vocab = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != vocab) {
        return Err("every row needs the same number of columns".into());
    }
    let target: Vec<usize> = target
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| format!("{t}: {e}")))
        .collect::<Result<_, _>>()?;
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let logp = LogProbMatrix::from_probs(rows.len(), vocab, &flat).map_err(|e| e.to_string())?;
    let blank = vocab.saturating_sub(1);
    let m = logp.rows();
    let ctc_states = match ctc_posteriors(&logp, &target, blank) {
        Ok((ll, post)) if ll.is_finite() => post.chunks(2 * target.len() + 1).map(<[f64]>::to_vec).collect(),
        _ => Vec::new(),
    };
    let moaxe_beta = moaxe_stage1(&logp, &target)
        .and_then(|alpha| moaxe_spans(&logp, &target, &alpha))
        .unwrap_or_default();
    let out = Losses {
        rows: m,
        vocab,
        blank,
        xe: finite(xe_loss(&logp, &target).map(|o| o.value)),
        axe: finite(axe_loss(&logp, &target, blank).map(|o| o.value)),
        ctc: finite(ctc_loss(&logp, &target, blank).map(|o| o.value)),
        oaxe: finite(oaxe_loss(&logp, &target).map(|o| o.value)),
        moaxe: finite(natlab::losses::moaxe_loss(&logp, &target).map(|o| o.value)),
        coco: finite(coco_loss(&logp, &target, blank, lambda).map(|o| o.value)),
        ctc_states,
        moaxe_beta,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Accuracy {
    lcs: usize,
    accuracy: f64,
}

/// LCS accuracy of a whitespace-tokenized prediction against a reference.
pub fn accuracy_json(pred: &str, gold: &str) -> Result<String, String> {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    let accuracy = sentence_accuracy(&p, &g).map_err(|e| e.to_string())?;
    serde_json::to_string(&Accuracy { lcs: lcs_length(&p, &g), accuracy }).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn sample_pairs(p_lo: f64, p_so1: f64, p_so2: f64, p_op: f64, n: usize, seed: u64) -> Result<String, JsError> {
    sample_pairs_json(p_lo, p_so1, p_so2, p_op, n, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn losses(probs: &str, target: &str, lambda: f64) -> Result<String, JsError> {
    losses_json(probs, target, lambda).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn accuracy(pred: &str, gold: &str) -> Result<String, JsError> {
    accuracy_json(pred, gold).map_err(|e| JsError::new(&e))
}
