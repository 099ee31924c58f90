//! Two-phase training, greedy decoding and corpus evaluation.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::corpus::{Corpus, SentencePair, Side, VocabSpec};
use crate::error::{Error, Result};
use crate::kv::{write_atomic, KeyValues};
use crate::losses::{ctc_decode_greedy, ctc_min_length, DecoderLength, LogProbMatrix, Loss, LossOutput, Specials};
use crate::metrics::{corpus_accuracy, AccuracyReport};
use crate::model::{checkpoint, Batch, Grads, Model, ModelConfig};
use crate::optim::{Adam, Schedule};
use crate::rng::{stream, Purpose};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MODEL_CONFIG_FILE: &str = "model.cfg";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Phase-2 loss; phase 1 uses its pretraining loss.
    pub loss: Loss,
    pub phase1_updates: usize,
    pub phase2_updates: usize,
    /// Target tokens per batch.
    pub tokens_per_batch: usize,
    pub peak_lr: f64,
    pub warmup: usize,
    pub seed: u64,
    pub eval_interval: usize,
    /// Validation sentences scored at each log point; 0 means all.
    pub valid_limit: usize,
    /// Worker threads for per-sentence loss evaluation.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: Loss::Xe,
            phase1_updates: 3000,
            phase2_updates: 3000,
            tokens_per_batch: 2048,
            peak_lr: 5e-4,
            warmup: 4000,
            seed: 1,
            eval_interval: 500,
            valid_limit: 500,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn phase1_loss(&self) -> Loss {
        self.loss.pretraining_loss()
    }

    pub fn total_updates(&self) -> usize {
        self.phase1_updates + self.phase2_updates
    }

    pub fn loss_at(&self, update: usize) -> (u8, Loss) {
        if update <= self.phase1_updates {
            (1, self.phase1_loss())
        } else {
            (2, self.loss)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens_per_batch == 0 || self.eval_interval == 0 || self.threads == 0 {
            return Err(Error::Config("tokens_per_batch, eval_interval and threads must be positive".into()));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.peak_lr)));
        }
        if let Loss::Coco { lambda } = self.loss {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("train.loss", self.loss.name());
        if let Loss::Coco { lambda } = self.loss {
            kv.set("train.lambda", lambda);
        }
        kv.set("train.phase1_loss", self.phase1_loss().name());
        kv.set("train.phase1_updates", self.phase1_updates);
        kv.set("train.phase2_updates", self.phase2_updates);
        kv.set("train.tokens_per_batch", self.tokens_per_batch);
        kv.set("train.lr", self.peak_lr);
        kv.set("train.warmup", self.warmup);
        kv.set("train.seed", self.seed);
        kv.set("train.eval_interval", self.eval_interval);
        kv.set("train.valid_limit", self.valid_limit);
    }

    /// Read `train.*` keys over `self`.
    pub fn merge_kv(&self, kv: &KeyValues) -> Result<TrainConfig> {
        let mut c = self.clone();
        if let Some(loss) = kv.parse_opt::<Loss>("train.loss")? {
            c.loss = loss;
        }
        if let Some(lambda) = kv.parse_opt::<f64>("train.lambda")? {
            c.loss = c.loss.with_lambda(lambda);
        }
        c.phase1_updates = kv.parse_or("train.phase1_updates", c.phase1_updates)?;
        c.phase2_updates = kv.parse_or("train.phase2_updates", c.phase2_updates)?;
        c.tokens_per_batch = kv.parse_or("train.tokens_per_batch", c.tokens_per_batch)?;
        c.peak_lr = kv.parse_or("train.lr", c.peak_lr)?;
        c.warmup = kv.parse_or("train.warmup", c.warmup)?;
        c.seed = kv.parse_or("train.seed", c.seed)?;
        c.eval_interval = kv.parse_or("train.eval_interval", c.eval_interval)?;
        c.valid_limit = kv.parse_or("train.valid_limit", c.valid_limit)?;
        c.validate()?;
        Ok(c)
    }
}

/// Model-side vocabulary: source ids are used as-is, target ids are shifted
/// to start at 0 and followed by blank and epsilon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskVocab {
    pub src_vocab: usize,
    pub tgt_min: u32,
    pub n_real: usize,
}

impl TaskVocab {
    pub fn from_spec(spec: &VocabSpec) -> TaskVocab {
        let (_, src_hi) = spec.bounds(Side::Source);
        let (lo, hi) = spec.bounds(Side::Target);
        TaskVocab { src_vocab: src_hi as usize + 1, tgt_min: lo, n_real: (hi - lo + 1) as usize }
    }

    pub fn specials(&self) -> Specials {
        Specials::after(self.n_real)
    }

    pub fn tgt_vocab(&self) -> usize {
        self.n_real + 2
    }

    pub fn apply(&self, config: &ModelConfig) -> ModelConfig {
        ModelConfig { src_vocab: self.src_vocab, tgt_vocab: self.tgt_vocab(), ..config.clone() }
    }

    pub fn encode(&self, pair: &SentencePair) -> Example {
        Example {
            source: pair.source.iter().map(|&t| t as usize).collect(),
            target: pair.target.iter().map(|&t| (t - self.tgt_min) as usize).collect(),
        }
    }

    /// Map predicted indices back to target ids, dropping blank and epsilon.
    pub fn decode(&self, indices: &[usize]) -> Vec<u32> {
        indices.iter().filter(|&&i| i < self.n_real).map(|&i| i as u32 + self.tgt_min).collect()
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("vocab.src_size", self.src_vocab);
        kv.set("vocab.tgt_min", self.tgt_min);
        kv.set("vocab.tgt_real", self.n_real);
        kv.set("vocab.blank", self.specials().blank);
        kv.set("vocab.epsilon", self.specials().epsilon);
    }

    pub fn from_kv(kv: &KeyValues) -> Result<TaskVocab> {
        Ok(TaskVocab {
            src_vocab: kv.require("vocab.src_size")?,
            tgt_min: kv.require("vocab.tgt_min")?,
            n_real: kv.require("vocab.tgt_real")?,
        })
    }
}

/// A sentence pair in model indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl Example {
    pub fn decoder_len(&self, rule: DecoderLength) -> usize {
        rule.length(self.source.len(), self.target.len())
    }

    /// Whether `loss` has any valid alignment at this example's decoder length.
    pub fn feasible(&self, loss: &Loss) -> bool {
        let m = self.decoder_len(loss.decoder_length());
        match loss {
            Loss::Ctc | Loss::Coco { .. } => ctc_min_length(&self.target) <= m,
            Loss::Moaxe => self.target.len() <= m,
            Loss::Axe => true,
            Loss::Xe | Loss::Oaxe => m == self.target.len(),
        }
    }
}

fn make_batch(examples: &[&Example], rule: DecoderLength) -> Batch {
    Batch {
        sources: examples.iter().map(|e| e.source.clone()).collect(),
        dec_lens: examples.iter().map(|e| e.decoder_len(rule)).collect(),
    }
}

fn sentence_logp(logits: &[f32], rows: std::ops::Range<usize>, vocab: usize) -> Result<LogProbMatrix> {
    let data: Vec<f64> = logits[rows.start * vocab..rows.end * vocab].iter().map(|&x| x as f64).collect();
    LogProbMatrix::from_logits(rows.len(), vocab, &data)
}

/// Run `f` over `0..n` on up to `threads` scoped workers; results keep index order.
fn par_map<R: Send>(n: usize, threads: usize, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
    if threads <= 1 || n < 2 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|lo| {
                let f = &f;
                s.spawn(move || (lo..(lo + chunk).min(n)).map(f).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Summed loss, target-token count, and parameter gradients of the
/// per-token mean loss over a batch.
pub fn batch_gradient(
    model: &Model<f32>,
    examples: &[&Example],
    loss: &Loss,
    specials: Specials,
    dropout: Option<(u64, u64)>,
    threads: usize,
) -> Result<(f64, usize, Grads<f32>)> {
    let batch = make_batch(examples, loss.decoder_length());
    let fwd = model.forward(&batch, dropout)?;
    let v = model.config().tgt_vocab;
    let outs: Vec<Result<LossOutput>> = par_map(examples.len(), threads, |s| {
        let logp = sentence_logp(&fwd.logits, fwd.rows(s), v)?;
        loss.compute(&logp, &examples[s].target, specials)
    });
    let tokens: usize = examples.iter().map(|e| e.target.len()).sum();
    let scale = 1.0 / tokens as f64;
    let mut dlogits = vec![0.0f32; fwd.logits.len()];
    let mut total = 0.0;
    for (s, out) in outs.into_iter().enumerate() {
        let out = out?;
        if !out.value.is_finite() {
            return Err(Error::Infeasible(format!("{} loss is not finite for a batch sentence", loss.name())));
        }
        total += out.value;
        let start = fwd.rows(s).start * v;
        for (d, &g) in dlogits[start..start + out.grad.len()].iter_mut().zip(&out.grad) {
            *d = (g * scale) as f32;
        }
    }
    let grads = model.backward(&fwd, &dlogits)?;
    Ok((total, tokens, grads))
}

/// Greedy decoding: CTC collapse at twice the source length for CTC-style
/// losses, per-position argmax at the golden length otherwise.
pub fn predict(model: &Model<f32>, loss: &Loss, examples: &[Example], specials: Specials) -> Result<Vec<Vec<usize>>> {
    const CHUNK: usize = 64;
    let rule = loss.decoder_length();
    let v = model.config().tgt_vocab;
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(CHUNK) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let fwd = model.forward(&make_batch(&refs, rule), None)?;
        for s in 0..chunk.len() {
            let logp = sentence_logp(&fwd.logits, fwd.rows(s), v)?;
            let tokens = match rule {
                DecoderLength::DoubleSource => ctc_decode_greedy(&logp, specials.blank),
                DecoderLength::Golden => logp.argmax_rows(),
            };
            out.push(tokens.into_iter().filter(|&t| t != specials.blank && t != specials.epsilon).collect());
        }
    }
    Ok(out)
}

pub fn accuracy_of(model: &Model<f32>, loss: &Loss, examples: &[Example], specials: Specials) -> Result<AccuracyReport> {
    let preds = predict(model, loss, examples, specials)?;
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = preds.into_iter().zip(examples.iter().map(|e| e.target.clone())).collect();
    corpus_accuracy(&pairs)
}

/// Mean per-token loss over `examples` with dropout off.
pub fn corpus_loss(model: &Model<f32>, loss: &Loss, examples: &[Example], specials: Specials) -> Result<f64> {
    const CHUNK: usize = 64;
    let v = model.config().tgt_vocab;
    let (mut total, mut tokens) = (0.0, 0usize);
    for chunk in examples.chunks(CHUNK) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let fwd = model.forward(&make_batch(&refs, loss.decoder_length()), None)?;
        for (s, e) in chunk.iter().enumerate() {
            total += loss.compute(&sentence_logp(&fwd.logits, fwd.rows(s), v)?, &e.target, specials)?.value;
            tokens += e.target.len();
        }
    }
    Ok(total / tokens.max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub update: usize,
    pub phase: u8,
    pub loss_value: f64,
    pub valid_accuracy: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("update,phase,loss_value,valid_accuracy\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6}", r.update, r.phase, r.loss_value, r.valid_accuracy);
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    /// Training pairs dropped because the loss has no valid alignment for them.
    pub skipped: usize,
    pub model: Model<f32>,
    pub vocab: TaskVocab,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.loss_value)
    }

    pub fn final_accuracy(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.valid_accuracy)
    }
}

/// Optimize on in-memory examples. `progress` sees each log row as it is produced.
pub fn train_examples(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    vocab: TaskVocab,
    train: &[Example],
    valid: &[Example],
    progress: &mut dyn FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model_cfg = vocab.apply(model_cfg);
    let specials = vocab.specials();
    let p1 = cfg.phase1_loss();
    let usable: Vec<&Example> = train.iter().filter(|e| e.feasible(&cfg.loss) && e.feasible(&p1)).collect();
    let skipped = train.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::Data(format!("no training pair admits the {} loss", cfg.loss.name())));
    }
    let valid: Vec<Example> = match cfg.valid_limit {
        0 => valid.to_vec(),
        n => valid.iter().take(n).cloned().collect(),
    };
    let mut model = Model::<f32>::init(&model_cfg, cfg.seed)?;
    let mut opt = Adam::new(&model.values().iter().map(Vec::len).collect::<Vec<_>>());
    let sched = Schedule { peak_lr: cfg.peak_lr, warmup: cfg.warmup };

    let mut order: Vec<usize> = (0..usable.len()).collect();
    let (mut epoch, mut cursor) = (0u64, usable.len());
    let (mut interval_loss, mut interval_tokens) = (0.0, 0usize);
    let mut log = Vec::new();
    for update in 1..=cfg.total_updates() {
        let mut picked = Vec::new();
        let mut tokens = 0;
        while tokens < cfg.tokens_per_batch && picked.len() < usable.len() {
            if cursor == usable.len() {
                order.sort_unstable();
                order.shuffle(&mut stream(cfg.seed, Purpose::Shuffle, epoch));
                epoch += 1;
                cursor = 0;
            }
            let e = usable[order[cursor]];
            cursor += 1;
            tokens += e.target.len();
            picked.push(e);
        }
        let (phase, loss) = cfg.loss_at(update);
        let (value, tok, grads) =
            batch_gradient(&model, &picked, &loss, specials, Some((cfg.seed, update as u64)), cfg.threads)?;
        opt.update(model.values_mut(), &grads, sched.lr(update))?;
        interval_loss += value;
        interval_tokens += tok;
        let phase_end = update == cfg.phase1_updates || update == cfg.total_updates();
        if update % cfg.eval_interval == 0 || phase_end {
            let acc = if valid.is_empty() { f64::NAN } else { accuracy_of(&model, &loss, &valid, specials)?.corpus_accuracy };
            let row = LogRow { update, phase, loss_value: interval_loss / interval_tokens as f64, valid_accuracy: acc };
            progress(&row);
            log.push(row);
            interval_loss = 0.0;
            interval_tokens = 0;
        }
    }
    Ok(TrainOutcome { log, skipped, model, vocab })
}

fn load_examples(corpus: &Corpus, vocab: &TaskVocab, split: &str) -> Result<Vec<Example>> {
    Ok(corpus.split(split)?.iter().map(|p| vocab.encode(p)).collect())
}

/// Train on a corpus directory and write checkpoint, config and log into `out_dir`.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    corpus_dir: &Path,
    out_dir: &Path,
    progress: &mut dyn FnMut(&LogRow),
) -> Result<TrainOutcome> {
    let corpus = Corpus::open(corpus_dir)?;
    let vocab = TaskVocab::from_spec(&corpus.vocab);
    let train = load_examples(&corpus, &vocab, "train")?;
    let valid = load_examples(&corpus, &vocab, "valid")?;
    let outcome = train_examples(cfg, model_cfg, vocab, &train, &valid, progress)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    checkpoint::save(&outcome.model, &out_dir.join(CHECKPOINT_FILE))?;
    let mut kv = KeyValues::new(MODEL_CONFIG_FILE);
    outcome.model.config().write_kv(&mut kv);
    vocab.write_kv(&mut kv);
    kv.set("decoder_length", cfg.loss.decoder_length().name());
    cfg.write_kv(&mut kv);
    kv.write(&out_dir.join(MODEL_CONFIG_FILE))?;
    write_atomic(&out_dir.join(TRAIN_LOG_FILE), log_csv(&outcome.log).as_bytes())?;
    Ok(outcome)
}

/// A trained model with everything needed to decode.
pub struct Trained {
    pub model: Model<f32>,
    pub loss: Loss,
    pub vocab: TaskVocab,
}

pub fn load_trained(dir: &Path) -> Result<Trained> {
    let kv = KeyValues::read(&dir.join(MODEL_CONFIG_FILE))?;
    let config = ModelConfig::from_kv(&kv)?;
    let vocab = TaskVocab::from_kv(&kv)?;
    let mut loss: Loss = kv.require("train.loss")?;
    if let Some(lambda) = kv.parse_opt::<f64>("train.lambda")? {
        loss = loss.with_lambda(lambda);
    }
    if config.src_vocab != vocab.src_vocab || config.tgt_vocab != vocab.tgt_vocab() {
        return Err(Error::Data(format!("{}: vocabulary sizes disagree with the model", dir.display())));
    }
    let model = checkpoint::load(&dir.join(CHECKPOINT_FILE), &config)?;
    Ok(Trained { model, loss, vocab })
}

/// Score a checkpoint on one corpus split.
pub fn evaluate(checkpoint_dir: &Path, corpus_dir: &Path, split: &str) -> Result<AccuracyReport> {
    let trained = load_trained(checkpoint_dir)?;
    let corpus = Corpus::open(corpus_dir)?;
    let vocab = TaskVocab::from_spec(&corpus.vocab);
    if vocab != trained.vocab {
        return Err(Error::Data(format!(
            "corpus vocabulary {vocab:?} does not match checkpoint vocabulary {:?}",
            trained.vocab
        )));
    }
    let examples = load_examples(&corpus, &vocab, split)?;
    let preds = predict(&trained.model, &trained.loss, &examples, vocab.specials())?;
    let pairs: Vec<(Vec<u32>, Vec<u32>)> = preds
        .iter()
        .zip(&examples)
        .map(|(p, e)| (vocab.decode(p), vocab.decode(&e.target)))
        .collect();
    corpus_accuracy(&pairs)
}
