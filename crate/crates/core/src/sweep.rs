//! Grid sweeps over reordering settings, losses and seeds.
//!
//! A grid file is a sequence of `key=value` blocks separated by blank lines.
//! A block without `setting` holds defaults for the blocks after it; every
//! other block is one probability setting, trained with each listed loss
//! and seed.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::{generate_corpus, Corpus, CorpusConfig, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::kv::{parse_blocks, write_atomic, KeyValues};
use crate::losses::Loss;
use crate::model::ModelConfig;
use crate::trainer::{evaluate, train, LogRow, TrainConfig};

pub const RESULTS_FILE: &str = "results.csv";
pub const RESULTS_HEADER: &str = "setting,group,p_lo,p_so1,p_so2,p_op,loss,seed,accuracy,length_ratio";

const CORPUS_KEYS: [&str; 12] = [
    "n_train",
    "n_valid",
    "n_test",
    "p_dt",
    "p_np_in_vp",
    "star_continue",
    "star_cap",
    "p_lo",
    "p_so1",
    "p_so2",
    "p_op",
    "vocab_scale",
];

#[derive(Clone, Debug)]
pub struct Setting {
    pub name: String,
    pub group: String,
    pub corpus: CorpusConfig,
    pub losses: Vec<Loss>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub settings: Vec<Setting>,
}

fn parse_list<T: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<Vec<T>> {
    let raw = kv.get(key).ok_or_else(|| Error::parse(kv.origin(), format!("missing key {key}")))?;
    raw.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| Error::parse(kv.origin(), format!("{key}: cannot parse {s:?}"))))
        .collect()
}

fn check_keys(kv: &KeyValues) -> Result<()> {
    for k in kv.keys() {
        let known = matches!(k, "setting" | "group" | "losses" | "seeds" | "corpus_seed" | "train.lambda")
            || CORPUS_KEYS.contains(&k)
            || k.starts_with("train.")
            || k.starts_with("model.");
        if !known {
            return Err(Error::parse(kv.origin(), format!("unknown grid key {k}")));
        }
    }
    Ok(())
}

impl Grid {
    pub fn parse(origin: &str, text: &str) -> Result<Grid> {
        let mut defaults = KeyValues::new(origin);
        let mut settings = Vec::new();
        let mut names = BTreeSet::new();
        for block in parse_blocks(origin, text)? {
            check_keys(&block)?;
            if !block.contains("setting") {
                defaults = defaults.merged(&block);
                continue;
            }
            let kv = defaults.merged(&block);
            let name: String = kv.require("setting")?;
            if name.is_empty() || name.contains(['/', ',', '\\']) || !names.insert(name.clone()) {
                return Err(Error::parse(origin, format!("setting name {name:?} is empty, reserved or repeated")));
            }
            let mut corpus_kv = KeyValues::new(origin);
            for k in CORPUS_KEYS {
                if let Some(v) = kv.get(k) {
                    corpus_kv.set(k, v);
                }
            }
            corpus_kv.set("seed", kv.get("corpus_seed").unwrap_or("1"));
            let lambda: Option<f64> = kv.parse_opt("train.lambda")?;
            let losses = parse_list::<Loss>(&kv, "losses")?
                .into_iter()
                .map(|l| lambda.map_or(l, |x| l.with_lambda(x)))
                .collect();
            settings.push(Setting {
                group: kv.get("group").unwrap_or(&name).to_string(),
                corpus: CorpusConfig::from_kv(&corpus_kv)?,
                losses,
                seeds: parse_list(&kv, "seeds")?,
                train: TrainConfig::default().merge_kv(&kv)?,
                model: ModelConfig::small(0, 0).merge_kv(&kv)?,
                name,
            });
        }
        if settings.is_empty() {
            return Err(Error::parse(origin, "grid has no setting blocks"));
        }
        Ok(Grid { settings })
    }

    pub fn read(path: &Path) -> Result<Grid> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Grid::parse(&path.display().to_string(), &text)
    }

    pub fn cells(&self) -> usize {
        self.settings.iter().map(|s| s.losses.len() * s.seeds.len()).sum()
    }
}

/// One finished cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub setting: String,
    pub group: String,
    pub probs: [f64; 4],
    pub loss: String,
    pub seed: u64,
    pub accuracy: f64,
    pub length_ratio: f64,
}

impl ResultRow {
    pub fn to_line(&self) -> String {
        let [a, b, c, d] = self.probs;
        format!(
            "{},{},{a},{b},{c},{d},{},{},{:.6},{:.6}",
            self.setting, self.group, self.loss, self.seed, self.accuracy, self.length_ratio
        )
    }

    pub fn parse(origin: &str, line: &str) -> Result<ResultRow> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::parse(origin, format!("malformed results row {line:?}"));
        if f.len() != 10 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(ResultRow {
            setting: f[0].to_string(),
            group: f[1].to_string(),
            probs: [num(f[2])?, num(f[3])?, num(f[4])?, num(f[5])?],
            loss: f[6].to_string(),
            seed: f[7].parse().map_err(|_| bad())?,
            accuracy: num(f[8])?,
            length_ratio: num(f[9])?,
        })
    }

    fn key(&self) -> (String, String, u64) {
        (self.setting.clone(), self.loss.clone(), self.seed)
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(Error::parse(&origin, "missing results header"));
    }
    lines.filter(|l| !l.is_empty()).map(|l| ResultRow::parse(&origin, l)).collect()
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}", r.to_line());
    }
    s
}

/// Events reported while a sweep runs.
#[derive(Debug)]
pub enum SweepEvent<'a> {
    Skipped { setting: &'a str, loss: &'a str, seed: u64 },
    Started { setting: &'a str, loss: &'a str, seed: u64 },
    Progress(&'a LogRow),
    Finished(&'a ResultRow),
}

/// Output layout under the sweep directory.
pub fn corpus_dir(out: &Path, setting: &str) -> PathBuf {
    out.join("corpora").join(setting)
}

pub fn run_dir(out: &Path, setting: &str, loss: &str, seed: u64) -> PathBuf {
    out.join("runs").join(setting).join(loss).join(format!("seed{seed}"))
}

fn ensure_corpus(dir: &Path, cfg: &CorpusConfig) -> Result<()> {
    if dir.join(MANIFEST_FILE).exists() {
        let existing = Corpus::open(dir)?;
        if &existing.config != cfg {
            return Err(Error::Data(format!("{} holds a corpus with a different configuration", dir.display())));
        }
        return Ok(());
    }
    generate_corpus(cfg, dir).map(|_| ())
}

/// Run every cell not already present in `out/results.csv`, appending rows as
/// cells finish so an interrupted sweep keeps its completed work.
pub fn run_sweep(grid: &Grid, out: &Path, on_event: &mut dyn FnMut(SweepEvent<'_>)) -> Result<Vec<ResultRow>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let results_path = out.join(RESULTS_FILE);
    let mut rows = if results_path.exists() { read_results(&results_path)? } else { Vec::new() };
    let done: BTreeSet<_> = rows.iter().map(ResultRow::key).collect();
    for s in &grid.settings {
        let cdir = corpus_dir(out, &s.name);
        for loss in &s.losses {
            for &seed in &s.seeds {
                let lname = loss.name();
                if done.contains(&(s.name.clone(), lname.to_string(), seed)) {
                    on_event(SweepEvent::Skipped { setting: &s.name, loss: lname, seed });
                    continue;
                }
                ensure_corpus(&cdir, &s.corpus)?;
                on_event(SweepEvent::Started { setting: &s.name, loss: lname, seed });
                let cfg = TrainConfig { loss: *loss, seed, ..s.train.clone() };
                let rdir = run_dir(out, &s.name, lname, seed);
                train(&cfg, &s.model, &cdir, &rdir, &mut |r| on_event(SweepEvent::Progress(r)))?;
                let report = evaluate(&rdir, &cdir, "test")?;
                write_atomic(&rdir.join("test_scores.csv"), report.to_csv().as_bytes())?;
                let r = &s.corpus.reorder;
                let row = ResultRow {
                    setting: s.name.clone(),
                    group: s.group.clone(),
                    probs: [r.p_lo, r.p_so1, r.p_so2, r.p_op],
                    loss: lname.to_string(),
                    seed,
                    accuracy: report.corpus_accuracy,
                    length_ratio: report.length_ratio,
                };
                on_event(SweepEvent::Finished(&row));
                rows.push(row);
                write_atomic(&results_path, results_csv(&rows).as_bytes())?;
            }
        }
    }
    Ok(rows)
}
