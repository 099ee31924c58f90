//! Synthetic parallel corpora with controllable syntactic multi-modality.
//!
//! A source tree is drawn from three phrase-structure rules, lexicalized with
//! integer word ids, reordered according to a [`ReorderConfig`], and finally
//! translated token by token through a random per-tag bijection.

pub mod reorder;
pub mod tree;
pub mod vocab;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub use reorder::{reorder, reorder_traced, translate, ReorderConfig, ReorderLog, VpOrder};
pub use tree::{generate_tree, GenConfig, PosTag, SyntaxTree};
pub use vocab::{build_mapping, lexicalize, IdRange, Side, VocabSpec, WordMapping};

use crate::error::{Error, Result};
use crate::kv::{write_atomic, KeyValues};
use crate::rng::{stream, Purpose};

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const MAPPING_FILE: &str = "mapping.tsv";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

/// Everything needed to regenerate a corpus bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub gen: GenConfig,
    pub reorder: ReorderConfig,
    /// Divisor applied to the open-class vocabulary ranges (1 = full size).
    pub vocab_scale: u32,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_train: 300_000,
            n_valid: 5_000,
            n_test: 5_000,
            gen: GenConfig::default(),
            reorder: ReorderConfig::default(),
            vocab_scale: 1,
            seed: 1,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_valid == 0 || self.n_test == 0 {
            return Err(Error::Config("every split needs at least one sentence".into()));
        }
        self.gen.validate()?;
        self.reorder.validate()?;
        VocabSpec::scaled(self.vocab_scale).map(|_| ())
    }

    pub fn vocab(&self) -> Result<VocabSpec> {
        VocabSpec::scaled(self.vocab_scale)
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        [self.n_train, self.n_valid, self.n_test]
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new("corpus manifest");
        kv.set("n_train", self.n_train);
        kv.set("n_valid", self.n_valid);
        kv.set("n_test", self.n_test);
        kv.set("p_dt", self.gen.p_dt);
        kv.set("p_np_in_vp", self.gen.p_np_in_vp);
        kv.set("star_continue", self.gen.star_continue);
        kv.set("star_cap", self.gen.star_cap);
        kv.set("p_lo", self.reorder.p_lo);
        kv.set("p_so1", self.reorder.p_so1);
        kv.set("p_so2", self.reorder.p_so2);
        kv.set("p_op", self.reorder.p_op);
        kv.set("vocab_scale", self.vocab_scale);
        kv.set("seed", self.seed);
        kv
    }

    /// Missing keys fall back to defaults.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = CorpusConfig::default();
        let cfg = CorpusConfig {
            n_train: kv.parse_or("n_train", d.n_train)?,
            n_valid: kv.parse_or("n_valid", d.n_valid)?,
            n_test: kv.parse_or("n_test", d.n_test)?,
            gen: GenConfig {
                p_dt: kv.parse_or("p_dt", d.gen.p_dt)?,
                p_np_in_vp: kv.parse_or("p_np_in_vp", d.gen.p_np_in_vp)?,
                star_continue: kv.parse_or("star_continue", d.gen.star_continue)?,
                star_cap: kv.parse_or("star_cap", d.gen.star_cap)?,
            },
            reorder: ReorderConfig {
                p_lo: kv.parse_or("p_lo", d.reorder.p_lo)?,
                p_so1: kv.parse_or("p_so1", d.reorder.p_so1)?,
                p_so2: kv.parse_or("p_so2", d.reorder.p_so2)?,
                p_op: kv.parse_or("p_op", d.reorder.p_op)?,
            },
            vocab_scale: kv.parse_or("vocab_scale", d.vocab_scale)?,
            seed: kv.parse_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One sentence pair together with the trees and choices that produced it.
#[derive(Clone, Debug)]
pub struct GeneratedPair {
    pub source_tree: SyntaxTree,
    pub target_tree: SyntaxTree,
    pub log: ReorderLog,
    pub pair: SentencePair,
}

/// Generate sentence `index` of the corpus. Each index owns an independent
/// random stream, so pairs can be produced in any order or in parallel.
pub fn generate_pair(
    cfg: &CorpusConfig,
    vocab: &VocabSpec,
    mapping: &WordMapping,
    index: u64,
) -> Result<GeneratedPair> {
    let mut rng = stream(cfg.seed, Purpose::Sentence, index);
    let skeleton = generate_tree(&mut rng, &cfg.gen);
    let source_tree = lexicalize(&skeleton, vocab, Side::Source, &mut rng)?;
    let (target_tree, log) = reorder_traced(&source_tree, &cfg.reorder, &mut rng);
    let target = translate(&target_tree, mapping, &mut rng)?;
    let source = source_tree.tokens()?;
    Ok(GeneratedPair { source_tree, target_tree, log, pair: SentencePair { source, target } })
}

pub fn format_line(tokens: &[u32]) -> String {
    let mut s = String::with_capacity(tokens.len() * 6);
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{t}");
    }
    s
}

pub fn parse_line(line: &str) -> Result<Vec<u32>> {
    line.split_ascii_whitespace()
        .map(|t| t.parse::<u32>().map_err(|_| Error::parse("corpus line", format!("bad token {t:?}"))))
        .collect()
}

#[derive(Clone, Debug)]
pub struct CorpusSummary {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Write `<split>.src`, `<split>.tgt`, the mapping TSV and the manifest.
pub fn generate_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<CorpusSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let vocab = cfg.vocab()?;
    let mapping = build_mapping(&vocab, cfg.seed)?;
    let mut files = Vec::new();
    let mut index = 0u64;
    for (split, n) in SPLITS.iter().zip(cfg.split_sizes()) {
        let mut src = String::new();
        let mut tgt = String::new();
        for _ in 0..n {
            let g = generate_pair(cfg, &vocab, &mapping, index)?;
            index += 1;
            src.push_str(&format_line(&g.pair.source));
            src.push('\n');
            tgt.push_str(&format_line(&g.pair.target));
            tgt.push('\n');
        }
        for (ext, body) in [("src", &src), ("tgt", &tgt)] {
            let path = out_dir.join(format!("{split}.{ext}"));
            write_atomic(&path, body.as_bytes())?;
            files.push(path);
        }
    }
    let map_path = out_dir.join(MAPPING_FILE);
    write_atomic(&map_path, mapping.to_tsv().as_bytes())?;
    files.push(map_path);

    let mut manifest = cfg.to_kv();
    vocab.write_kv(&mut manifest);
    let man_path = out_dir.join(MANIFEST_FILE);
    manifest.write(&man_path)?;
    files.push(man_path);
    Ok(CorpusSummary { dir: out_dir.to_path_buf(), files })
}

/// A corpus directory on disk.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub dir: PathBuf,
    pub config: CorpusConfig,
    pub vocab: VocabSpec,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Self> {
        let kv = KeyValues::read(&dir.join(MANIFEST_FILE))?;
        let config = CorpusConfig::from_kv(&kv)?;
        let vocab = VocabSpec::from_kv(&kv)?;
        Ok(Corpus { dir: dir.to_path_buf(), config, vocab })
    }

    pub fn mapping(&self) -> Result<WordMapping> {
        let path = self.dir.join(MAPPING_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        WordMapping::from_tsv(self.vocab.clone(), &text)
    }

    /// Read a split and check every token against the vocabulary.
    pub fn split(&self, name: &str) -> Result<Vec<SentencePair>> {
        let read = |ext: &str| -> Result<Vec<Vec<u32>>> {
            let path = self.dir.join(format!("{name}.{ext}"));
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            text.lines().map(parse_line).collect()
        };
        let src = read("src")?;
        let tgt = read("tgt")?;
        if src.len() != tgt.len() {
            return Err(Error::Data(format!(
                "{name}: {} source lines but {} target lines",
                src.len(),
                tgt.len()
            )));
        }
        let pairs: Vec<SentencePair> =
            src.into_iter().zip(tgt).map(|(source, target)| SentencePair { source, target }).collect();
        for (i, p) in pairs.iter().enumerate() {
            let ok_src = p.source.iter().all(|&t| self.vocab.tag_of(Side::Source, t).is_some());
            let ok_tgt = p.target.iter().all(|&t| self.vocab.tag_of(Side::Target, t).is_some());
            if !ok_src || !ok_tgt || p.source.len() < 2 || p.target.len() < 2 {
                return Err(Error::Data(format!("{name} line {}: tokens outside vocabulary", i + 1)));
            }
        }
        Ok(pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> CorpusConfig {
        CorpusConfig { n_train: 10, n_valid: 3, n_test: 4, vocab_scale: 100, seed, ..Default::default() }
    }

    #[test]
    fn writes_expected_files_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        generate_corpus(&small(1), dir.path()).unwrap();
        let c = Corpus::open(dir.path()).unwrap();
        assert_eq!(c.split("train").unwrap().len(), 10);
        assert_eq!(c.split("valid").unwrap().len(), 3);
        assert_eq!(c.split("test").unwrap().len(), 4);
        let text = fs::read_to_string(dir.path().join("train.src")).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(text.ends_with('\n') && !text.contains('\r'));
        assert_eq!(c.config, small(1));
    }

    #[test]
    fn default_probabilities_give_monotone_targets() {
        let dir = tempfile::tempdir().unwrap();
        generate_corpus(&small(2), dir.path()).unwrap();
        let c = Corpus::open(dir.path()).unwrap();
        let m = c.mapping().unwrap();
        for split in SPLITS {
            for p in c.split(split).unwrap() {
                let mapped: Vec<u32> = p.source.iter().map(|&s| m.map(s).unwrap()).collect();
                assert_eq!(mapped, p.target);
            }
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig { reorder: ReorderConfig { p_lo: 0.5, p_op: 0.3, ..Default::default() }, ..small(9) };
        generate_corpus(&cfg, a.path()).unwrap();
        generate_corpus(&cfg, b.path()).unwrap();
        for f in ["train.src", "train.tgt", "valid.tgt", "test.src", "mapping.tsv", "manifest.txt"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn zero_sized_split_rejected() {
        let cfg = CorpusConfig { n_valid: 0, ..small(1) };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unwritable_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let r = generate_corpus(&small(1), &blocker.join("sub"));
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn line_format_round_trip() {
        assert_eq!(format_line(&[1, 22, 333]), "1 22 333");
        assert_eq!(parse_line("1 22 333").unwrap(), vec![1, 22, 333]);
        assert!(parse_line("1 x").is_err());
    }
}
