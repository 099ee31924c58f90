//! Integer vocabularies per part of speech and the source-to-target word mapping.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use super::tree::{PosTag, SyntaxTree};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::rng::{stream, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Source,
    Target,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Source => "source",
            Side::Target => "target",
        }
    }
}

/// Inclusive id range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IdRange {
    pub lo: u32,
    pub hi: u32,
}

impl IdRange {
    pub fn new(lo: u32, hi: u32) -> Result<Self> {
        if lo > hi {
            return Err(Error::Config(format!("empty id range {lo}-{hi}")));
        }
        Ok(IdRange { lo, hi })
    }

    pub fn len(&self) -> u32 {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, id: u32) -> bool {
        (self.lo..=self.hi).contains(&id)
    }

    pub fn overlaps(&self, other: &IdRange) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        rng.random_range(self.lo..=self.hi)
    }
}

impl fmt::Display for IdRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

impl std::str::FromStr for IdRange {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::parse("id range", format!("expected lo-hi, got {s:?}"));
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        IdRange::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)
    }
}

/// Id ranges for every terminal tag on both sides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabSpec {
    source: BTreeMap<PosTag, IdRange>,
    target: BTreeMap<PosTag, IdRange>,
}

impl VocabSpec {
    pub fn new(
        source: BTreeMap<PosTag, IdRange>,
        target: BTreeMap<PosTag, IdRange>,
    ) -> Result<Self> {
        let spec = VocabSpec { source, target };
        spec.validate()?;
        Ok(spec)
    }

    /// Full-size ranges: 5000 nouns, 5000 verbs, 2500 adjectives, 2500
    /// adverbs and 3 determiners per side, source ids starting at 1.
    pub fn full() -> Self {
        Self::scaled(1).expect("full-size vocabulary is valid")
    }

    /// Same layout with every open-class range divided by `divisor`.
    /// Determiners always keep three ids.
    pub fn scaled(divisor: u32) -> Result<Self> {
        if divisor == 0 {
            return Err(Error::Config("vocab scale divisor must be positive".into()));
        }
        let size = |tag: PosTag| -> Result<u32> {
            let full = match tag {
                PosTag::N | PosTag::V => 5000,
                PosTag::Jj | PosTag::Rb => 2500,
                PosTag::Dt => return Ok(3),
                _ => unreachable!(),
            };
            let n = full / divisor;
            if n == 0 {
                return Err(Error::Config(format!("vocab scale {divisor} empties the {tag} range")));
            }
            Ok(n)
        };
        let mut next = 1u32;
        let mut sides = [BTreeMap::new(), BTreeMap::new()];
        for side in sides.iter_mut() {
            for tag in PosTag::TERMINALS {
                let n = size(tag)?;
                side.insert(tag, IdRange { lo: next, hi: next + n - 1 });
                next += n;
            }
        }
        let [source, target] = sides;
        Self::new(source, target)
    }

    fn side(&self, side: Side) -> &BTreeMap<PosTag, IdRange> {
        match side {
            Side::Source => &self.source,
            Side::Target => &self.target,
        }
    }

    pub fn range(&self, side: Side, tag: PosTag) -> Result<IdRange> {
        self.side(side)
            .get(&tag)
            .copied()
            .ok_or_else(|| Error::Config(format!("no {} range for {tag}", side.name())))
    }

    pub fn tag_of(&self, side: Side, id: u32) -> Option<PosTag> {
        self.side(side).iter().find(|(_, r)| r.contains(id)).map(|(t, _)| *t)
    }

    /// Smallest and largest id used on a side.
    pub fn bounds(&self, side: Side) -> (u32, u32) {
        let r = self.side(side);
        let lo = r.values().map(|r| r.lo).min().unwrap_or(0);
        let hi = r.values().map(|r| r.hi).max().unwrap_or(0);
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        for side in [Side::Source, Side::Target] {
            let ranges: Vec<(&PosTag, &IdRange)> = self.side(side).iter().collect();
            for (i, (ta, a)) in ranges.iter().enumerate() {
                if !ta.is_terminal() {
                    return Err(Error::Config(format!("range given for nonterminal {ta}")));
                }
                for (tb, b) in &ranges[i + 1..] {
                    if a.overlaps(b) {
                        return Err(Error::Config(format!(
                            "{} ranges for {ta} and {tb} overlap",
                            side.name()
                        )));
                    }
                }
            }
        }
        for (tag, s) in &self.source {
            if let Some(t) = self.target.get(tag) {
                if t.len() != s.len() {
                    return Err(Error::Config(format!(
                        "{tag}: source range has {} ids, target has {}",
                        s.len(),
                        t.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        for side in [Side::Source, Side::Target] {
            for (tag, r) in self.side(side) {
                kv.set(&format!("vocab.{}.{}", side.name(), tag), r);
            }
        }
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut sides = [BTreeMap::new(), BTreeMap::new()];
        for (i, side) in [Side::Source, Side::Target].into_iter().enumerate() {
            for tag in PosTag::TERMINALS {
                let key = format!("vocab.{}.{}", side.name(), tag);
                if let Some(r) = kv.parse_opt::<IdRange>(&key)? {
                    sides[i].insert(tag, r);
                }
            }
        }
        let [source, target] = sides;
        Self::new(source, target)
    }
}

/// Assign each terminal a uniformly drawn id from its tag's range on `side`.
pub fn lexicalize(
    tree: &SyntaxTree,
    spec: &VocabSpec,
    side: Side,
    rng: &mut impl Rng,
) -> Result<SyntaxTree> {
    if tree.is_terminal() {
        let range = spec.range(side, tree.tag)?;
        return Ok(SyntaxTree { tag: tree.tag, children: Vec::new(), token: Some(range.sample(rng)) });
    }
    let children =
        tree.children.iter().map(|c| lexicalize(c, spec, side, rng)).collect::<Result<_>>()?;
    Ok(SyntaxTree { tag: tree.tag, children, token: None })
}

/// Per-tag bijection from source ids onto target ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordMapping {
    spec: VocabSpec,
    /// `perm[tag][s - src.lo]` is the offset of the image inside the target range.
    perm: BTreeMap<PosTag, Vec<u32>>,
}

impl WordMapping {
    pub fn spec(&self) -> &VocabSpec {
        &self.spec
    }

    pub fn map(&self, src: u32) -> Result<u32> {
        let tag = self
            .spec
            .tag_of(Side::Source, src)
            .ok_or_else(|| Error::Data(format!("token {src} is outside every source range")))?;
        let s = self.spec.range(Side::Source, tag)?;
        let t = self.spec.range(Side::Target, tag)?;
        Ok(t.lo + self.perm[&tag][(src - s.lo) as usize])
    }

    pub fn inverse(&self, tgt: u32) -> Result<u32> {
        let tag = self
            .spec
            .tag_of(Side::Target, tgt)
            .ok_or_else(|| Error::Data(format!("token {tgt} is outside every target range")))?;
        let s = self.spec.range(Side::Source, tag)?;
        let t = self.spec.range(Side::Target, tag)?;
        let offset = tgt - t.lo;
        let pos = self.perm[&tag].iter().position(|&o| o == offset).expect("bijection");
        Ok(s.lo + pos as u32)
    }

    /// TSV lines `src_id<TAB>tgt_id`, ascending by source id.
    pub fn to_tsv(&self) -> String {
        let mut pairs = Vec::new();
        for (tag, offsets) in &self.perm {
            let s = self.spec.range(Side::Source, *tag).expect("mapped tag has a source range");
            let t = self.spec.range(Side::Target, *tag).expect("mapped tag has a target range");
            pairs.extend(offsets.iter().enumerate().map(|(i, off)| (s.lo + i as u32, t.lo + off)));
        }
        pairs.sort_unstable();
        pairs.iter().map(|(a, b)| format!("{a}\t{b}\n")).collect()
    }

    pub fn from_tsv(spec: VocabSpec, text: &str) -> Result<Self> {
        let mut perm: BTreeMap<PosTag, Vec<Option<u32>>> = BTreeMap::new();
        for tag in PosTag::TERMINALS {
            if let Ok(s) = spec.range(Side::Source, tag) {
                perm.insert(tag, vec![None; s.len() as usize]);
            }
        }
        for (lineno, line) in text.lines().enumerate() {
            let bad = || Error::parse("mapping", format!("line {}: {line:?}", lineno + 1));
            let (a, b) = line.split_once('\t').ok_or_else(bad)?;
            let (src, tgt): (u32, u32) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
            let tag = spec.tag_of(Side::Source, src).ok_or_else(bad)?;
            if spec.tag_of(Side::Target, tgt) != Some(tag) {
                return Err(bad());
            }
            let s = spec.range(Side::Source, tag)?;
            let t = spec.range(Side::Target, tag)?;
            perm.get_mut(&tag).ok_or_else(bad)?[(src - s.lo) as usize] = Some(tgt - t.lo);
        }
        let mut out = BTreeMap::new();
        for (tag, p) in perm {
            let p: Vec<u32> = p
                .into_iter()
                .collect::<Option<_>>()
                .ok_or_else(|| Error::parse("mapping", format!("{tag} mapping is not total")))?;
            let mut seen = vec![false; p.len()];
            for &o in &p {
                if std::mem::replace(&mut seen[o as usize], true) {
                    return Err(Error::parse("mapping", format!("{tag} mapping is not injective")));
                }
            }
            out.insert(tag, p);
        }
        Ok(WordMapping { spec, perm: out })
    }
}

/// Uniformly random per-tag bijection, a pure function of `(spec, seed)`.
pub fn build_mapping(spec: &VocabSpec, seed: u64) -> Result<WordMapping> {
    spec.validate()?;
    let mut perm = BTreeMap::new();
    for (i, tag) in PosTag::TERMINALS.into_iter().enumerate() {
        let s = spec.range(Side::Source, tag)?;
        let t = spec.range(Side::Target, tag)?;
        if s.len() != t.len() {
            return Err(Error::Config(format!("{tag}: range cardinalities differ")));
        }
        let mut offsets: Vec<u32> = (0..t.len()).collect();
        offsets.shuffle(&mut stream(seed, Purpose::Mapping, i as u64));
        perm.insert(tag, offsets);
    }
    Ok(WordMapping { spec: spec.clone(), perm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tree::{generate_tree, GenConfig};

    #[test]
    fn full_layout_matches_published_ranges() {
        let v = VocabSpec::full();
        let r = |side, tag| v.range(side, tag).unwrap().to_string();
        assert_eq!(r(Side::Source, PosTag::N), "1-5000");
        assert_eq!(r(Side::Source, PosTag::V), "5001-10000");
        assert_eq!(r(Side::Source, PosTag::Jj), "10001-12500");
        assert_eq!(r(Side::Source, PosTag::Rb), "12501-15000");
        assert_eq!(r(Side::Source, PosTag::Dt), "15001-15003");
        assert_eq!(r(Side::Target, PosTag::N), "15004-20003");
        assert_eq!(r(Side::Target, PosTag::V), "20004-25003");
        assert_eq!(r(Side::Target, PosTag::Jj), "25004-27503");
        assert_eq!(r(Side::Target, PosTag::Rb), "27504-30003");
        assert_eq!(r(Side::Target, PosTag::Dt), "30004-30006");
    }

    #[test]
    fn scaled_layout_is_contiguous() {
        let v = VocabSpec::scaled(100).unwrap();
        assert_eq!(v.bounds(Side::Source), (1, 153));
        assert_eq!(v.bounds(Side::Target), (154, 306));
        assert!(VocabSpec::scaled(10_000).is_err());
    }

    #[test]
    fn overlapping_or_unequal_ranges_rejected() {
        let mut s = BTreeMap::new();
        s.insert(PosTag::N, IdRange::new(1, 10).unwrap());
        s.insert(PosTag::V, IdRange::new(5, 12).unwrap());
        assert!(VocabSpec::new(s, BTreeMap::new()).is_err());

        let mut s = BTreeMap::new();
        s.insert(PosTag::N, IdRange::new(1, 10).unwrap());
        let mut t = BTreeMap::new();
        t.insert(PosTag::N, IdRange::new(11, 30).unwrap());
        assert!(VocabSpec::new(s, t).is_err());
    }

    #[test]
    fn lexicalize_dt_uses_determiner_ids() {
        let v = VocabSpec::full();
        let tree = SyntaxTree::node(
            PosTag::Sen,
            vec![
                SyntaxTree::node(PosTag::Np, vec![SyntaxTree::leaf(PosTag::Dt), SyntaxTree::leaf(PosTag::N)]),
                SyntaxTree::node(PosTag::Vp, vec![SyntaxTree::leaf(PosTag::V)]),
            ],
        );
        for i in 0..100 {
            let lex = lexicalize(&tree, &v, Side::Source, &mut stream(1, Purpose::Sentence, i)).unwrap();
            let toks = lex.tokens().unwrap();
            assert!((15001..=15003).contains(&toks[0]));
            assert!((1..=5000).contains(&toks[1]));
            assert!((5001..=10000).contains(&toks[2]));
        }
    }

    #[test]
    fn single_id_range_always_chosen() {
        let mut s = BTreeMap::new();
        s.insert(PosTag::N, IdRange::new(42, 42).unwrap());
        let v = VocabSpec::new(s, BTreeMap::new()).unwrap();
        let leaf = SyntaxTree::leaf(PosTag::N);
        for i in 0..20 {
            let lex = lexicalize(&leaf, &v, Side::Source, &mut stream(2, Purpose::Sentence, i)).unwrap();
            assert_eq!(lex.token, Some(42));
        }
    }

    #[test]
    fn missing_range_is_config_error() {
        let mut s = BTreeMap::new();
        s.insert(PosTag::N, IdRange::new(1, 5).unwrap());
        let v = VocabSpec::new(s, BTreeMap::new()).unwrap();
        let t = generate_tree(&mut stream(0, Purpose::Sentence, 0), &GenConfig::default());
        assert!(matches!(
            lexicalize(&t, &v, Side::Source, &mut stream(0, Purpose::Sentence, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn noun_ids_are_uniform_by_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let v = VocabSpec::full();
        let leaf = SyntaxTree::leaf(PosTag::N);
        let mut counts = vec![0u32; 5000];
        let mut rng = stream(9, Purpose::Sentence, 0);
        let draws = 10_000;
        for _ in 0..draws {
            let lex = lexicalize(&leaf, &v, Side::Source, &mut rng).unwrap();
            counts[(lex.token.unwrap() - 1) as usize] += 1;
        }
        let expected = draws as f64 / 5000.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let critical = ChiSquared::new(4999.0).unwrap().inverse_cdf(0.99);
        assert!(stat < critical, "chi2={stat} critical={critical}");
    }

    #[test]
    fn mapping_is_deterministic_bijection() {
        let v = VocabSpec::full();
        let a = build_mapping(&v, 17).unwrap();
        assert_eq!(a, build_mapping(&v, 17).unwrap());
        assert_ne!(a, build_mapping(&v, 18).unwrap());
        let mut dts: Vec<u32> = (15001..=15003).map(|s| a.map(s).unwrap()).collect();
        dts.sort();
        assert_eq!(dts, vec![30004, 30005, 30006]);
        for tgt in [15004, 20003, 22222, 27504, 30006] {
            assert_eq!(a.map(a.inverse(tgt).unwrap()).unwrap(), tgt);
        }
        assert!(a.map(0).is_err());
        assert!(a.map(15004).is_err());
    }

    #[test]
    fn mapping_tsv_round_trip() {
        let v = VocabSpec::scaled(100).unwrap();
        let m = build_mapping(&v, 3).unwrap();
        let tsv = m.to_tsv();
        assert_eq!(tsv.lines().count(), 153);
        assert!(tsv.starts_with("1\t"));
        assert_eq!(WordMapping::from_tsv(v.clone(), &tsv).unwrap(), m);
        assert!(WordMapping::from_tsv(v, "1\t1\n").is_err());
    }

    #[test]
    fn vocab_kv_round_trip() {
        let v = VocabSpec::scaled(50).unwrap();
        let mut kv = KeyValues::new("t");
        v.write_kv(&mut kv);
        assert_eq!(VocabSpec::from_kv(&kv).unwrap(), v);
    }
}
