//! Phrase-structure trees for synthetic source sentences.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PosTag {
    Sen,
    Np,
    Vp,
    Dt,
    Jj,
    Rb,
    N,
    V,
}

impl PosTag {
    /// Terminal tags in the order their vocabulary ranges are laid out.
    pub const TERMINALS: [PosTag; 5] = [PosTag::N, PosTag::V, PosTag::Jj, PosTag::Rb, PosTag::Dt];

    pub fn is_terminal(self) -> bool {
        !matches!(self, PosTag::Sen | PosTag::Np | PosTag::Vp)
    }

    pub fn name(self) -> &'static str {
        match self {
            PosTag::Sen => "Sen",
            PosTag::Np => "NP",
            PosTag::Vp => "VP",
            PosTag::Dt => "DT",
            PosTag::Jj => "JJ",
            PosTag::Rb => "RB",
            PosTag::N => "N",
            PosTag::V => "V",
        }
    }

    pub fn from_name(name: &str) -> Option<PosTag> {
        [
            PosTag::Sen,
            PosTag::Np,
            PosTag::Vp,
            PosTag::Dt,
            PosTag::Jj,
            PosTag::Rb,
            PosTag::N,
            PosTag::V,
        ]
        .into_iter()
        .find(|t| t.name() == name)
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A constituent. Terminals have no children; `token` is set once lexicalized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntaxTree {
    pub tag: PosTag,
    pub children: Vec<SyntaxTree>,
    pub token: Option<u32>,
}

impl SyntaxTree {
    pub fn leaf(tag: PosTag) -> Self {
        debug_assert!(tag.is_terminal());
        SyntaxTree { tag, children: Vec::new(), token: None }
    }

    pub fn node(tag: PosTag, children: Vec<SyntaxTree>) -> Self {
        debug_assert!(!tag.is_terminal());
        SyntaxTree { tag, children, token: None }
    }

    pub fn is_terminal(&self) -> bool {
        self.children.is_empty()
    }

    /// Terminals in left-to-right order.
    pub fn leaves(&self) -> Vec<&SyntaxTree> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a SyntaxTree>) {
        if self.is_terminal() {
            out.push(self);
        } else {
            for c in &self.children {
                c.collect_leaves(out);
            }
        }
    }

    pub fn leaf_tags(&self) -> Vec<PosTag> {
        self.leaves().iter().map(|l| l.tag).collect()
    }

    /// Tokens of a fully lexicalized tree.
    pub fn tokens(&self) -> Result<Vec<u32>> {
        self.leaves()
            .iter()
            .map(|l| l.token.ok_or_else(|| Error::Data(format!("unlexicalized {} terminal", l.tag))))
            .collect()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(SyntaxTree::depth).max().unwrap_or(0)
    }

    /// Visit every node depth-first, parents before children.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a SyntaxTree)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    /// Bracketed rendering, e.g. `(Sen (NP N:3) (VP V:5001))`.
    pub fn bracketed(&self) -> String {
        if self.is_terminal() {
            match self.token {
                Some(t) => format!("{}:{t}", self.tag),
                None => self.tag.to_string(),
            }
        } else {
            let inner: Vec<String> = self.children.iter().map(SyntaxTree::bracketed).collect();
            format!("({} {})", self.tag, inner.join(" "))
        }
    }

    /// Structural invariants of the three production rules (order-insensitive
    /// where reordering is allowed to permute constituents).
    pub fn validate(&self) -> Result<()> {
        if self.tag != PosTag::Sen {
            return Err(Error::Data(format!("root must be Sen, got {}", self.tag)));
        }
        let kids: Vec<PosTag> = self.children.iter().map(|c| c.tag).collect();
        if !(kids == [PosTag::Np, PosTag::Vp] || kids == [PosTag::Vp, PosTag::Np]) {
            return Err(Error::Data(format!("Sen children must be NP and VP, got {kids:?}")));
        }
        for c in &self.children {
            match c.tag {
                PosTag::Np => validate_np(c)?,
                _ => validate_vp(c)?,
            }
        }
        if self.depth() > 4 {
            return Err(Error::Data("tree deeper than the rules allow".into()));
        }
        Ok(())
    }
}

fn validate_np(np: &SyntaxTree) -> Result<()> {
    let tags: Vec<PosTag> = np.children.iter().map(|c| c.tag).collect();
    if tags.last() != Some(&PosTag::N) || tags.iter().filter(|&&t| t == PosTag::N).count() != 1 {
        return Err(Error::Data(format!("NP must end with exactly one N: {tags:?}")));
    }
    if tags.iter().filter(|&&t| t == PosTag::Dt).count() > 1 {
        return Err(Error::Data(format!("NP has more than one DT: {tags:?}")));
    }
    if np.children.iter().any(|c| !c.is_terminal()) {
        return Err(Error::Data("NP children must be terminals".into()));
    }
    Ok(())
}

fn validate_vp(vp: &SyntaxTree) -> Result<()> {
    let tags: Vec<PosTag> = vp.children.iter().map(|c| c.tag).collect();
    if tags.iter().filter(|&&t| t == PosTag::V).count() != 1 {
        return Err(Error::Data(format!("VP must contain exactly one V: {tags:?}")));
    }
    for c in &vp.children {
        match c.tag {
            PosTag::Np => validate_np(c)?,
            PosTag::V | PosTag::Rb => {}
            other => return Err(Error::Data(format!("unexpected {other} in VP"))),
        }
    }
    if tags.iter().filter(|&&t| t == PosTag::Np).count() > 1 {
        return Err(Error::Data("VP has more than one NP".into()));
    }
    Ok(())
}

/// Probabilities for optional and repeated constituents in source synthesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenConfig {
    /// Probability that an NP starts with a DT.
    pub p_dt: f64,
    /// Probability that a VP contains its optional object NP.
    pub p_np_in_vp: f64,
    /// Geometric continuation probability for each starred slot.
    pub star_continue: f64,
    /// Maximum repetitions of a starred slot.
    pub star_cap: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { p_dt: 0.5, p_np_in_vp: 0.8, star_continue: 0.3, star_cap: 2 }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in
            [("p_dt", self.p_dt), ("p_np_in_vp", self.p_np_in_vp), ("star_continue", self.star_continue)]
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} outside [0,1]")));
            }
        }
        if self.star_cap < 1 {
            return Err(Error::Config("star_cap must be at least 1".into()));
        }
        Ok(())
    }
}

fn bernoulli(rng: &mut impl Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

fn star_count(rng: &mut impl Rng, cfg: &GenConfig) -> u32 {
    let mut k = 0;
    while k < cfg.star_cap && bernoulli(rng, cfg.star_continue) {
        k += 1;
    }
    k
}

/// NP -> (DT) (RB)* (JJ)* N
fn generate_np(rng: &mut impl Rng, cfg: &GenConfig) -> SyntaxTree {
    let mut children = Vec::new();
    if bernoulli(rng, cfg.p_dt) {
        children.push(SyntaxTree::leaf(PosTag::Dt));
    }
    for _ in 0..star_count(rng, cfg) {
        children.push(SyntaxTree::leaf(PosTag::Rb));
    }
    for _ in 0..star_count(rng, cfg) {
        children.push(SyntaxTree::leaf(PosTag::Jj));
    }
    children.push(SyntaxTree::leaf(PosTag::N));
    SyntaxTree::node(PosTag::Np, children)
}

/// VP -> V (NP) (RB)*
fn generate_vp(rng: &mut impl Rng, cfg: &GenConfig) -> SyntaxTree {
    let mut children = vec![SyntaxTree::leaf(PosTag::V)];
    if bernoulli(rng, cfg.p_np_in_vp) {
        children.push(generate_np(rng, cfg));
    }
    for _ in 0..star_count(rng, cfg) {
        children.push(SyntaxTree::leaf(PosTag::Rb));
    }
    SyntaxTree::node(PosTag::Vp, children)
}

/// Sen -> NP VP, expanded until only terminals remain.
pub fn generate_tree(rng: &mut impl Rng, cfg: &GenConfig) -> SyntaxTree {
    let np = generate_np(rng, cfg);
    let vp = generate_vp(rng, cfg);
    SyntaxTree::node(PosTag::Sen, vec![np, vp])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn shape(t: &SyntaxTree) -> String {
        t.bracketed()
    }

    #[test]
    fn suppressed_options_give_minimal_tree() {
        let cfg = GenConfig { p_dt: 0.0, p_np_in_vp: 0.0, star_continue: 0.0, star_cap: 2 };
        for i in 0..200 {
            let t = generate_tree(&mut stream(1, Purpose::Sentence, i), &cfg);
            assert_eq!(shape(&t), "(Sen (NP N) (VP V))");
        }
    }

    #[test]
    fn generated_trees_satisfy_rules() {
        let cfg = GenConfig::default();
        for i in 0..2000 {
            let t = generate_tree(&mut stream(3, Purpose::Sentence, i), &cfg);
            t.validate().unwrap();
            assert!(t.depth() <= 4);
            assert!(t.leaves().iter().all(|l| l.tag.is_terminal()));
            let n_rb = t.leaf_tags().iter().filter(|&&x| x == PosTag::Rb).count();
            assert!(n_rb <= 3 * cfg.star_cap as usize);
        }
    }

    #[test]
    fn figure_three_tree_is_producible() {
        let want = "(Sen (NP DT RB JJ N) (VP V (NP DT JJ N) RB))";
        let cfg = GenConfig::default();
        let found = (0..50_000u64)
            .any(|i| shape(&generate_tree(&mut stream(11, Purpose::Sentence, i), &cfg)) == want);
        assert!(found);
    }

    #[test]
    fn dt_frequency_matches_configuration() {
        let cfg = GenConfig::default();
        let (mut nps, mut with_dt) = (0usize, 0usize);
        for i in 0..10_000 {
            let t = generate_tree(&mut stream(5, Purpose::Sentence, i), &cfg);
            t.walk(&mut |n| {
                if n.tag == PosTag::Np {
                    nps += 1;
                    if n.children[0].tag == PosTag::Dt {
                        with_dt += 1;
                    }
                }
            });
        }
        let frac = with_dt as f64 / nps as f64;
        assert!((frac - cfg.p_dt).abs() < 0.02, "{frac}");
    }

    #[test]
    fn config_validation() {
        assert!(GenConfig { star_cap: 0, ..Default::default() }.validate().is_err());
        assert!(GenConfig { p_dt: 1.5, ..Default::default() }.validate().is_err());
        assert!(GenConfig::default().validate().is_ok());
    }
}
