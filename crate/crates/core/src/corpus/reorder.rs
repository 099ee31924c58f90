//! Target-side word reordering and word translation.

use rand::Rng;

use super::tree::{PosTag, SyntaxTree};
use super::vocab::{Side, WordMapping};
use crate::error::{Error, Result};

/// Probabilities controlling syntactic multi-modality of the target side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReorderConfig {
    /// Sen keeps the NP VP order.
    pub p_lo: f64,
    /// VP keeps the source V NP RB order.
    pub p_so1: f64,
    /// VP becomes V RB NP.
    pub p_so2: f64,
    /// Each NP's determiner existence is flipped.
    pub p_op: f64,
}

impl Default for ReorderConfig {
    fn default() -> Self {
        ReorderConfig { p_lo: 1.0, p_so1: 1.0, p_so2: 0.0, p_op: 0.0 }
    }
}

impl ReorderConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in
            [("p_lo", self.p_lo), ("p_so1", self.p_so1), ("p_so2", self.p_so2), ("p_op", self.p_op)]
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} outside [0,1]")));
            }
        }
        if self.p_so1 + self.p_so2 > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "p_so1 + p_so2 = {} exceeds 1",
                self.p_so1 + self.p_so2
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VpOrder {
    /// V NP RB
    Source,
    /// V RB NP
    VRbNp,
    /// RB V NP
    RbVNp,
}

/// Every stochastic choice made while reordering one sentence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReorderLog {
    pub sen_swapped: bool,
    pub vp_orders: Vec<VpOrder>,
    /// One entry per NP (outer NPs before the NPs nested in them, left to right).
    pub dt_flips: Vec<bool>,
}

pub fn reorder(tree: &SyntaxTree, cfg: &ReorderConfig, rng: &mut impl Rng) -> SyntaxTree {
    reorder_traced(tree, cfg, rng).0
}

/// Reorder and record each choice. DTs switched on are inserted without a
/// token; [`translate`] lexicalizes them on the target side.
pub fn reorder_traced(
    tree: &SyntaxTree,
    cfg: &ReorderConfig,
    rng: &mut impl Rng,
) -> (SyntaxTree, ReorderLog) {
    let mut log = ReorderLog::default();
    let out = visit(tree, cfg, rng, &mut log);
    (out, log)
}

fn visit(node: &SyntaxTree, cfg: &ReorderConfig, rng: &mut impl Rng, log: &mut ReorderLog) -> SyntaxTree {
    if node.is_terminal() {
        return node.clone();
    }
    let u: f64 = rng.random();
    let children: Vec<SyntaxTree> = match node.tag {
        PosTag::Sen => {
            let mut kids = node.children.clone();
            if u >= cfg.p_lo {
                kids.reverse();
                log.sen_swapped = true;
            }
            kids
        }
        PosTag::Vp => {
            let order = if u < cfg.p_so1 {
                VpOrder::Source
            } else if u < cfg.p_so1 + cfg.p_so2 {
                VpOrder::VRbNp
            } else {
                VpOrder::RbVNp
            };
            log.vp_orders.push(order);
            reorder_vp(&node.children, order)
        }
        PosTag::Np => {
            let flip = u < cfg.p_op;
            log.dt_flips.push(flip);
            let mut kids = node.children.clone();
            if flip {
                if kids.first().map(|c| c.tag) == Some(PosTag::Dt) {
                    kids.remove(0);
                } else {
                    kids.insert(0, SyntaxTree::leaf(PosTag::Dt));
                }
            }
            kids
        }
        _ => node.children.clone(),
    };
    let children = children.iter().map(|c| visit(c, cfg, rng, log)).collect();
    SyntaxTree { tag: node.tag, children, token: None }
}

/// The RB group moves as one block.
fn reorder_vp(children: &[SyntaxTree], order: VpOrder) -> Vec<SyntaxTree> {
    let pick = |tag| children.iter().filter(move |c| c.tag == tag).cloned();
    let v = pick(PosTag::V);
    let np = pick(PosTag::Np);
    let rb = pick(PosTag::Rb);
    match order {
        VpOrder::Source => v.chain(np).chain(rb).collect(),
        VpOrder::VRbNp => v.chain(rb).chain(np).collect(),
        VpOrder::RbVNp => rb.chain(v).chain(np).collect(),
    }
}

/// Replace every source token by its image; token-less DTs draw a target determiner.
pub fn translate(tree: &SyntaxTree, mapping: &WordMapping, rng: &mut impl Rng) -> Result<Vec<u32>> {
    tree.leaves()
        .into_iter()
        .map(|leaf| match leaf.token {
            Some(src) => mapping.map(src),
            None if leaf.tag == PosTag::Dt => {
                Ok(mapping.spec().range(Side::Target, PosTag::Dt)?.sample(rng))
            }
            None => Err(Error::Data(format!("unlexicalized {} terminal", leaf.tag))),
        })
        .collect()
}
