//! Exhaustive reference implementations of the sequence losses and a
//! central-difference gradient checker.
//!
//! Nothing here shares code with the dynamic programs or the assignment
//! solver it checks: every oracle enumerates alignments explicitly, so it is
//! exponential and only usable on tiny instances.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::losses::{
    axe_loss, coco_loss, ctc_loss, ctc_min_length, log_sum_exp, moaxe_loss, moaxe_stage1, oaxe_loss, xe_loss,
    LogProbMatrix, LossOutput,
};
use crate::rng::{stream, Purpose};

/// Limits on exhaustive enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleBudget {
    pub max_m: usize,
    pub max_n: usize,
    pub max_vocab: usize,
    /// Cap on the number of enumerated candidates.
    pub max_states: u64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget { max_m: 8, max_n: 7, max_vocab: 8, max_states: 10_000_000 }
    }
}

impl OracleBudget {
    fn check(&self, logp: &LogProbMatrix, n: usize, states: u64) -> Result<()> {
        let (m, v) = (logp.rows(), logp.vocab());
        if m > self.max_m || n > self.max_n || v > self.max_vocab || states > self.max_states {
            return Err(Error::Budget(format!(
                "m={m} n={n} V={v} needs {states} candidates (limits m<={} n<={} V<={} states<={})",
                self.max_m, self.max_n, self.max_vocab, self.max_states
            )));
        }
        Ok(())
    }
}

fn saturating_pow(base: u64, exp: usize) -> u64 {
    (0..exp).fold(1u64, |acc, _| acc.saturating_mul(base))
}

/// Collapse a label path: merge consecutive repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for (k, &t) in path.iter().enumerate() {
        if t != blank && (k == 0 || path[k - 1] != t) {
            out.push(t);
        }
    }
    out
}

/// `-log` of the summed probability of all `V^m` label paths collapsing to `target`;
/// `+inf` when none does.
pub fn brute_ctc(logp: &LogProbMatrix, target: &[usize], blank: usize, budget: &OracleBudget) -> Result<f64> {
    let (m, v) = (logp.rows(), logp.vocab());
    budget.check(logp, target.len(), saturating_pow(v as u64, m))?;
    let mut path = vec![0usize; m];
    let mut terms = Vec::new();
    loop {
        if collapse(&path, blank) == target {
            terms.push(path.iter().enumerate().map(|(k, &t)| logp.get(k, t)).sum::<f64>());
        }
        // odometer increment
        let mut k = 0;
        while k < m {
            path[k] += 1;
            if path[k] < v {
                break;
            }
            path[k] = 0;
            k += 1;
        }
        if k == m {
            break;
        }
    }
    Ok(-log_sum_exp(&terms))
}

/// Every complete align/skip path cost of the AXE lattice.
fn axe_path_costs(logp: &LogProbMatrix, target: &[usize], epsilon: usize) -> Vec<f64> {
    fn rec(
        logp: &LogProbMatrix,
        target: &[usize],
        eps: usize,
        i: usize,
        k: usize,
        acc: f64,
        out: &mut Vec<f64>,
    ) {
        let (n, m) = (target.len(), logp.rows());
        if i == n && k == m {
            out.push(acc);
            return;
        }
        // moves are described forward from (i, k); position k+1 is 0-based row k
        if i < n && k < m {
            rec(logp, target, eps, i + 1, k + 1, acc - logp.get(k, target[i]), out);
        }
        if k < m {
            rec(logp, target, eps, i, k + 1, acc - logp.get(k, eps), out);
        }
        if i < n && k >= 1 {
            rec(logp, target, eps, i + 1, k, acc - logp.get(k - 1, target[i]), out);
        }
    }
    let mut out = Vec::new();
    rec(logp, target, epsilon, 0, 0, 0.0, &mut out);
    out
}

fn axe_path_count_bound(m: usize, n: usize) -> u64 {
    // number of lattice paths with three step kinds is below 3^(m+n)
    saturating_pow(3, m + n)
}

/// Minimum over all monotonic align/skip paths, by recursive enumeration.
pub fn brute_axe(logp: &LogProbMatrix, target: &[usize], epsilon: usize, budget: &OracleBudget) -> Result<f64> {
    budget.check(logp, target.len(), axe_path_count_bound(logp.rows(), target.len()))?;
    Ok(axe_path_costs(logp, target, epsilon).into_iter().fold(f64::INFINITY, f64::min))
}

/// Visit every injective map from `n` targets into `m` positions.
fn for_each_injection(n: usize, m: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(n: usize, m: usize, cur: &mut Vec<usize>, used: &mut [bool], f: &mut impl FnMut(&[usize])) {
        if cur.len() == n {
            f(cur);
            return;
        }
        for k in 0..m {
            if !used[k] {
                used[k] = true;
                cur.push(k);
                rec(n, m, cur, used, f);
                cur.pop();
                used[k] = false;
            }
        }
    }
    rec(n, m, &mut Vec::with_capacity(n), &mut vec![false; m], f);
}

fn injection_count(n: usize, m: usize) -> u64 {
    (0..n).fold(1u64, |acc, i| acc.saturating_mul((m - i) as u64))
}

/// Best and second-best cost of an injective target-to-position alignment, and the best alignment.
pub fn brute_oaxe_ranked(
    logp: &LogProbMatrix,
    target: &[usize],
    budget: &OracleBudget,
) -> Result<(f64, f64, Vec<usize>)> {
    let (n, m) = (target.len(), logp.rows());
    if n > m {
        return Err(Error::Shape(format!("{n} targets cannot be matched to {m} positions")));
    }
    budget.check(logp, n, injection_count(n, m))?;
    let (mut best, mut second, mut arg) = (f64::INFINITY, f64::INFINITY, Vec::new());
    for_each_injection(n, m, &mut |alpha| {
        let c: f64 = alpha.iter().enumerate().map(|(i, &k)| -logp.get(k, target[i])).sum();
        if c < best {
            second = best;
            best = c;
            arg = alpha.to_vec();
        } else if c < second {
            second = c;
        }
    });
    Ok((best, second, arg))
}

/// Exact minimum of the assignment objective by enumeration (`n!` for square inputs).
pub fn brute_oaxe(logp: &LogProbMatrix, target: &[usize], budget: &OracleBudget) -> Result<f64> {
    brute_oaxe_ranked(logp, target, budget).map(|(best, _, _)| best)
}

fn is_span_consistent(beta: &[usize], alpha: &[usize]) -> bool {
    for (i, &anchor) in alpha.iter().enumerate() {
        if beta[anchor] != i {
            return false;
        }
        let positions: Vec<usize> = (0..beta.len()).filter(|&k| beta[k] == i).collect();
        let (lo, hi) = (positions[0], *positions.last().unwrap());
        if hi - lo + 1 != positions.len() {
            return false;
        }
    }
    true
}

/// Best and second-best cross entropy over every total labelling that keeps
/// the anchors and gives each target a contiguous block of positions.
pub fn brute_moaxe_stage2_ranked(
    logp: &LogProbMatrix,
    target: &[usize],
    alpha: &[usize],
    budget: &OracleBudget,
) -> Result<(f64, f64)> {
    let (n, m) = (target.len(), logp.rows());
    if alpha.len() != n || alpha.iter().any(|&k| k >= m) {
        return Err(Error::Shape("anchors do not fit the instance".into()));
    }
    let free: Vec<usize> = (0..m).filter(|k| !alpha.contains(k)).collect();
    budget.check(logp, n, saturating_pow(n as u64, free.len()))?;
    let mut beta = vec![0usize; m];
    for (i, &k) in alpha.iter().enumerate() {
        beta[k] = i;
    }
    let (mut best, mut second) = (f64::INFINITY, f64::INFINITY);
    let mut digits = vec![0usize; free.len()];
    loop {
        for (d, &k) in digits.iter().zip(&free) {
            beta[k] = *d;
        }
        if is_span_consistent(&beta, alpha) {
            let c: f64 = beta.iter().enumerate().map(|(k, &i)| -logp.get(k, target[i])).sum();
            if c < best {
                second = best;
                best = c;
            } else if c < second {
                second = c;
            }
        }
        let mut j = 0;
        while j < digits.len() {
            digits[j] += 1;
            if digits[j] < n {
                break;
            }
            digits[j] = 0;
            j += 1;
        }
        if j == digits.len() {
            break;
        }
    }
    Ok((best, second))
}

pub fn brute_moaxe_stage2(
    logp: &LogProbMatrix,
    target: &[usize],
    alpha: &[usize],
    budget: &OracleBudget,
) -> Result<f64> {
    brute_moaxe_stage2_ranked(logp, target, alpha, budget).map(|(b, _)| b)
}

/// Central-difference gradient of `loss(log_softmax(logits))` with respect to the logits.
pub fn finite_diff_grad(
    loss: &dyn Fn(&LogProbMatrix) -> Result<f64>,
    rows: usize,
    vocab: usize,
    logits: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step {h} must be positive")));
    }
    let mut x = logits.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let orig = x[j];
        x[j] = orig + h;
        let plus = loss(&LogProbMatrix::from_logits(rows, vocab, &x)?)?;
        x[j] = orig - h;
        let minus = loss(&LogProbMatrix::from_logits(rows, vocab, &x)?)?;
        x[j] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// `|a - b| / max(|a|, |b|)`, with a floor on the denominator.
pub fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// `||a - b||_2 / max(||a||_2, ||b||_2, floor)`.
pub fn relative_error_vec(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}

/// A small random loss instance. The last vocabulary id is reserved (blank or
/// epsilon); targets use the others.
#[derive(Clone, Debug)]
pub struct Instance {
    pub logits: Vec<f64>,
    pub logp: LogProbMatrix,
    pub target: Vec<usize>,
}

impl Instance {
    pub fn reserved(&self) -> usize {
        self.logp.vocab() - 1
    }
}

/// Logits i.i.d. standard normal, normalized by log-softmax.
pub fn random_instance(rng: &mut impl Rng, m: usize, n: usize, vocab: usize) -> Instance {
    let logits: Vec<f64> = (0..m * vocab).map(|_| rng.sample(StandardNormal)).collect();
    let logp = LogProbMatrix::from_logits(m, vocab, &logits).expect("valid shape");
    let target = (0..n).map(|_| rng.random_range(0..vocab - 1)).collect();
    Instance { logits, logp, target }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteKind {
    Ctc,
    Axe,
    Oaxe,
    Moaxe,
}

impl SuiteKind {
    pub const ALL: [SuiteKind; 4] = [SuiteKind::Ctc, SuiteKind::Axe, SuiteKind::Oaxe, SuiteKind::Moaxe];

    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::Ctc => "ctc",
            SuiteKind::Axe => "axe",
            SuiteKind::Oaxe => "oaxe",
            SuiteKind::Moaxe => "moaxe",
        }
    }
}

/// Outcome of one verification suite.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub suite: String,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    /// Largest absolute gradient row sum seen (gradient suites only).
    pub max_row_sum: f64,
    pub passed: bool,
}

pub fn suites_csv(results: &[SuiteResult]) -> String {
    let mut s = String::from("suite,instances,max_deviation,tolerance,max_row_sum,passed\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{:e},{:e},{:e},{}",
            r.suite, r.instances, r.max_deviation, r.tolerance, r.max_row_sum, r.passed
        );
    }
    s
}

/// Sizes for the randomized suites.
#[derive(Clone, Copy, Debug)]
pub struct SuiteConfig {
    pub seed: u64,
    pub instances: usize,
    pub max_m: usize,
    pub max_n: usize,
    pub max_vocab: usize,
    pub tolerance: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { seed: 2022, instances: 1000, max_m: 7, max_n: 3, max_vocab: 4, tolerance: 1e-9 }
    }
}

/// Implementation-versus-oracle value agreement on random small instances.
pub fn equivalence_suite(kind: SuiteKind, cfg: &SuiteConfig) -> Result<SuiteResult> {
    let budget = OracleBudget::default();
    let mut rng = stream(cfg.seed, Purpose::Oracle, kind as u64);
    let mut worst = 0.0f64;
    for _ in 0..cfg.instances {
        let n = rng.random_range(1..=cfg.max_n);
        let vocab = rng.random_range(2..=cfg.max_vocab);
        let target: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab - 1)).collect();
        let min_m = if kind == SuiteKind::Ctc { ctc_min_length(&target) } else { n };
        let m = match kind {
            SuiteKind::Oaxe => n,
            SuiteKind::Ctc | SuiteKind::Axe | SuiteKind::Moaxe => rng.random_range(min_m..=cfg.max_m.max(min_m)),
        };
        let mut inst = random_instance(&mut rng, m, n, vocab);
        inst.target = target;
        let (got, want) = match kind {
            SuiteKind::Ctc => (
                ctc_loss(&inst.logp, &inst.target, inst.reserved())?.value,
                brute_ctc(&inst.logp, &inst.target, inst.reserved(), &budget)?,
            ),
            SuiteKind::Axe => (
                axe_loss(&inst.logp, &inst.target, inst.reserved())?.value,
                brute_axe(&inst.logp, &inst.target, inst.reserved(), &budget)?,
            ),
            SuiteKind::Oaxe => {
                (oaxe_loss(&inst.logp, &inst.target)?.value, brute_oaxe(&inst.logp, &inst.target, &budget)?)
            }
            SuiteKind::Moaxe => {
                let (_, _, alpha) = brute_oaxe_ranked(&inst.logp, &inst.target, &budget)?;
                (
                    moaxe_loss(&inst.logp, &inst.target)?.value,
                    brute_moaxe_stage2(&inst.logp, &inst.target, &alpha, &budget)?,
                )
            }
        };
        worst = worst.max(relative_error(got, want));
    }
    Ok(SuiteResult {
        suite: format!("oracle-{}", kind.name()),
        instances: cfg.instances,
        max_deviation: worst,
        tolerance: cfg.tolerance,
        max_row_sum: 0.0,
        passed: worst < cfg.tolerance,
    })
}

pub fn all_equivalence_suites(cfg: &SuiteConfig) -> Result<Vec<SuiteResult>> {
    SuiteKind::ALL.iter().map(|&k| equivalence_suite(k, cfg)).collect()
}

/// A loss under gradient test: `(logp, target, reserved id) -> LossOutput`.
pub type LossFn = dyn Fn(&LogProbMatrix, &[usize], usize) -> Result<LossOutput>;

/// Which shapes a loss accepts, and whether its alignment is discrete.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    /// `m = n`.
    Square,
    /// `m >= n`.
    Long,
    /// `m >= ctc_min_length(target)`.
    CtcFeasible,
}

/// Gap between the best and second-best discrete alignment of an instance.
pub type MarginFn = dyn Fn(&Instance) -> Result<f64>;

/// Named loss plus the constraints its test instances must satisfy.
pub struct GradCase<'a> {
    pub name: &'a str,
    pub shape: Shape,
    pub loss: &'a LossFn,
    /// Minimum gap between the best and second-best discrete alignment for an
    /// instance to count as a unique-argmin point; `None` for smooth losses.
    pub margin: Option<&'a MarginFn>,
}

/// Analytic gradients against central differences at random points.
pub fn gradient_suite(case: &GradCase<'_>, cfg: &SuiteConfig, points: usize, h: f64, tol: f64) -> Result<SuiteResult> {
    const MIN_MARGIN: f64 = 1e-3;
    let mut rng = stream(cfg.seed, Purpose::Oracle, 100 + fnv(case.name));
    let (mut worst, mut worst_row) = (0.0f64, 0.0f64);
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < points {
        attempts += 1;
        if attempts > points * 100 {
            return Err(Error::Budget(format!("{}: too few unique-argmin instances", case.name)));
        }
        let n = rng.random_range(1..=cfg.max_n);
        let vocab = rng.random_range(2..=cfg.max_vocab);
        let m = match case.shape {
            Shape::Square => n,
            Shape::Long | Shape::CtcFeasible => rng.random_range(n..=cfg.max_m.max(n)),
        };
        let inst = random_instance(&mut rng, m, n, vocab);
        if case.shape == Shape::CtcFeasible && ctc_min_length(&inst.target) > m {
            continue;
        }
        if let Some(margin) = case.margin {
            if margin(&inst)? < MIN_MARGIN {
                continue;
            }
        }
        let reserved = inst.reserved();
        let out = (case.loss)(&inst.logp, &inst.target, reserved)?;
        let value_of = |lp: &LogProbMatrix| (case.loss)(lp, &inst.target, reserved).map(|o| o.value);
        let fd = finite_diff_grad(&value_of, m, vocab, &inst.logits, h)?;
        worst = worst.max(relative_error_vec(&out.grad, &fd, 1e-8));
        worst_row = out.row_sums().iter().fold(worst_row, |acc, s| acc.max(s.abs()));
        accepted += 1;
    }
    Ok(SuiteResult {
        suite: format!("grad-{}", case.name),
        instances: points,
        max_deviation: worst,
        tolerance: tol,
        max_row_sum: worst_row,
        passed: worst < tol && worst_row < 1e-8,
    })
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Gap between the best and second-best AXE path.
pub fn axe_margin(inst: &Instance) -> Result<f64> {
    let mut costs = axe_path_costs(&inst.logp, &inst.target, inst.reserved());
    costs.sort_by(f64::total_cmp);
    Ok(costs.get(1).copied().unwrap_or(f64::INFINITY) - costs[0])
}

pub fn oaxe_margin(inst: &Instance) -> Result<f64> {
    let (best, second, _) = brute_oaxe_ranked(&inst.logp, &inst.target, &OracleBudget::default())?;
    Ok(second - best)
}

/// Smallest of the stage-1 and stage-2 gaps.
pub fn moaxe_margin(inst: &Instance) -> Result<f64> {
    let budget = OracleBudget::default();
    let (b1, s1, alpha) = brute_oaxe_ranked(&inst.logp, &inst.target, &budget)?;
    let (b2, s2) = brute_moaxe_stage2_ranked(&inst.logp, &inst.target, &alpha, &budget)?;
    Ok((s1 - b1).min(s2 - b2))
}

/// Weight of CTC in the CoCO gradient suite.
pub const GRAD_SUITE_LAMBDA: f64 = 0.1;

/// Deliberate defects for checking that the gradient suites notice them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Negate the CTC gradient.
    CtcSign,
}

/// The six losses with their standard gradient-test settings.
pub fn all_gradient_suites(
    cfg: &SuiteConfig,
    points: usize,
    h: f64,
    tol: f64,
    fault: Option<Fault>,
) -> Result<Vec<SuiteResult>> {
    let xe = |lp: &LogProbMatrix, t: &[usize], _r: usize| xe_loss(lp, t);
    let axe = |lp: &LogProbMatrix, t: &[usize], r: usize| axe_loss(lp, t, r);
    let ctc = move |lp: &LogProbMatrix, t: &[usize], r: usize| {
        let mut out = ctc_loss(lp, t, r)?;
        if fault == Some(Fault::CtcSign) {
            out.grad.iter_mut().for_each(|g| *g = -*g);
        }
        Ok(out)
    };
    let oaxe = |lp: &LogProbMatrix, t: &[usize], _r: usize| oaxe_loss(lp, t);
    let moaxe = |lp: &LogProbMatrix, t: &[usize], _r: usize| moaxe_loss(lp, t);
    let coco = |lp: &LogProbMatrix, t: &[usize], r: usize| coco_loss(lp, t, r, GRAD_SUITE_LAMBDA);
    let cases = [
        GradCase { name: "xe", shape: Shape::Square, loss: &xe, margin: None },
        GradCase { name: "axe", shape: Shape::Long, loss: &axe, margin: Some(&axe_margin) },
        GradCase { name: "ctc", shape: Shape::CtcFeasible, loss: &ctc, margin: None },
        GradCase { name: "oaxe", shape: Shape::Square, loss: &oaxe, margin: Some(&oaxe_margin) },
        GradCase { name: "moaxe", shape: Shape::Long, loss: &moaxe, margin: Some(&moaxe_margin) },
        GradCase { name: "coco", shape: Shape::CtcFeasible, loss: &coco, margin: Some(&moaxe_margin) },
    ];
    cases.iter().map(|c| gradient_suite(c, cfg, points, h, tol)).collect()
}

/// Cross-check that stage 1 of M-OAXE finds the enumerated optimum.
pub fn moaxe_stage1_matches(inst: &Instance) -> Result<bool> {
    let (best, _, _) = brute_oaxe_ranked(&inst.logp, &inst.target, &OracleBudget::default())?;
    let alpha = moaxe_stage1(&inst.logp, &inst.target)?;
    let got: f64 = alpha.iter().enumerate().map(|(i, &k)| -inst.logp.get(k, inst.target[i])).sum();
    Ok(relative_error(got, best) < 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse_rules() {
        assert_eq!(collapse(&[0, 0, 2, 1], 2), vec![0, 1]);
        assert_eq!(collapse(&[0, 2, 0], 2), vec![0, 0]);
        assert_eq!(collapse(&[2, 2], 2), Vec::<usize>::new());
    }

    #[test]
    fn brute_ctc_hand_example() {
        let lp = LogProbMatrix::from_probs(2, 2, &[0.6, 0.4, 0.5, 0.5]).unwrap();
        let v = brute_ctc(&lp, &[0], 1, &OracleBudget::default()).unwrap();
        assert!((v + 0.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn brute_ctc_infeasible_is_infinite() {
        let lp = LogProbMatrix::from_logits(1, 3, &[0.0; 3]).unwrap();
        assert_eq!(brute_ctc(&lp, &[0, 1], 2, &OracleBudget::default()).unwrap(), f64::INFINITY);
    }

    #[test]
    fn brute_oaxe_examples() {
        let lp = LogProbMatrix::from_probs(2, 2, &[0.2, 0.8, 0.9, 0.1]).unwrap();
        let v = brute_oaxe(&lp, &[0, 1], &OracleBudget::default()).unwrap();
        assert!((v - 0.32850).abs() < 1e-5);
        let perfect = LogProbMatrix::from_probs(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(brute_oaxe(&perfect, &[0, 1], &OracleBudget::default()).unwrap(), 0.0);
    }

    #[test]
    fn brute_axe_single_cell() {
        let lp = LogProbMatrix::from_probs(1, 3, &[0.3, 0.5, 0.2]).unwrap();
        let v = brute_axe(&lp, &[1], 2, &OracleBudget::default()).unwrap();
        // align costs -ln .5; skip-prediction then skip-target costs -ln .2 - ln .5
        assert!((v + 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn stage2_oracle_square_is_anchor_cost() {
        let mut rng = stream(1, Purpose::Oracle, 0);
        let inst = random_instance(&mut rng, 3, 3, 4);
        let (best, _, alpha) = brute_oaxe_ranked(&inst.logp, &inst.target, &OracleBudget::default()).unwrap();
        let v = brute_moaxe_stage2(&inst.logp, &inst.target, &alpha, &OracleBudget::default()).unwrap();
        assert!((v - best).abs() < 1e-12);
    }

    #[test]
    fn budget_is_enforced() {
        let lp = LogProbMatrix::from_logits(8, 8, &[0.0; 64]).unwrap();
        let tight = OracleBudget { max_states: 1000, ..Default::default() };
        assert!(matches!(brute_ctc(&lp, &[0], 7, &tight), Err(Error::Budget(_))));
    }

    #[test]
    fn finite_differences_match_xe() {
        let mut rng = stream(3, Purpose::Oracle, 0);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 3, 3, 5);
            let out = xe_loss(&inst.logp, &inst.target).unwrap();
            let f = |lp: &LogProbMatrix| xe_loss(lp, &inst.target).map(|o| o.value);
            let fd = finite_diff_grad(&f, 3, 5, &inst.logits, 1e-5).unwrap();
            assert!(relative_error_vec(&out.grad, &fd, 1e-8) < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_at_confident_optimum() {
        let mut logits = vec![0.0; 6];
        logits[0] = 60.0;
        logits[4] = 60.0;
        let lp = LogProbMatrix::from_logits(2, 3, &logits).unwrap();
        let out = xe_loss(&lp, &[0, 1]).unwrap();
        assert!(out.grad.iter().all(|g| g.abs() < 1e-12));
        let f = |lp: &LogProbMatrix| xe_loss(lp, &[0, 1]).map(|o| o.value);
        let fd = finite_diff_grad(&f, 2, 3, &logits, 1e-5).unwrap();
        assert!(fd.iter().all(|g| g.abs() < 1e-9));
        assert!(finite_diff_grad(&f, 2, 3, &logits, 0.0).is_err());
    }

    #[test]
    fn sign_error_in_ctc_gradient_is_detected() {
        let broken = |lp: &LogProbMatrix, t: &[usize], r: usize| {
            let mut out = ctc_loss(lp, t, r)?;
            out.grad.iter_mut().for_each(|g| *g = -*g);
            Ok(out)
        };
        let case = GradCase { name: "ctc-mutant", shape: Shape::CtcFeasible, loss: &broken, margin: None };
        let cfg = SuiteConfig::default();
        let r = gradient_suite(&case, &cfg, 10, 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn stage1_solver_agrees_with_enumeration() {
        let mut rng = stream(8, Purpose::Oracle, 0);
        for _ in 0..200 {
            let n = rng.random_range(1..=3);
            let m = rng.random_range(n..=7);
            let inst = random_instance(&mut rng, m, n, 4);
            assert!(moaxe_stage1_matches(&inst).unwrap());
        }
    }

    #[test]
    fn csv_has_one_row_per_suite() {
        let cfg = SuiteConfig { instances: 20, ..Default::default() };
        let results = all_equivalence_suites(&cfg).unwrap();
        let csv = suites_csv(&results);
        assert_eq!(csv.lines().count(), 5);
        assert!(results.iter().all(|r| r.passed), "{csv}");
    }
}
