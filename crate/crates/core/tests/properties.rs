use natlab::corpus::{build_mapping, generate_pair, CorpusConfig, ReorderConfig, Side};
use natlab::losses::{axe_loss, coco_loss, ctc_loss, ctc_min_length, moaxe_loss, oaxe_loss, xe_loss, LogProbMatrix, LossOutput};
use natlab::metrics::{corpus_accuracy, lcs_length, sentence_accuracy};
use natlab::report::median;
use proptest::prelude::*;

fn tokens(max_len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 0..max_len)
}

/// Logits for an `m x v` matrix plus a target of length `n` over the first `v - 1` ids.
fn instance(max_m: usize, max_n: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<usize>)> {
    (1..=max_n, 3usize..=5).prop_flat_map(move |(n, v)| {
        (n..=max_m.max(n)).prop_flat_map(move |m| {
            (
                Just(m),
                Just(v),
                prop::collection::vec(-4.0f64..4.0, m * v),
                prop::collection::vec(0..v - 1, n),
            )
        })
    })
}

fn check_output(out: &LossOutput) -> Result<(), TestCaseError> {
    prop_assert!(out.value >= -1e-12, "negative loss {}", out.value);
    for s in out.row_sums() {
        prop_assert!(s.abs() < 1e-9, "row sum {s}");
    }
    Ok(())
}

proptest! {
    #[test]
    fn lcs_is_symmetric_and_bounded(a in tokens(12), b in tokens(12)) {
        let l = lcs_length(&a, &b);
        prop_assert_eq!(l, lcs_length(&b, &a));
        prop_assert!(l <= a.len().min(b.len()));
        prop_assert_eq!(lcs_length(&a, &a), a.len());
    }

    #[test]
    fn lcs_of_concatenation_is_superadditive(a in tokens(8), b in tokens(8), c in tokens(8)) {
        let ab: Vec<u8> = a.iter().chain(&b).copied().collect();
        prop_assert!(lcs_length(&ab, &c) >= lcs_length(&a, &c).max(lcs_length(&b, &c)));
    }

    #[test]
    fn accuracy_in_unit_interval(a in tokens(10), b in prop::collection::vec(0u8..4, 1..10)) {
        let acc = sentence_accuracy(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert_eq!(acc == 1.0, lcs_length(&a, &b) == b.len());
    }

    #[test]
    fn corpus_accuracy_is_order_insensitive(pairs in prop::collection::vec((tokens(6), prop::collection::vec(0u8..4, 1..6)), 1..8)) {
        let fwd = corpus_accuracy(&pairs).unwrap().corpus_accuracy;
        let mut rev = pairs.clone();
        rev.reverse();
        prop_assert!((fwd - corpus_accuracy(&rev).unwrap().corpus_accuracy).abs() < 1e-12);
    }

    #[test]
    fn aligned_losses_never_exceed_xe((m, v, logits, target) in instance(5, 5)) {
        prop_assume!(m == target.len());
        let lp = LogProbMatrix::from_logits(m, v, &logits).unwrap();
        let xe = xe_loss(&lp, &target).unwrap();
        let oaxe = oaxe_loss(&lp, &target).unwrap();
        let axe = axe_loss(&lp, &target, v - 1).unwrap();
        check_output(&xe)?;
        check_output(&oaxe)?;
        check_output(&axe)?;
        prop_assert!(oaxe.value <= xe.value + 1e-12);
        prop_assert!(axe.value <= xe.value + 1e-12);
    }

    #[test]
    fn long_output_losses_are_well_formed((m, v, logits, target) in instance(8, 4), lambda in 0.0f64..=1.0) {
        let lp = LogProbMatrix::from_logits(m, v, &logits).unwrap();
        check_output(&axe_loss(&lp, &target, v - 1).unwrap())?;
        check_output(&moaxe_loss(&lp, &target).unwrap())?;
        if ctc_min_length(&target) <= m {
            check_output(&ctc_loss(&lp, &target, v - 1).unwrap())?;
            check_output(&coco_loss(&lp, &target, v - 1, lambda).unwrap())?;
        }
    }

    #[test]
    fn median_lies_within_range(xs in prop::collection::vec(-10.0f64..10.0, 1..9)) {
        let med = median(&xs);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= med && med <= hi);
    }

    #[test]
    fn reordering_without_optional_words_permutes_tags(p_lo in 0.0f64..=1.0, p_so1 in 0.0f64..=0.5, p_so2 in 0.0f64..=0.5, seed in 0u64..1000) {
        let cfg = CorpusConfig { reorder: ReorderConfig { p_lo, p_so1, p_so2, p_op: 0.0 }, vocab_scale: 100, seed, ..CorpusConfig::default() };
        let vocab = cfg.vocab().unwrap();
        let mapping = build_mapping(&vocab, seed).unwrap();
        for i in 0..5 {
            let g = generate_pair(&cfg, &vocab, &mapping, i).unwrap();
            let mut src: Vec<u32> = g.pair.source.iter().map(|&t| mapping.map(t).unwrap()).collect();
            let mut tgt = g.pair.target.clone();
            src.sort_unstable();
            tgt.sort_unstable();
            prop_assert_eq!(src, tgt);
            prop_assert!(g.pair.target.iter().all(|&t| vocab.tag_of(Side::Target, t).is_some()));
        }
    }
}
