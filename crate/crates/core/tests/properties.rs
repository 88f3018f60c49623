use std::collections::BTreeSet;
use std::rc::Rc;

use dialrec_core::autodiff::Tape;
use dialrec_core::corpus::{cohen_kappa, mask_and_truncate, Department, Dialogue, NormalizationMap, Speaker};
use dialrec_core::metrics::{classify_error, ddi_rate, jaccard, prefix_len, sample_f1, DdiGraph};
use dialrec_core::model::{bce_loss, predict_set};
use dialrec_core::qa_graph::{build_qa_graph, segment_blocks};
use dialrec_core::Matrix;
use proptest::prelude::*;

fn speakers(max: usize) -> impl Strategy<Value = Vec<Speaker>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { Speaker::Patient } else { Speaker::Doctor }), 1..max)
}

fn small_set() -> impl Strategy<Value = BTreeSet<u8>> {
    prop::collection::btree_set(0u8..6, 0..6)
}

proptest! {
    #[test]
    fn blocks_partition_and_alternate(s in speakers(60)) {
        let blocks = segment_blocks(&s).unwrap();
        prop_assert_eq!(blocks.first().unwrap().range.start, 0);
        prop_assert_eq!(blocks.last().unwrap().range.end, s.len());
        for w in blocks.windows(2) {
            prop_assert_eq!(w[0].range.end, w[1].range.start);
            prop_assert_ne!(w[0].speaker, w[1].speaker);
        }
        for b in &blocks {
            prop_assert!(!b.is_empty());
            prop_assert!(s[b.range.clone()].iter().all(|&x| x == b.speaker));
        }
    }

    #[test]
    fn qa_graph_invariants(s in speakers(60), self_loops in prop::bool::ANY) {
        let g = build_qa_graph(&s, self_loops).unwrap();
        let adj = g.adjacency();
        let n = s.len();
        for i in 0..n {
            prop_assert_eq!(adj[i][i], self_loops);
            for j in 0..n {
                prop_assert_eq!(adj[i][j], adj[j][i]);
            }
            if i + 1 < n {
                prop_assert!(adj[i][i + 1], "consecutive utterances must be linked");
            }
        }
        prop_assert!(g.is_connected());
        let blocks = segment_blocks(&s).unwrap();
        for (b, block) in blocks.iter().enumerate() {
            let lo = b.saturating_sub(1);
            let hi = (b + 1).min(blocks.len() - 1);
            let reach: usize = blocks[lo..=hi].iter().map(|x| x.len()).sum();
            for i in block.range.clone() {
                prop_assert_eq!(g.degree(i), reach - usize::from(!self_loops));
            }
        }
    }

    #[test]
    fn metric_bounds_and_relation(p in small_set(), t in small_set()) {
        let j = jaccard(&p, &t);
        let f = sample_f1(&p, &t);
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert!(j <= f + 1e-12);
        prop_assert!((f - 2.0 * j / (1.0 + j)).abs() < 1e-12);
        prop_assert_eq!(j, jaccard(&t, &p));
        if !t.is_empty() {
            prop_assert_eq!(classify_error(&p, &t).unwrap().label() == "correct", p == t);
        }
    }

    #[test]
    fn threshold_is_monotone(probs in prop::collection::vec(0.0f64..=1.0, 1..20), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(predict_set(&probs, hi).is_subset(&predict_set(&probs, lo)));
    }

    #[test]
    fn segment_softmax_sums_to_one(
        logits in prop::collection::vec(-1e3f64..1e3, 1..40),
        cuts in prop::collection::vec(prop::bool::ANY, 40),
    ) {
        let mut seg = Vec::with_capacity(logits.len());
        let mut s = 0;
        for i in 0..logits.len() {
            if i > 0 && cuts[i] {
                s += 1;
            }
            seg.push(s);
        }
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::col_vector(logits));
        let y = tape.segment_softmax(x, Rc::from(seg.clone()));
        let mut sums = vec![0.0; s + 1];
        for (e, &g) in seg.iter().enumerate() {
            let v = tape.value(y).as_slice()[e];
            prop_assert!(v.is_finite() && v >= 0.0);
            sums[g] += v;
        }
        for total in sums {
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kappa_is_symmetric(pairs in prop::collection::vec((0u8..4, 0u8..4), 1..40)) {
        let a: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let ab = cohen_kappa(&a, &b).unwrap();
        let ba = cohen_kappa(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
        prop_assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn normalization_is_idempotent(aliases in prop::collection::btree_map("[a-z]{1,6}", 0usize..4, 0..12), probe in "[a-z]{1,6}") {
        let mut map = NormalizationMap::new();
        for (alias, c) in &aliases {
            let canonical = format!("med{c}");
            map.insert(alias, &canonical).unwrap();
        }
        for name in aliases.keys().map(String::as_str).chain([probe.as_str()]) {
            let once = map.normalize(name);
            prop_assert_eq!(map.normalize(once), once);
        }
    }

    #[test]
    fn masking_removes_every_mention(words in prop::collection::vec(prop::sample::select(vec!["pain", "cough", "aspirin", "ibuprofen", "asp", "take"]), 1..12)) {
        let mut map = NormalizationMap::new();
        map.insert("aspirin", "aspirin").unwrap();
        map.insert("ibuprofen", "ibuprofen").unwrap();
        let doctor = format!("{} aspirin", words.join(" "));
        let raw = Dialogue::new(
            "m",
            Department::Respiratory,
            "cold",
            ["aspirin".to_string()],
            [(Speaker::Patient, words.join(" ")), (Speaker::Doctor, doctor), (Speaker::Patient, "thanks".to_string())],
        );
        let masked = mask_and_truncate(&raw, &map).unwrap();
        prop_assert_eq!(masked.utterances.len(), 2);
        for u in &masked.utterances {
            prop_assert!(map.find_mentions(&u.text).is_empty());
        }
        prop_assert!(masked.medications.contains("aspirin"));
        prop_assert!(masked.medications.iter().all(|m| map.is_canonical(m)));
    }

    #[test]
    fn ddi_rate_is_a_fraction(sets in prop::collection::vec(prop::collection::btree_set("[a-d]", 0..4), 0..8)) {
        let mut ddi = DdiGraph::new();
        ddi.insert("a", "b").unwrap();
        ddi.insert("c", "d").unwrap();
        let r = ddi_rate(&sets, &ddi);
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn prefix_len_is_monotone(len in 1usize..80, a in 1.0f64..=100.0, b in 1.0f64..=100.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(prefix_len(len, lo) <= prefix_len(len, hi));
        prop_assert!(prefix_len(len, lo) >= 1);
        prop_assert_eq!(prefix_len(len, 100.0), len);
    }

    #[test]
    fn bce_is_finite_at_saturation(targets in prop::collection::vec(prop::bool::ANY, 1..10), flip in prop::bool::ANY) {
        let t: Vec<f64> = targets.iter().map(|&b| f64::from(u8::from(b))).collect();
        let p: Vec<f64> = t.iter().map(|&x| if flip { 1.0 - x } else { x }).collect();
        let loss = bce_loss(&[p], &[t]).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
    }
}
