mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use slt_core::corpus::{group_by_tagsequence, lexicon_tagger, split_utterances, ClassId, ClassStore, Edit, SegmentRef, SplitConfig};

fn store() -> ClassStore {
    let g = common::grammar();
    let raw: Vec<String> = common::lines("corpus.txt").into_iter().take(80).collect();
    let tagger = lexicon_tagger(&g);
    group_by_tagsequence(split_utterances(&raw, &SplitConfig::default(), &tagger))
}

fn owners(s: &ClassStore) -> BTreeMap<SegmentRef, ClassId> {
    s.classes.iter().flat_map(|c| c.members.iter().map(move |m| (*m, c.id))).collect()
}

/// Turns raw picks into a concrete edit against the current store.
fn make_edit(s: &ClassStore, pick: (u8, usize, usize, usize)) -> Edit {
    let (kind, a, b, c) = pick;
    let cls = |i: usize| &s.classes[i % s.classes.len()];
    let member = |i: usize, j: usize| {
        let m = &cls(i).members;
        m[j % m.len()]
    };
    match kind % 5 {
        0 => Edit::Move { member: member(a, b), to: cls(c).id },
        1 => {
            let src = cls(a);
            let k = 1 + b % src.members.len();
            Edit::Split { class: src.id, members: src.members.iter().skip(c % src.members.len()).take(k).copied().collect() }
        }
        2 => Edit::Merge { classes: vec![cls(a).id, cls(b).id, cls(c).id] },
        3 => Edit::Designate { class: cls(a).id, member: member(a, b) },
        _ => Edit::Move { member: member(a, b), to: ClassId(1_000_000 + c as u64) },
    }
}

/// Independent model: segment ownership after an edit, or None when it must fail.
fn expected(before: &BTreeMap<SegmentRef, ClassId>, e: &Edit, fresh: ClassId) -> Option<BTreeMap<SegmentRef, ClassId>> {
    let exists = |c: &ClassId| before.values().any(|v| v == c);
    let mut m = before.clone();
    match e {
        Edit::Move { member, to } => {
            if !exists(to) {
                return None;
            }
            m.insert(*member, *to);
        }
        Edit::Split { class, members } => {
            for x in members {
                if before.get(x) != Some(class) {
                    return None;
                }
                m.insert(*x, fresh);
            }
        }
        Edit::Merge { classes } => {
            for v in m.values_mut() {
                if classes.contains(v) {
                    *v = classes[0];
                }
            }
        }
        Edit::Designate { class, member } => {
            if before.get(member) != Some(class) {
                return None;
            }
        }
    }
    Some(m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edits_keep_a_partition(picks in prop::collection::vec((any::<u8>(), any::<usize>(), any::<usize>(), any::<usize>()), 1..25)) {
        let mut s = store();
        prop_assert!(s.check_partition().is_ok());
        let total = s.segment_count();
        for pick in picks {
            let e = make_edit(&s, pick);
            let before = owners(&s);
            let fresh = ClassId(s.classes.iter().map(|c| c.id.0).max().unwrap_or(0) + 1);
            let snapshot = s.clone();
            match (s.regroup(std::slice::from_ref(&e)), expected(&before, &e, fresh)) {
                (Ok(()), Some(want)) => {
                    let got = owners(&s);
                    // fresh ids are allocated by the store, so compare the grouping only
                    let norm = |m: &BTreeMap<SegmentRef, ClassId>| {
                        let mut groups: BTreeMap<ClassId, Vec<SegmentRef>> = BTreeMap::new();
                        for (k, v) in m {
                            groups.entry(*v).or_default().push(*k);
                        }
                        let mut g: Vec<Vec<SegmentRef>> = groups.into_values().collect();
                        g.sort();
                        g
                    };
                    prop_assert_eq!(norm(&got), norm(&want));
                }
                (Err(_), None) => prop_assert_eq!(&s, &snapshot),
                (got, want) => prop_assert!(false, "{e:?}: store {got:?}, model expects success={}", want.is_some()),
            }
            prop_assert!(s.check_partition().is_ok(), "{:?}", s.check_partition());
            prop_assert_eq!(owners(&s).len(), total);
        }
    }

    #[test]
    fn failing_batches_are_atomic(pick in (any::<u8>(), any::<usize>(), any::<usize>(), any::<usize>())) {
        let mut s = store();
        let snapshot = s.clone();
        let good = make_edit(&s, (2, pick.1, pick.2, pick.3));
        let bad = Edit::Merge { classes: vec![ClassId(999_999)] };
        prop_assert!(s.regroup(&[good, bad]).is_err());
        prop_assert_eq!(s, snapshot);
    }
}

#[test]
fn report_sizes_sum_to_segments() {
    let s = store();
    let r = s.report();
    assert_eq!(r.rows.iter().map(|row| row.size).sum::<usize>(), s.segment_count());
    assert!(r.rows.windows(2).all(|w| w[0].size >= w[1].size));
}
