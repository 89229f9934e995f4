mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use wbb_core::message::{canonicalize, items_of, sigs_of, threshold_filter, ClashRelation, Message};

fn db_strategy() -> impl Strategy<Value = BTreeSet<Message>> {
    prop::collection::btree_set(
        (1u8..=4, 0u32..2, 0..ITEM_NAMES.len())
            .prop_map(|(k, p, i)| Message::signed_item(wbb_core::message::KeyId::Sk(k), p, &item(i))),
        0..24,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn canonical_form_is_idempotent_and_order_blind(r in raw_strategy()) {
        let m = r.build();
        let c = canonicalize(&m);
        prop_assert_eq!(&canonicalize(&c), &c);
        prop_assert_eq!(&c, &m);
        let s = r.scrambled().build();
        prop_assert_eq!(&s, &m);
        prop_assert_eq!(s.to_string(), m.to_string());
    }

    #[test]
    fn items_and_sigs_match_oracles(r in raw_strategy()) {
        let m = r.build();
        prop_assert_eq!(items_of(&m), oracle_items(&r));
        prop_assert_eq!(sigs_of(&m), oracle_sigs(&r));
    }

    #[test]
    fn printing_round_trips(r in raw_strategy()) {
        let m = r.build();
        let text = m.to_string();
        let back: Message = text.parse().unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_string(), text);
    }

    #[test]
    fn threshold_filter_matches_oracle(db in db_strategy(), t in 1usize..=4, p in 0u32..2) {
        prop_assert_eq!(threshold_filter(&db, t, Some(p)).unwrap(), oracle_threshold(&db, 4, t, p));
    }

    #[test]
    fn threshold_filter_is_monotone(small in db_strategy(), extra in db_strategy(), t in 1usize..=4, p in 0u32..2) {
        let big: BTreeSet<Message> = small.union(&extra).cloned().collect();
        let lo = threshold_filter(&small, t, Some(p)).unwrap();
        let hi = threshold_filter(&big, t, Some(p)).unwrap();
        prop_assert!(lo.is_subset(&hi));
    }

    #[test]
    fn clashset_is_symmetric_and_irreflexive(pairs in prop::collection::vec((0..ITEM_NAMES.len(), 0..ITEM_NAMES.len()), 0..6)) {
        let rel = ClashRelation::from_pairs(
            pairs.iter().filter(|(a, b)| a != b).map(|(a, b)| (item(*a), item(*b))),
        ).unwrap();
        for i in 0..ITEM_NAMES.len() {
            let x = item(i);
            prop_assert!(!rel.clashset(&x).contains(&x));
            for j in 0..ITEM_NAMES.len() {
                let y = item(j);
                prop_assert_eq!(rel.clashset(&x).contains(&y), rel.clashset(&y).contains(&x));
            }
        }
    }
}
