mod common;

use common::{edit_distances_to, slot_universe, to_slots};
use proptest::prelude::*;
use slm_ie::corpus::{Slot, Span};
use slm_ie::eval::*;

#[test]
fn closed_form_matches_exhaustive_edit_sequences() {
    let u = slot_universe();
    let n = u.len();
    let small: Vec<u16> = (0..1u16 << n).filter(|m| m.count_ones() <= 3).collect();
    let mut pairs = 0;
    for &r in &small {
        let dist = edit_distances_to(r, n);
        let rs = to_slots(r, &u);
        for &h in &small {
            let hs = to_slots(h, &u);
            assert_eq!(slot_errors(&rs, &hs) as u32, dist[h as usize], "R={rs:?} H={hs:?}");
            pairs += 1;
        }
    }
    assert_eq!(pairs, 299 * 299);
}

fn slot_set() -> impl Strategy<Value = Vec<Slot>> {
    prop::collection::btree_set((0u8..3, 0usize..6), 0..5).prop_map(|s| {
        s.into_iter()
            .map(|(t, l)| Slot {
                tag: ["A", "B", "C"][t as usize].into(),
                span: Span::new(l, l),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn slot_errors_is_metric_like(r in slot_set(), h in slot_set()) {
        let d = slot_errors(&r, &h);
        prop_assert_eq!(d, slot_errors(&h, &r));
        prop_assert_eq!(d == 0, r == h);
        prop_assert!(d <= r.len() + h.len());
    }

    #[test]
    fn report_totals_equal_recomputation(
        pairs in prop::collection::vec((slot_set(), slot_set(), 0u8..3, 0u8..3, any::<bool>()), 1..30)
    ) {
        let frames = ["X", "Y", "Z"];
        let refs: Vec<SemanticParse> = pairs.iter().map(|(r, _, f, _, _)| SemanticParse { frame: Some(frames[*f as usize].into()), slots: r.clone() }).collect();
        let hyps: Vec<SemanticParse> = pairs.iter().map(|(_, h, _, g, _)| SemanticParse { frame: Some(frames[*g as usize].into()), slots: h.clone() }).collect();
        let flags: Vec<bool> = pairs.iter().map(|p| p.4).collect();
        let rep = score_corpus(&refs, &hyps, &flags).unwrap();
        let slot_errs: usize = refs.iter().zip(&hyps).map(|(r, h)| slot_errors(&r.slots, &h.slots)).sum();
        let frame_errs = refs.iter().zip(&hyps).filter(|(r, h)| r.frame != h.frame).count();
        let ref_slots: usize = refs.iter().map(|r| r.slots.len()).sum();
        prop_assert_eq!(rep.total.slot_errors, slot_errs);
        prop_assert_eq!(rep.total.frame_errors, frame_errs);
        prop_assert_eq!(rep.total.reference_slots, ref_slots);
        prop_assert_eq!(rep.total.sentences, refs.len());
        prop_assert_eq!(rep.backoffs, flags.iter().filter(|b| **b).count());
        let bin_sum: usize = rep.bins.values().map(|b| b.slot_errors).sum();
        let bin_sents: usize = rep.bins.values().map(|b| b.sentences).sum();
        prop_assert_eq!(bin_sum, slot_errs);
        prop_assert_eq!(bin_sents, refs.len());
        let table = rep.to_table();
        prop_assert!(table.contains("total"));
    }
}

#[test]
fn bins_follow_slot_density() {
    assert_eq!(bin_name(1), "1");
    assert_eq!(bin_name(4), "4");
    assert_eq!(bin_name(5), "5+");
    assert_eq!(bin_name(9), "5+");
}
