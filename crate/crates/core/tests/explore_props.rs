use std::sync::Arc;

use wbb_core::explore::*;
use wbb_core::machine::{replay, EventDef};
use wbb_core::protocol::{bbprot_machine, ProtocolConfig, WorldState};
use wbb_core::refinement::check_simulation;

/// Peers store their own signature without sending it.
fn silent_signer(cfg: &ProtocolConfig) -> wbb_core::machine::MachineDef<WorldState> {
    let mut m = bbprot_machine(cfg);
    let i = m.event_index("c_msg2a").unwrap();
    let orig = Arc::new(m.events.remove(i));
    let (o1, o2, o3) = (orig.clone(), orig.clone(), orig.clone());
    let ev = EventDef::new(
        orig.name,
        orig.params,
        move |w: &WorldState| o1.domain(w),
        move |w, b| o2.guard(w, b),
        move |w: &WorldState, b| {
            o3.apply_unchecked(w, b).map(|mut next| {
                next.knowledge = w.knowledge.clone();
                next
            })
        },
    );
    m.events.insert(i, ev);
    m
}

#[test]
fn mutated_database_update_is_caught() {
    let cfg = ProtocolConfig::new(4, 3);
    let model = ProtocolModel::with_machine(&cfg, silent_signer(&cfg), ProtocolOptions::full());
    let r = explore(&model, &ExploreBounds::exhaustive(6));
    let f = r.violation.expect("mutant must be caught");
    assert!(f.clause.contains("invdj2"), "{}", f.clause);
    // the unmutated machine rejects the trace only at the mutated step or later
    assert!(f.trace.steps.iter().any(|s| s.event == "c_msg2a"));
}

#[test]
fn full_protocol_has_no_attack_at_small_depth() {
    let cfg = ProtocolConfig::new(4, 3);
    let r = search_goals(&cfg, &all_goals(&cfg), &ExploreBounds::exhaustive(12));
    assert!(r.is_ok(), "{}", r.render());
    assert!(r.render().contains("max_depth=12"));
}

#[test]
fn weak_threshold_attack_is_sound() {
    let cfg = ProtocolConfig::new(3, 3).with_threshold_override(2);
    let r = find_attack(&cfg, AttackGoal::ReceiptWithoutPublication, &ExploreBounds::exhaustive(25));
    let trace = r.trace.expect("attack exists");
    let end = replay(&bbprot_machine(&cfg), &trace).unwrap();
    assert!(AttackGoal::ReceiptWithoutPublication.holds(&cfg, &end));
    assert!(check_simulation(&cfg, &trace).violation.is_some());
    // the minimized trace is 1-minimal
    for i in 0..trace.len() {
        let mut t = trace.clone();
        t.steps.remove(i);
        for s in &mut t.steps {
            s.post = None;
        }
        let still = replay(&bbprot_machine(&cfg), &t).is_ok_and(|w| AttackGoal::ReceiptWithoutPublication.holds(&cfg, &w));
        assert!(!still, "step {i} was removable");
    }
}

#[test]
fn randomized_reports_are_reproducible() {
    let cfg = ProtocolConfig::new(4, 3).with_hashed_publication(true);
    let model = ProtocolModel::new(&cfg, ProtocolOptions::full());
    let b = ExploreBounds::randomized(20, 11, 30);
    let a = explore(&model, &b).render();
    assert_eq!(a, explore(&model, &b).render());
    assert!(a.contains("seed=11"), "{a}");
}
