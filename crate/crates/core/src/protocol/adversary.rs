//! Dolev-Yao adversary events, cut down to the terms that can matter.
//!
//! The unrestricted closure is infinite. Every rule here only produces terms
//! whose shape some honest, external or abstract guard can consume: item
//! signatures, receipt and board shares, boards over the item universe and
//! their hashes, databases of item signatures, and the pairs in between.
//! Rules that would re-derive a known term are disabled.

use std::collections::BTreeSet;
use std::sync::Arc;

use super::events::{msg, nat};
use super::state::WorldState;
use super::ProtocolConfig;
use crate::machine::{Binding, EventDef, Step};
use crate::message::{KeyId, Message};

pub const ADVERSARY_EVENTS: &[&str] = &["c_dy1", "c_dy2", "c_dy3", "c_dy4", "c_dy5", "c_dy6", "c_dy7", "c_dy8"];

/// Adversary rules that never change the abstraction and whose guards only
/// grow with the knowledge set; the explorer may apply them eagerly.
pub const SATURATED_EVENTS: &[&str] = &["c_dy1", "c_dy3", "c_dy4", "c_dy5", "c_dy6", "c_dy7", "c_dy8"];

fn is_item_in(cfg: &ProtocolConfig, m: &Message) -> bool {
    m.as_item().is_some_and(|x| cfg.items.contains(x))
}

fn is_board(cfg: &ProtocolConfig, m: &Message) -> bool {
    m.as_set().is_some_and(|s| s.iter().all(|e| is_item_in(cfg, e)))
}

fn is_board_hash(cfg: &ProtocolConfig, m: &Message) -> bool {
    matches!(m, Message::Hash(h) if is_board(cfg, h))
}

/// Bodies the adversary may pair with a period.
fn pairable(cfg: &ProtocolConfig, m: &Message) -> bool {
    is_item_in(cfg, m)
        || (!cfg.hashed_publication && is_board(cfg, m))
        || (cfg.hashed_publication && is_board_hash(cfg, m))
}

/// Signatures worth forging: item signatures and receipt shares on
/// `pair(p, item)`, board shares, and signed board hashes.
fn signable(cfg: &ProtocolConfig, key: KeyId, body: &Message) -> bool {
    let Message::Pair(p, inner) = body else { return false };
    if *p >= cfg.max_periods {
        return false;
    }
    if is_item_in(cfg, inner) {
        return true;
    }
    match key {
        KeyId::Sk(_) => cfg.hashed_publication && is_board_hash(cfg, inner),
        KeyId::SskShare(_) | KeyId::Ssk => pairable(cfg, inner),
    }
}

/// Set insertion restricted to databases (`SIG1_p` into a `SIG1_p` set) and
/// boards (item into an item set).
fn insertable(cfg: &ProtocolConfig, m: &Message, set: &Message) -> bool {
    let Some(elems) = set.as_set() else { return false };
    if is_item_in(cfg, m) {
        return is_board(cfg, set);
    }
    match m.as_signed_item() {
        Some((KeyId::Sk(_), p, x)) => cfg.items.contains(x) && elems.iter().all(|e| e.is_sig1(p)),
        _ => false,
    }
}

/// The term a rule application produces, read off the binding alone.
/// Used directly when a step is forced during trace checking.
fn derived(event: &str, b: &Binding) -> Option<Message> {
    let m = msg(b, "m");
    Some(match event {
        "c_dy1" => match msg(b, "s")? {
            Message::Key(k) => Message::sig(*k, m?.clone()),
            _ => return None,
        },
        "c_dy2" => Message::sig(KeyId::Ssk, m?.clone()),
        "c_dy3" | "c_dy5" | "c_dy7" => m?.clone(),
        "c_dy4" => {
            let mut s = msg(b, "b")?.as_set()?.clone();
            s.insert(m?.clone());
            Message::Set(Arc::new(s))
        }
        "c_dy6" => Message::pair(nat(b, "p")?, m?.clone()),
        "c_dy8" => Message::hash(m?.clone()),
        _ => return None,
    })
}

/// Rule preconditions plus the relevance bound.
fn applicable(cfg: &ProtocolConfig, w: &WorldState, event: &str, b: &Binding) -> bool {
    let Some(m) = msg(b, "m") else { return false };
    match event {
        "c_dy1" => match msg(b, "s") {
            Some(s @ Message::Key(k)) => w.knows(s) && w.knows(m) && signable(cfg, *k, m),
            _ => false,
        },
        "c_dy2" => w.share_signers(m).len() >= cfg.threshold(),
        "c_dy3" => match msg(b, "s") {
            Some(Message::Key(k)) => w.knows(&Message::sig(*k, m.clone())),
            _ => false,
        },
        "c_dy4" => msg(b, "b").is_some_and(|set| w.knows(set) && w.knows(m) && insertable(cfg, m, set)),
        "c_dy5" => msg(b, "b").is_some_and(|set| w.knows(set) && set.as_set().is_some_and(|s| s.contains(m))),
        "c_dy6" => nat(b, "p").is_some_and(|p| p < cfg.max_periods) && w.knows(m) && pairable(cfg, m),
        "c_dy7" => nat(b, "p").is_some_and(|p| w.knows(&Message::pair(p, m.clone()))),
        "c_dy8" => cfg.hashed_publication && w.knows(m) && is_board(cfg, m),
        _ => false,
    }
}

/// Candidate bindings for one rule in state `w`, before the guard.
fn candidates(cfg: &ProtocolConfig, w: &WorldState, event: &str) -> Vec<Binding> {
    let e = &w.knowledge;
    let mut v = Vec::new();
    match event {
        "c_dy1" => {
            let keys: Vec<&Message> = e.iter().filter(|m| matches!(m, Message::Key(_))).collect();
            for body in e.iter().filter(|m| matches!(m, Message::Pair(..))) {
                for key in &keys {
                    v.push(Binding::new().msg("s", (*key).clone()).msg("m", body.clone()));
                }
            }
        }
        "c_dy2" => {
            for (body, signers) in w.shares_by_body() {
                if signers.len() >= cfg.threshold() {
                    v.push(Binding::new().msg("m", body.clone()));
                }
            }
        }
        "c_dy3" => {
            for m in e.iter() {
                if let Message::Sig(k, body) = m {
                    v.push(Binding::new().msg("s", Message::Key(*k)).msg("m", (**body).clone()));
                }
            }
        }
        "c_dy4" => {
            let sets: Vec<&Message> = e.iter().filter(|m| m.as_set().is_some()).collect();
            for m in e.iter().filter(|m| is_item_in(cfg, m) || m.as_signed_item().is_some()) {
                for set in &sets {
                    if insertable(cfg, m, set) {
                        v.push(Binding::new().msg("m", m.clone()).msg("b", (*set).clone()));
                    }
                }
            }
        }
        "c_dy5" => {
            for set in e.iter() {
                if let Some(s) = set.as_set() {
                    for m in s.iter() {
                        v.push(Binding::new().msg("m", m.clone()).msg("b", set.clone()));
                    }
                }
            }
        }
        "c_dy6" => {
            for m in e.iter().filter(|m| pairable(cfg, m)) {
                for p in 0..cfg.max_periods {
                    v.push(Binding::new().msg("m", m.clone()).nat("p", p));
                }
            }
        }
        "c_dy7" => {
            for m in e.iter() {
                if let Message::Pair(p, body) = m {
                    v.push(Binding::new().msg("m", (**body).clone()).nat("p", *p));
                }
            }
        }
        "c_dy8" => {
            if cfg.hashed_publication {
                for m in e.iter().filter(|m| is_board(cfg, m)) {
                    v.push(Binding::new().msg("m", m.clone()));
                }
            }
        }
        _ => {}
    }
    v
}

fn params(event: &str) -> &'static [&'static str] {
    match event {
        "c_dy1" | "c_dy3" => &["s", "m"],
        "c_dy4" | "c_dy5" => &["m", "b"],
        "c_dy6" | "c_dy7" => &["m", "p"],
        _ => &["m"],
    }
}

pub(crate) fn adversary_events(c: &Arc<ProtocolConfig>) -> Vec<EventDef<WorldState>> {
    ADVERSARY_EVENTS
        .iter()
        .filter(|ev| c.hashed_publication || **ev != "c_dy8")
        .map(|&ev| {
            let (c1, c2) = (c.clone(), c.clone());
            EventDef::new(
                ev,
                params(ev),
                move |w: &WorldState| candidates(&c1, w, ev),
                move |w, b| applicable(&c2, w, ev, b) && derived(ev, b).is_some_and(|r| !w.knows(&r)),
                move |w, b| Some(w.learn(derived(ev, b)?)),
            )
        })
        .collect()
}

/// New terms derivable with one application of any rule whose result
/// satisfies `shape`.
pub fn adversary_synthesizable(
    cfg: &ProtocolConfig,
    w: &WorldState,
    shape: impl Fn(&Message) -> bool,
) -> BTreeSet<Message> {
    let mut out = BTreeSet::new();
    for ev in ADVERSARY_EVENTS {
        for b in candidates(cfg, w, ev) {
            if applicable(cfg, w, ev, &b) {
                if let Some(r) = derived(ev, &b) {
                    if !w.knows(&r) && shape(&r) {
                        out.insert(r);
                    }
                }
            }
        }
    }
    out
}

/// Closes the knowledge under [`SATURATED_EVENTS`], returning the closed
/// state and the steps applied, in a deterministic order.
pub fn saturate(cfg: &ProtocolConfig, w: &WorldState) -> (WorldState, Vec<Step>) {
    let mut cur = w.clone();
    let mut steps = Vec::new();
    loop {
        let mut fresh: Vec<(Step, Message)> = Vec::new();
        let mut seen = BTreeSet::new();
        for ev in SATURATED_EVENTS {
            if *ev == "c_dy8" && !cfg.hashed_publication {
                continue;
            }
            let mut bs = candidates(cfg, &cur, ev);
            bs.sort();
            for b in bs {
                if !applicable(cfg, &cur, ev, &b) {
                    continue;
                }
                let Some(r) = derived(ev, &b) else { continue };
                if cur.knows(&r) || !seen.insert(r.clone()) {
                    continue;
                }
                fresh.push((Step::new(*ev, b), r));
            }
        }
        if fresh.is_empty() {
            return (cur, steps);
        }
        let (new_steps, terms): (Vec<Step>, Vec<Message>) = fresh.into_iter().unzip();
        cur = cur.learn_all(terms);
        steps.extend(new_steps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::ItemId;
    use crate::protocol::bbprot_machine;
    use crate::protocol::events::is_sig1_set;

    fn x() -> ItemId {
        ItemId::new("x").unwrap()
    }

    #[test]
    fn forging_with_a_corrupt_share() {
        let cfg = ProtocolConfig::new(4, 3);
        let w = WorldState::initial(&cfg).learn(Message::pair(0, Message::item(&x())));
        let got = adversary_synthesizable(&cfg, &w, |m| matches!(m, Message::Sig(KeyId::SskShare(_), _)));
        assert_eq!(got.into_iter().collect::<Vec<_>>(), vec![Message::signed_item(KeyId::SskShare(4), 0, &x())]);
        // honest keys are never available
        let honest = adversary_synthesizable(&cfg, &w, |m| matches!(m, Message::Sig(KeyId::Sk(1), _)));
        assert!(honest.is_empty());
    }

    #[test]
    fn combining_needs_threshold() {
        let cfg = ProtocolConfig::new(4, 3);
        let w = WorldState::initial(&cfg).learn_all([
            Message::signed_item(KeyId::SskShare(1), 0, &x()),
            Message::signed_item(KeyId::SskShare(4), 0, &x()),
        ]);
        let ssk = |m: &Message| matches!(m, Message::Sig(KeyId::Ssk, _));
        assert!(adversary_synthesizable(&cfg, &w, ssk).is_empty());
        let w3 = w.learn(Message::signed_item(KeyId::SskShare(2), 0, &x()));
        assert_eq!(adversary_synthesizable(&cfg, &w3, ssk).len(), 1);
    }

    #[test]
    fn empty_knowledge_derives_nothing() {
        let cfg = ProtocolConfig::new(3, 3);
        let w = WorldState::initial(&cfg);
        assert!(w.knowledge.is_empty());
        assert!(adversary_synthesizable(&cfg, &w, |_| true).is_empty());
    }

    #[test]
    fn saturation_is_a_fixpoint_and_replays() {
        let cfg = ProtocolConfig::new(4, 3).with_hashed_publication(true);
        let m = bbprot_machine(&cfg);
        let w = m.step(&m.init(), "post", &Binding::new().msg("x", Message::item(&x()))).unwrap();
        let (sat, steps) = saturate(&cfg, &w);
        assert!(sat.knows(&Message::signed_item(KeyId::Sk(4), 0, &x())));
        assert!(sat.knows(&Message::signed_item(KeyId::SskShare(4), 0, &x())));
        let (again, more) = saturate(&cfg, &sat);
        assert!(more.is_empty());
        assert_eq!(again, sat);
        let mut cur = w;
        for st in &steps {
            cur = m.step(&cur, &st.event, &st.binding).unwrap();
        }
        assert_eq!(cur, sat);
    }

    #[test]
    fn databases_and_boards_only() {
        let cfg = ProtocolConfig::new(4, 3);
        let s1 = Message::signed_item(KeyId::Sk(1), 0, &x());
        let db = Message::set([s1.clone()]);
        assert!(insertable(&cfg, &Message::signed_item(KeyId::Sk(4), 0, &x()), &db));
        assert!(!insertable(&cfg, &Message::signed_item(KeyId::Sk(4), 1, &x()), &db));
        assert!(!insertable(&cfg, &Message::item(&x()), &db));
        assert!(insertable(&cfg, &Message::item(&x()), &Message::set([])));
        assert!(!insertable(&cfg, &Message::Key(KeyId::Sk(4)), &Message::set([])));
        assert!(is_sig1_set(&cfg, &db, 0));
    }
}
