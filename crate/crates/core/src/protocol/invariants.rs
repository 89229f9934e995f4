use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::state::{board_body, WorldState};
use super::ProtocolConfig;
use crate::machine::Invariant;
use crate::message::{items_of, sigs_of, ItemId, KeyId, Message};

pub const INVARIANT_NAMES: &[&str] = &[
    "types", "inv4", "invdj1", "inv4a", "invdj0", "inv4b", "invdj2", "com1", "com2", "invclash1", "invclash2",
    "dy0", "dy1", "dy2",
];

/// Shares signed by honest peers, split into receipt and board shares.
struct HonestShares {
    receipts: BTreeMap<usize, BTreeSet<(u32, ItemId)>>,
    boards: BTreeMap<usize, BTreeSet<(u32, BTreeSet<ItemId>)>>,
}

fn honest_shares(cfg: &ProtocolConfig, w: &WorldState) -> HonestShares {
    let mut hs = HonestShares { receipts: BTreeMap::new(), boards: BTreeMap::new() };
    for m in w.knowledge.iter() {
        let Message::Sig(KeyId::SskShare(k), body) = m else { continue };
        let k = *k as usize;
        if !cfg.is_honest(k) {
            continue;
        }
        if let Message::Pair(p, inner) = body.as_ref() {
            if let Some(x) = inner.as_item() {
                hs.receipts.entry(k).or_default().insert((*p, x.clone()));
                continue;
            }
        }
        if let Some(pb) = board_body(cfg, body) {
            hs.boards.entry(k).or_default().insert(pb);
        }
    }
    hs
}

fn types(cfg: &ProtocolConfig, w: &WorldState) -> bool {
    let periods = cfg.max_periods as usize;
    w.peers.len() == cfg.honest_count()
        && w.peers.iter().all(|ps| {
            ps.committed <= ps.period
                && ps.period <= cfg.max_periods
                && ps.items.len() == periods
                && ps.sigs.len() == periods
                && ps.hashes.len() == periods
                && ps.items.iter().flatten().all(|x| cfg.items.contains(x))
                && ps.sigs.iter().enumerate().all(|(p, d)| {
                    d.iter().all(|m| {
                        m.is_sig1(p as u32) && m.as_signed_item().is_some_and(|(_, _, x)| cfg.items.contains(x))
                    })
                })
                && ps.hashes.iter().enumerate().all(|(p, h)| {
                    h.iter().all(|m| {
                        matches!(m.as_signed_pair(), Some((KeyId::Sk(_), q, Message::Hash(b)))
                            if q as usize == p && b.is_item_set())
                    })
                })
        })
}

/// A peer's receipt share and board share for the same period agree.
fn inv4(cfg: &ProtocolConfig, w: &WorldState) -> bool {
    let hs = honest_shares(cfg, w);
    hs.receipts.iter().all(|(k, rs)| {
        let Some(bs) = hs.boards.get(k) else { return true };
        rs.iter().all(|(p, x)| bs.iter().filter(|(q, _)| q == p).all(|(_, b)| b.contains(x)))
    })
}

/// A receipt share implies a threshold of item signatures in the signer's database.
fn invdj1(cfg: &ProtocolConfig, w: &WorldState) -> bool {
    let hs = honest_shares(cfg, w);
    hs.receipts
        .iter()
        .all(|(j, rs)| rs.iter().all(|(p, x)| w.peer(*j).signers(*p, x) >= cfg.threshold()))
}

/// A receipt implies a threshold of receipt shares.
fn inv4a(cfg: &ProtocolConfig, w: &WorldState) -> bool {
    let shares = w.shares_by_body();
    w.ssk_bodies()
        .filter(|b| matches!(b, Message::Pair(_, i) if i.as_item().is_some()))
        .all(|b| shares.get(b).map_or(0, |s| s.len()) >= cfg.threshold())
}

/// A board share covers only items the signer could justify.
fn invdj0(cfg: &ProtocolConfig, w: &WorldState) -> bool {
    let hs = honest_shares(cfg, w);
    hs.boards.iter().all(|(j, bs)| {
        bs.iter().all(|(p, b)| (*p as usize) < cfg.max_periods as usize && b.is_subset(&w.peer(*j).board(cfg.threshold(), *p)))
    })
}

/// A published board implies a threshold of board shares.
fn inv4b(cfg: &ProtocolConfig, w: &WorldState) -> bool {
    let shares = w.shares_by_body();
    w.ssk_bodies()
        .filter(|b| board_body(cfg, b).is_some())
        .all(|b| shares.get(b).map_or(0, |s| s.len()) >= cfg.threshold())
}

/// Every database entry has been sent.
fn invdj2(_cfg: &ProtocolConfig, w: &WorldState) -> bool {
    w.peers.iter().all(|ps| ps.sigs.iter().flatten().all(|m| w.knows(m)))
}

/// Board shares only for committed periods.
fn com1(cfg: &ProtocolConfig, w: &WorldState) -> bool {
    let hs = honest_shares(cfg, w);
    hs.boards.iter().all(|(k, bs)| bs.iter().all(|(p, _)| w.peer(*k).committed > *p))
}

/// At most one board share per peer and period.
fn com2(cfg: &ProtocolConfig, w: &WorldState) -> bool {
    let hs = honest_shares(cfg, w);
    hs.boards.values().all(|bs| {
        let periods: BTreeSet<u32> = bs.iter().map(|(p, _)| *p).collect();
        periods.len() == bs.len()
    })
}

/// An honest item signature is known iff it is in its signer's database.
fn invclash1(cfg: &ProtocolConfig, w: &WorldState) -> bool {
    let mut known: BTreeSet<&Message> = BTreeSet::new();
    for m in w.knowledge.iter() {
        if let Some((KeyId::Sk(k), p, _)) = m.as_signed_item() {
            if cfg.is_honest(k as usize) && p < cfg.max_periods {
                known.insert(m);
            }
        }
    }
    let mut held: BTreeSet<&Message> = BTreeSet::new();
    for (i, ps) in w.peers.iter().enumerate() {
        for m in ps.sigs.iter().flatten() {
            if matches!(m.as_signed_item(), Some((KeyId::Sk(k), _, _)) if k as usize == i + 1) {
                held.insert(m);
            }
        }
    }
    known == held
}

/// No honest peer has signed two clashing items.
fn invclash2(cfg: &ProtocolConfig, w: &WorldState) -> bool {
    w.peers.iter().enumerate().all(|(i, ps)| {
        let own: BTreeSet<&ItemId> = ps
            .sigs
            .iter()
            .flatten()
            .filter_map(|m| match m.as_signed_item() {
                Some((KeyId::Sk(k), _, x)) if k as usize == i + 1 => Some(x),
                _ => None,
            })
            .collect();
        cfg.clash.pairs().all(|(a, b)| !(own.contains(a) && own.contains(b)))
    })
}

fn dy0(cfg: &ProtocolConfig, w: &WorldState) -> bool {
    !w.knowledge.iter().any(|m| match m {
        Message::Key(KeyId::Sk(k)) | Message::Key(KeyId::SskShare(k)) => cfg.is_honest(*k as usize),
        Message::Key(KeyId::Ssk) => true,
        _ => false,
    })
}

fn dy1(_cfg: &ProtocolConfig, w: &WorldState) -> bool {
    w.knowledge.iter().all(|e| items_of(e).iter().all(|x| w.knows(&Message::item(x))))
}

fn dy2(_cfg: &ProtocolConfig, w: &WorldState) -> bool {
    w.knowledge.iter().all(|e| sigs_of(e).iter().all(|s| w.knows(s)))
}

type Check = fn(&ProtocolConfig, &WorldState) -> bool;

fn check_fn(name: &str) -> Option<Check> {
    Some(match name {
        "types" => types,
        "inv4" => inv4,
        "invdj1" => invdj1,
        "inv4a" => inv4a,
        "invdj0" => invdj0,
        "inv4b" => inv4b,
        "invdj2" => invdj2,
        "com1" => com1,
        "com2" => com2,
        "invclash1" => invclash1,
        "invclash2" => invclash2,
        "dy0" => dy0,
        "dy1" => dy1,
        "dy2" => dy2,
        _ => return None,
    })
}

/// Evaluates one named clause; `None` for unknown names.
pub fn evaluate_invariant(cfg: &ProtocolConfig, w: &WorldState, name: &str) -> Option<bool> {
    check_fn(name).map(|f| f(cfg, w))
}

fn clauses(cfg: &Arc<ProtocolConfig>, names: &[&'static str]) -> Vec<Invariant<WorldState>> {
    names
        .iter()
        .map(|&name| {
            let f = check_fn(name).expect("known clause");
            let c = cfg.clone();
            Invariant::new(name, move |w: &WorldState| f(&c, w))
        })
        .collect()
}

/// Every clause, claimed or not.
pub fn all_invariants(cfg: &ProtocolConfig) -> Vec<Invariant<WorldState>> {
    clauses(&Arc::new(cfg.clone()), INVARIANT_NAMES)
}

/// Clauses the configuration is expected to preserve. Dropping round 2 voids
/// the link between receipt shares and signature databases (`invdj1`) and
/// with it `inv4`; without the clash guard `invclash2` is not maintained.
pub(crate) fn claimed_invariants(cfg: &Arc<ProtocolConfig>) -> Vec<Invariant<WorldState>> {
    let names: Vec<&'static str> = INVARIANT_NAMES
        .iter()
        .copied()
        .filter(|n| cfg.enable_round2 || !matches!(*n, "invdj1" | "inv4"))
        .filter(|n| cfg.enable_clash_guard || *n != "invclash2")
        .collect();
    clauses(cfg, &names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::bbprot_machine;

    fn x() -> ItemId {
        ItemId::new("x").unwrap()
    }

    #[test]
    fn initial_state_satisfies_everything() {
        for cfg in [ProtocolConfig::new(4, 3), ProtocolConfig::new(4, 3).with_hashed_publication(true)] {
            let w = WorldState::initial(&cfg);
            for name in INVARIANT_NAMES {
                assert_eq!(evaluate_invariant(&cfg, &w, name), Some(true), "{name}");
            }
        }
    }

    #[test]
    fn receipt_without_shares_breaks_inv4a() {
        let cfg = ProtocolConfig::new(4, 3);
        let m = bbprot_machine(&cfg);
        let w = WorldState::initial(&cfg).learn_all([
            Message::item(&x()),
            Message::pair(0, Message::item(&x())),
            Message::sig(KeyId::Ssk, Message::pair(0, Message::item(&x()))),
        ]);
        assert_eq!(m.check_inv(&w), vec!["inv4a"]);
    }

    #[test]
    fn leaked_honest_key_breaks_dy0() {
        let cfg = ProtocolConfig::new(4, 3);
        let w = WorldState::initial(&cfg).learn(Message::Key(KeyId::SskShare(2)));
        assert_eq!(evaluate_invariant(&cfg, &w, "dy0"), Some(false));
    }

    #[test]
    fn two_board_shares_break_com2() {
        let cfg = ProtocolConfig::new(4, 3);
        let empty = Message::pair(0, Message::set([]));
        let full = Message::pair(0, Message::item_set([&x()]));
        let w = WorldState::initial(&cfg)
            .learn_all([Message::sig(KeyId::SskShare(1), empty), Message::sig(KeyId::SskShare(1), full)])
            .update_peer(1, |p| {
                p.period = 1;
                p.committed = 1;
            });
        assert_eq!(evaluate_invariant(&cfg, &w, "com2"), Some(false));
        assert_eq!(evaluate_invariant(&cfg, &w, "com1"), Some(true));
    }

    #[test]
    fn unclaimed_clauses_depend_on_configuration() {
        let weak = bbprot_machine(&ProtocolConfig::new(4, 3).with_round2(false));
        let names: Vec<_> = weak.invariants.iter().map(|i| i.name).collect();
        assert!(!names.contains(&"invdj1") && !names.contains(&"inv4"));
        assert!(names.contains(&"inv4a"));
        let full = bbprot_machine(&ProtocolConfig::new(4, 3));
        assert_eq!(full.invariants.len(), INVARIANT_NAMES.len());
        assert!(evaluate_invariant(&ProtocolConfig::new(4, 3), &WorldState::initial(&ProtocolConfig::new(4, 3)), "nope").is_none());
    }
}
