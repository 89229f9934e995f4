use std::collections::BTreeSet;
use std::sync::Arc;

use super::adversary::adversary_events;
use super::invariants::claimed_invariants;
use super::state::{board_body, board_term, WorldState};
use super::ProtocolConfig;
use crate::machine::{Binding, EventDef, MachineDef};
use crate::message::{ItemId, KeyId, Message};

pub(crate) fn nat(b: &Binding, name: &str) -> Option<u32> {
    b.get_nat(name)
}

pub(crate) fn msg<'a>(b: &'a Binding, name: &str) -> Option<&'a Message> {
    b.get_msg(name)
}

/// Honest peer index from binding parameter `j`.
fn peer(cfg: &ProtocolConfig, b: &Binding) -> Option<usize> {
    let j = nat(b, "j")? as usize;
    cfg.is_honest(j).then_some(j)
}

fn item<'a>(cfg: &ProtocolConfig, b: &'a Binding, name: &str) -> Option<&'a ItemId> {
    let x = msg(b, name)?.as_item()?;
    cfg.items.contains(x).then_some(x)
}

/// `(k, body)` when `m` is `sig(sk_k, pair(p, body))`.
fn indiv_sig(m: &Message, period: u32) -> Option<(u8, &Message)> {
    match m.as_signed_pair()? {
        (KeyId::Sk(k), p, body) if p == period => Some((k, body)),
        _ => None,
    }
}

/// Is `m` a signed board hash `sig(sk_k, pair(p, hash(itemset)))`?
fn is_signed_hash(m: &Message, period: u32) -> bool {
    matches!(indiv_sig(m, period), Some((_, Message::Hash(h))) if h.is_item_set())
}

fn peers(cfg: &ProtocolConfig) -> std::ops::RangeInclusive<usize> {
    1..=cfg.honest_count()
}

/// The concrete machine for `cfg`: external events, honest-peer events and
/// the relevance-bounded adversary. Only the invariant clauses the
/// configuration claims are attached.
pub fn bbprot_machine(cfg: &ProtocolConfig) -> MachineDef<WorldState> {
    let c = Arc::new(cfg.clone());
    let init_cfg = c.clone();
    let mut m = MachineDef::new(format!("bbprot{}", cfg.stage()), move || WorldState::initial(&init_cfg));
    for inv in claimed_invariants(&c) {
        m = m.invariant(inv);
    }
    for ev in external_events(&c).into_iter().chain(honest_events(&c)).chain(adversary_events(&c)) {
        m = m.event(ev);
    }
    m
}

fn external_events(c: &Arc<ProtocolConfig>) -> Vec<EventDef<WorldState>> {
    let mut out = Vec::new();

    let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
    out.push(EventDef::new(
        "post",
        &["x"],
        move |_: &WorldState| c1.items.iter().map(|x| Binding::new().msg("x", Message::item(x))).collect(),
        move |w, b| item(&c2, b, "x").is_some_and(|x| !w.knows(&Message::item(x))),
        move |w, b| Some(w.learn(Message::item(item(&c3, b, "x")?))),
    ));

    // Receipts are `sig(SSK, pair(p, item))`; output events leave the state alone.
    let is_receipt = |m: &Message| -> bool { matches!(m, Message::Sig(KeyId::Ssk, b) if matches!(b.as_ref(), Message::Pair(_, i) if i.as_item().is_some())) };
    out.push(EventDef::new(
        "ack",
        &["r"],
        move |w: &WorldState| {
            w.knowledge.iter().filter(|m| is_receipt(m)).map(|m| Binding::new().msg("r", m.clone())).collect()
        },
        move |w, b| msg(b, "r").is_some_and(|r| is_receipt(r) && w.knows(r)),
        |w, _| Some(w.clone()),
    ));

    if c.hashed_publication {
        let (c1, c2) = (c.clone(), c.clone());
        out.push(EventDef::new(
            "publish",
            &["y", "p"],
            move |w: &WorldState| {
                w.ssk_bodies()
                    .filter_map(|body| board_body(&c1, body))
                    .map(|(p, y)| Binding::new().msg("y", Message::item_set(&y)).nat("p", p))
                    .collect()
            },
            move |w, b| {
                let (Some(y), Some(p)) = (msg(b, "y"), nat(b, "p")) else { return false };
                let Some(items) = y.as_item_set() else { return false };
                w.knows(y) && w.knows(&Message::sig(KeyId::Ssk, board_term(&c2, p, &items)))
            },
            |w, _| Some(w.clone()),
        ));
    } else {
        let (c1, c2) = (c.clone(), c.clone());
        out.push(EventDef::new(
            "publish",
            &["b"],
            move |w: &WorldState| {
                w.knowledge
                    .iter()
                    .filter(|m| matches!(m, Message::Sig(KeyId::Ssk, body) if board_body(&c1, body).is_some()))
                    .map(|m| Binding::new().msg("b", m.clone()))
                    .collect()
            },
            move |w, b| {
                msg(b, "b").is_some_and(|m| {
                    w.knows(m) && matches!(m, Message::Sig(KeyId::Ssk, body) if board_body(&c2, body).is_some())
                })
            },
            |w, _| Some(w.clone()),
        ));
    }
    out
}

fn honest_events(c: &Arc<ProtocolConfig>) -> Vec<EventDef<WorldState>> {
    let mut out = Vec::new();
    let periods = c.max_periods;

    // c_msg1: receive a posted item into the current period.
    let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
    out.push(EventDef::new(
        "c_msg1",
        &["j", "x"],
        move |w: &WorldState| {
            let mut v = Vec::new();
            for j in peers(&c1) {
                for x in &c1.items {
                    if w.knows(&Message::item(x)) {
                        v.push(Binding::new().nat("j", j as u32).msg("x", Message::item(x)));
                    }
                }
            }
            v
        },
        move |w, b| {
            let (Some(j), Some(x)) = (peer(&c2, b), item(&c2, b, "x")) else { return false };
            let ps = w.peer(j);
            ps.period < periods && w.knows(&Message::item(x)) && !ps.items[ps.period as usize].contains(x)
        },
        move |w, b| {
            let (j, x) = (peer(&c3, b)?, item(&c3, b, "x")?.clone());
            let p = w.peer(j).period;
            if p >= periods {
                return None;
            }
            Some(w.update_peer(j, |ps| {
                ps.items[p as usize].insert(x);
            }))
        },
    ));

    // c_msg2a: sign a received item and send it out. With the clash guard the
    // peer refuses items clashing with anything it has signed in any period.
    let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
    out.push(EventDef::new(
        "c_msg2a",
        &["j", "x"],
        move |w: &WorldState| {
            let mut v = Vec::new();
            for j in peers(&c1) {
                let ps = w.peer(j);
                if ps.period < periods {
                    for x in &ps.items[ps.period as usize] {
                        v.push(Binding::new().nat("j", j as u32).msg("x", Message::item(x)));
                    }
                }
            }
            v
        },
        move |w, b| {
            let (Some(j), Some(x)) = (peer(&c2, b), item(&c2, b, "x")) else { return false };
            let ps = w.peer(j);
            if ps.period >= periods || !ps.items[ps.period as usize].contains(x) {
                return false;
            }
            let own = Message::signed_item(KeyId::Sk(j as u8), ps.period, x);
            if ps.sigs[ps.period as usize].contains(&own) && w.knows(&own) {
                return false;
            }
            if c2.enable_clash_guard {
                let clashing = c2.clash.clashset(x);
                let signed_clash = ps.sigs.iter().flatten().any(|m| {
                    matches!(m.as_signed_item(), Some((KeyId::Sk(k), _, y)) if k as usize == j && clashing.contains(y))
                });
                if signed_clash {
                    return false;
                }
            }
            true
        },
        move |w, b| {
            let (j, x) = (peer(&c3, b)?, item(&c3, b, "x")?);
            let p = w.peer(j).period;
            if p >= periods {
                return None;
            }
            let own = Message::signed_item(KeyId::Sk(j as u8), p, x);
            Some(w.learn(own.clone()).update_peer(j, |ps| {
                ps.sigs[p as usize].insert(own);
            }))
        },
    ));

    // c_msg2b: ingest another peer's signature for the current period.
    if c.enable_round2 {
        let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
        out.push(EventDef::new(
            "c_msg2b",
            &["j", "m"],
            move |w: &WorldState| {
                let mut v = Vec::new();
                for j in peers(&c1) {
                    let p = w.peer(j).period;
                    if p >= periods {
                        continue;
                    }
                    for m in w.knowledge.iter().filter(|m| m.is_sig1(p)) {
                        v.push(Binding::new().nat("j", j as u32).msg("m", m.clone()));
                    }
                }
                v
            },
            move |w, b| {
                let (Some(j), Some(m)) = (peer(&c2, b), msg(b, "m")) else { return false };
                let ps = w.peer(j);
                ps.period < periods
                    && m.is_sig1(ps.period)
                    && item_in(&c2, m)
                    && w.knows(m)
                    && !ps.sigs[ps.period as usize].contains(m)
            },
            move |w, b| {
                let (j, m) = (peer(&c3, b)?, msg(b, "m")?.clone());
                let p = w.peer(j).period;
                (p < periods && m.is_sig1(p)).then(|| {
                    w.update_peer(j, |ps| {
                        ps.sigs[p as usize].insert(m);
                    })
                })
            },
        ));
    }

    // c_msg3: send a receipt share once a threshold of signatures is held
    // (or, with round 2 disabled, as soon as the item is received).
    let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
    out.push(EventDef::new(
        "c_msg3",
        &["j", "x"],
        move |w: &WorldState| {
            let mut v = Vec::new();
            for j in peers(&c1) {
                let ps = w.peer(j);
                if ps.period < periods {
                    for x in &ps.items[ps.period as usize] {
                        v.push(Binding::new().nat("j", j as u32).msg("x", Message::item(x)));
                    }
                    for x in ps.board(c1.threshold(), ps.period) {
                        v.push(Binding::new().nat("j", j as u32).msg("x", Message::item(&x)));
                    }
                }
            }
            v
        },
        move |w, b| {
            let (Some(j), Some(x)) = (peer(&c2, b), item(&c2, b, "x")) else { return false };
            let ps = w.peer(j);
            let p = ps.period;
            if p >= periods {
                return false;
            }
            let ready = if c2.enable_round2 {
                ps.signers(p, x) >= c2.threshold()
            } else {
                ps.items[p as usize].contains(x)
            };
            ready && !w.knows(&Message::signed_item(KeyId::SskShare(j as u8), p, x))
        },
        move |w, b| {
            let (j, x) = (peer(&c3, b)?, item(&c3, b, "x")?);
            let p = w.peer(j).period;
            (p < periods).then(|| w.learn(Message::signed_item(KeyId::SskShare(j as u8), p, x)))
        },
    ));

    // c_msg4: close the current period.
    let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
    out.push(EventDef::new(
        "c_msg4",
        &["j"],
        move |_: &WorldState| peers(&c1).map(|j| Binding::new().nat("j", j as u32)).collect(),
        move |w, b| peer(&c2, b).is_some_and(|j| w.peer(j).period < periods),
        move |w, b| {
            let j = peer(&c3, b)?;
            Some(w.update_peer(j, |ps| ps.period += 1))
        },
    ));

    // c_msg5a: send the database of a closed period.
    let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
    out.push(EventDef::new(
        "c_msg5a",
        &["j", "p"],
        move |w: &WorldState| closed_periods(&c1, w),
        move |w, b| {
            let (Some(j), Some(p)) = (peer(&c2, b), nat(b, "p")) else { return false };
            let ps = w.peer(j);
            p < ps.period && !w.knows(&Message::set(ps.sigs[p as usize].iter().cloned()))
        },
        move |w, b| {
            let (j, p) = (peer(&c3, b)?, nat(b, "p")?);
            let ps = w.peer(j);
            (p < ps.period).then(|| w.learn(Message::set(ps.sigs[p as usize].iter().cloned())))
        },
    ));

    // c_msg5b: merge a received database `d ⊆ SIG1_p` for a closed period.
    let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
    out.push(EventDef::new(
        "c_msg5b",
        &["j", "d", "p"],
        move |w: &WorldState| {
            let mut v = Vec::new();
            for b in closed_periods(&c1, w) {
                let (j, p) = (nat(&b, "j").unwrap_or(0), nat(&b, "p").unwrap_or(0));
                for d in w.knowledge.iter().filter(|m| is_sig1_set(&c1, m, p)) {
                    v.push(Binding::new().nat("j", j).msg("d", d.clone()).nat("p", p));
                }
            }
            v
        },
        move |w, b| {
            let (Some(j), Some(d), Some(p)) = (peer(&c2, b), msg(b, "d"), nat(b, "p")) else { return false };
            let ps = w.peer(j);
            p < ps.period
                && w.knows(d)
                && is_sig1_set(&c2, d, p)
                && d.as_set().is_some_and(|s| !s.is_subset(&ps.sigs[p as usize]))
        },
        move |w, b| {
            let (j, d, p) = (peer(&c3, b)?, msg(b, "d")?, nat(b, "p")?);
            let set = d.as_set()?.clone();
            (p < w.peer(j).period && is_sig1_set(&c3, d, p)).then(|| {
                w.update_peer(j, |ps| ps.sigs[p as usize].extend(set))
            })
        },
    ));

    // c_msg6: commit a share on the oldest uncommitted period's board. Under
    // hashed publication a threshold of matching signed hashes is needed.
    let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
    out.push(EventDef::new(
        "c_msg6",
        &["j"],
        move |_: &WorldState| peers(&c1).map(|j| Binding::new().nat("j", j as u32)).collect(),
        move |w, b| {
            let Some(j) = peer(&c2, b) else { return false };
            let ps = w.peer(j);
            if ps.committed >= ps.period {
                return false;
            }
            if !c2.hashed_publication {
                return true;
            }
            let p = ps.committed;
            let board = ps.board(c2.threshold(), p);
            let body = Message::hash(Message::item_set(&board));
            let agreeing: BTreeSet<u8> = ps.hashes[p as usize]
                .iter()
                .filter_map(|m| match indiv_sig(m, p) {
                    Some((k, h)) if *h == body => Some(k),
                    _ => None,
                })
                .collect();
            agreeing.len() >= c2.threshold()
        },
        move |w, b| {
            let j = peer(&c3, b)?;
            let ps = w.peer(j);
            if ps.committed >= ps.period {
                return None;
            }
            let p = ps.committed;
            let share = Message::sig(KeyId::SskShare(j as u8), board_term(&c3, p, &ps.board(c3.threshold(), p)));
            Some(w.learn(share).update_peer(j, |ps| ps.committed += 1))
        },
    ));

    if c.hashed_publication {
        // c_msg7: send the board itself.
        let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
        out.push(EventDef::new(
            "c_msg7",
            &["j", "p"],
            move |w: &WorldState| closed_periods(&c1, w),
            move |w, b| {
                let (Some(j), Some(p)) = (peer(&c2, b), nat(b, "p")) else { return false };
                let ps = w.peer(j);
                p < ps.period && !w.knows(&Message::item_set(&ps.board(c2.threshold(), p)))
            },
            move |w, b| {
                let (j, p) = (peer(&c3, b)?, nat(b, "p")?);
                let ps = w.peer(j);
                (p < ps.period).then(|| w.learn(Message::item_set(&ps.board(c3.threshold(), p))))
            },
        ));

        // c_msg8a: send an individually signed hash of the board.
        let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
        let signed_hash = |cfg: &ProtocolConfig, w: &WorldState, j: usize, p: u32| {
            let board = w.peer(j).board(cfg.threshold(), p);
            Message::sig(KeyId::Sk(j as u8), Message::pair(p, Message::hash(Message::item_set(&board))))
        };
        out.push(EventDef::new(
            "c_msg8a",
            &["j", "p"],
            move |w: &WorldState| closed_periods(&c1, w),
            move |w, b| {
                let (Some(j), Some(p)) = (peer(&c2, b), nat(b, "p")) else { return false };
                p < w.peer(j).period && !w.knows(&signed_hash(&c2, w, j, p))
            },
            move |w, b| {
                let (j, p) = (peer(&c3, b)?, nat(b, "p")?);
                (p < w.peer(j).period).then(|| w.learn(signed_hash(&c3, w, j, p)))
            },
        ));

        // c_msg8b: ingest a signed hash (including the peer's own).
        let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
        out.push(EventDef::new(
            "c_msg8b",
            &["j", "m", "p"],
            move |w: &WorldState| {
                let mut v = Vec::new();
                for b in closed_periods(&c1, w) {
                    let (j, p) = (nat(&b, "j").unwrap_or(0), nat(&b, "p").unwrap_or(0));
                    for m in w.knowledge.iter().filter(|m| is_signed_hash(m, p)) {
                        v.push(Binding::new().nat("j", j).msg("m", m.clone()).nat("p", p));
                    }
                }
                v
            },
            move |w, b| {
                let (Some(j), Some(m), Some(p)) = (peer(&c2, b), msg(b, "m"), nat(b, "p")) else { return false };
                let ps = w.peer(j);
                p < ps.period
                    && is_signed_hash(m, p)
                    && matches!(indiv_sig(m, p), Some((k, _)) if (1..=c2.n).contains(&(k as usize)))
                    && w.knows(m)
                    && !ps.hashes[p as usize].contains(m)
            },
            move |w, b| {
                let (j, m, p) = (peer(&c3, b)?, msg(b, "m")?.clone(), nat(b, "p")?);
                (p < w.peer(j).period && is_signed_hash(&m, p)).then(|| {
                    w.update_peer(j, |ps| {
                        ps.hashes[p as usize].insert(m);
                    })
                })
            },
        ));
    }
    out
}

/// `(j, p)` bindings for every honest peer and each of its closed periods.
fn closed_periods(cfg: &ProtocolConfig, w: &WorldState) -> Vec<Binding> {
    let mut v = Vec::new();
    for j in peers(cfg) {
        for p in 0..w.peer(j).period {
            v.push(Binding::new().nat("j", j as u32).nat("p", p));
        }
    }
    v
}

fn item_in(cfg: &ProtocolConfig, m: &Message) -> bool {
    matches!(m.as_signed_item(), Some((_, _, x)) if cfg.items.contains(x))
}

/// A set of `sig(sk_k, pair(p, item))` terms (the empty set included).
pub(crate) fn is_sig1_set(cfg: &ProtocolConfig, m: &Message, period: u32) -> bool {
    m.as_set().is_some_and(|s| s.iter().all(|e| e.is_sig1(period) && item_in(cfg, e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{replay, Step, Trace};

    fn x() -> ItemId {
        ItemId::new("x").unwrap()
    }

    fn step(w: &WorldState, m: &MachineDef<WorldState>, ev: &str, b: Binding) -> WorldState {
        m.step(w, ev, &b).unwrap_or_else(|e| panic!("{ev}: {e}"))
    }

    fn jx(j: u32) -> Binding {
        Binding::new().nat("j", j).msg("x", Message::item(&x()))
    }

    /// Posting happy path at n=4, t=3, ending in a receipt.
    pub(crate) fn receipt_run(m: &MachineDef<WorldState>) -> WorldState {
        let mut w = m.init();
        w = step(&w, m, "post", Binding::new().msg("x", Message::item(&x())));
        for j in 1..=3 {
            w = step(&w, m, "c_msg1", jx(j));
        }
        for j in 1..=3 {
            w = step(&w, m, "c_msg2a", jx(j));
        }
        for j in 1..=3 {
            for k in 1..=3 {
                if j != k {
                    let s = Message::signed_item(KeyId::Sk(k as u8), 0, &x());
                    w = step(&w, m, "c_msg2b", Binding::new().nat("j", j).msg("m", s));
                }
            }
        }
        for j in 1..=3 {
            w = step(&w, m, "c_msg3", jx(j));
        }
        w = step(&w, m, "c_dy2", Binding::new().msg("m", Message::pair(0, Message::item(&x()))));
        w
    }

    #[test]
    fn posting_yields_receipt() {
        let cfg = ProtocolConfig::new(4, 3);
        let m = bbprot_machine(&cfg);
        let w = receipt_run(&m);
        let r = Message::sig(KeyId::Ssk, Message::pair(0, Message::item(&x())));
        assert!(w.knows(&r));
        assert!(m.enabled(&w).iter().any(|(e, b)| *e == "ack" && b.get_msg("r") == Some(&r)));
        assert!(m.check_inv(&w).is_empty());
    }

    #[test]
    fn post_enables_receive_for_every_honest_peer() {
        let cfg = ProtocolConfig::new(4, 3);
        let m = bbprot_machine(&cfg);
        let w = step(&m.init(), &m, "post", Binding::new().msg("x", Message::item(&x())));
        let receivers: Vec<_> = m.enabled(&w).into_iter().filter(|(e, _)| *e == "c_msg1").collect();
        assert_eq!(receivers.len(), 3);
    }

    #[test]
    fn receipt_share_needs_threshold() {
        let cfg = ProtocolConfig::new(4, 3);
        let m = bbprot_machine(&cfg);
        let mut w = step(&m.init(), &m, "post", Binding::new().msg("x", Message::item(&x())));
        w = step(&w, &m, "c_msg1", jx(1));
        w = step(&w, &m, "c_msg2a", jx(1));
        assert!(m.step(&w, "c_msg3", &jx(1)).is_err());
        let weak = bbprot_machine(&cfg.clone().with_round2(false));
        let mut v = step(&weak.init(), &weak, "post", Binding::new().msg("x", Message::item(&x())));
        v = step(&v, &weak, "c_msg1", jx(1));
        assert!(weak.step(&v, "c_msg3", &jx(1)).is_ok());
        assert!(weak.event_index("c_msg2b").is_none());
    }

    #[test]
    fn clash_guard_blocks_second_item() {
        let cfg = ProtocolConfig::new(4, 3).with_items(&["x", "y"]).unwrap().with_clash("x", "y").unwrap();
        let m = bbprot_machine(&cfg);
        let y = ItemId::new("y").unwrap();
        let mut w = m.init();
        for it in [x(), y.clone()] {
            w = step(&w, &m, "post", Binding::new().msg("x", Message::item(&it)));
            w = step(&w, &m, "c_msg1", Binding::new().nat("j", 1).msg("x", Message::item(&it)));
        }
        w = step(&w, &m, "c_msg2a", jx(1));
        let by = Binding::new().nat("j", 1).msg("x", Message::item(&y));
        assert!(matches!(m.step(&w, "c_msg2a", &by), Err(crate::machine::MachineError::Disabled { .. })));
        let open = bbprot_machine(&cfg.clone().with_clash_guard(false));
        let mut v = open.init();
        for it in [x(), y.clone()] {
            v = step(&v, &open, "post", Binding::new().msg("x", Message::item(&it)));
            v = step(&v, &open, "c_msg1", Binding::new().nat("j", 1).msg("x", Message::item(&it)));
        }
        v = step(&v, &open, "c_msg2a", jx(1));
        assert!(open.step(&v, "c_msg2a", &by).is_ok());
    }

    #[test]
    fn full_period_publishes_a_board() {
        let cfg = ProtocolConfig::new(4, 3);
        let m = bbprot_machine(&cfg);
        let mut w = receipt_run(&m);
        for j in 1..=3 {
            w = step(&w, &m, "c_msg4", Binding::new().nat("j", j));
            w = step(&w, &m, "c_msg6", Binding::new().nat("j", j));
        }
        let board = Message::pair(0, Message::item_set([&x()]));
        w = step(&w, &m, "c_dy2", Binding::new().msg("m", board.clone()));
        let published = Message::sig(KeyId::Ssk, board);
        assert!(m.enabled(&w).iter().any(|(e, b)| *e == "publish" && b.get_msg("b") == Some(&published)));
        assert!(m.check_inv(&w).is_empty(), "{:?}", m.check_inv(&w));
        // period closed: no more receiving
        assert!(m.step(&w, "c_msg4", &Binding::new().nat("j", 1)).is_err());
    }

    #[test]
    fn hashed_publication_needs_matching_hashes() {
        let cfg = ProtocolConfig::new(4, 3).with_hashed_publication(true);
        let m = bbprot_machine(&cfg);
        let mut w = receipt_run(&m);
        for j in 1..=3 {
            w = step(&w, &m, "c_msg4", Binding::new().nat("j", j));
        }
        assert!(m.step(&w, "c_msg6", &Binding::new().nat("j", 1)).is_err());
        for j in 1..=3 {
            w = step(&w, &m, "c_msg8a", Binding::new().nat("j", j).nat("p", 0));
        }
        let hash = Message::hash(Message::item_set([&x()]));
        for j in 1..=3 {
            for k in 1..=3u8 {
                let s = Message::sig(KeyId::Sk(k), Message::pair(0, hash.clone()));
                w = step(&w, &m, "c_msg8b", Binding::new().nat("j", j).msg("m", s).nat("p", 0));
            }
        }
        for j in 1..=3 {
            w = step(&w, &m, "c_msg6", Binding::new().nat("j", j));
            w = step(&w, &m, "c_msg7", Binding::new().nat("j", j).nat("p", 0)).clone();
            if j < 3 {
                // board already sent by the first peer
                assert!(m.step(&w, "c_msg7", &Binding::new().nat("j", j + 1).nat("p", 0)).is_err());
                break;
            }
        }
        for j in 2..=3 {
            w = step(&w, &m, "c_msg6", Binding::new().nat("j", j));
        }
        w = step(&w, &m, "c_dy2", Binding::new().msg("m", Message::pair(0, hash)));
        let pb: Vec<_> = m.enabled(&w).into_iter().filter(|(e, _)| *e == "publish").collect();
        assert_eq!(pb.len(), 1);
        assert!(m.check_inv(&w).is_empty(), "{:?}", m.check_inv(&w));
    }

    #[test]
    fn replaying_a_recorded_run() {
        let cfg = ProtocolConfig::new(4, 3);
        let m = bbprot_machine(&cfg);
        let mut t = Trace::new(m.name.clone());
        t.steps.push(Step::new("post", Binding::new().msg("x", Message::item(&x()))));
        t.steps.push(Step::new("c_msg1", jx(2)));
        let w = replay(&m, &t).unwrap();
        assert!(w.peer(2).items[0].contains(&x()));
    }
}
