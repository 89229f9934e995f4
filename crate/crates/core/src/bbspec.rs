//! The abstract bulletin board: a peer-free machine whose reachable states
//! satisfy the board requirements by construction. It is the refinement
//! target for the concrete protocol and is itself explorable.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::machine::{replay, Binding, EventDef, Invariant, MachineDef, MachineError, Trace};
use crate::message::{ItemId, KeyId, Message};
use crate::protocol::ProtocolConfig;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AbstractState {
    /// Items, receipts and published boards visible to the outside.
    pub public: Arc<BTreeSet<Message>>,
    /// Per period: items accepted onto the board.
    pub accepted: Vec<BTreeSet<ItemId>>,
    /// Per period: items with a receipt.
    pub receipted: Vec<BTreeSet<ItemId>>,
}

impl AbstractState {
    pub fn initial(cfg: &ProtocolConfig) -> Self {
        let p = cfg.max_periods as usize;
        AbstractState {
            public: Arc::new(BTreeSet::new()),
            accepted: vec![BTreeSet::new(); p],
            receipted: vec![BTreeSet::new(); p],
        }
    }

    pub fn posted(&self) -> BTreeSet<ItemId> {
        self.public.iter().filter_map(|m| m.as_item().cloned()).collect()
    }

    pub fn receipts(&self) -> Vec<(u32, ItemId)> {
        self.public.iter().filter_map(receipt_of).collect()
    }

    /// `(period, board)` for each published board.
    pub fn boards(&self, cfg: &ProtocolConfig) -> Vec<(u32, BTreeSet<ItemId>)> {
        self.public.iter().filter_map(|m| publish_of(cfg, m)).collect()
    }

    fn with_public(&self, m: Message) -> AbstractState {
        let mut s = self.clone();
        if !s.public.contains(&m) {
            Arc::make_mut(&mut s.public).insert(m);
        }
        s
    }
}

impl fmt::Display for AbstractState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |s: &BTreeSet<ItemId>| s.iter().map(|x| x.as_str()).collect::<Vec<_>>().join(",");
        write!(f, "public={} ", self.public.len())?;
        for (p, (r, c)) in self.accepted.iter().zip(&self.receipted).enumerate() {
            write!(f, "R{p}={{{}}} C{p}={{{}}} ", list(r), list(c))?;
        }
        Ok(())
    }
}

/// `(p, x)` for a receipt `sig(SSK, pair(p, item(x)))`.
pub fn receipt_of(m: &Message) -> Option<(u32, ItemId)> {
    match m.as_signed_item()? {
        (KeyId::Ssk, p, x) => Some((p, x.clone())),
        _ => None,
    }
}

/// `(p, Y)` for a publication term in the configuration's shape.
pub fn publish_of(cfg: &ProtocolConfig, m: &Message) -> Option<(u32, BTreeSet<ItemId>)> {
    match m {
        Message::Sig(KeyId::Ssk, body) => crate::protocol::board_body(cfg, body),
        _ => None,
    }
}

/// The publication term for board `y` in period `p`.
pub fn publish_term(cfg: &ProtocolConfig, p: u32, y: &BTreeSet<ItemId>) -> Message {
    Message::sig(KeyId::Ssk, crate::protocol::board_term(cfg, p, y))
}

/// Every `Y` with `lower ⊆ Y ⊆ upper`.
fn between(lower: &BTreeSet<ItemId>, upper: &BTreeSet<ItemId>) -> Vec<BTreeSet<ItemId>> {
    let free: Vec<&ItemId> = upper.difference(lower).collect();
    (0u64..1 << free.len())
        .map(|mask| {
            let mut y = lower.clone();
            y.extend(free.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, x)| (*x).clone()));
            y
        })
        .collect()
}

fn period(cfg: &ProtocolConfig, b: &Binding) -> Option<u32> {
    b.get_nat("p").filter(|p| *p < cfg.max_periods)
}

fn item<'a>(cfg: &ProtocolConfig, b: &'a Binding) -> Option<&'a ItemId> {
    b.get_msg("x")?.as_item().filter(|x| cfg.items.contains(x))
}

/// The abstract machine for `cfg`. Clash rejection follows
/// `cfg.enable_clash_guard`; hashed publication follows
/// `cfg.hashed_publication`.
pub fn bbspec_machine(cfg: &ProtocolConfig) -> MachineDef<AbstractState> {
    let c = Arc::new(cfg.clone());
    let ic = c.clone();
    let mut m = MachineDef::new(format!("bbspec{}", cfg.stage()), move || AbstractState::initial(&ic));

    let sc = c.clone();
    m = m.invariant(Invariant::new("shapes", move |s: &AbstractState| {
        s.public
            .iter()
            .all(|e| e.as_item().is_some() || receipt_of(e).is_some() || publish_of(&sc, e).is_some())
    }));
    m = m.invariant(Invariant::new("receipted_accepted", |s: &AbstractState| {
        s.receipted.iter().zip(&s.accepted).all(|(c, r)| c.is_subset(r))
    }));
    let bc = c.clone();
    m = m.invariant(Invariant::new("single_board", move |s: &AbstractState| {
        let boards = s.boards(&bc);
        let periods: BTreeSet<u32> = boards.iter().map(|(p, _)| *p).collect();
        periods.len() == boards.len()
    }));

    let (c1, c2) = (c.clone(), c.clone());
    m = m.event(EventDef::new(
        "post",
        &["x"],
        move |_: &AbstractState| c1.items.iter().map(|x| Binding::new().msg("x", Message::item(x))).collect(),
        |_, _| true,
        move |s, b| Some(s.with_public(Message::item(item(&c2, b)?))),
    ));

    m = m.event(EventDef::new(
        "ack",
        &["r"],
        |s: &AbstractState| {
            s.public
                .iter()
                .filter(|m| receipt_of(m).is_some())
                .map(|r| Binding::new().msg("r", r.clone()))
                .collect()
        },
        |s, b| b.get_msg("r").is_some_and(|r| receipt_of(r).is_some() && s.public.contains(r)),
        |s, _| Some(s.clone()),
    ));

    if cfg.hashed_publication {
        let (c1, c2) = (c.clone(), c.clone());
        m = m.event(EventDef::new(
            "publish",
            &["y", "p"],
            move |s: &AbstractState| {
                s.boards(&c1)
                    .into_iter()
                    .map(|(p, y)| Binding::new().msg("y", Message::item_set(&y)).nat("p", p))
                    .collect()
            },
            move |s, b| {
                let (Some(y), Some(p)) = (b.get_msg("y").and_then(Message::as_item_set), period(&c2, b)) else {
                    return false;
                };
                s.public.contains(&publish_term(&c2, p, &y))
            },
            |s, _| Some(s.clone()),
        ));
    } else {
        let (c1, c2) = (c.clone(), c.clone());
        m = m.event(EventDef::new(
            "publish",
            &["b"],
            move |s: &AbstractState| {
                s.public
                    .iter()
                    .filter(|m| publish_of(&c1, m).is_some())
                    .map(|m| Binding::new().msg("b", m.clone()))
                    .collect()
            },
            move |s, b| b.get_msg("b").is_some_and(|m| publish_of(&c2, m).is_some() && s.public.contains(m)),
            |s, _| Some(s.clone()),
        ));
    }

    // a_msg1: accept a posted item for a period, unless it clashes with
    // anything accepted in any period.
    let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
    m = m.event(EventDef::new(
        "a_msg1",
        &["x", "p"],
        move |s: &AbstractState| {
            let mut v = Vec::new();
            for x in s.posted() {
                for p in 0..c1.max_periods {
                    v.push(Binding::new().msg("x", Message::item(&x)).nat("p", p));
                }
            }
            v
        },
        move |s, b| {
            let (Some(x), Some(_)) = (item(&c2, b), period(&c2, b)) else { return false };
            if !s.public.contains(&Message::item(x)) {
                return false;
            }
            if c2.enable_clash_guard {
                let clashing = c2.clash.clashset(x);
                if s.accepted.iter().flatten().any(|y| clashing.contains(y)) {
                    return false;
                }
            }
            true
        },
        move |s, b| {
            let (x, p) = (item(&c3, b)?.clone(), period(&c3, b)?);
            let mut s = s.clone();
            s.accepted[p as usize].insert(x);
            Some(s)
        },
    ));

    // a_msg2: issue a receipt for an accepted item, consistent with any board
    // already published for the period.
    let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
    m = m.event(EventDef::new(
        "a_msg2",
        &["x", "p"],
        move |s: &AbstractState| {
            let mut v = Vec::new();
            for p in 0..c1.max_periods {
                for x in &s.accepted[p as usize] {
                    v.push(Binding::new().msg("x", Message::item(x)).nat("p", p));
                }
            }
            v
        },
        move |s, b| {
            let (Some(x), Some(p)) = (item(&c2, b), period(&c2, b)) else { return false };
            s.accepted[p as usize].contains(x) && s.boards(&c2).iter().all(|(q, y)| *q != p || y.contains(x))
        },
        move |s, b| {
            let (x, p) = (item(&c3, b)?.clone(), period(&c3, b)?);
            let mut s = s.with_public(Message::signed_item(KeyId::Ssk, p, &x));
            s.receipted[p as usize].insert(x);
            Some(s)
        },
    ));

    // a_msg3: publish a board between the receipted and the accepted items,
    // once per period.
    let (c1, c2, c3) = (c.clone(), c.clone(), c.clone());
    m = m.event(EventDef::new(
        "a_msg3",
        &["y", "p"],
        move |s: &AbstractState| {
            let mut v = Vec::new();
            for p in 0..c1.max_periods {
                let (lo, hi) = (&s.receipted[p as usize], &s.accepted[p as usize]);
                if lo.is_subset(hi) {
                    for y in between(lo, hi) {
                        v.push(Binding::new().msg("y", Message::item_set(&y)).nat("p", p));
                    }
                }
            }
            v
        },
        move |s, b| {
            let (Some(y), Some(p)) = (b.get_msg("y").and_then(Message::as_item_set), period(&c2, b)) else {
                return false;
            };
            s.receipted[p as usize].is_subset(&y)
                && y.is_subset(&s.accepted[p as usize])
                && s.boards(&c2).iter().all(|(q, _)| *q != p)
        },
        move |s, b| {
            let (y, p) = (b.get_msg("y")?.as_item_set()?, period(&c3, b)?);
            Some(s.with_public(publish_term(&c3, p, &y)))
        },
    ));
    m
}

/// One breach of a board requirement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BbViolation {
    pub property: &'static str,
    pub state: usize,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BbReport {
    pub states_checked: usize,
    pub violations: Vec<BbViolation>,
}

impl BbReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the four board requirements on a sequence of abstract states:
/// only posted items are published (bb.1), receipted items appear on their
/// period's board (bb.2), no clashing items are both accepted (bb.3, under
/// clash rejection), and a period's board never changes (bb.4).
pub fn check_bb_states(cfg: &ProtocolConfig, states: &[AbstractState]) -> BbReport {
    let mut report = BbReport { states_checked: states.len(), violations: Vec::new() };
    let mut first_board: std::collections::BTreeMap<u32, BTreeSet<ItemId>> = Default::default();
    for (i, s) in states.iter().enumerate() {
        let mut flag = |property, detail: String| report.violations.push(BbViolation { property, state: i, detail });
        let posted = s.posted();
        let boards = s.boards(cfg);
        for (p, y) in &boards {
            if !y.is_subset(&posted) {
                flag("bb.1", format!("board for period {p} holds unposted items"));
            }
        }
        for (p, x) in s.receipts() {
            for (q, y) in &boards {
                if *q == p && !y.contains(&x) {
                    flag("bb.2", format!("receipted item {x} missing from the period {p} board"));
                }
            }
        }
        if cfg.enable_clash_guard {
            let accepted: BTreeSet<&ItemId> = s.accepted.iter().flatten().collect();
            for (a, b) in cfg.clash.pairs() {
                if accepted.contains(a) && accepted.contains(b) {
                    flag("bb.3", format!("clashing items {a} and {b} both accepted"));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for (p, y) in &boards {
            if !seen.insert(*p) {
                flag("bb.4", format!("two boards published for period {p}"));
            }
            match first_board.get(p) {
                Some(prev) if prev != y => flag("bb.4", format!("board for period {p} changed")),
                Some(_) => {}
                None => {
                    first_board.insert(*p, y.clone());
                }
            }
        }
        for (p, prev) in &first_board {
            if !boards.iter().any(|(q, y)| q == p && y == prev) {
                flag("bb.4", format!("board for period {p} withdrawn"));
            }
        }
    }
    report
}

/// Replays an abstract trace and checks the board requirements on every
/// state along it.
pub fn check_bb_properties(cfg: &ProtocolConfig, trace: &Trace) -> Result<BbReport, MachineError> {
    let m = bbspec_machine(cfg);
    let mut states = vec![m.init()];
    for (i, st) in trace.steps.iter().enumerate() {
        let cur = states.last().expect("non-empty");
        let next = m
            .step(cur, &st.event, &st.binding)
            .map_err(|e| MachineError::ReplayMismatch { index: i, detail: e.to_string() })?;
        states.push(next);
    }
    // keep the invariant replay check honest too
    replay(&m, trace)?;
    Ok(check_bb_states(cfg, &states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::Step;

    fn x() -> ItemId {
        ItemId::new("x").unwrap()
    }

    fn bx() -> Binding {
        Binding::new().msg("x", Message::item(&x()))
    }

    #[test]
    fn init_enables_posts_and_empty_board() {
        let cfg = ProtocolConfig::new(4, 3).with_items(&["x", "y"]).unwrap();
        let m = bbspec_machine(&cfg);
        let en = m.enabled(&m.init());
        let names: Vec<&str> = en.iter().map(|(e, _)| *e).collect();
        assert_eq!(names, vec!["post", "post", "a_msg3"]);
    }

    #[test]
    fn accept_then_receipt() {
        let cfg = ProtocolConfig::new(4, 3);
        let m = bbspec_machine(&cfg);
        let mut s = m.step(&m.init(), "post", &bx()).unwrap();
        assert!(s.public.contains(&Message::item(&x())));
        s = m.step(&s, "a_msg1", &bx().nat("p", 0)).unwrap();
        s = m.step(&s, "a_msg2", &bx().nat("p", 0)).unwrap();
        assert!(s.public.contains(&Message::signed_item(KeyId::Ssk, 0, &x())));
        assert!(s.receipted[0].contains(&x()));
    }

    #[test]
    fn one_board_per_period() {
        let cfg = ProtocolConfig::new(4, 3);
        let m = bbspec_machine(&cfg);
        let empty = Binding::new().msg("y", Message::set([])).nat("p", 0);
        let s = m.step(&m.init(), "a_msg3", &empty).unwrap();
        assert!(m.step(&s, "a_msg3", &empty).is_err());
        // a receipt after publication must be for an item on the board
        let mut s2 = m.step(&s, "post", &bx()).unwrap();
        s2 = m.step(&s2, "a_msg1", &bx().nat("p", 0)).unwrap();
        assert!(m.step(&s2, "a_msg2", &bx().nat("p", 0)).is_err());
    }

    #[test]
    fn clash_blocks_acceptance_everywhere() {
        let cfg = ProtocolConfig::new(4, 3)
            .with_items(&["a", "b"])
            .unwrap()
            .with_clash("a", "b")
            .unwrap()
            .with_periods(2);
        let m = bbspec_machine(&cfg);
        let (a, b) = (ItemId::new("a").unwrap(), ItemId::new("b").unwrap());
        let mut s = m.init();
        for it in [&a, &b] {
            s = m.step(&s, "post", &Binding::new().msg("x", Message::item(it))).unwrap();
        }
        s = m.step(&s, "a_msg1", &Binding::new().msg("x", Message::item(&a)).nat("p", 0)).unwrap();
        for p in 0..2 {
            assert!(m.step(&s, "a_msg1", &Binding::new().msg("x", Message::item(&b)).nat("p", p)).is_err());
        }
    }

    #[test]
    fn hashed_publish_outputs_the_board() {
        let cfg = ProtocolConfig::new(4, 3).with_hashed_publication(true);
        let m = bbspec_machine(&cfg);
        let y = Binding::new().msg("y", Message::item_set([&x()])).nat("p", 0);
        let mut s = m.step(&m.init(), "post", &bx()).unwrap();
        s = m.step(&s, "a_msg1", &bx().nat("p", 0)).unwrap();
        s = m.step(&s, "a_msg3", &y).unwrap();
        let term = Message::sig(KeyId::Ssk, Message::pair(0, Message::hash(Message::item_set([&x()]))));
        assert!(s.public.contains(&term));
        let pubs: Vec<_> = m.enabled(&s).into_iter().filter(|(e, _)| *e == "publish").collect();
        assert_eq!(pubs, vec![("publish", y)]);
    }

    #[test]
    fn bb_checks_flag_bad_states() {
        let cfg = ProtocolConfig::new(4, 3);
        let mut s = AbstractState::initial(&cfg);
        Arc::make_mut(&mut s.public).insert(publish_term(&cfg, 0, &[x()].into_iter().collect()));
        let r = check_bb_states(&cfg, &[s.clone()]);
        assert_eq!(r.violations.iter().map(|v| v.property).collect::<Vec<_>>(), vec!["bb.1"]);

        let mut t = AbstractState::initial(&cfg);
        Arc::make_mut(&mut t.public).extend([
            Message::item(&x()),
            Message::signed_item(KeyId::Ssk, 0, &x()),
            publish_term(&cfg, 0, &BTreeSet::new()),
        ]);
        let r = check_bb_states(&cfg, &[t]);
        assert_eq!(r.violations.iter().map(|v| v.property).collect::<Vec<_>>(), vec!["bb.2"]);
    }

    #[test]
    fn replayed_trace_passes() {
        let cfg = ProtocolConfig::new(4, 3);
        let mut t = Trace::new("bbspec1");
        t.steps.push(Step::new("post", bx()));
        t.steps.push(Step::new("a_msg1", bx().nat("p", 0)));
        t.steps.push(Step::new("a_msg2", bx().nat("p", 0)));
        t.steps.push(Step::new("a_msg3", Binding::new().msg("y", Message::item_set([&x()])).nat("p", 0)));
        let r = check_bb_properties(&cfg, &t).unwrap();
        assert!(r.is_ok());
        assert_eq!(r.states_checked, 5);
    }
}
