//! Step-by-step simulation of the concrete protocol by the abstract board.
//!
//! The abstraction is a function of the adversary knowledge alone, so a
//! step that leaves the knowledge untouched is always matched by skip.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::bbspec::{bbspec_machine, check_bb_states, publish_of, receipt_of, AbstractState, BbReport};
use crate::machine::{fingerprint, Binding, MachineDef, Step, Trace};
use crate::message::{ItemId, KeyId, Message};
use crate::protocol::{bbprot_machine, ProtocolConfig, WorldState};

/// The abstract state linked to `world`: accepted items are those signed by
/// enough honest peers that any threshold of shares must include one of
/// them, receipted items are those with a receipt, and the public part is
/// the knowledge restricted to items, receipts and publications.
pub fn abstraction(cfg: &ProtocolConfig, world: &WorldState) -> AbstractState {
    let mut a = AbstractState::initial(cfg);
    let bound = cfg.acceptance_bound();
    let honest = cfg.honest_count();
    let mut public = BTreeSet::new();
    for m in world.knowledge.iter() {
        if let Some(x) = m.as_item() {
            if cfg.items.contains(x) {
                public.insert(m.clone());
            }
        } else if let Some((p, x)) = receipt_of(m) {
            if p < cfg.max_periods && cfg.items.contains(&x) {
                a.receipted[p as usize].insert(x);
                public.insert(m.clone());
            }
        } else if publish_of(cfg, m).is_some_and(|(p, y)| p < cfg.max_periods && y.is_subset(&universe(cfg))) {
            public.insert(m.clone());
        }
    }
    for p in 0..cfg.max_periods {
        for x in &cfg.items {
            let signers = (1..=honest)
                .filter(|&k| world.knows(&Message::signed_item(KeyId::Sk(k as u8), p, x)))
                .count() as i64;
            if signers >= bound {
                a.accepted[p as usize].insert(x.clone());
            }
        }
    }
    a.public = Arc::new(public);
    a
}

fn universe(cfg: &ProtocolConfig) -> BTreeSet<ItemId> {
    cfg.items.iter().cloned().collect()
}

/// Which linking clauses hold between an abstract state and a world.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkReport {
    pub abstraction: AbstractState,
    /// Accepted sets agree.
    pub link1: bool,
    /// Receipted sets agree.
    pub link2: bool,
    /// Public terms agree.
    pub link3: bool,
    /// Claimed protocol invariants failing on the world.
    pub violated: Vec<&'static str>,
}

impl LinkReport {
    pub fn holds(&self) -> bool {
        self.link1 && self.link2 && self.link3 && self.violated.is_empty()
    }

    /// The first failing clause, invariants first.
    pub fn first_failure(&self) -> Option<&'static str> {
        if let Some(n) = self.violated.first() {
            return Some(n);
        }
        [(self.link1, "link1"), (self.link2, "link2"), (self.link3, "link3")]
            .into_iter()
            .find(|(ok, _)| !ok)
            .map(|(_, n)| n)
    }
}

pub fn link_report(
    machine: &MachineDef<WorldState>,
    cfg: &ProtocolConfig,
    world: &WorldState,
    abs: &AbstractState,
) -> LinkReport {
    let a = abstraction(cfg, world);
    LinkReport {
        link1: a.accepted == abs.accepted,
        link2: a.receipted == abs.receipted,
        link3: a.public == abs.public,
        violated: machine.check_inv(world),
        abstraction: a,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MatchVerdict {
    MatchedBy { event: &'static str, binding: Binding },
    Skip,
    Violation { clause: String, reason: String },
}

impl MatchVerdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, MatchVerdict::Violation { .. })
    }

    fn violation(clause: impl Into<String>, reason: impl Into<String>) -> Self {
        MatchVerdict::Violation { clause: clause.into(), reason: reason.into() }
    }
}

impl fmt::Display for MatchVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchVerdict::MatchedBy { event, binding } if binding.is_empty() => write!(f, "matched {event}"),
            MatchVerdict::MatchedBy { event, binding } => write!(f, "matched {event} {binding}"),
            MatchVerdict::Skip => write!(f, "skip"),
            MatchVerdict::Violation { clause, reason } => write!(f, "violation {clause}: {reason}"),
        }
    }
}

/// Matches one concrete step against the abstract machine.
pub struct Matcher {
    cfg: Arc<ProtocolConfig>,
    abstract_machine: MachineDef<AbstractState>,
}

impl Matcher {
    pub fn new(cfg: &ProtocolConfig) -> Self {
        Matcher { cfg: Arc::new(cfg.clone()), abstract_machine: bbspec_machine(cfg) }
    }

    pub fn abstract_machine(&self) -> &MachineDef<AbstractState> {
        &self.abstract_machine
    }

    /// Matches the concrete step `event`/`binding` from `pre` to `post`.
    pub fn match_step(&self, pre: &WorldState, event: &str, binding: &Binding, post: &WorldState) -> MatchVerdict {
        let external = matches!(event, "post" | "ack" | "publish");
        if !external && Arc::ptr_eq(&pre.knowledge, &post.knowledge) {
            return MatchVerdict::Skip;
        }
        let abs_pre = abstraction(&self.cfg, pre);
        let abs_post = abstraction(&self.cfg, post);
        if external {
            let name = match event {
                "post" => "post",
                "ack" => "ack",
                _ => "publish",
            };
            return self.try_abstract(&abs_pre, name, binding.clone(), &abs_post);
        }
        if abs_pre == abs_post {
            return MatchVerdict::Skip;
        }
        match event {
            "c_msg2a" => {
                let grown: Vec<(u32, ItemId)> = (0..self.cfg.max_periods)
                    .flat_map(|p| {
                        abs_post.accepted[p as usize]
                            .difference(&abs_pre.accepted[p as usize])
                            .map(move |x| (p, x.clone()))
                    })
                    .collect();
                match grown.as_slice() {
                    [(p, x)] => self.try_abstract(
                        &abs_pre,
                        "a_msg1",
                        Binding::new().msg("x", Message::item(x)).nat("p", *p),
                        &abs_post,
                    ),
                    _ => MatchVerdict::violation("ref:a_msg1", "abstraction changed without a single new acceptance"),
                }
            }
            "c_dy2" => {
                let fresh: Vec<&Message> = abs_post.public.difference(&abs_pre.public).collect();
                let [term] = fresh.as_slice() else {
                    return MatchVerdict::violation("ref:skip", "combination changed more than one public term");
                };
                if let Some((p, x)) = receipt_of(term) {
                    self.try_abstract(&abs_pre, "a_msg2", Binding::new().msg("x", Message::item(&x)).nat("p", p), &abs_post)
                } else if let Some((p, y)) = publish_of(&self.cfg, term) {
                    self.try_abstract(&abs_pre, "a_msg3", Binding::new().msg("y", Message::item_set(&y)).nat("p", p), &abs_post)
                } else {
                    MatchVerdict::violation("ref:skip", format!("unexpected public term {term}"))
                }
            }
            _ => MatchVerdict::violation("ref:skip", format!("{event} changed the abstraction")),
        }
    }

    fn try_abstract(&self, pre: &AbstractState, event: &'static str, binding: Binding, post: &AbstractState) -> MatchVerdict {
        let clause = format!("ref:{event}");
        match self.abstract_machine.step(pre, event, &binding) {
            Ok(next) if &next == post => MatchVerdict::MatchedBy { event, binding },
            Ok(_) => MatchVerdict::violation(clause, format!("abstract {event} {binding} reaches a different state")),
            Err(_) => MatchVerdict::violation(clause, format!("abstract {event} {binding} is not enabled")),
        }
    }
}

/// Outcome of [`check_simulation`]. Step numbers are 1-based; 0 denotes the
/// initial state.
#[derive(Clone, Debug)]
pub struct SimulationReport {
    pub verdicts: Vec<MatchVerdict>,
    /// The abstract steps induced by the matched concrete steps.
    pub abstract_trace: Trace,
    pub bb: BbReport,
    /// First failing obligation as `(clause, step)`.
    pub violation: Option<(String, usize)>,
}

impl SimulationReport {
    pub fn is_ok(&self) -> bool {
        self.violation.is_none()
    }

    /// `RESULT=OK` or `RESULT=VIOLATION clause=<name> step=<index>`.
    pub fn summary_line(&self) -> String {
        match &self.violation {
            None => "RESULT=OK".to_string(),
            Some((clause, step)) => format!("RESULT=VIOLATION clause={clause} step={step}"),
        }
    }

    /// [`render`](Self::render) preceded by the induced abstract trace and
    /// the board-property checks on its states.
    pub fn render_full(&self) -> String {
        let mut out = String::from("abstract trace:\n");
        for st in &self.abstract_trace.steps {
            out.push_str(&format!("  {}\n", crate::machine::format_step(st)));
        }
        out.push_str(&format!(
            "board properties: {} abstract states checked, {} violations\n",
            self.bb.states_checked,
            self.bb.violations.len()
        ));
        for v in &self.bb.violations {
            out.push_str(&format!("  {} at state {}: {}\n", v.property, v.state, v.detail));
        }
        out.push_str(&self.render());
        out
    }

    /// One line per step followed by the summary line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.verdicts.iter().enumerate() {
            out.push_str(&format!("step {}: {v}\n", i + 1));
        }
        out.push_str(&self.summary_line());
        out.push('\n');
        out
    }
}

/// Replays a concrete trace, matching every step and tracking the induced
/// abstract state. Steps that are not enabled are applied anyway so that a
/// tampered trace reports the invariant it breaks; if it breaks none, the
/// verdict is a replay mismatch.
pub fn check_simulation(cfg: &ProtocolConfig, trace: &Trace) -> SimulationReport {
    let machine = bbprot_machine(cfg);
    let matcher = Matcher::new(cfg);
    let mut report = SimulationReport {
        verdicts: Vec::new(),
        abstract_trace: Trace::new(matcher.abstract_machine.name.clone()),
        bb: BbReport::default(),
        violation: None,
    };
    let mut world = machine.init();
    let mut abs = matcher.abstract_machine.init();
    let mut abs_states = vec![abs.clone()];
    // concrete step number for each abstract state
    let mut origin = vec![0usize];

    let link = link_report(&machine, cfg, &world, &abs);
    if let Some(c) = link.first_failure() {
        report.violation = Some((c.to_string(), 0));
        return report;
    }

    for (i, st) in trace.steps.iter().enumerate() {
        let n = i + 1;
        let (next, forced) = match machine.step(&world, &st.event, &st.binding) {
            Ok(next) => (next, false),
            Err(_) => match machine.event_def(&st.event).ok().and_then(|ev| ev.apply_unchecked(&world, &st.binding)) {
                Some(next) => (next, true),
                None => {
                    report.violation = Some(("replay-mismatch".into(), n));
                    break;
                }
            },
        };
        let bad = machine.check_inv(&next);
        if let Some(name) = bad.first() {
            report.violation = Some((name.to_string(), n));
            break;
        }
        if forced || st.post.is_some_and(|fp| fp != fingerprint(&next)) {
            report.violation = Some(("replay-mismatch".into(), n));
            break;
        }
        let verdict = matcher.match_step(&world, &st.event, &st.binding, &next);
        if let MatchVerdict::Violation { clause, .. } = &verdict {
            report.violation = Some((clause.clone(), n));
            report.verdicts.push(verdict);
            break;
        }
        if let MatchVerdict::MatchedBy { event, binding } = &verdict {
            abs = matcher.abstract_machine.step(&abs, event, binding).expect("matched step is enabled");
            let mut s = Step::new(*event, binding.clone());
            s.post = Some(fingerprint(&abs));
            report.abstract_trace.steps.push(s);
            abs_states.push(abs.clone());
            origin.push(n);
        }
        report.verdicts.push(verdict);
        world = next;
        let link = link_report(&machine, cfg, &world, &abs);
        if let Some(c) = link.first_failure() {
            report.violation = Some((c.to_string(), n));
            break;
        }
    }

    report.bb = check_bb_states(cfg, &abs_states);
    if report.violation.is_none() {
        if let Some(v) = report.bb.violations.first() {
            report.violation = Some((v.property.to_string(), origin[v.state]));
        }
    }
    report
}
