use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{explore, ExploreBounds, ExploreReport, GoalModel, ProtocolModel, ProtocolOptions};
use crate::machine::{fingerprint, replay_unchecked, MachineDef, Trace};
use crate::protocol::{bbprot_machine, evaluate_invariant, ProtocolConfig, WorldState, INVARIANT_NAMES};

/// What an attack search looks for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AttackGoal {
    /// A receipt for an item missing from its period's published board.
    ReceiptWithoutPublication,
    /// Receipts for two clashing items.
    ClashingReceipts,
    /// Two different boards threshold-signed for one period.
    PublicationMutation,
    /// The named invariant clause fails.
    InvariantBreach(String),
}

impl AttackGoal {
    pub fn holds(&self, cfg: &ProtocolConfig, w: &WorldState) -> bool {
        match self {
            AttackGoal::ReceiptWithoutPublication => {
                let boards = w.published_boards(cfg);
                w.receipts().iter().any(|(p, x)| boards.iter().any(|(q, y)| q == p && !y.contains(x)))
            }
            AttackGoal::ClashingReceipts => {
                let receipted: Vec<_> = w.receipts().into_iter().map(|(_, x)| x).collect();
                cfg.clash.pairs().any(|(a, b)| receipted.contains(a) && receipted.contains(b))
            }
            AttackGoal::PublicationMutation => {
                let mut per_period: BTreeMap<u32, usize> = BTreeMap::new();
                for (p, _) in w.published_boards(cfg) {
                    *per_period.entry(p).or_default() += 1;
                }
                per_period.values().any(|&c| c > 1)
            }
            AttackGoal::InvariantBreach(name) => evaluate_invariant(cfg, w, name) == Some(false),
        }
    }
}

impl fmt::Display for AttackGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackGoal::ReceiptWithoutPublication => write!(f, "receipt-without-publication"),
            AttackGoal::ClashingReceipts => write!(f, "clashing-receipts"),
            AttackGoal::PublicationMutation => write!(f, "publication-mutation"),
            AttackGoal::InvariantBreach(n) => write!(f, "invariant:{n}"),
        }
    }
}

impl FromStr for AttackGoal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "receipt-without-publication" => Ok(AttackGoal::ReceiptWithoutPublication),
            "clashing-receipts" => Ok(AttackGoal::ClashingReceipts),
            "publication-mutation" => Ok(AttackGoal::PublicationMutation),
            _ => match s.strip_prefix("invariant:") {
                Some(n) if INVARIANT_NAMES.contains(&n) => Ok(AttackGoal::InvariantBreach(n.to_string())),
                Some(n) => Err(format!("unknown invariant `{n}`")),
                None => Err(format!("unknown attack goal `{s}`")),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttackReport {
    pub goal: AttackGoal,
    pub search: ExploreReport,
    /// Minimized trace reaching the goal, if one was found.
    pub trace: Option<Trace>,
}

impl AttackReport {
    pub fn found(&self) -> bool {
        self.trace.is_some()
    }

    pub fn render(&self) -> String {
        let mut s = format!("goal: {}\n", self.goal);
        s.push_str(&self.search.render());
        match &self.trace {
            Some(t) => s.push_str(&format!("attack: found, {} steps after minimization\n", t.len())),
            None => s.push_str(&format!("attack: none within bounds ({})\n", self.search.bounds)),
        }
        s
    }
}

/// Breadth-first search for a state satisfying `goal`, followed by trace
/// minimization. The search is shortest in explorer moves; the returned
/// trace is minimal in the sense that no single step can be dropped.
pub fn find_attack(cfg: &ProtocolConfig, goal: AttackGoal, bounds: &ExploreBounds) -> AttackReport {
    let model = ProtocolModel::new(cfg, ProtocolOptions::search());
    let search = explore(&GoalModel { inner: &model, goals: vec![goal.clone()] }, bounds);
    let trace = search.violation.as_ref().map(|f| {
        let m = bbprot_machine(cfg);
        minimize_trace(&m, &f.trace, |w| goal.holds(cfg, w))
    });
    AttackReport { goal, search, trace }
}

/// Searches for a state meeting any of `goals`. An `is_ok` report is an
/// absence claim qualified by its bounds.
pub fn search_goals(cfg: &ProtocolConfig, goals: &[AttackGoal], bounds: &ExploreBounds) -> ExploreReport {
    let model = ProtocolModel::new(cfg, ProtocolOptions::search());
    explore(&GoalModel { inner: &model, goals: goals.to_vec() }, bounds)
}

/// Every goal: the three board properties and each invariant clause the
/// configuration claims.
pub fn all_goals(cfg: &ProtocolConfig) -> Vec<AttackGoal> {
    let mut goals =
        vec![AttackGoal::ReceiptWithoutPublication, AttackGoal::ClashingReceipts, AttackGoal::PublicationMutation];
    goals.extend(bbprot_machine(cfg).invariants.iter().map(|inv| AttackGoal::InvariantBreach(inv.name.to_string())));
    goals
}

/// Greedily drops steps, keeping a removal whenever the shortened trace
/// still replays and its final state satisfies `keep`. Repeats until no
/// single step can be dropped; fingerprints are re-recorded at the end.
pub fn minimize_trace(m: &MachineDef<WorldState>, trace: &Trace, keep: impl Fn(&WorldState) -> bool) -> Trace {
    let mut steps: Vec<_> = trace
        .steps
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.post = None;
            s.pre = None;
            s
        })
        .collect();
    let ok = |steps: &[crate::machine::Step]| {
        let t = Trace { machine: trace.machine.clone(), steps: steps.to_vec() };
        replay_unchecked(m, &t).is_ok_and(|states| keep(states.last().expect("non-empty")))
    };
    loop {
        let mut changed = false;
        let mut i = steps.len();
        while i > 0 {
            i -= 1;
            let mut shorter = steps.clone();
            shorter.remove(i);
            if ok(&shorter) {
                steps = shorter;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut out = Trace { machine: trace.machine.clone(), steps };
    if let Ok(states) = replay_unchecked(m, &out) {
        for (st, s) in out.steps.iter_mut().zip(&states[1..]) {
            st.post = Some(fingerprint(s));
        }
    }
    out
}
