//! Bounded exploration of machine state spaces: breadth-first with
//! canonical deduplication, or seeded random walks.

mod attack;
mod models;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::Hash;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::machine::{fingerprint, Fingerprint, Step, Trace};

pub use attack::{all_goals, find_attack, minimize_trace, search_goals, AttackGoal, AttackReport};
pub use models::{GoalModel, ProtocolModel, ProtocolOptions, SpecModel};

/// One explorer move: a non-empty step sequence and the state it reaches.
#[derive(Clone, Debug)]
pub struct Transition<S> {
    pub steps: Vec<Step>,
    pub state: S,
}

/// A machine as seen by the explorer.
pub trait ExploreModel: Sync {
    type State: Clone + Hash + Send + Sync;

    fn machine_name(&self) -> String;

    /// The starting state and the steps leading to it from the machine's
    /// own initial state (usually none).
    fn initial(&self) -> Transition<Self::State>;

    /// Outgoing moves in a deterministic order.
    fn successors(&self, state: &Self::State) -> Vec<Transition<Self::State>>;

    /// Deduplication key; equal keys must mean interchangeable states.
    fn key(&self, state: &Self::State) -> Fingerprint {
        fingerprint(state)
    }

    /// Cheap test for a move that left the state as it was.
    fn same_state(&self, _a: &Self::State, _b: &Self::State) -> bool {
        false
    }

    /// Name of a failing state check, if any.
    fn check_state(&self, state: &Self::State) -> Option<String>;

    /// Name of a failing check on a move, if any.
    fn check_edge(&self, _pre: &Self::State, _t: &Transition<Self::State>) -> Option<String> {
        None
    }

    /// Extra checks on the starting state only.
    fn check_initial(&self, _state: &Self::State) -> Option<String> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExploreMode {
    Exhaustive,
    Randomized { seed: u64, samples: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExploreBounds {
    /// Maximum number of moves from the start.
    pub max_depth: usize,
    pub mode: ExploreMode,
    /// Give up after this many distinct states (exhaustive mode).
    pub max_states: Option<usize>,
}

impl ExploreBounds {
    pub fn exhaustive(max_depth: usize) -> Self {
        ExploreBounds { max_depth, mode: ExploreMode::Exhaustive, max_states: None }
    }

    pub fn randomized(max_depth: usize, seed: u64, samples: usize) -> Self {
        ExploreBounds { max_depth, mode: ExploreMode::Randomized { seed, samples }, max_states: None }
    }
}

impl fmt::Display for ExploreBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            ExploreMode::Exhaustive => write!(f, "exhaustive max_depth={}", self.max_depth)?,
            ExploreMode::Randomized { seed, samples } => {
                write!(f, "randomized max_depth={} seed={seed} samples={samples}", self.max_depth)?
            }
        }
        if let Some(m) = self.max_states {
            write!(f, " max_states={m}")?;
        }
        Ok(())
    }
}

/// A failed check together with a trace reaching it.
#[derive(Clone, Debug)]
pub struct Finding {
    pub clause: String,
    /// Number of explorer moves to the failing state or edge.
    pub depth: usize,
    pub trace: Trace,
}

#[derive(Clone, Debug)]
pub struct ExploreReport {
    pub machine: String,
    pub bounds: ExploreBounds,
    /// Distinct states visited (by key).
    pub states: usize,
    pub transitions: usize,
    /// Deepest level reached.
    pub depth: usize,
    /// True when every reachable state was visited within the bounds.
    pub complete: bool,
    pub violation: Option<Finding>,
}

impl ExploreReport {
    pub fn is_ok(&self) -> bool {
        self.violation.is_none()
    }

    /// Human-readable summary; stable for a given model and bounds.
    pub fn render(&self) -> String {
        let mut s = format!(
            "machine: {}\nbounds: {}\nstates: {}\ntransitions: {}\ndepth: {}\ncomplete: {}\n",
            self.machine, self.bounds, self.states, self.transitions, self.depth, self.complete
        );
        match &self.violation {
            None => {
                let scope = if self.complete { "all reachable states" } else { "states within the bounds" };
                s.push_str(&format!("result: no violation in {scope}\n"));
            }
            Some(f) => s.push_str(&format!(
                "result: violation clause={} depth={} steps={}\n",
                f.clause,
                f.depth,
                f.trace.len()
            )),
        }
        s
    }
}

#[derive(Clone, Copy)]
struct Parent {
    from: Option<Fingerprint>,
    index: u32,
}

/// Explores `model` within `bounds`, stopping at the first failed check.
pub fn explore<M: ExploreModel>(model: &M, bounds: &ExploreBounds) -> ExploreReport {
    explore_with_progress(model, bounds, |_, _| {})
}

/// Like [`explore`], calling `progress(depth, states)` after each
/// breadth-first level.
pub fn explore_with_progress<M: ExploreModel>(
    model: &M,
    bounds: &ExploreBounds,
    progress: impl FnMut(usize, usize),
) -> ExploreReport {
    match bounds.mode {
        ExploreMode::Exhaustive => bfs(model, bounds, progress),
        ExploreMode::Randomized { seed, samples } => random_walks(model, bounds, seed, samples),
    }
}

type Expanded<S> = Vec<(usize, Transition<S>, Fingerprint, Option<String>)>;

fn bfs<M: ExploreModel>(model: &M, bounds: &ExploreBounds, mut progress: impl FnMut(usize, usize)) -> ExploreReport {
    let start = model.initial();
    let mut report = ExploreReport {
        machine: model.machine_name(),
        bounds: *bounds,
        states: 1,
        transitions: 0,
        depth: 0,
        complete: false,
        violation: None,
    };
    let root = model.key(&start.state);
    let mut visited: HashMap<Fingerprint, Parent> = HashMap::new();
    visited.insert(root, Parent { from: None, index: 0 });
    if let Some(c) = model.check_initial(&start.state).or_else(|| model.check_state(&start.state)) {
        report.violation = Some(Finding { clause: c, depth: 0, trace: rebuild(model, &visited, root, None) });
        return report;
    }
    let mut frontier: Vec<(Fingerprint, M::State)> = vec![(root, start.state)];
    const CHUNK: usize = 2048;
    for depth in 1..=bounds.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut next = Vec::new();
        for chunk in frontier.chunks(CHUNK) {
            let expanded: Vec<Expanded<M::State>> = chunk
                .par_iter()
                .map(|(k, s)| {
                    model
                        .successors(s)
                        .into_iter()
                        .enumerate()
                        .map(|(i, t)| {
                            let edge = model.check_edge(s, &t);
                            let key = if model.same_state(s, &t.state) { *k } else { model.key(&t.state) };
                            (i, t, key, edge)
                        })
                        .collect()
                })
                .collect();
            for ((from, _), succs) in chunk.iter().zip(expanded) {
                for (i, t, key, edge) in succs {
                    report.transitions += 1;
                    if let Some(c) = edge {
                        let trace = rebuild(model, &visited, *from, Some(i));
                        report.violation = Some(Finding { clause: c, depth, trace });
                        report.depth = depth;
                        return report;
                    }
                    if visited.contains_key(&key) {
                        continue;
                    }
                    visited.insert(key, Parent { from: Some(*from), index: i as u32 });
                    report.states += 1;
                    next.push((key, t.state));
                }
            }
        }
        // state checks run after deduplication, in parallel
        let failures: Vec<Option<String>> = next.par_iter().map(|(_, s)| model.check_state(s)).collect();
        if let Some((k, c)) = next.iter().zip(failures).find_map(|((k, _), c)| c.map(|c| (*k, c))) {
            report.violation = Some(Finding { clause: c, depth, trace: rebuild(model, &visited, k, None) });
            report.depth = depth;
            return report;
        }
        if !next.is_empty() {
            report.depth = depth;
        }
        progress(depth, report.states);
        frontier = next;
        if bounds.max_states.is_some_and(|m| report.states >= m) {
            return report;
        }
    }
    report.complete = frontier.is_empty();
    report
}

/// Rebuilds the trace to `key` (plus successor `extra` of it) by replaying
/// the recorded successor indices from the start.
fn rebuild<M: ExploreModel>(
    model: &M,
    visited: &HashMap<Fingerprint, Parent>,
    key: Fingerprint,
    extra: Option<usize>,
) -> Trace {
    let mut path = Vec::new();
    let mut cur = key;
    while let Some(Parent { from: Some(f), index }) = visited.get(&cur).copied() {
        path.push(index as usize);
        cur = f;
    }
    path.reverse();
    path.extend(extra);
    let start = model.initial();
    let mut trace = Trace::new(model.machine_name());
    push_steps(&mut trace, &start);
    let mut state = start.state;
    for i in path {
        let t = model.successors(&state).swap_remove(i);
        push_steps(&mut trace, &t);
        state = t.state;
    }
    trace
}

fn push_steps<S: Hash>(trace: &mut Trace, t: &Transition<S>) {
    let n = t.steps.len();
    for (k, st) in t.steps.iter().enumerate() {
        let mut st = st.clone();
        st.post = if k + 1 == n { Some(fingerprint(&t.state)) } else { None };
        trace.steps.push(st);
    }
}

/// Picks an event name uniformly among the enabled ones, then one of its
/// moves uniformly.
fn pick<S, R: Rng>(succs: Vec<Transition<S>>, rng: &mut R) -> Option<Transition<S>> {
    let mut names: Vec<&str> = succs.iter().map(|t| t.steps[0].event.as_str()).collect();
    names.dedup();
    let name = (*names.choose(rng)?).to_string();
    let mut group: Vec<Transition<S>> = succs.into_iter().filter(|t| t.steps[0].event == name).collect();
    let i = rng.gen_range(0..group.len());
    Some(group.swap_remove(i))
}

struct Walk {
    transitions: usize,
    keys: Vec<Fingerprint>,
    depth: usize,
    violation: Option<Finding>,
}

fn walk<M: ExploreModel>(model: &M, max_depth: usize, rng: &mut ChaCha8Rng) -> Walk {
    let start = model.initial();
    let mut trace = Trace::new(model.machine_name());
    push_steps(&mut trace, &start);
    let mut w = Walk { transitions: 0, keys: vec![model.key(&start.state)], depth: 0, violation: None };
    let mut state = start.state;
    if let Some(c) = model.check_initial(&state).or_else(|| model.check_state(&state)) {
        w.violation = Some(Finding { clause: c, depth: 0, trace });
        return w;
    }
    for depth in 1..=max_depth {
        let Some(t) = pick(model.successors(&state), rng) else { break };
        w.transitions += 1;
        w.depth = depth;
        push_steps(&mut trace, &t);
        if let Some(c) = model.check_edge(&state, &t).or_else(|| model.check_state(&t.state)) {
            w.violation = Some(Finding { clause: c, depth, trace });
            return w;
        }
        w.keys.push(model.key(&t.state));
        state = t.state;
    }
    w
}

fn random_walks<M: ExploreModel>(model: &M, bounds: &ExploreBounds, seed: u64, samples: usize) -> ExploreReport {
    // each walk has its own generator so results do not depend on scheduling
    let walks: Vec<Walk> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            walk(model, bounds.max_depth, &mut rng)
        })
        .collect();
    let mut report = ExploreReport {
        machine: model.machine_name(),
        bounds: *bounds,
        states: 0,
        transitions: 0,
        depth: 0,
        complete: false,
        violation: None,
    };
    let mut seen = HashSet::new();
    for w in walks {
        report.transitions += w.transitions;
        report.depth = report.depth.max(w.depth);
        seen.extend(w.keys);
        if report.violation.is_none() {
            report.violation = w.violation;
        }
    }
    report.states = seen.len();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbspec::bbspec_machine;
    use crate::protocol::ProtocolConfig;
    use std::collections::BTreeSet;

    /// Depth-first enumeration of every schedule, sharing nothing with the
    /// breadth-first search.
    fn enumerate<S: Clone + Hash + Eq>(
        m: &crate::machine::MachineDef<S>,
        s: &S,
        depth: usize,
        seen: &mut BTreeSet<Fingerprint>,
    ) {
        seen.insert(fingerprint(s));
        if depth == 0 {
            return;
        }
        for (ev, b) in m.enabled(s) {
            let next = m.step(s, ev, &b).unwrap();
            enumerate(m, &next, depth - 1, seen);
        }
    }

    #[test]
    fn spec_bfs_matches_recursive_enumeration() {
        let cfg = ProtocolConfig::new(4, 3).with_items(&["a", "b"]).unwrap().with_clash("a", "b").unwrap();
        let m = bbspec_machine(&cfg);
        for depth in 0..=5 {
            let mut seen = BTreeSet::new();
            enumerate(&m, &m.init(), depth, &mut seen);
            let r = explore(&SpecModel::new(&cfg), &ExploreBounds::exhaustive(depth));
            assert!(r.is_ok());
            assert_eq!(r.states, seen.len(), "depth {depth}");
        }
    }

    #[test]
    fn protocol_bfs_matches_recursive_enumeration() {
        let cfg = ProtocolConfig::new(1, 1);
        let m = crate::protocol::bbprot_machine(&cfg);
        let opts = ProtocolOptions { saturation: false, symmetry: false, refinement: false, invariants: true };
        for depth in 0..=6 {
            let mut seen = BTreeSet::new();
            enumerate(&m, &m.init(), depth, &mut seen);
            let r = explore(&ProtocolModel::new(&cfg, opts), &ExploreBounds::exhaustive(depth));
            assert!(r.is_ok(), "{}", r.render());
            assert_eq!(r.states, seen.len(), "depth {depth}");
        }
    }

    #[test]
    fn spec_space_is_small_and_clean() {
        let cfg = ProtocolConfig::new(4, 3);
        let r = explore(&SpecModel::new(&cfg), &ExploreBounds::exhaustive(50));
        assert!(r.complete && r.is_ok(), "{}", r.render());
        assert!(r.states < 50);
    }

    #[test]
    fn random_walks_are_deterministic() {
        let cfg = ProtocolConfig::new(4, 3).with_items(&["a", "b"]).unwrap();
        let b = ExploreBounds::randomized(12, 7, 40);
        let r1 = explore(&SpecModel::new(&cfg), &b);
        let r2 = explore(&SpecModel::new(&cfg), &b);
        assert_eq!(r1.render(), r2.render());
        assert!(r1.transitions > 0);
    }
}
