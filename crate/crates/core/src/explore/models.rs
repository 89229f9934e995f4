use std::collections::BTreeMap;
use std::sync::Arc;

use super::{AttackGoal, ExploreModel, Transition};
use crate::bbspec::{bbspec_machine, check_bb_states, AbstractState};
use crate::machine::{fingerprint, Fingerprint, MachineDef, Step};
use crate::message::{ItemId, KeyId, Message};
use crate::protocol::{bbprot_machine, saturate, ProtocolConfig, WorldState, SATURATED_EVENTS};
use crate::refinement::{abstraction, MatchVerdict, Matcher};

/// The abstract board as an explorable model. State checks are the
/// machine's invariants plus the board requirements; edges check that
/// published boards persist.
pub struct SpecModel {
    cfg: ProtocolConfig,
    machine: MachineDef<AbstractState>,
}

impl SpecModel {
    pub fn new(cfg: &ProtocolConfig) -> Self {
        SpecModel { cfg: cfg.clone(), machine: bbspec_machine(cfg) }
    }
}

impl ExploreModel for SpecModel {
    type State = AbstractState;

    fn machine_name(&self) -> String {
        self.machine.name.clone()
    }

    fn initial(&self) -> Transition<AbstractState> {
        Transition { steps: Vec::new(), state: self.machine.init() }
    }

    fn successors(&self, s: &AbstractState) -> Vec<Transition<AbstractState>> {
        plain_successors(&self.machine, s)
    }

    fn check_state(&self, s: &AbstractState) -> Option<String> {
        if let Some(n) = self.machine.check_inv(s).first() {
            return Some(n.to_string());
        }
        check_bb_states(&self.cfg, std::slice::from_ref(s)).violations.first().map(|v| v.property.to_string())
    }

    fn check_edge(&self, pre: &AbstractState, t: &Transition<AbstractState>) -> Option<String> {
        check_bb_states(&self.cfg, &[pre.clone(), t.state.clone()])
            .violations
            .first()
            .map(|v| v.property.to_string())
    }
}

fn plain_successors<S: Clone>(m: &MachineDef<S>, s: &S) -> Vec<Transition<S>> {
    m.enabled_indexed(s)
        .into_iter()
        .filter_map(|(i, b)| {
            let ev = &m.events[i];
            let next = ev.apply_unchecked(s, &b)?;
            Some(Transition { steps: vec![Step::new(ev.name, b)], state: next })
        })
        .collect()
}

/// Reductions and checks for [`ProtocolModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProtocolOptions {
    /// Close the knowledge under the eager adversary rules after every move.
    pub saturation: bool,
    /// Deduplicate states up to renaming of honest peers and of items
    /// (respecting the clash relation).
    pub symmetry: bool,
    /// Match every move against the abstract board.
    pub refinement: bool,
    /// Check the machine's claimed invariants in every state.
    pub invariants: bool,
}

impl ProtocolOptions {
    /// Everything on.
    pub fn full() -> Self {
        ProtocolOptions { saturation: true, symmetry: true, refinement: true, invariants: true }
    }

    /// Reductions only; for goal searches.
    pub fn search() -> Self {
        ProtocolOptions { saturation: true, symmetry: true, refinement: false, invariants: false }
    }
}

/// The concrete protocol as an explorable model.
///
/// With saturation on, every move is one non-eager event followed by the
/// eager adversary rules it enables, so the explored states are those whose
/// knowledge is closed under those rules. Their guards only grow with the
/// knowledge and they never change the abstraction, so closing early
/// removes interleavings without removing reachable behaviour.
pub struct ProtocolModel {
    cfg: Arc<ProtocolConfig>,
    machine: MachineDef<WorldState>,
    matcher: Option<Matcher>,
    opts: ProtocolOptions,
    /// Item renamings preserving the clash relation, identity first;
    /// empty when symmetry reduction is off.
    item_maps: Vec<BTreeMap<ItemId, ItemId>>,
}

impl ProtocolModel {
    pub fn new(cfg: &ProtocolConfig, opts: ProtocolOptions) -> Self {
        Self::with_machine(cfg, bbprot_machine(cfg), opts)
    }

    /// Uses a caller-supplied machine, e.g. a deliberately broken one.
    pub fn with_machine(cfg: &ProtocolConfig, machine: MachineDef<WorldState>, opts: ProtocolOptions) -> Self {
        let item_maps = if opts.symmetry { item_renamings(cfg) } else { Vec::new() };
        ProtocolModel {
            cfg: Arc::new(cfg.clone()),
            matcher: opts.refinement.then(|| Matcher::new(cfg)),
            machine,
            opts,
            item_maps,
        }
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn machine(&self) -> &MachineDef<WorldState> {
        &self.machine
    }

    fn eager(&self, name: &str) -> bool {
        self.opts.saturation && SATURATED_EVENTS.contains(&name)
    }

    /// Saturates `w`; `pre` (already closed) lets unchanged knowledge skip
    /// the work.
    fn close(&self, steps: &mut Vec<Step>, pre: Option<&WorldState>, w: WorldState) -> WorldState {
        if !self.opts.saturation || pre.is_some_and(|p| Arc::ptr_eq(&p.knowledge, &w.knowledge)) {
            return w;
        }
        let (w, more) = saturate(&self.cfg, &w);
        steps.extend(more);
        w
    }
}

/// Item renamings that map the clash relation onto itself, identity first.
fn item_renamings(cfg: &ProtocolConfig) -> Vec<BTreeMap<ItemId, ItemId>> {
    let items = &cfg.items;
    let mut out = Vec::new();
    for perm in permutations(items.len()) {
        let map: BTreeMap<ItemId, ItemId> =
            items.iter().enumerate().map(|(i, x)| (x.clone(), items[perm[i]].clone())).collect();
        if cfg.clash.map_items(&|x: &ItemId| map[x].clone()) == cfg.clash {
            out.push(map);
        }
    }
    out
}

fn count_keys(m: &Message, sk: &mut [u32], ssk: &mut [u32]) {
    match m {
        Message::Item(_) => {}
        Message::Key(k) | Message::Sig(k, _) => {
            match k {
                KeyId::Sk(j) => sk[*j as usize] += 1,
                KeyId::SskShare(j) => ssk[*j as usize] += 1,
                KeyId::Ssk => {}
            }
            if let Message::Sig(_, b) = m {
                count_keys(b, sk, ssk);
            }
        }
        Message::Pair(_, b) | Message::Hash(b) => count_keys(b, sk, ssk),
        Message::Set(s) => s.iter().for_each(|e| count_keys(e, sk, ssk)),
    }
}

/// A summary of each honest peer that renaming peers or items leaves
/// unchanged.
fn peer_profiles(w: &WorldState, n: usize) -> Vec<Vec<u32>> {
    let (mut sk, mut ssk) = (vec![0; n + 1], vec![0; n + 1]);
    for m in w.knowledge.iter() {
        count_keys(m, &mut sk, &mut ssk);
    }
    for p in &w.peers {
        for m in p.sigs.iter().chain(&p.hashes).flatten() {
            count_keys(m, &mut sk, &mut ssk);
        }
    }
    w.peers
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut v = vec![p.period, p.committed, sk[i + 1], ssk[i + 1]];
            for q in 0..p.items.len() {
                v.extend([p.items[q].len() as u32, p.sigs[q].len() as u32, p.hashes[q].len() as u32]);
            }
            v
        })
        .collect()
}

/// All orderings of `0..len` that sort `profiles`, trying every arrangement
/// within groups of equal profiles.
fn sorting_orders(profiles: &[Vec<u32>]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..profiles.len()).collect();
    idx.sort_by(|a, b| profiles[*a].cmp(&profiles[*b]));
    let mut orders = vec![Vec::new()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && profiles[idx[j]] == profiles[idx[i]] {
            j += 1;
        }
        let group = &idx[i..j];
        let mut next = Vec::new();
        for o in &orders {
            for perm in permutations(group.len()) {
                let mut o2: Vec<usize> = o.clone();
                o2.extend(perm.iter().map(|k| group[*k]));
                next.push(o2);
            }
        }
        orders = next;
        i = j;
    }
    orders
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

impl ExploreModel for ProtocolModel {
    type State = WorldState;

    fn machine_name(&self) -> String {
        self.machine.name.clone()
    }

    fn initial(&self) -> Transition<WorldState> {
        let mut steps = Vec::new();
        let state = self.close(&mut steps, None, self.machine.init());
        Transition { steps, state }
    }

    fn successors(&self, w: &WorldState) -> Vec<Transition<WorldState>> {
        let mut out = Vec::new();
        for ev in &self.machine.events {
            if self.eager(ev.name) {
                continue;
            }
            let mut bs: Vec<_> = ev.domain(w).into_iter().filter(|b| ev.guard(w, b)).collect();
            bs.sort();
            bs.dedup();
            for b in bs {
                let Some(next) = ev.apply_unchecked(w, &b) else { continue };
                let mut steps = vec![Step::new(ev.name, b)];
                let state = self.close(&mut steps, Some(w), next);
                out.push(Transition { steps, state });
            }
        }
        out
    }

    /// The least fingerprint over renamings that sort the honest peers by
    /// profile. Symmetric states have the same candidate set, so the key is
    /// canonical without trying every renaming.
    fn key(&self, w: &WorldState) -> Fingerprint {
        if self.item_maps.is_empty() {
            return fingerprint(w);
        }
        let mut best: Option<Fingerprint> = None;
        for order in sorting_orders(&peer_profiles(w, self.cfg.n)) {
            // peer order[i] (0-based) becomes peer i + 1
            let mut names: Vec<usize> = (0..=self.cfg.n).collect();
            for (new, old) in order.iter().enumerate() {
                names[old + 1] = new + 1;
            }
            let peers_fixed = order.iter().enumerate().all(|(a, b)| a == *b);
            for (k, map) in self.item_maps.iter().enumerate() {
                let fp = if peers_fixed && k == 0 {
                    fingerprint(w)
                } else {
                    fingerprint(&w.permute(&|j| names[j], &|x: &ItemId| map[x].clone()))
                };
                best = Some(best.map_or(fp, |b| b.min(fp)));
            }
        }
        best.expect("at least one ordering")
    }

    fn same_state(&self, a: &WorldState, b: &WorldState) -> bool {
        Arc::ptr_eq(&a.knowledge, &b.knowledge) && a.peers.iter().zip(&b.peers).all(|(p, q)| Arc::ptr_eq(p, q))
    }

    fn check_state(&self, w: &WorldState) -> Option<String> {
        if self.opts.invariants {
            if let Some(n) = self.machine.check_inv(w).first() {
                return Some(n.to_string());
            }
        }
        // one threshold-signed board per period, ever
        let mut per_period: BTreeMap<u32, usize> = BTreeMap::new();
        for (p, _) in w.published_boards(&self.cfg) {
            *per_period.entry(p).or_default() += 1;
        }
        if per_period.values().any(|&c| c > 1) {
            return Some("bb.4".into());
        }
        if self.matcher.is_some() {
            let a = abstraction(&self.cfg, w);
            if let Some(v) = check_bb_states(&self.cfg, &[a]).violations.first() {
                return Some(v.property.to_string());
            }
        }
        None
    }

    fn check_edge(&self, pre: &WorldState, t: &Transition<WorldState>) -> Option<String> {
        let matcher = self.matcher.as_ref()?;
        let first = &t.steps[0];
        let mid = if t.steps.len() == 1 {
            t.state.clone()
        } else {
            self.machine.event_def(&first.event).ok()?.apply_unchecked(pre, &first.binding)?
        };
        if let MatchVerdict::Violation { clause, .. } = matcher.match_step(pre, &first.event, &first.binding, &mid) {
            return Some(clause);
        }
        if t.steps.len() > 1 && !Arc::ptr_eq(&mid.knowledge, &t.state.knowledge) {
            // abstraction is monotone in the knowledge, so equal endpoints
            // mean every eager step is a skip
            if abstraction(&self.cfg, &mid) != abstraction(&self.cfg, &t.state) {
                return Some("ref:skip".into());
            }
        }
        let (a, b) = (abstraction(&self.cfg, pre), abstraction(&self.cfg, &t.state));
        check_bb_states(&self.cfg, &[a, b]).violations.first().map(|v| v.property.to_string())
    }

    fn check_initial(&self, w: &WorldState) -> Option<String> {
        let m = self.matcher.as_ref()?;
        (abstraction(&self.cfg, w) != m.abstract_machine().init()).then(|| "link".to_string())
    }
}

/// Turns a goal into the only check: the search stops at the first state
/// where it holds.
pub struct GoalModel<'a> {
    pub inner: &'a ProtocolModel,
    /// A state is a finding when any goal holds in it.
    pub goals: Vec<AttackGoal>,
}

impl ExploreModel for GoalModel<'_> {
    type State = WorldState;

    fn machine_name(&self) -> String {
        self.inner.machine_name()
    }

    fn initial(&self) -> Transition<WorldState> {
        self.inner.initial()
    }

    fn successors(&self, w: &WorldState) -> Vec<Transition<WorldState>> {
        self.inner.successors(w)
    }

    fn key(&self, w: &WorldState) -> Fingerprint {
        self.inner.key(w)
    }

    fn check_state(&self, w: &WorldState) -> Option<String> {
        let cfg = self.inner.config();
        self.goals.iter().find(|g| g.holds(cfg, w)).map(|g| format!("goal:{g}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn renaming_counts() {
        let cfg = ProtocolConfig::new(4, 3).with_items(&["a", "b", "c"]).unwrap().with_clash("a", "b").unwrap();
        // identity and the a/b swap
        assert_eq!(item_renamings(&cfg).len(), 2);
        let profiles = vec![vec![1], vec![0], vec![1]];
        assert_eq!(sorting_orders(&profiles), vec![vec![1, 0, 2], vec![1, 2, 0]]);
        assert_eq!(permutations(3).len(), 6);
    }

    #[test]
    fn symmetric_states_share_a_key() {
        let cfg = ProtocolConfig::new(4, 3);
        let model = ProtocolModel::new(&cfg, ProtocolOptions::full());
        let x = cfg.items[0].clone();
        let w = model.initial().state;
        let a = w.update_peer(1, |p| {
            p.items[0].insert(x.clone());
        });
        let b = w.update_peer(3, |p| {
            p.items[0].insert(x.clone());
        });
        assert_ne!(fingerprint(&a), fingerprint(&b));
        assert_eq!(model.key(&a), model.key(&b));
    }

    #[test]
    fn saturated_start_has_forged_material_only_for_corrupt_keys() {
        let cfg = ProtocolConfig::new(4, 3);
        let model = ProtocolModel::new(&cfg, ProtocolOptions::full());
        let start = model.initial();
        // nothing to pair or sign before anything is posted
        assert!(start.steps.is_empty());
        let names: Vec<String> = model.successors(&start.state).iter().map(|t| t.steps[0].event.clone()).collect();
        let kinds: BTreeSet<&str> = names.iter().map(String::as_str).collect();
        assert!(kinds.contains("post"));
        assert!(kinds.iter().all(|k| !SATURATED_EVENTS.contains(k)));
    }
}
