//! Publication-phase liveness driver.
//!
//! Liveness needs a reliable network, so here the adversary does not
//! schedule anything: a fixed round structure drives the honest events of
//! the hashed-publication machine. Every peer runs the protocol (no corrupt
//! keys); failures are modelled as peers that are absent, that stop, or
//! whose database is fixed.
//!
//! A round is one fallback exchange of databases. Before the first round and
//! after every round the optimistic exchange of signed board hashes runs; a
//! peer commits its share only when a threshold of live peers sent a hash
//! matching its own board in that same exchange. Agreement is reached when
//! a threshold of shares on one board combine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{bbprot_machine, ProtocolConfig, WorldState};
use crate::machine::{Binding, MachineDef, MachineError, Step, Trace};
use crate::message::{ItemId, KeyId, Message};

/// A peer that stops partway through the publication phase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StopFailure {
    pub peer: usize,
    /// Fallback round (1-based) in which the peer sends its database for the
    /// last time; it is silent from then on.
    pub round: usize,
    /// Peers that receive that last database.
    pub reaches: BTreeSet<usize>,
}

/// Who takes part in the publication phase, and how.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Availability {
    /// Peers silent for the whole phase.
    pub absent: BTreeSet<usize>,
    /// Peers that never merge databases they receive.
    pub fixed: BTreeSet<usize>,
    pub stop: Option<StopFailure>,
}

impl Availability {
    fn live(&self, n: usize, optimistic_after_round: usize) -> Vec<usize> {
        (1..=n)
            .filter(|j| !self.absent.contains(j))
            .filter(|j| !self.stop.as_ref().is_some_and(|s| s.peer == *j && s.round <= optimistic_after_round))
            .collect()
    }
}

impl fmt::Display for Availability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |s: &BTreeSet<usize>| s.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(",");
        write!(f, "absent={{{}}} fixed={{{}}}", list(&self.absent), list(&self.fixed))?;
        if let Some(s) = &self.stop {
            write!(f, " stop=peer{}@round{}->{{{}}}", s.peer, s.round, list(&s.reaches))?;
        }
        Ok(())
    }
}

/// Result of one publication run.
#[derive(Clone, Debug)]
pub struct PublicationOutcome {
    /// Fallback rounds used before agreement; `None` if the round budget ran
    /// out first.
    pub rounds: Option<usize>,
    pub board: Option<BTreeSet<ItemId>>,
    pub world: WorldState,
}

/// Records fired steps.
struct Driver<'a> {
    m: &'a MachineDef<WorldState>,
    trace: &'a mut Trace,
}

impl Driver<'_> {
    fn fire(&mut self, w: &WorldState, event: &str, b: Binding) -> Result<WorldState, MachineError> {
        let next = self.m.step(w, event, &b)?;
        self.trace.steps.push(Step::new(event, b));
        Ok(next)
    }

    /// Fires the step when enabled; a disabled step (usually one with
    /// nothing left to do) leaves the state as is.
    fn offer(&mut self, w: &WorldState, event: &str, b: Binding) -> Result<WorldState, MachineError> {
        match self.fire(w, event, b) {
            Err(MachineError::Disabled { .. }) => Ok(w.clone()),
            r => r,
        }
    }
}

fn jp(j: usize, p: u32) -> Binding {
    Binding::new().nat("j", j as u32).nat("p", p)
}

fn jmp(j: usize, name: &'static str, m: Message, p: u32) -> Binding {
    Binding::new().nat("j", j as u32).msg(name, m).nat("p", p)
}

/// Runs the publication phase for `period` from `world`, in which every
/// peer that takes part has already closed the period.
pub fn run_publication_schedule(
    cfg: &ProtocolConfig,
    m: &MachineDef<WorldState>,
    world: &WorldState,
    period: u32,
    schedule: &Availability,
    max_rounds: usize,
    trace: &mut Trace,
) -> Result<PublicationOutcome, MachineError> {
    let thr = cfg.threshold();
    let mut d = Driver { m, trace };
    let mut w = world.clone();
    let mut round = 0;
    loop {
        // optimistic exchange
        let live = schedule.live(cfg.n, round);
        let boards: BTreeMap<usize, BTreeSet<ItemId>> =
            live.iter().map(|&j| (j, w.peer(j).board(thr, period))).collect();
        let hash_of = |j: usize| {
            Message::sig(KeyId::Sk(j as u8), Message::pair(period, Message::hash(Message::item_set(&boards[&j]))))
        };
        for &j in &live {
            w = d.offer(&w, "c_msg8a", jp(j, period))?;
        }
        for &j in &live {
            for &k in &live {
                w = d.offer(&w, "c_msg8b", jmp(j, "m", hash_of(k), period))?;
            }
        }
        for &j in &live {
            let agreeing = live.iter().filter(|k| boards[k] == boards[&j]).count();
            if agreeing >= thr && w.peer(j).committed <= period {
                w = d.fire(&w, "c_msg6", Binding::new().nat("j", j as u32))?;
                w = d.offer(&w, "c_msg7", jp(j, period))?;
            }
        }
        let agreed = w
            .shares_by_body()
            .into_iter()
            .find(|(body, signers)| signers.len() >= thr && super::board_body(cfg, body).is_some_and(|(p, _)| p == period))
            .map(|(body, _)| body.clone());
        if let Some(body) = agreed {
            w = d.offer(&w, "c_dy2", Binding::new().msg("m", body.clone()))?;
            let board = super::board_body(cfg, &body).map(|(_, y)| y);
            return Ok(PublicationOutcome { rounds: Some(round), board, world: w });
        }
        if round == max_rounds {
            return Ok(PublicationOutcome { rounds: None, board: None, world: w });
        }

        // fallback exchange
        round += 1;
        let mut senders = live.clone();
        if let Some(s) = schedule.stop.as_ref().filter(|s| s.round == round) {
            senders.push(s.peer);
        }
        let receivers = schedule.live(cfg.n, round);
        let snapshot: Vec<(usize, Message)> = senders
            .iter()
            .map(|&s| (s, Message::set(w.peer(s).sigs[period as usize].iter().cloned())))
            .collect();
        for &s in &senders {
            w = d.offer(&w, "c_msg5a", jp(s, period))?;
        }
        for (s, db) in &snapshot {
            let reach: Vec<usize> = match &schedule.stop {
                Some(st) if st.peer == *s && st.round == round => st.reaches.iter().copied().collect(),
                _ => receivers.clone(),
            };
            for r in reach {
                if r != *s && receivers.contains(&r) && !schedule.fixed.contains(&r) {
                    w = d.offer(&w, "c_msg5b", jmp(r, "d", db.clone(), period))?;
                }
            }
        }
    }
}

/// The failure assumptions under which a round bound is claimed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Every peer is honest and live; posting users may misbehave.
    AllHonest,
    /// A threshold of peers is live; every post reached a threshold of peers
    /// and got a receipt.
    ThresholdLive,
    /// One peer has a fixed database and may stop at any point.
    StoppingFailures,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::AllHonest => "all-honest",
            Regime::ThresholdLive => "threshold-live",
            Regime::StoppingFailures => "stopping-failures",
        }
    }

    /// The claimed bound on fallback rounds, and whether it must be met
    /// exactly.
    pub fn bound(self, n: usize, t: usize) -> (usize, bool) {
        match self {
            Regime::AllHonest => (1, true),
            Regime::ThresholdLive => (1, false),
            Regime::StoppingFailures => (n - t + 1, false),
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all-honest" => Ok(Regime::AllHonest),
            "threshold-live" => Ok(Regime::ThresholdLive),
            "stopping-failures" => Ok(Regime::StoppingFailures),
            _ => Err(format!("unknown liveness regime `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LivenessParams {
    pub n: usize,
    pub t: usize,
    pub items: usize,
    /// Posting histories to generate.
    pub samples: usize,
    pub seed: u64,
}

impl LivenessParams {
    pub fn new(n: usize, t: usize) -> Self {
        LivenessParams { n, t, items: 3, samples: 50, seed: 0 }
    }

    /// Every peer honest, hashed publication, one period.
    pub fn config(&self) -> ProtocolConfig {
        let names: Vec<String> = (0..self.items).map(|i| format!("i{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        ProtocolConfig::new(self.n, self.t)
            .with_honest(self.n)
            .with_hashed_publication(true)
            .with_items(&refs)
            .expect("generated names are valid")
    }
}

#[derive(Clone, Debug)]
pub struct LivenessReport {
    pub regime: Regime,
    pub params: LivenessParams,
    pub bound: usize,
    pub exact: bool,
    pub schedules: usize,
    /// Fallback rounds used → number of schedules.
    pub histogram: BTreeMap<usize, usize>,
    /// Schedules that broke the claim, with the reason.
    pub failures: Vec<String>,
}

impl LivenessReport {
    pub fn holds(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn max_rounds(&self) -> Option<usize> {
        self.histogram.keys().next_back().copied()
    }

    pub fn render(&self) -> String {
        let p = &self.params;
        let mut s = format!(
            "regime: {}\nn: {} t: {} items: {} samples: {} seed: {}\nbound: {}{}\nschedules: {}\n",
            self.regime.name(),
            p.n,
            p.t,
            p.items,
            p.samples,
            p.seed,
            if self.exact { "exactly " } else { "at most " },
            self.bound,
            self.schedules
        );
        for (r, c) in &self.histogram {
            s.push_str(&format!("rounds {r}: {c}\n"));
        }
        for f in self.failures.iter().take(10) {
            s.push_str(&format!("failure: {f}\n"));
        }
        s.push_str(&format!("result: {}\n", if self.holds() { "bound held" } else { "bound exceeded" }));
        s
    }
}

fn random_subset<R: Rng>(rng: &mut R, peers: &[usize], min: usize) -> BTreeSet<usize> {
    let size = rng.gen_range(min..=peers.len());
    peers.choose_multiple(rng, size).copied().collect()
}

/// Posting phase in which each item reaches a random subset of peers and
/// signatures are passed on at random. Nothing is receipted.
fn scattered_posting<R: Rng>(
    cfg: &ProtocolConfig,
    d: &mut Driver<'_>,
    rng: &mut R,
) -> Result<WorldState, MachineError> {
    let peers: Vec<usize> = (1..=cfg.n).collect();
    let mut w = d.m.init();
    for x in &cfg.items {
        let jx = |j: usize| Binding::new().nat("j", j as u32).msg("x", Message::item(x));
        w = d.fire(&w, "post", Binding::new().msg("x", Message::item(x)))?;
        let signers = random_subset(rng, &peers, 1);
        for &j in &signers {
            w = d.fire(&w, "c_msg1", jx(j))?;
            w = d.fire(&w, "c_msg2a", jx(j))?;
        }
        for &j in &peers {
            for &k in signers.iter().filter(|&&k| k != j) {
                if rng.gen_bool(0.5) {
                    let s = Message::signed_item(KeyId::Sk(k as u8), 0, x);
                    w = d.offer(&w, "c_msg2b", Binding::new().nat("j", j as u32).msg("m", s))?;
                }
            }
        }
    }
    Ok(w)
}

/// Posting phase in which each item reaches a threshold set of peers that
/// exchange signatures and issue a receipt; outsiders pick up signatures at
/// random.
fn receipted_posting<R: Rng>(
    cfg: &ProtocolConfig,
    d: &mut Driver<'_>,
    rng: &mut R,
) -> Result<WorldState, MachineError> {
    let peers: Vec<usize> = (1..=cfg.n).collect();
    let thr = cfg.threshold();
    let mut w = d.m.init();
    for x in &cfg.items {
        let jx = |j: usize| Binding::new().nat("j", j as u32).msg("x", Message::item(x));
        let sig = |k: usize| Message::signed_item(KeyId::Sk(k as u8), 0, x);
        w = d.fire(&w, "post", Binding::new().msg("x", Message::item(x)))?;
        let group = random_subset(rng, &peers, thr);
        for &j in &group {
            w = d.fire(&w, "c_msg1", jx(j))?;
            w = d.fire(&w, "c_msg2a", jx(j))?;
        }
        for &j in &peers {
            for &k in group.iter().filter(|&&k| k != j) {
                if group.contains(&j) || rng.gen_bool(0.5) {
                    w = d.offer(&w, "c_msg2b", Binding::new().nat("j", j as u32).msg("m", sig(k)))?;
                }
            }
        }
        for &j in &group {
            w = d.fire(&w, "c_msg3", jx(j))?;
        }
        w = d.fire(&w, "c_dy2", Binding::new().msg("m", Message::pair(0, Message::item(x))))?;
    }
    Ok(w)
}

fn close_period(d: &mut Driver<'_>, w: WorldState, peers: impl IntoIterator<Item = usize>) -> Result<WorldState, MachineError> {
    let mut w = w;
    for j in peers {
        w = d.fire(&w, "c_msg4", Binding::new().nat("j", j as u32))?;
    }
    Ok(w)
}

fn divergent(cfg: &ProtocolConfig, w: &WorldState, live: &[usize]) -> bool {
    let boards: Vec<_> = live.iter().map(|&j| w.peer(j).board(cfg.threshold(), 0)).collect();
    boards.iter().all(|b| boards.iter().filter(|c| *c == b).count() < cfg.threshold())
}

/// Generates schedules for `regime` and checks its round bound on each.
pub fn liveness_run(regime: Regime, params: &LivenessParams) -> Result<LivenessReport, MachineError> {
    liveness_run_with(regime, params, None)
}

impl Availability {
    /// Checks peer numbers against `1..=n`.
    pub fn validate(&self, n: usize) -> Result<(), String> {
        let stop = self.stop.iter().flat_map(|s| std::iter::once(s.peer).chain(s.reaches.iter().copied()));
        match self.absent.iter().chain(&self.fixed).copied().chain(stop).find(|j| !(1..=n).contains(j)) {
            Some(j) => Err(format!("peer {j} is outside 1..={n}")),
            None if self.stop.as_ref().is_some_and(|s| s.round == 0) => Err("stop round is 1-based".into()),
            None => Ok(()),
        }
    }
}

/// Like [`liveness_run`], but with `schedule` every sample runs under that
/// one availability schedule instead of the regime's generated ones.
pub fn liveness_run_with(
    regime: Regime,
    params: &LivenessParams,
    schedule: Option<&Availability>,
) -> Result<LivenessReport, MachineError> {
    let cfg = params.config();
    let m = bbprot_machine(&cfg);
    let (bound, exact) = regime.bound(params.n, params.t);
    let mut report = LivenessReport {
        regime,
        params: params.clone(),
        bound,
        exact,
        schedules: 0,
        histogram: BTreeMap::new(),
        failures: Vec::new(),
    };
    let peers: Vec<usize> = (1..=cfg.n).collect();
    let max_rounds = cfg.n + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let record = |report: &mut LivenessReport, label: String, out: &PublicationOutcome, extra: Option<String>| {
        report.schedules += 1;
        match out.rounds {
            None => report.failures.push(format!("{label}: no agreement within {max_rounds} rounds")),
            Some(r) => {
                *report.histogram.entry(r).or_default() += 1;
                if r > bound || (exact && r != bound) {
                    report.failures.push(format!("{label}: agreement after {r} rounds"));
                }
            }
        }
        if let Some(e) = extra {
            report.failures.push(format!("{label}: {e}"));
        }
    };

    let mut sample = 0;
    let mut attempts = 0;
    while sample < params.samples {
        attempts += 1;
        if attempts > params.samples * 100 {
            break;
        }
        let mut trace = Trace::new(m.name.clone());
        let mut d = Driver { m: &m, trace: &mut trace };
        if let Some(s) = schedule {
            let w = match regime {
                Regime::ThresholdLive => receipted_posting(&cfg, &mut d, &mut rng)?,
                _ => scattered_posting(&cfg, &mut d, &mut rng)?,
            };
            let w = close_period(&mut d, w, peers.iter().copied().filter(|j| !s.absent.contains(j)))?;
            if regime == Regime::AllHonest && !divergent(&cfg, &w, &peers) {
                continue;
            }
            let out = run_publication_schedule(&cfg, &m, &w, 0, s, max_rounds, &mut trace)?;
            let extra = match (&out.board, regime) {
                (Some(b), Regime::ThresholdLive) => {
                    let missing: Vec<String> =
                        w.receipts().into_iter().filter(|(_, x)| !b.contains(x)).map(|(_, x)| x.to_string()).collect();
                    (!missing.is_empty()).then(|| format!("receipted items missing from board: {}", missing.join(",")))
                }
                _ => None,
            };
            record(&mut report, format!("sample {sample} {s}"), &out, extra);
            sample += 1;
            continue;
        }
        match regime {
            Regime::AllHonest => {
                let w = scattered_posting(&cfg, &mut d, &mut rng)?;
                let w = close_period(&mut d, w, peers.clone())?;
                // only partitions that defeat the first optimistic exchange
                if !divergent(&cfg, &w, &peers) {
                    continue;
                }
                let out = run_publication_schedule(&cfg, &m, &w, 0, &Availability::default(), max_rounds, &mut trace)?;
                record(&mut report, format!("sample {sample}"), &out, None);
            }
            Regime::ThresholdLive => {
                let w = receipted_posting(&cfg, &mut d, &mut rng)?;
                let live = random_subset(&mut rng, &peers, cfg.threshold());
                let w = close_period(&mut d, w, live.iter().copied())?;
                let schedule = Availability {
                    absent: peers.iter().copied().filter(|j| !live.contains(j)).collect(),
                    ..Availability::default()
                };
                let out = run_publication_schedule(&cfg, &m, &w, 0, &schedule, max_rounds, &mut trace)?;
                let missing: Vec<String> = match &out.board {
                    Some(b) => w.receipts().into_iter().filter(|(_, x)| !b.contains(x)).map(|(_, x)| x.to_string()).collect(),
                    None => Vec::new(),
                };
                let extra = (!missing.is_empty()).then(|| format!("receipted items missing from board: {}", missing.join(",")));
                record(&mut report, format!("sample {sample} {schedule}"), &out, extra);
            }
            Regime::StoppingFailures => {
                let w = scattered_posting(&cfg, &mut d, &mut rng)?;
                let w = close_period(&mut d, w, peers.clone())?;
                // every faulty peer, stop round and set of last receivers
                for &f in &peers {
                    let others: Vec<usize> = peers.iter().copied().filter(|&j| j != f).collect();
                    let mut schedules = vec![Availability { fixed: [f].into(), ..Availability::default() }];
                    for round in 1..=max_rounds {
                        for mask in 0u32..1 << others.len() {
                            let reaches = (0..others.len()).filter(|i| mask & (1 << i) != 0).map(|i| others[i]).collect();
                            schedules.push(Availability {
                                fixed: [f].into(),
                                stop: Some(StopFailure { peer: f, round, reaches }),
                                ..Availability::default()
                            });
                        }
                    }
                    for s in schedules {
                        let mut t2 = Trace::new(m.name.clone());
                        let out = run_publication_schedule(&cfg, &m, &w, 0, &s, max_rounds, &mut t2)?;
                        record(&mut report, format!("sample {sample} {s}"), &out, None);
                    }
                }
            }
        }
        sample += 1;
    }
    if sample < params.samples {
        report.failures.push(format!("only {sample} of {} usable posting histories generated", params.samples));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(s: &str) -> ItemId {
        ItemId::new(s).unwrap()
    }

    #[test]
    fn agreeing_peers_need_no_fallback() {
        let params = LivenessParams { items: 1, ..LivenessParams::new(4, 3) };
        let cfg = params.config();
        let m = bbprot_machine(&cfg);
        let mut trace = Trace::new(m.name.clone());
        let mut d = Driver { m: &m, trace: &mut trace };
        let w = close_period(&mut d, m.init(), 1..=4).unwrap();
        let out = run_publication_schedule(&cfg, &m, &w, 0, &Availability::default(), 3, &mut trace).unwrap();
        assert_eq!(out.rounds, Some(0));
        assert_eq!(out.board, Some(BTreeSet::new()));
    }

    #[test]
    fn one_fallback_round_merges_split_databases() {
        let params = LivenessParams { items: 1, ..LivenessParams::new(4, 3) };
        let cfg = params.config();
        let m = bbprot_machine(&cfg);
        let x = item("i0");
        let mut trace = Trace::new(m.name.clone());
        let mut d = Driver { m: &m, trace: &mut trace };
        let jx = |j: u32| Binding::new().nat("j", j).msg("x", Message::item(&x));
        let mut w = d.fire(&m.init(), "post", Binding::new().msg("x", Message::item(&x))).unwrap();
        for j in 1..=3 {
            w = d.fire(&w, "c_msg1", jx(j)).unwrap();
            w = d.fire(&w, "c_msg2a", jx(j)).unwrap();
        }
        // peers 1 and 2 see all three signatures, 3 and 4 none of the others
        for j in 1..=2u32 {
            for k in (1..=3u8).filter(|k| *k as u32 != j) {
                let s = Message::signed_item(KeyId::Sk(k), 0, &x);
                w = d.fire(&w, "c_msg2b", Binding::new().nat("j", j).msg("m", s)).unwrap();
            }
        }
        let w = close_period(&mut d, w, 1..=4).unwrap();
        assert!(divergent(&cfg, &w, &[1, 2, 3, 4]));
        let out = run_publication_schedule(&cfg, &m, &w, 0, &Availability::default(), 3, &mut trace).unwrap();
        assert_eq!(out.rounds, Some(1));
        assert_eq!(out.board, Some([x].into()));
        // the recorded run replays on the machine
        crate::machine::replay(&m, &trace).unwrap();
    }

    #[test]
    fn all_regimes_meet_their_bounds_on_a_few_samples() {
        for (regime, samples) in [(Regime::AllHonest, 5), (Regime::ThresholdLive, 5), (Regime::StoppingFailures, 1)] {
            let params = LivenessParams { samples, seed: 3, ..LivenessParams::new(4, 3) };
            let r = liveness_run(regime, &params).unwrap();
            assert!(r.holds(), "{}", r.render());
        }
    }

    #[test]
    fn a_fixed_schedule_replaces_the_generated_ones() {
        let params = LivenessParams { samples: 10, ..LivenessParams::new(4, 3) };
        let s = Availability {
            fixed: [1].into(),
            stop: Some(StopFailure { peer: 1, round: 1, reaches: [2].into() }),
            ..Availability::default()
        };
        let r = liveness_run_with(Regime::StoppingFailures, &params, Some(&s)).unwrap();
        assert_eq!(r.schedules, 10);
        assert!(r.holds(), "{}", r.render());
        assert!(Availability { absent: [5].into(), ..Availability::default() }.validate(4).is_err());
    }
}
