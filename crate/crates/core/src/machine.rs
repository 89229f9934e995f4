//! Guarded-event machines.
//!
//! A machine is a state initializer, a list of named invariants and a list of
//! events. Each event enumerates its candidate parameter bindings for a state,
//! filters them through a guard and maps (state, binding) to a successor with a
//! deterministic update. Relational bodies are expressed by widening the
//! binding domain, never by making the update nondeterministic.

use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::message::{parse_prefix, Message, MessageError};

/// A parameter value: a natural number (peer index, period) or a term.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Nat(u32),
    Msg(Message),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Nat(n) => write!(f, "{n}"),
            Value::Msg(m) => write!(f, "{m}"),
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Named parameter values, in the event's declared parameter order.
#[derive(Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Binding(Vec<(&'static str, Value)>);

impl Binding {
    pub fn new() -> Self {
        Binding(Vec::new())
    }

    pub fn with(mut self, name: &'static str, value: Value) -> Self {
        self.0.push((name, value));
        self
    }

    pub fn nat(self, name: &'static str, n: u32) -> Self {
        self.with(name, Value::Nat(n))
    }

    pub fn msg(self, name: &'static str, m: Message) -> Self {
        self.with(name, Value::Msg(m))
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.iter().find(|(n, _)| *n == name).map(|(_, v)| v)
    }

    pub fn get_nat(&self, name: &str) -> Option<u32> {
        match self.get(name)? {
            Value::Nat(n) => Some(*n),
            Value::Msg(_) => None,
        }
    }

    pub fn get_msg(&self, name: &str) -> Option<&Message> {
        match self.get(name)? {
            Value::Msg(m) => Some(m),
            Value::Nat(_) => None,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Value)> {
        self.0.iter().map(|(n, v)| (*n, v))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (n, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{n}={v}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{self}]")
    }
}

type DomainFn<S> = Box<dyn Fn(&S) -> Vec<Binding> + Send + Sync>;
type GuardFn<S> = Box<dyn Fn(&S, &Binding) -> bool + Send + Sync>;
type UpdateFn<S> = Box<dyn Fn(&S, &Binding) -> Option<S> + Send + Sync>;
type PredFn<S> = Box<dyn Fn(&S) -> bool + Send + Sync>;

pub struct EventDef<S> {
    pub name: &'static str,
    pub params: &'static [&'static str],
    domain: DomainFn<S>,
    guard: GuardFn<S>,
    update: UpdateFn<S>,
}

impl<S> EventDef<S> {
    /// `update` returns `None` when the binding is ill-typed for the event.
    pub fn new(
        name: &'static str,
        params: &'static [&'static str],
        domain: impl Fn(&S) -> Vec<Binding> + Send + Sync + 'static,
        guard: impl Fn(&S, &Binding) -> bool + Send + Sync + 'static,
        update: impl Fn(&S, &Binding) -> Option<S> + Send + Sync + 'static,
    ) -> Self {
        EventDef { name, params, domain: Box::new(domain), guard: Box::new(guard), update: Box::new(update) }
    }

    pub fn domain(&self, state: &S) -> Vec<Binding> {
        (self.domain)(state)
    }

    pub fn guard(&self, state: &S, binding: &Binding) -> bool {
        (self.guard)(state, binding)
    }

    /// Applies the update without consulting the guard.
    pub fn apply_unchecked(&self, state: &S, binding: &Binding) -> Option<S> {
        (self.update)(state, binding)
    }
}

pub struct Invariant<S> {
    pub name: &'static str,
    holds: PredFn<S>,
}

impl<S> Invariant<S> {
    pub fn new(name: &'static str, holds: impl Fn(&S) -> bool + Send + Sync + 'static) -> Self {
        Invariant { name, holds: Box::new(holds) }
    }

    pub fn holds(&self, state: &S) -> bool {
        (self.holds)(state)
    }
}

pub struct MachineDef<S> {
    pub name: String,
    init: Box<dyn Fn() -> S + Send + Sync>,
    pub invariants: Vec<Invariant<S>>,
    pub events: Vec<EventDef<S>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MachineError {
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
    #[error("event `{event}` is not enabled for binding [{binding}]")]
    Disabled { event: String, binding: String },
    #[error("event `{event}` has no defined update for binding [{binding}]")]
    BadBinding { event: String, binding: String },
    #[error("replay mismatch at step {index}: {detail}")]
    ReplayMismatch { index: usize, detail: String },
    #[error("invariant(s) {names:?} violated after step {index}")]
    InvariantViolated { index: usize, names: Vec<&'static str> },
    #[error("trace line {line}: {msg}")]
    TraceSyntax { line: usize, msg: String },
}

impl<S: Clone> MachineDef<S> {
    pub fn new(name: impl Into<String>, init: impl Fn() -> S + Send + Sync + 'static) -> Self {
        MachineDef { name: name.into(), init: Box::new(init), invariants: Vec::new(), events: Vec::new() }
    }

    pub fn invariant(mut self, inv: Invariant<S>) -> Self {
        self.invariants.push(inv);
        self
    }

    pub fn event(mut self, ev: EventDef<S>) -> Self {
        self.events.push(ev);
        self
    }

    pub fn init(&self) -> S {
        (self.init)()
    }

    pub fn event_index(&self, name: &str) -> Option<usize> {
        self.events.iter().position(|e| e.name == name)
    }

    pub fn event_def(&self, name: &str) -> Result<&EventDef<S>, MachineError> {
        self.events
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| MachineError::UnknownEvent(name.to_string()))
    }

    /// Enabled `(event index, binding)` pairs in declaration order, bindings
    /// sorted canonically within each event.
    pub fn enabled_indexed(&self, state: &S) -> Vec<(usize, Binding)> {
        let mut out = Vec::new();
        for (i, ev) in self.events.iter().enumerate() {
            let mut bs: Vec<Binding> = ev.domain(state).into_iter().filter(|b| ev.guard(state, b)).collect();
            bs.sort();
            bs.dedup();
            out.extend(bs.into_iter().map(|b| (i, b)));
        }
        out
    }

    pub fn enabled(&self, state: &S) -> Vec<(&'static str, Binding)> {
        self.enabled_indexed(state)
            .into_iter()
            .map(|(i, b)| (self.events[i].name, b))
            .collect()
    }

    /// Fires an event. The binding must be in the event's domain and satisfy
    /// its guard.
    pub fn step(&self, state: &S, event: &str, binding: &Binding) -> Result<S, MachineError> {
        let ev = self.event_def(event)?;
        let disabled = || MachineError::Disabled { event: event.to_string(), binding: binding.to_string() };
        if !ev.guard(state, binding) || !ev.domain(state).contains(binding) {
            return Err(disabled());
        }
        ev.apply_unchecked(state, binding).ok_or_else(|| MachineError::BadBinding {
            event: event.to_string(),
            binding: binding.to_string(),
        })
    }

    /// Names of the invariants that fail on `state`.
    pub fn check_inv(&self, state: &S) -> Vec<&'static str> {
        self.invariants.iter().filter(|inv| !inv.holds(state)).map(|inv| inv.name).collect()
    }
}

/// One fired event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub event: String,
    pub binding: Binding,
    /// Fingerprint of the state the step started from.
    pub pre: Option<Fingerprint>,
    /// Fingerprint of the state the step produced.
    pub post: Option<Fingerprint>,
}

impl Step {
    pub fn new(event: impl Into<String>, binding: Binding) -> Self {
        Step { event: event.into(), binding, pre: None, post: None }
    }
}

/// A replayable sequence of steps from a machine's initial state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub machine: String,
    pub steps: Vec<Step>,
}

impl Trace {
    pub fn new(machine: impl Into<String>) -> Self {
        Trace { machine: machine.into(), steps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// 128-bit digest of a state's canonical encoding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fingerprint(pub u128);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Fingerprint of any canonically hashable state. Two fixed-key SipHash
/// passes with different prefixes; stable across runs.
#[allow(deprecated)]
pub fn fingerprint<S: Hash>(state: &S) -> Fingerprint {
    let mut lo = std::hash::SipHasher::new_with_keys(0x5742_425f_6d6f_6465, 0x6c5f_6669_6e67_6572);
    state.hash(&mut lo);
    let mut hi = std::hash::SipHasher::new_with_keys(0x7072_696e_745f_6869, 0x6768_5f77_6f72_6473);
    state.hash(&mut hi);
    Fingerprint(((hi.finish() as u128) << 64) | lo.finish() as u128)
}

/// Replays a trace from the initial state, checking the invariants after
/// every step and, where recorded, the post-state fingerprint.
pub fn replay<S: Clone + Hash>(machine: &MachineDef<S>, trace: &Trace) -> Result<S, MachineError> {
    let mut state = machine.init();
    let bad = machine.check_inv(&state);
    if !bad.is_empty() {
        return Err(MachineError::InvariantViolated { index: 0, names: bad });
    }
    for (i, st) in trace.steps.iter().enumerate() {
        let next = machine.step(&state, &st.event, &st.binding).map_err(|e| MachineError::ReplayMismatch {
            index: i,
            detail: e.to_string(),
        })?;
        if let Some(expected) = st.post {
            let got = fingerprint(&next);
            if got != expected {
                return Err(MachineError::ReplayMismatch {
                    index: i,
                    detail: format!("post-state {got} differs from recorded {expected}"),
                });
            }
        }
        let bad = machine.check_inv(&next);
        if !bad.is_empty() {
            return Err(MachineError::InvariantViolated { index: i, names: bad });
        }
        state = next;
    }
    Ok(state)
}

/// Like [`replay`] but without invariant checks; used for machines whose
/// invariants are not claimed (weakened configurations).
pub fn replay_unchecked<S: Clone + Hash>(machine: &MachineDef<S>, trace: &Trace) -> Result<Vec<S>, MachineError> {
    let mut states = vec![machine.init()];
    for (i, st) in trace.steps.iter().enumerate() {
        let cur = states.last().expect("non-empty");
        let next = machine.step(cur, &st.event, &st.binding).map_err(|e| MachineError::ReplayMismatch {
            index: i,
            detail: e.to_string(),
        })?;
        if let Some(expected) = st.post {
            if fingerprint(&next) != expected {
                return Err(MachineError::ReplayMismatch {
                    index: i,
                    detail: format!("post-state {} differs from recorded {expected}", fingerprint(&next)),
                });
            }
        }
        states.push(next);
    }
    Ok(states)
}

// Trace text format:
//
//   # wbb-trace v1
//   # machine <name>
//   <event> <param>=<value> ... [@<post-fingerprint>]
//
// Values are decimal naturals or message terms. Lines starting with `#` are
// comments.

pub const TRACE_HEADER: &str = "# wbb-trace v1";

pub fn format_trace(trace: &Trace) -> String {
    let mut out = String::new();
    out.push_str(TRACE_HEADER);
    out.push('\n');
    out.push_str(&format!("# machine {}\n", trace.machine));
    for st in &trace.steps {
        out.push_str(&format_step(st));
        out.push('\n');
    }
    out
}

pub fn format_step(st: &Step) -> String {
    let mut line = st.event.clone();
    if !st.binding.is_empty() {
        line.push(' ');
        line.push_str(&st.binding.to_string());
    }
    if let Some(fp) = st.post {
        line.push_str(&format!(" @{fp}"));
    }
    line
}

/// Parses a trace. Parameter names are resolved against the machine's event
/// declarations, so unknown events and parameters are rejected here.
pub fn parse_trace<S: Clone>(machine: &MachineDef<S>, text: &str) -> Result<Trace, MachineError> {
    let mut trace = Trace::new(machine.name.clone());
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(name) = rest.trim().strip_prefix("machine ") {
                trace.machine = name.trim().to_string();
            }
            continue;
        }
        let step = parse_step(machine, line).map_err(|msg| MachineError::TraceSyntax { line: lineno + 1, msg })?;
        trace.steps.push(step);
    }
    Ok(trace)
}

pub fn parse_step<S: Clone>(machine: &MachineDef<S>, line: &str) -> Result<Step, String> {
    let line = line.trim();
    let name_len = line.find(char::is_whitespace).unwrap_or(line.len());
    let event = &line[..name_len];
    let def = machine.event_def(event).map_err(|e| e.to_string())?;
    let mut rest = line[name_len..].trim_start();
    let mut binding = Binding::new();
    let mut post = None;
    while !rest.is_empty() {
        if let Some(hex) = rest.strip_prefix('@') {
            let hex = hex.trim();
            let v = u128::from_str_radix(hex, 16).map_err(|_| format!("bad fingerprint `{hex}`"))?;
            post = Some(Fingerprint(v));
            break;
        }
        let eq = rest.find('=').ok_or_else(|| format!("expected `name=value` at `{rest}`"))?;
        let pname = rest[..eq].trim();
        let pname: &'static str = def
            .params
            .iter()
            .copied()
            .find(|p| *p == pname)
            .ok_or_else(|| format!("event `{event}` has no parameter `{pname}`"))?;
        let after = &rest[eq + 1..];
        let digits = after.find(|c: char| !c.is_ascii_digit()).unwrap_or(after.len());
        let (value, used) = if digits > 0 {
            let n = after[..digits].parse().map_err(|_| "number out of range".to_string())?;
            (Value::Nat(n), digits)
        } else {
            let (m, used) = parse_prefix(after).map_err(|e: MessageError| e.to_string())?;
            (Value::Msg(m), used)
        };
        if binding.get(pname).is_some() {
            return Err(format!("parameter `{pname}` given twice"));
        }
        binding = binding.with(pname, value);
        rest = after[used..].trim_start();
    }
    // bindings compare in declared parameter order
    let mut ordered = Binding::new();
    for p in def.params {
        if let Some(v) = binding.get(p) {
            ordered = ordered.with(p, v.clone());
        }
    }
    Ok(Step { event: event.to_string(), binding: ordered, pre: None, post })
}

#[cfg(test)]
mod tests {
    use super::*;

    // A counter that can be bumped by 1 or 2 while below a bound.
    fn counter(limit: u32) -> MachineDef<u32> {
        MachineDef::new("counter", || 0)
            .invariant(Invariant::new("bounded", move |s: &u32| *s <= limit + 1))
            .event(EventDef::new(
                "bump",
                &["by"],
                |_| vec![Binding::new().nat("by", 2), Binding::new().nat("by", 1)],
                move |s, b| b.get_nat("by").is_some_and(|d| *s + d <= limit),
                |s, b| Some(*s + b.get_nat("by")?),
            ))
            .event(EventDef::new("never", &[], |_| vec![Binding::new()], |_, _| false, |s, _| Some(*s)))
    }

    #[test]
    fn enabled_is_sorted_and_guarded() {
        let m = counter(3);
        let en = m.enabled(&0);
        assert_eq!(en.len(), 2);
        assert_eq!(en[0].1.get_nat("by"), Some(1));
        assert!(m.enabled(&3).is_empty());
    }

    #[test]
    fn step_rejects_disabled_and_unknown() {
        let m = counter(3);
        let b = Binding::new().nat("by", 2);
        assert_eq!(m.step(&0, "bump", &b).unwrap(), 2);
        assert!(matches!(m.step(&2, "bump", &b), Err(MachineError::Disabled { .. })));
        assert!(matches!(m.step(&0, "nope", &b), Err(MachineError::UnknownEvent(_))));
        // outside the domain even though the guard would accept it
        let b0 = Binding::new().nat("by", 0);
        assert!(m.step(&0, "bump", &b0).is_err());
    }

    #[test]
    fn replay_checks_fingerprints() {
        let m = counter(3);
        let mut t = Trace::new("counter");
        let mut st = Step::new("bump", Binding::new().nat("by", 1));
        st.post = Some(fingerprint(&1u32));
        t.steps.push(st);
        assert_eq!(replay(&m, &t).unwrap(), 1);
        assert_eq!(replay(&m, &Trace::new("counter")).unwrap(), 0);
        t.steps[0].binding = Binding::new().nat("by", 2);
        assert!(matches!(replay(&m, &t), Err(MachineError::ReplayMismatch { index: 0, .. })));
    }

    #[test]
    fn trace_text_round_trip() {
        let m = counter(3);
        let mut t = Trace::new("counter");
        let mut st = Step::new("bump", Binding::new().nat("by", 1));
        st.post = Some(fingerprint(&1u32));
        t.steps.push(st);
        t.steps.push(Step::new("bump", Binding::new().nat("by", 2)));
        let text = format_trace(&t);
        assert_eq!(parse_trace(&m, &text).unwrap(), t);
        assert!(parse_trace(&m, "bump size=1").is_err());
        assert!(matches!(parse_trace(&m, "\nfly"), Err(MachineError::TraceSyntax { line: 2, .. })));
    }
}
