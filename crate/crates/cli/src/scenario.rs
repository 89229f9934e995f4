//! Scenario files.
//!
//! A scenario is a TOML document whose first line is the version header
//! `# wbb-scenario v1`:
//!
//! ```toml
//! # wbb-scenario v1
//! name = "attack_noround2"
//!
//! [config]
//! n = 4
//! t = 3
//! items = ["x"]
//! round2 = false
//!
//! [bounds]
//! max_depth = 25
//!
//! [mode]
//! kind = "attack"
//! goal = "receipt-without-publication"
//!
//! [output]
//! dir = "out"
//! ```
//!
//! `[config]` keys: `n`, `t`, `honest`, `threshold_override`, `periods`,
//! `items`, `clash` (list of pairs), `round2`, `clash_guard`,
//! `hashed_publication`.
//!
//! `[bounds]` keys: `max_depth`, `mode` (`exhaustive` | `randomized`),
//! `seed`, `samples`, `max_states`.
//!
//! `[mode]` keys by `kind`:
//! - `script`: `steps` (trace lines), `expect` (`ok` | `violation`),
//!   `clause`, `receipts` (items that must end up receipted);
//! - `explore`: `machine` (`bbprot` | `bbspec`), `expect` (`ok` | `violation`);
//! - `attack`: `goal`, `expect` (`attack` | `none`);
//! - `liveness`: `regime`, `expect` (`holds` | `fails`).
//!
//! `[availability]` (liveness only, optional) fixes one schedule for every
//! sample instead of the regime's generated ones: `absent` and `fixed` (peer
//! lists), and `stop = { peer, round, reaches }` for a peer that stops after
//! sending its database to `reaches` in fallback round `round`.
//!
//! `[output]` keys: `dir`.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;
use wbb_core::explore::{AttackGoal, ExploreBounds, ExploreMode};
use wbb_core::machine::{parse_step, Step, Value};
use wbb_core::message::{ItemId, Message};
use wbb_core::protocol::liveness::{Availability, Regime, StopFailure};
use wbb_core::protocol::{bbprot_machine, ConfigError, ProtocolConfig};

pub const SCENARIO_HEADER: &str = "# wbb-scenario v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    At { line: usize, msg: String },
}

impl ScenarioError {
    pub fn line(&self) -> usize {
        match self {
            ScenarioError::At { line, .. } => *line,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    description: Option<String>,
    config: Spanned<RawConfig>,
    #[serde(default)]
    bounds: RawBounds,
    mode: Spanned<RawMode>,
    availability: Option<Spanned<RawAvailability>>,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAvailability {
    #[serde(default)]
    absent: BTreeSet<usize>,
    #[serde(default)]
    fixed: BTreeSet<usize>,
    stop: Option<RawStop>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStop {
    peer: usize,
    round: usize,
    #[serde(default)]
    reaches: BTreeSet<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n: Spanned<i64>,
    t: Spanned<i64>,
    honest: Option<Spanned<i64>>,
    threshold_override: Option<Spanned<i64>>,
    periods: Option<Spanned<i64>>,
    items: Option<Spanned<Vec<String>>>,
    clash: Option<Spanned<Vec<(String, String)>>>,
    round2: Option<bool>,
    clash_guard: Option<bool>,
    hashed_publication: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBounds {
    max_depth: Option<Spanned<i64>>,
    mode: Option<Spanned<String>>,
    seed: Option<u64>,
    samples: Option<Spanned<i64>>,
    max_states: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMode {
    kind: Spanned<String>,
    steps: Option<Vec<Spanned<String>>>,
    expect: Option<Spanned<String>>,
    clause: Option<String>,
    receipts: Option<Spanned<Vec<String>>>,
    machine: Option<Spanned<String>>,
    goal: Option<Spanned<String>>,
    regime: Option<Spanned<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExploreTarget {
    Protocol,
    Spec,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mode {
    Script {
        steps: Vec<Step>,
        /// `true` when the run must pass the simulation check.
        expect_ok: bool,
        /// Clause the failing run must name.
        clause: Option<String>,
        receipts: BTreeSet<ItemId>,
    },
    Explore { target: ExploreTarget, expect_ok: bool },
    Attack { goal: AttackGoal, expect_found: bool },
    Liveness { regime: Regime, expect_holds: bool, schedule: Option<Availability> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: Option<String>,
    pub config: ProtocolConfig,
    pub bounds: ExploreBounds,
    pub mode: Mode,
    pub output_dir: Option<PathBuf>,
}

/// 1-based line of byte offset `pos`.
fn line_of(src: &str, pos: usize) -> usize {
    src[..pos.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

struct Ctx<'a> {
    src: &'a str,
}

impl Ctx<'_> {
    fn err(&self, span: Range<usize>, msg: impl Into<String>) -> ScenarioError {
        ScenarioError::At { line: line_of(self.src, span.start), msg: msg.into() }
    }

    fn count(&self, v: &Spanned<i64>, what: &str, min: i64) -> Result<usize, ScenarioError> {
        let n = *v.get_ref();
        if n < min {
            return Err(self.err(v.span(), format!("{what} must be at least {min}, got {n}")));
        }
        Ok(n as usize)
    }
}

impl Scenario {
    pub fn parse(src: &str) -> Result<Scenario, ScenarioError> {
        let first = src.lines().next().unwrap_or("").trim_end();
        if first != SCENARIO_HEADER {
            return Err(ScenarioError::At { line: 1, msg: format!("expected header `{SCENARIO_HEADER}`") });
        }
        let raw: RawScenario = toml::from_str(src).map_err(|e| ScenarioError::At {
            line: e.span().map_or(1, |s| line_of(src, s.start)),
            msg: e.message().to_string(),
        })?;
        let cx = Ctx { src };
        let config = build_config(&cx, &raw.config)?;
        let bounds = build_bounds(&cx, &raw.bounds)?;
        let mut mode = build_mode(&cx, &config, &raw.mode)?;
        if let Some(a) = &raw.availability {
            let Mode::Liveness { schedule, .. } = &mut mode else {
                return Err(cx.err(a.span(), "[availability] only applies to liveness mode"));
            };
            let r = a.get_ref();
            let s = Availability {
                absent: r.absent.clone(),
                fixed: r.fixed.clone(),
                stop: r.stop.as_ref().map(|s| StopFailure { peer: s.peer, round: s.round, reaches: s.reaches.clone() }),
            };
            s.validate(config.n).map_err(|e| cx.err(a.span(), e))?;
            *schedule = Some(s);
        }
        Ok(Scenario {
            name: raw.name.unwrap_or_else(|| "scenario".to_string()),
            description: raw.description,
            config,
            bounds,
            mode,
            output_dir: raw.output.dir.map(PathBuf::from),
        })
    }
}

fn build_config(cx: &Ctx<'_>, raw: &Spanned<RawConfig>) -> Result<ProtocolConfig, ScenarioError> {
    let c = raw.get_ref();
    let n = cx.count(&c.n, "n", 1)?;
    let t = cx.count(&c.t, "t", 1)?;
    let mut cfg = ProtocolConfig::new(n, t);
    if let Some(h) = &c.honest {
        cfg = cfg.with_honest(cx.count(h, "honest", 1)?);
    }
    if let Some(o) = &c.threshold_override {
        cfg = cfg.with_threshold_override(cx.count(o, "threshold_override", 1)?);
    }
    if let Some(p) = &c.periods {
        cfg = cfg.with_periods(cx.count(p, "periods", 1)? as u32);
    }
    if let Some(items) = &c.items {
        let names: Vec<&str> = items.get_ref().iter().map(String::as_str).collect();
        cfg = cfg.with_items(&names).map_err(|e| cx.err(items.span(), e.to_string()))?;
    }
    if let Some(clash) = &c.clash {
        for (a, b) in clash.get_ref() {
            cfg = cfg.with_clash(a, b).map_err(|e| cx.err(clash.span(), e.to_string()))?;
        }
    }
    cfg = cfg
        .with_round2(c.round2.unwrap_or(true))
        .with_clash_guard(c.clash_guard.unwrap_or(true))
        .with_hashed_publication(c.hashed_publication.unwrap_or(false));
    cfg.validate().map_err(|e| {
        let span = match &e {
            ConfigError::NoPeers | ConfigError::TooManyPeers(_) => c.n.span(),
            ConfigError::HonestRange { .. } => c.honest.as_ref().map_or(c.n.span(), |h| h.span()),
            ConfigError::UnknownClashItem(_) => c.clash.as_ref().map_or(raw.span(), |v| v.span()),
            ConfigError::NoPeriods => c.periods.as_ref().map_or(raw.span(), |v| v.span()),
            _ => c.threshold_override.as_ref().map_or(c.t.span(), |o| o.span()),
        };
        cx.err(span, e.to_string())
    })?;
    Ok(cfg)
}

fn build_bounds(cx: &Ctx<'_>, b: &RawBounds) -> Result<ExploreBounds, ScenarioError> {
    let depth = match &b.max_depth {
        Some(d) => cx.count(d, "max_depth", 0)?,
        None => 25,
    };
    let mut bounds = match &b.mode {
        None => ExploreBounds::exhaustive(depth),
        Some(m) => match m.get_ref().as_str() {
            "exhaustive" => ExploreBounds::exhaustive(depth),
            "randomized" => {
                let samples = match &b.samples {
                    Some(s) => cx.count(s, "samples", 1)?,
                    None => 1000,
                };
                ExploreBounds::randomized(depth, b.seed.unwrap_or(0), samples)
            }
            other => return Err(cx.err(m.span(), format!("unknown bounds mode `{other}`"))),
        },
    };
    if let ExploreMode::Exhaustive = bounds.mode {
        if let Some(s) = &b.samples {
            return Err(cx.err(s.span(), "samples only applies to randomized mode"));
        }
    }
    if let Some(s) = &b.max_states {
        bounds.max_states = Some(cx.count(s, "max_states", 1)?);
    }
    Ok(bounds)
}

fn expect(cx: &Ctx<'_>, raw: &RawMode, yes: &str, no: &str, default: bool) -> Result<bool, ScenarioError> {
    match &raw.expect {
        None => Ok(default),
        Some(e) if e.get_ref() == yes => Ok(true),
        Some(e) if e.get_ref() == no => Ok(false),
        Some(e) => Err(cx.err(e.span(), format!("expect must be `{yes}` or `{no}`"))),
    }
}

fn build_mode(cx: &Ctx<'_>, cfg: &ProtocolConfig, raw: &Spanned<RawMode>) -> Result<Mode, ScenarioError> {
    let m = raw.get_ref();
    let missing = |key: &str| cx.err(raw.span(), format!("mode `{}` needs `{key}`", m.kind.get_ref()));
    match m.kind.get_ref().as_str() {
        "script" => {
            let machine = bbprot_machine(cfg);
            let mut steps = Vec::new();
            for line in m.steps.as_ref().ok_or_else(|| missing("steps"))? {
                let step = parse_step(&machine, line.get_ref()).map_err(|e| cx.err(line.span(), e))?;
                check_step_scope(cfg, &step).map_err(|e| cx.err(line.span(), e))?;
                steps.push(step);
            }
            let mut receipts = BTreeSet::new();
            if let Some(r) = &m.receipts {
                for name in r.get_ref() {
                    let x = ItemId::new(name).map_err(|e| cx.err(r.span(), e.to_string()))?;
                    if !cfg.items.contains(&x) {
                        return Err(cx.err(r.span(), format!("item `{x}` is not declared")));
                    }
                    receipts.insert(x);
                }
            }
            Ok(Mode::Script { steps, expect_ok: expect(cx, m, "ok", "violation", true)?, clause: m.clause.clone(), receipts })
        }
        "explore" => {
            let target = match m.machine.as_ref().map(|s| (s.get_ref().as_str(), s.span())) {
                None | Some(("bbprot", _)) => ExploreTarget::Protocol,
                Some(("bbspec", _)) => ExploreTarget::Spec,
                Some((other, span)) => return Err(cx.err(span, format!("unknown machine `{other}`"))),
            };
            Ok(Mode::Explore { target, expect_ok: expect(cx, m, "ok", "violation", true)? })
        }
        "attack" => {
            let g = m.goal.as_ref().ok_or_else(|| missing("goal"))?;
            let goal = g.get_ref().parse().map_err(|e: String| cx.err(g.span(), e))?;
            Ok(Mode::Attack { goal, expect_found: expect(cx, m, "attack", "none", true)? })
        }
        "liveness" => {
            let r = m.regime.as_ref().ok_or_else(|| missing("regime"))?;
            let regime = r.get_ref().parse().map_err(|e: String| cx.err(r.span(), e))?;
            if cfg.threshold_override.is_some() || cfg.honest.is_some_and(|h| h != cfg.n) {
                return Err(cx.err(r.span(), "liveness runs use n honest peers and no threshold override"));
            }
            Ok(Mode::Liveness { regime, expect_holds: expect(cx, m, "holds", "fails", true)?, schedule: None })
        }
        other => Err(cx.err(m.kind.span(), format!("unknown mode kind `{other}`"))),
    }
}

/// Scripted steps may only name declared items and peers `1..=n`.
fn check_step_scope(cfg: &ProtocolConfig, step: &Step) -> Result<(), String> {
    for (name, v) in step.binding.iter() {
        match v {
            Value::Nat(j) if name == "j" && !(1..=cfg.n as u32).contains(j) => {
                return Err(format!("peer {j} is outside 1..={}", cfg.n));
            }
            Value::Msg(m) => check_term_scope(cfg, m)?,
            _ => {}
        }
    }
    Ok(())
}

fn check_term_scope(cfg: &ProtocolConfig, m: &Message) -> Result<(), String> {
    let mut stack = vec![m];
    while let Some(t) = stack.pop() {
        match t {
            Message::Item(x) if !cfg.items.contains(x) => return Err(format!("item `{x}` is not declared")),
            Message::Key(k) | Message::Sig(k, _) if k.peer().is_some_and(|j| j == 0 || j > cfg.n) => {
                return Err(format!("key `{k}` names a peer outside 1..={}", cfg.n));
            }
            _ => {}
        }
        match t {
            Message::Sig(_, b) | Message::Pair(_, b) | Message::Hash(b) => stack.push(b),
            Message::Set(s) => stack.extend(s.iter()),
            _ => {}
        }
    }
    Ok(())
}
