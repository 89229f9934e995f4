//! Command implementations. Each returns an [`Outcome`]: a report, an
//! optional trace, and the exit status the binary should use. Reports never
//! contain timings or paths, so equal inputs give byte-identical reports.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use wbb_core::explore::{explore, find_attack, AttackGoal, ExploreBounds, ExploreMode, ProtocolModel, ProtocolOptions, SpecModel};
use wbb_core::machine::{fingerprint, format_trace, parse_step, replay_unchecked, Trace, TRACE_HEADER};
use wbb_core::protocol::liveness::{liveness_run_with, Availability, LivenessParams, Regime};
use wbb_core::protocol::{bbprot_machine, ProtocolConfig};
use wbb_core::refinement::check_simulation;

use crate::scenario::{ExploreTarget, Mode, Scenario};

/// Exit-status contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// The run ended as expected.
    Ok = 0,
    /// A violation (or attack) turned up where none was expected.
    UnexpectedViolation = 1,
    /// An expected violation, attack or receipt did not turn up.
    MissingExpected = 2,
    /// Bad input: unreadable or invalid files and arguments.
    InputError = 3,
}

impl Status {
    pub fn code(self) -> i32 {
        self as i32
    }

    fn judge(found: bool, expected: bool) -> Status {
        match (found, expected) {
            (true, true) | (false, false) => Status::Ok,
            (true, false) => Status::UnexpectedViolation,
            (false, true) => Status::MissingExpected,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub status: Status,
    pub report: String,
    pub trace: Option<Trace>,
}

pub fn describe_config(cfg: &ProtocolConfig) -> String {
    let on = |b: bool| if b { "on" } else { "off" };
    let items: Vec<&str> = cfg.items.iter().map(|x| x.as_str()).collect();
    let clash: Vec<String> = cfg.clash.pairs().map(|(a, b)| format!("{a}:{b}")).collect();
    format!(
        "n={} t={} threshold={} honest={} periods={} items={} clash={} round2={} clash_guard={} hashed={} stage={}",
        cfg.n,
        cfg.t,
        cfg.threshold(),
        cfg.honest_count(),
        cfg.max_periods,
        items.join(","),
        clash.join(","),
        on(cfg.enable_round2),
        on(cfg.enable_clash_guard),
        on(cfg.hashed_publication),
        cfg.stage()
    )
}

fn expectation_line(status: Status) -> &'static str {
    match status {
        Status::Ok => "outcome: as expected\n",
        Status::UnexpectedViolation => "outcome: UNEXPECTED violation\n",
        Status::MissingExpected => "outcome: expected finding MISSING\n",
        Status::InputError => "outcome: input error\n",
    }
}

/// Runs the mode a scenario selects.
pub fn run_scenario(s: &Scenario) -> Outcome {
    let mut head = format!("scenario: {}\nconfig: {}\n", s.name, describe_config(&s.config));
    let mut out = match &s.mode {
        Mode::Script { steps, expect_ok, clause, receipts } => {
            let mut trace = Trace::new(bbprot_machine(&s.config).name.clone());
            trace.steps = steps.clone();
            record_fingerprints(&s.config, &mut trace);
            let sim = check_simulation(&s.config, &trace);
            let mut report = sim.render();
            let end = replay_unchecked(&bbprot_machine(&s.config), &trace).ok().and_then(|v| v.last().cloned());
            let issued: Vec<String> = end.as_ref().map_or(Vec::new(), |w| {
                w.receipts().into_iter().map(|(p, x)| format!("{x}@{p}")).collect()
            });
            report.push_str(&format!("receipts: {}\n", issued.join(",")));
            let missing: Vec<String> = receipts
                .iter()
                .filter(|x| !end.as_ref().is_some_and(|w| w.receipts().iter().any(|(_, y)| y == *x)))
                .map(|x| x.to_string())
                .collect();
            let status = match (&sim.violation, expect_ok) {
                (None, true) if !missing.is_empty() => {
                    report.push_str(&format!("missing receipts: {}\n", missing.join(",")));
                    Status::MissingExpected
                }
                (None, ok) => Status::judge(false, !ok),
                (Some((c, _)), false) if clause.as_ref().is_some_and(|want| want != c) => {
                    Status::UnexpectedViolation
                }
                (Some(_), ok) => Status::judge(true, !ok),
            };
            Outcome { status, report, trace: Some(trace) }
        }
        Mode::Explore { target, expect_ok } => explore_command(&s.config, *target, &s.bounds, *expect_ok),
        Mode::Attack { goal, expect_found } => attack_command(&s.config, goal.clone(), &s.bounds, *expect_found),
        Mode::Liveness { regime, expect_holds, schedule } => {
            liveness_command(&liveness_params(&s.config, &s.bounds), *regime, schedule.as_ref(), *expect_holds)
        }
    };
    head.push_str(&out.report);
    out.report = head;
    out
}

fn record_fingerprints(cfg: &ProtocolConfig, trace: &mut Trace) {
    let m = bbprot_machine(cfg);
    let mut w = m.init();
    for st in &mut trace.steps {
        match m.event_def(&st.event).ok().and_then(|e| e.apply_unchecked(&w, &st.binding)) {
            Some(next) => {
                st.post = Some(fingerprint(&next));
                w = next;
            }
            None => break,
        }
    }
}

/// Liveness sizes come from the configuration; samples and seed from
/// randomized bounds when given.
pub fn liveness_params(cfg: &ProtocolConfig, bounds: &ExploreBounds) -> LivenessParams {
    let mut p = LivenessParams { items: cfg.items.len(), ..LivenessParams::new(cfg.n, cfg.t) };
    if let ExploreMode::Randomized { seed, samples } = bounds.mode {
        p.seed = seed;
        p.samples = samples;
    }
    p
}

pub fn explore_command(cfg: &ProtocolConfig, target: ExploreTarget, bounds: &ExploreBounds, expect_ok: bool) -> Outcome {
    let r = match target {
        ExploreTarget::Protocol => explore(&ProtocolModel::new(cfg, ProtocolOptions::full()), bounds),
        ExploreTarget::Spec => explore(&SpecModel::new(cfg), bounds),
    };
    let status = Status::judge(!r.is_ok(), !expect_ok);
    let mut report = r.render();
    report.push_str(expectation_line(status));
    Outcome { status, report, trace: r.violation.map(|f| f.trace) }
}

pub fn attack_command(cfg: &ProtocolConfig, goal: AttackGoal, bounds: &ExploreBounds, expect_found: bool) -> Outcome {
    let r = find_attack(cfg, goal, bounds);
    let mut report = r.render();
    if let Some(t) = &r.trace {
        report.push_str("simulation check of the attack trace:\n");
        report.push_str(&check_simulation(cfg, t).render());
    }
    let status = Status::judge(r.found(), expect_found);
    report.push_str(expectation_line(status));
    Outcome { status, report, trace: r.trace }
}

/// `schedule`, when given, replaces the regime's generated schedules.
pub fn liveness_command(
    params: &LivenessParams,
    regime: Regime,
    schedule: Option<&Availability>,
    expect_holds: bool,
) -> Outcome {
    match liveness_run_with(regime, params, schedule) {
        Ok(r) => {
            let status = Status::judge(!r.holds(), !expect_holds);
            let mut report = schedule.map_or(String::new(), |s| format!("schedule: {s}\n"));
            report.push_str(&r.render());
            report.push_str(expectation_line(status));
            Outcome { status, report, trace: None }
        }
        Err(e) => Outcome { status: Status::UnexpectedViolation, report: format!("driver error: {e}\n"), trace: None },
    }
}

/// Replays a trace file and checks simulation and the board properties. A
/// line that does not name a step of the machine is a replay mismatch at
/// that step.
pub fn check_command(cfg: &ProtocolConfig, text: &str) -> Outcome {
    let m = bbprot_machine(cfg);
    let mut trace = Trace::new(m.name.clone());
    let mut report = format!("config: {}\n", describe_config(cfg));
    if !text.trim_start().starts_with(TRACE_HEADER) {
        report.push_str(&format!("warning: missing `{TRACE_HEADER}` header\n"));
    }
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(name) = rest.trim().strip_prefix("machine ") {
                trace.machine = name.trim().to_string();
            }
            continue;
        }
        match parse_step(&m, line) {
            Ok(st) => trace.steps.push(st),
            Err(e) => {
                let step = trace.len() + 1;
                report.push_str(&format!("step {step}: unreadable step: {e}\n"));
                report.push_str(&format!("RESULT=VIOLATION clause=replay-mismatch step={step}\n"));
                return Outcome { status: Status::UnexpectedViolation, report, trace: Some(trace) };
            }
        }
    }
    if trace.machine != m.name {
        report.push_str(&format!("trace is for machine `{}`, configuration gives `{}`\n", trace.machine, m.name));
        report.push_str("RESULT=VIOLATION clause=replay-mismatch step=0\n");
        return Outcome { status: Status::UnexpectedViolation, report, trace: Some(trace) };
    }
    let sim = check_simulation(cfg, &trace);
    report.push_str(&sim.render_full());
    let status = if sim.is_ok() { Status::Ok } else { Status::UnexpectedViolation };
    Outcome { status, report, trace: Some(trace) }
}

/// Output directory: explicit flag, then the scenario's own, then the
/// environment default, then `wbb-out`.
pub fn resolve_out_dir(flag: Option<&Path>, scenario: Option<&Path>, env: Option<&str>) -> PathBuf {
    flag.or(scenario)
        .map(Path::to_path_buf)
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("wbb-out"))
}

/// Writes `<name>.report.txt` and, when present, `<name>.trace.txt`.
pub fn write_artifacts(dir: &Path, name: &str, out: &Outcome) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let report = dir.join(format!("{name}.report.txt"));
    fs::write(&report, &out.report)?;
    written.push(report);
    if let Some(t) = &out.trace {
        let path = dir.join(format!("{name}.trace.txt"));
        fs::write(&path, format_trace(t))?;
        written.push(path);
    }
    Ok(written)
}
