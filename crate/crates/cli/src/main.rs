use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wbb_cli::commands::{self, Outcome, Status};
use wbb_cli::scenario::{ExploreTarget, Scenario};
use wbb_core::explore::{AttackGoal, ExploreBounds};
use wbb_core::protocol::liveness::{LivenessParams, Regime};
use wbb_core::protocol::ProtocolConfig;

/// Environment variable naming the default output directory.
const OUT_DIR_ENV: &str = "WBB_OUT_DIR";

#[derive(Parser)]
#[command(name = "wbb", version, about = "Model checker for a peered web bulletin board protocol")]
struct Cli {
    /// Worker threads for exploration (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario's depth bound.
        #[arg(long)]
        max_depth: Option<usize>,
        /// Override the scenario's seed (randomized bounds only).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Replay a trace and check it against the abstract specification.
    Check {
        trace: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Explore the protocol (or the abstract specification) within bounds.
    Explore {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        bounds: BoundsArgs,
        /// Explore the abstract specification instead of the protocol.
        #[arg(long)]
        spec: bool,
        /// Exit 0 only if a violation is found.
        #[arg(long)]
        expect_violation: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for an attack trace.
    Attack {
        /// receipt-without-publication | clashing-receipts |
        /// publication-mutation | invariant:<clause>
        #[arg(long)]
        goal: AttackGoal,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        bounds: BoundsArgs,
        /// Exit 0 only if no attack is found.
        #[arg(long)]
        expect_none: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure fallback rounds to agreement under a failure regime.
    Liveness {
        /// all-honest | threshold-live | stopping-failures
        #[arg(long)]
        regime: Regime,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        t: usize,
        #[arg(long, default_value_t = 3)]
        items: usize,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Take the configuration from a scenario file; the flags below are
    /// then ignored.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    t: usize,
    #[arg(long)]
    honest: Option<usize>,
    #[arg(long)]
    threshold_override: Option<usize>,
    #[arg(long, default_value_t = 1)]
    periods: u32,
    /// Comma-separated item names.
    #[arg(long, value_delimiter = ',', default_value = "x")]
    items: Vec<String>,
    /// A clashing pair `a:b`; repeatable.
    #[arg(long)]
    clash: Vec<String>,
    #[arg(long)]
    no_round2: bool,
    #[arg(long)]
    no_clash_guard: bool,
    #[arg(long)]
    hashed: bool,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value_t = 25)]
    max_depth: usize,
    /// Switch to randomized walks with this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of randomized walks.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long)]
    max_states: Option<usize>,
}

impl BoundsArgs {
    fn bounds(&self) -> ExploreBounds {
        let mut b = match self.seed {
            Some(seed) => ExploreBounds::randomized(self.max_depth, seed, self.samples),
            None => ExploreBounds::exhaustive(self.max_depth),
        };
        b.max_states = self.max_states;
        b
    }
}

struct Fail(String);

impl ConfigArgs {
    fn config(&self) -> Result<ProtocolConfig, Fail> {
        if let Some(path) = &self.scenario {
            return Ok(load_scenario(path)?.config);
        }
        let names: Vec<&str> = self.items.iter().map(String::as_str).collect();
        let mut cfg = ProtocolConfig::new(self.n, self.t)
            .with_periods(self.periods)
            .with_items(&names)
            .map_err(|e| Fail(e.to_string()))?
            .with_round2(!self.no_round2)
            .with_clash_guard(!self.no_clash_guard)
            .with_hashed_publication(self.hashed);
        if let Some(h) = self.honest {
            cfg = cfg.with_honest(h);
        }
        if let Some(o) = self.threshold_override {
            cfg = cfg.with_threshold_override(o);
        }
        for pair in &self.clash {
            let (a, b) = pair.split_once(':').ok_or_else(|| Fail(format!("clash `{pair}` is not of the form a:b")))?;
            cfg = cfg.with_clash(a, b).map_err(|e| Fail(e.to_string()))?;
        }
        cfg.validate().map_err(|e| Fail(e.to_string()))?;
        Ok(cfg)
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, Fail> {
    let text = fs::read_to_string(path).map_err(|e| Fail(format!("{}: {e}", path.display())))?;
    Scenario::parse(&text).map_err(|e| Fail(format!("{}: {e}", path.display())))
}

fn emit(out: &Outcome, dir: Option<PathBuf>, name: &str) -> Result<(), Fail> {
    print!("{}", out.report);
    if let Some(dir) = dir {
        let files = commands::write_artifacts(&dir, name, out).map_err(|e| Fail(format!("{}: {e}", dir.display())))?;
        for f in files {
            eprintln!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn out_dir(flag: Option<&Path>, scenario: Option<&Path>) -> PathBuf {
    let env = std::env::var(OUT_DIR_ENV).ok();
    commands::resolve_out_dir(flag, scenario, env.as_deref())
}

fn execute(cli: Cli) -> Result<Status, Fail> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Fail(e.to_string()))?;
    }
    match cli.command {
        Command::Run { scenario, out, max_depth, seed } => {
            let mut s = load_scenario(&scenario)?;
            if let Some(d) = max_depth {
                s.bounds.max_depth = d;
            }
            if let Some(new_seed) = seed {
                match &mut s.bounds.mode {
                    wbb_core::explore::ExploreMode::Randomized { seed, .. } => *seed = new_seed,
                    _ => return Err(Fail("--seed needs randomized bounds in the scenario".into())),
                }
            }
            let o = commands::run_scenario(&s);
            emit(&o, Some(out_dir(out.as_deref(), s.output_dir.as_deref())), &s.name)?;
            Ok(o.status)
        }
        Command::Check { trace, config } => {
            let cfg = config.config()?;
            let text = fs::read_to_string(&trace).map_err(|e| Fail(format!("{}: {e}", trace.display())))?;
            let o = commands::check_command(&cfg, &text);
            print!("{}", o.report);
            Ok(o.status)
        }
        Command::Explore { config, bounds, spec, expect_violation, out } => {
            let cfg = config.config()?;
            let target = if spec { ExploreTarget::Spec } else { ExploreTarget::Protocol };
            let o = commands::explore_command(&cfg, target, &bounds.bounds(), !expect_violation);
            emit(&o, Some(out_dir(out.as_deref(), None)), "explore")?;
            Ok(o.status)
        }
        Command::Attack { goal, config, bounds, expect_none, out } => {
            let cfg = config.config()?;
            let o = commands::attack_command(&cfg, goal, &bounds.bounds(), !expect_none);
            emit(&o, Some(out_dir(out.as_deref(), None)), "attack")?;
            Ok(o.status)
        }
        Command::Liveness { regime, n, t, items, samples, seed, out } => {
            if 3 * t <= 2 * n || t > n || items == 0 {
                return Err(Fail(format!("liveness needs 2n/3 < t <= n and at least one item (n={n}, t={t})")));
            }
            let params = LivenessParams { n, t, items, samples, seed };
            let o = commands::liveness_command(&params, regime, None, true);
            emit(&o, Some(out_dir(out.as_deref(), None)), "liveness")?;
            Ok(o.status)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(Fail(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(Status::InputError.code() as u8)
        }
    }
}
