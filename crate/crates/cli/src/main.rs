use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use blockgraph_cli::*;
use blockgraph_sim::explore::ExploreConfig;

#[derive(Parser)]
#[command(name = "blockgraph", version, about = "Simulate and check blockgraph ledgers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct Tweaks {
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Signature scheme: real or test.
    #[arg(long)]
    scheme: Option<String>,
    /// Shared power mode: simple or tiered.
    #[arg(long)]
    shared_power: Option<String>,
    #[arg(long, hide = true)]
    mutant: Option<String>,
}

impl Tweaks {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            scheme: self.scheme.clone(),
            shared_power: self.shared_power.clone(),
            mutant: self.mutant.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario, write trace.jsonl and report.json, and check them.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        tweaks: Tweaks,
        #[arg(long, env = "BLOCKGRAPH_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Re-run every check on a stored trace and print its report.
    Check {
        trace: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print one bank's graph as DOT.
    ExportDot {
        trace: PathBuf,
        #[arg(long)]
        bank: String,
        /// Number of events to replay; defaults to the whole trace.
        #[arg(long)]
        at: Option<usize>,
    },
    /// Run many seeds and keep the failing traces.
    Sweep {
        /// Scenario to re-run with each seed.
        #[arg(required_unless_present = "generate", conflicts_with = "generate")]
        scenario: Option<PathBuf>,
        /// Generate a scenario per seed instead: honest, equivocate-start,
        /// equivocate-close or equivocate-accept.
        #[arg(long)]
        generate: Option<String>,
        #[arg(long, default_value = "0..100")]
        seeds: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, env = "BLOCKGRAPH_OUT", default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        shared_power: Option<String>,
        #[arg(long, hide = true)]
        mutant: Option<String>,
    },
    /// Check every delivery schedule of a tiny honest scenario.
    Explore {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        max_states: usize,
        /// Let bank-to-bank messages overtake each other on a link.
        #[arg(long)]
        no_fifo: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<i32, CliError> {
    match cmd {
        Cmd::Run { scenario, tweaks, out } => {
            let mut sc = load_scenario(&scenario)?;
            tweaks.overrides().apply(&mut sc)?;
            let (trace, report) = simulate(&sc)?;
            let (tp, rp) = write_run(&out, &trace, &report)?;
            print!("{}", summary(&report));
            println!("trace {}\nreport {}", tp.display(), rp.display());
            Ok(exit_code(&report))
        }
        Cmd::Check { trace, report } => {
            let t = load_trace(&trace)?;
            let r = check(&t)?;
            if let Some(p) = report {
                std::fs::write(&p, r.to_json()).map_err(|e| CliError(format!("{}: {e}", p.display())))?;
            }
            print!("{}", r.to_json());
            eprint!("{}", summary(&r));
            Ok(exit_code(&r))
        }
        Cmd::ExportDot { trace, bank, at } => {
            print!("{}", export_dot(&load_trace(&trace)?, &bank, at)?);
            Ok(EXIT_PASS)
        }
        Cmd::Sweep {
            scenario,
            generate,
            seeds,
            workers,
            out,
            scheme,
            shared_power,
            mutant,
        } => {
            let source = match (scenario, generate) {
                (Some(p), _) => SweepSource::File(load_scenario(&p)?),
                (None, Some(g)) => SweepSource::Family(Family::from_name(&g).ok_or_else(|| {
                    CliError(format!("unknown family {g:?}, expected one of {}", Family::NAMES.join(", ")))
                })?),
                (None, None) => unreachable!("clap requires one"),
            };
            let o = Overrides {
                seed: None,
                scheme,
                shared_power,
                mutant,
            };
            let s = sweep(&source, parse_range(&seeds)?, workers, &o, Some(&out))?;
            println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
            Ok(if s.failed.is_empty() { EXIT_PASS } else { EXIT_FAIL })
        }
        Cmd::Explore {
            scenario,
            max_states,
            no_fifo,
        } => {
            let sc = load_scenario(&scenario)?;
            let cfg = ExploreConfig {
                max_states,
                fifo: !no_fifo,
                ..ExploreConfig::default()
            };
            let (r, v) = exhaustive(&sc, cfg)?;
            println!(
                "states {}  leaves {}  schedules {}  max in flight {}  depth {}",
                r.states, r.leaves, r.schedules, r.max_in_flight, r.max_depth_seen
            );
            println!("steps checked {}  rejections licensed {}  balance checks {}", v.steps, v.rejections, v.balance_checks);
            if let Some((path, e)) = &r.violation {
                println!("FAIL {e}");
                for p in path {
                    println!("  {p}");
                }
                return Ok(EXIT_FAIL);
            }
            if r.exhausted_budget || r.cut > 0 {
                println!("FAIL search incomplete: budget exhausted {}, {} schedules cut", r.exhausted_budget, r.cut);
                return Ok(EXIT_FAIL);
            }
            println!("PASS every schedule satisfies agreement, positive balance, termination and the rejection restriction");
            Ok(EXIT_PASS)
        }
    }
}
