use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gtedit::framework::{decode_external, decode_id_op};
use gtedit::harness::{fuzz, order_insensitivity, FuzzConfig, OrderConfig, RunOutput};
use gtedit::metrics::{bench, to_csv, BenchSpec, CsvRow};
use gtedit::trace::Event;
use gtedit::{run_scenario, Ablation, EngineKind, OtEngine, RunOptions, Scenario};

#[derive(Parser)]
#[command(name = "gtedit", version, about = "Replicated text editing with OT and WOOT engines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Engines {
    Ot,
    Woot,
    Both,
}

impl Engines {
    fn kinds(self) -> Vec<EngineKind> {
        match self {
            Engines::Ot => vec![EngineKind::Ot],
            Engines::Woot => vec![EngineKind::Woot],
            Engines::Both => vec![EngineKind::Ot, EngineKind::Woot],
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the three-character walkthrough on both engines and print each step.
    Fig1,
    /// Run one scenario on one engine.
    Run {
        /// Built-in scenario name or scenario file.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "ot")]
        engine: EngineKind,
        #[arg(long, default_value = "none")]
        ablation: Ablation,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write the event trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Collect garbage after this many deliveries per site.
        #[arg(long)]
        gc_every: Option<usize>,
        /// Record wall-clock handling times.
        #[arg(long)]
        timing: bool,
    },
    /// Run a suite of seeded random sessions.
    Fuzz {
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        /// Fixed site count; overrides the range.
        #[arg(long)]
        sites: Option<usize>,
        #[arg(long, default_value_t = 2)]
        min_sites: usize,
        #[arg(long, default_value_t = 5)]
        max_sites: usize,
        #[arg(long, default_value_t = 200)]
        max_ops: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "both")]
        engine: Engines,
        #[arg(long)]
        no_shrink: bool,
        /// Also compare the final documents of both engines.
        #[arg(long)]
        cross_engine: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check delivery-order insensitivity of the WOOT engine.
    Order {
        #[arg(long, default_value_t = 1000)]
        sets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Measure cost counters on generated workloads.
    Bench {
        #[arg(long, default_value_t = 10_000)]
        doc_len: usize,
        #[arg(long, default_value_t = 3)]
        sites: usize,
        #[arg(long, default_value_t = 300)]
        ops: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
    },
}

fn env_seed() -> Result<Option<u64>, String> {
    match std::env::var("GT_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("GT_SEED must be an integer, got `{s}`")),
        Err(_) => Ok(None),
    }
}

fn emit(output: &Option<PathBuf>, text: &str) -> Result<(), String> {
    match output {
        Some(path) => fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| e.to_string())
        }
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

fn fig1_table(out: &RunOutput) -> Vec<String> {
    let mut lines = Vec::new();
    let mut docs = Vec::new();
    for e in &out.trace.events {
        match e {
            Event::Start { sites, doc, .. } => docs = vec![doc.clone(); *sites],
            Event::Gen { site, seq, op, .. } => {
                let d = &mut docs[site.0 as usize - 1];
                let mut state = gtedit::ExternalState::from(d.as_str());
                state.apply(op).expect("trace replays");
                *d = state.to_string();
                lines.push(format!("  s{site}  generate  O{site}.{seq} = {op:<10} -> \"{d}\""));
            }
            Event::Deliver {
                site, origin, seq, op, ..
            } => {
                let d = &mut docs[site.0 as usize - 1];
                let shown = match op {
                    Some(op) => {
                        let mut state = gtedit::ExternalState::from(d.as_str());
                        state.apply(op).expect("trace replays");
                        *d = state.to_string();
                        op.to_string()
                    }
                    None => "-".to_string(),
                };
                lines.push(format!("  s{site}  receive   O{origin}.{seq} as {shown:<9} -> \"{d}\""));
            }
            _ => {}
        }
    }
    lines
}

fn cmd_fig1() -> Result<bool, String> {
    let scenario = Scenario::fig1();
    let mut ok = true;
    for engine in [EngineKind::Ot, EngineKind::Woot] {
        let opts = RunOptions {
            final_gossip: false,
            capture: true,
            ..RunOptions::new(engine)
        };
        let out = run_scenario(&scenario, &opts).map_err(|e| e.to_string())?;
        println!("{engine}: initial \"{}\"", scenario.initial);
        for m in &out.messages {
            let payload = match engine {
                EngineKind::Ot => decode_external(&m.payload).map(|o| o.to_string()),
                EngineKind::Woot => decode_id_op(&m.payload).map(|o| o.to_string()),
            }
            .map_err(|e| e.to_string())?;
            println!("  s{} broadcasts {payload}", m.origin);
        }
        for line in fig1_table(&out) {
            println!("{line}");
        }
        for site in &out.sites {
            let state = match engine {
                EngineKind::Ot => {
                    let ot = site.engine().as_any().downcast_ref::<OtEngine>().expect("an OT site");
                    let buf: Vec<String> = ot
                        .inner()
                        .buffer()
                        .iter()
                        .map(|t| format!("{}@{}.{}", t.op, t.origin, t.seq))
                        .collect();
                    format!("BUF=[{}]", buf.join(", "))
                }
                EngineKind::Woot => format!(
                    "IS={}",
                    site.engine()
                        .internal_dump()
                        .unwrap_or_default()
                        .lines()
                        .collect::<Vec<_>>()
                        .join(" ")
                ),
            };
            println!("  s{} final \"{}\" {state}", site.id(), site.external());
        }
        let texts: Vec<String> = out.sites.iter().map(|s| s.external().to_string()).collect();
        println!(
            "  result {}",
            texts.iter().map(|t| format!("\"{t}\"")).collect::<Vec<_>>().join("/")
        );
        ok &= out.report.passed() && texts.iter().all(|t| t == "ace");
    }
    Ok(ok)
}

fn run_main(cli: Cli) -> Result<bool, String> {
    let env = env_seed()?;
    match cli.command {
        Command::Fig1 => cmd_fig1(),
        Command::Run {
            scenario,
            engine,
            ablation,
            seed,
            format,
            output,
            trace,
            gc_every,
            timing,
        } => {
            let mut sc = Scenario::load(&scenario).map_err(|e| e.to_string())?;
            if let Some(s) = env.or(seed) {
                sc.seed = s;
            }
            let opts = RunOptions {
                ablation,
                gc_every,
                timing,
                ..RunOptions::new(engine)
            };
            let out = run_scenario(&sc, &opts).map_err(|e| e.to_string())?;
            let text = match format {
                Format::Json => out.report.to_json() + "\n",
                Format::Csv => to_csv(&[CsvRow::from_report(&sc.name, &out.report)]).map_err(|e| e.to_string())?,
            };
            emit(&output, &text)?;
            if let Some(path) = trace {
                fs::write(&path, out.trace.to_string()).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            }
            let passed = out.report.passed();
            if !passed {
                eprintln!(
                    "check failed: {}; replay with: gtedit run --scenario {scenario} --engine {engine} --ablation {ablation} --seed {}",
                    out.report.first_failure().unwrap_or("error"),
                    sc.seed
                );
            }
            Ok(passed)
        }
        Command::Fuzz {
            runs,
            sites,
            min_sites,
            max_sites,
            max_ops,
            seed,
            engine,
            no_shrink,
            cross_engine,
            output,
        } => {
            let (min_sites, max_sites) = sites.map_or((min_sites, max_sites), |n| (n, n));
            if min_sites < 2 || max_sites < min_sites {
                return Err(format!("invalid site range {min_sites}..={max_sites}"));
            }
            let cfg = FuzzConfig {
                runs,
                min_sites,
                max_sites,
                max_ops,
                seed: env.unwrap_or(seed),
                engines: engine.kinds(),
                shrink: !no_shrink,
                cross_engine,
                ..FuzzConfig::default()
            };
            let report = fuzz(&cfg).map_err(|e| e.to_string())?;
            emit(&output, &json(&report))?;
            for f in &report.failures {
                eprintln!(
                    "{} run {} failed {} (seed {}); replay scenario:\n{}",
                    f.engine, f.run, f.check, f.seed, f.scenario
                );
            }
            Ok(report.passed())
        }
        Command::Order { sets, seed, output } => {
            let cfg = OrderConfig {
                sets,
                seed: env.unwrap_or(seed),
                ..OrderConfig::default()
            };
            let report = order_insensitivity(&cfg).map_err(|e| e.to_string())?;
            emit(&output, &json(&report))?;
            if !report.passed() {
                eprintln!(
                    "order check failed; replay with: gtedit order --sets {sets} --seed {}",
                    cfg.seed
                );
            }
            Ok(report.passed())
        }
        Command::Bench {
            doc_len,
            sites,
            ops,
            seed,
            format,
            output,
            timing,
        } => {
            let spec = BenchSpec {
                doc_len,
                sites,
                ops,
                seed: env.unwrap_or(seed),
                timing,
            };
            let report = bench(&spec).map_err(|e| e.to_string())?;
            let text = match format {
                Format::Json => json(&report),
                Format::Csv => to_csv(&report.rows).map_err(|e| e.to_string())?,
            };
            emit(&output, &text)?;
            for c in report.checks.iter().filter(|c| !c.passed) {
                eprintln!("bench check {} failed: {}; seed {}", c.name, c.detail, spec.seed);
            }
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_main(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
