//! Seeded random sessions, shrinking and cross-engine comparison.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_scenario, RunOptions, RunReport};
use crate::error::Result;
use crate::framework::EngineKind;
use crate::netsim::Mode;
use crate::ot::TieBreak;
use crate::scenario::{FuzzSpec, Scenario, Script};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub runs: usize,
    pub min_sites: usize,
    pub max_sites: usize,
    pub max_ops: usize,
    pub seed: u64,
    pub engines: Vec<EngineKind>,
    /// Periodic garbage collection, applied to every other run.
    pub gc_every: Option<usize>,
    pub tie_break: TieBreak,
    pub shrink: bool,
    /// Also compare both engines on every run's scenario.
    pub cross_engine: bool,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            runs: 1000,
            min_sites: 2,
            max_sites: 5,
            max_ops: 200,
            seed: 0,
            engines: vec![EngineKind::Ot, EngineKind::Woot],
            gc_every: Some(6),
            tie_break: TieBreak::SiteOrder,
            shrink: true,
            cross_engine: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzFailure {
    pub engine: EngineKind,
    pub run: usize,
    pub seed: u64,
    pub check: String,
    pub details: Vec<String>,
    pub trace_digest: String,
    pub original_ops: usize,
    /// Replayable scenario file, shrunk when shrinking is enabled.
    pub scenario: String,
    pub shrunk_ops: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossEngineReport {
    pub compared: usize,
    pub equal: usize,
    /// Scenarios with a concurrent same-position insert tie.
    pub excluded: usize,
    pub different: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub runs: usize,
    pub seed: u64,
    pub executed: usize,
    pub failures: Vec<FuzzFailure>,
    pub total_ops: usize,
    pub max_c: usize,
    pub dual_path_checks: u64,
    pub tp1_checks: u64,
    pub cross_engine: Option<CrossEngineReport>,
}

impl FuzzReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Seed of run `run` in a suite seeded with `seed`.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ (run as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)).random()
}

/// The scenario of run `run`. Scenarios are engine independent apart from
/// the delivery mode.
pub fn fuzz_scenario(cfg: &FuzzConfig, run: usize, mode: Mode) -> Scenario {
    let seed = run_seed(cfg.seed, run);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = rng.random_range(cfg.min_sites..=cfg.max_sites.max(cfg.min_sites));
    let ops = rng.random_range(1..=cfg.max_ops.max(1));
    let spec = FuzzSpec {
        ops,
        insert_ratio: rng.random_range(0.4..0.8),
        alphabet: ('a'..='z').collect(),
        min_gap: 0,
        max_gap: rng.random_range(0..=4),
    };
    let initial: String = (0..rng.random_range(0..=8))
        .map(|_| spec.alphabet[rng.random_range(0..26)])
        .collect();
    Scenario {
        initial,
        ..Scenario::fuzz(format!("fuzz-{run}"), sites, mode, seed, spec)
    }
}

fn default_mode(engine: EngineKind) -> Mode {
    match engine {
        EngineKind::Ot => Mode::Sequencer,
        EngineKind::Woot => Mode::Causal,
    }
}

fn fails_with(scenario: &Scenario, opts: &RunOptions, check: &str) -> bool {
    run_scenario(scenario, opts).is_ok_and(|out| out.report.first_failure() == Some(check))
}

/// Removes operations from an explicit scenario while it keeps failing
/// `check`. Candidates whose script no longer fits the documents are
/// skipped.
pub fn shrink(scenario: &Scenario, opts: &RunOptions, check: &str) -> Scenario {
    let Script::Explicit(ops) = &scenario.script else {
        return scenario.clone();
    };
    let mut ops = ops.clone();
    let with = |ops: Vec<_>| Scenario {
        script: Script::Explicit(ops),
        ..scenario.clone()
    };
    let mut chunk = (ops.len() / 2).max(1);
    let mut budget = 4000;
    loop {
        let mut progress = false;
        let mut i = 0;
        while i < ops.len() && budget > 0 {
            budget -= 1;
            let mut candidate = ops.clone();
            candidate.drain(i..(i + chunk).min(ops.len()));
            if fails_with(&with(candidate.clone()), opts, check) {
                ops = candidate;
                progress = true;
            } else {
                i += chunk;
            }
        }
        if budget == 0 || (!progress && chunk == 1) {
            break;
        }
        if !progress {
            chunk = (chunk / 2).max(1);
        }
    }
    with(ops)
}

struct RunResult {
    report: RunReport,
    failure: Option<FuzzFailure>,
    ops: usize,
    dual_path_checks: u64,
    tp1_checks: u64,
}

fn fuzz_one(cfg: &FuzzConfig, run: usize, engine: EngineKind) -> Result<RunResult> {
    let scenario = fuzz_scenario(cfg, run, default_mode(engine));
    let opts = RunOptions {
        gc_every: cfg.gc_every.filter(|_| run.is_multiple_of(2)),
        tie_break: cfg.tie_break,
        ..RunOptions::new(engine)
    };
    let out = run_scenario(&scenario, &opts)?;
    let failure = out.report.first_failure().map(|check| {
        let explicit = Scenario {
            script: Script::Explicit(out.script.clone()),
            ..scenario.clone()
        };
        let shrunk = if cfg.shrink {
            shrink(&explicit, &opts, check)
        } else {
            explicit
        };
        let details = match check {
            "invariants" => &out.report.invariants,
            "convergence" => &out.report.convergence,
            "intention" => &out.report.intention,
            _ => &out.report.causality,
        };
        FuzzFailure {
            engine,
            run,
            seed: scenario.seed,
            check: check.to_string(),
            details: details.details.clone(),
            trace_digest: out.report.trace_digest.clone(),
            original_ops: out.script.len(),
            shrunk_ops: match &shrunk.script {
                Script::Explicit(ops) => ops.len(),
                Script::Fuzz(_) => 0,
            },
            scenario: shrunk.to_string(),
        }
    });
    Ok(RunResult {
        failure,
        ops: out.script.len(),
        dual_path_checks: out.dual_path_checks,
        tp1_checks: out.tp1_checks,
        report: out.report,
    })
}

/// Runs `cfg.runs` seeded scenarios on every configured engine, in
/// parallel. The report does not depend on the thread count.
pub fn fuzz(cfg: &FuzzConfig) -> Result<FuzzReport> {
    let jobs: Vec<(usize, EngineKind)> = (0..cfg.runs)
        .flat_map(|r| cfg.engines.iter().map(move |&e| (r, e)))
        .collect();
    let results: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(run, engine)| fuzz_one(cfg, run, engine))
        .collect::<Result<_>>()?;
    let cross_engine = if cfg.cross_engine {
        let outcomes: Vec<CrossOutcome> = (0..cfg.runs)
            .into_par_iter()
            .map(|run| cross_engine_compare(&fuzz_scenario(cfg, run, Mode::Sequencer)))
            .collect::<Result<_>>()?;
        let mut r = CrossEngineReport::default();
        for (run, o) in outcomes.into_iter().enumerate() {
            match o {
                CrossOutcome::Excluded => r.excluded += 1,
                CrossOutcome::Equal => {
                    r.compared += 1;
                    r.equal += 1;
                }
                CrossOutcome::Different { .. } => {
                    r.compared += 1;
                    r.different.push(format!("fuzz-{run}"));
                }
            }
        }
        Some(r)
    } else {
        None
    };
    Ok(FuzzReport {
        runs: cfg.runs,
        seed: cfg.seed,
        executed: results.len(),
        total_ops: results.iter().map(|r| r.ops).sum(),
        max_c: results.iter().map(|r| r.report.metrics.max_c).max().unwrap_or(0),
        dual_path_checks: results.iter().map(|r| r.dual_path_checks).sum(),
        tp1_checks: results.iter().map(|r| r.tp1_checks).sum(),
        failures: results.into_iter().filter_map(|r| r.failure).collect(),
        cross_engine,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CrossOutcome {
    Equal,
    Different {
        ot: String,
        woot: String,
    },
    /// The OT run resolved a same-position insert tie.
    Excluded,
}

/// Runs a scenario on OT, then replays OT's realized script on WOOT in the
/// same delivery mode and compares the final documents.
pub fn cross_engine_compare(scenario: &Scenario) -> Result<CrossOutcome> {
    let mut scenario = scenario.clone();
    if scenario.sites > 2 {
        scenario.mode = Mode::Sequencer;
    }
    let ot = run_scenario(&scenario, &RunOptions::new(EngineKind::Ot))?;
    if ot.ties > 0 {
        return Ok(CrossOutcome::Excluded);
    }
    let ot_text = ot.report.sites[0].text.clone();
    let explicit = Scenario {
        script: Script::Explicit(ot.script),
        ..scenario
    };
    let woot_text = match run_scenario(&explicit, &RunOptions::new(EngineKind::Woot)) {
        Ok(w) => w.report.sites[0].text.clone(),
        Err(e) => format!("<{e}>"),
    };
    Ok(if ot_text == woot_text && ot.report.convergence.passed {
        CrossOutcome::Equal
    } else {
        CrossOutcome::Different {
            ot: ot_text,
            woot: woot_text,
        }
    })
}
