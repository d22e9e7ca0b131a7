//! One line per acceptance criterion. Exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gtedit::framework::{decode_id_op, WootEngine};
use gtedit::harness::{fuzz, fuzz_scenario, order_insensitivity, FuzzConfig, FuzzReport, OrderConfig, ABLATION_NOTE};
use gtedit::metrics::{bench, to_csv, BenchSpec, CsvRow, Workload};
use gtedit::netsim::Mode;
use gtedit::ot::transform;
use gtedit::scenario::Script;
use gtedit::woot::{IdOpKind, ObjectId};
use gtedit::{run_scenario, Ablation, EngineKind, ExternalOp, ExternalState, OtEngine, RunOptions, Scenario, SiteId};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn buffer(out: &gtedit::harness::RunOutput, i: usize) -> Vec<String> {
    let ot = out.sites[i].engine().as_any().downcast_ref::<OtEngine>().unwrap();
    ot.inner()
        .buffer()
        .iter()
        .map(|t| format!("{}@{}.{}", t.op, t.origin, t.seq))
        .collect()
}

fn fig1() -> Outcome {
    let scenario = Scenario::fig1();
    let opts = |engine| RunOptions {
        final_gossip: false,
        capture: true,
        ..RunOptions::new(engine)
    };
    let ot = run_scenario(&scenario, &opts(EngineKind::Ot)).map_err(|e| e.to_string())?;
    let texts: Vec<&str> = ot.report.sites.iter().map(|s| s.text.as_str()).collect();
    ensure(texts == ["ace", "ace"], || format!("OT texts {texts:?}"))?;
    let delivered: Vec<String> = ot
        .trace
        .events
        .iter()
        .filter_map(|e| match e {
            gtedit::trace::Event::Deliver { site, op: Some(op), .. } => Some(format!("s{site}:{op}")),
            _ => None,
        })
        .collect();
    ensure(
        delivered.contains(&"s1:I 1 c".into()) && delivered.contains(&"s2:D 1".into()),
        || format!("OT deliveries {delivered:?}"),
    )?;
    ensure(buffer(&ot, 0) == ["D 1@1.1", "I 1 c@2.1"], || {
        format!("BUF at A {:?}", buffer(&ot, 0))
    })?;
    ensure(buffer(&ot, 1) == ["I 2 c@2.1", "D 1@1.1"], || {
        format!("BUF at B {:?}", buffer(&ot, 1))
    })?;

    let woot = run_scenario(&scenario, &opts(EngineKind::Woot)).map_err(|e| e.to_string())?;
    let init = |seq| ObjectId::new(SiteId::INITIAL, seq);
    let kinds: Vec<IdOpKind> = woot
        .messages
        .iter()
        .map(|m| decode_id_op(&m.payload).unwrap())
        .collect();
    let expected = [
        IdOpKind::Delete { target: init(2) },
        IdOpKind::Insert {
            ch: 'c',
            id: ObjectId::new(SiteId(2), 1),
            prev: init(2),
            next: init(3),
        },
    ];
    ensure(kinds == expected, || format!("WOOT payloads {kinds:?}"))?;
    for site in &woot.sites {
        let w = site.engine().as_any().downcast_ref::<WootEngine>().unwrap();
        let seq: Vec<(char, bool)> = w
            .inner()
            .sequence()
            .objects()
            .iter()
            .filter(|o| !o.is_sentinel())
            .map(|o| (o.ch, o.visible))
            .collect();
        ensure(seq == [('a', true), ('b', false), ('c', true), ('e', true)], || {
            format!("IS {seq:?}")
        })?;
        let first = w.inner().sequence().objects().first().map(|o| o.id);
        let last = w.inner().sequence().objects().last().map(|o| o.id);
        ensure(first == Some(ObjectId::Start) && last == Some(ObjectId::End), || {
            "sentinels".into()
        })?;
        ensure(w.inner().sequence().value().to_string() == "ace", || "value_of".into())?;
    }
    ensure(woot.report.passed() && ot.report.passed(), || "checks failed".into())?;
    Ok("both engines reach ace; BUF and IS match".into())
}

fn ablation() -> Outcome {
    let opts = RunOptions {
        ablation: Ablation::Skip34,
        ..RunOptions::new(EngineKind::Woot)
    };
    let out = run_scenario(&Scenario::fig1(), &opts).map_err(|e| e.to_string())?;
    let texts: Vec<&str> = out.report.sites.iter().map(|s| s.text.as_str()).collect();
    ensure(texts == ["ae", "abce"], || format!("texts {texts:?}"))?;
    ensure(!out.report.convergence.passed, || "convergence did not fail".into())?;
    ensure(out.report.note.as_deref() == Some(ABLATION_NOTE), || {
        "no explanation in report".into()
    })?;
    Ok("A=ae, B=abce, convergence failure reported".into())
}

fn fuzz_suite(report: &FuzzReport) -> Outcome {
    ensure(report.executed == 2000, || format!("{} runs executed", report.executed))?;
    ensure(report.passed(), || {
        let f = &report.failures[0];
        format!(
            "{} failures, first: {} run {} {} seed {}",
            report.failures.len(),
            f.engine,
            f.run,
            f.check,
            f.seed
        )
    })?;
    Ok(format!(
        "1000 scenarios x 2 engines, {} ops, 0 failures",
        report.total_ops
    ))
}

fn random_op(rng: &mut ChaCha8Rng, len: usize, insert: bool) -> ExternalOp {
    if insert {
        ExternalOp::ins(rng.random_range(0..=len), rng.random_range('a'..='z'))
    } else {
        ExternalOp::del(rng.random_range(0..len))
    }
}

fn tp1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut per_kind = [0usize; 4];
    for i in 0..10_000 {
        let len = rng.random_range(0..=12);
        let s: String = (0..len).map(|_| rng.random_range('a'..='z')).collect();
        let kind = i % 4;
        let (a_ins, b_ins) = if len == 0 {
            (true, true)
        } else {
            (kind < 2, kind % 2 == 0)
        };
        let (a, b) = (random_op(&mut rng, len, a_ins), random_op(&mut rng, len, b_ins));
        let (sa, sb) = (SiteId(1), SiteId(2));
        let apply2 = |x: &ExternalOp, y: &ExternalOp| -> Result<String, String> {
            let mut st = ExternalState::from(s.as_str());
            st.apply(x).map_err(|e| e.to_string())?;
            st.apply(y).map_err(|e| e.to_string())?;
            Ok(st.to_string())
        };
        let left = apply2(&a, &transform(&b, sb, &a, sa))?;
        let right = apply2(&b, &transform(&a, sa, &b, sb))?;
        ensure(left == right, || {
            format!("`{s}` with {a} and {b}: `{left}` vs `{right}`")
        })?;
        per_kind[(!a_ins as usize) * 2 + !b_ins as usize] += 1;
    }
    ensure(per_kind.iter().all(|&n| n > 0), || {
        format!("combination counts {per_kind:?}")
    })?;
    Ok(format!("10000 pairs, ii/id/di/dd = {per_kind:?}"))
}

fn order() -> Outcome {
    let r = order_insensitivity(&OrderConfig::default()).map_err(|e| e.to_string())?;
    ensure(r.passed(), || {
        format!("{} failures, first: {}", r.failures.len(), r.failures[0])
    })?;
    ensure(r.sets == 1000, || format!("{} sets", r.sets))?;
    Ok(format!(
        "{} sets ({} exhaustive, {} sampled), {} schedules",
        r.sets, r.exhaustive_sets, r.sampled_sets, r.schedules
    ))
}

fn dual_path(report: &FuzzReport) -> Outcome {
    let woot_only = FuzzConfig {
        engines: vec![EngineKind::Woot],
        ..FuzzConfig::default()
    };
    let r = fuzz(&woot_only).map_err(|e| e.to_string())?;
    ensure(!report.failures.iter().any(|f| f.check == "invariants"), || {
        "invariant failure in suite".into()
    })?;
    ensure(r.passed() && r.dual_path_checks > 0, || "dual-path failures".into())?;
    // One check after each local op and after each of its n - 1 deliveries.
    let mut steps = 0u64;
    for run in 0..woot_only.runs {
        let sc = fuzz_scenario(&woot_only, run, Mode::Causal);
        let out = run_scenario(&sc, &RunOptions::new(EngineKind::Woot)).map_err(|e| e.to_string())?;
        steps += (out.script.len() * sc.sites) as u64;
    }
    ensure(r.dual_path_checks == steps, || {
        format!("{} checks for {steps} steps", r.dual_path_checks)
    })?;
    Ok(format!(
        "{} local and remote steps, both paths equal after each",
        r.dual_path_checks
    ))
}

fn complexity() -> Outcome {
    let big = Scenario {
        initial: "x".repeat(100_000),
        script: Script::Explicit(Vec::new()),
        ..Scenario::fig1()
    };
    let w = run_scenario(&big, &RunOptions::new(EngineKind::Woot)).map_err(|e| e.to_string())?;
    let o = run_scenario(&big, &RunOptions::new(EngineKind::Ot)).map_err(|e| e.to_string())?;
    ensure(w.metrics.init_cost == 100_000 && o.metrics.init_cost == 0, || {
        format!("init cost woot {} ot {}", w.metrics.init_cost, o.metrics.init_cost)
    })?;
    let (wt, ot) = (
        gtedit::metrics::init_time(EngineKind::Woot, 100_000),
        gtedit::metrics::init_time(EngineKind::Ot, 100_000),
    );

    let seq = Workload::sequential(1_000, 3, 1_000, 1).scenario();
    let opts = |engine| RunOptions {
        checks: false,
        ..RunOptions::new(engine)
    };
    let so = run_scenario(&seq, &opts(EngineKind::Ot)).map_err(|e| e.to_string())?;
    let tf = so.metrics.local_transforms + so.metrics.remote_transforms;
    ensure(so.metrics.ops == 1_000 && tf == 0, || {
        format!("{tf} OT transforms on sequential workload")
    })?;
    let sw = run_scenario(&seq, &opts(EngineKind::Woot)).map_err(|e| e.to_string())?;
    let steps = sw.metrics.local_steps.iter().chain(&sw.metrics.remote_steps);
    ensure(steps.clone().count() == 3_000 && steps.clone().all(|&s| s > 0), || {
        "a WOOT conversion without search steps".into()
    })?;

    let b = bench(&BenchSpec::default()).map_err(|e| e.to_string())?;
    ensure(b.passed(), || {
        let f = b.checks.iter().find(|c| !c.passed).unwrap();
        format!("{}: {}", f.name, f.detail)
    })?;
    let detail = |name: &str| {
        b.checks
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.detail.clone())
            .unwrap_or_default()
    };

    let cfg = FuzzConfig {
        runs: 100,
        ..FuzzConfig::default()
    };
    for run in 0..cfg.runs {
        let sc = fuzz_scenario(&cfg, run, Mode::Sequencer);
        let ot = run_scenario(&sc, &RunOptions::new(EngineKind::Ot)).map_err(|e| e.to_string())?;
        ensure(ot.report.sites.iter().all(|s| s.buffer == 0), || {
            format!("OT buffer left in run {run}")
        })?;
        let woot = run_scenario(&sc, &RunOptions::new(EngineKind::Woot)).map_err(|e| e.to_string())?;
        let inserts = woot
            .script
            .iter()
            .filter(|s| matches!(s.op, ExternalOp::Insert { .. }))
            .count();
        let expected = sc.initial.chars().count() + inserts;
        ensure(woot.report.sites.iter().all(|s| s.total == expected), || {
            format!("WOOT object count in run {run} differs from {expected}")
        })?;
    }
    Ok(format!(
        "init 10^5: woot 100000 objects / ot 0 (time {wt} vs {ot} ns); sequential 10^3 ops: 0 transforms; {}; {}; 100 quiescent runs",
        detail("max-c-at-most-10"),
        detail("C-over-c-at-least-100")
    ))
}

fn determinism() -> Outcome {
    let cfg = FuzzConfig::default();
    let mut scenarios = vec![Scenario::fig1()];
    scenarios.extend((0..20).map(|r| fuzz_scenario(&cfg, r, Mode::Sequencer)));
    scenarios.extend((20..40).map(|r| fuzz_scenario(&cfg, r, Mode::Causal)));
    let mut n = 0;
    for sc in &scenarios {
        for engine in [EngineKind::Ot, EngineKind::Woot] {
            if engine == EngineKind::Ot && sc.mode == Mode::Causal && sc.sites > 2 {
                continue;
            }
            let opts = RunOptions {
                gc_every: Some(5),
                ..RunOptions::new(engine)
            };
            let a = run_scenario(sc, &opts).map_err(|e| e.to_string())?;
            let b = run_scenario(sc, &opts).map_err(|e| e.to_string())?;
            ensure(a.trace.to_string() == b.trace.to_string(), || {
                format!("{} trace differs", sc.name)
            })?;
            ensure(a.report.to_json() == b.report.to_json(), || {
                format!("{} report differs", sc.name)
            })?;
            let csv = |r| to_csv(&[CsvRow::from_report(&sc.name, r)]).unwrap();
            ensure(csv(&a.report) == csv(&b.report), || format!("{} CSV differs", sc.name))?;
            n += 1;
        }
    }
    let f1 = fuzz(&FuzzConfig {
        runs: 50,
        ..cfg.clone()
    })
    .map_err(|e| e.to_string())?;
    let f2 = fuzz(&FuzzConfig { runs: 50, ..cfg }).map_err(|e| e.to_string())?;
    ensure(f1 == f2, || "fuzz reports differ".into())?;
    Ok(format!("{n} runs repeated byte-identically; fuzz report stable"))
}

fn report(n: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut outcome = f();
    let elapsed = start.elapsed();
    if let (Ok(_), Some(limit)) = (&outcome, limit) {
        if elapsed > limit {
            outcome = Err(format!("took {elapsed:.2?}, limit {limit:?}"));
        }
    }
    match &outcome {
        Ok(detail) => println!("criterion {n} PASS {name}: {detail} [{elapsed:.2?}]"),
        Err(detail) => println!("criterion {n} FAIL {name}: {detail} [{elapsed:.2?}]"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= report(1, "fig1-golden", Some(secs(1)), fig1);
    ok &= report(2, "ablation", Some(secs(1)), ablation);
    let start = Instant::now();
    let suite = fuzz(&FuzzConfig::default());
    let suite_time = start.elapsed();
    ok &= report(3, "fuzz-convergence", None, || {
        let r = suite.as_ref().map_err(|e| e.to_string())?;
        ensure(suite_time < secs(60), || format!("suite took {suite_time:.2?}"))?;
        fuzz_suite(r).map(|d| format!("{d}, suite {suite_time:.2?}"))
    });
    ok &= report(4, "tp1", Some(secs(10)), tp1);
    ok &= report(5, "woot-order-insensitivity", None, order);
    ok &= report(6, "dual-path-value", None, || {
        dual_path(suite.as_ref().map_err(|e| e.to_string())?)
    });
    ok &= report(7, "complexity", None, complexity);
    ok &= report(8, "determinism", None, determinism);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
