//! Cost variables of a run and the desk-scale benchmark.
//!
//! `c` is the number of buffered operations concurrent with a remote one
//! (OT only). `C` counts visible objects and `C_t` all non-sentinel
//! objects including tombstones; for OT both equal the document length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framework::EngineKind;
use crate::harness::{run_scenario, Ablation, RunOptions, RunReport};
use crate::netsim::{LatencyModel, Mode};
use crate::scenario::{FuzzSpec, Scenario, Script};
use crate::trace::{Event, Trace};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub engine: Option<EngineKind>,
    pub sites: usize,
    pub doc_len: usize,
    pub ops: usize,
    pub deliveries: usize,
    /// Concurrent-set size for each remote operation (OT).
    pub c_samples: Vec<usize>,
    /// `C` after every generation or delivery, in trace order.
    pub visible: Vec<usize>,
    /// `C_t` after every generation or delivery, in trace order.
    pub total: Vec<usize>,
    /// Objects visited per local conversion (WOOT).
    pub local_steps: Vec<u64>,
    /// Objects visited per remote integration and conversion (WOOT).
    pub remote_steps: Vec<u64>,
    pub local_transforms: u64,
    pub remote_transforms: u64,
    /// Objects or buffer entries created per site at session start.
    pub init_cost: usize,
    /// Operations collected per garbage collection.
    pub gc_events: Vec<usize>,
    /// Final `C` and `C_t` per site, by site number.
    pub final_visible: Vec<usize>,
    pub final_total: Vec<usize>,
    /// Wall-clock handling times; empty unless timing was requested.
    pub local_ns: Vec<u64>,
    pub remote_ns: Vec<u64>,
}

fn mean_u64(xs: &[u64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<u64>() as f64 / xs.len() as f64
    }
}

/// Builds the bundle from a trace. Timing samples are not part of the
/// trace and stay empty.
pub fn collect(trace: &Trace) -> MetricsBundle {
    let mut m = MetricsBundle::default();
    let mut last: Vec<(usize, usize)> = Vec::new();
    let note = |last: &mut Vec<(usize, usize)>, site: usize, v: usize, t: usize| {
        if last.len() <= site {
            last.resize(site + 1, (0, 0));
        }
        last[site] = (v, t);
    };
    for e in &trace.events {
        match e {
            Event::Start { engine, sites, doc, .. } => {
                m.engine = Some(*engine);
                m.sites = *sites;
                m.doc_len = doc.chars().count();
            }
            Event::Init {
                site,
                cost,
                visible,
                total,
            } => {
                m.init_cost = m.init_cost.max(*cost);
                note(&mut last, site.0 as usize, *visible, *total);
            }
            Event::Gen {
                site,
                cost,
                visible,
                total,
                ..
            } => {
                m.ops += 1;
                m.local_steps.push(cost.search_steps);
                m.local_transforms += cost.transforms;
                m.visible.push(*visible);
                m.total.push(*total);
                note(&mut last, site.0 as usize, *visible, *total);
            }
            Event::Deliver {
                site,
                cost,
                visible,
                total,
                ..
            } => {
                m.deliveries += 1;
                if m.engine == Some(EngineKind::Ot) {
                    m.c_samples.push(cost.concurrent);
                }
                m.remote_steps.push(cost.search_steps);
                m.remote_transforms += cost.transforms;
                m.visible.push(*visible);
                m.total.push(*total);
                note(&mut last, site.0 as usize, *visible, *total);
            }
            Event::Ack { .. } => {}
            Event::Gc { collected, .. } => m.gc_events.push(*collected),
        }
    }
    let sites = last.iter().skip(1);
    m.final_visible = sites.clone().map(|p| p.0).collect();
    m.final_total = sites.map(|p| p.1).collect();
    m
}

impl MetricsBundle {
    pub fn summary(&self) -> MetricsSummary {
        MetricsSummary {
            max_c: self.c_samples.iter().copied().max().unwrap_or(0),
            mean_c: mean_u64(&self.c_samples.iter().map(|&c| c as u64).collect::<Vec<_>>()),
            visible: self.final_visible.iter().copied().max().unwrap_or(0),
            total: self.final_total.iter().copied().max().unwrap_or(0),
            transforms: self.local_transforms + self.remote_transforms,
            search_steps: self.local_steps.iter().sum::<u64>() + self.remote_steps.iter().sum::<u64>(),
            local_steps_mean: mean_u64(&self.local_steps),
            remote_steps_mean: mean_u64(&self.remote_steps),
            local_ns_mean: mean_u64(&self.local_ns),
            remote_ns_mean: mean_u64(&self.remote_ns),
            init_cost: self.init_cost,
            gc_total: self.gc_events.iter().sum(),
            ops: self.ops,
            deliveries: self.deliveries,
        }
    }

    /// Every sample has `C_t >= C`.
    pub fn total_dominates(&self) -> bool {
        self.visible.iter().zip(&self.total).all(|(v, t)| t >= v)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub max_c: usize,
    pub mean_c: f64,
    #[serde(rename = "C")]
    pub visible: usize,
    #[serde(rename = "C_t")]
    pub total: usize,
    pub transforms: u64,
    pub search_steps: u64,
    pub local_steps_mean: f64,
    pub remote_steps_mean: f64,
    pub local_ns_mean: f64,
    pub remote_ns_mean: f64,
    pub init_cost: usize,
    pub gc_total: usize,
    pub ops: usize,
    pub deliveries: usize,
}

/// One CSV (or JSON) row per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: String,
    pub engine: EngineKind,
    pub sites: usize,
    pub doc_len: usize,
    pub ops: usize,
    pub max_c: usize,
    pub mean_c: f64,
    #[serde(rename = "C")]
    pub visible: usize,
    #[serde(rename = "C_t")]
    pub total: usize,
    pub local_ns_mean: f64,
    pub remote_ns_mean: f64,
    pub init_cost: usize,
    pub gc_total: usize,
    pub converged: bool,
}

impl CsvRow {
    pub fn from_report(run_id: impl Into<String>, report: &RunReport) -> Self {
        let m = &report.metrics;
        CsvRow {
            run_id: run_id.into(),
            engine: report.engine,
            sites: report.sites.len(),
            doc_len: report.doc_len,
            ops: m.ops,
            max_c: m.max_c,
            mean_c: m.mean_c,
            visible: m.visible,
            total: m.total,
            local_ns_mean: m.local_ns_mean,
            remote_ns_mean: m.remote_ns_mean,
            init_cost: m.init_cost,
            gc_total: m.gc_total,
            converged: report.convergence.passed,
        }
    }
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Unsupported(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Unsupported(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Benchmark workload. Operations are drawn at random sites against their
/// current documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub doc_len: usize,
    pub sites: usize,
    pub ops: usize,
    /// Ticks between consecutive operations.
    pub gap: u64,
    pub latency: LatencyModel,
    pub seed: u64,
}

impl Workload {
    /// Every operation reaches every site before the next one is generated.
    pub fn sequential(doc_len: usize, sites: usize, ops: usize, seed: u64) -> Self {
        Workload {
            doc_len,
            sites,
            ops,
            gap: 10,
            latency: LatencyModel::Fixed(2),
            seed,
        }
    }

    /// One operation per tick with up to four ticks per hop, which keeps at
    /// most ten operations in flight.
    pub fn concurrent(doc_len: usize, sites: usize, ops: usize, seed: u64) -> Self {
        Workload {
            doc_len,
            sites,
            ops,
            gap: 1,
            latency: LatencyModel::Uniform { lo: 1, hi: 4 },
            seed,
        }
    }

    pub fn scenario(&self) -> Scenario {
        let alphabet: Vec<char> = ('a'..='z').collect();
        let initial: String = (0..self.doc_len).map(|i| alphabet[i % alphabet.len()]).collect();
        Scenario {
            name: format!("bench-{}-{}", self.doc_len, self.gap),
            initial,
            sites: self.sites,
            mode: Mode::Sequencer,
            latency: self.latency.clone(),
            seed: self.seed,
            script: Script::Fuzz(FuzzSpec {
                ops: self.ops,
                insert_ratio: 0.6,
                alphabet,
                min_gap: self.gap,
                max_gap: self.gap,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub engine: EngineKind,
    pub doc_len: usize,
    /// Abstract cost per operation: transform invocations for OT, object
    /// visits for WOOT.
    pub local_cost: f64,
    pub remote_cost: f64,
    pub sequential_cost: f64,
    pub concurrent_cost: f64,
    pub init_cost: usize,
    pub max_c: usize,
    #[serde(rename = "C")]
    pub visible: usize,
    #[serde(rename = "C_t")]
    pub total: usize,
    pub init_ns: u64,
    pub local_ns_mean: f64,
    pub remote_ns_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub checks: Vec<BenchCheck>,
}

impl BenchReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub doc_len: usize,
    pub sites: usize,
    pub ops: usize,
    pub seed: u64,
    pub timing: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            doc_len: 10_000,
            sites: 3,
            ops: 300,
            seed: 1,
            timing: false,
        }
    }
}

fn cost_per_op(engine: EngineKind, m: &MetricsBundle, local: bool) -> f64 {
    match (engine, local) {
        (EngineKind::Ot, true) => m.local_transforms as f64 / m.ops.max(1) as f64,
        (EngineKind::Ot, false) => m.remote_transforms as f64 / m.deliveries.max(1) as f64,
        (EngineKind::Woot, true) => mean_u64(&m.local_steps),
        (EngineKind::Woot, false) => mean_u64(&m.remote_steps),
    }
}

fn bench_run(engine: EngineKind, w: &Workload, timing: bool) -> Result<(RunReport, MetricsBundle)> {
    let opts = RunOptions {
        engine,
        ablation: Ablation::None,
        checks: false,
        timing,
        ..RunOptions::default()
    };
    let out = run_scenario(&w.scenario(), &opts)?;
    if let Some(err) = &out.report.error {
        return Err(Error::Unsupported(format!("bench run failed: {err}")));
    }
    Ok((out.report, out.metrics))
}

/// Runs the sequential and concurrent workloads on both engines, plus a
/// sequential WOOT run on a document ten times smaller to observe how
/// search cost grows with `C`.
pub fn bench(spec: &BenchSpec) -> Result<BenchReport> {
    let seq = Workload::sequential(spec.doc_len, spec.sites, spec.ops, spec.seed);
    let conc = Workload::concurrent(spec.doc_len, spec.sites, spec.ops, spec.seed);
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut check = |name: &str, passed: bool, detail: String| {
        checks.push(BenchCheck {
            name: name.into(),
            passed,
            detail,
        })
    };
    let mut max_c_ot = 0;
    let mut woot_c = (0, 0);
    for engine in [EngineKind::Ot, EngineKind::Woot] {
        let (_, ms) = bench_run(engine, &seq, spec.timing)?;
        let (rc, mc) = bench_run(engine, &conc, spec.timing)?;
        let init_ns = if spec.timing {
            init_time(engine, spec.doc_len)
        } else {
            0
        };
        match engine {
            EngineKind::Ot => {
                let tf = ms.local_transforms + ms.remote_transforms;
                check(
                    "ot-sequential-no-transforms",
                    tf == 0,
                    format!("{tf} transform invocations"),
                );
                max_c_ot = rc.metrics.max_c;
            }
            EngineKind::Woot => {
                let zero = ms
                    .local_steps
                    .iter()
                    .chain(&ms.remote_steps)
                    .filter(|&&s| s == 0)
                    .count();
                check(
                    "woot-sequential-search-every-op",
                    zero == 0,
                    format!(
                        "{zero} of {} conversions without object visits",
                        ms.local_steps.len() + ms.remote_steps.len()
                    ),
                );
                woot_c = (rc.metrics.visible, rc.metrics.total);
                let small = Workload::sequential((spec.doc_len / 10).max(1), spec.sites, spec.ops, spec.seed);
                let (_, m_small) = bench_run(engine, &small, false)?;
                let (a, b) = (mean_u64(&m_small.local_steps), mean_u64(&ms.local_steps));
                check(
                    "woot-search-grows-with-C",
                    b > a,
                    format!(
                        "local search steps {a:.1} at {} chars, {b:.1} at {}",
                        small.doc_len, spec.doc_len
                    ),
                );
            }
        }
        rows.push(BenchRow {
            engine,
            doc_len: spec.doc_len,
            local_cost: cost_per_op(engine, &mc, true),
            remote_cost: cost_per_op(engine, &mc, false),
            sequential_cost: (cost_per_op(engine, &ms, true) * ms.ops as f64
                + cost_per_op(engine, &ms, false) * ms.deliveries as f64)
                / (ms.ops + ms.deliveries).max(1) as f64,
            concurrent_cost: cost_per_op(engine, &mc, false),
            init_cost: rc.metrics.init_cost,
            max_c: rc.metrics.max_c,
            visible: rc.metrics.visible,
            total: rc.metrics.total,
            init_ns,
            local_ns_mean: rc.metrics.local_ns_mean,
            remote_ns_mean: rc.metrics.remote_ns_mean,
        });
    }
    let (c_vis, c_tot) = woot_c;
    check("max-c-at-most-10", max_c_ot <= 10, format!("max c = {max_c_ot}"));
    let ratio = c_vis as f64 / max_c_ot.max(1) as f64;
    check(
        "C-over-c-at-least-100",
        ratio >= 100.0,
        format!("C / max(c,1) = {ratio:.1}"),
    );
    check("C_t-at-least-C", c_tot >= c_vis, format!("C_t = {c_tot}, C = {c_vis}"));
    Ok(BenchReport { rows, checks })
}

/// Wall time to set up one site over a document of `doc_len` characters.
pub fn init_time(engine: EngineKind, doc_len: usize) -> u64 {
    use crate::framework::{OtEngine, WootEngine};
    use crate::model::{ExternalState, SiteId};
    use crate::ot::OtControl;
    let doc = ExternalState::from("x".repeat(doc_len).as_str());
    let start = std::time::Instant::now();
    match engine {
        EngineKind::Ot => drop(std::hint::black_box(OtEngine::new(SiteId(1), OtControl::Sequencer))),
        EngineKind::Woot => drop(std::hint::black_box(WootEngine::new(SiteId(1), &doc))),
    }
    start.elapsed().as_nanos() as u64
}
