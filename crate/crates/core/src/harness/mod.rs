//! Scenario execution and correctness checks.

mod check;
mod fuzz;
mod order;

pub use check::{check_causality, check_convergence, check_intention, replay_texts};
pub use fuzz::{
    cross_engine_compare, fuzz, fuzz_scenario, run_seed, shrink, CrossEngineReport, CrossOutcome, FuzzConfig,
    FuzzFailure, FuzzReport,
};
pub use order::{order_insensitivity, OrderConfig, OrderReport};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framework::{Engine, EngineKind, OtEngine, Site, WireMessage, WootEngine};
use crate::metrics::{collect, MetricsBundle, MetricsSummary};
use crate::model::{ExternalOp, SiteId, VectorClock};
use crate::netsim::{Envelope, Inbox, Mode, Network, Node, Sequencer};
use crate::ot::{OtControl, TieBreak};
use crate::scenario::{FuzzSpec, Scenario, Script, ScriptOp};
use crate::trace::{Event, Trace};

/// Message attached to reports of runs with the WOOT ablation.
pub const ABLATION_NOTE: &str = "ablation skip34: remote operations were integrated into every internal \
sequence but their position-based form was never computed or applied, so the visible documents kept \
only their local edits";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    #[default]
    None,
    /// WOOT remote handler stops after integration: no conversion back to a
    /// position and no external apply.
    Skip34,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::None => "none",
            Ablation::Skip34 => "skip34",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "skip34" => Ok(Ablation::Skip34),
            _ => Err(Error::Scenario(format!("unknown ablation `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub engine: EngineKind,
    pub ablation: Ablation,
    /// Engine self checks after every step: TP1 sampling and canonical
    /// state audit for OT, mirror and dual-path value checks for WOOT.
    pub checks: bool,
    /// Collect garbage at a site after this many deliveries, using the
    /// clocks it has learned from incoming messages.
    pub gc_every: Option<usize>,
    /// At quiescence every site learns every clock and collects.
    pub final_gossip: bool,
    /// Record wall-clock handling times.
    pub timing: bool,
    /// Keep every broadcast message in the output.
    pub capture: bool,
    pub tie_break: TieBreak,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            engine: EngineKind::Ot,
            ablation: Ablation::None,
            checks: true,
            gc_every: None,
            final_gossip: true,
            timing: false,
            capture: false,
            tie_break: TieBreak::SiteOrder,
        }
    }
}

impl RunOptions {
    pub fn new(engine: EngineKind) -> Self {
        RunOptions {
            engine,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub details: Vec<String>,
}

impl Verdict {
    pub fn pass() -> Self {
        Verdict {
            passed: true,
            details: Vec::new(),
        }
    }

    pub fn from_details(details: Vec<String>) -> Self {
        Verdict {
            passed: details.is_empty(),
            details,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteReport {
    pub site: SiteId,
    pub text: String,
    pub buffer: usize,
    #[serde(rename = "C")]
    pub visible: usize,
    #[serde(rename = "C_t")]
    pub total: usize,
    /// Internal sequence dump (WOOT).
    #[serde(skip)]
    pub dump: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub engine: EngineKind,
    pub mode: Mode,
    pub ablation: Ablation,
    pub seed: u64,
    pub doc_len: usize,
    pub sites: Vec<SiteReport>,
    pub convergence: Verdict,
    pub intention: Verdict,
    pub causality: Verdict,
    /// Engine self checks, queue drainage and trace consistency.
    pub invariants: Verdict,
    pub metrics: MetricsSummary,
    pub trace_digest: String,
    /// First engine error, which ends the run early.
    pub error: Option<String>,
    pub note: Option<String>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.convergence.passed && self.intention.passed && self.causality.passed && self.invariants.passed
    }

    /// Name of the first failing check.
    pub fn first_failure(&self) -> Option<&'static str> {
        [
            ("invariants", &self.invariants),
            ("convergence", &self.convergence),
            ("intention", &self.intention),
            ("causality", &self.causality),
        ]
        .into_iter()
        .find(|(_, v)| !v.passed)
        .map(|(n, _)| n)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything a run produces.
pub struct RunOutput {
    pub report: RunReport,
    pub trace: Trace,
    pub metrics: MetricsBundle,
    /// Operations in generation order, replayable as an explicit script.
    pub script: Vec<ScriptOp>,
    /// Broadcast messages in generation order, when captured.
    pub messages: Vec<WireMessage>,
    pub sites: Vec<Site>,
    /// Engine checks performed after remote operations.
    pub dual_path_checks: u64,
    pub tp1_checks: u64,
    /// Transformation ties seen by OT sites.
    pub ties: u64,
}

/// Picks the OT control for a scenario: the sequencer mode orders all
/// operations centrally, causal mode supports two sites.
pub fn make_engine(kind: EngineKind, site: SiteId, scenario: &Scenario, opts: &RunOptions) -> Result<Box<dyn Engine>> {
    let initial = scenario.initial_state();
    Ok(match kind {
        EngineKind::Ot => {
            if opts.ablation != Ablation::None {
                return Err(Error::Unsupported(
                    "the ablation applies to the WOOT engine only".into(),
                ));
            }
            let engine = match scenario.mode {
                Mode::Sequencer => {
                    let e = OtEngine::new(site, OtControl::Sequencer);
                    if opts.checks {
                        e.with_audit(&initial)
                    } else {
                        e
                    }
                }
                Mode::Causal if scenario.sites <= 2 => OtEngine::new(site, OtControl::PeerPair),
                Mode::Causal => {
                    return Err(Error::Unsupported(
                        "OT without a sequencer supports at most two sites".into(),
                    ))
                }
            };
            Box::new(engine.with_tie_break(opts.tie_break))
        }
        EngineKind::Woot => {
            Box::new(WootEngine::new(site, &initial).with_integrate_only(opts.ablation == Ablation::Skip34))
        }
    })
}

struct Planned {
    tick: u64,
    site: SiteId,
    op: Option<ExternalOp>,
}

fn plan(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Vec<Planned> {
    match &scenario.script {
        Script::Explicit(_) => scenario
            .ordered_script()
            .into_iter()
            .map(|o| Planned {
                tick: o.tick,
                site: o.site,
                op: Some(o.op),
            })
            .collect(),
        Script::Fuzz(spec) => {
            let mut tick = 0;
            (0..spec.ops)
                .map(|i| {
                    if i > 0 {
                        tick += rng.random_range(spec.min_gap..=spec.max_gap);
                    }
                    Planned {
                        tick,
                        site: SiteId(rng.random_range(1..=scenario.sites as u32)),
                        op: None,
                    }
                })
                .collect()
        }
    }
}

fn draw_op(spec: &FuzzSpec, len: usize, rng: &mut ChaCha8Rng) -> ExternalOp {
    if len == 0 || rng.random_bool(spec.insert_ratio) {
        let ch = spec.alphabet[rng.random_range(0..spec.alphabet.len())];
        ExternalOp::ins(rng.random_range(0..=len), ch)
    } else {
        ExternalOp::del(rng.random_range(0..len))
    }
}

struct Sim<'a> {
    scenario: &'a Scenario,
    opts: &'a RunOptions,
    sites: Vec<Site>,
    inboxes: Vec<Inbox>,
    /// Latest clock each site has learned from every site.
    known: Vec<BTreeMap<SiteId, VectorClock>>,
    since_gc: Vec<usize>,
    net: Network,
    sequencer: Sequencer,
    trace: Trace,
    script: Vec<ScriptOp>,
    messages: Vec<WireMessage>,
    failures: Vec<String>,
    local_ns: Vec<u64>,
    remote_ns: Vec<u64>,
    dual_path_checks: u64,
    requeues: u64,
}

impl Sim<'_> {
    fn idx(site: SiteId) -> usize {
        site.0 as usize - 1
    }

    fn check_site(&mut self, i: usize, after: &str) {
        if !self.opts.checks || self.opts.ablation != Ablation::None {
            return;
        }
        let site = &self.sites[i];
        let stats = site.stats();
        if stats.visible != site.external().len() {
            self.failures.push(format!(
                "site {} after {after}: {} visible objects but document length {}",
                site.id(),
                stats.visible,
                site.external().len()
            ));
        }
        if let Some(value) = site.engine().internal_value() {
            self.dual_path_checks += 1;
            if &value != site.external() {
                self.failures.push(format!(
                    "site {} after {after}: incremental document `{}` differs from rescanned value `{}`",
                    site.id(),
                    site.external(),
                    value
                ));
            }
        }
        if let Some(problem) = site.engine().audit(site.external()) {
            self.failures
                .push(format!("site {} after {after}: {problem}", site.id()));
        }
    }

    fn generate(&mut self, tick: u64, site: SiteId, op: Option<ExternalOp>, rng: &mut ChaCha8Rng) -> Result<()> {
        let i = Self::idx(site);
        let op = match (op, &self.scenario.script) {
            (Some(op), _) => op,
            (None, Script::Fuzz(spec)) => draw_op(spec, self.sites[i].external().len(), rng),
            (None, Script::Explicit(_)) => unreachable!(),
        };
        if !self.sites[i].external().admits(&op) {
            return Err(Error::Scenario(format!(
                "`@{tick} s{site} {op}` does not fit the site's document `{}`",
                self.sites[i].external()
            )));
        }
        let site_ref = &mut self.sites[i];
        let (res, ns) = if self.opts.timing {
            let start = Instant::now();
            let r = site_ref.generate(&op);
            (r, Some(start.elapsed().as_nanos() as u64))
        } else {
            (site_ref.generate(&op), None)
        };
        let (msg, cost) = res?;
        self.local_ns.extend(ns);
        let stats = self.sites[i].stats();
        self.trace.push(Event::Gen {
            tick,
            site,
            seq: msg.seq,
            clock: msg.clock.clone(),
            cost,
            visible: stats.visible,
            total: stats.total,
            op,
        });
        self.script.push(ScriptOp { tick, site, op });
        self.check_site(i, &format!("generating {site}.{}", msg.seq));
        self.known[i].insert(site, msg.clock.clone());
        if self.opts.capture {
            self.messages.push(msg.clone());
        }
        self.net.broadcast(Envelope::new(msg, tick));
        Ok(())
    }

    fn arrive(&mut self, tick: u64, to: Node, envelope: Envelope) -> Result<()> {
        match to {
            Node::Sequencer => {
                for mut e in self.sequencer.receive(envelope) {
                    e.send_tick = tick;
                    self.net.fan_out(e);
                }
                Ok(())
            }
            Node::Site(site) => {
                self.inboxes[Self::idx(site)].push(envelope);
                self.drain(tick, site)
            }
        }
    }

    fn drain(&mut self, tick: u64, site: SiteId) -> Result<()> {
        let i = Self::idx(site);
        loop {
            let clock = self.sites[i].engine().clock().clone();
            let Some(env) = self.inboxes[i].take_ready(&clock) else {
                return Ok(());
            };
            let msg = env.msg.clone();
            if msg.origin == site {
                let index = env.index.expect("own messages come back sequenced");
                self.sites[i].ack(msg.seq)?;
                self.trace.push(Event::Ack {
                    tick,
                    site,
                    seq: msg.seq,
                    index,
                });
                continue;
            }
            let (res, ns) = {
                let site_ref = &mut self.sites[i];
                if self.opts.timing {
                    let start = Instant::now();
                    let r = site_ref.deliver(&msg);
                    (r, Some(start.elapsed().as_nanos() as u64))
                } else {
                    (site_ref.deliver(&msg), None)
                }
            };
            let delivered = match res {
                Ok(d) => d,
                Err(Error::NotExecutable { .. }) => {
                    self.requeues += 1;
                    self.inboxes[i].requeue(env);
                    return Ok(());
                }
                Err(e) => return Err(e),
            };
            self.remote_ns.extend(ns);
            let stats = self.sites[i].stats();
            self.trace.push(Event::Deliver {
                tick,
                site,
                origin: msg.origin,
                seq: msg.seq,
                clock: msg.clock.clone(),
                index: env.index,
                cost: delivered.cost,
                visible: stats.visible,
                total: stats.total,
                op: delivered.applied,
            });
            self.check_site(i, &format!("delivering {}.{}", msg.origin, msg.seq));
            self.known[i].insert(msg.origin, msg.clock.clone());
            self.since_gc[i] += 1;
            if self.opts.gc_every.is_some_and(|n| self.since_gc[i] >= n) {
                self.since_gc[i] = 0;
                let mut stability = self.known[i].clone();
                stability.insert(site, self.sites[i].engine().clock().clone());
                self.collect(tick, i, &stability)?;
            }
        }
    }

    fn collect(&mut self, tick: u64, i: usize, stability: &BTreeMap<SiteId, VectorClock>) -> Result<()> {
        let collected = self.sites[i].gc(stability)?;
        let buffer = self.sites[i].stats().buffer_len;
        self.trace.push(Event::Gc {
            tick,
            site: self.sites[i].id(),
            collected,
            buffer,
        });
        Ok(())
    }

    fn run(&mut self, rng: &mut ChaCha8Rng) -> Result<u64> {
        let planned = plan(self.scenario, rng);
        let mut next = 0;
        let mut now = 0;
        loop {
            let gen_tick = planned.get(next).map(|p| p.tick);
            match (gen_tick, self.net.peek_tick()) {
                (None, None) => break,
                (Some(g), Some(n)) if n <= g => {
                    let a = self.net.next_arrival().unwrap();
                    now = a.tick;
                    self.arrive(a.tick, a.to, a.envelope)?;
                }
                (Some(_), _) => {
                    let p = &planned[next];
                    now = p.tick;
                    let (site, op) = (p.site, p.op);
                    next += 1;
                    self.generate(now, site, op, rng)?;
                }
                (None, Some(_)) => {
                    let a = self.net.next_arrival().unwrap();
                    now = a.tick;
                    self.arrive(a.tick, a.to, a.envelope)?;
                }
            }
        }
        Ok(now)
    }
}

/// Seed of the operation generator, kept apart from the network's stream so
/// that a realized script replays with the same schedule.
fn generator_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_0f0a_e7a7_0b5e
}

/// Runs a scenario to quiescence and checks the outcome.
///
/// An invalid scenario or configuration is an error. Engine failures end
/// the run early and are reported in [`RunReport::error`].
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunOutput> {
    scenario.validate()?;
    let ids: Vec<SiteId> = scenario.sim_config().site_ids().collect();
    let mut trace = Trace::new();
    trace.push(Event::Start {
        engine: opts.engine,
        mode: scenario.mode,
        sites: scenario.sites,
        doc: scenario.initial.clone(),
    });
    let mut sites = Vec::with_capacity(ids.len());
    for &id in &ids {
        let site = Site::new(make_engine(opts.engine, id, scenario, opts)?, scenario.initial_state());
        let stats = site.stats();
        trace.push(Event::Init {
            site: id,
            cost: site.engine().init_cost(),
            visible: stats.visible,
            total: stats.total,
        });
        sites.push(site);
    }
    let empty_knowledge: BTreeMap<SiteId, VectorClock> = ids.iter().map(|&s| (s, VectorClock::new())).collect();
    let mut sim = Sim {
        scenario,
        opts,
        inboxes: ids.iter().map(|_| Inbox::new()).collect(),
        known: vec![empty_knowledge; ids.len()],
        since_gc: vec![0; ids.len()],
        sites,
        net: Network::new(scenario.sim_config())?,
        sequencer: Sequencer::new(),
        trace,
        script: Vec::new(),
        messages: Vec::new(),
        failures: Vec::new(),
        local_ns: Vec::new(),
        remote_ns: Vec::new(),
        dual_path_checks: 0,
        requeues: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(generator_seed(scenario.seed));
    let error = match sim.run(&mut rng) {
        Ok(end) => {
            if opts.final_gossip {
                let stability: BTreeMap<SiteId, VectorClock> =
                    sim.sites.iter().map(|s| (s.id(), s.engine().clock().clone())).collect();
                let mut err = None;
                for i in 0..sim.sites.len() {
                    if let Err(e) = sim.collect(end, i, &stability) {
                        err = Some(e);
                        break;
                    }
                }
                err.map(|e| e.to_string())
            } else {
                None
            }
        }
        Err(e @ Error::Scenario(_)) => return Err(e),
        Err(e) => Some(e.to_string()),
    };

    let mut failures = std::mem::take(&mut sim.failures);
    if let Some(e) = &error {
        failures.push(format!("run aborted: {e}"));
    } else {
        for (i, inbox) in sim.inboxes.iter().enumerate() {
            if !inbox.is_empty() {
                failures.push(format!(
                    "site {} ended with {} undelivered messages",
                    ids[i],
                    inbox.len()
                ));
            }
        }
        if sim.sequencer.held() > 0 {
            failures.push(format!(
                "sequencer ended with {} unordered messages",
                sim.sequencer.held()
            ));
        }
        if sim.requeues > 0 {
            failures.push(format!(
                "{} causally ready operations were not executable",
                sim.requeues
            ));
        }
    }

    let site_reports: Vec<SiteReport> = sim
        .sites
        .iter()
        .map(|s| {
            let stats = s.stats();
            SiteReport {
                site: s.id(),
                text: s.external().to_string(),
                buffer: stats.buffer_len,
                visible: stats.visible,
                total: stats.total,
                dump: s.engine().internal_dump(),
            }
        })
        .collect();

    if error.is_none() {
        match replay_texts(&sim.trace) {
            Ok(texts) => {
                for (r, t) in site_reports.iter().zip(&texts) {
                    if &r.text != t {
                        failures.push(format!(
                            "site {}: trace replays to `{t}` but document is `{}`",
                            r.site, r.text
                        ));
                    }
                }
            }
            Err(e) => failures.push(format!("trace does not replay: {e}")),
        }
    }

    let mut metrics = collect(&sim.trace);
    metrics.local_ns = std::mem::take(&mut sim.local_ns);
    metrics.remote_ns = std::mem::take(&mut sim.remote_ns);

    let (tp1_checks, ties) = sim
        .sites
        .iter()
        .filter_map(|s| s.engine().as_any().downcast_ref::<OtEngine>())
        .fold((0, 0), |(c, t), e| {
            (c + e.inner().counters().tp1_checks, t + e.inner().counters().ties)
        });

    let mut report = RunReport {
        scenario: scenario.name.clone(),
        engine: opts.engine,
        mode: scenario.mode,
        ablation: opts.ablation,
        seed: scenario.seed,
        doc_len: scenario.initial.chars().count(),
        sites: site_reports,
        convergence: Verdict::pass(),
        intention: Verdict::pass(),
        causality: check_causality(&sim.trace),
        invariants: Verdict::from_details(failures),
        metrics: metrics.summary(),
        trace_digest: sim.trace.digest(),
        error,
        note: (opts.ablation == Ablation::Skip34).then(|| ABLATION_NOTE.to_string()),
    };
    report.convergence = check_convergence(&report);
    report.intention = if report.error.is_some() {
        Verdict::from_details(vec!["run aborted before quiescence".into()])
    } else {
        check_intention(&sim.trace)
    };

    Ok(RunOutput {
        report,
        trace: sim.trace,
        metrics,
        script: sim.script,
        messages: sim.messages,
        sites: sim.sites,
        dual_path_checks: sim.dual_path_checks,
        tp1_checks,
        ties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::woot::{IdOpKind, ObjectId};

    #[test]
    fn fig1_ot_converges() {
        let out = run_scenario(&Scenario::fig1(), &RunOptions::new(EngineKind::Ot)).unwrap();
        let texts: Vec<&str> = out.report.sites.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, ["ace", "ace"]);
        assert!(out.report.passed(), "{}", out.report.to_json());
        assert!(out.report.sites.iter().all(|s| s.buffer == 0));
    }

    #[test]
    fn fig1_woot_converges_with_tombstone() {
        let opts = RunOptions {
            capture: true,
            ..RunOptions::new(EngineKind::Woot)
        };
        let out = run_scenario(&Scenario::fig1(), &opts).unwrap();
        assert!(out.report.passed(), "{}", out.report.to_json());
        assert_eq!(out.report.sites[0].dump, out.report.sites[1].dump);
        assert!(out.report.sites[0]
            .dump
            .as_ref()
            .unwrap()
            .contains("b|0.2|prev=0.1|next=0.3|iv"));
        let kinds: Vec<IdOpKind> = out
            .messages
            .iter()
            .map(|m| crate::framework::decode_id_op(&m.payload).unwrap())
            .collect();
        let id = |s, q| ObjectId::new(SiteId(s), q);
        assert_eq!(
            kinds,
            [
                IdOpKind::Delete { target: id(0, 2) },
                IdOpKind::Insert {
                    ch: 'c',
                    id: id(2, 1),
                    prev: id(0, 2),
                    next: id(0, 3)
                }
            ]
        );
    }

    #[test]
    fn fig1_ablation_diverges() {
        let opts = RunOptions {
            ablation: Ablation::Skip34,
            ..RunOptions::new(EngineKind::Woot)
        };
        let out = run_scenario(&Scenario::fig1(), &opts).unwrap();
        let texts: Vec<&str> = out.report.sites.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, ["ae", "abce"]);
        assert!(!out.report.convergence.passed);
        assert_eq!(out.report.note.as_deref(), Some(ABLATION_NOTE));
    }

    #[test]
    fn ot_ablation_rejected() {
        let opts = RunOptions {
            ablation: Ablation::Skip34,
            ..RunOptions::new(EngineKind::Ot)
        };
        assert!(matches!(
            run_scenario(&Scenario::fig1(), &opts),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn ot_peer_mode_limited_to_two_sites() {
        let s = Scenario::fuzz("x", 3, Mode::Causal, 1, FuzzSpec::default());
        assert!(matches!(
            run_scenario(&s, &RunOptions::new(EngineKind::Ot)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn out_of_bounds_script_is_a_scenario_error() {
        let s: Scenario = "sites 2\ndoc ab\n@0 s1 D 2\n".parse().unwrap();
        assert!(matches!(
            run_scenario(&s, &RunOptions::new(EngineKind::Woot)),
            Err(Error::Scenario(_))
        ));
    }

    #[test]
    fn fuzz_scenarios_pass_on_both_engines() {
        for seed in 0..20 {
            for (engine, mode) in [
                (EngineKind::Ot, Mode::Sequencer),
                (EngineKind::Woot, Mode::Causal),
                (EngineKind::Woot, Mode::Sequencer),
            ] {
                let spec = FuzzSpec {
                    ops: 60,
                    ..FuzzSpec::default()
                };
                let s = Scenario::fuzz("f", 2 + (seed % 4) as usize, mode, seed, spec);
                let opts = RunOptions {
                    gc_every: (seed % 2 == 0).then_some(4),
                    ..RunOptions::new(engine)
                };
                let out = run_scenario(&s, &opts).unwrap();
                assert!(
                    out.report.passed(),
                    "{engine} {mode} seed {seed}: {}",
                    out.report.to_json()
                );
            }
        }
    }

    #[test]
    fn ot_peer_fuzz_passes() {
        for seed in 0..30 {
            let s = Scenario::fuzz("p", 2, Mode::Causal, seed, FuzzSpec::default());
            let out = run_scenario(&s, &RunOptions::new(EngineKind::Ot)).unwrap();
            assert!(out.report.passed(), "seed {seed}: {}", out.report.to_json());
        }
    }

    #[test]
    fn realized_script_replays_identically() {
        let s = Scenario::fuzz("r", 3, Mode::Sequencer, 11, FuzzSpec::default());
        let opts = RunOptions::new(EngineKind::Ot);
        let a = run_scenario(&s, &opts).unwrap();
        let explicit = Scenario {
            script: Script::Explicit(a.script.clone()),
            ..s
        };
        let b = run_scenario(&explicit, &opts).unwrap();
        assert_eq!(a.trace, b.trace);
    }
}
