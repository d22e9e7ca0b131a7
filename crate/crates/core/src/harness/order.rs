//! Delivery-order insensitivity of the WOOT engine.
//!
//! Small sessions are run to collect their identifier-based operations.
//! A fresh observer site then integrates those operations in every
//! causally valid order (or a random sample of orders when there are too
//! many) and must always end with the same internal sequence.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_scenario, RunOptions};
use crate::error::Result;
use crate::framework::{decode_id_op, EngineKind, WireMessage};
use crate::model::{ExternalState, SiteId};
use crate::netsim::{LatencyModel, Mode};
use crate::scenario::{FuzzSpec, Scenario};
use crate::woot::{IdOp, WootSite};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderConfig {
    pub sets: usize,
    pub max_ops: usize,
    pub max_sites: usize,
    pub seed: u64,
    /// Enumerate every order when there are at most this many.
    pub exhaustive_limit: u64,
    /// Orders tried otherwise.
    pub samples: usize,
}

impl Default for OrderConfig {
    fn default() -> Self {
        OrderConfig {
            sets: 1000,
            max_ops: 8,
            max_sites: 3,
            seed: 0,
            exhaustive_limit: 5040,
            samples: 500,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderReport {
    pub sets: usize,
    pub exhaustive_sets: usize,
    pub sampled_sets: usize,
    pub schedules: u64,
    pub failures: Vec<String>,
}

impl OrderReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn id_ops(messages: &[WireMessage]) -> Result<Vec<IdOp>> {
    messages
        .iter()
        .map(|m| {
            Ok(IdOp {
                kind: decode_id_op(&m.payload)?,
                origin: m.origin,
                seq: m.seq,
                clock: m.clock.clone(),
            })
        })
        .collect()
}

/// `preds[b]` has bit `a` set iff `a` happened before `b`.
fn predecessors(ops: &[IdOp]) -> Vec<u32> {
    ops.iter()
        .map(|b| {
            ops.iter()
                .enumerate()
                .filter(|(_, a)| a.origin != b.origin || a.seq != b.seq)
                .filter(|(_, a)| b.clock.get(a.origin) >= a.seq)
                .fold(0, |mask, (i, _)| mask | 1 << i)
        })
        .collect()
}

/// Number of linear extensions, counting no further than `cap`.
fn count_orders(preds: &[u32], done: u32, cap: u64) -> u64 {
    if done.count_ones() as usize == preds.len() {
        return 1;
    }
    let mut n = 0;
    for (i, &p) in preds.iter().enumerate() {
        if done & (1 << i) == 0 && p & !done == 0 {
            n += count_orders(preds, done | 1 << i, cap - n);
            if n >= cap {
                return cap;
            }
        }
    }
    n
}

struct Observer<'a> {
    ops: &'a [IdOp],
    preds: Vec<u32>,
    expected: &'a str,
    schedules: u64,
    failures: Vec<String>,
}

impl Observer<'_> {
    fn apply(&mut self, site: &mut WootSite, doc: &mut ExternalState, i: usize, order: &[usize]) -> bool {
        match site.woot_remote(&self.ops[i]) {
            Ok(h) => {
                if let Some(op) = h.value {
                    if let Err(e) = doc.apply(&op) {
                        self.failures.push(format!("order {order:?}: {e}"));
                        return false;
                    }
                }
                true
            }
            Err(e) => {
                self.failures.push(format!("order {order:?}: {e}"));
                false
            }
        }
    }

    fn finish(&mut self, site: &WootSite, doc: &ExternalState, order: &[usize]) {
        self.schedules += 1;
        let dump = site.sequence().dump();
        if dump != self.expected {
            self.failures
                .push(format!("order {order:?} gives a different sequence"));
        } else if site.sequence().value() != *doc {
            self.failures
                .push(format!("order {order:?}: document `{doc}` differs from the sequence"));
        }
    }

    fn all(&mut self, site: &WootSite, doc: &ExternalState, done: u32, order: &mut Vec<usize>) {
        if order.len() == self.ops.len() {
            self.finish(site, doc, order);
            return;
        }
        for i in 0..self.ops.len() {
            if done & (1 << i) == 0 && self.preds[i] & !done == 0 {
                let (mut s, mut d) = (site.clone(), doc.clone());
                order.push(i);
                if self.apply(&mut s, &mut d, i, order) {
                    self.all(&s, &d, done | 1 << i, order);
                }
                order.pop();
                if self.failures.len() > 4 {
                    return;
                }
            }
        }
    }

    fn sample(&mut self, site: &WootSite, doc: &ExternalState, rng: &mut ChaCha8Rng) {
        let (mut s, mut d) = (site.clone(), doc.clone());
        let mut done = 0u32;
        let mut order = Vec::new();
        while order.len() < self.ops.len() {
            let ready: Vec<usize> = (0..self.ops.len())
                .filter(|&i| done & (1 << i) == 0 && self.preds[i] & !done == 0)
                .collect();
            let &i = ready.choose(rng).expect("causal order is acyclic");
            order.push(i);
            done |= 1 << i;
            if !self.apply(&mut s, &mut d, i, &order) {
                return;
            }
        }
        self.finish(&s, &d, &order);
    }
}

fn check_set(cfg: &OrderConfig, set: usize) -> Result<(bool, u64, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (set as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
    let sites = rng.random_range(2..=cfg.max_sites.max(2));
    let spec = FuzzSpec {
        ops: rng.random_range(1..=cfg.max_ops),
        insert_ratio: 0.6,
        alphabet: "xyz".chars().collect(),
        min_gap: 0,
        max_gap: 1,
    };
    let initial: String = "abcd".chars().take(rng.random_range(0..=4)).collect();
    let scenario = Scenario {
        initial,
        latency: LatencyModel::Uniform { lo: 1, hi: 12 },
        ..Scenario::fuzz(format!("order-{set}"), sites, Mode::Causal, rng.random(), spec)
    };
    let opts = RunOptions {
        capture: true,
        ..RunOptions::new(EngineKind::Woot)
    };
    let out = run_scenario(&scenario, &opts)?;
    let mut failures = Vec::new();
    if !out.report.passed() {
        failures.push(format!("{}: the collecting run failed", scenario.name));
    }
    let ops = id_ops(&out.messages)?;
    let expected = out.report.sites[0].dump.clone().unwrap_or_default();
    let observer_site = WootSite::new(SiteId(sites as u32 + 1), &scenario.initial_state());
    let mut obs = Observer {
        ops: &ops,
        preds: predecessors(&ops),
        expected: &expected,
        schedules: 0,
        failures: Vec::new(),
    };
    let total = count_orders(&obs.preds, 0, cfg.exhaustive_limit + 1);
    let exhaustive = total <= cfg.exhaustive_limit;
    let doc = scenario.initial_state();
    if exhaustive {
        obs.all(&observer_site, &doc, 0, &mut Vec::new());
        if obs.failures.is_empty() && obs.schedules != total {
            obs.failures
                .push(format!("enumerated {} of {total} orders", obs.schedules));
        }
    } else {
        for _ in 0..cfg.samples {
            obs.sample(&observer_site, &doc, &mut rng);
        }
    }
    let schedules = obs.schedules;
    failures.extend(obs.failures.into_iter().map(|f| format!("{}: {f}", scenario.name)));
    Ok((exhaustive, schedules, failures))
}

/// Checks `cfg.sets` random operation sets.
pub fn order_insensitivity(cfg: &OrderConfig) -> Result<OrderReport> {
    let results: Vec<(bool, u64, Vec<String>)> = (0..cfg.sets)
        .into_par_iter()
        .map(|set| check_set(cfg, set))
        .collect::<Result<_>>()?;
    let mut report = OrderReport {
        sets: cfg.sets,
        ..OrderReport::default()
    };
    for (exhaustive, schedules, failures) in results {
        if exhaustive {
            report.exhaustive_sets += 1;
        } else {
            report.sampled_sets += 1;
        }
        report.schedules += schedules;
        report.failures.extend(failures);
    }
    Ok(report)
}
