//! Deterministic discrete-event network with causal broadcast and an
//! optional total-order sequencer.
//!
//! Time is measured in integer ticks. Every random choice is drawn from a
//! ChaCha stream seeded by [`SimConfig::seed`], so a configuration always
//! produces the same schedule.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framework::WireMessage;
use crate::model::{SiteId, VectorClock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Causal broadcast only.
    #[default]
    Causal,
    /// Causal broadcast through a central node that assigns a total order.
    Sequencer,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Causal => "causal",
            Mode::Sequencer => "sequencer",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Mode::Causal),
            "sequencer" => Ok(Mode::Sequencer),
            _ => Err(Error::Scenario(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyModel {
    Fixed(u64),
    Uniform {
        lo: u64,
        hi: u64,
    },
    /// `matrix[from][to]`, indexed by site number with index 0 standing for
    /// the sequencer. The diagonal is ignored.
    Matrix(Vec<Vec<u64>>),
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Fixed(1)
    }
}

/// Text form: `fixed 3`, `uniform 1 10` or `matrix 0,2,3;2,0,1;3,1,0`.
impl fmt::Display for LatencyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencyModel::Fixed(t) => write!(f, "fixed {t}"),
            LatencyModel::Uniform { lo, hi } => write!(f, "uniform {lo} {hi}"),
            LatencyModel::Matrix(rows) => {
                let rows: Vec<String> = rows
                    .iter()
                    .map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
                    .collect();
                write!(f, "matrix {}", rows.join(";"))
            }
        }
    }
}

impl FromStr for LatencyModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Scenario(format!("bad latency `{s}`"));
        let num = |t: &str| t.parse::<u64>().map_err(|_| bad());
        let words: Vec<&str> = s.split_whitespace().collect();
        match words.as_slice() {
            ["fixed", t] => Ok(LatencyModel::Fixed(num(t)?)),
            ["uniform", lo, hi] => Ok(LatencyModel::Uniform {
                lo: num(lo)?,
                hi: num(hi)?,
            }),
            ["matrix", m] => m
                .split(';')
                .map(|row| row.split(',').map(num).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()
                .map(LatencyModel::Matrix),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub sites: usize,
    pub mode: Mode,
    pub latency: LatencyModel,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(sites: usize, mode: Mode, latency: LatencyModel, seed: u64) -> Self {
        SimConfig {
            sites,
            mode,
            latency,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 {
            return Err(Error::Scenario("at least one site is needed".into()));
        }
        match &self.latency {
            LatencyModel::Fixed(0) => Err(Error::Scenario("latency must be at least 1 tick".into())),
            LatencyModel::Uniform { lo, hi } if *lo == 0 || lo > hi => {
                Err(Error::Scenario(format!("bad uniform latency range {lo}..={hi}")))
            }
            LatencyModel::Matrix(rows) => {
                let n = self.sites + 1;
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Scenario(format!("latency matrix must be {n}x{n}")));
                }
                let zero = (0..n)
                    .flat_map(|i| (0..n).map(move |j| (i, j)))
                    .any(|(i, j)| i != j && rows[i][j] == 0);
                if zero {
                    return Err(Error::Scenario("off-diagonal latencies must be at least 1 tick".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Site identifiers `1..=sites`.
    pub fn site_ids(&self) -> impl Iterator<Item = SiteId> {
        (1..=self.sites as u32).map(SiteId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Sequencer,
    Site(SiteId),
}

impl Node {
    fn index(self) -> usize {
        match self {
            Node::Sequencer => 0,
            Node::Site(s) => s.0 as usize,
        }
    }
}

/// A message in flight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub msg: Arc<WireMessage>,
    pub send_tick: u64,
    /// Total-order index assigned by the sequencer.
    pub index: Option<u64>,
}

impl Envelope {
    pub fn new(msg: WireMessage, send_tick: u64) -> Self {
        Envelope {
            msg: Arc::new(msg),
            send_tick,
            index: None,
        }
    }

    pub fn origin(&self) -> SiteId {
        self.msg.origin
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrival {
    pub tick: u64,
    pub to: Node,
    pub envelope: Envelope,
}

/// True iff `clock` is the next operation from `origin` and everything it
/// depends on has been seen locally.
pub fn causally_ready(origin: SiteId, clock: &VectorClock, local: &VectorClock) -> bool {
    clock.get(origin) == local.get(origin) + 1 && clock.iter().all(|(k, v)| k == origin || v <= local.get(k))
}

/// Event queue of message arrivals, ordered by tick and then by the order
/// in which they were scheduled.
pub struct Network {
    cfg: SimConfig,
    rng: ChaCha8Rng,
    queue: BTreeMap<(u64, u64), (Node, Envelope)>,
    scheduled: u64,
}

impl Network {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Network {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            queue: BTreeMap::new(),
            scheduled: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    fn latency(&mut self, from: Node, to: Node) -> u64 {
        match &self.cfg.latency {
            LatencyModel::Fixed(t) => *t,
            LatencyModel::Uniform { lo, hi } => self.rng.random_range(*lo..=*hi),
            LatencyModel::Matrix(rows) => rows[from.index()][to.index()],
        }
    }

    fn schedule(&mut self, from: Node, to: Node, envelope: Envelope) -> (Node, u64) {
        let tick = envelope.send_tick + self.latency(from, to);
        self.queue.insert((tick, self.scheduled), (to, envelope));
        self.scheduled += 1;
        (to, tick)
    }

    /// Sends a freshly generated message: to every other site in causal
    /// mode, to the sequencer otherwise.
    pub fn broadcast(&mut self, envelope: Envelope) -> Vec<(Node, u64)> {
        let from = Node::Site(envelope.origin());
        match self.cfg.mode {
            Mode::Causal => {
                let targets: Vec<SiteId> = self.cfg.site_ids().filter(|&s| s != envelope.origin()).collect();
                targets
                    .into_iter()
                    .map(|s| self.schedule(from, Node::Site(s), envelope.clone()))
                    .collect()
            }
            Mode::Sequencer => vec![self.schedule(from, Node::Sequencer, envelope)],
        }
    }

    /// Sends a sequenced message to every site, its origin included, which
    /// takes it as an acknowledgement.
    pub fn fan_out(&mut self, envelope: Envelope) -> Vec<(Node, u64)> {
        let sites: Vec<SiteId> = self.cfg.site_ids().collect();
        sites
            .into_iter()
            .map(|s| self.schedule(Node::Sequencer, Node::Site(s), envelope.clone()))
            .collect()
    }

    pub fn peek_tick(&self) -> Option<u64> {
        self.queue.first_key_value().map(|(&(t, _), _)| t)
    }

    pub fn next_arrival(&mut self) -> Option<Arrival> {
        self.queue
            .pop_first()
            .map(|((tick, _), (to, envelope))| Arrival { tick, to, envelope })
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}

/// Central ordering node. Assigns consecutive indices to messages in the
/// order they become causally ready at the sequencer.
#[derive(Debug, Default)]
pub struct Sequencer {
    clock: VectorClock,
    held: Vec<Envelope>,
    next_index: u64,
}

impl Sequencer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts an arrival and returns every message that can now be
    /// ordered, with its index set.
    pub fn receive(&mut self, envelope: Envelope) -> Vec<Envelope> {
        self.held.push(envelope);
        let mut out = Vec::new();
        while let Some(i) = self
            .held
            .iter()
            .position(|e| causally_ready(e.origin(), &e.msg.clock, &self.clock))
        {
            let mut e = self.held.remove(i);
            self.clock.merge(&e.msg.clock);
            self.next_index += 1;
            e.index = Some(self.next_index);
            out.push(e);
        }
        out
    }

    pub fn held(&self) -> usize {
        self.held.len()
    }

    pub fn ordered(&self) -> u64 {
        self.next_index
    }
}

/// Messages that arrived at a site but are not deliverable yet.
#[derive(Debug, Default)]
pub struct Inbox {
    held: Vec<Envelope>,
    next_index: u64,
}

impl Inbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, envelope: Envelope) {
        self.held.push(envelope);
    }

    /// Removes the next deliverable message. Sequenced messages come out in
    /// index order; others as soon as they are causally ready against
    /// `local`.
    pub fn take_ready(&mut self, local: &VectorClock) -> Option<Envelope> {
        let i = self.held.iter().position(|e| match e.index {
            Some(index) => index == self.next_index + 1,
            None => causally_ready(e.origin(), &e.msg.clock, local),
        })?;
        let e = self.held.remove(i);
        if let Some(index) = e.index {
            self.next_index = index;
        }
        Some(e)
    }

    /// Puts back a message that was taken but could not be executed.
    pub fn requeue(&mut self, envelope: Envelope) {
        if let Some(index) = envelope.index {
            self.next_index = index - 1;
        }
        self.held.insert(0, envelope);
    }

    pub fn len(&self) -> usize {
        self.held.len()
    }

    pub fn is_empty(&self) -> bool {
        self.held.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(origin: u32, seq: u64, clock: &[(u32, u64)]) -> WireMessage {
        WireMessage {
            origin: SiteId(origin),
            seq,
            clock: VectorClock::from_pairs(clock.iter().map(|&(s, v)| (SiteId(s), v))),
            payload: vec![b'N'],
        }
    }

    fn drain(net: &mut Network) -> Vec<(u64, Node)> {
        std::iter::from_fn(|| net.next_arrival().map(|a| (a.tick, a.to))).collect()
    }

    #[test]
    fn fixed_latency_two_sites() {
        let mut net = Network::new(SimConfig::new(2, Mode::Causal, LatencyModel::Fixed(3), 0)).unwrap();
        net.broadcast(Envelope::new(msg(1, 1, &[(1, 1)]), 5));
        assert_eq!(drain(&mut net), vec![(8, Node::Site(SiteId(2)))]);
    }

    #[test]
    fn five_sites_four_deliveries() {
        let mut net = Network::new(SimConfig::new(5, Mode::Causal, LatencyModel::Fixed(1), 0)).unwrap();
        let scheduled = net.broadcast(Envelope::new(msg(3, 1, &[(3, 1)]), 0));
        assert_eq!(scheduled.len(), 4);
        assert!(scheduled.iter().all(|(n, _)| *n != Node::Site(SiteId(3))));
    }

    #[test]
    fn uniform_schedule_is_seeded() {
        let schedule = |seed| {
            let mut net = Network::new(SimConfig::new(
                4,
                Mode::Causal,
                LatencyModel::Uniform { lo: 1, hi: 10 },
                seed,
            ))
            .unwrap();
            for t in 0..20 {
                net.broadcast(Envelope::new(msg(1 + (t % 4) as u32, 1, &[]), t));
            }
            drain(&mut net)
        };
        assert_eq!(schedule(42), schedule(42));
        assert_ne!(schedule(42), schedule(43));
        assert!(schedule(42).iter().all(|(t, _)| *t >= 1));
    }

    #[test]
    fn matrix_latency() {
        let latency: LatencyModel = "matrix 0,5,5;5,0,2;5,7,0".parse().unwrap();
        let mut net = Network::new(SimConfig::new(2, Mode::Causal, latency.clone(), 0)).unwrap();
        net.broadcast(Envelope::new(msg(1, 1, &[]), 0));
        net.broadcast(Envelope::new(msg(2, 1, &[]), 0));
        assert_eq!(
            drain(&mut net),
            vec![(2, Node::Site(SiteId(2))), (7, Node::Site(SiteId(1)))]
        );
        assert_eq!(latency.to_string().parse::<LatencyModel>().unwrap(), latency);
        assert!(Network::new(SimConfig::new(3, Mode::Causal, latency, 0)).is_err());
    }

    #[test]
    fn latency_validation() {
        assert!(SimConfig::new(2, Mode::Causal, LatencyModel::Fixed(0), 0)
            .validate()
            .is_err());
        assert!(
            SimConfig::new(2, Mode::Causal, LatencyModel::Uniform { lo: 3, hi: 2 }, 0)
                .validate()
                .is_err()
        );
        assert!(SimConfig::new(0, Mode::Causal, LatencyModel::Fixed(1), 0)
            .validate()
            .is_err());
    }

    #[test]
    fn causal_readiness_examples() {
        let c = |pairs: &[(u32, u64)]| VectorClock::from_pairs(pairs.iter().map(|&(s, v)| (SiteId(s), v)));
        let a = SiteId(1);
        assert!(causally_ready(a, &c(&[(1, 1)]), &c(&[])));
        assert!(!causally_ready(a, &c(&[(1, 2)]), &c(&[])));
        assert!(causally_ready(a, &c(&[(1, 1), (2, 1)]), &c(&[(2, 1)])));
    }

    #[test]
    fn causal_readiness_matches_component_enumeration() {
        // Every clock over two sites with entries up to 2.
        let clocks: Vec<VectorClock> = (0..3u64)
            .flat_map(|x| (0..3u64).map(move |y| VectorClock::from_pairs([(SiteId(1), x), (SiteId(2), y)])))
            .collect();
        for env in &clocks {
            for local in &clocks {
                let next_from_origin = env.get(SiteId(1)) == local.get(SiteId(1)) + 1;
                let deps_seen = env.get(SiteId(2)) <= local.get(SiteId(2));
                assert_eq!(causally_ready(SiteId(1), env, local), next_from_origin && deps_seen);
            }
        }
    }

    #[test]
    fn sequencer_orders_concurrent_by_arrival() {
        let mut seq = Sequencer::new();
        let a = seq.receive(Envelope::new(msg(2, 1, &[(2, 1)]), 0));
        let b = seq.receive(Envelope::new(msg(1, 1, &[(1, 1)]), 0));
        assert_eq!(a[0].index, Some(1));
        assert_eq!(a[0].origin(), SiteId(2));
        assert_eq!(b[0].index, Some(2));
    }

    #[test]
    fn sequencer_respects_causality() {
        let mut seq = Sequencer::new();
        // The dependent message arrives first and is held.
        assert!(seq.receive(Envelope::new(msg(2, 1, &[(1, 1), (2, 1)]), 0)).is_empty());
        assert_eq!(seq.held(), 1);
        let out = seq.receive(Envelope::new(msg(1, 1, &[(1, 1)]), 0));
        let order: Vec<(SiteId, Option<u64>)> = out.iter().map(|e| (e.origin(), e.index)).collect();
        assert_eq!(order, vec![(SiteId(1), Some(1)), (SiteId(2), Some(2))]);
    }

    #[test]
    fn sequencer_is_deterministic() {
        let run = |seed| {
            let cfg = SimConfig::new(3, Mode::Sequencer, LatencyModel::Uniform { lo: 1, hi: 9 }, seed);
            let mut net = Network::new(cfg).unwrap();
            let mut seq = Sequencer::new();
            for s in 1..=3 {
                net.broadcast(Envelope::new(msg(s, 1, &[(s, 1)]), 0));
            }
            let mut order = Vec::new();
            while let Some(a) = net.next_arrival() {
                if a.to == Node::Sequencer {
                    for e in seq.receive(a.envelope) {
                        order.push((e.origin(), e.index));
                        net.fan_out(e);
                    }
                }
            }
            order
        };
        assert_eq!(run(5), run(5));
        assert_eq!(run(5).len(), 3);
    }

    #[test]
    fn inbox_delivers_in_causal_order() {
        let mut inbox = Inbox::new();
        let mut local = VectorClock::new();
        inbox.push(Envelope::new(msg(1, 2, &[(1, 2)]), 0));
        assert!(inbox.take_ready(&local).is_none());
        inbox.push(Envelope::new(msg(1, 1, &[(1, 1)]), 0));
        let first = inbox.take_ready(&local).unwrap();
        assert_eq!(first.msg.seq, 1);
        local.merge(&first.msg.clock);
        assert_eq!(inbox.take_ready(&local).unwrap().msg.seq, 2);
        assert!(inbox.is_empty());
    }

    #[test]
    fn inbox_delivers_in_index_order() {
        let mut inbox = Inbox::new();
        let local = VectorClock::new();
        let indexed = |i, s| {
            let mut e = Envelope::new(msg(s, 1, &[(s, 1)]), 0);
            e.index = Some(i);
            e
        };
        inbox.push(indexed(2, 1));
        assert!(inbox.take_ready(&local).is_none());
        inbox.push(indexed(1, 2));
        let e = inbox.take_ready(&local).unwrap();
        assert_eq!(e.index, Some(1));
        inbox.requeue(e);
        assert_eq!(inbox.take_ready(&local).unwrap().index, Some(1));
        assert_eq!(inbox.take_ready(&local).unwrap().index, Some(2));
    }
}
