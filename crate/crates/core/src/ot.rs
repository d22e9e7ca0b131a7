//! Operational transformation engine.
//!
//! Local operations are executed as-is, timestamped and saved in the
//! operation buffer. Remote operations are transformed against the
//! concurrent operations the site has already executed, using the four
//! compare-calculate transformation functions, before they are replayed.
//!
//! Two control modes are supported:
//!
//! * [`OtControl::PeerPair`]: exactly two sites talking directly. Each site
//!   keeps its own operations the peer has not acknowledged yet and
//!   transforms every incoming operation across them.
//! * [`OtControl::Sequencer`]: any number of sites behind a sequencer that
//!   assigns a total order. Every site canonicalises each incoming operation
//!   to the context of all operations ordered before it, then transforms the
//!   canonical form across its own unacknowledged operations. Only the
//!   pairwise convergence property of the transformation functions is
//!   needed.

use std::any::Any;
use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{concurrent, happened_before, ExternalOp, ExternalState, SiteId, TimestampedOp, VectorClock};

/// How two inserts at the same position are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// The insert from the lower site id stays left.
    #[default]
    SiteOrder,
    /// Both inserts shift right. Violates convergence; only useful for
    /// exercising the checkers.
    AlwaysShift,
}

/// Transforms insert `a` against insert `b`, both defined on the same state.
/// `tiebreak` holds the origins of `a` and `b`.
pub fn transform_ii(a_pos: usize, a_ch: char, b_pos: usize, tiebreak: (SiteId, SiteId)) -> ExternalOp {
    transform_ii_with(a_pos, a_ch, b_pos, tiebreak, TieBreak::SiteOrder)
}

fn transform_ii_with(
    a_pos: usize,
    a_ch: char,
    b_pos: usize,
    (a_site, b_site): (SiteId, SiteId),
    tie: TieBreak,
) -> ExternalOp {
    let keep = match tie {
        TieBreak::SiteOrder => a_pos < b_pos || (a_pos == b_pos && a_site < b_site),
        TieBreak::AlwaysShift => a_pos < b_pos,
    };
    if keep {
        ExternalOp::ins(a_pos, a_ch)
    } else {
        ExternalOp::ins(a_pos + 1, a_ch)
    }
}

/// Transforms insert `a` against delete `b`.
pub fn transform_id(a_pos: usize, a_ch: char, b_pos: usize) -> ExternalOp {
    if a_pos <= b_pos {
        ExternalOp::ins(a_pos, a_ch)
    } else {
        ExternalOp::ins(a_pos - 1, a_ch)
    }
}

/// Transforms delete `a` against insert `b`.
pub fn transform_di(a_pos: usize, b_pos: usize) -> ExternalOp {
    if a_pos < b_pos {
        ExternalOp::del(a_pos)
    } else {
        ExternalOp::del(a_pos + 1)
    }
}

/// Transforms delete `a` against delete `b`. Equal targets cancel out.
pub fn transform_dd(a_pos: usize, b_pos: usize) -> ExternalOp {
    use std::cmp::Ordering::*;
    match a_pos.cmp(&b_pos) {
        Less => ExternalOp::del(a_pos),
        Greater => ExternalOp::del(a_pos - 1),
        Equal => ExternalOp::NoOp,
    }
}

/// Transforms `a` (from `a_site`) against `b` (from `b_site`), dispatching
/// on the operation kinds.
pub fn transform(a: &ExternalOp, a_site: SiteId, b: &ExternalOp, b_site: SiteId) -> ExternalOp {
    transform_with(a, a_site, b, b_site, TieBreak::SiteOrder)
}

pub fn transform_with(a: &ExternalOp, a_site: SiteId, b: &ExternalOp, b_site: SiteId, tie: TieBreak) -> ExternalOp {
    use ExternalOp::*;
    match (*a, *b) {
        (NoOp, _) => NoOp,
        (a, NoOp) => a,
        (Insert { pos: pa, ch }, Insert { pos: pb, .. }) => transform_ii_with(pa, ch, pb, (a_site, b_site), tie),
        (Insert { pos: pa, ch }, Delete { pos: pb }) => transform_id(pa, ch, pb),
        (Delete { pos: pa }, Insert { pos: pb, .. }) => transform_di(pa, pb),
        (Delete { pos: pa }, Delete { pos: pb }) => transform_dd(pa, pb),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OtControl {
    PeerPair,
    #[default]
    Sequencer,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OtCounters {
    pub transforms: u64,
    pub ties: u64,
    pub gc_collected: u64,
    pub tp1_checks: u64,
    pub tp1_violations: u64,
}

/// Result of handling one remote operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteOutcome {
    pub op: ExternalOp,
    /// Buffered operations concurrent with the remote one.
    pub concurrent: usize,
    pub transforms: u64,
}

#[derive(Debug, Clone)]
struct Pending {
    seq: u64,
    op: ExternalOp,
}

#[derive(Debug, Clone)]
struct Canonical {
    origin: SiteId,
    seq: u64,
    op: ExternalOp,
}

/// Replays what a remote site's own unacknowledged operations looked like
/// at that site, so its next operation can be brought to canonical form.
#[derive(Debug, Clone, Default)]
struct Bridge {
    prefix: u64,
    pending: VecDeque<Pending>,
}

#[derive(Debug, Clone, Default)]
struct SequencerState {
    /// Number of canonical entries already dropped by garbage collection.
    base: u64,
    history: VecDeque<Canonical>,
    pending: VecDeque<Pending>,
    bridges: BTreeMap<SiteId, Bridge>,
}

impl SequencerState {
    fn delivered(&self) -> u64 {
        self.base + self.history.len() as u64
    }

    fn entry(&self, index: u64) -> &Canonical {
        &self.history[(index - self.base - 1) as usize]
    }
}

#[derive(Debug, Clone)]
enum Control {
    PeerPair {
        peer: Option<SiteId>,
        pending: VecDeque<Pending>,
    },
    Sequencer(SequencerState),
}

/// One OT replica.
#[derive(Debug, Clone)]
pub struct OtSite {
    site: SiteId,
    clock: VectorClock,
    buffer: Vec<TimestampedOp>,
    control: Control,
    tie: TieBreak,
    counters: OtCounters,
    /// Document after every canonically ordered operation, kept only when
    /// auditing.
    audit: Option<ExternalState>,
}

impl OtSite {
    pub fn new(site: SiteId, control: OtControl) -> Self {
        let control = match control {
            OtControl::PeerPair => Control::PeerPair {
                peer: None,
                pending: VecDeque::new(),
            },
            OtControl::Sequencer => Control::Sequencer(SequencerState::default()),
        };
        OtSite {
            site,
            clock: VectorClock::new(),
            buffer: Vec::new(),
            control,
            tie: TieBreak::SiteOrder,
            counters: OtCounters::default(),
            audit: None,
        }
    }

    /// Keeps a copy of the canonical document so every transformation pair
    /// can be checked for convergence as it happens. Sequencer mode only.
    pub fn with_audit(mut self, initial: &ExternalState) -> Self {
        if matches!(self.control, Control::Sequencer(_)) {
            self.audit = Some(initial.clone());
        }
        self
    }

    pub fn with_tie_break(mut self, tie: TieBreak) -> Self {
        self.tie = tie;
        self
    }

    pub fn site(&self) -> SiteId {
        self.site
    }

    pub fn clock(&self) -> &VectorClock {
        &self.clock
    }

    pub fn buffer(&self) -> &[TimestampedOp] {
        &self.buffer
    }

    pub fn counters(&self) -> &OtCounters {
        &self.counters
    }

    pub fn control(&self) -> OtControl {
        match self.control {
            Control::PeerPair { .. } => OtControl::PeerPair,
            Control::Sequencer(_) => OtControl::Sequencer,
        }
    }

    /// Size of the control state beyond the buffer: unacknowledged local
    /// operations plus retained canonical history.
    pub fn control_len(&self) -> usize {
        match &self.control {
            Control::PeerPair { pending, .. } => pending.len(),
            Control::Sequencer(s) => {
                s.pending.len() + s.history.len() + s.bridges.values().map(|b| b.pending.len()).sum::<usize>()
            }
        }
    }

    /// Timestamps a locally executed operation and saves it in the buffer.
    /// The caller has already applied `op` to its document.
    pub fn ot_local(&mut self, op: ExternalOp) -> TimestampedOp {
        let seq = self.clock.increment(self.site);
        let stamped = TimestampedOp {
            op,
            origin: self.site,
            seq,
            clock: self.clock.clone(),
        };
        self.buffer.push(stamped.clone());
        let pending = match &mut self.control {
            Control::PeerPair { pending, .. } => pending,
            Control::Sequencer(s) => &mut s.pending,
        };
        pending.push_back(Pending { seq, op });
        stamped
    }

    /// Transforms a causally ready remote operation against the concurrent
    /// operations already executed here and returns the form to replay.
    pub fn ot_remote(&mut self, remote: &TimestampedOp) -> Result<RemoteOutcome> {
        if remote.origin == self.site {
            return Err(Error::SelfDelivery(self.site));
        }
        let mut concurrent_count = 0;
        for b in &self.buffer {
            if b.key() == remote.key() {
                return Err(self.mismatch(format!("{}.{} delivered twice", remote.origin, remote.seq)));
            }
            if happened_before(remote, b) {
                return Err(self.mismatch(format!(
                    "buffered {}.{} happened after remote {}.{}",
                    b.origin, b.seq, remote.origin, remote.seq
                )));
            }
            if concurrent(b, remote) {
                concurrent_count += 1;
            }
        }

        let before = self.counters.transforms;
        let op = match self.control {
            Control::PeerPair { .. } => self.remote_peer(remote)?,
            Control::Sequencer(_) => self.remote_sequenced(remote)?,
        };
        self.clock.merge(&remote.clock);
        self.buffer.push(TimestampedOp {
            op,
            origin: remote.origin,
            seq: remote.seq,
            clock: remote.clock.clone(),
        });
        Ok(RemoteOutcome {
            op,
            concurrent: concurrent_count,
            transforms: self.counters.transforms - before,
        })
    }

    /// The sequencer has placed local operation `seq` in the total order.
    pub fn ot_ack(&mut self, seq: u64) -> Result<()> {
        let site = self.site;
        let Control::Sequencer(state) = &mut self.control else {
            return Err(Error::Unsupported("acknowledgements need sequencer mode".into()));
        };
        match state.pending.pop_front() {
            Some(p) if p.seq == seq => {
                if let Some(doc) = &mut self.audit {
                    doc.apply(&p.op)?;
                }
                state.history.push_back(Canonical {
                    origin: site,
                    seq,
                    op: p.op,
                });
                Ok(())
            }
            other => Err(Error::ContextMismatch {
                site,
                detail: format!(
                    "ack for {site}.{seq} but front of pending is {:?}",
                    other.map(|p| p.seq)
                ),
            }),
        }
    }

    /// Drops every buffered operation that all sites in `stability` are known
    /// to have delivered. Returns how many buffer entries were collected.
    pub fn ot_gc(&mut self, stability: &BTreeMap<SiteId, VectorClock>) -> Result<usize> {
        let stable =
            |origin: SiteId, seq: u64| !stability.is_empty() && stability.values().all(|c| c.get(origin) >= seq);

        let before = self.buffer.len();
        self.buffer.retain(|o| !stable(o.origin, o.seq));
        let collected = before - self.buffer.len();
        self.counters.gc_collected += collected as u64;

        let (site, tie) = (self.site, self.tie);
        if let Control::Sequencer(state) = &mut self.control {
            let mut upto = state.base;
            while upto < state.delivered() && {
                let e = state.entry(upto + 1);
                stable(e.origin, e.seq)
            } {
                upto += 1;
            }
            if upto > state.base {
                let mut bridges = std::mem::take(&mut state.bridges);
                for (&owner, bridge) in bridges.iter_mut() {
                    if bridge.prefix < upto {
                        advance(bridge, owner, upto, state, &mut self.counters, tie, site)?;
                    }
                }
                state.bridges = bridges;
                let drop = (upto - state.base) as usize;
                state.history.drain(..drop);
                state.base = upto;
            }
        }
        Ok(collected)
    }

    /// Whether the audited canonical document plus the unacknowledged local
    /// operations reproduces `external`. `None` when not auditing.
    pub fn audit_matches(&self, external: &ExternalState) -> Option<bool> {
        let doc = self.audit.as_ref()?;
        let Control::Sequencer(state) = &self.control else {
            return None;
        };
        let mut doc = doc.clone();
        for p in &state.pending {
            if doc.apply(&p.op).is_err() {
                return Some(false);
            }
        }
        Some(&doc == external)
    }

    fn remote_peer(&mut self, remote: &TimestampedOp) -> Result<ExternalOp> {
        let (site, tie) = (self.site, self.tie);
        let Control::PeerPair { peer, pending } = &mut self.control else {
            unreachable!()
        };
        match *peer {
            None => *peer = Some(remote.origin),
            Some(p) if p != remote.origin => {
                return Err(Error::Unsupported(format!(
                    "peer-pair control supports two sites; site {site} already paired with {p}, got op from {}",
                    remote.origin
                )))
            }
            Some(_) => {}
        }
        let known = remote.clock.get(site);
        while pending.front().is_some_and(|p| p.seq <= known) {
            pending.pop_front();
        }
        let mut op = remote.op;
        for p in pending.iter_mut() {
            let (incoming, local) = transform_pair(op, remote.origin, p.op, site, tie, &mut self.counters);
            op = incoming;
            p.op = local;
        }
        Ok(op)
    }

    fn remote_sequenced(&mut self, remote: &TimestampedOp) -> Result<ExternalOp> {
        let (site, tie) = (self.site, self.tie);
        let Control::Sequencer(state) = &mut self.control else {
            unreachable!()
        };
        let canonical = canonicalize(state, remote, &mut self.counters, tie, site)?;

        if let Some(doc) = &mut self.audit {
            if let Some(front) = state.pending.front() {
                self.counters.tp1_checks += 1;
                if !tp1_holds(doc, &canonical, remote.origin, &front.op, site, tie) {
                    self.counters.tp1_violations += 1;
                }
            }
            doc.apply(&canonical)?;
        }

        let mut op = canonical;
        for p in state.pending.iter_mut() {
            let (incoming, local) = transform_pair(op, remote.origin, p.op, site, tie, &mut self.counters);
            op = incoming;
            p.op = local;
        }
        state.history.push_back(Canonical {
            origin: remote.origin,
            seq: remote.seq,
            op: canonical,
        });
        Ok(op)
    }

    fn mismatch(&self, detail: String) -> Error {
        Error::ContextMismatch {
            site: self.site,
            detail,
        }
    }
}

fn transform_pair(
    incoming: ExternalOp,
    incoming_site: SiteId,
    local: ExternalOp,
    local_site: SiteId,
    tie: TieBreak,
    counters: &mut OtCounters,
) -> (ExternalOp, ExternalOp) {
    counters.transforms += 2;
    if let (ExternalOp::Insert { pos: a, .. }, ExternalOp::Insert { pos: b, .. }) = (incoming, local) {
        if a == b {
            counters.ties += 1;
        }
    }
    (
        transform_with(&incoming, incoming_site, &local, local_site, tie),
        transform_with(&local, local_site, &incoming, incoming_site, tie),
    )
}

fn tp1_holds(s: &ExternalState, a: &ExternalOp, a_site: SiteId, b: &ExternalOp, b_site: SiteId, tie: TieBreak) -> bool {
    let run = |first: &ExternalOp, second: ExternalOp| -> Option<ExternalState> {
        let mut doc = s.clone();
        doc.apply(first).ok()?;
        doc.apply(&second).ok()?;
        Some(doc)
    };
    let ab = run(a, transform_with(b, b_site, a, a_site, tie));
    let ba = run(b, transform_with(a, a_site, b, b_site, tie));
    ab.is_some() && ab == ba
}

/// Moves `bridge` forward to canonical index `to`, replaying what its owner
/// would have done with each canonical operation.
fn advance(
    bridge: &mut Bridge,
    owner: SiteId,
    to: u64,
    state: &SequencerState,
    counters: &mut OtCounters,
    tie: TieBreak,
    site: SiteId,
) -> Result<()> {
    if bridge.prefix < state.base {
        return Err(Error::ContextMismatch {
            site,
            detail: format!("history for site {owner} collected before it was replayed"),
        });
    }
    for index in bridge.prefix + 1..=to {
        let entry = state.entry(index);
        if entry.origin == owner {
            match bridge.pending.pop_front() {
                Some(p) if p.seq == entry.seq => {}
                other => {
                    return Err(Error::ContextMismatch {
                        site,
                        detail: format!(
                            "canonical {}.{} does not match replayed pending {:?}",
                            entry.origin,
                            entry.seq,
                            other.map(|p| p.seq)
                        ),
                    })
                }
            }
        } else {
            let mut op = entry.op;
            for p in bridge.pending.iter_mut() {
                let (incoming, local) = transform_pair(op, entry.origin, p.op, owner, tie, counters);
                op = incoming;
                p.op = local;
            }
        }
    }
    bridge.prefix = to;
    Ok(())
}

/// Brings `remote` to the context of every operation ordered before it.
fn canonicalize(
    state: &mut SequencerState,
    remote: &TimestampedOp,
    counters: &mut OtCounters,
    tie: TieBreak,
    site: SiteId,
) -> Result<ExternalOp> {
    let owner = remote.origin;
    let mut bridge = state.bridges.remove(&owner).unwrap_or(Bridge {
        prefix: state.base,
        pending: VecDeque::new(),
    });

    // Longest canonical prefix the remote operation already knows about.
    let mut known = bridge.prefix;
    while known < state.delivered() && {
        let e = state.entry(known + 1);
        remote.clock.get(e.origin) >= e.seq
    } {
        known += 1;
    }
    advance(&mut bridge, owner, known, state, counters, tie, site)?;
    bridge.pending.push_back(Pending {
        seq: remote.seq,
        op: remote.op,
    });

    let mut scratch = bridge.clone();
    advance(&mut scratch, owner, state.delivered(), state, counters, tie, site)?;
    state.bridges.insert(owner, bridge);
    match (scratch.pending.len(), scratch.pending.front()) {
        (1, Some(p)) if p.seq == remote.seq => Ok(p.op),
        _ => Err(Error::ContextMismatch {
            site,
            detail: format!(
                "operations from {owner} ordered after {}.{} are still pending",
                remote.origin, remote.seq
            ),
        }),
    }
}

impl OtSite {
    pub fn as_any(&self) -> &dyn Any {
        self
    }
}
