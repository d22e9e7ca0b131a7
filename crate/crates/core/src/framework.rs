//! The general transformation contract shared by both engines.
//!
//! A [`Site`] owns the external document and an [`Engine`]. Local edits are
//! applied to the document first and then handed to the engine's local
//! handler, which produces a wire message. Remote messages go to the
//! engine's remote handler, whose position-based result is applied to the
//! document.
//!
//! # Envelope layout
//!
//! All integers are little endian.
//!
//! ```text
//! origin       u32
//! seq          u64
//! clock_len    u32
//! clock        clock_len x (site u32, count u64), ascending by site
//! payload_len  u32
//! payload      payload_len bytes, engine specific
//! ```
//!
//! OT payloads hold a position-based operation: tag `I` (pos u64, char u32),
//! `D` (pos u64) or `N`. WOOT payloads hold an identifier-based operation:
//! tag `i` (char u32, id, prev, next) or `d` (target), where each identifier
//! is a tag byte (0 start, 1 regular, 2 end) followed, for regular ids, by
//! sid u32 and seq u64.

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExternalOp, ExternalState, SiteId, TimestampedOp, VectorClock};
use crate::ot::{OtControl, OtSite, TieBreak};
use crate::woot::{IdOp, IdOpKind, ObjectId, WootSite};

/// Engine-specific payload in a common envelope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub origin: SiteId,
    pub seq: u64,
    pub clock: VectorClock,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.payload.len());
        out.extend_from_slice(&self.origin.0.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        let pairs: Vec<(SiteId, u64)> = self.clock.iter().collect();
        out.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
        for (site, count) in pairs {
            out.extend_from_slice(&site.0.to_le_bytes());
            out.extend_from_slice(&count.to_le_bytes());
        }
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(bytes);
        let origin = SiteId(r.u32()?);
        let seq = r.u64()?;
        let n = r.u32()?;
        let mut clock = VectorClock::new();
        let mut last = None;
        for _ in 0..n {
            let site = SiteId(r.u32()?);
            if last.is_some_and(|l| l >= site) {
                return Err(Error::Wire("clock entries not sorted".into()));
            }
            last = Some(site);
            clock.set(site, r.u64()?);
        }
        let len = r.u32()? as usize;
        let payload = r.take(len)?.to_vec();
        r.finish()?;
        Ok(WireMessage {
            origin,
            seq,
            clock,
            payload,
        })
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::Wire(format!("truncated: need {n} bytes, have {}", self.0.len())));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn char(&mut self) -> Result<char> {
        let v = self.u32()?;
        char::from_u32(v).ok_or_else(|| Error::Wire(format!("invalid char {v:#x}")))
    }

    fn finish(&self) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Wire(format!("{} trailing bytes", self.0.len())))
        }
    }
}

pub fn encode_external(op: &ExternalOp) -> Vec<u8> {
    let mut out = Vec::new();
    match *op {
        ExternalOp::Insert { pos, ch } => {
            out.push(b'I');
            out.extend_from_slice(&(pos as u64).to_le_bytes());
            out.extend_from_slice(&(ch as u32).to_le_bytes());
        }
        ExternalOp::Delete { pos } => {
            out.push(b'D');
            out.extend_from_slice(&(pos as u64).to_le_bytes());
        }
        ExternalOp::NoOp => out.push(b'N'),
    }
    out
}

pub fn decode_external(bytes: &[u8]) -> Result<ExternalOp> {
    let mut r = Reader(bytes);
    let op = match r.u8()? {
        b'I' => {
            let pos = r.u64()? as usize;
            ExternalOp::ins(pos, r.char()?)
        }
        b'D' => ExternalOp::del(r.u64()? as usize),
        b'N' => ExternalOp::NoOp,
        t => return Err(Error::Wire(format!("unknown op tag {t:#x}"))),
    };
    r.finish()?;
    Ok(op)
}

fn put_id(out: &mut Vec<u8>, id: ObjectId) {
    match id {
        ObjectId::Start => out.push(0),
        ObjectId::Id { sid, seq } => {
            out.push(1);
            out.extend_from_slice(&sid.0.to_le_bytes());
            out.extend_from_slice(&seq.to_le_bytes());
        }
        ObjectId::End => out.push(2),
    }
}

fn get_id(r: &mut Reader<'_>) -> Result<ObjectId> {
    Ok(match r.u8()? {
        0 => ObjectId::Start,
        1 => ObjectId::new(SiteId(r.u32()?), r.u64()?),
        2 => ObjectId::End,
        t => return Err(Error::Wire(format!("unknown id tag {t:#x}"))),
    })
}

pub fn encode_id_op(kind: &IdOpKind) -> Vec<u8> {
    let mut out = Vec::new();
    match *kind {
        IdOpKind::Insert { ch, id, prev, next } => {
            out.push(b'i');
            out.extend_from_slice(&(ch as u32).to_le_bytes());
            put_id(&mut out, id);
            put_id(&mut out, prev);
            put_id(&mut out, next);
        }
        IdOpKind::Delete { target } => {
            out.push(b'd');
            put_id(&mut out, target);
        }
    }
    out
}

pub fn decode_id_op(bytes: &[u8]) -> Result<IdOpKind> {
    let mut r = Reader(bytes);
    let kind = match r.u8()? {
        b'i' => {
            let ch = r.char()?;
            let id = get_id(&mut r)?;
            let prev = get_id(&mut r)?;
            let next = get_id(&mut r)?;
            IdOpKind::Insert { ch, id, prev, next }
        }
        b'd' => IdOpKind::Delete {
            target: get_id(&mut r)?,
        },
        t => return Err(Error::Wire(format!("unknown id-op tag {t:#x}"))),
    };
    r.finish()?;
    Ok(kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Ot,
    Woot,
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineKind::Ot => "ot",
            EngineKind::Woot => "woot",
        })
    }
}

impl std::str::FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ot" => Ok(EngineKind::Ot),
            "woot" => Ok(EngineKind::Woot),
            _ => Err(Error::Scenario(format!("unknown engine `{s}`"))),
        }
    }
}

/// Abstract cost of handling one operation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCost {
    /// Transformation function invocations (OT).
    pub transforms: u64,
    /// Buffered operations concurrent with a remote one (OT's `c`).
    pub concurrent: usize,
    /// Objects visited while searching the sequence (WOOT).
    pub search_steps: u64,
}

/// Size of the engine's internal state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub buffer_len: usize,
    /// Visible objects (WOOT) or document length (OT).
    pub visible: usize,
    /// Objects including tombstones (WOOT) or document length (OT).
    pub total: usize,
}

/// Local and remote operation handlers of one replica.
pub trait Engine: Send {
    fn kind(&self) -> EngineKind;

    fn site(&self) -> SiteId;

    fn clock(&self) -> &VectorClock;

    /// Turns a position-based operation already applied to the external
    /// document into a wire message.
    fn local(&mut self, op: &ExternalOp) -> Result<(WireMessage, OpCost)>;

    /// Handles a remote message. `None` means nothing is to be applied to
    /// the external document.
    fn remote(&mut self, msg: &WireMessage) -> Result<(Option<ExternalOp>, OpCost)>;

    /// The sequencer has ordered local operation `seq`.
    fn ack(&mut self, _seq: u64) -> Result<()> {
        Ok(())
    }

    /// Collects internal state that no future operation can need.
    fn gc(&mut self, _stability: &BTreeMap<SiteId, VectorClock>) -> Result<usize> {
        Ok(0)
    }

    fn stats(&self, external: &ExternalState) -> EngineStats;

    /// Objects created when the session starts.
    fn init_cost(&self) -> usize;

    /// Internal-state dump compared across sites for convergence, if the
    /// engine has one.
    fn internal_dump(&self) -> Option<String> {
        None
    }

    /// The external state as derived from internal state, if the engine can
    /// derive it.
    fn internal_value(&self) -> Option<ExternalState> {
        None
    }

    /// Engine-specific self checks against the external document. Returns a
    /// description of the first problem.
    fn audit(&self, _external: &ExternalState) -> Option<String> {
        None
    }

    fn as_any(&self) -> &dyn Any;
}

pub struct OtEngine {
    site: OtSite,
}

impl OtEngine {
    pub fn new(site: SiteId, control: OtControl) -> Self {
        OtEngine {
            site: OtSite::new(site, control),
        }
    }

    pub fn with_audit(mut self, initial: &ExternalState) -> Self {
        self.site = self.site.with_audit(initial);
        self
    }

    pub fn with_tie_break(mut self, tie: TieBreak) -> Self {
        self.site = self.site.with_tie_break(tie);
        self
    }

    pub fn inner(&self) -> &OtSite {
        &self.site
    }
}

impl Engine for OtEngine {
    fn kind(&self) -> EngineKind {
        EngineKind::Ot
    }

    fn site(&self) -> SiteId {
        self.site.site()
    }

    fn clock(&self) -> &VectorClock {
        self.site.clock()
    }

    fn local(&mut self, op: &ExternalOp) -> Result<(WireMessage, OpCost)> {
        let t = self.site.ot_local(*op);
        let msg = WireMessage {
            origin: t.origin,
            seq: t.seq,
            clock: t.clock,
            payload: encode_external(&t.op),
        };
        Ok((msg, OpCost::default()))
    }

    fn remote(&mut self, msg: &WireMessage) -> Result<(Option<ExternalOp>, OpCost)> {
        let t = TimestampedOp {
            op: decode_external(&msg.payload)?,
            origin: msg.origin,
            seq: msg.seq,
            clock: msg.clock.clone(),
        };
        let out = self.site.ot_remote(&t)?;
        let cost = OpCost {
            transforms: out.transforms,
            concurrent: out.concurrent,
            search_steps: 0,
        };
        Ok((Some(out.op), cost))
    }

    fn ack(&mut self, seq: u64) -> Result<()> {
        self.site.ot_ack(seq)
    }

    fn gc(&mut self, stability: &BTreeMap<SiteId, VectorClock>) -> Result<usize> {
        self.site.ot_gc(stability)
    }

    fn stats(&self, external: &ExternalState) -> EngineStats {
        EngineStats {
            buffer_len: self.site.buffer().len(),
            visible: external.len(),
            total: external.len(),
        }
    }

    fn init_cost(&self) -> usize {
        self.site.buffer().len()
    }

    fn audit(&self, external: &ExternalState) -> Option<String> {
        let c = self.site.counters();
        if c.tp1_violations > 0 {
            return Some(format!("{} transformation pairs diverged", c.tp1_violations));
        }
        match self.site.audit_matches(external) {
            Some(false) => Some("document differs from canonical state plus pending operations".into()),
            _ => None,
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

pub struct WootEngine {
    site: WootSite,
    init_cost: usize,
}

impl WootEngine {
    pub fn new(site: SiteId, initial: &ExternalState) -> Self {
        WootEngine {
            site: WootSite::new(site, initial),
            init_cost: initial.len(),
        }
    }

    /// Skip converting remote operations back to positions and applying
    /// them to the external document.
    pub fn with_integrate_only(mut self, on: bool) -> Self {
        self.site = self.site.with_integrate_only(on);
        self
    }

    pub fn inner(&self) -> &WootSite {
        &self.site
    }
}

impl Engine for WootEngine {
    fn kind(&self) -> EngineKind {
        EngineKind::Woot
    }

    fn site(&self) -> SiteId {
        self.site.site()
    }

    fn clock(&self) -> &VectorClock {
        self.site.clock()
    }

    fn local(&mut self, op: &ExternalOp) -> Result<(WireMessage, OpCost)> {
        let handled = self.site.woot_local(op)?;
        let id_op = handled.value;
        let msg = WireMessage {
            origin: id_op.origin,
            seq: id_op.seq,
            clock: id_op.clock,
            payload: encode_id_op(&id_op.kind),
        };
        let cost = OpCost {
            search_steps: handled.search_steps,
            ..OpCost::default()
        };
        Ok((msg, cost))
    }

    fn remote(&mut self, msg: &WireMessage) -> Result<(Option<ExternalOp>, OpCost)> {
        let op = IdOp {
            kind: decode_id_op(&msg.payload)?,
            origin: msg.origin,
            seq: msg.seq,
            clock: msg.clock.clone(),
        };
        let handled = self.site.woot_remote(&op)?;
        let cost = OpCost {
            search_steps: handled.search_steps,
            ..OpCost::default()
        };
        Ok((handled.value, cost))
    }

    fn stats(&self, _external: &ExternalState) -> EngineStats {
        let seq = self.site.sequence();
        EngineStats {
            buffer_len: 0,
            visible: seq.visible_len(),
            total: seq.total_len(),
        }
    }

    fn init_cost(&self) -> usize {
        self.init_cost
    }

    fn internal_dump(&self) -> Option<String> {
        Some(self.site.sequence().dump())
    }

    fn internal_value(&self) -> Option<ExternalState> {
        Some(self.site.sequence().value())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Outcome of delivering one remote message to a site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivered {
    /// Operation applied to the external document, if any.
    pub applied: Option<ExternalOp>,
    pub cost: OpCost,
}

/// A replica: external document plus engine.
pub struct Site {
    id: SiteId,
    engine: Box<dyn Engine>,
    external: ExternalState,
}

impl Site {
    pub fn new(engine: Box<dyn Engine>, initial: ExternalState) -> Self {
        Site {
            id: engine.site(),
            engine,
            external: initial,
        }
    }

    pub fn id(&self) -> SiteId {
        self.id
    }

    pub fn external(&self) -> &ExternalState {
        &self.external
    }

    pub fn engine(&self) -> &dyn Engine {
        self.engine.as_ref()
    }

    /// Local edit: applied to the document first, then handed to the
    /// engine. Returns the message to propagate.
    pub fn generate(&mut self, op: &ExternalOp) -> Result<(WireMessage, OpCost)> {
        if op.is_noop() {
            return Err(Error::NoOpRejected);
        }
        if !self.external.admits(op) {
            let mut probe = self.external.clone();
            probe.apply(op)?;
        }
        let before = self.external.clone();
        self.external.apply(op)?;
        match self.engine.local(op) {
            Ok(out) => Ok(out),
            Err(e) => {
                self.external = before;
                Err(e)
            }
        }
    }

    /// Remote message: handed to the engine, whose result is applied to the
    /// document. [`Error::NotExecutable`] means the caller should retry the
    /// message later.
    pub fn deliver(&mut self, msg: &WireMessage) -> Result<Delivered> {
        if msg.origin == self.id {
            return Err(Error::SelfDelivery(self.id));
        }
        let (applied, cost) = self.engine.remote(msg)?;
        if let Some(op) = &applied {
            self.external.apply(op)?;
        }
        Ok(Delivered { applied, cost })
    }

    pub fn ack(&mut self, seq: u64) -> Result<()> {
        self.engine.ack(seq)
    }

    pub fn gc(&mut self, stability: &BTreeMap<SiteId, VectorClock>) -> Result<usize> {
        self.engine.gc(stability)
    }

    pub fn stats(&self) -> EngineStats {
        self.engine.stats(&self.external)
    }
}
