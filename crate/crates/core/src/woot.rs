//! WOOT engine: an internal sequence of objects with immutable identifiers
//! and tombstones.
//!
//! Local position-based operations are converted to identifier-based ones by
//! counting visible objects, integrated into the local sequence and
//! propagated. Remote identifier-based operations are integrated, then
//! converted back to a position-based operation by searching for the object
//! and counting the visible objects before it.

use std::any::Any;
use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExternalOp, ExternalState, SiteId, VectorClock};

/// Object identifier. Sentinels order before and after every regular id;
/// regular ids order by site, then sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectId {
    Start,
    Id { sid: SiteId, seq: u64 },
    End,
}

impl ObjectId {
    pub fn new(sid: SiteId, seq: u64) -> Self {
        ObjectId::Id { sid, seq }
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectId::Start => f.write_str("@s"),
            ObjectId::End => f.write_str("@e"),
            ObjectId::Id { sid, seq } => write!(f, "{sid}.{seq}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WObject {
    pub ch: char,
    pub id: ObjectId,
    pub prev: ObjectId,
    pub next: ObjectId,
    pub visible: bool,
}

impl WObject {
    fn sentinel(id: ObjectId) -> Self {
        WObject {
            ch: '\0',
            id,
            prev: ObjectId::Start,
            next: ObjectId::End,
            visible: false,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        !matches!(self.id, ObjectId::Id { .. })
    }

    fn integration_next(&self) -> ObjectId {
        match self.id {
            ObjectId::Id { sid, .. } if sid == SiteId::INITIAL => ObjectId::End,
            _ => self.next,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdOpKind {
    Insert {
        ch: char,
        id: ObjectId,
        prev: ObjectId,
        next: ObjectId,
    },
    Delete {
        target: ObjectId,
    },
}

impl fmt::Display for IdOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdOpKind::Insert { ch, id, prev, next } => write!(f, "I({ch}, {id}, {prev}, {next})"),
            IdOpKind::Delete { target } => write!(f, "D({target})"),
        }
    }
}

/// Identifier-based operation plus its delivery metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdOp {
    pub kind: IdOpKind,
    pub origin: SiteId,
    pub seq: u64,
    pub clock: VectorClock,
}

/// The internal state: objects bounded by the start and end sentinels.
/// Objects are never removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectSequence {
    objects: Vec<WObject>,
    visits: u64,
}

impl ObjectSequence {
    /// One visible object per character of `doc`, owned by `creator` and
    /// chained through the sentinels.
    pub fn new(doc: &ExternalState, creator: SiteId) -> Self {
        let n = doc.len();
        let id_at = |i: usize| -> ObjectId {
            if i == 0 {
                ObjectId::Start
            } else if i > n {
                ObjectId::End
            } else {
                ObjectId::new(creator, i as u64)
            }
        };
        let mut objects = Vec::with_capacity(n + 2);
        objects.push(WObject::sentinel(ObjectId::Start));
        for (i, &ch) in doc.chars().iter().enumerate() {
            objects.push(WObject {
                ch,
                id: id_at(i + 1),
                prev: id_at(i),
                next: id_at(i + 2),
                visible: true,
            });
        }
        objects.push(WObject::sentinel(ObjectId::End));
        ObjectSequence { objects, visits: 0 }
    }

    pub fn objects(&self) -> &[WObject] {
        &self.objects
    }

    /// Visible characters in sequence order.
    pub fn value(&self) -> ExternalState {
        self.objects
            .iter()
            .filter(|o| o.visible)
            .map(|o| o.ch)
            .collect::<Vec<_>>()
            .into()
    }

    /// Visible object count (C).
    pub fn visible_len(&self) -> usize {
        self.objects.iter().filter(|o| o.visible).count()
    }

    /// Non-sentinel object count including tombstones (C_t).
    pub fn total_len(&self) -> usize {
        self.objects.len() - 2
    }

    /// Object visits accumulated by searches since the last call.
    pub fn take_visits(&mut self) -> u64 {
        std::mem::take(&mut self.visits)
    }

    pub fn contains(&mut self, id: ObjectId) -> bool {
        self.index_of(id).is_some()
    }

    fn index_of(&mut self, id: ObjectId) -> Option<usize> {
        match id {
            ObjectId::Start => Some(0),
            ObjectId::End => Some(self.objects.len() - 1),
            _ => {
                let found = self.objects.iter().position(|o| o.id == id);
                self.visits += found.map_or(self.objects.len(), |i| i + 1) as u64;
                found
            }
        }
    }

    /// Index of the `n`-th visible object (0-based), scanning from the start.
    fn nth_visible(&mut self, n: usize) -> Option<usize> {
        let mut seen = 0;
        for (i, o) in self.objects.iter().enumerate() {
            if o.visible {
                if seen == n {
                    self.visits += i as u64 + 1;
                    return Some(i);
                }
                seen += 1;
            }
        }
        self.visits += self.objects.len() as u64;
        None
    }

    /// Visible objects strictly before index `idx`.
    fn visible_before(&mut self, idx: usize) -> usize {
        self.visits += idx as u64 + 1;
        self.objects[..idx].iter().filter(|o| o.visible).count()
    }

    /// Converts a position-based operation, generated against `value()`,
    /// into its identifier-based form. `fresh` names the object an insert
    /// creates.
    pub fn pos_to_id(&mut self, eo: &ExternalOp, fresh: ObjectId) -> Result<IdOpKind> {
        let bounds = |len: usize, position: usize| Error::OutOfBounds { op: *eo, len, position };
        match *eo {
            ExternalOp::Delete { pos } => {
                let idx = self.nth_visible(pos).ok_or_else(|| bounds(self.visible_len(), pos))?;
                Ok(IdOpKind::Delete {
                    target: self.objects[idx].id,
                })
            }
            ExternalOp::Insert { pos, ch } => {
                let prev = if pos == 0 {
                    ObjectId::Start
                } else {
                    let idx = self
                        .nth_visible(pos - 1)
                        .ok_or_else(|| bounds(self.visible_len(), pos))?;
                    self.objects[idx].id
                };
                let next = match self.nth_visible(pos) {
                    Some(idx) => self.objects[idx].id,
                    None => ObjectId::End,
                };
                Ok(IdOpKind::Insert {
                    ch,
                    id: fresh,
                    prev,
                    next,
                })
            }
            ExternalOp::NoOp => Err(Error::NoOpRejected),
        }
    }

    /// Marks `target` invisible. Returns whether it was visible before.
    pub fn integrate_del(&mut self, target: ObjectId) -> Result<bool> {
        let idx = self.index_of(target).ok_or(Error::UnknownObject(target))?;
        if self.objects[idx].is_sentinel() {
            return Err(Error::UnknownObject(target));
        }
        Ok(std::mem::replace(&mut self.objects[idx].visible, false))
    }

    /// Places a new visible object between `prev` and `next`. Concurrent
    /// siblings are ordered by identifier, recursing into the narrowest
    /// pair of neighbours that encloses the new object. Returns the index
    /// of the new object.
    pub fn integrate_ins(&mut self, ch: char, id: ObjectId, prev: ObjectId, next: ObjectId) -> Result<usize> {
        if self.objects.iter().any(|o| o.id == id) {
            return Err(Error::Scenario(format!("object {id} integrated twice")));
        }
        let object = WObject {
            ch,
            id,
            prev,
            next,
            visible: true,
        };
        let (mut lo, mut hi) = (prev, next);
        loop {
            let lo_idx = self.index_of(lo).ok_or(Error::UnknownObject(lo))?;
            let hi_idx = self.index_of(hi).ok_or(Error::UnknownObject(hi))?;
            if lo_idx >= hi_idx {
                return Err(Error::Scenario(format!("neighbour {lo} does not precede {hi}")));
            }
            if hi_idx - lo_idx == 1 {
                self.objects.insert(hi_idx, object);
                return Ok(hi_idx);
            }
            let span = &self.objects[lo_idx + 1..hi_idx];
            self.visits += span.len() as u64;
            let inside: HashSet<ObjectId> = span.iter().map(|o| o.id).collect();
            // Objects whose own neighbours both lie outside the span, with
            // initial objects taken as typed left to right.
            let mut candidates = vec![lo];
            candidates.extend(
                span.iter()
                    .filter(|o| !inside.contains(&o.prev) && !inside.contains(&o.integration_next()))
                    .map(|o| o.id),
            );
            candidates.push(hi);
            let mut i = 1;
            while i < candidates.len() - 1 && candidates[i] < id {
                i += 1;
            }
            lo = candidates[i - 1];
            hi = candidates[i];
        }
    }

    /// Position-based form of an already integrated operation. A delete is
    /// placed where its target was while still visible.
    pub fn id_to_pos(&mut self, op: &IdOpKind) -> Result<ExternalOp> {
        match *op {
            IdOpKind::Insert { ch, id, .. } => {
                let idx = self.index_of(id).ok_or(Error::UnknownObject(id))?;
                Ok(ExternalOp::ins(self.visible_before(idx), ch))
            }
            IdOpKind::Delete { target } => {
                let idx = self.index_of(target).ok_or(Error::UnknownObject(target))?;
                Ok(ExternalOp::del(self.visible_before(idx)))
            }
        }
    }

    /// One line per object: `<char>|<sid>.<seq>|prev=<id>|next=<id>|<v|iv>`,
    /// sentinels as `@s` and `@e`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for o in &self.objects {
            if o.is_sentinel() {
                out.push_str(&o.id.to_string());
            } else {
                let vis = if o.visible { "v" } else { "iv" };
                out.push_str(&format!("{}|{}|prev={}|next={}|{}", o.ch, o.id, o.prev, o.next, vis));
            }
            out.push('\n');
        }
        out
    }
}

/// Result of handling one operation, with the object visits it cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handled<T> {
    pub value: T,
    pub search_steps: u64,
}

/// One WOOT replica.
#[derive(Debug, Clone)]
pub struct WootSite {
    site: SiteId,
    clock: VectorClock,
    sequence: ObjectSequence,
    /// Integrate remote operations without deriving and returning the
    /// position-based form.
    integrate_only: bool,
}

impl WootSite {
    /// A replica whose sequence holds `initial`, created by
    /// [`SiteId::INITIAL`].
    pub fn new(site: SiteId, initial: &ExternalState) -> Self {
        WootSite {
            site,
            clock: VectorClock::new(),
            sequence: ObjectSequence::new(initial, SiteId::INITIAL),
            integrate_only: false,
        }
    }

    pub fn with_integrate_only(mut self, on: bool) -> Self {
        self.integrate_only = on;
        self
    }

    pub fn site(&self) -> SiteId {
        self.site
    }

    pub fn clock(&self) -> &VectorClock {
        &self.clock
    }

    pub fn sequence(&self) -> &ObjectSequence {
        &self.sequence
    }

    /// Converts a local operation, integrates it and returns the
    /// identifier-based form to propagate.
    pub fn woot_local(&mut self, eo: &ExternalOp) -> Result<Handled<IdOp>> {
        if eo.is_noop() {
            return Err(Error::NoOpRejected);
        }
        let seq = self.clock.get(self.site) + 1;
        let kind = self.sequence.pos_to_id(eo, ObjectId::new(self.site, seq))?;
        self.integrate(&kind)?;
        self.clock.increment(self.site);
        Ok(Handled {
            value: IdOp {
                kind,
                origin: self.site,
                seq,
                clock: self.clock.clone(),
            },
            search_steps: self.sequence.take_visits(),
        })
    }

    /// Whether every object `op` references is already present.
    pub fn is_executable(&mut self, op: &IdOp) -> bool {
        match op.kind {
            IdOpKind::Insert { prev, next, .. } => self.sequence.contains(prev) && self.sequence.contains(next),
            IdOpKind::Delete { target } => self.sequence.contains(target),
        }
    }

    /// Integrates a remote operation and returns the position-based
    /// operation to replay on the external document, or `None` when
    /// running integrate-only.
    pub fn woot_remote(&mut self, op: &IdOp) -> Result<Handled<Option<ExternalOp>>> {
        if op.origin == self.site {
            return Err(Error::SelfDelivery(self.site));
        }
        if !self.is_executable(op) {
            self.sequence.take_visits();
            return Err(Error::NotExecutable {
                origin: op.origin,
                seq: op.seq,
            });
        }
        let was_visible = self.integrate(&op.kind)?;
        self.clock.merge(&op.clock);
        let value = if self.integrate_only {
            None
        } else if !was_visible {
            // Concurrent deletes of the same object: only the first one
            // changes the document.
            Some(ExternalOp::NoOp)
        } else {
            Some(self.sequence.id_to_pos(&op.kind)?)
        };
        Ok(Handled {
            value,
            search_steps: self.sequence.take_visits(),
        })
    }

    /// Returns whether the operation changed visibility (always true for
    /// inserts).
    fn integrate(&mut self, kind: &IdOpKind) -> Result<bool> {
        match *kind {
            IdOpKind::Insert { ch, id, prev, next } => {
                self.sequence.integrate_ins(ch, id, prev, next)?;
                Ok(true)
            }
            IdOpKind::Delete { target } => self.sequence.integrate_del(target),
        }
    }

    pub fn as_any(&self) -> &dyn Any {
        self
    }
}
