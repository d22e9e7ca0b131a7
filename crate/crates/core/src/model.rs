//! Document and operation model shared by every engine.
//!
//! The external state is the plain text the user sees; external operations
//! are position based. Timestamps are vector clocks, which give the
//! happen-before relation used for causal delivery and for deciding which
//! operations are concurrent.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a collaborating site.
///
/// Site `0` is reserved for the creator of the initial document contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SiteId(pub u32);

impl SiteId {
    /// Owner of the objects that make up the initial document.
    pub const INITIAL: SiteId = SiteId(0);
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for SiteId {
    fn from(v: u32) -> Self {
        SiteId(v)
    }
}

/// Visible document text, one entry per Unicode scalar value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ExternalState {
    text: Vec<char>,
}

impl ExternalState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.text
    }

    /// Applies `op` in place.
    pub fn apply(&mut self, op: &ExternalOp) -> Result<()> {
        match *op {
            ExternalOp::Insert { pos, ch } => {
                if pos > self.text.len() {
                    return Err(self.bounds(op, pos));
                }
                self.text.insert(pos, ch);
            }
            ExternalOp::Delete { pos } => {
                if pos >= self.text.len() {
                    return Err(self.bounds(op, pos));
                }
                self.text.remove(pos);
            }
            ExternalOp::NoOp => {}
        }
        Ok(())
    }

    /// Returns whether `op` could be applied to this state.
    pub fn admits(&self, op: &ExternalOp) -> bool {
        match *op {
            ExternalOp::Insert { pos, .. } => pos <= self.text.len(),
            ExternalOp::Delete { pos } => pos < self.text.len(),
            ExternalOp::NoOp => true,
        }
    }

    fn bounds(&self, op: &ExternalOp, position: usize) -> Error {
        Error::OutOfBounds {
            op: *op,
            len: self.text.len(),
            position,
        }
    }
}

impl From<&str> for ExternalState {
    fn from(s: &str) -> Self {
        ExternalState {
            text: s.chars().collect(),
        }
    }
}

impl From<Vec<char>> for ExternalState {
    fn from(text: Vec<char>) -> Self {
        ExternalState { text }
    }
}

impl fmt::Display for ExternalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.text {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Applies `op` to a copy of `state`.
pub fn apply_external(state: &ExternalState, op: &ExternalOp) -> Result<ExternalState> {
    let mut next = state.clone();
    next.apply(op)?;
    Ok(next)
}

/// Position-based operation on the visible text.
///
/// `Insert { pos, .. }` leaves the new character at index `pos`;
/// `Delete { pos }` removes the character at index `pos`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExternalOp {
    Insert { pos: usize, ch: char },
    Delete { pos: usize },
    NoOp,
}

impl ExternalOp {
    pub fn ins(pos: usize, ch: char) -> Self {
        ExternalOp::Insert { pos, ch }
    }

    pub fn del(pos: usize) -> Self {
        ExternalOp::Delete { pos }
    }

    pub fn is_noop(&self) -> bool {
        matches!(self, ExternalOp::NoOp)
    }
}

/// Canonical text form: `I <pos> <char>`, `D <pos>` or `N`.
impl fmt::Display for ExternalOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExternalOp::Insert { pos, ch } => write!(f, "I {pos} {ch}"),
            ExternalOp::Delete { pos } => write!(f, "D {pos}"),
            ExternalOp::NoOp => f.write_str("N"),
        }
    }
}

impl FromStr for ExternalOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ParseOp(s.to_string());
        if s == "N" {
            return Ok(ExternalOp::NoOp);
        }
        if let Some(rest) = s.strip_prefix("D ") {
            let pos = rest.parse().map_err(|_| bad())?;
            return Ok(ExternalOp::Delete { pos });
        }
        if let Some(rest) = s.strip_prefix("I ") {
            let (pos, ch) = rest.split_once(' ').ok_or_else(bad)?;
            let pos = pos.parse().map_err(|_| bad())?;
            let mut chars = ch.chars();
            let ch = match (chars.next(), chars.next()) {
                (Some(c), None) if c != '\n' && c != '\r' => c,
                _ => return Err(bad()),
            };
            return Ok(ExternalOp::Insert { pos, ch });
        }
        Err(bad())
    }
}

impl Serialize for ExternalOp {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExternalOp {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Vector clock; a missing entry counts as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VectorClock {
    entries: BTreeMap<SiteId, u64>,
}

impl VectorClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, site: SiteId) -> u64 {
        self.entries.get(&site).copied().unwrap_or(0)
    }

    pub fn set(&mut self, site: SiteId, value: u64) {
        if value == 0 {
            self.entries.remove(&site);
        } else {
            self.entries.insert(site, value);
        }
    }

    /// Bumps the entry for `site` and returns the new value.
    pub fn increment(&mut self, site: SiteId) -> u64 {
        let e = self.entries.entry(site).or_insert(0);
        *e += 1;
        *e
    }

    /// Entrywise maximum.
    pub fn merge(&mut self, other: &VectorClock) {
        for (&site, &v) in &other.entries {
            let e = self.entries.entry(site).or_insert(0);
            *e = (*e).max(v);
        }
    }

    /// Non-zero entries in site order.
    pub fn iter(&self) -> impl Iterator<Item = (SiteId, u64)> + '_ {
        self.entries.iter().map(|(&s, &v)| (s, v)).filter(|&(_, v)| v > 0)
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &VectorClock) -> bool {
        self.iter().all(|(s, v)| v <= other.get(s))
    }

    pub fn from_pairs<I: IntoIterator<Item = (SiteId, u64)>>(pairs: I) -> Self {
        let mut clock = VectorClock::new();
        for (s, v) in pairs {
            clock.set(s, v);
        }
        clock
    }
}

impl PartialOrd for VectorClock {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self.le(other), other.le(self)) {
            (true, true) => Some(Ordering::Equal),
            (true, false) => Some(Ordering::Less),
            (false, true) => Some(Ordering::Greater),
            (false, false) => None,
        }
    }
}

/// `site:count` pairs separated by commas, e.g. `1:2,3:1`. Empty clock is `-`.
impl fmt::Display for VectorClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (s, v) in self.iter() {
            if !first {
                f.write_str(",")?;
            }
            first = false;
            write!(f, "{s}:{v}")?;
        }
        if first {
            f.write_str("-")?;
        }
        Ok(())
    }
}

impl FromStr for VectorClock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "-" {
            return Ok(VectorClock::new());
        }
        let mut clock = VectorClock::new();
        for pair in s.split(',') {
            let (site, v) = pair
                .split_once(':')
                .ok_or_else(|| Error::ParseOp(format!("bad clock `{s}`")))?;
            let site: u32 = site.parse().map_err(|_| Error::ParseOp(format!("bad clock `{s}`")))?;
            let v: u64 = v.parse().map_err(|_| Error::ParseOp(format!("bad clock `{s}`")))?;
            clock.set(SiteId(site), v);
        }
        Ok(clock)
    }
}

/// A position-based operation stamped with its origin and causal context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampedOp {
    pub op: ExternalOp,
    pub origin: SiteId,
    pub seq: u64,
    /// Clock at generation; `clock.get(origin) == seq`.
    pub clock: VectorClock,
}

impl TimestampedOp {
    pub fn key(&self) -> (SiteId, u64) {
        (self.origin, self.seq)
    }
}

/// `a -> b`: a's clock is strictly dominated by b's.
pub fn happened_before(a: &TimestampedOp, b: &TimestampedOp) -> bool {
    a.clock.partial_cmp(&b.clock) == Some(Ordering::Less)
}

pub fn concurrent(a: &TimestampedOp, b: &TimestampedOp) -> bool {
    !happened_before(a, b) && !happened_before(b, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clock(pairs: &[(u32, u64)]) -> VectorClock {
        VectorClock::from_pairs(pairs.iter().map(|&(s, v)| (SiteId(s), v)))
    }

    fn stamped(origin: u32, pairs: &[(u32, u64)]) -> TimestampedOp {
        let clock = clock(pairs);
        TimestampedOp {
            op: ExternalOp::NoOp,
            origin: SiteId(origin),
            seq: clock.get(SiteId(origin)),
            clock,
        }
    }

    #[test]
    fn apply_matches_walkthrough() {
        let abe = ExternalState::from("abe");
        assert_eq!(apply_external(&abe, &ExternalOp::del(1)).unwrap().to_string(), "ae");
        assert_eq!(
            apply_external(&abe, &ExternalOp::ins(2, 'c')).unwrap().to_string(),
            "abce"
        );
        let ae = ExternalState::from("ae");
        assert_eq!(apply_external(&ae, &ExternalOp::NoOp).unwrap(), ae);
    }

    #[test]
    fn append_is_allowed() {
        let s = ExternalState::from("ab");
        assert_eq!(apply_external(&s, &ExternalOp::ins(2, 'c')).unwrap().to_string(), "abc");
    }

    #[test]
    fn out_of_bounds_reports_context() {
        let s = ExternalState::from("ab");
        let err = apply_external(&s, &ExternalOp::del(2)).unwrap_err();
        assert_eq!(
            err,
            Error::OutOfBounds {
                op: ExternalOp::del(2),
                len: 2,
                position: 2
            }
        );
        assert!(apply_external(&s, &ExternalOp::ins(3, 'x')).is_err());
        assert!(apply_external(&ExternalState::new(), &ExternalOp::del(0)).is_err());
    }

    #[test]
    fn op_text_form() {
        for (text, op) in [
            ("I 2 c", ExternalOp::ins(2, 'c')),
            ("I 0  ", ExternalOp::ins(0, ' ')),
            ("I 7 é", ExternalOp::ins(7, 'é')),
            ("D 1", ExternalOp::del(1)),
            ("N", ExternalOp::NoOp),
        ] {
            assert_eq!(op.to_string(), text);
            assert_eq!(text.parse::<ExternalOp>().unwrap(), op);
        }
        for bad in ["", "I 1", "I 1 ab", "D", "D x", "X 1", "I -1 a", "N 1"] {
            assert!(bad.parse::<ExternalOp>().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn happened_before_cases() {
        assert!(happened_before(&stamped(1, &[(1, 1)]), &stamped(2, &[(1, 1), (2, 1)])));
        assert!(!happened_before(&stamped(1, &[(1, 1)]), &stamped(2, &[(2, 1)])));
        let a = stamped(1, &[(1, 1), (2, 1)]);
        assert!(!happened_before(&a, &a.clone()));
    }

    #[test]
    fn concurrent_cases() {
        let o1 = stamped(1, &[(1, 1)]);
        let o2 = stamped(2, &[(2, 1)]);
        assert!(concurrent(&o1, &o2));
        let after = stamped(2, &[(1, 1), (2, 1)]);
        assert!(!concurrent(&o1, &after));
    }

    #[test]
    fn three_incomparable_clocks_are_pairwise_concurrent() {
        let ops = [
            stamped(1, &[(1, 2), (2, 1)]),
            stamped(2, &[(2, 2), (3, 1)]),
            stamped(3, &[(3, 2), (1, 1)]),
        ];
        // Oracle: direct componentwise comparison over all three sites.
        let dominated = |a: &TimestampedOp, b: &TimestampedOp| {
            (1..=3).all(|s| a.clock.get(SiteId(s)) <= b.clock.get(SiteId(s))) && a.clock != b.clock
        };
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(!dominated(&ops[i], &ops[j]));
                    assert!(concurrent(&ops[i], &ops[j]));
                }
            }
        }
    }

    #[test]
    fn clock_text_form() {
        let c = clock(&[(3, 1), (1, 2)]);
        assert_eq!(c.to_string(), "1:2,3:1");
        assert_eq!("1:2,3:1".parse::<VectorClock>().unwrap(), c);
        assert_eq!(VectorClock::new().to_string(), "-");
        assert_eq!("-".parse::<VectorClock>().unwrap(), VectorClock::new());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_clock() -> impl Strategy<Value = VectorClock> {
            proptest::collection::vec(0u64..3, 3).prop_map(|v| {
                VectorClock::from_pairs(v.into_iter().enumerate().map(|(i, c)| (SiteId(i as u32 + 1), c)))
            })
        }

        fn arb_op(len: usize) -> impl Strategy<Value = (ExternalState, usize, char)> {
            (
                proptest::collection::vec(proptest::char::range('a', 'e'), len),
                0..=len,
                proptest::char::any(),
            )
                .prop_map(|(text, p, c)| (ExternalState::from(text), p, c))
        }

        proptest! {
            #[test]
            fn insert_then_delete_restores((s, p, c) in (0usize..10).prop_flat_map(arb_op)) {
                let after = apply_external(&s, &ExternalOp::ins(p, c)).unwrap();
                prop_assert_eq!(apply_external(&after, &ExternalOp::del(p)).unwrap(), s);
            }

            #[test]
            fn happened_before_is_strict_partial_order(a in arb_clock(), b in arb_clock(), c in arb_clock()) {
                let op = |clock: &VectorClock| TimestampedOp { op: ExternalOp::NoOp, origin: SiteId(1), seq: 0, clock: clock.clone() };
                let (a, b, c) = (op(&a), op(&b), op(&c));
                prop_assert!(!happened_before(&a, &a));
                if happened_before(&a, &b) && happened_before(&b, &c) {
                    prop_assert!(happened_before(&a, &c));
                }
                prop_assert!(!(happened_before(&a, &b) && happened_before(&b, &a)));
            }

            #[test]
            fn exactly_one_relation_holds(a in arb_clock(), b in arb_clock()) {
                prop_assume!(a != b);
                let op = |clock: &VectorClock| TimestampedOp { op: ExternalOp::NoOp, origin: SiteId(1), seq: 0, clock: clock.clone() };
                let (a, b) = (op(&a), op(&b));
                let n = [happened_before(&a, &b), happened_before(&b, &a), concurrent(&a, &b)]
                    .iter()
                    .filter(|x| **x)
                    .count();
                prop_assert_eq!(n, 1);
            }
        }
    }
}
