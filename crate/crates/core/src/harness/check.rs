//! Checks derived from a run's report or trace.
//!
//! Intention preservation is checked through three proxies over character
//! instances, each tagged with the operation that inserted it:
//!
//! * (a) an instance survives at the end iff no delete targeted it;
//! * (b) every delete removes exactly the instance it targeted where it was
//!   generated, or nothing if that instance is already gone;
//! * (c) two surviving instances keep the relative order they had at the
//!   site where either was inserted, at generation time.

use std::collections::{HashMap, HashSet};

use super::{RunReport, Verdict};
use crate::error::{Error, Result};
use crate::model::{ExternalOp, ExternalState, SiteId};
use crate::trace::{Event, Trace};

const MAX_DETAILS: usize = 8;

fn limited(mut details: Vec<String>) -> Verdict {
    let extra = details.len().saturating_sub(MAX_DETAILS);
    details.truncate(MAX_DETAILS);
    if extra > 0 {
        details.push(format!("... and {extra} more"));
    }
    Verdict::from_details(details)
}

/// All final documents identical and, where the engine has one, all
/// internal sequences identical.
pub fn check_convergence(report: &RunReport) -> Verdict {
    let mut details = Vec::new();
    if let Some(first) = report.sites.first() {
        for s in &report.sites[1..] {
            if s.text != first.text {
                details.push(format!(
                    "site {}: `{}` vs site {}: `{}`",
                    first.site, first.text, s.site, s.text
                ));
            }
            if s.dump != first.dump {
                details.push(format!(
                    "internal sequences of sites {} and {} differ",
                    first.site, s.site
                ));
            }
        }
    }
    limited(details)
}

fn start(trace: &Trace) -> Result<(usize, &str)> {
    trace
        .start()
        .map(|(_, _, sites, doc)| (sites, doc))
        .ok_or_else(|| Error::Scenario("trace has no start event".into()))
}

fn site_index(site: SiteId, sites: usize) -> Result<usize> {
    match site.0 as usize {
        s @ 1.. if s <= sites => Ok(s - 1),
        _ => Err(Error::Scenario(format!("trace names unknown site {site}"))),
    }
}

/// Final document of every site, rebuilt from the initial document and the
/// operations the trace says were applied.
pub fn replay_texts(trace: &Trace) -> Result<Vec<String>> {
    let (sites, doc) = start(trace)?;
    let mut docs = vec![ExternalState::from(doc); sites];
    for e in &trace.events {
        match e {
            Event::Gen { site, op, .. } => docs[site_index(*site, sites)?].apply(op)?,
            Event::Deliver { site, op: Some(op), .. } => docs[site_index(*site, sites)?].apply(op)?,
            _ => {}
        }
    }
    Ok(docs.iter().map(|d| d.to_string()).collect())
}

type Tag = (SiteId, u64);

/// Final tagged documents, every inserted tag, every tag targeted by a delete.
type Replayed = (Vec<Vec<Tag>>, HashSet<Tag>, HashSet<Tag>);

#[derive(Clone, Copy)]
enum Generated {
    Insert,
    Delete(Option<Tag>),
}

/// Replays the trace over tagged documents. Calls `on_insert` at every local
/// insert with the document as it was just before.
fn replay_tags(
    trace: &Trace,
    details: &mut Vec<String>,
    mut on_insert: impl FnMut(Tag, &[Tag], usize),
) -> Result<Replayed> {
    let (sites, doc) = start(trace)?;
    let initial: Vec<Tag> = (1..=doc.chars().count() as u64).map(|i| (SiteId::INITIAL, i)).collect();
    let mut docs = vec![initial.clone(); sites];
    let mut inserted: HashSet<Tag> = initial.into_iter().collect();
    let mut targeted = HashSet::new();
    let mut generated: HashMap<Tag, Generated> = HashMap::new();
    let bounds = |tag: Tag, at: SiteId| Error::Scenario(format!("{}.{} out of bounds at site {at}", tag.0, tag.1));

    for e in &trace.events {
        match e {
            Event::Gen { site, seq, op, .. } => {
                let tag = (*site, *seq);
                let d = &mut docs[site_index(*site, sites)?];
                match *op {
                    ExternalOp::Insert { pos, .. } => {
                        if pos > d.len() {
                            return Err(bounds(tag, *site));
                        }
                        on_insert(tag, d, pos);
                        d.insert(pos, tag);
                        inserted.insert(tag);
                        generated.insert(tag, Generated::Insert);
                    }
                    ExternalOp::Delete { pos } => {
                        if pos >= d.len() {
                            return Err(bounds(tag, *site));
                        }
                        let target = d.remove(pos);
                        targeted.insert(target);
                        generated.insert(tag, Generated::Delete(Some(target)));
                    }
                    ExternalOp::NoOp => {
                        generated.insert(tag, Generated::Delete(None));
                    }
                }
            }
            Event::Deliver {
                site, origin, seq, op, ..
            } => {
                let tag = (*origin, *seq);
                let d = &mut docs[site_index(*site, sites)?];
                let Some(gen) = generated.get(&tag).copied() else {
                    details.push(format!("site {site} executed {origin}.{seq} before it was generated"));
                    continue;
                };
                match (gen, op) {
                    (_, None) => details.push(format!("site {site}: {origin}.{seq} was not applied to the document")),
                    (Generated::Insert, Some(ExternalOp::Insert { pos, .. })) => {
                        if *pos > d.len() {
                            return Err(bounds(tag, *site));
                        }
                        d.insert(*pos, tag);
                    }
                    (Generated::Insert, Some(other)) => {
                        details.push(format!("(a) site {site}: insert {origin}.{seq} executed as `{other}`"));
                    }
                    (Generated::Delete(target), Some(ExternalOp::Delete { pos })) => {
                        if *pos >= d.len() {
                            return Err(bounds(tag, *site));
                        }
                        let removed = d.remove(*pos);
                        if Some(removed) != target {
                            details.push(format!(
                                "(b) site {site}: delete {origin}.{seq} removed {}.{} instead of its target",
                                removed.0, removed.1
                            ));
                        }
                    }
                    (Generated::Delete(target), Some(ExternalOp::NoOp)) => {
                        if let Some(t) = target.filter(|t| d.contains(t)) {
                            details.push(format!(
                                "(b) site {site}: delete {origin}.{seq} left its target {}.{} in place",
                                t.0, t.1
                            ));
                        }
                    }
                    (Generated::Delete(_), Some(other)) => {
                        details.push(format!("(b) site {site}: delete {origin}.{seq} executed as `{other}`"));
                    }
                }
            }
            _ => {}
        }
    }
    Ok((docs, inserted, targeted))
}

/// The three intention proxies over a completed trace.
pub fn check_intention(trace: &Trace) -> Verdict {
    let mut details = Vec::new();
    let (finals, inserted, targeted) = match replay_tags(trace, &mut details, |_, _, _| {}) {
        Ok(r) => r,
        Err(e) => return Verdict::from_details(vec![e.to_string()]),
    };
    let expected: HashSet<Tag> = inserted.difference(&targeted).copied().collect();
    for (i, doc) in finals.iter().enumerate() {
        let present: HashSet<Tag> = doc.iter().copied().collect();
        for t in expected.difference(&present) {
            details.push(format!(
                "(a) site {}: {}.{} was never deleted but is missing",
                i + 1,
                t.0,
                t.1
            ));
        }
        for t in present.difference(&expected) {
            details.push(format!("(a) site {}: {}.{} was deleted but survives", i + 1, t.0, t.1));
        }
    }

    let positions: Vec<HashMap<Tag, usize>> = finals
        .iter()
        .map(|d| d.iter().enumerate().map(|(i, &t)| (t, i)).collect())
        .collect();
    let mut order_details = Vec::new();
    let pass = replay_tags(trace, &mut Vec::new(), |x, doc, pos| {
        for (s, final_pos) in positions.iter().enumerate() {
            let Some(&px) = final_pos.get(&x) else { continue };
            let left = doc[..pos]
                .iter()
                .filter_map(|y| final_pos.get(y).map(|&p| (y, p)))
                .max_by_key(|&(_, p)| p);
            let right = doc[pos..]
                .iter()
                .filter_map(|y| final_pos.get(y).map(|&p| (y, p)))
                .min_by_key(|&(_, p)| p);
            if let Some((y, py)) = left.filter(|&(_, py)| py > px) {
                order_details.push(format!(
                    "(c) site {}: {}.{} was left of {}.{} at generation but ends right of it (final {py} vs {px})",
                    s + 1,
                    y.0,
                    y.1,
                    x.0,
                    x.1
                ));
            }
            if let Some((y, py)) = right.filter(|&(_, py)| py < px) {
                order_details.push(format!(
                    "(c) site {}: {}.{} was right of {}.{} at generation but ends left of it (final {py} vs {px})",
                    s + 1,
                    y.0,
                    y.1,
                    x.0,
                    x.1
                ));
            }
        }
    });
    if let Err(e) = pass {
        details.push(e.to_string());
    }
    details.extend(order_details);
    limited(details)
}

/// Every site executes each operation once, after everything that
/// happened before it.
pub fn check_causality(trace: &Trace) -> Verdict {
    let mut details = Vec::new();
    let Ok((sites, _)) = start(trace) else {
        return Verdict::from_details(vec!["trace has no start event".into()]);
    };
    let mut seen: Vec<HashMap<SiteId, u64>> = vec![HashMap::new(); sites];
    for e in &trace.events {
        let (site, origin, seq, clock) = match e {
            Event::Gen { site, seq, clock, .. } => (*site, *site, *seq, clock),
            Event::Deliver {
                site,
                origin,
                seq,
                clock,
                ..
            } => (*site, *origin, *seq, clock),
            _ => continue,
        };
        let Ok(i) = site_index(site, sites) else {
            details.push(format!("unknown site {site}"));
            continue;
        };
        let known = &mut seen[i];
        let have = known.get(&origin).copied().unwrap_or(0);
        if seq != have + 1 {
            details.push(format!("site {site} executed {origin}.{seq} after {origin}.{have}"));
        }
        for (k, v) in clock.iter() {
            if k != origin && known.get(&k).copied().unwrap_or(0) < v {
                details.push(format!(
                    "site {site} executed {origin}.{seq} before its dependency {k}.{v}"
                ));
            }
        }
        known.insert(origin, seq);
    }
    limited(details)
}
