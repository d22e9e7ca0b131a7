//! Run trace: one line per event.
//!
//! ```text
//! tick=0 site=0 kind=start engine=ot mode=causal sites=2 doc=abe
//! tick=0 site=1 kind=init cost=0 vis=3 tot=3
//! tick=0 site=1 kind=gen id=1.1 clock=1:1 c=0 tf=0 steps=0 vis=2 tot=2 op=D 1
//! tick=3 site=2 kind=deliver id=1.1 clock=1:1 index=- c=1 tf=2 steps=0 vis=3 tot=3 op=D 1
//! tick=4 site=1 kind=ack id=1.1 index=1
//! tick=9 site=1 kind=gc collected=2 buf=0
//! ```
//!
//! `op` and `doc` always come last and run to the end of the line. A
//! delivery whose result was not applied to the document has `op=-`.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::framework::{EngineKind, OpCost};
use crate::model::{ExternalOp, SiteId, VectorClock};
use crate::netsim::Mode;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Start {
        engine: EngineKind,
        mode: Mode,
        sites: usize,
        doc: String,
    },
    Init {
        site: SiteId,
        cost: usize,
        visible: usize,
        total: usize,
    },
    Gen {
        tick: u64,
        site: SiteId,
        seq: u64,
        clock: VectorClock,
        cost: OpCost,
        visible: usize,
        total: usize,
        op: ExternalOp,
    },
    Deliver {
        tick: u64,
        site: SiteId,
        origin: SiteId,
        seq: u64,
        clock: VectorClock,
        index: Option<u64>,
        cost: OpCost,
        visible: usize,
        total: usize,
        op: Option<ExternalOp>,
    },
    Ack {
        tick: u64,
        site: SiteId,
        seq: u64,
        index: u64,
    },
    Gc {
        tick: u64,
        site: SiteId,
        collected: usize,
        buffer: usize,
    },
}

impl Event {
    pub fn tick(&self) -> u64 {
        match self {
            Event::Start { .. } | Event::Init { .. } => 0,
            Event::Gen { tick, .. }
            | Event::Deliver { tick, .. }
            | Event::Ack { tick, .. }
            | Event::Gc { tick, .. } => *tick,
        }
    }

    pub fn site(&self) -> SiteId {
        match self {
            Event::Start { .. } => SiteId(0),
            Event::Init { site, .. }
            | Event::Gen { site, .. }
            | Event::Deliver { site, .. }
            | Event::Ack { site, .. }
            | Event::Gc { site, .. } => *site,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Event::Start { .. } => "start",
            Event::Init { .. } => "init",
            Event::Gen { .. } => "gen",
            Event::Deliver { .. } => "deliver",
            Event::Ack { .. } => "ack",
            Event::Gc { .. } => "gc",
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tick={} site={} kind={}", self.tick(), self.site(), self.kind())?;
        let cost = |c: &OpCost| format!("c={} tf={} steps={}", c.concurrent, c.transforms, c.search_steps);
        match self {
            Event::Start {
                engine,
                mode,
                sites,
                doc,
            } => write!(f, " engine={engine} mode={mode} sites={sites} doc={doc}"),
            Event::Init {
                cost, visible, total, ..
            } => write!(f, " cost={cost} vis={visible} tot={total}"),
            Event::Gen {
                site,
                seq,
                clock,
                cost: c,
                visible,
                total,
                op,
                ..
            } => write!(
                f,
                " id={site}.{seq} clock={clock} {} vis={visible} tot={total} op={op}",
                cost(c)
            ),
            Event::Deliver {
                origin,
                seq,
                clock,
                index,
                cost: c,
                visible,
                total,
                op,
                ..
            } => {
                let index = index.map_or("-".to_string(), |i| i.to_string());
                let op = op.map_or("-".to_string(), |o| o.to_string());
                write!(
                    f,
                    " id={origin}.{seq} clock={clock} index={index} {} vis={visible} tot={total} op={op}",
                    cost(c)
                )
            }
            Event::Ack { site, seq, index, .. } => write!(f, " id={site}.{seq} index={index}"),
            Event::Gc { collected, buffer, .. } => write!(f, " collected={collected} buf={buffer}"),
        }
    }
}

struct Fields<'a> {
    line: &'a str,
    pairs: Vec<(&'a str, &'a str)>,
    tail: Option<&'a str>,
}

impl<'a> Fields<'a> {
    fn parse(line: &'a str) -> Self {
        let (head, tail) = match line.find(" op=").or_else(|| line.find(" doc=")) {
            Some(i) => {
                let rest = &line[i + 1..];
                let eq = rest.find('=').unwrap();
                (&line[..i], Some(&rest[eq + 1..]))
            }
            None => (line, None),
        };
        let pairs = head.split(' ').filter_map(|kv| kv.split_once('=')).collect();
        Fields { line, pairs, tail }
    }

    fn bad(&self) -> Error {
        Error::Scenario(format!("bad trace line `{}`", self.line))
    }

    fn raw(&self, key: &str) -> Result<&'a str> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| self.bad())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        self.raw(key)?.parse().map_err(|_| self.bad())
    }

    fn id(&self) -> Result<(SiteId, u64)> {
        let (s, q) = self.raw("id")?.split_once('.').ok_or_else(|| self.bad())?;
        Ok((
            SiteId(s.parse().map_err(|_| self.bad())?),
            q.parse().map_err(|_| self.bad())?,
        ))
    }

    fn cost(&self) -> Result<OpCost> {
        Ok(OpCost {
            concurrent: self.get("c")?,
            transforms: self.get("tf")?,
            search_steps: self.get("steps")?,
        })
    }

    fn tail(&self) -> Result<&'a str> {
        self.tail.ok_or_else(|| self.bad())
    }
}

impl FromStr for Event {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let f = Fields::parse(line);
        let tick: u64 = f.get("tick")?;
        let site = SiteId(f.get("site")?);
        Ok(match f.raw("kind")? {
            "start" => Event::Start {
                engine: f.get("engine")?,
                mode: f.get("mode")?,
                sites: f.get("sites")?,
                doc: f.tail()?.to_string(),
            },
            "init" => Event::Init {
                site,
                cost: f.get("cost")?,
                visible: f.get("vis")?,
                total: f.get("tot")?,
            },
            "gen" => Event::Gen {
                tick,
                site,
                seq: f.id()?.1,
                clock: f.get("clock")?,
                cost: f.cost()?,
                visible: f.get("vis")?,
                total: f.get("tot")?,
                op: f.tail()?.parse()?,
            },
            "deliver" => {
                let (origin, seq) = f.id()?;
                Event::Deliver {
                    tick,
                    site,
                    origin,
                    seq,
                    clock: f.get("clock")?,
                    index: match f.raw("index")? {
                        "-" => None,
                        i => Some(i.parse().map_err(|_| f.bad())?),
                    },
                    cost: f.cost()?,
                    visible: f.get("vis")?,
                    total: f.get("tot")?,
                    op: match f.tail()? {
                        "-" => None,
                        op => Some(op.parse()?),
                    },
                }
            }
            "ack" => Event::Ack {
                tick,
                site,
                seq: f.id()?.1,
                index: f.get("index")?,
            },
            "gc" => Event::Gc {
                tick,
                site,
                collected: f.get("collected")?,
                buffer: f.get("buf")?,
            },
            _ => return Err(f.bad()),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<Event>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    /// Hex SHA-256 of the text form.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_string().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn start(&self) -> Option<(EngineKind, Mode, usize, &str)> {
        self.events.iter().find_map(|e| match e {
            Event::Start {
                engine,
                mode,
                sites,
                doc,
            } => Some((*engine, *mode, *sites, doc.as_str())),
            _ => None,
        })
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.events {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

impl FromStr for Trace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let events = s
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        Ok(Trace { events })
    }
}
