//! Scenario files.
//!
//! ```text
//! # comment
//! name fig1
//! sites 2
//! doc abe
//! mode causal
//! seed 0
//! latency fixed 3
//! @0 s1 D 1
//! @0 s2 I 2 c
//! ```
//!
//! Instead of script lines a scenario may carry a generator line such as
//! `fuzz ops=200 insert=0.6 alphabet=abcdef gap=3`; operations are then
//! drawn at run time against the generating site's current document.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExternalOp, ExternalState, SiteId};
use crate::netsim::{LatencyModel, Mode, SimConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptOp {
    pub tick: u64,
    pub site: SiteId,
    /// Position relative to the site's document at generation time.
    pub op: ExternalOp,
}

impl fmt::Display for ScriptOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{} s{} {}", self.tick, self.site, self.op)
    }
}

impl FromStr for ScriptOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Scenario(format!("bad script line `{s}`"));
        let rest = s.strip_prefix('@').ok_or_else(bad)?;
        let (tick, rest) = rest.split_once(' ').ok_or_else(bad)?;
        let rest = rest.strip_prefix('s').ok_or_else(bad)?;
        let (site, op) = rest.split_once(' ').ok_or_else(bad)?;
        Ok(ScriptOp {
            tick: tick.parse().map_err(|_| bad())?,
            site: SiteId(site.parse().map_err(|_| bad())?),
            op: op.parse()?,
        })
    }
}

/// Random workload drawn while the scenario runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzSpec {
    pub ops: usize,
    /// Probability that a generated operation is an insert. Deletes on an
    /// empty document become inserts.
    pub insert_ratio: f64,
    pub alphabet: Vec<char>,
    /// Tick gap between consecutive generated operations, inclusive range.
    pub min_gap: u64,
    pub max_gap: u64,
}

impl Default for FuzzSpec {
    fn default() -> Self {
        FuzzSpec {
            ops: 50,
            insert_ratio: 0.6,
            alphabet: ('a'..='z').collect(),
            min_gap: 0,
            max_gap: 3,
        }
    }
}

impl fmt::Display for FuzzSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let alphabet: String = self.alphabet.iter().collect();
        write!(
            f,
            "fuzz ops={} insert={} alphabet={alphabet} gap=",
            self.ops, self.insert_ratio
        )?;
        if self.min_gap > 0 {
            write!(f, "{}..", self.min_gap)?;
        }
        write!(f, "{}", self.max_gap)
    }
}

impl FromStr for FuzzSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Scenario(format!("bad fuzz line `{s}`"));
        let rest = s.strip_prefix("fuzz").ok_or_else(bad)?;
        let mut spec = FuzzSpec::default();
        for kv in rest.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            match k {
                "ops" => spec.ops = v.parse().map_err(|_| bad())?,
                "insert" => spec.insert_ratio = v.parse().map_err(|_| bad())?,
                "alphabet" => spec.alphabet = v.chars().collect(),
                "gap" => {
                    let (lo, hi) = v.split_once("..").unwrap_or(("0", v));
                    spec.min_gap = lo.parse().map_err(|_| bad())?;
                    spec.max_gap = hi.parse().map_err(|_| bad())?;
                }
                _ => return Err(bad()),
            }
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Script {
    Explicit(Vec<ScriptOp>),
    Fuzz(FuzzSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub initial: String,
    pub sites: usize,
    pub mode: Mode,
    pub latency: LatencyModel,
    pub seed: u64,
    pub script: Script,
}

impl Scenario {
    /// Two sites share "abe"; site 1 deletes `b` while site 2 concurrently
    /// inserts `c` before `e`.
    pub fn fig1() -> Self {
        Scenario {
            name: "fig1".into(),
            initial: "abe".into(),
            sites: 2,
            mode: Mode::Causal,
            latency: LatencyModel::Fixed(3),
            seed: 0,
            script: Script::Explicit(vec![
                ScriptOp {
                    tick: 0,
                    site: SiteId(1),
                    op: ExternalOp::del(1),
                },
                ScriptOp {
                    tick: 0,
                    site: SiteId(2),
                    op: ExternalOp::ins(2, 'c'),
                },
            ]),
        }
    }

    pub fn fuzz(name: impl Into<String>, sites: usize, mode: Mode, seed: u64, spec: FuzzSpec) -> Self {
        Scenario {
            name: name.into(),
            initial: String::new(),
            sites,
            mode,
            latency: LatencyModel::Uniform { lo: 1, hi: 10 },
            seed,
            script: Script::Fuzz(spec),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "fig1" => Some(Self::fig1()),
            _ => None,
        }
    }

    /// Loads a built-in scenario by name or a scenario file by path.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some(s) = Self::builtin(name_or_path) {
            return Ok(s);
        }
        let text = std::fs::read_to_string(name_or_path)
            .map_err(|e| Error::Scenario(format!("cannot read {name_or_path}: {e}")))?;
        text.parse()
    }

    pub fn initial_state(&self) -> ExternalState {
        ExternalState::from(self.initial.as_str())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig::new(self.sites, self.mode, self.latency.clone(), self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_config().validate()?;
        if self.initial.contains(['\n', '\r']) {
            return Err(Error::Scenario("initial document must be a single line".into()));
        }
        match &self.script {
            Script::Explicit(ops) => {
                for op in ops {
                    if op.site.0 == 0 || op.site.0 as usize > self.sites {
                        return Err(Error::Scenario(format!(
                            "`{op}` names a site outside 1..={}",
                            self.sites
                        )));
                    }
                    if op.op.is_noop() {
                        return Err(Error::Scenario(format!("`{op}` is a no-op")));
                    }
                }
            }
            Script::Fuzz(spec) => {
                if spec.alphabet.is_empty() || spec.alphabet.iter().any(|c| c.is_whitespace()) {
                    return Err(Error::Scenario(
                        "fuzz alphabet must be non-empty without whitespace".into(),
                    ));
                }
                if spec.min_gap > spec.max_gap {
                    return Err(Error::Scenario("fuzz gap range is empty".into()));
                }
                if !(0.0..=1.0).contains(&spec.insert_ratio) {
                    return Err(Error::Scenario("insert ratio must lie in [0, 1]".into()));
                }
            }
        }
        Ok(())
    }

    /// Script operations in generation order: by tick, then file order.
    pub fn ordered_script(&self) -> Vec<ScriptOp> {
        match &self.script {
            Script::Explicit(ops) => {
                let mut ops = ops.clone();
                ops.sort_by_key(|o| o.tick);
                ops
            }
            Script::Fuzz(_) => Vec::new(),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name {}", self.name)?;
        writeln!(f, "sites {}", self.sites)?;
        writeln!(f, "doc {}", self.initial)?;
        writeln!(f, "mode {}", self.mode)?;
        writeln!(f, "seed {}", self.seed)?;
        writeln!(f, "latency {}", self.latency)?;
        match &self.script {
            Script::Explicit(ops) => ops.iter().try_for_each(|op| writeln!(f, "{op}")),
            Script::Fuzz(spec) => writeln!(f, "{spec}"),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut scenario = Scenario {
            name: "unnamed".into(),
            initial: String::new(),
            sites: 2,
            mode: Mode::Causal,
            latency: LatencyModel::Fixed(1),
            seed: 0,
            script: Script::Explicit(Vec::new()),
        };
        let mut ops = Vec::new();
        let mut fuzz = None;
        for (n, line) in s.lines().enumerate() {
            let at = |e: Error| Error::Scenario(format!("line {}: {e}", n + 1));
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('@') {
                ops.push(line.parse::<ScriptOp>().map_err(at)?);
                continue;
            }
            if line.starts_with("fuzz") {
                fuzz = Some(line.parse::<FuzzSpec>().map_err(at)?);
                continue;
            }
            let (key, value) = line.split_once(' ').unwrap_or((line, ""));
            let num = |v: &str| {
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| at(Error::Scenario(format!("bad number `{v}`"))))
            };
            match key {
                "name" => scenario.name = value.trim().to_string(),
                "sites" => scenario.sites = num(value)? as usize,
                "doc" => scenario.initial = value.to_string(),
                "mode" => scenario.mode = value.trim().parse().map_err(at)?,
                "seed" => scenario.seed = num(value)?,
                "latency" => scenario.latency = value.parse().map_err(at)?,
                _ => return Err(at(Error::Scenario(format!("unknown key `{key}`")))),
            }
        }
        scenario.script = match (fuzz, ops.is_empty()) {
            (Some(_), false) => return Err(Error::Scenario("script lines and a fuzz line are exclusive".into())),
            (Some(spec), true) => Script::Fuzz(spec),
            (None, _) => Script::Explicit(ops),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
