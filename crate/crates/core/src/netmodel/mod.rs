//! Network data model: buses, lines, generators and loads.
//!
//! Quantities are stored in per-unit on `base_mva` once a case has been
//! parsed. Reactances are per-unit in the case files already; MW values
//! (line limits, generator bounds, loads) are divided by `base_mva` at the
//! parse boundary and multiplied back when serializing. Generator cost
//! coefficients keep their $/MWh meaning and are evaluated on MW.

mod json;
mod matpower;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use json::{from_json, to_json};
pub use matpower::from_matpower;

use crate::error::{Error, Result};

pub type BusId = u32;
pub type LineId = u32;

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: BusId,
    pub is_slack: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub id: LineId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    /// Series reactance, per-unit.
    pub reactance: f64,
    /// Flow limit in per-unit; `None` means unlimited.
    pub limit: Option<f64>,
    pub in_service: bool,
}

impl Line {
    pub fn susceptance(&self) -> f64 {
        1.0 / self.reactance
    }

    pub fn connects(&self, a: BusId, b: BusId) -> bool {
        (self.from_bus == a && self.to_bus == b) || (self.from_bus == b && self.to_bus == a)
    }
}

/// Polynomial generator cost `constant + linear * P + quadratic * P^2`, with
/// `P` in MW and the result in $/h.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CostCurve {
    pub constant: f64,
    pub linear: f64,
    pub quadratic: f64,
}

impl CostCurve {
    pub fn eval_mw(&self, p_mw: f64) -> f64 {
        self.constant + self.linear * p_mw + self.quadratic * p_mw * p_mw
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub bus: BusId,
    /// Per-unit.
    pub p_min: f64,
    /// Per-unit.
    pub p_max: f64,
    pub cost: CostCurve,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Load {
    pub bus: BusId,
    /// Per-unit demand.
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

/// A single finding of [`validate`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    SlackCount { found: usize },
    DuplicateBus { id: BusId },
    DuplicateLine { id: LineId },
    SelfLoop { line: LineId },
    NonPositiveReactance { line: LineId },
    NonPositiveLimit { line: LineId },
    DanglingLineEnd { line: LineId, bus: BusId },
    DanglingGenerator { index: usize, bus: BusId },
    DanglingLoad { index: usize, bus: BusId },
    GeneratorBounds { index: usize },
    NonConvexCost { index: usize },
    NegativeLoad { index: usize },
    Disconnected { isolated: Vec<BusId> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SlackCount { found } => {
                write!(f, "expected exactly one slack bus, found {found}")
            }
            Violation::DuplicateBus { id } => write!(f, "duplicate bus id {id}"),
            Violation::DuplicateLine { id } => write!(f, "duplicate line id {id}"),
            Violation::SelfLoop { line } => write!(f, "line {line} connects a bus to itself"),
            Violation::NonPositiveReactance { line } => {
                write!(f, "line {line} has non-positive reactance")
            }
            Violation::NonPositiveLimit { line } => write!(f, "line {line} has non-positive limit"),
            Violation::DanglingLineEnd { line, bus } => {
                write!(f, "line {line} references unknown bus {bus}")
            }
            Violation::DanglingGenerator { index, bus } => {
                write!(f, "generator #{index} references unknown bus {bus}")
            }
            Violation::DanglingLoad { index, bus } => {
                write!(f, "load #{index} references unknown bus {bus}")
            }
            Violation::GeneratorBounds { index } => write!(f, "generator #{index} has p_min > p_max"),
            Violation::NonConvexCost { index } => {
                write!(f, "generator #{index} has a negative quadratic cost coefficient")
            }
            Violation::NegativeLoad { index } => write!(f, "load #{index} has negative demand"),
            Violation::Disconnected { isolated } => {
                let ids: Vec<String> = isolated.iter().map(|b| b.to_string()).collect();
                write!(
                    f,
                    "network is disconnected; buses unreachable from the slack: {}",
                    ids.join(" ")
                )
            }
        }
    }
}

/// Outcome of [`validate`]; empty means valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl Network {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn in_service_lines(&self) -> impl Iterator<Item = (usize, &Line)> {
        self.lines.iter().enumerate().filter(|(_, l)| l.in_service)
    }

    /// Position of a bus in `buses`.
    pub fn bus_position(&self, id: BusId) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn line_position(&self, id: LineId) -> Option<usize> {
        self.lines.iter().position(|l| l.id == id)
    }

    pub fn bus_positions(&self) -> BTreeMap<BusId, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    /// Index of the unique slack bus.
    pub fn slack_position(&self) -> Result<usize> {
        let mut slack = self.buses.iter().enumerate().filter(|(_, b)| b.is_slack);
        match (slack.next(), slack.next()) {
            (Some((i, _)), None) => Ok(i),
            (None, _) => Err(Error::Model("network has no slack bus".into())),
            (Some(_), Some(_)) => Err(Error::Model("network has more than one slack bus".into())),
        }
    }

    /// Position pairs `(from, to)` for each line, erroring on unknown buses.
    pub(crate) fn line_ends(&self) -> Result<Vec<(usize, usize)>> {
        let pos = self.bus_positions();
        self.lines
            .iter()
            .map(|l| match (pos.get(&l.from_bus), pos.get(&l.to_bus)) {
                (Some(&f), Some(&t)) => Ok((f, t)),
                _ => Err(Error::Model(format!("line {} references an unknown bus", l.id))),
            })
            .collect()
    }

    /// Per-bus net injection from fixed generator outputs minus loads (per-unit).
    pub fn net_injection(&self, p_gen: &[f64]) -> Result<Vec<f64>> {
        if p_gen.len() != self.generators.len() {
            return Err(Error::Dimension {
                what: "generator outputs",
                expected: self.generators.len(),
                found: p_gen.len(),
            });
        }
        let pos = self.bus_positions();
        let mut inj = vec![0.0; self.buses.len()];
        for (g, &p) in self.generators.iter().zip(p_gen) {
            let k = *pos
                .get(&g.bus)
                .ok_or_else(|| Error::Model(format!("generator at unknown bus {}", g.bus)))?;
            inj[k] += p;
        }
        for d in &self.loads {
            let k = *pos
                .get(&d.bus)
                .ok_or_else(|| Error::Model(format!("load at unknown bus {}", d.bus)))?;
            inj[k] -= d.p;
        }
        Ok(inj)
    }

    pub fn total_load(&self) -> f64 {
        self.loads.iter().map(|d| d.p).sum()
    }

    /// Copy of the network with line `id` taken out of service.
    pub fn with_outage(&self, id: LineId) -> Result<Network> {
        let k = self.line_position(id).ok_or(Error::UnknownLine(id))?;
        let mut net = self.clone();
        net.lines[k].in_service = false;
        Ok(net)
    }

    /// Buses unreachable from the first bus (the slack, when present) over in-service lines.
    pub fn unreachable_buses(&self) -> Vec<BusId> {
        if self.buses.is_empty() {
            return Vec::new();
        }
        let pos = self.bus_positions();
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for l in self.lines.iter().filter(|l| l.in_service) {
            if let (Some(&a), Some(&b)) = (pos.get(&l.from_bus), pos.get(&l.to_bus)) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        let root = self.buses.iter().position(|b| b.is_slack).unwrap_or(0);
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        let mut out: Vec<BusId> = (0..n).filter(|&i| !seen[i]).map(|i| self.buses[i].id).collect();
        out.sort_unstable();
        out
    }
}

/// Checks structural and connectivity rules. Pure; never fails.
pub fn validate(net: &Network) -> ValidationReport {
    let mut v = Vec::new();

    let slack_count = net.buses.iter().filter(|b| b.is_slack).count();
    if slack_count != 1 {
        v.push(Violation::SlackCount { found: slack_count });
    }

    let mut bus_ids = BTreeSet::new();
    for b in &net.buses {
        if !bus_ids.insert(b.id) {
            v.push(Violation::DuplicateBus { id: b.id });
        }
    }
    let mut line_ids = BTreeSet::new();
    for l in &net.lines {
        if !line_ids.insert(l.id) {
            v.push(Violation::DuplicateLine { id: l.id });
        }
        if l.from_bus == l.to_bus {
            v.push(Violation::SelfLoop { line: l.id });
        }
        if !(l.reactance > 0.0) {
            v.push(Violation::NonPositiveReactance { line: l.id });
        }
        if matches!(l.limit, Some(f) if !(f > 0.0)) {
            v.push(Violation::NonPositiveLimit { line: l.id });
        }
        for bus in [l.from_bus, l.to_bus] {
            if !bus_ids.contains(&bus) {
                v.push(Violation::DanglingLineEnd { line: l.id, bus });
            }
        }
    }
    for (index, g) in net.generators.iter().enumerate() {
        if !bus_ids.contains(&g.bus) {
            v.push(Violation::DanglingGenerator { index, bus: g.bus });
        }
        if g.p_min > g.p_max {
            v.push(Violation::GeneratorBounds { index });
        }
        if g.cost.quadratic < 0.0 {
            v.push(Violation::NonConvexCost { index });
        }
    }
    for (index, d) in net.loads.iter().enumerate() {
        if !bus_ids.contains(&d.bus) {
            v.push(Violation::DanglingLoad { index, bus: d.bus });
        }
        if d.p < 0.0 {
            v.push(Violation::NegativeLoad { index });
        }
    }

    let isolated = net.unreachable_buses();
    if !isolated.is_empty() {
        v.push(Violation::Disconnected { isolated });
    }

    ValidationReport { violations: v }
}

/// Replaces every group of in-service lines sharing the same bus pair with one
/// equivalent line: susceptances add, limits add (unlimited if any member is).
/// The equivalent line keeps the id and orientation of the group's first line.
pub fn merge_parallel_lines(net: &Network) -> Network {
    let key = |l: &Line| (l.from_bus.min(l.to_bus), l.from_bus.max(l.to_bus));
    let mut groups: BTreeMap<(BusId, BusId), Vec<usize>> = BTreeMap::new();
    for (i, l) in net.in_service_lines() {
        groups.entry(key(l)).or_default().push(i);
    }

    let mut lines = Vec::with_capacity(net.lines.len());
    for (i, l) in net.lines.iter().enumerate() {
        if !l.in_service {
            lines.push(l.clone());
            continue;
        }
        let members = &groups[&key(l)];
        if members[0] != i {
            continue;
        }
        if members.len() == 1 {
            lines.push(l.clone());
            continue;
        }
        let susceptance: f64 = members.iter().map(|&k| net.lines[k].susceptance()).sum();
        let limit = members
            .iter()
            .try_fold(0.0, |acc, &k| net.lines[k].limit.map(|f| acc + f));
        lines.push(Line {
            reactance: 1.0 / susceptance,
            limit,
            ..l.clone()
        });
    }

    Network { lines, ..net.clone() }
}

/// Format of a case file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseFormat {
    Matpower,
    NativeJson,
}

/// Parses a case file and enforces the parse-time rules: a slack bus must
/// exist, ids must be unique and reactances positive.
pub fn parse_case(text: &str, format: CaseFormat) -> Result<Network> {
    let net = match format {
        CaseFormat::Matpower => from_matpower(text)?,
        CaseFormat::NativeJson => from_json(text)?,
    };
    check_parsed(&net)?;
    Ok(net)
}

fn check_parsed(net: &Network) -> Result<()> {
    if !net.buses.iter().any(|b| b.is_slack) {
        return Err(Error::Model("missing slack bus".into()));
    }
    if !(net.base_mva > 0.0) {
        return Err(Error::Model("base_mva must be positive".into()));
    }
    let mut ids = BTreeSet::new();
    for b in &net.buses {
        if !ids.insert(b.id) {
            return Err(Error::Model(format!("duplicate bus id {}", b.id)));
        }
    }
    let mut ids = BTreeSet::new();
    for l in &net.lines {
        if !ids.insert(l.id) {
            return Err(Error::Model(format!("duplicate line id {}", l.id)));
        }
        if !(l.reactance > 0.0) {
            return Err(Error::Model(format!("line {} has non-positive reactance", l.id)));
        }
    }
    Ok(())
}
