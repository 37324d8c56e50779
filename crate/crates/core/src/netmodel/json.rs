//! Native JSON case format. Values on disk are in MW; see the module docs of
//! [`crate::netmodel`] for the per-unit boundary.

use serde::{Deserialize, Serialize};

use super::{Bus, CostCurve, Generator, Line, Load, Network};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    base_mva: f64,
    buses: Vec<BusRecord>,
    lines: Vec<LineRecord>,
    #[serde(default)]
    generators: Vec<GeneratorRecord>,
    #[serde(default)]
    loads: Vec<LoadRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusRecord {
    id: u32,
    #[serde(default)]
    is_slack: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineRecord {
    id: u32,
    from_bus: u32,
    to_bus: u32,
    reactance: f64,
    limit: LimitRecord,
    #[serde(default = "default_true")]
    in_service: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LimitRecord {
    Mw(f64),
    Keyword(Unlimited),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Unlimited {
    Unlimited,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorRecord {
    bus: u32,
    p_min: f64,
    p_max: f64,
    /// `[constant, linear, quadratic]`; trailing terms may be omitted.
    cost: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadRecord {
    bus: u32,
    p: f64,
}

fn default_true() -> bool {
    true
}

pub fn from_json(text: &str) -> Result<Network> {
    let case: CaseFile = serde_json::from_str(text).map_err(|e| Error::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let base = case.base_mva;
    let lines = case
        .lines
        .into_iter()
        .map(|l| Line {
            id: l.id,
            from_bus: l.from_bus,
            to_bus: l.to_bus,
            reactance: l.reactance,
            limit: match l.limit {
                LimitRecord::Mw(f) => Some(f / base),
                LimitRecord::Keyword(Unlimited::Unlimited) => None,
            },
            in_service: l.in_service,
        })
        .collect();
    let generators = case
        .generators
        .into_iter()
        .map(|g| {
            if g.cost.len() > 3 {
                return Err(Error::Model(format!(
                    "generator at bus {}: cost polynomial has more than 3 coefficients",
                    g.bus
                )));
            }
            let c = |i: usize| g.cost.get(i).copied().unwrap_or(0.0);
            Ok(Generator {
                bus: g.bus,
                p_min: g.p_min / base,
                p_max: g.p_max / base,
                cost: CostCurve {
                    constant: c(0),
                    linear: c(1),
                    quadratic: c(2),
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok(Network {
        base_mva: base,
        buses: case
            .buses
            .into_iter()
            .map(|b| Bus {
                id: b.id,
                is_slack: b.is_slack,
            })
            .collect(),
        lines,
        generators,
        loads: case
            .loads
            .into_iter()
            .map(|d| Load {
                bus: d.bus,
                p: d.p / base,
            })
            .collect(),
    })
}

/// Serializes to the native format (pretty-printed, MW units).
pub fn to_json(net: &Network) -> String {
    let base = net.base_mva;
    let case = CaseFile {
        base_mva: base,
        buses: net
            .buses
            .iter()
            .map(|b| BusRecord {
                id: b.id,
                is_slack: b.is_slack,
            })
            .collect(),
        lines: net
            .lines
            .iter()
            .map(|l| LineRecord {
                id: l.id,
                from_bus: l.from_bus,
                to_bus: l.to_bus,
                reactance: l.reactance,
                limit: match l.limit {
                    Some(f) => LimitRecord::Mw(f * base),
                    None => LimitRecord::Keyword(Unlimited::Unlimited),
                },
                in_service: l.in_service,
            })
            .collect(),
        generators: net
            .generators
            .iter()
            .map(|g| GeneratorRecord {
                bus: g.bus,
                p_min: g.p_min * base,
                p_max: g.p_max * base,
                cost: vec![g.cost.constant, g.cost.linear, g.cost.quadratic],
            })
            .collect(),
        loads: net
            .loads
            .iter()
            .map(|d| LoadRecord {
                bus: d.bus,
                p: d.p * base,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&case).expect("case serialization is infallible")
}
