//! Reader for a subset of the MATPOWER case format.
//!
//! Accepted statements: the `function mpc = name` header, `mpc.version`,
//! `mpc.baseMVA`, and the `mpc.bus`, `mpc.branch`, `mpc.gen`, `mpc.gencost`
//! matrices. Anything else is an error. Shunts, tap ratios, phase shifters
//! and reactive data are either ignored (reactive) or rejected (real-power
//! affecting).

use super::{Bus, CostCurve, Generator, Line, Load, Network};
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Block {
    Bus,
    Branch,
    Gen,
    GenCost,
}

impl Block {
    fn name(self) -> &'static str {
        match self {
            Block::Bus => "mpc.bus",
            Block::Branch => "mpc.branch",
            Block::Gen => "mpc.gen",
            Block::GenCost => "mpc.gencost",
        }
    }

    fn min_columns(self) -> usize {
        match self {
            Block::Bus => 13,
            Block::Branch => 11,
            Block::Gen => 10,
            Block::GenCost => 4,
        }
    }
}

struct Row {
    line: usize,
    values: Vec<f64>,
}

#[derive(Default)]
struct Raw {
    base_mva: Option<f64>,
    bus: Option<Vec<Row>>,
    branch: Option<Vec<Row>>,
    gen: Option<Vec<Row>>,
    gencost: Option<Vec<Row>>,
}

impl Raw {
    fn slot(&mut self, block: Block) -> &mut Option<Vec<Row>> {
        match block {
            Block::Bus => &mut self.bus,
            Block::Branch => &mut self.branch,
            Block::Gen => &mut self.gen,
            Block::GenCost => &mut self.gencost,
        }
    }
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn strip_comment(s: &str) -> &str {
    match s.find('%') {
        Some(i) => &s[..i],
        None => s,
    }
}

/// Splits a matrix body fragment into numbers, reporting 1-based columns.
fn parse_numbers(fragment: &str, offset: usize, line: usize, out: &mut Vec<f64>) -> Result<()> {
    let mut col = offset;
    for tok in fragment.split(|c: char| c.is_whitespace() || c == ',') {
        if !tok.is_empty() {
            let v = match tok {
                "Inf" | "inf" => f64::INFINITY,
                "-Inf" | "-inf" => f64::NEG_INFINITY,
                _ => tok
                    .parse::<f64>()
                    .map_err(|_| syntax(line, col + 1, format!("expected a number, found `{tok}`")))?,
            };
            out.push(v);
        }
        col += tok.len() + 1;
    }
    Ok(())
}

fn scan(text: &str) -> Result<Raw> {
    let mut raw = Raw::default();
    let mut open: Option<(Block, Vec<Row>)> = None;

    for (idx, full) in text.lines().enumerate() {
        let lineno = idx + 1;
        let body = strip_comment(full);
        if body.trim().is_empty() {
            continue;
        }

        let mut rest = body;
        let mut offset = 0usize;

        if open.is_none() {
            let trimmed = body.trim_start();
            let lead = body.len() - trimmed.len();
            if trimmed.starts_with("function") {
                continue;
            }
            let Some(eq) = trimmed.find('=') else {
                return Err(syntax(lineno, lead + 1, "expected an `mpc.<field> = ...` assignment"));
            };
            let lhs = trimmed[..eq].trim();
            let rhs = &trimmed[eq + 1..];
            let rhs_offset = lead + eq + 1;
            let block = match lhs {
                "mpc.version" => continue,
                "mpc.baseMVA" => {
                    let value = rhs.trim().trim_end_matches(';').trim();
                    let v = value
                        .parse::<f64>()
                        .map_err(|_| syntax(lineno, rhs_offset + 1, format!("invalid baseMVA `{value}`")))?;
                    raw.base_mva = Some(v);
                    continue;
                }
                "mpc.bus" => Block::Bus,
                "mpc.branch" => Block::Branch,
                "mpc.gen" => Block::Gen,
                "mpc.gencost" => Block::GenCost,
                other => {
                    return Err(syntax(lineno, lead + 1, format!("unsupported statement `{other}`")));
                }
            };
            let Some(bracket) = rhs.find('[') else {
                return Err(syntax(
                    lineno,
                    rhs_offset + 1,
                    format!("expected `[` after {}", block.name()),
                ));
            };
            if raw.slot(block).is_some() {
                return Err(syntax(lineno, lead + 1, format!("{} defined twice", block.name())));
            }
            rest = &rhs[bracket + 1..];
            offset = rhs_offset + bracket + 1;
            open = Some((block, Vec::new()));
        }

        let (block, rows) = open.as_mut().expect("inside a matrix");
        let (content, closes) = match rest.find(']') {
            Some(i) => {
                let tail = rest[i + 1..].trim();
                if !(tail.is_empty() || tail == ";") {
                    return Err(syntax(lineno, offset + i + 2, "unexpected text after `]`"));
                }
                (&rest[..i], true)
            }
            None => (rest, false),
        };
        // A physical line may hold several `;`-terminated rows.
        let mut local = offset;
        for piece in content.split(';') {
            let mut values = Vec::new();
            parse_numbers(piece, local, lineno, &mut values)?;
            local += piece.len() + 1;
            if values.is_empty() {
                continue;
            }
            if values.len() < block.min_columns() {
                return Err(syntax(
                    lineno,
                    offset + 1,
                    format!(
                        "{} row needs at least {} columns, found {}",
                        block.name(),
                        block.min_columns(),
                        values.len()
                    ),
                ));
            }
            rows.push(Row { line: lineno, values });
        }
        if closes {
            let (block, rows) = open.take().expect("inside a matrix");
            *raw.slot(block) = Some(rows);
        }
    }

    if let Some((block, _)) = open {
        return Err(syntax(
            text.lines().count().max(1),
            1,
            format!("unterminated {} matrix", block.name()),
        ));
    }
    Ok(raw)
}

fn as_id(v: f64, line: usize, what: &str) -> Result<u32> {
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(syntax(
            line,
            1,
            format!("{what} must be a non-negative integer, found {v}"),
        ));
    }
    Ok(v as u32)
}

pub fn from_matpower(text: &str) -> Result<Network> {
    let raw = scan(text)?;
    let base = raw.base_mva.ok_or_else(|| Error::Model("missing mpc.baseMVA".into()))?;
    let bus_rows = raw.bus.ok_or_else(|| Error::Model("missing mpc.bus".into()))?;
    let branch_rows = raw.branch.ok_or_else(|| Error::Model("missing mpc.branch".into()))?;
    let gen_rows = raw.gen.unwrap_or_default();
    let cost_rows = raw.gencost.unwrap_or_default();

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut loads = Vec::new();
    for row in &bus_rows {
        let v = &row.values;
        let id = as_id(v[0], row.line, "bus id")?;
        let kind = v[1];
        if ![1.0, 2.0, 3.0].contains(&kind) {
            return Err(syntax(row.line, 1, format!("bus {id}: unsupported bus type {kind}")));
        }
        if v[4] != 0.0 {
            return Err(syntax(
                row.line,
                1,
                format!("bus {id}: shunt conductance is not supported"),
            ));
        }
        buses.push(Bus {
            id,
            is_slack: kind == 3.0,
        });
        if v[2] != 0.0 {
            loads.push(Load {
                bus: id,
                p: v[2] / base,
            });
        }
    }

    let mut lines = Vec::with_capacity(branch_rows.len());
    for (k, row) in branch_rows.iter().enumerate() {
        let v = &row.values;
        let id = k as u32 + 1;
        let ratio = v[8];
        if ratio != 0.0 && ratio != 1.0 {
            return Err(syntax(
                row.line,
                1,
                format!("branch {id}: off-nominal tap ratio is not supported"),
            ));
        }
        if v[9] != 0.0 {
            return Err(syntax(
                row.line,
                1,
                format!("branch {id}: phase shift is not supported"),
            ));
        }
        if !(v[3] > 0.0) {
            return Err(Error::Model(format!(
                "line {id} (input line {}) has non-positive reactance",
                row.line
            )));
        }
        lines.push(Line {
            id,
            from_bus: as_id(v[0], row.line, "from bus")?,
            to_bus: as_id(v[1], row.line, "to bus")?,
            reactance: v[3],
            limit: if v[5] == 0.0 { None } else { Some(v[5] / base) },
            in_service: v[10] > 0.0,
        });
    }

    if !cost_rows.is_empty() && cost_rows.len() != gen_rows.len() {
        return Err(Error::Model(format!(
            "mpc.gencost has {} rows but mpc.gen has {}",
            cost_rows.len(),
            gen_rows.len()
        )));
    }
    let mut generators = Vec::new();
    for (k, row) in gen_rows.iter().enumerate() {
        let v = &row.values;
        if v[7] <= 0.0 {
            continue;
        }
        let cost = match cost_rows.get(k) {
            None => CostCurve::default(),
            Some(c) => parse_cost(c)?,
        };
        generators.push(Generator {
            bus: as_id(v[0], row.line, "generator bus")?,
            p_min: v[9] / base,
            p_max: v[8] / base,
            cost,
        });
    }

    Ok(Network {
        base_mva: base,
        buses,
        lines,
        generators,
        loads,
    })
}

fn parse_cost(row: &Row) -> Result<CostCurve> {
    let v = &row.values;
    if v[0] != 2.0 {
        return Err(syntax(row.line, 1, "only polynomial cost model 2 is supported"));
    }
    let n = v[3];
    if !(n == 1.0 || n == 2.0 || n == 3.0) {
        return Err(syntax(
            row.line,
            1,
            format!("cost polynomial with {n} coefficients is not supported"),
        ));
    }
    let n = n as usize;
    if v.len() < 4 + n {
        return Err(syntax(row.line, 1, "gencost row is missing coefficients"));
    }
    // Coefficients are listed highest order first.
    let coeffs = &v[4..4 + n];
    let term = |order: usize| if order < n { coeffs[n - 1 - order] } else { 0.0 };
    Ok(CostCurve {
        constant: term(0),
        linear: term(1),
        quadratic: term(2),
    })
}
