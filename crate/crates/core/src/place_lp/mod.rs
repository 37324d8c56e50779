//! Placement by minimum control effort.
//!
//! With `k` HVDC links, `k` line flows can be set independently. For each
//! candidate link (added to the existing ones) and each set of `k` target
//! lines, an LP finds the smallest total setpoint magnitude `Σ|P_DC|` that
//! moves every target flow by its prescribed `ΔP_L`. Candidates are ranked by
//! the sum of these efforts over all target sets.

pub mod simplex;

use rayon::prelude::*;
use serde::Serialize;

use crate::dcsens::{cv_matrix, NodePair, PtdfMatrix};
use crate::error::{Error, Result};
use crate::netmodel::{LineId, Network};
use simplex::{solve_lp, LpOutcome, LpProblem};

pub use simplex::{LpError, LpSolution};

/// How the requested flow change `ΔP_L(i)` of each target line is chosen (MW).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum DeltaStrategy {
    /// Same change on every line.
    Constant(f64),
    /// Fraction of the line's flow limit.
    ProportionalLimit(f64),
    /// Scale times the line reactance in per-unit.
    ProportionalReactance(f64),
}

impl DeltaStrategy {
    pub const DEFAULT_CONSTANT: DeltaStrategy = DeltaStrategy::Constant(100.0);
    pub const DEFAULT_LIMIT: DeltaStrategy = DeltaStrategy::ProportionalLimit(0.1);
    pub const DEFAULT_REACTANCE: DeltaStrategy = DeltaStrategy::ProportionalReactance(1000.0);

    fn parameter(self) -> f64 {
        match self {
            DeltaStrategy::Constant(v)
            | DeltaStrategy::ProportionalLimit(v)
            | DeltaStrategy::ProportionalReactance(v) => v,
        }
    }

    /// `ΔP_L` in MW for every line of `net`, in line order.
    pub fn deltas(self, net: &Network) -> Result<Vec<f64>> {
        let a = self.parameter();
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "strategy parameter must be positive, got {a}"
            )));
        }
        net.lines
            .iter()
            .map(|l| match self {
                DeltaStrategy::Constant(v) => Ok(v),
                DeltaStrategy::ProportionalLimit(f) => l.limit.map(|lim| f * lim * net.base_mva).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "line {} is unlimited; a limit-proportional change is undefined",
                        l.id
                    ))
                }),
                DeltaStrategy::ProportionalReactance(s) => Ok(s * l.reactance),
            })
            .collect()
    }
}

/// Outcome of one control-effort LP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Effort {
    /// Minimum `Σ|P_DC|` in MW.
    Feasible(f64),
    Infeasible,
}

/// Aggregate over all target sets of one candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EffortResult {
    /// Sum of optimal efforts over feasible target sets, MW.
    pub total_effort: f64,
    pub infeasible_sets: usize,
    pub lp_count: usize,
}

impl EffortResult {
    pub fn all_infeasible(&self) -> bool {
        self.infeasible_sets == self.lp_count
    }
}

/// Builds and solves the effort LP for a CV submatrix already restricted to
/// the target rows (`cv_rows[i][j]`: target i, controller j).
fn effort_lp(cv_rows: &[Vec<f64>], delta: &[f64], p_dc_max: Option<f64>) -> Result<Effort> {
    let k = delta.len();
    // Variables: P (k) | t (k) | s⁺ (k) | s⁻ (k).
    let n = 4 * k;
    let mut lp = LpProblem::new(n);
    lp.eq_matrix = nalgebra::DMatrix::zeros(3 * k, n);
    lp.eq_rhs = vec![0.0; 3 * k];
    for j in 0..k {
        lp.objective[k + j] = 1.0;
        let bound = p_dc_max.unwrap_or(f64::INFINITY);
        lp.lower[j] = -bound;
        lp.upper[j] = bound;
    }
    for (i, row) in cv_rows.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            lp.eq_matrix[(i, j)] = c;
        }
        lp.eq_rhs[i] = delta[i];
    }
    for j in 0..k {
        // P - t + s⁺ = 0  and  -P - t + s⁻ = 0
        let r1 = k + j;
        let r2 = 2 * k + j;
        lp.eq_matrix[(r1, j)] = 1.0;
        lp.eq_matrix[(r1, k + j)] = -1.0;
        lp.eq_matrix[(r1, 2 * k + j)] = 1.0;
        lp.eq_matrix[(r2, j)] = -1.0;
        lp.eq_matrix[(r2, k + j)] = -1.0;
        lp.eq_matrix[(r2, 3 * k + j)] = 1.0;
    }
    match solve_lp(&lp)? {
        LpOutcome::Optimal(sol) => Ok(Effort::Feasible(sol.objective)),
        LpOutcome::Infeasible => Ok(Effort::Infeasible),
        LpOutcome::Unbounded => Err(Error::Lp(LpError::Malformed(
            "control-effort LP reported unbounded".into(),
        ))),
    }
}

/// Minimum control effort for HVDC links `placements` to change the flows of
/// `targets` by the strategy's `ΔP_L` (all with positive sign).
pub fn control_effort(
    net: &Network,
    ptdf: &PtdfMatrix,
    placements: &[NodePair],
    targets: &[LineId],
    strategy: DeltaStrategy,
    p_dc_max: Option<f64>,
) -> Result<Effort> {
    if targets.len() != placements.len() {
        return Err(Error::InvalidArgument(format!(
            "{} controllers can set exactly {} line flows, got {} targets",
            placements.len(),
            placements.len(),
            targets.len()
        )));
    }
    let mut rows = Vec::with_capacity(targets.len());
    for (i, &t) in targets.iter().enumerate() {
        if targets[..i].contains(&t) {
            return Err(Error::InvalidArgument(format!("target line {t} listed twice")));
        }
        rows.push(ptdf.line_index(t)?);
    }
    check_pdc_max(p_dc_max)?;
    let deltas = strategy.deltas(net)?;
    let cvs = cv_matrix(ptdf, placements)?;
    let cv_rows: Vec<Vec<f64>> = rows.iter().map(|&r| cvs.row(r).iter().copied().collect()).collect();
    let delta: Vec<f64> = rows.iter().map(|&r| deltas[r]).collect();
    effort_lp(&cv_rows, &delta, p_dc_max)
}

fn check_pdc_max(p_dc_max: Option<f64>) -> Result<()> {
    match p_dc_max {
        Some(p) if !(p > 0.0) => Err(Error::InvalidArgument(format!("p_dc_max must be positive, got {p}"))),
        _ => Ok(()),
    }
}

/// Lexicographic `k`-subsets of `0..n`.
pub(crate) fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// One candidate of a placement step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LpCandidate {
    pub pair: NodePair,
    pub result: EffortResult,
    /// Effort relative to the worst candidate, percent.
    pub relative_percent: f64,
}

/// Ranked candidates of one placement step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LpRanking {
    /// Number of controllers after this step.
    pub k: usize,
    pub candidates: Vec<LpCandidate>,
    /// Total LPs solved in this step.
    pub lp_count: usize,
}

impl LpRanking {
    /// Best candidate that is not already placed and has a feasible target set.
    pub fn best_new(&self, existing: &[NodePair]) -> Option<NodePair> {
        self.candidates
            .iter()
            .find(|c| !c.result.all_infeasible() && !existing.iter().any(|e| e.canonical() == c.pair.canonical()))
            .map(|c| c.pair)
    }
}

/// Scores every node pair as the next controller after `existing`.
pub fn place_lp_next(
    net: &Network,
    ptdf: &PtdfMatrix,
    existing: &[NodePair],
    strategy: DeltaStrategy,
    p_dc_max: Option<f64>,
) -> Result<LpRanking> {
    check_pdc_max(p_dc_max)?;
    let deltas = strategy.deltas(net)?;
    let k = existing.len() + 1;
    let lines: Vec<usize> = net.in_service_lines().map(|(i, _)| i).collect();
    let sets = combinations(lines.len(), k);
    let existing_cv = cv_matrix(ptdf, existing)?;

    let scored: Vec<Result<(NodePair, EffortResult)>> = ptdf
        .pairs()
        .into_par_iter()
        .map(|pair| {
            let cand = cv_matrix(ptdf, &[pair])?;
            let mut result = EffortResult {
                total_effort: 0.0,
                infeasible_sets: 0,
                lp_count: 0,
            };
            let mut rows = vec![vec![0.0; k]; k];
            let mut delta = vec![0.0; k];
            for set in &sets {
                for (i, &s) in set.iter().enumerate() {
                    let line = lines[s];
                    for j in 0..k - 1 {
                        rows[i][j] = existing_cv[(line, j)];
                    }
                    rows[i][k - 1] = cand[(line, 0)];
                    delta[i] = deltas[line];
                }
                result.lp_count += 1;
                match effort_lp(&rows, &delta, p_dc_max)? {
                    Effort::Feasible(e) => result.total_effort += e,
                    Effort::Infeasible => result.infeasible_sets += 1,
                }
            }
            Ok((pair, result))
        })
        .collect();
    let scored: Vec<(NodePair, EffortResult)> = scored.into_iter().collect::<Result<_>>()?;

    let worst = scored
        .iter()
        .filter(|(_, r)| !r.all_infeasible())
        .map(|(_, r)| r.total_effort)
        .fold(0.0, f64::max);
    let mut candidates: Vec<LpCandidate> = scored
        .into_iter()
        .map(|(pair, result)| LpCandidate {
            pair,
            result,
            relative_percent: if worst > 0.0 {
                100.0 * result.total_effort / worst
            } else {
                0.0
            },
        })
        .collect();
    candidates.sort_by(|a, b| {
        a.result
            .all_infeasible()
            .cmp(&b.result.all_infeasible())
            .then(a.result.total_effort.total_cmp(&b.result.total_effort))
            .then(a.pair.cmp(&b.pair))
    });
    let lp_count = candidates.iter().map(|c| c.result.lp_count).sum();
    Ok(LpRanking {
        k,
        candidates,
        lp_count,
    })
}

/// Greedy placement of `count` controllers; returns the chosen pairs and the
/// ranking of every step.
pub fn place_lp_sequence(
    net: &Network,
    ptdf: &PtdfMatrix,
    count: usize,
    strategy: DeltaStrategy,
    p_dc_max: Option<f64>,
) -> Result<(Vec<NodePair>, Vec<LpRanking>)> {
    let mut chosen = Vec::with_capacity(count);
    let mut steps = Vec::with_capacity(count);
    for _ in 0..count {
        let ranking = place_lp_next(net, ptdf, &chosen, strategy, p_dc_max)?;
        let next = ranking.best_new(&chosen).ok_or_else(|| {
            Error::Infeasible(format!(
                "no candidate pair can add a controllable line at step {}",
                chosen.len() + 1
            ))
        })?;
        chosen.push(next);
        steps.push(ranking);
    }
    Ok((chosen, steps))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub step: usize,
    pub cv_pair: Option<NodePair>,
    pub lp_pair: Option<NodePair>,
    pub agree: bool,
}

/// Side-by-side placements of the two algorithms; orientation is ignored.
pub fn compare_placements(cv_result: &[NodePair], lp_result: &[NodePair]) -> Vec<ComparisonRow> {
    let steps = cv_result.len().max(lp_result.len());
    (0..steps)
        .map(|i| {
            let cv_pair = cv_result.get(i).copied();
            let lp_pair = lp_result.get(i).copied();
            let agree = match (cv_pair, lp_pair) {
                (Some(a), Some(b)) => a.canonical() == b.canonical(),
                _ => false,
            };
            ComparisonRow {
                step: i + 1,
                cv_pair,
                lp_pair,
                agree,
            }
        })
        .collect()
}
