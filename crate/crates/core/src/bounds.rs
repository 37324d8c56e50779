//! Controller-count bounds and the nodal-balance system `P_B = A P_L`.
//!
//! With injections given, the `n_B` balance equations have rank `n_B - 1` on
//! a connected network, so at most `n_L - n_B + 1` line flows can be chosen
//! freely (series controllers). HVDC links in parallel act through the
//! controllability vectors, whose span is the PTDF column space of rank
//! `n_B - 1` (parallel controllers).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dcsens::{self, cv_matrix, InjectionProfile, NodePair, PtdfMatrix};
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, RANK_RTOL};
use crate::netmodel::{merge_parallel_lines, LineId, Network};

/// Residual (per-unit) above which fixed flows are declared inconsistent.
const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BoundsReport {
    pub series_bound: usize,
    pub parallel_bound: usize,
    pub ptdf_rank: usize,
}

/// Series and parallel controller bounds on the merged, in-service topology.
pub fn bounds(net: &Network) -> Result<BoundsReport> {
    let merged = merge_parallel_lines(net);
    let isolated = merged.unreachable_buses();
    if !isolated.is_empty() {
        return Err(Error::Model(format!(
            "network is disconnected (unreachable buses: {isolated:?})"
        )));
    }
    let n_b = merged.n_buses();
    let n_l = merged.in_service_lines().count();
    let p = dcsens::ptdf(&merged)?;
    Ok(BoundsReport {
        // A connected graph has at least n_B - 1 edges.
        series_bound: n_l + 1 - n_b,
        parallel_bound: n_b - 1,
        ptdf_rank: numerical_rank(&p.values),
    })
}

/// Signed node-line incidence matrix of the balance equations.
#[derive(Clone, Debug)]
pub struct IncidenceSystem {
    /// n_B x n_L over in-service lines: `+1` at the from bus, `-1` at the to bus.
    pub a: DMatrix<f64>,
    pub p_b: DVector<f64>,
    /// Line id of each column of `a`.
    pub line_ids: Vec<LineId>,
}

impl IncidenceSystem {
    pub fn build(net: &Network, inj: &InjectionProfile) -> Result<Self> {
        if inj.len() != net.n_buses() {
            return Err(Error::Dimension {
                what: "injection profile",
                expected: net.n_buses(),
                found: inj.len(),
            });
        }
        let ends = net.line_ends()?;
        let cols: Vec<usize> = net.in_service_lines().map(|(k, _)| k).collect();
        let mut a = DMatrix::zeros(net.n_buses(), cols.len());
        for (c, &k) in cols.iter().enumerate() {
            let (f, t) = ends[k];
            a[(f, c)] = 1.0;
            a[(t, c)] = -1.0;
        }
        Ok(IncidenceSystem {
            a,
            p_b: inj.values().clone(),
            line_ids: cols.iter().map(|&k| net.lines[k].id).collect(),
        })
    }
}

/// Classification of the balance system once some flows are fixed.
#[derive(Clone, Debug, PartialEq)]
pub enum FixedFlowSolution {
    /// Flows of every in-service line (fixed ones included), per-unit, keyed by line id.
    Unique(BTreeMap<LineId, f64>),
    Underdetermined {
        freedom: usize,
    },
    Inconsistent,
}

/// Moves the `fixed` flows (per-unit) to the right-hand side of `A P_L = P_B`
/// and classifies the remaining system by rank.
pub fn solve_fixed_flows(
    net: &Network,
    inj: &InjectionProfile,
    fixed: &BTreeMap<LineId, f64>,
) -> Result<FixedFlowSolution> {
    let sys = IncidenceSystem::build(net, inj)?;
    let mut fixed_cols = Vec::new();
    for &id in fixed.keys() {
        let col = sys
            .line_ids
            .iter()
            .position(|&l| l == id)
            .ok_or(Error::UnknownLine(id))?;
        fixed_cols.push(col);
    }
    let free_cols: Vec<usize> = (0..sys.line_ids.len()).filter(|c| !fixed_cols.contains(c)).collect();

    let mut rhs = sys.p_b.clone();
    for (&c, &value) in fixed_cols.iter().zip(fixed.values()) {
        rhs -= sys.a.column(c) * value;
    }
    let a_free = sys.a.select_columns(&free_cols);

    let (x, rank) = least_squares(&a_free, &rhs);
    let residual = (&a_free * &x - &rhs).amax();
    if residual > CONSISTENCY_TOL {
        return Ok(FixedFlowSolution::Inconsistent);
    }
    if rank < free_cols.len() {
        return Ok(FixedFlowSolution::Underdetermined {
            freedom: free_cols.len() - rank,
        });
    }
    let mut flows = BTreeMap::new();
    for (&c, &v) in free_cols.iter().zip(x.iter()) {
        flows.insert(sys.line_ids[c], v);
    }
    for (&id, &v) in fixed {
        flows.insert(id, v);
    }
    Ok(FixedFlowSolution::Unique(flows))
}

/// Minimum-norm least-squares solution and numerical rank via SVD.
fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize) {
    if a.ncols() == 0 {
        return (DVector::zeros(0), 0);
    }
    let svd = a.clone().svd(true, true);
    let largest = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = RANK_RTOL * largest;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let x = svd.solve(b, eps.max(f64::MIN_POSITIVE)).expect("U and V were computed");
    (x, rank)
}

/// Rank of the stacked controllability vectors of `placements`.
pub fn controllability_rank(placements: &[NodePair], ptdf: &PtdfMatrix) -> Result<usize> {
    if placements.is_empty() {
        return Err(Error::InvalidArgument("no placements given".into()));
    }
    Ok(numerical_rank(&cv_matrix(ptdf, placements)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcsens::{dc_flow, ptdf};
    use crate::netmodel::tests::{line, triangle};
    use crate::netmodel::Bus;

    #[test]
    fn triangle_bounds() {
        let report = bounds(&triangle()).unwrap();
        assert_eq!(
            report,
            BoundsReport {
                series_bound: 1,
                parallel_bound: 2,
                ptdf_rank: 2
            }
        );
    }

    #[test]
    fn spanning_tree_has_no_series_freedom() {
        let mut net = triangle();
        net.lines.pop();
        assert_eq!(bounds(&net).unwrap().series_bound, 0);
    }

    #[test]
    fn parallel_lines_are_merged_before_counting() {
        let mut net = triangle();
        net.lines.push(line(4, 2, 1, 0.5));
        assert_eq!(bounds(&net).unwrap().series_bound, 1);
    }

    #[test]
    fn disconnected_is_an_error() {
        let mut net = triangle();
        net.buses.push(Bus { id: 4, is_slack: false });
        assert!(bounds(&net).is_err());
    }

    #[test]
    fn incidence_columns_sum_to_zero() {
        let net = triangle();
        let sys = IncidenceSystem::build(&net, &InjectionProfile::zeros(3)).unwrap();
        for c in 0..sys.a.ncols() {
            assert_eq!(sys.a.column(c).iter().filter(|&&v| v != 0.0).count(), 2);
            assert_eq!(sys.a.column(c).sum(), 0.0);
        }
        assert_eq!(numerical_rank(&sys.a), 2);
    }

    #[test]
    fn triangle_fix_one_line() {
        let net = triangle();
        let inj = InjectionProfile::new(vec![-1.0, 1.0, 0.0]).unwrap();
        let flows = dc_flow(&net, &inj).unwrap();
        let fixed = BTreeMap::from([(2, flows[1])]);
        match solve_fixed_flows(&net, &inj, &fixed).unwrap() {
            FixedFlowSolution::Unique(sol) => {
                for (k, l) in net.lines.iter().enumerate() {
                    assert!((sol[&l.id] - flows[k]).abs() < 1e-12);
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn triangle_fix_nothing() {
        let net = triangle();
        let inj = InjectionProfile::new(vec![-1.0, 1.0, 0.0]).unwrap();
        assert_eq!(
            solve_fixed_flows(&net, &inj, &BTreeMap::new()).unwrap(),
            FixedFlowSolution::Underdetermined { freedom: 1 }
        );
    }

    #[test]
    fn inconsistent_fixed_values() {
        let net = triangle();
        let inj = InjectionProfile::new(vec![-1.0, 1.0, 0.0]).unwrap();
        // Bus 3 has no injection, so lines 2 (2->3) and 3 (1->3) must cancel.
        let fixed = BTreeMap::from([(1, 0.0), (2, 0.5), (3, 0.5)]);
        assert_eq!(
            solve_fixed_flows(&net, &inj, &fixed).unwrap(),
            FixedFlowSolution::Inconsistent
        );
    }

    #[test]
    fn controllability_rank_cases() {
        let p = ptdf(&triangle()).unwrap();
        let a = NodePair::new(1, 2);
        assert_eq!(controllability_rank(&[a], &p).unwrap(), 1);
        assert_eq!(controllability_rank(&[a, a], &p).unwrap(), 1);
        assert_eq!(controllability_rank(&p.pairs(), &p).unwrap(), 2);
        assert!(controllability_rank(&[], &p).is_err());
    }
}
