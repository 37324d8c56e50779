mod common;

use common::{angle_flows, fixture, FIXTURES};
use gridctrl::dcsens::{cv, ptdf, NodePair, PtdfMatrix};
use gridctrl::place_cv::{
    first_placement, metric_correlation, orthant_volume_sum, place_cv_sequence, rank_by_norm1, VolumeScore,
};
use gridctrl::place_lp::{compare_placements, control_effort, place_lp_next, place_lp_sequence, DeltaStrategy, Effort};
use nalgebra::{DMatrix, DVector};

/// Flow change per unit transfer from an independent angle solve.
fn cv_oracle(net: &gridctrl::netmodel::Network, pair: NodePair) -> Vec<f64> {
    let mut p = vec![0.0; net.n_buses()];
    p[net.bus_position(pair.m).unwrap()] = 1.0;
    p[net.bus_position(pair.n).unwrap()] = -1.0;
    angle_flows(net, &p)
}

fn log_volume(v: &[f64]) -> (usize, f64) {
    let nz: Vec<f64> = v.iter().map(|x| x.abs()).filter(|&x| x > 1e-9).collect();
    (nz.len(), nz.iter().map(|x| x.ln()).sum())
}

#[test]
fn first_pick_is_exhaustive_argmax() {
    for name in FIXTURES {
        let net = fixture(name);
        let p = ptdf(&net).unwrap();
        let mut best: Option<(NodePair, (usize, f64))> = None;
        for pair in p.pairs() {
            let score = log_volume(&cv_oracle(&net, pair));
            let better = match &best {
                None => true,
                Some((_, b)) => score.0 > b.0 || (score.0 == b.0 && score.1 > b.1 + 1e-12),
            };
            if better {
                best = Some((pair, score));
            }
        }
        let (chosen, _) = place_cv_sequence(&p, 1, 0.2, 10).unwrap();
        assert_eq!(chosen[0], best.unwrap().0, "{name}");
    }
}

/// `cosφ` through a least-squares projection onto the selected vectors.
fn cosphi(selected: &[DVector<f64>], v: &DVector<f64>) -> f64 {
    let a = DMatrix::from_columns(selected);
    let coef = a.clone().svd(true, true).solve(v, 1e-12).unwrap();
    let proj = a * coef;
    proj.norm() / v.norm()
}

#[test]
fn second_pick_maximizes_orthant_volume_over_filtered_set() {
    for name in ["fixture10.json", "ieee14.m"] {
        let net = fixture(name);
        let p = ptdf(&net).unwrap();
        let (chosen, _) = place_cv_sequence(&p, 2, 0.2, 10).unwrap();
        let first = cv(&p, chosen[0].m, chosen[0].n).unwrap().values;
        let mut pool: Vec<(NodePair, f64)> = p
            .pairs()
            .into_iter()
            .filter(|&q| q != chosen[0])
            .map(|q| {
                (
                    q,
                    cosphi(std::slice::from_ref(&first), &cv(&p, q.m, q.n).unwrap().values),
                )
            })
            .filter(|(_, c)| *c < 1.0 - 1e-8)
            .collect();
        pool.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut eligible: Vec<_> = pool.iter().filter(|(_, c)| *c <= 0.2).cloned().collect();
        if eligible.is_empty() {
            eligible = pool.clone();
        }
        eligible.truncate(10);
        let scores: Vec<(NodePair, VolumeScore)> = eligible
            .iter()
            .map(|&(q, _)| {
                (
                    q,
                    orthant_volume_sum(std::slice::from_ref(&first), &cv(&p, q.m, q.n).unwrap().values, 1e-9),
                )
            })
            .collect();
        let top = scores
            .iter()
            .max_by(|a, b| a.1.cmp_score(&b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        assert_eq!(chosen[1], top.0, "{name}");
    }
}

#[test]
fn cv_sequence_stops_at_full_rank() {
    let net = fixture("fixture10.json");
    let p = ptdf(&net).unwrap();
    let (chosen, steps) = place_cv_sequence(&p, 9, 0.2, 10).unwrap();
    assert_eq!(chosen.len(), 9);
    assert_eq!(steps.len(), 9);
    assert_eq!(gridctrl::bounds::controllability_rank(&chosen, &p).unwrap(), 9);
    assert!(place_cv_sequence(&p, 10, 0.2, 10).is_err());
}

#[test]
fn volume_and_norm_rankings_correlate() {
    let net = fixture("fixture10.json");
    let p = ptdf(&net).unwrap();
    let rho = metric_correlation(&p).unwrap();
    assert!(rho > 0.5, "spearman {rho}");
    assert_eq!(first_placement(&p).unwrap().len(), 45);
    assert_eq!(rank_by_norm1(&p).unwrap().len(), 45);
}

fn all_lines(p: &PtdfMatrix) -> Vec<u32> {
    p.line_ids.clone()
}

#[test]
fn single_controller_effort_is_closed_form() {
    let net = fixture("fixture10.json");
    let p = ptdf(&net).unwrap();
    let deltas = DeltaStrategy::DEFAULT_LIMIT.deltas(&net).unwrap();
    for pair in p.pairs() {
        let v = cv_oracle(&net, pair);
        for (l, &id) in all_lines(&p).iter().enumerate() {
            let got = control_effort(&net, &p, &[pair], &[id], DeltaStrategy::DEFAULT_LIMIT, None).unwrap();
            if v[l].abs() < 1e-12 {
                assert_eq!(got, Effort::Infeasible);
            } else {
                let Effort::Feasible(e) = got else {
                    panic!("{pair} line {id}")
                };
                assert!((e - deltas[l] / v[l].abs()).abs() < 1e-7 * e.max(1.0));
            }
        }
    }
}

#[test]
fn two_controller_effort_is_linear_solve() {
    let net = fixture("fixture10.json");
    let p = ptdf(&net).unwrap();
    let deltas = DeltaStrategy::DEFAULT_REACTANCE.deltas(&net).unwrap();
    let pairs = [NodePair::new(1, 7), NodePair::new(4, 8)];
    let (a, b) = (cv_oracle(&net, pairs[0]), cv_oracle(&net, pairs[1]));
    for i in 0..net.n_lines() {
        for j in i + 1..net.n_lines() {
            let m = nalgebra::Matrix2::new(a[i], b[i], a[j], b[j]);
            let ids = [p.line_ids[i], p.line_ids[j]];
            let got = control_effort(&net, &p, &pairs, &ids, DeltaStrategy::DEFAULT_REACTANCE, None).unwrap();
            if m.determinant().abs() < 1e-9 {
                continue;
            }
            let x = m.lu().solve(&nalgebra::Vector2::new(deltas[i], deltas[j])).unwrap();
            let Effort::Feasible(e) = got else {
                panic!("lines {ids:?}")
            };
            assert!((e - x.abs().sum()).abs() < 1e-7 * e.max(1.0));
        }
    }
}

#[test]
fn duplicate_link_makes_every_pair_of_targets_infeasible() {
    let net = fixture("fixture10.json");
    let p = ptdf(&net).unwrap();
    let ids = all_lines(&p);
    for strategy in [DeltaStrategy::DEFAULT_LIMIT, DeltaStrategy::DEFAULT_REACTANCE] {
        for pair in p.pairs() {
            for i in 0..ids.len() {
                for j in i + 1..ids.len() {
                    let got = control_effort(&net, &p, &[pair, pair], &[ids[i], ids[j]], strategy, None).unwrap();
                    assert_eq!(got, Effort::Infeasible, "{pair} lines {} {}", ids[i], ids[j]);
                }
            }
        }
    }
}

#[test]
fn effort_scales_with_the_requested_change() {
    let net = fixture("fixture10.json");
    let p = ptdf(&net).unwrap();
    let pairs = [NodePair::new(2, 9), NodePair::new(5, 10)];
    let a = control_effort(&net, &p, &pairs, &[3, 11], DeltaStrategy::Constant(100.0), None).unwrap();
    let b = control_effort(&net, &p, &pairs, &[3, 11], DeltaStrategy::Constant(250.0), None).unwrap();
    match (a, b) {
        (Effort::Feasible(x), Effort::Feasible(y)) => assert!((y - 2.5 * x).abs() < 1e-7 * y),
        other => panic!("{other:?}"),
    }
}

#[test]
fn setpoint_bound_can_make_targets_unreachable() {
    let net = fixture("fixture10.json");
    let p = ptdf(&net).unwrap();
    let pair = NodePair::new(1, 7);
    let Effort::Feasible(e) = control_effort(&net, &p, &[pair], &[6], DeltaStrategy::DEFAULT_LIMIT, None).unwrap()
    else {
        panic!()
    };
    let tight = control_effort(&net, &p, &[pair], &[6], DeltaStrategy::DEFAULT_LIMIT, Some(e * 0.5)).unwrap();
    assert_eq!(tight, Effort::Infeasible);
    let loose = control_effort(&net, &p, &[pair], &[6], DeltaStrategy::DEFAULT_LIMIT, Some(e * 2.0)).unwrap();
    assert_eq!(loose, Effort::Feasible(e));
}

#[test]
fn lp_enumeration_counts() {
    let net = fixture("fixture10.json");
    let p = ptdf(&net).unwrap();
    let one = place_lp_next(&net, &p, &[], DeltaStrategy::DEFAULT_LIMIT, None).unwrap();
    assert_eq!(one.lp_count, 45 * 14);
    assert_eq!(one.candidates.len(), 45);
    let (chosen, steps) = place_lp_sequence(&net, &p, 2, DeltaStrategy::DEFAULT_LIMIT, None).unwrap();
    assert_eq!(steps[1].lp_count, 4095);
    assert!(steps[1].candidates.iter().all(|c| c.result.lp_count == 91));
    // The already-placed pair stays in the table and cannot reach any target set.
    let again = steps[1].candidates.iter().find(|c| c.pair == chosen[0]).unwrap();
    assert_eq!(again.result.infeasible_sets, 91);
    assert_ne!(chosen[0], chosen[1]);
}

#[test]
fn lp_ranking_is_ordered() {
    let net = fixture("fixture10.json");
    let p = ptdf(&net).unwrap();
    let r = place_lp_next(&net, &p, &[NodePair::new(1, 7)], DeltaStrategy::DEFAULT_CONSTANT, None).unwrap();
    let feasible: Vec<_> = r.candidates.iter().filter(|c| !c.result.all_infeasible()).collect();
    for w in feasible.windows(2) {
        assert!(w[0].result.total_effort <= w[1].result.total_effort);
    }
    let worst = feasible.iter().map(|c| c.relative_percent).fold(0.0, f64::max);
    assert!((worst - 100.0).abs() < 1e-9);
}

#[test]
fn comparison_table_shape() {
    let net = fixture("fixture10.json");
    let p = ptdf(&net).unwrap();
    let (cv_pairs, _) = place_cv_sequence(&p, 3, 0.2, 10).unwrap();
    let (lp_pairs, _) = place_lp_sequence(&net, &p, 3, DeltaStrategy::DEFAULT_LIMIT, None).unwrap();
    let table = compare_placements(&cv_pairs, &lp_pairs);
    assert_eq!(table.len(), 3);
    assert!(table.iter().enumerate().all(|(i, r)| r.step == i + 1));
    assert!(compare_placements(&[], &[]).is_empty());
    assert!(compare_placements(&cv_pairs, &cv_pairs).iter().all(|r| r.agree));
}
