mod common;

use common::{angle_flows, fixture, vertex_min};
use gridctrl::dcsens::{lodf, NodePair};
use gridctrl::netmodel::Network;
use gridctrl::opf::{
    cos_curve, cost_of_security, dc_opf, default_contingencies, sc_opf, OpfOptions, OpfSolution, PlacementAlgorithm,
    SecurityMode,
};
use gridctrl::Error;

const TOL: f64 = 1e-6;

fn injection_mw(net: &Network, p_gen: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; net.n_buses()];
    let pos = |id| net.buses.iter().position(|b| b.id == id).unwrap();
    for (g, &v) in net.generators.iter().zip(p_gen) {
        p[pos(g.bus)] += v / net.base_mva;
    }
    for d in &net.loads {
        p[pos(d.bus)] -= d.p;
    }
    p
}

/// Generation-only LP in MW with one chord per generator, reduced to the
/// free generators by eliminating the last one through the balance.
/// Returns the oracle optimum for the base case plus the outages in `outages`.
fn chord_oracle(net: &Network, outages: &[u32]) -> Option<f64> {
    let base = net.base_mva;
    let ng = net.generators.len();
    let slope: Vec<f64> = net
        .generators
        .iter()
        .map(|g| (g.cost.eval_mw(g.p_max * base) - g.cost.eval_mw(g.p_min * base)) / ((g.p_max - g.p_min) * base))
        .collect();
    let intercept: f64 = net
        .generators
        .iter()
        .zip(&slope)
        .map(|(g, s)| g.cost.eval_mw(g.p_min * base) - s * g.p_min * base)
        .sum();
    let load = net.total_load() * base;

    // x = first ng-1 generator outputs; last = load - Σx.
    let n = ng - 1;
    let full = |x: &[f64]| -> Vec<f64> {
        let mut p = x.to_vec();
        p.push(load - x.iter().sum::<f64>());
        p
    };
    let c: Vec<f64> = (0..n).map(|j| slope[j] - slope[n]).collect();
    let c0 = intercept + slope[n] * load;

    let mut a = Vec::new();
    let mut b = Vec::new();
    for (j, g) in net.generators.iter().enumerate() {
        let mut row = vec![0.0; n];
        if j < n {
            row[j] = 1.0;
        } else {
            row.iter_mut().for_each(|v| *v = -1.0);
        }
        let shift = if j < n { 0.0 } else { load };
        a.push(row.clone());
        b.push(g.p_max * base - shift);
        a.push(row.iter().map(|v| -v).collect());
        b.push(-(g.p_min * base) + shift);
    }
    let mut cases = vec![net.clone()];
    for &k in outages {
        cases.push(net.with_outage(k).unwrap());
    }
    for case in &cases {
        // flows are affine in x: f(x) = f(0) + Σ x_j (f(e_j) - f(0))
        let f0 = angle_flows(case, &injection_mw(case, &full(&vec![0.0; n])));
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let fj = angle_flows(case, &injection_mw(case, &full(&e)));
                fj.iter().zip(&f0).map(|(a, b)| (a - b) * base).collect()
            })
            .collect();
        for (l, line) in case.lines.iter().enumerate() {
            let (true, Some(limit)) = (line.in_service, line.limit) else {
                continue;
            };
            let row: Vec<f64> = cols.iter().map(|c| c[l]).collect();
            a.push(row.clone());
            b.push(limit * base - f0[l] * base);
            a.push(row.iter().map(|v| -v).collect());
            b.push(limit * base + f0[l] * base);
        }
    }
    vertex_min(&c, &a, &b).map(|(v, _)| v + c0)
}

fn assert_invariants(net: &Network, sol: &OpfSolution) {
    let total: f64 = sol.dispatch.p_gen.iter().sum();
    assert!((total - net.total_load() * net.base_mva).abs() < 1e-7 * net.base_mva);
    for (g, &p) in net.generators.iter().zip(&sol.dispatch.p_gen) {
        assert!(p >= g.p_min * net.base_mva - TOL && p <= g.p_max * net.base_mva + TOL);
    }
    for (l, &f) in net.lines.iter().zip(&sol.flows) {
        if let Some(limit) = l.limit {
            assert!(
                f.abs() <= limit * net.base_mva + TOL * net.base_mva,
                "line {} flow {f}",
                l.id
            );
        }
    }
    let poly: f64 = net
        .generators
        .iter()
        .zip(&sol.dispatch.p_gen)
        .map(|(g, &p)| g.cost.eval_mw(p))
        .sum();
    assert!((poly - sol.cost).abs() < 1e-9 * poly.abs().max(1.0));
}

fn chord() -> OpfOptions {
    OpfOptions {
        p_dc_max: None,
        segments: 1,
    }
}

#[test]
fn congested_triangle_matches_hand_solution() {
    let net = fixture("triangle.json");
    let sol = dc_opf(&net, &[], &OpfOptions::default()).unwrap();
    assert_invariants(&net, &sol);
    // Line 1-3 carries 2/3 of bus-1 output and 1/3 of bus-2 output.
    assert!((sol.dispatch.p_gen[0] - 120.0).abs() < 1e-6);
    assert!((sol.dispatch.p_gen[1] - 60.0).abs() < 1e-6);
    assert!((sol.objective - 3000.0).abs() < 1e-6);
    let oracle = chord_oracle(&net, &[]).unwrap();
    assert!((sol.objective - oracle).abs() < 1e-6);
}

#[test]
fn triangle_cost_of_security_matches_oracle_pair() {
    let net = fixture("triangle.json");
    let cos = cost_of_security(&net, &[1], &[], &OpfOptions::default(), SecurityMode::Preventive).unwrap();
    let opf = chord_oracle(&net, &[]).unwrap();
    let scopf = chord_oracle(&net, &[1]).unwrap();
    assert!((cos.opf_cost - opf).abs() < 1e-6);
    assert!((cos.scopf_cost - scopf).abs() < 1e-6);
    assert!((cos.cos_abs - 400.0).abs() < 1e-6);
    assert!((cos.cos_percent - 100.0 * 400.0 / 3000.0).abs() < 1e-9);
}

#[test]
fn full_n_minus_one_on_triangle_is_infeasible() {
    let net = fixture("triangle.json");
    let all = default_contingencies(&net).unwrap();
    assert_eq!(all, vec![1, 2, 3]);
    let err = sc_opf(&net, &all, &[], &OpfOptions::default(), SecurityMode::Preventive).unwrap_err();
    assert!(matches!(err, Error::Infeasible(_)));
    let err = cost_of_security(&net, &all, &[], &OpfOptions::default(), SecurityMode::Preventive).unwrap_err();
    assert!(err.to_string().starts_with("SC-OPF"));
}

#[test]
fn chord_costs_match_vertex_enumeration_on_small_fixtures() {
    for name in ["triangle.json", "fixture10.json", "parallel.json"] {
        let net = fixture(name);
        let sol = dc_opf(&net, &[], &chord()).unwrap();
        let oracle = chord_oracle(&net, &[]).unwrap();
        assert!((sol.objective - oracle).abs() < 1e-6 * oracle.abs().max(1.0), "{name}");

        let outages = default_contingencies(&net).unwrap();
        match (
            sc_opf(&net, &outages, &[], &chord(), SecurityMode::Preventive),
            chord_oracle(&net, &outages),
        ) {
            (Ok(s), Some(o)) => assert!((s.objective - o).abs() < 1e-6 * o.abs().max(1.0), "{name}"),
            (Err(Error::Infeasible(_)), None) => {}
            (s, o) => panic!("{name}: solver {:?} vs oracle {o:?}", s.map(|s| s.objective)),
        }
    }
}

#[test]
fn empty_contingency_list_is_plain_opf() {
    let net = fixture("fixture10.json");
    let a = dc_opf(&net, &[], &OpfOptions::default()).unwrap();
    for mode in [SecurityMode::Preventive, SecurityMode::Corrective] {
        assert_eq!(sc_opf(&net, &[], &[], &OpfOptions::default(), mode).unwrap(), a);
    }
}

#[test]
fn security_ordering_on_fixture10() {
    let net = fixture("fixture10.json");
    let outages = default_contingencies(&net).unwrap();
    assert_eq!(outages.len(), 14);
    let placements = [NodePair::new(1, 7), NodePair::new(4, 8)];
    let opts = OpfOptions::default();
    let opf = dc_opf(&net, &placements, &opts).unwrap();
    let prev = sc_opf(&net, &outages, &placements, &opts, SecurityMode::Preventive).unwrap();
    let corr = sc_opf(&net, &outages, &placements, &opts, SecurityMode::Corrective).unwrap();
    assert!(prev.objective >= corr.objective - TOL * corr.objective);
    assert!(corr.objective >= opf.objective - TOL * opf.objective);
    for s in [&opf, &prev, &corr] {
        assert_invariants(&net, s);
    }
    assert_eq!(corr.hvdc_contingency.len(), outages.len());
    assert!(prev.hvdc_contingency.is_empty());
}

#[test]
fn base_case_is_uncongested_but_n_minus_one_is_not() {
    let net = fixture("fixture10.json");
    let outages = default_contingencies(&net).unwrap();
    let cos = cost_of_security(&net, &outages, &[], &OpfOptions::default(), SecurityMode::Preventive).unwrap();
    assert!(cos.cos_abs > 1.0);
    // All load on the cheapest unit is the unconstrained optimum.
    let opf = dc_opf(&net, &[], &OpfOptions::default()).unwrap();
    assert!((opf.dispatch.p_gen[0] - 360.0).abs() < 1e-6);
}

#[test]
fn hvdc_never_raises_uncongested_cost() {
    let net = fixture("fixture10.json");
    let base = dc_opf(&net, &[], &OpfOptions::default()).unwrap();
    for pair in [NodePair::new(1, 7), NodePair::new(3, 10), NodePair::new(2, 5)] {
        let with = dc_opf(&net, &[pair], &OpfOptions::default()).unwrap();
        assert!(with.objective <= base.objective + TOL);
    }
}

#[test]
fn preventive_post_contingency_flows_respect_limits() {
    let net = fixture("fixture10.json");
    let outages = default_contingencies(&net).unwrap();
    let placements = [NodePair::new(2, 9)];
    let sol = sc_opf(
        &net,
        &outages,
        &placements,
        &OpfOptions::default(),
        SecurityMode::Preventive,
    )
    .unwrap();
    // HVDC setpoints act as an injection pair, so the angle oracle sees them directly.
    let mut p = injection_mw(&net, &sol.dispatch.p_gen);
    let pos = |id| net.buses.iter().position(|b| b.id == id).unwrap();
    p[pos(2)] += sol.hvdc_base[0] / net.base_mva;
    p[pos(9)] -= sol.hvdc_base[0] / net.base_mva;
    for &k in &outages {
        let outaged = net.with_outage(k).unwrap();
        for (l, f) in angle_flows(&outaged, &p).iter().enumerate() {
            if let Some(limit) = outaged.lines[l].limit {
                assert!(f.abs() <= limit + 1e-8, "outage {k}, line {}", outaged.lines[l].id);
            }
        }
    }
}

#[test]
fn corrective_setpoints_secure_each_outage() {
    let net = fixture("fixture10.json");
    let outages = default_contingencies(&net).unwrap();
    let placements = [NodePair::new(1, 7), NodePair::new(4, 8)];
    let sol = sc_opf(
        &net,
        &outages,
        &placements,
        &OpfOptions::default(),
        SecurityMode::Corrective,
    )
    .unwrap();
    let pos = |id| net.buses.iter().position(|b| b.id == id).unwrap();
    for c in &sol.hvdc_contingency {
        let outaged = net.with_outage(c.line).unwrap();
        let mut p = injection_mw(&net, &sol.dispatch.p_gen);
        for (pair, v) in placements.iter().zip(&c.p_dc) {
            p[pos(pair.m)] += v / net.base_mva;
            p[pos(pair.n)] -= v / net.base_mva;
        }
        for (l, f) in angle_flows(&outaged, &p).iter().enumerate() {
            if let Some(limit) = outaged.lines[l].limit {
                assert!(
                    f.abs() <= limit + 1e-8,
                    "outage {}, line {}",
                    c.line,
                    outaged.lines[l].id
                );
            }
        }
    }
}

#[test]
fn lodf_flows_match_topology_resolve() {
    for name in ["fixture10.json", "ieee14.m", "parallel.json"] {
        let net = fixture(name);
        let sol = dc_opf(&net, &[], &OpfOptions::default()).unwrap();
        let p = injection_mw(&net, &sol.dispatch.p_gen);
        let pre = nalgebra::DVector::from_vec(angle_flows(&net, &p));
        let factors = lodf(&net).unwrap();
        for (k, line) in net.lines.iter().enumerate() {
            if factors.islanding[k] {
                continue;
            }
            let post = factors.post_outage(&pre, k).unwrap();
            let resolved = angle_flows(&net.with_outage(line.id).unwrap(), &p);
            for (a, b) in post.iter().zip(&resolved) {
                assert!((a - b).abs() < 1e-8, "{name}, outage {}", line.id);
            }
        }
    }
}

#[test]
fn bridge_contingency_is_named() {
    let net = fixture("ieee14.m");
    let bridges = lodf(&net).unwrap().bridges();
    assert_eq!(bridges, vec![14]);
    let err = sc_opf(&net, &[14], &[], &OpfOptions::default(), SecurityMode::Preventive).unwrap_err();
    assert!(matches!(err, Error::Islanding(14)));
    assert!(!default_contingencies(&net).unwrap().contains(&14));
}

#[test]
fn cos_curve_with_no_controllers_is_one_point() {
    let net = fixture("fixture10.json");
    let outages = default_contingencies(&net).unwrap();
    let alg = PlacementAlgorithm::Cv {
        cos_threshold: 0.2,
        candidate_cap: 10,
    };
    let curve = cos_curve(&net, &outages, 0, alg, &OpfOptions::default(), SecurityMode::Corrective).unwrap();
    assert_eq!(curve.points.len(), 1);
    assert_eq!(curve.points[0].count, 0);
    assert!(curve.points[0].pair.is_none());
    let cos = cost_of_security(&net, &outages, &[], &OpfOptions::default(), SecurityMode::Corrective).unwrap();
    assert_eq!(curve.points[0].cos_percent, cos.cos_percent);
}

#[test]
fn corrective_cos_curve_is_non_increasing() {
    let net = fixture("fixture10.json");
    let outages = default_contingencies(&net).unwrap();
    let alg = PlacementAlgorithm::Cv {
        cos_threshold: 0.2,
        candidate_cap: 10,
    };
    let curve = cos_curve(&net, &outages, 6, alg, &OpfOptions::default(), SecurityMode::Corrective).unwrap();
    for w in curve.points.windows(2) {
        assert_eq!(w[1].count, w[0].count + 1);
        assert!(w[1].cos_abs <= w[0].cos_abs + TOL);
    }
}
