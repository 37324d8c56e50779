//! DC optimal power flow and its security-constrained variants.
//!
//! Every problem is a single LP solved by the embedded simplex. Quadratic
//! generator costs are replaced by a convex piecewise-linear interpolation
//! with equal-width segments between `p_min` and `p_max`; the LP objective is
//! that interpolation, and [`OpfSolution::cost`] re-evaluates the exact
//! polynomial at the optimal dispatch.
//!
//! Line flows enter the LP as affine expressions of the decision variables
//! (generator segments and HVDC setpoints); each limited flow gets a bounded
//! auxiliary variable tied to its expression by one equality row.
//!
//! * Preventive: one dispatch and one HVDC setpoint vector must keep the base
//!   case and every post-contingency state (obtained with LODFs) within limits.
//! * Corrective: one dispatch, but every contingency has its own HVDC setpoints,
//!   acting through the PTDF of the outaged topology.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dcsens::{self, cv_matrix, lodf, NodePair, PtdfMatrix};
use crate::error::{Error, Result};
use crate::netmodel::{LineId, Network};
use crate::place_cv;
use crate::place_lp::simplex::{solve_lp, LpOutcome, LpProblem};
use crate::place_lp::{self, DeltaStrategy};

pub const DEFAULT_SEGMENTS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SecurityMode {
    Preventive,
    Corrective,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpfOptions {
    /// HVDC setpoint bound in MW; `None` is unbounded.
    pub p_dc_max: Option<f64>,
    /// Piecewise-linear segments per generator cost curve.
    pub segments: usize,
}

impl Default for OpfOptions {
    fn default() -> Self {
        OpfOptions {
            p_dc_max: None,
            segments: DEFAULT_SEGMENTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dispatch {
    /// MW per generator, in network order.
    pub p_gen: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContingencySetpoints {
    pub line: LineId,
    /// MW per placement.
    pub p_dc: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpfSolution {
    pub dispatch: Dispatch,
    /// Base-case flows in MW, in line order (zero for out-of-service lines).
    pub flows: Vec<f64>,
    /// Base-case HVDC setpoints in MW.
    pub hvdc_base: Vec<f64>,
    /// Per-contingency setpoints (corrective mode only).
    pub hvdc_contingency: Vec<ContingencySetpoints>,
    /// Exact polynomial cost at the dispatch, $/h.
    pub cost: f64,
    /// Optimal value of the piecewise-linear objective, $/h.
    pub objective: f64,
}

/// Decision-variable layout shared by all OPF variants.
struct Layout {
    /// `(generator, first column, segment count, segment width pu)`.
    segments: Vec<(usize, usize, usize, f64)>,
    /// First column of each setpoint block (base, then per contingency).
    hvdc_blocks: Vec<usize>,
    n_dc: usize,
}

/// Affine expression `coef · x + constant` over the LP's decision variables.
#[derive(Clone)]
struct Affine {
    coef: Vec<(usize, f64)>,
    constant: f64,
}

struct Builder {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<(Vec<(usize, f64)>, f64)>,
}

impl Builder {
    fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    /// `-limit ≤ expr ≤ limit` through an auxiliary variable.
    fn bound_expr(&mut self, expr: &Affine, limit: f64) {
        let aux = self.add_var(0.0, -limit, limit);
        let mut row: Vec<(usize, f64)> = expr.coef.iter().map(|&(j, c)| (j, -c)).collect();
        row.push((aux, 1.0));
        self.rows.push((row, expr.constant));
    }

    fn into_problem(self) -> LpProblem {
        let n = self.objective.len();
        let mut a = DMatrix::zeros(self.rows.len(), n);
        let mut b = Vec::with_capacity(self.rows.len());
        for (i, (row, rhs)) in self.rows.into_iter().enumerate() {
            for (j, c) in row {
                a[(i, j)] += c;
            }
            b.push(rhs);
        }
        LpProblem {
            objective: self.objective,
            eq_matrix: a,
            eq_rhs: b,
            lower: self.lower,
            upper: self.upper,
        }
    }
}

fn pdc_bound_pu(net: &Network, opts: &OpfOptions) -> Result<f64> {
    match opts.p_dc_max {
        None => Ok(f64::INFINITY),
        Some(p) if p > 0.0 => Ok(p / net.base_mva),
        Some(p) => Err(Error::InvalidArgument(format!("p_dc_max must be positive, got {p}"))),
    }
}

/// Per-line affine flow expressions for injection sensitivities `ptdf` and
/// controllability vectors `cvs` acting on setpoint block `hvdc_col`.
fn flow_expressions(
    net: &Network,
    layout: &Layout,
    ptdf: &PtdfMatrix,
    cvs: &DMatrix<f64>,
    hvdc_col: usize,
) -> Result<Vec<Affine>> {
    let pos = net.bus_positions();
    let mut base_inj = DVector::zeros(net.n_buses());
    for g in &net.generators {
        base_inj[pos[&g.bus]] += g.p_min;
    }
    for d in &net.loads {
        base_inj[pos[&d.bus]] -= d.p;
    }
    let constants = &ptdf.values * base_inj;
    let mut out = Vec::with_capacity(net.n_lines());
    for l in 0..net.n_lines() {
        let mut coef = Vec::new();
        for &(g, first, count, _) in &layout.segments {
            let s = ptdf.values[(l, pos[&net.generators[g].bus])];
            if s != 0.0 {
                coef.extend((first..first + count).map(|j| (j, s)));
            }
        }
        for j in 0..layout.n_dc {
            let c = cvs[(l, j)];
            if c != 0.0 {
                coef.push((hvdc_col + j, c));
            }
        }
        out.push(Affine {
            coef,
            constant: constants[l],
        });
    }
    Ok(out)
}

fn check_contingencies(net: &Network, contingencies: &[LineId]) -> Result<Vec<usize>> {
    let l = lodf(net)?;
    let mut out = Vec::with_capacity(contingencies.len());
    for &id in contingencies {
        let k = net.line_position(id).ok_or(Error::UnknownLine(id))?;
        if !net.lines[k].in_service {
            return Err(Error::InvalidArgument(format!(
                "contingency line {id} is already out of service"
            )));
        }
        if l.islanding[k] {
            return Err(Error::Islanding(id));
        }
        if out.contains(&k) {
            return Err(Error::InvalidArgument(format!("contingency line {id} listed twice")));
        }
        out.push(k);
    }
    Ok(out)
}

/// All in-service lines whose outage keeps the network connected.
pub fn default_contingencies(net: &Network) -> Result<Vec<LineId>> {
    let l = lodf(net)?;
    Ok(net
        .in_service_lines()
        .filter(|&(k, _)| !l.islanding[k])
        .map(|(_, line)| line.id)
        .collect())
}

pub fn dc_opf(net: &Network, placements: &[NodePair], opts: &OpfOptions) -> Result<OpfSolution> {
    solve(net, &[], placements, opts, SecurityMode::Preventive)
}

pub fn sc_opf(
    net: &Network,
    contingencies: &[LineId],
    placements: &[NodePair],
    opts: &OpfOptions,
    mode: SecurityMode,
) -> Result<OpfSolution> {
    solve(net, contingencies, placements, opts, mode)
}

fn solve(
    net: &Network,
    contingencies: &[LineId],
    placements: &[NodePair],
    opts: &OpfOptions,
    mode: SecurityMode,
) -> Result<OpfSolution> {
    if opts.segments == 0 {
        return Err(Error::InvalidArgument("at least one cost segment is required".into()));
    }
    let outages = check_contingencies(net, contingencies)?;
    let ptdf = dcsens::ptdf(net)?;
    let cvs = cv_matrix(&ptdf, placements)?;
    let pdc_max = pdc_bound_pu(net, opts)?;
    let base = net.base_mva;

    let mut b = Builder {
        objective: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        rows: Vec::new(),
    };

    // Generator segments.
    let mut constant_cost = 0.0;
    let mut segments = Vec::new();
    for (g, gen) in net.generators.iter().enumerate() {
        constant_cost += gen.cost.eval_mw(gen.p_min * base);
        let span = gen.p_max - gen.p_min;
        if span <= 0.0 {
            continue;
        }
        let count = opts.segments;
        let width = span / count as f64;
        let first = b.objective.len();
        for s in 0..count {
            let a0 = gen.p_min + width * s as f64;
            let a1 = gen.p_min + width * (s + 1) as f64;
            let slope = (gen.cost.eval_mw(a1 * base) - gen.cost.eval_mw(a0 * base)) / width;
            b.add_var(slope, 0.0, width);
        }
        segments.push((g, first, count, width));
    }

    let n_dc = placements.len();
    let n_blocks = match mode {
        SecurityMode::Corrective => 1 + outages.len(),
        SecurityMode::Preventive => 1,
    };
    let mut hvdc_blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        hvdc_blocks.push(b.objective.len());
        for _ in 0..n_dc {
            b.add_var(0.0, -pdc_max, pdc_max);
        }
    }
    let layout = Layout {
        segments,
        hvdc_blocks,
        n_dc,
    };

    // Power balance.
    let p_min_total: f64 = net.generators.iter().map(|g| g.p_min).sum();
    let balance: Vec<(usize, f64)> = layout
        .segments
        .iter()
        .flat_map(|&(_, first, count, _)| (first..first + count).map(|j| (j, 1.0)))
        .collect();
    b.rows.push((balance, net.total_load() - p_min_total));

    let base_flows = flow_expressions(net, &layout, &ptdf, &cvs, layout.hvdc_blocks[0])?;
    for (l, line) in net.lines.iter().enumerate() {
        if let (true, Some(limit)) = (line.in_service, line.limit) {
            b.bound_expr(&base_flows[l], limit);
        }
    }

    match mode {
        SecurityMode::Preventive => {
            if !outages.is_empty() {
                let lo = lodf(net)?;
                for &k in &outages {
                    for (l, line) in net.lines.iter().enumerate() {
                        let (true, Some(limit)) = (line.in_service && l != k, line.limit) else {
                            continue;
                        };
                        let factor = lo.values[(l, k)];
                        let mut expr = base_flows[l].clone();
                        if factor != 0.0 {
                            expr.coef
                                .extend(base_flows[k].coef.iter().map(|&(j, c)| (j, c * factor)));
                            expr.constant += factor * base_flows[k].constant;
                        }
                        b.bound_expr(&expr, limit);
                    }
                }
            }
        }
        SecurityMode::Corrective => {
            for (c, &k) in outages.iter().enumerate() {
                let outaged = net.with_outage(net.lines[k].id)?;
                let ptdf_k = dcsens::ptdf(&outaged)?;
                let cvs_k = cv_matrix(&ptdf_k, placements)?;
                let flows_k = flow_expressions(&outaged, &layout, &ptdf_k, &cvs_k, layout.hvdc_blocks[c + 1])?;
                for (l, line) in outaged.lines.iter().enumerate() {
                    if let (true, Some(limit)) = (line.in_service, line.limit) {
                        b.bound_expr(&flows_k[l], limit);
                    }
                }
            }
        }
    }

    let lp = b.into_problem();
    let sol = match solve_lp(&lp)? {
        LpOutcome::Optimal(s) => s,
        LpOutcome::Infeasible => {
            return Err(Error::Infeasible(if outages.is_empty() {
                "OPF is infeasible".into()
            } else {
                "SC-OPF is infeasible".into()
            }))
        }
        LpOutcome::Unbounded => return Err(Error::Infeasible("OPF LP is unbounded".into())),
    };

    let mut p_gen: Vec<f64> = net.generators.iter().map(|g| g.p_min).collect();
    for &(g, first, count, _) in &layout.segments {
        p_gen[g] += sol.x[first..first + count].iter().sum::<f64>();
    }
    let block = |i: usize| sol.x[layout.hvdc_blocks[i]..layout.hvdc_blocks[i] + n_dc].to_vec();
    let hvdc_base_pu = block(0);

    let inj = net.net_injection(&p_gen)?;
    let flows_pu = ptdf.flows_unchecked(&DVector::from_vec(inj)) + &cvs * DVector::from_column_slice(&hvdc_base_pu);

    let cost = net
        .generators
        .iter()
        .zip(&p_gen)
        .map(|(g, &p)| g.cost.eval_mw(p * base))
        .sum();
    let hvdc_contingency = match mode {
        SecurityMode::Corrective => outages
            .iter()
            .enumerate()
            .map(|(c, &k)| ContingencySetpoints {
                line: net.lines[k].id,
                p_dc: block(c + 1).iter().map(|v| v * base).collect(),
            })
            .collect(),
        SecurityMode::Preventive => Vec::new(),
    };

    Ok(OpfSolution {
        dispatch: Dispatch {
            p_gen: p_gen.iter().map(|p| p * base).collect(),
        },
        flows: flows_pu.iter().map(|f| f * base).collect(),
        hvdc_base: hvdc_base_pu.iter().map(|v| v * base).collect(),
        hvdc_contingency,
        cost,
        objective: sol.objective + constant_cost,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostOfSecurity {
    pub opf_cost: f64,
    pub scopf_cost: f64,
    /// `C_SCOPF - C_OPF`, $/h.
    pub cos_abs: f64,
    /// `100 * cos_abs / C_OPF`.
    pub cos_percent: f64,
}

/// Cost of Security on the piecewise-linear objectives of both solves.
pub fn cost_of_security(
    net: &Network,
    contingencies: &[LineId],
    placements: &[NodePair],
    opts: &OpfOptions,
    mode: SecurityMode,
) -> Result<CostOfSecurity> {
    let opf = dc_opf(net, placements, opts).map_err(|e| match e {
        Error::Infeasible(m) => Error::Infeasible(format!("OPF solve failed: {m}")),
        other => other,
    })?;
    let scopf = sc_opf(net, contingencies, placements, opts, mode).map_err(|e| match e {
        Error::Infeasible(m) => Error::Infeasible(format!("SC-OPF solve failed: {m}")),
        other => other,
    })?;
    let cos_abs = scopf.objective - opf.objective;
    let cos_percent = if opf.objective != 0.0 {
        100.0 * cos_abs / opf.objective
    } else {
        0.0
    };
    Ok(CostOfSecurity {
        opf_cost: opf.objective,
        scopf_cost: scopf.objective,
        cos_abs,
        cos_percent,
    })
}

/// Which placement algorithm drives a CoS curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlacementAlgorithm {
    Cv { cos_threshold: f64, candidate_cap: usize },
    Lp { strategy: DeltaStrategy },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CosPoint {
    pub count: usize,
    /// Controller added at this count; `None` at count 0.
    pub pair: Option<NodePair>,
    pub cos_percent: f64,
    pub cos_abs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CosCurve {
    pub points: Vec<CosPoint>,
}

/// Greedy placements of up to `count` controllers with `algorithm`.
pub fn placements_for(
    net: &Network,
    ptdf: &PtdfMatrix,
    count: usize,
    algorithm: PlacementAlgorithm,
    p_dc_max: Option<f64>,
) -> Result<Vec<NodePair>> {
    match algorithm {
        PlacementAlgorithm::Cv {
            cos_threshold,
            candidate_cap,
        } => Ok(place_cv::place_cv_sequence(ptdf, count, cos_threshold, candidate_cap)?.0),
        PlacementAlgorithm::Lp { strategy } => Ok(place_lp::place_lp_sequence(net, ptdf, count, strategy, p_dc_max)?.0),
    }
}

/// CoS after 0, 1, ..., `max_controllers` greedily placed controllers.
pub fn cos_curve(
    net: &Network,
    contingencies: &[LineId],
    max_controllers: usize,
    algorithm: PlacementAlgorithm,
    opts: &OpfOptions,
    mode: SecurityMode,
) -> Result<CosCurve> {
    let ptdf = dcsens::ptdf(net)?;
    let placements = placements_for(net, &ptdf, max_controllers, algorithm, opts.p_dc_max)?;
    let mut points = Vec::with_capacity(max_controllers + 1);
    for count in 0..=max_controllers {
        let cos = cost_of_security(net, contingencies, &placements[..count], opts, mode)?;
        points.push(CosPoint {
            count,
            pair: count.checked_sub(1).map(|i| placements[i]),
            cos_percent: cos.cos_percent,
            cos_abs: cos.cos_abs,
        });
    }
    Ok(CosCurve { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::tests::triangle;
    use crate::netmodel::{Bus, CostCurve, Generator, Load};

    fn gen(bus: u32, p_max: f64, linear: f64) -> Generator {
        Generator {
            bus,
            p_min: 0.0,
            p_max,
            cost: CostCurve {
                constant: 0.0,
                linear,
                quadratic: 0.0,
            },
        }
    }

    #[test]
    fn single_bus() {
        let net = Network {
            base_mva: 100.0,
            buses: vec![Bus { id: 1, is_slack: true }],
            lines: vec![],
            generators: vec![Generator {
                cost: CostCurve {
                    constant: 5.0,
                    linear: 10.0,
                    quadratic: 0.0,
                },
                ..gen(1, 2.0, 10.0)
            }],
            loads: vec![Load { bus: 1, p: 0.5 }],
        };
        let sol = dc_opf(&net, &[], &OpfOptions::default()).unwrap();
        assert!((sol.dispatch.p_gen[0] - 50.0).abs() < 1e-9);
        assert!((sol.cost - 505.0).abs() < 1e-9);
        assert!((sol.objective - 505.0).abs() < 1e-9);
    }

    #[test]
    fn insufficient_generation_is_infeasible() {
        let mut net = triangle();
        net.generators = vec![gen(1, 0.5, 10.0)];
        net.loads = vec![Load { bus: 3, p: 1.0 }];
        assert!(matches!(
            dc_opf(&net, &[], &OpfOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn empty_contingency_list_matches_opf() {
        let mut net = triangle();
        net.generators = vec![gen(1, 3.0, 10.0), gen(2, 3.0, 30.0)];
        net.loads = vec![Load { bus: 3, p: 1.5 }];
        let a = dc_opf(&net, &[], &OpfOptions::default()).unwrap();
        let b = sc_opf(&net, &[], &[], &OpfOptions::default(), SecurityMode::Corrective).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quadratic_cost_is_reported_exactly() {
        let mut net = triangle();
        for l in &mut net.lines {
            l.limit = None;
        }
        net.generators = vec![Generator {
            bus: 1,
            p_min: 0.0,
            p_max: 2.0,
            cost: CostCurve {
                constant: 0.0,
                linear: 10.0,
                quadratic: 0.05,
            },
        }];
        net.loads = vec![Load { bus: 2, p: 0.5 }];
        let sol = dc_opf(&net, &[], &OpfOptions::default()).unwrap();
        assert!((sol.cost - (500.0 + 0.05 * 2500.0)).abs() < 1e-9);
        // Chord above the parabola between breakpoints 40 and 60 MW.
        assert!(sol.objective >= sol.cost - 1e-9);
    }

    #[test]
    fn islanding_contingency_is_rejected() {
        let mut net = triangle();
        net.buses.push(Bus { id: 4, is_slack: false });
        net.lines.push(crate::netmodel::tests::line(4, 3, 4, 0.1));
        net.generators = vec![gen(1, 3.0, 10.0)];
        net.loads = vec![Load { bus: 4, p: 0.5 }];
        let err = sc_opf(&net, &[4], &[], &OpfOptions::default(), SecurityMode::Preventive).unwrap_err();
        assert!(matches!(err, Error::Islanding(4)));
        assert_eq!(default_contingencies(&net).unwrap(), vec![1, 2, 3]);
    }
}
