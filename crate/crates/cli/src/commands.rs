use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use gridctrl::bounds::{bounds, solve_fixed_flows, FixedFlowSolution};
use gridctrl::dcsens::{cv_matrix, lodf, ptdf, InjectionProfile, NodePair};
use gridctrl::netmodel::{merge_parallel_lines, parse_case, validate, CaseFormat, Network};
use gridctrl::opf::{
    cos_curve, dc_opf, default_contingencies, sc_opf, OpfOptions, OpfSolution, PlacementAlgorithm, SecurityMode,
};
use gridctrl::place_cv::{self, first_placement, metric_correlation, place_cv_sequence, rank_by_norm1};
use gridctrl::place_lp::{compare_placements, place_lp_sequence, DeltaStrategy};
use gridctrl::Error;
use serde::Serialize;
use serde_json::json;

use crate::format::{num, Csv};
use crate::{AlgorithmArg, CaseArgs, Command, InputFormat, ModeArg, OpfArgs, OutputFormat, StrategyArg};

const THREADS_VAR: &str = "GRIDCTRL_THREADS";

/// A failure with its exit code and single-line prefix.
#[derive(Debug)]
pub struct Failure {
    kind: &'static str,
    code: u8,
    message: String,
    /// Extra stdout content (validation reports).
    stdout: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            kind: "input",
            code: 2,
            message: message.into(),
            stdout: String::new(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure {
            kind: "usage",
            ..Failure::input(message)
        }
    }

    pub fn report(self) -> ExitCode {
        print!("{}", self.stdout);
        eprintln!("error[{}]: {}", self.kind, self.message.replace('\n', " "));
        ExitCode::from(self.code)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            _ if e.is_infeasibility() => ("infeasible", 1),
            Error::Lp(_) => ("solver", 1),
            _ => ("input", 2),
        };
        Failure {
            kind,
            code,
            message: e.to_string(),
            stdout: String::new(),
        }
    }
}

type Outcome = Result<String, Failure>;

pub fn configure_threads() -> Result<(), Failure> {
    let threads = match std::env::var(THREADS_VAR) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Failure::input(format!("{THREADS_VAR} must be a non-negative integer, got `{v}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::input(format!("cannot start worker pool: {e}")))
}

fn read_case(args: &CaseArgs) -> Result<Network, Failure> {
    let text = fs::read_to_string(&args.case)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", args.case.display())))?;
    let format = match args.format {
        InputFormat::Matpower => CaseFormat::Matpower,
        InputFormat::Json => CaseFormat::NativeJson,
        InputFormat::Auto if has_extension(&args.case, "m") => CaseFormat::Matpower,
        InputFormat::Auto => CaseFormat::NativeJson,
    };
    Ok(parse_case(&text, format)?)
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Parsed, validated and merged network for analysis commands.
fn load(args: &CaseArgs) -> Result<Network, Failure> {
    let net = read_case(args)?;
    let report = validate(&net);
    if !report.is_valid() {
        let list: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        return Err(Failure::input(format!("invalid case: {}", list.join("; "))));
    }
    Ok(merge_parallel_lines(&net))
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("serializable output");
    s.push('\n');
    s
}

fn parse_pair(text: &str) -> Result<NodePair, Failure> {
    let (m, n) = text
        .split_once('-')
        .ok_or_else(|| Failure::input(format!("expected a pair `m-n`, got `{text}`")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<u32>()
            .map_err(|_| Failure::input(format!("bad bus id `{s}` in pair `{text}`")))
    };
    Ok(NodePair::new(parse(m)?, parse(n)?))
}

fn parse_assignments(items: &[String], what: &str) -> Result<BTreeMap<u32, f64>, Failure> {
    let mut out = BTreeMap::new();
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Failure::input(format!("expected `{what}=MW`, got `{item}`")))?;
        let key = k
            .trim()
            .parse::<u32>()
            .map_err(|_| Failure::input(format!("bad {what} id `{k}`")))?;
        let value = v
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Failure::input(format!("bad value `{v}` for {what} {key}")))?;
        if out.insert(key, value).is_some() {
            return Err(Failure::input(format!("{what} {key} given twice")));
        }
    }
    Ok(out)
}

fn strategy(arg: StrategyArg) -> DeltaStrategy {
    match arg {
        StrategyArg::Const => DeltaStrategy::DEFAULT_CONSTANT,
        StrategyArg::Limit => DeltaStrategy::DEFAULT_LIMIT,
        StrategyArg::Reactance => DeltaStrategy::DEFAULT_REACTANCE,
    }
}

fn mode(arg: ModeArg) -> SecurityMode {
    match arg {
        ModeArg::Preventive => SecurityMode::Preventive,
        ModeArg::Corrective => SecurityMode::Corrective,
    }
}

fn check_positive(value: Option<f64>, what: &str) -> Result<(), Failure> {
    match value {
        Some(v) if !(v.is_finite() && v > 0.0) => Err(Failure::input(format!("{what} must be positive, got {v}"))),
        _ => Ok(()),
    }
}

fn contingencies(net: &Network, given: &[u32]) -> Result<Vec<u32>, Failure> {
    if given.is_empty() {
        Ok(default_contingencies(net)?)
    } else {
        Ok(given.to_vec())
    }
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Validate(args) => run_validate(&args),
        Command::Ptdf(args) => run_ptdf(&args),
        Command::Cv { case, pair, all } => run_cv(&case, &pair, all),
        Command::Lodf(args) => run_lodf(&args),
        Command::Bounds(args) => run_bounds(&args),
        Command::FixFlows { case, inject, fix } => run_fix_flows(&case, &inject, &fix),
        Command::PlaceCv {
            case,
            count,
            cos_threshold,
            cap,
            metrics,
        } => {
            if metrics {
                run_metrics(&case)
            } else {
                run_place_cv(&case, count, cos_threshold, cap)
            }
        }
        Command::PlaceLp {
            case,
            count,
            strategy: s,
            pdc_max,
        } => run_place_lp(&case, count, strategy(s), pdc_max),
        Command::ComparePlacements {
            case,
            count,
            strategy: s,
            cos_threshold,
            pdc_max,
        } => run_compare(&case, count, strategy(s), cos_threshold, pdc_max),
        Command::Opf { case, opf } => run_opf(&case, &opf, None),
        Command::ScOpf {
            case,
            opf,
            mode: m,
            contingencies: c,
        } => run_opf(&case, &opf, Some((mode(m), c))),
        Command::CosCurve {
            case,
            max,
            algorithm,
            strategy: s,
            cos_threshold,
            pdc_max,
            segments,
            mode: m,
            contingencies: c,
            plot,
        } => {
            let algorithm = match algorithm {
                AlgorithmArg::Cv => PlacementAlgorithm::Cv {
                    cos_threshold,
                    candidate_cap: place_cv::DEFAULT_CANDIDATE_CAP,
                },
                AlgorithmArg::Lp => PlacementAlgorithm::Lp { strategy: strategy(s) },
            };
            let opts = OpfOptions {
                p_dc_max: pdc_max,
                segments,
            };
            run_cos_curve(&case, max, algorithm, &opts, mode(m), &c, plot.as_deref())
        }
    }
}

fn run_validate(args: &CaseArgs) -> Outcome {
    let net = read_case(args)?;
    let report = validate(&net);
    let violations: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
    let text = match args.output.unwrap_or(OutputFormat::Json) {
        OutputFormat::Json => json_line(&json!({ "valid": report.is_valid(), "violations": violations })),
        OutputFormat::Csv => {
            let mut csv = Csv::default();
            csv.row(["violation"]);
            for v in &violations {
                csv.row([v.replace(',', ";")]);
            }
            csv.finish()
        }
    };
    if report.is_valid() {
        Ok(text)
    } else {
        Err(Failure {
            stdout: text,
            ..Failure::input(format!("case has {} violation(s)", violations.len()))
        })
    }
}

fn run_ptdf(args: &CaseArgs) -> Outcome {
    let net = load(args)?;
    let p = ptdf(&net)?;
    Ok(match args.output.unwrap_or(OutputFormat::Csv) {
        OutputFormat::Json => json_line(&json!({
            "bus_ids": p.bus_ids,
            "line_ids": p.line_ids,
            "slack": p.bus_ids[p.slack_index],
            "values": rows(&p.values),
        })),
        OutputFormat::Csv => {
            let mut csv = Csv::default();
            csv.row(std::iter::once("line_id".to_string()).chain(p.bus_ids.iter().map(|b| b.to_string())));
            for (l, id) in p.line_ids.iter().enumerate() {
                csv.row(std::iter::once(id.to_string()).chain(p.values.row(l).iter().map(|&v| num(v))));
            }
            csv.finish()
        }
    })
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn run_cv(args: &CaseArgs, pair: &[u32], all: bool) -> Outcome {
    let net = load(args)?;
    let p = ptdf(&net)?;
    let pairs = if all {
        p.pairs()
    } else if pair.len() != 2 {
        return Err(Failure::usage("--pair takes two bus ids, `m,n`"));
    } else {
        vec![NodePair::new(pair[0], pair[1])]
    };
    let m = cv_matrix(&p, &pairs)?;
    Ok(match args.output.unwrap_or(OutputFormat::Csv) {
        OutputFormat::Json => json_line(&json!({
            "line_ids": p.line_ids,
            "vectors": pairs.iter().enumerate().map(|(j, pr)| json!({
                "pair": pr,
                "values": m.column(j).iter().copied().collect::<Vec<f64>>(),
            })).collect::<Vec<_>>(),
        })),
        OutputFormat::Csv => {
            let mut csv = Csv::default();
            csv.row(std::iter::once("line_id".to_string()).chain(pairs.iter().map(|p| p.to_string())));
            for (l, id) in p.line_ids.iter().enumerate() {
                csv.row(std::iter::once(id.to_string()).chain(m.row(l).iter().map(|&v| num(v))));
            }
            csv.finish()
        }
    })
}

fn run_lodf(args: &CaseArgs) -> Outcome {
    let net = load(args)?;
    let l = lodf(&net)?;
    Ok(match args.output.unwrap_or(OutputFormat::Csv) {
        OutputFormat::Json => json_line(&json!({
            "line_ids": l.line_ids,
            "bridges": l.bridges(),
            "values": rows(&l.values),
        })),
        OutputFormat::Csv => {
            let mut csv = Csv::default();
            csv.row(std::iter::once("line_id".to_string()).chain(l.line_ids.iter().map(|b| b.to_string())));
            for (r, id) in l.line_ids.iter().enumerate() {
                csv.row(
                    std::iter::once(id.to_string()).chain(l.values.row(r).iter().enumerate().map(|(k, &v)| {
                        if l.islanding[k] {
                            "nan".to_string()
                        } else {
                            num(v)
                        }
                    })),
                );
            }
            csv.finish()
        }
    })
}

fn run_bounds(args: &CaseArgs) -> Outcome {
    let net = load(args)?;
    let b = bounds(&net)?;
    Ok(match args.output.unwrap_or(OutputFormat::Json) {
        OutputFormat::Json => json_line(&b),
        OutputFormat::Csv => {
            let mut csv = Csv::default();
            csv.row(["series_bound", "parallel_bound", "ptdf_rank"]);
            csv.row([b.series_bound, b.parallel_bound, b.ptdf_rank].map(|v| v.to_string()));
            csv.finish()
        }
    })
}

fn run_fix_flows(args: &CaseArgs, inject: &[String], fix: &[String]) -> Outcome {
    let net = load(args)?;
    let base = net.base_mva;
    let injections = parse_assignments(inject, "bus")?;
    let mut p = vec![0.0; net.n_buses()];
    for (&bus, &mw) in &injections {
        let i = net.bus_position(bus).ok_or(Error::UnknownBus(bus))?;
        p[i] = mw / base;
    }
    let inj = InjectionProfile::new(p)?;
    let fixed: BTreeMap<u32, f64> = parse_assignments(fix, "line")?
        .into_iter()
        .map(|(k, v)| (k, v / base))
        .collect();
    let solution = solve_fixed_flows(&net, &inj, &fixed)?;
    let output = args.output.unwrap_or(OutputFormat::Json);
    let text = match (&solution, output) {
        (FixedFlowSolution::Unique(flows), OutputFormat::Json) => {
            let mw: BTreeMap<String, f64> = flows.iter().map(|(k, v)| (k.to_string(), v * base)).collect();
            json_line(&json!({ "status": "unique", "flows": mw }))
        }
        (FixedFlowSolution::Unique(flows), OutputFormat::Csv) => {
            let mut csv = Csv::default();
            csv.row(["line_id", "flow_MW"]);
            for (id, v) in flows {
                csv.row([id.to_string(), num(v * base)]);
            }
            csv.line("status=unique");
            csv.finish()
        }
        (FixedFlowSolution::Underdetermined { freedom }, OutputFormat::Json) => {
            json_line(&json!({ "status": "underdetermined", "freedom": freedom }))
        }
        (FixedFlowSolution::Underdetermined { freedom }, OutputFormat::Csv) => {
            format!("status=underdetermined\nfreedom={freedom}\n")
        }
        (FixedFlowSolution::Inconsistent, _) => {
            return Err(Failure {
                kind: "infeasible",
                code: 1,
                message: "fixed flows are inconsistent with the nodal balance".into(),
                stdout: String::new(),
            })
        }
    };
    Ok(text)
}

fn placements_footer(pairs: &[NodePair]) -> String {
    let list: Vec<String> = pairs.iter().map(|p| p.to_string()).collect();
    format!("placements={}", list.join(";"))
}

fn run_place_cv(args: &CaseArgs, count: usize, cos_threshold: f64, cap: usize) -> Outcome {
    if !(0.0..=1.0).contains(&cos_threshold) {
        return Err(Failure::input(format!(
            "cos threshold must lie in [0, 1], got {cos_threshold}"
        )));
    }
    let net = load(args)?;
    let p = ptdf(&net)?;
    let (chosen, steps) = place_cv_sequence(&p, count, cos_threshold, cap)?;
    Ok(match args.output.unwrap_or(OutputFormat::Csv) {
        OutputFormat::Json => json_line(&json!({ "placements": chosen, "steps": steps })),
        OutputFormat::Csv => {
            let mut csv = Csv::default();
            csv.row(["step", "pair", "cosphi", "dimension", "log_volume", "selected"]);
            for step in &steps {
                for r in &step.rows {
                    csv.row([
                        step.step.to_string(),
                        r.pair.to_string(),
                        r.cosphi.map(num).unwrap_or_default(),
                        r.score.map(|s| s.dimension.to_string()).unwrap_or_default(),
                        r.score.map(|s| num(s.log_volume)).unwrap_or_default(),
                        u8::from(r.selected).to_string(),
                    ]);
                }
            }
            csv.line(&placements_footer(&chosen));
            csv.finish()
        }
    })
}

fn run_metrics(args: &CaseArgs) -> Outcome {
    let net = load(args)?;
    let p = ptdf(&net)?;
    let by_volume = first_placement(&p)?;
    let by_norm = rank_by_norm1(&p)?;
    let rho = metric_correlation(&p)?;
    let mut rows = Vec::new();
    for (vrank, (pair, score)) in by_volume.iter().enumerate() {
        let (nrank, norm) = by_norm
            .iter()
            .enumerate()
            .find(|(_, (q, _))| q == pair)
            .map(|(i, (_, n))| (i, *n))
            .expect("both rankings cover every pair");
        rows.push((pair, score, vrank + 1, norm, nrank + 1));
    }
    Ok(match args.output.unwrap_or(OutputFormat::Csv) {
        OutputFormat::Json => json_line(&json!({
            "spearman": rho,
            "top_agree": by_volume[0].0 == by_norm[0].0,
            "rows": rows.iter().map(|(pair, s, vr, n, nr)| json!({
                "pair": pair, "log_volume": s.log_volume, "dimension": s.dimension,
                "volume_rank": vr, "norm1": n, "norm1_rank": nr,
            })).collect::<Vec<_>>(),
        })),
        OutputFormat::Csv => {
            let mut csv = Csv::default();
            csv.row(["pair", "dimension", "log_volume", "volume_rank", "norm1", "norm1_rank"]);
            for (pair, s, vr, n, nr) in &rows {
                csv.row([
                    pair.to_string(),
                    s.dimension.to_string(),
                    num(s.log_volume),
                    vr.to_string(),
                    num(*n),
                    nr.to_string(),
                ]);
            }
            csv.line(&format!("spearman={}", num(rho)));
            csv.line(&format!("top_agree={}", by_volume[0].0 == by_norm[0].0));
            csv.finish()
        }
    })
}

fn run_place_lp(args: &CaseArgs, count: usize, strategy: DeltaStrategy, pdc_max: Option<f64>) -> Outcome {
    check_positive(pdc_max, "--pdc-max")?;
    if count == 0 {
        return Err(Failure::input("--count must be at least 1"));
    }
    let net = load(args)?;
    let p = ptdf(&net)?;
    let (chosen, steps) = place_lp_sequence(&net, &p, count, strategy, pdc_max)?;
    Ok(match args.output.unwrap_or(OutputFormat::Csv) {
        OutputFormat::Json => json_line(&json!({ "placements": chosen, "steps": steps })),
        OutputFormat::Csv => {
            let last = steps.last().expect("count is positive");
            let mut csv = Csv::default();
            csv.row([
                "pair",
                "total_effort_MW",
                "relative_percent",
                "infeasible_sets",
                "lp_count",
            ]);
            for c in &last.candidates {
                csv.row([
                    c.pair.to_string(),
                    num(c.result.total_effort),
                    num(c.relative_percent),
                    c.result.infeasible_sets.to_string(),
                    c.result.lp_count.to_string(),
                ]);
            }
            csv.line(&placements_footer(&chosen));
            csv.line(&format!("lp_count={}", last.lp_count));
            csv.finish()
        }
    })
}

fn run_compare(
    args: &CaseArgs,
    count: usize,
    strategy: DeltaStrategy,
    cos_threshold: f64,
    pdc_max: Option<f64>,
) -> Outcome {
    check_positive(pdc_max, "--pdc-max")?;
    let net = load(args)?;
    let p = ptdf(&net)?;
    let (cv, _) = place_cv_sequence(&p, count, cos_threshold, place_cv::DEFAULT_CANDIDATE_CAP)?;
    let (lp, _) = place_lp_sequence(&net, &p, count, strategy, pdc_max)?;
    let table = compare_placements(&cv, &lp);
    Ok(match args.output.unwrap_or(OutputFormat::Csv) {
        OutputFormat::Json => json_line(&table),
        OutputFormat::Csv => {
            let mut csv = Csv::default();
            csv.row(["step", "cv_pair", "lp_pair", "agree"]);
            for r in &table {
                csv.row([
                    r.step.to_string(),
                    r.cv_pair.map(|p| p.to_string()).unwrap_or_default(),
                    r.lp_pair.map(|p| p.to_string()).unwrap_or_default(),
                    u8::from(r.agree).to_string(),
                ]);
            }
            csv.finish()
        }
    })
}

fn run_opf(args: &CaseArgs, opf: &OpfArgs, security: Option<(SecurityMode, Vec<u32>)>) -> Outcome {
    check_positive(opf.pdc_max, "--pdc-max")?;
    let placements = opf
        .placements
        .iter()
        .map(|s| parse_pair(s))
        .collect::<Result<Vec<_>, _>>()?;
    let net = load(args)?;
    let opts = OpfOptions {
        p_dc_max: opf.pdc_max,
        segments: opf.segments,
    };
    let sol = match &security {
        None => dc_opf(&net, &placements, &opts)?,
        Some((mode, given)) => {
            let list = contingencies(&net, given)?;
            sc_opf(&net, &list, &placements, &opts, *mode)?
        }
    };
    Ok(match args.output.unwrap_or(OutputFormat::Json) {
        OutputFormat::Json => json_line(&json!({
            "status": "optimal",
            "placements": placements,
            "line_ids": net.lines.iter().map(|l| l.id).collect::<Vec<_>>(),
            "generator_buses": net.generators.iter().map(|g| g.bus).collect::<Vec<_>>(),
            "solution": sol,
        })),
        OutputFormat::Csv => opf_csv(&net, &placements, &sol),
    })
}

fn opf_csv(net: &Network, placements: &[NodePair], sol: &OpfSolution) -> String {
    let mut csv = Csv::default();
    csv.row(["quantity", "key", "value"]);
    for (g, p) in net.generators.iter().zip(&sol.dispatch.p_gen) {
        csv.row(["p_gen_MW".to_string(), g.bus.to_string(), num(*p)]);
    }
    for (l, f) in net.lines.iter().zip(&sol.flows) {
        csv.row(["flow_MW".to_string(), l.id.to_string(), num(*f)]);
    }
    for (pair, v) in placements.iter().zip(&sol.hvdc_base) {
        csv.row(["p_dc_MW".to_string(), pair.to_string(), num(*v)]);
    }
    for c in &sol.hvdc_contingency {
        for (pair, v) in placements.iter().zip(&c.p_dc) {
            csv.row([format!("p_dc_MW@{}", c.line), pair.to_string(), num(*v)]);
        }
    }
    csv.row(["cost".to_string(), String::new(), num(sol.cost)]);
    csv.row(["objective".to_string(), String::new(), num(sol.objective)]);
    csv.finish()
}

fn run_cos_curve(
    args: &CaseArgs,
    max: usize,
    algorithm: PlacementAlgorithm,
    opts: &OpfOptions,
    mode: SecurityMode,
    given: &[u32],
    plot: Option<&Path>,
) -> Outcome {
    check_positive(opts.p_dc_max, "--pdc-max")?;
    let net = load(args)?;
    let list = contingencies(&net, given)?;
    let curve = cos_curve(&net, &list, max, algorithm, opts, mode)?;
    if let Some(path) = plot {
        let mut dat = String::from("# controllers cos_percent\n");
        for pt in &curve.points {
            dat.push_str(&format!("{} {}\n", pt.count, num(pt.cos_percent)));
        }
        fs::write(path, dat).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(match args.output.unwrap_or(OutputFormat::Csv) {
        OutputFormat::Json => json_line(&curve),
        OutputFormat::Csv => {
            let mut csv = Csv::default();
            csv.row(["count", "pair_m", "pair_n", "cos_percent", "cos_abs"]);
            for pt in &curve.points {
                csv.row([
                    pt.count.to_string(),
                    pt.pair.map(|p| p.m.to_string()).unwrap_or_default(),
                    pt.pair.map(|p| p.n.to_string()).unwrap_or_default(),
                    num(pt.cos_percent),
                    num(pt.cos_abs),
                ]);
            }
            csv.finish()
        }
    })
}
