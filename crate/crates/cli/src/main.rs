use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod format;

/// Power-flow controller placement and security-constrained DC-OPF.
#[derive(Parser, Debug)]
#[command(name = "gridctrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CaseArgs {
    /// Case file (MATPOWER `.m` subset or native JSON).
    pub case: PathBuf,
    /// Case format; `auto` picks MATPOWER for `.m` files.
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    pub format: InputFormat,
    /// Output format; each subcommand has its own default.
    #[arg(long, value_enum)]
    pub output: Option<OutputFormat>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Auto,
    Matpower,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyArg {
    Const,
    Limit,
    Reactance,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Preventive,
    Corrective,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgorithmArg {
    Cv,
    Lp,
}

#[derive(Args, Debug, Clone)]
pub struct OpfArgs {
    /// HVDC links as `m-n` pairs, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub placements: Vec<String>,
    /// HVDC setpoint bound in MW (unbounded when omitted).
    #[arg(long)]
    pub pdc_max: Option<f64>,
    /// Piecewise-linear segments per quadratic cost curve.
    #[arg(long, default_value_t = gridctrl::opf::DEFAULT_SEGMENTS)]
    pub segments: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a case and list every violation.
    Validate(CaseArgs),
    /// Dump the PTDF matrix.
    Ptdf(CaseArgs),
    /// Dump controllability vectors.
    Cv {
        #[command(flatten)]
        case: CaseArgs,
        /// Node pair `m,n`.
        #[arg(long, value_delimiter = ',', conflicts_with = "all", required_unless_present = "all")]
        pair: Vec<u32>,
        /// Every node pair.
        #[arg(long)]
        all: bool,
    },
    /// Dump line outage distribution factors.
    Lodf(CaseArgs),
    /// Series and parallel controller bounds.
    Bounds(CaseArgs),
    /// Solve the nodal balance with some line flows fixed.
    FixFlows {
        #[command(flatten)]
        case: CaseArgs,
        /// Bus injections `bus=MW`, comma separated; must balance.
        #[arg(long, value_delimiter = ',', required = true)]
        inject: Vec<String>,
        /// Fixed line flows `line=MW`, comma separated.
        #[arg(long, value_delimiter = ',')]
        fix: Vec<String>,
    },
    /// Greedy placement by controllability-vector volume.
    PlaceCv {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = gridctrl::place_cv::DEFAULT_COS_THRESHOLD)]
        cos_threshold: f64,
        /// Maximum candidates scored per step.
        #[arg(long, default_value_t = gridctrl::place_cv::DEFAULT_CANDIDATE_CAP)]
        cap: usize,
        /// Emit the 1-norm versus volume comparison of first placements instead.
        #[arg(long)]
        metrics: bool,
    },
    /// Greedy placement by minimum control effort.
    PlaceLp {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        count: usize,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long)]
        pdc_max: Option<f64>,
    },
    /// Side-by-side placements of both algorithms.
    ComparePlacements {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        count: usize,
        #[arg(long, value_enum, default_value_t = StrategyArg::Limit)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = gridctrl::place_cv::DEFAULT_COS_THRESHOLD)]
        cos_threshold: f64,
        #[arg(long)]
        pdc_max: Option<f64>,
    },
    /// DC optimal power flow.
    Opf {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        opf: OpfArgs,
    },
    /// Security-constrained DC optimal power flow.
    ScOpf {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        opf: OpfArgs,
        #[arg(long, value_enum, default_value_t = ModeArg::Preventive)]
        mode: ModeArg,
        /// Outaged line ids; defaults to every non-bridge line.
        #[arg(long, value_delimiter = ',')]
        contingencies: Vec<u32>,
    },
    /// Cost of Security versus number of placed controllers.
    CosCurve {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        max: usize,
        #[arg(long, value_enum)]
        algorithm: AlgorithmArg,
        #[arg(long, value_enum, default_value_t = StrategyArg::Limit)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = gridctrl::place_cv::DEFAULT_COS_THRESHOLD)]
        cos_threshold: f64,
        #[arg(long)]
        pdc_max: Option<f64>,
        #[arg(long, default_value_t = gridctrl::opf::DEFAULT_SEGMENTS)]
        segments: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Corrective)]
        mode: ModeArg,
        #[arg(long, value_delimiter = ',')]
        contingencies: Vec<u32>,
        /// Also write a gnuplot data file.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            let first = rendered
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = commands::configure_threads() {
        return e.report();
    }
    match commands::run(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => e.report(),
    }
}
