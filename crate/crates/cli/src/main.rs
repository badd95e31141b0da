use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cem_logrank::experiment::{run_experiment, MethodChoice};
use cem_logrank::{
    fit_logistic, generate_replicate, iptw_logrank, iptw_weights, match_cohort, read_cohort_csv, run_test,
    write_cohort_csv, AssignmentModel, CoarseningScheme, Cohort, Direction, Error, ExperimentConfig, Hypothesis,
    LogisticOptions, MatchedCohort, Placement, Scenario, SchemeSpec, WeightFunction,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "cem-logrank", version, about = "CEM weighted log-rank test for censored survival data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coarsen and match a cohort; prints the placement of every subject.
    Match(MatchArgs),
    /// Run the CEM or IPTW log-rank test on a cohort.
    Test(TestArgs),
    /// Simulate a cohort and write it as CSV.
    Simulate(SimulateArgs),
    /// Run a Monte-Carlo experiment from a JSON config.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct CohortArgs {
    /// Cohort CSV with header id,x1..xd,z,time,event.
    #[arg(long)]
    input: PathBuf,
    /// Number of leading continuous covariates; taken from --scheme when given.
    #[arg(long)]
    continuous_dims: Option<usize>,
    /// Horizon τ; defaults to the largest observed time.
    #[arg(long)]
    horizon: Option<f64>,
    /// Coarsening scheme JSON (grid or explicit edges).
    #[arg(long)]
    scheme: Option<PathBuf>,
    /// Grid exponent: ⌊n^θ⌋ bins per continuous dimension, used without --scheme.
    #[arg(long, default_value_t = 0.3)]
    theta: f64,
    /// Lower edge of the grid box in every continuous dimension.
    #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
    box_lo: f64,
    /// Upper edge of the grid box in every continuous dimension.
    #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
    box_hi: f64,
}

#[derive(Args)]
struct MatchArgs {
    #[command(flatten)]
    cohort: CohortArgs,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestMethod {
    Cem,
    Iptw,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Upper,
    Lower,
    TwoSided,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Upper => Direction::Upper,
            DirectionArg::Lower => Direction::Lower,
            DirectionArg::TwoSided => Direction::TwoSided,
        }
    }
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    cohort: CohortArgs,
    #[arg(long, value_enum, default_value = "cem")]
    method: TestMethod,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "two-sided")]
    direction: DirectionArg,
    /// Weight function JSON {"breakpoints": [...], "values": [...]}; defaults to 1.
    #[arg(long)]
    weight_fn: Option<PathBuf>,
    /// Zero-based covariates in the propensity model (IPTW).
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    iptw_features: Vec<usize>,
    /// Truncate IPTW weights at this value.
    #[arg(long)]
    weight_cap: Option<f64>,
    /// Include the statistic path at every event time.
    #[arg(long)]
    path: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Model1,
    Model2,
}

#[derive(Clone, Copy, ValueEnum)]
enum HypothesisArg {
    Null,
    Alternative,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON; the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long, value_enum)]
    hypothesis: Option<HypothesisArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replicate index (RNG stream).
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Cem,
    Iptw,
    Both,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    weight_fn: Option<PathBuf>,
    /// Directory for summary.json and samples.csv; without it the summary goes to stdout.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Error> {
    match output {
        Some(p) => fs::write(p, format!("{text}\n"))?,
        None => writeln!(io::stdout(), "{text}")?,
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes")
}

fn load_cohort(args: &CohortArgs) -> Result<(Cohort<f64>, Option<CoarseningScheme<f64>>), Error> {
    let scheme = match &args.scheme {
        Some(p) => Some(CoarseningScheme::from_spec(read_json::<SchemeSpec<f64>>(p)?)?),
        None => None,
    };
    let continuous = match (&scheme, args.continuous_dims) {
        (Some(s), _) => s.continuous_dims(),
        (None, Some(d)) => d,
        (None, None) => {
            return Err(Error::InvalidArgument("--continuous-dims is required without --scheme".into()))
        }
    };
    let reader = BufReader::new(File::open(&args.input)?);
    let cohort = read_cohort_csv(reader, continuous, args.horizon)?;
    Ok((cohort, scheme))
}

fn scheme_for(args: &CohortArgs, cohort: &Cohort<f64>, given: Option<CoarseningScheme<f64>>) -> Result<CoarseningScheme<f64>, Error> {
    if let Some(s) = given {
        return Ok(s);
    }
    if !(args.theta > 0.0) {
        return Err(Error::InvalidArgument("--theta must be positive".into()));
    }
    let continuous = args.continuous_dims.unwrap_or(0);
    let bins = ((cohort.len() as f64).powf(args.theta).floor() as usize).max(1);
    CoarseningScheme::grid(
        &vec![args.box_lo; continuous],
        &vec![args.box_hi; continuous],
        bins,
        cohort.dim() - continuous,
    )
}

fn matched(args: &CohortArgs) -> Result<MatchedCohort<f64>, Error> {
    let (cohort, given) = load_cohort(args)?;
    let scheme = scheme_for(args, &cohort, given)?;
    let mc = match_cohort(&cohort, &scheme)?;
    if mc.n1() == 0 {
        eprintln!("warning: no subject was matched; the statistic is 0");
    }
    Ok(mc)
}

fn run_match(args: MatchArgs) -> Result<(), Error> {
    let mc = matched(&args.cohort)?;
    let placements: Vec<_> = mc
        .cohort()
        .subjects()
        .iter()
        .zip(mc.placements())
        .map(|(s, p)| match p {
            Placement::Matched { arm, cell } => json!({
                "id": s.id, "matched": true, "arm": arm, "stratum": mc.cells()[*cell].stratum,
            }),
            Placement::Unmatched { stratum, reason } => json!({
                "id": s.id, "matched": false, "arm": s.arm, "stratum": stratum, "reason": reason,
            }),
        })
        .collect();
    let out = json!({ "scheme": mc.scheme(), "summary": mc.summary(), "placements": placements });
    emit(args.output.as_deref(), &to_json(&out))
}

fn run_test_cmd(args: TestArgs) -> Result<(), Error> {
    let w: WeightFunction<f64> = match &args.weight_fn {
        Some(p) => read_json(p)?,
        None => WeightFunction::default(),
    };
    let direction = args.direction.into();
    let out = match args.method {
        TestMethod::Cem => {
            let mc = matched(&args.cohort)?;
            let mut result = run_test(&mc, &w, args.alpha, direction)?;
            if !args.path {
                result.path = None;
            }
            json!({ "result": result, "scheme": mc.scheme(), "match": mc.summary() })
        }
        TestMethod::Iptw => {
            let (cohort, _) = load_cohort(&args.cohort)?;
            let model = fit_logistic(&cohort, &args.iptw_features, &LogisticOptions::default())?;
            let weights = iptw_weights(&model, &cohort, args.weight_cap)?;
            let mut result = iptw_logrank(&cohort, &weights, &w, args.alpha, direction)?;
            if !args.path {
                result.path = None;
            }
            json!({ "result": result, "propensity_model": model, "max_weight": weights.max() })
        }
    };
    emit(args.output.as_deref(), &to_json(&out))
}

fn run_simulate(args: SimulateArgs) -> Result<(), Error> {
    let mut scenario = match &args.config {
        Some(p) => read_json::<Scenario>(p)?,
        None => Scenario::new(5000, AssignmentModel::Model1, Hypothesis::Null, 0),
    };
    if let Some(n) = args.n {
        scenario.n = n;
    }
    if let Some(m) = args.model {
        scenario.assignment_model = match m {
            ModelArg::Model1 => AssignmentModel::Model1,
            ModelArg::Model2 => AssignmentModel::Model2,
        };
    }
    if let Some(h) = args.hypothesis {
        scenario.hypothesis = match h {
            HypothesisArg::Null => Hypothesis::Null,
            HypothesisArg::Alternative => Hypothesis::Alternative,
        };
    }
    if let Some(s) = args.seed {
        scenario.seed = s;
    }
    let cohort: Cohort<f64> = generate_replicate(&scenario, args.replicate)?;
    match &args.output {
        Some(p) => write_cohort_csv(&cohort, File::create(p)?),
        None => write_cohort_csv(&cohort, io::stdout().lock()),
    }
}

fn run_experiment_cmd(args: ExperimentArgs) -> Result<(), Error> {
    let text = fs::read_to_string(&args.config)?;
    let mut config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(s) = args.seed {
        config.scenario.seed = s;
    }
    if let Some(t) = args.threads {
        config.threads = Some(t);
    }
    if let Some(m) = args.method {
        config.method = match m {
            MethodArg::Cem => MethodChoice::Cem,
            MethodArg::Iptw => MethodChoice::Iptw,
            MethodArg::Both => MethodChoice::Both,
        };
    }
    if let Some(a) = args.alpha {
        config.alpha = a;
    }
    if let Some(d) = args.direction {
        config.direction = d.into();
    }
    if let Some(t) = args.theta {
        config.scheme.theta = t;
    }
    if let Some(p) = &args.weight_fn {
        config.weight_fn = Some(read_json(p)?);
    }
    if let Some(d) = args.output_dir {
        config.output_dir = Some(d);
    }
    let out = run_experiment(&config)?;
    match &config.output_dir {
        Some(dir) => {
            out.write_to(dir)?;
            eprintln!("wrote {} and {}", dir.join("summary.json").display(), dir.join("samples.csv").display());
            Ok(())
        }
        None => emit(None, &out.summary_json()),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Match(a) => run_match(a),
        Command::Test(a) => run_test_cmd(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Experiment(a) => run_experiment_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
