use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hallcal_core::hall::{
    build_adjacency, HallLayout, OperatingState, SensorRole, SensorVector, SystemInput,
};
use hallcal_core::io::{
    flow_rates_csv, measurements_csv, read_flow_rates, read_measurements, read_toml, write_text,
    write_toml,
};
use hallcal_core::report::{component_seed, run_method, write_study, Method, RunConfig};
use hallcal_core::solver::{
    generate_case, synthesize_measurements, ExternalConfig, ExternalSolver, HallSizes, Scenario,
    ThermalSolver, ZonalSolver,
};
use hallcal_core::study::{run_study, sample_pool, StudyConfig};
use hallcal_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "hallcal",
    version,
    about = "Surrogate-assisted calibration of data-hall thermal models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a simulated hall with hidden flow rates and synthesized measurements.
    Generate(GenerateArgs),
    /// Calibrate server flow rates against measurements.
    Calibrate(CalibrateArgs),
    /// Compare surrogate test error across training-set sizes.
    StudyDatavolume(StudyArgs),
    /// Run the solver once and print sensor temperatures.
    Solve(SolveArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverKind {
    Zonal,
    External,
}

/// Input files; each defaults to its standard name inside `--case-dir`.
#[derive(Debug, Args)]
struct CaseFiles {
    /// Directory written by `generate`.
    #[arg(long, default_value = ".")]
    case_dir: PathBuf,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    state: Option<PathBuf>,
    /// Zonal-simulator scenario.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// External-solver bridge settings (TOML).
    #[arg(long)]
    external: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SolverKind::Zonal)]
    solver: SolverKind,
}

impl CaseFiles {
    fn path(&self, given: &Option<PathBuf>, name: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.case_dir.join(name))
    }

    fn layout(&self) -> Result<HallLayout, Error> {
        read_toml(&self.path(&self.layout, "layout.toml"))
    }

    fn state(&self) -> Result<OperatingState, Error> {
        read_toml(&self.path(&self.state, "state.toml"))
    }

    fn solver(&self, layout: &HallLayout) -> Result<Box<dyn ThermalSolver>, Error> {
        match self.solver {
            SolverKind::Zonal => {
                let scenario: Scenario = read_toml(&self.path(&self.scenario, "scenario.toml"))?;
                if &scenario.layout != layout {
                    return Err(Error::InvalidConfig(
                        "the scenario's layout differs from the layout file".into(),
                    ));
                }
                Ok(Box::new(ZonalSolver::new(scenario)?))
            }
            SolverKind::External => {
                let path = self.external.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("--solver external needs --external <bridge.toml>".into())
                })?;
                let config: ExternalConfig = read_toml(path)?;
                Ok(Box::new(ExternalSolver::new(config, layout)?))
            }
        }
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    cracs: usize,
    #[arg(long, default_value_t = 64)]
    servers: usize,
    #[arg(long, default_value_t = 24)]
    sensors: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    files: CaseFiles,
    #[arg(long)]
    measurements: Option<PathBuf>,
    /// Run configuration (TOML); `config.toml` of an earlier report reproduces that run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// kalibre, vanilla or heuristic.
    #[arg(long, default_value = "kalibre")]
    method: String,
    /// Overrides the configured seed; component seeds derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Calibration iterations; the heuristic gets 3 + iters solver calls.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct StudyArgs {
    #[command(flatten)]
    files: CaseFiles,
    /// Study configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    #[arg(long)]
    pool: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "study")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    files: CaseFiles,
    /// Per-server flow rates (CSV).
    #[arg(long, conflicts_with = "alpha_value")]
    alpha: Option<PathBuf>,
    /// One flow rate for every server, cfm/W.
    #[arg(long)]
    alpha_value: Option<f64>,
    /// Also write `sensors.csv` here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn generate(args: &GenerateArgs) -> Result<(), Error> {
    let sizes = HallSizes {
        cracs: args.cracs,
        servers: args.servers,
        sensors: args.sensors,
    };
    let case = generate_case(args.seed, &sizes)?;
    let measured = synthesize_measurements(&case.scenario, &case.state)?;
    let dir = &args.out_dir;
    write_toml(&dir.join("layout.toml"), &case.scenario.layout)?;
    write_toml(&dir.join("scenario.toml"), &case.scenario)?;
    write_toml(&dir.join("state.toml"), &case.state)?;
    write_text(
        &dir.join("measurements.csv"),
        &measurements_csv(&case.scenario.layout, &measured),
    )?;
    println!(
        "wrote hall with {} CRACs, {} servers, {} sensors to {}",
        sizes.cracs,
        sizes.servers,
        sizes.sensors,
        dir.display()
    );
    Ok(())
}

fn calibrate(args: &CalibrateArgs) -> Result<(), Error> {
    let method: Method = args.method.parse()?;
    let files = &args.files;
    let layout = files.layout()?;
    let state = files.state()?;
    let measured = read_measurements(&files.path(&args.measurements, "measurements.csv"), &layout)?;
    let mut config = match &args.config {
        Some(path) => read_toml(path)?,
        None => RunConfig::default().seeded(0),
    };
    if let Some(seed) = args.seed {
        config = config.seeded(seed);
    }
    if let Some(iters) = args.iters {
        config = config.with_iterations(iters);
    }
    let mut solver = files.solver(&layout)?;
    match run_method(method, &mut solver, &layout, &state, &measured, &config) {
        Ok(report) => {
            report.write(&args.out_dir)?;
            println!(
                "{method}: best MAE {:.4} °C after {} solver calls; report in {}",
                report.result.best_mae,
                report.result.solver_calls,
                args.out_dir.display()
            );
            Ok(())
        }
        Err(abort) => {
            if let Some(partial) = abort.partial {
                partial.write(&args.out_dir)?;
                eprintln!("partial report written to {}", args.out_dir.display());
            }
            Err(abort.error)
        }
    }
}

fn study(args: &StudyArgs) -> Result<(), Error> {
    let files = &args.files;
    let layout = files.layout()?;
    let state = files.state()?;
    let mut config: StudyConfig = match &args.config {
        Some(path) => read_toml(path)?,
        None => StudyConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
        config.mlp.seed = component_seed(seed, 2);
    }
    if let Some(fractions) = &args.fractions {
        config.fractions.clone_from(fractions);
    }
    if let Some(pool) = args.pool {
        config.pool_size = pool;
    }
    config.validate()?;
    let priors = build_adjacency(&layout, RunConfig::default().adjacency_cut)?;
    let mut solver = files.solver(&layout)?;
    let pool = sample_pool(
        &mut solver,
        &state,
        &config.bounds,
        config.pool_size,
        component_seed(config.seed, 4),
    )?;
    let report = run_study(&pool, &priors, &state, &config)?;
    write_study(&args.out_dir, &config, &report)?;
    println!(
        "{:<22}{}",
        "surrogate",
        config
            .fractions
            .iter()
            .map(|f| format!("{f:>9}"))
            .collect::<String>()
    );
    for chunk in report.cells.chunks(config.fractions.len()) {
        let row: String = chunk
            .iter()
            .map(|c| format!("{:>9.4}", c.test_mae))
            .collect();
        println!("{:<22}{row}", chunk[0].surrogate.name());
    }
    Ok(())
}

fn solve(args: &SolveArgs) -> Result<(), Error> {
    let files = &args.files;
    let layout = files.layout()?;
    let state = files.state()?;
    let alpha = match (&args.alpha, args.alpha_value) {
        (Some(path), _) => read_flow_rates(path, &layout)?,
        (None, Some(v)) => vec![v; layout.server_count()],
        (None, None) => {
            return Err(Error::InvalidInput(
                "give --alpha <file> or --alpha-value <v>".into(),
            ));
        }
    };
    let mut solver = files.solver(&layout)?;
    let out = solver.solve(&SystemInput::new(&state, alpha.clone()))?;
    let out = SensorVector::new(out.values, SensorRole::SolverOutput);
    let text = measurements_csv(&layout, &out);
    if let Some(dir) = &args.out_dir {
        write_text(&dir.join("sensors.csv"), &text)?;
        write_text(
            &dir.join("flow_rates.csv"),
            &flow_rates_csv(&layout, &alpha),
        )?;
    }
    print!("{text}");
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::UnknownMethod(_) => EXIT_USAGE,
        e if e.is_solver_failure() => EXIT_SOLVER,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::StudyDatavolume(a) => study(a),
        Command::Solve(a) => solve(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
