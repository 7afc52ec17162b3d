use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sentinel_core::config::RunConfig;
use sentinel_core::epidemic::summarize;
use sentinel_core::io;
use sentinel_core::pipeline::{self, MatrixFormat, Stage, StageError, StageResult};
use sentinel_core::Error;

#[derive(Parser)]
#[command(name = "sentinel", version, about = "Absenteeism-based influenza early warning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate catchments, schools, households and individuals.
    SimulatePopulation(Common),
    /// Simulate epidemic seasons over the population.
    SimulateEpidemic(Common),
    /// Build the surveillance table from population and epidemic files.
    Compile(Common),
    /// Grid-search lag and threshold and score every alert metric.
    Evaluate(Common),
    /// Draw the epidemic and alert figures.
    Plot(Common),
    /// Run every stage in sequence.
    Run(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// TOML (or .json) run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "SENTINEL_THREADS")]
    threads: Option<usize>,
    /// Metric matrix format.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

impl Common {
    fn load(&self) -> StageResult<RunConfig> {
        let stage = |error| StageError { stage: Stage::Config, error };
        let mut config = match &self.config {
            Some(path) => RunConfig::from_path(path).map_err(stage)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if self.threads.is_some() {
            config.threads = self.threads;
        }
        config.validate().map_err(stage)?;
        Ok(config)
    }

    fn matrix_format(&self) -> MatrixFormat {
        match self.format {
            Format::Csv => MatrixFormat::Csv,
            Format::Json => MatrixFormat::Json,
        }
    }
}

fn at(stage: Stage) -> impl Fn(Error) -> StageError {
    move |error| StageError { stage, error }
}

fn population_size(config: &RunConfig, dir: &Path) -> StageResult<usize> {
    let path = dir.join(pipeline::INDIVIDUALS_FILE);
    if path.exists() {
        Ok(io::read_individuals_csv(&path).map_err(at(Stage::Epidemic))?.len())
    } else {
        Ok(pipeline::population_stage(config)?.size())
    }
}

fn execute(command: &Command, config: &RunConfig, format: MatrixFormat) -> StageResult<()> {
    let dir = config.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| at(Stage::Config)(e.into()))?;
    match command {
        Command::SimulatePopulation(_) => {
            let population = pipeline::population_stage(config)?;
            pipeline::write_population(dir, &population).map_err(at(Stage::Population))?;
            eprintln!(
                "{} households, {} individuals, {} enrolled students",
                population.households.len(),
                population.size(),
                population.enrolled()
            );
        }
        Command::SimulateEpidemic(_) => {
            let size = if config.epidemic.n == 0 { population_size(config, dir)? } else { 0 };
            let epidemics = pipeline::epidemic_stage(config, size)?;
            pipeline::write_epidemics(dir, &epidemics).map_err(at(Stage::Epidemic))?;
            let s = summarize(&epidemics);
            eprintln!(
                "{} seasons: mean infected {:.1}, mean reported {:.1}, mean peak {:.1}",
                s.n_sims, s.avg_total_infected, s.avg_total_reported, s.avg_peak_infected
            );
        }
        Command::Compile(_) => {
            let population = pipeline::read_population(dir).map_err(at(Stage::Surveillance))?;
            let epidemics = io::read_epidemic_csv(&dir.join(pipeline::EPIDEMIC_FILE), config.epidemic.inf_period)
                .map_err(at(Stage::Surveillance))?;
            let (dataset, warnings) = pipeline::surveillance_stage(config, &epidemics, &population)?;
            for w in &warnings {
                eprintln!("warning: school year {}: {}", w.school_year, w.message);
            }
            io::write_surveillance_csv(&dir.join(pipeline::SURVEILLANCE_FILE), &dataset)
                .map_err(at(Stage::Surveillance))?;
            eprintln!("{} rows x {} columns", dataset.rows.len(), dataset.column_names().len());
        }
        Command::Evaluate(_) => {
            let dataset =
                io::read_surveillance_csv(&dir.join(pipeline::SURVEILLANCE_FILE)).map_err(at(Stage::Evaluation))?;
            let grid = pipeline::evaluation_stage(config, &dataset)?;
            pipeline::write_evaluation(dir, &grid, format).map_err(at(Stage::Evaluation))?;
            print!("{}", io::AlertSummary::from_grid(&grid).render());
        }
        Command::Plot(_) => {
            let load = || -> sentinel_core::Result<bool> {
                let epidemics = io::read_epidemic_csv(&dir.join(pipeline::EPIDEMIC_FILE), config.epidemic.inf_period)?;
                let dataset = io::read_surveillance_csv(&dir.join(pipeline::SURVEILLANCE_FILE))?;
                let selected = pipeline::read_selected_alerts(&dir.join(pipeline::SELECTED_ALERTS_FILE))?;
                pipeline::write_figures(dir, config.plot.epidemic_year, &epidemics, &dataset, &selected)
            };
            if !load().map_err(at(Stage::Plot))? {
                eprintln!(
                    "warning: school year {} has no reference date; alert figure skipped",
                    config.plot.epidemic_year
                );
            }
        }
        Command::Run(_) => {
            let out = pipeline::compute(config)?;
            for w in &out.warnings {
                eprintln!("warning: school year {}: {}", w.school_year, w.message);
            }
            pipeline::write_outputs(dir, config, &out, format)?;
            print!("{}", io::AlertSummary::from_grid(&out.grid).render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::SimulatePopulation(c)
        | Command::SimulateEpidemic(c)
        | Command::Compile(c)
        | Command::Evaluate(c)
        | Command::Plot(c)
        | Command::Run(c) => c,
    };
    let mut written = false;
    let result = common.load().and_then(|config| {
        let r = pipeline::with_threads(config.threads, || execute(&cli.command, &config, common.matrix_format()))
            .map_err(at(Stage::Config))
            .and_then(|r| r);
        if let Err(e) = &r {
            e.write_json(&config.output_dir);
            written = true;
        }
        r
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let (false, Some(dir)) = (written, &common.out) {
                let _ = std::fs::create_dir_all(dir);
                e.write_json(dir);
            }
            eprintln!("error: {e}");
            eprintln!("{}", serde_json::to_string(&e.to_json()).unwrap_or_default());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
