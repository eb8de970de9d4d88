use std::fs::{self, File};
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Parser, Subcommand};

use radmi::workflow::{self, RunConfig, Workspace};
use radmi::Result;

/// Seeded pipeline from phantom cohort to AUC report. Each subcommand reads
/// its inputs from and writes its outputs to `<out>/<subcommand>/`.
#[derive(Parser)]
#[command(name = "radmi", version)]
struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Workspace directory.
    #[arg(long, global = true, default_value = "work")]
    out: PathBuf,
    /// Worker threads for per-subject parallel work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the phantom cohort and its manifest.
    GenCohort,
    /// Resample, centre and standardize every subject.
    Preprocess,
    /// Compute the 32 hand-crafted features.
    ExtractHcr,
    /// Train every configured VAE variant on the train split.
    TrainVae,
    /// Encode all subjects with each trained VAE.
    ExtractDlr,
    /// Fit the fold ensembles for every grid configuration and marker.
    TrainClassifier,
    /// Score the test split and bootstrap the AUCs.
    Evaluate,
    /// Retrain with each MI weight and/or latent size and evaluate HCR + DLR.
    /// Without flags the configured MI weights are swept.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        kappa: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        latent: Option<Vec<usize>>,
    },
    /// Render the AUC table, top-k curves and sweep tables.
    Report,
    /// Every stage from gen-cohort to report.
    All,
}

impl Cmd {
    fn stage(&self) -> &'static str {
        match self {
            Cmd::GenCohort => "gen-cohort",
            Cmd::Preprocess => "preprocess",
            Cmd::ExtractHcr => "extract-hcr",
            Cmd::TrainVae => "train-vae",
            Cmd::ExtractDlr => "extract-dlr",
            Cmd::TrainClassifier => "train-classifier",
            Cmd::Evaluate => "evaluate",
            Cmd::Sweep { .. } => "sweep",
            Cmd::Report => "report",
            Cmd::All => "all",
        }
    }
}

/// Log sink writing to stderr and the stage's log file.
struct Tee(Mutex<File>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stderr().write_all(buf)?;
        self.0.lock().expect("log file lock").write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.lock().expect("log file lock").flush()
    }
}

fn init_logging(cli: &Cli) -> io::Result<()> {
    let dir = cli.out.join(cli.cmd.stage());
    fs::create_dir_all(&dir)?;
    let file = File::create(dir.join("log.txt"))?;
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .parse_env(env_logger::Env::new().filter("RADMI_LOG"))
        .target(env_logger::Target::Pipe(Box::new(Tee(Mutex::new(file)))))
        .init();
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    let ws = Workspace::new(&cli.out);
    match &cli.cmd {
        Cmd::GenCohort => workflow::gen_cohort(&ws, &cfg).map(drop),
        Cmd::Preprocess => workflow::preprocess(&ws, &cfg).map(drop),
        Cmd::ExtractHcr => workflow::extract_hcr(&ws, &cfg).map(drop),
        Cmd::TrainVae => workflow::train_vae(&ws, &cfg),
        Cmd::ExtractDlr => workflow::extract_dlr(&ws, &cfg),
        Cmd::TrainClassifier => workflow::train_classifier(&ws, &cfg),
        Cmd::Evaluate => workflow::evaluate(&ws, &cfg).map(drop),
        Cmd::Sweep { kappa, latent } => {
            let (k, l) = match (kappa, latent) {
                (None, None) => (cfg.sweep.kappa.clone(), Vec::new()),
                (k, l) => (k.clone().unwrap_or_default(), l.clone().unwrap_or_default()),
            };
            workflow::sweep(&ws, &cfg, &k, &l).map(drop)
        }
        Cmd::Report => workflow::report(&ws, &cfg),
        Cmd::All => workflow::run_all(&ws, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    if let Err(e) = init_logging(&cli) {
        eprintln!("error: cannot open log in {}: {e}", cli.out.display());
        return ExitCode::FAILURE;
    }
    match run(&cli) {
        Ok(()) => {
            log::info!("{} finished", cli.cmd.stage());
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
