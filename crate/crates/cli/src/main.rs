use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seqloc::config::PipelineConfig;
use seqloc::ingest::load_dataset;
use seqloc::matching::MatcherKind;
use seqloc::pgo::PgoMode;
use seqloc::pipeline::{concat_csvs, run_evaluate, run_localize, write_localize_outputs};
use seqloc::simulator::{generate, read_spec, SceneSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NOT_LOCALIZED: u8 = 3;

#[derive(Parser)]
#[command(version, about = "Localize posed query sequences against posed reference images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Simulate {
        /// Scene spec (TOML); defaults are used for missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the scene file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Localize every query batch of a dataset.
    Localize(LocalizeArgs),
    /// Compare estimated poses with ground truth.
    Evaluate {
        /// Directory holding the `poses.csv` written by `localize`.
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Concatenate CSV files with identical headers, adding a `source` column.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(clap::Args)]
struct LocalizeArgs {
    /// Pipeline config (TOML). Keys set here win over flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Batches localized concurrently; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_parser = parse_matcher)]
    matcher: Option<MatcherKind>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PgoMode>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_matcher(s: &str) -> Result<MatcherKind, String> {
    toml::Value::String(s.into()).try_into().map_err(|_| {
        format!("unknown matcher `{s}` (expected descriptor_mnn, precomputed_file or synthetic_oracle)")
    })
}

fn parse_mode(s: &str) -> Result<PgoMode, String> {
    toml::Value::String(s.into())
        .try_into()
        .map_err(|_| format!("unknown mode `{s}` (expected paper_literal or prior_augmented)"))
}

struct Failure(u8, String);

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Self(EXIT_USAGE, e.to_string())
    }

    fn data(e: impl std::fmt::Display) -> Self {
        Self(EXIT_DATA, e.to_string())
    }
}

fn resolve_config(args: &LocalizeArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::default();
    if let Some(p) = &args.dataset {
        cfg.paths.dataset = Some(p.clone());
    }
    if let Some(p) = &args.out {
        cfg.paths.output = Some(p.clone());
    }
    if let Some(k) = args.k {
        cfg.retrieval.k = k;
    }
    if let Some(n) = args.batch {
        cfg.batch.n = n;
    }
    if let Some(m) = args.matcher {
        cfg.matching.kind = m;
    }
    if let Some(m) = args.mode {
        cfg.pgo.mode = m;
    }
    if let Some(s) = args.seed {
        cfg.pnp.seed = s;
        cfg.matching.seed = s;
    }
    match &args.config {
        Some(path) => cfg.overlay_file(path).map_err(Failure::usage),
        None => {
            cfg.validate().map_err(Failure::usage)?;
            Ok(cfg)
        }
    }
}

fn localize(args: &LocalizeArgs) -> Result<(), Failure> {
    let cfg = resolve_config(args)?;
    let dataset_dir = cfg
        .paths
        .dataset
        .clone()
        .ok_or_else(|| Failure::usage("no dataset path (set --dataset or paths.dataset)"))?;
    let out_dir = cfg
        .paths
        .output
        .clone()
        .ok_or_else(|| Failure::usage("no output directory (set --out or paths.output)"))?;
    let dataset = load_dataset(&dataset_dir).map_err(Failure::data)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build().map_err(Failure::usage)?;
    let results = pool
        .install(|| run_localize(&dataset, &cfg))
        .map_err(Failure::data)?;
    write_localize_outputs(&out_dir, &results).map_err(Failure::data)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml()).map_err(Failure::data)?;

    let localized = results.iter().filter(|b| b.localized()).count();
    log::info!("{localized} of {} batches localized", results.len());
    if localized == 0 {
        return Err(Failure(EXIT_NOT_LOCALIZED, "no batch was localized".into()));
    }
    Ok(())
}

fn simulate(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut spec = match spec {
        Some(p) => read_spec(p).map_err(Failure::usage)?,
        None => SceneSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let sim = generate(&spec).map_err(Failure::usage)?;
    sim.write(out).map_err(Failure::data)?;
    log::info!(
        "wrote {} references and {} query frames to {}",
        sim.dataset.references.len(),
        sim.truth.poses.len(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { spec, out, seed } => simulate(spec.as_deref(), &out, seed),
        Command::Localize(args) => localize(&args),
        Command::Evaluate { est, gt, out } => {
            let s = run_evaluate(&est, &gt, &out, &seqloc::eval::default_thresholds()).map_err(Failure::data)?;
            println!(
                "{} of {} frames localized ({:.1}%), median error {} m / {} deg",
                s.n_localized,
                s.n_frames,
                s.pct_localized,
                s.median_trans_m.map_or("-".into(), |v| format!("{v:.4}")),
                s.median_rot_deg.map_or("-".into(), |v| format!("{v:.3}")),
            );
            Ok(())
        }
        Command::Report { out, inputs } => {
            let n = concat_csvs(&inputs, &out).map_err(Failure::data)?;
            log::info!("wrote {n} rows to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
