use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use impute_ate::config::{parse_config_for, Command, RunConfig};
use impute_ate::io::{
    read_csv_dataset, to_json_string, write_json, write_report, write_rows_csv, write_weights_csv, DatasetInfo,
    EstimateReport, WeightsReport, VERSION,
};
use impute_ate::simulation::{efficiency_bound, forest_diag, run_mc, DgpSpec};
use impute_ate::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "impute-ate", version, about = "Regression-adjusted imputation estimators of the ATE")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate the ATE on a CSV dataset.
    Estimate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a Monte Carlo study on a synthetic process.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Per-replication CSV.
        #[arg(long)]
        rows: Option<PathBuf>,
    },
    /// Dump the smoothing matrix as `i,j,w` triplets.
    Weights {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Summary JSON (printed to stdout when omitted).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Treatment effect and efficiency bound of a synthetic process.
    Bound {
        #[command(flatten)]
        common: Common,
    },
    /// Leaf-diameter study for honest forests.
    ForestDiag {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Consistency => 4,
            })
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("IMPUTE_ATE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidParameter(format!("IMPUTE_ATE_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn load_config(common: &Common, cmd: Command) -> Result<RunConfig> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| io_error(&common.config, e))?;
    let mut cfg = parse_config_for(&text, cmd)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.display().to_string());
    }
    Ok(cfg)
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn data_path(flag: Option<PathBuf>, cfg: &mut RunConfig) -> Result<PathBuf> {
    if let Some(p) = flag {
        cfg.data = Some(p.display().to_string());
    }
    cfg.data.as_ref().map(PathBuf::from).ok_or_else(|| Error::Config {
        pointer: "/data".into(),
        message: "no dataset given (use --data or the config's data field)".into(),
    })
}

fn emit<T: serde::Serialize>(value: &T, out: Option<&str>) -> Result<()> {
    match out {
        Some(p) => write_json(value, p),
        None => {
            print!("{}", to_json_string(value)?);
            Ok(())
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Estimate { data, common } => {
            let mut cfg = load_config(&common, Command::Estimate)?;
            let path = data_path(data, &mut cfg)?;
            let ds = read_csv_dataset(&path)?;
            let start = Instant::now();
            let est = cfg.estimator()?.run(&ds, cfg.seed)?;
            let wall = start.elapsed().as_secs_f64();
            let report = EstimateReport::new(cfg.clone(), &ds, est, wall);
            match &cfg.out {
                Some(p) => write_report(&report, p),
                None => {
                    impute_ate::io::IdentityCheck::of(&report.estimate).verify()?;
                    print!("{}", to_json_string(&report)?);
                    Ok(())
                }
            }
        }
        Cmd::Simulate { common, rows } => {
            let mut cfg = load_config(&common, Command::Simulate)?;
            if let Some(r) = rows {
                cfg.rows = Some(r.display().to_string());
            }
            let dgp = cfg.dgp()?;
            let est = cfg.estimator()?;
            let grid = cfg.n_grid.clone().unwrap_or_default();
            let report = run_mc(&dgp, &est, &grid, cfg.replications.unwrap_or(0), cfg.seed)?;
            if let Some(p) = &cfg.rows {
                write_rows_csv(report.rows(), p)?;
            }
            emit(&report, cfg.out.as_deref())
        }
        Cmd::Weights { data, common, summary } => {
            let mut cfg = load_config(&common, Command::Weights)?;
            let path = data_path(data, &mut cfg)?;
            let ds = read_csv_dataset(&path)?;
            let sm = cfg.estimator()?.smoother.build(&ds, cfg.seed)?;
            let out = cfg.out.clone().ok_or_else(|| Error::Config {
                pointer: "/out".into(),
                message: "weights needs an output path (--out)".into(),
            })?;
            write_weights_csv(&sm, &out)?;
            let report = WeightsReport {
                version: VERSION.into(),
                dataset: DatasetInfo::of(&ds),
                summary: sm.summary(),
                config: cfg,
            };
            emit(&report, summary.as_ref().and_then(|p| p.to_str()))
        }
        Cmd::Bound { common } => {
            let text = std::fs::read_to_string(&common.config).map_err(|e| io_error(&common.config, e))?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config {
                pointer: String::new(),
                message: e.to_string(),
            })?;
            let dgp = if value.get("covariates").is_some() {
                serde_json::from_value::<DgpSpec>(value).map_err(|e| Error::Config {
                    pointer: String::new(),
                    message: e.to_string(),
                })?
            } else {
                load_config(&common, Command::Bound)?.dgp()?
            };
            let bound = efficiency_bound(&dgp)?;
            emit(&bound, common.out.as_ref().and_then(|p| p.to_str()))
        }
        Cmd::ForestDiag { common } => {
            let cfg = load_config(&common, Command::ForestDiag)?;
            let spec = cfg.forest_diag.clone().unwrap_or_default();
            let report = forest_diag(&spec, cfg.seed)?;
            emit(&report, cfg.out.as_deref())
        }
    }
}
