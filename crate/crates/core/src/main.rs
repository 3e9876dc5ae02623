use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ssdr::assoc::AssocKind;
use ssdr::error::{ErrorCategory, SsdrError};
use ssdr::io::{parse_theta_grid, RowFilter};
use ssdr::manifold::SolverConfig;
use ssdr::record::{
    execute, profile_spec, read_records, write_summary_csv, CommandOutput, DataSource,
    ResultRecord, RunConfig, ScreenConfig,
};
use ssdr::sim::{Profile, Study, StudySpec};
use ssdr::svs::SvsConfig;

#[derive(Parser)]
#[command(
    name = "ssdr",
    version,
    about = "Sparse sufficient dimension reduction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dependence statistic between all columns of two CSV files.
    Stats {
        x: PathBuf,
        y: PathBuf,
        #[arg(long, default_value = "dcov")]
        stat: AssocKind,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Nonsparse constrained fit.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "dcov")]
        stat: AssocKind,
        #[arg(long, default_value_t = 1)]
        h: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sparse fit with the penalty level chosen by BIC.
    Svs {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "dcov")]
        stat: AssocKind,
        #[arg(long, default_value_t = 1)]
        h: usize,
        #[command(flatten)]
        svs: SvsArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Replicated simulation study.
    Simulate {
        #[arg(long)]
        study: Study,
        #[arg(long, default_value = "desk")]
        profile: Profile,
        /// Defaults to the profile's count.
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, default_value_t = 2)]
        h: usize,
        /// Repeatable; defaults to all three statistics.
        #[arg(long)]
        stat: Vec<AssocKind>,
        /// Defaults to the profile's grid.
        #[arg(long)]
        theta_grid: Option<String>,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        /// Base seed; replicate r uses seed + r.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        /// Per-method mean/sd table.
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Bootstrap estimate of the structural dimension.
    EstimateDim {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "dcov")]
        stat: AssocKind,
        /// Largest dimension considered.
        #[arg(long, default_value_t = 3)]
        h: usize,
        #[arg(long, default_value_t = 200)]
        boot: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sparse fit on a training split, latent linear regression on the rest.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "dcov")]
        stat: AssocKind,
        #[arg(long, default_value_t = 1)]
        h: usize,
        #[arg(long, default_value_t = 22.0 / 71.0)]
        test_fraction: f64,
        #[command(flatten)]
        svs: SvsArgs,
        /// Seeds both the split and the solver.
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Writes one simulated dataset as CSV.
    Generate {
        #[arg(long)]
        study: Study,
        #[arg(long, default_value_t = 80)]
        n: usize,
        #[arg(long, default_value_t = 12)]
        p: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Destination CSV.
        #[arg(long = "data-out")]
        data_out: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Re-runs every record in a file and checks the output is identical.
    Replay {
        record: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row.
    data: PathBuf,
    /// Response column name, or 0-based index.
    #[arg(long)]
    response: String,
    /// Drop rows where COLUMN CMP VALUE holds, e.g. crim:gt:3.2. Repeatable.
    #[arg(long = "remove-if", value_name = "COLUMN:CMP:VALUE")]
    remove_if: Vec<RowFilter>,
    /// Keep predictors whose permutation p-value is below this level.
    #[arg(long)]
    screen_alpha: Option<f64>,
    #[arg(long, default_value_t = 199)]
    screen_perm: usize,
}

impl DataArgs {
    fn source(&self, seed: u64) -> DataSource {
        DataSource {
            path: self.data.clone(),
            response: self.response.clone(),
            remove_if: self.remove_if.clone(),
            screen: self.screen_alpha.map(|alpha| ScreenConfig {
                alpha,
                n_perm: self.screen_perm,
                seed,
            }),
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            seed: self.seed,
            restarts: self.restarts,
            ..SolverConfig::default()
        }
    }
}

#[derive(Args)]
struct SvsArgs {
    /// start:step:stop or a comma-separated list.
    #[arg(long, default_value = "0:0.01:0.5")]
    theta_grid: String,
    /// Adaptive exponent; defaults per statistic.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Maximum outer iterations.
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Warm-start each penalty level from the previous one.
    #[arg(long)]
    continuation: bool,
}

impl SvsArgs {
    fn config(&self, solver: SolverConfig) -> Result<SvsConfig, SsdrError> {
        Ok(SvsConfig {
            theta_grid: parse_theta_grid(&self.theta_grid).map_err(usage)?,
            a: self.a,
            tol: self.tol,
            max_outer: self.max_iter,
            solver,
            continuation: self.continuation,
        })
    }
}

#[derive(Args)]
struct OutArgs {
    /// Append the JSON record here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: &OutArgs, records: &[ResultRecord]) -> Result<(), SsdrError> {
    match &out.out {
        Some(path) => {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| SsdrError::Io(format!("{}: {e}", path.display())))?;
            let mut w = io::BufWriter::new(f);
            for r in records {
                r.write_line(&mut w)?;
            }
            w.flush()?;
        }
        None => {
            let mut w = io::stdout().lock();
            for r in records {
                r.write_line(&mut w)?;
            }
        }
    }
    Ok(())
}

fn usage(e: SsdrError) -> SsdrError {
    SsdrError::Usage(e.to_string())
}

fn configure_threads() -> Result<(), SsdrError> {
    let Ok(raw) = std::env::var("SSDR_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| SsdrError::Usage(format!("SSDR_THREADS='{raw}' is not a count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| SsdrError::InvalidInput(e.to_string()))
}

fn run(cli: Cli) -> Result<(), SsdrError> {
    configure_threads()?;
    let (config, out, table) = match cli.command {
        Command::Stats { x, y, stat, out } => (RunConfig::Stats { x, y, stat }, out, None),
        Command::Fit {
            data,
            stat,
            h,
            solver,
            out,
        } => (
            RunConfig::Fit {
                data: data.source(solver.seed),
                stat,
                h,
                solver: solver.config(),
            },
            out,
            None,
        ),
        Command::Svs {
            data,
            stat,
            h,
            svs,
            solver,
            out,
        } => (
            RunConfig::Svs {
                data: data.source(solver.seed),
                stat,
                h,
                svs: svs.config(solver.config())?,
            },
            out,
            None,
        ),
        Command::Simulate {
            study,
            profile,
            reps,
            n,
            p,
            h,
            stat,
            theta_grid,
            a,
            tol,
            max_iter,
            seed,
            restarts,
            table,
            out,
        } => {
            let mut spec: StudySpec = profile_spec(study, profile, seed);
            spec.n = n.unwrap_or(spec.n);
            spec.p = p.unwrap_or(spec.p);
            let grid = match theta_grid {
                Some(s) => parse_theta_grid(&s).map_err(usage)?,
                None => profile.theta_grid(),
            };
            let methods = if stat.is_empty() {
                AssocKind::ALL.to_vec()
            } else {
                stat
            };
            let svs = SvsConfig {
                theta_grid: grid,
                a,
                tol,
                max_outer: max_iter,
                solver: SolverConfig {
                    restarts,
                    ..SolverConfig::default()
                },
                continuation: false,
            };
            (
                RunConfig::Simulate {
                    spec,
                    reps: reps.unwrap_or(profile.reps()),
                    h,
                    methods,
                    svs,
                    bcov_n_cap: profile.bcov_n_cap(),
                },
                out,
                table,
            )
        }
        Command::EstimateDim {
            data,
            stat,
            h,
            boot,
            solver,
            out,
        } => (
            RunConfig::EstimateDim {
                data: data.source(solver.seed),
                stat,
                h_max: h,
                boot,
                solver: solver.config(),
            },
            out,
            None,
        ),
        Command::Predict {
            data,
            stat,
            h,
            test_fraction,
            svs,
            seed,
            restarts,
            out,
        } => {
            let solver = SolverConfig {
                seed,
                restarts,
                ..SolverConfig::default()
            };
            (
                RunConfig::Predict {
                    data: data.source(seed),
                    stat,
                    h,
                    svs: svs.config(solver)?,
                    test_fraction,
                    split_seed: seed,
                },
                out,
                None,
            )
        }
        Command::Generate {
            study,
            n,
            p,
            seed,
            data_out,
            out,
        } => (
            RunConfig::Generate {
                spec: StudySpec::new(study, n, p, seed),
                out: data_out,
            },
            out,
            None,
        ),
        Command::Replay { record, out } => {
            let f = File::open(&record)
                .map_err(|e| SsdrError::Io(format!("{}: {e}", record.display())))?;
            let originals = read_records(BufReader::new(f))?;
            let mut rerun = Vec::with_capacity(originals.len());
            for (i, orig) in originals.iter().enumerate() {
                let again = execute(&orig.config)?;
                if again.to_json_line()? != orig.to_json_line()? {
                    return Err(SsdrError::InvalidInput(format!(
                        "record {} ({}) does not reproduce",
                        i + 1,
                        orig.config.name()
                    )));
                }
                rerun.push(again);
            }
            return emit(&out, &rerun);
        }
    };
    let record = execute(&config)?;
    if let (Some(path), CommandOutput::Simulate(summary)) = (table, &record.result) {
        let f =
            File::create(&path).map_err(|e| SsdrError::Io(format!("{}: {e}", path.display())))?;
        write_summary_csv(f, summary)?;
    }
    emit(&out, &[record])
}

fn fail(category: ErrorCategory, reason: &str) -> ExitCode {
    let reason = reason
        .replace('\\', "\\\\")
        .replace('"', "\\\"")
        .replace('\n', " ");
    eprintln!(
        "error: kind={} reason=\"{}\"",
        category.as_str(),
        reason.trim()
    );
    ExitCode::from(category.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error");
            return fail(ErrorCategory::Usage, first.trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.category(), &e.to_string()),
    }
}
