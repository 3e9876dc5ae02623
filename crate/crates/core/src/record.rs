//! Run configurations and the JSON records they produce.
//!
//! A [`ResultRecord`] carries the complete effective [`RunConfig`], so
//! `execute(&record.config)` regenerates the same record.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assoc::{assoc_sq, AssocKind};
use crate::error::{Result, SsdrError};
use crate::io::{
    dataset_table, filter_rows, read_csv, read_table, screen_variables, train_test_split,
    write_csv, Dataset, RowFilter,
};
use crate::manifold::{
    estimate_dimension, solve_sdr, DimensionEstimate, SolverConfig, Termination,
};
use crate::sim::{generate, run_study, ReplicationSummary, Study, StudySpec};
use crate::svs::{predict_linear, select_theta, PathPoint, SvsConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Marginal permutation screening applied after row filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenConfig {
    pub alpha: f64,
    pub n_perm: usize,
    pub seed: u64,
}

/// Where a command's data comes from and how it is prepared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub path: PathBuf,
    /// Response column name, or 0-based index.
    pub response: String,
    /// Applied in order.
    #[serde(default)]
    pub remove_if: Vec<RowFilter>,
    #[serde(default)]
    pub screen: Option<ScreenConfig>,
}

impl DataSource {
    pub fn new(path: impl Into<PathBuf>, response: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            response: response.into(),
            remove_if: Vec::new(),
            screen: None,
        }
    }

    /// Reads, filters and screens. Returns the prepared data and the
    /// original predictor indices that were kept.
    pub fn load(&self) -> Result<(Dataset, Vec<usize>)> {
        let mut data = read_csv(&self.path, &self.response)?;
        for f in &self.remove_if {
            data = filter_rows(&data, f)?;
        }
        let mut kept: Vec<usize> = (0..data.x.ncols()).collect();
        if let Some(s) = &self.screen {
            kept = screen_variables(&data.x, &data.y, s.alpha, s.n_perm, s.seed)?;
            if kept.is_empty() {
                return Err(SsdrError::InvalidInput(
                    "screening retained no variables".into(),
                ));
            }
            data = data.select_columns(&kept);
        }
        Ok((data, kept))
    }
}

/// One command with every parameter that affects its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    /// Statistic between all columns of two files.
    Stats {
        x: PathBuf,
        y: PathBuf,
        stat: AssocKind,
    },
    Fit {
        data: DataSource,
        stat: AssocKind,
        h: usize,
        solver: SolverConfig,
    },
    Svs {
        data: DataSource,
        stat: AssocKind,
        h: usize,
        svs: SvsConfig,
    },
    Simulate {
        spec: StudySpec,
        reps: usize,
        h: usize,
        methods: Vec<AssocKind>,
        svs: SvsConfig,
        bcov_n_cap: Option<usize>,
    },
    EstimateDim {
        data: DataSource,
        stat: AssocKind,
        h_max: usize,
        boot: usize,
        solver: SolverConfig,
    },
    Predict {
        data: DataSource,
        stat: AssocKind,
        h: usize,
        svs: SvsConfig,
        test_fraction: f64,
        split_seed: u64,
    },
    /// Writes one simulated dataset as CSV (columns x1..xp, y).
    Generate { spec: StudySpec, out: PathBuf },
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::Stats { .. } => "stats",
            RunConfig::Fit { .. } => "fit",
            RunConfig::Svs { .. } => "svs",
            RunConfig::Simulate { .. } => "simulate",
            RunConfig::EstimateDim { .. } => "estimate-dim",
            RunConfig::Predict { .. } => "predict",
            RunConfig::Generate { .. } => "generate",
        }
    }

    /// Checks parameters and paths without running anything.
    pub fn validate(&self) -> Result<()> {
        let exists = |p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(SsdrError::Io(format!("{}: no such file", p.display())))
            }
        };
        match self {
            RunConfig::Stats { x, y, .. } => {
                exists(x)?;
                exists(y)
            }
            RunConfig::Fit { data, solver, .. } => {
                exists(&data.path)?;
                solver.validate()
            }
            RunConfig::Svs { data, svs, .. } => {
                exists(&data.path)?;
                svs.validate()
            }
            RunConfig::Simulate {
                spec, svs, reps, ..
            } => {
                spec.validate()?;
                if *reps == 0 {
                    return Err(SsdrError::InvalidInput("reps must be ≥ 1".into()));
                }
                svs.validate()
            }
            RunConfig::EstimateDim {
                data, solver, boot, ..
            } => {
                exists(&data.path)?;
                if *boot == 0 {
                    return Err(SsdrError::InvalidInput("boot must be ≥ 1".into()));
                }
                solver.validate()
            }
            RunConfig::Predict {
                data,
                svs,
                test_fraction,
                ..
            } => {
                exists(&data.path)?;
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(SsdrError::InvalidInput(format!(
                        "test fraction {test_fraction} outside (0, 1)"
                    )));
                }
                svs.validate()
            }
            RunConfig::Generate { spec, out } => {
                spec.validate()?;
                match out.parent() {
                    Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(
                        SsdrError::Io(format!("{}: no such directory", dir.display())),
                    ),
                    _ => Ok(()),
                }
            }
        }
    }
}

/// A basis written row by row (one row per variable).
pub type BasisRows = Vec<Vec<f64>>;

fn rows_of(m: &nalgebra::DMatrix<f64>) -> BasisRows {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub variables: Vec<String>,
    pub basis: BasisRows,
    pub objective: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvsOutput {
    /// Predictors entering the fit, after screening.
    pub variables: Vec<String>,
    pub theta: f64,
    /// Indices into `variables`.
    pub active: Vec<usize>,
    pub active_names: Vec<String>,
    pub basis: BasisRows,
    pub bic: Option<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub eliminated_order: Vec<usize>,
    pub path: Vec<PathPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictOutput {
    pub train_rows: usize,
    pub test_rows: Vec<usize>,
    pub selection: SvsOutput,
    pub coefficients: Vec<f64>,
    pub predictions: Vec<f64>,
    /// Median absolute test error.
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOutput {
    pub rows: usize,
    pub columns: usize,
    pub true_active: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CommandOutput {
    Statistic { n: usize, value: f64 },
    Fit(FitOutput),
    Svs(SvsOutput),
    Simulate(ReplicationSummary),
    Dimension(DimensionEstimate),
    Predict(PredictOutput),
    Generate(GenerateOutput),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema: u32,
    pub config: RunConfig,
    pub result: CommandOutput,
}

impl ResultRecord {
    pub fn to_json_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| SsdrError::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: ResultRecord = serde_json::from_str(s).map_err(|e| SsdrError::ParseError {
            row: e.line(),
            column: e.column().to_string(),
            reason: e.to_string(),
        })?;
        if rec.schema != SCHEMA_VERSION {
            return Err(SsdrError::InvalidInput(format!(
                "unsupported record schema {}",
                rec.schema
            )));
        }
        Ok(rec)
    }

    pub fn write_line<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.to_json_line()?)?;
        Ok(())
    }
}

/// Reads every nonblank line of a record file.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(ResultRecord::from_json(&line)?);
        }
    }
    Ok(out)
}

fn svs_output(
    kind: AssocKind,
    data: &Dataset,
    h: usize,
    cfg: &SvsConfig,
) -> Result<(SvsOutput, crate::svs::SvsResult)> {
    let sel = select_theta(kind, &data.x, &data.y, h, cfg)?;
    let r = &sel.result;
    let out = SvsOutput {
        variables: data.x_names.clone(),
        theta: sel.theta,
        active: r.active.clone(),
        active_names: r.active.iter().map(|&j| data.x_names[j].clone()).collect(),
        basis: rows_of(r.basis.as_matrix()),
        bic: r.bic.is_finite().then_some(r.bic),
        objective: r.objective,
        iterations: r.iterations,
        converged: r.converged,
        eliminated_order: r.eliminated_order.clone(),
        path: sel.path.clone(),
    };
    Ok((out, sel.result))
}

/// Runs a command and builds its record. `Generate` also writes its file.
pub fn execute(config: &RunConfig) -> Result<ResultRecord> {
    config.validate()?;
    let result = match config {
        RunConfig::Stats { x, y, stat } => {
            let x = read_table(x)?.values;
            let y = read_table(y)?.values;
            CommandOutput::Statistic {
                n: x.nrows(),
                value: assoc_sq(*stat, &x, &y)?,
            }
        }
        RunConfig::Fit {
            data,
            stat,
            h,
            solver,
        } => {
            let (d, _) = data.load()?;
            let fit = solve_sdr(*stat, &d.x, &d.y, *h, solver, None)?;
            CommandOutput::Fit(FitOutput {
                variables: d.x_names.clone(),
                basis: rows_of(fit.basis.as_matrix()),
                objective: fit.objective,
                iterations: fit.iterations,
                termination: fit.termination,
                start: fit.start,
            })
        }
        RunConfig::Svs { data, stat, h, svs } => {
            let (d, _) = data.load()?;
            CommandOutput::Svs(svs_output(*stat, &d, *h, svs)?.0)
        }
        RunConfig::Simulate {
            spec,
            reps,
            h,
            methods,
            svs,
            bcov_n_cap,
        } => CommandOutput::Simulate(run_study(spec, methods, *reps, svs, *h, *bcov_n_cap)?),
        RunConfig::EstimateDim {
            data,
            stat,
            h_max,
            boot,
            solver,
        } => {
            let (d, _) = data.load()?;
            CommandOutput::Dimension(estimate_dimension(
                *stat, &d.x, &d.y, *h_max, *boot, solver,
            )?)
        }
        RunConfig::Predict {
            data,
            stat,
            h,
            svs,
            test_fraction,
            split_seed,
        } => {
            let (d, _) = data.load()?;
            let (train, test) = train_test_split(d.nrows(), *test_fraction, *split_seed)?;
            let tr = d.select_rows(&train);
            let te = d.select_rows(&test);
            let (selection, fit) = svs_output(*stat, &tr, *h, svs)?;
            let pred = predict_linear(&fit.basis, &tr.x, &tr.y, &te.x, &te.y)?;
            CommandOutput::Predict(PredictOutput {
                train_rows: train.len(),
                test_rows: test,
                selection,
                coefficients: pred.coefficients,
                predictions: pred.predictions,
                mae: pred.mae,
            })
        }
        RunConfig::Generate { spec, out } => {
            let g = generate(spec)?;
            let d = Dataset {
                x_names: (1..=g.x.ncols()).map(|j| format!("x{j}")).collect(),
                response: "y".into(),
                x: g.x,
                y: g.y,
            };
            let (names, table) = dataset_table(&d);
            write_csv(out, &names, &table)?;
            CommandOutput::Generate(GenerateOutput {
                rows: table.nrows(),
                columns: table.ncols(),
                true_active: g.true_active,
            })
        }
    };
    Ok(ResultRecord {
        schema: SCHEMA_VERSION,
        config: config.clone(),
        result,
    })
}

/// Per-method mean/sd table for a replication summary.
pub fn write_summary_csv<W: Write>(w: W, s: &ReplicationSummary) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| SsdrError::Io(e.to_string());
    out.write_record([
        "study",
        "method",
        "n",
        "p",
        "h",
        "reps",
        "successes",
        "failures",
        "f1_mean",
        "f1_sd",
        "tpr_mean",
        "tpr_sd",
        "fpr_mean",
        "fpr_sd",
        "theta_mean",
        "theta_sd",
    ])
    .map_err(io)?;
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for m in &s.methods {
        let ms = |v: &Option<crate::sim::MeanSd>| [cell(v.map(|x| x.mean)), cell(v.map(|x| x.sd))];
        let [f1m, f1s] = ms(&m.f1);
        let [tm, ts] = ms(&m.tpr);
        let [fm, fs] = ms(&m.fpr);
        let [thm, ths] = ms(&m.theta);
        out.write_record([
            s.study.to_string(),
            m.method.to_string(),
            m.n.to_string(),
            s.p.to_string(),
            s.h.to_string(),
            s.reps.to_string(),
            m.successes.to_string(),
            m.failures.to_string(),
            f1m,
            f1s,
            tm,
            ts,
            fm,
            fs,
            thm,
            ths,
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

/// Convenience for building a study spec from a profile.
pub fn profile_spec(study: Study, profile: crate::sim::Profile, seed: u64) -> StudySpec {
    StudySpec::new(study, profile.n(), profile.p(study), seed)
}
