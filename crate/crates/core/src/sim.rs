//! Simulation studies A–H and a seeded replication harness.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assoc::AssocKind;
use crate::data::DataMatrix;
use crate::error::{Result, SsdrError};
use crate::svs::{select_theta, selection_metrics, theta_grid, SvsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Study {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
}

impl Study {
    pub const ALL: [Study; 8] = [
        Study::A,
        Study::B,
        Study::C,
        Study::D,
        Study::E,
        Study::F,
        Study::G,
        Study::H,
    ];

    /// Smallest p the study's directions and contamination reference.
    pub fn min_p(self) -> usize {
        match self {
            Study::A => 2,
            Study::B | Study::C | Study::E | Study::F => 4,
            Study::D | Study::G => 8,
            Study::H => 12,
        }
    }

    /// 0-based indices of the informative variables.
    pub fn true_active(self) -> Vec<usize> {
        match self {
            Study::A => vec![0, 1],
            Study::D => (0..8).collect(),
            _ => (0..4).collect(),
        }
    }

    fn contaminated_columns(self) -> Option<(std::ops::Range<usize>, Contamination)> {
        match self {
            Study::F => Some((0..4, Contamination::Cellwise)),
            Study::G => Some((4..8, Contamination::Cellwise)),
            Study::H => Some((8..12, Contamination::Casewise)),
            _ => None,
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Study {
    type Err = SsdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Study::A),
            "B" => Ok(Study::B),
            "C" => Ok(Study::C),
            "D" => Ok(Study::D),
            "E" => Ok(Study::E),
            "F" => Ok(Study::F),
            "G" => Ok(Study::G),
            "H" => Ok(Study::H),
            other => Err(SsdrError::InvalidSpec(format!("unknown study '{other}'"))),
        }
    }
}

/// How outliers are placed in the designated columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Contamination {
    /// Rows drawn independently for each column.
    Cellwise,
    /// One set of rows shared by all designated columns.
    Casewise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub study: Study,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl StudySpec {
    pub fn new(study: Study, n: usize, p: usize, seed: u64) -> Self {
        Self { study, n, p, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(SsdrError::InvalidSpec(format!("n = {} < 10", self.n)));
        }
        if self.p < self.study.min_p() {
            return Err(SsdrError::InvalidSpec(format!(
                "study {} needs p ≥ {}, got {}",
                self.study,
                self.study.min_p(),
                self.p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub x: DataMatrix,
    pub y: DataMatrix,
    /// p×2, columns are the two generating directions.
    pub true_basis: DMatrix<f64>,
    pub true_active: Vec<usize>,
}

/// Draws `n` rows with `Σ_ij = 0.5^{|i−j|}` via the AR(1) recursion.
fn ar1_rows(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let innov = 0.75f64.sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            prev = if j == 0 { z } else { 0.5 * prev + innov * z };
            x[(i, j)] = prev;
        }
    }
    x
}

fn iid_rows(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    x
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn direction(p: usize, entries: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; p];
    v[..entries.len()].copy_from_slice(entries);
    v
}

fn project(x: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| b.iter().enumerate().map(|(j, w)| x[(i, j)] * w).sum())
        .collect()
}

/// Draws a dataset for the given study. A pure function of `spec`.
///
/// Studies F, G and H reuse the Study E draw and replace 10% of the entries in
/// their designated columns by `2·Cauchy` outliers from a separate stream, so
/// every untouched entry (and the response) is identical to Study E.
pub fn generate(spec: &StudySpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let (mut x, y, b1, b2) = match spec.study {
        Study::A => {
            let x = ar1_rows(&mut rng, n, p);
            let eps = normals(&mut rng, n);
            let b1 = direction(p, &[1.0]);
            let b2 = direction(p, &[0.0, 1.0]);
            let (u, v) = (project(&x, &b1), project(&x, &b2));
            let y = (0..n)
                .map(|i| u[i] / (0.5 + (v[i] + 1.5).powi(2)) + 0.2 * eps[i])
                .collect::<Vec<_>>();
            (x, y, b1, b2)
        }
        Study::B => {
            let tail = ar1_rows(&mut rng, n, p - 1);
            let eps1 = normals(&mut rng, n);
            let eps2 = normals(&mut rng, n);
            let mut x = DMatrix::zeros(n, p);
            x.columns_mut(1, p - 1).copy_from(&tail);
            for i in 0..n {
                x[(i, 0)] = (x[(i, 1)] + x[(i, 2)]).abs() + eps2[i];
            }
            let b1 = direction(p, &[0.5, 0.5, 0.5, 0.5]);
            let b2 = direction(p, &[0.5, -0.5, 0.5, -0.5]);
            let (u, v) = (project(&x, &b1), project(&x, &b2));
            let y = (0..n).map(|i| u[i] * u[i] + v[i] + 0.5 * eps1[i]).collect();
            (x, y, b1, b2)
        }
        Study::C => {
            let x = iid_rows(&mut rng, n, p);
            let eps1 = normals(&mut rng, n);
            let eps2 = normals(&mut rng, n);
            let b1 = direction(p, &[1.0, 1.0, 1.0, 1.0]);
            let b2 = direction(p, &[1.0, -1.0, 1.0, -1.0]);
            let (u, v) = (project(&x, &b1), project(&x, &b2));
            let y = (0..n)
                .map(|i| sign(2.0 * u[i] + eps1[i]) * (2.0 * v[i] + 4.0 + eps2[i]).abs().ln())
                .collect();
            (x, y, b1, b2)
        }
        Study::D => {
            let x = iid_rows(&mut rng, n, p);
            let eps = normals(&mut rng, n);
            let b1 = direction(p, &[1.0, 1.0, 1.0, 1.0]);
            let b2 = direction(p, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
            let (u, v) = (project(&x, &b1), project(&x, &b2));
            let y = (0..n)
                .map(|i| {
                    let first = f64::from(u[i] + 0.2 * eps[i] > 1.0);
                    let second = f64::from(v[i] + 0.2 * eps[i] > 0.0);
                    first + 2.0 * second
                })
                .collect();
            (x, y, b1, b2)
        }
        Study::E | Study::F | Study::G | Study::H => {
            let x = ar1_rows(&mut rng, n, p);
            let eps = normals(&mut rng, n);
            let b1 = direction(p, &[1.0, 1.0, 1.0, 1.0]);
            let b2 = direction(p, &[1.0, -1.0, 1.0, -1.0]);
            let (u, v) = (project(&x, &b1), project(&x, &b2));
            let y = (0..n)
                .map(|i| u[i] * u[i] + v[i].abs() + 0.1 * eps[i])
                .collect();
            (x, y, b1, b2)
        }
    };

    if let Some((cols, mode)) = spec.study.contaminated_columns() {
        contaminate(&mut x, cols, mode, spec.seed);
    }

    let true_basis = DMatrix::from_fn(p, 2, |j, c| if c == 0 { b1[j] } else { b2[j] });
    Ok(GeneratedDataset {
        x: DataMatrix::new(x)?,
        y: DataMatrix::from_column(&y)?,
        true_basis,
        true_active: spec.study.true_active(),
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Number of contaminated entries per designated column.
pub fn contaminated_count(n: usize) -> usize {
    ((n as f64) * 0.1).round() as usize
}

fn contaminate(x: &mut DMatrix<f64>, cols: std::ops::Range<usize>, mode: Contamination, seed: u64) {
    let n = x.nrows();
    let m = contaminated_count(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let cauchy = Cauchy::new(0.0, 1.0).expect("valid scale");
    let shared: Vec<usize> = sample(&mut rng, n, m).into_vec();
    for j in cols {
        let rows = match mode {
            Contamination::Casewise => shared.clone(),
            Contamination::Cellwise => sample(&mut rng, n, m).into_vec(),
        };
        for i in rows {
            x[(i, j)] = 2.0 * rng.sample(cauchy);
        }
    }
}

/// Scale presets for the replication harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// n = 80, p = 12, 10 replicates, θ step 0.1, BCOV capped at n = 60.
    Desk,
    /// n = 120, p = 24, 100 replicates, θ step 0.01.
    Paper,
}

impl FromStr for Profile {
    type Err = SsdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(SsdrError::InvalidInput(format!(
                "unknown profile '{other}'"
            ))),
        }
    }
}

impl Profile {
    pub fn n(self) -> usize {
        match self {
            Profile::Desk => 80,
            Profile::Paper => 120,
        }
    }

    /// Raised to the study's minimum when needed (Study H references column 12).
    pub fn p(self, study: Study) -> usize {
        let base = match self {
            Profile::Desk => 12,
            Profile::Paper => 24,
        };
        base.max(study.min_p())
    }

    pub fn reps(self) -> usize {
        match self {
            Profile::Desk => 10,
            Profile::Paper => 100,
        }
    }

    pub fn theta_grid(self) -> Vec<f64> {
        match self {
            Profile::Desk => theta_grid(0.0, 0.5, 0.1),
            Profile::Paper => theta_grid(0.0, 0.5, 0.01),
        }
    }

    /// Sample-size cap for ball covariance runs.
    pub fn bcov_n_cap(self) -> Option<usize> {
        match self {
            Profile::Desk => Some(60),
            Profile::Paper => None,
        }
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd })
    }
}

/// One replicate of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub theta: f64,
    pub active: Vec<usize>,
    pub tpr: f64,
    pub fpr: f64,
    pub f1: f64,
}

/// Aggregates for one method; `None` statistics mean every replicate failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: AssocKind,
    pub n: usize,
    pub f1: Option<MeanSd>,
    pub tpr: Option<MeanSd>,
    pub fpr: Option<MeanSd>,
    pub theta: Option<MeanSd>,
    pub successes: usize,
    pub failures: usize,
    pub failure_reasons: Vec<String>,
    pub replicates: Vec<ReplicateOutcome>,
    /// Wall-clock seconds per replicate. Not part of the deterministic record.
    #[serde(skip)]
    pub wall_time: Option<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub study: Study,
    pub n: usize,
    pub p: usize,
    pub h: usize,
    pub reps: usize,
    pub base_seed: u64,
    pub methods: Vec<MethodSummary>,
}

/// Runs `reps` replicates of a study for each method.
///
/// Replicate r uses seed `spec.seed + r` for both data and solver. A method's
/// sample size is reduced to `bcov_n_cap` for ball covariance when set.
pub fn run_study(
    spec: &StudySpec,
    methods: &[AssocKind],
    reps: usize,
    cfg: &SvsConfig,
    h: usize,
    bcov_n_cap: Option<usize>,
) -> Result<ReplicationSummary> {
    spec.validate()?;
    cfg.validate()?;
    if reps == 0 {
        return Err(SsdrError::InvalidInput("reps must be ≥ 1".into()));
    }
    let mut summaries = Vec::with_capacity(methods.len());
    for &method in methods {
        let n = match (method, bcov_n_cap) {
            (AssocKind::Bcov, Some(cap)) => spec.n.min(cap),
            _ => spec.n,
        };
        let outcomes: Vec<(usize, u64, Result<ReplicateOutcome>, f64)> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let seed = spec.seed.wrapping_add(r as u64);
                let started = Instant::now();
                let out =
                    run_replicate(spec.study, n, spec.p, seed, method, cfg, h).map(|mut o| {
                        o.replicate = r;
                        o
                    });
                (r, seed, out, started.elapsed().as_secs_f64())
            })
            .collect();

        let mut ok = Vec::new();
        let mut reasons = Vec::new();
        let mut times = Vec::new();
        for (r, seed, out, secs) in outcomes {
            times.push(secs);
            match out {
                Ok(o) => ok.push(o),
                Err(e) => reasons.push(format!("replicate {r} (seed {seed}): {e}")),
            }
        }
        let col =
            |f: fn(&ReplicateOutcome) -> f64| MeanSd::of(&ok.iter().map(f).collect::<Vec<_>>());
        summaries.push(MethodSummary {
            method,
            n,
            f1: col(|o| o.f1),
            tpr: col(|o| o.tpr),
            fpr: col(|o| o.fpr),
            theta: col(|o| o.theta),
            successes: ok.len(),
            failures: reasons.len(),
            failure_reasons: reasons,
            replicates: ok,
            wall_time: MeanSd::of(&times),
        });
    }
    Ok(ReplicationSummary {
        study: spec.study,
        n: spec.n,
        p: spec.p,
        h,
        reps,
        base_seed: spec.seed,
        methods: summaries,
    })
}

fn run_replicate(
    study: Study,
    n: usize,
    p: usize,
    seed: u64,
    method: AssocKind,
    cfg: &SvsConfig,
    h: usize,
) -> Result<ReplicateOutcome> {
    let data = generate(&StudySpec::new(study, n, p, seed))?;
    let mut cfg = cfg.clone();
    cfg.solver.seed = seed;
    let sel = select_theta(method, &data.x, &data.y, h, &cfg)?;
    let m = selection_metrics(&sel.result.active, &data.true_active, p)?;
    Ok(ReplicateOutcome {
        replicate: 0,
        seed,
        theta: sel.theta,
        active: sel.result.active,
        tpr: m.tpr,
        fpr: m.fpr,
        f1: m.f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study_a_truth() {
        let d = generate(&StudySpec::new(Study::A, 30, 6, 1)).unwrap();
        assert_eq!(d.true_active, vec![0, 1]);
        for j in 2..6 {
            assert!(d.true_basis.row(j).iter().all(|&v| v == 0.0));
        }
        assert_eq!(d.true_basis[(0, 0)], 1.0);
        assert_eq!(d.true_basis[(1, 1)], 1.0);
    }

    #[test]
    fn ar1_covariance() {
        let d = generate(&StudySpec::new(Study::E, 5000, 5, 3)).unwrap();
        let x = d.x.as_matrix();
        let n = x.nrows() as f64;
        for i in 0..5 {
            for j in 0..5 {
                let mi = x.column(i).mean();
                let mj = x.column(j).mean();
                let cov = x
                    .column(i)
                    .iter()
                    .zip(x.column(j).iter())
                    .map(|(a, b)| (a - mi) * (b - mj))
                    .sum::<f64>()
                    / (n - 1.0);
                let target = 0.5f64.powi((i as i32 - j as i32).abs());
                assert!((cov - target).abs() < 0.05, "({i},{j}) {cov} vs {target}");
            }
        }
    }

    #[test]
    fn contamination_counts_and_bookkeeping() {
        let e = generate(&StudySpec::new(Study::E, 120, 12, 9)).unwrap();
        for (study, cols) in [(Study::F, 0..4), (Study::G, 4..8), (Study::H, 8..12)] {
            let c = generate(&StudySpec::new(study, 120, 12, 9)).unwrap();
            assert_eq!(c.y, e.y);
            let (xc, xe) = (c.x.as_matrix(), e.x.as_matrix());
            for j in 0..12 {
                let changed = (0..120)
                    .filter(|&i| xc[(i, j)].to_bits() != xe[(i, j)].to_bits())
                    .count();
                if cols.contains(&j) {
                    assert_eq!(changed, 12, "study {study} column {j}");
                } else {
                    assert_eq!(changed, 0);
                }
            }
        }
    }

    #[test]
    fn casewise_rows_shared() {
        let e = generate(&StudySpec::new(Study::E, 50, 12, 4)).unwrap();
        let h = generate(&StudySpec::new(Study::H, 50, 12, 4)).unwrap();
        let rows = |j: usize| -> Vec<usize> {
            (0..50)
                .filter(|&i| h.x.as_matrix()[(i, j)] != e.x.as_matrix()[(i, j)])
                .collect()
        };
        let first = rows(8);
        assert_eq!(first.len(), 5);
        for j in 9..12 {
            assert_eq!(rows(j), first);
        }
    }

    #[test]
    fn study_d_levels() {
        let d = generate(&StudySpec::new(Study::D, 200, 8, 2)).unwrap();
        assert!(d
            .y
            .as_matrix()
            .iter()
            .all(|v| [0.0, 1.0, 2.0, 3.0].contains(v)));
    }

    #[test]
    fn deterministic_and_validated() {
        let s = StudySpec::new(Study::B, 40, 6, 77);
        assert_eq!(generate(&s).unwrap().x, generate(&s).unwrap().x);
        assert!(matches!(
            generate(&StudySpec::new(Study::H, 40, 10, 1)),
            Err(SsdrError::InvalidSpec(_))
        ));
        assert!(generate(&StudySpec::new(Study::A, 5, 4, 1)).is_err());
    }

    #[test]
    fn study_b_first_column() {
        let d = generate(&StudySpec::new(Study::B, 20, 5, 8)).unwrap();
        let x = d.x.as_matrix();
        // x₁ − |x₂ + x₃| is pure noise, so it is not identically zero.
        assert!((0..20).any(|i| (x[(i, 0)] - (x[(i, 1)] + x[(i, 2)]).abs()).abs() > 1e-6));
    }

    #[test]
    fn single_rep_sd_zero() {
        let cfg = SvsConfig {
            theta_grid: vec![0.0, 0.3],
            solver: crate::manifold::SolverConfig {
                restarts: 1,
                ..Default::default()
            },
            ..SvsConfig::default()
        };
        let s = run_study(
            &StudySpec::new(Study::A, 40, 6, 3),
            &[AssocKind::Dcov],
            1,
            &cfg,
            2,
            None,
        )
        .unwrap();
        let m = &s.methods[0];
        assert_eq!(m.successes + m.failures, 1);
        if let Some(f1) = m.f1 {
            assert_eq!(f1.sd, 0.0);
        }
    }

    #[test]
    fn mean_sd() {
        let m = MeanSd::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.sd, 1.0);
        assert!(MeanSd::of(&[]).is_none());
    }
}
