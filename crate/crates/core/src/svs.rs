//! Sparse sufficient variable selection.
//!
//! The row-wise adaptive penalty `Σ θ‖B_j‖^{1−a}` is handled by local
//! quadratic approximation: each outer iteration solves the constrained
//! problem with `½ tr(VᵀHV)` subtracted, prunes rows that fell below the
//! tolerance and shrinks the design to the survivors.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assoc::{assoc_sq, AssocKind};
use crate::data::{check_same_rows, DataMatrix};
use crate::error::{Result, SsdrError};
use crate::manifold::{
    solve_sdr, solve_sdr_from, subspace_angle_mat, whiten, ProjectionBasis, QuadPenalty,
    SolverConfig,
};

/// Rows with a smaller norm are treated as zero when forming weights.
pub const ROW_NORM_FLOOR: f64 = 1e-12;
/// Upper bound on any adaptive or LQA weight.
pub const WEIGHT_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvsConfig {
    /// Ascending, nonnegative penalty levels.
    pub theta_grid: Vec<f64>,
    /// Adaptive exponent; `None` uses the statistic's default.
    pub a: Option<f64>,
    /// Convergence and pruning tolerance τ.
    pub tol: f64,
    /// Maximum number of outer LQA iterations N.
    pub max_outer: usize,
    pub solver: SolverConfig,
    /// Start each θ from the previous θ's solution instead of the nonsparse one.
    #[serde(default)]
    pub continuation: bool,
}

impl Default for SvsConfig {
    fn default() -> Self {
        Self {
            theta_grid: theta_grid(0.0, 0.5, 0.01),
            a: None,
            tol: 1e-3,
            max_outer: 200,
            solver: SolverConfig::default(),
            continuation: false,
        }
    }
}

/// `start, start + step, …` up to `stop` inclusive (to within half a step).
pub fn theta_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 0.5).floor() as usize;
    (0..=count)
        .map(|i| {
            let v = start + step * i as f64;
            // Snap to the decimal grid so 0.1 * 3 prints as 0.3.
            (v * 1e12).round() / 1e12
        })
        .collect()
}

impl SvsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta_grid.is_empty() {
            return Err(SsdrError::InvalidInput("theta grid is empty".into()));
        }
        if self
            .theta_grid
            .iter()
            .any(|t| !(t.is_finite() && *t >= 0.0))
        {
            return Err(SsdrError::InvalidInput(
                "theta values must be finite and ≥ 0".into(),
            ));
        }
        if self.theta_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(SsdrError::InvalidInput(
                "theta grid must be ascending".into(),
            ));
        }
        if let Some(a) = self.a {
            if !(0.0..=1.0).contains(&a) {
                return Err(SsdrError::InvalidInput(format!("a = {a} outside [0, 1]")));
            }
        }
        if !(self.tol > 0.0) || self.max_outer == 0 {
            return Err(SsdrError::InvalidInput(
                "tol must be > 0 and max_outer ≥ 1".into(),
            ));
        }
        self.solver.validate()
    }

    pub fn exponent(&self, kind: AssocKind) -> f64 {
        self.a.unwrap_or_else(|| kind.default_adaptive_exponent())
    }
}

fn capped_weight(theta: f64, norm: f64, power: f64) -> f64 {
    if theta == 0.0 {
        return 0.0;
    }
    (theta * norm.max(ROW_NORM_FLOOR).powf(-power)).min(WEIGHT_CAP)
}

/// `θ_i = θ‖B_i‖^{−a}` per row.
pub fn adaptive_weights(b: &ProjectionBasis, theta: f64, a: f64) -> DVector<f64> {
    DVector::from_iterator(
        b.p(),
        (0..b.p()).map(|j| capped_weight(theta, b.row_norm(j), a)),
    )
}

/// LQA curvature `H_jj = θ‖V_j‖^{−a} / ‖V_j‖`.
pub fn lqa_matrix(v: &DMatrix<f64>, theta: f64, a: f64) -> QuadPenalty {
    QuadPenalty::new(DVector::from_iterator(
        v.nrows(),
        (0..v.nrows()).map(|j| capped_weight(theta, v.row(j).norm(), a + 1.0)),
    ))
}

/// A sparse fit at one penalty level.
#[derive(Debug, Clone, PartialEq)]
pub struct SvsResult {
    /// p×h; rows outside `active` are exactly zero.
    pub basis: ProjectionBasis,
    /// Selected variables, ascending (0-based).
    pub active: Vec<usize>,
    pub theta: f64,
    pub bic: f64,
    /// Unpenalized statistic at `basis`.
    pub objective: f64,
    pub iterations: usize,
    /// Pruned variables in the order they were removed.
    pub eliminated_order: Vec<usize>,
    /// The subspace-angle stopping rule fired before `max_outer`.
    pub converged: bool,
}

/// Fit at a single θ, computing the nonsparse start first.
pub fn svs_fit(
    kind: AssocKind,
    x: &DataMatrix,
    y: &DataMatrix,
    h: usize,
    theta: f64,
    cfg: &SvsConfig,
) -> Result<SvsResult> {
    cfg.validate()?;
    let start = solve_sdr(kind, x, y, h, &cfg.solver, None)?;
    svs_fit_from(kind, x, y, start.basis.as_matrix(), theta, cfg)
}

/// Fit at a single θ from a given p×h start.
pub fn svs_fit_from(
    kind: AssocKind,
    x: &DataMatrix,
    y: &DataMatrix,
    b0: &DMatrix<f64>,
    theta: f64,
    cfg: &SvsConfig,
) -> Result<SvsResult> {
    let n = check_same_rows(x, y)?;
    let p = x.ncols();
    let h = b0.ncols();
    if b0.nrows() != p {
        return Err(SsdrError::InvalidInput(
            "start basis has wrong row count".into(),
        ));
    }
    if h == 0 || h > n.min(p) {
        return Err(SsdrError::InvalidDimension { h, max: n.min(p) });
    }
    let a = cfg.exponent(kind);
    let tol = cfg.tol;

    let mut survivors: Vec<usize> = (0..p).collect();
    let mut v0 = b0.clone();
    let mut x0 = x.clone();
    let mut eliminated = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..cfg.max_outer {
        iterations += 1;
        let penalty = lqa_matrix(&v0, theta, a);
        let v = solve_sdr_from(kind, &x0, y, &v0, &cfg.solver, Some(&penalty))?
            .basis
            .into_matrix();
        let angle = subspace_angle_mat(&v0, &v).unwrap_or(std::f64::consts::FRAC_PI_2);
        if angle <= tol {
            converged = true;
            break;
        }
        let keep: Vec<usize> = (0..v.nrows()).filter(|&j| v.row(j).norm() > tol).collect();
        eliminated.extend(
            (0..v.nrows())
                .filter(|j| !keep.contains(j))
                .map(|j| survivors[j]),
        );
        if keep.is_empty() {
            return Err(SsdrError::AllVariablesEliminated);
        }
        if keep.len() < h {
            return Err(SsdrError::InsufficientSurvivors {
                survivors: keep.len(),
                h,
            });
        }
        v0 = v.select_rows(&keep);
        x0 = x0.select_columns(&keep);
        survivors = keep.iter().map(|&j| survivors[j]).collect();
    }

    // Pruned rows leave V⁰ slightly off the constraint; snap back to the
    // nearest feasible basis over the survivors.
    let frame = whiten(&x0)?;
    let v0 = frame.to_basis(&frame.to_stiefel(&v0));

    let mut full = DMatrix::zeros(p, h);
    for (row, &j) in survivors.iter().enumerate() {
        full.row_mut(j).copy_from(&v0.row(row));
    }
    let objective = assoc_sq(kind, &x0.project(&v0)?, y)?;
    let bic = bic_value(objective, n, survivors.len(), h);
    Ok(SvsResult {
        basis: ProjectionBasis::new(full),
        active: survivors,
        theta,
        bic,
        objective,
        iterations,
        eliminated_order: eliminated,
        converged,
    })
}

/// `log(obj) − log(n)(p_θ − h)h/n`, or −∞ when `obj ≤ 0`.
pub fn bic_value(objective: f64, n: usize, p_theta: usize, h: usize) -> f64 {
    if !(objective > 0.0) {
        return f64::NEG_INFINITY;
    }
    let nf = n as f64;
    objective.ln() - nf.ln() * (p_theta as f64 - h as f64) * h as f64 / nf
}

/// BIC-type criterion of a fitted result, re-evaluating the statistic on `x`.
pub fn bic_criterion(
    kind: AssocKind,
    x: &DataMatrix,
    y: &DataMatrix,
    result: &SvsResult,
    h: usize,
) -> Result<f64> {
    let n = check_same_rows(x, y)?;
    let obj = assoc_sq(kind, &x.project(result.basis.as_matrix())?, y)?;
    Ok(bic_value(obj, n, result.active.len(), h))
}

/// Status of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub theta: f64,
    /// Number of active variables, or `None` if the fit failed.
    pub active_count: Option<usize>,
    /// `None` when the fit failed or the criterion is not finite.
    pub bic: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ThetaSelection {
    pub theta: f64,
    pub result: SvsResult,
    /// The nonsparse start shared by every grid point.
    pub nonsparse: ProjectionBasis,
    pub path: Vec<PathPoint>,
}

/// Fit every θ on the grid and keep the BIC maximizer (ties go to the larger θ).
pub fn select_theta(
    kind: AssocKind,
    x: &DataMatrix,
    y: &DataMatrix,
    h: usize,
    cfg: &SvsConfig,
) -> Result<ThetaSelection> {
    cfg.validate()?;
    let start = solve_sdr(kind, x, y, h, &cfg.solver, None)?;
    let b0 = start.basis.as_matrix();

    let fits: Vec<Result<SvsResult>> = if cfg.continuation {
        let mut out = Vec::with_capacity(cfg.theta_grid.len());
        let mut warm = b0.clone();
        for &theta in &cfg.theta_grid {
            let fit = svs_fit_from(kind, x, y, &warm, theta, cfg);
            if let Ok(f) = &fit {
                warm = f.basis.as_matrix().clone();
            }
            out.push(fit);
        }
        out
    } else {
        cfg.theta_grid
            .par_iter()
            .map(|&theta| svs_fit_from(kind, x, y, b0, theta, cfg))
            .collect()
    };

    let mut path = Vec::with_capacity(fits.len());
    let mut best: Option<SvsResult> = None;
    for (fit, &theta) in fits.into_iter().zip(&cfg.theta_grid) {
        match fit {
            Ok(res) => {
                path.push(PathPoint {
                    theta,
                    active_count: Some(res.active.len()),
                    bic: res.bic.is_finite().then_some(res.bic),
                    error: None,
                });
                if res.bic > f64::NEG_INFINITY && best.as_ref().is_none_or(|b| res.bic >= b.bic) {
                    best = Some(res);
                }
            }
            Err(e) => path.push(PathPoint {
                theta,
                active_count: None,
                bic: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let result = best.ok_or(SsdrError::NoValidFit)?;
    Ok(ThetaSelection {
        theta: result.theta,
        result,
        nonsparse: start.basis,
        path,
    })
}

/// Selection quality against a known active set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub tpr: f64,
    pub fpr: f64,
    pub f1: f64,
}

pub fn selection_metrics(active: &[usize], truth: &[usize], p: usize) -> Result<SelectionMetrics> {
    if truth.is_empty() {
        return Err(SsdrError::InvalidTruth);
    }
    if active.iter().chain(truth).any(|&j| j >= p) {
        return Err(SsdrError::InvalidInput(
            "variable index out of range".into(),
        ));
    }
    let mut act = active.to_vec();
    act.sort_unstable();
    act.dedup();
    let mut tru = truth.to_vec();
    tru.sort_unstable();
    tru.dedup();
    let tp = act.iter().filter(|j| tru.contains(j)).count() as f64;
    let fp = act.len() as f64 - tp;
    let fn_ = tru.len() as f64 - tp;
    let negatives = (p - tru.len()) as f64;
    Ok(SelectionMetrics {
        tpr: tp / tru.len() as f64,
        fpr: if negatives > 0.0 { fp / negatives } else { 0.0 },
        f1: if tp > 0.0 {
            tp / (tp + 0.5 * (fp + fn_))
        } else {
            0.0
        },
    })
}

/// Least-squares regression of the response on the latent variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPrediction {
    /// Intercept followed by one slope per latent direction.
    pub coefficients: Vec<f64>,
    pub predictions: Vec<f64>,
    /// Median absolute error on the evaluation rows.
    pub mae: f64,
}

/// Fits `y_train ~ 1 + X_train·B` and predicts `X_test·B`.
pub fn predict_linear(
    basis: &ProjectionBasis,
    x_train: &DataMatrix,
    y_train: &DataMatrix,
    x_test: &DataMatrix,
    y_test: &DataMatrix,
) -> Result<LinearPrediction> {
    check_same_rows(x_train, y_train)?;
    if x_test.nrows() != y_test.nrows() || x_test.nrows() == 0 {
        return Err(SsdrError::InvalidInput("test rows mismatch".into()));
    }
    if y_train.ncols() != 1 || y_test.ncols() != 1 {
        return Err(SsdrError::InvalidInput(
            "prediction needs a univariate response".into(),
        ));
    }
    let design = |x: &DataMatrix| -> Result<DMatrix<f64>> {
        let latent = x.project(basis.as_matrix())?.into_matrix();
        let n = latent.nrows();
        let mut d = DMatrix::from_element(n, latent.ncols() + 1, 1.0);
        d.columns_mut(1, latent.ncols()).copy_from(&latent);
        Ok(d)
    };
    let d_train = design(x_train)?;
    let gram = d_train.transpose() * &d_train;
    let chol = gram.clone().cholesky().ok_or(SsdrError::SingularFit)?;
    let diag_min = chol.l().diagonal().min();
    let diag_max = chol.l().diagonal().max();
    if !(diag_min > 1e-8 * diag_max) {
        return Err(SsdrError::SingularFit);
    }
    let rhs = d_train.transpose() * y_train.as_matrix().column(0);
    let coef: DVector<f64> = chol.solve(&rhs);
    let pred = design(x_test)? * &coef;
    let mut abs_err: Vec<f64> = pred
        .iter()
        .zip(y_test.as_matrix().column(0).iter())
        .map(|(p, y)| (p - y).abs())
        .collect();
    Ok(LinearPrediction {
        coefficients: coef.iter().copied().collect(),
        predictions: pred.iter().copied().collect(),
        mae: median(&mut abs_err),
    })
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
