//! Constrained SDR: maximize an association statistic of `X·B` with `Y`
//! subject to `BᵀXᵀXB = I_h`.
//!
//! The constraint is turned into plain orthonormality by whitening: with
//! `T` such that `TᵀXᵀXT = I_r`, every feasible basis is `B = T·W` for a
//! `W` on the Stiefel manifold St(r, h). The search runs Riemannian gradient
//! ascent on W with a QR retraction and a monotone backtracking line search.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assoc::{
    assoc_sq, bcov_sq, double_center, half_sq_distances, pairwise_distances, AssocKind,
    CenteredMatrix,
};
use crate::data::{check_same_rows, DataMatrix};
use crate::error::{Result, SsdrError};

/// Smoothing constant in `√(‖·‖² + ε²)` for the analytic gradients.
pub const SMOOTHING_EPS: f64 = 1e-9;

/// Relative ridge used to decide the effective rank of `XᵀX`.
pub const RIDGE_FACTOR: f64 = 1e-8;

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-14;
const MAX_STEP: f64 = 1e8;
const STALL_RTOL: f64 = 1e-12;
/// Mean bootstrap angles closer than this are treated as tied.
const ANGLE_TIE_TOL: f64 = 1e-10;

/// A p×h basis of a candidate central subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    values: DMatrix<f64>,
}

impl ProjectionBasis {
    pub fn new(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.values
    }

    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn h(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_norm(&self, j: usize) -> f64 {
        self.values.row(j).norm()
    }

    /// `‖BᵀXᵀXB − I_h‖_F / ‖I_h‖_F`.
    pub fn constraint_residual(&self, x: &DataMatrix) -> f64 {
        let xb = x.as_matrix() * &self.values;
        let h = self.h();
        let gram = xb.transpose() * xb;
        (gram - DMatrix::<f64>::identity(h, h)).norm() / (h as f64).sqrt()
    }
}

/// Maps orthonormal coordinates back to feasible bases.
#[derive(Debug, Clone)]
pub struct WhitenedFrame {
    /// p×r; `B = transform · W`.
    pub transform: DMatrix<f64>,
    /// r×p left inverse of `transform` (`Tᵀ XᵀX`).
    pub inverse: DMatrix<f64>,
    /// Number of retained eigen-directions of `XᵀX`.
    pub rank: usize,
    /// Eigenvalue floor `1e-8 · trace(XᵀX)/p`; directions at or below it are dropped.
    pub ridge: f64,
}

impl WhitenedFrame {
    pub fn to_basis(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        &self.transform * w
    }

    /// Feasible point closest (polar factor) to the whitened image of `b`.
    pub fn to_stiefel(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        polar(&(&self.inverse * b))
    }
}

/// Factor `XᵀX` so the constraint becomes orthonormality.
///
/// Full rank gives the symmetric inverse square root. When `XᵀX` is singular
/// (p > n, collinear columns) only eigen-directions above the ridge floor are
/// kept, which keeps `TᵀXᵀXT = I_r` exact.
pub fn whiten(x: &DataMatrix) -> Result<WhitenedFrame> {
    let (n, p) = (x.nrows(), x.ncols());
    if n < 2 || p < 1 {
        return Err(SsdrError::InvalidInput(format!(
            "whiten needs n ≥ 2 and p ≥ 1, got {n}x{p}"
        )));
    }
    let xm = x.as_matrix();
    let gram = xm.transpose() * xm;
    let trace = gram.trace();
    if trace <= 0.0 {
        return Err(SsdrError::DegenerateDesign("X is identically zero".into()));
    }
    let ridge = RIDGE_FACTOR * trace / p as f64;
    let eig = SymmetricEigen::new(gram.clone());
    let keep: Vec<usize> = (0..p).filter(|&i| eig.eigenvalues[i] > ridge).collect();
    let rank = keep.len();
    if rank == 0 {
        return Err(SsdrError::DegenerateDesign(
            "XᵀX has no direction above the ridge".into(),
        ));
    }
    let transform = if rank == p {
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.sqrt().recip()));
        &eig.eigenvectors * d * eig.eigenvectors.transpose()
    } else {
        let u = eig.eigenvectors.select_columns(&keep);
        let scale = DVector::from_iterator(
            rank,
            keep.iter().map(|&i| eig.eigenvalues[i].sqrt().recip()),
        );
        u * DMatrix::from_diagonal(&scale)
    };
    let inverse = transform.transpose() * &gram;
    Ok(WhitenedFrame {
        transform,
        inverse,
        rank,
        ridge,
    })
}

/// Diagonal quadratic penalty `½ tr(BᵀHB)` with `H = diag(weights)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadPenalty {
    pub diag: DVector<f64>,
}

impl QuadPenalty {
    pub fn new(diag: DVector<f64>) -> Self {
        Self { diag }
    }

    pub fn zeros(p: usize) -> Self {
        Self {
            diag: DVector::zeros(p),
        }
    }

    pub fn value(&self, b: &DMatrix<f64>) -> f64 {
        0.5 * (0..b.nrows())
            .map(|j| self.diag[j] * b.row(j).norm_squared())
            .sum::<f64>()
    }

    /// `H·B`, the gradient of the penalty.
    pub fn gradient(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(b.nrows(), b.ncols(), |j, c| self.diag[j] * b[(j, c)])
    }
}

/// Penalized objective `𝔓²(X·B, Y) − ½ tr(BᵀHB)`.
pub fn objective(
    kind: AssocKind,
    x: &DataMatrix,
    y: &DataMatrix,
    b: &ProjectionBasis,
    penalty: Option<&QuadPenalty>,
) -> Result<f64> {
    check_same_rows(x, y)?;
    let xb = x.project(b.as_matrix())?;
    let stat = assoc_sq(kind, &xb, y)?;
    Ok(match penalty {
        Some(pen) => stat - pen.value(b.as_matrix()),
        None => stat,
    })
}

/// Central-difference gradient of an arbitrary function of a matrix.
pub fn central_difference<F>(f: F, b: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> Result<f64>,
{
    let mut grad = DMatrix::zeros(b.nrows(), b.ncols());
    let mut probe = b.clone();
    for c in 0..b.ncols() {
        for j in 0..b.nrows() {
            let orig = probe[(j, c)];
            probe[(j, c)] = orig + step;
            let up = f(&probe)?;
            probe[(j, c)] = orig - step;
            let down = f(&probe)?;
            probe[(j, c)] = orig;
            grad[(j, c)] = (up - down) / (2.0 * step);
        }
    }
    Ok(grad)
}

/// Entrywise central finite differences of [`objective`] (no penalty).
///
/// For ball covariance the objective is piecewise constant in B, so steps
/// smaller than the nearest indicator flip give an exactly zero gradient.
pub fn gradient_fd(
    kind: AssocKind,
    x: &DataMatrix,
    y: &DataMatrix,
    b: &ProjectionBasis,
    fd_step: f64,
) -> Result<DMatrix<f64>> {
    if !(fd_step > 0.0) {
        return Err(SsdrError::InvalidInput("fd_step must be positive".into()));
    }
    central_difference(
        |m| objective(kind, x, y, &ProjectionBasis::new(m.clone()), None),
        b.as_matrix(),
        fd_step,
    )
}

/// Analytic gradient of the smoothed DCOV/MDD objective (no penalty).
/// Returns `None` for ball covariance.
pub fn gradient_analytic(
    kind: AssocKind,
    x: &DataMatrix,
    y: &DataMatrix,
    b: &ProjectionBasis,
) -> Result<Option<DMatrix<f64>>> {
    check_same_rows(x, y)?;
    let eval = Evaluator::new(kind, x, y, None, 1e-3)?;
    Ok(eval.analytic_gradient(b.as_matrix()))
}

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub step_init: f64,
    pub grad_tol: f64,
    pub restarts: usize,
    /// Half-step for finite-difference gradients (ball covariance).
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            step_init: 1.0,
            grad_tol: 1e-7,
            restarts: 5,
            fd_step: 1e-3,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.restarts == 0 {
            return Err(SsdrError::InvalidInput(
                "max_iters and restarts must be ≥ 1".into(),
            ));
        }
        if !(self.step_init > 0.0 && self.grad_tol > 0.0 && self.fd_step > 0.0) {
            return Err(SsdrError::InvalidInput(
                "step_init, grad_tol and fd_step must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Riemannian gradient norm fell below `grad_tol`.
    GradientTolerance,
    /// No step along the gradient improved the objective measurably.
    Stalled,
    MaxIterations,
}

/// Outcome of a (possibly multi-start) constrained solve.
#[derive(Debug, Clone)]
pub struct SdrFit {
    pub basis: ProjectionBasis,
    /// Penalized objective at `basis`.
    pub objective: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective at every accepted iterate, starting point included.
    pub trace: Vec<f64>,
    /// Index of the start that produced the returned basis.
    pub start: usize,
}

/// Statistic evaluation with the response kernel cached.
struct Evaluator<'a> {
    x: &'a DataMatrix,
    y: &'a DataMatrix,
    y_kernel: Option<CenteredMatrix>,
    penalty: Option<&'a QuadPenalty>,
    fd_step: f64,
}

impl<'a> Evaluator<'a> {
    fn new(
        kind: AssocKind,
        x: &'a DataMatrix,
        y: &'a DataMatrix,
        penalty: Option<&'a QuadPenalty>,
        fd_step: f64,
    ) -> Result<Self> {
        let y_kernel = match kind {
            AssocKind::Dcov => Some(double_center(pairwise_distances(y).as_matrix())?),
            AssocKind::Mdd => Some(double_center(&half_sq_distances(y))?),
            AssocKind::Bcov => None,
        };
        if let Some(pen) = penalty {
            if pen.diag.len() != x.ncols() {
                return Err(SsdrError::InvalidInput(
                    "penalty size does not match p".into(),
                ));
            }
        }
        Ok(Self {
            x,
            y,
            y_kernel,
            penalty,
            fd_step,
        })
    }

    fn statistic(&self, b: &DMatrix<f64>) -> Result<f64> {
        let proj = self.x.as_matrix() * b;
        match &self.y_kernel {
            Some(kernel) => {
                // Σ a_kl K_kl equals Σ A_kl K_kl because K is already centered.
                let k = kernel.as_matrix();
                let n = proj.nrows();
                let mut s = 0.0;
                for l in 0..n {
                    for m in (l + 1)..n {
                        let mut d2 = 0.0;
                        for c in 0..proj.ncols() {
                            let diff = proj[(l, c)] - proj[(m, c)];
                            d2 += diff * diff;
                        }
                        s += d2.sqrt() * (k[(l, m)] + k[(m, l)]);
                    }
                }
                Ok((s / (n * n) as f64).max(0.0))
            }
            None => bcov_sq(&DataMatrix::new(proj)?, self.y),
        }
    }

    fn value(&self, b: &DMatrix<f64>) -> Result<f64> {
        let stat = self.statistic(b)?;
        Ok(match self.penalty {
            Some(p) => stat - p.value(b),
            None => stat,
        })
    }

    /// Smoothed closed form `(2/n²) Xᵀ L (XB)` with `L = diag(W1) − W`,
    /// `W_kl = K_kl / √(‖(x_k − x_l)B‖² + ε²)`.
    fn analytic_gradient(&self, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let kernel = self.y_kernel.as_ref()?.as_matrix();
        let xm = self.x.as_matrix();
        let proj = xm * b;
        let (n, h) = (proj.nrows(), proj.ncols());
        let eps2 = SMOOTHING_EPS * SMOOTHING_EPS;
        let mut lp = DMatrix::zeros(n, h);
        for k in 0..n {
            for l in (k + 1)..n {
                let mut d2 = 0.0;
                for c in 0..h {
                    let diff = proj[(k, c)] - proj[(l, c)];
                    d2 += diff * diff;
                }
                let w = 0.5 * (kernel[(k, l)] + kernel[(l, k)]) / (d2 + eps2).sqrt();
                for c in 0..h {
                    let diff = w * (proj[(k, c)] - proj[(l, c)]);
                    lp[(k, c)] += diff;
                    lp[(l, c)] -= diff;
                }
            }
        }
        Some(xm.transpose() * lp * (2.0 / (n * n) as f64))
    }

    fn gradient(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self.analytic_gradient(b) {
            Some(g) => Ok(match self.penalty {
                Some(p) => g - p.gradient(b),
                None => g,
            }),
            None => central_difference(|m| self.value(m), b, self.fd_step),
        }
    }
}

fn check_solve_inputs(x: &DataMatrix, y: &DataMatrix, h: usize) -> Result<()> {
    let n = check_same_rows(x, y)?;
    let max = n.min(x.ncols());
    if h == 0 || h > max {
        return Err(SsdrError::InvalidDimension { h, max });
    }
    if y.is_constant() {
        return Err(SsdrError::DegenerateResponse);
    }
    Ok(())
}

/// Maximize the (penalized) statistic over feasible p×h bases.
///
/// Start 0 is deterministic (see [`informed_start`]); starts 1.. are drawn
/// from a ChaCha stream keyed by `cfg.seed` and the start index. The best
/// objective wins, ties going to the lower start index.
pub fn solve_sdr(
    kind: AssocKind,
    x: &DataMatrix,
    y: &DataMatrix,
    h: usize,
    cfg: &SolverConfig,
    quad_penalty: Option<&QuadPenalty>,
) -> Result<SdrFit> {
    cfg.validate()?;
    check_solve_inputs(x, y, h)?;
    let frame = whiten(x)?;
    if h > frame.rank {
        return Err(SsdrError::InvalidDimension { h, max: frame.rank });
    }
    let eval = Evaluator::new(kind, x, y, quad_penalty, cfg.fd_step)?;
    let starts: Vec<DMatrix<f64>> = (0..cfg.restarts)
        .map(|i| {
            if i == 0 {
                informed_start(x, y, &frame, h)
            } else {
                random_stiefel(frame.rank, h, cfg.seed, i as u64)
            }
        })
        .collect();
    let fits: Vec<Result<SdrFit>> = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, w0)| {
            ascend(&eval, &frame, w0, cfg).map(|mut f| {
                f.start = i;
                f
            })
        })
        .collect();
    let mut best: Option<SdrFit> = None;
    for fit in fits {
        let fit = fit?;
        if best.as_ref().is_none_or(|b| fit.objective > b.objective) {
            best = Some(fit);
        }
    }
    Ok(best.expect("restarts ≥ 1"))
}

/// Single ascent run from a supplied p×h starting basis, which is first
/// mapped to the nearest feasible point.
pub fn solve_sdr_from(
    kind: AssocKind,
    x: &DataMatrix,
    y: &DataMatrix,
    init: &DMatrix<f64>,
    cfg: &SolverConfig,
    quad_penalty: Option<&QuadPenalty>,
) -> Result<SdrFit> {
    cfg.validate()?;
    if init.nrows() != x.ncols() {
        return Err(SsdrError::InvalidInput(
            "initial basis has wrong row count".into(),
        ));
    }
    let h = init.ncols();
    check_solve_inputs(x, y, h)?;
    let frame = whiten(x)?;
    if h > frame.rank {
        return Err(SsdrError::InvalidDimension { h, max: frame.rank });
    }
    let eval = Evaluator::new(kind, x, y, quad_penalty, cfg.fd_step)?;
    ascend(&eval, &frame, frame.to_stiefel(init), cfg)
}

fn ascend(
    eval: &Evaluator<'_>,
    frame: &WhitenedFrame,
    w0: DMatrix<f64>,
    cfg: &SolverConfig,
) -> Result<SdrFit> {
    let t = &frame.transform;
    let mut w = w0;
    let mut b = frame.to_basis(&w);
    let mut f = eval.value(&b)?;
    let mut trace = vec![f];
    let mut step = cfg.step_init;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let g_w = t.transpose() * eval.gradient(&b)?;
        let wtg = w.transpose() * &g_w;
        let sym = (&wtg + wtg.transpose()) * 0.5;
        let xi = &g_w - &w * sym;
        let xi_norm2 = xi.norm_squared();
        if xi_norm2.sqrt() <= cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut accepted = None;
        while step >= MIN_STEP {
            let cand_w = qr_retract(&(&w + &xi * step));
            let cand_b = frame.to_basis(&cand_w);
            let fc = eval.value(&cand_b)?;
            if fc >= f + ARMIJO_C * step * xi_norm2 {
                accepted = Some((cand_w, cand_b, fc));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((cand_w, cand_b, fc)) = accepted else {
            termination = Termination::Stalled;
            break;
        };
        let gain = fc - f;
        w = cand_w;
        b = cand_b;
        f = fc;
        trace.push(f);
        if gain <= STALL_RTOL * f.abs().max(f64::MIN_POSITIVE) {
            termination = Termination::Stalled;
            break;
        }
        step = (step * 2.0).min(MAX_STEP);
    }

    Ok(SdrFit {
        basis: ProjectionBasis::new(b),
        objective: f,
        iterations,
        termination,
        trace,
        start: 0,
    })
}

/// Thin QR with a positive diagonal in R.
fn qr_retract(m: &DMatrix<f64>) -> DMatrix<f64> {
    let h = m.ncols();
    let qr = m.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    for c in 0..h {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

/// Orthonormal polar factor `U Vᵀ` of a tall matrix.
fn polar(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    u * v_t
}

fn random_stiefel(r: usize, h: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let g = DMatrix::from_fn(r, h, |_, _| rng.sample::<f64, _>(StandardNormal));
    qr_retract(&g)
}

/// Deterministic first start.
///
/// Whitened predictors `Z = X·T` are paired with centered response features
/// (each response column, its square, and slice indicators of the first
/// column) and with the principal-Hessian matrix `Zᵀ diag(y − ȳ) Z`; the top
/// h left singular directions of the two normalized blocks side by side give
/// the start. Missing directions are filled from a fixed random draw.
pub fn informed_start(
    x: &DataMatrix,
    y: &DataMatrix,
    frame: &WhitenedFrame,
    h: usize,
) -> DMatrix<f64> {
    let z = x.as_matrix() * &frame.transform;
    let (n, r) = (z.nrows(), z.ncols());
    let ym = y.as_matrix();
    let center = |v: DVector<f64>| {
        let m = v.mean();
        v.map(|e| e - m)
    };

    let mut feats: Vec<DVector<f64>> = Vec::new();
    for c in 0..ym.ncols() {
        let col = center(ym.column(c).into_owned());
        feats.push(col.clone());
        feats.push(center(col.map(|e| e * e)));
    }
    let first = ym.column(0);
    let slices = (n / 10).clamp(2, 10);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| first[a].total_cmp(&first[b]).then(a.cmp(&b)));
    for s in 0..slices {
        let lo = s * n / slices;
        let hi = (s + 1) * n / slices;
        let mut ind = DVector::zeros(n);
        for &i in &order[lo..hi] {
            ind[i] = 1.0;
        }
        feats.push(center(ind));
    }
    let f = DMatrix::from_columns(&feats);
    let mut cross = z.transpose() * f;
    let y0 = center(first.into_owned());
    let mut phd = DMatrix::zeros(r, r);
    for i in 0..n {
        let zi = z.row(i).transpose();
        phd += &zi * zi.transpose() * y0[i];
    }
    for block in [&mut cross, &mut phd] {
        let norm = block.norm();
        if norm > 0.0 {
            *block /= norm;
        }
    }
    let mut combined = DMatrix::zeros(r, cross.ncols() + r);
    combined.columns_mut(0, cross.ncols()).copy_from(&cross);
    combined.columns_mut(cross.ncols(), r).copy_from(&phd);

    let svd = combined.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = svd.singular_values[idx[0]];
    let mut cols: Vec<DVector<f64>> = idx
        .iter()
        .take(h)
        .filter(|&&i| svd.singular_values[i] > 1e-10 * top.max(f64::MIN_POSITIVE))
        .map(|&i| u.column(i).into_owned())
        .collect();
    if cols.len() < h {
        let fill = random_stiefel(r, h, 0x5eed, 0);
        for c in 0..h {
            if cols.len() == h {
                break;
            }
            cols.push(fill.column(c).into_owned());
        }
    }
    qr_retract(&DMatrix::from_columns(&cols))
}

/// Largest principal angle between the column spans, in `[0, π/2]`.
pub fn subspace_angle(b1: &ProjectionBasis, b2: &ProjectionBasis) -> Result<f64> {
    subspace_angle_mat(b1.as_matrix(), b2.as_matrix())
}

pub(crate) fn subspace_angle_mat(b1: &DMatrix<f64>, b2: &DMatrix<f64>) -> Result<f64> {
    if b1.nrows() != b2.nrows() {
        return Err(SsdrError::InvalidInput(
            "bases have different row counts".into(),
        ));
    }
    let q1 = orthonormal_basis(b1)?;
    let q2 = orthonormal_basis(b2)?;
    // Project the narrower basis off the wider one; the sine form stays
    // accurate for small angles.
    let (wide, narrow) = if q1.ncols() >= q2.ncols() {
        (q1, q2)
    } else {
        (q2, q1)
    };
    let resid = &narrow - &wide * (wide.transpose() * &narrow);
    let s = resid
        .singular_values()
        .iter()
        .copied()
        .fold(0.0f64, f64::max)
        .clamp(0.0, 1.0);
    Ok(s.asin())
}

fn orthonormal_basis(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.ncols() == 0 || b.ncols() > b.nrows() {
        return Err(SsdrError::RankDeficient);
    }
    let svd = b.clone().svd(true, false);
    let top = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(top > 0.0) || min <= 1e-12 * top {
        return Err(SsdrError::RankDeficient);
    }
    Ok(svd.u.expect("requested U"))
}

/// Bootstrap estimate of the structural dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub h: usize,
    /// Mean largest principal angle between the full-data and bootstrap fits, per h = 1..=h_max.
    pub mean_angles: Vec<f64>,
}

/// For each candidate h, refit on `n_boot` row resamples and keep the h
/// whose bootstrap bases stay closest (mean largest principal angle) to
/// the full-data basis. Ties go to the smaller h.
pub fn estimate_dimension(
    kind: AssocKind,
    x: &DataMatrix,
    y: &DataMatrix,
    h_max: usize,
    n_boot: usize,
    cfg: &SolverConfig,
) -> Result<DimensionEstimate> {
    let n = check_same_rows(x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let resamples: Vec<Vec<usize>> = (0..n_boot)
        .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect();
    estimate_dimension_with(kind, x, y, h_max, &resamples, cfg)
}

/// [`estimate_dimension`] with caller-supplied resamples (row index lists).
pub fn estimate_dimension_with(
    kind: AssocKind,
    x: &DataMatrix,
    y: &DataMatrix,
    h_max: usize,
    resamples: &[Vec<usize>],
    cfg: &SolverConfig,
) -> Result<DimensionEstimate> {
    let n = check_same_rows(x, y)?;
    let max = n.min(x.ncols());
    if h_max == 0 || h_max > max {
        return Err(SsdrError::InvalidDimension { h: h_max, max });
    }
    if resamples.is_empty() {
        return Err(SsdrError::InvalidInput(
            "need at least one bootstrap resample".into(),
        ));
    }
    if resamples.iter().flatten().any(|&i| i >= n) {
        return Err(SsdrError::InvalidInput(
            "resample index out of range".into(),
        ));
    }
    let mut mean_angles = Vec::with_capacity(h_max);
    for h in 1..=h_max {
        let full = solve_sdr(kind, x, y, h, cfg, None)?.basis;
        let angles: Vec<Result<f64>> = resamples
            .par_iter()
            .map(|rows| {
                let xb = x.select_rows(rows);
                let yb = y.select_rows(rows);
                let fit = solve_sdr(kind, &xb, &yb, h, cfg, None)?;
                subspace_angle(&full, &fit.basis)
            })
            .collect();
        let angles = angles.into_iter().collect::<Result<Vec<f64>>>()?;
        mean_angles.push(angles.iter().sum::<f64>() / angles.len() as f64);
    }
    let mut best = 0;
    for (i, &a) in mean_angles.iter().enumerate() {
        if a < mean_angles[best] - ANGLE_TIE_TOL {
            best = i;
        }
    }
    Ok(DimensionEstimate {
        h: best + 1,
        mean_angles,
    })
}
