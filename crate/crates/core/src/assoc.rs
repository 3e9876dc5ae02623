//! Sample association statistics: distance covariance, martingale difference
//! divergence and ball covariance, together with the literal oracles used to
//! check the fast evaluations.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{check_same_rows, DataMatrix};
use crate::error::{Result, SsdrError};

/// Largest sample size accepted by [`bcov_sq_naive`].
pub const NAIVE_BCOV_MAX_N: usize = 10;

/// Tolerated negative round-off before a statistic is reported as broken.
const NEG_TOL: f64 = 1e-12;

/// Which association measure to maximize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssocKind {
    Dcov,
    Mdd,
    Bcov,
}

impl AssocKind {
    pub const ALL: [AssocKind; 3] = [AssocKind::Dcov, AssocKind::Mdd, AssocKind::Bcov];

    /// Default adaptive-penalty exponent for this statistic.
    pub fn default_adaptive_exponent(self) -> f64 {
        match self {
            AssocKind::Dcov => 0.5,
            AssocKind::Mdd => 0.2,
            AssocKind::Bcov => 0.8,
        }
    }

    /// Whether a closed-form (smoothed) gradient is available.
    pub fn has_analytic_gradient(self) -> bool {
        !matches!(self, AssocKind::Bcov)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AssocKind::Dcov => "dcov",
            AssocKind::Mdd => "mdd",
            AssocKind::Bcov => "bcov",
        }
    }
}

impl fmt::Display for AssocKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssocKind {
    type Err = SsdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dcov" => Ok(AssocKind::Dcov),
            "mdd" => Ok(AssocKind::Mdd),
            "bcov" => Ok(AssocKind::Bcov),
            other => Err(SsdrError::InvalidInput(format!(
                "unknown statistic '{other}'"
            ))),
        }
    }
}

/// Pairwise Euclidean distances between rows. Exactly symmetric with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(DMatrix<f64>);

impl DistanceMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.0[(k, l)]
    }
}

/// A double-centered square matrix (zero row and column means).
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredMatrix(DMatrix<f64>);

impl CenteredMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Closed-ball membership δ_{ij,k}: is row k inside the ball centred at row i
/// whose radius is the distance from row i to row j?
#[derive(Debug, Clone, PartialEq)]
pub struct BallIndicatorTensor {
    n: usize,
    bits: Vec<bool>,
}

impl BallIndicatorTensor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[(i * self.n + j) * self.n + k]
    }

    fn at(&self, i: usize, j: usize, k: usize) -> i64 {
        i64::from(self.get(i, j, k))
    }
}

pub fn pairwise_distances(data: &DataMatrix) -> DistanceMatrix {
    let x = data.as_matrix();
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for k in 0..n {
        for l in (k + 1)..n {
            let mut s = 0.0;
            for c in 0..x.ncols() {
                let diff = x[(k, c)] - x[(l, c)];
                s += diff * diff;
            }
            let v = s.sqrt();
            d[(k, l)] = v;
            d[(l, k)] = v;
        }
    }
    DistanceMatrix(d)
}

/// Half squared distances `½‖y_k − y_l‖²`, the MDD kernel on the response.
pub(crate) fn half_sq_distances(data: &DataMatrix) -> DMatrix<f64> {
    let y = data.as_matrix();
    let n = y.nrows();
    DMatrix::from_fn(n, n, |k, l| {
        0.5 * (0..y.ncols())
            .map(|c| (y[(k, c)] - y[(l, c)]).powi(2))
            .sum::<f64>()
    })
}

/// `m_kl − m̄_k· − m̄_·l + m̄_··`.
pub fn double_center(m: &DMatrix<f64>) -> Result<CenteredMatrix> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(SsdrError::InvalidInput(format!(
            "double centering needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if n == 0 {
        return Ok(CenteredMatrix(m.clone()));
    }
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|k| m.row(k).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|l| m.column(l).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    Ok(CenteredMatrix(DMatrix::from_fn(n, n, |k, l| {
        m[(k, l)] - row_means[k] - col_means[l] + grand
    })))
}

pub(crate) fn clamp_nonneg(v: f64, what: &str) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -NEG_TOL {
        Ok(0.0)
    } else {
        Err(SsdrError::NumericalError(format!(
            "{what} evaluated to {v:e}"
        )))
    }
}

fn centered_inner(a: &CenteredMatrix, c: &CenteredMatrix) -> f64 {
    let n = a.0.nrows() as f64;
    a.0.dot(&c.0) / (n * n)
}

/// Squared sample distance covariance `(1/n²) Σ A_kl C_kl`.
pub fn dcov_sq(x: &DataMatrix, y: &DataMatrix) -> Result<f64> {
    check_same_rows(x, y)?;
    let a = double_center(pairwise_distances(x).as_matrix())?;
    let c = double_center(pairwise_distances(y).as_matrix())?;
    clamp_nonneg(centered_inner(&a, &c), "dcov²")
}

/// Squared sample martingale difference divergence of `y` given `xb`.
///
/// Not symmetric: the response enters through `½‖y_k − y_l‖²`, the
/// predictors through Euclidean distances.
pub fn mdd_sq(y: &DataMatrix, xb: &DataMatrix) -> Result<f64> {
    check_same_rows(xb, y)?;
    let a = double_center(pairwise_distances(xb).as_matrix())?;
    let g = double_center(&half_sq_distances(y))?;
    clamp_nonneg(centered_inner(&a, &g), "mdd²")
}

/// Full indicator tensor. O(n³) memory; meant for small samples and tests.
pub fn ball_indicators(xb: &DataMatrix) -> Result<BallIndicatorTensor> {
    let n = xb.nrows();
    if n < 2 {
        return Err(SsdrError::InvalidInput("need at least two rows".into()));
    }
    let d = pairwise_distances(xb);
    let mut bits = vec![false; n * n * n];
    for i in 0..n {
        for j in 0..n {
            let radius = d.get(i, j);
            for k in 0..n {
                bits[(i * n + j) * n + k] = d.get(i, k) <= radius;
            }
        }
    }
    Ok(BallIndicatorTensor { n, bits })
}

/// Literal six-index ball covariance sum. Cost is O(n⁶), so `n` is capped.
pub fn bcov_sq_naive(x: &DataMatrix, y: &DataMatrix) -> Result<f64> {
    let n = check_same_rows(x, y)?;
    if n > NAIVE_BCOV_MAX_N {
        return Err(SsdrError::OracleSizeExceeded {
            n,
            max: NAIVE_BCOV_MAX_N,
        });
    }
    let dx = ball_indicators(x)?;
    let dy = ball_indicators(y)?;
    // 2ξ is integral, so the whole sum is accumulated exactly as 4·Σ ξˣ ξʸ.
    let xi2 = |t: &BallIndicatorTensor, i, j, k, l, s, u| {
        let d = |a, b| t.at(i, j, a) * t.at(i, j, b);
        d(k, l) + d(s, u) - d(k, s) - d(l, u)
    };
    let mut total: i64 = 0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    for s in 0..n {
                        for t in 0..n {
                            total += xi2(&dx, i, j, k, l, s, t) * xi2(&dy, i, j, k, l, s, t);
                        }
                    }
                }
            }
        }
    }
    let n6 = (n as f64).powi(6);
    clamp_nonneg(total as f64 / (4.0 * n6), "bcov² (naive)")
}

/// Ball covariance in O(n² log n).
///
/// For a fixed ball (i, j) the six-index kernel factors as
/// `ξ_klst = ½(u_k − u_t)(u_l − u_s)`, so the inner quadruple sum collapses to
/// `n⁴ (Δˣʸ_ij − Δˣ_ij Δʸ_ij)²`, where the Δ are the fractions of points inside
/// the ball in the joint, x and y spaces. For each center the joint counts are
/// two-dimensional dominance counts. Counts are kept as integers so the
/// result matches the literal sum exactly before the final division.
pub fn bcov_sq(x: &DataMatrix, y: &DataMatrix) -> Result<f64> {
    let n = check_same_rows(x, y)?;
    let dx = pairwise_distances(x);
    let dy = pairwise_distances(y);
    let ni = n as i128;
    let mut total: i128 = 0;
    let mut counts = BallCounter::new(n);
    for i in 0..n {
        counts.center(
            dx.as_matrix().row(i).iter().copied(),
            dy.as_matrix().row(i).iter().copied(),
        );
        for j in 0..n {
            let (cx, cy, cxy) = (
                counts.cx[j] as i128,
                counts.cy[j] as i128,
                counts.cxy[j] as i128,
            );
            let dev = ni * cxy - cx * cy;
            total += dev * dev;
        }
    }
    let n6 = (n as f64).powi(6);
    Ok(total as f64 / n6)
}

/// Per-center counts `#{k: a_k ≤ a_j}`, `#{k: b_k ≤ b_j}` and the joint count.
struct BallCounter {
    a: Vec<f64>,
    b: Vec<f64>,
    order: Vec<usize>,
    b_key: Vec<usize>,
    tree: Vec<usize>,
    cx: Vec<usize>,
    cy: Vec<usize>,
    cxy: Vec<usize>,
}

impl BallCounter {
    fn new(n: usize) -> Self {
        Self {
            a: vec![0.0; n],
            b: vec![0.0; n],
            order: (0..n).collect(),
            b_key: vec![0; n],
            tree: vec![0; n + 1],
            cx: vec![0; n],
            cy: vec![0; n],
            cxy: vec![0; n],
        }
    }

    fn center(&mut self, a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) {
        let n = self.a.len();
        self.a.iter_mut().zip(a).for_each(|(d, s)| *d = s);
        self.b.iter_mut().zip(b).for_each(|(d, s)| *d = s);

        // Dense 1-based keys for b, and #{k: b_k ≤ b_j}.
        let b = &self.b;
        self.order.sort_unstable_by(|&p, &q| b[p].total_cmp(&b[q]));
        let mut start = 0;
        let mut key = 0;
        while start < n {
            let mut end = start;
            while end < n && b[self.order[end]] == b[self.order[start]] {
                end += 1;
            }
            key += 1;
            for &k in &self.order[start..end] {
                self.b_key[k] = key;
                self.cy[k] = end;
            }
            start = end;
        }

        // Sweep a in ascending groups of ties, inserting before querying.
        let a = &self.a;
        self.order.sort_unstable_by(|&p, &q| a[p].total_cmp(&a[q]));
        self.tree.iter_mut().for_each(|t| *t = 0);
        let mut start = 0;
        while start < n {
            let mut end = start;
            while end < n && a[self.order[end]] == a[self.order[start]] {
                end += 1;
            }
            for &k in &self.order[start..end] {
                let mut pos = self.b_key[k];
                while pos <= n {
                    self.tree[pos] += 1;
                    pos += pos & pos.wrapping_neg();
                }
            }
            for &k in &self.order[start..end] {
                self.cx[k] = end;
                let mut pos = self.b_key[k];
                let mut c = 0;
                while pos > 0 {
                    c += self.tree[pos];
                    pos -= pos & pos.wrapping_neg();
                }
                self.cxy[k] = c;
            }
            start = end;
        }
    }
}

/// Dispatch on the statistic. For MDD the response is the conditioned-upon
/// side: the value is `mdd_sq(y | xb)`.
pub fn assoc_sq(kind: AssocKind, xb: &DataMatrix, y: &DataMatrix) -> Result<f64> {
    match kind {
        AssocKind::Dcov => dcov_sq(xb, y),
        AssocKind::Mdd => mdd_sq(y, xb),
        AssocKind::Bcov => bcov_sq(xb, y),
    }
}

/// Permutation p-value `(1 + #{T_π ≥ T}) / (n_perm + 1)` for the statistic
/// between `x` and a row-permuted `y`.
pub fn permutation_pvalue<R: Rng + ?Sized>(
    kind: AssocKind,
    x: &DataMatrix,
    y: &DataMatrix,
    n_perm: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = check_same_rows(x, y)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut exceed = 0usize;
    match kind {
        AssocKind::Dcov | AssocKind::Mdd => {
            // Permuting y permutes rows and columns of its centered kernel.
            let a = double_center(pairwise_distances(x).as_matrix())?;
            let c = match kind {
                AssocKind::Dcov => double_center(pairwise_distances(y).as_matrix())?,
                _ => double_center(&half_sq_distances(y))?,
            };
            let a = a.as_matrix();
            let c = c.as_matrix();
            let stat = |p: &[usize]| {
                let mut s = 0.0;
                for k in 0..n {
                    for l in 0..n {
                        s += a[(k, l)] * c[(p[k], p[l])];
                    }
                }
                s
            };
            let observed = stat(&perm);
            for _ in 0..n_perm {
                perm.shuffle(rng);
                if stat(&perm) >= observed {
                    exceed += 1;
                }
            }
        }
        AssocKind::Bcov => {
            let observed = bcov_sq(x, y)?;
            for _ in 0..n_perm {
                perm.shuffle(rng);
                if bcov_sq(x, &y.select_rows(&perm))? >= observed {
                    exceed += 1;
                }
            }
        }
    }
    Ok((1 + exceed) as f64 / (n_perm + 1) as f64)
}
