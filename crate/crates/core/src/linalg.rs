//! Deterministic fitted models: least squares, logistic regression,
//! REML-penalized mixed-model regression and the Box-Cox transform.
//!
//! All fits are pure functions of their inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A dense design matrix with a name per column.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
}

impl DesignMatrix {
    pub fn new(matrix: DMatrix<f64>, names: Vec<String>) -> Self {
        debug_assert_eq!(matrix.ncols(), names.len());
        Self { matrix, names }
    }

    /// Unnamed columns are labelled `c0, c1, ...`.
    pub fn unnamed(matrix: DMatrix<f64>) -> Self {
        let names = (0..matrix.ncols()).map(|j| format!("c{j}")).collect();
        Self { matrix, names }
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        DesignMatrix {
            matrix: self.matrix.select_rows(rows.iter()),
            names: self.names.clone(),
        }
    }

    /// Horizontal concatenation.
    pub fn hstack(&self, other: &DesignMatrix) -> DesignMatrix {
        assert_eq!(self.nrows(), other.nrows(), "row mismatch in hstack");
        let mut m = DMatrix::zeros(self.nrows(), self.ncols() + other.ncols());
        m.columns_mut(0, self.ncols()).copy_from(&self.matrix);
        m.columns_mut(self.ncols(), other.ncols()).copy_from(&other.matrix);
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        DesignMatrix { matrix: m, names }
    }
}

fn check_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite values")))
    }
}

/// Ordinary least-squares fit.
#[derive(Clone, Debug)]
pub struct LinearFit {
    /// Coefficients in design-column order (intercept first when present).
    pub coefficients: Vec<f64>,
    /// `RSS / (n - p)`, zero when the fit is saturated.
    pub residual_variance: f64,
}

impl LinearFit {
    pub fn predict(&self, design: &DMatrix<f64>) -> Vec<f64> {
        let beta = DVector::from_column_slice(&self.coefficients);
        (design * beta).iter().copied().collect()
    }
}

/// Least squares through a Householder QR of the design.
pub fn ols_fit(design: &DesignMatrix, y: &[f64]) -> Result<LinearFit> {
    let (n, p) = design.matrix.shape();
    if n != y.len() {
        return Err(Error::InvalidInput(format!("design has {n} rows but y has {}", y.len())));
    }
    if n < p || p == 0 {
        return Err(Error::InvalidInput(format!("least squares needs rows >= cols > 0 (got {n}x{p})")));
    }
    check_finite("design", design.matrix.iter().copied())?;
    check_finite("outcome", y.iter().copied())?;

    let qr = design.matrix.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let col_norm = design.matrix.column(j).norm();
        if r[(j, j)].abs() <= 1e-10 * col_norm.max(f64::MIN_POSITIVE) || col_norm == 0.0 {
            return Err(Error::RankDeficient {
                index: j,
                name: design.names[j].clone(),
            });
        }
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let resid = &yv - &design.matrix * &beta;
    let rss = resid.norm_squared();
    let residual_variance = if n > p { rss / (n - p) as f64 } else { 0.0 };
    Ok(LinearFit {
        coefficients: beta.iter().copied().collect(),
        residual_variance,
    })
}

/// Maximum-likelihood logistic regression.
#[derive(Clone, Debug)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

pub(crate) fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

impl LogisticFit {
    /// Fitted response probabilities `expit(X theta)`.
    pub fn predict(&self, design: &DMatrix<f64>) -> Vec<f64> {
        let theta = DVector::from_column_slice(&self.coefficients);
        (design * theta).iter().map(|&e| expit(e)).collect()
    }
}

const IRLS_MAX_ITER: usize = 100;
const IRLS_TOL: f64 = 1e-8;
const IRLS_JITTER: f64 = 1e-10;
const SEPARATION_NORM: f64 = 30.0;

/// Logistic regression by iteratively reweighted least squares.
///
/// The iteration runs on a standardized copy of the design (non-constant
/// columns scaled to unit standard deviation, and centred when a constant
/// column is present), so the separation threshold does not depend on the
/// units of the covariates. Coefficients are returned on the original scale.
pub fn logistic_fit(design: &DesignMatrix, r: &[bool]) -> Result<LogisticFit> {
    let (n, p) = design.matrix.shape();
    if n != r.len() {
        return Err(Error::InvalidInput(format!("design has {n} rows but r has {}", r.len())));
    }
    check_finite("design", design.matrix.iter().copied())?;
    let ones = r.iter().filter(|&&v| v).count();
    if ones == 0 || ones == n {
        return Err(Error::SingleClass(n));
    }

    let mut mean = vec![0.0; p];
    let mut scale = vec![1.0; p];
    let mut constant_col = None;
    for j in 0..p {
        let col = design.matrix.column(j);
        let m = col.mean();
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd <= 1e-12 * m.abs().max(1.0) {
            if m == 0.0 {
                return Err(Error::RankDeficient {
                    index: j,
                    name: design.names[j].clone(),
                });
            }
            if constant_col.is_none() {
                constant_col = Some(j);
            } else {
                return Err(Error::RankDeficient {
                    index: j,
                    name: design.names[j].clone(),
                });
            }
            scale[j] = m;
        } else {
            mean[j] = m;
            scale[j] = sd;
        }
    }
    let centre = constant_col.is_some();
    let mut xs = design.matrix.clone();
    for j in 0..p {
        if Some(j) == constant_col {
            xs.column_mut(j).fill(1.0);
            continue;
        }
        let (m, s) = (if centre { mean[j] } else { 0.0 }, scale[j]);
        xs.column_mut(j).apply(|v| *v = (*v - m) / s);
    }

    let rv: Vec<f64> = r.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut theta = DVector::<f64>::zeros(p);
    if let Some(c) = constant_col {
        let rate = ones as f64 / n as f64;
        theta[c] = (rate / (1.0 - rate)).ln();
    }
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=IRLS_MAX_ITER {
        iterations = it;
        let eta = &xs * &theta;
        let mut w = DVector::zeros(n);
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let pi = expit(eta[i]);
            let wi = (pi * (1.0 - pi)).max(1e-12);
            w[i] = wi;
            z[i] = eta[i] + (rv[i] - pi) / wi;
        }
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwz = DVector::zeros(p);
        for i in 0..n {
            let row = xs.row(i);
            for a in 0..p {
                let wa = w[i] * row[a];
                xtwz[a] += wa * z[i];
                for b in a..p {
                    xtwx[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
            xtwx[(a, a)] += IRLS_JITTER;
        }
        let chol = xtwx
            .cholesky()
            .ok_or_else(|| Error::Numerical("IRLS weighted crossproduct is not positive definite".into()))?;
        let next = chol.solve(&xtwz);
        let change = (&next - &theta).amax();
        theta = next;
        let norm = theta.norm();
        if !norm.is_finite() || norm > SEPARATION_NORM {
            return Err(Error::Separation { norm });
        }
        if change < IRLS_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("logistic IRLS did not converge in {IRLS_MAX_ITER} iterations");
    }

    let mut coef = vec![0.0; p];
    let mut shift = 0.0;
    for j in 0..p {
        if Some(j) == constant_col {
            continue;
        }
        coef[j] = theta[j] / scale[j];
        if centre {
            shift += coef[j] * mean[j];
        }
    }
    if let Some(c) = constant_col {
        coef[c] = (theta[c] - shift) / scale[c];
    }
    Ok(LogisticFit {
        coefficients: coef,
        converged,
        iterations,
    })
}

/// Penalized regression `y = X b + Z u + e` with `u ~ N(0, su2 I)` and
/// `e ~ N(0, s2 I)`.
#[derive(Clone, Debug)]
pub struct MixedModelFit {
    pub fixed: Vec<f64>,
    pub random: Vec<f64>,
    /// Penalty scale `lambda`; the ridge weight on the random block is `lambda^2 = s2 / su2`.
    pub lambda: f64,
    /// Residual variance estimate.
    pub sigma2: f64,
    /// Random-effect variance estimate (`0` when the spline collapses).
    pub sigma_u2: f64,
}

impl MixedModelFit {
    pub fn ridge(&self) -> f64 {
        self.lambda * self.lambda
    }

    pub fn predict(&self, fixed: &DMatrix<f64>, random: &DMatrix<f64>) -> Vec<f64> {
        let b = DVector::from_column_slice(&self.fixed);
        let mut out = fixed * b;
        if !self.random.is_empty() {
            out += random * DVector::from_column_slice(&self.random);
        }
        out.iter().copied().collect()
    }
}

/// Cross products for repeated penalized solves at varying ridge weight.
struct PenalizedSystem {
    ctc: DMatrix<f64>,
    cty: DVector<f64>,
    yty: f64,
    /// Fixed columns are scaled by these factors inside `ctc`/`cty`.
    fixed_scale: Vec<f64>,
    n: usize,
    p: usize,
    h: usize,
}

struct PenalizedSolve {
    coef: DVector<f64>,
    rss_pen: f64,
    logdet: f64,
}

impl PenalizedSystem {
    fn new(fixed: &DMatrix<f64>, random: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        let (n, p) = fixed.shape();
        let h = random.ncols();
        if random.nrows() != n || y.len() != n {
            return Err(Error::InvalidInput("mixed model matrices are not conformable".into()));
        }
        if n < p {
            return Err(Error::InvalidInput(format!("mixed model needs rows >= fixed cols ({n} < {p})")));
        }
        check_finite("fixed design", fixed.iter().copied())?;
        check_finite("random design", random.iter().copied())?;
        check_finite("outcome", y.iter().copied())?;
        let fixed_scale: Vec<f64> = (0..p)
            .map(|j| {
                let norm = fixed.column(j).norm() / (n as f64).sqrt();
                if norm > 0.0 { norm } else { 1.0 }
            })
            .collect();
        let mut c = DMatrix::zeros(n, p + h);
        for j in 0..p {
            c.column_mut(j).copy_from(&(fixed.column(j) / fixed_scale[j]));
        }
        c.columns_mut(p, h).copy_from(random);
        let yv = DVector::from_column_slice(y);
        Ok(Self {
            ctc: c.tr_mul(&c),
            cty: c.tr_mul(&yv),
            yty: yv.norm_squared(),
            fixed_scale,
            n,
            p,
            h,
        })
    }

    fn solve(&self, ridge: f64) -> Result<PenalizedSolve> {
        let mut m = self.ctc.clone();
        for k in self.p..self.p + self.h {
            m[(k, k)] += ridge;
        }
        let chol = m.cholesky().ok_or_else(|| {
            Error::Numerical(format!("penalized system not positive definite at ridge {ridge:e}"))
        })?;
        let coef = chol.solve(&self.cty);
        let rss_pen = (self.yty - coef.dot(&self.cty)).max(0.0);
        let logdet = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        Ok(PenalizedSolve { coef, rss_pen, logdet })
    }

    /// Restricted log-likelihood profiled over the residual variance.
    fn reml(&self, log_ridge: f64) -> f64 {
        let ridge = log_ridge.exp();
        match self.solve(ridge) {
            Ok(s) => {
                let dof = (self.n - self.p) as f64;
                let rss = s.rss_pen.max(1e-300 * self.yty.max(1.0));
                -0.5 * (dof * rss.ln() + s.logdet - self.h as f64 * log_ridge)
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn finish(&self, ridge: f64) -> Result<MixedModelFit> {
        let s = self.solve(ridge)?;
        let fixed = (0..self.p).map(|j| s.coef[j] / self.fixed_scale[j]).collect();
        let random: Vec<f64> = (self.p..self.p + self.h).map(|k| s.coef[k]).collect();
        let dof = (self.n - self.p).max(1) as f64;
        let sigma2 = s.rss_pen / dof;
        Ok(MixedModelFit {
            fixed,
            random,
            lambda: ridge.sqrt(),
            sigma2,
            sigma_u2: sigma2 / ridge,
        })
    }
}

/// Penalized fit at an externally supplied `lambda` (ridge weight `lambda^2`
/// on the random block only).
pub fn penalized_fit(
    fixed: &DMatrix<f64>,
    random: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
) -> Result<MixedModelFit> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    PenalizedSystem::new(fixed, random, y)?.finish(lambda * lambda)
}

const REML_GRID_DECADES: f64 = 10.0;
const REML_GRID_POINTS: usize = 81;

/// Penalized spline fit with the ridge weight chosen by REML.
///
/// The ridge weight `s2 / su2` is profiled over a log grid spanning
/// `1e-10..1e10` times the mean diagonal of `Z'Z`, then refined by golden
/// section. A maximum at the upper end of the grid means `su2 -> 0`; the fit
/// then carries the largest grid ridge and effectively zero random effects.
pub fn reml_spline_fit(fixed: &DMatrix<f64>, random: &DMatrix<f64>, y: &[f64]) -> Result<MixedModelFit> {
    let sys = PenalizedSystem::new(fixed, random, y)?;
    if sys.h == 0 {
        return sys.finish(0.0);
    }
    let zdiag = (sys.p..sys.p + sys.h).map(|k| sys.ctc[(k, k)]).sum::<f64>() / sys.h as f64;
    let centre = zdiag.max(1e-300).ln();
    let span = REML_GRID_DECADES * std::f64::consts::LN_10;
    let lo = centre - span;
    let hi = centre + span;
    let step = (hi - lo) / (REML_GRID_POINTS - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..REML_GRID_POINTS)
        .map(|i| {
            let t = lo + step * i as f64;
            (t, sys.reml(t))
        })
        .collect();
    let (best, _) = grid
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &(_, v))| if v > acc.1 { (i, v) } else { acc });
    if !grid[best].1.is_finite() {
        return Err(Error::Numerical("REML criterion is not finite anywhere on the grid".into()));
    }
    let log_ridge = if best == 0 || best == REML_GRID_POINTS - 1 {
        grid[best].0
    } else {
        golden_max(|t| sys.reml(t), grid[best - 1].0, grid[best + 1].0, 1e-8)
    };
    sys.finish(log_ridge.exp())
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Box-Cox fit; the working transform uses `lambda_tilde = lambda_hat + 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxCoxFit {
    pub lambda_hat: f64,
    pub lambda_tilde: f64,
}

/// Grid for the Box-Cox profile likelihood.
#[derive(Clone, Copy, Debug)]
pub struct BoxCoxGrid {
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
}

impl Default for BoxCoxGrid {
    fn default() -> Self {
        Self {
            lower: -2.0,
            upper: 2.0,
            step: 0.01,
        }
    }
}

/// `(y^lambda - 1) / lambda`, `ln y` at `lambda = 0`.
pub fn box_cox_transform(y: f64, lambda: f64) -> f64 {
    let ly = y.ln();
    if lambda.abs() < 1e-12 {
        ly
    } else {
        (lambda * ly).exp_m1() / lambda
    }
}

/// Inverse of [`box_cox_transform`]; NaN outside the transform's range.
pub fn box_cox_inverse(t: f64, lambda: f64) -> f64 {
    if lambda.abs() < 1e-12 {
        t.exp()
    } else {
        let base = lambda * t + 1.0;
        if base <= 0.0 {
            f64::NAN
        } else {
            (base.ln() / lambda).exp()
        }
    }
}

/// Box-Cox profile log-likelihood (up to a constant).
pub fn box_cox_profile_loglik(y: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let sum_log: f64 = y.iter().map(|v| v.ln()).sum();
    let t: Vec<f64> = y.iter().map(|&v| box_cox_transform(v, lambda)).collect();
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    -0.5 * n * var.ln() + (lambda - 1.0) * sum_log
}

impl BoxCoxFit {
    pub fn transform(&self, y: f64) -> f64 {
        box_cox_transform(y, self.lambda_tilde)
    }

    pub fn inverse(&self, t: f64) -> f64 {
        box_cox_inverse(t, self.lambda_tilde)
    }
}

pub fn box_cox(y: &[f64]) -> Result<BoxCoxFit> {
    box_cox_with_grid(y, BoxCoxGrid::default())
}

pub fn box_cox_with_grid(y: &[f64], grid: BoxCoxGrid) -> Result<BoxCoxFit> {
    if y.len() < 2 {
        return Err(Error::InvalidInput("Box-Cox needs at least two values".into()));
    }
    if let Some(bad) = y.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("Box-Cox requires positive finite values, found {bad}")));
    }
    if !(grid.step > 0.0) || grid.upper < grid.lower {
        return Err(Error::InvalidInput("Box-Cox grid is empty".into()));
    }
    let steps = ((grid.upper - grid.lower) / grid.step + 1e-9).floor() as usize;
    let mut best = (grid.lower, f64::NEG_INFINITY);
    for i in 0..=steps {
        let lambda = grid.lower + grid.step * i as f64;
        let ll = box_cox_profile_loglik(y, lambda);
        if ll > best.1 {
            best = (lambda, ll);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::Numerical("Box-Cox likelihood degenerate (constant data?)".into()));
    }
    // Snap grid rounding error, e.g. 0.30000000000000004.
    let lambda_hat = (best.0 / grid.step).round() * grid.step;
    Ok(BoxCoxFit {
        lambda_hat,
        lambda_tilde: lambda_hat + 1.0,
    })
}
