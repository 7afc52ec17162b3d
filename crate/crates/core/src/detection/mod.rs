//! Seasonal lag-logistic detection model with a random intercept per school
//! year: fitting, daily risk prediction and alert raising.
//!
//! The linear predictor for day `t` of year `j` is
//! `b0 + sum_{k=0..=l} b_{k+1} * lag_k(t) + b_{l+2} * sin + b_{l+3} * cos + gamma_j`
//! with `gamma_j ~ N(0, tau^2)`. Fits maximise the Laplace approximation
//! of the marginal likelihood; one training year (or a variance estimate at
//! the zero boundary) reduces to an ordinary logistic regression.

mod laplace;

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surveillance::{SurveillanceDataset, SurveillanceRow};

pub(crate) use laplace::logistic;
pub use laplace::{laplace_objective, logistic_loglik, LaplaceEval};

pub const ITERATION_CAP: usize = 200;
pub const RELATIVE_TOLERANCE: f64 = 1e-8;
pub const INITIAL_TAU_SQ: f64 = 0.1;
pub const RIDGE_PENALTY: f64 = 1e-4;

const IRLS_MAX_ITER: usize = 100;
const SEPARATION_COEF_LIMIT: f64 = 1e5;
const TAU_SQ_FLOOR: f64 = 1e-6;
const RHO_BOUNDS: (f64, f64) = (-30.0, 15.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagLogisticSpec {
    pub lag: usize,
    pub threshold: f64,
}

impl LagLogisticSpec {
    pub fn validate(&self, maxlag: usize) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Contract(format!("threshold must lie strictly inside (0, 1), got {}", self.threshold)));
        }
        if self.lag > maxlag {
            return Err(Error::Contract(format!("lag {} exceeds the dataset's maxlag {maxlag}", self.lag)));
        }
        Ok(())
    }
}

/// Row-major design matrix with group (school year) boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    x: Vec<f64>,
    pub y: Vec<f64>,
    cols: usize,
    pub groups: Vec<Range<usize>>,
}

impl Design {
    /// Builds a design from explicit rows; `groups` are consecutive row ranges.
    pub fn new(rows: Vec<Vec<f64>>, y: Vec<f64>, groups: Vec<Range<usize>>) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.len() != y.len() || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged design matrix".into()));
        }
        let covered: usize = groups.iter().map(|g| g.len()).sum();
        if covered != rows.len() || groups.iter().any(|g| g.end > rows.len()) {
            return Err(Error::Contract("groups must partition the rows".into()));
        }
        Ok(Design { x: rows.into_iter().flatten().collect(), y, cols, groups })
    }

    /// Predictor row for a surveillance day, or `None` when a lag is missing.
    pub fn predictors(row: &SurveillanceRow, lag: usize) -> Option<Vec<f64>> {
        let mut x = Vec::with_capacity(lag + 4);
        x.push(1.0);
        for k in 0..=lag {
            x.push((*row.lags.get(k)?)?);
        }
        x.push(row.sinterm);
        x.push(row.costerm);
        Some(x)
    }

    /// Training design for `selection`: each entry is a school year and an
    /// optional last date to include from it.
    pub fn from_dataset(dataset: &SurveillanceDataset, selection: &[(u32, Option<u32>)], lag: usize) -> Result<Self> {
        if lag > dataset.maxlag {
            return Err(Error::Contract(format!("lag {lag} exceeds the dataset's maxlag {}", dataset.maxlag)));
        }
        let blocks = dataset.years();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut groups = Vec::new();
        for &(year, cut) in selection {
            let block = blocks
                .iter()
                .find(|b| b.school_year == year)
                .ok_or_else(|| Error::Contract(format!("school year {year} not in dataset")))?;
            let start = rows.len();
            for row in dataset.year_rows(block) {
                if cut.is_some_and(|c| row.date > c) {
                    continue;
                }
                if let Some(x) = Design::predictors(row, lag) {
                    rows.push(x);
                    y.push(if row.case { 1.0 } else { 0.0 });
                }
            }
            if rows.len() > start {
                groups.push(start..rows.len());
            }
        }
        if rows.is_empty() {
            return Err(Error::Evaluation("no complete training rows".into()));
        }
        Design::new(rows, y, groups)
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.cols..(i + 1) * self.cols]
    }
}

/// Fitted lag-logistic model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub lag: usize,
    pub training_years: Vec<u32>,
    /// Intercept, `lag + 1` lag coefficients, sine, cosine.
    pub beta: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub tau_sq: f64,
    /// Conditional modes of the training-year intercepts.
    pub gamma: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when separation forced the ridge-stabilised fallback.
    pub ridge: bool,
}

impl ModelFit {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.beta).map(|(a, b)| a * b).sum()
    }
}

struct FixedFit {
    beta: Vec<f64>,
    loglik: f64,
    info: DMatrix<f64>,
    converged: bool,
    iterations: usize,
}

/// Newton-Raphson (IRLS) for the penalised logistic log-likelihood.
fn fit_fixed(design: &Design, ridge: f64) -> FixedFit {
    let p = design.cols();
    let mut beta = vec![0.0; p];
    let mut loglik = logistic_loglik(design, &beta, ridge);
    let mut info = DMatrix::zeros(p, p);
    for iter in 1..=IRLS_MAX_ITER {
        let mut score = DVector::from_iterator(p, beta.iter().map(|b| -ridge * b));
        info.fill(0.0);
        for d in 0..p {
            info[(d, d)] = ridge;
        }
        for i in 0..design.rows() {
            let x = design.row(i);
            let mu = logistic(x.iter().zip(&beta).map(|(a, b)| a * b).sum());
            let w = mu * (1.0 - mu);
            let r = design.y[i] - mu;
            for a in 0..p {
                score[a] += r * x[a];
                let wa = w * x[a];
                for b in 0..=a {
                    info[(a, b)] += wa * x[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let Some(chol) = info.clone().cholesky() else {
            return FixedFit { beta, loglik, info, converged: false, iterations: iter };
        };
        let step = chol.solve(&score);
        let mut scale = 1.0;
        let (next, next_ll) = loop {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let ll = logistic_loglik(design, &trial, ridge);
            if ll >= loglik - 1e-12 * loglik.abs() || scale < 1e-8 {
                break (trial, ll);
            }
            scale *= 0.5;
        };
        let moved = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let size = next.iter().map(|b| b.abs()).fold(0.0, f64::max);
        beta = next;
        loglik = next_ll;
        if !beta.iter().all(|b| b.is_finite()) || size > SEPARATION_COEF_LIMIT {
            return FixedFit { beta, loglik, info, converged: false, iterations: iter };
        }
        if moved <= 1e-10 * (1.0 + size) {
            return FixedFit { beta, loglik, info, converged: true, iterations: iter };
        }
    }
    FixedFit { beta, loglik, info, converged: false, iterations: IRLS_MAX_ITER }
}

fn inverse_sqrt_diag(m: &DMatrix<f64>, take: usize) -> Vec<f64> {
    match m.clone().cholesky() {
        Some(c) => {
            let inv = c.inverse();
            (0..take).map(|i| inv[(i, i)].sqrt()).collect()
        }
        None => vec![f64::NAN; take],
    }
}

struct BfgsOutcome {
    x: Vec<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
}

/// Quasi-Newton minimisation with backtracking (Armijo) line search.
fn minimize_bfgs(
    objective: impl Fn(&[f64]) -> (f64, Vec<f64>),
    x0: Vec<f64>,
    h0: DMatrix<f64>,
    clamp: impl Fn(&mut [f64]),
) -> BfgsOutcome {
    let n = x0.len();
    let mut x = x0;
    let (mut f, g) = objective(&x);
    let mut g = DVector::from_vec(g);
    let mut h = h0.clone();
    for iter in 1..=ITERATION_CAP {
        let mut d = -(&h * &g);
        if g.dot(&d) >= 0.0 {
            h = h0.clone();
            d = -(&h * &g);
        }
        let slope = g.dot(&d);
        let mut step = 1.0;
        let accepted = loop {
            let mut trial: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + step * b).collect();
            clamp(&mut trial);
            let (ft, gt) = objective(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                break Some((trial, ft, gt));
            }
            step *= 0.5;
            if step < 1e-12 {
                break None;
            }
        };
        let Some((xn, fn_, gn)) = accepted else {
            let small = g.amax() < 1e-6;
            return BfgsOutcome { x, value: f, converged: small, iterations: iter };
        };
        let gn = DVector::from_vec(gn);
        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - rho * &s * yv.transpose();
            let right = &eye - rho * &yv * s.transpose();
            h = &left * &h * &right + rho * &s * s.transpose();
        }
        let change = (f - fn_).abs() / f.abs().max(1e-300);
        x = xn;
        f = fn_;
        g = gn;
        if change < RELATIVE_TOLERANCE || g.amax() < 1e-10 {
            return BfgsOutcome { x, value: f, converged: true, iterations: iter };
        }
    }
    BfgsOutcome { x, value: f, converged: false, iterations: ITERATION_CAP }
}

/// Hessian of the negative Laplace objective by central differences of the
/// analytic gradient.
fn numeric_hessian(design: &Design, params: &[f64], ridge: f64) -> DMatrix<f64> {
    let n = params.len();
    let mut hess = DMatrix::zeros(n, n);
    for k in 0..n {
        let h = 1e-5 * params[k].abs().max(1.0);
        let mut up = params.to_vec();
        let mut down = params.to_vec();
        up[k] += h;
        down[k] -= h;
        let gu = laplace_objective(design, &up, ridge).gradient;
        let gd = laplace_objective(design, &down, ridge).gradient;
        for r in 0..n {
            hess[(r, k)] = -(gu[r] - gd[r]) / (2.0 * h);
        }
    }
    (&hess + hess.transpose()) * 0.5
}

/// Fits the model on whole training years.
pub fn fit(dataset: &SurveillanceDataset, training_years: &[u32], lag: usize) -> Result<ModelFit> {
    let selection: Vec<(u32, Option<u32>)> = training_years.iter().map(|&y| (y, None)).collect();
    fit_selection(dataset, &selection, lag)
}

/// Fits the model on `(year, last included date)` selections.
pub fn fit_selection(dataset: &SurveillanceDataset, selection: &[(u32, Option<u32>)], lag: usize) -> Result<ModelFit> {
    if selection.is_empty() {
        return Err(Error::Contract("at least one training year is required".into()));
    }
    let design = Design::from_dataset(dataset, selection, lag)?;
    let mut model = fit_design(&design)?;
    model.lag = lag;
    model.training_years = selection.iter().map(|s| s.0).collect();
    if model.gamma.len() != selection.len() {
        // A training year without complete rows has no data; its mode is 0.
        let mut gamma = vec![0.0; selection.len()];
        gamma[..model.gamma.len()].copy_from_slice(&model.gamma);
        model.gamma = gamma;
    }
    Ok(model)
}

/// Fits the model to a prepared design. `lag` and `training_years` of the
/// result are left for the caller to fill.
pub fn fit_design(design: &Design) -> Result<ModelFit> {
    let p = design.cols();
    let groups = design.groups.len();
    let all_same = design.y.iter().all(|&v| v == design.y[0]);

    let mut ridge = 0.0;
    let mut fixed = fit_fixed(design, ridge);
    if all_same || !fixed.converged {
        ridge = RIDGE_PENALTY;
        fixed = fit_fixed(design, ridge);
    }
    let fixed_model = |fixed: &FixedFit| ModelFit {
        lag: 0,
        training_years: Vec::new(),
        beta: fixed.beta.clone(),
        std_errors: inverse_sqrt_diag(&fixed.info, p),
        tau_sq: 0.0,
        gamma: vec![0.0; groups],
        log_likelihood: fixed.loglik,
        converged: fixed.converged,
        iterations: fixed.iterations,
        ridge: ridge > 0.0,
    };
    if groups < 2 {
        return Ok(fixed_model(&fixed));
    }

    let mut x0 = fixed.beta.clone();
    x0.push(INITIAL_TAU_SQ.ln());
    let mut h0 = DMatrix::<f64>::identity(p + 1, p + 1);
    if let Some(c) = fixed.info.clone().cholesky() {
        h0.view_mut((0, 0), (p, p)).copy_from(&c.inverse());
    }
    let outcome = minimize_bfgs(
        |params| {
            let eval = laplace_objective(design, params, ridge);
            (-eval.value, eval.gradient.iter().map(|g| -g).collect())
        },
        x0,
        h0,
        |params| {
            let last = params.len() - 1;
            params[last] = params[last].clamp(RHO_BOUNDS.0, RHO_BOUNDS.1);
        },
    );
    let tau_sq = outcome.x[p].exp();
    let marginal = -outcome.value;
    if tau_sq < TAU_SQ_FLOOR || marginal <= fixed.loglik + 1e-9 * fixed.loglik.abs() {
        let mut model = fixed_model(&fixed);
        model.converged = fixed.converged && outcome.converged;
        model.iterations += outcome.iterations;
        return Ok(model);
    }
    let eval = laplace_objective(design, &outcome.x, ridge);
    let hess = numeric_hessian(design, &outcome.x, ridge);
    let converged = outcome.converged && outcome.x.iter().all(|v| v.is_finite());
    Ok(ModelFit {
        lag: 0,
        training_years: Vec::new(),
        beta: outcome.x[..p].to_vec(),
        std_errors: inverse_sqrt_diag(&hess, p),
        tau_sq,
        gamma: eval.modes,
        log_likelihood: eval.value,
        converged,
        iterations: fixed.iterations + outcome.iterations,
        ridge: ridge > 0.0,
    })
}

/// Population-level daily risk (`gamma = 0`) for the rows of one school
/// year, indexed like `year_rows`; `None` where a lag is missing.
pub fn predict_daily_risk(model: &ModelFit, year_rows: &[SurveillanceRow], lag: usize) -> Result<Vec<Option<f64>>> {
    if model.lag != lag || model.beta.len() != lag + 4 {
        return Err(Error::Contract(format!(
            "model fitted with lag {} ({} coefficients) used at lag {lag}",
            model.lag,
            model.beta.len()
        )));
    }
    Ok(year_rows.iter().map(|row| Design::predictors(row, lag).map(|x| logistic(model.linear_predictor(&x)))).collect())
}

/// Alert days of one school year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertTrace {
    pub year: u32,
    pub alert_days: Vec<u32>,
}

/// Days `t` with `year_start <= t <= reference` whose risk exceeds the
/// threshold. `risk[i]` belongs to `dates[i]`.
pub fn raise_alerts(
    year: u32,
    dates: &[u32],
    risk: &[Option<f64>],
    spec: &LagLogisticSpec,
    year_start: u32,
    reference: u32,
) -> Result<AlertTrace> {
    if !(spec.threshold > 0.0 && spec.threshold < 1.0) {
        return Err(Error::Contract(format!("threshold must lie strictly inside (0, 1), got {}", spec.threshold)));
    }
    if dates.len() != risk.len() {
        return Err(Error::Contract("dates and risk lengths differ".into()));
    }
    let mut alert_days: Vec<u32> = dates
        .iter()
        .zip(risk)
        .filter(|(&d, r)| d >= year_start && d <= reference && r.is_some_and(|v| v > spec.threshold))
        .map(|(&d, _)| d)
        .collect();
    alert_days.sort_unstable();
    alert_days.dedup();
    Ok(AlertTrace { year, alert_days })
}
