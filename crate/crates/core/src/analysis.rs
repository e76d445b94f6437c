//! Time-series diagnostics over training curves: differencing, a unit-root
//! regression test, nested-model causality F-tests, and mean/variance
//! summaries.

use crate::error::{Error, Result};

/// One logged curve (a value per epoch).
#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub label: String,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("time series contains non-finite values".into()));
        }
        Ok(Self {
            label: label.into(),
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Minimum series length for any statistical test.
pub const MIN_TEST_LENGTH: usize = 10;

/// k-th order differencing: y'_t = y_t - y_{t-1}, applied k times.
pub fn difference(series: &[f64], k: usize) -> Result<Vec<f64>> {
    if series.len() <= k {
        return Err(Error::Invalid(format!(
            "cannot difference a length-{} series {} times",
            series.len(),
            k
        )));
    }
    let mut out = series.to_vec();
    for _ in 0..k {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(out)
}

/// Ordinary least squares by normal equations with partial-pivot Gaussian
/// elimination; returns coefficients, residual sum of squares and the
/// diagonal of (X^T X)^-1 for standard errors.
struct OlsFit {
    coef: Vec<f64>,
    rss: f64,
    xtx_inv_diag: Vec<f64>,
    n: usize,
    k: usize,
}

fn ols(rows: &[Vec<f64>], y: &[f64]) -> Result<OlsFit> {
    let n = rows.len();
    assert_eq!(n, y.len());
    let k = rows.first().map(|r| r.len()).unwrap_or(0);
    if n == 0 || k == 0 {
        return Err(Error::Invalid("empty regression".into()));
    }
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (row, &yi) in rows.iter().zip(y) {
        for i in 0..k {
            xty[i] += row[i] * yi;
            for j in 0..k {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    let inv = invert(&xtx)?;
    let coef: Vec<f64> = (0..k)
        .map(|i| (0..k).map(|j| inv[i][j] * xty[j]).sum())
        .collect();
    let mut rss = 0.0;
    for (row, &yi) in rows.iter().zip(y) {
        let fit: f64 = row.iter().zip(&coef).map(|(x, c)| x * c).sum();
        let r = yi - fit;
        rss += r * r;
    }
    let xtx_inv_diag = (0..k).map(|i| inv[i][i]).collect();
    Ok(OlsFit {
        coef,
        rss,
        xtx_inv_diag,
        n,
        k,
    })
}

/// Gauss-Jordan inversion with partial pivoting; singular matrices error.
fn invert(m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = m
        .iter()
        .flat_map(|r| r.iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
        .max(1.0);
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| {
                a[i][col]
                    .abs()
                    .partial_cmp(&a[j][col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if a[pivot][col].abs() < 1e-12 * scale {
            return Err(Error::Numeric("singular regression matrix".into()));
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for j in 0..k {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for i in 0..k {
            if i == col {
                continue;
            }
            let f = a[i][col];
            if f == 0.0 {
                continue;
            }
            for j in 0..k {
                a[i][j] -= f * a[col][j];
                inv[i][j] -= f * inv[col][j];
            }
        }
    }
    Ok(inv)
}

/// Decision buckets against the embedded constant-only asymptotic critical
/// values (-3.43, -2.86, -2.57 at 1/5/10%).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitRootDecision {
    RejectAt1Percent,
    RejectAt5Percent,
    RejectAt10Percent,
    FailToReject,
}

impl UnitRootDecision {
    pub fn rejects_at_5(&self) -> bool {
        matches!(
            self,
            UnitRootDecision::RejectAt1Percent | UnitRootDecision::RejectAt5Percent
        )
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            UnitRootDecision::RejectAt1Percent => "reject@1%",
            UnitRootDecision::RejectAt5Percent => "reject@5%",
            UnitRootDecision::RejectAt10Percent => "reject@10%",
            UnitRootDecision::FailToReject => "fail-to-reject",
        }
    }
}

pub const ADF_CRITICAL_1: f64 = -3.43;
pub const ADF_CRITICAL_5: f64 = -2.86;
pub const ADF_CRITICAL_10: f64 = -2.57;

#[derive(Debug, Clone)]
pub struct AdfResult {
    pub t_stat: f64,
    pub decision: UnitRootDecision,
    pub n_effective: usize,
    pub lag: usize,
}

/// Augmented unit-root regression with a constant and `lag` difference
/// terms: regress dy_t on (1, y_{t-1}, dy_{t-1} .. dy_{t-lag}); the t
/// statistic of the level coefficient is compared with the embedded
/// critical values, most stringent rejection first.
pub fn adf_test(series: &[f64], lag: usize) -> Result<AdfResult> {
    if series.len() < MIN_TEST_LENGTH {
        return Err(Error::Invalid(format!(
            "series length >= {MIN_TEST_LENGTH} required, got {}",
            series.len()
        )));
    }
    if series.len() < lag + MIN_TEST_LENGTH {
        return Err(Error::Invalid(format!(
            "series length {} too short for lag {lag}",
            series.len()
        )));
    }
    let n = series.len();
    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let mut rows = Vec::new();
    let mut target = Vec::new();
    for t in lag..dy.len() {
        let mut row = vec![1.0, series[t]];
        for j in 1..=lag {
            row.push(dy[t - j]);
        }
        rows.push(row);
        target.push(dy[t]);
    }
    let fit = ols(&rows, &target)?;
    let dof = fit.n as f64 - fit.k as f64;
    if dof <= 0.0 {
        return Err(Error::Invalid("insufficient degrees of freedom".into()));
    }
    let sigma2 = fit.rss / dof;
    let se = (sigma2 * fit.xtx_inv_diag[1]).sqrt();
    if se == 0.0 || !se.is_finite() {
        return Err(Error::Numeric("singular regression matrix".into()));
    }
    let t_stat = fit.coef[1] / se;
    let decision = if t_stat < ADF_CRITICAL_1 {
        UnitRootDecision::RejectAt1Percent
    } else if t_stat < ADF_CRITICAL_5 {
        UnitRootDecision::RejectAt5Percent
    } else if t_stat < ADF_CRITICAL_10 {
        UnitRootDecision::RejectAt10Percent
    } else {
        UnitRootDecision::FailToReject
    };
    let _ = n;
    Ok(AdfResult {
        t_stat,
        decision,
        n_effective: fit.n,
        lag,
    })
}

#[derive(Debug, Clone)]
pub struct GrangerResult {
    pub f_stat: f64,
    pub rss_restricted: f64,
    pub rss_unrestricted: f64,
    pub n_effective: usize,
    pub lag: usize,
}

/// Nested-regression test of whether lags of `x` improve the prediction of
/// `y`. Restricted model: y_t on (1, y_{t-1..t-q}); unrestricted adds
/// x_{t-1..t-q}. Stationarity of both series is the caller's responsibility.
pub fn granger_f(x: &[f64], y: &[f64], lag: usize) -> Result<GrangerResult> {
    if x.len() != y.len() {
        return Err(Error::Invalid(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if lag == 0 {
        return Err(Error::Invalid("lag must be at least 1".into()));
    }
    let n = y.len();
    if n < MIN_TEST_LENGTH {
        return Err(Error::Invalid(format!(
            "series length >= {MIN_TEST_LENGTH} required, got {n}"
        )));
    }
    if n <= 2 * lag + 5 {
        return Err(Error::Invalid(format!(
            "series length {n} leaves insufficient degrees of freedom for lag {lag}"
        )));
    }
    let mut rows_r = Vec::new();
    let mut rows_u = Vec::new();
    let mut target = Vec::new();
    for t in lag..n {
        let mut row_r = vec![1.0];
        for j in 1..=lag {
            row_r.push(y[t - j]);
        }
        let mut row_u = row_r.clone();
        for j in 1..=lag {
            row_u.push(x[t - j]);
        }
        rows_r.push(row_r);
        rows_u.push(row_u);
        target.push(y[t]);
    }
    let fit_r = ols(&rows_r, &target)?;
    let fit_u = ols(&rows_u, &target)?;
    let n_eff = fit_u.n;
    let dof = n_eff as f64 - (2 * lag + 1) as f64;
    if dof <= 0.0 {
        return Err(Error::Invalid("insufficient degrees of freedom".into()));
    }
    let f_stat = ((fit_r.rss - fit_u.rss) / lag as f64) / (fit_u.rss / dof);
    Ok(GrangerResult {
        f_stat,
        rss_restricted: fit_r.rss,
        rss_unrestricted: fit_u.rss,
        n_effective: n_eff,
        lag,
    })
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub mean: f64,
    pub variance: f64,
    pub mean_variance_ratio: f64,
}

/// Mean, sample variance (n-1 denominator) and their ratio.
pub fn summarize(series: &[f64]) -> Result<Summary> {
    if series.len() < 2 {
        return Err(Error::Invalid("summary requires at least two values".into()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let variance = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if variance == 0.0 {
        return Err(Error::Numeric(
            "zero variance: mean/variance ratio undefined".into(),
        ));
    }
    Ok(Summary {
        mean,
        variance,
        mean_variance_ratio: mean / variance,
    })
}
