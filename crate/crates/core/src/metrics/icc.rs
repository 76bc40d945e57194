use serde::{Deserialize, Serialize};

use super::special::f_quantile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Icc {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Two-way ANOVA mean squares of an `n x k` table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSquares {
    pub rows: f64,
    pub columns: f64,
    pub error: f64,
    pub total_ss: f64,
}

fn check_table(ratings: &[Vec<f64>]) -> Result<(usize, usize)> {
    let n = ratings.len();
    let k = ratings.first().map_or(0, Vec::len);
    if n < 5 {
        return Err(Error::InvalidInput(format!("ICC needs at least 5 rows, got {n}")));
    }
    if k < 2 {
        return Err(Error::InvalidInput(format!("ICC needs at least 2 raters, got {k}")));
    }
    if let Some(i) = ratings.iter().position(|r| r.len() != k) {
        return Err(Error::InvalidInput(format!(
            "ICC row {i} has {} cells, expected {k}",
            ratings[i].len()
        )));
    }
    if ratings.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ICC ratings".into()));
    }
    Ok((n, k))
}

pub fn mean_squares(ratings: &[Vec<f64>]) -> Result<MeanSquares> {
    let (n, k) = check_table(ratings)?;
    let (nf, kf) = (n as f64, k as f64);
    let grand = ratings.iter().flatten().sum::<f64>() / (nf * kf);
    let ss_rows = kf
        * ratings
            .iter()
            .map(|r| (r.iter().sum::<f64>() / kf - grand).powi(2))
            .sum::<f64>();
    let ss_cols = nf
        * (0..k)
            .map(|j| (ratings.iter().map(|r| r[j]).sum::<f64>() / nf - grand).powi(2))
            .sum::<f64>();
    let ss_total = ratings.iter().flatten().map(|v| (v - grand).powi(2)).sum::<f64>();
    let ss_error = (ss_total - ss_rows - ss_cols).max(0.0);
    Ok(MeanSquares {
        rows: ss_rows / (nf - 1.0),
        columns: ss_cols / (kf - 1.0),
        error: ss_error / ((nf - 1.0) * (kf - 1.0)),
        total_ss: ss_total,
    })
}

/// ICC(A,k): two-way model, absolute agreement, mean of the `k` columns,
/// `(MSR - MSE) / (MSR + (MSC - MSE) / n)`, with a 95% confidence interval
/// from F quantiles (McGraw and Wong). A table without variance has
/// ICC 1 with interval [1, 1].
pub fn icc_a_k(ratings: &[Vec<f64>]) -> Result<Icc> {
    let ms = mean_squares(ratings)?;
    let (n, k) = (ratings.len() as f64, ratings[0].len() as f64);
    let perfect = Icc {
        value: 1.0,
        ci_low: 1.0,
        ci_high: 1.0,
    };
    let scale = ratings
        .iter()
        .flatten()
        .map(|v| v * v)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    if ms.total_ss <= 1e-24 * scale {
        return Ok(perfect);
    }
    let (msr, msc, mse) = (ms.rows, ms.columns, ms.error);
    let value = (msr - mse) / (msr + (msc - mse) / n);
    if mse <= 1e-24 * scale {
        // rows differ, raters agree exactly
        return Ok(Icc { value, ..perfect });
    }

    // interval for the single-rater coefficient, then the Spearman-Brown step to k raters
    let icc1 = (msr - mse) / (msr + (k - 1.0) * mse + k * (msc - mse) / n);
    let fj = msc / mse;
    let base = n * (1.0 + (k - 1.0) * icc1) - k * icc1;
    let vn = (k - 1.0) * (n - 1.0) * (k * icc1 * fj + base).powi(2);
    let vd = (n - 1.0) * k * k * icc1 * icc1 * fj * fj + base * base;
    let v = vn / vd;
    let alpha = 0.05;
    let fu = f_quantile(1.0 - alpha / 2.0, n - 1.0, v);
    let fl = f_quantile(1.0 - alpha / 2.0, v, n - 1.0);
    let lb = n * (msr - fu * mse) / (fu * (k * msc + (k * n - k - n) * mse) + n * msr);
    let ub = n * (fl * msr - mse) / (k * msc + (k * n - k - n) * mse + n * fl * msr);
    let to_k = |r: f64| r * k / (1.0 + r * (k - 1.0));
    Ok(Icc {
        value,
        ci_low: to_k(lb),
        ci_high: to_k(ub),
    })
}
