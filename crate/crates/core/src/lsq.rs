//! Weighted least squares through a Householder QR factorization, plus
//! heteroskedasticity- and cluster-robust coefficient covariances.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative size of |R_jj| (against the weighted column norm) below which a
/// column is treated as a linear combination of the preceding ones.
const RANK_TOL: f64 = 1e-9;

/// Named regressor columns.
#[derive(Debug, Clone, Default)]
pub struct Regressors {
    labels: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Regressors {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts with an intercept column of length `n`.
    pub fn with_constant(n: usize) -> Self {
        let mut r = Self::new();
        r.push("const", vec![1.0; n]);
        r
    }

    pub fn push(&mut self, label: impl Into<String>, column: Vec<f64>) -> &mut Self {
        if let Some(first) = self.columns.first() {
            assert_eq!(
                first.len(),
                column.len(),
                "regressor columns differ in length"
            );
        }
        self.labels.push(label.into());
        self.columns.push(column);
        self
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    pub coefficients: Vec<f64>,
    /// Unweighted residuals y − Xβ.
    pub residuals: Vec<f64>,
    pub labels: Vec<String>,
    /// Leverages of the (square-root) weighted system.
    pub leverage: Vec<f64>,
    weights: Option<Vec<f64>>,
    /// (X'WX)^{-1}
    xtwx_inv: DMatrix<f64>,
}

impl LeastSquaresFit {
    pub fn coef(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|j| self.coefficients[j])
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Minimizes Σ w_i (y_i − x_i'β)². Rank deficiency is an error naming the
/// offending column and the earlier columns it is a combination of.
pub fn least_squares(
    y: &[f64],
    x: &Regressors,
    weights: Option<&[f64]>,
) -> Result<LeastSquaresFit> {
    let n = y.len();
    let p = x.ncols();
    if x.nrows() != n {
        return Err(Error::InvalidInput(format!(
            "{} regressor rows for {n} outcomes",
            x.nrows()
        )));
    }
    if p == 0 || n < p {
        return Err(Error::TooFew(format!("{n} rows for {p} regressors")));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} weights for {n} rows",
                w.len()
            )));
        }
        if w.iter().any(|&wi| !(wi >= 0.0) || !wi.is_finite()) {
            return Err(Error::InvalidInput(
                "weights must be finite and nonnegative".into(),
            ));
        }
    }

    let root_w: Vec<f64> = match weights {
        Some(w) => w.iter().map(|wi| wi.sqrt()).collect(),
        None => vec![1.0; n],
    };
    let xw = DMatrix::from_fn(n, p, |i, j| x.columns()[j][i] * root_w[i]);
    let yw = DVector::from_iterator(n, y.iter().zip(&root_w).map(|(yi, wi)| yi * wi));

    let qr = xw.clone().qr();
    let r = qr.r();
    let q = qr.q();

    for j in 0..p {
        let col_norm = xw.column(j).norm();
        if col_norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * col_norm {
            return Err(rank_error(x, &r, j, col_norm));
        }
    }

    let qty = q.transpose() * &yw;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::InvalidInput("triangular solve failed".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::InvalidInput("triangular solve failed".into()))?;
    let xtwx_inv = &r_inv * r_inv.transpose();

    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let residuals = (0..n)
        .map(|i| {
            let fitted: f64 = (0..p).map(|j| x.columns()[j][i] * coefficients[j]).sum();
            y[i] - fitted
        })
        .collect();
    let leverage = (0..n).map(|i| q.row(i).norm_squared()).collect();

    Ok(LeastSquaresFit {
        coefficients,
        residuals,
        labels: x.labels().to_vec(),
        leverage,
        weights: weights.map(<[f64]>::to_vec),
        xtwx_inv,
    })
}

fn rank_error(x: &Regressors, r: &DMatrix<f64>, j: usize, col_norm: f64) -> Error {
    let column = x.labels()[j].clone();
    if col_norm == 0.0 || j == 0 {
        return Error::RankDeficient {
            column,
            collinear_with: Vec::new(),
        };
    }
    // Coefficients of column j on the earlier columns.
    let head = r.view((0, 0), (j, j)).clone_owned();
    let rhs = r.view((0, j), (j, 1)).clone_owned();
    let collinear_with = match head.solve_upper_triangular(&rhs) {
        Some(c) => {
            let scale = c.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            c.iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > 1e-8 * scale.max(f64::MIN_POSITIVE))
                .map(|(i, _)| x.labels()[i].clone())
                .collect()
        }
        None => x.labels()[..j].to_vec(),
    };
    Error::RankDeficient {
        column,
        collinear_with,
    }
}

/// Flavor of sandwich covariance.
#[derive(Debug, Clone, Copy)]
pub enum Robust<'a> {
    Hc0,
    /// HC0 scaled by n / (n − p).
    Hc1,
    /// Squared residuals divided by 1 − h_i.
    Hc2,
    /// Sums scores within clusters; no small-sample factor (CR0).
    Cluster(&'a [i64]),
}

/// Sandwich covariance (X'WX)^{-1} M (X'WX)^{-1} of the coefficients, where
/// M sums outer products of the scores w_i e_i x_i.
pub fn robust_covariance(
    x: &Regressors,
    fit: &LeastSquaresFit,
    kind: Robust<'_>,
) -> Result<Vec<Vec<f64>>> {
    let n = x.nrows();
    let p = x.ncols();
    let w = |i: usize| fit.weights.as_ref().map_or(1.0, |w| w[i]);
    let score = |i: usize| -> DVector<f64> {
        let s = w(i) * fit.residuals[i];
        DVector::from_iterator(p, x.columns().iter().map(|c| c[i] * s))
    };

    let mut meat = DMatrix::<f64>::zeros(p, p);
    match kind {
        Robust::Hc0 | Robust::Hc1 | Robust::Hc2 => {
            for i in 0..n {
                let s = score(i);
                let adj = match kind {
                    Robust::Hc2 => {
                        let h = fit.leverage[i];
                        if h >= 1.0 - 1e-12 {
                            return Err(Error::TooFew(format!(
                                "observation {i} has leverage 1; HC2 undefined"
                            )));
                        }
                        1.0 / (1.0 - h)
                    }
                    _ => 1.0,
                };
                meat += (&s * s.transpose()) * adj;
            }
            if let Robust::Hc1 = kind {
                if n <= p {
                    return Err(Error::TooFew(format!("{n} rows for {p} regressors")));
                }
                meat *= n as f64 / (n - p) as f64;
            }
        }
        Robust::Cluster(ids) => {
            if ids.len() != n {
                return Err(Error::InvalidInput(format!(
                    "{} cluster ids for {n} rows",
                    ids.len()
                )));
            }
            let mut totals: std::collections::BTreeMap<i64, DVector<f64>> = Default::default();
            for (i, id) in ids.iter().enumerate() {
                let s = score(i);
                totals.entry(*id).and_modify(|t| *t += &s).or_insert(s);
            }
            for t in totals.values() {
                meat += t * t.transpose();
            }
        }
    }
    let cov = &fit.xtwx_inv * meat * &fit.xtwx_inv;
    Ok((0..p)
        .map(|i| (0..p).map(|j| cov[(i, j)]).collect())
        .collect())
}
