use nalgebra::{DMatrix, DVector};

use super::var::{ma_coefficients, Var2Model};
use crate::error::{ensure_len, Error, Result};

/// Conditional first and second moments of the returns over a prediction horizon.
///
/// Indices are 1-based in the horizon sense: `mean(i)` is `E{η(k+i) | F_k}` and
/// `second_moment(i, j)` is `E{η(k+i) η(k+j)ᵀ | F_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentForecast {
    means: Vec<DVector<f64>>,
    /// Row-major `horizon × horizon` grid of `n × n` blocks.
    second: Vec<DMatrix<f64>>,
}

impl MomentForecast {
    /// Builds a forecast from means and the upper triangle (`i <= j`) of the second
    /// moments; the lower triangle is filled by transposition.
    pub fn from_upper(
        means: Vec<DVector<f64>>,
        mut upper: impl FnMut(usize, usize) -> DMatrix<f64>,
    ) -> Result<Self> {
        let m = means.len();
        if m == 0 {
            return Err(Error::InvalidParameter("empty forecast horizon".into()));
        }
        let n = means[0].len();
        for mean in &means {
            ensure_len("forecast mean", n, mean.len())?;
        }
        let mut second = vec![DMatrix::zeros(n, n); m * m];
        for i in 1..=m {
            for j in i..=m {
                let block = upper(i, j);
                if block.shape() != (n, n) {
                    return Err(Error::DimensionMismatch {
                        what: "second-moment block",
                        expected: n,
                        found: block.nrows(),
                    });
                }
                if i == j {
                    second[(i - 1) * m + (j - 1)] = (&block + block.transpose()) * 0.5;
                } else {
                    second[(j - 1) * m + (i - 1)] = block.transpose();
                    second[(i - 1) * m + (j - 1)] = block;
                }
            }
        }
        Ok(Self { means, second })
    }

    /// Degenerate forecast with no uncertainty: `Θ_ij = η̄_i η̄_jᵀ`.
    pub fn deterministic(means: Vec<DVector<f64>>) -> Result<Self> {
        let outer = means.clone();
        Self::from_upper(means, |i, j| &outer[i - 1] * outer[j - 1].transpose())
    }

    /// Gaussian-style forecast from stacked means and a joint covariance of
    /// `(η(k+1), …, η(k+m))` (size `mn × mn`).
    pub fn from_joint(means: Vec<DVector<f64>>, joint_cov: &DMatrix<f64>) -> Result<Self> {
        let m = means.len();
        let n = means.first().map(|x| x.len()).unwrap_or(0);
        ensure_len("joint covariance", m * n, joint_cov.nrows())?;
        ensure_len("joint covariance", m * n, joint_cov.ncols())?;
        let outer = means.clone();
        Self::from_upper(means, |i, j| {
            joint_cov.view(((i - 1) * n, (j - 1) * n), (n, n)).into_owned()
                + &outer[i - 1] * outer[j - 1].transpose()
        })
    }

    pub fn horizon(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn mean(&self, i: usize) -> &DVector<f64> {
        &self.means[i - 1]
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn second_moment(&self, i: usize, j: usize) -> &DMatrix<f64> {
        let m = self.horizon();
        &self.second[(i - 1) * m + (j - 1)]
    }

    /// `Θ_ij − η̄_i η̄_jᵀ`.
    pub fn covariance(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.second_moment(i, j) - self.mean(i) * self.mean(j).transpose()
    }
}

/// Forecast-error second moments of a VAR(2) from its moving-average form:
/// `Θ_ij = Σ_{s=1}^{min(i,j)} Φ_{i−s} σ Φ_{j−s}ᵀ + η̄_i η̄_jᵀ`.
pub fn predict_second_moments(model: &Var2Model, means: Vec<DVector<f64>>) -> Result<MomentForecast> {
    let m = means.len();
    if m == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    for mean in &means {
        ensure_len("forecast mean", model.dim(), mean.len())?;
    }
    let phi = ma_coefficients(model, m);
    let weighted: Vec<DMatrix<f64>> = phi.iter().map(|p| p * &model.sigma).collect();
    let outer = means.clone();
    MomentForecast::from_upper(means, |i, j| {
        let mut cov = DMatrix::zeros(model.dim(), model.dim());
        for s in 1..=i.min(j) {
            cov += &weighted[i - s] * phi[j - s].transpose();
        }
        cov + &outer[i - 1] * outer[j - 1].transpose()
    })
}
