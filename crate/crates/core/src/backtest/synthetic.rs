use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::forecast::Var2Model;

/// Steps discarded before recording so the path starts near stationarity.
const BURN_IN: usize = 200;

/// Lower-triangular `F` with `F Fᵀ = cov`; falls back to a symmetric square root
/// when `cov` is only semidefinite.
pub fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = cov.clone().symmetric_eigen();
    if eig.eigenvalues.min() < -1e-12 * eig.eigenvalues.amax().max(1.0) {
        return Err(Error::NotPositiveDefinite("innovation covariance"));
    }
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * sqrt * eig.eigenvectors.transpose())
}

pub fn standard_normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Simulates `steps` rows of a VAR(2) with Gaussian innovations.
///
/// Stable models start from their unconditional mean and run a burn-in; unstable
/// models are rejected unless `allow_unstable`, in which case they start from zero
/// without burn-in.
pub fn simulate_synthetic(
    model: &Var2Model,
    steps: usize,
    seed: u64,
    allow_unstable: bool,
) -> Result<DMatrix<f64>> {
    let n = model.dim();
    let stable = model.is_stable();
    if !stable && !allow_unstable {
        return Err(Error::InvalidParameter(format!(
            "VAR model is not stable (spectral radius {:.4})",
            model.spectral_radius()
        )));
    }
    let factor = covariance_factor(&model.sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let start = if stable {
        model.unconditional_mean().unwrap_or_else(|| DVector::zeros(n))
    } else {
        DVector::zeros(n)
    };
    let burn_in = if stable { BURN_IN } else { 0 };
    let mut prev2 = start.clone();
    let mut prev1 = start;
    let mut out = DMatrix::zeros(steps, n);
    for t in 0..burn_in + steps {
        let shock = &factor * standard_normal_vector(&mut rng, n);
        let next = &model.nu + &model.a1 * &prev1 + &model.a2 * &prev2 + shock;
        if t >= burn_in {
            out.row_mut(t - burn_in).copy_from(&next.transpose());
        }
        prev2 = std::mem::replace(&mut prev1, next);
    }
    Ok(out)
}
