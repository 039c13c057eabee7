//! Forecast inputs for the optimizer: EWMA covariance, synthetic mean
//! forecasts with a controlled information coefficient, trailing spread and
//! volume forecasts, market-impact coefficients, and PCA factor models.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative diagonal jitter added to EWMA covariances before factorization.
/// Early windows with fewer observations than assets are rank-deficient.
pub const COVARIANCE_JITTER: f64 = 1e-8;

/// Fraction of each asset's total variance used as the idiosyncratic
/// variance floor when building a PCA factor model.
pub const IDIO_VARIANCE_FLOOR: f64 = 0.01;

/// A return covariance model, either a dense matrix or a low-rank-plus-
/// diagonal factor decomposition `Sigma = F Sigma_f F' + D`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum RiskModel {
    Dense {
        sigma: DMatrix<f64>,
        /// Lower-triangular Cholesky factor, `chol * chol' == sigma`.
        chol: DMatrix<f64>,
        /// Asset volatilities, `sqrt(diag(sigma))`.
        vol: DVector<f64>,
    },
    Factor {
        /// Factor loadings, n x k.
        loadings: DMatrix<f64>,
        /// Factor covariance, k x k.
        sigma_f: DMatrix<f64>,
        /// Lower-triangular Cholesky factor of `sigma_f`.
        chol_f: DMatrix<f64>,
        /// Scaled loadings `loadings * chol_f`, so the factor variance term
        /// is `||scaled_loadings' w||^2` and the covariance never has to be
        /// formed.
        scaled_loadings: DMatrix<f64>,
        /// Idiosyncratic variances, n entries, all positive.
        idio_var: DVector<f64>,
        /// Asset volatilities under the full model.
        vol: DVector<f64>,
    },
}

impl RiskModel {
    /// Dense model from a symmetric positive definite covariance matrix.
    pub fn dense(sigma: DMatrix<f64>) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() {
            return Err(Error::DimensionMismatch {
                context: "RiskModel::dense",
                expected: sigma.nrows(),
                actual: sigma.ncols(),
            });
        }
        let chol = nalgebra::Cholesky::new(sigma.clone())
            .ok_or(Error::CholeskyFailed)?
            .l();
        let vol = sigma.diagonal().map(|x| x.sqrt());
        Ok(RiskModel::Dense { sigma, chol, vol })
    }

    /// Factor model from loadings, factor covariance, and idiosyncratic
    /// variances.
    pub fn factor(
        loadings: DMatrix<f64>,
        sigma_f: DMatrix<f64>,
        idio_var: DVector<f64>,
    ) -> Result<Self> {
        let (n, k) = loadings.shape();
        if sigma_f.nrows() != k || sigma_f.ncols() != k {
            return Err(Error::DimensionMismatch {
                context: "RiskModel::factor sigma_f",
                expected: k,
                actual: sigma_f.nrows(),
            });
        }
        if idio_var.len() != n {
            return Err(Error::DimensionMismatch {
                context: "RiskModel::factor idio_var",
                expected: n,
                actual: idio_var.len(),
            });
        }
        if idio_var.iter().any(|&d| d <= 0.0) {
            return Err(Error::invalid(
                "idiosyncratic variances must be strictly positive",
            ));
        }
        let chol_f = nalgebra::Cholesky::new(sigma_f.clone())
            .ok_or(Error::CholeskyFailed)?
            .l();
        let scaled_loadings = &loadings * &chol_f;
        let vol = DVector::from_fn(n, |i, _| {
            (scaled_loadings.row(i).norm_squared() + idio_var[i]).sqrt()
        });
        Ok(RiskModel::Factor {
            loadings,
            sigma_f,
            chol_f,
            scaled_loadings,
            idio_var,
            vol,
        })
    }

    pub fn num_assets(&self) -> usize {
        match self {
            RiskModel::Dense { sigma, .. } => sigma.nrows(),
            RiskModel::Factor { loadings, .. } => loadings.nrows(),
        }
    }

    pub fn num_factors(&self) -> Option<usize> {
        match self {
            RiskModel::Dense { .. } => None,
            RiskModel::Factor { loadings, .. } => Some(loadings.ncols()),
        }
    }

    /// Asset volatilities `sqrt(diag(Sigma))`.
    pub fn vol(&self) -> &DVector<f64> {
        match self {
            RiskModel::Dense { vol, .. } | RiskModel::Factor { vol, .. } => vol,
        }
    }

    /// Portfolio risk `sigma = sqrt(w' Sigma w)`, evaluated in norm form.
    pub fn risk(&self, w: &DVector<f64>) -> f64 {
        match self {
            RiskModel::Dense { chol, .. } => (chol.transpose() * w).norm(),
            RiskModel::Factor {
                scaled_loadings,
                idio_var,
                ..
            } => {
                let factor = (scaled_loadings.transpose() * w).norm();
                let idio = w
                    .iter()
                    .zip(idio_var.iter())
                    .map(|(wi, di)| di * wi * wi)
                    .sum::<f64>()
                    .sqrt();
                factor.hypot(idio)
            }
        }
    }

    /// The dense covariance equivalent. For factor models this materializes
    /// `F Sigma_f F' + D`, intended for validation and small problems only.
    pub fn to_dense(&self) -> Result<RiskModel> {
        match self {
            RiskModel::Dense { .. } => Ok(self.clone()),
            RiskModel::Factor {
                scaled_loadings,
                idio_var,
                ..
            } => {
                let mut sigma = scaled_loadings * scaled_loadings.transpose();
                for i in 0..idio_var.len() {
                    sigma[(i, i)] += idio_var[i];
                }
                RiskModel::dense(sigma)
            }
        }
    }
}

/// Everything the optimizer consumes for one trading period.
#[derive(Debug, Clone)]
pub struct ForecastBundle {
    /// Mean return forecast, per period.
    pub mean: DVector<f64>,
    pub risk: RiskModel,
    /// Half-widths of the mean-return uncertainty intervals.
    pub mean_uncertainty: DVector<f64>,
    /// Covariance uncertainty fraction, in [0, 1).
    pub cov_uncertainty: f64,
    /// Shorting cost rates, per period.
    pub kappa_short: DVector<f64>,
    /// Cash borrow cost rate, per period.
    pub kappa_borrow: f64,
    /// Half bid-ask spread forecasts.
    pub kappa_spread: DVector<f64>,
    /// Market impact coefficients.
    pub kappa_impact: DVector<f64>,
    /// Volume forecasts, multiples of portfolio value.
    pub volume: DVector<f64>,
    /// Risk-free rate, per period.
    pub risk_free: f64,
}

impl ForecastBundle {
    pub fn num_assets(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        for (name, v, strict) in [
            ("mean_uncertainty", &self.mean_uncertainty, false),
            ("kappa_short", &self.kappa_short, false),
            ("kappa_spread", &self.kappa_spread, false),
            ("kappa_impact", &self.kappa_impact, false),
            ("volume", &self.volume, true),
        ] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "ForecastBundle",
                    expected: n,
                    actual: v.len(),
                });
            }
            let bad = v.iter().any(|&x| if strict { x <= 0.0 } else { x < 0.0 });
            if bad {
                return Err(Error::invalid(format!("{name} out of range")));
            }
        }
        if self.risk.num_assets() != n {
            return Err(Error::DimensionMismatch {
                context: "ForecastBundle risk model",
                expected: n,
                actual: self.risk.num_assets(),
            });
        }
        if !(0.0..1.0).contains(&self.cov_uncertainty) {
            return Err(Error::invalid("cov_uncertainty must lie in [0, 1)"));
        }
        if self.kappa_borrow < 0.0 {
            return Err(Error::invalid("kappa_borrow must be nonnegative"));
        }
        Ok(())
    }
}

/// Decay factor for an EWMA with the given half-life in periods.
pub fn ewma_decay(half_life: f64) -> f64 {
    0.5_f64.powf(1.0 / half_life)
}

/// Streaming EWMA second-moment estimator,
/// `Sigma_t = alpha_t * sum_{tau<=t} beta^(t-tau) r_tau r_tau'` with
/// `alpha_t = (1 - beta) / (1 - beta^t)`.
///
/// The second moment is used as the covariance; the mean contribution is
/// negligible at daily horizons.
#[derive(Debug, Clone)]
pub struct EwmaCovariance {
    beta: f64,
    weighted_sum: DMatrix<f64>,
    weight_total: f64,
    observations: usize,
}

impl EwmaCovariance {
    pub fn new(n: usize, half_life: f64) -> Result<Self> {
        if !(half_life > 0.0) {
            return Err(Error::invalid("half-life must be positive"));
        }
        Ok(Self {
            beta: ewma_decay(half_life),
            weighted_sum: DMatrix::zeros(n, n),
            weight_total: 0.0,
            observations: 0,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn observations(&self) -> usize {
        self.observations
    }

    pub fn update(&mut self, returns: &DVector<f64>) -> Result<()> {
        if returns.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("EWMA update"));
        }
        self.weighted_sum *= self.beta;
        self.weighted_sum.syger(1.0, returns, returns, 1.0);
        self.weight_total = self.beta * self.weight_total + 1.0;
        self.observations += 1;
        Ok(())
    }

    /// Current normalized estimate with diagonal jitter applied.
    pub fn current_sigma(&self) -> Result<DMatrix<f64>> {
        if self.observations == 0 {
            return Err(Error::InsufficientData {
                context: "EWMA covariance",
                required: 1,
                actual: 0,
            });
        }
        let mut sigma = &self.weighted_sum / self.weight_total;
        // syger only fills the lower triangle; mirror it.
        let n = sigma.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                sigma[(i, j)] = sigma[(j, i)];
            }
        }
        let jitter = COVARIANCE_JITTER * sigma.diagonal().mean().max(f64::MIN_POSITIVE);
        for i in 0..n {
            sigma[(i, i)] += jitter;
        }
        Ok(sigma)
    }

    pub fn current_model(&self) -> Result<RiskModel> {
        RiskModel::dense(self.current_sigma()?)
    }
}

/// EWMA covariance estimates for every prefix of a return series.
///
/// Row `t` of the result uses returns `0..=t`. Intended for modest horizons;
/// long back-tests should drive [`EwmaCovariance`] incrementally instead of
/// materializing every matrix.
pub fn ewma_covariance(returns: &DMatrix<f64>, half_life: f64) -> Result<Vec<RiskModel>> {
    let (t_len, n) = returns.shape();
    if t_len == 0 {
        return Err(Error::InsufficientData {
            context: "ewma_covariance",
            required: 1,
            actual: 0,
        });
    }
    let mut est = EwmaCovariance::new(n, half_life)?;
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        est.update(&returns.row(t).transpose())?;
        out.push(est.current_model()?);
    }
    Ok(out)
}

/// Synthetic mean forecasts with a target information coefficient.
///
/// For each asset, the forecast on day `t` is `alpha * (m_t + e_t)` where
/// `m_t` is the mean realized return over the `horizon` days starting at
/// `t`, `alpha = ic^2`, and `e_t` is Gaussian noise with variance
/// `var(m) * (1/alpha - 1)` so that `corr(forecast, m) = ic`. The last
/// `horizon - 1` days are dropped because their windows overrun the series.
pub fn synthetic_mean_forecast(
    realized: &DMatrix<f64>,
    ic: f64,
    horizon: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let (t_len, n) = realized.shape();
    if !(ic > 0.0 && ic < 1.0) {
        return Err(Error::invalid("information coefficient must lie in (0, 1)"));
    }
    if horizon < 1 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if t_len < horizon {
        return Err(Error::InsufficientData {
            context: "synthetic_mean_forecast",
            required: horizon,
            actual: t_len,
        });
    }
    let rows = t_len - horizon + 1;
    let alpha = ic * ic;
    let noise_scale = (1.0 / alpha - 1.0).sqrt();

    // Forward-window means, rows x n.
    let mut window_mean = DMatrix::zeros(rows, n);
    for i in 0..n {
        let mut acc: f64 = (0..horizon).map(|t| realized[(t, i)]).sum();
        window_mean[(0, i)] = acc / horizon as f64;
        for t in 1..rows {
            acc += realized[(t + horizon - 1, i)] - realized[(t - 1, i)];
            window_mean[(t, i)] = acc / horizon as f64;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut forecast = DMatrix::zeros(rows, n);
    for i in 0..n {
        let col = window_mean.column(i);
        let mean = col.mean();
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / rows as f64;
        let sd = var.sqrt() * noise_scale;
        for t in 0..rows {
            let eps: f64 = StandardNormal.sample(&mut rng);
            forecast[(t, i)] = alpha * (window_mean[(t, i)] + sd * eps);
        }
    }
    Ok(forecast)
}

/// Trailing-mean forecast: entry `(t, i)` is the mean of the previous
/// `window` days, using the expanding mean while fewer are available.
/// Day 0 has no history and falls back to its own realized value.
pub fn trailing_mean_forecast(series: &DMatrix<f64>, window: usize) -> Result<DMatrix<f64>> {
    if window < 1 {
        return Err(Error::invalid("window must be at least 1"));
    }
    let (t_len, n) = series.shape();
    let mut out = DMatrix::zeros(t_len, n);
    for i in 0..n {
        let mut acc = 0.0;
        for t in 0..t_len {
            if t == 0 {
                out[(0, i)] = series[(0, i)];
            } else {
                let used = t.min(window);
                if t > window {
                    acc -= series[(t - window - 1, i)];
                }
                acc += series[(t - 1, i)];
                out[(t, i)] = acc / used as f64;
            }
        }
    }
    Ok(out)
}

/// Forecast of half bid-ask spreads as the trailing mean of realized spreads.
pub fn trailing_spread_forecast(spreads: &DMatrix<f64>, window: usize) -> Result<DMatrix<f64>> {
    trailing_mean_forecast(spreads, window)
}

/// Market impact coefficients `kappa_i = a * s_i / sqrt(v_i)`.
pub fn impact_coefficient(
    volatility: &DVector<f64>,
    volume: &DVector<f64>,
    a: f64,
) -> Result<DVector<f64>> {
    if volatility.len() != volume.len() {
        return Err(Error::DimensionMismatch {
            context: "impact_coefficient",
            expected: volatility.len(),
            actual: volume.len(),
        });
    }
    if volume.iter().any(|&v| v <= 0.0) {
        return Err(Error::invalid("volumes must be positive"));
    }
    Ok(DVector::from_fn(volatility.len(), |i, _| {
        a * volatility[i] / volume[i].sqrt()
    }))
}

/// PCA factor model of a dense covariance: loadings are the top-k
/// eigenvectors scaled by the square roots of their eigenvalues, the factor
/// covariance is the identity, and the idiosyncratic variances are the
/// residual diagonal floored at [`IDIO_VARIANCE_FLOOR`] of each asset's
/// total variance.
pub fn pca_factor_model(dense: &RiskModel, k: usize) -> Result<RiskModel> {
    let RiskModel::Dense { sigma, .. } = dense else {
        return Err(Error::invalid("pca_factor_model requires a dense model"));
    };
    let n = sigma.nrows();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!(
            "factor count must satisfy 1 <= k < n, got k={k}, n={n}"
        )));
    }
    let eig = sigma.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let max_eig = eig.eigenvalues[order[0]];
    if max_eig <= 0.0 || eig.eigenvalues[order[n - 1]] < -1e-10 * max_eig {
        return Err(Error::invalid("covariance matrix is not positive semidefinite"));
    }

    let mut loadings = DMatrix::zeros(n, k);
    for (j, &idx) in order.iter().take(k).enumerate() {
        let scale = eig.eigenvalues[idx].max(0.0).sqrt();
        loadings
            .column_mut(j)
            .copy_from(&(eig.eigenvectors.column(idx) * scale));
    }
    let idio_var = DVector::from_fn(n, |i, _| {
        let total = sigma[(i, i)];
        let explained = loadings.row(i).norm_squared();
        (total - explained).max(IDIO_VARIANCE_FLOOR * total)
    });
    RiskModel::factor(loadings, DMatrix::identity(k, k), idio_var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::Rng;

    fn random_returns(t: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(t, n, |_, _| 0.01 * rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn half_life_125_gives_decay_0994() {
        assert_abs_diff_eq!(ewma_decay(125.0), 0.994, epsilon = 5e-4);
    }

    #[test]
    fn ewma_first_observation_is_outer_product() {
        let r = DMatrix::from_row_slice(1, 2, &[0.01, -0.02]);
        let models = ewma_covariance(&r, 125.0).unwrap();
        let RiskModel::Dense { sigma, .. } = &models[0] else {
            panic!("expected dense");
        };
        // alpha_1 = 1, so Sigma_1 = r r' plus jitter on the diagonal.
        assert_relative_eq!(sigma[(0, 1)], -0.0002, max_relative = 1e-12);
        assert_relative_eq!(sigma[(0, 0)], 1e-4, max_relative = 1e-6);
        assert_relative_eq!(sigma[(1, 1)], 4e-4, max_relative = 1e-6);
    }

    #[test]
    fn ewma_matches_direct_weighted_sum() {
        let r = random_returns(5, 2, 7);
        let half_life = 20.0;
        let beta = ewma_decay(half_life);
        let models = ewma_covariance(&r, half_life).unwrap();
        for t in 0..5 {
            // Direct summation oracle.
            let mut direct = DMatrix::zeros(2, 2);
            let mut wsum = 0.0;
            for tau in 0..=t {
                let row = r.row(tau).transpose();
                direct += beta.powi((t - tau) as i32) * &row * row.transpose();
                wsum += beta.powi((t - tau) as i32);
            }
            direct /= wsum;
            let RiskModel::Dense { sigma, .. } = &models[t] else {
                panic!();
            };
            let jitter = COVARIANCE_JITTER * direct.diagonal().mean();
            for i in 0..2 {
                for j in 0..2 {
                    let expect = direct[(i, j)] + if i == j { jitter } else { 0.0 };
                    assert_abs_diff_eq!(sigma[(i, j)], expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn ewma_weights_sum_to_one() {
        let beta = ewma_decay(125.0);
        for t in [1usize, 3, 50, 400] {
            let alpha = (1.0 - beta) / (1.0 - beta.powi(t as i32));
            let total: f64 = (0..t).map(|j| alpha * beta.powi(j as i32)).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ewma_rejects_non_finite() {
        let mut r = random_returns(3, 2, 1);
        r[(1, 0)] = f64::NAN;
        assert!(ewma_covariance(&r, 125.0).is_err());
    }

    #[test]
    fn synthetic_forecast_ic_one_limit_is_window_mean() {
        // ic -> 1 makes the noise variance vanish.
        let r = random_returns(40, 3, 11);
        let f = synthetic_mean_forecast(&r, 0.999_999, 5, 0).unwrap();
        assert_eq!(f.nrows(), 36);
        let alpha = 0.999_999f64 * 0.999_999;
        for i in 0..3 {
            let window: f64 = (0..5).map(|t| r[(t, i)]).sum::<f64>() / 5.0;
            assert_relative_eq!(f[(0, i)], alpha * window, max_relative = 1e-3);
        }
    }

    #[test]
    fn synthetic_forecast_deterministic() {
        let r = random_returns(60, 4, 3);
        let a = synthetic_mean_forecast(&r, 0.15, 5, 42).unwrap();
        let b = synthetic_mean_forecast(&r, 0.15, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = synthetic_mean_forecast(&r, 0.15, 5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_forecast_correlation_matches_ic() {
        // Monte-Carlo check of the information-coefficient construction.
        let t_len = 100_000;
        let r = random_returns(t_len, 1, 5);
        let ic = 0.15;
        let f = synthetic_mean_forecast(&r, ic, 5, 9).unwrap();
        let rows = f.nrows();
        let mut window_mean = Vec::with_capacity(rows);
        for t in 0..rows {
            window_mean.push((0..5).map(|j| r[(t + j, 0)]).sum::<f64>() / 5.0);
        }
        let corr = correlation(
            f.column(0).as_slice(),
            &window_mean,
        );
        assert_abs_diff_eq!(corr, ic, epsilon = 0.02);
    }

    #[test]
    fn synthetic_forecast_sign_agreement_near_52_percent() {
        let t_len = 200_000;
        let r = random_returns(t_len, 1, 17);
        let f = synthetic_mean_forecast(&r, 0.15, 5, 23).unwrap();
        let rows = f.nrows();
        let agree = (0..rows)
            .filter(|&t| f[(t, 0)].signum() == r[(t, 0)].signum())
            .count() as f64
            / rows as f64;
        assert_abs_diff_eq!(agree, 0.521, epsilon = 0.015);
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (
            a.iter().sum::<f64>() / n,
            b.iter().sum::<f64>() / n,
        );
        let cov = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>();
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>();
        let vb = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>();
        cov / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn trailing_forecast_constant_series() {
        let s = DMatrix::from_element(10, 2, 0.002);
        let f = trailing_spread_forecast(&s, 5).unwrap();
        for t in 0..10 {
            assert_abs_diff_eq!(f[(t, 0)], 0.002, epsilon = 1e-15);
        }
    }

    #[test]
    fn trailing_forecast_window_one_is_yesterday() {
        let s = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let f = trailing_spread_forecast(&s, 1).unwrap();
        assert_eq!(f[(1, 0)], 1.0);
        assert_eq!(f[(2, 0)], 2.0);
        assert_eq!(f[(3, 0)], 3.0);
    }

    #[test]
    fn trailing_forecast_ramp() {
        let s = DMatrix::from_column_slice(6, 1, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let f = trailing_spread_forecast(&s, 5).unwrap();
        // Day 6 (index 5) sees the mean of days 1..5.
        assert_abs_diff_eq!(f[(5, 0)], 3.0, epsilon = 1e-15);
        // Expanding mean during the first window days.
        assert_abs_diff_eq!(f[(2, 0)], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn impact_coefficient_examples() {
        let k = impact_coefficient(
            &DVector::from_column_slice(&[0.0, 0.02]),
            &DVector::from_column_slice(&[1.0, 4.0]),
            1.0,
        )
        .unwrap();
        assert_eq!(k[0], 0.0);
        assert_abs_diff_eq!(k[1], 0.01, epsilon = 1e-15);

        // Doubling volume scales kappa by 1/sqrt(2).
        let k2 = impact_coefficient(
            &DVector::from_column_slice(&[0.0, 0.02]),
            &DVector::from_column_slice(&[2.0, 8.0]),
            1.0,
        )
        .unwrap();
        assert_relative_eq!(k2[1], 0.01 / 2.0_f64.sqrt(), max_relative = 1e-12);

        assert!(impact_coefficient(
            &DVector::from_column_slice(&[0.1]),
            &DVector::from_column_slice(&[0.0]),
            1.0
        )
        .is_err());
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn pca_reconstruction_error_against_eigendecomposition() {
        let n = 8;
        let sigma = random_spd(n, 21);
        let dense = RiskModel::dense(sigma.clone()).unwrap();
        let factor = pca_factor_model(&dense, n - 1).unwrap();
        let RiskModel::Factor { .. } = factor else {
            panic!()
        };
        let RiskModel::Dense { sigma: recon, .. } = factor.to_dense().unwrap() else {
            panic!()
        };
        // The floor on idiosyncratic variance bounds the reconstruction
        // error: off-diagonals match the rank-(n-1) eigen-truncation, and
        // the diagonal can be lifted by at most the floor plus the dropped
        // eigenvalue.
        let eig = sigma.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        for i in 0..n {
            let bound = IDIO_VARIANCE_FLOOR * sigma[(i, i)] + min_eig + 1e-12;
            assert!(
                (recon[(i, i)] - sigma[(i, i)]).abs() <= bound,
                "diagonal {i} off by more than the floor bound"
            );
        }
    }

    #[test]
    fn pca_diagonal_sigma_k1_matches_dense_risk() {
        let n = 6;
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&[
            0.04, 0.03, 0.05, 0.02, 0.06, 0.01,
        ]));
        let dense = RiskModel::dense(sigma).unwrap();
        let factor = pca_factor_model(&dense, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let w = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            assert_relative_eq!(factor.risk(&w), dense.risk(&w), max_relative = 1e-6);
        }
    }

    #[test]
    fn pca_one_factor_structure_exact() {
        let n = 5;
        let sigma = DMatrix::from_element(n, n, 0.04) + DMatrix::identity(n, n) * 1e-4;
        let dense = RiskModel::dense(sigma).unwrap();
        let factor = pca_factor_model(&dense, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let w = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            assert_relative_eq!(factor.risk(&w), dense.risk(&w), max_relative = 1e-6);
        }
    }

    #[test]
    fn pca_full_rank_capture_matches_dense() {
        // With k = n-1 and a floor, risk agreement is only approximate, so
        // check the dense/factor gap is within the floor-induced bound.
        let n = 6;
        let sigma = random_spd(n, 31);
        let dense = RiskModel::dense(sigma).unwrap();
        let factor = pca_factor_model(&dense, n - 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let w = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let (rf, rd) = (factor.risk(&w), dense.risk(&w));
            assert!((rf - rd).abs() / rd.max(1e-12) < 0.2);
        }
    }

    #[test]
    fn pca_rejects_bad_rank() {
        let dense = RiskModel::dense(random_spd(4, 8)).unwrap();
        assert!(pca_factor_model(&dense, 4).is_err());
        assert!(pca_factor_model(&dense, 0).is_err());
    }

    #[test]
    fn dense_cholesky_consistency() {
        let sigma = random_spd(7, 12);
        let model = RiskModel::dense(sigma.clone()).unwrap();
        let RiskModel::Dense { chol, .. } = &model else {
            panic!()
        };
        let recon = chol * chol.transpose();
        let err = (&recon - &sigma).norm() / sigma.norm();
        assert!(err < 1e-8);
        assert!(chol.diagonal().iter().all(|&d| d > 0.0));
    }
}
