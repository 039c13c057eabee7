//! Portfolio weights, trades, and the arithmetic on them.
//!
//! All quantities are dimensionless fractions of total portfolio value:
//! asset weights `w` (negative = short), cash weight `c` (negative =
//! borrowed), and trade weights `z = w_post - w_pre`. Weights and cash
//! always sum to one.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the weight-sum identity `1'w + c = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Asset weights plus cash weight plus total value. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    weights: DVector<f64>,
    cash: f64,
    value: f64,
}

impl Portfolio {
    /// Build a portfolio, enforcing `1'w + c = 1` (within [`WEIGHT_SUM_TOL`])
    /// and `value > 0`.
    pub fn new(weights: DVector<f64>, cash: f64, value: f64) -> Result<Self> {
        if weights.iter().any(|x| !x.is_finite()) || !cash.is_finite() {
            return Err(Error::NonFinite("portfolio weights"));
        }
        let total = weights.sum() + cash;
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "asset weights plus cash must sum to 1, got {total}"
            )));
        }
        if !(value > 0.0) {
            return Err(Error::invalid(format!(
                "portfolio value must be positive, got {value}"
            )));
        }
        Ok(Self {
            weights,
            cash,
            value,
        })
    }

    /// All-cash portfolio over an `n`-asset universe.
    pub fn all_cash(n: usize, value: f64) -> Result<Self> {
        Self::new(DVector::zeros(n), 1.0, value)
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn cash(&self) -> f64 {
        self.cash
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn num_assets(&self) -> usize {
        self.weights.len()
    }

    /// Gross leverage `L = ||w||_1`; the cash account is excluded.
    pub fn leverage(&self) -> f64 {
        self.weights.iter().map(|x| x.abs()).sum()
    }

    /// Active weights `w - w_b` relative to a benchmark.
    pub fn active_weights(&self, benchmark: &Benchmark) -> Result<DVector<f64>> {
        if benchmark.weights().len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                context: "active_weights",
                expected: self.weights.len(),
                actual: benchmark.weights().len(),
            });
        }
        Ok(&self.weights - benchmark.weights())
    }
}

/// A trade list `z`, the change in weights from one portfolio to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeList {
    trades: DVector<f64>,
}

impl TradeList {
    pub fn new(trades: DVector<f64>) -> Self {
        Self { trades }
    }

    /// Trades taking `pre` to the target weights `w_post`.
    pub fn between(pre: &Portfolio, w_post: &DVector<f64>) -> TradeList {
        Self::new(w_post - pre.weights())
    }

    pub fn trades(&self) -> &DVector<f64> {
        &self.trades
    }

    /// Turnover `T = ||z||_1 / 2`.
    pub fn turnover(&self) -> f64 {
        0.5 * self.trades.iter().map(|x| x.abs()).sum::<f64>()
    }

    /// Post-trade cash weight `c = c_pre - 1'z`. Holding and trading costs
    /// are not deducted here; realized accounting treats cash as slack.
    pub fn post_trade_cash(&self, cash_pre: f64) -> f64 {
        cash_pre - self.trades.sum()
    }
}

/// Benchmark weights; carries no cash, so the weights sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    weights: DVector<f64>,
}

impl Benchmark {
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        let total = weights.sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "benchmark weights must sum to 1, got {total}"
            )));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }
}

/// Realized market data for one period: returns, risk-free rate, half
/// bid-ask spreads, volumes (multiples of portfolio value), and volatilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketSnapshot {
    pub returns: DVector<f64>,
    pub risk_free: f64,
    pub spread_half: DVector<f64>,
    pub volume: DVector<f64>,
    pub volatility: DVector<f64>,
}

impl MarketSnapshot {
    pub fn new(
        returns: DVector<f64>,
        risk_free: f64,
        spread_half: DVector<f64>,
        volume: DVector<f64>,
        volatility: DVector<f64>,
    ) -> Result<Self> {
        let n = returns.len();
        for (name, v) in [
            ("spread_half", &spread_half),
            ("volume", &volume),
            ("volatility", &volatility),
        ] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "MarketSnapshot",
                    expected: n,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("market snapshot"));
            }
            match name {
                "volume" if v.iter().any(|&x| x <= 0.0) => {
                    return Err(Error::invalid("volumes must be positive"));
                }
                "spread_half" | "volatility" if v.iter().any(|&x| x < 0.0) => {
                    return Err(Error::invalid(format!("{name} must be nonnegative")));
                }
                _ => {}
            }
        }
        if returns.iter().any(|x| !x.is_finite()) || !risk_free.is_finite() {
            return Err(Error::NonFinite("market snapshot"));
        }
        Ok(Self {
            returns,
            risk_free,
            spread_half,
            volume,
            volatility,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn vec(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn leverage_of_130_30_portfolio() {
        let p = Portfolio::new(vec(&[1.3, -0.3]), 0.0, 1e6).unwrap();
        assert_abs_diff_eq!(p.leverage(), 1.6, epsilon = 1e-12);
    }

    #[test]
    fn leverage_all_cash_is_zero() {
        let p = Portfolio::all_cash(3, 1e6).unwrap();
        assert_eq!(p.leverage(), 0.0);
    }

    #[test]
    fn leverage_long_only_equals_total_asset_weight() {
        let p = Portfolio::new(vec(&[0.5, 0.25, 0.25]), 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(p.leverage(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn turnover_examples() {
        assert_abs_diff_eq!(
            TradeList::new(vec(&[0.01, -0.01])).turnover(),
            0.01,
            epsilon = 1e-15
        );
        assert_eq!(TradeList::new(vec(&[0.0, 0.0])).turnover(), 0.0);
        assert_abs_diff_eq!(
            TradeList::new(vec(&[0.02, 0.02])).turnover(),
            0.02,
            epsilon = 1e-15
        );
    }

    #[test]
    fn active_weights_examples() {
        let b = Benchmark::new(vec(&[0.5, 0.5])).unwrap();
        let p = Portfolio::new(vec(&[0.5, 0.5]), 0.0, 1.0).unwrap();
        assert_eq!(p.active_weights(&b).unwrap(), vec(&[0.0, 0.0]));

        let p = Portfolio::new(vec(&[0.6, 0.4]), 0.0, 1.0).unwrap();
        let a = p.active_weights(&b).unwrap();
        assert_abs_diff_eq!(a[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(a[1], -0.1, epsilon = 1e-12);
    }

    #[test]
    fn active_weights_dimension_mismatch() {
        let b = Benchmark::new(vec(&[1.0])).unwrap();
        let p = Portfolio::new(vec(&[0.6, 0.4]), 0.0, 1.0).unwrap();
        assert!(p.active_weights(&b).is_err());
    }

    #[test]
    fn post_trade_cash_examples() {
        assert_abs_diff_eq!(
            TradeList::new(vec(&[0.0, 0.0])).post_trade_cash(0.1),
            0.1,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            TradeList::new(vec(&[0.05, -0.05])).post_trade_cash(0.0),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            TradeList::new(vec(&[0.1, 0.05])).post_trade_cash(0.2),
            0.05,
            epsilon = 1e-15
        );
    }

    #[test]
    fn constructor_rejects_bad_weight_sum() {
        assert!(Portfolio::new(vec(&[0.5, 0.4]), 0.0, 1.0).is_err());
        assert!(Portfolio::new(vec(&[0.5, 0.5]), 0.0, -1.0).is_err());
        assert!(Portfolio::new(vec(&[f64::NAN, 0.5]), 0.5, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn leverage_positively_homogeneous(
            w in proptest::collection::vec(-2.0f64..2.0, 1..12),
            alpha in 0.0f64..5.0,
        ) {
            let w = vec(&w);
            let lev = w.iter().map(|x| x.abs()).sum::<f64>();
            let scaled = (alpha * &w).iter().map(|x| x.abs()).sum::<f64>();
            prop_assert!((scaled - alpha * lev).abs() <= 1e-9 * (1.0 + alpha * lev));
        }

        #[test]
        fn turnover_is_even(z in proptest::collection::vec(-1.0f64..1.0, 1..12)) {
            let t = TradeList::new(vec(&z));
            let neg = TradeList::new(-vec(&z));
            prop_assert!((t.turnover() - neg.turnover()).abs() <= 1e-12);
        }

        #[test]
        fn budget_preserved_before_costs(
            w in proptest::collection::vec(-0.5f64..0.5, 2..8),
            z in proptest::collection::vec(-0.2f64..0.2, 2..8),
        ) {
            let n = w.len().min(z.len());
            let w = vec(&w[..n]);
            let z = TradeList::new(vec(&z[..n]));
            let cash = 1.0 - w.sum();
            let post_cash = z.post_trade_cash(cash);
            let post_sum = (&w + z.trades()).sum() + post_cash;
            prop_assert!((post_sum - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn active_weights_sum_to_minus_cash(
            w in proptest::collection::vec(-0.5f64..0.5, 2..8),
        ) {
            let n = w.len();
            let wv = vec(&w);
            let cash = 1.0 - wv.sum();
            let p = Portfolio::new(wv, cash, 1.0).unwrap();
            let b = Benchmark::new(DVector::from_element(n, 1.0 / n as f64)).unwrap();
            let active = p.active_weights(&b).unwrap();
            prop_assert!((active.sum() + p.cash()).abs() <= 1e-9);
        }
    }
}
