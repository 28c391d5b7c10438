//! Closed-form Black–Scholes call prices and greeks.
//!
//! A call with strike zero is the underlying itself: its price is the spot,
//! its delta is one and its gamma is zero. Those values are returned from
//! explicit branches so they hold exactly.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// One European call in the instrument family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub strike: f64,
    pub maturity: f64,
    /// 0 for the hedged option, 1..=M for hedging instruments.
    pub index: usize,
}

impl OptionSpec {
    pub fn new(strike: f64, maturity: f64, index: usize) -> Self {
        Self {
            strike,
            maturity,
            index,
        }
    }

    pub fn is_underlying(&self) -> bool {
        self.strike == 0.0
    }
}

/// Pricing-model parameters shared by every instrument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub rate: f64,
    pub pricing_vol: f64,
}

impl MarketParams {
    pub fn new(rate: f64, pricing_vol: f64) -> Result<Self> {
        if !(pricing_vol > 0.0 && pricing_vol.is_finite()) || !rate.is_finite() {
            return Err(domain(format!(
                "pricing volatility must be positive and finite (got {pricing_vol}), rate finite (got {rate})"
            )));
        }
        Ok(Self { rate, pricing_vol })
    }
}

/// Price and first two spot derivatives of one instrument.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quote {
    pub price: f64,
    pub delta: f64,
    pub gamma: f64,
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function, accurate to a few ulps in the tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

fn time_to_expiry(opt: &OptionSpec, t: f64) -> Result<f64> {
    if !t.is_finite() || t < 0.0 {
        return Err(domain(format!("time must be finite and non-negative, got {t}")));
    }
    if t >= opt.maturity {
        return Err(domain(format!(
            "time {t} is not before maturity {}",
            opt.maturity
        )));
    }
    Ok(opt.maturity - t)
}

fn check_spot(spot: f64) -> Result<()> {
    if spot.is_finite() && spot > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("spot must be positive and finite, got {spot}")))
    }
}

/// `d1 = (ln(S/K) + (r + σ²/2)τ) / (σ√τ)`. Undefined for a zero strike.
pub fn d1(spot: f64, opt: &OptionSpec, mkt: &MarketParams, t: f64) -> Result<f64> {
    check_spot(spot)?;
    let tau = time_to_expiry(opt, t)?;
    if !(opt.strike > 0.0) {
        return Err(domain("d1 is undefined for a non-positive strike"));
    }
    Ok(d1_unchecked(spot, opt.strike, mkt, tau))
}

#[inline]
fn d1_unchecked(spot: f64, strike: f64, mkt: &MarketParams, tau: f64) -> f64 {
    let sig = mkt.pricing_vol;
    ((spot / strike).ln() + (mkt.rate + 0.5 * sig * sig) * tau) / (sig * tau.sqrt())
}

pub fn bs_price(spot: f64, opt: &OptionSpec, mkt: &MarketParams, t: f64) -> Result<f64> {
    check_spot(spot)?;
    let tau = time_to_expiry(opt, t)?;
    Ok(quote_unchecked(spot, opt.strike, mkt, tau).price)
}

pub fn bs_delta(spot: f64, opt: &OptionSpec, mkt: &MarketParams, t: f64) -> Result<f64> {
    check_spot(spot)?;
    let tau = time_to_expiry(opt, t)?;
    Ok(quote_unchecked(spot, opt.strike, mkt, tau).delta)
}

pub fn bs_gamma(spot: f64, opt: &OptionSpec, mkt: &MarketParams, t: f64) -> Result<f64> {
    check_spot(spot)?;
    let tau = time_to_expiry(opt, t)?;
    Ok(quote_unchecked(spot, opt.strike, mkt, tau).gamma)
}

/// Price, delta and gamma on an observed path.
///
/// Unlike [`bs_price`], a spot of exactly zero is accepted: it is the
/// absorbing state of a GBM started at zero, where every call with a
/// positive strike is worthless and the zero-strike instrument is worth
/// zero with delta one.
pub fn quote(spot: f64, opt: &OptionSpec, mkt: &MarketParams, t: f64) -> Result<Quote> {
    if !(spot.is_finite() && spot >= 0.0) {
        return Err(domain(format!("spot must be non-negative and finite, got {spot}")));
    }
    let tau = time_to_expiry(opt, t)?;
    Ok(quote_unchecked(spot, opt.strike, mkt, tau))
}

pub(crate) fn quote_unchecked(spot: f64, strike: f64, mkt: &MarketParams, tau: f64) -> Quote {
    if strike == 0.0 {
        return Quote {
            price: spot,
            delta: 1.0,
            gamma: 0.0,
        };
    }
    if spot == 0.0 {
        return Quote::default();
    }
    let vol_sqrt_tau = mkt.pricing_vol * tau.sqrt();
    let d1 = d1_unchecked(spot, strike, mkt, tau);
    let d2 = d1 - vol_sqrt_tau;
    let discounted = strike * (-mkt.rate * tau).exp();
    let price = (spot * norm_cdf(d1) - discounted * norm_cdf(d2)).max(0.0);
    Quote {
        price,
        delta: norm_cdf(d1),
        gamma: norm_pdf(d1) / (spot * vol_sqrt_tau),
    }
}

/// Gamma-neutral ratio `Γ(K_num)/Γ(K_den)` at a common spot and expiry.
///
/// Both gammas share the factor `1/(Sσ√τ)`, so the ratio reduces to a ratio
/// of normal densities and is evaluated in log space. It stays finite where
/// the individual gammas underflow.
pub(crate) fn gamma_ratio(spot: f64, strike_num: f64, strike_den: f64, mkt: &MarketParams, tau: f64) -> f64 {
    let a = d1_unchecked(spot, strike_num, mkt, tau);
    let b = d1_unchecked(spot, strike_den, mkt, tau);
    // (b² − a²)/2 written as (b − a)(b + a)/2 to avoid cancellation.
    (0.5 * (b - a) * (b + a)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mkt() -> MarketParams {
        MarketParams::new(0.0, 0.2).unwrap()
    }

    // Expiry T with t = 0 so that τ = T.
    fn call(strike: f64, tau: f64) -> OptionSpec {
        OptionSpec::new(strike, tau, 0)
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    // Reference values below were evaluated with 50-digit arithmetic.

    #[test]
    fn atm_price_matches_reference() {
        close(bs_price(1.0, &call(1.0, 0.4), &mkt(), 0.0).unwrap(), 0.050_429_028_848_894_91, 1e-15);
    }

    #[test]
    fn zero_strike_is_the_underlying() {
        let opt = call(0.0, 1.4);
        for &(s, t) in &[(1.0, 0.5), (0.37, 0.0), (1.99, 0.99)] {
            assert_eq!(bs_price(s, &opt, &mkt(), t).unwrap(), s);
            assert_eq!(bs_delta(s, &opt, &mkt(), t).unwrap(), 1.0);
            assert_eq!(bs_gamma(s, &opt, &mkt(), t).unwrap(), 0.0);
        }
    }

    #[test]
    fn deep_out_of_the_money_price_vanishes() {
        let p = bs_price(0.0001, &call(1.1, 1.4), &mkt(), 0.0).unwrap();
        assert!(p.abs() < 1e-12);
        assert!(p >= 0.0);
    }

    #[test]
    fn delta_reference_values() {
        close(bs_delta(1.0, &call(1.0, 0.4), &mkt(), 0.0).unwrap(), 0.525_214_514_424_447_5, 1e-14);
        close(bs_delta(100.0, &call(1.1, 0.4), &mkt(), 0.0).unwrap(), 1.0, 1e-12);
    }

    #[test]
    fn gamma_reference_values() {
        close(bs_gamma(1.0, &call(1.1, 0.9), &mkt(), 0.0).unwrap(), 1.935_116_707_135_586_5, 1e-13);
        assert!(bs_gamma(100.0, &call(1.1, 0.4), &mkt(), 0.0).unwrap() < 1e-12);
    }

    #[test]
    fn d1_reference_values() {
        close(d1(1.0, &call(1.0, 0.4), &mkt(), 0.0).unwrap(), 0.063_245_553_203_367_6, 1e-15);
        close(d1(1.0, &call(1.1, 0.9), &mkt(), 0.0).unwrap(), -0.407_460_424_164_695_2, 1e-14);
        // At the money with r = 0, d1 = σ√τ/2.
        close(d1(1.3, &call(1.3, 0.7), &mkt(), 0.0).unwrap(), 0.2 * 0.7f64.sqrt() / 2.0, 1e-15);
    }

    #[test]
    fn d1_rejects_zero_strike() {
        assert!(d1(1.0, &call(0.0, 1.0), &mkt(), 0.0).is_err());
    }

    #[test]
    fn domain_errors() {
        let opt = call(1.0, 1.4);
        assert!(bs_price(0.0, &opt, &mkt(), 0.0).is_err());
        assert!(bs_price(-1.0, &opt, &mkt(), 0.0).is_err());
        assert!(bs_price(f64::NAN, &opt, &mkt(), 0.0).is_err());
        assert!(bs_price(f64::INFINITY, &opt, &mkt(), 0.0).is_err());
        assert!(bs_delta(1.0, &opt, &mkt(), 1.4).is_err());
        assert!(bs_gamma(1.0, &opt, &mkt(), 2.0).is_err());
        assert!(MarketParams::new(0.0, 0.0).is_err());
    }

    #[test]
    fn quote_at_absorbed_zero_spot() {
        let q = quote(0.0, &call(1.0, 1.4), &mkt(), 0.3).unwrap();
        assert_eq!(q, Quote::default());
        let u = quote(0.0, &call(0.0, 1.4), &mkt(), 0.3).unwrap();
        assert_eq!((u.price, u.delta, u.gamma), (0.0, 1.0, 0.0));
    }

    #[test]
    fn gamma_ratio_matches_reference_far_from_strikes() {
        // Individual gammas are ~1e-5 at S = 0.3 and ~1e-33 at S = 0.05.
        close(gamma_ratio(1.0, 1.0, 1.1, &mkt(), 1.4), 1.034_018_144_861_662_5, 1e-13);
        close(gamma_ratio(0.3, 1.0, 1.1, &mkt(), 1.4) / 8.025_106_209_796_138, 1.0, 1e-12);
        close(gamma_ratio(0.05, 1.0, 1.1, &mkt(), 1.4) / 169.370_950_350_213_3, 1.0, 1e-11);
    }
}
