use hedgelab::analytics::{bs_delta, bs_gamma, bs_price, norm_cdf, quote, MarketParams, OptionSpec};

fn mkt() -> MarketParams {
    MarketParams::new(0.0, 0.2).unwrap()
}

fn grid() -> impl Iterator<Item = (f64, f64)> {
    (0..50).flat_map(|i| (0..10).map(move |j| (0.1 + 1.9 * i as f64 / 49.0, 0.4 + j as f64 / 9.0)))
}

#[test]
fn parity_holds_across_the_grid() {
    let m = mkt();
    for strike in [0.5, 1.0, 1.1, 1.8] {
        let opt = OptionSpec::new(strike, 1.4, 0);
        for (s, tau) in grid() {
            let call = bs_price(s, &opt, &m, 1.4 - tau).unwrap();
            let vs = 0.2 * tau.sqrt();
            let d1 = ((s / strike).ln() + 0.5 * vs * vs) / vs;
            let put = strike * norm_cdf(vs - d1) - s * norm_cdf(-d1);
            assert!((call - put - (s - strike)).abs() < 1e-10, "S={s} τ={tau} K={strike}");
        }
    }
}

#[test]
fn delta_matches_central_difference() {
    let m = mkt();
    for strike in [1.0, 1.1] {
        let opt = OptionSpec::new(strike, 1.4, 0);
        for (s, tau) in grid() {
            let t = 1.4 - tau;
            let h = 1e-6 * s;
            let fd = (bs_price(s + h, &opt, &m, t).unwrap() - bs_price(s - h, &opt, &m, t).unwrap()) / (2.0 * h);
            let exact = bs_delta(s, &opt, &m, t).unwrap();
            assert!(((fd - exact) / exact).abs() < 1e-5, "S={s} τ={tau}: {fd} vs {exact}");
        }
    }
}

/// Where price rounding (≈ 4ε·V/h²) is small against Γ, the second
/// difference agrees to the stated tolerance; elsewhere it only agrees up
/// to that rounding floor.
#[test]
fn gamma_matches_second_difference_up_to_rounding() {
    let m = mkt();
    for strike in [1.0, 1.1] {
        let opt = OptionSpec::new(strike, 1.4, 0);
        for (s, tau) in grid() {
            let t = 1.4 - tau;
            let h = 1e-4 * s;
            let p = |x: f64| bs_price(x, &opt, &m, t).unwrap();
            let fd = (p(s + h) - 2.0 * p(s) + p(s - h)) / (h * h);
            let exact = bs_gamma(s, &opt, &m, t).unwrap();
            let floor = 4.0 * f64::EPSILON * p(s) / (h * h);
            assert!((fd - exact).abs() < 1e-3 * exact + 4.0 * floor, "S={s} τ={tau}: {fd} vs {exact}");
        }
    }
}

#[test]
fn monotone_and_bounded() {
    let m = mkt();
    let opt = OptionSpec::new(1.1, 1.4, 0);
    for j in 0..10 {
        let t = 1.0 - j as f64 / 10.0;
        let mut prev = 0.0;
        for i in 1..200 {
            let s = i as f64 / 100.0;
            let q = quote(s, &opt, &m, t).unwrap();
            assert!(q.price >= prev);
            assert!((0.0..=1.0).contains(&q.delta) && q.gamma >= 0.0);
            assert!(q.price <= s && q.price >= (s - 1.1f64).max(0.0));
            prev = q.price;
        }
    }
}

#[test]
fn zero_strike_is_the_underlying_exactly() {
    let m = mkt();
    let opt = OptionSpec::new(0.0, 1.4, 1);
    for s in [1e-9, 0.3, 1.0, 7.5] {
        for t in [0.0, 0.5, 1.39] {
            assert_eq!(bs_price(s, &opt, &m, t).unwrap(), s);
            assert_eq!(bs_delta(s, &opt, &m, t).unwrap(), 1.0);
            assert_eq!(bs_gamma(s, &opt, &m, t).unwrap(), 0.0);
        }
    }
}

#[test]
fn limits_and_domain() {
    let m = mkt();
    let k = OptionSpec::new(1.1, 1.4, 0);
    assert!(bs_price(1e-4, &k, &m, 0.0).unwrap().abs() < 1e-12);
    assert!((bs_delta(100.0, &k, &m, 0.0).unwrap() - 1.0).abs() < 1e-12);
    assert!(bs_gamma(100.0, &k, &m, 1.0).unwrap() < 1e-12);
    assert!(bs_price(0.0, &k, &m, 0.0).is_err());
    assert!(bs_price(f64::NAN, &k, &m, 0.0).is_err());
    assert!(bs_price(1.0, &k, &m, 1.4).is_err());
}
