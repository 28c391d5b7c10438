use proptest::prelude::*;

use hedgelab::accounting::{compute_pnl, CostSpec};
use hedgelab::analytics::{bs_price, MarketParams, OptionSpec};
use hedgelab::simulator::{PathParams, ScenarioSet, TimeGrid};
use hedgelab::strategies::{InstrumentPanel, PositionSchedule};

/// Re-evaluate a path as a self-financing cash account: start with the
/// premium, rebalance at every timepoint paying proportional costs,
/// liquidate at the horizon and buy back the written option.
fn cash_account(row: &[f64], q: &PositionSchedule, p: usize, panel: &InstrumentPanel, fractions: &[f64], grid: TimeGrid) -> f64 {
    let m = MarketParams::new(0.0, 0.2).unwrap();
    let value = |o: &OptionSpec, i: usize| {
        if o.strike == 0.0 {
            row[i]
        } else {
            bs_price(row[i], o, &m, grid.time(i)).unwrap()
        }
    };
    let mut cash = value(&panel.hedged, 0);
    let mut held = vec![0.0; panel.hedgers.len()];
    for i in 0..=grid.steps {
        for (a, o) in panel.hedgers.iter().enumerate() {
            let target = if i == grid.steps { 0.0 } else { q.at(p, i)[a] };
            let v = value(o, i);
            cash -= (target - held[a]) * v + fractions[a] * v.abs() * (target - held[a]).abs();
            held[a] = target;
        }
    }
    cash - value(&panel.hedged, grid.steps)
}

/// (steps, instruments, cost fractions, price rows, raw positions, hedged strike)
type Case = (usize, usize, Vec<f64>, Vec<Vec<f64>>, Vec<f64>, f64);

fn case() -> impl Strategy<Value = Case> {
    (1usize..=4, 1usize..=2).prop_flat_map(|(steps, m)| {
        (
            Just(steps),
            Just(m),
            prop::collection::vec(0.0..0.01f64, m),
            prop::collection::vec(prop::collection::vec(0.05..2.5f64, steps + 1), 1..4),
            prop::collection::vec(-3.0..3.0f64, 4 * (steps + 1) * m),
            0.7..1.4f64,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn compute_pnl_matches_cash_account((steps, m, fractions, rows, raw_q, k0) in case()) {
        let strikes: Vec<f64> = (0..m).map(|a| if a == 0 { 0.0 } else { 1.1 }).collect();
        let panel = InstrumentPanel::new(k0, &strikes, 1.4).unwrap();
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let paths = rows.len();
        let mut q = raw_q[..paths * (steps + 1) * m].to_vec();
        for p in 0..paths {
            for a in 0..m {
                q[(p * (steps + 1) + steps) * m + a] = 0.0;
            }
        }
        let sched = PositionSchedule::from_flat(paths, steps, m, q).unwrap();
        let params = vec![PathParams { drift: 0.0, vol: 0.2, spot: 1.0 }; paths];
        let scen = ScenarioSet::from_paths(grid, 0, params, rows.clone()).unwrap();
        let costs = CostSpec::new(fractions.clone()).unwrap();
        let report = compute_pnl(&sched, &scen, &panel, &MarketParams::new(0.0, 0.2).unwrap(), &costs).unwrap();
        for (p, row) in rows.iter().enumerate() {
            let brute = cash_account(row, &sched, p, &panel, &fractions, grid);
            prop_assert!((brute - report.paths[p].pnl).abs() <= 1e-12, "{} vs {}", brute, report.paths[p].pnl);
            let d = &report.paths[p];
            prop_assert!((d.premium + d.trading_gain - d.cost_total - d.pnl).abs() <= 1e-15);
        }
    }
}

#[test]
fn unliquidated_schedule_is_rejected() {
    let panel = InstrumentPanel::new(1.0, &[0.0], 1.4).unwrap();
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let scen = ScenarioSet::from_paths(grid, 0, vec![PathParams { drift: 0.0, vol: 0.2, spot: 1.0 }], vec![vec![1.0, 1.1, 0.9]]).unwrap();
    let sched = PositionSchedule::from_flat(1, 2, 1, vec![0.5, 0.5, 0.5]).unwrap();
    let err = compute_pnl(&sched, &scen, &panel, &MarketParams::new(0.0, 0.2).unwrap(), &CostSpec::zero(1));
    assert!(matches!(err, Err(hedgelab::Error::Contract(_))));
}
