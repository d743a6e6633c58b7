use proptest::prelude::*;
use smrl_core::metrics::{aggregate_runs, prediction_rate, read_csv, write_csv, PredictionRecord, RunMetrics, Stat};
use smrl_core::worldmodel::LossRecord;

fn record(targets: &[f64], preds: &[f64]) -> PredictionRecord {
    let mut rec = PredictionRecord::default();
    for (t, (&y, &p)) in targets.iter().zip(preds).enumerate() {
        rec.push(t, y, p);
    }
    rec
}

fn run_strategy() -> impl Strategy<Value = Vec<RunMetrics>> {
    prop::collection::vec((1u64..50, -10.0f64..10.0, 0.0f64..2.0, prop::option::of(0.0f64..1.0), 0.0f64..1.0), 1..8).prop_map(
        |points| {
            let mut steps = 0;
            points
                .into_iter()
                .map(|(dx, ret, sub, rate, loss)| {
                    steps += dx * 100;
                    RunMetrics {
                        env_steps: steps,
                        episode_return_raw: ret,
                        subtasks_done: sub,
                        prediction_rate: rate,
                        losses: LossRecord { dyn_mse: loss, rew_mse: 2.0 * loss },
                    }
                })
                .collect()
        },
    )
}

proptest! {
    #[test]
    fn rate_is_monotone_in_predictions(
        pairs in prop::collection::vec((0.1f64..10.0, -5.0f64..10.0, 0.0f64..5.0), 1..40),
    ) {
        let targets: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let preds: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let raised: Vec<f64> = pairs.iter().map(|p| p.1 + p.2).collect();
        let before = prediction_rate(&record(&targets, &preds)).unwrap();
        let after = prediction_rate(&record(&targets, &raised)).unwrap();
        prop_assert!(after >= before);
        prop_assert!((0.0..=1.0).contains(&before));
    }

    #[test]
    fn aggregation_ignores_run_order(runs in prop::collection::vec(run_strategy(), 1..5), rot in 0usize..5) {
        let mut shuffled = runs.clone();
        shuffled.reverse();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        let a = aggregate_runs(&runs, Stat::Median).unwrap();
        let b = aggregate_runs(&shuffled, Stat::Median).unwrap();
        prop_assert_eq!(a, b);
        let a = aggregate_runs(&runs, Stat::Mean).unwrap();
        let b = aggregate_runs(&shuffled, Stat::Mean).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.env_steps, y.env_steps);
            prop_assert!((x.return_raw_median - y.return_raw_median).abs() < 1e-9);
            prop_assert_eq!(x.return_raw_min, y.return_raw_min);
            prop_assert_eq!(x.return_raw_max, y.return_raw_max);
        }
    }

    #[test]
    fn band_brackets_the_center(runs in prop::collection::vec(run_strategy(), 1..5)) {
        for row in aggregate_runs(&runs, Stat::Median).unwrap() {
            prop_assert!(row.return_raw_min <= row.return_raw_median + 1e-12);
            prop_assert!(row.return_raw_median <= row.return_raw_max + 1e-12);
        }
    }

    #[test]
    fn csv_round_trip(runs in prop::collection::vec(run_strategy(), 1..4)) {
        let rows = aggregate_runs(&runs, Stat::Median).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }
}
