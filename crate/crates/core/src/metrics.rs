//! Prediction rate, learning-curve aggregation and CSV output.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episodes::Episode;
use crate::kernels::{RewardSequence, Smoother};
use crate::worldmodel::{stack_history, LossRecord, Matrix, WorldModel};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub event_times: Vec<usize>,
    pub target_values: Vec<f64>,
    pub predicted_values: Vec<f64>,
}

impl PredictionRecord {
    pub fn push(&mut self, t: usize, target: f64, predicted: f64) {
        self.event_times.push(t);
        self.target_values.push(target);
        self.predicted_values.push(predicted);
    }

    pub fn len(&self) -> usize {
        self.event_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.event_times.is_empty()
    }

    pub fn extend(&mut self, other: PredictionRecord) {
        self.event_times.extend(other.event_times);
        self.target_values.extend(other.target_values);
        self.predicted_values.extend(other.predicted_values);
    }
}

/// Fraction of events whose prediction exceeds half the target.
pub fn prediction_rate(record: &PredictionRecord) -> Result<f64, MetricsError> {
    let n = record.event_times.len();
    if n != record.target_values.len() || n != record.predicted_values.len() {
        return Err(MetricsError::InvalidInput("record lists differ in length".into()));
    }
    if n == 0 {
        return Err(MetricsError::Undefined("no sparse events".into()));
    }
    if let Some(t) = record.target_values.iter().find(|t| !(**t > 0.0)) {
        return Err(MetricsError::InvalidInput(format!("target {t} is not positive")));
    }
    let hits = record
        .target_values
        .iter()
        .zip(&record.predicted_values)
        .filter(|(t, p)| **p > **t / 2.0)
        .count();
    Ok(hits as f64 / n as f64)
}

/// Reward-head predictions at every payout step of `episodes`.
///
/// Events are steps with `|raw reward| >= threshold` and a positive target.
/// The target is the smoothed reward at the event index under `smoother`
/// (the raw reward when `smoother` is the identity).
pub fn prediction_record(
    model: &WorldModel,
    episodes: &[&Episode],
    smoother: &Smoother,
    threshold: f64,
) -> Result<PredictionRecord, MetricsError> {
    let stack = model.config().history_stack;
    let mut record = PredictionRecord::default();
    for ep in episodes {
        let raw = ep.rewards_raw();
        let seq = RewardSequence::undiscounted(raw.clone()).map_err(|e| MetricsError::InvalidInput(e.to_string()))?;
        let targets = smoother.apply(&seq).map_err(|e| MetricsError::InvalidInput(e.to_string()))?;
        let events: Vec<usize> = (0..raw.len()).filter(|&t| raw[t].abs() >= threshold && targets[t] > 0.0).collect();
        if events.is_empty() {
            continue;
        }
        let mut hist = Matrix::zeros(events.len(), model.input_dim());
        for (row, &t) in events.iter().enumerate() {
            stack_history(ep.steps(), t, stack, hist.row_mut(row));
        }
        let z = model.encode_batch(&hist).map_err(|e| MetricsError::InvalidInput(e.to_string()))?;
        let preds = model.predict_reward_batch(&z).map_err(|e| MetricsError::InvalidInput(e.to_string()))?;
        for (k, &t) in events.iter().enumerate() {
            record.push(t, targets[t], preds[k]);
        }
    }
    Ok(record)
}

/// One evaluation point of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub env_steps: u64,
    pub episode_return_raw: f64,
    pub subtasks_done: f64,
    /// Absent when the evaluation saw no sparse event.
    pub prediction_rate: Option<f64>,
    pub losses: LossRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    Median,
    Mean,
}

impl Stat {
    fn apply(self, values: &mut [f64]) -> f64 {
        match self {
            Stat::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Stat::Median => {
                values.sort_by(f64::total_cmp);
                let n = values.len();
                if n % 2 == 1 {
                    values[n / 2]
                } else {
                    0.5 * (values[n / 2 - 1] + values[n / 2])
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub x: Vec<f64>,
    pub center: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Linear interpolation of `(x, y)` points sorted by `x`, clamped at the ends.
pub fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let k = points.partition_point(|p| p.0 < x);
    if k == 0 {
        return points[0].1;
    }
    if k == points.len() {
        return points[k - 1].1;
    }
    let (x0, y0) = points[k - 1];
    let (x1, y1) = points[k];
    if x1 == x0 {
        return y1;
    }
    if x == x1 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Central curve and min/max band of several series on the union of their
/// x grids. Series with no points are skipped.
pub fn aggregate_series(series: &[Vec<(f64, f64)>], stat: Stat) -> Result<Curve, MetricsError> {
    let present: Vec<&Vec<(f64, f64)>> = series.iter().filter(|s| !s.is_empty()).collect();
    if present.is_empty() {
        return Err(MetricsError::InvalidInput("no runs to aggregate".into()));
    }
    let mut grid: Vec<f64> = present.iter().flat_map(|s| s.iter().map(|p| p.0)).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut curve = Curve {
        x: grid.clone(),
        center: Vec::with_capacity(grid.len()),
        lo: Vec::with_capacity(grid.len()),
        hi: Vec::with_capacity(grid.len()),
    };
    for &x in &grid {
        let mut ys: Vec<f64> = present.iter().map(|s| interpolate(s, x)).collect();
        curve.lo.push(ys.iter().cloned().fold(f64::INFINITY, f64::min));
        curve.hi.push(ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        curve.center.push(stat.apply(&mut ys));
    }
    Ok(curve)
}

/// One row of an aggregated metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub env_steps: u64,
    pub return_raw_median: f64,
    pub return_raw_min: f64,
    pub return_raw_max: f64,
    pub subtasks_median: f64,
    pub pred_rate_median: Option<f64>,
    pub dyn_mse: f64,
    pub rew_mse: f64,
}

fn series(run: &[RunMetrics], f: impl Fn(&RunMetrics) -> Option<f64>) -> Vec<(f64, f64)> {
    let mut s: Vec<(f64, f64)> = run.iter().filter_map(|m| f(m).map(|y| (m.env_steps as f64, y))).collect();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    s
}

/// Aggregates per-seed learning curves on the union of their step grids.
/// The central statistic applies to every column; the band is on returns.
pub fn aggregate_runs(runs: &[Vec<RunMetrics>], stat: Stat) -> Result<Vec<AggregateRow>, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::InvalidInput("no runs to aggregate".into()));
    }
    if runs.iter().all(|r| r.is_empty()) {
        return Ok(vec![]);
    }
    let of = |f: &dyn Fn(&RunMetrics) -> Option<f64>| -> Vec<Vec<(f64, f64)>> { runs.iter().map(|r| series(r, f)).collect() };
    let returns = aggregate_series(&of(&|m| Some(m.episode_return_raw)), stat)?;
    let subtasks = aggregate_series(&of(&|m| Some(m.subtasks_done)), stat)?;
    let dyn_mse = aggregate_series(&of(&|m| Some(m.losses.dyn_mse)), stat)?;
    let rew_mse = aggregate_series(&of(&|m| Some(m.losses.rew_mse)), stat)?;
    let pred_series = of(&|m| m.prediction_rate);
    let pred = aggregate_series(&pred_series, stat).ok();
    Ok(returns
        .x
        .iter()
        .enumerate()
        .map(|(k, &x)| AggregateRow {
            env_steps: x as u64,
            return_raw_median: returns.center[k],
            return_raw_min: returns.lo[k],
            return_raw_max: returns.hi[k],
            subtasks_median: subtasks.center[k],
            pred_rate_median: pred.as_ref().map(|p| {
                let pts: Vec<(f64, f64)> = p.x.iter().cloned().zip(p.center.iter().cloned()).collect();
                interpolate(&pts, x)
            }),
            dyn_mse: dyn_mse.center[k],
            rew_mse: rew_mse.center[k],
        })
        .collect())
}

pub const CSV_HEADER: [&str; 8] = [
    "env_steps",
    "return_raw_median",
    "return_raw_min",
    "return_raw_max",
    "subtasks_median",
    "pred_rate_median",
    "dyn_mse",
    "rew_mse",
];

/// Writes the aggregated rows, header included even when empty.
pub fn write_csv<W: Write>(out: W, rows: &[AggregateRow]) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<AggregateRow>, MetricsError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(MetricsError::InvalidInput(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for r in rd.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(targets: &[f64], preds: &[f64]) -> PredictionRecord {
        PredictionRecord {
            event_times: (0..targets.len()).collect(),
            target_values: targets.to_vec(),
            predicted_values: preds.to_vec(),
        }
    }

    #[test]
    fn rate_examples() {
        assert_eq!(prediction_rate(&rec(&[3.0, 1.0], &[3.0, 1.0])).unwrap(), 1.0);
        assert_eq!(prediction_rate(&rec(&[3.0, 1.0], &[0.0, 0.0])).unwrap(), 0.0);
        let r = PredictionRecord {
            event_times: vec![3, 7],
            target_values: vec![1.0, 1.0],
            predicted_values: vec![0.6, 0.1],
        };
        assert_eq!(prediction_rate(&r).unwrap(), 0.5);
        assert!(matches!(prediction_rate(&PredictionRecord::default()), Err(MetricsError::Undefined(_))));
        assert!(prediction_rate(&rec(&[0.0], &[1.0])).is_err());
    }

    fn run(points: &[(u64, f64)]) -> Vec<RunMetrics> {
        points
            .iter()
            .map(|&(s, r)| RunMetrics {
                env_steps: s,
                episode_return_raw: r,
                subtasks_done: 0.0,
                prediction_rate: None,
                losses: LossRecord::default(),
            })
            .collect()
    }

    #[test]
    fn single_run_band_collapses() {
        let rows = aggregate_runs(&[run(&[(0, 1.0), (10, 4.0)])], Stat::Median).unwrap();
        assert!(rows.iter().all(|r| r.return_raw_min == r.return_raw_median && r.return_raw_max == r.return_raw_median));
        assert!(rows.iter().all(|r| r.pred_rate_median.is_none()));
    }

    #[test]
    fn constant_runs() {
        let runs: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&c| run(&[(0, c), (5, c)])).collect();
        for r in aggregate_runs(&runs, Stat::Median).unwrap() {
            assert_eq!((r.return_raw_median, r.return_raw_min, r.return_raw_max), (2.0, 1.0, 3.0));
        }
        let mean = aggregate_runs(&runs, Stat::Mean).unwrap();
        assert_eq!(mean[0].return_raw_median, 2.0);
    }

    #[test]
    fn ramps_on_different_grids() {
        let a = run(&[(0, 0.0), (10, 10.0)]);
        let b = run(&[(0, 0.0), (4, 8.0), (10, 20.0)]);
        let c = run(&[(0, 0.0), (10, 30.0)]);
        let rows = aggregate_runs(&[a, b, c], Stat::Median).unwrap();
        assert_eq!(rows.iter().map(|r| r.env_steps).collect::<Vec<_>>(), vec![0, 4, 10]);
        for r in rows {
            assert!((r.return_raw_median - 2.0 * r.env_steps as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_clamps() {
        let pts = [(1.0, 2.0), (3.0, 6.0)];
        assert_eq!(interpolate(&pts, 0.0), 2.0);
        assert_eq!(interpolate(&pts, 2.0), 4.0);
        assert_eq!(interpolate(&pts, 9.0), 6.0);
    }

    #[test]
    fn csv_roundtrip_and_empty() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().trim(), CSV_HEADER.join(","));
        assert!(read_csv(buf.as_slice()).unwrap().is_empty());
        let rows = vec![AggregateRow {
            env_steps: 1000,
            return_raw_median: -1.5,
            return_raw_min: -2.0,
            return_raw_max: 0.1,
            subtasks_median: 1.0,
            pred_rate_median: None,
            dyn_mse: 0.25,
            rew_mse: 3.0,
        }];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn empty_input_is_error() {
        assert!(aggregate_runs(&[], Stat::Median).is_err());
        assert!(aggregate_series(&[vec![]], Stat::Median).is_err());
    }
}
