//! Line charts with min/max bands as standalone SVG files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::run::ExperimentManifest;
use super::HarnessError;
use crate::metrics::{read_csv, AggregateRow};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotArm {
    pub name: String,
    pub rows: Vec<AggregateRow>,
}

struct Series {
    name: String,
    line: Vec<(f64, f64)>,
    band: Vec<(f64, f64, f64)>,
}

type Extract = fn(&AggregateRow) -> Option<f64>;

const METRICS: [(&str, &str, Extract); 5] = [
    ("return_raw", "episode return (raw)", |r| Some(r.return_raw_median)),
    ("subtasks", "subtasks completed", |r| Some(r.subtasks_median)),
    ("pred_rate", "reward prediction rate", |r| r.pred_rate_median),
    ("dyn_mse", "dynamics loss", |r| Some(r.dyn_mse)),
    ("rew_mse", "reward loss", |r| Some(r.rew_mse)),
];

/// Writes one chart per metric into `out_dir` and returns their paths.
pub fn plot(arms: &[PlotArm], out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out_dir).map_err(HarnessError::io(format!("creating {}", out_dir.display())))?;
    let mut written = Vec::new();
    for (key, title, extract) in METRICS {
        let series: Vec<Series> = arms
            .iter()
            .map(|arm| Series {
                name: arm.name.clone(),
                line: arm
                    .rows
                    .iter()
                    .filter_map(|r| extract(r).map(|y| (r.env_steps as f64, y)))
                    .collect(),
                band: if key == "return_raw" {
                    arm.rows
                        .iter()
                        .map(|r| (r.env_steps as f64, r.return_raw_min, r.return_raw_max))
                        .collect()
                } else {
                    Vec::new()
                },
            })
            .collect();
        let path = out_dir.join(format!("{key}.svg"));
        fs::write(&path, render(title, &series)).map_err(HarnessError::io(format!("writing {}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

/// Finds every `metrics.csv` below `in_dir` and plots them as arms. Arm
/// names come from the sibling manifest, falling back to the directory name.
pub fn plot_dir(in_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if !in_dir.is_dir() {
        return Err(HarnessError::Input(format!("{} is not a directory", in_dir.display())));
    }
    let mut files = Vec::new();
    collect_csvs(in_dir, &mut files)?;
    files.sort();
    let mut arms = Vec::with_capacity(files.len());
    for path in files {
        let file = fs::File::open(&path).map_err(HarnessError::io(format!("opening {}", path.display())))?;
        let rows = read_csv(file).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(in_dir);
        let name = fs::read_to_string(dir.join("manifest.json"))
            .ok()
            .and_then(|t| serde_json::from_str::<ExperimentManifest>(&t).ok())
            .map(|m| m.name)
            .unwrap_or_else(|| dir.file_name().map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned()));
        arms.push(PlotArm { name, rows });
    }
    plot(&arms, out_dir)
}

fn collect_csvs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let entries = fs::read_dir(dir).map_err(HarnessError::io(format!("listing {}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(HarnessError::io(format!("listing {}", dir.display())))?.path();
        if path.is_dir() {
            collect_csvs(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "metrics.csv") {
            out.push(path);
        }
    }
    Ok(())
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.abs() >= 1e5 || v.abs() < 1e-2 {
        return format!("{v:.1e}");
    }
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

fn render(title: &str, series: &[Series]) -> String {
    let (x0, x1) = range(series.iter().flat_map(|s| s.line.iter().map(|p| p.0)));
    let (y0, y1) = range(
        series
            .iter()
            .flat_map(|s| s.line.iter().map(|p| p.1).chain(s.band.iter().flat_map(|b| [b.1, b.2]))),
    );
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" font-size="15" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="#ddd"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"##,
            TOP,
            TOP + ph,
            TOP + ph + 18.0,
            fmt_num(xv)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            py + 4.0,
            fmt_num(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">environment steps</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 16.0
    );

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if s.band.len() >= 2 {
            let mut pts: Vec<String> = s.band.iter().map(|b| format!("{:.2},{:.2}", sx(b.0), sy(b.2))).collect();
            pts.extend(s.band.iter().rev().map(|b| format!("{:.2},{:.2}", sx(b.0), sy(b.1))));
            let _ = writeln!(svg, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "));
        }
        if !s.line.is_empty() {
            let pts: Vec<String> = s.line.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        let ly = TOP + 14.0 + 20.0 * k as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(x: u64, y: f64) -> AggregateRow {
        AggregateRow {
            env_steps: x,
            return_raw_median: y,
            return_raw_min: y - 1.0,
            return_raw_max: y + 1.0,
            subtasks_median: 0.0,
            pred_rate_median: None,
            dyn_mse: 0.1,
            rew_mse: 0.2,
        }
    }

    #[test]
    fn empty_arms_give_empty_axes() {
        let dir = tempfile::tempdir().unwrap();
        let files = plot(&[PlotArm { name: "a".into(), rows: vec![] }], dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        let text = fs::read_to_string(&files[0]).unwrap();
        assert!(text.starts_with("<svg") && !text.contains("<polyline"));
    }

    #[test]
    fn two_arms_are_deterministic() {
        let arms = vec![
            PlotArm { name: "smooth".into(), rows: vec![row(0, 0.0), row(1000, 5.0)] },
            PlotArm { name: "raw <1>".into(), rows: vec![row(0, 0.0), row(1000, 1.0)] },
        ];
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = plot(&arms, a.path()).unwrap();
        let fb = plot(&arms, b.path()).unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        let ret = fs::read_to_string(&fa[0]).unwrap();
        assert_eq!(ret.matches("<polygon").count(), 2);
        assert!(ret.contains("raw &lt;1&gt;"));
    }

    #[test]
    fn malformed_csv_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let arm = dir.path().join("arm");
        fs::create_dir_all(&arm).unwrap();
        fs::write(
            arm.join("metrics.csv"),
            "env_steps,return_raw_median,return_raw_min,return_raw_max,subtasks_median,pred_rate_median,dyn_mse,rew_mse\n0,1,1,1,0,,0,0\nnope,1,1,1,0,,0,0\n",
        )
        .unwrap();
        let err = plot_dir(dir.path(), &dir.path().join("out")).unwrap_err();
        assert!(err.to_string().contains("line: 3"), "{err}");
    }
}
