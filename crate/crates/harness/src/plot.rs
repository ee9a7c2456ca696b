//! Mean learning curves across runs with half-standard-error bands.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{HarnessError, Result};

/// `metrics.csv` of one run with every cell parsed; empty cells are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl RunMetrics {
    /// Read `path`, or `path/metrics.csv` when `path` is a directory.
    pub fn read(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join("metrics.csv")
        } else {
            path.to_path_buf()
        };
        let err = |msg: String| HarnessError::Metrics {
            path: file.display().to_string(),
            msg,
        };
        let mut reader = csv::Reader::from_path(&file)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse()
                            .map(Some)
                            .map_err(|_| err(format!("row {}: `{c}` is not a number", i + 1)))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self {
            path: file,
            header,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Per-row mean and half standard error of one column across runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub half_se: Vec<f64>,
    /// Runs contributing to each point.
    pub count: Vec<usize>,
}

/// Mean and half standard error (sample standard deviation over `√k`,
/// halved) of `values`.
pub fn mean_half_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, 0.5 * (var / k).sqrt())
}

/// Aggregate `y` against `x` over runs that share a column layout. Runs are
/// cut to the shortest; rows where no run has a `y` value are skipped.
pub fn aggregate(runs: &[RunMetrics], x: &str, y: &str) -> Result<Curve> {
    let first = runs
        .first()
        .ok_or_else(|| HarnessError::Config("no runs to aggregate".into()))?;
    for r in &runs[1..] {
        if r.header != first.header {
            return Err(HarnessError::Metrics {
                path: r.path.display().to_string(),
                msg: format!(
                    "columns {:?} differ from {:?} in {}",
                    r.header,
                    first.header,
                    first.path.display()
                ),
            });
        }
    }
    let missing = |c: &str| HarnessError::Metrics {
        path: first.path.display().to_string(),
        msg: format!("no column `{c}`"),
    };
    let xi = first.column(x).ok_or_else(|| missing(x))?;
    let yi = first.column(y).ok_or_else(|| missing(y))?;
    let len = runs.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    let mut curve = Curve {
        x_label: x.to_string(),
        y_label: y.to_string(),
        x: Vec::new(),
        mean: Vec::new(),
        half_se: Vec::new(),
        count: Vec::new(),
    };
    for row in 0..len {
        let xv = first.rows[row][xi];
        for r in &runs[1..] {
            if r.rows[row][xi] != xv {
                return Err(HarnessError::Metrics {
                    path: r.path.display().to_string(),
                    msg: format!(
                        "row {}: `{x}` is {:?}, expected {:?}",
                        row + 1,
                        r.rows[row][xi],
                        xv
                    ),
                });
            }
        }
        let Some(xv) = xv else { continue };
        let ys: Vec<f64> = runs.iter().filter_map(|r| r.rows[row][yi]).collect();
        if ys.is_empty() {
            continue;
        }
        let (m, h) = mean_half_se(&ys);
        curve.x.push(xv);
        curve.mean.push(m);
        curve.half_se.push(h);
        curve.count.push(ys.len());
    }
    Ok(curve)
}

pub fn write_curve_csv(curve: &Curve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([curve.x_label.as_str(), "mean", "half_se", "runs"])?;
    for i in 0..curve.x.len() {
        w.write_record([
            curve.x[i].to_string(),
            curve.mean[i].to_string(),
            curve.half_se[i].to_string(),
            curve.count[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn render_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Render(e.to_string())
}

/// Line for the mean with a shaded band of ± half a standard error.
pub fn render_svg(curve: &Curve, path: &Path, title: &str) -> Result<()> {
    if curve.x.is_empty() {
        return Err(HarnessError::Render(format!(
            "no points to draw for `{}`",
            curve.y_label
        )));
    }
    let lo = |i: usize| curve.mean[i] - curve.half_se[i];
    let hi = |i: usize| curve.mean[i] + curve.half_se[i];
    let (x0, x1) = (curve.x[0], *curve.x.last().unwrap());
    let y0 = (0..curve.x.len()).map(lo).fold(f64::INFINITY, f64::min);
    let y1 = (0..curve.x.len()).map(hi).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((y1 - y0) * 0.05).max(1e-9);
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(render_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(render_err)?;
    chart
        .configure_mesh()
        .x_desc(curve.x_label.as_str())
        .y_desc(curve.y_label.as_str())
        .draw()
        .map_err(render_err)?;
    let band: Vec<(f64, f64)> = (0..curve.x.len())
        .map(|i| (curve.x[i], hi(i)))
        .chain((0..curve.x.len()).rev().map(|i| (curve.x[i], lo(i))))
        .collect();
    chart
        .draw_series(std::iter::once(Polygon::new(band, BLUE.mix(0.2))))
        .map_err(render_err)?;
    chart
        .draw_series(LineSeries::new(
            curve.x.iter().copied().zip(curve.mean.iter().copied()),
            &BLUE,
        ))
        .map_err(render_err)?;
    root.present().map_err(render_err)?;
    Ok(())
}

/// Aggregate `y` over `runs`, writing `<y>.csv` and `<y>.svg` into `out`.
pub fn plot_runs(runs: &[PathBuf], out: &Path, x: &str, y: &str) -> Result<Vec<PathBuf>> {
    let metrics = runs
        .iter()
        .map(|p| RunMetrics::read(p))
        .collect::<Result<Vec<_>>>()?;
    let curve = aggregate(&metrics, x, y)?;
    std::fs::create_dir_all(out)?;
    let csv_path = out.join(format!("{y}.csv"));
    let svg_path = out.join(format!("{y}.svg"));
    write_curve_csv(&curve, &csv_path)?;
    render_svg(
        &curve,
        &svg_path,
        &format!("{y} over {} run(s)", runs.len()),
    )?;
    Ok(vec![csv_path, svg_path])
}
