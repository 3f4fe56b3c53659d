//! SVG figures: mean ± std curves across seeds, task-parameter histograms,
//! and rollout traces.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use slide_core::discovery::METRICS_HEADER;
use slide_core::hrl::TRANSFER_HEADER;

use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn draw_error<E: std::fmt::Debug>(e: E) -> CliError {
    CliError::Io(format!("drawing failed: {e:?}"))
}

/// One CSV series: x from the first column, y from the chosen column.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Mean and std across seeds at each x shared by every series of an arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmCurve {
    pub label: String,
    pub seeds: usize,
    /// `(x, mean, std)`
    pub points: Vec<(f64, f64, f64)>,
}

pub fn default_column(header: &str) -> Option<&'static str> {
    if header == TRANSFER_HEADER {
        Some("eval_return_mean")
    } else if header == METRICS_HEADER {
        Some("mi_lower_bound")
    } else {
        None
    }
}

/// The legend label of a CSV: the run manifest's name, else the parent
/// directory name.
fn label_for(path: &Path) -> String {
    let dir = path.parent().unwrap_or(Path::new("."));
    Manifest::read(dir)
        .map(|m| m.name)
        .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads every CSV, checking that they share one known schema.
pub fn read_series(paths: &[PathBuf], column: Option<&str>) -> CliResult<(String, Vec<Series>)> {
    let mut header: Option<String> = None;
    let mut chosen = String::new();
    let mut out = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let first = text.lines().next().unwrap_or("").trim_end().to_string();
        if first.is_empty() {
            return Err(CliError::Usage(format!("{}: empty CSV", path.display())));
        }
        match &header {
            None => {
                let default = default_column(&first)
                    .ok_or_else(|| CliError::Usage(format!("{}: unrecognized CSV schema `{first}`", path.display())))?;
                chosen = column.unwrap_or(default).to_string();
                header = Some(first.clone());
            }
            Some(h) if *h != first => {
                return Err(CliError::Usage(format!(
                    "{}: schema `{first}` does not match `{h}`",
                    path.display()
                )))
            }
            Some(_) => {}
        }
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let names = reader.headers().map_err(|e| CliError::Usage(e.to_string()))?.clone();
        let idx = names
            .iter()
            .position(|n| n == chosen)
            .filter(|&i| i > 0)
            .ok_or_else(|| CliError::Usage(format!("column `{chosen}` not found in {}", path.display())))?;
        let mut points = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let parse = |i: usize| -> CliResult<f64> {
                record.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| {
                    CliError::Usage(format!("{}: row {} has a non-numeric field", path.display(), line + 2))
                })
            };
            points.push((parse(0)?, parse(idx)?));
        }
        if points.is_empty() {
            return Err(CliError::Usage(format!("{}: CSV has no rows", path.display())));
        }
        out.push(Series { label: label_for(path), points });
    }
    if out.is_empty() {
        return Err(CliError::Usage("no CSV files given".into()));
    }
    Ok((chosen, out))
}

/// Groups series by label, in first-seen order.
pub fn aggregate(series: &[Series]) -> Vec<ArmCurve> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&Series>> = BTreeMap::new();
    for s in series {
        if !groups.contains_key(&s.label) {
            order.push(s.label.clone());
        }
        groups.entry(s.label.clone()).or_default().push(s);
    }
    order
        .into_iter()
        .map(|label| {
            let members = &groups[&label];
            let xs: Vec<f64> = members[0]
                .points
                .iter()
                .map(|p| p.0)
                .filter(|x| members.iter().all(|m| m.points.iter().any(|p| p.0 == *x)))
                .collect();
            let points = xs
                .into_iter()
                .map(|x| {
                    let ys: Vec<f64> = members
                        .iter()
                        .map(|m| m.points.iter().find(|p| p.0 == x).expect("shared x").1)
                        .collect();
                    let n = ys.len() as f64;
                    let mean = ys.iter().sum::<f64>() / n;
                    let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
                    (x, mean, std)
                })
                .collect();
            ArmCurve {
                label,
                seeds: members.len(),
                points,
            }
        })
        .collect()
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub fn mean_std_svg(path: &Path, curves: &[ArmCurve], x_label: &str, y_label: &str) -> CliResult<()> {
    let all = curves.iter().flat_map(|c| c.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, m, s) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(m - s);
        y1 = y1.max(m + s);
    }
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0, y1);
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_error)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_error)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(draw_error)?;
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut band: Vec<(f64, f64)> = c.points.iter().map(|&(x, m, s)| (x, m + s)).collect();
        band.extend(c.points.iter().rev().map(|&(x, m, s)| (x, m - s)));
        chart
            .draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled())))
            .map_err(draw_error)?;
        chart
            .draw_series(LineSeries::new(c.points.iter().map(|&(x, m, _)| (x, m)), color.stroke_width(2)))
            .map_err(draw_error)?
            .label(format!("{} (n={})", c.label, c.seeds))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_error)?;
    root.present().map_err(draw_error)?;
    Ok(())
}

/// One histogram panel: bar edges and counts.
pub struct Panel<'a> {
    pub title: &'a str,
    pub edges: &'a [f64],
    pub counts: &'a [u64],
}

pub fn histograms_svg(path: &Path, title: &str, panels: &[Panel<'_>]) -> CliResult<()> {
    let cols = 4usize;
    let rows = panels.len().div_ceil(cols).max(1);
    let root = SVGBackend::new(path, (1000, 40 + 200 * rows as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_error)?;
    let root = root.titled(title, ("sans-serif", 20)).map_err(draw_error)?;
    let areas = root.split_evenly((rows, cols));
    for (area, p) in areas.iter().zip(panels) {
        let ymax = p.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let (x0, x1) = (p.edges[0], p.edges[p.edges.len() - 1]);
        let mut chart = ChartBuilder::on(area)
            .caption(p.title, ("sans-serif", 14))
            .margin(6)
            .x_label_area_size(20)
            .y_label_area_size(30)
            .build_cartesian_2d(x0..x1, 0.0..ymax * 1.05)
            .map_err(draw_error)?;
        chart.configure_mesh().x_labels(4).y_labels(3).draw().map_err(draw_error)?;
        chart
            .draw_series(p.counts.iter().enumerate().map(|(i, &c)| {
                Rectangle::new([(p.edges[i], 0.0), (p.edges[i + 1], c as f64)], PALETTE[0].mix(0.7).filled())
            }))
            .map_err(draw_error)?;
    }
    root.present().map_err(draw_error)?;
    Ok(())
}

/// Named 2D polylines inside the unit-ish box `bounds`.
pub struct Trace {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub fn traces_svg(path: &Path, title: &str, bounds: (f64, f64), traces: &[Trace]) -> CliResult<()> {
    let root = SVGBackend::new(path, (600, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(15)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(bounds.0..bounds.1, bounds.0..bounds.1)
        .map_err(draw_error)?;
    chart.configure_mesh().draw().map_err(draw_error)?;
    for (i, t) in traces.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(t.points.iter().copied(), color.stroke_width(2)))
            .map_err(draw_error)?
            .label(t.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        if let Some(&start) = t.points.first() {
            chart
                .draw_series(std::iter::once(Circle::new(start, 4, color.filled())))
                .map_err(draw_error)?;
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_error)?;
    root.present().map_err(draw_error)?;
    Ok(())
}
