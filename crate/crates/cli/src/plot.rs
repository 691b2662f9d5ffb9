//! Static SVG renderings of the experiment CSVs.

use std::path::Path;

use plotters::prelude::*;

use crate::output::{CmdResult, Failure, EXIT_IO};

const PALETTE: [RGBColor; 4] = [RGBColor(31, 119, 180), RGBColor(214, 39, 40), RGBColor(44, 160, 44), RGBColor(148, 103, 189)];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Mean line with a ±1 std band.
pub struct Band {
    pub label: String,
    /// `(x, mean, std)`
    pub points: Vec<(f64, f64, f64)>,
}

fn bounds(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> ((f64, f64), (f64, f64)) {
    let span = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-9 {
            (lo - 0.5, hi + 0.5)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    };
    (span(&mut xs.clone()), span(&mut ys.clone()))
}

fn io<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Failure + '_ {
    move |e| Failure::new(EXIT_IO, format!("cannot render {}: {e}", path.display()))
}

/// Lines plus optional unconnected markers (e.g. observations).
pub fn lines(path: &Path, title: &str, series: &[Series], markers: Option<&Series>) -> CmdResult {
    let all = series.iter().chain(markers).flat_map(|s| s.points.iter().copied());
    let ((x0, x1), (y0, y1)) = bounds(all.clone().map(|p| p.0), all.map(|p| p.1));
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(io(path))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(io(path))?;
    chart.configure_mesh().draw().map_err(io(path))?;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(io(path))?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color));
    }
    if let Some(m) = markers {
        chart
            .draw_series(m.points.iter().map(|&p| Circle::new(p, 3, BLACK.filled())))
            .map_err(io(path))?
            .label(m.label.clone())
            .legend(|(x, y)| Circle::new((x + 10, y), 3, BLACK.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(io(path))?;
    root.present().map_err(io(path))?;
    Ok(())
}

/// Mean lines with shaded ±1 std bands, plus data markers.
pub fn bands(path: &Path, title: &str, bands: &[Band], data: &Series) -> CmdResult {
    let xs = bands.iter().flat_map(|b| b.points.iter().map(|p| p.0)).chain(data.points.iter().map(|p| p.0));
    let ys = bands
        .iter()
        .flat_map(|b| b.points.iter().flat_map(|p| [p.1 - p.2, p.1 + p.2]))
        .chain(data.points.iter().map(|p| p.1));
    let ((x0, x1), (y0, y1)) = bounds(xs, ys);
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(io(path))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(io(path))?;
    chart.configure_mesh().draw().map_err(io(path))?;
    for (i, b) in bands.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut outline: Vec<(f64, f64)> = b.points.iter().map(|p| (p.0, p.1 + p.2)).collect();
        outline.extend(b.points.iter().rev().map(|p| (p.0, p.1 - p.2)));
        chart.draw_series(std::iter::once(Polygon::new(outline, color.mix(0.15)))).map_err(io(path))?;
        chart
            .draw_series(LineSeries::new(b.points.iter().map(|p| (p.0, p.1)), color.stroke_width(2)))
            .map_err(io(path))?
            .label(b.label.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color));
    }
    chart
        .draw_series(data.points.iter().map(|&p| Circle::new(p, 3, BLACK.filled())))
        .map_err(io(path))?
        .label(data.label.clone())
        .legend(|(x, y)| Circle::new((x + 10, y), 3, BLACK.filled()));
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(io(path))?;
    root.present().map_err(io(path))?;
    Ok(())
}
