use std::fmt::Display;

use phonon_core::{Error, Result};
use plotters::prelude::*;
use plotters::style::colors::colormaps::ViridisRGB;

const SIZE: (u32, u32) = (720, 480);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

fn err(e: impl Display) -> Error {
    Error::Io {
        path: "<svg>".into(),
        source: std::io::Error::other(e.to_string()),
    }
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Draw markers instead of a line.
    pub markers: bool,
}

impl Series {
    pub fn line(name: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
            markers: false,
        }
    }

    pub fn dots(name: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
            markers: true,
        }
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.03 * (hi - lo);
    (lo - pad, hi + pad)
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(err)?;
        chart
            .configure_mesh()
            .x_desc(x_label)
            .y_desc(y_label)
            .draw()
            .map_err(err)?;
        for (i, s) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let drawn = if s.markers {
                chart
                    .draw_series(s.points.iter().map(|&p| Circle::new(p, 2, color.filled())))
                    .map_err(err)?
            } else {
                chart
                    .draw_series(LineSeries::new(s.points.iter().copied(), &color))
                    .map_err(err)?
            };
            drawn
                .label(s.name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        }
        if series.len() > 1 {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(err)?;
        }
        root.present().map_err(err)?;
    }
    Ok(out)
}

/// `z[i][k]` at `(xs[k], ys[i])`, cells centred on the grid values.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64], z: &[Vec<f64>]) -> Result<String> {
    let half = |v: &[f64]| if v.len() > 1 { 0.5 * (v[1] - v[0]).abs() } else { 0.5 };
    let (hx, hy) = (half(xs), half(ys));
    let (x0, x1) = bounds(xs.iter().copied());
    let (y0, y1) = bounds(ys.iter().copied());
    let (zmin, zmax) = z
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (zmax - zmin).max(1e-300);
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(err)?;
        chart
            .configure_mesh()
            .disable_mesh()
            .x_desc(x_label)
            .y_desc(y_label)
            .draw()
            .map_err(err)?;
        chart
            .draw_series(z.iter().enumerate().flat_map(|(i, row)| {
                row.iter().enumerate().map(move |(k, &v)| {
                    let c = ViridisRGB::get_color_normalized(v, zmin, zmin + span);
                    Rectangle::new([(xs[k] - hx, ys[i] - hy), (xs[k] + hx, ys[i] + hy)], c.filled())
                })
            }))
            .map_err(err)?;
        root.present().map_err(err)?;
    }
    Ok(out)
}

/// Square matrix of magnitudes drawn cell by cell, row 0 at the top.
pub fn matrix_plot(title: &str, labels: &[String], values: &[Vec<f64>]) -> Result<String> {
    let n = labels.len();
    let vmax = values.iter().flatten().copied().fold(0.0, f64::max).max(1e-300);
    let step = (n / 12).max(1);
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, (640, 640)).into_drawing_area();
        root.fill(&WHITE).map_err(err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(40)
            .build_cartesian_2d(0f64..n as f64, 0f64..n as f64)
            .map_err(err)?;
        let label = |v: &f64| {
            let i = v.floor() as usize;
            if i < n && i % step == 0 {
                labels[i].clone()
            } else {
                String::new()
            }
        };
        chart
            .configure_mesh()
            .disable_mesh()
            .x_labels(n.min(40))
            .y_labels(n.min(40))
            .x_label_formatter(&label)
            .y_label_formatter(&|v: &f64| label(&(n as f64 - 1.0 - v.floor())))
            .draw()
            .map_err(err)?;
        chart
            .draw_series(values.iter().enumerate().flat_map(|(r, row)| {
                row.iter().enumerate().map(move |(c, &v)| {
                    let y = (n - 1 - r) as f64;
                    let color = ViridisRGB::get_color_normalized(v, 0.0, vmax);
                    Rectangle::new([(c as f64, y), (c as f64 + 1.0, y + 1.0)], color.filled())
                })
            }))
            .map_err(err)?;
        root.present().map_err(err)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_render_to_svg() {
        let s = line_plot("t", "x", "y", &[Series::line("a", vec![(0.0, 0.0), (1.0, 1.0)])]).unwrap();
        assert!(s.starts_with("<svg"));
        let h = heatmap("h", "x", "y", &[0.0, 1.0], &[0.0, 1.0, 2.0], &vec![vec![0.0, 1.0]; 3]).unwrap();
        assert!(h.contains("<rect"));
        let m = matrix_plot("m", &["0".into(), "1".into()], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(m.ends_with("</svg>\n") || m.ends_with("</svg>"));
    }
}
