//! Static SVG charts of a run's report.

use std::path::{Path, PathBuf};

use gensyn::pipeline::RunReport;
use gensyn::Error;
use plotters::prelude::*;

fn draw_err<E: std::fmt::Debug>(path: PathBuf) -> impl Fn(E) -> Error {
    move |e| Error::Io {
        path: path.clone(),
        source: std::io::Error::other(format!("{e:?}")),
    }
}

/// Writes `metrics.svg` (one panel per score, one bar per method) and,
/// when the report holds a τ sweep, `tau_sweep.svg`.
pub fn render(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let report = RunReport::load(dir.join("report.json"))?;
    let mut written = vec![metrics_chart(dir, &report)?];
    if !report.tau_sweep.is_empty() {
        written.push(sweep_chart(dir, &report)?);
    }
    Ok(written)
}

fn metrics_chart(dir: &Path, report: &RunReport) -> Result<PathBuf, Error> {
    let path = dir.join("metrics.svg");
    let err = draw_err(path.clone());
    let ok: Vec<_> = report
        .methods
        .iter()
        .filter_map(|m| m.metrics.as_ref().map(|r| (m.method.clone(), r)))
        .collect();
    let panels: [(&str, Vec<f64>); 3] = [
        ("TAE", ok.iter().map(|(_, r)| r.tae).collect()),
        ("KL", ok.iter().map(|(_, r)| r.kl.unwrap_or(0.0)).collect()),
        ("Frobenius", ok.iter().map(|(_, r)| r.frobenius.unwrap_or(0.0)).collect()),
    ];
    let root = SVGBackend::new(&path, (1200, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let areas = root.split_evenly((1, 3));
    for (area, (title, values)) in areas.iter().zip(&panels) {
        let top = values.iter().copied().fold(0.0f64, f64::max).max(1e-12) * 1.1;
        let mut chart = ChartBuilder::on(area)
            .caption(*title, ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(0f64..ok.len() as f64, 0f64..top)
            .map_err(&err)?;
        let names: Vec<String> = ok.iter().map(|(n, _)| n.clone()).collect();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(ok.len().max(1))
            .x_label_formatter(&|x| {
                let i = x.floor() as usize;
                names.get(i).cloned().unwrap_or_default()
            })
            .draw()
            .map_err(&err)?;
        chart
            .draw_series(values.iter().enumerate().map(|(i, &v)| {
                let x = i as f64;
                Rectangle::new([(x + 0.15, 0.0), (x + 0.85, v)], Palette99::pick(i).filled())
            }))
            .map_err(&err)?;
    }
    root.present().map_err(&err)?;
    Ok(path.clone())
}

fn sweep_chart(dir: &Path, report: &RunReport) -> Result<PathBuf, Error> {
    let path = dir.join("tau_sweep.svg");
    let err = draw_err(path.clone());
    let points: Vec<(f64, f64)> = report
        .tau_sweep
        .iter()
        .filter_map(|p| p.kl.map(|k| (p.tau.max(f64::MIN_POSITIVE).log10(), k)))
        .collect();
    let (x0, x1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (x0, x1) = if x0.is_finite() { (x0 - 0.5, x1 + 0.5) } else { (-1.0, 0.0) };
    let top = points.iter().map(|p| p.1).fold(0.0f64, f64::max).max(1e-12) * 1.1;
    let root = SVGBackend::new(&path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("KL divergence against tau", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, 0f64..top)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("log10 tau")
        .y_desc("KL")
        .draw()
        .map_err(&err)?;
    chart.draw_series(LineSeries::new(points.clone(), &BLUE)).map_err(&err)?;
    chart
        .draw_series(points.iter().map(|&p| Circle::new(p, 4, BLUE.filled())))
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(path.clone())
}
