use std::path::Path;

use anyhow::{bail, Context};
use olia::emulator::runtime::TimedFrame;
use olia::protocol::FIELD_NAMES;
use plotters::prelude::*;

/// Draws one panel per field against time into an SVG file.
pub fn plot_frames(frames: &[TimedFrame], fields: &[String], path: &Path) -> anyhow::Result<()> {
    if frames.is_empty() {
        bail!("no frames to plot");
    }
    let columns = fields
        .iter()
        .map(|name| {
            FIELD_NAMES
                .iter()
                .position(|f| f.eq_ignore_ascii_case(name))
                .with_context(|| format!("unknown field '{name}'; expected one of {}", FIELD_NAMES.join(",")))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    if columns.is_empty() {
        bail!("no fields selected");
    }

    let series: Vec<Vec<(f64, f64)>> = columns
        .iter()
        .map(|&c| frames.iter().map(|f| (f.time, f.frame.fields()[c].parse().unwrap_or(f64::NAN))).collect())
        .collect();
    let (t0, t1) = (frames[0].time, frames[frames.len() - 1].time.max(frames[0].time + 1e-3));

    let root = SVGBackend::new(path, (900, 260 * columns.len() as u32)).into_drawing_area();
    root.fill(&WHITE)?;
    for ((panel, points), &c) in root.split_evenly((columns.len(), 1)).iter().zip(&series).zip(&columns) {
        let finite = points.iter().map(|p| p.1).filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
        let pad = ((hi - lo) * 0.05).max(1e-6);
        let mut chart = ChartBuilder::on(panel)
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(60)
            .build_cartesian_2d(t0..t1, (lo - pad)..(hi + pad))?;
        chart.configure_mesh().x_desc("t (s)").y_desc(FIELD_NAMES[c]).draw()?;
        chart.draw_series(LineSeries::new(points.iter().copied().filter(|p| p.1.is_finite()), &BLUE))?;
    }
    root.present()?;
    Ok(())
}
