//! Static SVG figures: loss curves and per-joint error bars.

use std::path::Path;

use plotters::prelude::*;

use super::{Evaluation, RunRecord};
use crate::error::{Error, Result};

fn plot_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Error + '_ {
    move |e| Error::Format(format!("plotting {}: {e}", path.display()))
}

/// Per-step training loss with the per-epoch validation loss.
pub fn plot_loss_curves(record: &RunRecord, path: &Path) -> Result<()> {
    let steps: Vec<f64> = record.epochs.iter().flat_map(|e| e.step_losses.iter().copied()).collect();
    if steps.is_empty() {
        return Err(Error::Invalid("run has no recorded steps".into()));
    }
    let mut val = Vec::new();
    let mut at = 0;
    for e in &record.epochs {
        at += e.steps;
        val.push((at as f64, e.val_loss));
    }
    let top = steps
        .iter()
        .chain(val.iter().map(|v| &v.1))
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::max)
        * 1.05;
    let err = plot_err(path);
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{} loss", record.stage), ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(55)
        .build_cartesian_2d(0.0..steps.len() as f64, 0.0..top.max(1e-9))
        .map_err(&err)?;
    chart.configure_mesh().x_desc("step").y_desc("loss").draw().map_err(&err)?;
    chart
        .draw_series(LineSeries::new(steps.iter().enumerate().map(|(i, v)| (i as f64 + 1.0, *v)), &BLUE))
        .map_err(&err)?
        .label("train")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
    chart
        .draw_series(LineSeries::new(val, &RED))
        .map_err(&err)?
        .label("validation")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RED));
    chart.configure_series_labels().border_style(BLACK).draw().map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

/// Bar chart of mean per-joint position error.
pub fn plot_joint_errors(eval: &Evaluation, path: &Path) -> Result<()> {
    let n = eval.per_joint_cm.len();
    let top = eval.per_joint_cm.iter().copied().fold(0.0_f64, f64::max) * 1.1;
    let err = plot_err(path);
    let root = SVGBackend::new(path, (900, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("per-joint error (cm)", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(90)
        .y_label_area_size(55)
        .build_cartesian_2d(0.0..n as f64, 0.0..top.max(1e-9))
        .map_err(&err)?;
    let names = eval.joint_names.clone();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| names.get(x.floor() as usize).cloned().unwrap_or_default())
        .x_label_style(("sans-serif", 11).into_font().transform(FontTransform::Rotate90))
        .y_desc("cm")
        .draw()
        .map_err(&err)?;
    chart
        .draw_series(
            eval.per_joint_cm
                .iter()
                .enumerate()
                .map(|(i, v)| Rectangle::new([(i as f64 + 0.15, 0.0), (i as f64 + 0.85, *v)], BLUE.filled())),
        )
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}
