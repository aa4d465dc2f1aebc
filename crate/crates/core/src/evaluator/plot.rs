use std::ops::Range;
use std::path::Path;
use std::sync::Once;

use plotters::prelude::*;
use plotters::style::FontStyle;

use super::EvalError;
use crate::trainer::TrainingHistory;

const FONT: &str = "sans-serif";
static REGISTER_FONT: Once = Once::new();

fn register_font() {
    REGISTER_FONT.call_once(|| {
        if plotters::style::register_font(FONT, FontStyle::Normal, include_bytes!("../../assets/DejaVuSans.ttf")).is_err() {
            log::error!("bundled plot font failed to load");
        }
    });
}

/// Axis extents of the two panels.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelRanges {
    pub epochs: Range<f64>,
    pub accuracy: Range<f64>,
    pub loss: Range<f64>,
}

pub fn panel_ranges(history: &TrainingHistory) -> PanelRanges {
    let last = history.records.last().map_or(1, |r| r.epoch) as f64;
    let max_loss = history
        .records
        .iter()
        .flat_map(|r| [r.train_loss, r.val_loss])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    PanelRanges {
        epochs: 0.0..last + 1.0,
        accuracy: 0.0..1.0,
        loss: 0.0..max_loss.max(1e-3) * 1.1,
    }
}

fn plot_err(e: impl std::fmt::Display) -> EvalError {
    EvalError::Plot(e.to_string())
}

/// Writes a two-panel PNG: accuracy per epoch on the left, loss on the right,
/// training series in blue and validation series in green.
pub fn plot_history(history: &TrainingHistory, out_path: &Path) -> Result<(), EvalError> {
    if history.records.is_empty() {
        return Err(EvalError::Plot("history has no epochs".into()));
    }
    register_font();
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let root = BitMapBackend::new(out_path, (1200, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let root = root
        .titled(&format!("Training history: {}", history.backbone_name), (FONT, 22))
        .map_err(plot_err)?;
    let (left, right) = root.split_horizontally(600);

    let ranges = panel_ranges(history);
    let epochs: Vec<f64> = history.records.iter().map(|r| r.epoch as f64).collect();

    let panels = [
        (
            &left,
            "Accuracy",
            ranges.accuracy.clone(),
            [
                ("Training Accuracy", BLUE, history.records.iter().map(|r| r.train_accuracy).collect::<Vec<_>>()),
                ("Validation Accuracy", GREEN, history.records.iter().map(|r| r.val_accuracy).collect()),
            ],
        ),
        (
            &right,
            "Loss",
            ranges.loss.clone(),
            [
                ("Training Loss", BLUE, history.records.iter().map(|r| r.train_loss).collect()),
                ("Validation Loss", GREEN, history.records.iter().map(|r| r.val_loss).collect()),
            ],
        ),
    ];

    for (area, y_label, y_range, series) in panels {
        let mut chart = ChartBuilder::on(area)
            .margin(16)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .caption(y_label, (FONT, 18))
            .build_cartesian_2d(ranges.epochs.clone(), y_range)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("Epoch")
            .y_desc(y_label)
            .label_style((FONT, 13))
            .draw()
            .map_err(plot_err)?;
        for (name, color, values) in series {
            let points: Vec<(f64, f64)> = epochs.iter().copied().zip(values).collect();
            chart
                .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
            chart
                .draw_series(points.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                .map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .label_font((FONT, 13))
            .position(SeriesLabelPosition::LowerRight)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}
