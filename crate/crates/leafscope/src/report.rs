//! Result artifacts: history curves, confusion heatmaps, classification
//! tables and cross-model comparisons, each as CSV plus PNG and SVG charts.

use std::collections::HashSet;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use leafscope_core::backbone::BackboneKind;
use leafscope_core::metrics::{round2, EvaluationReport};
use leafscope_core::trainer::TrainingHistory;
use serde::{Deserialize, Serialize};

use crate::chart::{nice_ceil, plot_series, Anchor, Frame, Rgb, Scene, Series, Shape};
use crate::formats::{self, Orientation};
use crate::{io, Error, Result};

/// Everything one training run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBundle {
    pub model_name: String,
    /// Empty for imported results that carry no training curve.
    pub history: TrainingHistory,
    pub report: EvaluationReport,
    pub config_hash: String,
}

impl RunBundle {
    pub fn validate(&self) -> Result<()> {
        self.model_name
            .parse::<BackboneKind>()
            .map_err(|e| Error::input(format!("bundle model name: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_name: String,
    pub overall_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Rows sorted by accuracy, best first; equal accuracies order by name.
pub fn comparison_table(bundles: &[RunBundle]) -> Result<ComparisonTable> {
    if bundles.is_empty() {
        return Err(Error::input("comparison needs at least one run"));
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::with_capacity(bundles.len());
    for b in bundles {
        b.validate()?;
        if !seen.insert(b.model_name.as_str()) {
            return Err(Error::input(format!("duplicate model {:?} in comparison", b.model_name)));
        }
        let r = &b.report;
        rows.push(ComparisonRow {
            model_name: b.model_name.clone(),
            overall_accuracy: r.overall_accuracy,
            macro_precision: r.macro_precision,
            macro_recall: r.macro_recall,
            macro_f1: r.macro_f1,
        });
    }
    rows.sort_by(|a, b| {
        b.overall_accuracy
            .total_cmp(&a.overall_accuracy)
            .then_with(|| a.model_name.cmp(&b.model_name))
    });
    Ok(ComparisonTable { rows })
}

/// Paths of one rendered artifact family.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub csv: PathBuf,
    pub png: PathBuf,
    pub svg: PathBuf,
}

fn write_family(dir: &Path, stem: &str, csv: &str, scene: &Scene) -> Result<Rendered> {
    let out = Rendered {
        csv: dir.join(format!("{stem}.csv")),
        png: dir.join(format!("{stem}.png")),
        svg: dir.join(format!("{stem}.svg")),
    };
    io::write_bytes(&out.csv, csv.as_bytes())?;
    io::write_bytes(&out.png, &scene.to_png())?;
    io::write_bytes(&out.svg, scene.to_svg().as_bytes())?;
    Ok(out)
}

/// Upper end of the loss axis: the largest recorded loss rounded up.
pub fn loss_axis_max(history: &TrainingHistory) -> f64 {
    let max = history
        .records
        .iter()
        .flat_map(|r| [r.train_loss, r.val_loss])
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    nice_ceil(max)
}

/// Loss and accuracy panels side by side, epochs counted from 1.
pub fn history_scene(history: &TrainingHistory) -> Result<Scene> {
    if history.records.is_empty() {
        return Err(Error::input("history has no epochs to plot"));
    }
    let mut scene = Scene::new(980, 420);
    let last = history.records.len() as f64;
    let x_range = if last > 1.0 { (1.0, last) } else { (0.0, 2.0) };
    let pick = |f: fn(&leafscope_core::trainer::EpochRecord) -> f64| -> Vec<(f64, f64)> {
        history.records.iter().map(|r| (r.epoch as f64 + 1.0, f(r))).collect()
    };
    let panels = [
        ("loss", (0.0, loss_axis_max(history)), pick(|r| r.train_loss), pick(|r| r.val_loss)),
        ("accuracy", (0.0, 1.0), pick(|r| r.train_accuracy), pick(|r| r.val_accuracy)),
    ];
    for (k, (title, y_range, train, val)) in panels.into_iter().enumerate() {
        let frame = Frame {
            left: 70.0 + k as f64 * 490.0,
            top: 40.0,
            width: 400.0,
            height: 320.0,
            x_range,
            y_range,
        };
        frame.draw_axes(&mut scene, 5, title);
        for e in x_ticks(history.records.len()) {
            let x = frame.px(e as f64);
            scene.text(x, frame.top + frame.height + 14.0, e.to_string(), Anchor::Middle);
        }
        scene.text(frame.left + frame.width / 2.0, frame.top + frame.height + 34.0, "epoch", Anchor::Middle);
        let best = history.best_epoch as f64 + 1.0;
        if history.best_epoch < history.records.len() {
            let x = frame.px(best);
            scene.line((x, frame.top), (x, frame.top + frame.height), Rgb::GRID, 1.0);
        }
        plot_series(
            &mut scene,
            &frame,
            &[
                Series { label: "train", points: train, color: Rgb::BLUE },
                Series { label: "validation", points: val, color: Rgb::ORANGE },
            ],
        );
    }
    Ok(scene)
}

fn x_ticks(epochs: usize) -> Vec<usize> {
    let step = [1, 2, 5, 10, 20, 25, 50, 100].into_iter().find(|s| epochs / s <= 10).unwrap_or(epochs.max(1));
    let mut ticks: Vec<usize> = (1..=epochs).filter(|e| e % step == 0 || *e == 1).collect();
    ticks.dedup();
    ticks
}

/// Writes `history.csv`, `history.png` and `history.svg` into `dir`.
pub fn render_history(history: &TrainingHistory, dir: &Path) -> Result<Rendered> {
    let scene = history_scene(history)?;
    write_family(dir, "history", &formats::emit_history_csv(&history.records), &scene)
}

/// Annotated count grid with class labels on both axes.
pub fn confusion_scene(report: &EvaluationReport, orientation: Orientation) -> Scene {
    let names: Vec<&str> = report.per_class.iter().map(|c| c.class_name.as_str()).collect();
    let shown = match orientation {
        Orientation::Internal => report.matrix.clone(),
        Orientation::Paper => report.matrix.transposed(),
    };
    let k = names.len();
    let longest = names.iter().map(|n| n.chars().count()).max().unwrap_or(1) as f64 * 8.0;
    let (cell_w, cell_h) = ((longest + 12.0).max(56.0), 40.0);
    let (row_title, col_title) = orientation.axis_titles();
    let left = longest.max(crate::chart::text_width(row_title, 1)) + 24.0;
    let top = 60.0;
    let (grid_w, grid_h) = (cell_w * k as f64, cell_h * k as f64);
    let mut scene = Scene::new((left + grid_w + 20.0).ceil() as u32, (top + grid_h + 60.0).ceil() as u32);
    let rows = shown.rows();
    let max = rows.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    scene.text(left, 16.0, format!("rows: {row_title}, columns: {col_title}"), Anchor::Start);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let (x, y) = (left + j as f64 * cell_w, top + i as f64 * cell_h);
            let fill = Rgb(8, 81, 156).tint((v as f64 / max).sqrt());
            scene.push(Shape::Rect { x, y, w: cell_w, h: cell_h, fill });
            scene.push(Shape::Text {
                x: x + cell_w / 2.0,
                y: y + cell_h / 2.0,
                text: v.to_string(),
                scale: 1,
                anchor: Anchor::Middle,
                color: if fill.is_dark() { Rgb::WHITE } else { Rgb::BLACK },
            });
        }
        scene.text(left - 8.0, top + (i as f64 + 0.5) * cell_h, names[i], Anchor::End);
    }
    for (j, name) in names.iter().enumerate() {
        scene.text(left + (j as f64 + 0.5) * cell_w, top + grid_h + 14.0, *name, Anchor::Middle);
    }
    for i in 0..=k {
        let (ox, oy) = (i as f64 * cell_w, i as f64 * cell_h);
        scene.line((left, top + oy), (left + grid_w, top + oy), Rgb::WHITE, 1.0);
        scene.line((left + ox, top), (left + ox, top + grid_h), Rgb::WHITE, 1.0);
    }
    scene.text(left + grid_w / 2.0, top + grid_h + 40.0, col_title, Anchor::Middle);
    scene.text(left - 8.0, top - 14.0, row_title, Anchor::End);
    scene
}

/// Internal orientation writes `confusion.*`, paper orientation
/// `confusion_paper.*`.
pub fn render_confusion(report: &EvaluationReport, dir: &Path, orientation: Orientation) -> Result<Rendered> {
    let names: Vec<String> = report.per_class.iter().map(|c| c.class_name.clone()).collect();
    let csv = formats::emit_confusion_csv(&report.matrix, &names, orientation);
    let stem = match orientation {
        Orientation::Internal => "confusion",
        Orientation::Paper => "confusion_paper",
    };
    write_family(dir, stem, &csv, &confusion_scene(report, orientation))
}

/// Accuracy and macro precision per model, in table order.
pub fn comparison_scene(table: &ComparisonTable) -> Scene {
    let k = table.rows.len();
    let width = (160.0 + 130.0 * k.max(2) as f64).max(560.0);
    let mut scene = Scene::new(width as u32, 420);
    let values = table.rows.iter().flat_map(|r| [r.overall_accuracy, r.macro_precision]);
    let lo = values.fold(1.0, f64::min);
    let y_lo = ((lo - 0.005) * 100.0).floor().clamp(0.0, 99.0) / 100.0;
    let frame = Frame {
        left: 70.0,
        top: 50.0,
        width: width - 110.0,
        height: 300.0,
        x_range: (-0.5, k as f64 - 0.5),
        y_range: (y_lo, 1.0),
    };
    frame.draw_axes(&mut scene, 5, "accuracy and macro precision");
    for (i, r) in table.rows.iter().enumerate() {
        scene.text(frame.px(i as f64), frame.top + frame.height + 16.0, r.model_name.clone(), Anchor::Middle);
    }
    let pts = |f: fn(&ComparisonRow) -> f64| table.rows.iter().enumerate().map(|(i, r)| (i as f64, f(r))).collect();
    plot_series(
        &mut scene,
        &frame,
        &[
            Series { label: "accuracy", points: pts(|r| r.overall_accuracy), color: Rgb::BLUE },
            Series { label: "macro precision", points: pts(|r| r.macro_precision), color: Rgb::ORANGE },
        ],
    );
    scene
}

/// Builds the table and writes `comparison.csv/png/svg` into `dir`.
pub fn compare_runs(bundles: &[RunBundle], dir: &Path) -> Result<ComparisonTable> {
    let table = comparison_table(bundles)?;
    write_family(dir, "comparison", &formats::emit_comparison_csv(&table.rows), &comparison_scene(&table))?;
    Ok(table)
}

/// Human-readable classification report with two-decimal values.
pub fn classification_report_text(report: &EvaluationReport) -> String {
    let w = report.per_class.iter().map(|c| c.class_name.len()).max().unwrap_or(5).max(12);
    let mut s = String::new();
    let _ = writeln!(s, "{:<w$} {:>9} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1", "support");
    for c in &report.per_class {
        let _ = writeln!(
            s,
            "{:<w$} {:>9.2} {:>9.2} {:>9.2} {:>9}{}",
            c.class_name,
            round2(c.precision),
            round2(c.recall),
            round2(c.f1),
            c.support,
            if c.degenerate { "  (zero denominator)" } else { "" }
        );
    }
    let total = report.matrix.total();
    let _ = writeln!(
        s,
        "{:<w$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
        "macro avg",
        round2(report.macro_precision),
        round2(report.macro_recall),
        round2(report.macro_f1),
        total
    );
    let _ = writeln!(s, "{:<w$} {:>29.2} {:>9}", "accuracy", round2(report.overall_accuracy), total);
    s
}

pub fn write_report(report: &EvaluationReport, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("report.json");
    io::write_json(&path, report)?;
    io::write_bytes(&dir.join("classification_report.txt"), classification_report_text(report).as_bytes())?;
    Ok(path)
}

pub fn read_report(path: &Path) -> Result<EvaluationReport> {
    io::read_json(path)
}
