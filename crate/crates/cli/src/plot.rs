//! Training-curve emission: the per-epoch CSV and a minimal SVG line plot.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hyperleaf_core::resnet::TrainReport;
use hyperleaf_core::{Error, Result};

pub const CURVES_CSV: &str = "train_report.csv";
pub const CURVES_SVG: &str = "curves.svg";

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN: f64 = 48.0;

struct Series<'a> {
    name: &'a str,
    colour: &'a str,
    points: Vec<(f64, f64)>,
}

fn panel(svg: &mut String, top: f64, title: &str, y_max: f64, series: &[Series<'_>], epochs: usize) {
    let (x0, x1) = (MARGIN, WIDTH - MARGIN / 2.0);
    let (y0, y1) = (top + PANEL_HEIGHT - MARGIN / 2.0, top + MARGIN / 2.0);
    let sx = |e: f64| x0 + (x1 - x0) * if epochs > 1 { (e - 1.0) / (epochs - 1) as f64 } else { 0.5 };
    let sy = |v: f64| y0 - (y0 - y1) * if y_max > 0.0 { v / y_max } else { 0.0 };
    let _ =
        writeln!(svg, r#"<text x="{x0}" y="{:.1}" font-size="13" font-family="sans-serif">{title}</text>"#, y1 - 8.0);
    let _ = writeln!(
        svg,
        r##"<polyline points="{x0:.1},{y1:.1} {x0:.1},{y0:.1} {x1:.1},{y0:.1}" fill="none" stroke="#333"/>"##
    );
    for (v, label) in [(0.0, "0".to_string()), (y_max, format!("{y_max:.2}"))] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end" font-family="sans-serif">{label}</text>"#,
            x0 - 4.0,
            sy(v) + 3.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{x1:.1}" y="{:.1}" font-size="10" text-anchor="end" font-family="sans-serif">epoch {epochs}</text>"#,
        y0 + 14.0
    );
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s.points.iter().map(|&(e, v)| format!("{:.1},{:.1}", sx(e), sy(v))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            pts.join(" "),
            s.colour
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" fill="{}" font-family="sans-serif">{}</text>"#,
            x1 - 90.0,
            y1 + 12.0 * (k as f64 + 1.0),
            s.colour,
            s.name
        );
    }
}

/// Loss panel above an accuracy panel, both against epoch.
pub fn curves_svg(report: &TrainReport) -> String {
    let epochs = report.epochs.len();
    let loss: Vec<(f64, f64)> = report.epochs.iter().map(|r| (r.epoch as f64, r.train_loss)).collect();
    let loss_max = loss.iter().map(|p| p.1).fold(0.0, f64::max);
    let train_acc = report.epochs.iter().map(|r| (r.epoch as f64, r.train_accuracy)).collect();
    let val_acc: Vec<(f64, f64)> =
        report.epochs.iter().filter_map(|r| r.val_accuracy.map(|v| (r.epoch as f64, v))).collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{}" viewBox="0 0 {WIDTH} {}">"#,
        2.0 * PANEL_HEIGHT,
        2.0 * PANEL_HEIGHT
    );
    panel(
        &mut svg,
        0.0,
        "training loss",
        loss_max,
        &[Series { name: "train loss", colour: "#c0392b", points: loss }],
        epochs,
    );
    let mut acc = vec![Series { name: "train accuracy", colour: "#2471a3", points: train_acc }];
    if !val_acc.is_empty() {
        acc.push(Series { name: "val accuracy", colour: "#229954", points: val_acc });
    }
    panel(&mut svg, PANEL_HEIGHT, "accuracy", 1.0, &acc, epochs);
    svg.push_str("</svg>\n");
    svg
}

/// Writes the CSV and its SVG rendering into `out_dir`.
pub fn emit_curves(report: &TrainReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.epochs.is_empty() {
        return Err(Error::EmptyInput("training report has no epochs".into()));
    }
    fs::create_dir_all(out_dir)?;
    let csv = out_dir.join(CURVES_CSV);
    report.save_csv(&csv)?;
    let svg = out_dir.join(CURVES_SVG);
    fs::write(&svg, curves_svg(report))?;
    Ok(vec![csv, svg])
}
