//! `metrics.csv` and the `curves.svg` loss/accuracy plot.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use pvcnn_core::metrics::{EpochRecord, MetricsError, MetricsLog};
use thiserror::Error;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVES_FILE: &str = "curves.svg";
pub const COLUMNS: [&str; 5] = ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"];

#[derive(Debug, Error)]
pub enum CurvesError {
    #[error("metrics log is empty")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("metrics header must be `epoch,train_loss,train_acc,test_loss,test_acc`, found `{0}`")]
    Header(String),
    #[error("metrics row {row}: {message}")]
    Row { row: usize, message: String },
    #[error(transparent)]
    Log(#[from] MetricsError),
}

/// Floats use `Display`, the shortest text that parses back to the same
/// value, so a written log re-reads exactly.
pub fn write_metrics(log: &MetricsLog, writer: impl Write) -> Result<(), CurvesError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS)?;
    for r in log.records() {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_accuracy.to_string(),
            r.test_loss.to_string(),
            r.test_accuracy.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_metrics(reader: impl Read) -> Result<MetricsLog, CurvesError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(COLUMNS) {
        return Err(CurvesError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut log = MetricsLog::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let bad = |message: String| CurvesError::Row { row, message };
        let float = |k: usize| -> Result<f64, CurvesError> {
            rec[k]
                .parse::<f64>()
                .map_err(|e| bad(format!("{}: {e}", COLUMNS[k])))
        };
        let epoch = rec[0].parse::<u32>().map_err(|e| bad(format!("epoch: {e}")))?;
        log.push(EpochRecord {
            epoch,
            train_loss: float(1)?,
            train_accuracy: float(2)?,
            test_loss: float(3)?,
            test_accuracy: float(4)?,
        })?;
    }
    Ok(log)
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 50.0;
const TRAIN_COLOR: &str = "#1f77b4";
const TEST_COLOR: &str = "#d62728";

struct Panel<'a> {
    title: &'a str,
    train: Vec<(f64, f64)>,
    test: Vec<(f64, f64)>,
    y_range: (f64, f64),
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn draw_panel(svg: &mut String, p: &Panel, x0: f64, x_range: (f64, f64)) {
    let (plot_w, plot_h) = (PANEL_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let sx = |x: f64| {
        if x_range.1 > x_range.0 {
            x0 + MARGIN + (x - x_range.0) / (x_range.1 - x_range.0) * plot_w
        } else {
            x0 + MARGIN + plot_w / 2.0
        }
    };
    let sy = |y: f64| {
        let (lo, hi) = p.y_range;
        let t = if hi > lo { (y - lo) / (hi - lo) } else { 0.5 };
        MARGIN + (1.0 - t) * plot_h
    };
    let _ = writeln!(
        svg,
        r##"<rect x="{:.1}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#888"/>"##,
        x0 + MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{}</text>"#,
        x0 + PANEL_W / 2.0,
        MARGIN - 15.0,
        p.title
    );
    for (v, anchor_y) in [(p.y_range.0, sy(p.y_range.0)), (p.y_range.1, sy(p.y_range.1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"#,
            x0 + MARGIN - 5.0,
            anchor_y + 4.0,
            fmt_tick(v)
        );
    }
    for (v, anchor_x) in [(x_range.0, sx(x_range.0)), (x_range.1, sx(x_range.1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{anchor_x:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
            MARGIN + plot_h + 16.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">epoch</text>"#,
        x0 + PANEL_W / 2.0,
        PANEL_H - 8.0
    );
    for (points, color, name) in [(&p.train, TRAIN_COLOR, "train"), (&p.test, TEST_COLOR, "test")] {
        let coords: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="{name}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        for &(x, y) in points.iter() {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
    }
}

/// Two panels, loss and accuracy, each with a train and a test series.
pub fn render_svg(log: &MetricsLog) -> Result<String, CurvesError> {
    let records = log.records();
    let (first, last) = match (records.first(), records.last()) {
        (Some(f), Some(l)) => (f.epoch as f64, l.epoch as f64),
        _ => return Err(CurvesError::Empty),
    };
    let series = |f: fn(&EpochRecord) -> f64| records.iter().map(|r| (r.epoch as f64, f(r))).collect::<Vec<_>>();
    let loss_max = records
        .iter()
        .flat_map(|r| [r.train_loss, r.test_loss])
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let panels = [
        Panel {
            title: "loss",
            train: series(|r| r.train_loss),
            test: series(|r| r.test_loss),
            y_range: (0.0, if loss_max > 0.0 { loss_max } else { 1.0 }),
        },
        Panel {
            title: "accuracy",
            train: series(|r| r.train_accuracy),
            test: series(|r| r.test_accuracy),
            y_range: (0.0, 1.0),
        },
    ];
    let width = 2.0 * PANEL_W;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut svg, p, i as f64 * PANEL_W, (first, last));
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="18" font-size="12" fill="{TRAIN_COLOR}">train</text><text x="{:.1}" y="18" font-size="12" fill="{TEST_COLOR}">test</text>"#,
        width - 110.0,
        width - 65.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes `metrics.csv` and `curves.svg` into `out_dir`.
pub fn emit_curves(log: &MetricsLog, out_dir: &Path) -> Result<(PathBuf, PathBuf), CurvesError> {
    let svg = render_svg(log)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CurvesError::Io { path, source }
    };
    let csv_path = out_dir.join(METRICS_FILE);
    let mut buf = Vec::new();
    write_metrics(log, &mut buf)?;
    fs::write(&csv_path, buf).map_err(io(&csv_path))?;
    let svg_path = out_dir.join(CURVES_FILE);
    fs::write(&svg_path, svg).map_err(io(&svg_path))?;
    Ok((csv_path, svg_path))
}
