//! Loss-curve output (CSV and SVG) and plateau detection.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::EpochRecord;

pub const CSV_HEADER: [&str; 7] = ["epoch", "train_loss", "val_loss", "train_ce", "val_ce", "train_ae", "val_ae"];

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

/// Values are written with 17 significant digits.
pub fn write_csv(curve: &[EpochRecord], path: &Path) -> Result<()> {
    if curve.is_empty() {
        return Err(Error::InvalidInput("loss curve is empty".into()));
    }
    let err = csv_error(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(CSV_HEADER).map_err(&err)?;
    for r in curve {
        let values = [r.train_loss, r.val_loss, r.train_ce, r.val_ce, r.train_ae, r.val_ae];
        let mut row = vec![r.epoch.to_string()];
        row.extend(values.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let err = csv_error(path);
    let mut r = csv::Reader::from_path(path).map_err(&err)?;
    if r.headers().map_err(&err)?.iter().ne(CSV_HEADER) {
        return Err(Error::InvalidInput(format!("{}: unexpected loss-curve header", path.display())));
    }
    r.deserialize().map(|row| row.map_err(&err)).collect()
}

/// Minimal line chart of the training and validation total loss.
pub fn write_svg(curve: &[EpochRecord], path: &Path) -> Result<()> {
    if curve.is_empty() {
        return Err(Error::InvalidInput("loss curve is empty".into()));
    }
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let max_epoch = curve.last().map_or(1, |r| r.epoch).max(2) as f64;
    let max_loss = curve.iter().flat_map(|r| [r.train_loss, r.val_loss]).fold(0.0, f64::max).max(1e-12);
    let x = |e: usize| pad + (e as f64 - 1.0) / (max_epoch - 1.0) * (w - 2.0 * pad);
    let y = |l: f64| h - pad - l / max_loss * (h - 2.0 * pad);
    let points = |f: fn(&EpochRecord) -> f64| {
        curve.iter().map(|r| format!("{:.2},{:.2}", x(r.epoch), y(f(r)))).collect::<Vec<_>>().join(" ")
    };
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad},{pad} V{} H{}" stroke="black" fill="none"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">Epoch</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(svg, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">Loss</text>"#, h / 2.0, h / 2.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11">{max_loss:.4}</text>"#, 5.0, pad - 5.0);
    for (name, colour, f, dy) in [
        ("Training loss", "#1f77b4", (|r: &EpochRecord| r.train_loss) as fn(&EpochRecord) -> f64, 0.0),
        ("Validation loss", "#ff7f0e", |r: &EpochRecord| r.val_loss, 18.0),
    ] {
        let _ = writeln!(svg, r#"<polyline points="{}" stroke="{colour}" stroke-width="2" fill="none"/>"#, points(f));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{colour}" font-size="13">{name}</text>"#,
            w - pad - 120.0,
            pad + dy
        );
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

pub const PLATEAU_WINDOW: usize = 5;
pub const PLATEAU_RELATIVE_CHANGE: f64 = 0.01;
pub const PLATEAU_RUN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    /// First epoch of the run of small changes.
    pub convergence_epoch: usize,
    /// Moving average at the convergence epoch.
    pub smoothed_loss_at_convergence: f64,
    /// Moving average at the last recorded epoch.
    pub final_smoothed_loss: f64,
}

/// Moving averages over `PLATEAU_WINDOW` epochs; entry `i` belongs to epoch
/// `i + PLATEAU_WINDOW`.
pub fn moving_average(values: &[f64]) -> Vec<f64> {
    values
        .windows(PLATEAU_WINDOW)
        .map(|w| w.iter().sum::<f64>() / PLATEAU_WINDOW as f64)
        .collect()
}

/// The convergence epoch is the first epoch `e` such that the 5-epoch moving
/// average of validation loss changes by less than 1% relative to the
/// previous epoch's average at each of the epochs `e..e+5`.
pub fn detect_plateau(curve: &[EpochRecord]) -> Option<Plateau> {
    let losses: Vec<f64> = curve.iter().map(|r| r.val_loss).collect();
    let ma = moving_average(&losses);
    // small[i] describes the change into ma[i + 1], i.e. epoch i + 1 + WINDOW.
    let small: Vec<bool> = ma
        .windows(2)
        .map(|p| (p[1] - p[0]).abs() < PLATEAU_RELATIVE_CHANGE * p[0].abs())
        .collect();
    let start = small.windows(PLATEAU_RUN).position(|w| w.iter().all(|&s| s))?;
    Some(Plateau {
        convergence_epoch: curve[start + PLATEAU_WINDOW].epoch,
        smoothed_loss_at_convergence: ma[start + 1],
        final_smoothed_loss: *ma.last().expect("nonempty when a plateau exists"),
    })
}
