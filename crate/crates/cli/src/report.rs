//! Comparison tables and CMC plots over several evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use xcam_core::fsutil::write_atomic;
use xcam_core::metrics::{format_table, EvalReport};

use crate::error::CliError;

/// Reports are comparable when they share every protocol setting.
pub fn check_compatible(reports: &[EvalReport]) -> Result<(), CliError> {
    let first = reports
        .first()
        .ok_or_else(|| CliError::Usage("report needs at least one evaluation report".into()))?;
    for r in &reports[1..] {
        if r.protocol != first.protocol {
            return Err(CliError::Validation(format!(
                "incompatible protocols: {:?} uses {:?}, {:?} uses {:?}",
                first.method, first.protocol, r.method, r.protocol
            )));
        }
    }
    Ok(())
}

/// Protocol header followed by the fixed-width table.
pub fn render_table(reports: &[EvalReport]) -> Result<String, CliError> {
    check_compatible(reports)?;
    let p = &reports[0].protocol;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "protocol={:?} filter={:?} seed={} trials={} max_rank={} ap={}",
        p.protocol, p.filter, p.seed, p.trials, p.max_rank, p.ap
    );
    let rows: Vec<_> = reports.iter().map(EvalReport::table_row).collect();
    out.push_str(&format_table(&rows));
    Ok(out)
}

/// `rank,<method>...` with one line per rank.
pub fn cmc_csv(reports: &[EvalReport]) -> String {
    let n = reports.iter().map(|r| r.cmc.len()).max().unwrap_or(0);
    let mut out = String::from("rank");
    for r in reports {
        out.push(',');
        out.push_str(&r.method.replace(',', ";"));
    }
    out.push('\n');
    for k in 0..n {
        let _ = write!(out, "{}", k + 1);
        for r in reports {
            let _ = write!(out, ",{:.6}", r.rank(k + 1));
        }
        out.push('\n');
    }
    out
}

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
];

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>, thick: i64) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for i in 0..=steps {
        let x = x0 + (x1 - x0) * i / steps;
        let y = y0 + (y1 - y0) * i / steps;
        for dy in 0..thick {
            for dx in 0..thick {
                put(img, x + dx, y + dy, c);
            }
        }
    }
}

/// CMC curves (match rate against rank). Colours follow the report order,
/// which is also the column order of the CSV; a swatch per curve is drawn
/// in the top-right corner.
pub fn plot_cmc(reports: &[EvalReport]) -> RgbImage {
    let (w, h) = (640u32, 400u32);
    let (left, right, top, bottom) = (48i64, 16i64, 16i64, 32i64);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let pw = w as i64 - left - right;
    let ph = h as i64 - top - bottom;
    let n = reports.iter().map(|r| r.cmc.len()).max().unwrap_or(1).max(2);
    let grid = Rgb([225, 225, 225]);
    for i in 0..=5 {
        let y = top + ph * i / 5;
        line(&mut img, (left, y), (left + pw, y), grid, 1);
        line(&mut img, (left - 5, y), (left, y), Rgb([0, 0, 0]), 1);
    }
    for k in 0..n as i64 {
        let x = left + pw * k / (n as i64 - 1);
        line(&mut img, (x, top + ph), (x, top + ph + 4), Rgb([0, 0, 0]), 1);
    }
    let axis = Rgb([0, 0, 0]);
    line(&mut img, (left, top), (left, top + ph), axis, 1);
    line(&mut img, (left, top + ph), (left + pw, top + ph), axis, 1);
    let to_px = |k: usize, v: f64| (left + pw * k as i64 / (n as i64 - 1), top + ((1.0 - v.clamp(0.0, 1.0)) * ph as f64).round() as i64);
    for (i, r) in reports.iter().enumerate() {
        let c = Rgb(PALETTE[i % PALETTE.len()]);
        for k in 1..r.cmc.len() {
            line(&mut img, to_px(k - 1, r.cmc[k - 1]), to_px(k, r.cmc[k]), c, 2);
        }
        let sy = top + 4 + 14 * i as i64;
        for dy in 0..10 {
            line(&mut img, (left + pw - 14, sy + dy), (left + pw - 4, sy + dy), c, 1);
        }
    }
    img
}

/// Write `table.txt`, `cmc.csv` and `cmc.png` into `dir`.
pub fn write_report(reports: &[EvalReport], dir: &Path) -> Result<String, CliError> {
    let table = render_table(reports)?;
    write_atomic(&dir.join("table.txt"), table.as_bytes())?;
    write_atomic(&dir.join("cmc.csv"), cmc_csv(reports).as_bytes())?;
    let png = dir.join("cmc.png");
    plot_cmc(reports)
        .save(&png)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", png.display())))?;
    Ok(table)
}
