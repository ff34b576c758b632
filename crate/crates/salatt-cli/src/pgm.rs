//! ASCII (P2) portable graymap output for weight maps.

use std::path::Path;

use salatt_core::error::Result;

/// Min-max normalize to 0..255. A constant map (max == min) renders as all
/// zeros rather than dividing by zero.
pub fn normalize_to_gray(values: &[f64]) -> Vec<u8> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.partial_cmp(&min) != Some(std::cmp::Ordering::Greater) {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|v| (((v - min) / (max - min)) * 255.0).round() as u8)
        .collect()
}

/// Render a square map as P2 text, one image row per line.
pub fn render_pgm(values: &[f64], side: usize) -> String {
    debug_assert_eq!(values.len(), side * side);
    let gray = normalize_to_gray(values);
    let mut out = format!("P2\n{side} {side}\n255\n");
    for row in gray.chunks(side) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_pgm(path: &Path, values: &[f64], side: usize) -> Result<()> {
    std::fs::write(path, render_pgm(values, side))?;
    Ok(())
}
