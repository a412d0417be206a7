//! Diagnostic rendering: attention maps blended over frames and box edges
//! burned into them. Output goes through the PGM writer; nothing here is
//! part of a numeric contract.

use crate::error::{Error, Result};
use crate::imaging::{BBox, Frame};

/// Nearest-neighbor upsamples an h x w attention map to the frame size,
/// peak-normalizes it, and alpha-blends it over the frame at 0.5. Cells map
/// to pixels the same way the prior downsample does, so overlay cells line
/// up with the attention grid.
pub fn attention_overlay(frame: &Frame, attention: &[f64], grid: (usize, usize)) -> Result<Frame> {
    let (gh, gw) = grid;
    if gh == 0 || gw == 0 || attention.len() != gh * gw {
        return Err(Error::ShapeMismatch(format!(
            "{} attention cells for a {gh}x{gw} grid",
            attention.len()
        )));
    }
    let peak = attention.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::ShapeMismatch("attention map has no positive cell".into()));
    }
    let mut data = Vec::with_capacity(frame.data.len());
    for y in 0..frame.height {
        let gi = y * gh / frame.height;
        for x in 0..frame.width {
            let gj = x * gw / frame.width;
            let a = attention[gi * gw + gj] / peak;
            data.push((0.5 * frame.at(x, y) + 0.5 * a).clamp(0.0, 1.0));
        }
    }
    Frame::new(frame.width, frame.height, data)
}

/// Burns the box outline into the frame at `level` intensity, one pixel
/// wide, clipped to the frame. Degenerate or fully outside boxes draw
/// nothing.
pub fn burn_box_edges(frame: &mut Frame, bbox: &BBox, level: f64) {
    let clamp_x = |v: f64| (v.round() as isize).clamp(0, frame.width as isize - 1) as usize;
    let clamp_y = |v: f64| (v.round() as isize).clamp(0, frame.height as isize - 1) as usize;
    if bbox.x_max <= 0.0
        || bbox.y_max <= 0.0
        || bbox.x_min >= frame.width as f64
        || bbox.y_min >= frame.height as f64
    {
        return;
    }
    let (x0, x1) = (clamp_x(bbox.x_min), clamp_x(bbox.x_max - 1.0));
    let (y0, y1) = (clamp_y(bbox.y_min), clamp_y(bbox.y_max - 1.0));
    let level = level.clamp(0.0, 1.0);
    for x in x0..=x1 {
        frame.data[y0 * frame.width + x] = level;
        frame.data[y1 * frame.width + x] = level;
    }
    for y in y0..=y1 {
        frame.data[y * frame.width + x0] = level;
        frame.data[y * frame.width + x1] = level;
    }
}
