//! Memory accounting for the two ways of giving a small target more
//! pixels: zooming into a region of interest versus enlarging the whole
//! frame. Both paths produce the same effective target resolution; the
//! enlarge path pays for it across the full frame.

use serde::Serialize;

use crate::error::Result;
use crate::imaging::{box_average, crop_resize, motion_priors, BBox, FrameSequence};
use crate::tube::{best_tube, find_peaks, make_candidates, zoom_with_box, ZoomHistory};

/// Frame-buffer footprints of one sequence processed both ways, in bytes of
/// f64 samples actually allocated. `factor` is enlarge over zoom; matching
/// target resolution predicts about 1/ratio^2.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BenchReport {
    pub ratio: f64,
    pub zoom_peak_bytes: usize,
    pub enlarge_peak_bytes: usize,
    pub factor: f64,
}

/// Runs both paths on the same frames. The zoom box comes from prior-only
/// attention (the normalized motion prior, i.e. what the model emits with
/// zero attention logits), linked into a tube and averaged, then cropped at
/// `ratio` and resized back to the input side. The enlarge path scales the
/// whole frame by 1/ratio instead, which is what it takes to give the
/// target the same resolution without cropping.
pub fn zoom_vs_enlarge(
    frames: &FrameSequence,
    ratio: f64,
    lambda: f64,
    top_k: usize,
) -> Result<BenchReport> {
    let first = frames
        .first()
        .ok_or_else(|| crate::error::Error::InvalidFrame("empty sequence".into()))?;
    let side = first.width.min(first.height);
    let g = side.min(14);
    let priors = motion_priors(frames, (g, g))?;

    let mut candidates = Vec::with_capacity(frames.len());
    for (t, (frame, prior)) in frames.iter().zip(&priors).enumerate() {
        let total: f64 = prior.data.iter().sum();
        let attention: Vec<f64> = prior.data.iter().map(|v| v / total).collect();
        let peaks = find_peaks(&attention, (g, g), top_k);
        candidates.push(make_candidates(
            &peaks,
            &attention,
            (g, g),
            ratio,
            (frame.width, frame.height),
            t,
        )?);
    }
    let tube = best_tube(&candidates, lambda)?;
    let avg = box_average(&tube.boxes)?;

    let history = ZoomHistory::full(first.width, first.height);
    let (zoomed, _) = zoom_with_box(frames, &avg, &history, first.width)?;
    let zoom_peak_bytes: usize =
        zoomed.iter().map(|f| f.data.len() * std::mem::size_of::<f64>()).sum();

    let enlarge_side = (first.width as f64 / ratio).ceil() as usize;
    let full = BBox::full(first.width, first.height);
    let enlarged: Result<Vec<_>> =
        frames.iter().map(|f| crop_resize(f, &full, enlarge_side)).collect();
    let enlarge_peak_bytes: usize =
        enlarged?.iter().map(|f| f.data.len() * std::mem::size_of::<f64>()).sum();

    Ok(BenchReport {
        ratio,
        zoom_peak_bytes,
        enlarge_peak_bytes,
        factor: enlarge_peak_bytes as f64 / zoom_peak_bytes as f64,
    })
}
