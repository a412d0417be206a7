//! From attention maps to a smoothed box tube and a zoomed frame sequence.
//!
//! A candidate box is placed at each attention peak; consecutive boxes are
//! linked by dynamic programming trading attention mass against overlap;
//! the chosen boxes are averaged into a single static crop window, composed
//! with the zoom history, and cut directly out of the original frames so no
//! frame is ever resampled twice.

use crate::error::{Error, Result};
use crate::imaging::{
    box_average, compose_box, content_dims, crop_resize, iou, BBox, Frame, FrameSequence,
};

#[derive(Debug, Clone)]
pub struct Candidate {
    pub bbox: BBox,
    /// Attention value at the generating cell.
    pub score: f64,
    pub frame: usize,
    pub peak_rank: usize,
}

#[derive(Debug, Clone)]
pub struct Tube {
    pub boxes: Vec<BBox>,
    /// Mean linking objective over the chosen chain.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ZoomSchedule {
    pub ratios: Vec<f64>,
}

impl ZoomSchedule {
    pub fn new(ratios: Vec<f64>) -> Result<Self> {
        if ratios.is_empty() || ratios.iter().any(|r| !(0.0..1.0).contains(r) || *r <= 0.0) {
            return Err(Error::ShapeMismatch(format!("bad zoom ratios {ratios:?}")));
        }
        Ok(ZoomSchedule { ratios })
    }

    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }
}

/// Default candidate ratio set: 0.9^1 .. 0.9^4.
pub fn default_ratio_set() -> Vec<f64> {
    (1..=4).map(|k| 0.9f64.powi(k)).collect()
}

/// Grid cells that are >= all existing 8-neighbors, sorted by value
/// descending with row-major tie-breaking, truncated to k. When there are
/// fewer peaks than k the highest remaining cells fill the quota.
pub fn find_peaks(map: &[f64], grid: (usize, usize), k: usize) -> Vec<(usize, usize)> {
    let (h, w) = grid;
    assert_eq!(map.len(), h * w, "map size mismatch");
    let at = |i: isize, j: isize| -> Option<f64> {
        if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
            None
        } else {
            Some(map[i as usize * w + j as usize])
        }
    };
    let mut peaks = Vec::new();
    let mut rest = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let v = map[i * w + j];
            let mut is_peak = true;
            for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    if let Some(n) = at(i as isize + di, j as isize + dj) {
                        if n > v {
                            is_peak = false;
                        }
                    }
                }
            }
            if is_peak {
                peaks.push((i, j, v));
            } else {
                rest.push((i, j, v));
            }
        }
    }
    let by_value_then_row_major = |a: &(usize, usize, f64), b: &(usize, usize, f64)| {
        b.2.partial_cmp(&a.2).unwrap().then((a.0, a.1).cmp(&(b.0, b.1)))
    };
    peaks.sort_by(by_value_then_row_major);
    rest.sort_by(by_value_then_row_major);
    peaks
        .into_iter()
        .chain(rest)
        .take(k)
        .map(|(i, j, _)| (i, j))
        .collect()
}

/// One box per peak: R*W x R*H, centered at the peak cell's pixel center,
/// shifted minimally to lie inside the frame. Scores carry the attention
/// value at the peak.
pub fn make_candidates(
    peaks: &[(usize, usize)],
    map: &[f64],
    grid: (usize, usize),
    ratio: f64,
    frame_dims: (usize, usize),
    frame_index: usize,
) -> Result<Vec<Candidate>> {
    if !(0.0..1.0).contains(&ratio) || ratio <= 0.0 {
        return Err(Error::ShapeMismatch(format!("zoom ratio {ratio} outside (0,1)")));
    }
    let (h, w) = grid;
    let (fw, fh) = (frame_dims.0 as f64, frame_dims.1 as f64);
    let (bw, bh) = (ratio * fw, ratio * fh);
    peaks
        .iter()
        .enumerate()
        .map(|(rank, &(i, j))| {
            let cx = (j as f64 + 0.5) * fw / w as f64;
            let cy = (i as f64 + 0.5) * fh / h as f64;
            let raw = BBox::new(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0)?;
            Ok(Candidate {
                bbox: raw.shift_into(fw, fh),
                score: map[i * w + j],
                frame: frame_index,
                peak_rank: rank,
            })
        })
        .collect()
}

/// Pairwise linking score: attention of both boxes plus weighted overlap.
fn link_score(a: &Candidate, b: &Candidate, lambda: f64) -> f64 {
    a.score + b.score + lambda * iou(&a.bbox, &b.bbox)
}

/// Viterbi over per-frame candidates maximizing the mean linking score of
/// consecutive pairs. A single frame degenerates to the best-scoring
/// candidate.
pub fn best_tube(candidates: &[Vec<Candidate>], lambda: f64) -> Result<Tube> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates { frame: 0 });
    }
    if let Some(frame) = candidates.iter().position(|c| c.is_empty()) {
        return Err(Error::EmptyCandidates { frame });
    }
    let t_len = candidates.len();
    if t_len == 1 {
        let best = candidates[0]
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.score.partial_cmp(&b.score).unwrap().then(ib.cmp(ia))
            })
            .map(|(_, c)| c)
            .unwrap();
        return Ok(Tube { boxes: vec![best.bbox], objective: best.score });
    }
    // dp[j] = best sum of link scores for chains ending at candidate j.
    let mut dp: Vec<f64> = vec![0.0; candidates[0].len()];
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(t_len);
    for t in 1..t_len {
        let mut next = vec![f64::NEG_INFINITY; candidates[t].len()];
        let mut arg = vec![0usize; candidates[t].len()];
        for (j, cand) in candidates[t].iter().enumerate() {
            for (i, prev) in candidates[t - 1].iter().enumerate() {
                let s = dp[i] + link_score(prev, cand, lambda);
                if s > next[j] {
                    next[j] = s;
                    arg[j] = i;
                }
            }
        }
        dp = next;
        back.push(arg);
    }
    let mut j = dp
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ib.cmp(ia)))
        .unwrap()
        .0;
    let objective = dp[j] / t_len as f64;
    let mut chain = vec![j; t_len];
    for t in (1..t_len).rev() {
        j = back[t - 1][j];
        chain[t - 1] = j;
    }
    let boxes = chain.iter().zip(candidates).map(|(&j, c)| c[j].bbox).collect();
    Ok(Tube { boxes, objective })
}

/// Zoom history: which region of the original frames the current inputs
/// display, and the pixel dimensions of that content in the current frames.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ZoomHistory {
    pub bbox: BBox,
    pub content: (usize, usize),
}

impl ZoomHistory {
    /// Identity history: current coordinates are original coordinates.
    pub fn full(width: usize, height: usize) -> Self {
        ZoomHistory { bbox: BBox::full(width, height), content: (width, height) }
    }
}

/// Averages the tube into one static box, composes it with the history into
/// original coordinates, and crops every original frame once at
/// `target_max_side`. Returns the zoomed frames and the updated history.
pub fn zoom_sequence(
    original_frames: &FrameSequence,
    tube: &Tube,
    history: &ZoomHistory,
    target_max_side: usize,
) -> Result<(FrameSequence, ZoomHistory)> {
    let avg = box_average(&tube.boxes)?;
    zoom_with_box(original_frames, &avg, history, target_max_side)
}

/// One-box zoom core, shared with the per-frame variant and with replays.
pub fn zoom_with_box(
    original_frames: &FrameSequence,
    current_box: &BBox,
    history: &ZoomHistory,
    target_max_side: usize,
) -> Result<(FrameSequence, ZoomHistory)> {
    let first = original_frames.first().ok_or(Error::EmptyCandidates { frame: 0 })?;
    let composed = compose_box(current_box, &history.bbox, history.content)?;
    let composed = composed
        .shift_into(first.width as f64, first.height as f64);
    if composed.width() < 2.0 || composed.height() < 2.0 {
        return Err(Error::OverZoom { w: composed.width(), h: composed.height() });
    }
    let frames: Result<Vec<Frame>> = original_frames
        .iter()
        .map(|f| crop_resize(f, &composed, target_max_side))
        .collect();
    let content = content_dims(&composed, target_max_side);
    Ok((frames?, ZoomHistory { bbox: composed, content }))
}

/// Per-frame variant kept behind a pipeline flag: each frame is cropped at
/// its own tube box instead of the average. Histories become per-frame.
pub fn zoom_sequence_per_frame(
    original_frames: &FrameSequence,
    tube: &Tube,
    histories: &[ZoomHistory],
    target_max_side: usize,
) -> Result<(FrameSequence, Vec<ZoomHistory>)> {
    if tube.boxes.len() != original_frames.len() || histories.len() != original_frames.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} boxes / {} histories for {} frames",
            tube.boxes.len(),
            histories.len(),
            original_frames.len()
        )));
    }
    let mut frames = Vec::with_capacity(original_frames.len());
    let mut next = Vec::with_capacity(original_frames.len());
    for ((frame, bbox), hist) in original_frames.iter().zip(&tube.boxes).zip(histories) {
        let (mut zoomed, h) =
            zoom_with_box(&vec![frame.clone()], bbox, hist, target_max_side)?;
        frames.push(zoomed.pop().unwrap());
        next.push(h);
    }
    Ok((frames, next))
}

/// Serializes a tube as `t x_min y_min x_max y_max score` lines, one per
/// frame, in original-frame coordinates.
pub fn tube_dump(boxes_in_original: &[BBox], objective: f64) -> String {
    let mut out = String::new();
    for (t, b) in boxes_in_original.iter().enumerate() {
        out.push_str(&format!(
            "{t} {:.3} {:.3} {:.3} {:.3} {:.6}\n",
            b.x_min, b.y_min, b.x_max, b.y_max, objective
        ));
    }
    out
}
