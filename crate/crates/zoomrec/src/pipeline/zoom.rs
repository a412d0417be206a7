//! One zoom iteration over a dataset: run the current model's attention,
//! link peak boxes into a tube per sequence, and recrop every frame from
//! its original-resolution source.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{map_box_into, motion_priors, BBox, FrameSequence};
use crate::model::forward::forward_sequence;
use crate::model::ModelParams;
use crate::synthdata::LabeledSequence;
use crate::tube::{best_tube, find_peaks, make_candidates, zoom_with_box, ZoomHistory};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ZoomParams {
    /// Weight of the IoU term when linking boxes across frames.
    pub lambda: f64,
    /// Attention peaks kept per frame.
    pub top_k: usize,
    /// Crop each frame at its own tube box instead of the tube average.
    pub per_frame: bool,
}

impl Default for ZoomParams {
    fn default() -> Self {
        ZoomParams { lambda: 0.1, top_k: 3, per_frame: false }
    }
}

impl ZoomParams {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!("link weight {} must be >= 0", self.lambda)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("need at least one attention peak per frame".into()));
        }
        Ok(())
    }
}

/// A dataset after one zoom iteration. `data` holds the recropped frames
/// with ground-truth boxes mapped into them; `histories[i][t]` is the
/// original-frame region sequence i frame t now displays, which doubles as
/// the tube box in original coordinates; `objectives[i]` is the tube's
/// linking objective.
#[derive(Debug, Clone)]
pub struct ZoomedSet {
    pub data: Vec<LabeledSequence>,
    pub histories: Vec<Vec<ZoomHistory>>,
    pub objectives: Vec<f64>,
}

impl ZoomedSet {
    /// Per-frame tube boxes of sequence `i` in original coordinates.
    pub fn tube_boxes(&self, i: usize) -> Vec<BBox> {
        self.histories[i].iter().map(|h| h.bbox).collect()
    }
}

/// Identity histories for a dataset that has not been zoomed yet.
pub fn full_histories(data: &[LabeledSequence]) -> Vec<Vec<ZoomHistory>> {
    data.iter()
        .map(|s| s.frames.iter().map(|f| ZoomHistory::full(f.width, f.height)).collect())
        .collect()
}

/// One sequence's zoom: attention from `model` on the current frames, tube
/// over the top-k peaks, then every frame recropped from its original at
/// `ratio` of the current view. Frames are snapped to the 256-level grid so
/// a reloaded cached copy is bit-identical to a fresh recomputation.
pub(crate) fn zoom_frames_once(
    model: &ModelParams,
    original_frames: &FrameSequence,
    current_frames: &FrameSequence,
    histories: &[ZoomHistory],
    ratio: f64,
    zoom: &ZoomParams,
) -> Result<(FrameSequence, Vec<ZoomHistory>, f64)> {
    if original_frames.len() != current_frames.len() || histories.len() != current_frames.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} originals / {} current / {} histories in one sequence",
            original_frames.len(),
            current_frames.len(),
            histories.len()
        )));
    }
    let g = model.config.grid_side();
    let side = model.config.input_side;
    let priors = motion_priors(current_frames, (g, g))?;
    let out = forward_sequence(model, current_frames, &priors)?;

    let mut candidates = Vec::with_capacity(current_frames.len());
    for (t, frame) in current_frames.iter().enumerate() {
        let peaks = find_peaks(&out.attention[t], (g, g), zoom.top_k);
        candidates.push(make_candidates(
            &peaks,
            &out.attention[t],
            (g, g),
            ratio,
            (frame.width, frame.height),
            t,
        )?);
    }
    let tube = best_tube(&candidates, zoom.lambda)?;
    let boxes: Vec<BBox> = if zoom.per_frame {
        tube.boxes.clone()
    } else {
        let avg = crate::imaging::box_average(&tube.boxes)?;
        vec![avg; tube.boxes.len()]
    };

    let mut frames = Vec::with_capacity(boxes.len());
    let mut next_hist = Vec::with_capacity(boxes.len());
    for (t, bbox) in boxes.iter().enumerate() {
        let single = vec![original_frames[t].clone()];
        let (mut zoomed, hist) = zoom_with_box(&single, bbox, &histories[t], side)?;
        let mut frame = zoomed.pop().expect("one frame in, one frame out");
        frame.snap_to_u8_grid();
        frames.push(frame);
        next_hist.push(hist);
    }
    Ok((frames, next_hist, tube.objective))
}

/// `zoom_frames_once` plus bookkeeping for labeled data: ground-truth boxes
/// are mapped into the new crops and snapped to manifest precision.
fn zoom_step_sequence(
    model: &ModelParams,
    original: &LabeledSequence,
    current_frames: &FrameSequence,
    histories: &[ZoomHistory],
    ratio: f64,
    zoom: &ZoomParams,
) -> Result<(LabeledSequence, Vec<ZoomHistory>, f64)> {
    let (frames, next_hist, objective) =
        zoom_frames_once(model, &original.frames, current_frames, histories, ratio, zoom)?;
    let gt_boxes: Result<Vec<BBox>> = original
        .gt_boxes
        .iter()
        .zip(&next_hist)
        .map(|(gt, hist)| Ok(map_box_into(gt, &hist.bbox, hist.content)?.snapped_milli()))
        .collect();
    let seq = LabeledSequence {
        id: original.id.clone(),
        label: original.label.clone(),
        frames,
        gt_boxes: gt_boxes?,
        seed: original.seed,
    };
    Ok((seq, next_hist, objective))
}

/// Zooms a whole dataset one step. `originals` supply the crop sources and
/// ground truth; `current`/`histories` are the inputs the model was trained
/// on and where they sit in the originals. Sequences are processed in
/// parallel but assembled in input order.
pub fn zoom_dataset(
    model: &ModelParams,
    originals: &[LabeledSequence],
    current: &[LabeledSequence],
    histories: &[Vec<ZoomHistory>],
    ratio: f64,
    zoom: &ZoomParams,
) -> Result<ZoomedSet> {
    zoom.validate()?;
    if originals.len() != current.len() || histories.len() != current.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} originals / {} current / {} histories",
            originals.len(),
            current.len(),
            histories.len()
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("zoom ratio {ratio} outside (0,1)")));
    }
    let parts: Result<Vec<_>> = originals
        .par_iter()
        .zip(current)
        .zip(histories)
        .map(|((orig, cur), hist)| {
            zoom_step_sequence(model, orig, &cur.frames, hist, ratio, zoom)
        })
        .collect();
    let mut data = Vec::with_capacity(current.len());
    let mut hists = Vec::with_capacity(current.len());
    let mut objectives = Vec::with_capacity(current.len());
    for (seq, h, obj) in parts? {
        data.push(seq);
        hists.push(h);
        objectives.push(obj);
    }
    Ok(ZoomedSet { data, histories: hists, objectives })
}

/// Content hash of a dataset: ids, labels, seeds, frame pixels on the u8
/// grid, and box corners on the milli grid. Two datasets that hash equal
/// render and train identically.
pub fn dataset_fingerprint(data: &[LabeledSequence]) -> String {
    let mut hasher = Sha256::new();
    for seq in data {
        hasher.update(seq.id.as_bytes());
        hasher.update([0xff]);
        hasher.update(seq.label.as_bytes());
        hasher.update([0xff]);
        hasher.update(seq.seed.to_le_bytes());
        hasher.update((seq.frames.len() as u64).to_le_bytes());
        for frame in &seq.frames {
            hasher.update((frame.width as u64).to_le_bytes());
            hasher.update((frame.height as u64).to_le_bytes());
            let bytes: Vec<u8> =
                frame.data.iter().map(|v| (v * 255.0).round() as u8).collect();
            hasher.update(&bytes);
        }
        hasher.update((seq.gt_boxes.len() as u64).to_le_bytes());
        for b in &seq.gt_boxes {
            for v in [b.x_min, b.y_min, b.x_max, b.y_max] {
                hasher.update(((v * 1000.0).round() as i64).to_le_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::tests::tiny_setup;
    use crate::pipeline::train_model;

    #[test]
    fn zoomed_frames_match_model_input_side() {
        let (train, dev, config) = tiny_setup();
        let out = train_model(&train, &dev, &config).unwrap();
        let hist = full_histories(&train);
        let zoomed =
            zoom_dataset(&out.params, &train, &train, &hist, 0.8, &ZoomParams::default()).unwrap();
        assert_eq!(zoomed.data.len(), train.len());
        for (seq, orig) in zoomed.data.iter().zip(&train) {
            assert_eq!(seq.label, orig.label);
            for f in &seq.frames {
                assert_eq!((f.width, f.height), (20, 20));
            }
            assert_eq!(seq.frames.len(), orig.frames.len());
        }
    }

    #[test]
    fn averaged_mode_uses_one_box_per_sequence() {
        let (train, dev, config) = tiny_setup();
        let out = train_model(&train, &dev, &config).unwrap();
        let hist = full_histories(&train);
        let zoomed =
            zoom_dataset(&out.params, &train, &train, &hist, 0.8, &ZoomParams::default()).unwrap();
        for hists in &zoomed.histories {
            let first = hists[0].bbox;
            assert!(hists.iter().all(|h| h.bbox == first));
        }
    }

    #[test]
    fn per_frame_mode_can_move_the_crop() {
        let (train, dev, config) = tiny_setup();
        let out = train_model(&train, &dev, &config).unwrap();
        let hist = full_histories(&train);
        let zoom = ZoomParams { per_frame: true, ..ZoomParams::default() };
        let zoomed = zoom_dataset(&out.params, &train, &train, &hist, 0.8, &zoom).unwrap();
        // At least one multi-frame sequence should have frame-varying boxes;
        // identical boxes everywhere would mean the flag did nothing.
        let varied = zoomed
            .histories
            .iter()
            .any(|hs| hs.len() > 1 && hs.iter().any(|h| h.bbox != hs[0].bbox));
        assert!(varied);
    }

    #[test]
    fn zoom_shrinks_the_displayed_region() {
        let (train, dev, config) = tiny_setup();
        let out = train_model(&train, &dev, &config).unwrap();
        let hist = full_histories(&train);
        let zoomed =
            zoom_dataset(&out.params, &train, &train, &hist, 0.8, &ZoomParams::default()).unwrap();
        for hists in &zoomed.histories {
            for h in hists {
                assert!(h.bbox.width() <= 0.8 * 20.0 + 1e-9);
                assert!(h.bbox.height() <= 0.8 * 20.0 + 1e-9);
            }
        }
    }

    #[test]
    fn mapped_gt_boxes_round_trip_through_manifest_precision() {
        let (train, dev, config) = tiny_setup();
        let out = train_model(&train, &dev, &config).unwrap();
        let hist = full_histories(&train);
        let zoomed =
            zoom_dataset(&out.params, &train, &train, &hist, 0.8, &ZoomParams::default()).unwrap();
        for seq in &zoomed.data {
            for b in &seq.gt_boxes {
                for v in [b.x_min, b.y_min, b.x_max, b.y_max] {
                    let reparsed: f64 = format!("{v:.3}").parse().unwrap();
                    assert_eq!(reparsed, v);
                }
            }
        }
    }

    #[test]
    fn fingerprint_separates_datasets_and_matches_itself() {
        let (train, dev, _) = tiny_setup();
        assert_eq!(dataset_fingerprint(&train), dataset_fingerprint(&train));
        assert_ne!(dataset_fingerprint(&train), dataset_fingerprint(&dev));
        let mut tweaked = train.clone();
        tweaked[0].frames[0].data[0] = 1.0 - tweaked[0].frames[0].data[0];
        assert_ne!(dataset_fingerprint(&train), dataset_fingerprint(&tweaked));
    }

    #[test]
    fn zoom_is_deterministic() {
        let (train, dev, config) = tiny_setup();
        let out = train_model(&train, &dev, &config).unwrap();
        let hist = full_histories(&train);
        let a = zoom_dataset(&out.params, &train, &train, &hist, 0.8, &ZoomParams::default())
            .unwrap();
        let b = zoom_dataset(&out.params, &train, &train, &hist, 0.8, &ZoomParams::default())
            .unwrap();
        assert_eq!(dataset_fingerprint(&a.data), dataset_fingerprint(&b.data));
        assert_eq!(a.histories, b.histories);
    }
}
