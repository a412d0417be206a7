//! Letter accuracy from minimum-edit alignments, and detection quality
//! against ground-truth boxes.

use crate::error::{Error, Result};
use crate::imaging::{iou, BBox};

/// Counts from a minimum-cost alignment of hypothesis against reference.
/// Different minimum alignments may split S/D/I differently, but the total
/// S+D+I is the edit distance and therefore unique.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditAlignment {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Reference length N.
    pub ref_len: usize,
}

impl EditAlignment {
    pub fn total_edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// 1 − (S+D+I)/N. Negative when the hypothesis is worse than writing
    /// nothing at all.
    pub fn accuracy(&self) -> f64 {
        1.0 - self.total_edits() as f64 / self.ref_len as f64
    }
}

/// Unit-cost minimum-edit alignment. Ties prefer substitution over a
/// deletion+insertion pair, then deletion over insertion.
pub fn edit_alignment(hyp: &str, reference: &str) -> Result<EditAlignment> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let h: Vec<char> = hyp.chars().collect();
    let r: Vec<char> = reference.chars().collect();
    let (n, m) = (r.len(), h.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for i in 0..=n {
        d[i][0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            let del = d[i - 1][j] + 1;
            let ins = d[i][j - 1] + 1;
            d[i][j] = sub.min(del).min(ins);
        }
    }
    let (mut i, mut j) = (n, m);
    let mut align = EditAlignment { substitutions: 0, deletions: 0, insertions: 0, ref_len: n };
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let matched = r[i - 1] == h[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(!matched) {
                if !matched {
                    align.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            align.deletions += 1;
            i -= 1;
        } else {
            align.insertions += 1;
            j -= 1;
        }
    }
    Ok(align)
}

/// 1 − (S+D+I)/N for one hypothesis/reference pair.
pub fn letter_accuracy(hyp: &str, reference: &str) -> Result<f64> {
    Ok(edit_alignment(hyp, reference)?.accuracy())
}

/// Corpus-level accuracy: edits and reference lengths summed over all pairs
/// before the division, so long references weigh more.
pub fn corpus_letter_accuracy<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<f64> {
    let mut edits = 0usize;
    let mut ref_len = 0usize;
    let mut any = false;
    for (hyp, reference) in pairs {
        let a = edit_alignment(hyp, reference)?;
        edits += a.total_edits();
        ref_len += a.ref_len;
        any = true;
    }
    if !any {
        return Err(Error::EmptyCorpus);
    }
    Ok(1.0 - edits as f64 / ref_len as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectionReport {
    pub avg_iou: f64,
    /// Mean of 1 − intersection/gt-area: how much of the target the
    /// predicted box fails to cover.
    pub miss_rate: f64,
}

/// Compares predicted boxes against ground truth frame by frame. Frames
/// without ground truth are skipped; having none at all is an error.
pub fn detection_eval(pred: &[BBox], gt: &[Option<BBox>]) -> Result<DetectionReport> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let mut iou_sum = 0.0;
    let mut miss_sum = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        let Some(g) = g else { continue };
        iou_sum += iou(p, g);
        miss_sum += 1.0 - p.intersection(g) / g.area();
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoEvaluableFrames);
    }
    Ok(DetectionReport { avg_iou: iou_sum / n as f64, miss_rate: miss_sum / n as f64 })
}

/// The metrics.json schema every evaluation writes; absent metrics are
/// serialized as null so the field set is stable.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub letter_accuracy: Option<f64>,
    pub avg_iou: Option<f64>,
    pub miss_rate: Option<f64>,
    pub perplexity: Option<f64>,
}
