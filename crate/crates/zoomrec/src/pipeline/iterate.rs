//! The outer loop: train, zoom, retrain. Test-time inference replays the
//! zooms with the per-iteration models, and a beam search over ratio
//! prefixes picks the zoom schedule.

use std::borrow::Cow;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read_json, write_json};
use crate::harness::metrics::{detection_eval, Metrics};
use crate::imaging::{motion_priors, FrameSequence};
use crate::lm_decode::{beam_decode, CharNGramLM};
use crate::model::forward::forward_sequence;
use crate::model::{checkpoint_bytes, load_checkpoint, save_checkpoint, ModelParams};
use crate::pipeline::zoom::{
    dataset_fingerprint, full_histories, zoom_dataset, zoom_frames_once, ZoomParams, ZoomedSet,
};
use crate::pipeline::{train_model, TrainConfig};
use crate::synthdata::LabeledSequence;
use crate::tube::{tube_dump, ZoomHistory, ZoomSchedule};

/// One trained zoom level. `ratio` is the zoom applied after this model to
/// build the next level's inputs; the last record's ratio is carried from
/// the schedule but never applied. `fingerprint` hashes the inputs this
/// model trained on (empty when reloaded from disk, where inputs are not
/// kept).
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub params: ModelParams,
    pub ratio: f64,
    pub dev_accuracy: f64,
    pub fingerprint: String,
}

/// Every kept zoom level, in training order. Truncated to the best dev
/// accuracy when a later iteration failed to improve; the run directory
/// still records all trained iterations.
#[derive(Debug, Clone)]
pub struct IterationArtifacts {
    pub config: TrainConfig,
    pub iterations: Vec<IterationRecord>,
}

/// Iterations to keep: everything up to the first maximum of dev accuracy.
fn best_prefix_len(accuracies: &[f64]) -> usize {
    let mut best = 0;
    for (i, &a) in accuracies.iter().enumerate() {
        if a > accuracies[best] {
            best = i;
        }
    }
    best + 1
}

/// Sidecar stored with every cached zoomed dataset. The fingerprint guards
/// against torn or stale cache contents: on mismatch the zoom is recomputed.
#[derive(serde::Serialize, serde::Deserialize)]
struct CacheMeta {
    fingerprint: String,
    histories: Vec<Vec<ZoomHistory>>,
    objectives: Vec<f64>,
}

/// Cache key: everything the zoom output depends on. Model weights and
/// config travel via checkpoint bytes; the inputs via their fingerprint.
fn cache_key(model: &ModelParams, zoom: &ZoomParams, ratio: f64, input_fp: &str) -> String {
    let mut bytes = checkpoint_bytes(model);
    bytes.extend(zoom.lambda.to_le_bytes());
    bytes.extend((zoom.top_k as u64).to_le_bytes());
    bytes.push(zoom.per_frame as u8);
    bytes.extend(ratio.to_le_bytes());
    bytes.extend(input_fp.as_bytes());
    crate::fsutil::sha256_hex(&bytes)
}

fn try_load_cached(dir: &Path) -> Option<ZoomedSet> {
    let meta: CacheMeta = read_json(&dir.join("meta.json")).ok()?;
    let data = crate::synthdata::load_dataset(&dir.join("data")).ok()?;
    if dataset_fingerprint(&data) != meta.fingerprint {
        return None;
    }
    if meta.histories.len() != data.len() || meta.objectives.len() != data.len() {
        return None;
    }
    Some(ZoomedSet { data, histories: meta.histories, objectives: meta.objectives })
}

/// Zooms a dataset, reusing a cached copy when one with a matching key and
/// intact fingerprint exists. meta.json is written after the data files, so
/// a torn write reads as a cache miss.
fn cached_zoom(
    model: &ModelParams,
    originals: &[LabeledSequence],
    current: &[LabeledSequence],
    histories: &[Vec<ZoomHistory>],
    ratio: f64,
    zoom: &ZoomParams,
    cache_root: Option<&Path>,
) -> Result<ZoomedSet> {
    let Some(root) = cache_root else {
        return zoom_dataset(model, originals, current, histories, ratio, zoom);
    };
    let key = cache_key(model, zoom, ratio, &dataset_fingerprint(current));
    let dir = root.join(key);
    if let Some(cached) = try_load_cached(&dir) {
        return Ok(cached);
    }
    let set = zoom_dataset(model, originals, current, histories, ratio, zoom)?;
    crate::synthdata::save_dataset(&dir.join("data"), &set.data)?;
    let meta = CacheMeta {
        fingerprint: dataset_fingerprint(&set.data),
        histories: set.histories.clone(),
        objectives: set.objectives.clone(),
    };
    write_json(&dir.join("meta.json"), &meta)?;
    Ok(set)
}

fn iter_dir(run_dir: &Path, s: usize) -> PathBuf {
    run_dir.join(format!("iter_{s}"))
}

fn write_tube_dumps(dir: &Path, set: &ZoomedSet) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(format!("create {}", dir.display())))?;
    for (i, seq) in set.data.iter().enumerate() {
        let dump = tube_dump(&set.tube_boxes(i), set.objectives[i]);
        atomic_write(&dir.join(format!("{}.txt", seq.id)), dump.as_bytes())?;
    }
    Ok(())
}

/// Pooled detection quality of the dev tubes against original ground truth,
/// all frames of all sequences weighted equally.
fn dev_detection(dev: &[LabeledSequence], set: &ZoomedSet) -> Result<(f64, f64)> {
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for (i, seq) in dev.iter().enumerate() {
        for (t, b) in seq.gt_boxes.iter().enumerate() {
            pred.push(set.histories[i][t].bbox);
            gt.push(Some(*b));
        }
    }
    let report = detection_eval(&pred, &gt)?;
    Ok((report.avg_iou, report.miss_rate))
}

/// Trains one model per schedule entry, zooming the datasets between
/// levels: train H_s on the current inputs, find tubes with its attention,
/// recrop everything from the originals at ratio R_s, and repeat. Stops
/// early when dev accuracy drops below the best seen, and returns the
/// iterations up to that best. A one-entry schedule reduces to train_model.
///
/// With a run directory, writes `config.json`, `schedule.json`, and per
/// iteration `iter_<s>/checkpoint.fsia`, `iter_<s>/metrics.json`, and
/// `iter_<s>/tubes/{train,dev}/<id>.txt`; zoomed datasets are cached under
/// `cache/` keyed by model and inputs, making reruns and restarts cheap.
pub fn iterative_train(
    train: &[LabeledSequence],
    dev: &[LabeledSequence],
    schedule: &ZoomSchedule,
    config: &TrainConfig,
    zoom: &ZoomParams,
    run_dir: Option<&Path>,
) -> Result<IterationArtifacts> {
    config.validate()?;
    zoom.validate()?;
    if schedule.is_empty() {
        return Err(Error::Config("empty zoom schedule".into()));
    }
    let cache_root = run_dir.map(|d| d.join("cache"));
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(Error::io(format!("create {}", dir.display())))?;
        write_json(&dir.join("config.json"), config)?;
        write_json(&dir.join("schedule.json"), schedule)?;
    }

    let s_total = schedule.len();
    let mut cur_train: Cow<[LabeledSequence]> = Cow::Borrowed(train);
    let mut cur_dev: Cow<[LabeledSequence]> = Cow::Borrowed(dev);
    let mut hist_train = full_histories(train);
    let mut hist_dev = full_histories(dev);
    let mut iterations: Vec<IterationRecord> = Vec::new();

    for s in 1..=s_total {
        let outcome = train_model(&cur_train, &cur_dev, config)?;
        let record = IterationRecord {
            params: outcome.params,
            ratio: schedule.ratios[s - 1],
            dev_accuracy: outcome.dev_accuracy,
            fingerprint: dataset_fingerprint(&cur_train),
        };
        if let Some(dir) = run_dir {
            let idir = iter_dir(dir, s);
            std::fs::create_dir_all(&idir)
                .map_err(Error::io(format!("create {}", idir.display())))?;
            save_checkpoint(&idir.join("checkpoint.fsia"), &record.params)?;
        }
        let dropped = iterations
            .iter()
            .any(|r| record.dev_accuracy < r.dev_accuracy);
        let mut metrics = Metrics {
            letter_accuracy: Some(record.dev_accuracy),
            ..Metrics::default()
        };

        if s < s_total && !dropped {
            let ratio = record.ratio;
            let zs_train = cached_zoom(
                &record.params,
                train,
                &cur_train,
                &hist_train,
                ratio,
                zoom,
                cache_root.as_deref(),
            )?;
            let zs_dev = cached_zoom(
                &record.params,
                dev,
                &cur_dev,
                &hist_dev,
                ratio,
                zoom,
                cache_root.as_deref(),
            )?;
            let (avg_iou, miss_rate) = dev_detection(dev, &zs_dev)?;
            metrics.avg_iou = Some(avg_iou);
            metrics.miss_rate = Some(miss_rate);
            if let Some(dir) = run_dir {
                let tubes = iter_dir(dir, s).join("tubes");
                write_tube_dumps(&tubes.join("train"), &zs_train)?;
                write_tube_dumps(&tubes.join("dev"), &zs_dev)?;
            }
            hist_train = zs_train.histories.clone();
            hist_dev = zs_dev.histories.clone();
            cur_train = Cow::Owned(zs_train.data);
            cur_dev = Cow::Owned(zs_dev.data);
        }
        if let Some(dir) = run_dir {
            write_json(&iter_dir(dir, s).join("metrics.json"), &metrics)?;
        }
        iterations.push(record);
        if dropped {
            break;
        }
    }

    let keep = best_prefix_len(
        &iterations.iter().map(|r| r.dev_accuracy).collect::<Vec<_>>(),
    );
    iterations.truncate(keep);
    Ok(IterationArtifacts { config: config.clone(), iterations })
}

/// Rebuilds artifacts from a run directory: checkpoints, schedule ratios,
/// and dev accuracies from each iteration's metrics. Applies the same
/// truncation to the best iteration that iterative_train returned with.
/// Input fingerprints are not persisted, so records come back with empty
/// ones.
pub fn load_artifacts(run_dir: &Path) -> Result<IterationArtifacts> {
    let config: TrainConfig = read_json(&run_dir.join("config.json"))?;
    let schedule: ZoomSchedule = read_json(&run_dir.join("schedule.json"))?;
    let mut iterations = Vec::new();
    for s in 1..=schedule.len() {
        let idir = iter_dir(run_dir, s);
        if !idir.is_dir() {
            break;
        }
        let params = load_checkpoint(&idir.join("checkpoint.fsia"))?;
        let metrics: Metrics = read_json(&idir.join("metrics.json"))?;
        let dev_accuracy = metrics.letter_accuracy.ok_or_else(|| {
            Error::CorruptDataset(format!("{} has no letter accuracy", idir.display()))
        })?;
        iterations.push(IterationRecord {
            params,
            ratio: schedule.ratios[s - 1],
            dev_accuracy,
            fingerprint: String::new(),
        });
    }
    if iterations.is_empty() {
        return Err(Error::CorruptDataset(format!(
            "{} contains no completed iterations",
            run_dir.display()
        )));
    }
    let keep = best_prefix_len(
        &iterations.iter().map(|r| r.dev_accuracy).collect::<Vec<_>>(),
    );
    iterations.truncate(keep);
    Ok(IterationArtifacts { config, iterations })
}

/// Test-time decoding: models 1..S-1 only steer the zoom, the last model
/// reads the final crops. Without a language model, decoding falls back to
/// a uniform unigram with zero weight, which is pure CTC beam search.
pub fn iterative_infer(
    artifacts: &IterationArtifacts,
    frames: &FrameSequence,
    zoom: &ZoomParams,
    lm: Option<&CharNGramLM>,
    beam_width: usize,
    lm_weight: f64,
    insertion_bias: f64,
) -> Result<String> {
    zoom.validate()?;
    let s_total = artifacts.iterations.len();
    if s_total == 0 {
        return Err(Error::Config("artifacts contain no iterations".into()));
    }
    let mut cur: Cow<FrameSequence> = Cow::Borrowed(frames);
    let mut hist: Vec<ZoomHistory> =
        frames.iter().map(|f| ZoomHistory::full(f.width, f.height)).collect();
    for record in &artifacts.iterations[..s_total - 1] {
        let (next, next_hist, _) =
            zoom_frames_once(&record.params, frames, &cur, &hist, record.ratio, zoom)?;
        cur = Cow::Owned(next);
        hist = next_hist;
    }
    let last = &artifacts.iterations[s_total - 1].params;
    let g = last.config.grid_side();
    let priors = motion_priors(&cur, (g, g))?;
    let out = forward_sequence(last, &cur, &priors)?;
    match lm {
        Some(lm) => beam_decode(&out.posteriors, lm, beam_width, lm_weight, insertion_bias),
        None => {
            let uniform = CharNGramLM::uniform(artifacts.config.alphabet.clone(), 1)?;
            beam_decode(&out.posteriors, &uniform, beam_width, 0.0, insertion_bias)
        }
    }
}

/// Outcome of the schedule search. `applied` are the zooms the winning
/// configuration actually performs; `schedule` is `applied` extended by one
/// trailing ratio so it can be fed to iterative_train, whose last entry is
/// recorded but never applied. An empty `applied` means no zoom beat the
/// whole-frame baseline.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub schedule: ZoomSchedule,
    pub applied: Vec<f64>,
    pub dev_accuracy: f64,
    pub explored: usize,
}

struct SearchNode {
    applied: Vec<f64>,
    dev_accuracy: f64,
    params: ModelParams,
    train_data: Vec<LabeledSequence>,
    dev_data: Vec<LabeledSequence>,
    hist_train: Vec<Vec<ZoomHistory>>,
    hist_dev: Vec<Vec<ZoomHistory>>,
}

/// Level-wise beam search over zoom-ratio prefixes, scored by dev accuracy
/// of the model trained after applying the prefix. Each level extends every
/// kept prefix by every candidate ratio and keeps the best `beam`. Models
/// are never warm-started: every level trains from the same seeded init, so
/// a prefix's score does not depend on search order. The whole-frame
/// baseline (empty prefix) competes too; it is trained once and shared by
/// all prefixes as their first level.
pub fn search_zoom_schedule(
    train: &[LabeledSequence],
    dev: &[LabeledSequence],
    ratio_set: &[f64],
    beam: usize,
    max_levels: usize,
    config: &TrainConfig,
    zoom: &ZoomParams,
) -> Result<SearchOutcome> {
    config.validate()?;
    zoom.validate()?;
    if ratio_set.is_empty() || ratio_set.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
        return Err(Error::Config(format!("ratio set {ratio_set:?} must lie in (0,1)")));
    }
    if beam == 0 {
        return Err(Error::Config("beam size must be >= 1".into()));
    }

    let base = train_model(train, dev, config)?;
    let mut best_applied: Vec<f64> = Vec::new();
    let mut best_accuracy = base.dev_accuracy;
    let mut explored = 0usize;
    let mut frontier = vec![SearchNode {
        applied: Vec::new(),
        dev_accuracy: base.dev_accuracy,
        params: base.params,
        train_data: train.to_vec(),
        dev_data: dev.to_vec(),
        hist_train: full_histories(train),
        hist_dev: full_histories(dev),
    }];

    for _ in 0..max_levels {
        // Kept children stay sorted by accuracy, ties favoring generation
        // order; evicting the tail as we go caps live datasets at beam+1.
        let mut kept: Vec<SearchNode> = Vec::with_capacity(beam + 1);
        for node in &frontier {
            for &ratio in ratio_set {
                let zs_train = zoom_dataset(
                    &node.params,
                    train,
                    &node.train_data,
                    &node.hist_train,
                    ratio,
                    zoom,
                )?;
                let zs_dev =
                    zoom_dataset(&node.params, dev, &node.dev_data, &node.hist_dev, ratio, zoom)?;
                let out = train_model(&zs_train.data, &zs_dev.data, config)?;
                explored += 1;
                let mut applied = node.applied.clone();
                applied.push(ratio);
                if out.dev_accuracy > best_accuracy {
                    best_accuracy = out.dev_accuracy;
                    best_applied = applied.clone();
                }
                let child = SearchNode {
                    applied,
                    dev_accuracy: out.dev_accuracy,
                    params: out.params,
                    train_data: zs_train.data,
                    dev_data: zs_dev.data,
                    hist_train: zs_train.histories,
                    hist_dev: zs_dev.histories,
                };
                let at = kept
                    .iter()
                    .position(|k| child.dev_accuracy > k.dev_accuracy)
                    .unwrap_or(kept.len());
                kept.insert(at, child);
                kept.truncate(beam);
            }
        }
        if kept.is_empty() {
            break;
        }
        frontier = kept;
    }

    let mut ratios = best_applied.clone();
    ratios.push(*best_applied.last().unwrap_or(&ratio_set[0]));
    Ok(SearchOutcome {
        schedule: ZoomSchedule::new(ratios)?,
        applied: best_applied,
        dev_accuracy: best_accuracy,
        explored,
    })
}
