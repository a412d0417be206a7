//! Command-line front end. Every subcommand is a thin wrapper over library
//! calls; files are written atomically and all randomness flows from
//! `--seed` flags, so invocations are reproducible.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ctc::Alphabet;
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, write_json};
use crate::harness::bench::zoom_vs_enlarge;
use crate::harness::metrics::{corpus_letter_accuracy, detection_eval, Metrics};
use crate::harness::viz::{attention_overlay, burn_box_edges};
use crate::imaging::{box_average, motion_priors, write_pgm, BBox, Frame};
use crate::lm_decode::{load_lm, perplexity, save_lm, train_ngram, CharNGramLM};
use crate::model::gradcheck::{finite_diff_check, finite_diff_check_corrupted};
use crate::model::{init_params, ModelConfig};
use crate::model::forward::forward_sequence;
use crate::pipeline::zoom::zoom_frames_once;
use crate::pipeline::{
    iterative_infer, iterative_train, load_artifacts, search_zoom_schedule, TrainConfig,
    ZoomParams,
};
use crate::synthdata::{load_dataset, random_dataset, save_dataset, LabeledSequence, SynthSpec};
use crate::tube::{ZoomHistory, ZoomSchedule};

#[derive(Parser)]
#[command(
    name = "zoomrec",
    version,
    about = "Letter-sequence recognition with iterative attention zooming"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic moving-glyph dataset to a directory.
    Synth(SynthCmd),
    /// Train a single whole-frame model.
    Train(TrainCmd),
    /// Train through a zoom schedule (one model per zoom level).
    ZoomTrain(ZoomTrainCmd),
    /// Beam-search the zoom-ratio schedule on dev accuracy.
    ScheduleSearch(ScheduleSearchCmd),
    /// Decode a dataset with a trained run, optionally LM-fused.
    Decode(DecodeCmd),
    /// Score a hypothesis dump against its references.
    Eval(EvalCmd),
    /// Score an iteration's tubes against ground-truth boxes.
    DetectEval(DetectEvalCmd),
    /// Train a character n-gram language model.
    LmTrain(LmTrainCmd),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckCmd),
    /// Compare frame-buffer memory of zooming vs enlarging.
    BenchZoomVsEnlarge(BenchCmd),
    /// Write attention overlays with tube boxes burned in.
    Viz(VizCmd),
}

/// Parses argv, runs the chosen subcommand, and returns the process exit
/// code: 0 on success, 1 with a one-line diagnostic on a runtime error, 2
/// on usage errors (clap's convention).
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth(c) => run_synth(c),
        Cmd::Train(c) => run_train(c),
        Cmd::ZoomTrain(c) => run_zoom_train(c),
        Cmd::ScheduleSearch(c) => run_schedule_search(c),
        Cmd::Decode(c) => run_decode(c),
        Cmd::Eval(c) => run_eval(c),
        Cmd::DetectEval(c) => run_detect_eval(c),
        Cmd::LmTrain(c) => run_lm_train(c),
        Cmd::Gradcheck(c) => run_gradcheck(c),
        Cmd::BenchZoomVsEnlarge(c) => run_bench(c),
        Cmd::Viz(c) => run_viz(c),
    }
}

// ---- shared flag groups ----------------------------------------------

#[derive(Args)]
struct TrainFlags {
    /// Alphabet letters; derived from dataset labels when omitted.
    #[arg(long)]
    alphabet: Option<String>,
    /// Conv stack output channels, comma separated.
    #[arg(long, default_value = "8,16,32")]
    conv_channels: String,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Motion-prior exponent; 0 disables the prior.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Channel dropout rate between conv layers; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// epochs:lr segments, e.g. 20:0.01,10:0.001.
    #[arg(long, default_value = "20:0.01,10:0.001")]
    lr_schedule: String,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct ZoomFlags {
    /// IoU weight in the tube linking score.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Attention peaks kept per frame.
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    /// Crop each frame at its own tube box instead of the average.
    #[arg(long)]
    per_frame_zoom: bool,
}

impl ZoomFlags {
    fn params(&self) -> ZoomParams {
        ZoomParams { lambda: self.lambda, top_k: self.top_k, per_frame: self.per_frame_zoom }
    }
}

#[derive(Args)]
struct DecodeFlags {
    #[arg(long, default_value_t = 16)]
    beam_width: usize,
    /// Language-model fusion weight; only meaningful with --lm.
    #[arg(long, default_value_t = 0.4)]
    lm_weight: f64,
    /// Per-letter insertion bonus during beam search.
    #[arg(long, default_value_t = 0.0)]
    insertion_bias: f64,
    /// Language model file from lm-train; plain CTC beam search without it.
    #[arg(long)]
    lm: Option<PathBuf>,
}

// ---- parsing helpers --------------------------------------------------

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad {what} entry {p:?}")))
        })
        .collect()
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad {what} entry {p:?}")))
        })
        .collect()
}

fn parse_lr_schedule(s: &str) -> Result<Vec<(usize, f64)>> {
    s.split(',')
        .map(|seg| {
            let (e, lr) = seg
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("schedule segment {seg:?} wants epochs:lr")))?;
            Ok((
                e.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad epoch count {e:?}")))?,
                lr.parse::<f64>().map_err(|_| Error::Config(format!("bad learning rate {lr:?}")))?,
            ))
        })
        .collect()
}

fn derive_alphabet<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<Alphabet> {
    let set: BTreeSet<char> = labels.into_iter().flat_map(|l| l.chars()).collect();
    let letters: String = set.into_iter().collect();
    Alphabet::new(&letters)
}

fn build_train_config(
    flags: &TrainFlags,
    train: &[LabeledSequence],
    dev: &[LabeledSequence],
) -> Result<TrainConfig> {
    let first = train
        .first()
        .and_then(|s| s.frames.first())
        .ok_or_else(|| Error::Config("training set has no frames".into()))?;
    if first.width != first.height {
        return Err(Error::Config(format!(
            "frames are {}x{}, the model wants square inputs",
            first.width, first.height
        )));
    }
    let alphabet = match &flags.alphabet {
        Some(s) => Alphabet::new(s)?,
        None => derive_alphabet(
            train.iter().map(|s| s.label.as_str()).chain(dev.iter().map(|s| s.label.as_str())),
        )?,
    };
    let model = ModelConfig {
        input_side: first.width,
        conv_channels: parse_usize_list(&flags.conv_channels, "conv channels")?,
        kernel: 3,
        stride: 2,
        pad: 1,
        hidden: flags.hidden,
        alphabet_len: alphabet.len(),
        alpha: flags.alpha,
        dropout: flags.dropout,
    };
    Ok(TrainConfig {
        model,
        alphabet,
        lr_schedule: parse_lr_schedule(&flags.lr_schedule)?,
        batch_size: flags.batch_size,
        seed: flags.seed,
    })
}

fn print_metrics(metrics: &Metrics, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            write_json(path, metrics)?;
            println!("wrote {}", path.display());
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(metrics)
                .map_err(|e| Error::CorruptDataset(format!("serializing metrics: {e}")))?
        ),
    }
    Ok(())
}

// ---- synth -------------------------------------------------------------

#[derive(Args)]
struct SynthCmd {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 112)]
    frame_side: usize,
    #[arg(long, default_value_t = 0.1)]
    glyph_fraction: f64,
    /// Alphabet size, letters a..=h style.
    #[arg(long, default_value_t = 8)]
    alphabet_size: usize,
    #[arg(long, default_value_t = 1)]
    label_len_min: usize,
    #[arg(long, default_value_t = 3)]
    label_len_max: usize,
    #[arg(long, default_value_t = 2)]
    frames_per_letter_min: usize,
    #[arg(long, default_value_t = 4)]
    frames_per_letter_max: usize,
    #[arg(long, default_value_t = 6)]
    distractors: usize,
    #[arg(long, default_value_t = 1.5)]
    jitter: f64,
    /// Box-blur radius; omit for sharp frames.
    #[arg(long)]
    blur: Option<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn run_synth(c: SynthCmd) -> Result<()> {
    let spec = SynthSpec {
        alphabet: Alphabet::first_n(c.alphabet_size)?,
        frame_side: c.frame_side,
        glyph_fraction: c.glyph_fraction,
        frames_per_letter: (c.frames_per_letter_min, c.frames_per_letter_max),
        distractor_count: c.distractors,
        jitter: c.jitter,
        blur: c.blur,
        seed: c.seed,
    };
    let data = random_dataset(&spec, c.count, (c.label_len_min, c.label_len_max))?;
    save_dataset(&c.out, &data)?;
    let frames: usize = data.iter().map(|s| s.frames.len()).sum();
    println!("wrote {} sequences ({frames} frames) to {}", data.len(), c.out.display());
    Ok(())
}

// ---- train / zoom-train / schedule-search -------------------------------

#[derive(Args)]
struct TrainCmd {
    /// Training dataset directory (from synth).
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset directory for early stopping.
    #[arg(long)]
    dev: PathBuf,
    /// Run directory to write checkpoint and metrics into.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
}

/// Placeholder ratio for single-level schedules; recorded but never applied.
const UNUSED_RATIO: f64 = 0.9;

fn run_train(c: TrainCmd) -> Result<()> {
    let train = load_dataset(&c.data)?;
    let dev = load_dataset(&c.dev)?;
    let config = build_train_config(&c.train, &train, &dev)?;
    let schedule = ZoomSchedule::new(vec![UNUSED_RATIO])?;
    let arts = iterative_train(
        &train,
        &dev,
        &schedule,
        &config,
        &ZoomParams::default(),
        Some(&c.out),
    )?;
    let best = &arts.iterations[0];
    println!("dev letter accuracy {:.4}", best.dev_accuracy);
    println!("checkpoint at {}", c.out.join("iter_1/checkpoint.fsia").display());
    Ok(())
}

#[derive(Args)]
struct ZoomTrainCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Zoom ratios per level, comma separated; the last is never applied.
    #[arg(long, conflicts_with = "schedule_file")]
    zoom_ratios: Option<String>,
    /// schedule.json from schedule-search, instead of --zoom-ratios.
    #[arg(long)]
    schedule_file: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    zoom: ZoomFlags,
}

fn run_zoom_train(c: ZoomTrainCmd) -> Result<()> {
    let schedule = match (&c.zoom_ratios, &c.schedule_file) {
        (Some(list), _) => ZoomSchedule::new(parse_f64_list(list, "zoom ratio")?)?,
        (None, Some(path)) => {
            // Reconstruct through the constructor so hand-edited files still
            // get ratio validation.
            let raw: ZoomSchedule = crate::fsutil::read_json(path)?;
            ZoomSchedule::new(raw.ratios)?
        }
        (None, None) => {
            return Err(Error::Config("pass --zoom-ratios or --schedule-file".into()))
        }
    };
    let train = load_dataset(&c.data)?;
    let dev = load_dataset(&c.dev)?;
    let config = build_train_config(&c.train, &train, &dev)?;
    let arts = iterative_train(&train, &dev, &schedule, &config, &c.zoom.params(), Some(&c.out))?;
    for (s, rec) in arts.iterations.iter().enumerate() {
        println!("iteration {} dev letter accuracy {:.4}", s + 1, rec.dev_accuracy);
    }
    println!("kept {} of {} levels in {}", arts.iterations.len(), schedule.len(), c.out.display());
    Ok(())
}

#[derive(Args)]
struct ScheduleSearchCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Candidate ratio set, comma separated.
    #[arg(long, default_value = "0.9,0.81,0.729,0.6561")]
    zoom_ratios: String,
    #[arg(long, default_value_t = 2)]
    beam_width: usize,
    /// Maximum zoom levels to explore.
    #[arg(long, default_value_t = 2)]
    iters: usize,
    /// Where to write the winning schedule as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    zoom: ZoomFlags,
}

fn run_schedule_search(c: ScheduleSearchCmd) -> Result<()> {
    let train = load_dataset(&c.data)?;
    let dev = load_dataset(&c.dev)?;
    let config = build_train_config(&c.train, &train, &dev)?;
    let ratios = parse_f64_list(&c.zoom_ratios, "zoom ratio")?;
    let outcome = search_zoom_schedule(
        &train,
        &dev,
        &ratios,
        c.beam_width,
        c.iters,
        &config,
        &c.zoom.params(),
    )?;
    println!(
        "best applied ratios {:?} dev letter accuracy {:.4} ({} prefixes trained)",
        outcome.applied, outcome.dev_accuracy, outcome.explored
    );
    if let Some(path) = &c.out {
        write_json(path, &outcome.schedule)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

// ---- decode / eval ------------------------------------------------------

#[derive(Args)]
struct DecodeCmd {
    /// Run directory from train or zoom-train.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Hypothesis dump path (id<TAB>hyp<TAB>ref); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeFlags,
    #[command(flatten)]
    zoom: ZoomFlags,
}

fn run_decode(c: DecodeCmd) -> Result<()> {
    let arts = load_artifacts(&c.run)?;
    let data = load_dataset(&c.data)?;
    let lm: Option<CharNGramLM> = match &c.decode.lm {
        Some(path) => Some(load_lm(path)?),
        None => None,
    };
    let zoom = c.zoom.params();
    let rows: Result<Vec<String>> = data
        .par_iter()
        .map(|seq| {
            let hyp = iterative_infer(
                &arts,
                &seq.frames,
                &zoom,
                lm.as_ref(),
                c.decode.beam_width,
                c.decode.lm_weight,
                c.decode.insertion_bias,
            )?;
            Ok(format!("{}\t{}\t{}", seq.id, hyp, seq.label))
        })
        .collect();
    let mut dump = rows?.join("\n");
    dump.push('\n');
    match &c.out {
        Some(path) => {
            atomic_write(path, dump.as_bytes())?;
            println!("wrote {}", path.display());
        }
        None => print!("{dump}"),
    }
    Ok(())
}

#[derive(Args)]
struct EvalCmd {
    /// Hypothesis dump from decode (id<TAB>hyp<TAB>ref).
    #[arg(long)]
    hyp: PathBuf,
    /// metrics.json path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_eval(c: EvalCmd) -> Result<()> {
    let text = std::fs::read_to_string(&c.hyp).map_err(Error::io(format!(
        "read {}",
        c.hyp.display()
    )))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(_id), Some(hyp), Some(reference)) =
            (parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::MalformedManifest {
                path: c.hyp.clone(),
                line: n + 1,
                msg: "want id<TAB>hyp<TAB>ref".into(),
            });
        };
        pairs.push((hyp.to_string(), reference.to_string()));
    }
    let accuracy = corpus_letter_accuracy(pairs.iter().map(|(h, r)| (h.as_str(), r.as_str())))?;
    let metrics = Metrics { letter_accuracy: Some(accuracy), ..Metrics::default() };
    print_metrics(&metrics, c.out.as_deref())
}

#[derive(Args)]
struct DetectEvalCmd {
    /// Run directory holding iter_<s>/tubes.
    #[arg(long)]
    run: PathBuf,
    /// Iteration whose tubes to score.
    #[arg(long, default_value_t = 1)]
    iter: usize,
    /// Which split's tubes: train or dev.
    #[arg(long, default_value = "dev")]
    split: String,
    /// Dataset the tubes were computed from (supplies ground truth).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_tube_file(path: &Path) -> Result<Vec<BBox>> {
    let text = std::fs::read_to_string(path)
        .map_err(Error::io(format!("read {}", path.display())))?;
    let mut boxes = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::MalformedManifest {
                path: path.to_path_buf(),
                line: n + 1,
                msg: format!("want 6 fields, got {}", fields.len()),
            });
        }
        let nums: std::result::Result<Vec<f64>, _> =
            fields[1..5].iter().map(|f| f.parse::<f64>()).collect();
        let nums = nums.map_err(|e| Error::MalformedManifest {
            path: path.to_path_buf(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        boxes.push(BBox::new(nums[0], nums[1], nums[2], nums[3])?);
    }
    Ok(boxes)
}

fn run_detect_eval(c: DetectEvalCmd) -> Result<()> {
    if c.split != "train" && c.split != "dev" {
        return Err(Error::Config(format!("split {:?} must be train or dev", c.split)));
    }
    let data = load_dataset(&c.data)?;
    let tubes_dir = c.run.join(format!("iter_{}/tubes/{}", c.iter, c.split));
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for seq in &data {
        let path = tubes_dir.join(format!("{}.txt", seq.id));
        if !path.is_file() {
            return Err(Error::CorruptDataset(format!(
                "no tube dump for sequence {} under {}",
                seq.id,
                tubes_dir.display()
            )));
        }
        let boxes = parse_tube_file(&path)?;
        if boxes.len() != seq.gt_boxes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tube boxes for {} ground-truth frames in {}",
                boxes.len(),
                seq.gt_boxes.len(),
                seq.id
            )));
        }
        pred.extend(boxes);
        gt.extend(seq.gt_boxes.iter().map(|b| Some(*b)));
    }
    let report = detection_eval(&pred, &gt)?;
    let metrics = Metrics {
        avg_iou: Some(report.avg_iou),
        miss_rate: Some(report.miss_rate),
        ..Metrics::default()
    };
    print_metrics(&metrics, c.out.as_deref())
}

// ---- lm-train ----------------------------------------------------------

#[derive(Args)]
struct LmTrainCmd {
    /// Dataset directory whose labels form the corpus.
    #[arg(long, conflicts_with = "corpus")]
    data: Option<PathBuf>,
    /// Text file with one sequence per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Alphabet letters; derived from the corpus when omitted.
    #[arg(long)]
    alphabet: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn run_lm_train(c: LmTrainCmd) -> Result<()> {
    let corpus: Vec<String> = match (&c.data, &c.corpus) {
        (Some(dir), _) => load_dataset(dir)?.into_iter().map(|s| s.label).collect(),
        (None, Some(path)) => std::fs::read_to_string(path)
            .map_err(Error::io(format!("read {}", path.display())))?
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        (None, None) => return Err(Error::Config("pass --data or --corpus".into())),
    };
    let alphabet = match &c.alphabet {
        Some(s) => Alphabet::new(s)?,
        None => derive_alphabet(corpus.iter().map(String::as_str))?,
    };
    let lm = train_ngram(&corpus, c.order, &alphabet)?;
    save_lm(&c.out, &lm)?;
    let metrics =
        Metrics { perplexity: Some(perplexity(&lm, &corpus)?), ..Metrics::default() };
    println!("wrote {}", c.out.display());
    print_metrics(&metrics, None)
}

// ---- gradcheck ----------------------------------------------------------

#[derive(Args)]
struct GradcheckCmd {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Frames in the probe sequence.
    #[arg(long, default_value_t = 3)]
    frames: usize,
}

fn run_gradcheck(c: GradcheckCmd) -> Result<()> {
    let config = ModelConfig {
        input_side: 16,
        conv_channels: vec![2, 3],
        kernel: 3,
        stride: 2,
        pad: 0,
        hidden: 4,
        alphabet_len: 2,
        alpha: c.alpha,
        dropout: 0.0,
    };
    let params = init_params(&config, c.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed.wrapping_add(1));
    let frames: Vec<Frame> = (0..c.frames.max(1))
        .map(|_| {
            Frame::new(16, 16, (0..256).map(|_| rng.gen()).collect())
                .expect("16x16 noise frame")
        })
        .collect();
    let g = config.grid_side();
    let priors = motion_priors(&frames, (g, g))?;
    let target = vec![1, 2];

    let err = finite_diff_check(&params, &frames, &priors, &target)?;
    let clean_ok = err < 1e-3;
    println!("gradient check: max relative error {err:.3e} ({})", verdict(clean_ok));
    let corrupted = finite_diff_check_corrupted(&params, &frames, &priors, &target, 0)?;
    let corrupt_ok = corrupted > 1e-1;
    println!(
        "corrupted control: max relative error {corrupted:.3e} ({})",
        verdict(corrupt_ok)
    );
    if clean_ok && corrupt_ok {
        Ok(())
    } else {
        Err(Error::CheckFailed("analytic gradient disagrees with finite differences".into()))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

// ---- bench --------------------------------------------------------------

#[derive(Args)]
struct BenchCmd {
    #[arg(long, default_value_t = 0.9)]
    ratio: f64,
    /// Dataset to take the probe sequence from; noise frames when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 112)]
    frame_side: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 3)]
    top_k: usize,
}

fn run_bench(c: BenchCmd) -> Result<()> {
    let frames = match &c.data {
        Some(dir) => {
            let data = load_dataset(dir)?;
            data.into_iter()
                .next()
                .ok_or_else(|| Error::Config("dataset is empty".into()))?
                .frames
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            (0..c.frames.max(1))
                .map(|_| {
                    Frame::new(
                        c.frame_side,
                        c.frame_side,
                        (0..c.frame_side * c.frame_side).map(|_| rng.gen()).collect(),
                    )
                    .expect("square noise frame")
                })
                .collect()
        }
    };
    let report = zoom_vs_enlarge(&frames, c.ratio, c.lambda, c.top_k)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::CorruptDataset(format!("serializing report: {e}")))?
    );
    let expected = 1.0 / (c.ratio * c.ratio);
    println!(
        "zoom uses {:.2}x less frame-buffer memory (1/R^2 = {expected:.2})",
        report.factor
    );
    Ok(())
}

// ---- viz ----------------------------------------------------------------

#[derive(Args)]
struct VizCmd {
    /// Run directory from train or zoom-train.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output directory for PGM overlays.
    #[arg(long)]
    out: PathBuf,
    /// Zoom level to visualize; the last kept one when omitted.
    #[arg(long)]
    iter: Option<usize>,
    /// Sequences to render.
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[command(flatten)]
    zoom: ZoomFlags,
}

fn run_viz(c: VizCmd) -> Result<()> {
    let arts = load_artifacts(&c.run)?;
    let data = load_dataset(&c.data)?;
    let s = c.iter.unwrap_or(arts.iterations.len());
    if s == 0 || s > arts.iterations.len() {
        return Err(Error::Config(format!(
            "iteration {s} outside 1..={}",
            arts.iterations.len()
        )));
    }
    let zoom = c.zoom.params();
    std::fs::create_dir_all(&c.out)
        .map_err(Error::io(format!("create {}", c.out.display())))?;

    let mut written = 0usize;
    for seq in data.iter().take(c.count) {
        // Replay the zooms below level s so the frames match what model s
        // actually reads.
        let mut cur = seq.frames.clone();
        let mut hist: Vec<ZoomHistory> =
            cur.iter().map(|f| ZoomHistory::full(f.width, f.height)).collect();
        for record in &arts.iterations[..s - 1] {
            let (next, next_hist, _) =
                zoom_frames_once(&record.params, &seq.frames, &cur, &hist, record.ratio, &zoom)?;
            cur = next;
            hist = next_hist;
        }
        let record = &arts.iterations[s - 1];
        let g = record.params.config.grid_side();
        let priors = motion_priors(&cur, (g, g))?;
        let out = forward_sequence(&record.params, &cur, &priors)?;

        let mut candidates = Vec::with_capacity(cur.len());
        for (t, frame) in cur.iter().enumerate() {
            let peaks = crate::tube::find_peaks(&out.attention[t], (g, g), zoom.top_k);
            candidates.push(crate::tube::make_candidates(
                &peaks,
                &out.attention[t],
                (g, g),
                record.ratio,
                (frame.width, frame.height),
                t,
            )?);
        }
        let tube = crate::tube::best_tube(&candidates, zoom.lambda)?;
        let boxes: Vec<BBox> = if zoom.per_frame {
            tube.boxes.clone()
        } else {
            vec![box_average(&tube.boxes)?; tube.boxes.len()]
        };

        for (t, frame) in cur.iter().enumerate() {
            let mut overlay = attention_overlay(frame, &out.attention[t], (g, g))?;
            burn_box_edges(&mut overlay, &boxes[t], 1.0);
            let path = c.out.join(format!("{}_f{t:03}.pgm", seq.id));
            write_pgm(&path, &overlay)?;
            written += 1;
        }
    }
    println!("wrote {written} overlays to {}", c.out.display());
    Ok(())
}
