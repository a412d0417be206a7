//! The full iterative loop: train, read the attention, zoom every sequence
//! in on its attention tube, retrain on the crops. Prints per-iteration
//! dev accuracy and the run-directory layout left on disk.
//!
//! The setup is deliberately zoom-friendly: glyphs cover ~10% of the frame
//! area and the feature stack is shallow, so the whole-frame model tops out
//! well below what the same model reaches on the zoomed crops.

use zoomrec::ctc::Alphabet;
use zoomrec::model::ModelConfig;
use zoomrec::pipeline::{iterative_train, load_artifacts, TrainConfig, ZoomParams};
use zoomrec::synthdata::{random_dataset, SynthSpec};
use zoomrec::tube::ZoomSchedule;

fn main() -> zoomrec::Result<()> {
    let alphabet = Alphabet::first_n(4)?;
    let spec = SynthSpec {
        alphabet: alphabet.clone(),
        frame_side: 112,
        // Small glyphs leave room for the zoom to help.
        glyph_fraction: 0.1,
        frames_per_letter: (2, 3),
        distractor_count: 0,
        jitter: 1.0,
        blur: None,
        seed: 1,
    };
    let train = random_dataset(&spec, 200, (1, 2))?;
    let dev = random_dataset(&SynthSpec { seed: 2, ..spec.clone() }, 50, (1, 2))?;

    let config = TrainConfig {
        model: ModelConfig {
            input_side: 112,
            conv_channels: vec![4, 8],
            kernel: 3,
            stride: 2,
            pad: 1,
            hidden: 16,
            alphabet_len: alphabet.len(),
            alpha: 1.0,
            dropout: 0.0,
        },
        alphabet,
        lr_schedule: vec![(40, 0.3), (10, 0.05)],
        batch_size: 8,
        seed: 0,
    };

    // Two levels, each cropping to half the view; the last ratio is recorded
    // but never applied (there is no training after it).
    let schedule = ZoomSchedule::new(vec![0.5, 0.5])?;
    let run_dir = std::env::temp_dir().join("zoomrec_example_zoom_train");
    let _ = std::fs::remove_dir_all(&run_dir);

    println!("training {} zoom levels on {} sequences...", schedule.len(), train.len());
    let arts = iterative_train(
        &train,
        &dev,
        &schedule,
        &config,
        &ZoomParams::default(),
        Some(&run_dir),
    )?;
    for (s, rec) in arts.iterations.iter().enumerate() {
        println!(
            "iteration {}  dev letter accuracy {:.3}  (next zoom ratio {})",
            s + 1,
            rec.dev_accuracy,
            rec.ratio
        );
    }

    // Everything needed to decode later sits in the run directory.
    let reloaded = load_artifacts(&run_dir)?;
    assert_eq!(reloaded.iterations.len(), arts.iterations.len());
    println!("\nrun directory {}:", run_dir.display());
    for s in 1..=arts.iterations.len() {
        println!("  iter_{s}/checkpoint.fsia");
        println!("  iter_{s}/metrics.json");
    }
    println!("  config.json, schedule.json, iter_*/tubes/{{train,dev}}/<id>.txt");
    Ok(())
}
