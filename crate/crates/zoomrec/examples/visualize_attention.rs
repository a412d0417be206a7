//! Renders what the model is looking at: attention heat blended over the
//! frame, with the chosen tube box burned in as a white outline. Writes PGM
//! images next to the system temp directory.

use zoomrec::ctc::Alphabet;
use zoomrec::harness::viz::{attention_overlay, burn_box_edges};
use zoomrec::imaging::{box_average, motion_priors, write_pgm};
use zoomrec::model::forward::forward_sequence;
use zoomrec::model::ModelConfig;
use zoomrec::pipeline::{train_model, TrainConfig};
use zoomrec::synthdata::{random_dataset, SynthSpec};
use zoomrec::tube::{best_tube, find_peaks, make_candidates};

fn main() -> zoomrec::Result<()> {
    let alphabet = Alphabet::first_n(4)?;
    let spec = SynthSpec {
        alphabet: alphabet.clone(),
        frame_side: 48,
        glyph_fraction: 0.12,
        frames_per_letter: (2, 3),
        distractor_count: 2,
        jitter: 1.0,
        blur: None,
        seed: 60,
    };
    let train = random_dataset(&spec, 40, (1, 2))?;
    let probe = &random_dataset(&SynthSpec { seed: 61, ..spec.clone() }, 1, (2, 2))?[0];

    let config = TrainConfig {
        model: ModelConfig {
            input_side: 48,
            conv_channels: vec![4, 8, 8],
            kernel: 3,
            stride: 2,
            pad: 1,
            hidden: 16,
            alphabet_len: alphabet.len(),
            alpha: 1.0,
            dropout: 0.0,
        },
        alphabet,
        lr_schedule: vec![(8, 0.02)],
        batch_size: 8,
        seed: 7,
    };
    let model = train_model(&train, &train, &config)?.params;

    let g = model.config.grid_side();
    let priors = motion_priors(&probe.frames, (g, g))?;
    let out = forward_sequence(&model, &probe.frames, &priors)?;

    let mut candidates = Vec::new();
    for (t, frame) in probe.frames.iter().enumerate() {
        let peaks = find_peaks(&out.attention[t], (g, g), 3);
        candidates.push(make_candidates(
            &peaks,
            &out.attention[t],
            (g, g),
            0.5,
            (frame.width, frame.height),
            t,
        )?);
    }
    let tube = best_tube(&candidates, 0.1)?;
    let avg = box_average(&tube.boxes)?;

    let dir = std::env::temp_dir().join("zoomrec_example_viz");
    std::fs::create_dir_all(&dir).map_err(zoomrec::Error::io("creating output dir"))?;
    for (t, frame) in probe.frames.iter().enumerate() {
        let mut overlay = attention_overlay(frame, &out.attention[t], (g, g))?;
        burn_box_edges(&mut overlay, &avg, 1.0);
        write_pgm(&dir.join(format!("{}_f{t:02}.pgm", probe.id)), &overlay)?;
    }
    println!(
        "wrote {} overlays for sequence {} (label {:?}) to {}",
        probe.frames.len(),
        probe.id,
        probe.label,
        dir.display()
    );
    println!("bright regions are where the model attends; the box is the crop it would take");
    Ok(())
}
