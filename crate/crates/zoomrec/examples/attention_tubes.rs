//! Shows how per-frame attention peaks become a smooth spatio-temporal
//! tube: candidate boxes from the top attention cells, linked across frames
//! by dynamic programming, then averaged into one crop window. Compares the
//! tube against the ground-truth glyph track.

use zoomrec::ctc::Alphabet;
use zoomrec::imaging::{box_average, iou, motion_priors};
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
        seed: 30,
    };
    let train = random_dataset(&spec, 40, (1, 2))?;
    let probe = &random_dataset(&SynthSpec { seed: 31, ..spec.clone() }, 1, (2, 2))?[0];

    // A briefly trained model; its attention already tracks the glyph.
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

    let ratio = 0.5;
    let mut candidates = Vec::new();
    for (t, frame) in probe.frames.iter().enumerate() {
        let peaks = find_peaks(&out.attention[t], (g, g), 3);
        candidates.push(make_candidates(
            &peaks,
            &out.attention[t],
            (g, g),
            ratio,
            (frame.width, frame.height),
            t,
        )?);
    }
    let tube = best_tube(&candidates, 0.1)?;

    println!("sequence {} (label {:?}), {} frames", probe.id, probe.label, probe.frames.len());
    println!("tube linking objective {:.4}\n", tube.objective);
    for (t, bbox) in tube.boxes.iter().enumerate() {
        let gt = &probe.gt_boxes[t];
        println!(
            "  frame {t:2}  tube ({:5.1}, {:5.1})..({:5.1}, {:5.1})  iou with glyph {:.3}",
            bbox.x_min,
            bbox.y_min,
            bbox.x_max,
            bbox.y_max,
            iou(bbox, gt),
        );
    }
    let avg = box_average(&tube.boxes)?;
    println!(
        "\naveraged crop window ({:.1}, {:.1})..({:.1}, {:.1})",
        avg.x_min, avg.y_min, avg.x_max, avg.y_max
    );
    Ok(())
}
