//! Trains a whole-frame recognizer on synthetic data and prints the loss
//! curve plus held-out letter accuracy. No zooming here; this is the model
//! every zoom iteration starts from.

use zoomrec::ctc::Alphabet;
use zoomrec::model::ModelConfig;
use zoomrec::pipeline::{train_model, TrainConfig};
use zoomrec::synthdata::{random_dataset, SynthSpec};

fn main() -> zoomrec::Result<()> {
    let alphabet = Alphabet::first_n(4)?;
    let spec = SynthSpec {
        alphabet: alphabet.clone(),
        frame_side: 112,
        glyph_fraction: 0.1,
        frames_per_letter: (2, 3),
        distractor_count: 0,
        jitter: 1.0,
        blur: None,
        seed: 10,
    };
    let train = random_dataset(&spec, 200, (1, 2))?;
    let dev = random_dataset(&SynthSpec { seed: 11, ..spec.clone() }, 50, (1, 2))?;

    let config = TrainConfig {
        model: ModelConfig {
            input_side: 112,
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
        lr_schedule: vec![(40, 0.3), (10, 0.05)],
        batch_size: 4,
        seed: 7,
    };

    println!("training on {} sequences, {} held out", train.len(), dev.len());
    let out = train_model(&train, &dev, &config)?;
    for (e, (loss, acc)) in
        out.epoch_losses.iter().zip(&out.epoch_dev_accuracies).enumerate()
    {
        if (e + 1) % 5 == 0 || e == 0 {
            println!(
                "  epoch {:2}  mean ctc loss {loss:7.4}  dev letter accuracy {acc:.3}",
                e + 1
            );
        }
    }
    println!("best dev letter accuracy {:.3}", out.dev_accuracy);
    Ok(())
}
