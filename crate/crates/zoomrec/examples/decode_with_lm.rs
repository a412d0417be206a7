//! Beam-search decoding with a character n-gram language model fused in.
//! The labels come from a small vocabulary with strong letter-transition
//! structure, so a 2-gram model trained on the training labels carries real
//! information. Compares greedy, plain beam, and LM-fused beam output on
//! held-out sequences.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use zoomrec::ctc::{greedy_decode, Alphabet};
use zoomrec::harness::metrics::corpus_letter_accuracy;
use zoomrec::imaging::motion_priors;
use zoomrec::lm_decode::{beam_decode, perplexity, train_ngram, CharNGramLM};
use zoomrec::model::forward::forward_sequence;
use zoomrec::model::ModelConfig;
use zoomrec::pipeline::{train_model, TrainConfig};
use zoomrec::synthdata::{render_sequence, LabeledSequence, SynthSpec};

const VOCAB: [&str; 8] = ["ab", "abc", "abd", "bad", "cab", "cad", "dab", "dad"];

fn vocab_dataset(
    base: &SynthSpec,
    first_seed: u64,
    count: usize,
    rng_seed: u64,
) -> zoomrec::Result<Vec<LabeledSequence>> {
    let mut r = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..count)
        .map(|i| {
            let spec = SynthSpec { seed: first_seed + i as u64, ..base.clone() };
            render_sequence(&spec, VOCAB[r.gen_range(0..VOCAB.len())])
        })
        .collect()
}

fn main() -> zoomrec::Result<()> {
    let alphabet = Alphabet::first_n(4)?;
    let base = SynthSpec {
        alphabet: alphabet.clone(),
        frame_side: 112,
        glyph_fraction: 0.1,
        frames_per_letter: (2, 3),
        distractor_count: 0,
        jitter: 1.0,
        blur: None,
        seed: 0,
    };
    let train = vocab_dataset(&base, 1000, 150, 50)?;
    let dev = vocab_dataset(&base, 9000, 30, 51)?;

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
        alphabet: alphabet.clone(),
        lr_schedule: vec![(40, 0.3), (10, 0.05)],
        batch_size: 4,
        seed: 7,
    };
    println!("training the recognizer on {} vocabulary sequences...", train.len());
    let model = train_model(&train, &dev, &config)?.params;

    let corpus: Vec<String> = train.iter().map(|s| s.label.clone()).collect();
    let lm = train_ngram(&corpus, 2, &alphabet)?;
    println!("2-gram LM perplexity on its corpus: {:.3}", perplexity(&lm, &corpus)?);

    // Uniform LM with zero weight turns the fused search into plain beam.
    let flat = CharNGramLM::uniform(alphabet.clone(), 1)?;

    let mut rows = Vec::new();
    for seq in &dev {
        let g = model.config.grid_side();
        let priors = motion_priors(&seq.frames, (g, g))?;
        let out = forward_sequence(&model, &seq.frames, &priors)?;
        let greedy = alphabet.decode(&greedy_decode(&out.posteriors));
        let beam = beam_decode(&out.posteriors, &flat, 16, 0.0, 0.0)?;
        let fused = beam_decode(&out.posteriors, &lm, 16, 0.4, 0.0)?;
        rows.push((seq.label.clone(), greedy, beam, fused));
    }

    println!("\n{:10} {:10} {:10} {:10}", "reference", "greedy", "beam", "beam+lm");
    for (reference, greedy, beam, fused) in &rows {
        println!("{reference:10} {greedy:10} {beam:10} {fused:10}");
    }
    for (name, pick) in [("greedy", 1usize), ("beam", 2), ("beam+lm", 3)] {
        let acc = corpus_letter_accuracy(rows.iter().map(|r| {
            let hyp = match pick {
                1 => &r.1,
                2 => &r.2,
                _ => &r.3,
            };
            (hyp.as_str(), r.0.as_str())
        }))?;
        println!("{name:8} letter accuracy {acc:.3}");
    }
    Ok(())
}
