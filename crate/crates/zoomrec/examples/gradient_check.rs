//! Verifies the hand-derived gradients end to end: conv stack, attention
//! pooling, LSTM, and CTC loss against central finite differences on a tiny
//! model. A corrupted-gradient control shows the check actually bites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zoomrec::imaging::{motion_priors, Frame};
use zoomrec::model::gradcheck::{finite_diff_check, finite_diff_check_corrupted};
use zoomrec::model::{init_params, ModelConfig};

fn main() -> zoomrec::Result<()> {
    let config = ModelConfig {
        input_side: 16,
        conv_channels: vec![2, 3],
        kernel: 3,
        stride: 2,
        pad: 0,
        hidden: 4,
        alphabet_len: 2,
        alpha: 1.0,
        dropout: 0.0,
    };
    let params = init_params(&config, 0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frames: Vec<Frame> = (0..3)
        .map(|_| Frame::new(16, 16, (0..256).map(|_| rng.gen()).collect()))
        .collect::<zoomrec::Result<_>>()?;
    let g = config.grid_side();
    let priors = motion_priors(&frames, (g, g))?;
    let target = vec![1, 2];

    let err = finite_diff_check(&params, &frames, &priors, &target)?;
    println!("max relative gradient error: {err:.3e} (threshold 1e-3)");
    assert!(err < 1e-3, "analytic gradient disagrees with finite differences");

    let corrupted = finite_diff_check_corrupted(&params, &frames, &priors, &target, 0)?;
    println!("with one gradient entry corrupted: {corrupted:.3e} (must exceed 1e-1)");
    assert!(corrupted > 1e-1, "the check failed to notice a corrupted gradient");

    println!("gradients verified");
    Ok(())
}
