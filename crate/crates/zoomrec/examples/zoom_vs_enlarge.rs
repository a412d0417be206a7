//! Why zoom instead of feeding bigger frames: cropping to a ratio-R window
//! and rescaling back to the model's input keeps frame-buffer memory flat,
//! while enlarging the full frame to match that magnification costs 1/R^2.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zoomrec::harness::bench::zoom_vs_enlarge;
use zoomrec::imaging::Frame;

fn main() -> zoomrec::Result<()> {
    let side = 112;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let frames: Vec<Frame> = (0..8)
        .map(|_| Frame::new(side, side, (0..side * side).map(|_| rng.gen()).collect()))
        .collect::<zoomrec::Result<_>>()?;

    println!(
        "{:>8} {:>14} {:>16} {:>8} {:>8}",
        "ratio", "zoom bytes", "enlarge bytes", "factor", "1/R^2"
    );
    for ratio in [0.9, 0.81, 0.729, 0.6561] {
        let report = zoom_vs_enlarge(&frames, ratio, 0.1, 3)?;
        println!(
            "{ratio:>8.4} {:>14} {:>16} {:>8.2} {:>8.2}",
            report.zoom_peak_bytes,
            report.enlarge_peak_bytes,
            report.factor,
            1.0 / (ratio * ratio),
        );
    }
    Ok(())
}
