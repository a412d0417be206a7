//! CTC loss, gradient, and decoding over frame-level posteriors.
//!
//! Index 0 is always the blank; letter i of the alphabet is index i + 1.
//! The loss and gradient run in log space; `brute_force_nll` deliberately
//! takes the linear-space enumeration route instead so the two can check
//! each other.

use crate::error::{Error, Result};
use crate::linalg::{log_add, log_sum, Mat};

pub const BLANK: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Alphabet {
    letters: Vec<char>,
}

impl Alphabet {
    pub fn new(letters: &str) -> Result<Self> {
        let letters: Vec<char> = letters.chars().collect();
        if letters.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for (i, c) in letters.iter().enumerate() {
            if letters[..i].contains(c) {
                return Err(Error::SymbolOutsideAlphabet(*c));
            }
            if c.is_whitespace() {
                return Err(Error::SymbolOutsideAlphabet(*c));
            }
        }
        Ok(Alphabet { letters })
    }

    /// The first `n` lowercase letters, the stock alphabet for synthetic data.
    pub fn first_n(n: usize) -> Result<Self> {
        if n == 0 || n > 26 {
            return Err(Error::SymbolOutsideAlphabet('?'));
        }
        Alphabet::new(&('a'..='z').take(n).collect::<String>())
    }

    pub fn letters(&self) -> &[char] {
        &self.letters
    }

    /// Number of letters, excluding the blank.
    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of model classes: letters plus the blank.
    pub fn classes(&self) -> usize {
        self.letters.len() + 1
    }

    pub fn index_of(&self, c: char) -> Result<usize> {
        self.letters
            .iter()
            .position(|&l| l == c)
            .map(|i| i + 1)
            .ok_or(Error::SymbolOutsideAlphabet(c))
    }

    pub fn letter_at(&self, index: usize) -> Option<char> {
        if index == BLANK {
            None
        } else {
            self.letters.get(index - 1).copied()
        }
    }

    pub fn encode(&self, label: &str) -> Result<Vec<usize>> {
        label.chars().map(|c| self.index_of(c)).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> String {
        indices.iter().filter_map(|&i| self.letter_at(i)).collect()
    }
}

/// Merges adjacent duplicates, then removes blanks.
pub fn collapse(seq: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in seq {
        if Some(s) != prev && s != BLANK {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Interleaves blanks around the target: the extended label of the forward
/// algorithm.
fn extended(target: &[usize]) -> Vec<usize> {
    let mut l = Vec::with_capacity(2 * target.len() + 1);
    l.push(BLANK);
    for &t in target {
        l.push(t);
        l.push(BLANK);
    }
    l
}

fn check_shapes(posteriors: &Mat, target: &[usize]) -> Result<()> {
    if posteriors.rows == 0 || posteriors.cols < 2 {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} posterior matrix",
            posteriors.rows, posteriors.cols
        )));
    }
    if let Some(&bad) = target.iter().find(|&&t| t == BLANK || t >= posteriors.cols) {
        return Err(Error::ShapeMismatch(format!("target index {bad} out of range")));
    }
    Ok(())
}

fn log_posteriors(posteriors: &Mat) -> Mat {
    let mut lp = posteriors.clone();
    for v in &mut lp.data {
        *v = v.ln();
    }
    lp
}

fn forward(lp: &Mat, ext: &[usize]) -> Mat {
    let (t_len, s_len) = (lp.rows, ext.len());
    let mut alpha = Mat::zeros(t_len, s_len);
    alpha.data.fill(f64::NEG_INFINITY);
    *alpha.at_mut(0, 0) = lp.at(0, ext[0]);
    if s_len > 1 {
        *alpha.at_mut(0, 1) = lp.at(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha.at(t - 1, s);
            if s >= 1 {
                a = log_add(a, alpha.at(t - 1, s - 1));
            }
            if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                a = log_add(a, alpha.at(t - 1, s - 2));
            }
            *alpha.at_mut(t, s) = a + lp.at(t, ext[s]);
        }
    }
    alpha
}

fn backward(lp: &Mat, ext: &[usize]) -> Mat {
    let (t_len, s_len) = (lp.rows, ext.len());
    let mut beta = Mat::zeros(t_len, s_len);
    beta.data.fill(f64::NEG_INFINITY);
    *beta.at_mut(t_len - 1, s_len - 1) = lp.at(t_len - 1, ext[s_len - 1]);
    if s_len > 1 {
        *beta.at_mut(t_len - 1, s_len - 2) = lp.at(t_len - 1, ext[s_len - 2]);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta.at(t + 1, s);
            if s + 1 < s_len {
                b = log_add(b, beta.at(t + 1, s + 1));
            }
            if s + 2 < s_len && ext[s + 2] != BLANK && ext[s + 2] != ext[s] {
                b = log_add(b, beta.at(t + 1, s + 2));
            }
            *beta.at_mut(t, s) = b + lp.at(t, ext[s]);
        }
    }
    beta
}

fn log_prob(alpha: &Mat, s_len: usize) -> f64 {
    let last = alpha.rows - 1;
    let mut p = alpha.at(last, s_len - 1);
    if s_len > 1 {
        p = log_add(p, alpha.at(last, s_len - 2));
    }
    p
}

/// Negative log probability of `target` under the posteriors. Targets with
/// no valid alignment yield +inf, the evaluation-time convention; training
/// treats them as an error via `ctc_grad`.
pub fn ctc_loss(posteriors: &Mat, target: &[usize]) -> Result<f64> {
    check_shapes(posteriors, target)?;
    let ext = extended(target);
    let lp = log_posteriors(posteriors);
    let alpha = forward(&lp, &ext);
    Ok(-log_prob(&alpha, ext.len()))
}

/// Exact dLoss/dLogits for logits that produced `posteriors` via softmax.
/// Every row sums to zero. Unalignable targets are an error here.
pub fn ctc_grad(posteriors: &Mat, target: &[usize]) -> Result<Mat> {
    check_shapes(posteriors, target)?;
    let ext = extended(target);
    let lp = log_posteriors(posteriors);
    let alpha = forward(&lp, &ext);
    let logp = log_prob(&alpha, ext.len());
    if logp == f64::NEG_INFINITY {
        return Err(Error::UnalignableTarget {
            target: format!("{target:?}"),
            frames: posteriors.rows,
        });
    }
    let beta = backward(&lp, &ext);
    let mut grad = posteriors.clone();
    for t in 0..posteriors.rows {
        // Occupancy of class k at frame t: sum over extended positions with
        // that label of alpha*beta, divided by the double-counted emission.
        for (s, &lab) in ext.iter().enumerate() {
            let ab = alpha.at(t, s) + beta.at(t, s);
            if ab == f64::NEG_INFINITY {
                continue;
            }
            *grad.at_mut(t, lab) -= (ab - lp.at(t, lab) - logp).exp();
        }
    }
    Ok(grad)
}

/// Best path decode: per-frame argmax (ties toward the lower index),
/// collapsed.
pub fn greedy_decode(posteriors: &Mat) -> Vec<usize> {
    let path: Vec<usize> = (0..posteriors.rows)
        .map(|t| {
            let row = posteriors.row(t);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    collapse(&path)
}

/// Reference NLL by full enumeration of all labelings that collapse to the
/// target. Linear-space arithmetic, independent of the forward algorithm.
/// Errors when (classes)^frames exceeds 10^6.
pub fn brute_force_nll(posteriors: &Mat, target: &[usize]) -> Result<f64> {
    check_shapes(posteriors, target)?;
    let k = posteriors.cols as u128;
    let total = k.checked_pow(posteriors.rows as u32).ok_or(Error::InstanceTooLarge(u128::MAX))?;
    if total > 1_000_000 {
        return Err(Error::InstanceTooLarge(total));
    }
    let mut sum = 0.0f64;
    let mut labeling = vec![0usize; posteriors.rows];
    for n in 0..total {
        let mut m = n;
        for slot in labeling.iter_mut() {
            *slot = (m % k) as usize;
            m /= k;
        }
        if collapse(&labeling) == target {
            let p: f64 = labeling.iter().enumerate().map(|(t, &c)| posteriors.at(t, c)).product();
            sum += p;
        }
    }
    Ok(-sum.ln())
}

/// Row-stochastic posteriors from logits; shared by the model head and tests.
pub fn softmax_rows(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for t in 0..out.rows {
        let row = out.row_mut(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub fn log_sum_all(xs: &[f64]) -> f64 {
    log_sum(xs.iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn posteriors_from(rows: Vec<Vec<f64>>) -> Mat {
        Mat::from_rows(rows)
    }

    fn random_posteriors(rng: &mut impl Rng, t: usize, classes: usize) -> Mat {
        let mut m = Mat::zeros(t, classes);
        for r in 0..t {
            let mut sum = 0.0;
            for c in 0..classes {
                let v: f64 = rng.gen_range(0.05..1.0);
                *m.at_mut(r, c) = v;
                sum += v;
            }
            for c in 0..classes {
                *m.at_mut(r, c) /= sum;
            }
        }
        m
    }

    #[test]
    fn collapse_merges_then_removes_blanks() {
        // "--aab-b" with a=1, b=2
        assert_eq!(collapse(&[0, 0, 1, 1, 2, 0, 2]), vec![1, 2, 2]);
        assert_eq!(collapse(&[]), Vec::<usize>::new());
        assert_eq!(collapse(&[0, 0, 0]), Vec::<usize>::new());
    }

    // Note collapse is NOT idempotent on all of its outputs: "aa" (from
    // a-blank-a) collapses further to "a". Its fixed points are exactly the
    // blank-free sequences without adjacent duplicates.
    proptest! {
        #[test]
        fn collapse_fixes_blankfree_duplicate_free_sequences(
            seq in proptest::collection::vec(1usize..4, 0..20)
        ) {
            let fixed: Vec<usize> = seq
                .iter()
                .enumerate()
                .filter(|(i, &s)| *i == 0 || seq[i - 1] != s)
                .map(|(_, &s)| s)
                .collect();
            prop_assert_eq!(collapse(&fixed), fixed.clone());
        }
    }

    #[test]
    fn blank_separated_repeats_survive_collapse() {
        assert_eq!(collapse(&[1, 0, 1]), vec![1, 1]);
    }

    #[test]
    fn single_frame_loss_is_neg_log_posterior() {
        let p = posteriors_from(vec![vec![0.2, 0.5, 0.3]]);
        let loss = ctc_loss(&p, &[1]).unwrap();
        assert!((loss - (-(0.5f64.ln()))).abs() < 1e-12);
    }

    #[test]
    fn two_frame_loss_enumerates_three_paths() {
        let p = posteriors_from(vec![vec![0.1, 0.6, 0.3], vec![0.2, 0.7, 0.1]]);
        // Paths for "a": aa, a-, -a.
        let expect = -(0.6 * 0.7 + 0.6 * 0.2 + 0.1 * 0.7f64).ln();
        let loss = ctc_loss(&p, &[1]).unwrap();
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn unalignable_target_is_infinite_loss_but_grad_error() {
        // "aa" needs at least 3 frames (a, blank, a).
        let p = random_posteriors(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1), 2, 3);
        assert_eq!(ctc_loss(&p, &[1, 1]).unwrap(), f64::INFINITY);
        assert!(matches!(ctc_grad(&p, &[1, 1]), Err(Error::UnalignableTarget { .. })));
    }

    #[test]
    fn empty_target_is_all_blank_path() {
        let p = posteriors_from(vec![vec![0.4, 0.6], vec![0.8, 0.2]]);
        let loss = ctc_loss(&p, &[]).unwrap();
        assert!((loss - (-(0.4 * 0.8f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_brute_force_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let t = rng.gen_range(1..=6);
            let classes = rng.gen_range(2..=4);
            let p = random_posteriors(&mut rng, t, classes);
            let target_len = rng.gen_range(0..=t.min(3));
            let target: Vec<usize> =
                (0..target_len).map(|_| rng.gen_range(1..classes)).collect();
            let fast = ctc_loss(&p, &target).unwrap();
            let slow = brute_force_nll(&p, &target).unwrap();
            if fast.is_infinite() {
                assert!(slow.is_infinite());
            } else {
                assert!((fast - slow).abs() <= 1e-9, "fast {fast} vs brute {slow}");
            }
        }
    }

    #[test]
    fn probability_over_all_targets_sums_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let p = random_posteriors(&mut rng, 3, 3);
        let mut total = 0.0;
        // All targets over {a, b} up to length 3.
        let mut targets: Vec<Vec<usize>> = vec![vec![]];
        for len in 1..=3usize {
            let count = 2usize.pow(len as u32);
            for n in 0..count {
                let mut t = Vec::new();
                let mut m = n;
                for _ in 0..len {
                    t.push(1 + (m % 2));
                    m /= 2;
                }
                targets.push(t);
            }
        }
        for target in targets {
            let loss = ctc_loss(&p, &target).unwrap();
            total += (-loss).exp();
        }
        assert!((total - 1.0).abs() < 1e-9, "total {total}");
    }

    #[test]
    fn single_frame_gradient_is_posterior_minus_onehot() {
        let logits = posteriors_from(vec![vec![0.3, -0.2, 1.4]]);
        let p = softmax_rows(&logits);
        let g = ctc_grad(&p, &[1]).unwrap();
        for k in 0..3 {
            let expect = p.at(0, k) - if k == 1 { 1.0 } else { 0.0 };
            assert!((g.at(0, k) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let t = rng.gen_range(2..=7);
            let p = random_posteriors(&mut rng, t, 4);
            let target: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(1..4)).collect();
            if let Ok(g) = ctc_grad(&p, &target) {
                for r in 0..t {
                    let s: f64 = g.row(r).iter().sum();
                    assert!(s.abs() < 1e-9, "row sum {s}");
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_of_loss() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let t = rng.gen_range(2..=4);
            let classes = 3;
            let mut logits = Mat::zeros(t, classes);
            for v in &mut logits.data {
                *v = rng.gen_range(-1.0..1.0);
            }
            let target = vec![1usize; 1];
            let analytic = ctc_grad(&softmax_rows(&logits), &target).unwrap();
            let h = 1e-6;
            for i in 0..logits.data.len() {
                let mut plus = logits.clone();
                plus.data[i] += h;
                let mut minus = logits.clone();
                minus.data[i] -= h;
                let lp = ctc_loss(&softmax_rows(&plus), &target).unwrap();
                let lm = ctc_loss(&softmax_rows(&minus), &target).unwrap();
                let numeric = (lp - lm) / (2.0 * h);
                assert!(
                    (analytic.data[i] - numeric).abs() < 1e-6,
                    "grad {} vs fd {}",
                    analytic.data[i],
                    numeric
                );
            }
        }
    }

    #[test]
    fn greedy_decode_breaks_ties_toward_lower_index() {
        let p = posteriors_from(vec![vec![0.4, 0.4, 0.2], vec![0.2, 0.4, 0.4]]);
        // Frame 0 ties blank vs a -> blank; frame 1 ties a vs b -> a.
        assert_eq!(greedy_decode(&p), vec![1]);
    }

    #[test]
    fn greedy_decode_collapses_best_path() {
        let p = posteriors_from(vec![
            vec![0.1, 0.8, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.8, 0.1, 0.1],
            vec![0.1, 0.1, 0.8],
        ]);
        assert_eq!(greedy_decode(&p), vec![1, 2]);
    }

    #[test]
    fn brute_force_refuses_oversized_instances() {
        let p = random_posteriors(&mut rand_chacha::ChaCha8Rng::seed_from_u64(2), 21, 4);
        assert!(matches!(brute_force_nll(&p, &[1]), Err(Error::InstanceTooLarge(_))));
    }

    #[test]
    fn alphabet_round_trips_labels() {
        let a = Alphabet::first_n(8).unwrap();
        assert_eq!(a.classes(), 9);
        let idx = a.encode("habc").unwrap();
        assert_eq!(idx, vec![8, 1, 2, 3]);
        assert_eq!(a.decode(&idx), "habc");
        assert!(a.encode("z").is_err());
        assert!(Alphabet::new("aa").is_err());
    }
}
