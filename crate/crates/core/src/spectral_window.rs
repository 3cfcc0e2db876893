//! Tail sums of nonincreasing sequences and selection of a spectral window
//! `l'` in `[l/2, l]` around which the sequence is locally flat.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default constant in `delta = c_window / ln R`.
pub const DEFAULT_C_WINDOW: f64 = 0.125;
/// Upper clamp on `delta`, keeping at least two blocks in `[l/2, l]`.
pub const MAX_DELTA: f64 = 1.0 / 16.0;

/// Nonincreasing sequence `s_1 >= ... >= s_n >= 0` with squared tail sums
/// `tail_sq(k) = sum_{j > k} s_j^2` for `k = 0..=n`. Indices are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct DecaySequence {
    values: Vec<f64>,
    tail_sq: Vec<f64>,
}

/// Builds a [`DecaySequence`], accumulating tail sums from the back.
pub fn tail_sums(values: &[f64]) -> Result<DecaySequence> {
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite);
        }
        if v < 0.0 {
            return Err(Error::InvalidArgument(format!("negative entry at index {}", i + 1)));
        }
        if i > 0 && v > values[i - 1] {
            return Err(Error::NotMonotone { index: i + 1 });
        }
    }
    let n = values.len();
    let mut tail_sq = vec![0.0; n + 1];
    for k in (0..n).rev() {
        tail_sq[k] = tail_sq[k + 1] + values[k] * values[k];
    }
    Ok(DecaySequence { values: values.to_vec(), tail_sq })
}

impl DecaySequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `s_i`, 1-based.
    pub fn value(&self, i: usize) -> f64 {
        self.values[i - 1]
    }

    /// `sum_{j > k} s_j^2`.
    pub fn tail_sq(&self, k: usize) -> f64 {
        self.tail_sq[k]
    }

    /// `(sum_{j > k} s_j^2)^{1/2}`.
    pub fn tail(&self, k: usize) -> f64 {
        self.tail_sq[k].sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub l_prime: usize,
    pub delta: f64,
    /// `max(s_{ceil(l/2)} / s_l, 2)`.
    pub ratio: f64,
    /// Zero-based index of the accepted block, `None` when the block scan
    /// found nothing and the exhaustive scan over `l'` was used.
    pub block: Option<usize>,
}

// Rounding slack so that e.g. (1 - 0.25) * 4 lands on 3 and not 3.0000000000000004.
const ROUND_SLACK: f64 = 1e-9;

fn ceil_index(x: f64) -> usize {
    (x - ROUND_SLACK).ceil().max(0.0) as usize
}

fn floor_index(x: f64) -> usize {
    (x + ROUND_SLACK).floor().max(0.0) as usize
}

/// Inner and outer window indices `(ceil((1-delta) l'), floor((1+delta) l'))`.
pub fn window_bounds(l_prime: usize, delta: f64) -> (usize, usize) {
    let lp = l_prime as f64;
    (ceil_index((1.0 - delta) * lp), floor_index((1.0 + delta) * lp))
}

/// Checks `s_a^2 <= 2 s_b^2` and `tail_sq(a) <= 5 tail_sq(b)` for
/// `(a, b) = window_bounds(l_prime, delta)`. False when an index leaves
/// `1..=n`.
pub fn verify_window(seq: &DecaySequence, l_prime: usize, delta: f64) -> bool {
    if l_prime == 0 || !(delta >= 0.0) {
        return false;
    }
    let (a, b) = window_bounds(l_prime, delta);
    if a < 1 || b > seq.len() || a > b {
        return false;
    }
    let (sa, sb) = (seq.value(a), seq.value(b));
    sa * sa <= 2.0 * sb * sb && seq.tail_sq(a) <= 5.0 * seq.tail_sq(b)
}

/// Window selection on `seq` for the index `l`.
///
/// `R` is read off the data, `delta = min(c_window / ln R, 1/16)`, and
/// `[l/2, l]` is cut into `floor(1/(8 delta))` blocks of length `4 delta l`.
/// The midpoint of the first block over which `s^2` drops by at most a
/// factor 2 is returned, provided it passes [`verify_window`]. If no block
/// qualifies after integer rounding, every integer `l'` in `[ceil(l/2), l]`
/// is tried in increasing order.
pub fn select_window(seq: &DecaySequence, l: usize, c_window: f64) -> Result<WindowResult> {
    let n = seq.len();
    if l < 1 || l > n {
        return Err(Error::OutOfRange { index: l, lo: 1, hi: n });
    }
    if !(c_window.is_finite() && c_window > 0.0) {
        return Err(Error::InvalidArgument(format!("c_window must be positive, got {c_window}")));
    }
    if seq.value(l) <= 0.0 {
        return Err(Error::ZeroAt { index: l });
    }
    let lo = l.div_ceil(2);
    let ratio = (seq.value(lo) / seq.value(l)).max(2.0);
    let delta = (c_window / ratio.ln()).min(MAX_DELTA);
    let blocks = (1.0 / (8.0 * delta) + ROUND_SLACK).floor() as usize;
    let len = 4.0 * delta * l as f64;
    let start = 0.5 * l as f64;
    for b in 0..blocks {
        let left = start + b as f64 * len;
        let right = left + len;
        let i = ceil_index(left).clamp(lo, l);
        let j = floor_index(right).clamp(i, l);
        let (si, sj) = (seq.value(i), seq.value(j));
        if si * si > 2.0 * sj * sj {
            continue;
        }
        let l_prime = ((left + right) * 0.5).round().clamp(lo as f64, l as f64) as usize;
        if verify_window(seq, l_prime, delta) {
            return Ok(WindowResult { l_prime, delta, ratio, block: Some(b) });
        }
    }
    (lo..=l)
        .find(|&lp| verify_window(seq, lp, delta))
        .map(|l_prime| WindowResult { l_prime, delta, ratio, block: None })
        .ok_or(Error::NoWindow { lo, hi: l })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn tail_sums_small_cases() {
        let s = tail_sums(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!((s.tail_sq(0), s.tail_sq(2), s.tail_sq(4)), (4.0, 2.0, 0.0));
        let s = tail_sums(&[2.0, 1.0]).unwrap();
        assert_eq!((s.tail_sq(0), s.tail_sq(1)), (5.0, 1.0));
    }

    #[test]
    fn tail_sums_reject_increase() {
        assert!(matches!(tail_sums(&[1.0, 2.0]), Err(Error::NotMonotone { index: 2 })));
        assert!(tail_sums(&[1.0, -1.0]).is_err());
        assert!(tail_sums(&[f64::NAN]).is_err());
    }

    #[test]
    fn tail_sums_match_direct_sums() {
        let mut rng = stream_rng(1, 0);
        let mut v: Vec<f64> = (0..100).map(|_| rng.random::<f64>() * 10.0).collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let s = tail_sums(&v).unwrap();
        for _ in 0..20 {
            let k = rng.random_range(0..=100);
            let direct: f64 = v[k..].iter().map(|x| x * x).sum();
            assert!((s.tail_sq(k) - direct).abs() <= 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn constant_sequence_accepts_first_block() {
        let s = tail_sums(&vec![3.0; 40]).unwrap();
        let w = select_window(&s, 16, DEFAULT_C_WINDOW).unwrap();
        assert_eq!(w.block, Some(0));
        assert!(verify_window(&s, w.l_prime, w.delta));
        for lp in 1..=30 {
            assert!(verify_window(&s, lp, 0.05));
        }
    }

    fn admissible(s: &DecaySequence, l: usize, delta: f64) -> Vec<usize> {
        (l.div_ceil(2)..=l).filter(|&lp| verify_window(s, lp, delta)).collect()
    }

    #[test]
    fn geometric_sequence_window() {
        let v: Vec<f64> = (1..=40).map(|i| 2f64.powi(-i)).collect();
        let s = tail_sums(&v).unwrap();
        let w = select_window(&s, 16, DEFAULT_C_WINDOW).unwrap();
        assert!((8..=16).contains(&w.l_prime));
        assert!(admissible(&s, 16, w.delta).contains(&w.l_prime));
        let (a, b) = window_bounds(w.l_prime, w.delta);
        assert!(s.value(a).powi(2) <= 2.0 * s.value(b).powi(2));
        assert!(s.tail_sq(a) <= 5.0 * s.tail_sq(b));
    }

    #[test]
    fn window_avoids_cliff() {
        // flat, then a drop by 100 between indices 12 and 13
        let v: Vec<f64> = (1..=64).map(|i| if i <= 12 { 100.0 } else { 1.0 }).collect();
        let s = tail_sums(&v).unwrap();
        let w = select_window(&s, 32, DEFAULT_C_WINDOW).unwrap();
        let (a, b) = window_bounds(w.l_prime, w.delta);
        assert!(!(a <= 12 && b >= 13), "window [{a},{b}] straddles the cliff");
        assert!(admissible(&s, 32, w.delta).contains(&w.l_prime));
    }

    #[test]
    fn verify_rejects_straddling_drop() {
        let s = tail_sums(&[8.0, 8.0, 8.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(!verify_window(&s, 4, 0.25));
        assert!(verify_window(&s, 6, 0.1));
    }

    #[test]
    fn select_window_errors() {
        let s = tail_sums(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(select_window(&s, 3, 0.125), Err(Error::ZeroAt { index: 3 })));
        assert!(select_window(&s, 5, 0.125).is_err());
        assert!(select_window(&s, 2, 0.0).is_err());
    }

    fn arbitrary_sequence(seed: u64) -> (Vec<f64>, usize) {
        let mut rng = stream_rng(seed, 0);
        let n = rng.random_range(4..200);
        let mut v = Vec::with_capacity(n);
        let mut cur = rng.random_range(0.1..100.0);
        for _ in 0..n {
            v.push(cur);
            match rng.random_range(0..4) {
                0 => {}
                1 => cur *= rng.random_range(0.5..1.0),
                2 => cur *= rng.random_range(0.9..1.0),
                _ => {
                    if rng.random::<f64>() < 0.1 {
                        cur *= rng.random_range(1e-3..0.1)
                    }
                }
            }
        }
        let l = rng.random_range(1..=n);
        (v, l)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn selected_window_always_verifies(seed in any::<u64>(), c in 0.01f64..0.25) {
            let (v, l) = arbitrary_sequence(seed);
            let s = tail_sums(&v).unwrap();
            let w = select_window(&s, l, c).unwrap();
            prop_assert!(verify_window(&s, w.l_prime, w.delta));
            prop_assert!(w.l_prime >= l.div_ceil(2) && w.l_prime <= l);
            prop_assert!(w.delta <= MAX_DELTA && w.ratio >= 2.0);
            // deterministic
            prop_assert_eq!(select_window(&s, l, c).unwrap(), w);
        }

        #[test]
        fn tail_sums_nonincreasing(seed in any::<u64>()) {
            let (v, _) = arbitrary_sequence(seed);
            let s = tail_sums(&v).unwrap();
            prop_assert!((0..s.len()).all(|k| s.tail_sq(k) >= s.tail_sq(k + 1)));
            prop_assert_eq!(s.tail_sq(s.len()), 0.0);
        }
    }
}
