//! Training-time feature augmentations.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::SeqTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub shift_frac: f64,
    pub temporal_dropout_max_frac: f64,
    pub index_swap_rate: f64,
    pub channel_dropout_p: f64,
    pub noise_sigma: f64,
    /// Probability that each augmentation is applied to a clip.
    pub apply_prob: f64,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            shift_frac: 0.1,
            temporal_dropout_max_frac: 0.1,
            index_swap_rate: 0.05,
            channel_dropout_p: 0.1,
            noise_sigma: 0.02,
            apply_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// Configuration under which [`augment`] is the identity.
    pub fn disabled() -> Self {
        Self {
            apply_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let fracs = [
            ("shift_frac", self.shift_frac),
            ("temporal_dropout_max_frac", self.temporal_dropout_max_frac),
            ("index_swap_rate", self.index_swap_rate),
            ("channel_dropout_p", self.channel_dropout_p),
            ("apply_prob", self.apply_prob),
        ];
        for (name, v) in fracs {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(format!("noise_sigma = {} must be a finite non-negative number", self.noise_sigma));
        }
        Ok(())
    }
}

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, b| (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

/// Stable 64-bit hash of a string.
pub fn stable_hash(s: &str) -> u64 {
    fnv1a(FNV_OFFSET, s.as_bytes())
}

/// RNG for one clip in one epoch, independent of processing order.
pub fn clip_rng(seed: u64, clip_id: &str, epoch: usize) -> ChaCha8Rng {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a(h, clip_id.as_bytes());
    h = fnv1a(h, &(epoch as u64).to_le_bytes());
    ChaCha8Rng::seed_from_u64(h)
}

/// Adds a per-channel constant drawn from `[-frac, frac]`.
pub fn feature_shift<R: Rng>(x: &mut SeqTensor, frac: f64, rng: &mut R) {
    if frac <= 0.0 {
        return;
    }
    let offsets: Vec<f64> = (0..x.cols()).map(|_| rng.gen_range(-frac..=frac)).collect();
    for t in 0..x.rows() {
        for (v, o) in x.row_mut(t).iter_mut().zip(&offsets) {
            *v += o;
        }
    }
}

/// Zeroes one contiguous span of at most `max_frac * T` frames.
pub fn temporal_dropout<R: Rng>(x: &mut SeqTensor, max_frac: f64, rng: &mut R) {
    let t = x.rows();
    let max_len = (max_frac * t as f64).floor() as usize;
    if max_len == 0 {
        return;
    }
    let len = rng.gen_range(1..=max_len);
    let start = rng.gen_range(0..=t - len);
    for r in start..start + len {
        x.row_mut(r).fill(0.0);
    }
}

/// Swaps adjacent frame pairs, each pair chosen with probability `rate`.
pub fn index_swap<R: Rng>(x: &mut SeqTensor, rate: f64, rng: &mut R) {
    let t = x.rows();
    let c = x.cols();
    let mut r = 0;
    while r + 1 < t {
        if rng.gen_bool(rate) {
            let data = x.data_mut();
            let (a, b) = data[r * c..(r + 2) * c].split_at_mut(c);
            a.swap_with_slice(b);
            r += 2;
        } else {
            r += 1;
        }
    }
}

pub fn zero_channel(x: &mut SeqTensor, channel: usize) {
    for t in 0..x.rows() {
        x.row_mut(t)[channel] = 0.0;
    }
}

/// Zeroes each whole channel independently with probability `p`.
pub fn channel_dropout<R: Rng>(x: &mut SeqTensor, p: f64, rng: &mut R) {
    for c in 0..x.cols() {
        if rng.gen_bool(p) {
            zero_channel(x, c);
        }
    }
}

pub fn gaussian_noise<R: Rng>(x: &mut SeqTensor, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in x.data_mut() {
        *v += normal.sample(rng);
    }
}

/// Applies each augmentation in turn with probability `apply_prob`. In
/// [`Mode::Eval`] the input is returned unchanged.
pub fn augment<R: Rng>(x: &SeqTensor, cfg: &AugmentationConfig, mode: Mode, rng: &mut R) -> SeqTensor {
    let mut out = x.clone();
    if mode == Mode::Eval || cfg.apply_prob <= 0.0 {
        return out;
    }
    if rng.gen_bool(cfg.apply_prob) {
        feature_shift(&mut out, cfg.shift_frac, rng);
    }
    if rng.gen_bool(cfg.apply_prob) {
        temporal_dropout(&mut out, cfg.temporal_dropout_max_frac, rng);
    }
    if rng.gen_bool(cfg.apply_prob) {
        index_swap(&mut out, cfg.index_swap_rate, rng);
    }
    if rng.gen_bool(cfg.apply_prob) {
        channel_dropout(&mut out, cfg.channel_dropout_p, rng);
    }
    if rng.gen_bool(cfg.apply_prob) {
        gaussian_noise(&mut out, cfg.noise_sigma, rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize, c: usize) -> SeqTensor {
        SeqTensor::from_vec(t, c, (0..t * c).map(|i| i as f64 * 0.1 + 1.0).collect())
    }

    #[test]
    fn zero_probability_is_identity() {
        let x = ramp(20, 16);
        let mut rng = clip_rng(1, "a", 0);
        assert_eq!(augment(&x, &AugmentationConfig::disabled(), Mode::Train, &mut rng), x);
        let mut rng = clip_rng(1, "a", 0);
        assert_eq!(augment(&x, &AugmentationConfig::default(), Mode::Eval, &mut rng), x);
    }

    #[test]
    fn forced_channel_dropout() {
        let x = ramp(10, 16);
        let mut y = x.clone();
        zero_channel(&mut y, 3);
        for t in 0..10 {
            for c in 0..16 {
                let want = if c == 3 { 0.0 } else { x.get(t, c) };
                assert_eq!(y.get(t, c), want);
            }
        }
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let x = ramp(40, 16);
        let cfg = AugmentationConfig {
            apply_prob: 1.0,
            ..AugmentationConfig::default()
        };
        let a = augment(&x, &cfg, Mode::Train, &mut clip_rng(7, "clip", 3));
        let b = augment(&x, &cfg, Mode::Train, &mut clip_rng(7, "clip", 3));
        assert_eq!(a, b);
        let c = augment(&x, &cfg, Mode::Train, &mut clip_rng(7, "clip", 4));
        assert_ne!(a, c);
    }

    #[test]
    fn dropout_span_is_bounded() {
        let x = ramp(50, 2);
        let mut y = x.clone();
        temporal_dropout(&mut y, 0.1, &mut clip_rng(0, "d", 0));
        let zeroed: Vec<usize> = (0..50).filter(|&t| y.row(t) == [0.0, 0.0]).collect();
        assert!(!zeroed.is_empty() && zeroed.len() <= 5);
        assert_eq!(zeroed.last().unwrap() - zeroed[0] + 1, zeroed.len());
    }

    #[test]
    fn swap_permutes_rows() {
        let x = ramp(30, 3);
        let mut y = x.clone();
        index_swap(&mut y, 1.0, &mut clip_rng(0, "s", 0));
        assert_eq!(y.row(0), x.row(1));
        assert_eq!(y.row(1), x.row(0));
        let mut a: Vec<f64> = y.data().to_vec();
        let mut b: Vec<f64> = x.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_out_of_range_fractions() {
        let cfg = AugmentationConfig {
            index_swap_rate: 1.5,
            ..AugmentationConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
