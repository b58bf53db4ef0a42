//! Deterministic keyed randomness.
//!
//! Every random decision in the crate — weight initialisation, pixel
//! shuffles, attack starting points, training-time augmentation — draws from
//! an [`RngStream`] derived from a [`PrivateKey`] and a purpose label. Two
//! streams with different labels are statistically independent, and a stream
//! is a pure function of `(key, label)`, so any pipeline stage can be
//! re-derived in isolation without replaying the draws that preceded it.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// 64-bit signed secret that seeds every keyed transform.
///
/// The key is the only secret in the defence: two keys produce unrelated
/// network initialisations and pixel shuffles, and therefore unrelated
/// transformed representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrivateKey(pub i64);

impl PrivateKey {
    /// Two's-complement bit pattern of the key.
    #[inline]
    pub fn to_bits(self) -> u64 {
        self.0 as u64
    }
}

/// Purpose tag naming what a derived stream is for.
///
/// Labels are encoded as stable byte strings, so adding a variant never
/// perturbs the streams of existing ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamLabel {
    /// Network weight initialisation.
    Init,
    /// Pixel-order shuffle for one fitting epoch.
    ShuffleEpoch(u32),
    /// Image-independent pixel permutation (block shuffle defence).
    Shuffle,
    /// Attack randomness (restart starting points, square proposals).
    Attack,
    /// Classifier-training randomness (batch order, augmentation).
    Training,
    /// Procedural dataset generation.
    Dataset,
    /// Evaluation-side randomness (subset sampling, mask fixtures).
    Evaluation,
}

impl StreamLabel {
    fn encode(self) -> Vec<u8> {
        match self {
            StreamLabel::Init => b"init".to_vec(),
            StreamLabel::ShuffleEpoch(n) => format!("shuffle-epoch:{n}").into_bytes(),
            StreamLabel::Shuffle => b"shuffle".to_vec(),
            StreamLabel::Attack => b"attack".to_vec(),
            StreamLabel::Training => b"training".to_vec(),
            StreamLabel::Dataset => b"dataset".to_vec(),
            StreamLabel::Evaluation => b"evaluation".to_vec(),
        }
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SPLIT_TAG: u64 = 0x5afe_5eed_0000_0001;

/// SplitMix64 finalising mix.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string, used to fold labels into seeds.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the stream for `(key, label)`.
pub fn derive_stream(key: PrivateKey, label: StreamLabel) -> RngStream {
    let base = mix64(key.to_bits() ^ fnv1a64(&label.encode()));
    RngStream { base, state: base }
}

/// A deterministic random stream (SplitMix64 walk).
///
/// Cloning captures the current position. [`RngStream::split`] derives a
/// child stream from the parent's *identity* rather than its position, so
/// substreams are stable no matter how many draws the parent has made —
/// this is what lets per-example work be farmed out in any order.
#[derive(Debug, Clone)]
pub struct RngStream {
    base: u64,
    state: u64,
}

impl RngStream {
    /// Next raw 64-bit value.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform integer in `[0, bound)`.
    ///
    /// Uses reduction modulo `bound`; the bias is below `bound / 2^64`,
    /// negligible for every bound used in this crate.
    #[inline]
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "next_below bound must be positive");
        self.next_u64() % bound
    }

    /// Uniform value in `[0, 1)` at full mantissa precision of `S`.
    #[inline]
    pub fn next_uniform<S: Scalar>(&mut self) -> S {
        S::unit_from_bits(self.next_u64())
    }

    /// Standard Gaussian via Box–Muller (computed in `f64`, then narrowed).
    pub fn next_gaussian<S: Scalar>(&mut self) -> S {
        // 1 - u keeps the log argument in (0, 1], avoiding ln(0).
        let u1 = 1.0 - f64::unit_from_bits(self.next_u64());
        let u2 = f64::unit_from_bits(self.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        S::of_f64(r * theta.cos())
    }

    /// Uniform permutation of `0..n` by Fisher–Yates. `n = 0` gives the
    /// empty permutation.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            perm.swap(i, j);
        }
        perm
    }

    /// Child stream number `index`, independent of this stream's position
    /// and of every sibling.
    pub fn split(&self, index: u64) -> RngStream {
        let base = mix64(self.base ^ mix64(SPLIT_TAG ^ index.wrapping_mul(GOLDEN_GAMMA)));
        RngStream { base, state: base }
    }
}
