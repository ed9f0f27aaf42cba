//! Counter-based random number streams.
//!
//! Every random draw in a run derives from a small integer key rather than from
//! a shared sequential generator. A [`KeyedStream`] is a SplitMix64 generator
//! whose state is an avalanche hash of its key parts, so streams with distinct
//! keys are statistically independent while equal keys reproduce bit-identical
//! output. A [`NoiseTable`] addresses one noise vector per `(time, slot)` pair
//! of a filter sweep, which lets two coupled particle systems (and a replay of
//! the same sweep) consume exactly the same innovations regardless of control
//! flow.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer (Stafford variant 13).
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Domain-separation tags so the chain stream, noise tables and data
/// generation never alias even under equal seeds.
pub(crate) mod tag {
    pub const CHAIN: u64 = 0x43_48_41_49_4e; // "CHAIN"
    pub const NOISE: u64 = 0x4e_4f_49_53_45; // "NOISE"
    pub const DATA: u64 = 0x44_41_54_41; // "DATA"
    pub const OBS: u64 = 0x4f_42_53; // "OBS"
}

/// A deterministic stream keyed by a sequence of integers.
///
/// The n-th output is a pure function of `(key, n)`; two streams built from
/// the same key parts agree bit-for-bit.
#[derive(Clone, Debug)]
pub struct KeyedStream {
    state: u64,
}

impl KeyedStream {
    pub fn from_key(parts: &[u64]) -> Self {
        let mut h: u64 = 0x243f_6a88_85a3_08d3; // pi fractional bits
        for &p in parts {
            h = mix64(h.wrapping_add(GOLDEN_GAMMA) ^ mix64(p));
        }
        KeyedStream { state: h }
    }

    /// Standard normal variate.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// Uniform variate on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random::<f64>(self)
    }
}

impl RngCore for KeyedStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        rand::rand_core::impls::fill_bytes_via_next(self, dest)
    }
}

/// Per-sweep table of propagation noise, keyed by
/// `(seed, replicate, sweep, time, slot)`.
///
/// Entries are standard normal vectors of length `noise_dim`, generated on
/// demand; regenerating with the same key yields bit-identical values. Both
/// systems of a coupled sweep read the same table, which is what makes pairs
/// of particles with matched ancestors coincide exactly.
#[derive(Clone, Debug)]
pub struct NoiseTable {
    base: u64,
    horizon: usize,
    slots: usize,
    noise_dim: usize,
}

impl NoiseTable {
    pub fn new(
        seed: u64,
        replicate: u64,
        sweep: u64,
        horizon: usize,
        slots: usize,
        noise_dim: usize,
    ) -> Self {
        let mut h = mix64(seed ^ mix64(tag::NOISE));
        h = mix64(h.wrapping_add(GOLDEN_GAMMA) ^ mix64(replicate));
        h = mix64(h.wrapping_add(GOLDEN_GAMMA) ^ mix64(sweep));
        NoiseTable {
            base: h,
            horizon,
            slots,
            noise_dim,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// The noise vector for time `t` and particle slot `slot`.
    pub fn noise_at(&self, t: usize, slot: usize) -> Result<Vec<f64>> {
        if t > self.horizon {
            return Err(Error::IndexOutOfRange {
                what: "time",
                got: t,
                limit: self.horizon + 1,
            });
        }
        if slot >= self.slots {
            return Err(Error::IndexOutOfRange {
                what: "slot",
                got: slot,
                limit: self.slots,
            });
        }
        let mut out = vec![0.0; self.noise_dim];
        self.fill(t, slot, &mut out);
        Ok(out)
    }

    /// Unchecked fast path used inside sweeps.
    #[inline]
    pub(crate) fn fill(&self, t: usize, slot: usize, out: &mut [f64]) {
        debug_assert!(t <= self.horizon && slot < self.slots);
        debug_assert_eq!(out.len(), self.noise_dim);
        let mut stream = self.entry_stream(t, slot);
        for x in out.iter_mut() {
            *x = stream.normal();
        }
    }

    #[inline]
    fn entry_stream(&self, t: usize, slot: usize) -> KeyedStream {
        let mut h = mix64(self.base.wrapping_add(GOLDEN_GAMMA) ^ mix64(t as u64));
        h = mix64(h.wrapping_add(GOLDEN_GAMMA) ^ mix64(slot as u64));
        KeyedStream { state: h }
    }
}

/// Stream used by one replicate for all sequential draws (resampling,
/// selection, initial particle filters).
pub fn replicate_stream(seed: u64, replicate: u64) -> KeyedStream {
    KeyedStream::from_key(&[tag::CHAIN, seed, replicate])
}
