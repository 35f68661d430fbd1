//! Deterministic random number generation.
//!
//! Everything stochastic in the crate (weight init, batch shuffling, the
//! simulator's noise) draws from this one generator so that a run is fully
//! reproduced by its seed on any platform. The generator is xoshiro256++,
//! seeded through splitmix64; both are fixed algorithms with published test
//! vectors, so the stream can never shift underneath us the way an external
//! crate's default generator might across versions.

use crate::fmath;

/// splitmix64 step, used to expand a single u64 seed into generator state.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes words into one derived seed, order-sensitively, with full
/// avalanche per word. Used to key per-run, per-frame, and per-pixel
/// streams without string formatting.
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc: u64 = 0x6a09_e667_f3bc_c908;
    for &p in parts {
        let mut s = acc ^ p;
        acc = splitmix64(&mut s);
    }
    acc
}

/// FNV-1a over a label, used to derive independent substreams by name.
fn hash_label(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// xoshiro256++ generator with Box-Muller normal sampling.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
    /// Box-Muller produces normals in pairs; the spare is held here.
    cached_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng {
            s,
            cached_normal: None,
        }
    }

    /// Independent substream identified by a label, e.g. the module being
    /// initialized or the run being simulated. Streams derived from the same
    /// seed with different labels are uncorrelated, and consuming one never
    /// shifts another.
    pub fn derive(seed: u64, label: &str) -> Self {
        Rng::new(seed ^ hash_label(label))
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log argument is never zero.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = fmath::sqrt(-2.0 * fmath::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.cached_normal = Some(r * fmath::sin(theta));
        r * fmath::cos(theta)
    }

    /// Normal with the given mean and standard deviation.
    pub fn normal_scaled(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.normal()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        let n = items.len();
        if n < 2 {
            return;
        }
        for i in (1..n).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
