//! Deterministic counter-based random streams.
//!
//! Every random draw in the pipeline is addressed rather than sequenced: a
//! stream is a pure function of `(key, counter)`, where the key folds a root
//! seed with domain tags and step indices. Parallel workers therefore read the
//! same numbers regardless of scheduling order, and reverse-chain step `t`
//! always sees the same noise tensor for a given `(seed, t)` — which is what
//! makes shared-prefix assertions between sampling strategies exact.
//!
//! `word(key, ctr)` is the SplitMix64 output function evaluated at state
//! `key + ctr·GAMMA`, i.e. position `ctr` of the SplitMix64 sequence seeded at
//! `key`.

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline(always)]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a stream key from a root seed and a list of tag words.
///
/// Tags are mixed in order, so `key(s, &[a, b])` and `key(s, &[b, a])` are
/// unrelated streams.
pub fn key(seed: u64, parts: &[u64]) -> u64 {
    let mut k = mix(seed.wrapping_add(GAMMA));
    for &p in parts {
        k = mix(k ^ p.wrapping_mul(GAMMA));
    }
    k
}

/// The raw 64-bit word at position `ctr` of stream `key`.
#[inline(always)]
pub fn word(key: u64, ctr: u64) -> u64 {
    mix(key.wrapping_add(ctr.wrapping_mul(GAMMA)))
}

/// Uniform draw in the half-open unit interval (0, 1].
///
/// The lower bound is excluded so the value is always a valid Box-Muller
/// radius argument.
#[inline(always)]
pub fn unit(key: u64, ctr: u64) -> f64 {
    ((word(key, ctr) >> 11) as f64 + 1.0) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal draw at position `i` of stream `key` (Box-Muller).
///
/// Consumes counters `2i` and `2i + 1`; random access by index is O(1).
#[inline]
pub fn normal(key: u64, i: u64) -> f64 {
    let u1 = unit(key, 2 * i);
    let u2 = unit(key, 2 * i + 1);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Fills `out` with independent standard normals from stream `key`.
pub fn fill_normal(key: u64, out: &mut [f64]) {
    for (i, v) in out.iter_mut().enumerate() {
        *v = normal(key, i as u64);
    }
}

/// Unbiased-enough index draw in `[0, n)` via the widening-multiply trick.
#[inline(always)]
pub fn index(key: u64, ctr: u64, n: usize) -> usize {
    debug_assert!(n > 0);
    ((word(key, ctr) as u128 * n as u128) >> 64) as usize
}

/// Sequential convenience over a single stream.
///
/// Counter discipline: `next_word` and `next_unit` consume one counter,
/// `next_normal` consumes two, so interleaving draw kinds stays reproducible.
#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    ctr: u64,
}

impl Stream {
    /// Opens the stream for `seed` tagged with `parts`.
    pub fn new(seed: u64, parts: &[u64]) -> Self {
        Stream { key: key(seed, parts), ctr: 0 }
    }

    pub fn next_word(&mut self) -> u64 {
        let w = word(self.key, self.ctr);
        self.ctr += 1;
        w
    }

    pub fn next_unit(&mut self) -> f64 {
        let u = unit(self.key, self.ctr);
        self.ctr += 1;
        u
    }

    pub fn next_normal(&mut self) -> f64 {
        let u1 = unit(self.key, self.ctr);
        let u2 = unit(self.key, self.ctr + 1);
        self.ctr += 2;
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.next_unit() - f64::EPSILON).max(0.0)
    }

    /// Uniform index in `[0, n)`.
    pub fn next_index(&mut self, n: usize) -> usize {
        let w = self.next_word();
        ((w as u128 * n as u128) >> 64) as usize
    }
}
