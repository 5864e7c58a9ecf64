//! Counter-based deterministic random streams.
//!
//! Every source of randomness in this crate is a named stream derived from a
//! user-visible seed plus a list of tags (parameter index, checkpoint index,
//! purpose label). Regenerating with the same seed and tags reproduces the
//! same bytes on any platform, with no global state.

/// splitmix64 step; the standard finalizer-quality mixer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic stream of pseudo-random values.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

impl Stream {
    /// Stream keyed by a seed alone.
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        // one warm-up step so seed 0 does not start at the raw constant
        splitmix64(&mut state);
        Stream { state }
    }

    /// Stream keyed by a seed plus a purpose label and integer tags.
    ///
    /// Distinct (label, tags) pairs yield statistically independent streams.
    pub fn keyed(seed: u64, label: &str, tags: &[u64]) -> Self {
        let mut state = seed;
        splitmix64(&mut state);
        for byte in label.as_bytes() {
            state ^= u64::from(*byte);
            splitmix64(&mut state);
        }
        for tag in tags {
            state ^= *tag;
            splitmix64(&mut state);
        }
        Stream { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        // 53 high bits -> exactly representable dyadic rationals in [0,1)
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller. Consumes two uniforms per call.
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // modulo bias is negligible for desk-scale n against 2^64
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
