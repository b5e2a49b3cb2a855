//! Counter-based random streams.
//!
//! Every draw is a pure function of `(key, counter)`: output `i` of a stream is
//! `mix64(key + (i + 1) * GOLDEN_GAMMA)`, the SplitMix64 output function applied
//! to a counter. Streams for independent simulation cells are obtained by
//! hashing the cell coordinates into the key, so no generator state is ever
//! shared between cells. Gaussians use the Box–Muller transform with `libm`
//! transcendental functions, which makes sampled values bit-identical
//! across platforms.

/// Identifier recorded in run metadata.
pub const PRNG_ID: &str = "splitmix64-counter+box-muller(libm)";

mod batch;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a sequence of words into a stream key. Order-sensitive.
pub fn derive_key(words: &[u64]) -> u64 {
    words.iter().fold(0x6a09_e667_f3bc_c909, |acc, &w| mix64(acc ^ mix64(w.wrapping_add(GOLDEN_GAMMA))))
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
    spare: Option<f64>,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        CounterRng { key, counter: 0, spare: None }
    }

    /// A stream keyed by `derive_key(words)`.
    pub fn from_words(words: &[u64]) -> Self {
        Self::new(derive_key(words))
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Number of 64-bit words consumed so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..bound` (Lemire's multiply-shift with rejection).
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = (self.next_u64() as u128) * (bound as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// `u1` in `(0, 1]` so the log is finite.
    #[inline]
    fn next_open_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    fn gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_open_unit();
        let u2 = self.next_f64();
        box_muller(u1, u2)
    }

    /// Standard normal via Box–Muller; the second variate of each pair is cached.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (a, b) = self.gaussian_pair();
        self.spare = Some(b);
        a
    }

    /// Fills `out` with the next `out.len()` values of [`next_gaussian`](Self::next_gaussian).
    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        let mut rest = out;
        if let Some(z) = self.spare.take() {
            match rest.split_first_mut() {
                Some((first, tail)) => {
                    *first = z;
                    rest = tail;
                }
                None => {
                    self.spare = Some(z);
                    return;
                }
            }
        }
        let even = rest.len() & !1;
        let (paired, last) = rest.split_at_mut(even);
        let (mut u1, mut u2) = ([0.0; batch::BLOCK], [0.0; batch::BLOCK]);
        for chunk in paired.chunks_mut(2 * batch::BLOCK) {
            let m = chunk.len() / 2;
            for i in 0..m {
                u1[i] = self.next_open_unit();
                u2[i] = self.next_f64();
            }
            batch::box_muller_block(&u1[..m], &u2[..m], chunk);
        }
        if let [last] = last {
            *last = self.next_gaussian();
        }
    }
}

#[inline]
fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let r = libm::sqrt(-2.0 * libm::log(u1));
    let (sin, cos) = libm::sincos(2.0 * std::f64::consts::PI * u2);
    (r * cos, r * sin)
}
