//! Counter-based random numbers.
//!
//! Every Gaussian increment and every walk draw is a pure function of a
//! 64-bit seed and an integer counter, computed with Philox4x32-10. Nothing
//! depends on traversal order or on how work is split across threads.

use rand_core::{impls, RngCore};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Stream tags occupying the last counter word.
pub(crate) const TAG_NOISE: u32 = 0x4E4F_4953;
pub(crate) const TAG_WALK: u32 = 0x5741_4C4B;
pub(crate) const TAG_AUX: u32 = 0x4155_5821;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
#[inline]
pub fn philox4x32(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

#[inline(always)]
fn seed_key(seed: u64) -> [u32; 2] {
    [seed as u32, (seed >> 32) as u32]
}

/// 53-bit uniform on [0, 1).
#[inline(always)]
fn unit(hi: u32, lo: u32) -> f64 {
    ((((hi as u64) << 32) | lo as u64) >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Two independent standard normals (Box–Muller) from one Philox block.
#[inline]
pub fn normal_pair(counter: [u32; 4], seed: u64) -> (f64, f64) {
    let r = philox4x32(counter, seed_key(seed));
    // 1 - U lies in (0, 1], so the log is finite.
    let u1 = 1.0 - unit(r[0], r[1]);
    let u2 = unit(r[2], r[3]);
    let radius = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (radius * c, radius * s)
}

/// Deterministic Gaussian driving field.
///
/// The standard normal attached to `(replica, site, step)` is fixed by the
/// seed alone; the Brownian increment is that normal times `sqrt(dt)`.
/// Sites are paired (2j, 2j+1) through one Box–Muller draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoisePlan {
    pub seed: u64,
}

impl NoisePlan {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    #[inline]
    fn counter(replica: u64, pair: u64, step: u64) -> [u32; 4] {
        debug_assert!(pair <= u32::MAX as u64 && step <= u32::MAX as u64);
        [
            pair as u32,
            step as u32,
            replica as u32,
            TAG_NOISE ^ ((replica >> 32) as u32).rotate_left(16),
        ]
    }

    /// Standard normal for one site.
    pub fn standard_normal(&self, replica: u64, site: usize, step: usize) -> f64 {
        let (a, b) = normal_pair(Self::counter(replica, (site / 2) as u64, step as u64), self.seed);
        if site % 2 == 0 {
            a
        } else {
            b
        }
    }

    /// Brownian increment over a step of length `dt`.
    pub fn increment(&self, replica: u64, site: usize, step: usize, dt: f64) -> f64 {
        dt.sqrt() * self.standard_normal(replica, site, step)
    }

    /// Fills `out[site]` with the increments of every site for one step.
    /// Agrees bit-for-bit with [`NoisePlan::increment`].
    pub fn fill_increments(&self, replica: u64, step: usize, dt: f64, out: &mut [f64]) {
        let scale = dt.sqrt();
        let mut chunks = out.chunks_exact_mut(2);
        let mut pair = 0u64;
        for chunk in &mut chunks {
            let (a, b) = normal_pair(Self::counter(replica, pair, step as u64), self.seed);
            chunk[0] = scale * a;
            chunk[1] = scale * b;
            pair += 1;
        }
        if let [last] = chunks.into_remainder() {
            let (a, _) = normal_pair(Self::counter(replica, pair, step as u64), self.seed);
            *last = scale * a;
        }
    }
}

/// Sequential stream keyed by `(seed, stream id, tag)`, usable with `rand`
/// distributions. Block `i` of the stream is Philox at counter `(i, id, tag)`.
#[derive(Debug, Clone)]
pub struct KeyedStream {
    key: [u32; 2],
    id: u64,
    tag: u32,
    block: u32,
    buf: [u32; 4],
    used: usize,
}

impl KeyedStream {
    pub fn new(seed: u64, id: u64, tag: u32) -> Self {
        Self {
            key: seed_key(seed),
            id,
            tag,
            block: 0,
            buf: [0; 4],
            used: 4,
        }
    }

    pub fn walk(seed: u64, path_id: u64) -> Self {
        Self::new(seed, path_id, TAG_WALK)
    }

    pub fn aux(seed: u64, id: u64) -> Self {
        Self::new(seed, id, TAG_AUX)
    }

    fn refill(&mut self) {
        self.buf = philox4x32(
            [self.block, self.id as u32, (self.id >> 32) as u32, self.tag],
            self.key,
        );
        self.block = self.block.wrapping_add(1);
        self.used = 0;
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        let hi = self.next_u32();
        let lo = self.next_u32();
        unit(hi, lo)
    }
}

impl RngCore for KeyedStream {
    fn next_u32(&mut self) -> u32 {
        if self.used == 4 {
            self.refill();
        }
        let v = self.buf[self.used];
        self.used += 1;
        v
    }

    fn next_u64(&mut self) -> u64 {
        impls::next_u64_via_u32(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}
