//! Exact sample paths of the continuous-time walk.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::Exp1;

use super::WalkKernel;
use crate::rng::KeyedStream;

/// Piecewise-constant path on `[0, horizon]` started at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    dim: usize,
    pub horizon: f64,
    /// Strictly increasing jump times in `(0, horizon]`.
    pub jump_times: Vec<f64>,
    /// Positions after each jump, flattened; entry 0 is the origin.
    positions: Vec<i64>,
}

impl WalkPath {
    pub fn jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// Position held on the `i`-th constant stretch (`i = 0` before the first jump).
    pub fn state(&self, i: usize) -> &[i64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn end(&self) -> &[i64] {
        self.state(self.jumps())
    }

    pub fn position_at(&self, t: f64) -> &[i64] {
        let i = self.jump_times.partition_point(|&s| s <= t);
        self.state(i)
    }
}

/// Reusable sampler holding the jump-choice table.
#[derive(Debug, Clone)]
pub struct WalkSampler<'a> {
    kernel: &'a WalkKernel,
    choice: WeightedIndex<f64>,
}

impl<'a> WalkSampler<'a> {
    pub fn new(kernel: &'a WalkKernel) -> Self {
        let choice = WeightedIndex::new(kernel.jumps().jumps().iter().map(|j| j.p))
            .expect("validated jump masses");
        Self { kernel, choice }
    }

    pub fn sample(&self, horizon: f64, stream: &mut KeyedStream) -> WalkPath {
        let d = self.kernel.dim();
        let rate = self.kernel.rate();
        let mut jump_times = Vec::new();
        let mut positions = vec![0i64; d];
        let mut t = 0.0;
        loop {
            let wait: f64 = Exp1.sample(stream);
            t += wait / rate;
            if t > horizon {
                break;
            }
            let z = &self.kernel.jumps().jumps()[self.choice.sample(stream)].vec;
            let base = positions.len() - d;
            for k in 0..d {
                positions.push(positions[base + k] + z[k]);
            }
            jump_times.push(t);
        }
        WalkPath {
            dim: d,
            horizon,
            jump_times,
            positions,
        }
    }
}

/// One path on `[0, horizon]`; deterministic given the stream.
pub fn sample_walk_path(kernel: &WalkKernel, horizon: f64, stream: &mut KeyedStream) -> WalkPath {
    WalkSampler::new(kernel).sample(horizon, stream)
}

/// `int_0^T 1{a_s = b_s} ds`, exact, by merging the two jump sequences.
pub fn overlap_time(a: &WalkPath, b: &WalkPath) -> f64 {
    overlap_time_until(a, b, a.horizon.min(b.horizon))
}

/// Overlap up to `t`, clipped to the common horizon of the two paths.
pub fn overlap_time_until(a: &WalkPath, b: &WalkPath, t: f64) -> f64 {
    let horizon = t.min(a.horizon).min(b.horizon);
    if horizon <= 0.0 {
        return 0.0;
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut start = 0.0;
    let mut total = 0.0;
    loop {
        let next_a = a.jump_times.get(i).copied().unwrap_or(f64::INFINITY);
        let next_b = b.jump_times.get(j).copied().unwrap_or(f64::INFINITY);
        let end = next_a.min(next_b).min(horizon);
        if a.state(i) == b.state(j) {
            total += end - start;
        }
        if end >= horizon {
            return total;
        }
        if next_a <= next_b {
            i += 1;
        }
        if next_b <= next_a {
            j += 1;
        }
        start = end;
    }
}
