//! Counter-based deterministic random numbers.
//!
//! Every draw hashes (seed, counter) with a splitmix64-style finalizer, so
//! identical state yields identical streams on every platform and streams
//! can be split by deriving a new seed without sharing mutable state.

use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> RngState {
        RngState { seed, counter: 0 }
    }

    /// Derive an independent stream keyed by a label (e.g. layer index, step).
    pub fn split(&self, label: u64) -> RngState {
        RngState {
            seed: mix(self.seed ^ 0x9e37_79b9_7f4a_7c15, label),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self.seed, self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform in the open interval (0, 1); never returns 0 or 1, so the
    /// value is safe under ln().
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Standard Gumbel(0, 1) noise, -ln(-ln(U)).
    pub fn gumbel(&mut self) -> f64 {
        -math::ln(-math::ln(self.uniform()))
    }

    pub fn fill_uniform(&mut self, out: &mut [f64], lo: f64, hi: f64) {
        for v in out {
            *v = self.uniform_in(lo, hi);
        }
    }

    pub fn fill_normal(&mut self, out: &mut [f64], mean: f64, stddev: f64) {
        for v in out {
            *v = mean + stddev * self.normal();
        }
    }
}

#[inline]
fn mix(seed: u64, counter: u64) -> u64 {
    let mut z = counter
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(seed ^ 0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_state_same_stream() {
        let mut a = RngState::new(7);
        let mut b = RngState::new(7);
        for _ in 0..1_000_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn counter_resume_matches() {
        let mut a = RngState::new(3);
        for _ in 0..100 {
            a.next_u64();
        }
        let mut b = RngState { seed: 3, counter: 100 };
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_is_open_interval() {
        let mut r = RngState::new(11);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn split_streams_differ() {
        let base = RngState::new(5);
        let mut a = base.split(0);
        let mut b = base.split(1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut r = RngState::new(42);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let x = r.normal();
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }
}
