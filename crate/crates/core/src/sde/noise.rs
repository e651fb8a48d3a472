//! Reproducible Wiener increments.
//!
//! Every `(seed, path, lane)` triple owns one ChaCha8 stream, so a path
//! never depends on how many other paths ran before it or on which thread.
//! Lane 0 carries the slow-step increments of `W`. Lane 1 refines each slow
//! increment into fast sub-increments by Brownian-bridge sampling, so the
//! fast and slow equations are driven by one Wiener process and the slow
//! increments do not change with the number of substeps. Lane 2 drives the
//! frozen equation with an independent process.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    Slow = 0,
    Bridge = 1,
    Frozen = 2,
}

pub fn stream(seed: u64, path: u64, lane: Lane) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((path << 2) | lane as u64);
    rng
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Fills `out` with `sqrt(dt) Z`.
pub fn fill_increments<R: Rng + ?Sized>(rng: &mut R, dt: f64, out: &mut [f64]) {
    let s = dt.sqrt();
    for o in out.iter_mut() {
        *o = s * normal(rng);
    }
}

/// Splits a Wiener increment over `n` equal substeps of one slow step.
///
/// `remaining` holds the part of the slow increment not yet consumed and is
/// updated in place; `k` is the index of the substep being drawn.
pub struct Bridge {
    n: usize,
    h: f64,
}

impl Bridge {
    pub fn new(dt: f64, n: usize) -> Self {
        Self { n, h: dt / n as f64 }
    }

    pub fn substeps(&self) -> usize {
        self.n
    }

    pub fn sub_dt(&self) -> f64 {
        self.h
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, k: usize, remaining: &mut [f64], out: &mut [f64]) {
        let left = (self.n - k) as f64;
        if self.n - k == 1 {
            out.copy_from_slice(remaining);
            remaining.iter_mut().for_each(|r| *r = 0.0);
            return;
        }
        let frac = 1.0 / left;
        let sd = (self.h * (left - 1.0) / left).sqrt();
        for (o, r) in out.iter_mut().zip(remaining.iter_mut()) {
            let inc = *r * frac + sd * normal(rng);
            *o = inc;
            *r -= inc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: f64 = normal(&mut stream(7, 3, Lane::Slow));
        let b: f64 = normal(&mut stream(7, 3, Lane::Slow));
        let c: f64 = normal(&mut stream(7, 3, Lane::Frozen));
        let d: f64 = normal(&mut stream(7, 4, Lane::Slow));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn bridge_sums_to_slow_increment() {
        let mut rng = stream(1, 0, Lane::Bridge);
        let br = Bridge::new(0.1, 17);
        let total = [0.3, -0.2];
        let mut rem = total;
        let mut acc = [0.0; 2];
        let mut out = [0.0; 2];
        for k in 0..17 {
            br.draw(&mut rng, k, &mut rem, &mut out);
            acc[0] += out[0];
            acc[1] += out[1];
        }
        assert!((acc[0] - total[0]).abs() < 1e-14);
        assert!((acc[1] - total[1]).abs() < 1e-14);
    }

    #[test]
    fn bridge_substep_variance() {
        // Unconditionally each sub-increment has variance h.
        let dt = 1.0;
        let n = 4;
        let br = Bridge::new(dt, n);
        let mut slow = stream(2, 0, Lane::Slow);
        let mut fast = stream(2, 0, Lane::Bridge);
        let trials = 40_000;
        let mut var = vec![0.0; n];
        for _ in 0..trials {
            let mut rem = [dt.sqrt() * normal(&mut slow)];
            let mut out = [0.0];
            for (k, v) in var.iter_mut().enumerate() {
                br.draw(&mut fast, k, &mut rem, &mut out);
                *v += out[0] * out[0];
            }
        }
        for v in var {
            let v = v / trials as f64;
            assert!((v - 0.25).abs() < 0.02, "{v}");
        }
    }
}
