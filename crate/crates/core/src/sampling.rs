//! Seeded low-discrepancy samples. Every "inf over M" in the library is a
//! minimum over a prefix of one of these sequences, so larger samples can
//! only lower such minima.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{ChartPoint, SystemSpec};
use crate::error::Result;

/// Radius fractions cycled over the non-axis shell directions.
const SHELL_RADII: [f64; 4] = [1.0, 0.75, 0.5, 0.25];

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Halton sequence with a seeded Cranley-Patterson shift.
#[derive(Clone, Debug)]
pub struct Halton {
    shift: Vec<f64>,
    index: u64,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "Halton dimension {dim} unsupported");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..dim).map(|_| rng.random::<f64>()).collect();
        Self { shift, index: 1 }
    }

    pub fn next_into(&mut self, out: &mut [f64]) {
        for (k, (o, s)) in out.iter_mut().zip(&self.shift).enumerate() {
            let v = radical_inverse(self.index, PRIMES[k]) + s;
            *o = v - v.floor();
        }
        self.index += 1;
    }
}

/// The first `n` points of the seeded sequence, mapped onto `sys`.
pub fn sample_points(sys: &SystemSpec, n: usize, seed: u64) -> Vec<ChartPoint> {
    let dim = sys.sample_dim();
    let mut halton = Halton::new(dim, seed);
    let mut u = vec![0.0; dim];
    (0..n)
        .map(|_| {
            halton.next_into(&mut u);
            sys.point_from_unit(&u)
        })
        .collect()
}

/// Deterministic pseudo-random stream for times and perturbations.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A uniformly random unit vector of length `dim`.
pub fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// Independent stream for the `index`-th item of a parallel loop.
pub fn rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// The point at distance `r` from `x` along the chart direction `dir`,
/// located by bisection on the displacement length. The result satisfies
/// `d(x, result) <= r`.
pub fn ball_point(sys: &SystemSpec, x: &ChartPoint, dir: &[f64], r: f64) -> Result<ChartPoint> {
    let norm = dir.iter().map(|c| c * c).sum::<f64>().sqrt();
    let reach = |eps: f64| -> Result<(f64, ChartPoint)> {
        let y = sys.displace(x, dir, eps)?;
        Ok((sys.distance(x, &y)?, y))
    };
    let mut lo = 0.0;
    let mut lo_point = x.clone();
    let mut hi = r / norm;
    let (mut d_hi, mut hi_point) = reach(hi)?;
    let mut expansions = 0;
    while d_hi < r {
        if expansions == 30 {
            return Ok(hi_point);
        }
        lo = hi;
        lo_point = hi_point;
        hi *= 2.0;
        (d_hi, hi_point) = reach(hi)?;
        expansions += 1;
    }
    if d_hi == r {
        return Ok(hi_point);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (d_mid, mid_point) = reach(mid)?;
        if d_mid <= r {
            lo = mid;
            lo_point = mid_point;
        } else {
            hi = mid;
        }
    }
    Ok(lo_point)
}

/// `count` points of the closed ball `B(x, radius)`: first the positive and
/// negative coordinate axes at full radius, then random directions with radii
/// cycling through fractions of `radius`.
pub fn shell_points(
    sys: &SystemSpec,
    x: &ChartPoint,
    radius: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ChartPoint>> {
    let dim = x.dim();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let (dir, r) = if k < 2 * dim {
            let mut e = vec![0.0; dim];
            e[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
            (e, radius)
        } else {
            (
                unit_vector(rng, dim),
                radius * SHELL_RADII[k % SHELL_RADII.len()],
            )
        };
        out.push(ball_point(sys, x, &dir, r)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert_eq!(radical_inverse(6, 3), 2.0 / 9.0);
    }

    #[test]
    fn prefixes_are_nested() {
        let sys = SystemSpec::torus_translation_flow(vec![1.0, 0.5]).unwrap();
        let short = sample_points(&sys, 10, 7);
        let long = sample_points(&sys, 40, 7);
        assert_eq!(short[..], long[..10]);
        assert_ne!(sample_points(&sys, 10, 8), short);
    }

    #[test]
    fn shell_points_stay_in_the_ball() {
        let sys = SystemSpec::suspension_flow([[2, 1], [1, 1]], 1.0).unwrap();
        let x = sys.point(0, &[0.3, 0.8, 0.97]).unwrap();
        let mut r = rng(3);
        let shell = shell_points(&sys, &x, 0.01, 64, &mut r).unwrap();
        assert_eq!(shell.len(), 64);
        for (k, p) in shell.iter().enumerate() {
            let d = sys.distance(&x, p).unwrap();
            assert!(d <= 0.01, "{d}");
            if k < 6 {
                assert!(d > 0.01 - 1e-12, "axis point {k} at {d}");
            }
        }
    }
}
