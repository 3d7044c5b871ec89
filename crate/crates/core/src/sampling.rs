//! Low-discrepancy sample points for certificate checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Sampling {
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            n_samples: 100,
            seed: 0,
        }
    }
}

fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while k > 0 {
        out += (k % base) as f64 * f;
        k /= base;
        f *= inv;
    }
    out
}

fn prime(d: usize) -> u64 {
    if let Some(p) = PRIMES.get(d) {
        return *p as u64;
    }
    let mut candidate = *PRIMES.last().unwrap() as u64;
    let mut count = PRIMES.len() - 1;
    while count < d {
        candidate += 2;
        if (2..).take_while(|f| f * f <= candidate).all(|f| !candidate.is_multiple_of(f)) {
            count += 1;
        }
    }
    candidate
}

/// Randomly shifted Halton points in the unit cube. The shift makes
/// different seeds give different point sets with the same discrepancy.
pub fn unit_points(dim: usize, sampling: Sampling) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    (1..=sampling.n_samples as u64)
        .map(|k| {
            (0..dim)
                .map(|d| (radical_inverse(k, prime(d)) + shift[d]).fract())
                .collect()
        })
        .collect()
}

/// Points mapped into `[lower, upper]`, pulled inwards by `inset` of the
/// width on each side so interior-only formulas stay defined.
pub fn box_points(lower: &[f64], upper: &[f64], inset: f64, sampling: Sampling) -> Vec<Vec<f64>> {
    unit_points(lower.len(), sampling)
        .into_iter()
        .map(|u| {
            u.iter()
                .enumerate()
                .map(|(d, t)| {
                    let w = upper[d] - lower[d];
                    lower[d] + w * (inset + (1.0 - 2.0 * inset) * t)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }

    #[test]
    fn primes_extend_past_table() {
        assert_eq!(prime(0), 2);
        assert_eq!(prime(15), 53);
        assert_eq!(prime(16), 59);
        assert_eq!(prime(17), 61);
    }

    #[test]
    fn seeded_and_inside_box() {
        let s = Sampling { n_samples: 64, seed: 7 };
        let a = box_points(&[0.0, -1.0], &[1.0, 1.0], 0.01, s);
        assert_eq!(a, box_points(&[0.0, -1.0], &[1.0, 1.0], 0.01, s));
        assert_eq!(a.len(), 64);
        for p in &a {
            assert!(p[0] >= 0.01 && p[0] <= 0.99);
            assert!(p[1] >= -0.98 && p[1] <= 0.98);
        }
        let b = box_points(&[0.0, -1.0], &[1.0, 1.0], 0.01, Sampling { seed: 8, ..s });
        assert_ne!(a, b);
    }
}
