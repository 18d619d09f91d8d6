//! Random inputs for oracle comparisons.

use rand::Rng;

use crate::Rec;

/// A random point of the simplex. Some draws are coarse grids of 1/20 so that
/// values land exactly on bin edges, some are one-hot.
pub fn random_probs(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    match rng.random_range(0..4) {
        0 => {
            let mut v = vec![0.0; len];
            v[rng.random_range(0..len)] = 1.0;
            v
        }
        1 => {
            let mut units = vec![0u32; len];
            for _ in 0..20 {
                units[rng.random_range(0..len)] += 1;
            }
            units.iter().map(|&u| u as f64 / 20.0).collect()
        }
        _ => {
            let raw: Vec<f64> = (0..len)
                .map(|_| -rng.random::<f64>().max(1e-300).ln())
                .collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| x / s).collect()
        }
    }
}

/// `n` records over `k` object classes: 60% matched, 20% unmatched
/// predictions (label `k`), 20% missing ground truth (one-hot background).
pub fn random_recs(rng: &mut impl Rng, n: usize, k: usize) -> Vec<Rec> {
    (0..n)
        .map(|_| match rng.random_range(0..10) {
            0..=5 => Rec {
                label: rng.random_range(0..k),
                probs: random_probs(rng, k + 1),
                missing: false,
            },
            6..=7 => Rec {
                label: k,
                probs: random_probs(rng, k + 1),
                missing: false,
            },
            _ => {
                let mut probs = vec![0.0; k + 1];
                probs[k] = 1.0;
                Rec {
                    label: rng.random_range(0..k),
                    probs,
                    missing: true,
                }
            }
        })
        .collect()
}

/// A box on a coarse 0.1 grid, which makes overlaps and IoU ties common.
pub fn grid_box(rng: &mut impl Rng) -> [f64; 4] {
    let x = rng.random_range(0..6) as f64 / 10.0;
    let y = rng.random_range(0..6) as f64 / 10.0;
    let w = rng.random_range(1..5) as f64 / 10.0;
    let h = rng.random_range(1..5) as f64 / 10.0;
    [x, y, (x + w).min(1.0), (y + h).min(1.0)]
}
