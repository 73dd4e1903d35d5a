//! Synthetic inputs shared by the criterion benches.

use std::f64::consts::TAU;

use hvox::{BaselineSet, PixelSet, Vec3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Baselines uniform in a uv disc of `radius` with w in `±radius/10`.
pub fn disc_baselines(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> BaselineSet {
    let pts = (0..n)
        .map(|_| {
            let r = radius * rng.random::<f64>().sqrt();
            let th = rng.random_range(0.0..TAU);
            [r * th.cos(), r * th.sin(), rng.random_range(-radius / 10.0..radius / 10.0)]
        })
        .collect();
    BaselineSet::new(pts).expect("finite baselines")
}

/// Pixels uniform on a cap of full opening `fov_deg` around +z.
pub fn cap_pixels(rng: &mut ChaCha8Rng, n: usize, fov_deg: f64) -> PixelSet {
    let half = (fov_deg / 2.0).to_radians();
    let pts = (0..n)
        .map(|_| {
            let z = 1.0 - rng.random_range(0.0..(1.0 - half.cos()));
            let ph = rng.random_range(0.0..TAU);
            let s = (1.0 - z * z).sqrt();
            [s * ph.cos(), s * ph.sin(), z]
        })
        .collect();
    PixelSet::with_unit_weights(pts).expect("unit pixels")
}

/// Dense Gaussian core holding `core_frac` of the points plus uniform outliers.
pub fn clustered(rng: &mut ChaCha8Rng, n: usize, scale: f64, core_frac: f64) -> Vec<Vec3> {
    let core = Normal::new(0.0, scale * 0.01).expect("positive sigma");
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < core_frac {
                [rng.sample(core), rng.sample(core), 0.1 * rng.sample(core)]
            } else {
                [0, 1, 2].map(|_| rng.random_range(-scale..scale))
            }
        })
        .collect()
}

pub fn gaussian_vis(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

pub fn gaussian_img(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}
