#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use hvox::{BaselineSet, BoundingBox, ChunkSet, HeisenbergDims, PixelSet, Vec3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Baselines uniform in a uv disc of `radius`, w uniform in `±wmax`.
pub fn disc_baselines(rng: &mut ChaCha8Rng, n: usize, radius: f64, wmax: f64) -> BaselineSet {
    let pts = (0..n)
        .map(|_| loop {
            let u: f64 = rng.random_range(-radius..radius);
            let v: f64 = rng.random_range(-radius..radius);
            if u * u + v * v <= radius * radius {
                break [u, v, rng.random_range(-wmax..wmax)];
            }
        })
        .collect();
    BaselineSet::new(pts).unwrap()
}

/// Pixels uniform on the spherical cap of full opening `fov_deg` around +z.
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
    PixelSet::with_unit_weights(pts).unwrap()
}

pub fn gaussian_vis(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

pub fn gaussian_img(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn rel_err_real(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = want.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

pub fn rel_err_complex(got: &[Complex64], want: &[Complex64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = want.iter().map(|b| b.norm_sqr()).sum();
    (num / den).sqrt()
}

/// `Re⟨V, A I⟩` and `⟨Aᴴ V, I⟩` for the real inner product.
pub fn adjoint_gap(vis: &[Complex64], analysed: &[Complex64], img: &[f64], synthesised: &[f64]) -> f64 {
    let lhs: f64 = vis.iter().zip(analysed).map(|(v, a)| (v.conj() * a).re).sum();
    let rhs: f64 = synthesised.iter().zip(img).map(|(s, i)| s * i).sum();
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs())
}

/// Dense Gaussian core plus three logarithmic spiral arms of outliers.
pub fn clustered_spiral(rng: &mut ChaCha8Rng, n: usize, rmax: f64, core_frac: f64, core_sigma: f64) -> Vec<Vec3> {
    let g = Normal::new(0.0, rmax * core_sigma).unwrap();
    let n_core = (n as f64 * core_frac) as usize;
    let mut pts: Vec<Vec3> = (0..n_core)
        .map(|_| [g.sample(rng), g.sample(rng), 0.1 * g.sample(rng)])
        .collect();
    for i in 0..n - n_core {
        let t: f64 = rng.random_range(0.0..1.0);
        let r = rmax * (0.05 + 0.95 * t);
        let th = (i % 3) as f64 * TAU / 3.0 + 3.0 * PI * t;
        pts.push([
            r * th.cos() + 0.2 * g.sample(rng),
            r * th.sin() + 0.2 * g.sample(rng),
            0.1 * g.sample(rng),
        ]);
    }
    pts
}

/// A few Gaussian clusters of random size plus uniform outliers.
pub fn random_clusters(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vec3> {
    let n_clusters = rng.random_range(1..6);
    let centres: Vec<(Vec3, f64)> = (0..n_clusters)
        .map(|_| {
            let c = [0, 1, 2].map(|_| rng.random_range(-scale..scale));
            (c, scale * rng.random_range(0.005..0.1))
        })
        .collect();
    (0..n)
        .map(|i| {
            if rng.random_range(0.0..1.0) < 0.05 {
                [0, 1, 2].map(|_| rng.random_range(-scale..scale))
            } else {
                let (c, s) = centres[i % n_clusters];
                let g = Normal::new(0.0, s).unwrap();
                [c[0] + g.sample(rng), c[1] + g.sample(rng), c[2] + g.sample(rng)]
            }
        })
        .collect()
}

pub fn bbox_from_extents(e: Vec3) -> BoundingBox {
    BoundingBox { min: [0.0; 3], max: e }
}

/// Largest violation of the box-sizing constraints, in log units.
/// Non-positive caps count as an infinite violation.
pub fn violation(d: &HeisenbergDims, be: &Vec3, pe: &Vec3, cap: f64, alpha: f64) -> f64 {
    if (0..3).any(|k| !(d.h[k] > 0.0 && d.eta[k] > 0.0)) {
        return f64::INFINITY;
    }
    let la = alpha.ln();
    let prod: f64 = (0..3).map(|k| (d.h[k] * d.eta[k]).ln()).sum();
    let mut worst = (prod - cap.ln()).max(0.0);
    for k in 0..3 {
        worst = worst.max((d.h[k] / be[k]).ln()).max((d.eta[k] / pe[k]).ln());
        for j in 0..3 {
            let r = [
                if k != j { (d.h[k] / d.h[j] * be[j] / be[k]).ln() } else { 0.0 },
                if k != j { (d.eta[k] / d.eta[j] * pe[j] / pe[k]).ln() } else { 0.0 },
                (d.h[k] / d.eta[j] * pe[j] / be[k]).ln(),
            ];
            for x in r {
                worst = worst.max(x.abs() - la);
            }
        }
    }
    worst
}

/// Smallest chunk count over a log-spaced grid of `pts` values per variable,
/// checking every constraint in the original variables.
pub fn grid_search(be: &Vec3, pe: &Vec3, cap: f64, alpha: f64, pts: usize) -> f64 {
    let ext: Vec<f64> = be.iter().chain(pe).copied().collect();
    let need = ext.iter().map(|e| e.ln()).sum::<f64>() - cap.ln();
    let la = alpha.ln();
    let range = need.max(0.0) / 6.0 + la + 0.5;
    let steps: Vec<f64> = (0..pts).map(|i| range * i as f64 / (pts - 1) as f64).collect();
    let mut best = f64::INFINITY;
    let mut vals = [0.0f64; 6];
    fn rec(depth: usize, vals: &mut [f64; 6], ext: &[f64], steps: &[f64], cap: f64, la: f64, best: &mut f64) {
        if depth == 6 {
            let h: Vec<f64> = (0..6).map(|i| ext[i] * (-vals[i]).exp()).collect();
            let prod: f64 = h.iter().product();
            if prod > cap * (1.0 + 1e-12) {
                return;
            }
            let count: f64 = (0..6).map(|i| ext[i] / h[i]).product();
            *best = best.min(count);
            return;
        }
        for &s in steps {
            vals[depth] = s;
            // Every pair of scaled caps must stay within α of each other.
            let ok = (0..depth).all(|u| {
                let (hu, hd) = (ext[u] * (-vals[u]).exp(), ext[depth] * (-s).exp());
                ((hu / ext[u]) / (hd / ext[depth])).ln().abs() <= la + 1e-12
            });
            if ok {
                rec(depth + 1, vals, ext, steps, cap, la, best);
            }
        }
    }
    rec(0, &mut vals, &ext, &steps, cap, la, &mut best);
    best
}

/// Exhaustive certificate that no two chunks can still be merged.
pub fn check_fixpoint(cs: &ChunkSet, h: &Vec3) -> Result<(), String> {
    let b = cs.boxes();
    for i in 0..b.len() {
        for j in i + 1..b.len() {
            if b[i].union(&b[j]).fits_within(h) {
                return Err(format!("chunks {i} and {j} are still fusible"));
            }
        }
    }
    Ok(())
}

/// Cover, disjointness, tight boxes and extents within `h`.
pub fn check_partition(cs: &ChunkSet, points: &[Vec3], h: &Vec3) -> Result<(), String> {
    let mut seen = vec![false; points.len()];
    let mut total = 0;
    for c in 0..cs.len() {
        let m = cs.members(c);
        if m.is_empty() {
            return Err(format!("chunk {c} is empty"));
        }
        let mut tight = BoundingBox::from_point(&points[m[0]]);
        for &i in m {
            if seen[i] {
                return Err(format!("point {i} in two chunks"));
            }
            seen[i] = true;
            if cs.membership()[i] != c {
                return Err(format!("membership of point {i} disagrees with chunk {c}"));
            }
            tight.include(&points[i]);
        }
        if tight != cs.boxes()[c] {
            return Err(format!("box of chunk {c} is not tight"));
        }
        if !tight.fits_within(h) {
            return Err(format!("chunk {c} exceeds the cap"));
        }
        total += m.len();
    }
    if total != points.len() || !seen.iter().all(|&s| s) {
        return Err(format!("{total} of {} points covered", points.len()));
    }
    if cs.counts().iter().sum::<usize>() != points.len() {
        return Err("counts do not sum to the point count".into());
    }
    Ok(())
}
