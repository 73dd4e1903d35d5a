//! Direct O(N_vis·N_pix) evaluation of analysis and synthesis.
//!
//! Ground truth for every accuracy check and the fallback strategy for small
//! blocks of a chunked plan.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{dot, BaselineSet, PixelSet, Vec3};

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::domain(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// `V_i = Σ_r I(r)·α(r)·exp(−j⟨r, p_i⟩)`.
pub fn direct_analysis(
    intensity: &[f64],
    pixels: &PixelSet,
    baselines: &BaselineSet,
) -> Result<Vec<Complex64>> {
    analysis_raw(intensity, pixels.points(), pixels.weights(), baselines.points())
}

/// `Î(r) = Re[Σ_i V_i·α(r)·exp(+j⟨r, p_i⟩)]`.
pub fn direct_synthesis(
    vis: &[Complex64],
    baselines: &BaselineSet,
    pixels: &PixelSet,
) -> Result<Vec<f64>> {
    synthesis_raw(vis, baselines.points(), pixels.points(), pixels.weights())
}

/// Slice form of [`direct_analysis`].
pub fn analysis_raw(
    intensity: &[f64],
    pixels: &[Vec3],
    weights: &[f64],
    baselines: &[Vec3],
) -> Result<Vec<Complex64>> {
    check_len("intensity", intensity.len(), pixels.len())?;
    check_len("weights", weights.len(), pixels.len())?;
    let mut out = vec![Complex64::new(0.0, 0.0); baselines.len()];
    analysis_into(intensity, pixels, weights, baselines, &mut out);
    Ok(out)
}

/// Slice form of [`direct_synthesis`].
pub fn synthesis_raw(
    vis: &[Complex64],
    baselines: &[Vec3],
    pixels: &[Vec3],
    weights: &[f64],
) -> Result<Vec<f64>> {
    check_len("visibilities", vis.len(), baselines.len())?;
    check_len("weights", weights.len(), pixels.len())?;
    let mut out = vec![0.0; pixels.len()];
    synthesis_into(vis, baselines, pixels, weights, &mut out);
    Ok(out)
}

/// Accumulates the analysis of one block into `out` (one entry per baseline).
pub(crate) fn analysis_into(
    intensity: &[f64],
    pixels: &[Vec3],
    weights: &[f64],
    baselines: &[Vec3],
    out: &mut [Complex64],
) {
    let run = |(p, o): (&Vec3, &mut Complex64)| {
        let mut acc = Complex64::new(0.0, 0.0);
        for ((r, &i), &a) in pixels.iter().zip(intensity).zip(weights) {
            let (s, c) = dot(r, p).sin_cos();
            let amp = i * a;
            acc.re += amp * c;
            acc.im -= amp * s;
        }
        *o += acc;
    };
    if baselines.len() * pixels.len() > PAR_THRESHOLD {
        baselines.par_iter().zip(out.par_iter_mut()).for_each(run);
    } else {
        baselines.iter().zip(out.iter_mut()).for_each(run);
    }
}

/// Accumulates the synthesis of one block into `out` (one entry per pixel).
pub(crate) fn synthesis_into(
    vis: &[Complex64],
    baselines: &[Vec3],
    pixels: &[Vec3],
    weights: &[f64],
    out: &mut [f64],
) {
    let run = |((r, &a), o): ((&Vec3, &f64), &mut f64)| {
        let mut acc = 0.0;
        for (p, v) in baselines.iter().zip(vis) {
            let (s, c) = dot(r, p).sin_cos();
            // Re[v·e^{jθ}]
            acc += v.re * c - v.im * s;
        }
        *o += a * acc;
    };
    if baselines.len() * pixels.len() > PAR_THRESHOLD {
        pixels
            .par_iter()
            .zip(weights.par_iter())
            .zip(out.par_iter_mut())
            .for_each(run);
    } else {
        pixels.iter().zip(weights).zip(out.iter_mut()).for_each(run);
    }
}

const PAR_THRESHOLD: usize = 1 << 16;
