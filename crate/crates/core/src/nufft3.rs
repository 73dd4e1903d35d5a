//! Monolithic 3D type-3 NUFFT between baselines and sky pixels.
//!
//! Synthesis runs: pre-phase at baselines, spread onto a centred uniform
//! grid, per-node correction, inverse FFT, interpolation at pixels, and a
//! per-pixel deconvolution with the post-phase. Analysis is the exact adjoint
//! of that chain.
//!
//! Per axis, with source half-extent `X`, target half-extent `S`, source grid
//! spacing `Δx` and target spacing `Δs = 2π/(nΔx)`:
//!
//! ```text
//! g(s) ≈ (2π/n)/Ψx(s) · Σ_m ψs(mΔs − s) · Σ_a e^{2πj·am/n} · G_a / Ψs(aΔx)
//! ```
//!
//! where `G` is the spread grid and `Ψ` the continuous kernel transforms.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{bounding_box, dot, BaselineSet, BoundingBox, PixelSet, Vec3};
use crate::grid::{grid_bytes, Fft3, UniformGrid3};
use crate::kernel::{es_kernel_eval, gauss_legendre, shape_for, KernelSpec, FT_QUADRATURE_ORDER};

const MAX_SUPPORT: usize = 64;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Precomputed quadrature for `Ψ(ξ)` at fixed shape and half-width.
///
/// The integrand is even in θ, so only the positive Gauss–Legendre nodes are
/// kept, with doubled weights.
struct KernelFt {
    terms: Vec<(f64, f64)>,
}

impl KernelFt {
    fn new(beta: f64, halfwidth: f64) -> Self {
        let (nodes, weights) = gauss_legendre(FT_QUADRATURE_ORDER);
        let scale = PI / 2.0;
        let terms = nodes
            .iter()
            .zip(&weights)
            .filter(|(t, _)| **t > 0.0)
            .map(|(&t, &w)| {
                let (s, c) = (scale * t).sin_cos();
                (halfwidth * s, 2.0 * w * scale * halfwidth * (beta * (c - 1.0)).exp() * c)
            })
            .collect();
        Self { terms }
    }

    #[inline]
    fn eval(&self, xi: f64) -> f64 {
        self.terms.iter().map(|&(z, w)| w * (xi * z).cos()).sum()
    }
}

/// Grid geometry for one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisLayout {
    pub n: usize,
    /// Index of the node at the box centre.
    pub origin: usize,
    /// Source-side spacing Δx.
    pub dx: f64,
    /// Target-side spacing Δs = 2π/(nΔx).
    pub ds: f64,
    /// Source half-extent X.
    pub half_src: f64,
    /// Target half-extent S.
    pub half_tgt: f64,
    /// Upsampling seen by the spreading kernel, `π/(SΔx)`.
    pub sigma_src: f64,
    /// Upsampling seen by the interpolation kernel, `nΔx/(2X + N_sΔx)`.
    pub sigma_tgt: f64,
    /// Shape of the kernel spreading at baselines.
    pub beta_src: f64,
    /// Shape of the kernel interpolating at pixels.
    pub beta_tgt: f64,
}

/// Fine-grid size for one axis, `next_smooth(υ·B·P/(2π) + 2·N_s)`.
pub fn axis_size(src_extent: f64, tgt_extent: f64, kernel: &KernelSpec) -> usize {
    padded_axis_size(src_extent, tgt_extent, kernel.upsamp, kernel.support)
}

pub(crate) fn padded_axis_size(src_extent: f64, tgt_extent: f64, upsamp: f64, support: usize) -> usize {
    let raw = upsamp * src_extent * tgt_extent / (2.0 * PI) + 2.0 * support as f64;
    crate::kernel::next_smooth(raw.ceil() as usize)
}

/// Fine-grid dims for a pair of boxes.
pub fn grid_dims(src: &BoundingBox, tgt: &BoundingBox, kernel: &KernelSpec) -> [usize; 3] {
    let b = src.extents();
    let p = tgt.extents();
    [0, 1, 2].map(|k| axis_size(b[k], p[k], kernel))
}

fn axis_layout(half_src: f64, half_tgt: f64, kernel: &KernelSpec) -> AxisLayout {
    let n = axis_size(2.0 * half_src, 2.0 * half_tgt, kernel);
    let w = kernel.support as f64;
    let nf = n as f64;
    let sigma = kernel.upsamp.sqrt();
    // Δx balances the two aliasing margins SΔx/π and 2(X + wΔx/2)/(nΔx).
    let dx = if half_tgt > 0.0 {
        let a = nf * half_tgt / PI;
        (w + (w * w + 8.0 * a * half_src).sqrt()) / (2.0 * a)
    } else if half_src > 0.0 {
        4.0 * sigma * half_src / (nf - sigma * w)
    } else {
        1.0
    };
    let ds = 2.0 * PI / (nf * dx);
    let sigma_src = if half_tgt > 0.0 { PI / (half_tgt * dx) } else { 2.0 }.clamp(1.01, 2.0);
    let sigma_tgt = (nf * dx / (2.0 * half_src + w * dx)).clamp(1.01, 2.0);
    AxisLayout {
        n,
        origin: n / 2,
        dx,
        ds,
        half_src,
        half_tgt,
        sigma_src,
        sigma_tgt,
        beta_src: shape_for(kernel.support, sigma_src),
        beta_tgt: shape_for(kernel.support, sigma_tgt),
    }
}

/// Immutable plan for one (baselines, pixels) pair.
pub struct Nufft3Plan {
    kernel: KernelSpec,
    stencil_src: Stencil,
    stencil_tgt: Stencil,
    axes: [AxisLayout; 3],
    src_box: BoundingBox,
    tgt_box: BoundingBox,
    src_center: Vec3,
    tgt_center: Vec3,
    src_grid: Vec<[f64; 3]>,
    tgt_grid: Vec<[f64; 3]>,
    src_phase: Vec<Complex64>,
    /// `α(r)·e^{j⟨r, c_p⟩} / Π Ψx(s_k)`.
    tgt_factor: Vec<Complex64>,
    /// Per-axis node correction, including the centring phase.
    node_corr: [Vec<Complex64>; 3],
    /// Per-axis phase undoing the centred output layout.
    out_phase: [Vec<Complex64>; 3],
    fft: Fft3,
}

impl std::fmt::Debug for Nufft3Plan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Nufft3Plan")
            .field("kernel", &self.kernel)
            .field("axes", &self.axes)
            .field("n_src", &self.src_grid.len())
            .field("n_tgt", &self.tgt_grid.len())
            .finish()
    }
}

/// Builds a plan at accuracy `eps` (in `[1e-9, 1e-1]`).
pub fn make_plan(
    baselines: &BaselineSet,
    pixels: &PixelSet,
    eps: f64,
    upsamp: f64,
    budget_bytes: Option<u64>,
) -> Result<Nufft3Plan> {
    let kernel = KernelSpec::for_accuracy(eps, upsamp)?;
    Nufft3Plan::with_kernel(
        baselines.points(),
        pixels.points(),
        pixels.weights(),
        kernel,
        budget_bytes,
    )
}

impl Nufft3Plan {
    /// Plan over raw slices with an explicit kernel.
    pub fn with_kernel(
        sources: &[Vec3],
        targets: &[Vec3],
        weights: &[f64],
        kernel: KernelSpec,
        budget_bytes: Option<u64>,
    ) -> Result<Self> {
        if sources.is_empty() || targets.is_empty() {
            return Err(Error::domain("type-3 plan needs non-empty baseline and pixel sets"));
        }
        if weights.len() != targets.len() {
            return Err(Error::domain(format!(
                "{} weights for {} pixels",
                weights.len(),
                targets.len()
            )));
        }
        if kernel.support > MAX_SUPPORT {
            return Err(Error::domain(format!("kernel support {} exceeds {MAX_SUPPORT}", kernel.support)));
        }
        let src_box = bounding_box(sources)?;
        let tgt_box = bounding_box(targets)?;
        let dims = grid_dims(&src_box, &tgt_box, &kernel);
        let required = grid_bytes(dims);
        if let Some(avail) = budget_bytes {
            if required > avail {
                return Err(Error::Capacity {
                    what: format!("type-3 fine grid {}x{}x{}", dims[0], dims[1], dims[2]),
                    required,
                    available: avail,
                });
            }
        }

        let src_center = src_box.center();
        let tgt_center = tgt_box.center();
        let be = src_box.extents();
        let pe = tgt_box.extents();
        let axes = [0, 1, 2].map(|k| axis_layout(be[k] / 2.0, pe[k] / 2.0, &kernel));
        debug_assert_eq!(axes.map(|a| a.n), dims);

        let w = kernel.support as f64;
        let ft_src: [KernelFt; 3] = [0, 1, 2].map(|k| KernelFt::new(axes[k].beta_src, w * axes[k].dx / 2.0));
        let ft_tgt: [KernelFt; 3] = [0, 1, 2].map(|k| KernelFt::new(axes[k].beta_tgt, w * axes[k].ds / 2.0));

        let node_corr = [0, 1, 2].map(|k| {
            let ax = &axes[k];
            let limit = ax.half_src + w * ax.dx / 2.0;
            let nf = ax.n as f64;
            (0..ax.n)
                .map(|i| {
                    let a = i as f64 - ax.origin as f64;
                    let u = a * ax.dx;
                    if u.abs() > limit * (1.0 + 1e-12) {
                        return ZERO;
                    }
                    let shift = Complex64::from_polar(1.0, -2.0 * PI * ((i * ax.origin) % ax.n) as f64 / nf);
                    shift * (2.0 * PI / nf / ft_tgt[k].eval(u))
                })
                .collect()
        });
        let out_phase = [0, 1, 2].map(|k| {
            let ax = &axes[k];
            let n = ax.n as i64;
            let o = ax.origin as i64;
            (0..n)
                .map(|i| {
                    let e = (o * (i - o)).rem_euclid(n);
                    Complex64::from_polar(1.0, -2.0 * PI * e as f64 / n as f64)
                })
                .collect()
        });

        let src_grid: Vec<[f64; 3]> = sources
            .par_iter()
            .map(|p| [0, 1, 2].map(|k| (p[k] - src_center[k]) / axes[k].dx + axes[k].origin as f64))
            .collect();
        let tgt_grid: Vec<[f64; 3]> = targets
            .par_iter()
            .map(|r| [0, 1, 2].map(|k| (r[k] - tgt_center[k]) / axes[k].ds + axes[k].origin as f64))
            .collect();
        let src_phase: Vec<Complex64> = sources
            .par_iter()
            .map(|p| {
                let rel = [p[0] - src_center[0], p[1] - src_center[1], p[2] - src_center[2]];
                Complex64::from_polar(1.0, dot(&tgt_center, &rel))
            })
            .collect();
        let tgt_factor: Vec<Complex64> = targets
            .par_iter()
            .zip(weights.par_iter())
            .map(|(r, &a)| {
                let mut deconv = 1.0;
                for k in 0..3 {
                    deconv *= ft_src[k].eval(r[k] - tgt_center[k]);
                }
                Complex64::from_polar(a / deconv, dot(r, &src_center))
            })
            .collect();

        Ok(Self {
            kernel,
            stencil_src: Stencil {
                support: kernel.support,
                beta: axes.map(|a| a.beta_src),
            },
            stencil_tgt: Stencil {
                support: kernel.support,
                beta: axes.map(|a| a.beta_tgt),
            },
            axes,
            src_box,
            tgt_box,
            src_center,
            tgt_center,
            src_grid,
            tgt_grid,
            src_phase,
            tgt_factor,
            node_corr,
            out_phase,
            fft: Fft3::new(dims),
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn dims(&self) -> [usize; 3] {
        self.axes.map(|a| a.n)
    }

    pub fn axes(&self) -> &[AxisLayout; 3] {
        &self.axes
    }

    pub fn grid_bytes(&self) -> u64 {
        grid_bytes(self.dims())
    }

    pub fn source_box(&self) -> &BoundingBox {
        &self.src_box
    }

    pub fn target_box(&self) -> &BoundingBox {
        &self.tgt_box
    }

    pub fn source_center(&self) -> Vec3 {
        self.src_center
    }

    pub fn target_center(&self) -> Vec3 {
        self.tgt_center
    }

    pub fn n_sources(&self) -> usize {
        self.src_grid.len()
    }

    pub fn n_targets(&self) -> usize {
        self.tgt_grid.len()
    }

    fn empty_source_grid(&self) -> UniformGrid3 {
        let spacing = self.axes.map(|a| a.dx);
        let origin = [0, 1, 2].map(|k| self.src_center[k] - self.axes[k].origin as f64 * spacing[k]);
        UniformGrid3::zeros(self.dims(), spacing, origin)
    }

    fn empty_target_grid(&self) -> UniformGrid3 {
        let spacing = self.axes.map(|a| a.ds);
        let origin = [0, 1, 2].map(|k| self.tgt_center[k] - self.axes[k].origin as f64 * spacing[k]);
        UniformGrid3::zeros(self.dims(), spacing, origin)
    }

    fn to_source_grid(&self, points: &[Vec3]) -> Result<Vec<[f64; 3]>> {
        check_inside("baseline", points, &self.src_box)?;
        Ok(points
            .iter()
            .map(|p| [0, 1, 2].map(|k| (p[k] - self.src_center[k]) / self.axes[k].dx + self.axes[k].origin as f64))
            .collect())
    }

    fn to_target_grid(&self, points: &[Vec3]) -> Result<Vec<[f64; 3]>> {
        check_inside("pixel", points, &self.tgt_box)?;
        Ok(points
            .iter()
            .map(|r| [0, 1, 2].map(|k| (r[k] - self.tgt_center[k]) / self.axes[k].ds + self.axes[k].origin as f64))
            .collect())
    }

    /// Spreads values at baseline coordinates onto the source-side grid.
    pub fn spread(&self, points: &[Vec3], values: &[Complex64]) -> Result<UniformGrid3> {
        check_len("values", values.len(), points.len())?;
        let coords = self.to_source_grid(points)?;
        let mut grid = self.empty_source_grid();
        spread_into(grid.data_mut(), self.dims(), &coords, values, &self.stencil_src);
        Ok(grid)
    }

    /// Reads a source-side grid at baseline coordinates; adjoint of [`Self::spread`].
    pub fn interpolate_sources(&self, grid: &UniformGrid3, points: &[Vec3]) -> Result<Vec<Complex64>> {
        self.check_grid(grid)?;
        let coords = self.to_source_grid(points)?;
        Ok(interpolate(grid.data(), self.dims(), &coords, &self.stencil_src))
    }

    /// Spreads values at pixel coordinates onto the target-side grid; adjoint of
    /// [`Self::interpolate`].
    pub fn spread_targets(&self, points: &[Vec3], values: &[Complex64]) -> Result<UniformGrid3> {
        check_len("values", values.len(), points.len())?;
        let coords = self.to_target_grid(points)?;
        let mut grid = self.empty_target_grid();
        spread_into(grid.data_mut(), self.dims(), &coords, values, &self.stencil_tgt);
        Ok(grid)
    }

    /// Reads a target-side grid at pixel coordinates.
    pub fn interpolate(&self, grid: &UniformGrid3, points: &[Vec3]) -> Result<Vec<Complex64>> {
        self.check_grid(grid)?;
        let coords = self.to_target_grid(points)?;
        Ok(interpolate(grid.data(), self.dims(), &coords, &self.stencil_tgt))
    }

    fn check_grid(&self, grid: &UniformGrid3) -> Result<()> {
        if grid.dims() != self.dims() {
            return Err(Error::domain(format!(
                "grid dims {:?} do not match plan dims {:?}",
                grid.dims(),
                self.dims()
            )));
        }
        Ok(())
    }

    fn multiply_separable(&self, data: &mut [Complex64], f: &[Vec<Complex64>; 3], conj: bool) {
        let [_, n1, n2] = self.dims();
        data.par_chunks_mut(n1 * n2).enumerate().for_each(|(i, slab)| {
            let a = f[0][i];
            for (j, row) in slab.chunks_mut(n2).enumerate() {
                let ab = a * f[1][j];
                for (v, c) in row.iter_mut().zip(&f[2]) {
                    let m = ab * c;
                    *v *= if conj { m.conj() } else { m };
                }
            }
        });
    }

    /// `Î = Re[α · A V]`, returned in pixel order.
    pub fn execute_synthesis(&self, vis: &[Complex64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_targets()];
        self.synthesis_into(vis, &mut out)?;
        Ok(out)
    }

    /// `V = Aᴴ (α · I)`, returned in baseline order.
    pub fn execute_analysis(&self, intensity: &[f64]) -> Result<Vec<Complex64>> {
        let mut out = vec![ZERO; self.n_sources()];
        self.analysis_into(intensity, &mut out)?;
        Ok(out)
    }

    /// Adds the synthesis of `vis` to `out`.
    pub fn synthesis_into(&self, vis: &[Complex64], out: &mut [f64]) -> Result<()> {
        check_len("visibilities", vis.len(), self.n_sources())?;
        check_len("output", out.len(), self.n_targets())?;
        let values: Vec<Complex64> = vis.iter().zip(&self.src_phase).map(|(v, p)| v * p).collect();
        let dims = self.dims();
        let mut grid = vec![ZERO; dims.iter().product()];
        spread_into(&mut grid, dims, &self.src_grid, &values, &self.stencil_src);
        self.multiply_separable(&mut grid, &self.node_corr, false);
        self.fft.inverse(&mut grid);
        self.multiply_separable(&mut grid, &self.out_phase, false);
        let vals = interpolate(&grid, dims, &self.tgt_grid, &self.stencil_tgt);
        out.par_iter_mut()
            .zip(vals.par_iter().zip(self.tgt_factor.par_iter()))
            .for_each(|(o, (v, f))| *o += (v * f).re);
        Ok(())
    }

    /// Adds the analysis of `intensity` to `out`.
    pub fn analysis_into(&self, intensity: &[f64], out: &mut [Complex64]) -> Result<()> {
        check_len("intensity", intensity.len(), self.n_targets())?;
        check_len("output", out.len(), self.n_sources())?;
        let values: Vec<Complex64> = intensity
            .iter()
            .zip(&self.tgt_factor)
            .map(|(&i, f)| f.conj() * i)
            .collect();
        let dims = self.dims();
        let mut grid = vec![ZERO; dims.iter().product()];
        spread_into(&mut grid, dims, &self.tgt_grid, &values, &self.stencil_tgt);
        self.multiply_separable(&mut grid, &self.out_phase, true);
        self.fft.forward(&mut grid);
        self.multiply_separable(&mut grid, &self.node_corr, true);
        let vals = interpolate(&grid, dims, &self.src_grid, &self.stencil_src);
        out.par_iter_mut()
            .zip(vals.par_iter().zip(self.src_phase.par_iter()))
            .for_each(|(o, (v, p))| *o += v * p.conj());
        Ok(())
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::domain(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

fn check_inside(what: &str, points: &[Vec3], bbox: &BoundingBox) -> Result<()> {
    let e = bbox.extents();
    let scale = e.iter().chain(bbox.min.iter()).chain(bbox.max.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let slack = 1e-9 * scale.max(1e-300);
    if let Some(i) = points.iter().position(|p| !bbox.contains(p, slack)) {
        return Err(Error::domain(format!("{what} {i} at {:?} lies outside the plan box", points[i])));
    }
    Ok(())
}

/// Kernel weights and first node index along one axis for grid coordinate `t`.
#[inline]
fn stencil(t: f64, w: usize, beta: f64, out: &mut [f64; MAX_SUPPORT]) -> i64 {
    let half = w as f64 / 2.0;
    let start = (t - half).ceil();
    let inv = 1.0 / half;
    for (i, o) in out.iter_mut().take(w).enumerate() {
        *o = es_kernel_eval((start + i as f64 - t) * inv, beta);
    }
    start as i64
}

/// Separable kernel actually applied on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Stencil {
    pub support: usize,
    pub beta: [f64; 3],
}

struct Footprint {
    start: [i64; 3],
    weights: [[f64; MAX_SUPPORT]; 3],
}

impl Footprint {
    #[inline]
    fn new(t: &[f64; 3], kernel: &Stencil) -> Self {
        let mut weights = [[0.0; MAX_SUPPORT]; 3];
        let w = kernel.support;
        let start = [
            stencil(t[0], w, kernel.beta[0], &mut weights[0]),
            stencil(t[1], w, kernel.beta[1], &mut weights[1]),
            stencil(t[2], w, kernel.beta[2], &mut weights[2]),
        ];
        Self { start, weights }
    }
}

/// Points per slab below which spreading runs on one thread.
const SERIAL_SPREAD_POINTS: usize = 2048;

/// Adds `Σ_k v_k·φ(grid − t_k)` onto `grid`.
///
/// Work is split into slabs along the first axis, at least one kernel width
/// thick. Each slab is owned by one task which visits, in a fixed order, the
/// points whose footprint starts in it or in the previous slab, so the
/// floating-point summation order per node does not depend on the thread
/// count.
pub(crate) fn spread_into(
    grid: &mut [Complex64],
    dims: [usize; 3],
    coords: &[[f64; 3]],
    values: &[Complex64],
    kernel: &Stencil,
) {
    let [n0, n1, n2] = dims;
    let w = kernel.support;
    let plane = n1 * n2;
    let thick = w.max(n0.div_ceil(64)).min(n0);
    let n_slabs = (n0 / thick).max(1);
    let bounds: Vec<(usize, usize)> = (0..n_slabs)
        .map(|s| (s * thick, if s + 1 == n_slabs { n0 } else { (s + 1) * thick }))
        .collect();

    if n_slabs == 1 || coords.len() < SERIAL_SPREAD_POINTS {
        for (t, v) in coords.iter().zip(values) {
            spread_point(grid, dims, t, *v, kernel, 0, n0);
        }
        return;
    }

    let slab_of = |start: i64| -> usize {
        let s = start.rem_euclid(n0 as i64) as usize;
        (s / thick).min(n_slabs - 1)
    };
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); n_slabs];
    for (k, t) in coords.iter().enumerate() {
        let start = (t[0] - w as f64 / 2.0).ceil() as i64;
        buckets[slab_of(start)].push(k as u32);
    }

    let mut slabs: Vec<(usize, &mut [Complex64])> = Vec::with_capacity(n_slabs);
    let mut rest = grid;
    for (s, &(lo, hi)) in bounds.iter().enumerate() {
        let (head, tail) = rest.split_at_mut((hi - lo) * plane);
        slabs.push((s, head));
        rest = tail;
    }

    slabs.into_par_iter().for_each(|(s, slab)| {
        let (lo, hi) = bounds[s];
        let prev = (s + n_slabs - 1) % n_slabs;
        for &b in &[prev, s] {
            for &k in &buckets[b] {
                let k = k as usize;
                spread_point(slab, dims, &coords[k], values[k], kernel, lo, hi);
            }
        }
    });
}

/// Spreads one point into the planes `[lo, hi)` of the first axis; `slab`
/// holds exactly those planes.
#[inline]
fn spread_point(
    slab: &mut [Complex64],
    dims: [usize; 3],
    t: &[f64; 3],
    v: Complex64,
    kernel: &Stencil,
    lo: usize,
    hi: usize,
) {
    let [n0, n1, n2] = dims;
    let w = kernel.support;
    let fp = Footprint::new(t, kernel);
    let mut idx2 = [0usize; MAX_SUPPORT];
    for (c, o) in idx2.iter_mut().take(w).enumerate() {
        *o = (fp.start[2] + c as i64).rem_euclid(n2 as i64) as usize;
    }
    let contiguous = idx2[0] + w <= n2;
    for a in 0..w {
        let i = (fp.start[0] + a as i64).rem_euclid(n0 as i64) as usize;
        if i < lo || i >= hi {
            continue;
        }
        let va = v * fp.weights[0][a];
        for b in 0..w {
            let j = (fp.start[1] + b as i64).rem_euclid(n1 as i64) as usize;
            let vab = va * fp.weights[1][b];
            let base = ((i - lo) * n1 + j) * n2;
            if contiguous {
                let row = &mut slab[base + idx2[0]..base + idx2[0] + w];
                for (g, &k) in row.iter_mut().zip(&fp.weights[2][..w]) {
                    *g += vab * k;
                }
            } else {
                for c in 0..w {
                    slab[base + idx2[c]] += vab * fp.weights[2][c];
                }
            }
        }
    }
}

/// `Σ_grid φ(grid − t_k)·G` at every coordinate.
pub(crate) fn interpolate(
    grid: &[Complex64],
    dims: [usize; 3],
    coords: &[[f64; 3]],
    kernel: &Stencil,
) -> Vec<Complex64> {
    let [n0, n1, n2] = dims;
    let w = kernel.support;
    coords
        .par_iter()
        .with_min_len(256)
        .map(|t| {
            let fp = Footprint::new(t, kernel);
            let mut idx2 = [0usize; MAX_SUPPORT];
            for (c, o) in idx2.iter_mut().take(w).enumerate() {
                *o = (fp.start[2] + c as i64).rem_euclid(n2 as i64) as usize;
            }
            let contiguous = idx2[0] + w <= n2;
            let mut acc = ZERO;
            for a in 0..w {
                let i = (fp.start[0] + a as i64).rem_euclid(n0 as i64) as usize;
                let mut acc_a = ZERO;
                for b in 0..w {
                    let j = (fp.start[1] + b as i64).rem_euclid(n1 as i64) as usize;
                    let base = (i * n1 + j) * n2;
                    let mut acc_b = ZERO;
                    if contiguous {
                        let row = &grid[base + idx2[0]..base + idx2[0] + w];
                        for (g, &k) in row.iter().zip(&fp.weights[2][..w]) {
                            acc_b += g * k;
                        }
                    } else {
                        for c in 0..w {
                            acc_b += grid[base + idx2[c]] * fp.weights[2][c];
                        }
                    }
                    acc_a += acc_b * fp.weights[1][b];
                }
                acc += acc_a * fp.weights[0][a];
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::direct;
    use crate::kernel::DEFAULT_UPSAMP;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, n_vis: usize, n_pix: usize) -> (Vec<Vec3>, Vec<Vec3>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bl = (0..n_vis)
            .map(|_| [rng.random_range(-300.0..300.0), rng.random_range(-250.0..250.0), rng.random_range(-40.0..40.0)])
            .collect();
        let pix = (0..n_pix)
            .map(|_| {
                let l: f64 = rng.random_range(-0.25..0.25);
                let m: f64 = rng.random_range(-0.25..0.25);
                [l, m, (1.0 - l * l - m * m).sqrt()]
            })
            .collect();
        let w = (0..n_pix).map(|_| rng.random_range(0.5..1.5)).collect();
        (bl, pix, w)
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    fn rel_err_c(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    fn plan(bl: &[Vec3], pix: &[Vec3], w: &[f64], eps: f64) -> Nufft3Plan {
        let k = KernelSpec::for_accuracy(eps, DEFAULT_UPSAMP).unwrap();
        Nufft3Plan::with_kernel(bl, pix, w, k, None).unwrap()
    }

    #[test]
    fn grid_size_example() {
        let k = KernelSpec { eps: 1e-6, support: 7, beta: 10.0, upsamp: 1.25 };
        assert_eq!(axis_size(10.0, 1.0, &k), 16);
    }

    #[test]
    fn degenerate_source_box() {
        let bl = vec![[3.0, -2.0, 1.0]; 4];
        let (_, pix, w) = instance(1, 1, 30);
        let p = plan(&bl, &pix, &w, 1e-6);
        let k = p.kernel().support;
        assert_eq!(p.dims(), [crate::kernel::next_smooth(2 * k); 3]);
        let vis = vec![Complex64::new(0.3, -1.1); 4];
        let got = p.execute_synthesis(&vis).unwrap();
        let want = direct::synthesis_raw(&vis, &bl, &pix, &w).unwrap();
        assert!(rel_err(&got, &want) < 1e-6);
    }

    #[test]
    fn eps_range_and_budget() {
        let (bl, pix, _) = instance(2, 10, 10);
        let b = BaselineSet::new(bl).unwrap();
        let p = PixelSet::with_unit_weights(pix).unwrap();
        assert!(make_plan(&b, &p, 1e-9, DEFAULT_UPSAMP, None).is_ok());
        assert!(matches!(make_plan(&b, &p, 1e-10, DEFAULT_UPSAMP, None), Err(Error::Domain(_))));
        match make_plan(&b, &p, 1e-6, DEFAULT_UPSAMP, Some(1024)) {
            Err(Error::Capacity { required, available, .. }) => {
                assert!(required > available);
                assert_eq!(available, 1024);
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn synthesis_matches_direct() {
        let (bl, pix, w) = instance(3, 50, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let vis: Vec<Complex64> = (0..50)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let p = plan(&bl, &pix, &w, 1e-7);
        let got = p.execute_synthesis(&vis).unwrap();
        let want = direct::synthesis_raw(&vis, &bl, &pix, &w).unwrap();
        let e = rel_err(&got, &want);
        assert!(e <= 1e-7, "error {e:e}");
    }

    #[test]
    fn analysis_matches_direct() {
        let (bl, pix, w) = instance(4, 300, 400);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let img: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = plan(&bl, &pix, &w, 1e-5);
        let got = p.execute_analysis(&img).unwrap();
        let want = direct::analysis_raw(&img, &pix, &w, &bl).unwrap();
        let e = rel_err_c(&got, &want);
        assert!(e <= 1e-5, "error {e:e}");
    }

    #[test]
    fn zero_inputs_give_zero() {
        let (bl, pix, w) = instance(5, 20, 20);
        let p = plan(&bl, &pix, &w, 1e-4);
        assert!(p.execute_synthesis(&[ZERO; 20]).unwrap().iter().all(|&x| x == 0.0));
        assert!(p.execute_analysis(&[0.0; 20]).unwrap().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn point_source_unit_modulus() {
        let (bl, mut pix, _) = instance(6, 200, 40);
        pix.truncate(1);
        pix.push([0.1, -0.2, (1.0f64 - 0.05).sqrt()]);
        let p = plan(&bl, &pix, &[1.0, 1.0], 1e-6);
        let v = p.execute_analysis(&[0.0, 1.0]).unwrap();
        for z in v {
            assert!((z.norm() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn adjoint_identity() {
        let (bl, pix, w) = instance(7, 120, 150);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let img: Vec<f64> = (0..150).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vis: Vec<Complex64> = (0..120)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let p = plan(&bl, &pix, &w, 1e-3);
        let av = p.execute_analysis(&img).unwrap();
        let sv = p.execute_synthesis(&vis).unwrap();
        let lhs: f64 = av.iter().zip(&vis).map(|(a, v)| (a.conj() * v).re).sum();
        let rhs: f64 = img.iter().zip(&sv).map(|(i, s)| i * s).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
    }

    #[test]
    fn spread_centre_is_centred_stencil() {
        let (bl, pix, w) = instance(8, 30, 30);
        let p = plan(&bl, &pix, &w, 1e-4);
        let c = p.source_center();
        let g = p.spread(&[c], &[Complex64::new(1.0, 0.0)]).unwrap();
        let dims = p.dims();
        let ker = p.kernel();
        let half = ker.support as f64 / 2.0;
        let mut total = 0.0;
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let phi = |idx: usize, ax: usize| {
                        let o = p.axes()[ax].origin as f64;
                        let start = (o - half).ceil() as usize;
                        if idx < start || idx >= start + ker.support {
                            return 0.0;
                        }
                        es_kernel_eval((idx as f64 - o) / half, p.axes()[ax].beta_src)
                    };
                    let want = phi(i, 0) * phi(j, 1) * phi(k, 2);
                    let got = g.get(i, j, k);
                    assert!((got.re - want).abs() < 1e-15 && got.im == 0.0);
                    total += got.re;
                }
            }
        }
        assert!(total > 0.0);
    }

    #[test]
    fn spread_mass_and_linearity() {
        let (bl, pix, w) = instance(9, 40, 10);
        let p = plan(&bl, &pix, &w, 1e-5);
        let vals: Vec<Complex64> = (0..40).map(|i| Complex64::new(0.5 + i as f64 * 0.01, 0.0)).collect();
        let g = p.spread(&bl, &vals).unwrap();
        let ker = p.kernel();
        let mut want = 0.0;
        for (pt, v) in bl.iter().zip(&vals) {
            let mut m = 1.0;
            for k in 0..3 {
                let t = (pt[k] - p.source_center()[k]) / p.axes()[k].dx + p.axes()[k].origin as f64;
                let mut ws = [0.0; MAX_SUPPORT];
                stencil(t, ker.support, p.axes()[k].beta_src, &mut ws);
                m *= ws[..ker.support].iter().sum::<f64>();
            }
            want += v.re * m;
        }
        let got: f64 = g.data().iter().map(|z| z.re).sum();
        assert!(((got - want) / want).abs() < 1e-12);

        let g1 = p.spread(&bl[..1], &vals[..1]).unwrap();
        let g2 = p.spread(&bl[1..2], &vals[1..2]).unwrap();
        let g12 = p.spread(&bl[..2], &vals[..2]).unwrap();
        for ((a, b), c) in g1.data().iter().zip(g2.data()).zip(g12.data()) {
            assert!((a + b - c).norm() < 1e-15);
        }
    }

    #[test]
    fn spread_interp_adjoint() {
        let (bl, pix, w) = instance(10, 60, 70);
        let p = plan(&bl, &pix, &w, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let n: usize = p.dims().iter().product();
        let gdata: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let spacing = [1.0; 3];
        let g = UniformGrid3::from_data(p.dims(), spacing, [0.0; 3], gdata).unwrap();
        let inner = |a: &[Complex64], b: &[Complex64]| -> Complex64 { a.iter().zip(b).map(|(x, y)| x.conj() * y).sum() };

        let v: Vec<Complex64> = (0..60).map(|_| Complex64::new(rng.random_range(-1.0..1.0), 0.3)).collect();
        let lhs = inner(p.spread(&bl, &v).unwrap().data(), g.data());
        let rhs = inner(&v, &p.interpolate_sources(&g, &bl).unwrap());
        assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm());

        let v: Vec<Complex64> = (0..70).map(|_| Complex64::new(0.2, rng.random_range(-1.0..1.0))).collect();
        let lhs = inner(p.spread_targets(&pix, &v).unwrap().data(), g.data());
        let rhs = inner(&v, &p.interpolate(&g, &pix).unwrap());
        assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm());
    }

    #[test]
    fn delta_grid_interpolation() {
        let (bl, pix, w) = instance(11, 10, 10);
        let p = plan(&bl, &pix, &w, 1e-4);
        let dims = p.dims();
        let mut g = UniformGrid3::zeros(dims, [1.0; 3], [0.0; 3]);
        let node = [dims[0] / 2, dims[1] / 2, dims[2] / 2];
        let idx = g.index(node[0], node[1], node[2]);
        g.data_mut()[idx] = Complex64::new(1.0, 0.0);
        let r = p.target_center();
        let got = p.interpolate(&g, &[r]).unwrap()[0];
        let half = p.kernel().support as f64 / 2.0;
        let mut want = 1.0;
        for k in 0..3 {
            let t = p.axes()[k].origin as f64;
            want *= es_kernel_eval((node[k] as f64 - t) / half, p.axes()[k].beta_tgt);
        }
        assert!((got.re - want).abs() < 1e-15 && got.im == 0.0);
        assert!(p.interpolate(&UniformGrid3::zeros(dims, [1.0; 3], [0.0; 3]), &pix).unwrap().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn outside_box_rejected() {
        let (bl, pix, w) = instance(12, 10, 10);
        let p = plan(&bl, &pix, &w, 1e-4);
        assert!(p.spread(&[[1e6, 0.0, 0.0]], &[Complex64::new(1.0, 0.0)]).is_err());
        let g = UniformGrid3::zeros(p.dims(), [1.0; 3], [0.0; 3]);
        assert!(p.interpolate(&g, &[[0.0, 0.0, -1.0]]).is_err());
    }

    #[test]
    fn parallel_spread_is_deterministic() {
        let (bl, pix, w) = instance(13, 6000, 20);
        let p = plan(&bl, &pix, &w, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(130);
        let vals: Vec<Complex64> = (0..6000).map(|_| Complex64::new(rng.random_range(-1.0..1.0), 0.0)).collect();
        let a = p.spread(&bl, &vals).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| p.spread(&bl, &vals).unwrap());
        assert_eq!(a.data(), b.data());
        let mut serial = vec![ZERO; a.data().len()];
        for (t, v) in p.src_grid.iter().zip(&vals) {
            spread_point(&mut serial, p.dims(), t, *v, &p.stencil_src, 0, p.dims()[0]);
        }
        let num: f64 = serial.iter().zip(a.data()).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = serial.iter().map(|x| x.norm_sqr()).sum();
        assert!((num / den).sqrt() < 1e-14);
    }

    #[test]
    fn grid_independent_of_pixel_density() {
        let (bl, pix, w) = instance(14, 30, 100);
        let p1 = plan(&bl, &pix, &w, 1e-5);
        let mut dense = pix.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(140);
        let bb = bounding_box(&pix).unwrap();
        while dense.len() < 200 {
            let l = rng.random_range(bb.min[0]..bb.max[0]);
            let m = rng.random_range(bb.min[1]..bb.max[1]);
            let n = (1.0f64 - l * l - m * m).sqrt();
            if n >= bb.min[2] && n <= bb.max[2] {
                dense.push([l, m, n]);
            }
        }
        let p2 = plan(&bl, &dense, &vec![1.0; 200], 1e-5);
        assert_eq!(p1.dims(), p2.dims());
    }
}
