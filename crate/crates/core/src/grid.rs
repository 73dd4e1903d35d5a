//! Uniform 3D lattice and the in-place 3D FFT over it.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};

/// Bytes per double-precision complex sample.
pub const COMPLEX_BYTES: u64 = 16;

/// Complex samples on an `n₀ × n₁ × n₂` lattice, row-major with the last axis
/// contiguous. Node `a` of axis `k` sits at `origin[k] + a·spacing[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid3 {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<Complex64>,
}

impl UniformGrid3 {
    pub fn zeros(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            spacing,
            origin,
            data: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn from_data(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        data: Vec<Complex64>,
    ) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::domain(format!(
                "grid data has {} samples, dims {dims:?} need {len}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.data[self.index(i, j, k)]
    }

    pub fn byte_count(&self) -> u64 {
        grid_bytes(self.dims)
    }
}

pub fn grid_bytes(dims: [usize; 3]) -> u64 {
    dims.iter().map(|&n| n as u64).product::<u64>() * COMPLEX_BYTES
}

/// Planned unnormalized 3D DFT of fixed dimensions.
///
/// `Forward` computes `X[m] = Σ_a x[a]·e^{−2πj·am/n}` along every axis,
/// `Inverse` the same with `+`.
#[derive(Clone)]
pub struct Fft3 {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("dims", &self.dims).finish()
    }
}

#[derive(Clone, Copy)]
struct SendPtr(*mut Complex64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.map(|n| planner.plan_fft(n, FftDirection::Forward));
        let inverse = dims.map(|n| planner.plan_fft(n, FftDirection::Inverse));
        Self {
            dims,
            forward,
            inverse,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [n0, n1, n2] = self.dims;
        assert_eq!(data.len(), n0 * n1 * n2, "grid length does not match FFT plan");
        if data.is_empty() {
            return;
        }

        // Last axis: contiguous rows.
        let fft = &plans[2];
        data.par_chunks_mut(n2 * n1.max(1)).for_each_init(
            || vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()],
            |scratch, rows| fft.process_with_scratch(rows, scratch),
        );

        // Middle axis: within each slab, lines of stride n2.
        let fft = &plans[1];
        data.par_chunks_mut(n1 * n2).for_each_init(
            || Scratch::new(fft.as_ref(), n1),
            |s, slab| {
                for k in 0..n2 {
                    for j in 0..n1 {
                        s.line[j] = slab[j * n2 + k];
                    }
                    fft.process_with_scratch(&mut s.line, &mut s.work);
                    for j in 0..n1 {
                        slab[j * n2 + k] = s.line[j];
                    }
                }
            },
        );

        // First axis: lines of stride n1·n2. Each (j, k) line is touched by
        // exactly one task, so the raw writes never alias.
        let fft = &plans[0];
        let stride = n1 * n2;
        let ptr = SendPtr(data.as_mut_ptr());
        (0..stride).into_par_iter().for_each_init(
            || Scratch::new(fft.as_ref(), n0),
            move |s, col| {
                let p = ptr;
                unsafe {
                    for i in 0..n0 {
                        s.line[i] = *p.0.add(i * stride + col);
                    }
                }
                fft.process_with_scratch(&mut s.line, &mut s.work);
                unsafe {
                    for i in 0..n0 {
                        *p.0.add(i * stride + col) = s.line[i];
                    }
                }
            },
        );
    }
}

struct Scratch {
    line: Vec<Complex64>,
    work: Vec<Complex64>,
}

impl Scratch {
    fn new(fft: &dyn Fft<f64>, n: usize) -> Self {
        Self {
            line: vec![Complex64::new(0.0, 0.0); n],
            work: vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()],
        }
    }
}
