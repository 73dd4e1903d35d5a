//! Chunked evaluation: the full transform as a sum of sub-transforms over
//! (pixel chunk, baseline chunk) blocks.
//!
//! Inputs are permuted so every chunk is a contiguous slice, each block runs
//! either a direct sum or a small type-3 NUFFT, and block outputs are summed
//! into a per-chunk accumulator before being permuted back.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::direct;
use crate::error::{Error, Result};
use crate::geometry::{BaselineSet, PixelSet, Vec3};
use crate::grid::grid_bytes;
use crate::kernel::{check_eps, KernelSpec, DEFAULT_UPSAMP, EPS_FLOOR_INTERNAL, EPS_MIN};
use crate::nufft3::{grid_dims, Nufft3Plan};
use crate::partition::{chunk_with_dims, solve_box_dims, ChunkSet, PartitionBudget};

/// Point pairs up to which a block is summed directly.
pub const DEFAULT_DIRECT_THRESHOLD: u64 = 200_000;

/// Per-block NUFFT plans kept between calls.
pub const DEFAULT_PLAN_CACHE: usize = 4;

/// Default sub-transform budget, 500 MB.
pub const DEFAULT_BUDGET_BYTES: u64 = 500 * 1024 * 1024;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockStrategy {
    Direct,
    Nufft,
}

/// `Direct` iff `n_pix·n_vis ≤ threshold`.
pub fn block_strategy(n_pix: usize, n_vis: usize, threshold: u64) -> BlockStrategy {
    if (n_pix as u128) * (n_vis as u128) <= threshold as u128 {
        BlockStrategy::Direct
    } else {
        BlockStrategy::Nufft
    }
}

/// `out[k] = values[perm[k]]`.
pub fn reorder<T: Copy>(values: &[T], perm: &[usize]) -> Result<Vec<T>> {
    if values.len() != perm.len() {
        return Err(Error::domain(format!(
            "cannot reorder {} values with a permutation of length {}",
            values.len(),
            perm.len()
        )));
    }
    Ok(perm.iter().map(|&i| values[i]).collect())
}

/// Inverse of [`reorder`]: `out[perm[k]] = values[k]`.
pub fn inverse_reorder<T: Copy + Default>(values: &[T], perm: &[usize]) -> Result<Vec<T>> {
    if values.len() != perm.len() {
        return Err(Error::domain(format!(
            "cannot reorder {} values with a permutation of length {}",
            values.len(),
            perm.len()
        )));
    }
    let mut out = vec![T::default(); values.len()];
    for (v, &i) in values.iter().zip(perm) {
        out[i] = *v;
    }
    Ok(out)
}

/// Physical cores / 2, at least 1.
pub fn default_workers() -> usize {
    (num_cpus::get_physical() / 2).max(1)
}

/// Knobs of [`build_plan`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOptions {
    pub eps: f64,
    pub budget: PartitionBudget,
    pub direct_threshold: u64,
    /// Divide ε by the block count for every sub-transform.
    pub strict_accuracy: bool,
    /// Fixed reduction order, bitwise reproducible for any worker count.
    pub deterministic: bool,
    /// Worker threads; `None` uses [`default_workers`].
    pub workers: Option<usize>,
    pub plan_cache: usize,
}

impl PlanOptions {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            budget: PartitionBudget {
                bytes: DEFAULT_BUDGET_BYTES,
                upsamp: DEFAULT_UPSAMP,
                delta: 16,
                alpha: 1.0,
                support: None,
            },
            direct_threshold: DEFAULT_DIRECT_THRESHOLD,
            strict_accuracy: false,
            deterministic: false,
            workers: None,
            plan_cache: DEFAULT_PLAN_CACHE,
        }
    }
}

/// Static description of one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockInfo {
    pub pix_chunk: usize,
    pub vis_chunk: usize,
    pub strategy: BlockStrategy,
    /// Fine grid dims, zero for direct blocks.
    pub dims: [usize; 3],
    pub grid_bytes: u64,
}

/// Counters accumulated over every apply call on a plan.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub direct_blocks: usize,
    pub nufft_blocks: usize,
    pub plans_built: usize,
    pub cache_hits: usize,
    /// Largest fine grid allocated by a single block.
    pub peak_block_grid_bytes: u64,
    /// Wall time spent reordering inputs and outputs.
    pub permute_nanos: u64,
    /// Wall time spent evaluating blocks.
    pub blocks_nanos: u64,
}

#[derive(Default)]
struct Counters {
    direct_blocks: AtomicUsize,
    nufft_blocks: AtomicUsize,
    plans_built: AtomicUsize,
    cache_hits: AtomicUsize,
    peak_grid: AtomicU64,
    permute_nanos: AtomicU64,
    blocks_nanos: AtomicU64,
}

/// Chunked type-3 transform between fixed baselines and pixels.
pub struct ChunkedPlan {
    vis: ChunkSet,
    pix: ChunkSet,
    vis_perm: Vec<usize>,
    pix_perm: Vec<usize>,
    vis_offsets: Vec<usize>,
    pix_offsets: Vec<usize>,
    baselines: Vec<Vec3>,
    pixels: Vec<Vec3>,
    weights: Vec<f64>,
    blocks: Vec<BlockInfo>,
    kernel: KernelSpec,
    eps: f64,
    opts: PlanOptions,
    pool: rayon::ThreadPool,
    cache: Mutex<VecDeque<(usize, Arc<Nufft3Plan>)>>,
    counters: Counters,
}

impl std::fmt::Debug for ChunkedPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChunkedPlan")
            .field("vis_chunks", &self.vis.len())
            .field("pix_chunks", &self.pix.len())
            .field("eps_block", &self.kernel.eps)
            .finish()
    }
}

fn block_kernel(eps: f64, n_blocks: usize, opts: &PlanOptions) -> Result<KernelSpec> {
    let eps_block = if opts.strict_accuracy {
        (eps / n_blocks as f64).max(EPS_FLOOR_INTERNAL)
    } else {
        eps
    };
    KernelSpec::for_accuracy_unchecked(eps_block, opts.budget.upsamp)
}

/// Partitions both domains and plans every block.
///
/// Chunk caps account for the kernel padding of each sub-transform, so no
/// block grid exceeds `opts.budget.bytes`. Under strict accuracy the kernel
/// widens with the block count, which can shrink the caps and raise the
/// count again; the two are iterated until the caps were computed for a
/// kernel at least as wide as the one the blocks use.
pub fn build_plan(baselines: &BaselineSet, pixels: &PixelSet, opts: &PlanOptions) -> Result<ChunkedPlan> {
    check_eps(opts.eps, EPS_MIN)?;
    opts.budget.validate()?;
    let mut kernel = KernelSpec::for_accuracy(opts.eps, opts.budget.upsamp)?;
    for _ in 0..16 {
        let support = opts.budget.support.unwrap_or(0).max(kernel.support);
        let budget = opts.budget.with_support(support);
        let dims = solve_box_dims(&baselines.bbox(), &pixels.bbox(), &budget)?;
        let (vis, pix) = chunk_with_dims(baselines.points(), pixels.points(), &dims)?;
        let next = block_kernel(opts.eps, vis.len() * pix.len(), opts)?;
        if next.support <= support {
            return ChunkedPlan::from_chunks(baselines, pixels, vis, pix, opts);
        }
        kernel = next;
    }
    Err(Error::Solver("chunk caps and block accuracy did not settle".into()))
}

impl ChunkedPlan {
    /// Plan over caller-provided chunkings of the two domains.
    pub fn from_chunks(
        baselines: &BaselineSet,
        pixels: &PixelSet,
        vis: ChunkSet,
        pix: ChunkSet,
        opts: &PlanOptions,
    ) -> Result<Self> {
        check_eps(opts.eps, EPS_MIN)?;
        opts.budget.validate()?;
        if vis.n_points() != baselines.len() || pix.n_points() != pixels.len() {
            return Err(Error::domain(format!(
                "chunk sets cover {}/{} points, data has {}/{}",
                vis.n_points(),
                pix.n_points(),
                baselines.len(),
                pixels.len()
            )));
        }
        let kernel = block_kernel(opts.eps, vis.len() * pix.len(), opts)?;
        let vis_perm = vis.order();
        let pix_perm = pix.order();
        let vis_offsets = vis.offsets();
        let pix_offsets = pix.offsets();

        let mut blocks = Vec::with_capacity(vis.len() * pix.len());
        for i in 0..pix.len() {
            for j in 0..vis.len() {
                let n_pix = pix_offsets[i + 1] - pix_offsets[i];
                let n_vis = vis_offsets[j + 1] - vis_offsets[j];
                let strategy = block_strategy(n_pix, n_vis, opts.direct_threshold);
                let (dims, bytes) = match strategy {
                    BlockStrategy::Direct => ([0; 3], 0),
                    BlockStrategy::Nufft => {
                        let d = grid_dims(&vis.boxes()[j], &pix.boxes()[i], &kernel);
                        (d, grid_bytes(d))
                    }
                };
                if bytes > opts.budget.bytes {
                    return Err(Error::Capacity {
                        what: format!("block ({i}, {j}) fine grid {}x{}x{}", dims[0], dims[1], dims[2]),
                        required: bytes,
                        available: opts.budget.bytes,
                    });
                }
                blocks.push(BlockInfo {
                    pix_chunk: i,
                    vis_chunk: j,
                    strategy,
                    dims,
                    grid_bytes: bytes,
                });
            }
        }

        let workers = opts.workers.unwrap_or_else(default_workers).max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::domain(format!("cannot start {workers} workers: {e}")))?;

        Ok(Self {
            baselines: reorder(baselines.points(), &vis_perm)?,
            pixels: reorder(pixels.points(), &pix_perm)?,
            weights: reorder(pixels.weights(), &pix_perm)?,
            vis,
            pix,
            vis_perm,
            pix_perm,
            vis_offsets,
            pix_offsets,
            blocks,
            kernel,
            eps: opts.eps,
            opts: *opts,
            pool,
            cache: Mutex::new(VecDeque::new()),
            counters: Counters::default(),
        })
    }

    pub fn vis_chunks(&self) -> &ChunkSet {
        &self.vis
    }

    pub fn pix_chunks(&self) -> &ChunkSet {
        &self.pix
    }

    /// Chunk-order position → baseline index.
    pub fn vis_permutation(&self) -> &[usize] {
        &self.vis_perm
    }

    /// Chunk-order position → pixel index.
    pub fn pix_permutation(&self) -> &[usize] {
        &self.pix_perm
    }

    /// Blocks in row-major (pixel chunk, baseline chunk) order.
    pub fn blocks(&self) -> &[BlockInfo] {
        &self.blocks
    }

    pub fn block(&self, pix_chunk: usize, vis_chunk: usize) -> &BlockInfo {
        &self.blocks[pix_chunk * self.vis.len() + vis_chunk]
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Accuracy handed to each sub-transform.
    pub fn eps_block(&self) -> f64 {
        self.kernel.eps
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn options(&self) -> &PlanOptions {
        &self.opts
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn n_vis(&self) -> usize {
        self.baselines.len()
    }

    pub fn n_pix(&self) -> usize {
        self.pixels.len()
    }

    /// Largest planned block grid.
    pub fn max_block_grid_bytes(&self) -> u64 {
        self.blocks.iter().map(|b| b.grid_bytes).max().unwrap_or(0)
    }

    pub fn stats(&self) -> ExecStats {
        let c = &self.counters;
        ExecStats {
            direct_blocks: c.direct_blocks.load(Ordering::Relaxed),
            nufft_blocks: c.nufft_blocks.load(Ordering::Relaxed),
            plans_built: c.plans_built.load(Ordering::Relaxed),
            cache_hits: c.cache_hits.load(Ordering::Relaxed),
            peak_block_grid_bytes: c.peak_grid.load(Ordering::Relaxed),
            permute_nanos: c.permute_nanos.load(Ordering::Relaxed),
            blocks_nanos: c.blocks_nanos.load(Ordering::Relaxed),
        }
    }

    pub fn reset_stats(&self) {
        let c = &self.counters;
        c.direct_blocks.store(0, Ordering::Relaxed);
        c.nufft_blocks.store(0, Ordering::Relaxed);
        c.plans_built.store(0, Ordering::Relaxed);
        c.cache_hits.store(0, Ordering::Relaxed);
        c.peak_grid.store(0, Ordering::Relaxed);
        c.permute_nanos.store(0, Ordering::Relaxed);
        c.blocks_nanos.store(0, Ordering::Relaxed);
    }

    fn add_time(counter: &AtomicU64, since: Instant) {
        counter.fetch_add(since.elapsed().as_nanos() as u64, Ordering::Relaxed);
    }

    fn vis_range(&self, j: usize) -> std::ops::Range<usize> {
        self.vis_offsets[j]..self.vis_offsets[j + 1]
    }

    fn pix_range(&self, i: usize) -> std::ops::Range<usize> {
        self.pix_offsets[i]..self.pix_offsets[i + 1]
    }

    fn nufft_plan(&self, idx: usize) -> Result<Arc<Nufft3Plan>> {
        let cap = self.opts.plan_cache;
        if cap > 0 {
            let mut cache = self.cache.lock().expect("plan cache poisoned");
            if let Some(pos) = cache.iter().position(|(k, _)| *k == idx) {
                let entry = cache.remove(pos).expect("position is in range");
                let plan = entry.1.clone();
                cache.push_front(entry);
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(plan);
            }
        }
        let b = &self.blocks[idx];
        let pr = self.pix_range(b.pix_chunk);
        let plan = Arc::new(Nufft3Plan::with_kernel(
            &self.baselines[self.vis_range(b.vis_chunk)],
            &self.pixels[pr.clone()],
            &self.weights[pr],
            self.kernel,
            Some(self.opts.budget.bytes),
        )?);
        self.counters.plans_built.fetch_add(1, Ordering::Relaxed);
        if cap > 0 {
            let mut cache = self.cache.lock().expect("plan cache poisoned");
            if !cache.iter().any(|(k, _)| *k == idx) {
                cache.push_front((idx, plan.clone()));
                cache.truncate(cap);
            }
        }
        Ok(plan)
    }

    fn note_grid(&self, plan: &Nufft3Plan) {
        self.counters.nufft_blocks.fetch_add(1, Ordering::Relaxed);
        self.counters.peak_grid.fetch_max(plan.grid_bytes(), Ordering::Relaxed);
    }

    /// Adds block `idx`'s synthesis of chunk-ordered `vis` into `out`.
    fn synthesis_block(&self, idx: usize, vis: &[Complex64], out: &mut [f64]) -> Result<()> {
        let b = &self.blocks[idx];
        let vr = self.vis_range(b.vis_chunk);
        let pr = self.pix_range(b.pix_chunk);
        match b.strategy {
            BlockStrategy::Direct => {
                self.counters.direct_blocks.fetch_add(1, Ordering::Relaxed);
                direct::synthesis_into(
                    &vis[vr.clone()],
                    &self.baselines[vr],
                    &self.pixels[pr.clone()],
                    &self.weights[pr],
                    out,
                );
                Ok(())
            }
            BlockStrategy::Nufft => {
                let plan = self.nufft_plan(idx)?;
                self.note_grid(&plan);
                plan.synthesis_into(&vis[vr], out)
            }
        }
    }

    fn analysis_block(&self, idx: usize, intensity: &[f64], out: &mut [Complex64]) -> Result<()> {
        let b = &self.blocks[idx];
        let vr = self.vis_range(b.vis_chunk);
        let pr = self.pix_range(b.pix_chunk);
        match b.strategy {
            BlockStrategy::Direct => {
                self.counters.direct_blocks.fetch_add(1, Ordering::Relaxed);
                direct::analysis_into(
                    &intensity[pr.clone()],
                    &self.pixels[pr.clone()],
                    &self.weights[pr],
                    &self.baselines[vr],
                    out,
                );
                Ok(())
            }
            BlockStrategy::Nufft => {
                let plan = self.nufft_plan(idx)?;
                self.note_grid(&plan);
                plan.analysis_into(&intensity[pr], out)
            }
        }
    }

    /// `Î = Re[α · A V]` with `V` and `Î` in user order.
    pub fn apply_synthesis(&self, vis: &[Complex64]) -> Result<Vec<f64>> {
        let t = Instant::now();
        let v = reorder(vis, &self.vis_perm)?;
        Self::add_time(&self.counters.permute_nanos, t);
        let t = Instant::now();
        let nv = self.vis.len();
        let mut acc: Vec<Vec<f64>> = (0..self.pix.len()).map(|i| vec![0.0; self.pix_range(i).len()]).collect();
        self.pool.install(|| -> Result<()> {
            if self.opts.deterministic || nv == 1 {
                acc.par_iter_mut().enumerate().try_for_each(|(i, out)| {
                    (0..nv).try_for_each(|j| self.synthesis_block(i * nv + j, &v, out))
                })
            } else {
                let slots: Vec<Mutex<&mut Vec<f64>>> = acc.iter_mut().map(Mutex::new).collect();
                (0..self.blocks.len()).into_par_iter().try_for_each(|idx| {
                    let i = idx / nv;
                    let mut part = vec![0.0; self.pix_range(i).len()];
                    self.synthesis_block(idx, &v, &mut part)?;
                    let mut out = slots[i].lock().expect("accumulator poisoned");
                    out.iter_mut().zip(&part).for_each(|(o, p)| *o += p);
                    Ok(())
                })
            }
        })?;
        Self::add_time(&self.counters.blocks_nanos, t);
        let t = Instant::now();
        let flat: Vec<f64> = acc.into_iter().flatten().collect();
        let out = inverse_reorder(&flat, &self.pix_perm);
        Self::add_time(&self.counters.permute_nanos, t);
        out
    }

    /// `V = Aᴴ(α · I)` with `I` and `V` in user order.
    pub fn apply_analysis(&self, intensity: &[f64]) -> Result<Vec<Complex64>> {
        let t = Instant::now();
        let x = reorder(intensity, &self.pix_perm)?;
        Self::add_time(&self.counters.permute_nanos, t);
        let t = Instant::now();
        let nv = self.vis.len();
        let np = self.pix.len();
        let mut acc: Vec<Vec<Complex64>> = (0..nv).map(|j| vec![ZERO; self.vis_range(j).len()]).collect();
        self.pool.install(|| -> Result<()> {
            if self.opts.deterministic || np == 1 {
                acc.par_iter_mut().enumerate().try_for_each(|(j, out)| {
                    (0..np).try_for_each(|i| self.analysis_block(i * nv + j, &x, out))
                })
            } else {
                let slots: Vec<Mutex<&mut Vec<Complex64>>> = acc.iter_mut().map(Mutex::new).collect();
                (0..self.blocks.len()).into_par_iter().try_for_each(|idx| {
                    let j = idx % nv;
                    let mut part = vec![ZERO; self.vis_range(j).len()];
                    self.analysis_block(idx, &x, &mut part)?;
                    let mut out = slots[j].lock().expect("accumulator poisoned");
                    out.iter_mut().zip(&part).for_each(|(o, p)| *o += p);
                    Ok(())
                })
            }
        })?;
        Self::add_time(&self.counters.blocks_nanos, t);
        let t = Instant::now();
        let flat: Vec<Complex64> = acc.into_iter().flatten().collect();
        let out = inverse_reorder(&flat, &self.vis_perm);
        Self::add_time(&self.counters.permute_nanos, t);
        out
    }
}
