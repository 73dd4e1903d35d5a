//! Chunking of baselines and pixels into Heisenberg-bounded groups.
//!
//! [`solve_box_dims`] picks per-axis caps `(h, η)` that minimise the number
//! of sub-transforms under a per-transform FFT memory budget, [`lattice_bin`]
//! buckets points into `h`-sized cells and [`fuse`] merges neighbouring
//! chunks whose joint box still fits in `h`.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{bounding_box, BaselineSet, BoundingBox, PixelSet, Vec3};
use crate::kernel::{check_upsamp, next_smooth};
use crate::lp::solve_lp;
use crate::nufft3::padded_axis_size;

/// Cap assigned to axes of zero extent.
pub const DEGENERATE_CAP: f64 = 1e-12;

/// Lattice cells per axis above which binning is refused.
const MAX_CELLS_PER_AXIS: u64 = 1 << 42;

/// Memory budget of one sub-transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionBudget {
    /// Largest fine grid of one sub-transform [bytes].
    pub bytes: u64,
    pub upsamp: f64,
    /// Bytes per complex sample, 8 or 16.
    pub delta: u64,
    /// Largest allowed cell anisotropy, at least 1.
    pub alpha: f64,
    /// Kernel support to account for grid padding. `None` uses the bare
    /// product constraint `Π η_k·h_k ≤ 8π³B/(υ³δ)` only.
    pub support: Option<usize>,
}

impl PartitionBudget {
    pub fn new(bytes: u64, upsamp: f64, alpha: f64) -> Result<Self> {
        let b = Self {
            bytes,
            upsamp,
            delta: 16,
            alpha,
            support: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_support(mut self, support: usize) -> Self {
        self.support = Some(support);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.bytes == 0 {
            return Err(Error::domain("memory budget must be positive"));
        }
        check_upsamp(self.upsamp)?;
        if self.delta != 8 && self.delta != 16 {
            return Err(Error::domain(format!("bytes per complex must be 8 or 16, got {}", self.delta)));
        }
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(Error::domain(format!("anisotropy cap must be at least 1, got {}", self.alpha)));
        }
        Ok(())
    }

    /// `8π³B/(υ³δ)`, the cap on `Π η_k·h_k`.
    pub fn product_cap(&self) -> f64 {
        8.0 * PI.powi(3) * self.bytes as f64 / (self.upsamp.powi(3) * self.delta as f64)
    }

    /// Bytes of the padded fine grid of a sub-transform with box extents
    /// `h` and `eta`, as sized by the type-3 planner.
    pub fn padded_bytes(&self, h: &Vec3, eta: &Vec3, support: usize) -> u64 {
        (0..3)
            .map(|k| padded_axis_size(h[k], eta[k], self.upsamp, support) as u64)
            .product::<u64>()
            * self.delta
    }
}

/// Per-axis caps on chunk extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeisenbergDims {
    /// Caps on baseline chunks.
    pub h: Vec3,
    /// Caps on pixel chunks.
    pub eta: Vec3,
}

impl HeisenbergDims {
    /// `Π(B_k/h_k)·Π(P_k/η_k)` over non-degenerate axes.
    pub fn chunk_count_estimate(&self, bbox_vis: &BoundingBox, bbox_pix: &BoundingBox) -> f64 {
        let be = bbox_vis.extents();
        let pe = bbox_pix.extents();
        let mut n = 1.0;
        for k in 0..3 {
            if !is_degenerate(be[k]) {
                n *= be[k] / self.h[k];
            }
            if !is_degenerate(pe[k]) {
                n *= pe[k] / self.eta[k];
            }
        }
        n
    }
}

fn is_degenerate(extent: f64) -> bool {
    extent.is_nan() || extent <= DEGENERATE_CAP
}

/// Largest Heisenberg caps under the budget.
///
/// Solved as an LP in `a_k = log(B_k/h_k) ≥ 0`, `b_k = log(P_k/η_k) ≥ 0`:
/// minimise `Σa + Σb` subject to the memory cap `Σa + Σb ≥ log(ΠB_kP_k/C)`
/// and `|z_u − z_v| ≤ log α` for every pair of variables, which is the
/// anisotropy bound on `h_k/h_j`, `η_k/η_j` and `h_k/η_j` relative to the box
/// aspect ratios. Axes of zero extent are left out and capped at
/// [`DEGENERATE_CAP`].
///
/// With `budget.support` set, the cap `C` is shrunk until the padded grid
/// of a worst-case chunk pair fits in `budget.bytes`.
pub fn solve_box_dims(
    bbox_vis: &BoundingBox,
    bbox_pix: &BoundingBox,
    budget: &PartitionBudget,
) -> Result<HeisenbergDims> {
    budget.validate()?;
    let be = bbox_vis.extents();
    let pe = bbox_pix.extents();
    if be.iter().chain(&pe).any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::domain("bounding boxes must have finite, non-negative extents"));
    }
    let cap = budget.product_cap();
    let Some(w) = budget.support else {
        return lp_dims(&be, &pe, cap, budget.alpha);
    };

    let floor = next_smooth(2 * w) as u64;
    let min_bytes = floor.pow(3) * budget.delta;
    if min_bytes > budget.bytes {
        return Err(Error::Capacity {
            what: format!("smallest kernel-padded grid ({floor}^3)"),
            required: min_bytes,
            available: budget.bytes,
        });
    }
    let fits = |d: &HeisenbergDims| budget.padded_bytes(&d.h, &d.eta, w) <= budget.bytes;
    let dims = lp_dims(&be, &pe, cap, budget.alpha)?;
    if fits(&dims) {
        return Ok(dims);
    }
    // Bracket, then bisect on log C.
    let mut hi = cap.ln();
    let mut lo = hi;
    let mut best = None;
    for _ in 0..400 {
        lo -= 2f64.ln();
        let d = lp_dims(&be, &pe, lo.exp(), budget.alpha)?;
        if fits(&d) {
            best = Some(d);
            break;
        }
        hi = lo;
    }
    let mut best = best.ok_or_else(|| Error::Solver("padding-aware cap search did not converge".into()))?;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        let d = lp_dims(&be, &pe, mid.exp(), budget.alpha)?;
        if fits(&d) {
            lo = mid;
            best = d;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

fn lp_dims(be: &Vec3, pe: &Vec3, cap: f64, alpha: f64) -> Result<HeisenbergDims> {
    // Variables: active baseline axes, then active pixel axes.
    let mut vars: Vec<(bool, usize, f64)> = Vec::new();
    for k in 0..3 {
        if !is_degenerate(be[k]) {
            vars.push((false, k, be[k]));
        }
    }
    for k in 0..3 {
        if !is_degenerate(pe[k]) {
            vars.push((true, k, pe[k]));
        }
    }
    let mut h = [DEGENERATE_CAP; 3];
    let mut eta = [DEGENERATE_CAP; 3];
    if vars.is_empty() {
        return Ok(HeisenbergDims { h, eta });
    }

    let n = vars.len();
    let need = vars.iter().map(|v| v.2.ln()).sum::<f64>() - cap.ln();
    let slack = alpha.ln();
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut row = vec![-1.0; n];
    a.push(row.clone());
    b.push(-need);
    for u in 0..n {
        for v in 0..n {
            if u != v {
                row.iter_mut().for_each(|x| *x = 0.0);
                row[u] = 1.0;
                row[v] = -1.0;
                a.push(row.clone());
                b.push(slack);
            }
        }
    }
    let sol = solve_lp(&vec![1.0; n], &a, &b)?;
    let mut z = sol.x;
    // Round-off can leave the cap marginally violated.
    let total: f64 = z.iter().sum();
    if total < need {
        let lift = (need - total) / n as f64;
        z.iter_mut().for_each(|x| *x += lift);
    }
    for ((is_pix, k, ext), zi) in vars.into_iter().zip(z) {
        let cap_k = ext * (-zi).exp();
        if is_pix {
            eta[k] = cap_k;
        } else {
            h[k] = cap_k;
        }
    }
    Ok(HeisenbergDims { h, eta })
}

/// Disjoint groups of point indices, each with its tight bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSet {
    boxes: Vec<BoundingBox>,
    members: Vec<Vec<usize>>,
    membership: Vec<usize>,
    caps: Vec3,
}

impl ChunkSet {
    fn from_groups(points: &[Vec3], mut groups: Vec<Vec<usize>>, caps: Vec3) -> Result<Self> {
        let mut membership = vec![usize::MAX; points.len()];
        let mut boxes = Vec::with_capacity(groups.len());
        for (c, g) in groups.iter_mut().enumerate() {
            g.sort_unstable();
            let mut bbox = BoundingBox::from_point(&points[g[0]]);
            for &i in g.iter() {
                membership[i] = c;
                bbox.include(&points[i]);
            }
            boxes.push(bbox);
        }
        if membership.contains(&usize::MAX) {
            return Err(Error::domain("chunk groups do not cover every point"));
        }
        Ok(Self {
            boxes,
            members: groups,
            membership,
            caps,
        })
    }

    /// Every point in a single chunk.
    pub fn single(points: &[Vec3]) -> Result<Self> {
        let bbox = bounding_box(points)?;
        let caps = bbox.extents();
        Ok(Self {
            boxes: vec![bbox],
            members: vec![(0..points.len()).collect()],
            membership: vec![0; points.len()],
            caps,
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.membership.len()
    }

    /// Tight box of each chunk.
    pub fn boxes(&self) -> &[BoundingBox] {
        &self.boxes
    }

    /// Point indices of chunk `c`, ascending.
    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }

    /// Chunk index of each point.
    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// Per-axis cap the chunks were built against.
    pub fn caps(&self) -> Vec3 {
        self.caps
    }

    /// Point indices in chunk order: chunk 0's members, then chunk 1's, ...
    pub fn order(&self) -> Vec<usize> {
        self.members.iter().flatten().copied().collect()
    }

    /// Start of each chunk in [`order`](Self::order), plus the total.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len() + 1);
        out.push(0);
        for m in &self.members {
            out.push(out.last().unwrap() + m.len());
        }
        out
    }
}

fn check_caps(h: &Vec3) -> Result<()> {
    if h.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::domain(format!("chunk caps must be positive and finite, got {h:?}")));
    }
    Ok(())
}

/// Interleaves three 42-bit coordinates.
fn morton(c: [u64; 3]) -> u128 {
    let mut key = 0u128;
    for bit in 0..42 {
        for (k, v) in c.iter().enumerate() {
            key |= (((v >> bit) & 1) as u128) << (3 * bit + 2 - k);
        }
    }
    key
}

/// Buckets points into a lattice of `h`-sized cells anchored at the cloud's
/// minimum corner; empty cells produce no chunk.
///
/// Cells are half-open, `[k·h, (k+1)·h)`, except that points on the far
/// boundary go to the last cell. Binning uses `h·(1 − 1e-12)` so floating
/// point rounding cannot push a chunk's tight extent past `h`. Chunks are
/// returned in Morton order of their cells.
pub fn lattice_bin(points: &[Vec3], h: &Vec3) -> Result<ChunkSet> {
    check_caps(h)?;
    if points.is_empty() {
        return Ok(ChunkSet {
            boxes: vec![],
            members: vec![],
            membership: vec![],
            caps: *h,
        });
    }
    let bbox = bounding_box(points)?;
    let ext = bbox.extents();
    let step = h.map(|v| v * (1.0 - 1e-12));
    let mut cells = [1u64; 3];
    for k in 0..3 {
        let m = (ext[k] / step[k]).ceil();
        if m > MAX_CELLS_PER_AXIS as f64 {
            return Err(Error::domain(format!(
                "lattice along axis {k} would need {m:e} cells (extent {}, cap {})",
                ext[k], h[k]
            )));
        }
        cells[k] = (m as u64).max(1);
    }
    let cell_of = |p: &Vec3| -> [u64; 3] {
        [0, 1, 2].map(|k| {
            let c = ((p[k] - bbox.min[k]) / step[k]).floor().max(0.0) as u64;
            c.min(cells[k] - 1)
        })
    };
    let mut keyed: Vec<(u128, usize)> = points.par_iter().enumerate().map(|(i, p)| (morton(cell_of(p)), i)).collect();
    keyed.par_sort_unstable();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last = None;
    for (key, i) in keyed {
        if last != Some(key) {
            groups.push(Vec::new());
            last = Some(key);
        }
        groups.last_mut().unwrap().push(i);
    }
    ChunkSet::from_groups(points, groups, *h)
}

fn fits(bbox: &BoundingBox, h: &Vec3) -> bool {
    let e = bbox.extents();
    (0..3).all(|k| e[k] <= h[k])
}

struct Node {
    bbox: BoundingBox,
    members: Vec<usize>,
    key: u128,
    alive: bool,
}

/// Merges chunk pairs whose joint tight box fits in `h` until no such pair
/// is left.
///
/// Chunks are visited smallest first, ties broken by the Morton index of the
/// cell holding their minimum corner and then by id. A visited chunk merges
/// with its smallest fusible neighbour; the merged chunk is queued again.
/// A chunk that finds no partner can only become fusible with a chunk
/// created later, which checks it when visited, so the result is a fixpoint.
pub fn fuse(chunks: &ChunkSet, h: &Vec3) -> Result<ChunkSet> {
    check_caps(h)?;
    if chunks.len() < 2 {
        let mut out = chunks.clone();
        out.caps = *h;
        return Ok(out);
    }
    if let Some(c) = chunks.boxes.iter().position(|b| !fits(b, h)) {
        return Err(Error::domain(format!("chunk {c} already exceeds the fusion cap")));
    }
    let gmin = chunks.boxes.iter().fold(chunks.boxes[0].min, |m, b| {
        [0, 1, 2].map(|k| m[k].min(b.min[k]))
    });
    // Hash cells slightly wider than h: fusible chunks have minimum corners
    // within h of each other, so they sit in adjacent cells.
    let cell = h.map(|v| v * (1.0 + 1e-9));
    let cell_of = |b: &BoundingBox| -> [i64; 3] {
        [0, 1, 2].map(|k| ((b.min[k] - gmin[k]) / cell[k]).floor().clamp(0.0, 4e18) as i64)
    };

    let mut nodes: Vec<Node> = chunks
        .boxes
        .iter()
        .zip(&chunks.members)
        .map(|(b, m)| Node {
            bbox: *b,
            members: m.clone(),
            key: morton(cell_of(b).map(|c| c as u64)),
            alive: true,
        })
        .collect();
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut queue = BinaryHeap::new();
    for (id, n) in nodes.iter().enumerate() {
        grid.entry(cell_of(&n.bbox)).or_default().push(id);
        queue.push(Reverse((n.members.len(), n.key, id)));
    }

    while let Some(Reverse((_, _, id))) = queue.pop() {
        if !nodes[id].alive {
            continue;
        }
        let home = cell_of(&nodes[id].bbox);
        let mut partner: Option<(usize, u128, usize)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(ids) = grid.get(&[home[0] + dx, home[1] + dy, home[2] + dz]) else {
                        continue;
                    };
                    for &j in ids {
                        if j == id || !fits(&nodes[id].bbox.union(&nodes[j].bbox), h) {
                            continue;
                        }
                        let cand = (nodes[j].members.len(), nodes[j].key, j);
                        if partner.is_none_or(|p| cand < p) {
                            partner = Some(cand);
                        }
                    }
                }
            }
        }
        let Some((_, _, j)) = partner else {
            continue;
        };
        for old in [id, j] {
            nodes[old].alive = false;
            let c = cell_of(&nodes[old].bbox);
            let bucket = grid.get_mut(&c).expect("live chunk is indexed");
            bucket.retain(|&x| x != old);
            if bucket.is_empty() {
                grid.remove(&c);
            }
        }
        let a = std::mem::take(&mut nodes[id].members);
        let b = std::mem::take(&mut nodes[j].members);
        let mut members = Vec::with_capacity(a.len() + b.len());
        members.extend(a);
        members.extend(b);
        let merged = Node {
            bbox: nodes[id].bbox.union(&nodes[j].bbox),
            members,
            key: nodes[id].key.min(nodes[j].key),
            alive: true,
        };
        let new_id = nodes.len();
        grid.entry(cell_of(&merged.bbox)).or_default().push(new_id);
        queue.push(Reverse((merged.members.len(), merged.key, new_id)));
        nodes.push(merged);
    }

    let mut live: Vec<Node> = nodes.into_iter().filter(|n| n.alive).collect();
    for n in &mut live {
        n.members.sort_unstable();
    }
    live.sort_by_key(|n| (n.key, n.members[0]));
    let n_points = chunks.n_points();
    let mut membership = vec![0; n_points];
    for (c, n) in live.iter().enumerate() {
        for &i in &n.members {
            membership[i] = c;
        }
    }
    Ok(ChunkSet {
        boxes: live.iter().map(|n| n.bbox).collect(),
        members: live.into_iter().map(|n| n.members).collect(),
        membership,
        caps: *h,
    })
}

/// Caps, then lattice binning and fusion in both domains.
pub fn auto_chunk(
    baselines: &BaselineSet,
    pixels: &PixelSet,
    budget: &PartitionBudget,
) -> Result<(ChunkSet, ChunkSet)> {
    let dims = solve_box_dims(&baselines.bbox(), &pixels.bbox(), budget)?;
    chunk_with_dims(baselines.points(), pixels.points(), &dims)
}

/// Lattice binning and fusion with given caps.
pub fn chunk_with_dims(
    baselines: &[Vec3],
    pixels: &[Vec3],
    dims: &HeisenbergDims,
) -> Result<(ChunkSet, ChunkSet)> {
    let vis = fuse(&lattice_bin(baselines, &dims.h)?, &dims.h)?;
    let pix = fuse(&lattice_bin(pixels, &dims.eta)?, &dims.eta)?;
    Ok((vis, pix))
}
