//! Implementations behind the CLI verbs, usable without spawning the binary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use hvox::chunked::default_workers;
use hvox::geometry::{make_dcos_mesh, make_fibonacci_cap_mesh, simulate_baselines};
use hvox::nufft3::grid_dims;
use hvox::{
    build_plan, direct_analysis, direct_synthesis, make_plan, BaselineSet, BlockStrategy, ChunkedPlan,
    KernelSpec, PixelSet, Vec3,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::arrayfile::{read_array, write_array, Array, ArrayData};
use crate::config::{MeshKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{ChunkSummary, Manifest, Timings};
use crate::presets::Preset;

/// Direct evaluation is skipped in benchmarks above this many pixel-visibility pairs.
pub const BENCH_DIRECT_LIMIT: u64 = 1_000_000_000;

const PHASE_CENTER: Vec3 = [0.0, 0.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Brute-force sum.
    Direct,
    /// Chunked NUFFT.
    Hvox,
    /// Single NUFFT over the full bounding boxes.
    HvoxMono,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Hvox => "hvox",
            Method::HvoxMono => "hvox-mono",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Analysis,
    Synthesis,
}

/// Where baselines and pixels come from when not simulated from the config.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub baselines: Option<PathBuf>,
    pub pixels: Option<PathBuf>,
    /// Keep only this many pixels nearest the mesh centre.
    pub sparse: Option<usize>,
}

pub fn simulate(cfg: &RunConfig) -> CliResult<BaselineSet> {
    Ok(simulate_baselines(&cfg.observation_config()?)?)
}

pub fn build_mesh(cfg: &RunConfig) -> CliResult<PixelSet> {
    let fov = cfg.mesh_fov();
    Ok(match cfg.mesh.kind {
        MeshKind::Dcos => make_dcos_mesh(&PHASE_CENTER, fov, cfg.mesh.size)?,
        MeshKind::Fibonacci => make_fibonacci_cap_mesh(&PHASE_CENTER, fov, cfg.mesh.size)?,
    })
}

/// The `n` pixels closest to the normalised centroid, in their original order.
pub fn sparse_subset(px: &PixelSet, n: usize) -> CliResult<PixelSet> {
    if n == 0 || n > px.len() {
        return Err(CliError::user(format!("--sparse {n} must lie in 1..={}", px.len())));
    }
    let mut c = [0.0; 3];
    for p in px.points() {
        (0..3).for_each(|k| c[k] += p[k]);
    }
    let norm = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    if norm > 0.0 {
        c.iter_mut().for_each(|x| *x /= norm);
    } else {
        c = PHASE_CENTER;
    }
    let mut idx: Vec<usize> = (0..px.len()).collect();
    let cos = |i: usize| -> f64 { (0..3).map(|k| px.points()[i][k] * c[k]).sum() };
    idx.sort_by(|&a, &b| cos(b).total_cmp(&cos(a)).then(a.cmp(&b)));
    idx.truncate(n);
    idx.sort_unstable();
    Ok(px.select(&idx)?)
}

pub fn baselines_to_array(bl: &BaselineSet) -> Array {
    Array::matrix_f64(bl.points().iter().map(|p| p.to_vec()).collect(), 3).expect("n×3 shape")
}

/// Pixels as an `n × 4` array of `x, y, z, weight`.
pub fn pixels_to_array(px: &PixelSet) -> Array {
    let rows = px
        .points()
        .iter()
        .zip(px.weights())
        .map(|(p, &w)| vec![p[0], p[1], p[2], w])
        .collect();
    Array::matrix_f64(rows, 4).expect("n×4 shape")
}

pub fn baselines_from_array(a: &Array) -> CliResult<BaselineSet> {
    let rows = a.rows_f64(3).map_err(|e| CliError::user(format!("baselines: {e}")))?;
    Ok(BaselineSet::new(rows.iter().map(|r| [r[0], r[1], r[2]]).collect())?)
}

pub fn pixels_from_array(a: &Array) -> CliResult<PixelSet> {
    let rows = a.rows_f64(4).map_err(|e| CliError::user(format!("pixels: {e}")))?;
    Ok(PixelSet::new(
        rows.iter().map(|r| [r[0], r[1], r[2]]).collect(),
        rows.iter().map(|r| r[3]).collect(),
    )?)
}

pub fn resolve_geometry(cfg: &RunConfig, inputs: &Inputs) -> CliResult<(BaselineSet, PixelSet)> {
    let bl = match &inputs.baselines {
        Some(p) => baselines_from_array(&read_array(p)?)?,
        None => simulate(cfg)?,
    };
    let px = match &inputs.pixels {
        Some(p) => pixels_from_array(&read_array(p)?)?,
        None => build_mesh(cfg)?,
    };
    let px = match inputs.sparse {
        Some(n) => sparse_subset(&px, n)?,
        None => px,
    };
    Ok((bl, px))
}

/// What a single transform run did and how long it took.
#[derive(Debug, Clone, Copy)]
pub struct RunReport {
    pub method: Method,
    pub timings: Timings,
    pub chunks: ChunkSummary,
    pub peak_block_grid_bytes: u64,
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn with_pool<R: Send>(cfg: &RunConfig, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or_else(default_workers))
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn single_block(direct: bool, eps: f64) -> ChunkSummary {
    ChunkSummary {
        vis_chunks: 1,
        pix_chunks: 1,
        direct_blocks: direct as usize,
        nufft_blocks: !direct as usize,
        eps_block: if direct { 0.0 } else { eps },
    }
}

fn chunk_summary(plan: &ChunkedPlan) -> ChunkSummary {
    let direct = plan.blocks().iter().filter(|b| b.strategy == BlockStrategy::Direct).count();
    ChunkSummary {
        vis_chunks: plan.vis_chunks().len(),
        pix_chunks: plan.pix_chunks().len(),
        direct_blocks: direct,
        nufft_blocks: plan.blocks().len() - direct,
        eps_block: plan.eps_block(),
    }
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> CliResult<()> {
    if values.into_iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(CliError::Internal("transform produced non-finite output".into()))
    }
}

/// One transform in either direction; the input is complex visibilities for
/// synthesis and a real image for analysis.
enum Output {
    Image(Vec<f64>),
    Vis(Vec<Complex64>),
}

fn run(
    cfg: &RunConfig,
    method: Method,
    bl: &BaselineSet,
    px: &PixelSet,
    vis: Option<&[Complex64]>,
    img: Option<&[f64]>,
) -> CliResult<(Output, RunReport)> {
    let start = Instant::now();
    let exec = |plan_s: f64, t: Instant| -> Timings {
        Timings {
            plan_s,
            permute_s: 0.0,
            blocks_s: secs(t),
            total_s: secs(start),
        }
    };
    let (out, timings, chunks, peak) = match method {
        Method::Direct => {
            let t = Instant::now();
            let out = with_pool(cfg, || match (vis, img) {
                (Some(v), _) => direct_synthesis(v, bl, px).map(Output::Image),
                (_, Some(i)) => direct_analysis(i, px, bl).map(Output::Vis),
                _ => unreachable!("one input is always given"),
            })??;
            (out, exec(0.0, t), single_block(true, cfg.eps), 0)
        }
        Method::HvoxMono => {
            let (out, plan_s, t, peak) = with_pool(cfg, || -> CliResult<_> {
                let plan = make_plan(bl, px, cfg.eps, cfg.upsamp, None)?;
                let plan_s = secs(start);
                let t = Instant::now();
                let out = match (vis, img) {
                    (Some(v), _) => Output::Image(plan.execute_synthesis(v)?),
                    (_, Some(i)) => Output::Vis(plan.execute_analysis(i)?),
                    _ => unreachable!("one input is always given"),
                };
                Ok((out, plan_s, t, plan.grid_bytes()))
            })??;
            (out, exec(plan_s, t), single_block(false, cfg.eps), peak)
        }
        Method::Hvox => {
            let plan = build_plan(bl, px, &cfg.plan_options()?)?;
            let plan_s = secs(start);
            let out = match (vis, img) {
                (Some(v), _) => Output::Image(plan.apply_synthesis(v)?),
                (_, Some(i)) => Output::Vis(plan.apply_analysis(i)?),
                _ => unreachable!("one input is always given"),
            };
            let stats = plan.stats();
            let timings = Timings {
                plan_s,
                permute_s: stats.permute_nanos as f64 * 1e-9,
                blocks_s: stats.blocks_nanos as f64 * 1e-9,
                total_s: secs(start),
            };
            (out, timings, chunk_summary(&plan), stats.peak_block_grid_bytes)
        }
    };
    match &out {
        Output::Image(v) => check_finite(v)?,
        Output::Vis(v) => check_finite(v.iter().flat_map(|z| [&z.re, &z.im]))?,
    }
    let report = RunReport {
        method,
        timings,
        chunks,
        peak_block_grid_bytes: peak,
    };
    Ok((out, report))
}

/// Dirty image `Re[α · A V]`.
pub fn run_synthesis(
    cfg: &RunConfig,
    method: Method,
    bl: &BaselineSet,
    px: &PixelSet,
    vis: &[Complex64],
) -> CliResult<(Vec<f64>, RunReport)> {
    match run(cfg, method, bl, px, Some(vis), None)? {
        (Output::Image(v), r) => Ok((v, r)),
        _ => Err(CliError::Internal("synthesis returned visibilities".into())),
    }
}

/// Visibilities `Aᴴ(α · I)`.
pub fn run_analysis(
    cfg: &RunConfig,
    method: Method,
    bl: &BaselineSet,
    px: &PixelSet,
    img: &[f64],
) -> CliResult<(Vec<Complex64>, RunReport)> {
    match run(cfg, method, bl, px, None, Some(img))? {
        (Output::Vis(v), r) => Ok((v, r)),
        _ => Err(CliError::Internal("analysis returned an image".into())),
    }
}

fn manifest_path(out: &Path, explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    })
}

fn write_manifest(m: &Manifest, path: &Path) -> CliResult<()> {
    std::fs::write(path, m.to_json()).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

fn record(m: &mut Manifest, method: Method, bl: &BaselineSet, px: &PixelSet, r: &RunReport) {
    m.chunks = Some(r.chunks);
    m.peak_block_grid_bytes = Some(r.peak_block_grid_bytes);
    m.timings = r.timings;
    m.detail("method", method.name())
        .detail("n_vis", bl.len())
        .detail("n_pix", px.len());
}

/// Writes the baselines as `N_vis × 3` and returns the manifest.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path, manifest: Option<&Path>) -> CliResult<Manifest> {
    let start = Instant::now();
    let obs = cfg.observation_config()?;
    let bl = simulate_baselines(&obs)?;
    write_array(out, &baselines_to_array(&bl))?;
    let mut m = Manifest::new("simulate", cfg);
    m.detail("n_vis", bl.len())
        .detail("n_antennas", obs.antennas.len())
        .detail("n_times", obs.n_times)
        .detail("freq_hz", obs.freq_hz)
        .detail("fov_deg", obs.fov_deg)
        .detail("wavelength_m", obs.wavelength());
    m.timings.total_s = secs(start);
    write_manifest(&m, &manifest_path(out, manifest))?;
    Ok(m)
}

/// Writes the mesh as `N_pix × 4` (`x, y, z, weight`).
pub fn cmd_mesh(cfg: &RunConfig, sparse: Option<usize>, out: &Path, manifest: Option<&Path>) -> CliResult<Manifest> {
    let start = Instant::now();
    let mut px = build_mesh(cfg)?;
    if let Some(n) = sparse {
        px = sparse_subset(&px, n)?;
    }
    write_array(out, &pixels_to_array(&px))?;
    let mut m = Manifest::new("mesh", cfg);
    m.detail("n_pix", px.len()).detail("fov_deg", cfg.mesh_fov());
    m.timings.total_s = secs(start);
    write_manifest(&m, &manifest_path(out, manifest))?;
    Ok(m)
}

pub fn cmd_vis2dirty(
    cfg: &RunConfig,
    inputs: &Inputs,
    method: Method,
    vis_file: &Path,
    out: &Path,
    manifest: Option<&Path>,
) -> CliResult<Manifest> {
    let (bl, px) = resolve_geometry(cfg, inputs)?;
    let vis = match read_array(vis_file)?.data {
        ArrayData::C128(v) => v,
        ArrayData::F64(_) => return Err(CliError::user("visibilities must be complex128")),
    };
    if vis.len() != bl.len() {
        return Err(CliError::user(format!("{} visibilities for {} baselines", vis.len(), bl.len())));
    }
    let (img, report) = run_synthesis(cfg, method, &bl, &px, &vis)?;
    write_array(out, &Array::vector_f64(img))?;
    let mut m = Manifest::new("vis2dirty", cfg);
    record(&mut m, method, &bl, &px, &report);
    write_manifest(&m, &manifest_path(out, manifest))?;
    Ok(m)
}

pub fn cmd_dirty2vis(
    cfg: &RunConfig,
    inputs: &Inputs,
    method: Method,
    image_file: &Path,
    out: &Path,
    manifest: Option<&Path>,
) -> CliResult<Manifest> {
    let (bl, px) = resolve_geometry(cfg, inputs)?;
    let img = match read_array(image_file)?.data {
        ArrayData::F64(v) => v,
        ArrayData::C128(_) => return Err(CliError::user("image must be float64")),
    };
    if img.len() != px.len() {
        return Err(CliError::user(format!("{} image values for {} pixels", img.len(), px.len())));
    }
    let (vis, report) = run_analysis(cfg, method, &bl, &px, &img)?;
    write_array(out, &Array::vector_c128(vis))?;
    let mut m = Manifest::new("dirty2vis", cfg);
    record(&mut m, method, &bl, &px, &report);
    write_manifest(&m, &manifest_path(out, manifest))?;
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareReport {
    /// `‖a − b‖² / ‖b‖²`; absent when `b` is zero.
    pub nmse: Option<f64>,
    /// `‖a − b‖² / n`.
    pub mse: f64,
    pub max_abs_dev: f64,
    /// Set when `b` is identically zero and only `mse` is meaningful.
    pub reference_zero: bool,
}

/// Compares `a` against the reference `b`.
pub fn compare(a: &Array, b: &Array) -> CliResult<CompareReport> {
    if a.dims != b.dims {
        return Err(CliError::user(format!("shape mismatch: {:?} vs {:?}", a.dims, b.dims)));
    }
    let (diff2, ref2, maxdev, n) = match (&a.data, &b.data) {
        (ArrayData::F64(x), ArrayData::F64(y)) => fold(x.iter().zip(y).map(|(p, q)| ((p - q).abs(), q.abs()))),
        (ArrayData::C128(x), ArrayData::C128(y)) => fold(x.iter().zip(y).map(|(p, q)| ((p - q).norm(), q.norm()))),
        _ => {
            return Err(CliError::user(format!(
                "dtype mismatch: {} vs {}",
                a.data.dtype_name(),
                b.data.dtype_name()
            )))
        }
    };
    let reference_zero = ref2 == 0.0;
    Ok(CompareReport {
        nmse: (!reference_zero).then(|| diff2 / ref2),
        mse: if n == 0 { 0.0 } else { diff2 / n as f64 },
        max_abs_dev: maxdev,
        reference_zero,
    })
}

fn fold(pairs: impl Iterator<Item = (f64, f64)>) -> (f64, f64, f64, usize) {
    pairs.fold((0.0, 0.0, 0.0, 0), |(d, r, m, n), (dev, mag)| {
        (d + dev * dev, r + mag * mag, m.max(dev), n + 1)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub preset: String,
    pub method: Method,
    pub direction: Direction,
    pub seconds: f64,
    pub peak_block_bytes: u64,
    pub n_chunks_vis: usize,
    pub n_chunks_pix: usize,
}

pub const BENCH_CSV_HEADER: &str = "preset,method,direction,seconds,peak_block_bytes,n_chunks_vis,n_chunks_pix";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{BENCH_CSV_HEADER}\n");
    for r in rows {
        let dir = match r.direction {
            Direction::Analysis => "analysis",
            Direction::Synthesis => "synthesis",
        };
        s.push_str(&format!(
            "{},{},{},{:.6},{},{},{}\n",
            r.preset,
            r.method.name(),
            dir,
            r.seconds,
            r.peak_block_bytes,
            r.n_chunks_vis,
            r.n_chunks_pix
        ));
    }
    s
}

/// Median wall time of `repeats` runs after one warm-up, per method and
/// direction. Direct runs are skipped above [`BENCH_DIRECT_LIMIT`] pairs.
pub fn bench(
    base: &RunConfig,
    preset: &Preset,
    methods: &[Method],
    repeats: usize,
    sparse: Option<usize>,
) -> CliResult<Vec<BenchRow>> {
    let mut cfg = base.clone();
    preset.configure(&mut cfg);
    let (bl, px) = resolve_geometry(
        &cfg,
        &Inputs {
            sparse,
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vis: Vec<Complex64> = (0..bl.len())
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let img: Vec<f64> = (0..px.len()).map(|_| rng.sample(StandardNormal)).collect();

    let mut rows = Vec::new();
    for &method in methods {
        if method == Method::Direct && (bl.len() as u64) * (px.len() as u64) > BENCH_DIRECT_LIMIT {
            continue;
        }
        for direction in [Direction::Analysis, Direction::Synthesis] {
            let mut times = Vec::with_capacity(repeats);
            let mut last = None;
            for rep in 0..=repeats.max(1) {
                let r = match direction {
                    Direction::Analysis => run_analysis(&cfg, method, &bl, &px, &img)?.1,
                    Direction::Synthesis => run_synthesis(&cfg, method, &bl, &px, &vis)?.1,
                };
                if rep > 0 {
                    times.push(r.timings.total_s);
                }
                let peak = last.map_or(0, |l: RunReport| l.peak_block_grid_bytes);
                last = Some(RunReport {
                    peak_block_grid_bytes: peak.max(r.peak_block_grid_bytes),
                    ..r
                });
            }
            times.sort_by(f64::total_cmp);
            let r = last.expect("at least one run");
            rows.push(BenchRow {
                preset: preset.name.to_string(),
                method,
                direction,
                seconds: times[times.len() / 2],
                peak_block_bytes: r.peak_block_grid_bytes,
                n_chunks_vis: r.chunks.vis_chunks,
                n_chunks_pix: r.chunks.pix_chunks,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkRecord {
    pub id: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub count: usize,
    /// Largest block grid this chunk takes part in; 0 if all its blocks are direct.
    pub grid_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkReport {
    pub n_vis: usize,
    pub n_pix: usize,
    pub budget_bytes: u64,
    pub monolithic_grid_bytes: u64,
    pub max_block_grid_bytes: u64,
    pub vis: Vec<ChunkRecord>,
    pub pix: Vec<ChunkRecord>,
}

pub fn chunk_inspect(cfg: &RunConfig, inputs: &Inputs) -> CliResult<ChunkReport> {
    let (bl, px) = resolve_geometry(cfg, inputs)?;
    let plan = build_plan(&bl, &px, &cfg.plan_options()?)?;
    let kernel = KernelSpec::for_accuracy(cfg.eps, cfg.upsamp)?;
    let mono = hvox::grid::grid_bytes(grid_dims(&bl.bbox(), &px.bbox(), &kernel));
    let records = |set: &hvox::ChunkSet, pick: &dyn Fn(&hvox::BlockInfo) -> usize| -> Vec<ChunkRecord> {
        let counts = set.counts();
        set.boxes()
            .iter()
            .enumerate()
            .map(|(id, b)| ChunkRecord {
                id,
                min: b.min,
                max: b.max,
                count: counts[id],
                grid_bytes: plan
                    .blocks()
                    .iter()
                    .filter(|blk| pick(blk) == id)
                    .map(|blk| blk.grid_bytes)
                    .max()
                    .unwrap_or(0),
            })
            .collect()
    };
    Ok(ChunkReport {
        n_vis: bl.len(),
        n_pix: px.len(),
        budget_bytes: cfg.budget_bytes,
        monolithic_grid_bytes: mono,
        max_block_grid_bytes: plan.max_block_grid_bytes(),
        vis: records(plan.vis_chunks(), &|b| b.vis_chunk),
        pix: records(plan.pix_chunks(), &|b| b.pix_chunk),
    })
}
