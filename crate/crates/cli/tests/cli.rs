#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;

use hvox::{direct_analysis, direct_synthesis, BaselineSet, PixelSet};
use hvox_cli::arrayfile::{read_array, write_array, Array, ArrayData};
use hvox_cli::commands::{self, Inputs, Method};
use hvox_cli::config::MeshKind;
use hvox_cli::presets::{preset, PRESETS};
use hvox_cli::{CliError, RunConfig};
use num_complex::Complex64;
use proptest::prelude::*;

fn small_config(eps: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.eps = eps;
    cfg.observation.max_radius_m = Some(100.0);
    cfg.mesh.kind = MeshKind::Fibonacci;
    cfg.mesh.size = 3000;
    cfg
}

fn write_vis(path: &Path, v: Vec<Complex64>) {
    write_array(path, &Array::vector_c128(v)).unwrap();
}

fn write_img(path: &Path, v: Vec<f64>) {
    write_array(path, &Array::vector_f64(v)).unwrap();
}

fn f64s(path: &Path) -> Vec<f64> {
    match read_array(path).unwrap().data {
        ArrayData::F64(v) => v,
        _ => panic!("expected float64"),
    }
}

fn c128s(path: &Path) -> Vec<Complex64> {
    match read_array(path).unwrap().data {
        ArrayData::C128(v) => v,
        _ => panic!("expected complex128"),
    }
}

fn geometry(cfg: &RunConfig) -> (BaselineSet, PixelSet) {
    commands::resolve_geometry(cfg, &Inputs::default()).unwrap()
}

fn strip_timings(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

fn hvox_bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hvox")).args(args).output().unwrap()
}

#[test]
fn simulate_counts_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bl.hvx");

    let mut cfg = RunConfig::default();
    cfg.observation.antennas = Some(vec![[0.0, 0.0, 0.0], [30.0, 40.0, 0.0]]);
    cfg.observation.n_times = 1;
    commands::cmd_simulate(&cfg, &out, None).unwrap();
    assert_eq!(read_array(&out).unwrap().dims, vec![1, 3]);

    let m = commands::cmd_simulate(&RunConfig::default(), &out, None).unwrap();
    assert_eq!(read_array(&out).unwrap().dims, vec![94_125, 3]);
    assert_eq!(m.details["n_vis"], 94_125);
}

#[test]
fn default_manifest_echoes_observation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bl.hvx");
    commands::cmd_simulate(&RunConfig::default(), &out, None).unwrap();
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bl.hvx.json")).unwrap()).unwrap();
    assert_eq!(m["details"]["fov_deg"], 30.0);
    assert_eq!(m["details"]["freq_hz"], 150e6);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(!m["version"].as_str().unwrap().is_empty());
}

#[test]
fn zero_inputs_give_zero_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(1e-6);
    let (bl, px) = geometry(&cfg);
    let vis = dir.path().join("vis.hvx");
    let img = dir.path().join("img.hvx");
    write_vis(&vis, vec![Complex64::new(0.0, 0.0); bl.len()]);
    write_img(&img, vec![0.0; px.len()]);
    let dirty = dir.path().join("dirty.hvx");
    let back = dir.path().join("back.hvx");
    commands::cmd_vis2dirty(&cfg, &Inputs::default(), Method::Hvox, &vis, &dirty, None).unwrap();
    commands::cmd_dirty2vis(&cfg, &Inputs::default(), Method::Hvox, &img, &back, None).unwrap();
    assert!(f64s(&dirty).iter().all(|&x| x == 0.0));
    assert!(c128s(&back).iter().all(|z| z.norm() == 0.0));
}

#[test]
fn point_source_gives_unit_modulus_visibilities() {
    let dir = tempfile::tempdir().unwrap();
    let eps = 1e-6;
    let mut cfg = small_config(eps);
    cfg.mesh.kind = MeshKind::Dcos;
    cfg.mesh.size = 41;
    let (bl, px) = geometry(&cfg);
    let mut img = vec![0.0; px.len()];
    img[px.len() / 3] = 1.0;
    let path = dir.path().join("img.hvx");
    write_img(&path, img);
    let out = dir.path().join("vis.hvx");
    commands::cmd_dirty2vis(&cfg, &Inputs::default(), Method::Hvox, &path, &out, None).unwrap();
    let vis = c128s(&out);
    assert_eq!(vis.len(), bl.len());
    for z in vis {
        assert!((z.norm() - 1.0).abs() <= eps, "|V| = {}", z.norm());
    }
}

#[test]
fn methods_agree_with_direct() {
    let dir = tempfile::tempdir().unwrap();
    let eps = 1e-6;
    let mut cfg = small_config(eps);
    cfg.budget_bytes = 1 << 20;
    cfg.threshold = 0;
    let (bl, px) = geometry(&cfg);
    let mut rng = common::rng(5);
    let vis = dir.path().join("vis.hvx");
    let img = dir.path().join("img.hvx");
    let v = common::gaussian_vis(&mut rng, bl.len());
    let x = common::gaussian_img(&mut rng, px.len());
    write_vis(&vis, v.clone());
    write_img(&img, x.clone());
    let want_img = direct_synthesis(&v, &bl, &px).unwrap();
    let want_vis = direct_analysis(&x, &px, &bl).unwrap();
    for method in [Method::Direct, Method::Hvox, Method::HvoxMono] {
        let d = dir.path().join(format!("{}-dirty.hvx", method.name()));
        let a = dir.path().join(format!("{}-vis.hvx", method.name()));
        let m = commands::cmd_vis2dirty(&cfg, &Inputs::default(), method, &vis, &d, None).unwrap();
        commands::cmd_dirty2vis(&cfg, &Inputs::default(), method, &img, &a, None).unwrap();
        let es = common::rel_err_real(&f64s(&d), &want_img);
        let ea = common::rel_err_complex(&c128s(&a), &want_vis);
        let tol = if method == Method::Direct { 1e-12 } else { 3.0 * eps };
        assert!(es <= tol && ea <= tol, "{}: {es:e} {ea:e}", method.name());
        if method == Method::Hvox {
            let c = m.chunks.unwrap();
            assert!(c.vis_chunks * c.pix_chunks > 1, "budget should force chunking");
        }
    }
}

#[test]
fn desk_scale_run_respects_budget() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.eps = 1e-4;
    cfg.observation.max_radius_m = Some(300.0);
    cfg.observation.n_times = 2;
    cfg.mesh.kind = MeshKind::Fibonacci;
    cfg.mesh.size = 100_000;
    let (bl, _) = geometry(&cfg);
    assert!((9_000..=11_000).contains(&bl.len()), "n_vis = {}", bl.len());
    let vis = dir.path().join("vis.hvx");
    let mut rng = common::rng(9);
    write_vis(&vis, common::gaussian_vis(&mut rng, bl.len()));
    let out = dir.path().join("dirty.hvx");
    let m = commands::cmd_vis2dirty(&cfg, &Inputs::default(), Method::Hvox, &vis, &out, None).unwrap();
    assert!(m.peak_block_grid_bytes.unwrap() <= 500 * 1024 * 1024);
    assert_eq!(f64s(&out).len(), 100_000);
    let json = strip_timings(&dir.path().join("dirty.hvx.json"));
    for key in ["version", "config_hash", "eps", "chunks", "peak_block_grid_bytes"] {
        assert!(!json[key].is_null(), "{key} missing");
    }
}

#[test]
fn compare_reports() {
    let b = Array::vector_f64(vec![1.0, -2.0, 3.0]);
    let r = commands::compare(&b, &b).unwrap();
    assert_eq!(r.nmse, Some(0.0));
    let a = Array::vector_f64(vec![2.0, -4.0, 6.0]);
    assert_eq!(commands::compare(&a, &b).unwrap().nmse, Some(1.0));
    let zero = Array::vector_f64(vec![0.0; 3]);
    let r = commands::compare(&b, &zero).unwrap();
    assert!(r.reference_zero && r.nmse.is_none());
    assert!((r.mse - 14.0 / 3.0).abs() < 1e-15);
    assert_eq!(r.max_abs_dev, 3.0);
    let c = Array::vector_c128(vec![Complex64::new(1.0, 0.0); 3]);
    assert!(matches!(commands::compare(&c, &b), Err(CliError::User(_))));
    let short = Array::vector_f64(vec![1.0]);
    assert!(matches!(commands::compare(&short, &b), Err(CliError::User(_))));
}

#[test]
fn compare_hvox_against_direct_at_1e7() {
    let eps = 1e-7;
    let cfg = small_config(eps);
    let (bl, px) = geometry(&cfg);
    let mut rng = common::rng(17);
    let x = common::gaussian_img(&mut rng, px.len());
    let (fast, _) = commands::run_analysis(&cfg, Method::Hvox, &bl, &px, &x).unwrap();
    let (slow, _) = commands::run_analysis(&cfg, Method::Direct, &bl, &px, &x).unwrap();
    let r = commands::compare(&Array::vector_c128(fast), &Array::vector_c128(slow)).unwrap();
    assert!(r.nmse.unwrap() <= 9e-14, "nmse {:e}", r.nmse.unwrap());
}

#[test]
fn presets_match_published_sizes() {
    let mut cfg = RunConfig::default();
    preset("r0.1").unwrap().configure(&mut cfg);
    let (bl, px) = geometry(&cfg);
    assert_eq!((bl.len(), px.len()), (273, 6400));
    let mut cfg = RunConfig::default();
    preset("r1").unwrap().configure(&mut cfg);
    let (bl, px) = geometry(&cfg);
    assert_eq!((bl.len(), px.len()), (94_125, 129_600));
    let sparse = commands::resolve_geometry(&cfg, &Inputs { sparse: Some(500), ..Default::default() })
        .unwrap()
        .1;
    assert_eq!(sparse.len(), 500);
    assert!(preset("r10").is_err());
    assert_eq!(PRESETS.len(), 4);
}

#[test]
fn sparse_subset_is_nearest_to_centre() {
    let mut cfg = RunConfig::default();
    cfg.mesh.size = 50;
    let px = commands::build_mesh(&cfg).unwrap();
    let sub = commands::sparse_subset(&px, 100).unwrap();
    let worst_kept = sub.points().iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
    let closer = px.points().iter().filter(|p| p[2] > worst_kept).count();
    assert!(closer < 100, "every strictly closer pixel is kept");
    assert!(commands::sparse_subset(&px, 0).is_err());
    assert!(commands::sparse_subset(&px, px.len() + 1).is_err());
}

#[test]
fn bench_emits_rows() {
    let mut cfg = RunConfig::default();
    cfg.eps = 1e-4;
    let rows = commands::bench(&cfg, &preset("r0.1").unwrap(), &[Method::Direct, Method::Hvox], 1, None).unwrap();
    assert_eq!(rows.len(), 4);
    let csv = commands::bench_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "preset,method,direction,seconds,peak_block_bytes,n_chunks_vis,n_chunks_pix"
    );
    for line in lines {
        assert_eq!(line.split(',').count(), 7);
        assert!(line.starts_with("r0.1,"));
    }
    assert!(rows.iter().all(|r| r.peak_block_bytes <= cfg.budget_bytes));
}

#[test]
fn chunk_inspect_single_chunk() {
    let mut cfg = small_config(1e-4);
    cfg.budget_bytes = 1 << 40;
    let r = commands::chunk_inspect(&cfg, &Inputs::default()).unwrap();
    assert_eq!((r.vis.len(), r.pix.len()), (1, 1));
    assert_eq!(r.vis[0].count, r.n_vis);
    assert_eq!(r.pix[0].count, r.n_pix);
    assert_eq!(r.vis[0].grid_bytes, r.monolithic_grid_bytes);
}

#[test]
fn chunk_inspect_clustered_reduces_grid_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = common::rng(3);
    let bl = BaselineSet::new(common::clustered_spiral(&mut rng, 10_000, 1e6, 0.9, 0.01)).unwrap();
    let blf = dir.path().join("bl.hvx");
    write_array(&blf, &commands::baselines_to_array(&bl)).unwrap();
    let mut cfg = RunConfig::default();
    cfg.eps = 1e-3;
    cfg.budget_bytes = 16 << 20;
    cfg.mesh.size = 100;
    let inputs = Inputs { baselines: Some(blf), ..Default::default() };
    let r = commands::chunk_inspect(&cfg, &inputs).unwrap();
    assert_eq!(r.vis.iter().map(|c| c.count).sum::<usize>(), 10_000);
    assert_eq!(r.pix.iter().map(|c| c.count).sum::<usize>(), r.n_pix);
    for set in [&r.vis, &r.pix] {
        let total: u64 = set.iter().map(|c| c.grid_bytes).sum();
        assert!(total < r.monolithic_grid_bytes, "{total} vs {}", r.monolithic_grid_bytes);
        for c in set.iter() {
            assert!(c.grid_bytes <= cfg.budget_bytes);
            assert!((0..3).all(|k| c.min[k] <= c.max[k]));
        }
    }
}

#[test]
fn deterministic_manifests_match() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(1e-5);
    cfg.deterministic = true;
    cfg.budget_bytes = 1 << 20;
    let (bl, _) = geometry(&cfg);
    let vis = dir.path().join("vis.hvx");
    write_vis(&vis, common::gaussian_vis(&mut common::rng(4), bl.len()));
    let mut outs = Vec::new();
    for (k, workers) in [1, 3].into_iter().enumerate() {
        cfg.workers = Some(workers);
        let out = dir.path().join(format!("d{k}.hvx"));
        let man = dir.path().join(format!("m{k}.json"));
        commands::cmd_vis2dirty(&cfg, &Inputs::default(), Method::Hvox, &vis, &out, Some(&man)).unwrap();
        outs.push((std::fs::read(&out).unwrap(), strip_timings(&man)));
    }
    assert_eq!(outs[0].0, outs[1].0);
    let mut a = outs[0].1.clone();
    let mut b = outs[1].1.clone();
    // Worker count is part of the config, hence the hash.
    for v in [&mut a, &mut b] {
        let o = v.as_object_mut().unwrap();
        o.remove("config");
        o.remove("config_hash");
    }
    assert_eq!(a, b);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.hvx");
    let o = out.to_str().unwrap();
    assert_eq!(hvox_bin(&["bench", "--preset", "r42"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"eps": 1e-4, "nope": 1}"#).unwrap();
    let r = hvox_bin(&["--config", cfg.to_str().unwrap(), "simulate", "--out", o]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("unknown field"));
    assert_eq!(hvox_bin(&["--eps", "1e-4", "simulate", "--out", o]).status.code(), Some(0));
    let vis = dir.path().join("v.hvx");
    write_vis(&vis, vec![Complex64::new(1.0, 0.0); 3]);
    let r = hvox_bin(&["vis2dirty", "--vis", vis.to_str().unwrap(), "--out", o, "--baselines", o]);
    assert_eq!(r.status.code(), Some(2), "shape mismatch");
    let small = dir.path().join("small.json");
    std::fs::write(&small, r#"{"observation": {"max_radius_m": 100}, "mesh": {"size": 30}}"#).unwrap();
    let r = hvox_bin(&[
        "--config",
        small.to_str().unwrap(),
        "--budget-mb",
        "1",
        "--eps",
        "1e-9",
        "--threshold",
        "0",
        "chunk-inspect",
    ]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(CliError::Internal("x".into()).exit_code(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn array_round_trip_is_bitwise(dims in prop::collection::vec(1u64..5, 1..4), complex in any::<bool>(), seed in any::<u64>()) {
        let n: u64 = dims.iter().product();
        let bits = |k: u64| f64::from_bits(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k).rotate_left((k % 64) as u32));
        let data = if complex {
            ArrayData::C128((0..n).map(|k| Complex64::new(bits(2 * k), bits(2 * k + 1))).collect())
        } else {
            ArrayData::F64((0..n).map(bits).collect())
        };
        let a = Array::new(dims, data).unwrap();
        let b = Array::decode(&a.encode()).unwrap();
        prop_assert_eq!(&a.dims, &b.dims);
        let raw = |x: &Array| -> Vec<u64> {
            match &x.data {
                ArrayData::F64(v) => v.iter().map(|f| f.to_bits()).collect(),
                ArrayData::C128(v) => v.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect(),
            }
        };
        prop_assert_eq!(raw(&a), raw(&b));
    }
}

#[test]
fn file_round_trip_3x4_complex() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("z.hvx");
    let mut rng = common::rng(1);
    let a = Array::new(vec![3, 4], ArrayData::C128(common::gaussian_vis(&mut rng, 12))).unwrap();
    write_array(&p, &a).unwrap();
    assert_eq!(read_array(&p).unwrap(), a);
}
