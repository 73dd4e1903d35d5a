use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hvox_cli::commands::{self, Inputs, Method};
use hvox_cli::presets::preset;
use hvox_cli::{read_array, CliError, CliResult, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "hvox", version = hvox_cli::manifest::VERSION, about = "Chunked type-3 NUFFT gridder for radio interferometry")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Per-block fine-grid budget in MiB.
    #[arg(long, global = true)]
    budget_mb: Option<u64>,
    /// Anisotropy bound on chunk aspect ratios.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Blocks with at most this many pixel-visibility pairs run directly.
    #[arg(long, global = true)]
    threshold: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Bitwise reproducible output independent of worker count.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Tighten per-block accuracy so the summed error stays within eps.
    #[arg(long, global = true)]
    strict_accuracy: bool,
}

#[derive(Args)]
struct GeometryArgs {
    /// Baselines file (N×3); simulated from the config when omitted.
    #[arg(long)]
    baselines: Option<PathBuf>,
    /// Pixels file (N×4: x, y, z, weight); generated from the config when omitted.
    #[arg(long)]
    pixels: Option<PathBuf>,
    /// Keep only the N pixels nearest the mesh centre.
    #[arg(long)]
    sparse: Option<usize>,
}

impl GeometryArgs {
    fn inputs(&self) -> Inputs {
        Inputs {
            baselines: self.baselines.clone(),
            pixels: self.pixels.clone(),
            sparse: self.sparse,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate baselines from the observation config.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Manifest path; defaults to `<out>.json`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Generate the pixel mesh.
    Mesh {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sparse: Option<usize>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Visibilities to dirty image.
    Vis2dirty {
        #[arg(long)]
        vis: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "hvox")]
        method: Method,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Image to visibilities.
    Dirty2vis {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "hvox")]
        method: Method,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// NMSE of A against reference B.
    Compare { a: PathBuf, b: PathBuf },
    /// Time the methods on a desk-scale preset and emit CSV.
    Bench {
        #[arg(long)]
        preset: String,
        #[arg(long, value_enum, value_delimiter = ',', default_values = ["direct", "hvox-mono", "hvox"])]
        method: Vec<Method>,
        #[arg(long)]
        sparse: Option<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the chunk boxes of both domains as JSON.
    ChunkInspect {
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(g: &GlobalArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    cfg.apply(&Overrides {
        eps: g.eps,
        budget_mb: g.budget_mb,
        alpha: g.alpha,
        threshold: g.threshold,
        workers: g.workers,
        deterministic: g.deterministic,
        strict_accuracy: g.strict_accuracy,
    })?;
    Ok(cfg)
}

fn emit(text: &str, out: Option<&PathBuf>) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::user(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Simulate { out, manifest } => {
            let m = commands::cmd_simulate(&cfg, &out, manifest.as_deref())?;
            println!("{}", m.details["n_vis"]);
        }
        Command::Mesh { out, sparse, manifest } => {
            let m = commands::cmd_mesh(&cfg, sparse, &out, manifest.as_deref())?;
            println!("{}", m.details["n_pix"]);
        }
        Command::Vis2dirty { vis, out, method, geometry, manifest } => {
            let m = commands::cmd_vis2dirty(&cfg, &geometry.inputs(), method, &vis, &out, manifest.as_deref())?;
            println!("{}", m.to_json());
        }
        Command::Dirty2vis { image, out, method, geometry, manifest } => {
            let m = commands::cmd_dirty2vis(&cfg, &geometry.inputs(), method, &image, &out, manifest.as_deref())?;
            println!("{}", m.to_json());
        }
        Command::Compare { a, b } => {
            let r = commands::compare(&read_array(&a)?, &read_array(&b)?)?;
            println!("{}", serde_json::to_string_pretty(&r).expect("report serialises"));
        }
        Command::Bench { preset: name, method, sparse, repeats, out } => {
            let p = preset(&name)?;
            let rows = commands::bench(&cfg, &p, &method, repeats, sparse)?;
            emit(commands::bench_csv(&rows).trim_end(), out.as_ref())?;
        }
        Command::ChunkInspect { geometry, out } => {
            let r = commands::chunk_inspect(&cfg, &geometry.inputs())?;
            emit(&serde_json::to_string_pretty(&r).expect("report serialises"), out.as_ref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hvox: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
