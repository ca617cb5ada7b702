//! Batch CLI wiring the pipeline: data synthesis, training + clustering +
//! evaluation runs, standalone metric evaluation, and label-map rendering.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage/configuration error.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2_io::file_sha256;
use spixel_ssc_core::cube::{
    load_cube, load_labels, make_synthetic, save_cube, save_labels, LabelMap, RegionLayout,
    SynthSpec,
};
use spixel_ssc_core::pipeline::{run_pipeline, RunManifest};
use spixel_ssc_core::render::write_ppm;
use spixel_ssc_core::selfrep::{write_dense_csv, write_sparse_csv};
use spixel_ssc_core::train::{Ablation, TrainConfig, TrainSink};
use spixel_ssc_core::{Error, Result};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "spixel-ssc",
    about = "Superpixel self-representation clustering for hyperspectral cubes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic union-of-subspaces cube with ground truth.
    Synth(SynthArgs),
    /// Train, cluster, and evaluate a cube end to end.
    Run(RunArgs),
    /// Compare a predicted label map against ground truth.
    Eval(EvalArgs),
    /// Render a label map as a PPM image.
    Render(RenderArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Image size as HxW, e.g. 64x64.
    #[arg(long)]
    size: String,
    #[arg(long)]
    bands: usize,
    #[arg(long)]
    classes: usize,
    #[arg(long, default_value_t = 3)]
    subspace_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    noise_sigma: f64,
    /// Region layout: blocks or voronoi.
    #[arg(long, default_value = "blocks")]
    layout: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes <prefix>.hsi.json/.hsi.raw/.lbl.json/.lbl.raw.
    #[arg(long, default_value = "synthetic")]
    out: String,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration JSON (data paths + training settings).
    #[arg(long)]
    config: PathBuf,
    /// Ablation mode override: M1, M2, M3, M4, or full.
    #[arg(long)]
    ablation: Option<String>,
    /// Superpixel count override.
    #[arg(long)]
    superpixels: Option<usize>,
    /// Output directory (refuses to overwrite unless --force).
    #[arg(long, default_value = "run-out")]
    out: PathBuf,
    #[arg(long, default_value_t = false)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted label map (.lbl.json header).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth label map (.lbl.json header).
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Label map header (.lbl.json).
    #[arg(long)]
    labels: PathBuf,
    /// Output PPM path.
    #[arg(long)]
    out: PathBuf,
}

/// Run configuration file: data paths plus every training knob.
#[derive(Debug, Serialize, Deserialize)]
struct RunFile {
    cube: String,
    #[serde(default)]
    labels: Option<String>,
    #[serde(flatten)]
    train: TrainConfig,
}

mod sha2_io {
    use sha2::{Digest, Sha256};

    pub fn file_sha256(path: &std::path::Path) -> std::io::Result<String> {
        let bytes = std::fs::read(path)?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        Ok(format!("{:x}", hasher.finalize()))
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Render(args) => cmd_render(args),
    };
    match outcome {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Numerical(_) => 1,
                _ => 2,
            };
            std::process::exit(code);
        }
    }
}

fn parse_size(size: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = size.split(['x', 'X']).collect();
    if parts.len() != 2 {
        return Err(Error::config(format!("size must look like 64x64, got {size}")));
    }
    let h = parts[0]
        .parse()
        .map_err(|_| Error::config(format!("bad height in {size}")))?;
    let w = parts[1]
        .parse()
        .map_err(|_| Error::config(format!("bad width in {size}")))?;
    Ok((h, w))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let (height, width) = parse_size(&args.size)?;
    let layout = match args.layout.to_ascii_lowercase().as_str() {
        "blocks" => RegionLayout::Blocks,
        "voronoi" => RegionLayout::Voronoi,
        other => return Err(Error::config(format!("unknown layout '{other}'"))),
    };
    let spec = SynthSpec {
        height,
        width,
        bands: args.bands,
        classes: args.classes,
        subspace_dim: args.subspace_dim,
        noise_sigma: args.noise_sigma,
        region_layout: layout,
        seed: args.seed,
    };
    let (cube, labels) = make_synthetic(&spec)?;
    save_cube(&cube, format!("{}.hsi.json", args.out))?;
    save_labels(&labels, format!("{}.lbl.json", args.out))?;
    println!(
        "wrote {p}.hsi.json {p}.hsi.raw {p}.lbl.json {p}.lbl.raw",
        p = args.out
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config_text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", args.config.display())))?;
    let mut run_file: RunFile = serde_json::from_str(&config_text)
        .map_err(|e| Error::config(format!("bad config: {e}")))?;
    if let Some(mode) = &args.ablation {
        run_file.train.ablation = mode.parse::<Ablation>()?;
    }
    if let Some(m) = args.superpixels {
        run_file.train.superpixels = Some(m);
    }
    run_file.train.validate()?;

    let cube_path = PathBuf::from(&run_file.cube);
    let cube = load_cube(&cube_path)?;
    let labels = match &run_file.labels {
        Some(p) => Some(load_labels(Path::new(p))?),
        None => None,
    };

    if args.out.exists() {
        if !args.force {
            return Err(Error::config(format!(
                "output directory {} exists; pass --force to overwrite",
                args.out.display()
            )));
        }
        std::fs::remove_dir_all(&args.out)
            .map_err(|e| Error::io(&args.out, format!("cannot clear output dir: {e}")))?;
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(&args.out, format!("cannot create output dir: {e}")))?;

    let result = execute_run(&args, &run_file, &cube, labels.as_ref());
    if result.is_err() {
        // Partial outputs are removed on failure.
        let _ = std::fs::remove_dir_all(&args.out);
    }
    result
}

fn execute_run(
    args: &RunArgs,
    run_file: &RunFile,
    cube: &spixel_ssc_core::cube::HsiCube,
    labels: Option<&LabelMap>,
) -> Result<()> {
    let out = &args.out;
    let io_err = |p: &Path, e: std::io::Error| Error::io(p, e.to_string());

    let loss_path = out.join("loss.csv");
    let mut loss_file =
        std::fs::File::create(&loss_path).map_err(|e| io_err(&loss_path, e))?;
    let checkpoint_path = out.join("checkpoint.bin");
    let config_echo = serde_json::to_string_pretty(&run_file.train).unwrap();
    let artifacts = {
        let mut sink = TrainSink {
            loss_csv: Some(&mut loss_file),
            checkpoint_path: Some(&checkpoint_path),
            config_json: Some(config_echo),
        };
        run_pipeline(cube, labels, &run_file.train, &mut sink)?
    };
    loss_file.flush().map_err(|e| io_err(&loss_path, e))?;

    let mut outputs = vec![
        "loss.csv".to_string(),
        "checkpoint.bin".to_string(),
        "checkpoint.config.json".to_string(),
    ];

    // Cluster labels in the label-map format plus a rendering.
    let pixel_label_map = LabelMap {
        height: cube.height,
        width: cube.width,
        labels: artifacts.cluster.pixel_labels.clone(),
    };
    save_labels(&pixel_label_map, out.join("labels.lbl.json"))?;
    outputs.push("labels.lbl.json".into());
    outputs.push("labels.lbl.raw".into());
    {
        let ppm_path = out.join("labels.ppm");
        let mut f = std::fs::File::create(&ppm_path).map_err(|e| io_err(&ppm_path, e))?;
        let as_u32: Vec<u32> = artifacts.cluster.pixel_labels.iter().map(|&l| l as u32).collect();
        write_ppm(&as_u32, cube.height, cube.width, true, &mut f)?;
        outputs.push("labels.ppm".into());
    }

    // Superpixel map (ids shifted by one so 0 stays "unlabeled") + rendering.
    let sp_label_map = LabelMap {
        height: cube.height,
        width: cube.width,
        labels: artifacts
            .superpixel_labels
            .iter()
            .map(|&l| (l + 1) as u16)
            .collect(),
    };
    save_labels(&sp_label_map, out.join("superpixels.lbl.json"))?;
    outputs.push("superpixels.lbl.json".into());
    outputs.push("superpixels.lbl.raw".into());
    {
        let ppm_path = out.join("superpixels.ppm");
        let mut f = std::fs::File::create(&ppm_path).map_err(|e| io_err(&ppm_path, e))?;
        write_ppm(
            &artifacts.superpixel_labels,
            cube.height,
            cube.width,
            false,
            &mut f,
        )?;
        outputs.push("superpixels.ppm".into());
    }

    // Coefficient matrix exports.
    {
        let dense_path = out.join("z_dense.csv");
        let mut f = std::fs::File::create(&dense_path).map_err(|e| io_err(&dense_path, e))?;
        write_dense_csv(&artifacts.z, &mut f).map_err(|e| io_err(&dense_path, e))?;
        outputs.push("z_dense.csv".into());
        let sparse_path = out.join("z_sparse.csv");
        let mut f = std::fs::File::create(&sparse_path).map_err(|e| io_err(&sparse_path, e))?;
        write_sparse_csv(&artifacts.z, &mut f).map_err(|e| io_err(&sparse_path, e))?;
        outputs.push("z_sparse.csv".into());
    }

    // Metrics, when ground truth was available.
    if let Some(metrics) = &artifacts.metrics {
        let metrics_path = out.join("metrics.json");
        let json = serde_json::to_string_pretty(metrics).unwrap();
        std::fs::write(&metrics_path, json).map_err(|e| io_err(&metrics_path, e))?;
        outputs.push("metrics.json".into());
        println!(
            "OA (%): {:.2}  NMI: {:.4}  kappa: {:.4}",
            metrics.oa * 100.0,
            metrics.nmi,
            metrics.kappa
        );
    }

    // Manifest last: config snapshot, input hashes, outputs, timings.
    let mut input_hashes = std::collections::BTreeMap::new();
    let cube_path = PathBuf::from(&run_file.cube);
    for path in [
        cube_path.clone(),
        PathBuf::from(cube_path.to_string_lossy().replace(".hsi.json", ".hsi.raw")),
    ] {
        if path.exists() {
            input_hashes.insert(
                path.to_string_lossy().into_owned(),
                file_sha256(&path).map_err(|e| io_err(&path, e))?,
            );
        }
    }
    if let Some(lbl) = &run_file.labels {
        for path in [
            PathBuf::from(lbl),
            PathBuf::from(lbl.replace(".lbl.json", ".lbl.raw")),
        ] {
            if path.exists() {
                input_hashes.insert(
                    path.to_string_lossy().into_owned(),
                    file_sha256(&path).map_err(|e| io_err(&path, e))?,
                );
            }
        }
    }
    outputs.push("manifest.json".into());
    let manifest = RunManifest {
        config: serde_json::to_value(&run_file.train).unwrap(),
        input_hashes,
        outputs,
        stage_seconds: artifacts.stage_seconds.clone(),
        seed: run_file.train.seed,
        superpixels_trained: artifacts.m_train,
        superpixels_final: artifacts.m_final,
    };
    let manifest_path = out.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .map_err(|e| io_err(&manifest_path, e))?;
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let pred = load_labels(&args.pred)?;
    let gt = load_labels(&args.gt)?;
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::validation(format!(
            "dimension mismatch: prediction {}x{}, ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    let report = spixel_ssc_core::metrics::evaluate(&pred.labels, &gt.densify().labels)?;
    println!(
        "OA (%): {:.2}  NMI: {:.4}  kappa: {:.4}",
        report.oa * 100.0,
        report.nmi,
        report.kappa
    );
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let labels = load_labels(&args.labels)?;
    let as_u32: Vec<u32> = labels.labels.iter().map(|&l| l as u32).collect();
    let mut f = std::fs::File::create(&args.out)
        .map_err(|e| Error::io(&args.out, format!("create failed: {e}")))?;
    write_ppm(&as_u32, labels.height, labels.width, true, &mut f)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
