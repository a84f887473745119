use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use markreg::cloud_io::CloudFormat;
use markreg::metrics::{read_pose_file, rmse};
use markreg::pipeline::{exit_code, run_pipeline, CloudFormatName, Mode, RunConfig};
use markreg::synth::{scenes, write_outputs, NoiseSpec, Scene};
use markreg::tagdetect::AppendMode;

#[derive(Parser, Debug)]
#[command(name = "markreg", version, about = "Marker-based registration of LiDAR scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register every cloud in a directory.
    Register {
        /// Directory of scans; ids follow file-name order.
        #[arg(long)]
        input: Option<PathBuf>,
        /// TOML run configuration. Flags given here take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<CloudFormatName>,
        /// Marker side length in metres.
        #[arg(long)]
        marker_size: Option<f64>,
        /// `default16` or a dictionary file.
        #[arg(long = "dict", visible_alias = "dictionary")]
        dictionary: Option<String>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Use these corner sets instead of searching the images.
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long, value_enum)]
        append_mode: Option<AppendModeArg>,
    },
    /// Render a synthetic scene with ground truth.
    Synth {
        /// `low-overlap`, `redundant`, `contrast-pair` or a scene TOML file.
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "pcd")]
        format: CloudFormatName,
        /// Range noise standard deviation for built-in scenes, m.
        #[arg(long, default_value_t = 0.0)]
        range_sigma: f64,
        /// Intensity noise standard deviation for built-in scenes.
        #[arg(long, default_value_t = 0.0)]
        intensity_sigma: f64,
    },
    /// Pose RMSE of an estimate against ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum AppendModeArg {
    Verbatim,
    AlwaysUnion,
}

fn register(cli: Command) -> Result<i32, String> {
    let Command::Register {
        input,
        config,
        out,
        format,
        marker_size,
        dictionary,
        mode,
        detections,
        append_mode,
    } = cli
    else {
        unreachable!()
    };
    let mut cfg = match &config {
        Some(path) => RunConfig::load(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    cfg.input = input.or(cfg.input);
    cfg.output = out.or(cfg.output);
    cfg.detections = detections.or(cfg.detections);
    if let Some(f) = format {
        cfg.format = f;
    }
    if let Some(s) = marker_size {
        cfg.marker_size = s;
    }
    if let Some(d) = dictionary {
        cfg.dictionary = d;
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(a) = append_mode {
        cfg.search.append_mode = match a {
            AppendModeArg::Verbatim => AppendMode::Verbatim,
            AppendModeArg::AlwaysUnion => AppendMode::AlwaysUnion,
        };
    }
    match run_pipeline(&cfg) {
        Ok(report) => {
            print!("{}", markreg::metrics::format_pose_file(&report.scan_poses));
            for (id, reason) in &report.dropped {
                eprintln!("scan {id} not registered: {reason}");
            }
            Ok(if report.is_partial() {
                exit_code::PARTIAL
            } else {
                exit_code::OK
            })
        }
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            Ok(e.exit_code())
        }
    }
}

fn synth(cli: Command) -> Result<i32, String> {
    let Command::Synth {
        scene,
        seed,
        out,
        format,
        range_sigma,
        intensity_sigma,
    } = cli
    else {
        unreachable!()
    };
    let noise = NoiseSpec {
        range_sigma,
        intensity_sigma,
    };
    let spec = match scene.as_str() {
        "low-overlap" => scenes::low_overlap(noise),
        "redundant" => scenes::redundant(noise),
        "contrast-pair" => scenes::contrast_pair(),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?;
            return build_and_write(Scene::from_toml(&text).map_err(|e| e.to_string())?, seed, &out, format);
        }
    };
    build_and_write(Scene::new(spec).map_err(|e| e.to_string())?, seed, &out, format)
}

fn build_and_write(scene: Scene, seed: u64, out: &std::path::Path, format: CloudFormatName) -> Result<i32, String> {
    let (clouds, gt) = scene.render_scans(seed).map_err(|e| e.to_string())?;
    match write_outputs(out, &scene, &clouds, &gt, CloudFormat::from(format)) {
        Ok(()) => {
            println!("wrote {} scans to {}", clouds.len(), out.display());
            Ok(exit_code::OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(exit_code::IO)
        }
    }
}

fn eval(est: PathBuf, gt: PathBuf) -> Result<i32, String> {
    let read = |p: &PathBuf| read_pose_file(p).map_err(|e| e.to_string());
    let (est, gt) = (read(&est)?, read(&gt)?);
    let r = rmse(&est, &gt).map_err(|e| e.to_string())?;
    println!("rmse_t {:.6} m", r.translation);
    println!("rmse_r {:.6} rad", r.rotation);
    println!("scans {}", r.count);
    Ok(exit_code::OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit_code::USAGE } else { exit_code::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        c @ Command::Register { .. } => register(c),
        c @ Command::Synth { .. } => synth(c),
        Command::Eval { est, gt } => eval(est, gt),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(exit_code::USAGE as u8)
        }
    }
}
