//! The `halsie` command-line pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 validation or
//! shape error. All randomness flows from the configured seed (overridable
//! with `--seed`); `HALSIE_THREADS` caps compute worker threads, and the
//! default of 1 keeps every run fully deterministic.

mod palette;

pub use palette::Palette;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::autodiff::{AdError, BnMode, Tape};
use crate::energy::{self, EnergyError};
use crate::evio::{
    parse_events, slice_windows, synth_scene, voxelize, write_volume, BinningPolicy, EvioError,
    SceneConfig,
};
use crate::model::{
    load_checkpoint, save_checkpoint, save_raw_tensor, HalsieModel, ModelError, ModelInput,
    NetworkSpec, Setting,
};
use crate::pnm::{self, PnmError};
use crate::trainer::{
    argmax_classes, prepare, train, write_metrics_csv, write_train_log, ConfusionAccum, Dataset,
    TrainConfig, TrainError,
};

#[derive(Parser)]
#[command(
    name = "halsie",
    version,
    about = "Hybrid event/frame semantic segmentation pipeline"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene: event CSVs, frame PGMs, label PGMs.
    Synth {
        /// Scene config (TOML).
        config: PathBuf,
        /// Output directory for the sample triples.
        out_dir: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Voxelize an event CSV into binary event-volume files.
    Voxelize {
        /// Event CSV file.
        events: PathBuf,
        /// Output volume path (numbered when a policy yields several).
        out: PathBuf,
        /// Sensor width in pixels.
        #[arg(long)]
        width: u32,
        /// Sensor height in pixels.
        #[arg(long)]
        height: u32,
        /// Temporal bins per volume.
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Window slicing before voxelization: `cit:<ms>` or `ced:<count>`.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Train the full hybrid network on a sample directory.
    Train {
        /// Directory of events/frame/label triples.
        data: PathBuf,
        /// Network description (TOML).
        spec: PathBuf,
        /// Training configuration (TOML).
        config: PathBuf,
        /// Output checkpoint path.
        out: PathBuf,
        /// Training-log CSV path (default: checkpoint path + .log.csv).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train an architecture/modality ablation (settings A–E, H).
    Ablate {
        /// Encoder setting: A, B, C, D, E, or H.
        setting: String,
        data: PathBuf,
        spec: PathBuf,
        config: PathBuf,
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Segment one frame/event pair with a trained checkpoint.
    Infer {
        checkpoint: PathBuf,
        /// Grayscale frame (PGM).
        frame: PathBuf,
        /// Event CSV covering the frame's window.
        events: PathBuf,
        /// Colorized segmentation map (PPM).
        out: PathBuf,
        /// Logits tensor file (default: out path + .logits).
        #[arg(long)]
        logits: Option<PathBuf>,
        /// Raw class-id map PGM (default: out path + .ids.pgm).
        #[arg(long)]
        ids: Option<PathBuf>,
    },
    /// Estimate FLOPs and inference energy of a checkpoint on samples.
    Profile {
        checkpoint: PathBuf,
        /// Network description the checkpoint must match (TOML).
        spec: PathBuf,
        /// Directory of sample triples to measure firing rates on.
        samples: PathBuf,
        /// Write the report CSV here as well as the table to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare predicted class-id maps against ground truth.
    Metrics {
        /// Directory of predicted class-id PGMs.
        pred: PathBuf,
        /// Directory of ground-truth class-id PGMs with matching names.
        gt: PathBuf,
        /// Class count (default: 1 + the largest id seen).
        #[arg(long)]
        classes: Option<usize>,
        /// Report CSV path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct CliError {
    code: i32,
    msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError {
            code: 1,
            msg: msg.into(),
        }
    }

    fn invalid(msg: impl Into<String>) -> Self {
        CliError {
            code: 3,
            msg: msg.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: 2,
            msg: e.to_string(),
        }
    }
}

impl From<EvioError> for CliError {
    fn from(e: EvioError) -> Self {
        match e {
            EvioError::Io(io) => io.into(),
            other => CliError::invalid(other.to_string()),
        }
    }
}

impl From<PnmError> for CliError {
    fn from(e: PnmError) -> Self {
        match e {
            PnmError::Io(io) => io.into(),
            other => CliError::invalid(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(io) => io.into(),
            other => CliError::invalid(other.to_string()),
        }
    }
}

impl From<AdError> for CliError {
    fn from(e: AdError) -> Self {
        CliError::invalid(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io(io) => io.into(),
            TrainError::Evio(ev) => ev.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Pnm(p) => p.into(),
            other => CliError::invalid(other.to_string()),
        }
    }
}

impl From<EnergyError> for CliError {
    fn from(e: EnergyError) -> Self {
        match e {
            EnergyError::Model(m) => m.into(),
            other => CliError::invalid(other.to_string()),
        }
    }
}

/// Parse arguments from the process environment and run. Returns the
/// process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            e.code
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    Ok(std::fs::read_to_string(path)?)
}

fn execute(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Synth {
            config,
            out_dir,
            seed,
        } => cmd_synth(&config, &out_dir, seed),
        Cmd::Voxelize {
            events,
            out,
            width,
            height,
            bins,
            policy,
        } => cmd_voxelize(&events, &out, width, height, bins, policy.as_deref()),
        Cmd::Train {
            data,
            spec,
            config,
            out,
            log,
            seed,
        } => cmd_train(Setting::H, &data, &spec, &config, &out, log, seed),
        Cmd::Ablate {
            setting,
            data,
            spec,
            config,
            out,
            log,
            seed,
        } => {
            let setting: Setting = setting.parse().map_err(|_| {
                CliError::usage(format!("unknown setting `{setting}`; use A, B, C, D, E, or H"))
            })?;
            cmd_train(setting, &data, &spec, &config, &out, log, seed)
        }
        Cmd::Infer {
            checkpoint,
            frame,
            events,
            out,
            logits,
            ids,
        } => cmd_infer(&checkpoint, &frame, &events, &out, logits, ids),
        Cmd::Profile {
            checkpoint,
            spec,
            samples,
            out,
        } => cmd_profile(&checkpoint, &spec, &samples, out),
        Cmd::Metrics {
            pred,
            gt,
            classes,
            out,
        } => cmd_metrics(&pred, &gt, classes, out),
    }
}

fn cmd_synth(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = SceneConfig::from_toml(&read_to_string(config)?)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let samples = synth_scene(&cfg)?;
    let count = samples.len();
    let data = Dataset::from_synth(samples, cfg.width, cfg.height);
    data.save_dir(out_dir)?;
    println!(
        "wrote {count} samples ({}×{}, {} classes) to {}",
        cfg.width,
        cfg.height,
        cfg.classes,
        out_dir.display()
    );
    Ok(())
}

fn parse_policy(text: &str) -> Result<BinningPolicy, CliError> {
    let (kind, value) = text
        .split_once(':')
        .ok_or_else(|| CliError::usage(format!("policy `{text}` is not `cit:<ms>` or `ced:<count>`")))?;
    let value: u64 = value
        .parse()
        .map_err(|_| CliError::usage(format!("policy value `{value}` is not an integer")))?;
    match kind {
        "cit" => Ok(BinningPolicy::cit_ms(value)?),
        "ced" => Ok(BinningPolicy::ced(value as usize)?),
        other => Err(CliError::usage(format!(
            "unknown policy kind `{other}`; use cit or ced"
        ))),
    }
}

fn numbered_path(base: &Path, idx: usize) -> PathBuf {
    let stem = base.file_stem().unwrap_or_default().to_string_lossy();
    let ext = base.extension().map(|e| e.to_string_lossy().to_string());
    let name = match ext {
        Some(ext) => format!("{stem}_{idx:04}.{ext}"),
        None => format!("{stem}_{idx:04}"),
    };
    base.with_file_name(name)
}

fn cmd_voxelize(
    events: &Path,
    out: &Path,
    width: u32,
    height: u32,
    bins: usize,
    policy: Option<&str>,
) -> Result<(), CliError> {
    let reader = BufReader::new(File::open(events)?);
    let stream = parse_events(reader, width, height)?;
    match policy {
        None => {
            let volume = voxelize(&stream, bins)?;
            write_volume(&volume, out)?;
            println!("wrote {} ({} events, {bins} bins)", out.display(), stream.len());
        }
        Some(text) => {
            let policy = parse_policy(text)?;
            let windows = slice_windows(&stream, policy)?;
            if windows.is_empty() {
                return Err(CliError::invalid(
                    "the policy produced no complete windows",
                ));
            }
            if windows.len() == 1 {
                write_volume(&voxelize(&windows[0], bins)?, out)?;
                println!("wrote {}", out.display());
            } else {
                for (i, w) in windows.iter().enumerate() {
                    let path = numbered_path(out, i);
                    write_volume(&voxelize(w, bins)?, &path)?;
                }
                println!("wrote {} volumes numbered from {}", windows.len(), numbered_path(out, 0).display());
            }
        }
    }
    Ok(())
}

fn cmd_train(
    setting: Setting,
    data: &Path,
    spec: &Path,
    config: &Path,
    out: &Path,
    log: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let spec = NetworkSpec::from_toml(&read_to_string(spec)?)?;
    let mut cfg = TrainConfig::from_toml(&read_to_string(config)?)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if cfg.bins != spec.bins {
        return Err(CliError::invalid(format!(
            "training config voxelizes {} bins but the network expects {}",
            cfg.bins, spec.bins
        )));
    }
    let raw = Dataset::load_dir(data)?;
    if (raw.width as usize) != spec.width || (raw.height as usize) != spec.height {
        return Err(CliError::invalid(format!(
            "dataset is {}×{} but the network description says {}×{}",
            raw.width, raw.height, spec.width, spec.height
        )));
    }
    let prepared = prepare::<f32>(&raw, cfg.bins, spec.classes, cfg.val_fraction)?;
    let mut model = HalsieModel::<f32>::new(spec, setting, cfg.seed)?;
    println!(
        "training setting {setting}: {} samples ({} train / {} val), {} learnable scalars",
        raw.samples.len(),
        prepared.train.len(),
        prepared.val.len(),
        model.count_params()
    );
    let log_entries = train(&mut model, &prepared, &cfg, |e| {
        println!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  val acc {:.4}  val mIoU {:.4}",
            e.epoch, e.lr, e.train_loss, e.val_accuracy, e.val_miou
        );
    })?;
    save_checkpoint(&model, out)?;
    let log_path = log.unwrap_or_else(|| append_ext(out, "log.csv"));
    let mut log_file = BufWriter::new(File::create(&log_path)?);
    write_train_log(&log_entries, &mut log_file)?;
    log_file.flush()?;
    println!("checkpoint: {}", out.display());
    println!("log: {}", log_path.display());
    Ok(())
}

fn append_ext(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn cmd_infer(
    checkpoint: &Path,
    frame: &Path,
    events: &Path,
    out: &Path,
    logits_path: Option<PathBuf>,
    ids_path: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut model = load_checkpoint::<f32>(checkpoint)?;
    let spec = model.spec().clone();
    let (fw, fh, frame_px) = pnm::read_pgm(frame)?;
    if (fw as usize, fh as usize) != (spec.width, spec.height) {
        return Err(CliError::invalid(format!(
            "frame is {fw}×{fh} but the checkpoint was trained on {}×{}",
            spec.width, spec.height
        )));
    }
    let reader = BufReader::new(File::open(events)?);
    let window = parse_events(reader, fw, fh)?;
    let volume = voxelize(&window, spec.bins)?;

    let hw = spec.width * spec.height;
    let input = ModelInput {
        n: 1,
        height: spec.height,
        width: spec.width,
        frame: frame_px.iter().map(|&v| v as f32 / 255.0).collect(),
        bins: (0..spec.bins)
            .map(|b| volume.bin_slice(b).to_vec())
            .collect(),
    };
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, &input, BnMode::Eval)?;
    let logits = tape.value(fwd.logits).to_vec();
    let ids = argmax_classes(&logits, 1, spec.classes, hw);

    let palette = Palette::default_for(spec.classes);
    pnm::write_ppm(out, fw, fh, &palette.colorize(&ids))?;
    let ids_u8: Vec<u8> = ids.iter().map(|&c| c as u8).collect();
    let ids_path = ids_path.unwrap_or_else(|| append_ext(out, "ids.pgm"));
    pnm::write_pgm(&ids_path, fw, fh, &ids_u8)?;
    let logits_path = logits_path.unwrap_or_else(|| append_ext(out, "logits"));
    save_raw_tensor(
        &logits_path,
        "logits",
        &[1, spec.classes, spec.height, spec.width],
        &logits,
    )?;
    println!("segmentation: {}", out.display());
    println!("class ids: {}", ids_path.display());
    println!("logits: {}", logits_path.display());
    Ok(())
}

fn cmd_profile(
    checkpoint: &Path,
    spec: &Path,
    samples: &Path,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut model = load_checkpoint::<f32>(checkpoint)?;
    let declared = NetworkSpec::from_toml(&read_to_string(spec)?)?;
    if &declared != model.spec() {
        return Err(CliError::invalid(
            "the network description does not match the checkpoint's architecture",
        ));
    }
    let raw = Dataset::load_dir(samples)?;
    let prepared = prepare::<f32>(&raw, model.spec().bins, model.spec().classes, 0.0)?;
    let inputs: Vec<ModelInput<f32>> = prepared
        .train
        .iter()
        .map(|s| ModelInput {
            n: 1,
            height: prepared.height,
            width: prepared.width,
            frame: s.frame.clone(),
            bins: (0..s.volume.bins())
                .map(|b| s.volume.bin_slice(b).to_vec())
                .collect(),
        })
        .collect();
    let report = energy::profile_model(&mut model, &inputs)?;
    print!("{}", energy::render_table(&report));
    println!("firing rates measured over {} samples", inputs.len());
    if let Some(out) = out {
        let mut file = BufWriter::new(File::create(&out)?);
        energy::write_csv(&report, &mut file)?;
        file.flush()?;
        println!("report: {}", out.display());
    }
    Ok(())
}

fn cmd_metrics(
    pred: &Path,
    gt: &Path,
    classes: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(pred)? {
        let name = entry?.file_name().to_string_lossy().to_string();
        if name.ends_with(".pgm") && gt.join(&name).exists() {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(CliError::invalid(format!(
            "no matching .pgm files between {} and {}",
            pred.display(),
            gt.display()
        )));
    }

    let mut pairs = Vec::with_capacity(names.len());
    let mut max_id = 0u32;
    for name in &names {
        let (pw, ph, p) = pnm::read_pgm(&pred.join(name))?;
        let (gw, gh, g) = pnm::read_pgm(&gt.join(name))?;
        if (pw, ph) != (gw, gh) {
            return Err(CliError::invalid(format!(
                "{name}: prediction is {pw}×{ph}, ground truth {gw}×{gh}"
            )));
        }
        for &v in p.iter().chain(&g) {
            if v != 255 {
                max_id = max_id.max(v as u32);
            }
        }
        pairs.push((p, g));
    }
    let k = classes.unwrap_or(max_id as usize + 1);
    if k <= max_id as usize {
        return Err(CliError::invalid(format!(
            "--classes {k} but ids up to {max_id} appear"
        )));
    }
    let mut confusion = ConfusionAccum::new(k);
    for (p, g) in &pairs {
        let p: Vec<u32> = p.iter().map(|&v| v as u32).collect();
        let g: Vec<u32> = g.iter().map(|&v| v as u32).collect();
        confusion.update(&g, &p);
    }
    let report = confusion.report();
    match out {
        Some(path) => {
            let mut file = BufWriter::new(File::create(&path)?);
            write_metrics_csv(&report, &mut file)?;
            file.flush()?;
            println!("report: {}", path.display());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            write_metrics_csv(&report, &mut stdout)?;
        }
    }
    eprintln!(
        "accuracy {:.4}  mIoU {:.4} over {} map pairs",
        report.accuracy,
        report.miou,
        pairs.len()
    );
    Ok(())
}
