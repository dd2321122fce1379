use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use tempeh::camera::Rig;
use tempeh::error::{Error, Result};
use tempeh::eval::evaluate_dirs;
use tempeh::experiment::train_model;
use tempeh::gradcheck;
use tempeh::io::{write_obj, GrayImage};
use tempeh::pipeline::{FusionMode, HeadModel, PipelineConfig};
use tempeh::synth::{build_dataset, list_frames, Dataset, DatasetSpec};
use tempeh::train::{write_log, Stage, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "tempeh", version, about = "Multi-view head reconstruction")]
struct Cli {
    /// Seed for every random choice (dataset spec seed when given to synth).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Floating-point width; must match the build.
    #[arg(long, global = true, value_enum)]
    precision: Option<Precision>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Precision {
    F32,
    F64,
}

impl Precision {
    fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Desk,
    Paper,
    Tiny,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    All,
    CoarsePretrain,
    Coarse,
    Refine,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Scope {
    Ops,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-view dataset.
    Synth {
        /// Dataset spec (JSON); defaults to the built-in spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Use the small built-in spec instead of the default one.
        #[arg(long, conflicts_with = "spec")]
        tiny: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the model on a dataset's train split.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
        /// Training schedule (JSON); defaults to the desk schedule.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Network configuration (JSON); overrides --preset.
        #[arg(long)]
        pipeline: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
        /// Continue from a saved model instead of a fresh one.
        #[arg(long, conflicts_with = "pipeline")]
        init: Option<PathBuf>,
        /// Iterations per stage, e.g. `3000,5000,3000`.
        #[arg(long, value_delimiter = ',')]
        iterations: Option<Vec<usize>>,
        /// Average views uniformly in the refinement stage.
        #[arg(long)]
        naive_fusion: bool,
        /// Sample the capture volume without head localization.
        #[arg(long)]
        no_localization: bool,
        /// Supervise with reference registrations instead of scans.
        #[arg(long)]
        no_scan_loss: bool,
    },
    /// Reconstruct meshes from multi-view images.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// Camera rig (JSON).
        #[arg(long)]
        rig: PathBuf,
        /// One frame directory with `view_<c>.pgm`, or a directory of them.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against scans.
    Eval {
        /// Directory of `<frame>/<mesh>.obj` predictions.
        #[arg(long)]
        predictions: PathBuf,
        /// Directory of `<frame>/scan.ply` and `<frame>/ref.obj`.
        #[arg(long)]
        scans: PathBuf,
        /// Directory holding face/scalp/neck masks.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long, default_value = "refined")]
        mesh: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, value_enum, default_value = "ops")]
        scope: Scope,
        #[arg(long, default_value_t = gradcheck::DEFAULT_SEEDS)]
        seeds: usize,
    },
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    threads: usize,
    precision: &'static str,
    parallel: bool,
    config_sha256: String,
    config: serde_json::Value,
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write_manifest(out: &Path, command: &str, seed: u64, config: serde_json::Value) -> Result<()> {
    let m = Manifest {
        tool: "tempeh",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        threads: tempeh::par::current_threads(),
        precision: tempeh::tensor::PRECISION,
        parallel: cfg!(feature = "parallel"),
        config_sha256: sha256_hex(&config.to_string()),
        config,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn cmd_synth(spec: Option<PathBuf>, tiny: bool, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec = match (spec, tiny) {
        (Some(p), _) => DatasetSpec::load(&p)?,
        (None, true) => DatasetSpec::tiny(),
        (None, false) => DatasetSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let n = build_dataset(&spec, out)?;
    write_manifest(out, "synth", spec.seed, to_value(&spec))?;
    println!("wrote {n} frames to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    dataset: &Path,
    out: &Path,
    stage: StageArg,
    config: Option<PathBuf>,
    pipeline: Option<PathBuf>,
    preset: Preset,
    init: Option<PathBuf>,
    iterations: Option<Vec<usize>>,
    naive_fusion: bool,
    no_localization: bool,
    no_scan_loss: bool,
    seed: u64,
) -> Result<()> {
    let ds = Dataset::open(dataset)?;
    let mut tcfg = match config {
        Some(p) => read_json::<TrainConfig>(&p)?,
        None => TrainConfig::desk(),
    };
    if let Some(it) = iterations {
        tcfg.iterations = it
            .try_into()
            .map_err(|v: Vec<usize>| Error::Config(format!("--iterations needs 3 values, got {}", v.len())))?;
    }
    if no_scan_loss {
        tcfg.use_scan_loss = false;
    }
    let mut model = match init {
        Some(dir) => {
            let m = HeadModel::load(&dir)?;
            if !m.template.same_topology(&ds.template) {
                return Err(Error::Mismatch(format!(
                    "model in {} and dataset template differ in topology",
                    dir.display()
                )));
            }
            m
        }
        None => {
            let cfg = match pipeline {
                Some(p) => read_json::<PipelineConfig>(&p)?,
                None => match preset {
                    Preset::Desk => PipelineConfig::desk(),
                    Preset::Paper => PipelineConfig::paper(),
                    Preset::Tiny => PipelineConfig::tiny(),
                },
            };
            HeadModel::new(cfg, ds.template.clone(), seed)?
        }
    };
    if naive_fusion {
        model.cfg.fusion = FusionMode::Naive;
    }
    if no_localization {
        model.cfg.localize = false;
    }
    let stages: Vec<Stage> = match stage {
        StageArg::All => Stage::ALL.to_vec(),
        StageArg::CoarsePretrain => vec![Stage::CoarsePretrain],
        StageArg::Coarse => vec![Stage::Coarse],
        StageArg::Refine => vec![Stage::Refine],
    };
    let config = serde_json::json!({
        "dataset": dataset.display().to_string(),
        "stages": stages.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "pipeline": to_value(&model.cfg),
        "train": to_value(&tcfg),
    });
    write_manifest(out, "train", seed, config)?;
    let log = train_model(&mut model, &ds, &stages, &tcfg, seed, &mut std::io::stderr())?;
    write_log(&out.join("train_log.csv"), &log)?;
    model.save(&out.join("model"))?;
    println!("saved model to {}", out.join("model").display());
    Ok(())
}

fn load_views(dir: &Path) -> Result<Vec<GrayImage>> {
    let mut images = Vec::new();
    loop {
        let p = dir.join(format!("view_{}.pgm", images.len()));
        if !p.exists() {
            break;
        }
        images.push(GrayImage::load(&p)?);
    }
    if images.is_empty() {
        return Err(Error::Config(format!("no view_0.pgm in {}", dir.display())));
    }
    Ok(images)
}

fn cmd_infer(model: &Path, rig: &Path, input: &Path, out: &Path, seed: u64) -> Result<()> {
    let model = HeadModel::load(model)?;
    let rig = Rig::load(rig)?;
    let frames: Vec<(String, PathBuf)> = if input.join("view_0.pgm").exists() {
        let id = input
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "frame".into());
        vec![(id, input.to_path_buf())]
    } else {
        list_frames(input)?.into_iter().map(|f| (f.id, f.dir)).collect()
    };
    if frames.is_empty() {
        return Err(Error::Config(format!("no frames found in {}", input.display())));
    }
    write_manifest(
        out,
        "infer",
        seed,
        serde_json::json!({ "input": input.display().to_string(), "pipeline": to_value(&model.cfg) }),
    )?;
    for (id, dir) in frames {
        let images = load_views(&dir)?;
        let inf = model
            .infer(&images, &rig)
            .map_err(|e| match e {
                Error::Mismatch(m) => Error::Mismatch(format!("frame {id}: {m}")),
                e => e,
            })?;
        let fdir = out.join(&id);
        std::fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
        write_obj(&fdir.join("coarse.obj"), &inf.coarse)?;
        write_obj(&fdir.join("refined.obj"), &inf.refined)?;
        let meta = serde_json::json!({
            "frame_id": id,
            "head_transform": to_value(&inf.transform),
            "timing_ms": to_value(&inf.timing),
        });
        let p = fdir.join("meta.json");
        std::fs::write(&p, serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n")
            .map_err(|e| Error::io(p, e))?;
        println!("{id}: {:.1} ms", inf.timing.total_ms);
    }
    Ok(())
}

fn cmd_eval(predictions: &Path, scans: &Path, masks: Option<PathBuf>, mesh: &str, out: &Path, seed: u64) -> Result<()> {
    let report = evaluate_dirs(predictions, scans, mesh, masks.as_deref())?;
    for w in &report.warnings {
        eprintln!("tempeh: warning: {w}");
    }
    write_manifest(
        out,
        "eval",
        seed,
        serde_json::json!({
            "predictions": predictions.display().to_string(),
            "scans": scans.display().to_string(),
            "masks": masks.map(|m| m.display().to_string()),
            "mesh": mesh,
        }),
    )?;
    report.write(out)?;
    for r in &report.overall {
        println!(
            "{:14} median {:.4} mean {:.4} std {:.4} n {}",
            r.region, r.median, r.mean, r.std, r.n_points
        );
    }
    Ok(())
}

fn cmd_gradcheck(seeds: usize, seed: u64) -> Result<bool> {
    if tempeh::tensor::PRECISION != "f64" {
        return Err(Error::Config("gradient checks need a 64-bit build".into()));
    }
    let mut ok = true;
    for r in gradcheck::run_ops(seeds, seed) {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {:28} max_rel_error {:.3e} ({} seeds)", r.op, r.max_rel_error, r.seeds);
        ok &= r.passed();
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(p) = cli.precision {
        if p.name() != tempeh::tensor::PRECISION {
            return Err(Error::Config(format!(
                "--precision {} requested but this binary computes in {}; rebuild with{} the f32 feature",
                p.name(),
                tempeh::tensor::PRECISION,
                if p == Precision::F32 { "" } else { "out" }
            )));
        }
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        tempeh::par::set_threads(n).map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Synth { spec, tiny, out } => cmd_synth(spec, tiny, &out, cli.seed)?,
        Command::Train {
            dataset,
            out,
            stage,
            config,
            pipeline,
            preset,
            init,
            iterations,
            naive_fusion,
            no_localization,
            no_scan_loss,
        } => cmd_train(
            &dataset,
            &out,
            stage,
            config,
            pipeline,
            preset,
            init,
            iterations,
            naive_fusion,
            no_localization,
            no_scan_loss,
            seed,
        )?,
        Command::Infer { model, rig, input, out } => cmd_infer(&model, &rig, &input, &out, seed)?,
        Command::Eval {
            predictions,
            scans,
            masks,
            mesh,
            out,
        } => cmd_eval(&predictions, &scans, masks, &mesh, &out, seed)?,
        Command::Gradcheck { scope: Scope::Ops, seeds } => return cmd_gradcheck(seeds, seed),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("tempeh: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
