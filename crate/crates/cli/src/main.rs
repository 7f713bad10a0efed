//! `dynedit`: toy data generation, training, rendering, evaluation, batch
//! editing and the editing service.

mod error;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use dynedit_core::data::{
    generate_toy_scene, load_checkpoint, load_dataset, load_scene_info, save_checkpoint, Split,
    ToySceneSpec,
};
use dynedit_core::edit::{DistillConfig, ProxySpec};
use dynedit_core::train::{evaluate, RayPool, TrainConfig, Trainer};
use dynedit_core::workflow::{render_view_png, resolve_proxy, run_edit, scene_of, PoseRef, ViewRequest};
use dynedit_serve::{AppState, ServeConfig};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "dynedit", version, about = "Dynamic radiance fields with frozen-deformation editing")]
struct Cli {
    /// Worker threads for rendering and training (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the translating-sphere dataset to a directory.
    GenToy(GenToyArgs),
    /// Fit a field to a dataset directory.
    Train(TrainArgs),
    /// Render one view of a checkpoint to PNG.
    Render(RenderArgs),
    /// Report per-frame and mean PSNR against a dataset split.
    Eval(EvalArgs),
    /// Apply a brush or seal edit and distill it into a new checkpoint.
    Edit(EditArgs),
    /// Start the HTTP and WebSocket editing service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct GenToyArgs {
    /// Scene description (JSON); defaults apply to missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training config (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the single-machine preset instead of the full-scale defaults.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_rays: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from a checkpoint saved with optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("pose").required(true).args(["pose_index", "pose_json"]))]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    time: f64,
    /// Index into the checkpoint's camera presets.
    #[arg(long)]
    pose_index: Option<usize>,
    /// Camera-to-world matrix: inline JSON or a path to a JSON file.
    #[arg(long)]
    pose_json: Option<String>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "val")]
    split: String,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    /// Scene name used in the report row.
    #[arg(long)]
    scene: Option<String>,
}

#[derive(Debug, Args)]
struct EditArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    proxy: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Distillation config (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_rays: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Where student checkpoints go (default: next to the checkpoint).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Distillation config (JSON) for committed edits.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    preview_every: u64,
}

fn read_json<T: DeserializeOwned>(path: &Path, flag: &'static str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, flag, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::malformed(path, flag, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("config serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::write(path, e))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| CliError::write(p, e)),
        _ => Ok(()),
    }
}

fn emit<T: Serialize>(value: &T) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string(value).expect("record serializes"));
}

fn gen_toy(a: GenToyArgs) -> Result<(), CliError> {
    let spec: ToySceneSpec = match &a.spec {
        Some(p) => read_json(p, "--spec")?,
        None => ToySceneSpec::default(),
    };
    let scene = generate_toy_scene(&spec, &a.out).map_err(CliError::data)?;
    emit(&serde_json::json!({
        "out": a.out,
        "train": scene.train.len(),
        "val": scene.val.len(),
        "test": scene.test.len(),
    }));
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut config = match &a.config {
        Some(p) => read_json(p, "--config")?,
        None if a.desk => TrainConfig::desk(),
        None => TrainConfig::default(),
    };
    if let Some(v) = a.steps {
        config.total_steps = v;
    }
    if let Some(v) = a.batch_rays {
        config.batch_rays = v;
    }
    if let Some(v) = a.samples {
        config.samples_per_ray = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.eval_every {
        config.eval_every = v;
    }
    if let Some(v) = a.checkpoint_every {
        config.checkpoint_every = v;
    }
    config.validate().map_err(|e| CliError::usage(None, e.to_string()))?;

    let info = load_scene_info(&a.data).map_err(CliError::data)?;
    let dataset = load_dataset(&a.data, Split::Train).map_err(CliError::data)?;
    let held_out = if config.eval_every > 0 {
        Some(load_dataset(&a.data, Split::Val).map_err(CliError::data)?)
    } else {
        None
    };
    ensure_parent(&a.out)?;
    write_json(&sibling(&a.out, ".train.json"), &config)?;

    let pool = RayPool::new(&dataset, &info).map_err(CliError::train)?;
    let mut trainer = match &a.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p).map_err(|e| CliError::checkpoint("--resume", e))?;
            Trainer::resume(config.clone(), pool, ckpt).map_err(CliError::train)?
        }
        None => Trainer::new(config.clone(), pool).map_err(CliError::train)?,
    };
    let log_path = sibling(&a.out, ".log.jsonl");
    let mut log = std::fs::File::create(&log_path).map_err(|e| CliError::write(&log_path, e))?;
    while !trainer.is_done() {
        let step = match trainer.step() {
            Ok(r) => r.step + 1,
            Err(e) => {
                if let dynedit_core::train::TrainError::Diverged { snapshot, .. } = &e {
                    let mut ckpt = trainer.checkpoint();
                    ckpt.field = (**snapshot).clone();
                    let _ = save_checkpoint(&ckpt, &sibling(&a.out, ".diverged.sdnf"));
                }
                return Err(CliError::train(e));
            }
        };
        if let Some(ds) = &held_out {
            if step % config.eval_every == 0 {
                let r = evaluate(trainer.field(), ds, &info, config.samples_per_ray, "val").map_err(CliError::train)?;
                trainer.record_psnr(r.mean_psnr);
            }
        }
        let record = trainer.log().records.last().expect("just stepped");
        emit(record);
        writeln!(log, "{}", serde_json::to_string(record).expect("record serializes"))
            .map_err(|e| CliError::write(&log_path, e))?;
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && !trainer.is_done() {
            let path = sibling(&a.out, &format!(".step{step}.sdnf"));
            save_checkpoint(&trainer.checkpoint(), &path).map_err(|e| CliError::checkpoint("--out", e))?;
        }
    }
    save_checkpoint(&trainer.checkpoint(), &a.out).map_err(|e| CliError::checkpoint("--out", e))
}

fn parse_pose_json(s: &str) -> Result<[[f64; 4]; 4], CliError> {
    if s.trim_start().starts_with('[') {
        serde_json::from_str(s).map_err(|e| CliError::usage(Some("--pose-json"), format!("not a 4x4 matrix: {e}")))
    } else {
        read_json(Path::new(s), "--pose-json")
    }
}

fn render(a: RenderArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.ckpt).map_err(|e| CliError::checkpoint("--ckpt", e))?;
    let meta = scene_of(&ckpt).map_err(|e| CliError::usage(Some("--ckpt"), e.to_string()))?;
    let pose = match (&a.pose_index, &a.pose_json) {
        (Some(i), _) => PoseRef::Index(*i),
        (None, Some(s)) => PoseRef::Matrix(parse_pose_json(s)?),
        (None, None) => unreachable!("clap enforces the pose group"),
    };
    let req = ViewRequest {
        pose,
        time: a.time,
        width: a.width.unwrap_or(meta.width),
        height: a.height.unwrap_or(meta.height),
        n_samples: a.samples,
    };
    let png = render_view_png(&ckpt.field, meta, &req).map_err(CliError::workflow)?;
    ensure_parent(&a.out)?;
    std::fs::write(&a.out, png).map_err(|e| CliError::write(&a.out, e))
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let split: Split = a
        .split
        .parse()
        .map_err(|_| CliError::usage(Some("--split"), format!("unknown split `{}`", a.split)))?;
    let ckpt = load_checkpoint(&a.ckpt).map_err(|e| CliError::checkpoint("--ckpt", e))?;
    let info = load_scene_info(&a.data).map_err(CliError::data)?;
    let dataset = load_dataset(&a.data, split).map_err(CliError::data)?;
    let samples = a
        .samples
        .or(ckpt.scene.as_ref().map(|m| m.n_samples))
        .unwrap_or(64);
    let scene = a.scene.clone().unwrap_or_else(|| {
        a.data
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into())
    });
    let report = evaluate(&ckpt.field, &dataset, &info, samples, &scene).map_err(CliError::train)?;
    ensure_parent(&a.report)?;
    write_json(&a.report, &report)?;
    emit(&serde_json::json!({"row": report.table_row(), "mean_psnr": report.mean_psnr}));
    Ok(())
}

fn edit(a: EditArgs) -> Result<(), CliError> {
    let base = load_checkpoint(&a.ckpt).map_err(|e| CliError::checkpoint("--ckpt", e))?;
    let spec: ProxySpec = read_json(&a.proxy, "--proxy")?;
    let mut config: DistillConfig = match &a.config {
        Some(p) => read_json(p, "--config")?,
        None => DistillConfig::default(),
    };
    if let Some(v) = a.steps {
        config.steps = v;
    }
    if let Some(v) = a.batch_rays {
        config.batch_rays = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    config.validate().map_err(CliError::edit)?;
    let proxy = resolve_proxy(&base, &spec, a.proxy.parent()).map_err(CliError::edit)?;
    ensure_parent(&a.out)?;
    write_json(&sibling(&a.out, ".distill.json"), &config)?;
    let log_path = sibling(&a.out, ".log.jsonl");
    let (student, log) = run_edit(&base, proxy, &config, |r, _| emit(r)).map_err(CliError::edit)?;
    std::fs::write(&log_path, log.to_jsonl()).map_err(|e| CliError::write(&log_path, e))?;
    save_checkpoint(&student, &a.out).map_err(|e| CliError::checkpoint("--out", e))
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.ckpt).map_err(|e| CliError::checkpoint("--ckpt", e))?;
    scene_of(&ckpt).map_err(|e| CliError::usage(Some("--ckpt"), e.to_string()))?;
    let dir = a.ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut config = ServeConfig::new(a.out_dir.clone().unwrap_or_else(|| dir.clone()));
    if let Some(p) = &a.config {
        config.distill = read_json(p, "--config")?;
    }
    config.preview_every = a.preview_every;
    config.base_dir = Some(dir);
    let name = a
        .ckpt
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let state = AppState::with_checkpoint(config, ckpt, name);
    let addr = SocketAddr::new(a.host, a.port);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Other(e.to_string()))?;
    emit(&serde_json::json!({"listening": addr.to_string()}));
    runtime
        .block_on(dynedit_serve::serve(state, addr))
        .map_err(|e| CliError::Other(format!("server: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage(Some("--threads"), "must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    match cli.command {
        Command::GenToy(a) => gen_toy(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Edit(a) => edit(a),
        Command::Serve(a) => serve(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let flag = e.get(clap::error::ContextKind::InvalidArg).map(|v| v.to_string());
            let rendered = e.render().to_string();
            let message = rendered
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(str::trim)
                .collect::<Vec<_>>()
                .join(" ");
            return CliError::Usage {
                flag,
                message: message.trim_start_matches("error: ").into(),
            }
            .report();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
