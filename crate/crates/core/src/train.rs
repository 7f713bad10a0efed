//! Photometric fitting of a [`DynamicField`] to a posed, time-stamped dataset
//! and held-out PSNR evaluation.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Checkpoint, FrameDataset, OptimizerState, SceneInfo, SceneMeta};
use crate::field::{DynamicField, FieldConfig, FieldError};
use crate::numcore::{adam_step, AdamConfig, AdamState, MlpError};
use crate::pipeline::{pixel_loss_and_grad, TrainRay};
use crate::render::{psnr, render_image, sample_ray, Camera, Image, RenderError, RenderOptions, Stratification};
use crate::vec3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Network(#[from] MlpError),
    #[error("training diverged at step {step} (loss {loss}): {reason}")]
    Diverged {
        step: u64,
        loss: f64,
        reason: String,
        /// Parameters before the failing update.
        snapshot: Box<DynamicField<f32>>,
    },
}

impl From<FieldError> for TrainError {
    fn from(e: FieldError) -> Self {
        TrainError::Render(e.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_rays: usize,
    pub samples_per_ray: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    /// Held-out evaluation period in steps; 0 disables it.
    pub eval_every: u64,
    /// Checkpoint period in steps; 0 disables it.
    pub checkpoint_every: u64,
    pub field: FieldConfig,
    pub adam: AdamConfig,
    /// Abort when the loss stays above `divergence_factor` times the initial
    /// loss for `divergence_patience` consecutive steps.
    pub divergence_factor: f64,
    pub divergence_patience: u64,
    /// Record the mean deformation magnitude of every batch in the log. Has
    /// no effect on the loss.
    pub instrument_deformation: bool,
    /// Start the deformation network with a zero output layer.
    pub static_start: bool,
    /// Over the first this many steps, rays come only from frames whose time
    /// is at most `(step + 1) / time_curriculum_steps`, so the canonical
    /// scene settles before the deformation has to reach late frames. 0
    /// samples all frames from the start.
    pub time_curriculum_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 20_000,
            batch_rays: 4096,
            samples_per_ray: 64,
            lr_start: 5e-4,
            lr_end: 5e-5,
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            field: FieldConfig::default(),
            adam: AdamConfig::default(),
            divergence_factor: 10.0,
            divergence_patience: 1000,
            instrument_deformation: false,
            static_start: false,
            time_curriculum_steps: 0,
        }
    }
}

impl TrainConfig {
    /// Settings pinned for the single-machine translating-sphere fit:
    /// 64x64 frames, 32 samples per ray, narrower networks with fewer
    /// frequency levels than the full-scale defaults, and a time curriculum
    /// over the first third of training.
    pub fn desk() -> Self {
        Self {
            total_steps: 6000,
            batch_rays: 256,
            samples_per_ray: 32,
            field: FieldConfig {
                position_levels: 6,
                time_levels: 4,
                width: 64,
                time_gate: true,
                ..FieldConfig::default()
            },
            static_start: true,
            time_curriculum_steps: 2000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.total_steps == 0 {
            return bad("total_steps must be at least 1".into());
        }
        if self.batch_rays == 0 {
            return bad("batch_rays must be at least 1".into());
        }
        if self.samples_per_ray == 0 {
            return bad("samples_per_ray must be at least 1".into());
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start && self.lr_start.is_finite()) {
            return bad(format!(
                "need 0 < lr_end <= lr_start, got lr_start {} lr_end {}",
                self.lr_start, self.lr_end
            ));
        }
        Ok(())
    }
}

/// `lr_start · (lr_end / lr_start)^(step / total_steps)`, exact at both ends.
pub fn lr_schedule(config: &TrainConfig, step: u64) -> f64 {
    if step == 0 {
        return config.lr_start;
    }
    if step >= config.total_steps {
        return config.lr_end;
    }
    let frac = step as f64 / config.total_steps as f64;
    config.lr_start * (config.lr_end / config.lr_start).powf(frac)
}

/// Latest frame time eligible for the batch at `step`.
pub fn time_horizon(config: &TrainConfig, step: u64) -> f64 {
    if step >= config.time_curriculum_steps {
        f64::INFINITY
    } else {
        (step + 1) as f64 / config.time_curriculum_steps as f64
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub deformation_magnitude: Option<f64>,
    /// Milliseconds since the run started.
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn push(&mut self, r: LogRecord) {
        debug_assert!(self.records.last().is_none_or(|l| l.step < r.step));
        self.records.push(r);
    }

    /// Line-delimited JSON, one record per line.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    /// Parses [`TrainLog::to_jsonl`] output. Blank lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

/// Frames of a dataset ready for ray sampling: camera, composited target
/// image and time.
#[derive(Clone, Debug)]
pub struct RayPool {
    pub frames: Vec<(Camera, Image, f64)>,
    pub background: [f64; 3],
    /// Frame indices in increasing time, ties in dataset order.
    by_time: Vec<usize>,
}

impl RayPool {
    pub fn new(dataset: &FrameDataset, info: &SceneInfo) -> Result<Self, TrainError> {
        if dataset.is_empty() {
            return Err(TrainError::Config("dataset has no frames".into()));
        }
        let frames = (0..dataset.len())
            .map(|i| {
                Ok((
                    dataset.camera(i, info.near, info.far)?,
                    dataset.image(i, info.background),
                    dataset.frames[i].time,
                ))
            })
            .collect::<Result<Vec<(Camera, Image, f64)>, RenderError>>()?;
        let mut by_time: Vec<usize> = (0..frames.len()).collect();
        by_time.sort_by(|&a, &b| frames[a].2.total_cmp(&frames[b].2));
        Ok(Self {
            frames,
            background: info.background,
            by_time,
        })
    }

    /// Number of frames with time at most `horizon`, never less than one.
    pub fn frames_until(&self, horizon: f64) -> usize {
        self.by_time
            .partition_point(|&i| self.frames[i].2 <= horizon)
            .max(1)
    }

    pub fn scene_meta(&self, n_samples: usize) -> SceneMeta {
        let c = &self.frames[0].0;
        SceneMeta {
            camera_angle_x: c.camera_angle_x,
            width: c.width,
            height: c.height,
            near: c.near,
            far: c.far,
            background: self.background,
            poses: self.frames.iter().map(|f| f.0.camera_to_world).collect(),
            n_samples,
        }
    }

    /// The ray batch for `step`: uniform over (frame, pixel), with stratified
    /// depths, drawn from a generator keyed on `(seed, step)` only.
    pub fn batch(&self, seed: u64, step: u64, rays: usize, samples: usize) -> Result<Vec<TrainRay<f32>>, TrainError> {
        self.batch_until(seed, step, rays, samples, f64::INFINITY)
    }

    /// Like [`RayPool::batch`], restricted to frames with time at most
    /// `horizon` (at least the earliest frame).
    pub fn batch_until(
        &self,
        seed: u64,
        step: u64,
        rays: usize,
        samples: usize,
        horizon: f64,
    ) -> Result<Vec<TrainRay<f32>>, TrainError> {
        let eligible = self.frames_until(horizon);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(step);
        (0..rays)
            .map(|_| {
                let k = rng.random_range(0..eligible);
                let index = if eligible == self.frames.len() { k } else { self.by_time[k] };
                let (cam, img, time) = &self.frames[index];
                let x = rng.random_range(0..cam.width);
                let y = rng.random_range(0..cam.height);
                let s = sample_ray(cam.near, cam.far, samples, Stratification::Jitter(rng.random()))?;
                let c = img.get(x, y);
                Ok(TrainRay::new(&cam.ray(x, y)?, *time as f32, s, c))
            })
            .collect()
    }
}

/// Mean `|Δx|` over the non-canonical samples of a batch.
fn deformation_magnitude(field: &DynamicField<f32>, rays: &[TrainRay<f32>]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for r in rays.iter().filter(|r| !field.is_canonical_time(r.time)) {
        for p in r.points() {
            total += vec3::norm(vec3::to_f64(field.deform(p, r.time)?));
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Owns the field and optimizer state of one training run.
pub struct Trainer {
    pub config: TrainConfig,
    pool: RayPool,
    field: DynamicField<f32>,
    optimizer: OptimizerState,
    step: u64,
    initial_loss: Option<f64>,
    over_count: u64,
    started: Instant,
    log: TrainLog,
}

impl Trainer {
    pub fn new(config: TrainConfig, pool: RayPool) -> Result<Self, TrainError> {
        config.validate()?;
        let field = if config.static_start {
            DynamicField::with_static_start(config.field, config.seed)?
        } else {
            DynamicField::new(config.field, config.seed)?
        };
        Self::with_field(config, pool, field)
    }

    /// Starts from the given weights with a fresh optimizer.
    pub fn with_field(config: TrainConfig, pool: RayPool, field: DynamicField<f32>) -> Result<Self, TrainError> {
        config.validate()?;
        let optimizer = OptimizerState {
            deformation: AdamState::new(&field.deformation, config.adam),
            canonical: AdamState::new(&field.canonical, config.adam),
        };
        Ok(Self {
            config,
            pool,
            field,
            optimizer,
            step: 0,
            initial_loss: None,
            over_count: 0,
            started: Instant::now(),
            log: TrainLog::default(),
        })
    }

    /// Continues a run saved with optimizer state. The batch sequence after
    /// resuming is identical to an uninterrupted run.
    pub fn resume(config: TrainConfig, pool: RayPool, checkpoint: Checkpoint) -> Result<Self, TrainError> {
        let optimizer = checkpoint
            .optimizer
            .ok_or_else(|| TrainError::Config("checkpoint has no optimizer state to resume from".into()))?;
        if *checkpoint.field.config() != config.field {
            return Err(TrainError::Config(
                "checkpoint architecture differs from the training config".into(),
            ));
        }
        let mut t = Self::with_field(config, pool, checkpoint.field)?;
        t.optimizer = optimizer;
        t.step = checkpoint.step;
        Ok(t)
    }

    pub fn field(&self) -> &DynamicField<f32> {
        &self.field
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn pool(&self) -> &RayPool {
        &self.pool
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_steps
    }

    /// The batch the next call to [`Trainer::step`] will use.
    pub fn current_batch(&self) -> Result<Vec<TrainRay<f32>>, TrainError> {
        self.pool.batch_until(
            self.config.seed,
            self.step,
            self.config.batch_rays,
            self.config.samples_per_ray,
            time_horizon(&self.config, self.step),
        )
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            field: self.field.clone(),
            step: self.step,
            optimizer: Some(self.optimizer.clone()),
            scene: Some(self.pool.scene_meta(self.config.samples_per_ray)),
        }
    }

    /// One Adam update on a fresh batch. Returns the logged record.
    pub fn step(&mut self) -> Result<LogRecord, TrainError> {
        let batch = self.current_batch()?;
        let bg = vec3::from_f64(self.pool.background);
        let eval = pixel_loss_and_grad(&self.field, &batch, bg, false)?;
        let loss = eval.loss as f64;
        let diverged = |reason: String, field: &DynamicField<f32>| TrainError::Diverged {
            step: self.step,
            loss,
            reason,
            snapshot: Box::new(field.clone()),
        };
        if !loss.is_finite() {
            return Err(diverged("non-finite loss".into(), &self.field));
        }
        let initial = *self.initial_loss.get_or_insert(loss);
        if loss > self.config.divergence_factor * initial {
            self.over_count += 1;
            if self.over_count >= self.config.divergence_patience {
                return Err(diverged(
                    format!(
                        "loss above {}x its initial value {initial} for {} consecutive steps",
                        self.config.divergence_factor, self.over_count
                    ),
                    &self.field,
                ));
            }
        } else {
            self.over_count = 0;
        }
        let deformation_magnitude = if self.config.instrument_deformation {
            Some(deformation_magnitude(&self.field, &batch)?)
        } else {
            None
        };
        let lr = lr_schedule(&self.config, self.step);
        let snapshot = self.field.clone();
        let update = adam_step(
            &mut self.field.deformation,
            &eval.grads.deformation,
            &mut self.optimizer.deformation,
            lr as f32,
        )
        .and_then(|_| {
            adam_step(
                &mut self.field.canonical,
                &eval.grads.canonical,
                &mut self.optimizer.canonical,
                lr as f32,
            )
        });
        if let Err(e) = update {
            self.field = snapshot.clone();
            return Err(diverged(e.to_string(), &snapshot));
        }
        let record = LogRecord {
            step: self.step,
            loss,
            lr,
            psnr: None,
            deformation_magnitude,
            elapsed_ms: self.started.elapsed().as_millis() as u64,
        };
        self.log.push(record.clone());
        self.step += 1;
        Ok(record)
    }

    /// Attaches a held-out PSNR to the most recent log record.
    pub fn record_psnr(&mut self, value: f64) {
        if let Some(r) = self.log.records.last_mut() {
            r.psnr = Some(value);
        }
    }

    pub fn into_parts(self) -> (DynamicField<f32>, TrainLog) {
        (self.field, self.log)
    }
}

/// Trains until `total_steps`, calling `on_record` after every step and
/// evaluating on `held_out` every `eval_every` steps.
pub fn train_dnerf(
    dataset: &FrameDataset,
    info: &SceneInfo,
    config: &TrainConfig,
    held_out: Option<&FrameDataset>,
    mut on_record: impl FnMut(&LogRecord, &Trainer),
) -> Result<(DynamicField<f32>, TrainLog), TrainError> {
    let mut trainer = Trainer::new(config.clone(), RayPool::new(dataset, info)?)?;
    while !trainer.is_done() {
        trainer.step()?;
        let step = trainer.step_index();
        if let Some(ds) = held_out {
            if config.eval_every > 0 && step % config.eval_every == 0 {
                let report = evaluate(trainer.field(), ds, info, config.samples_per_ray, "held-out")?;
                trainer.record_psnr(report.mean_psnr);
            }
        }
        let last = trainer.log().records.last().expect("just stepped").clone();
        on_record(&last, &trainer);
    }
    Ok(trainer.into_parts())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePsnr {
    pub index: usize,
    pub time: f64,
    pub psnr: f64,
}

/// Per-frame and mean PSNR of one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene: String,
    pub frames: Vec<FramePsnr>,
    pub mean_psnr: f64,
}

impl EvalReport {
    /// `<scene> <mean PSNR>` with two decimals.
    pub fn table_row(&self) -> String {
        format!("{} {:.2}", self.scene, self.mean_psnr)
    }
}

/// Renders every frame at its pose and time with midpoint sampling and
/// compares against the stored image.
pub fn evaluate(
    field: &DynamicField<f32>,
    dataset: &FrameDataset,
    info: &SceneInfo,
    n_samples: usize,
    scene: &str,
) -> Result<EvalReport, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::Config("evaluation dataset has no frames".into()));
    }
    let opts = RenderOptions {
        n_samples,
        background: info.background,
        stratified_seed: None,
    };
    let mut frames = Vec::with_capacity(dataset.len());
    for (index, f) in dataset.frames.iter().enumerate() {
        let cam = dataset.camera(index, info.near, info.far)?;
        let img = render_image(field, &cam, f.time as f32, &opts)?;
        frames.push(FramePsnr {
            index,
            time: f.time,
            psnr: psnr(&img, &dataset.image(index, info.background))?,
        });
    }
    let mean_psnr = frames.iter().map(|f| f.psnr).sum::<f64>() / frames.len() as f64;
    Ok(EvalReport {
        scene: scene.to_string(),
        frames,
        mean_psnr,
    })
}
