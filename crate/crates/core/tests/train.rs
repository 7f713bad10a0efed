use dynedit_core::data::{Checkpoint, FrameDataset, SplitSizes, ToyScene, ToySceneSpec};
use dynedit_core::field::{DynamicField, FieldConfig};
use dynedit_core::render::render_ray;
use dynedit_core::train::{evaluate, time_horizon, RayPool, TrainConfig, Trainer};
use dynedit_core::vec3;

fn toy() -> ToyScene {
    ToyScene::build(&ToySceneSpec {
        resolution: 16,
        splits: SplitSizes {
            train: 12,
            val: 2,
            test: 3,
        },
        n_samples: 16,
        ..ToySceneSpec::default()
    })
    .unwrap()
}

fn small_train(steps: u64) -> TrainConfig {
    TrainConfig {
        total_steps: steps,
        batch_rays: 64,
        samples_per_ray: 16,
        field: FieldConfig {
            position_levels: 4,
            direction_levels: 2,
            time_levels: 2,
            width: 32,
            depth: 3,
            canonical_time: 0.0,
            time_gate: false,
            deformation_position_levels: None,
        },
        seed: 3,
        ..TrainConfig::default()
    }
}

fn run(config: &TrainConfig, scene: &ToyScene) -> Trainer {
    let mut t = Trainer::new(config.clone(), RayPool::new(&scene.train, &scene.info).unwrap()).unwrap();
    while !t.is_done() {
        t.step().unwrap();
    }
    t
}

#[test]
fn seeded_runs_write_identical_checkpoints() {
    let scene = toy();
    let a = run(&small_train(20), &scene).checkpoint().to_bytes();
    let b = run(&small_train(20), &scene).checkpoint().to_bytes();
    assert_eq!(a, b);
    let other = run(&TrainConfig { seed: 4, ..small_train(20) }, &scene).checkpoint().to_bytes();
    assert_ne!(a, other);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let scene = toy();
    let config = small_train(16);
    let full = run(&config, &scene);

    let pool = || RayPool::new(&scene.train, &scene.info).unwrap();
    let mut first = Trainer::new(config.clone(), pool()).unwrap();
    for _ in 0..7 {
        first.step().unwrap();
    }
    let saved = Checkpoint::from_bytes(&first.checkpoint().to_bytes()).unwrap();
    let mut second = Trainer::resume(config, pool(), saved).unwrap();
    while !second.is_done() {
        second.step().unwrap();
    }
    assert_eq!(second.checkpoint().to_bytes(), full.checkpoint().to_bytes());
    let tail: Vec<f64> = full.log().losses()[7..].to_vec();
    assert_eq!(second.log().losses(), tail);
}

#[test]
fn step_zero_loss_matches_independent_replay() {
    let scene = toy();
    let mut t = Trainer::new(small_train(1), RayPool::new(&scene.train, &scene.info).unwrap()).unwrap();
    let field = t.field().clone();
    let batch = t.current_batch().unwrap();
    let bg = [1.0f32; 3];
    let mut total = 0.0f64;
    for r in &batch {
        let ray = dynedit_core::render::Ray {
            origin: vec3::to_f64(r.origin),
            direction: vec3::to_f64(r.direction),
        };
        let c = render_ray(&field, &ray, &r.samples, r.time, bg).unwrap().color;
        total += (0..3).map(|k| (c[k] as f64 - r.target[k] as f64).powi(2)).sum::<f64>();
    }
    let replay = total / batch.len() as f64;
    let logged = t.step().unwrap().loss;
    assert!((logged - replay).abs() <= 1e-6, "{logged} vs {replay}");
}

#[test]
fn loss_falls_on_the_toy_scene() {
    let scene = toy();
    let t = run(&TrainConfig { lr_start: 1e-3, lr_end: 5e-4, ..small_train(150) }, &scene);
    let losses = t.log().losses();
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.5 * head, "{head} -> {tail}");
}

#[test]
fn canonical_time_stays_anchored_through_training() {
    let scene = toy();
    let t = run(&small_train(10), &scene);
    let field = t.field();
    assert!(field.deform([0.1f32, -0.2, 0.3], 0.5).unwrap() != [0.0; 3]);
    for x in [[0.0f32; 3], [0.3, -0.7, 0.2], [-1.5, 2.0, 0.9]] {
        assert_eq!(field.deform(x, 0.0).unwrap(), [0.0; 3]);
    }
}

#[test]
fn deformation_instrumentation_does_not_change_training() {
    let scene = toy();
    let plain = run(&small_train(8), &scene);
    let probed = run(&TrainConfig { instrument_deformation: true, ..small_train(8) }, &scene);
    assert_eq!(plain.checkpoint().to_bytes(), probed.checkpoint().to_bytes());
    assert_eq!(plain.log().losses(), probed.log().losses());
    assert!(plain.log().records.iter().all(|r| r.deformation_magnitude.is_none()));
    assert!(probed.log().records.iter().all(|r| r.deformation_magnitude.is_some()));
}

/// Opaque pure red from every view at every time, whatever the sampling.
fn red_field(config: FieldConfig) -> DynamicField<f32> {
    let mut f = DynamicField::<f32>::zeros(config).unwrap();
    let last = f.canonical.layers().len() - 1;
    f.canonical.layers_mut()[last].biases = ndarray::arr1(&[40.0, -40.0, -40.0, 1000.0]);
    f
}

fn red_dataset(scene: &ToyScene) -> FrameDataset {
    let mut ds = scene.train.clone();
    for f in &mut ds.frames {
        f.rgba = vec![[255, 0, 0, 255]; f.rgba.len()];
    }
    ds
}

#[test]
fn training_on_its_own_renders_is_a_fixed_point() {
    let scene = toy();
    let ds = red_dataset(&scene);
    let config = TrainConfig { total_steps: 10, ..small_train(10) };
    let start = red_field(config.field);
    let mut t = Trainer::with_field(config, RayPool::new(&ds, &scene.info).unwrap(), start.clone()).unwrap();
    while !t.is_done() {
        t.step().unwrap();
    }
    assert!(t.log().records[0].loss < 1e-12, "{}", t.log().records[0].loss);
    let moved: f64 = [
        (start.deformation.to_flat(), t.field().deformation.to_flat()),
        (start.canonical.to_flat(), t.field().canonical.to_flat()),
    ]
    .iter()
    .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)))
    .sum::<f64>()
    .sqrt();
    assert!(moved < 1e-6, "{moved}");
}

#[test]
fn evaluating_against_own_renders_is_capped() {
    let scene = toy();
    let ds = red_dataset(&scene);
    let report = evaluate(&red_field(small_train(1).field), &ds, &scene.info, 16, "Red").unwrap();
    assert!(report.frames.iter().all(|f| f.psnr == 99.0));
    assert_eq!(report.table_row(), "Red 99.00");

    let trained = run(&small_train(5), &scene);
    let report = evaluate(trained.field(), &scene.test, &scene.info, 16, "Sphere").unwrap();
    let mean = report.frames.iter().map(|f| f.psnr).sum::<f64>() / report.frames.len() as f64;
    assert!((report.mean_psnr - mean).abs() < 1e-9);
    assert_eq!(report.frames.len(), 3);
}

#[test]
fn curriculum_batches_only_reach_frames_up_to_the_horizon() {
    let scene = toy();
    let pool = RayPool::new(&scene.train, &scene.info).unwrap();
    let mut times: Vec<f64> = pool.frames.iter().map(|f| f.2).collect();
    times.sort_by(f64::total_cmp);
    let horizon = times[4];
    assert_eq!(pool.frames_until(horizon), 5);
    assert_eq!(pool.frames_until(-1.0), 1);
    for step in 0..20 {
        for r in pool.batch_until(3, step, 64, 4, horizon).unwrap() {
            assert!(r.time as f64 <= horizon + 1e-6, "{} > {horizon}", r.time);
        }
    }
    // an open horizon draws exactly the unrestricted batch
    let a = pool.batch(3, 7, 32, 4).unwrap();
    let b = pool.batch_until(3, 7, 32, 4, 2.0).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.time == y.time && x.target == y.target && x.origin == y.origin));
}

#[test]
fn curriculum_horizon_rises_to_every_frame() {
    let config = TrainConfig { time_curriculum_steps: 4, ..small_train(10) };
    let h: Vec<f64> = (0..6).map(|s| time_horizon(&config, s)).collect();
    assert_eq!(&h[..4], &[0.25, 0.5, 0.75, 1.0]);
    assert!(h[4..].iter().all(|x| x.is_infinite()));
    assert!(time_horizon(&small_train(10), 0).is_infinite());
}
