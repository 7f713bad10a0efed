use std::path::PathBuf;

use dynedit_core::data::{
    generate_toy_scene, load_checkpoint, load_dataset, load_scene_info, save_checkpoint, save_dataset,
    Checkpoint, DatasetFrame, FrameDataset, SceneMeta, Split, SplitSizes, ToySceneSpec,
};
use dynedit_core::field::{DynamicField, FieldConfig};
use dynedit_core::numcore::ParamVec;
use proptest::prelude::*;

fn tiny_field() -> FieldConfig {
    FieldConfig {
        position_levels: 2,
        direction_levels: 1,
        time_levels: 1,
        width: 8,
        depth: 2,
        canonical_time: 0.0,
        time_gate: false,
        deformation_position_levels: None,
    }
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
    ]
}

fn matrix() -> impl Strategy<Value = [[f64; 4]; 4]> {
    proptest::array::uniform4(proptest::array::uniform4(finite()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        seed in any::<u64>(),
        step in any::<u64>(),
        poses in proptest::collection::vec(matrix(), 0..4),
        angle in 0.01..3.0f64,
        near in 0.0..2.0f64,
        perturb in proptest::collection::vec(any::<u32>(), 8),
    ) {
        let mut field = DynamicField::<f32>::new(tiny_field(), seed).unwrap();
        // arbitrary bit patterns, including subnormals
        for (k, bits) in perturb.iter().enumerate() {
            let v = f32::from_bits(*bits);
            if v.is_finite() {
                let i = (k * 37) % field.param_count();
                field.set_param(i, v);
            }
        }
        let ckpt = Checkpoint {
            field,
            step,
            optimizer: None,
            scene: Some(SceneMeta {
                camera_angle_x: angle,
                width: 7,
                height: 5,
                near,
                far: near + 3.1,
                background: [0.1, 0.2, 1.0 / 3.0],
                poses,
                n_samples: 17,
            }),
        };
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, ckpt);
    }

    #[test]
    fn dataset_round_trip_is_bit_exact(
        frames in proptest::collection::vec(
            (matrix(), 0.0..=1.0f64, proptest::collection::vec(any::<[u8; 4]>(), 6)),
            1..4,
        ),
        angle in 0.01..3.0f64,
    ) {
        let ds = FrameDataset {
            split: Split::Val,
            camera_angle_x: angle,
            width: 3,
            height: 2,
            frames: frames
                .into_iter()
                .enumerate()
                .map(|(i, (m, time, rgba))| DatasetFrame {
                    file_path: format!("./val/r_{i:03}"),
                    transform_matrix: m,
                    time,
                    rgba,
                })
                .collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        prop_assert_eq!(load_dataset(dir.path(), Split::Val).unwrap(), ds);
    }
}

#[test]
fn trained_checkpoint_with_optimizer_survives_disk() {
    use dynedit_core::data::ToyScene;
    use dynedit_core::train::{RayPool, TrainConfig, Trainer};
    let scene = ToyScene::build(&ToySceneSpec {
        resolution: 8,
        splits: SplitSizes { train: 3, val: 1, test: 1 },
        ..ToySceneSpec::default()
    })
    .unwrap();
    let config = TrainConfig {
        total_steps: 3,
        batch_rays: 16,
        samples_per_ray: 8,
        field: tiny_field(),
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(config, RayPool::new(&scene.train, &scene.info).unwrap()).unwrap();
    while !t.is_done() {
        t.step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.sdnf");
    let ckpt = t.checkpoint();
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(std::fs::read(&path).unwrap(), ckpt.to_bytes());
}

#[test]
fn generated_toy_scene_reloads_exactly() {
    let spec = ToySceneSpec {
        resolution: 12,
        splits: SplitSizes { train: 5, val: 2, test: 2 },
        ..ToySceneSpec::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_toy_scene(&spec, dir.path()).unwrap();
    for split in Split::ALL {
        assert_eq!(&load_dataset(dir.path(), split).unwrap(), scene.split(split));
    }
    assert_eq!(load_scene_info(dir.path()).unwrap(), scene.info);
    let stored: ToySceneSpec =
        serde_json::from_slice(&std::fs::read(dir.path().join("toy_spec.json")).unwrap()).unwrap();
    assert_eq!(stored, spec);
}

const DNERF_SCENES: [&str; 8] = [
    "bouncingballs",
    "hellwarrior",
    "hook",
    "jumpingjacks",
    "lego",
    "mutant",
    "standup",
    "trex",
];

/// Parses a local copy of the public D-NeRF synthetic scenes when
/// `DYNEDIT_DNERF_ROOT` points at one; skipped otherwise.
#[test]
fn public_dnerf_layout_parses_when_present() {
    let Some(root) = std::env::var_os("DYNEDIT_DNERF_ROOT").map(PathBuf::from) else {
        eprintln!("DYNEDIT_DNERF_ROOT not set; skipping");
        return;
    };
    let mut seen = 0;
    for name in DNERF_SCENES {
        let dir = root.join(name);
        if !dir.is_dir() {
            continue;
        }
        seen += 1;
        for split in Split::ALL {
            let ds = load_dataset(&dir, split).unwrap_or_else(|e| panic!("{name} {split}: {e}"));
            assert!(ds.frames.iter().all(|f| (0.0..=1.0).contains(&f.time)));
            assert!(ds.frames.iter().all(|f| f.rgba.len() == (ds.width * ds.height) as usize));
            if split == Split::Train {
                assert!(ds.has_time(0.0), "{name}: no frame at time 0");
            }
        }
    }
    assert!(seen > 0, "no D-NeRF scenes under {}", root.display());
}
