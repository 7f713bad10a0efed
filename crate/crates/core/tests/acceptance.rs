//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Positional arguments select criteria by
//! substring, e.g. `cargo test --test acceptance -- seal`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use dynedit_core::data::{
    load_checkpoint, load_dataset, save_checkpoint, save_dataset, Checkpoint, SceneMeta, Split, ToyScene,
    ToySceneSpec,
};
use dynedit_core::edit::{
    distill_student, rgb_to_hsl, seal_blend_hsl, Brush, DistillConfig, Distiller, EditProxy, ProxyShape, Seal,
    Stamp, TeacherModel,
};
use dynedit_core::field::{DynamicField, FieldConfig, FieldError, RadianceField, RadianceSample};
use dynedit_core::numcore::finite_diff_check;
use dynedit_core::pipeline::{pixel_loss, pixel_loss_and_grad, TrainRay};
use dynedit_core::render::{
    psnr_masked, render_image, render_ray, sample_ray, Camera, Image, Ray, RenderOptions, Stratification,
};
use dynedit_core::train::{evaluate, RayPool, TrainConfig, Trainer};
use dynedit_core::vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Held-out PSNR of the seeded desk-preset fit on the default toy scene,
/// recorded from the fixture run. Later runs must land within
/// [`PSNR_PIN_TOLERANCE`] of it.
const PINNED_TOY_PSNR: f64 = 27.62;
const PSNR_PIN_TOLERANCE: f64 = 1.0;
const TOY_PSNR_FLOOR: f64 = 25.0;
const TOY_BUDGET: Duration = Duration::from_secs(15 * 60);
const DISTILL_BUDGET: Duration = Duration::from_secs(10 * 60);
/// Time budgets are stated for an 8-core desktop.
const REFERENCE_CORES: f64 = 8.0;

/// Distillation steps for the propagation criterion.
const PROPAGATION_STEPS: u64 = 1500;

type Outcome = Result<String, String>;

struct Report {
    name: &'static str,
    outcome: Outcome,
    elapsed: Duration,
}

fn cores() -> f64 {
    rayon::current_num_threads() as f64
}

/// Wall time scaled to the reference machine, assuming the data-parallel
/// work spreads over every core.
fn reference_time(elapsed: Duration) -> Duration {
    elapsed.mul_f64(cores() / REFERENCE_CORES)
}

fn check(ok: bool, what: String) -> Result<String, String> {
    if ok {
        Ok(what)
    } else {
        Err(what)
    }
}

/// Joins the details of several sub-checks; fails if any failed.
fn all(parts: Vec<Outcome>) -> Outcome {
    let failed = parts.iter().any(Result::is_err);
    let text = parts
        .into_iter()
        .map(|p| match p {
            Ok(s) => s,
            Err(s) => format!("FAILED {s}"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    if failed {
        Err(text)
    } else {
        Ok(text)
    }
}

// ---------------------------------------------------------------------------
// gradient correctness

fn random_case(case: u64) -> (DynamicField<f64>, Vec<TrainRay<f64>>, [f64; 3]) {
    let mut rng = ChaCha8Rng::seed_from_u64(case);
    let config = FieldConfig {
        width: 8,
        ..FieldConfig::default()
    };
    let mut field = DynamicField::<f64>::new(config, case).unwrap();
    // non-zero biases keep pre-activations off the ReLU kink
    for net in [&mut field.deformation, &mut field.canonical] {
        for l in net.layers_mut() {
            l.biases.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }
    let rays = (0..4)
        .map(|i| {
            let d = vec3::normalize([(); 3].map(|_| rng.random_range(-1.0..1.0)));
            let ray = Ray {
                origin: vec3::scale(d, -4.0),
                direction: d,
            };
            let t = if i == 0 { 0.0 } else { rng.random_range(0.0..1.0) };
            let s = sample_ray(2.0, 6.0, 2, Stratification::Jitter(rng.random())).unwrap();
            TrainRay::new(&ray, t, s, [(); 3].map(|_| rng.random()))
        })
        .collect();
    let bg = [(); 3].map(|_| rng.random());
    (field, rays, bg)
}

fn gradient_correctness() -> Outcome {
    const CASES: u64 = 100;
    const COORDS: usize = 300;
    let mut worst = (0.0f64, 0u64);
    let mut checked = 0;
    for case in 0..CASES {
        let (field, rays, bg) = random_case(case);
        let ev = pixel_loss_and_grad(&field, &rays, bg, false).map_err(|e| e.to_string())?;
        let analytic = DynamicField::from_parts(*field.config(), ev.grads.deformation, ev.grads.canonical)
            .map_err(|e| e.to_string())?;
        let report = finite_diff_check(
            |f: &DynamicField<f64>| pixel_loss(f, &rays, bg).unwrap(),
            &field,
            &analytic,
            // a wider step straddles ReLU kinks lying within it of a pre-activation
            1e-8,
            1e-8,
            Some((COORDS, case)),
        )
        .map_err(|e| e.to_string())?;
        checked += report.checked;
        if report.norm_rel_error > worst.0 {
            worst = (report.norm_rel_error, case);
        }
    }
    check(
        worst.0 <= 1e-4,
        format!(
            "{CASES} cases, {checked} coordinates, worst relative error {:.2e} (case {}) <= 1e-4",
            worst.0, worst.1
        ),
    )
}

// ---------------------------------------------------------------------------
// rendering oracle

struct Slab {
    sigma: f64,
    z0: f64,
    z1: f64,
}

impl RadianceField<f64> for Slab {
    fn query(&self, x: [f64; 3], _: [f64; 3], _: f64) -> Result<RadianceSample<f64>, FieldError> {
        let inside = x[2] >= self.z0 && x[2] < self.z1;
        Ok(RadianceSample {
            color: [0.8, 0.5, 0.2],
            density: if inside { self.sigma } else { 0.0 },
        })
    }
}

fn slab_opacity(slab: &Slab, n: usize, mode: Stratification) -> f64 {
    let ray = Ray {
        origin: [0.0, 0.0, 4.0],
        direction: [0.0, 0.0, -1.0],
    };
    let s = sample_ray::<f64>(2.0, 6.0, n, mode).unwrap();
    render_ray(slab, &ray, &s, 0.0, [0.0; 3]).unwrap().opacity
}

fn rendering_oracle() -> Outcome {
    // medium filling the sampled interval, L = far - near = 4
    let medium = Slab {
        sigma: 0.3,
        z0: -10.0,
        z1: 10.0,
    };
    let want = 1.0 - (-0.3f64 * 4.0).exp();
    let at_256 = (slab_opacity(&medium, 256, Stratification::Midpoint) - want).abs();
    let mean_jitter = |n: usize| {
        (0..200)
            .map(|seed| (slab_opacity(&medium, n, Stratification::Jitter(seed)) - want).abs())
            .sum::<f64>()
            / 200.0
    };
    let errors: Vec<f64> = [16, 32, 64, 128].into_iter().map(mean_jitter).collect();
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);

    // slab of length 1.2 inside the interval, edges off the bin grid
    let slab = Slab {
        sigma: 0.8,
        z0: -0.67,
        z1: 0.53,
    };
    let slab_want = 1.0 - (-0.8f64 * 1.2).exp();
    let slab_errors: Vec<f64> = [16, 32, 64, 128, 256]
        .into_iter()
        .map(|n| (slab_opacity(&slab, n, Stratification::Midpoint) - slab_want).abs())
        .collect();
    all(vec![
        check(at_256 < 1e-3, format!("medium |error| at 256 samples {at_256:.2e} < 1e-3")),
        check(
            monotone,
            format!("mean jittered error 16..128: {}", fmt_list(&errors)),
        ),
        check(
            slab_errors[4] < 1e-3,
            format!("offset slab midpoint error 16..256: {}", fmt_list(&slab_errors)),
        ),
    ])
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------------------
// canonical anchoring

fn anchored(field: &DynamicField<f32>, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10_000;
    for _ in 0..n {
        let x = [(); 3].map(|_| rng.random_range(-3.0..3.0f32));
        let d = field.deform(x, 0.0).map_err(|e| e.to_string())?;
        if d.iter().any(|c| c.to_bits() != 0) {
            return Err(format!("deform({x:?}, 0) = {d:?}"));
        }
    }
    Ok(n)
}

fn canonical_anchoring(fitted: &DynamicField<f32>) -> Outcome {
    // signature check: a time parameter on canonical_query would not compile
    let _: fn(&DynamicField<f32>, [f32; 3], [f32; 3]) -> Result<RadianceSample<f32>, FieldError> =
        DynamicField::<f32>::canonical_query;
    let fresh = DynamicField::<f32>::new(fitted.config().to_owned(), 17).map_err(|e| e.to_string())?;
    let n_fresh = anchored(&fresh, 1)?;
    let n_fit = anchored(fitted, 2)?;
    let moving = fitted
        .deform([-0.4, 0.0, 0.3], 0.7)
        .map(|d| vec3::norm(vec3::to_f64(d)))
        .map_err(|e| e.to_string())?;
    check(
        moving > 0.0,
        format!(
            "deform(x, 0) is +0.0 for {n_fresh} points before and {n_fit} after training \
             (|deform| at t = 0.7 is {moving:.3}); canonical_query has no time parameter"
        ),
    )
}

// ---------------------------------------------------------------------------
// toy fit

struct Fit {
    scene: ToyScene,
    checkpoint: Checkpoint,
    psnr: f64,
    elapsed: Duration,
}

fn fit_toy() -> Result<Fit, String> {
    let started = Instant::now();
    let scene = ToyScene::build(&ToySceneSpec::default()).map_err(|e| e.to_string())?;
    let config = TrainConfig::desk();
    let pool = RayPool::new(&scene.train, &scene.info).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(config.clone(), pool).map_err(|e| e.to_string())?;
    while !trainer.is_done() {
        trainer.step().map_err(|e| e.to_string())?;
    }
    let elapsed = started.elapsed();
    let report = evaluate(trainer.field(), &scene.test, &scene.info, config.samples_per_ray, "toy")
        .map_err(|e| e.to_string())?;
    Ok(Fit {
        checkpoint: trainer.checkpoint(),
        scene,
        psnr: report.mean_psnr,
        elapsed,
    })
}

fn toy_fit(fit: &Fit) -> Outcome {
    let reference = reference_time(fit.elapsed);
    all(vec![
        check(
            fit.psnr >= TOY_PSNR_FLOOR,
            format!("held-out PSNR {:.2} dB >= {TOY_PSNR_FLOOR}", fit.psnr),
        ),
        check(
            (fit.psnr - PINNED_TOY_PSNR).abs() <= PSNR_PIN_TOLERANCE,
            format!("pinned {PINNED_TOY_PSNR:.2} +/- {PSNR_PIN_TOLERANCE} dB"),
        ),
        check(
            reference <= TOY_BUDGET,
            format!(
                "{:.0} s on {} core(s), {:.0} s scaled to {REFERENCE_CORES} cores <= {} s",
                fit.elapsed.as_secs_f64(),
                cores(),
                reference.as_secs_f64(),
                TOY_BUDGET.as_secs()
            ),
        ),
    ])
}

// ---------------------------------------------------------------------------
// frozen propagation

fn scene_meta(fit: &Fit) -> SceneMeta {
    fit.checkpoint.scene.clone().expect("trainer checkpoints carry scene metadata")
}

fn sphere_top(scene: &ToyScene) -> [f64; 3] {
    vec3::add(scene.field.center_at(0.0), [0.0, 0.0, scene.field.bounding_radius()])
}

fn brush_at(anchor: [f64; 3], pressure: f64, radius: f64) -> EditProxy {
    EditProxy {
        t_edit: 0.0,
        shape: ProxyShape::Brush(Brush {
            anchors: vec![anchor],
            normal: [0.0, 0.0, 1.0],
            pressure,
            radius,
        }),
    }
}

fn render<R: RadianceField<f32>>(field: &R, cam: &Camera, t: f64, meta: &SceneMeta) -> Image {
    let opts = RenderOptions {
        n_samples: meta.n_samples,
        background: meta.background,
        stratified_seed: None,
    };
    render_image(field, cam, t as f32, &opts).expect("render")
}

const TAU_DIFF: f32 = 2.0 / 255.0;

fn diff_mask(a: &Image, b: &Image) -> Vec<bool> {
    a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| (0..3).any(|c| (p[c] - q[c]).abs() > TAU_DIFF))
        .collect()
}

fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn centroid(mask: &[bool], width: u32) -> Option<[f64; 2]> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (i, &m) in mask.iter().enumerate() {
        if m {
            sx += (i as u32 % width) as f64 + 0.5;
            sy += (i as u32 / width) as f64 + 0.5;
            n += 1;
        }
    }
    (n > 0).then(|| [sx / n as f64, sy / n as f64])
}

/// Pixels outside the projected bounds of the proxy region carried along
/// the scene motion to time `t`.
fn off_region(proxy: &EditProxy, velocity: [f64; 3], t: f64, cam: &Camera) -> Vec<bool> {
    let mut moved = proxy.clone();
    if let ProxyShape::Brush(b) = &mut moved.shape {
        for a in &mut b.anchors {
            *a = vec3::add(*a, vec3::scale(velocity, t));
        }
    }
    let bounds = moved.projected_bounds(cam);
    (0..cam.height)
        .flat_map(|y| (0..cam.width).map(move |x| (x, y)))
        .map(|(x, y)| match bounds {
            Some((x0, y0, x1, y1)) => !(x >= x0 && x <= x1 && y >= y0 && y <= y1),
            None => true,
        })
        .collect()
}

fn frozen_propagation(fit: &Fit) -> Outcome {
    let meta = scene_meta(fit);
    let base = fit.checkpoint.field.clone();
    let anchor = sphere_top(&fit.scene);
    let proxy = brush_at(anchor, 1.0, 0.45);
    let teacher = TeacherModel::new(base.clone(), proxy.clone());
    let config = DistillConfig {
        steps: PROPAGATION_STEPS,
        batch_rays: 256,
        samples_per_ray: meta.n_samples,
        seed: 1,
        ..DistillConfig::default()
    };
    let started = Instant::now();
    let (student, _log) =
        distill_student(&teacher, teacher.fresh_student(), &config, &meta, |_, _| {}).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let reference = reference_time(elapsed);

    // fixed camera seeing the motion across the image
    let cam = fit
        .scene
        .ring_camera(std::f64::consts::FRAC_PI_2)
        .map_err(|e| e.to_string())?;
    let velocity = fit.scene.field.world_velocity();
    let original: Vec<Image> = [0.0, 0.5, 1.0].iter().map(|&t| render(&base, &cam, t, &meta)).collect();
    let edited: Vec<Image> = [0.0, 0.5, 1.0].iter().map(|&t| render(&student, &cam, t, &meta)).collect();
    let footprint = diff_mask(&render(&teacher, &cam, 0.0, &meta), &original[0]);
    let m0 = diff_mask(&edited[0], &original[0]);
    let m1 = diff_mask(&edited[2], &original[2]);
    let overlap = iou(&m0, &footprint);

    let shift = match (cam.project(anchor), cam.project(vec3::add(anchor, velocity))) {
        (Some(p0), Some(p1)) => [p1[0] - p0[0], p1[1] - p0[1]],
        _ => return Err("stroke anchor does not project into the fixed camera".into()),
    };
    let tracking = match (centroid(&m0, cam.width), centroid(&m1, cam.width)) {
        (Some(c0), Some(c1)) => {
            let err = ((c1[0] - c0[0] - shift[0]).powi(2) + (c1[1] - c0[1] - shift[1]).powi(2)).sqrt();
            check(
                err <= 2.0,
                format!(
                    "(c) centroid moved ({:.2}, {:.2}) px vs projected ({:.2}, {:.2}), error {err:.2} <= 2 px",
                    c1[0] - c0[0],
                    c1[1] - c0[1],
                    shift[0],
                    shift[1]
                ),
            )
        }
        _ => Err("(c) empty difference mask".into()),
    };

    let off: Vec<Outcome> = [0.0, 0.5, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mask = off_region(&proxy, velocity, t, &cam);
            let p = psnr_masked(&edited[i], &original[i], &mask).map_err(|e| e.to_string())?;
            check(p >= 30.0, format!("(d) off-region PSNR at t = {t}: {p:.2} dB >= 30"))
        })
        .collect();

    // diagnostic: student vs teacher at the edit time on held-out views
    let mut held_out = Vec::new();
    for i in 0..fit.scene.test.len() {
        let c = fit.scene.test.camera(i, meta.near, meta.far).map_err(|e| e.to_string())?;
        let a = render(&student, &c, 0.0, &meta);
        let b = render(&teacher, &c, 0.0, &meta);
        held_out.push(psnr_masked(&a, &b, &vec![true; a.pixels.len()]).map_err(|e| e.to_string())?);
    }
    let held_out = held_out.iter().sum::<f64>() / held_out.len() as f64;

    let mut parts = vec![
        check(
            student.deformation == base.deformation
                && student.deformation_fingerprint() == base.deformation_fingerprint(),
            "(a) deformation weights bit-identical".into(),
        ),
        check(
            overlap >= 0.5,
            format!(
                "(b) IoU {overlap:.3} >= 0.5 ({} px edited at t = 0, footprint {} px)",
                m0.iter().filter(|m| **m).count(),
                footprint.iter().filter(|m| **m).count()
            ),
        ),
        tracking,
    ];
    parts.extend(off);
    parts.push(check(
        reference <= DISTILL_BUDGET,
        format!(
            "{PROPAGATION_STEPS} steps in {:.0} s, {:.0} s scaled to {REFERENCE_CORES} cores <= {} s; \
             held-out student vs teacher at t = 0: {held_out:.2} dB",
            elapsed.as_secs_f64(),
            reference.as_secs_f64(),
            DISTILL_BUDGET.as_secs()
        ),
    ));
    all(parts)
}

// ---------------------------------------------------------------------------
// identity edit

fn transparent_seal(anchor: [f64; 3]) -> EditProxy {
    EditProxy {
        t_edit: 0.0,
        shape: ProxyShape::Seal(Seal {
            origin: vec3::sub(anchor, [0.3, 0.3, 0.0]),
            axis_u: [0.6, 0.0, 0.0],
            axis_v: [0.0, 0.6, 0.0],
            stamp: Stamp {
                width: 2,
                height: 1,
                rgba: vec![[255, 0, 0, 0], [0, 0, 255, 0]],
            },
            alpha_threshold: 0.5,
            slab_half_width: 0.25,
        }),
    }
}

fn canonical_drift(a: &DynamicField<f32>, b: &DynamicField<f32>) -> f64 {
    a.canonical
        .to_flat()
        .iter()
        .zip(b.canonical.to_flat())
        .map(|(x, y)| (*x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn identity_edit(fit: &Fit) -> Outcome {
    let meta = scene_meta(fit);
    let base = &fit.checkpoint.field;
    let anchor = sphere_top(&fit.scene);
    let config = DistillConfig {
        steps: 100,
        batch_rays: 256,
        samples_per_ray: meta.n_samples,
        seed: 2,
        ..DistillConfig::default()
    };
    let mut parts = Vec::new();
    for (name, proxy) in [
        ("pressure-0 brush", brush_at(anchor, 0.0, 0.45)),
        ("transparent seal", transparent_seal(anchor)),
    ] {
        let teacher = TeacherModel::new(base.clone(), proxy);
        let cams = [0.3, 2.0, 4.4].map(|az| fit.scene.ring_camera(az).expect("camera"));
        let identical = cams.iter().all(|c| {
            [0.0, 0.5].iter().all(|&t| {
                let a = render(&teacher, c, t, &meta);
                let b = render(base, c, t, &meta);
                a.pixels
                    .iter()
                    .zip(&b.pixels)
                    .all(|(p, q)| p.map(f32::to_bits) == q.map(f32::to_bits))
            })
        });
        let (student, log) = distill_student(&teacher, teacher.fresh_student(), &config, &meta, |_, _| {})
            .map_err(|e| e.to_string())?;
        let drift = canonical_drift(&student, base);
        parts.push(check(
            identical && drift <= 1e-6 && student.deformation == base.deformation,
            format!(
                "{name}: teacher renders bit-identical = {identical}, drift after {} steps {drift:.1e} <= 1e-6",
                log.records.len()
            ),
        ));
    }
    all(parts)
}

// ---------------------------------------------------------------------------
// seal color law

fn seal_color_law(fit: &Fit) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 10_000;
    for _ in 0..n {
        let base = [(); 3].map(|_| rng.random::<f64>());
        let stamp = [(); 3].map(|_| rng.random_range(0..=255u8) as f64 / 255.0);
        let out = seal_blend_hsl(base, stamp);
        if out[2] != rgb_to_hsl(base)[2] {
            return Err(format!("lightness changed for base {base:?} stamp {stamp:?}"));
        }
    }

    // through the teacher on the fitted field
    let anchor = sphere_top(&fit.scene);
    let mut opaque = transparent_seal(anchor);
    let mut clear = opaque.clone();
    if let ProxyShape::Seal(s) = &mut opaque.shape {
        s.stamp.rgba = vec![[230, 30, 60, 255], [40, 90, 250, 0]];
    }
    if let ProxyShape::Seal(s) = &mut clear.shape {
        s.stamp.rgba = vec![[230, 30, 60, 0], [40, 90, 250, 0]];
    }
    let base = &fit.checkpoint.field;
    let sealed = TeacherModel::new(base.clone(), opaque.clone());
    let unsealed = TeacherModel::new(base.clone(), clear);
    let (mut recolored, mut passed, mut worst) = (0, 0, 0.0f64);
    for _ in 0..n {
        let x = vec3::add(anchor, [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)]);
        let xf: [f32; 3] = vec3::from_f64(x);
        let d = [0.0f32, 0.0, -1.0];
        let b = base.query(xf, d, 0.0).map_err(|e| e.to_string())?;
        let s = sealed.query(xf, d, 0.0).map_err(|e| e.to_string())?;
        let c = unsealed.query(xf, d, 0.0).map_err(|e| e.to_string())?;
        if c.color.map(f32::to_bits) != b.color.map(f32::to_bits) {
            return Err(format!("transparent stamp changed the color at {x:?}"));
        }
        if s.color.map(f32::to_bits) != b.color.map(f32::to_bits) {
            recolored += 1;
            let ProxyShape::Seal(seal) = &opaque.shape else { unreachable!() };
            let hsl = seal.map_hsl(vec3::to_f64(xf), vec3::to_f64(b.color)).ok_or("recolored outside the patch")?;
            if hsl[2] != rgb_to_hsl(vec3::to_f64(b.color))[2] {
                return Err(format!("teacher lightness changed at {x:?}"));
            }
            worst = worst.max((rgb_to_hsl(vec3::to_f64(s.color))[2] - hsl[2]).abs());
        } else {
            passed += 1;
        }
    }
    check(
        recolored > 0 && worst < 1e-6,
        format!(
            "{n} random colors keep lightness exactly; teacher: {recolored} opaque in-region queries keep \
             lightness in HSL (f32 output within {worst:.1e}), {passed} others and all transparent-stamp \
             queries pass the base color through bit-exactly"
        ),
    )
}

// ---------------------------------------------------------------------------
// distillation loss oracle

fn loss_oracle(fit: &Fit) -> Outcome {
    let meta = scene_meta(fit);
    let base = &fit.checkpoint.field;
    let teacher = TeacherModel::new(base.clone(), brush_at(sphere_top(&fit.scene), 1.0, 0.45));
    let config = DistillConfig {
        steps: 1,
        batch_rays: 256,
        samples_per_ray: meta.n_samples,
        seed: 3,
        ..DistillConfig::default()
    };
    let mut d = Distiller::new(&teacher, teacher.fresh_student(), config, &meta).map_err(|e| e.to_string())?;
    let rays = d.rays(0).map_err(|e| e.to_string())?;
    let bg: [f32; 3] = vec3::from_f64(meta.background);
    let mut total = 0.0f64;
    for (ray, s) in &rays {
        let want = render_ray(&teacher, ray, s, 0.0f32, bg).map_err(|e| e.to_string())?.color;
        let got = render_ray(base, ray, s, 0.0f32, bg).map_err(|e| e.to_string())?.color;
        total += (0..3).map(|c| (got[c] as f64 - want[c] as f64).powi(2)).sum::<f64>();
    }
    let replay = total / rays.len() as f64;
    let logged = d.step().map_err(|e| e.to_string())?.loss;
    check(
        (logged - replay).abs() <= 1e-6 && replay > 0.0,
        format!("step-0 loss {logged:.9} vs replay {replay:.9}, |diff| {:.1e} <= 1e-6", (logged - replay).abs()),
    )
}

// ---------------------------------------------------------------------------
// determinism and round-trips

fn determinism(fit: &Fit) -> Outcome {
    let config = TrainConfig {
        total_steps: 25,
        ..TrainConfig::desk()
    };
    let run = || -> Result<Vec<u8>, String> {
        let pool = RayPool::new(&fit.scene.train, &fit.scene.info).map_err(|e| e.to_string())?;
        let mut t = Trainer::new(config.clone(), pool).map_err(|e| e.to_string())?;
        while !t.is_done() {
            t.step().map_err(|e| e.to_string())?;
        }
        Ok(t.checkpoint().to_bytes())
    };
    let (a, b) = (run()?, run()?);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("fit.sdnf");
    save_checkpoint(&fit.checkpoint, &path).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
    let ckpt_ok = loaded == fit.checkpoint && loaded.to_bytes() == fit.checkpoint.to_bytes();

    let data_dir = dir.path().join("toy");
    let mut data_ok = true;
    for split in Split::ALL {
        save_dataset(fit.scene.split(split), &data_dir).map_err(|e| e.to_string())?;
        data_ok &= &load_dataset(&data_dir, split).map_err(|e| e.to_string())? == fit.scene.split(split);
    }
    all(vec![
        check(a == b, format!("two seeded 25-step runs: {} checkpoint bytes identical", a.len())),
        check(ckpt_ok, "fitted checkpoint save/load bit-exact".into()),
        check(data_ok, "toy dataset save/load bit-exact for all splits".into()),
    ])
}

// ---------------------------------------------------------------------------

fn run(name: &'static str, filters: &[String], f: impl FnOnce() -> Outcome) -> Option<Report> {
    if !filters.is_empty() && !filters.iter().any(|s| name.contains(s.as_str())) {
        return None;
    }
    let started = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let report = Report {
        name,
        outcome,
        elapsed: started.elapsed(),
    };
    let (tag, text) = match &report.outcome {
        Ok(t) => ("PASS", t),
        Err(t) => ("FAIL", t),
    };
    println!("{tag} {} [{:.1} s]: {text}", report.name, report.elapsed.as_secs_f64());
    Some(report)
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut reports = Vec::new();
    reports.extend(run("gradient-correctness", &filters, gradient_correctness));
    reports.extend(run("rendering-oracle", &filters, rendering_oracle));

    let needs_fit = [
        "canonical-anchoring",
        "toy-fit",
        "frozen-propagation",
        "identity-edit",
        "seal-color-law",
        "loss-oracle",
        "determinism-round-trips",
    ];
    let wanted = |n: &str| filters.is_empty() || filters.iter().any(|s| n.contains(s.as_str()));
    if needs_fit.iter().any(|n| wanted(n)) {
        println!("fitting the toy scene with the desk preset ...");
        match fit_toy() {
            Ok(fit) => {
                reports.extend(run("canonical-anchoring", &filters, || canonical_anchoring(&fit.checkpoint.field)));
                reports.extend(run("toy-fit", &filters, || toy_fit(&fit)));
                reports.extend(run("frozen-propagation", &filters, || frozen_propagation(&fit)));
                reports.extend(run("identity-edit", &filters, || identity_edit(&fit)));
                reports.extend(run("seal-color-law", &filters, || seal_color_law(&fit)));
                reports.extend(run("loss-oracle", &filters, || loss_oracle(&fit)));
                reports.extend(run("determinism-round-trips", &filters, || determinism(&fit)));
            }
            Err(e) => {
                for n in needs_fit.into_iter().filter(|n| wanted(n)) {
                    println!("FAIL {n}: toy fit did not complete: {e}");
                    reports.push(Report {
                        name: n,
                        outcome: Err(e.clone()),
                        elapsed: Duration::ZERO,
                    });
                }
            }
        }
    }

    let failed = reports.iter().filter(|r| r.outcome.is_err()).count();
    println!(
        "acceptance: {} passed, {failed} failed ({} core(s))",
        reports.len() - failed,
        cores()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
