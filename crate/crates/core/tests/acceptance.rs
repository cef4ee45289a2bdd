//! End-to-end acceptance suite. Every test writes one
//! `criterion N: PASS|FAIL ...` line to stdout before asserting.

use std::io::Write as _;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use eepose::config::EvalConfig;
use eepose::features::{FeatureMap, Mask, SyntheticAppearance};
use eepose::geometry::{angular_distance, project};
use eepose::matching::{solve_pnp_ransac, FrameParams, Match2D3D, RansacParams};
use eepose::metrics::{add_error, adds_error, auc, EvalRecord};
use eepose::optimizer::{jacobian_2d, jacobian_3d, residual_2d, residual_3d, retract};
use eepose::pipeline::{
    align_records, count_mode_flips, estimate_all, evaluate, is_mode_flipped, read_estimates,
    run_sequence, run_with_estimates, write_estimates, EstimateRecord, FrameInput, FrameOutput,
    TrackerConfig, Variant,
};
use eepose::synth::models::{load_model, save_model};
use eepose::synth::{
    default_intrinsics, generate_with_appearance, save_sequence, SceneConfig, SceneFile,
    SequenceManifest, SynthFrame, TrajectoryParams,
};
use eepose::templates::{TemplateParams, TemplateSet};
use eepose::temporal::{select_keyframes, MemoryPool, PoolEntry};
use eepose::view_sampling::DepthMap;
use eepose::{CameraIntrinsics, Point2, Point3, Pose, Rotation, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const N_FRAMES: usize = 30;

/// Serializes compute-bound tests around the runtime measurement.
static HEAVY: Mutex<()> = Mutex::new(());

fn report(n: u32, pass: bool, detail: &str) {
    let line = format!(
        "criterion {n}: {}  {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    // bypasses libtest output capture so the line is always visible
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-3 {
            if let Some(r) = Rotation::from_quaternion(q[0] / n, q[1] / n, q[2] / n, q[3] / n) {
                return r;
            }
        }
    }
}

fn translation_error(a: &Pose, b: &Pose) -> f64 {
    (a.translation - b.translation).norm()
}

/// 320×240 camera, twice the default resolution.
fn bench_intrinsics() -> CameraIntrinsics {
    let k = default_intrinsics();
    CameraIntrinsics::new(
        2.0 * k.fx,
        2.0 * k.fy,
        2.0 * k.cx + 0.5,
        2.0 * k.cy + 0.5,
        2 * k.width,
        2 * k.height,
    )
    .unwrap()
}

fn bench_templates() -> TemplateParams {
    TemplateParams {
        n_inplane: 1,
        resolution: 192,
        feature_stride: 1,
        bow_k: 128,
        ..TemplateParams::default()
    }
}

fn bench_scene(model: &str, symmetric: bool, noise: f64, outliers: f64, seed: u64) -> SceneConfig {
    SceneFile {
        model: model.into(),
        seed,
        noise_sigma: noise,
        outlier_fraction: outliers,
        symmetry_axis: symmetric.then_some([0.0, 0.0, 1.0]),
        intrinsics: bench_intrinsics(),
        trajectory: TrajectoryParams {
            n_frames: N_FRAMES,
            ..TrajectoryParams::default()
        },
        ..SceneFile::default()
    }
    .to_config(Path::new("."))
    .unwrap()
}

fn inputs<'a>(frames: &'a [SynthFrame], k: &'a CameraIntrinsics) -> Vec<FrameInput<'a>> {
    frames
        .iter()
        .map(|f| FrameInput::from_synth(f, k))
        .collect()
}

fn add_auc(outputs: &[FrameOutput], frames: &[SynthFrame], model: &[Point3]) -> (f64, f64) {
    let records: Vec<EstimateRecord> = outputs.iter().map(|o| o.record.clone()).collect();
    let gt: Vec<(u64, Pose)> = frames.iter().map(|f| (f.id, f.gt_camera_pose)).collect();
    let e = evaluate(
        &align_records(&records, &gt, true).unwrap(),
        model,
        &EvalConfig::default(),
    )
    .unwrap();
    (e.summary.add_auc, e.summary.adds_auc)
}

#[test]
fn criterion_01_noiseless_end_to_end() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let scene = bench_scene("l_shape", false, 0.0, 0.0, 0);
    let app = Arc::new(SyntheticAppearance::new(&scene.model, &scene.appearance).unwrap());
    let frames = generate_with_appearance(&scene, &app).unwrap();
    let set = TemplateSet::build_synthetic(&scene.model, app, &bench_templates()).unwrap();
    let out = run_sequence(
        &set,
        TrackerConfig::default(),
        &inputs(&frames, &scene.intrinsics),
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();

    let good = out
        .iter()
        .zip(&frames)
        .filter(|(o, f)| {
            angular_distance(&o.record.pose, &f.gt_camera_pose).to_degrees() < 0.2
                && translation_error(&o.record.pose, &f.gt_camera_pose) < 1e-3
        })
        .count();
    let share = good as f64 / frames.len() as f64;
    report(
        1,
        share >= 0.95 && secs < 60.0,
        &format!(
            "{good}/{} frames within 0.2 deg / 1 mm (need 95%), {secs:.1} s (need < 60 s)",
            frames.len()
        ),
    );
}

/// One noisy symmetric sequence scored under every configuration of interest.
struct SeedResult {
    /// ADD AUC of variants A to D at the default keyframe count.
    variant_auc: [f64; 4],
    variant_adds_auc: [f64; 4],
    /// Mode changes of variant C.
    c_flips: usize,
    /// Variant D ADD AUC with K_f = 2, 8, 16.
    kf_auc: [f64; 3],
    /// Disambiguation residuals (degrees) of variant D, one per disambiguated frame.
    d_residuals: Vec<f64>,
}

fn symmetric_benchmark() -> &'static [SeedResult] {
    static CELL: OnceLock<Vec<SeedResult>> = OnceLock::new();
    CELL.get_or_init(|| {
        let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
        let base = bench_scene("gripper", true, 0.2, 0.1, 0);
        let app = Arc::new(SyntheticAppearance::new(&base.model, &base.appearance).unwrap());
        let half_turn = Rotation::rz(std::f64::consts::PI);
        SEEDS
            .iter()
            .map(|&seed| {
                let scene = bench_scene("gripper", true, 0.2, 0.1, seed);
                let set = TemplateSet::build_synthetic(
                    &scene.model,
                    app.clone(),
                    &TemplateParams {
                        seed,
                        ..bench_templates()
                    },
                )
                .unwrap();
                let frames = generate_with_appearance(&scene, &app).unwrap();
                let input = inputs(&frames, &scene.intrinsics);
                let cfg = TrackerConfig {
                    frame: FrameParams {
                        seed,
                        ..FrameParams::default()
                    },
                    ..TrackerConfig::default()
                };
                let estimates = estimate_all(&input, &set, &cfg.frame);
                let run = |variant, k_f| {
                    run_with_estimates(
                        &set,
                        TrackerConfig {
                            variant,
                            k_f,
                            ..cfg
                        },
                        &input,
                        &estimates,
                    )
                    .unwrap()
                };

                let mut variant_auc = [0.0; 4];
                let mut variant_adds_auc = [0.0; 4];
                let mut c_flips = 0;
                let mut d_residuals = Vec::new();
                for (i, &v) in Variant::ALL.iter().enumerate() {
                    let out = run(v, cfg.k_f);
                    (variant_auc[i], variant_adds_auc[i]) = add_auc(&out, &frames, &scene.model);
                    if v == Variant::C {
                        let flipped: Vec<bool> = out
                            .iter()
                            .zip(&frames)
                            .map(|(o, f)| {
                                is_mode_flipped(&o.record.pose, &f.gt_camera_pose, &half_turn)
                            })
                            .collect();
                        c_flips = count_mode_flips(&flipped);
                    }
                    if v == Variant::D {
                        d_residuals = out
                            .iter()
                            .filter_map(|o| o.disambiguation.map(|d| d.residual.to_degrees()))
                            .collect();
                    }
                }
                let kf_auc =
                    [2, 8, 16].map(|k| add_auc(&run(Variant::D, k), &frames, &scene.model).0);
                SeedResult {
                    variant_auc,
                    variant_adds_auc,
                    c_flips,
                    kf_auc,
                    d_residuals,
                }
            })
            .collect()
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

#[test]
fn criterion_02_ablation_ordering() {
    let runs = symmetric_benchmark();
    let avg: Vec<f64> = (0..4)
        .map(|i| mean(runs.iter().map(|r| r.variant_auc[i])))
        .collect();
    let (a, b, c, d) = (avg[0], avg[1], avg[2], avg[3]);
    let pass = d >= c && c >= b && b >= a && d - a >= 20.0;
    report(
        2,
        pass,
        &format!(
            "mean ADD AUC over {} seeds: A {a:.2}, B {b:.2}, C {c:.2}, D {d:.2} (need D >= C >= B >= A, D - A >= 20)",
            runs.len()
        ),
    );
}

#[test]
fn criterion_03_keyframe_count_trend() {
    let runs = symmetric_benchmark();
    let avg: Vec<f64> = (0..3)
        .map(|i| mean(runs.iter().map(|r| r.kf_auc[i])))
        .collect();
    let (k2, k8, k16) = (avg[0], avg[1], avg[2]);
    let pass = k8 - k2 >= 1.0 && k16 - k8 <= 2.0;
    report(
        3,
        pass,
        &format!(
            "mean ADD AUC K_f=2 {k2:.2}, K_f=8 {k8:.2}, K_f=16 {k16:.2} (need 8-2 >= 1, 16-8 <= 2)"
        ),
    );
}

fn pnp_case(
    rng: &mut ChaCha8Rng,
    k: &CameraIntrinsics,
    n_inliers: usize,
    n_outliers: usize,
) -> (Pose, Vec<Match2D3D>) {
    let rotation = random_rotation(rng);
    let translation = Vec3::new(
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
        rng.random_range(0.4..1.0),
    );
    let pose = Pose::new(rotation, translation);
    let mut matches = Vec::new();
    while matches.len() < n_inliers {
        let x = Vec3::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
        );
        let u = project(k, pose.transform_point(x)).unwrap();
        matches.push(Match2D3D {
            u,
            x,
            similarity: 1.0,
        });
    }
    for _ in 0..n_outliers {
        let x = Vec3::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
        );
        let u = Point2::new(
            rng.random_range(0.0..k.width as f64),
            rng.random_range(0.0..k.height as f64),
        );
        matches.push(Match2D3D {
            u,
            x,
            similarity: 1.0,
        });
    }
    (pose, matches)
}

#[test]
fn criterion_04_pnp_oracle() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let k = CameraIntrinsics::new(500.0, 500.0, 319.5, 239.5, 640, 480).unwrap();
    let params = RansacParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut clean_ok = 0;
    let mut noisy_ok = 0;
    for i in 0..200u64 {
        let (pose, matches) = pnp_case(&mut rng, &k, 12, 0);
        let c = solve_pnp_ransac(&matches, &k, &params, i).unwrap();
        if angular_distance(&c.pose, &pose) < 1e-3 && translation_error(&c.pose, &pose) < 1e-4 {
            clean_ok += 1;
        }
        // 30% of 40 matches are outliers
        let (pose, matches) = pnp_case(&mut rng, &k, 28, 12);
        if let Ok(c) = solve_pnp_ransac(&matches, &k, &params, i) {
            if angular_distance(&c.pose, &pose).to_degrees() < 0.5
                && translation_error(&c.pose, &pose) < 2e-3
            {
                noisy_ok += 1;
            }
        }
    }
    report(
        4,
        clean_ok == 200 && noisy_ok >= 196,
        &format!("noiseless {clean_ok}/200 (need 200), 30% outliers {noisy_ok}/200 (need >= 196)"),
    );
}

fn relative_error(analytic: &[[f64; 6]], numeric: &[[f64; 6]]) -> f64 {
    let (mut diff, mut norm) = (0.0, 0.0);
    for (a, n) in analytic.iter().zip(numeric) {
        for (x, y) in a.iter().zip(n) {
            diff += (x - y) * (x - y);
            norm += y * y;
        }
    }
    diff.sqrt() / norm.sqrt().max(1e-12)
}

fn central_difference<const R: usize>(pose: &Pose, f: impl Fn(&Pose) -> [f64; R]) -> [[f64; 6]; R] {
    let h = 1e-6;
    let mut jac = [[0.0; 6]; R];
    for c in 0..6 {
        let mut xi = [0.0; 6];
        xi[c] = h;
        let plus = f(&retract(pose, &xi));
        xi[c] = -h;
        let minus = f(&retract(pose, &xi));
        for r in 0..R {
            jac[r][c] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    jac
}

#[test]
fn criterion_05_jacobian_check() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 1000 {
        let pose = Pose::new(
            random_rotation(&mut rng),
            Vec3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                0.6,
            ),
        );
        let delta = Pose::new(
            Rotation::from_rotation_vector(Vec3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            )),
            Vec3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            ),
        );
        let x = Vec3::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
        );
        let u = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        let depth = rng.random_range(0.3..0.9);
        let Some(j2) = jacobian_2d(&pose, &delta, x, &k) else {
            continue;
        };
        let n2 = central_difference(&pose, |p| residual_2d(p, &delta, x, u, &k).unwrap());
        let j3 = jacobian_3d(&pose, &delta, x);
        let n3 = central_difference(&pose, |p| residual_3d(p, &delta, x, u, depth, &k).unwrap());
        worst = worst
            .max(relative_error(&j2, &n2))
            .max(relative_error(&j3, &n3));
        checked += 1;
    }
    report(
        5,
        worst < 1e-5,
        &format!("max relative error {worst:.2e} over {checked} configurations (need < 1e-5)"),
    );
}

#[test]
fn criterion_06_pool_invariant() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let theta = 10f64.to_radians();
    let mut pool = MemoryPool::new(theta, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut pose = Pose::identity();
    for i in 0..10_000u64 {
        let step = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ) * 0.08;
        pose = Pose::from_rotation(Rotation::from_rotation_vector(step)).compose(&pose);
        pool.try_insert(PoolEntry::from_pose(i, pose, pose));
    }
    let e = pool.entries();
    let mut min_pair = f64::INFINITY;
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            min_pair = min_pair.min(angular_distance(&e[i].working_pose, &e[j].working_pose));
        }
    }
    let pass = min_pair > theta && e.len() <= pool.capacity;
    report(
        6,
        pass,
        &format!(
            "pool size {} (cap {}), min pairwise distance {:.3} deg (need > 10)",
            e.len(),
            pool.capacity,
            min_pair.to_degrees()
        ),
    );
}

/// Smallest pairwise rotation distance among `poses`.
fn dispersion(poses: &[Pose]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..poses.len() {
        for j in i + 1..poses.len() {
            m = m.min(angular_distance(&poses[i], &poses[j]));
        }
    }
    m
}

fn best_subset(pool: &[Pose], start: &Pose, k: usize, from: usize, chosen: &mut Vec<Pose>) -> f64 {
    if chosen.len() == k {
        let mut with_start = chosen.clone();
        with_start.push(*start);
        return dispersion(&with_start);
    }
    let mut best = f64::NEG_INFINITY;
    for i in from..pool.len() {
        chosen.push(pool[i]);
        best = best.max(best_subset(pool, start, k, i + 1, chosen));
        chosen.pop();
    }
    best
}

#[test]
fn criterion_07_fps_oracle() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_ratio = f64::INFINITY;
    let mut cases = 0;
    for _ in 0..100 {
        let size = rng.random_range(2..=6usize);
        let mut pool = MemoryPool::new(0.0, 64);
        for i in 0..size {
            pool.try_insert(PoolEntry::from_pose(
                i as u64,
                Pose::from_rotation(random_rotation(&mut rng)),
                Pose::identity(),
            ));
        }
        let poses: Vec<Pose> = pool.entries().iter().map(|e| e.working_pose).collect();
        let start = Pose::from_rotation(random_rotation(&mut rng));
        for k_f in 1..=3usize.min(poses.len()) {
            let mut greedy: Vec<Pose> = select_keyframes(&pool, &start, k_f)
                .iter()
                .map(|e| e.working_pose)
                .collect();
            greedy.push(start);
            let optimum = best_subset(&poses, &start, k_f, 0, &mut Vec::new());
            worst_ratio = worst_ratio.min(dispersion(&greedy) / optimum);
            cases += 1;
        }
    }
    report(
        7,
        worst_ratio >= 0.5,
        &format!(
            "worst greedy / optimum dispersion {worst_ratio:.3} over {cases} cases (need >= 0.5)"
        ),
    );
}

#[test]
fn criterion_08_symmetry_disambiguation() {
    let runs = symmetric_benchmark();
    let residuals: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.d_residuals.iter().copied())
        .collect();
    let consistent = residuals.iter().filter(|&&r| r < 15.0).count();
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    let seeds_with_flip = runs.iter().filter(|r| r.c_flips >= 1).count();
    let flips: Vec<usize> = runs.iter().map(|r| r.c_flips).collect();
    let pass = !residuals.is_empty() && consistent == residuals.len() && seeds_with_flip >= 4;
    report(
        8,
        pass,
        &format!(
            "D: {consistent}/{} disambiguated frames below 15 deg (worst {worst:.2}); C flips per seed {flips:?} (need >= 1 on 4 of 5)",
            residuals.len()
        ),
    );
}

#[test]
fn criterion_09_metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut adds_le_add = true;
    for _ in 0..10_000 {
        let model: Vec<Point3> = (0..rng.random_range(1..20))
            .map(|_| {
                Vec3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                )
            })
            .collect();
        let gt = Pose::new(random_rotation(&mut rng), Vec3::new(0.0, 0.0, 0.5));
        let est = Pose::new(
            random_rotation(&mut rng),
            Vec3::new(rng.random_range(-0.02..0.02), 0.0, 0.5),
        );
        adds_le_add &=
            adds_error(&est, &gt, &model).unwrap() <= add_error(&est, &gt, &model).unwrap();
    }

    let zeros = auc(&[0.0; 10], 0.01, 1000).unwrap().auc;
    let beyond = auc(&[0.011, 0.5, 3.0], 0.01, 1000).unwrap().auc;

    // record sets: random perturbations of a sequence, plus the symmetric benchmark
    let model = eepose::synth::models::gripper();
    let mut adds_auc_ge = true;
    for set in 0..50 {
        let sigma = 0.002 * (set % 10 + 1) as f64;
        let records: Vec<EvalRecord> = (0..20u64)
            .map(|id| {
                let gt = Pose::new(random_rotation(&mut rng), Vec3::new(0.0, 0.0, 0.5));
                let noise = Vec3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                let turn = Rotation::from_rotation_vector(noise * (sigma * 5.0));
                let est = Pose::new(turn.compose(&gt.rotation), gt.translation + noise * sigma);
                EvalRecord {
                    frame_id: id,
                    estimated: est,
                    ground_truth: gt,
                }
            })
            .collect();
        let e = evaluate(&records, &model, &EvalConfig::default()).unwrap();
        adds_auc_ge &= e.summary.adds_auc >= e.summary.add_auc;
    }
    let bench_ge = symmetric_benchmark().iter().all(|r| {
        r.variant_adds_auc
            .iter()
            .zip(&r.variant_auc)
            .all(|(s, a)| s >= a)
    });

    let pass = adds_le_add && zeros == 100.0 && beyond == 0.0 && adds_auc_ge && bench_ge;
    report(
        9,
        pass,
        &format!(
            "adds <= add on 10000 cases: {adds_le_add}; AUC(zero errors) {zeros}; AUC(errors > threshold) {beyond}; \
             AUC(ADD-S) >= AUC(ADD) on random sets: {adds_auc_ge}, on benchmark sets: {bench_ge}"
        ),
    );
}

fn small_pipeline(dir: &Path, name: &str) -> Vec<u8> {
    let scene = SceneFile {
        seed: 11,
        noise_sigma: 0.2,
        outlier_fraction: 0.1,
        symmetry_axis: Some([0.0, 0.0, 1.0]),
        trajectory: TrajectoryParams {
            n_frames: 8,
            ..TrajectoryParams::default()
        },
        ..SceneFile::default()
    }
    .to_config(Path::new("."))
    .unwrap();
    let app = Arc::new(SyntheticAppearance::new(&scene.model, &scene.appearance).unwrap());
    let frames = generate_with_appearance(&scene, &app).unwrap();
    let params = TemplateParams {
        n_sphere: 24,
        n_inplane: 1,
        resolution: 64,
        feature_stride: 1,
        bow_k: 32,
        seed: 11,
        ..TemplateParams::default()
    };
    let set = TemplateSet::build_synthetic(&scene.model, app, &params).unwrap();
    let cfg = TrackerConfig {
        frame: FrameParams {
            seed: 11,
            ..FrameParams::default()
        },
        ..TrackerConfig::default()
    };
    let out = run_sequence(&set, cfg, &inputs(&frames, &scene.intrinsics)).unwrap();
    let records: Vec<EstimateRecord> = out.into_iter().map(|o| o.record).collect();
    let path = dir.join(name);
    write_estimates(&path, &records).unwrap();
    assert_eq!(read_estimates(&path).unwrap(), records);
    std::fs::read(path).unwrap()
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_10_determinism_and_io() {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let first = small_pipeline(dir, "a.jsonl");
    let second = small_pipeline(dir, "b.jsonl");
    let rerun_identical = first == second;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut fm = FeatureMap::zeros(5, 7, 9, 3);
    fm.data
        .iter_mut()
        .for_each(|v| *v = rng.sample::<f32, _>(StandardNormal));
    fm.data[0] = -0.0;
    fm.data[1] = f32::MIN_POSITIVE / 4.0;
    fm.save(&dir.join("f.fmap")).unwrap();
    let fm_back = FeatureMap::load(&dir.join("f.fmap")).unwrap();
    let fmap_ok = fm_back
        .data
        .iter()
        .zip(&fm.data)
        .all(|(a, b)| a.to_bits() == b.to_bits())
        && (fm_back.height, fm_back.width, fm_back.dim, fm_back.stride)
            == (fm.height, fm.width, fm.dim, fm.stride);

    let mask = Mask {
        height: 4,
        width: 6,
        data: (0..24).map(|i| if i % 3 == 0 { 255 } else { 0 }).collect(),
    };
    mask.save(&dir.join("m.mask")).unwrap();
    let mask_ok = Mask::load(&dir.join("m.mask")).unwrap() == mask;

    let mut depth = DepthMap::new(6, 8);
    depth.data.iter_mut().enumerate().for_each(|(i, v)| {
        *v = if i % 5 == 0 {
            0.0
        } else {
            rng.random_range(0.2f32..1.5)
        }
    });
    depth.save(&dir.join("d.dmap")).unwrap();
    let depth_back = DepthMap::load(&dir.join("d.dmap")).unwrap();
    let depth_ok = depth_back
        .data
        .iter()
        .zip(&depth.data)
        .all(|(a, b)| a.to_bits() == b.to_bits());

    let model: Vec<Point3> = (0..50)
        .map(|_| {
            Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            )
        })
        .collect();
    save_model(&dir.join("model.txt"), &model).unwrap();
    let model_back = load_model(&dir.join("model.txt")).unwrap();
    let model_ok = model_back.len() == model.len()
        && model_back
            .iter()
            .zip(&model)
            .all(|(a, b)| a.to_array().map(f64::to_bits) == b.to_array().map(f64::to_bits));

    let scene = SceneFile {
        trajectory: TrajectoryParams {
            n_frames: 3,
            ..TrajectoryParams::default()
        },
        ..SceneFile::default()
    }
    .to_config(Path::new("."))
    .unwrap();
    let app = Arc::new(SyntheticAppearance::new(&scene.model, &scene.appearance).unwrap());
    let frames = generate_with_appearance(&scene, &app).unwrap();
    let manifest = save_sequence(&dir.join("seq"), &scene, &frames).unwrap();
    let reloaded = SequenceManifest::load(&dir.join("seq").join("manifest.json")).unwrap();
    let seq_ok = reloaded == manifest
        && (0..frames.len()).all(|i| {
            manifest
                .load_frame(&dir.join("seq"), i)
                .map(|f| f == frames[i])
                .unwrap_or(false)
        });

    let params = TemplateParams {
        n_sphere: 6,
        n_inplane: 2,
        resolution: 48,
        feature_stride: 2,
        bow_k: 16,
        ..TemplateParams::default()
    };
    let set = TemplateSet::build_synthetic(&scene.model, app, &params).unwrap();
    set.save(&dir.join("t1")).unwrap();
    let loaded = TemplateSet::load(&dir.join("t1")).unwrap();
    loaded.save(&dir.join("t2")).unwrap();
    let store_ok = tree_bytes(&dir.join("t1")) == tree_bytes(&dir.join("t2"))
        && loaded.vocabulary == set.vocabulary;

    let pass = rerun_identical && fmap_ok && mask_ok && depth_ok && model_ok && seq_ok && store_ok;
    report(
        10,
        pass,
        &format!(
            "rerun byte-identical: {rerun_identical}; round trips: features {fmap_ok}, mask {mask_ok}, depth {depth_ok}, \
             model {model_ok}, sequence {seq_ok}, template store {store_ok}"
        ),
    );
}
