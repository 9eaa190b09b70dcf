//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and a
//! summary line. The run reports rather than gates: a failing criterion is
//! printed as FAIL but does not change the exit status.

use meshforge::body_model::rotation::axis_angle_from_matrix;
use meshforge::body_model::{procedural_template, rodrigues, skin, BodyPose, BodyShape, BodyTemplate, Detail};
use meshforge::cloth_sim::{
    build_garment, drape, force_jacobians, internal_forces, step, Capsule, CapsuleSet, ClothState, GarmentPattern,
    SimConfig,
};
use meshforge::metrics::{mpvpe, mrsv, mrvpv, pa_mpjpe, procrustes_align, Norm};
use meshforge::pose_sequence::{
    distance_matrix, interpolate, random_pose, select_contrast_pair, synthetic_sequence, write_sequence,
    DistanceMatrix,
};
use meshforge::recover_net::{
    dataset_mean_phi, evaluate_clips, grad_check, grad_check_with, prepare_clips, train_clips, ModelConfig,
    ModelParams, TrainConfig,
};
use meshforge::scene_gen::{generate_sequence, import_dataset, SceneConfig, SequenceAnnotation, Viewpoint};
use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn vec3(rng: &mut ChaCha8Rng, r: f64) -> Vector3<f64> {
    Vector3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r))
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q = loop {
        let v = Vector4::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() > 1e-3 && v.norm() <= 1.0 {
            break v.normalize();
        }
    };
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(q)).to_rotation_matrix().into_inner()
}

fn centered(p: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let c = p.iter().sum::<Vector3<f64>>() / p.len() as f64;
    p.iter().map(|x| x - c).collect()
}

/// Sum of squared distances after the best scale and translation for a fixed rotation.
fn ssd_given_rotation(pred: &[Vector3<f64>], gt: &[Vector3<f64>], r: &Matrix3<f64>) -> f64 {
    let (p, g) = (centered(pred), centered(gt));
    let rp: Vec<_> = p.iter().map(|x| r * x).collect();
    let num: f64 = rp.iter().zip(&g).map(|(a, b)| a.dot(b)).sum();
    let den: f64 = rp.iter().map(|a| a.norm_squared()).sum();
    let s = (num / den).max(0.0);
    rp.iter().zip(&g).map(|(a, b)| (a * s - b).norm_squared()).sum()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_margin = f64::INFINITY;
    let mut worst_exact: f64 = 0.0;
    for _ in 0..200 {
        let gt: Vec<_> = (0..14).map(|_| vec3(&mut rng, 0.8)).collect();
        let pred: Vec<_> = gt.iter().map(|p| p * 0.9 + vec3(&mut rng, 0.1) + Vector3::new(0.3, -0.2, 1.0)).collect();
        let sim = procrustes_align(&pred, &gt).map_err(|e| e.to_string())?;
        let ours: f64 = sim.aligned.iter().zip(&gt).map(|(a, b)| (a - b).norm_squared()).sum();
        let best_random = (0..10_000)
            .map(|_| ssd_given_rotation(&pred, &gt, &random_rotation(&mut rng)))
            .fold(f64::INFINITY, f64::min);
        worst_margin = worst_margin.min(best_random - ours);

        let (s, r, t) = (rng.gen_range(0.5..2.0), random_rotation(&mut rng), vec3(&mut rng, 2.0));
        let moved: Vec<_> = gt.iter().map(|p| r * p * s + t).collect();
        worst_exact = worst_exact.max(pa_mpjpe(&[moved], &[gt.clone()]).map_err(|e| e.to_string())?);
    }
    check(
        worst_margin >= 0.0 && worst_exact < 1e-9,
        format!("min(random SSD - Procrustes SSD) = {worst_margin:.3e}, exact-similarity error {worst_exact:.1e}"),
    )
}

fn metric_micro_cases() -> Outcome {
    let tol = 1e-12;
    let mut errs = Vec::new();
    let one = vec![vec![Vector3::zeros()], vec![Vector3::new(1.0, 1.0, 0.0)]];
    errs.push((mrvpv(&one, Norm::L1).unwrap() - 1.0).abs());
    errs.push((mrvpv(&one, Norm::L2).unwrap() - 2f64.sqrt() / 2.0).abs());
    let mut e1 = [0.0; 10];
    e1[0] = 1.0;
    let betas = [[0.0; 10], e1];
    errs.push((mrsv(&betas, Norm::L1).unwrap() - 0.5).abs());
    errs.push((mrsv(&betas, Norm::L2).unwrap() - 0.5).abs());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gt: Vec<Vec<_>> = (0..3).map(|_| (0..40).map(|_| vec3(&mut rng, 1.0)).collect()).collect();
    let shifted: Vec<Vec<_>> = gt.iter().map(|f| f.iter().map(|p| p + Vector3::x()).collect()).collect();
    errs.push(mpvpe(&gt, &gt, true).unwrap());
    errs.push((mpvpe(&shifted, &gt, true).unwrap() - 1.0).abs());
    errs.push((mpvpe(&shifted, &gt, false).unwrap() - 40.0).abs() / 40.0);
    let worst = errs.iter().copied().fold(0.0, f64::max);
    let frame = gt[0].clone();
    let still = vec![frame; 6];
    let static_zero = mrvpv(&still, Norm::L1).unwrap() == 0.0
        && mrvpv(&still, Norm::L2).unwrap() == 0.0
        && mrsv(&[[0.4; 10]; 6], Norm::L1).unwrap() == 0.0
        && mrsv(&[[0.4; 10]; 6], Norm::L2).unwrap() == 0.0;
    check(worst < tol && static_zero, format!("max micro-case error {worst:.1e}, static variation exactly zero: {static_zero}"))
}

fn perturbed_cloth(rng: &mut ChaCha8Rng) -> ClothState {
    let mut s = build_garment(&GarmentPattern::pinned_square(5, 0.1, Vector3::new(0.0, 0.0, 1.0))).unwrap();
    for p in &mut s.positions {
        *p += vec3(rng, 0.03);
    }
    s
}

fn cloth_forces() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut grad_err, mut jac_err, mut sum_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..50 {
        let s = perturbed_cloth(&mut rng);
        let (f, _) = internal_forces(&s).map_err(|e| e.to_string())?;
        let h = 1e-6;
        for p in 0..s.particle_count() {
            for c in 0..3 {
                let energy = |d: f64| {
                    let mut t = s.clone();
                    t.positions[p][c] += d;
                    internal_forces(&t).unwrap().1
                };
                let fd = -(energy(h) - energy(-h)) / (2.0 * h);
                grad_err = grad_err.max((f[p][c] - fd).abs() / f[p][c].abs().max(1.0));
            }
        }

        let jac = force_jacobians(&s).map_err(|e| e.to_string())?;
        let dir: Vec<_> = (0..s.particle_count()).map(|_| vec3(&mut rng, 1.0)).collect();
        let shifted = |sign: f64| {
            let mut t = s.clone();
            for (p, d) in t.positions.iter_mut().zip(&dir) {
                *p += d * (sign * 1e-6);
            }
            internal_forces(&t).unwrap().0
        };
        let (fp, fm) = (shifted(1.0), shifted(-1.0));
        let predicted = jac.apply_dx(&dir);
        let num: f64 = (0..dir.len()).map(|p| ((fp[p] - fm[p]) / 2e-6 - predicted[p]).norm_squared()).sum();
        let den: f64 = predicted.iter().map(|v| v.norm_squared()).sum();
        jac_err = jac_err.max((num / den).sqrt());

        let mut moving = s.clone();
        for v in &mut moving.velocities {
            *v = vec3(&mut rng, 1.0);
        }
        let (f, _) = internal_forces(&moving).map_err(|e| e.to_string())?;
        sum_err = sum_err.max(f.iter().sum::<Vector3<f64>>().norm());
    }
    check(
        grad_err < 1e-5 && jac_err < 1e-4 && sum_err < 1e-9,
        format!("force vs energy gradient {grad_err:.1e}, Jacobian directional {jac_err:.1e}, net force {sum_err:.1e}"),
    )
}

fn explicit_euler_step(s: &mut ClothState, cfg: &SimConfig) {
    let (f, _) = internal_forces(s).unwrap();
    let pinned = s.is_pinned();
    for i in 0..s.particle_count() {
        if pinned[i] {
            continue;
        }
        let a = f[i] / s.masses[i] + cfg.gravity - s.velocities[i] * s.global_damping;
        s.positions[i] += s.velocities[i] * cfg.timestep;
        s.velocities[i] += a * cfg.timestep;
    }
}

fn cloth_stability() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    pool.install(|| {
        let start = Instant::now();
        let square = || build_garment(&GarmentPattern::pinned_square(20, 0.05, Vector3::new(0.0, 0.0, 1.0))).unwrap();
        let mut s = square();
        let out = drape(&mut s, &CapsuleSet::default(), &SimConfig::default(), 10.0).map_err(|e| e.to_string())?;

        let coarse = SimConfig { timestep: 1.0 / 30.0, ..SimConfig::default() };
        let (mut implicit, mut explicit) = (square(), square());
        let mut explicit_diverged = false;
        for _ in 0..120 {
            step(&mut implicit, &CapsuleSet::default(), &coarse).map_err(|e| e.to_string())?;
            if !explicit_diverged {
                explicit_euler_step(&mut explicit, &coarse);
                explicit_diverged = !(explicit.max_speed() < 1e3);
            }
        }
        let implicit_finite = implicit.positions.iter().chain(&implicit.velocities).all(|p| p.iter().all(|c| c.is_finite()));

        let cfg = SimConfig::default();
        let mut sheet = build_garment(&GarmentPattern::pinned_square(16, 0.04, Vector3::new(0.0, 0.0, 0.3))).unwrap();
        sheet.pins.clear();
        let capsule = CapsuleSet {
            capsules: vec![Capsule::new(Vector3::new(-0.5, 0.0, 0.0), Vector3::new(0.5, 0.0, 0.0), 0.15).unwrap()],
        };
        let mut penetrations = 0;
        for _ in 0..180 {
            step(&mut sheet, &capsule, &cfg).map_err(|e| e.to_string())?;
        }
        for p in &sheet.positions {
            if capsule.min_signed_distance(p) < -(cfg.collision_epsilon + 1e-9) {
                penetrations += 1;
            }
        }
        let elapsed = start.elapsed();
        check(
            out.converged && out.max_speed < 1e-4 && implicit_finite && explicit_diverged && penetrations == 0 && elapsed < Duration::from_secs(60),
            format!(
                "drape settled at {:.2} s (max speed {:.1e}); h=1/30 implicit finite {implicit_finite}, explicit diverged {explicit_diverged}; {penetrations} penetrations; {:.1} s",
                out.simulated_seconds,
                out.max_speed,
                elapsed.as_secs_f64()
            ),
        )
    })
}

fn body_model() -> Outcome {
    let t = procedural_template(Detail::Medium);
    let shape = BodyShape::default();
    let rest = skin(&t, &shape, &BodyPose::zero(t.joint_count())).map_err(|e| e.to_string())?;
    let fixed = rest.vertices == t.rest_vertices;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut equi: f64 = 0.0;
    for _ in 0..20 {
        let pose = random_pose(&mut rng, std::f64::consts::PI);
        let base = pose.with_root_rotation(Vector3::zeros());
        let r = random_rotation(&mut rng);
        let rotated = base.with_root_rotation(axis_angle_from_matrix(&r));
        let shape = BodyShape::new(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
        let a = skin(&t, &shape, &base).map_err(|e| e.to_string())?;
        let b = skin(&t, &shape, &rotated).map_err(|e| e.to_string())?;
        for (p, q) in a.vertices.iter().zip(&b.vertices) {
            equi = equi.max((r * p - q).norm());
        }
    }
    let mut ortho: f64 = 0.0;
    for _ in 0..1000 {
        let w = vec3(&mut rng, 4.0);
        let r = rodrigues(&w);
        ortho = ortho.max((r.transpose() * r - Matrix3::identity()).abs().max()).max((r.determinant() - 1.0).abs());
    }
    check(
        fixed && equi < 1e-9 && ortho < 1e-10,
        format!("rest pose bit-exact {fixed}; root equivariance {equi:.1e}; rodrigues orthonormality {ortho:.1e}"),
    )
}

fn interpolation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut endpoints = true;
    let mut midpoint = true;
    for k in 2..40 {
        let (a, b) = (random_pose(&mut rng, 3.0), random_pose(&mut rng, 3.0));
        let frames = interpolate(&a, &b, k).map_err(|e| e.to_string())?;
        endpoints &= frames[0] == a && frames[k - 1] == b;
        if k == 3 {
            let mid: Vec<f64> = a.theta().iter().zip(b.theta()).map(|(x, y)| x + 0.5 * (y - x)).collect();
            midpoint &= frames[1].theta() == mid;
        }
    }
    let mut matrices: Vec<DistanceMatrix> = Vec::new();
    for n in 1..30 {
        let (r, c) = (1 + n % 7, 1 + (n * 3) % 11);
        // coarse values force ties
        matrices.push(DistanceMatrix::from_rows((0..r).map(|_| (0..c).map(|_| rng.gen_range(0..4) as f64).collect()).collect()));
        matrices.push(DistanceMatrix::from_rows((0..r).map(|_| (0..c).map(|_| rng.gen::<f64>()).collect()).collect()));
    }
    for seed in 0..10 {
        let x = synthetic_sequence(seed, 12, 3, &BodyShape::default(), 30.0).unwrap();
        let y = synthetic_sequence(seed + 100, 9, 2, &BodyShape::default(), 30.0).unwrap();
        matrices.push(distance_matrix(&x, &y).map_err(|e| e.to_string())?);
    }
    let mut agree = 0;
    for d in &matrices {
        let pair = select_contrast_pair(d).map_err(|e| e.to_string())?;
        let mut best = (0, 0, d.get(0, 0));
        for i in 0..d.rows() {
            for j in 0..d.cols() {
                if d.get(i, j) > best.2 {
                    best = (i, j, d.get(i, j));
                }
            }
        }
        agree += usize::from((pair.i, pair.j, pair.dist) == best);
    }
    check(
        endpoints && midpoint && agree == matrices.len(),
        format!("endpoints bit-exact {endpoints}; argmax matches scan on {agree}/{} matrices; midpoint exact {midpoint}", matrices.len()),
    )
}

fn toy_sequences(template: &BodyTemplate, count: u64, frames: usize, scene: &SceneConfig, seed0: u64) -> Vec<SequenceAnnotation> {
    (0..count)
        .map(|s| {
            let shape = BodyShape::new(std::array::from_fn(|k| ((s + 1) as f64 * 0.37 * (k + 1) as f64).sin() * 0.8));
            let poses = synthetic_sequence(seed0 + s, frames, 1, &shape, 30.0).unwrap();
            let cfg = SceneConfig { viewpoints: vec![Viewpoint::ALL[s as usize % 4]], ..scene.clone() };
            generate_sequence(&format!("clip{s}"), &poses, template, None, &cfg).unwrap().remove(0)
        })
        .collect()
}

fn gradient_contract() -> Outcome {
    let start = Instant::now();
    let t = procedural_template(Detail::Low);
    let cfg = TrainConfig { model: ModelConfig::tiny(), ..TrainConfig::default() };
    let mut worst: f64 = 0.0;
    let mut size = 0;
    for batch in 0..5u64 {
        let data = toy_sequences(&t, 2, 4, &SceneConfig::default(), 300 + 10 * batch);
        let clips = prepare_clips(&data, &t, &cfg).map_err(|e| e.to_string())?;
        let mut p = ModelParams::random(&cfg.model, dataset_mean_phi(&data).unwrap(), batch).map_err(|e| e.to_string())?;
        p.regressor[2].w *= 20.0;
        size = p.parameter_count();
        let report = grad_check(&p, &clips, &t, 1.0, 1e-4).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_error());
    }
    let data = toy_sequences(&t, 1, 4, &SceneConfig::default(), 399);
    let clips = prepare_clips(&data, &t, &cfg).map_err(|e| e.to_string())?;
    let p = ModelParams::random(&cfg.model, dataset_mean_phi(&data).unwrap(), 9).map_err(|e| e.to_string())?;
    let corrupted = grad_check_with(&p, &clips, &t, 1.0, 1e-4, |g| g.lstm.w *= 1.5).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        size <= 10_000 && worst < 1e-4 && !corrupted.passed() && elapsed < Duration::from_secs(300),
        format!(
            "{size} parameters; max relative error {worst:.1e} over 5 batches; corruption flagged with error {:.1e}; {:.1} s",
            corrupted.max_error(),
            elapsed.as_secs_f64()
        ),
    )
}

fn toy_convergence() -> Outcome {
    let start = Instant::now();
    let t = procedural_template(Detail::Low);
    let scene = SceneConfig::default();
    let data = toy_sequences(&t, 8, 4, &scene, 100);
    let cfg = TrainConfig { max_steps: 5000, seed: 0, ..TrainConfig::default() };
    let clips = prepare_clips(&data, &t, &cfg).map_err(|e| e.to_string())?;
    let init = ModelParams::random(&cfg.model, dataset_mean_phi(&data).unwrap(), cfg.seed).map_err(|e| e.to_string())?;
    let (params, curve) = train_clips(init, &clips, &t, &cfg).map_err(|e| e.to_string())?;
    let eval = evaluate_clips(&params, &clips, &t, cfg.lambda).map_err(|e| e.to_string())?;
    let ratio = eval.loss / curve[0].total;
    let elapsed = start.elapsed();
    check(
        ratio <= 0.05 && eval.pa_mpjpe < 0.030 && elapsed < Duration::from_secs(1800),
        format!(
            "loss {:.1} -> {:.2} (ratio {ratio:.4}, target <= 0.05); PA-MPJPE {:.1} mm (target < 30); {:.0} s",
            curve[0].total,
            eval.loss,
            eval.pa_mpjpe * 1000.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn meshforge(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_meshforge")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("meshforge {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn pose_files(dir: &Path) -> Vec<PathBuf> {
    (0..2u64)
        .map(|s| {
            let seq = synthetic_sequence(40 + s, 8, 3, &BodyShape::unit(s as usize), 30.0).unwrap();
            let path = dir.join(format!("motion{s}.seq"));
            write_sequence(&seq, &path).unwrap();
            path
        })
        .collect()
}

fn pipeline_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let poses = pose_files(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, jobs) in [(&a, "1"), (&b, "4")] {
        let mut args = vec!["generate", "--seed", "17", "--garment", "skirt", "--preview", "silhouette", "--cloth-every", "4"];
        args.extend(["--jobs", jobs, "--out", out.to_str().unwrap(), "--poses"]);
        args.extend(poses.iter().map(|p| p.to_str().unwrap()));
        meshforge(&args)?;
    }
    let (ta, tb) = (tree(&a), tree(&b));
    let identical = ta == tb;
    let (_, seqs) = import_dataset(&a).map_err(|e| e.to_string())?;
    let mut frames = 0;
    let mut consistent = 0;
    let mut worst_pelvis: f64 = 0.0;
    for seq in &seqs {
        for f in &seq.frames {
            frames += 1;
            consistent += usize::from(f.check_projection().is_ok());
            let c = f.camera.principal_point();
            worst_pelvis = worst_pelvis.max((f.pelvis_pixel().map_err(|e| e.to_string())? - c).norm());
        }
    }
    check(
        identical && consistent == frames && worst_pelvis < 0.5,
        format!(
            "{} files byte-identical {identical}; {consistent}/{frames} frames projection-consistent; pelvis offset <= {worst_pelvis:.2e} px",
            ta.len()
        ),
    )
}

fn transfer_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let poses = pose_files(dir.path());
    let (data, phis, moved) = (dir.path().join("d"), dir.path().join("phi.jsonl"), dir.path().join("t"));
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (data_s, phis_s, moved_s) = (s(&data), s(&phis), s(&moved));
    let mut args = vec!["generate", "--out", data_s.as_str(), "--poses"];
    let pose_strs: Vec<String> = poses.iter().map(|p| s(p)).collect();
    args.extend(pose_strs.iter().map(String::as_str));
    meshforge(&args)?;
    meshforge(&["recover", "--oracle", "--data", &data_s, "--out", &phis_s])?;
    meshforge(&["transfer", "--phis", &phis_s, "--out", &moved_s])?;
    let (_, gt) = import_dataset(&data).map_err(|e| e.to_string())?;
    let (_, tr) = import_dataset(&moved).map_err(|e| e.to_string())?;
    let joints = |q: &SequenceAnnotation| q.frames.iter().map(|f| f.joints3d.clone()).collect::<Vec<_>>();
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    // every recovered track is re-rendered from all views; compare the one it came from
    for g in &gt {
        let id = format!("{}_{}", g.id, g.viewpoint.name());
        if let Some(t) = tr.iter().find(|t| t.id == id && t.viewpoint == g.viewpoint) {
            worst = worst.max(pa_mpjpe(&joints(t), &joints(g)).map_err(|e| e.to_string())?);
            compared += 1;
        }
    }
    check(
        compared == gt.len() && worst < 1e-6,
        format!("{compared} sequences; worst PA-MPJPE {worst:.2e} m"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric oracle suite", metric_oracles),
        ("metric micro-cases", metric_micro_cases),
        ("cloth force correctness", cloth_forces),
        ("cloth stability and equilibrium", cloth_stability),
        ("body model invariants", body_model),
        ("interpolation", interpolation),
        ("gradient contract", gradient_contract),
        ("toy convergence", toy_convergence),
        ("pipeline determinism", pipeline_determinism),
        ("motion-transfer round trip", transfer_round_trip),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = Vec::new();
    let mut ran = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != n + 1) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1} s]", n + 1),
            Err(detail) => {
                failed.push((n + 1).to_string());
                println!("FAIL {:>2} {name}: {detail} [{secs:.1} s]", n + 1);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: {ran}/{ran} criteria passed");
    } else {
        println!("acceptance: {}/{ran} criteria passed; failing: {}", ran - failed.len(), failed.join(", "));
    }
}
