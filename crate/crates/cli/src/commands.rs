use crate::config::{validate_config, ConfigFile};
use crate::{Cli, CliError, Command, DrapeArgs, EvaluateArgs, GenerateArgs, InterpArgs, RecoverArgs, Result, TransferArgs, TrainToyArgs};
use meshforge::body_model::{load_template, procedural_template, skin, BodyPose, BodyShape, BodyTemplate, Detail};
use meshforge::cloth_sim::{body_colliders, build_garment, drape, load_pattern, GarmentPattern};
use meshforge::metrics::{MetricReport, SequenceEval};
use meshforge::pose_sequence::{contrast_sequence, read_sequence, write_sequence};
use meshforge::recover_net::{
    prepare_clips, recover_clip, train_clips, write_loss_log, ModelParams, RecoverError, RecoveryVector,
    dataset_mean_phi,
};
use meshforge::scene_gen::{
    export_dataset, generate_sequence, import_dataset, rasterize_preview, transfer, ExportOptions, PreviewMode,
    SequenceAnnotation, Viewpoint,
};
use serde::{Deserialize, Serialize};
use std::fmt::Display;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn invalid(e: impl Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{what} {} does not exist", path.display())))
    }
}

pub fn load_config(cli: &Cli) -> Result<ConfigFile> {
    let cfg = match &cli.config {
        Some(path) => {
            require(path, "config file")?;
            validate_config(&fs::read_to_string(path).map_err(invalid)?)?
        }
        None => validate_config("{}")?,
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    Ok(cfg.with_seed(seed))
}

pub fn resolve_template(spec: &str) -> Result<BodyTemplate> {
    match spec {
        "procedural" => Ok(procedural_template(Detail::Medium)),
        "procedural-low" => Ok(procedural_template(Detail::Low)),
        path => {
            require(Path::new(path), "template")?;
            load_template(path).map_err(invalid)
        }
    }
}

pub fn resolve_garment(spec: &str) -> Result<GarmentPattern> {
    match spec {
        "skirt" => Ok(GarmentPattern::skirt()),
        "cape" => Ok(GarmentPattern::cape()),
        path => {
            require(Path::new(path), "garment")?;
            load_pattern(path).map_err(invalid)
        }
    }
}

fn load_dataset(dir: &Path) -> Result<Vec<SequenceAnnotation>> {
    require(&dir.join("manifest.json"), "dataset manifest")?;
    let (_, seqs) = import_dataset(dir).map_err(invalid)?;
    Ok(seqs)
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate(a) => generate(a, &cfg),
        Command::Interp(a) => interp(a, &cfg),
        Command::Drape(a) => drape_garment(a, &cfg),
        Command::Evaluate(a) => evaluate(a),
        Command::TrainToy(a) => train_toy(a, &cfg),
        Command::Recover(a) => recover(a, &cfg),
        Command::Transfer(a) => transfer_motion(a, &cfg),
        Command::Config => {
            println!("{}", cfg.to_json());
            Ok(())
        }
    }
}

fn export_options(template: &BodyTemplate, garment: Option<&GarmentPattern>, preview: Option<&str>, size: u32, every: usize) -> Result<ExportOptions> {
    let preview = match preview {
        None => None,
        Some("silhouette") => Some((PreviewMode::Silhouette, [size, size])),
        Some("depth") => Some((PreviewMode::Depth, [size, size])),
        Some(other) => return Err(CliError::Validation(format!("--preview must be silhouette or depth, got `{other}`"))),
    };
    if size == 0 {
        return Err(CliError::Validation("--preview-size must be positive".into()));
    }
    let cloth_faces = match garment {
        Some(p) => build_garment(p).map_err(invalid)?.faces,
        None => Vec::new(),
    };
    Ok(ExportOptions {
        preview,
        cloth_snapshot_every: every,
        body_faces: template.faces.clone(),
        cloth_faces,
    })
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Validation("--jobs must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    Ok(builder.build().map_err(runtime)?.install(f))
}

fn sequence_id(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::Validation(format!("cannot name a sequence after {}", path.display())))
}

fn generate(a: &GenerateArgs, cfg: &ConfigFile) -> Result<()> {
    let template = resolve_template(&a.template.template)?;
    let garment = a.garment.as_deref().map(resolve_garment).transpose()?;
    let mut inputs = Vec::with_capacity(a.poses.len());
    for path in &a.poses {
        require(path, "pose file")?;
        inputs.push((sequence_id(path)?, read_sequence(path).map_err(invalid)?));
    }
    let opts = export_options(&template, garment.as_ref(), a.preview.as_deref(), a.preview_size, a.cloth_every)?;
    let seqs = with_jobs(a.jobs, || -> Result<Vec<SequenceAnnotation>> {
        let mut all = Vec::new();
        for (id, poses) in &inputs {
            log::info!("generating {id}: {} frames", poses.len());
            all.extend(generate_sequence(id, poses, &template, garment.as_ref(), &cfg.scene).map_err(runtime)?);
        }
        Ok(all)
    })??;
    let manifest = export_dataset(&seqs, &a.out, &opts).map_err(runtime)?;
    println!("wrote {} sequences, {} frames to {}", manifest.sequences.len(), manifest.total_frames, a.out.display());
    Ok(())
}

fn interp(a: &InterpArgs, cfg: &ConfigFile) -> Result<()> {
    require(&a.a, "sequence")?;
    require(&a.b, "sequence")?;
    let x = read_sequence(&a.a).map_err(invalid)?;
    let y = read_sequence(&a.b).map_err(invalid)?;
    let seq = contrast_sequence(&x, &y, &cfg.interp).map_err(invalid)?;
    write_sequence(&seq, &a.out).map_err(runtime)?;
    println!("wrote {} frames to {}", seq.len(), a.out.display());
    Ok(())
}

fn drape_garment(a: &DrapeArgs, cfg: &ConfigFile) -> Result<()> {
    let template = resolve_template(&a.template.template)?;
    let pattern = resolve_garment(&a.garment)?;
    let seconds = a.seconds.unwrap_or(cfg.drape.max_seconds);
    if !(seconds > 0.0) {
        return Err(CliError::Validation("--seconds must be positive".into()));
    }
    let shape = BodyShape::default();
    let pose = BodyPose::zero(template.joint_count());
    let body = skin(&template, &shape, &pose).map_err(runtime)?;
    let mut cloth = build_garment(&pattern).map_err(invalid)?;
    cloth.attach_pins(&body.vertices);
    let colliders = body_colliders(&template, &pose, &shape).map_err(runtime)?;
    let outcome = drape(&mut cloth, &colliders, &cfg.scene.cloth, seconds).map_err(runtime)?;
    if !outcome.converged {
        log::warn!("garment still moving at {:.3e} m/s after {seconds} s", outcome.max_speed);
    }
    let file = fs::File::create(&a.out).map_err(runtime)?;
    cloth.write_obj(BufWriter::new(file)).map_err(runtime)?;
    println!("{}", serde_json::to_string(&outcome).map_err(runtime)?);
    Ok(())
}

fn to_millimeters(mut r: MetricReport) -> MetricReport {
    for v in [&mut r.mpjpe, &mut r.pa_mpjpe, &mut r.mpvpe, &mut r.mrvpv_l1, &mut r.mrvpv_l2] {
        *v *= 1000.0;
    }
    r
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let pred = load_dataset(&a.pred)?;
    let gt = load_dataset(&a.gt)?;
    if pred.len() != gt.len() {
        return Err(CliError::Validation(format!("prediction has {} sequences, ground truth {}", pred.len(), gt.len())));
    }
    let mut rows = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(&gt) {
        let name = format!("{}_{}", g.id, g.viewpoint.name());
        if p.frames.len() != g.frames.len() {
            return Err(CliError::Validation(format!(
                "{name}: prediction has {} frames, ground truth {}",
                p.frames.len(),
                g.frames.len()
            )));
        }
        for (f, (pf, gf)) in p.frames.iter().zip(&g.frames).enumerate() {
            if pf.body_vertices.len() != gf.body_vertices.len() {
                return Err(CliError::Validation(format!(
                    "{name} frame {f}: prediction has {} vertices, ground truth {}",
                    pf.body_vertices.len(),
                    gf.body_vertices.len()
                )));
            }
            if pf.joints3d.len() != gf.joints3d.len() {
                return Err(CliError::Validation(format!(
                    "{name} frame {f}: prediction has {} joints, ground truth {}",
                    pf.joints3d.len(),
                    gf.joints3d.len()
                )));
            }
        }
        let pick = |s: &SequenceAnnotation, f: fn(&meshforge::scene_gen::AnnotatedFrame) -> Vec<nalgebra::Vector3<f64>>| {
            s.frames.iter().map(f).collect::<Vec<_>>()
        };
        let (pj, gj) = (pick(p, |f| f.joints3d.clone()), pick(g, |f| f.joints3d.clone()));
        let (pv, gv) = (pick(p, |f| f.body_vertices.clone()), pick(g, |f| f.body_vertices.clone()));
        let betas: Vec<_> = p.frames.iter().map(|f| f.beta).collect();
        let report = MetricReport::evaluate(
            &SequenceEval {
                pred_joints: &pj,
                gt_joints: &gj,
                pred_vertices: &pv,
                gt_vertices: &gv,
                pred_betas: &betas,
            },
            a.normalized,
        )
        .map_err(invalid)?;
        rows.push((name, to_millimeters(report)));
    }
    print!("{}", MetricReport::table(&rows));
    if let Some(path) = &a.json {
        fs::write(path, serde_json::to_string_pretty(&rows).map_err(runtime)?).map_err(runtime)?;
    }
    Ok(())
}

fn recover_error(e: RecoverError) -> CliError {
    match e {
        RecoverError::Config(_) | RecoverError::Data(_) | RecoverError::Shape(_) | RecoverError::Format(_) => invalid(e),
        _ => runtime(e),
    }
}

fn train_toy(a: &TrainToyArgs, cfg: &ConfigFile) -> Result<()> {
    let template = resolve_template(&a.template.template)?;
    let data = load_dataset(&a.data)?;
    let mut train = cfg.train.clone();
    if let Some(steps) = a.steps {
        train.max_steps = steps;
    }
    let clips = prepare_clips(&data, &template, &train).map_err(recover_error)?;
    let init = ModelParams::random(&train.model, dataset_mean_phi(&data).map_err(recover_error)?, train.seed)
        .map_err(recover_error)?;
    log::info!("{} clips, {} parameters", clips.len(), init.parameter_count());
    let (params, curve) = train_clips(init, &clips, &template, &train).map_err(recover_error)?;
    params.save(&a.out).map_err(runtime)?;
    if let Some(path) = &a.log {
        let file = fs::File::create(path).map_err(runtime)?;
        write_loss_log(BufWriter::new(file), &curve, train.lambda).map_err(runtime)?;
    }
    match (curve.first(), curve.last()) {
        (Some(first), Some(last)) => println!("loss {:.6} -> {:.6} over {} steps", first.total, last.total, curve.len()),
        _ => println!("no training steps; wrote initial parameters"),
    }
    Ok(())
}

/// One line of a recovery file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiRecord {
    pub sequence: String,
    pub viewpoint: Viewpoint,
    pub fps: f64,
    pub frame: usize,
    pub phi: RecoveryVector,
}

fn recover(a: &RecoverArgs, cfg: &ConfigFile) -> Result<()> {
    let template = resolve_template(&a.template.template)?;
    let data = load_dataset(&a.data)?;
    let params = match (&a.params, a.oracle) {
        (_, true) => None,
        (Some(path), false) => {
            require(path, "parameter file")?;
            Some(ModelParams::load(path).map_err(recover_error)?)
        }
        (None, false) => return Err(CliError::Validation("--params is required without --oracle".into())),
    };
    let mut out = BufWriter::new(fs::File::create(&a.out).map_err(runtime)?);
    let mut written = 0;
    for seq in &data {
        let phis: Vec<RecoveryVector> = match &params {
            None => seq.frames.iter().map(|f| f.ground_truth_phi()).collect(),
            Some(p) => {
                let size = p.config.image_size as u32;
                if seq.frames.iter().any(|f| f.body_vertices.len() != template.vertex_count()) {
                    return Err(CliError::Validation(format!(
                        "sequence {} was not rendered with a {}-vertex template",
                        seq.id,
                        template.vertex_count()
                    )));
                }
                let mut all = Vec::with_capacity(seq.frames.len());
                for window in seq.frames.chunks(cfg.train.clip_length) {
                    let images: Vec<_> = window
                        .iter()
                        .map(|f| rasterize_preview(f, &template.faces, &[], PreviewMode::Silhouette, [size, size]))
                        .collect();
                    all.extend(recover_clip(&images, p).map_err(recover_error)?);
                }
                all
            }
        };
        for (frame, phi) in phis.into_iter().enumerate() {
            let rec = PhiRecord {
                sequence: seq.id.clone(),
                viewpoint: seq.viewpoint,
                fps: seq.fps,
                frame,
                phi,
            };
            serde_json::to_writer(&mut out, &rec).map_err(runtime)?;
            out.write_all(b"\n").map_err(runtime)?;
            written += 1;
        }
    }
    out.flush().map_err(runtime)?;
    println!("wrote {written} recovery vectors to {}", a.out.display());
    Ok(())
}

pub fn read_phi_records(path: &Path) -> Result<Vec<PhiRecord>> {
    require(path, "recovery file")?;
    let text = fs::read_to_string(path).map_err(invalid)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn transfer_motion(a: &TransferArgs, cfg: &ConfigFile) -> Result<()> {
    let template = resolve_template(&a.template.template)?;
    let garment = a.garment.as_deref().map(resolve_garment).transpose()?;
    let records = read_phi_records(&a.phis)?;
    let mut groups: Vec<(String, f64, Vec<RecoveryVector>)> = Vec::new();
    for rec in records {
        let id = format!("{}_{}", rec.sequence, rec.viewpoint.name());
        match groups.last_mut() {
            Some((last, _, phis)) if *last == id => phis.push(rec.phi),
            _ => groups.push((id, rec.fps, vec![rec.phi])),
        }
    }
    if groups.is_empty() {
        return Err(CliError::Validation(format!("{} holds no recovery vectors", a.phis.display())));
    }
    let mut seqs = Vec::new();
    for (id, fps, phis) in &groups {
        seqs.extend(transfer(id, phis, *fps, &template, garment.as_ref(), &cfg.scene).map_err(runtime)?);
    }
    let opts = export_options(&template, garment.as_ref(), None, 1, 0)?;
    let manifest = export_dataset(&seqs, &a.out, &opts).map_err(runtime)?;
    println!("wrote {} sequences, {} frames to {}", manifest.sequences.len(), manifest.total_frames, a.out.display());
    Ok(())
}
