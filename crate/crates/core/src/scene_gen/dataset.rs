//! On-disk dataset layout:
//!
//! ```text
//! manifest.json
//! <sequence>/annot_<view>.jsonl      one AnnotatedFrame per line
//! <sequence>/preview_<view>/00000.pgm
//! <sequence>/cloth_<view>.obj        one object per snapshot
//! ```

use super::{rasterize_preview, AnnotatedFrame, PreviewMode, Result, SceneError, SequenceAnnotation, Viewpoint};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub viewpoint: Viewpoint,
    pub frames: usize,
    pub fps: f64,
    pub seed: u64,
    pub config_hash: String,
    pub light_strengths: [f64; 4],
    /// Annotation file relative to the dataset root.
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub total_frames: usize,
    pub sequences: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, Default)]
pub struct ExportOptions {
    /// Preview mode and size; `None` skips previews.
    pub preview: Option<(PreviewMode, [u32; 2])>,
    /// Cloth OBJ snapshot period in frames; 0 disables snapshots.
    pub cloth_snapshot_every: usize,
    pub body_faces: Vec<[usize; 3]>,
    pub cloth_faces: Vec<[usize; 3]>,
}

fn annotation_path(seq: &SequenceAnnotation) -> String {
    format!("{}/annot_{}.jsonl", seq.id, seq.viewpoint.name())
}

fn write_cloth_obj(path: &Path, seq: &SequenceAnnotation, every: usize, faces: &[[usize; 3]]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let mut offset = 1;
    for (f, frame) in seq.frames.iter().enumerate().step_by(every) {
        let Some(cloth) = &frame.cloth_vertices else { continue };
        writeln!(out, "o frame_{f:05}")?;
        for v in cloth {
            writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for t in faces {
            writeln!(out, "f {} {} {}", t[0] + offset, t[1] + offset, t[2] + offset)?;
        }
        offset += cloth.len();
    }
    out.flush()?;
    Ok(())
}

/// Writes sequences under `dir`; identical inputs produce identical bytes.
pub fn export_dataset(seqs: &[SequenceAnnotation], dir: impl AsRef<Path>, opts: &ExportOptions) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(seqs.len());
    for seq in seqs {
        if seq.id.is_empty() || seq.id.contains(['/', '\\']) || seq.id.starts_with('.') {
            return Err(SceneError::Config(format!("sequence id {:?} is not a plain directory name", seq.id)));
        }
        let seq_dir = dir.join(&seq.id);
        fs::create_dir_all(&seq_dir)?;
        let file = annotation_path(seq);
        let mut out = BufWriter::new(fs::File::create(dir.join(&file))?);
        for frame in &seq.frames {
            serde_json::to_writer(&mut out, frame)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        if let Some((mode, size)) = opts.preview {
            let pdir = seq_dir.join(format!("preview_{}", seq.viewpoint.name()));
            fs::create_dir_all(&pdir)?;
            for (f, frame) in seq.frames.iter().enumerate() {
                let img = rasterize_preview(frame, &opts.body_faces, &opts.cloth_faces, mode, size);
                img.write_pgm(BufWriter::new(fs::File::create(pdir.join(format!("{f:05}.pgm")))?), mode)?;
            }
        }
        if opts.cloth_snapshot_every > 0 && seq.frames.iter().any(|f| f.cloth_vertices.is_some()) {
            let path = seq_dir.join(format!("cloth_{}.obj", seq.viewpoint.name()));
            write_cloth_obj(&path, seq, opts.cloth_snapshot_every, &opts.cloth_faces)?;
        }
        entries.push(ManifestEntry {
            id: seq.id.clone(),
            viewpoint: seq.viewpoint,
            frames: seq.frames.len(),
            fps: seq.fps,
            seed: seq.seed,
            config_hash: seq.config_hash.clone(),
            light_strengths: seq.light_strengths,
            file,
        });
    }
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        total_frames: entries.iter().map(|e| e.frames).sum(),
        sequences: entries,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn import_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<SequenceAnnotation>)> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let version: serde_json::Value = serde_json::from_str(&text)?;
    let found = version.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(SceneError::Schema {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let mut seqs = Vec::with_capacity(manifest.sequences.len());
    for entry in &manifest.sequences {
        let path = dir.join(&entry.file);
        let body = fs::read_to_string(&path)?;
        let frames = body
            .lines()
            .enumerate()
            .map(|(n, line)| {
                serde_json::from_str::<AnnotatedFrame>(line).map_err(|e| SceneError::Record {
                    file: path.display().to_string(),
                    line: n + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if frames.len() != entry.frames {
            return Err(SceneError::Record {
                file: path.display().to_string(),
                line: frames.len(),
                message: format!("manifest lists {} frames, file has {}", entry.frames, frames.len()),
            });
        }
        seqs.push(SequenceAnnotation {
            id: entry.id.clone(),
            viewpoint: entry.viewpoint,
            fps: entry.fps,
            seed: entry.seed,
            config_hash: entry.config_hash.clone(),
            light_strengths: entry.light_strengths,
            frames,
        });
    }
    Ok((manifest, seqs))
}
