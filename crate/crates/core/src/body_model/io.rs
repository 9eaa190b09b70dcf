use super::{BodyModelError, BodyTemplate, Result, SHAPE_DIM};
use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Dense rows, or `{rows, cols, triplets: [[r, c, v], ...]}`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixRepr {
    Sparse {
        rows: usize,
        cols: usize,
        triplets: Vec<(usize, usize, f64)>,
    },
    Dense(Vec<Vec<f64>>),
}

impl MatrixRepr {
    fn sparse(m: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        MatrixRepr::Sparse {
            rows: m.nrows(),
            cols: m.ncols(),
            triplets,
        }
    }

    fn into_matrix(self, field: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixRepr::Sparse { rows, cols, triplets } => {
                let mut m = DMatrix::zeros(rows, cols);
                for (r, c, v) in triplets {
                    if r >= rows || c >= cols {
                        return Err(BodyModelError::Validation(format!(
                            "{field} triplet ({r}, {c}) outside {rows}x{cols}"
                        )));
                    }
                    m[(r, c)] = v;
                }
                Ok(m)
            }
            MatrixRepr::Dense(rows) => {
                let cols = rows.first().map_or(0, Vec::len);
                if let Some(r) = rows.iter().position(|row| row.len() != cols) {
                    return Err(BodyModelError::Validation(format!("{field} row {r} has a different length")));
                }
                Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TemplateFile {
    rest_vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    parents: Vec<usize>,
    weights: MatrixRepr,
    /// N × 3 × 10
    shape_basis: Vec<[[f64; SHAPE_DIM]; 3]>,
    joint_regressor: MatrixRepr,
    metric_joint_map: Vec<usize>,
    #[serde(flatten)]
    extra: serde_json::Map<String, serde_json::Value>,
}

pub fn template_to_json(t: &BodyTemplate) -> String {
    let n = t.vertex_count();
    let file = TemplateFile {
        rest_vertices: t.rest_vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
        faces: t.faces.clone(),
        parents: t.parents.clone(),
        weights: MatrixRepr::sparse(&t.skinning_weights),
        shape_basis: (0..n)
            .map(|i| std::array::from_fn(|c| std::array::from_fn(|d| t.shape_basis[(3 * i + c, d)])))
            .collect(),
        joint_regressor: MatrixRepr::sparse(&t.joint_regressor),
        metric_joint_map: t.metric_joint_map.clone(),
        extra: Default::default(),
    };
    serde_json::to_string(&file).expect("template serialization cannot fail")
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    line_start + column.saturating_sub(1)
}

pub fn template_from_json(text: &str) -> Result<BodyTemplate> {
    let file: TemplateFile = serde_json::from_str(text).map_err(|e| BodyModelError::Parse {
        offset: if e.is_eof() {
            text.len()
        } else {
            byte_offset(text, e.line(), e.column())
        },
        message: e.to_string(),
    })?;
    for key in file.extra.keys() {
        if matches!(key.as_str(), "posedirs" | "pose_basis" | "pose_blend_shapes") {
            log::warn!("template field `{key}` holds pose-dependent blend shapes, which are not used");
        } else {
            log::warn!("ignoring unknown template field `{key}`");
        }
    }
    let n = file.rest_vertices.len();
    if file.shape_basis.len() != n {
        return Err(BodyModelError::Validation(format!(
            "shape_basis has {} entries for {n} vertices",
            file.shape_basis.len()
        )));
    }
    let basis = DMatrix::from_fn(3 * n, SHAPE_DIM, |r, d| file.shape_basis[r / 3][r % 3][d]);
    let template = BodyTemplate {
        rest_vertices: file.rest_vertices.iter().map(|v| Vector3::from(*v)).collect(),
        faces: file.faces,
        parents: file.parents,
        skinning_weights: file.weights.into_matrix("weights")?,
        shape_basis: basis,
        joint_regressor: file.joint_regressor.into_matrix("joint_regressor")?,
        metric_joint_map: file.metric_joint_map,
    };
    template.validate()?;
    Ok(template)
}

pub fn load_template(path: impl AsRef<Path>) -> Result<BodyTemplate> {
    let text = std::fs::read_to_string(path)?;
    template_from_json(&text)
}

pub fn save_template(t: &BodyTemplate, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, template_to_json(t))?;
    Ok(())
}

/// Wavefront OBJ with vertices and 1-based triangle faces only.
pub fn write_obj<W: Write>(mut out: W, vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> std::io::Result<()> {
    for v in vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}
