//! Garment patterns: flat rectangular panels placed in space and sewn together.

use super::{ClothError, ClothState, Pin, Result, Spring, SpringKind};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::f64::consts::TAU;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Material {
    /// N/m
    pub stretch: f64,
    pub shear: f64,
    pub bend: f64,
    /// N·s/m along every spring.
    pub spring_damping: f64,
    /// 1/s, mass proportional.
    pub global_damping: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            stretch: 5000.0,
            shear: 500.0,
            bend: 10.0,
            spring_damping: 0.01,
            global_damping: 1.0,
        }
    }
}

/// Where a panel's grid sits in space. Grid point (r, c) is `c` steps along
/// the first direction and `r` steps along the second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Placement {
    Plane {
        origin: Vector3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
    },
    /// Columns wrap around `axis` at `radius`; rows advance along `axis`.
    Cylinder {
        top_center: Vector3<f64>,
        axis: Vector3<f64>,
        radius: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Panel {
    pub rows: usize,
    pub cols: usize,
    /// Meters between grid neighbors.
    pub spacing: f64,
    /// kg/m²
    pub density: f64,
    pub placement: Placement,
}

impl Panel {
    pub fn particle_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn index(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    pub fn edge(&self, edge: Edge) -> Vec<usize> {
        match edge {
            Edge::Top => (0..self.cols).map(|c| self.index(0, c)).collect(),
            Edge::Bottom => (0..self.cols).map(|c| self.index(self.rows - 1, c)).collect(),
            Edge::Left => (0..self.rows).map(|r| self.index(r, 0)).collect(),
            Edge::Right => (0..self.rows).map(|r| self.index(r, self.cols - 1)).collect(),
        }
    }

    fn is_boundary(&self, idx: usize) -> bool {
        let (r, c) = (idx / self.cols, idx % self.cols);
        r == 0 || c == 0 || r + 1 == self.rows || c + 1 == self.cols
    }

    fn position(&self, r: usize, c: usize) -> Vector3<f64> {
        let (rf, cf) = (r as f64 * self.spacing, c as f64 * self.spacing);
        match &self.placement {
            Placement::Plane { origin, u, v } => origin + u.normalize() * cf + v.normalize() * rf,
            Placement::Cylinder { top_center, axis, radius } => {
                let a = axis.normalize();
                let helper = if a.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
                let e1 = helper.cross(&a).normalize();
                let e2 = a.cross(&e1);
                let phi = cf / radius;
                top_center + (e1 * phi.cos() + e2 * phi.sin()) * *radius + a * rf
            }
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        let bad = |m: String| Err(ClothError::Pattern(format!("panel {k}: {m}")));
        if self.rows < 2 || self.cols < 2 {
            return bad(format!("grid {}x{} is smaller than 2x2", self.rows, self.cols));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return bad("spacing must be positive".into());
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad("density must be positive".into());
        }
        match &self.placement {
            Placement::Plane { u, v, .. } => {
                if u.cross(v).norm() < 1e-9 * u.norm() * v.norm() || u.norm() == 0.0 {
                    return bad("plane directions are parallel or zero".into());
                }
            }
            Placement::Cylinder { axis, radius, .. } => {
                if axis.norm() == 0.0 || !(*radius > 0.0) {
                    return bad("cylinder needs a nonzero axis and positive radius".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Top,
    Bottom,
    Left,
    Right,
}

/// A run of boundary particles of one panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum RunSpec {
    Edge { panel: usize, edge: Edge },
    Indices { panel: usize, indices: Vec<usize> },
}

impl RunSpec {
    fn panel(&self) -> usize {
        match self {
            RunSpec::Edge { panel, .. } | RunSpec::Indices { panel, .. } => *panel,
        }
    }

    fn resolve(&self, panels: &[Panel]) -> Result<Vec<usize>> {
        let p = self.panel();
        let panel = panels
            .get(p)
            .ok_or_else(|| ClothError::Pattern(format!("seam refers to missing panel {p}")))?;
        let indices = match self {
            RunSpec::Edge { edge, .. } => panel.edge(*edge),
            RunSpec::Indices { indices, .. } => indices.clone(),
        };
        for &i in &indices {
            if i >= panel.particle_count() || !panel.is_boundary(i) {
                return Err(ClothError::Pattern(format!("particle {i} is not on the boundary of panel {p}")));
            }
        }
        Ok(indices)
    }
}

/// Particles `a[k]` and `b[k]` are merged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seam {
    pub a: RunSpec,
    pub b: RunSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinSpec {
    pub panel: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarmentPattern {
    pub panels: Vec<Panel>,
    #[serde(default)]
    pub seams: Vec<Seam>,
    #[serde(default)]
    pub pins: Vec<PinSpec>,
    #[serde(default)]
    pub material: Material,
}

impl GarmentPattern {
    /// Horizontal square sheet pinned at its four corners.
    pub fn pinned_square(n: usize, spacing: f64, center: Vector3<f64>) -> Self {
        let half = (n - 1) as f64 * spacing / 2.0;
        let panel = Panel {
            rows: n,
            cols: n,
            spacing,
            density: 0.15,
            placement: Placement::Plane {
                origin: center - Vector3::new(half, half, 0.0),
                u: Vector3::x(),
                v: Vector3::y(),
            },
        };
        let pins = [0, n - 1, n * (n - 1), n * n - 1].map(|index| PinSpec { panel: 0, index }).to_vec();
        Self {
            panels: vec![panel],
            seams: vec![],
            pins,
            material: Material::default(),
        }
    }

    /// Tube skirt hanging from the waist of the procedural body, waist row pinned.
    pub fn skirt() -> Self {
        let spacing = 0.04;
        let cols = 33;
        let radius = (cols - 1) as f64 * spacing / TAU;
        let panel = Panel {
            rows: 12,
            cols,
            spacing,
            density: 0.15,
            placement: Placement::Cylinder {
                top_center: Vector3::new(0.0, 0.0, 0.02),
                axis: -Vector3::z(),
                radius,
            },
        };
        let pins = (0..cols - 1).map(|index| PinSpec { panel: 0, index }).collect();
        Self {
            panels: vec![panel],
            seams: vec![Seam {
                a: RunSpec::Edge { panel: 0, edge: Edge::Left },
                b: RunSpec::Edge { panel: 0, edge: Edge::Right },
            }],
            pins,
            material: Material::default(),
        }
    }

    /// Cape hanging behind the shoulders, top row pinned.
    pub fn cape() -> Self {
        let spacing = 0.04;
        let cols = 11;
        let panel = Panel {
            rows: 16,
            cols,
            spacing,
            density: 0.15,
            placement: Placement::Plane {
                origin: Vector3::new(-0.2, 0.2, 0.48),
                u: Vector3::x(),
                v: -Vector3::z(),
            },
        };
        let pins = (0..cols).map(|index| PinSpec { panel: 0, index }).collect();
        Self {
            panels: vec![panel],
            seams: vec![],
            pins,
            material: Material::default(),
        }
    }
}

/// Minimal union-find over particle indices.
struct Merge(Vec<usize>);

impl Merge {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

pub fn build_garment(pattern: &GarmentPattern) -> Result<ClothState> {
    if pattern.panels.is_empty() {
        return Err(ClothError::Pattern("no panels".into()));
    }
    for (k, p) in pattern.panels.iter().enumerate() {
        p.validate(k)?;
    }
    let offsets: Vec<usize> = pattern
        .panels
        .iter()
        .scan(0, |acc, p| {
            let o = *acc;
            *acc += p.particle_count();
            Some(o)
        })
        .collect();
    let raw_count: usize = pattern.panels.iter().map(Panel::particle_count).sum();

    let mut merge = Merge((0..raw_count).collect());
    let mut used = HashSet::new();
    for seam in &pattern.seams {
        let (a, b) = (seam.a.resolve(&pattern.panels)?, seam.b.resolve(&pattern.panels)?);
        if a.len() != b.len() {
            return Err(ClothError::Pattern(format!("seam runs have lengths {} and {}", a.len(), b.len())));
        }
        for (spec, run) in [(&seam.a, &a), (&seam.b, &b)] {
            for &i in run {
                if !used.insert((spec.panel(), i)) {
                    return Err(ClothError::OverlappingSeam { panel: spec.panel(), index: i });
                }
            }
        }
        for (&i, &j) in a.iter().zip(&b) {
            merge.union(offsets[seam.a.panel()] + i, offsets[seam.b.panel()] + j);
        }
    }

    // compact numbering of merged particles, in order of first appearance
    let mut index_of = HashMap::new();
    let mut remap = vec![0; raw_count];
    for (g, slot) in remap.iter_mut().enumerate() {
        let root = merge.find(g);
        let next = index_of.len();
        *slot = *index_of.entry(root).or_insert(next);
    }
    let n = index_of.len();
    let mut masses = vec![0.0; n];
    let mut sums = vec![Vector3::zeros(); n];
    let mut counts = vec![0usize; n];
    let mut springs = Vec::new();
    let mut seen = HashSet::new();
    let mut faces = Vec::new();
    let m = &pattern.material;

    for (p, panel) in pattern.panels.iter().enumerate() {
        let id = |r: usize, c: usize| remap[offsets[p] + panel.index(r, c)];
        let cell_mass = panel.density * panel.spacing * panel.spacing / 4.0;
        for r in 0..panel.rows {
            for c in 0..panel.cols {
                let k = id(r, c);
                sums[k] += panel.position(r, c);
                counts[k] += 1;
            }
        }
        for r in 0..panel.rows - 1 {
            for c in 0..panel.cols - 1 {
                for (rr, cc) in [(r, c), (r + 1, c), (r, c + 1), (r + 1, c + 1)] {
                    masses[id(rr, cc)] += cell_mass;
                }
                let (a, b, cx, d) = (id(r, c), id(r + 1, c), id(r + 1, c + 1), id(r, c + 1));
                for f in [[a, b, cx], [a, cx, d]] {
                    if f[0] != f[1] && f[1] != f[2] && f[0] != f[2] {
                        faces.push(f);
                    }
                }
            }
        }
        let mut add = |a: usize, b: usize, rest: f64, stiffness: f64, kind| {
            if a != b && seen.insert((a.min(b), a.max(b))) {
                springs.push(Spring {
                    i: a,
                    j: b,
                    rest_length: rest,
                    stiffness,
                    damping: m.spring_damping,
                    kind,
                });
            }
        };
        let h = panel.spacing;
        for r in 0..panel.rows {
            for c in 0..panel.cols {
                if c + 1 < panel.cols {
                    add(id(r, c), id(r, c + 1), h, m.stretch, SpringKind::Stretch);
                }
                if r + 1 < panel.rows {
                    add(id(r, c), id(r + 1, c), h, m.stretch, SpringKind::Stretch);
                }
            }
        }
        for r in 0..panel.rows - 1 {
            for c in 0..panel.cols - 1 {
                add(id(r, c), id(r + 1, c + 1), h * 2f64.sqrt(), m.shear, SpringKind::Shear);
                add(id(r, c + 1), id(r + 1, c), h * 2f64.sqrt(), m.shear, SpringKind::Shear);
            }
        }
        for r in 0..panel.rows {
            for c in 0..panel.cols {
                if c + 2 < panel.cols {
                    add(id(r, c), id(r, c + 2), 2.0 * h, m.bend, SpringKind::Bend);
                }
                if r + 2 < panel.rows {
                    add(id(r, c), id(r + 2, c), 2.0 * h, m.bend, SpringKind::Bend);
                }
            }
        }
    }

    let positions: Vec<Vector3<f64>> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let mut pins = Vec::new();
    let mut pinned = HashSet::new();
    for spec in &pattern.pins {
        let panel = pattern
            .panels
            .get(spec.panel)
            .ok_or_else(|| ClothError::Pattern(format!("pin refers to missing panel {}", spec.panel)))?;
        if spec.index >= panel.particle_count() {
            return Err(ClothError::Pattern(format!("pin index {} outside panel {}", spec.index, spec.panel)));
        }
        let particle = remap[offsets[spec.panel] + spec.index];
        if pinned.insert(particle) {
            pins.push(Pin {
                particle,
                anchor: positions[particle],
                body_vertex: None,
                offset: Vector3::zeros(),
            });
        }
    }
    let state = ClothState {
        masses,
        velocities: vec![Vector3::zeros(); n],
        positions,
        springs,
        pins,
        global_damping: m.global_damping,
        faces,
    };
    state.validate()?;
    Ok(state)
}

pub fn load_pattern(path: impl AsRef<Path>) -> Result<GarmentPattern> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn save_pattern(pattern: &GarmentPattern, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(pattern)?)?;
    Ok(())
}
