//! Mass-spring cloth with implicit Euler time stepping and capsule collisions.

mod collision;
mod forces;
mod pattern;
mod solver;

pub use collision::{body_colliders, resolve_collisions, Capsule, CapsuleSet};
pub use forces::{force_jacobians, internal_forces, ForceJacobians, SpringBlock};
pub use pattern::{
    build_garment, load_pattern, save_pattern, Edge, GarmentPattern, Material, Panel, PinSpec, Placement, RunSpec,
    Seam,
};
pub use solver::{drape, step, DrapeOutcome, StepStats};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClothError {
    #[error("invalid garment pattern: {0}")]
    Pattern(String),
    #[error("seam particle {index} of panel {panel} is used more than once")]
    OverlappingSeam { panel: usize, index: usize },
    #[error("spring {spring} ({i}, {j}) has coincident endpoints")]
    DegenerateSpring { spring: usize, i: usize, j: usize },
    #[error("invalid cloth state: {0}")]
    State(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },
    #[error("non-finite value in particle {particle} after step")]
    NonFinite { particle: usize },
    #[error("simulation unstable at t = {time:.3} s (max speed {max_speed:e} m/s)")]
    Unstable { time: f64, max_speed: f64 },
    #[error("pattern file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ClothError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpringKind {
    Stretch,
    Shear,
    Bend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub i: usize,
    pub j: usize,
    pub rest_length: f64,
    /// N/m
    pub stiffness: f64,
    /// N·s/m, acts along the spring direction.
    pub damping: f64,
    pub kind: SpringKind,
}

/// Holds a particle at `anchor`. With `body_vertex`, the anchor follows that
/// vertex plus `offset` whenever [`ClothState::track_body`] is called.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pin {
    pub particle: usize,
    pub anchor: Vector3<f64>,
    pub body_vertex: Option<usize>,
    pub offset: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClothState {
    pub masses: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub springs: Vec<Spring>,
    pub pins: Vec<Pin>,
    /// Mass-proportional damping rate in 1/s, applied as −γ·m·v.
    pub global_damping: f64,
    /// Triangulation used for export and rendering.
    pub faces: Vec<[usize; 3]>,
}

impl ClothState {
    pub fn particle_count(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.masses.len();
        if self.positions.len() != n || self.velocities.len() != n {
            return Err(ClothError::State(format!(
                "{n} masses, {} positions, {} velocities",
                self.positions.len(),
                self.velocities.len()
            )));
        }
        if let Some(p) = self.masses.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(ClothError::State(format!("particle {p} has mass {}", self.masses[p])));
        }
        for (k, s) in self.springs.iter().enumerate() {
            if s.i == s.j || s.i >= n || s.j >= n {
                return Err(ClothError::State(format!("spring {k} joins ({}, {})", s.i, s.j)));
            }
            if !(s.rest_length > 0.0) || s.stiffness < 0.0 || s.damping < 0.0 {
                return Err(ClothError::State(format!("spring {k} has invalid parameters")));
            }
        }
        if let Some(p) = self.pins.iter().find(|p| p.particle >= n) {
            return Err(ClothError::State(format!("pin on missing particle {}", p.particle)));
        }
        if self.global_damping < 0.0 {
            return Err(ClothError::State("negative global damping".into()));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.masses.iter().zip(&self.velocities).map(|(m, v)| 0.5 * m * v.norm_squared()).sum()
    }

    pub fn momentum(&self) -> Vector3<f64> {
        self.masses.iter().zip(&self.velocities).map(|(m, v)| v * *m).sum()
    }

    pub fn is_pinned(&self) -> Vec<bool> {
        let mut pinned = vec![false; self.particle_count()];
        for p in &self.pins {
            pinned[p.particle] = true;
        }
        pinned
    }

    /// Binds every pin to its nearest body vertex, keeping the current offset.
    pub fn attach_pins(&mut self, body_vertices: &[Vector3<f64>]) {
        if body_vertices.is_empty() {
            return;
        }
        for pin in &mut self.pins {
            let (v, _) = body_vertices
                .iter()
                .enumerate()
                .map(|(k, b)| (k, (b - pin.anchor).norm_squared()))
                .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
            pin.body_vertex = Some(v);
            pin.offset = pin.anchor - body_vertices[v];
        }
    }

    /// Moves body-bound anchors to the current body vertices.
    pub fn track_body(&mut self, body_vertices: &[Vector3<f64>]) {
        for pin in &mut self.pins {
            if let Some(v) = pin.body_vertex {
                pin.anchor = body_vertices[v] + pin.offset;
            }
        }
    }

    /// Wavefront OBJ of the current positions.
    pub fn write_obj<W: Write>(&self, out: W) -> std::io::Result<()> {
        crate::body_model::write_obj(out, &self.positions, &self.faces)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Seconds.
    pub timestep: f64,
    pub gravity: Vector3<f64>,
    /// Linear drag −c·v per particle, N·s/m.
    pub air_drag: f64,
    pub cg_tolerance: f64,
    pub cg_max_iters: usize,
    /// Meters.
    pub collision_epsilon: f64,
    /// Fraction of tangential velocity removed on contact.
    pub friction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            timestep: 1.0 / 60.0,
            gravity: Vector3::new(0.0, 0.0, -9.81),
            air_drag: 0.0,
            cg_tolerance: 1e-6,
            cg_max_iters: 500,
            collision_epsilon: 1e-3,
            friction: 0.2,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ClothError::Config(msg.to_string()));
        if !(self.timestep > 0.0 && self.timestep.is_finite()) {
            return bad("timestep must be positive");
        }
        if !(self.cg_tolerance > 0.0) || self.cg_max_iters == 0 {
            return bad("solver tolerance and iteration limit must be positive");
        }
        if !(self.collision_epsilon > 0.0) {
            return bad("collision_epsilon must be positive");
        }
        if !(0.0..=1.0).contains(&self.friction) {
            return bad("friction must lie in [0, 1]");
        }
        if self.air_drag < 0.0 || !self.gravity.iter().all(|g| g.is_finite()) {
            return bad("air_drag must be non-negative and gravity finite");
        }
        Ok(())
    }
}
