//! Implicit Euler stepping with a filtered, block-Jacobi preconditioned CG solve.

use super::forces::{internal_forces, spring_blocks};
use super::{resolve_collisions, CapsuleSet, ClothError, ClothState, Result, SimConfig};
use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

/// Speed below which a drape counts as settled, m/s.
pub const REST_SPEED: f64 = 1e-4;
/// Speed treated as a blow-up, m/s.
const DIVERGED_SPEED: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepStats {
    pub cg_iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn filter(v: &mut [Vector3<f64>], pinned: &[bool]) {
    for (x, &p) in v.iter_mut().zip(pinned) {
        if p {
            *x = Vector3::zeros();
        }
    }
}

/// `A = diag(a_i)·I + Σ_k S_k` in the spring-block layout.
struct System {
    diag: Vec<f64>,
    springs: Vec<(usize, usize, Matrix3<f64>)>,
    precond: Vec<Matrix3<f64>>,
}

impl System {
    fn apply(&self, p: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let mut out: Vec<Vector3<f64>> = p.iter().zip(&self.diag).map(|(x, a)| x * *a).collect();
        for (i, j, s) in &self.springs {
            let y = s * (p[*i] - p[*j]);
            out[*i] += y;
            out[*j] -= y;
        }
        out
    }

    fn precondition(&self, r: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        r.iter().zip(&self.precond).map(|(x, m)| m * x).collect()
    }
}

/// Solves `A x = b` on the unpinned subspace. Returns (x, iterations, relative residual).
fn filtered_pcg(sys: &System, b: &[Vector3<f64>], pinned: &[bool], cfg: &SimConfig) -> Result<(Vec<Vector3<f64>>, usize, f64)> {
    let n = b.len();
    let mut x = vec![Vector3::zeros(); n];
    let mut r = b.to_vec();
    filter(&mut r, pinned);
    let b_norm = dot(&r, &r).sqrt();
    if b_norm == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let mut z = sys.precondition(&r);
    filter(&mut z, pinned);
    let mut p = z.clone();
    let mut delta = dot(&r, &z);
    for it in 1..=cfg.cg_max_iters {
        let mut q = sys.apply(&p);
        filter(&mut q, pinned);
        let alpha = delta / dot(&p, &q);
        for k in 0..n {
            x[k] += p[k] * alpha;
            r[k] -= q[k] * alpha;
        }
        let residual = dot(&r, &r).sqrt() / b_norm;
        if !residual.is_finite() {
            return Err(ClothError::Solver { iterations: it, residual });
        }
        if residual <= cfg.cg_tolerance {
            return Ok((x, it, residual));
        }
        z = sys.precondition(&r);
        filter(&mut z, pinned);
        let delta_new = dot(&r, &z);
        let beta = delta_new / delta;
        delta = delta_new;
        for k in 0..n {
            p[k] = z[k] + p[k] * beta;
        }
    }
    Err(ClothError::Solver {
        iterations: cfg.cg_max_iters,
        residual: dot(&r, &r).sqrt() / b_norm,
    })
}

/// Advances the cloth by one implicit Euler step, then enforces pins and
/// resolves collisions.
///
/// Solves `(M − h·∂F/∂v − h²·∂F/∂x)·Δv = h·(F + h·∂F/∂x·v)`. Pinned particles
/// are given the velocity that carries them to their anchor and excluded from
/// the solve. Drag terms are treated implicitly.
pub fn step(state: &mut ClothState, colliders: &CapsuleSet, cfg: &SimConfig) -> Result<StepStats> {
    cfg.validate()?;
    state.validate()?;
    let h = cfg.timestep;
    let n = state.particle_count();
    let pinned = state.is_pinned();
    for pin in &state.pins {
        state.velocities[pin.particle] = (pin.anchor - state.positions[pin.particle]) / h;
    }

    let blocks = spring_blocks(state, true)?;
    let (f_int, _) = internal_forces(state)?;
    let drag: Vec<f64> = state.masses.iter().map(|m| cfg.air_drag + state.global_damping * m).collect();

    let mut dx_v = vec![Vector3::zeros(); n];
    for b in &blocks {
        let y = b.dx * (state.velocities[b.i] - state.velocities[b.j]);
        dx_v[b.i] += y;
        dx_v[b.j] -= y;
    }
    let rhs: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let f = f_int[i] + cfg.gravity * state.masses[i] - state.velocities[i] * drag[i];
            (f + dx_v[i] * h) * h
        })
        .collect();

    let diag: Vec<f64> = state.masses.iter().zip(&drag).map(|(m, c)| m + h * c).collect();
    let springs: Vec<(usize, usize, Matrix3<f64>)> =
        blocks.iter().map(|b| (b.i, b.j, -b.dv * h - b.dx * (h * h))).collect();
    let mut block_diag: Vec<Matrix3<f64>> = diag.iter().map(|a| Matrix3::identity() * *a).collect();
    for (i, j, s) in &springs {
        block_diag[*i] += s;
        block_diag[*j] += s;
    }
    let precond = block_diag
        .iter()
        .zip(&diag)
        .map(|(m, a)| m.try_inverse().unwrap_or_else(|| Matrix3::identity() / *a))
        .collect();
    let sys = System { diag, springs, precond };

    let (dv, iterations, residual) = filtered_pcg(&sys, &rhs, &pinned, cfg)?;
    for i in 0..n {
        state.velocities[i] += dv[i];
        state.positions[i] += state.velocities[i] * h;
    }
    for pin in &state.pins {
        state.positions[pin.particle] = pin.anchor;
    }
    resolve_collisions(state, colliders, cfg);
    if let Some(p) = (0..n).find(|&i| !(state.positions[i].iter().chain(state.velocities[i].iter()).all(|c| c.is_finite()))) {
        return Err(ClothError::NonFinite { particle: p });
    }
    Ok(StepStats {
        cg_iterations: iterations,
        relative_residual: residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DrapeOutcome {
    pub converged: bool,
    pub simulated_seconds: f64,
    pub steps: usize,
    pub max_speed: f64,
}

/// Steps until every particle is slower than 1e-4 m/s or `max_seconds` of
/// simulated time have passed.
pub fn drape(state: &mut ClothState, colliders: &CapsuleSet, cfg: &SimConfig, max_seconds: f64) -> Result<DrapeOutcome> {
    let mut steps = 0;
    loop {
        step(state, colliders, cfg)?;
        steps += 1;
        let time = steps as f64 * cfg.timestep;
        let max_speed = state.max_speed();
        if !(max_speed < DIVERGED_SPEED) {
            return Err(ClothError::Unstable { time, max_speed });
        }
        let converged = max_speed < REST_SPEED;
        if converged || time >= max_seconds {
            log::debug!("drape finished after {steps} steps, max speed {max_speed:e} m/s");
            return Ok(DrapeOutcome {
                converged,
                simulated_seconds: time,
                steps,
                max_speed,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloth_sim::{build_garment, GarmentPattern, Pin, Spring, SpringKind};

    fn free(n: usize, mass: f64) -> ClothState {
        ClothState {
            masses: vec![mass; n],
            positions: (0..n).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect(),
            velocities: vec![Vector3::zeros(); n],
            springs: vec![],
            pins: vec![],
            global_damping: 0.0,
            faces: vec![],
        }
    }

    #[test]
    fn free_particle_matches_closed_form() {
        let cfg = SimConfig::default();
        let mut s = free(1, 0.5);
        s.velocities[0] = Vector3::new(0.25, -1.0, 2.0);
        let (x0, v0) = (s.positions[0], s.velocities[0]);
        step(&mut s, &CapsuleSet::default(), &cfg).unwrap();
        let v1 = v0 + cfg.gravity * cfg.timestep;
        assert_eq!(s.velocities[0], v1);
        assert_eq!(s.positions[0], x0 + v1 * cfg.timestep);
    }

    #[test]
    fn pinned_particle_stays_put() {
        let mut s = free(1, 0.01);
        s.pins.push(Pin {
            particle: 0,
            anchor: s.positions[0],
            body_vertex: None,
            offset: Vector3::zeros(),
        });
        let x0 = s.positions[0];
        for _ in 0..10 {
            step(&mut s, &CapsuleSet::default(), &SimConfig::default()).unwrap();
            assert_eq!(s.positions[0], x0);
            assert_eq!(s.velocities[0], Vector3::zeros());
        }
    }

    fn two_particle(stretch: f64) -> ClothState {
        let mut s = free(2, 0.02);
        s.masses[1] = 0.05;
        s.positions[1] = Vector3::new(stretch, 0.1, 0.0);
        s.springs.push(Spring {
            i: 0,
            j: 1,
            rest_length: 1.0,
            stiffness: 200.0,
            damping: 0.05,
            kind: SpringKind::Stretch,
        });
        s
    }

    #[test]
    fn momentum_changes_only_by_external_impulse() {
        let cfg = SimConfig::default();
        let mut s = two_particle(1.3);
        s.velocities[0] = Vector3::new(0.3, 0.0, 0.1);
        for _ in 0..20 {
            let before = s.momentum();
            step(&mut s, &CapsuleSet::default(), &cfg).unwrap();
            let expected = cfg.gravity * s.total_mass() * cfg.timestep;
            assert!((s.momentum() - before - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn damped_oscillator_amplitude_decreases() {
        let cfg = SimConfig {
            gravity: Vector3::zeros(),
            ..SimConfig::default()
        };
        let mut s = two_particle(1.4);
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            step(&mut s, &CapsuleSet::default(), &cfg).unwrap();
            let amp = ((s.positions[1] - s.positions[0]).norm() - 1.0).abs();
            let energy = internal_forces(&s).unwrap().1 + s.kinetic_energy();
            assert!(energy <= last + 1e-12);
            last = energy;
            assert!(amp < 0.4 + 1e-12);
        }
    }

    #[test]
    fn zero_gravity_rest_cloth_converges_immediately() {
        let cfg = SimConfig {
            gravity: Vector3::zeros(),
            ..SimConfig::default()
        };
        let mut s = build_garment(&GarmentPattern::pinned_square(6, 0.05, Vector3::zeros())).unwrap();
        let before = s.positions.clone();
        let out = drape(&mut s, &CapsuleSet::default(), &cfg, 1.0).unwrap();
        assert!(out.converged);
        assert_eq!(out.steps, 1);
        // grid coordinates carry rounding, so rest lengths are met only to a few ulps
        for (a, b) in s.positions.iter().zip(&before) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn solver_failure_is_reported() {
        let cfg = SimConfig {
            cg_max_iters: 1,
            cg_tolerance: 1e-14,
            ..SimConfig::default()
        };
        let mut s = build_garment(&GarmentPattern::pinned_square(6, 0.05, Vector3::zeros())).unwrap();
        assert!(matches!(step(&mut s, &CapsuleSet::default(), &cfg), Err(ClothError::Solver { .. })));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = SimConfig {
            timestep: 0.0,
            ..SimConfig::default()
        };
        assert!(matches!(step(&mut free(1, 1.0), &CapsuleSet::default(), &cfg), Err(ClothError::Config(_))));
    }
}
