//! Spring forces, energy and their analytic Jacobians.

use super::{ClothError, ClothState, Result, Spring};
use nalgebra::{DMatrix, Matrix3, Vector3};
use rayon::prelude::*;

const MIN_SPRING_LENGTH: f64 = 1e-9;

/// Unit direction and length of spring `k`, or a degenerate-edge error.
fn geometry(state: &ClothState, k: usize, s: &Spring) -> Result<(Vector3<f64>, f64)> {
    let d = state.positions[s.i] - state.positions[s.j];
    let l = d.norm();
    if !(l >= MIN_SPRING_LENGTH) {
        return Err(ClothError::DegenerateSpring { spring: k, i: s.i, j: s.j });
    }
    Ok((d / l, l))
}

/// Internal spring forces (elastic plus spring damping) and elastic energy.
/// Gravity and drag are not included.
pub fn internal_forces(state: &ClothState) -> Result<(Vec<Vector3<f64>>, f64)> {
    let per_spring: Vec<(Vector3<f64>, f64)> = state
        .springs
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let (u, l) = geometry(state, k, s)?;
            let stretch = l - s.rest_length;
            let rel = state.velocities[s.i] - state.velocities[s.j];
            let f = -u * (s.stiffness * stretch + s.damping * rel.dot(&u));
            Ok((f, 0.5 * s.stiffness * stretch * stretch))
        })
        .collect::<Result<_>>()?;
    let mut forces = vec![Vector3::zeros(); state.particle_count()];
    let mut energy = 0.0;
    for (s, (f, e)) in state.springs.iter().zip(per_spring) {
        forces[s.i] += f;
        forces[s.j] -= f;
        energy += e;
    }
    Ok((forces, energy))
}

/// Per-spring 3×3 blocks. Block `B` contributes `+B` to (i,i) and (j,j) and
/// `−B` to (i,j) and (j,i) of the global matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpringBlock {
    pub i: usize,
    pub j: usize,
    pub dx: Matrix3<f64>,
    pub dv: Matrix3<f64>,
}

/// Sparse ∂F/∂x and ∂F/∂v of the internal forces.
///
/// The damping force's dependence on position is not included; it vanishes
/// at zero relative velocity and would make ∂F/∂x non-symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceJacobians {
    pub particle_count: usize,
    pub blocks: Vec<SpringBlock>,
}

fn apply(blocks: &[SpringBlock], n: usize, x: &[Vector3<f64>], pick: fn(&SpringBlock) -> &Matrix3<f64>) -> Vec<Vector3<f64>> {
    let mut out = vec![Vector3::zeros(); n];
    for b in blocks {
        let y = pick(b) * (x[b.i] - x[b.j]);
        out[b.i] += y;
        out[b.j] -= y;
    }
    out
}

fn dense(blocks: &[SpringBlock], n: usize, pick: fn(&SpringBlock) -> &Matrix3<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(3 * n, 3 * n);
    for b in blocks {
        let k = pick(b);
        for (r, c, sign) in [(b.i, b.i, 1.0), (b.j, b.j, 1.0), (b.i, b.j, -1.0), (b.j, b.i, -1.0)] {
            let mut view = m.fixed_view_mut::<3, 3>(3 * r, 3 * c);
            view += k * sign;
        }
    }
    m
}

impl ForceJacobians {
    pub fn apply_dx(&self, x: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        apply(&self.blocks, self.particle_count, x, |b| &b.dx)
    }

    pub fn apply_dv(&self, v: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        apply(&self.blocks, self.particle_count, v, |b| &b.dv)
    }

    pub fn dense_dx(&self) -> DMatrix<f64> {
        dense(&self.blocks, self.particle_count, |b| &b.dx)
    }

    pub fn dense_dv(&self) -> DMatrix<f64> {
        dense(&self.blocks, self.particle_count, |b| &b.dv)
    }
}

/// Spring blocks; with `clamp_compression` the transverse term of compressed
/// springs is dropped so that −∂F/∂x stays positive semidefinite.
pub(super) fn spring_blocks(state: &ClothState, clamp_compression: bool) -> Result<Vec<SpringBlock>> {
    state
        .springs
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let (u, l) = geometry(state, k, s)?;
            let uu = u * u.transpose();
            let mut transverse = 1.0 - s.rest_length / l;
            if clamp_compression {
                transverse = transverse.max(0.0);
            }
            let dx = -(uu + (Matrix3::identity() - uu) * transverse) * s.stiffness;
            let dv = -uu * s.damping;
            Ok(SpringBlock { i: s.i, j: s.j, dx, dv })
        })
        .collect()
}

pub fn force_jacobians(state: &ClothState) -> Result<ForceJacobians> {
    Ok(ForceJacobians {
        particle_count: state.particle_count(),
        blocks: spring_blocks(state, false)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloth_sim::SpringKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spring(i: usize, j: usize, rest: f64, k: f64, d: f64) -> Spring {
        Spring {
            i,
            j,
            rest_length: rest,
            stiffness: k,
            damping: d,
            kind: SpringKind::Stretch,
        }
    }

    fn state(positions: Vec<Vector3<f64>>, springs: Vec<Spring>) -> ClothState {
        let n = positions.len();
        ClothState {
            masses: vec![1.0; n],
            velocities: vec![Vector3::zeros(); n],
            positions,
            springs,
            pins: vec![],
            global_damping: 0.0,
            faces: vec![],
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, damping: f64) -> ClothState {
        let n = 6;
        let positions = (0..n)
            .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let mut springs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.6) {
                    springs.push(spring(i, j, rng.gen_range(0.2..1.5), rng.gen_range(1.0..100.0), damping));
                }
            }
        }
        let mut s = state(positions, springs);
        for v in &mut s.velocities {
            *v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        s
    }

    #[test]
    fn rest_state_has_no_force() {
        let s = state(vec![Vector3::zeros(), Vector3::x() * 0.3], vec![spring(0, 1, 0.3, 50.0, 1.0)]);
        let (f, e) = internal_forces(&s).unwrap();
        assert_eq!(e, 0.0);
        assert!(f.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn hooke_single_spring() {
        let s = state(vec![Vector3::zeros(), Vector3::x() * 1.25], vec![spring(0, 1, 1.0, 40.0, 0.0)]);
        let (f, e) = internal_forces(&s).unwrap();
        assert!((f[0] - Vector3::x() * 10.0).norm() < 1e-12);
        assert!((f[0] + f[1]).norm() == 0.0);
        assert!((e - 0.5 * 40.0 * 0.0625).abs() < 1e-12);
    }

    #[test]
    fn coincident_endpoints_are_reported() {
        let s = state(vec![Vector3::zeros(), Vector3::zeros()], vec![spring(0, 1, 1.0, 1.0, 0.0)]);
        assert!(matches!(internal_forces(&s), Err(ClothError::DegenerateSpring { spring: 0, .. })));
        assert!(force_jacobians(&s).is_err());
    }

    #[test]
    fn forces_are_negative_energy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let s = random_state(&mut rng, 0.0);
            let (f, _) = internal_forces(&s).unwrap();
            let h = 1e-6;
            for p in 0..s.particle_count() {
                for c in 0..3 {
                    let mut plus = s.clone();
                    plus.positions[p][c] += h;
                    let mut minus = s.clone();
                    minus.positions[p][c] -= h;
                    let grad = (internal_forces(&plus).unwrap().1 - internal_forces(&minus).unwrap().1) / (2.0 * h);
                    let scale = f[p][c].abs().max(1.0);
                    assert!((f[p][c] + grad).abs() / scale < 1e-5, "{} vs {}", f[p][c], -grad);
                }
            }
        }
    }

    #[test]
    fn internal_forces_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let (f, _) = internal_forces(&random_state(&mut rng, 0.7)).unwrap();
            assert!(f.iter().sum::<Vector3<f64>>().norm() < 1e-9);
        }
    }

    #[test]
    fn rest_jacobian_is_projector() {
        let d = Vector3::new(1.0, 2.0, -0.5).normalize();
        let s = state(vec![Vector3::zeros(), d * 0.4], vec![spring(0, 1, 0.4, 30.0, 0.0)]);
        let jac = force_jacobians(&s).unwrap();
        let expected = -(d * d.transpose()) * 30.0;
        assert!((jac.blocks[0].dx - expected).norm() < 1e-12);
    }

    #[test]
    fn directional_derivatives_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let mut s = random_state(&mut rng, 0.0);
            s.velocities.iter_mut().for_each(|v| *v = Vector3::zeros());
            let jac = force_jacobians(&s).unwrap();
            let dir: Vec<Vector3<f64>> = (0..s.particle_count())
                .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let eps = 1e-6;
            let shifted = |sign: f64| {
                let mut t = s.clone();
                for (p, d) in t.positions.iter_mut().zip(&dir) {
                    *p += d * (sign * eps);
                }
                internal_forces(&t).unwrap().0
            };
            let (fp, fm) = (shifted(1.0), shifted(-1.0));
            let predicted = jac.apply_dx(&dir);
            let num: f64 = (0..dir.len()).map(|p| ((fp[p] - fm[p]) / (2.0 * eps) - predicted[p]).norm_squared()).sum();
            let den: f64 = predicted.iter().map(|v| v.norm_squared()).sum();
            assert!((num / den).sqrt() < 1e-4);
        }
    }

    #[test]
    fn velocity_jacobian_matches_damping() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let s = random_state(&mut rng, 0.8);
        let jac = force_jacobians(&s).unwrap();
        let dir: Vec<Vector3<f64>> = (0..s.particle_count()).map(|p| Vector3::new(p as f64, 1.0, -0.5)).collect();
        let mut t = s.clone();
        for (v, d) in t.velocities.iter_mut().zip(&dir) {
            *v += d;
        }
        // damping is linear in velocity, so the difference is exact
        let (f0, f1) = (internal_forces(&s).unwrap().0, internal_forces(&t).unwrap().0);
        let predicted = jac.apply_dv(&dir);
        for p in 0..dir.len() {
            assert!((f1[p] - f0[p] - predicted[p]).norm() < 1e-10);
        }
    }

    #[test]
    fn jacobians_symmetric_and_damping_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let s = random_state(&mut rng, 0.5);
        let jac = force_jacobians(&s).unwrap();
        let dx = jac.dense_dx();
        assert!((&dx - dx.transpose()).norm() < 1e-12);
        let dv = jac.dense_dv();
        assert!((&dv - dv.transpose()).norm() < 1e-12);
        let eig = dv.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e <= 1e-12), "{eig}");
    }

    #[test]
    fn clamped_blocks_are_semidefinite() {
        // compressed spring: the exact block has a positive transverse part
        let s = state(vec![Vector3::zeros(), Vector3::x() * 0.5], vec![spring(0, 1, 1.0, 10.0, 0.0)]);
        let exact = spring_blocks(&s, false).unwrap()[0].dx;
        let clamped = spring_blocks(&s, true).unwrap()[0].dx;
        assert!(exact.symmetric_eigen().eigenvalues.max() > 0.0);
        assert!(clamped.symmetric_eigen().eigenvalues.max() <= 1e-12);
    }
}
