use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use std::f64::consts::{PI, TAU};

/// Below this angle the trigonometric coefficients switch to their Taylor series.
const SMALL_ANGLE: f64 = 1e-4;

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Coefficients of `R = I + a·K + b·K²` with `K = [ω]×` (unnormalised),
/// `a = sin x / x`, `b = (1 − cos x) / x²`, `x = |ω|`, together with
/// `a'(x)/x` and `b'(x)/x` used by the derivative.
fn coefficients(x: f64) -> (f64, f64, f64, f64) {
    if x < SMALL_ANGLE {
        let x2 = x * x;
        let a = 1.0 - x2 / 6.0 + x2 * x2 / 120.0;
        let b = 0.5 - x2 / 24.0 + x2 * x2 / 720.0;
        let da = -1.0 / 3.0 + x2 / 30.0;
        let db = -1.0 / 12.0 + x2 / 180.0;
        (a, b, da, db)
    } else {
        let (s, c) = x.sin_cos();
        let x2 = x * x;
        let a = s / x;
        let b = (1.0 - c) / x2;
        let da = (x * c - s) / (x2 * x);
        let db = (x * s - 2.0 * (1.0 - c)) / (x2 * x2);
        (a, b, da, db)
    }
}

/// Rotation matrix of an axis-angle vector (angle = norm, axis = direction).
///
/// The zero vector maps to the exact identity.
pub fn rodrigues(axis_angle: &Vector3<f64>) -> Matrix3<f64> {
    if *axis_angle == Vector3::zeros() {
        return Matrix3::identity();
    }
    let (a, b, _, _) = coefficients(axis_angle.norm());
    let k = skew(axis_angle);
    Matrix3::identity() + k * a + k * k * b
}

/// Partial derivatives `∂R/∂ω_k` for k = 0, 1, 2.
pub fn rodrigues_derivatives(axis_angle: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let x = axis_angle.norm();
    let (a, b, da, db) = coefficients(x);
    let k = skew(axis_angle);
    let k2 = k * k;
    std::array::from_fn(|i| {
        let mut e = Vector3::zeros();
        e[i] = 1.0;
        let ek = skew(&e);
        k * (da * axis_angle[i]) + ek * a + k2 * (db * axis_angle[i]) + (ek * k + k * ek) * b
    })
}

/// Backpropagates `dL/dR` through [`rodrigues`] to `dL/dω`.
pub fn rodrigues_backward(axis_angle: &Vector3<f64>, grad_rotation: &Matrix3<f64>) -> Vector3<f64> {
    let d = rodrigues_derivatives(axis_angle);
    Vector3::new(
        d[0].component_mul(grad_rotation).sum(),
        d[1].component_mul(grad_rotation).sum(),
        d[2].component_mul(grad_rotation).sum(),
    )
}

/// Maps an axis-angle vector to the equivalent one with magnitude in `[0, π]`.
///
/// Vectors already inside the range are returned bit-for-bit unchanged.
pub fn normalize_axis_angle(v: &Vector3<f64>) -> Vector3<f64> {
    let angle = v.norm();
    if angle <= PI || !angle.is_finite() {
        return *v;
    }
    let axis = v / angle;
    let wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        -axis * (TAU - wrapped)
    } else {
        axis * wrapped
    }
}

/// Axis-angle vector of a rotation matrix, magnitude in `[0, π]`. Stable at
/// half turns, where the skew-symmetric part vanishes.
pub fn axis_angle_from_matrix(r: &Matrix3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    normalize_axis_angle(&q.scaled_axis())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent route: unit quaternion to rotation matrix.
    fn quaternion_rotation(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
        let (s, c) = (angle / 2.0).sin_cos();
        let (w, x, y, z) = (c, axis.x * s, axis.y * s, axis.z * s);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    #[test]
    fn zero_is_identity() {
        assert_eq!(rodrigues(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rodrigues(&Vector3::new(0.0, 0.0, PI / 2.0));
        assert_relative_eq!(r * Vector3::x(), Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let axis = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                .normalize();
            let r = rodrigues(&(axis * 0.7));
            assert_relative_eq!(r, quaternion_rotation(axis, 0.7), epsilon = 1e-12);
        }
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
        for angle in [1e-9, 1e-6, 0.9e-4, 1.1e-4, 1e-3] {
            let r = rodrigues(&(axis * angle));
            assert_relative_eq!(r, quaternion_rotation(axis, angle), epsilon = 1e-15);
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for scale in [1e-6, 1e-3, 0.5, 2.0, 3.0] {
            let w = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                .normalize()
                * scale;
            let d = rodrigues_derivatives(&w);
            for k in 0..3 {
                let h = 1e-6;
                let mut wp = w;
                let mut wm = w;
                wp[k] += h;
                wm[k] -= h;
                let fd = (rodrigues(&wp) - rodrigues(&wm)) / (2.0 * h);
                assert_relative_eq!(d[k], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn normalization_keeps_rotation() {
        let v = Vector3::new(0.0, 0.0, 1.5 * PI);
        let n = normalize_axis_angle(&v);
        assert!(n.norm() <= PI);
        assert_relative_eq!(rodrigues(&n), rodrigues(&v), epsilon = 1e-12);
        let inside = Vector3::new(0.1, 0.2, 0.3);
        assert_eq!(normalize_axis_angle(&inside), inside);
    }

    #[test]
    fn matrix_to_axis_angle_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let w = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let w = normalize_axis_angle(&w);
            assert_relative_eq!(rodrigues(&axis_angle_from_matrix(&rodrigues(&w))), rodrigues(&w), epsilon = 1e-10);
        }
        // half turns
        for axis in [Vector3::x(), Vector3::z(), Vector3::new(1.0, -1.0, 0.5).normalize()] {
            let r = rodrigues(&(axis * PI));
            let back = axis_angle_from_matrix(&r);
            assert!((back.norm() - PI).abs() < 1e-9);
            assert_relative_eq!(rodrigues(&back), r, epsilon = 1e-10);
        }
        assert_eq!(axis_angle_from_matrix(&Matrix3::identity()), Vector3::zeros());
    }
}
