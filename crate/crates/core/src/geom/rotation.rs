use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

/// Rotation about the x axis by `a` radians.
pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotation about the y axis by `a` radians.
pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the z axis by `a` radians.
pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Euler-angle rotation `R = Rz(θz) · Ry(θy) · Rx(θx)`.
pub fn rotation_matrix(theta: &Vector3<f64>) -> Matrix3<f64> {
    rot_z(theta.z) * rot_y(theta.y) * rot_x(theta.x)
}

/// Partial derivatives `∂R/∂θx`, `∂R/∂θy`, `∂R/∂θz` of [`rotation_matrix`].
pub fn rotation_jacobian(theta: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (rx, ry, rz) = (rot_x(theta.x), rot_y(theta.y), rot_z(theta.z));
    [
        rz * ry * drot_x(theta.x),
        rz * drot_y(theta.y) * rx,
        drot_z(theta.z) * ry * rx,
    ]
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid can land exactly on -π after the shift for inputs like 3π
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_rotation_is_identity() {
        let r = rotation_matrix(&Vector3::zeros());
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_x() {
        let r = rotation_matrix(&Vector3::new(FRAC_PI_2, 0.0, 0.0));
        let v = r * Vector3::new(0.0, 1.0, 0.0);
        assert!((v - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn matches_axis_products_and_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let t = Vector3::new(
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
            );
            let r = rotation_matrix(&t);
            // independently composed: apply x, then y, then z to basis vectors
            for j in 0..3 {
                let mut e = Vector3::zeros();
                e[j] = 1.0;
                let v = rot_z(t.z) * (rot_y(t.y) * (rot_x(t.x) * e));
                for i in 0..3 {
                    assert!((r[(i, j)] - v[i]).abs() < 1e-12);
                }
            }
            assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let t = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let jac = rotation_jacobian(&t);
            for k in 0..3 {
                let h = 1e-6;
                let mut tp = t;
                let mut tm = t;
                tp[k] += h;
                tm[k] -= h;
                let fd = (rotation_matrix(&tp) - rotation_matrix(&tm)) / (2.0 * h);
                assert!((fd - jac[k]).abs().max() < 1e-8);
            }
        }
    }

    #[test]
    fn wrap_lands_in_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.25 + 4.0 * PI) - 0.25).abs() < 1e-12);
        assert!((wrap_angle(-0.25 - 2.0 * PI) + 0.25).abs() < 1e-12);
    }
}
