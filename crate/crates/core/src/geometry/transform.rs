use nalgebra::{Matrix3, Rotation3, UnitQuaternion};

use super::Vec3;

/// Rigid transform: `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation: Rotation3<f64>,
    pub translation: Vec3,
}

impl Default for Transform {
    fn default() -> Self {
        Transform::identity()
    }
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Euler angles are extrinsic XYZ in radians: `R = Rz(ez) * Ry(ey) * Rx(ex)`.
    pub fn from_pos_euler(pos: Vec3, euler: Vec3) -> Self {
        Transform {
            rotation: rotation_from_euler(&euler),
            translation: pos,
        }
    }

    pub fn euler(&self) -> Vec3 {
        let (r, p, y) = self.rotation.euler_angles();
        Vec3::new(r, p, y)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Transform {
        let rinv = self.rotation.inverse();
        Transform {
            rotation: rinv,
            translation: -(rinv * self.translation),
        }
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Transform) -> Transform {
        Transform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.rotation.matrix()
    }

    /// Linear position, spherical-linear orientation.
    pub fn interpolate(&self, other: &Transform, t: f64) -> Transform {
        let qa = UnitQuaternion::from_rotation_matrix(&self.rotation);
        let qb = UnitQuaternion::from_rotation_matrix(&other.rotation);
        let q = qa.try_slerp(&qb, t, 1e-12).unwrap_or(if t < 0.5 { qa } else { qb });
        Transform {
            rotation: q.to_rotation_matrix(),
            translation: self.translation.lerp(&other.translation, t),
        }
    }

    /// Rotation angle between two orientations, radians.
    pub fn angle_to(&self, other: &Transform) -> f64 {
        (self.rotation.inverse() * other.rotation).angle()
    }
}

pub fn rotation_from_euler(euler: &Vec3) -> Rotation3<f64> {
    Rotation3::from_euler_angles(euler.x, euler.y, euler.z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euler_is_extrinsic_xyz() {
        let e = Vec3::new(0.3, -0.2, 1.1);
        let r = rotation_from_euler(&e);
        let rx = Rotation3::from_axis_angle(&Vec3::x_axis(), e.x);
        let ry = Rotation3::from_axis_angle(&Vec3::y_axis(), e.y);
        let rz = Rotation3::from_axis_angle(&Vec3::z_axis(), e.z);
        let expect = rz * ry * rx;
        assert!((r.matrix() - expect.matrix()).norm() < 1e-12);
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_and_compose() {
        let t = Transform::from_pos_euler(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.4, 0.5, 0.6));
        let id = t.compose(&t.inverse());
        assert!((id.translation).norm() < 1e-12);
        assert!(id.rotation.angle() < 1e-12);
        let p = Vec3::new(1.0, -2.0, 0.5);
        assert!((t.inverse().apply(&t.apply(&p)) - p).norm() < 1e-12);
    }
}
