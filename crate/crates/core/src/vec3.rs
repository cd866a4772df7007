//! Small vector helpers shared by the geometric and kernel code.

pub type Vec3 = nalgebra::Vector3<f64>;

/// Builds a vector from components.
#[inline]
pub fn v3(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}
