use nalgebra::Matrix3;

/// Rotation matrix of a unit `(w, x, y, z)` quaternion.
pub fn quat_to_matrix(q: [f32; 4]) -> Matrix3<f32> {
    let [w, x, y, z] = q;
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

/// Larger eigenvalue of the symmetric matrix `[[a, b], [b, c]]`.
pub fn sym2_max_eigenvalue(a: f32, b: f32, c: f32) -> f32 {
    let mid = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    mid + (half_diff * half_diff + b * b).sqrt()
}
