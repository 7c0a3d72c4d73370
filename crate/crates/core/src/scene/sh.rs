//! Real spherical harmonics through degree 3, with the basis constants and sign
//! conventions of the reference 3DGS rasterizer.

use super::SH_COEFFS;

pub const SH_C0: f32 = 0.282_094_8;
pub const SH_C1: f32 = 0.488_602_5;
pub const SH_C2: [f32; 5] = [
    1.092_548_4,
    -1.092_548_4,
    0.315_391_57,
    -1.092_548_4,
    0.546_274_2,
];
pub const SH_C3: [f32; 7] = [
    -0.590_043_6,
    2.890_611_4,
    -0.457_045_8,
    0.373_176_33,
    -0.457_045_8,
    1.445_305_7,
    -0.590_043_6,
];

/// View-dependent color of one Gaussian, `clamp(0.5 + sum_k c_k * Y_k(dir), 0, 1)`.
///
/// `dir` must be unit length; it points from the camera toward the Gaussian.
pub fn evaluate_sh(sh: &[[f32; 3]; SH_COEFFS], dir: [f32; 3]) -> [f32; 3] {
    let [x, y, z] = dir;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);

    let basis: [f32; SH_COEFFS] = [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * xy,
        SH_C2[1] * yz,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * xz,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * xy * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ];

    let mut rgb = [0.5f32; 3];
    for (coeff, b) in sh.iter().zip(basis) {
        for c in 0..3 {
            rgb[c] += b * coeff[c];
        }
    }
    rgb.map(|v| v.clamp(0.0, 1.0))
}
