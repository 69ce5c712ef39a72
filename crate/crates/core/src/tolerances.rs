//! Numeric tolerances shared across the crate.

/// Every tolerance used by the geometry and initialization code lives here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Max deviation of RᵀR from I and of det R from 1 for a valid pose.
    pub rotation_orthonormality: f64,
    /// Relative asymmetry allowed in conic and quadric matrices.
    pub symmetry: f64,
    /// Ellipse test: det of the upper-left 2×2 block must exceed this times its squared norm.
    pub ellipse_determinant: f64,
    /// Slack (pixels) when deciding whether a candidate point lies on the image.
    pub image_bounds_slack: f64,
    /// Discriminants above `-discriminant_slack * scale` are clamped to zero.
    pub discriminant_slack: f64,
    /// Two smallest singular values closer than this flag a non-unique solution.
    pub singular_gap: f64,
    /// Minimum positive depth (scene units) for a centroid to count as in front.
    pub min_depth: f64,
    /// Max deviation of a quaternion norm from 1 accepted on read.
    pub quaternion_norm: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        rotation_orthonormality: 1e-9,
        symmetry: 1e-9,
        ellipse_determinant: 1e-12,
        image_bounds_slack: 1e-9,
        discriminant_slack: 1e-12,
        singular_gap: 1e-9,
        min_depth: 0.0,
        quaternion_norm: 1e-6,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}
