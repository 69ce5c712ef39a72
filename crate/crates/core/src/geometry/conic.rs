//! Conics in the image plane and the on-image bounding box of an ellipse.
//!
//! A point conic `C` holds points with `pᵀCp = 0`; its dual `C*` holds the
//! tangent lines, `lᵀC*l = 0`. The two are adjugates of one another up to scale.

use nalgebra::{Matrix3, Vector3};

use super::{BoundingBox, CameraIntrinsics, GeometryError};
use crate::tolerances::Tolerances;

/// Adjugate (transposed cofactor matrix): `M · adj(M) = det(M) · I`.
pub fn adjugate3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| {
        m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)]
    };
    Matrix3::new(
        c(1, 2, 1, 2),
        -c(0, 2, 1, 2),
        c(0, 1, 1, 2),
        -c(1, 2, 0, 2),
        c(0, 2, 0, 2),
        -c(0, 1, 0, 2),
        c(1, 2, 0, 1),
        -c(0, 2, 0, 1),
        c(0, 1, 0, 1),
    )
}

/// Dual conic `C*`, the envelope of tangent lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualConic {
    pub cstar: Matrix3<f64>,
}

impl DualConic {
    pub fn new(cstar: Matrix3<f64>) -> Self {
        Self {
            cstar: (cstar + cstar.transpose()) * 0.5,
        }
    }

    /// Primal conic via the adjugate.
    pub fn primal(&self) -> Conic {
        Conic::new(adjugate3(&self.cstar))
    }

    /// `lᵀC*l` with both sides unit-normalized (Frobenius for `C*`).
    pub fn tangency(&self, l: &Vector3<f64>) -> f64 {
        let n = self.cstar.norm();
        l.normalize().dot(&(self.cstar / n * l.normalize()))
    }
}

/// Primal conic `C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic {
    pub c: Matrix3<f64>,
}

/// Real roots of `a x² + 2 b x + c = 0`. A double root is returned once.
fn half_quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let slack = Tolerances::DEFAULT.discriminant_slack;
    let scale = b * b + (a * c).abs();
    if a == 0.0 {
        return if b != 0.0 { vec![-c / (2.0 * b)] } else { vec![] };
    }
    let disc = b * b - a * c;
    if disc < -slack * scale {
        return vec![];
    }
    if disc <= slack * scale {
        return vec![-b / a];
    }
    // q = -(b + sign(b)·√disc) avoids cancellation
    let q = -(b + b.signum() * disc.sqrt());
    if q == 0.0 {
        let r = (-c / a).sqrt();
        return vec![-r, r];
    }
    let mut roots = vec![q / a, c / q];
    roots.sort_by(|x, y| x.total_cmp(y));
    roots
}

impl Conic {
    pub fn new(c: Matrix3<f64>) -> Self {
        Self {
            c: (c + c.transpose()) * 0.5,
        }
    }

    /// `pᵀCp` for the pixel `(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let p = Vector3::new(x, y, 1.0);
        p.dot(&(self.c * p))
    }

    /// Unit Frobenius norm with the sign chosen so the interior is negative.
    ///
    /// Fails with [`GeometryError::NotAnEllipse`] for hyperbolas, parabolas and
    /// degenerate or imaginary ellipses.
    pub fn normalized_ellipse(&self) -> Result<Conic, GeometryError> {
        let n = self.c.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::NotAnEllipse);
        }
        let mut c = self.c / n;
        let det2 = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(0, 1)];
        let block2 = c[(0, 0)].powi(2) + 2.0 * c[(0, 1)].powi(2) + c[(1, 1)].powi(2);
        if det2 <= Tolerances::DEFAULT.ellipse_determinant * block2 {
            return Err(GeometryError::NotAnEllipse);
        }
        if c[(0, 0)] < 0.0 {
            c = -c;
        }
        let conic = Conic { c };
        let (cx, cy) = conic.center_unchecked(det2);
        if conic.eval(cx, cy) >= 0.0 {
            return Err(GeometryError::NotAnEllipse);
        }
        Ok(conic)
    }

    fn center_unchecked(&self, det2: f64) -> (f64, f64) {
        let c = &self.c;
        // solve [c00 c01; c01 c11] [x y]ᵀ = -[c02 c12]ᵀ
        let x = (-c[(0, 2)] * c[(1, 1)] + c[(1, 2)] * c[(0, 1)]) / det2;
        let y = (-c[(1, 2)] * c[(0, 0)] + c[(0, 2)] * c[(0, 1)]) / det2;
        (x, y)
    }

    pub fn is_ellipse(&self) -> bool {
        self.normalized_ellipse().is_ok()
    }

    pub fn center(&self) -> Result<(f64, f64), GeometryError> {
        let c = self.normalized_ellipse()?;
        let det2 = c.c[(0, 0)] * c.c[(1, 1)] - c.c[(0, 1)] * c.c[(0, 1)];
        Ok(c.center_unchecked(det2))
    }

    /// The points of extremal `x` and `y` on the ellipse, ordered
    /// `[x_min, x_max, y_min, y_max]`.
    ///
    /// Extremal coordinates come from the axis-aligned tangent lines of the
    /// dual conic; the other coordinate is the double root on that line.
    pub fn extrema_points(&self) -> Result<[(f64, f64); 4], GeometryError> {
        self.normalized_ellipse()?.extrema_of_normalized()
    }

    fn extrema_of_normalized(&self) -> Result<[(f64, f64); 4], GeometryError> {
        let c = &self.c;
        let d = adjugate3(c);
        // l = (1, 0, -x): d22 x² - 2 d02 x + d00 = 0
        let xs = half_quadratic_roots(d[(2, 2)], -d[(0, 2)], d[(0, 0)]);
        let ys = half_quadratic_roots(d[(2, 2)], -d[(1, 2)], d[(1, 1)]);
        let (x_lo, x_hi) = bounds_of(&xs).ok_or(GeometryError::NotAnEllipse)?;
        let (y_lo, y_hi) = bounds_of(&ys).ok_or(GeometryError::NotAnEllipse)?;
        let y_at = |x: f64| -(c[(0, 1)] * x + c[(1, 2)]) / c[(1, 1)];
        let x_at = |y: f64| -(c[(0, 1)] * y + c[(0, 2)]) / c[(0, 0)];
        Ok([
            (x_lo, y_at(x_lo)),
            (x_hi, y_at(x_hi)),
            (x_at(y_lo), y_lo),
            (x_at(y_hi), y_hi),
        ])
    }

    /// Real intersections with the four border lines `x = 0`, `y = 0`,
    /// `x = width`, `y = height`. Points are not filtered by image bounds.
    pub fn border_intersections(&self, k: &CameraIntrinsics) -> Vec<(f64, f64)> {
        let n = self.c.norm();
        if !(n > 0.0 && n.is_finite()) {
            return vec![];
        }
        let c = self.c / n;
        let mut out = Vec::with_capacity(8);
        for x0 in [0.0, k.width] {
            let a = c[(1, 1)];
            let b = c[(0, 1)] * x0 + c[(1, 2)];
            let cc = c[(0, 0)] * x0 * x0 + 2.0 * c[(0, 2)] * x0 + c[(2, 2)];
            out.extend(half_quadratic_roots(a, b, cc).into_iter().map(|y| (x0, y)));
        }
        for y0 in [0.0, k.height] {
            let a = c[(0, 0)];
            let b = c[(0, 1)] * y0 + c[(0, 2)];
            let cc = c[(1, 1)] * y0 * y0 + 2.0 * c[(1, 2)] * y0 + c[(2, 2)];
            out.extend(half_quadratic_roots(a, b, cc).into_iter().map(|x| (x, y0)));
        }
        out
    }

    /// Box around the whole ellipse, ignoring the image.
    pub fn bounds(&self) -> Result<BoundingBox, GeometryError> {
        let e = self.extrema_points()?;
        BoundingBox::new(e[0].0, e[2].1, e[1].0, e[3].1)
    }

    /// Smallest axis-aligned box around the part of the ellipse inside the image.
    ///
    /// Candidates are the extrema, the border intersections and any image
    /// corner inside the ellipse; candidates off the image are dropped.
    pub fn bbox_on_image(&self, k: &CameraIntrinsics) -> Result<BoundingBox, GeometryError> {
        let conic = self.normalized_ellipse()?;
        let slack = Tolerances::DEFAULT.image_bounds_slack * k.width.max(k.height);
        let inside = |&(x, y): &(f64, f64)| {
            x.is_finite()
                && y.is_finite()
                && x >= -slack
                && x <= k.width + slack
                && y >= -slack
                && y <= k.height + slack
        };
        let corners = [
            (0.0, 0.0),
            (k.width, 0.0),
            (0.0, k.height),
            (k.width, k.height),
        ];
        let candidates = conic
            .extrema_of_normalized()?
            .into_iter()
            .chain(conic.border_intersections(k))
            .filter(inside)
            .chain(corners.into_iter().filter(|&(x, y)| conic.eval(x, y) < 0.0));

        let mut acc: Option<[f64; 4]> = None;
        for (x, y) in candidates {
            let x = x.clamp(0.0, k.width);
            let y = y.clamp(0.0, k.height);
            acc = Some(match acc {
                None => [x, y, x, y],
                Some([a, b, c, d]) => [a.min(x), b.min(y), c.max(x), d.max(y)],
            });
        }
        let [x0, y0, x1, y1] = acc.ok_or(GeometryError::NotVisible)?;
        BoundingBox::new(x0, y0, x1, y1)
    }
}

fn bounds_of(v: &[f64]) -> Option<(f64, f64)> {
    let lo = v.iter().copied().reduce(f64::min)?;
    let hi = v.iter().copied().reduce(f64::max)?;
    Some((lo, hi))
}
