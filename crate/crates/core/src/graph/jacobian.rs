//! Manifold variables and central-difference Jacobians.

use nalgebra::{DMatrix, DVector, Rotation3, Vector3, Vector6};

use super::GraphError;
use crate::geometry::{so3_log, ConstrainedDualQuadric, SE3Pose};

/// `q ⊕ δ` with `δ = (δθ, δt, δs)`: rotation updated on the right by the
/// exponential map, translation additive, semi-axes multiplicative
/// (`sᵢ ← sᵢ·exp(δsᵢ)`).
pub fn retract_quadric(q: &ConstrainedDualQuadric, delta: &[f64]) -> ConstrainedDualQuadric {
    debug_assert_eq!(delta.len(), 9);
    let dr = Rotation3::new(Vector3::new(delta[0], delta[1], delta[2]));
    let theta = so3_log(&(q.rotation() * dr));
    ConstrainedDualQuadric {
        theta,
        t: q.t + Vector3::new(delta[3], delta[4], delta[5]),
        s: Vector3::new(
            q.s.x * delta[6].exp(),
            q.s.y * delta[7].exp(),
            q.s.z * delta[8].exp(),
        ),
    }
}

/// Inverse of [`retract_quadric`]: the `δ` taking `a` to `b`.
pub fn quadric_local(a: &ConstrainedDualQuadric, b: &ConstrainedDualQuadric) -> [f64; 9] {
    let dr = so3_log(&(a.rotation().inverse() * b.rotation()));
    let dt = b.t - a.t;
    [
        dr.x,
        dr.y,
        dr.z,
        dt.x,
        dt.y,
        dt.z,
        (b.s.x / a.s.x).ln(),
        (b.s.y / a.s.y).ln(),
        (b.s.z / a.s.z).ln(),
    ]
}

/// A value the solver can perturb through a retraction.
#[derive(Debug, Clone, PartialEq)]
pub enum Variable {
    Pose(SE3Pose),
    Quadric(ConstrainedDualQuadric),
    Vector(DVector<f64>),
}

impl Variable {
    pub fn dim(&self) -> usize {
        match self {
            Variable::Pose(_) => 6,
            Variable::Quadric(_) => 9,
            Variable::Vector(v) => v.len(),
        }
    }

    pub fn retract(&self, delta: &[f64]) -> Variable {
        match self {
            Variable::Pose(p) => Variable::Pose(p.retract(&Vector6::from_column_slice(delta))),
            Variable::Quadric(q) => Variable::Quadric(retract_quadric(q, delta)),
            Variable::Vector(v) => Variable::Vector(v + DVector::from_column_slice(delta)),
        }
    }

    /// Finite-difference step for tangent coordinate `k`, scaled by the size
    /// of the quantity it perturbs.
    pub fn step(&self, k: usize, base: f64) -> f64 {
        match self {
            Variable::Pose(p) if k >= 3 => base * p.translation().norm().max(1.0),
            Variable::Quadric(q) if (3..6).contains(&k) => base * q.t.norm().max(1.0),
            Variable::Vector(v) => base * v[k].abs().max(1.0),
            _ => base,
        }
    }

    pub fn as_pose(&self) -> Option<&SE3Pose> {
        match self {
            Variable::Pose(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_quadric(&self) -> Option<&ConstrainedDualQuadric> {
        match self {
            Variable::Quadric(q) => Some(q),
            _ => None,
        }
    }
}

/// Central-difference Jacobian of `residual` with respect to the tangent
/// spaces of `vars`, columns ordered like `vars`.
///
/// `residual` returns `None` where it is undefined. If only one side of a
/// difference is defined a one-sided difference is used; if neither is, the
/// column is zero.
pub fn numeric_jacobian<F>(residual: F, vars: &[Variable], step: f64) -> Result<DMatrix<f64>, GraphError>
where
    F: Fn(&[Variable]) -> Option<DVector<f64>>,
{
    let r0 = residual(vars)
        .filter(|r| r.iter().all(|v| v.is_finite()))
        .ok_or(GraphError::NonFiniteResidual)?;
    let cols: usize = vars.iter().map(Variable::dim).sum();
    let mut jac = DMatrix::zeros(r0.len(), cols);
    let mut scratch = vars.to_vec();
    let mut col = 0;
    for (v, var) in vars.iter().enumerate() {
        let dim = var.dim();
        let mut delta = vec![0.0; dim];
        for k in 0..dim {
            let h = var.step(k, step);
            delta[k] = h;
            scratch[v] = var.retract(&delta);
            let plus = residual(&scratch).filter(|r| r.iter().all(|x| x.is_finite()));
            delta[k] = -h;
            scratch[v] = var.retract(&delta);
            let minus = residual(&scratch).filter(|r| r.iter().all(|x| x.is_finite()));
            delta[k] = 0.0;
            let column = match (plus, minus) {
                (Some(p), Some(m)) => (p - m) / (2.0 * h),
                (Some(p), None) => (p - &r0) / h,
                (None, Some(m)) => (&r0 - m) / h,
                (None, None) => DVector::zeros(r0.len()),
            };
            jac.set_column(col + k, &column);
        }
        scratch[v] = var.clone();
        col += dim;
    }
    Ok(jac)
}
