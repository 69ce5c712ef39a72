//! Levenberg-Marquardt over the factor graph.
//!
//! Each iteration linearizes every factor numerically, accumulates the normal
//! equations block by block and tries damped steps until one lowers the cost.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::jacobian::{numeric_jacobian, retract_quadric, Variable};
use super::{odometry_residual, FactorGraph, GraphError};
use crate::geometry::{ConstrainedDualQuadric, SE3Pose};

const MAX_DAMPING: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up_factor: f64,
    pub damping_down_factor: f64,
    pub relative_cost_tolerance: f64,
    /// Costs at or below this are treated as an exact fit.
    pub absolute_cost_tolerance: f64,
    pub jacobian_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-5,
            damping_up_factor: 10.0,
            damping_down_factor: 10.0,
            relative_cost_tolerance: 1e-6,
            absolute_cost_tolerance: 1e-12,
            jacobian_step: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        let positive = [
            self.initial_damping,
            self.damping_up_factor,
            self.damping_down_factor,
            self.relative_cost_tolerance,
            self.jacobian_step,
        ];
        if self.max_iterations == 0 || positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(GraphError::InvalidConfig("all solver parameters must be positive"));
        }
        if !(self.absolute_cost_tolerance.is_finite() && self.absolute_cost_tolerance >= 0.0) {
            return Err(GraphError::InvalidConfig("absolute cost tolerance must be non-negative"));
        }
        Ok(())
    }
}

/// One row of the cost trace: the cost after iteration `iteration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub iteration: usize,
    pub cost: f64,
    pub damping: f64,
    pub accepted: bool,
    pub skipped_factors: usize,
}

/// A box factor left out of a linearization because its prediction failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEvent {
    pub iteration: usize,
    pub pose: usize,
    pub landmark: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub poses: Vec<SE3Pose>,
    pub quadrics: Vec<ConstrainedDualQuadric>,
    /// Entry 0 is the initial cost; later entries follow accepted steps.
    pub cost_trace: Vec<CostRecord>,
    pub skip_log: Vec<SkipEvent>,
    pub iterations: usize,
    pub converged: bool,
    /// Box factors skipped at the final estimate.
    pub skipped_factors: usize,
}

impl OptimizationResult {
    pub fn initial_cost(&self) -> f64 {
        self.cost_trace.first().map_or(0.0, |r| r.cost)
    }

    pub fn final_cost(&self) -> f64 {
        self.cost_trace.last().map_or(0.0, |r| r.cost)
    }
}

/// Identifies a variable block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Key {
    Pose(usize),
    Quadric(usize),
}

/// Column layout of the free variables; pose 0 is the fixed gauge.
struct Ordering {
    n_poses: usize,
}

impl Ordering {
    fn offset(&self, key: Key) -> Option<usize> {
        match key {
            Key::Pose(0) => None,
            Key::Pose(i) => Some(6 * (i - 1)),
            Key::Quadric(j) => Some(6 * (self.n_poses - 1) + 9 * j),
        }
    }

    fn dim(&self, n_quadrics: usize) -> usize {
        6 * (self.n_poses - 1) + 9 * n_quadrics
    }
}

/// One factor's residual and per-variable Jacobian blocks.
struct LinearizedFactor {
    blocks: Vec<(Key, DMatrix<f64>)>,
    residual: DVector<f64>,
}

/// Dense normal equations `H δ = −g` assembled from factor blocks.
pub struct NormalEquations {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
}

impl NormalEquations {
    pub fn zeros(dim: usize) -> Self {
        Self {
            hessian: DMatrix::zeros(dim, dim),
            gradient: DVector::zeros(dim),
        }
    }

    /// Adds `JᵀJ` and `Jᵀr` for a factor whose blocks sit at the given column offsets.
    pub fn add_blocks(&mut self, blocks: &[(usize, &DMatrix<f64>)], residual: &DVector<f64>) {
        for &(oa, ja) in blocks {
            let g = ja.transpose() * residual;
            let mut gv = self.gradient.rows_mut(oa, ja.ncols());
            gv += g;
            for &(ob, jb) in blocks {
                let h = ja.transpose() * jb;
                let mut hv = self.hessian.view_mut((oa, ob), (ja.ncols(), jb.ncols()));
                hv += h;
            }
        }
    }

    /// Solves `(H + λ·diag(H)) δ = −g` with a small floor on the diagonal.
    pub fn solve_damped(&self, damping: f64) -> Option<DVector<f64>> {
        let mut a = self.hessian.clone();
        for k in 0..a.nrows() {
            let d = self.hessian[(k, k)].max(1e-9);
            a[(k, k)] += damping * d;
        }
        a.cholesky().map(|c| c.solve(&(-&self.gradient)))
    }
}

fn linearize(
    graph: &FactorGraph,
    poses: &[SE3Pose],
    quadrics: &[ConstrainedDualQuadric],
    step: f64,
    iteration: usize,
    skips: &mut Vec<SkipEvent>,
) -> Result<Vec<LinearizedFactor>, GraphError> {
    let mut out = Vec::with_capacity(graph.odometry_factors.len() + graph.bbox_factors.len());
    for f in &graph.odometry_factors {
        let vars = [Variable::Pose(poses[f.i]), Variable::Pose(poses[f.i + 1])];
        let residual = |v: &[Variable]| {
            let r = odometry_residual(f, v[0].as_pose()?, v[1].as_pose()?);
            Some(DVector::from_column_slice(r.as_slice()))
        };
        let r0 = residual(&vars).ok_or(GraphError::NonFiniteResidual)?;
        let j = numeric_jacobian(residual, &vars, step)?;
        out.push(LinearizedFactor {
            blocks: vec![
                (Key::Pose(f.i), j.columns(0, 6).into_owned()),
                (Key::Pose(f.i + 1), j.columns(6, 6).into_owned()),
            ],
            residual: r0,
        });
    }
    for f in &graph.bbox_factors {
        let pose = &poses[f.i];
        let q = &quadrics[f.j];
        if let Err(e) = graph.landmark_residual(f, pose, q) {
            debug!("iteration {iteration}: skipping box factor ({}, {}): {}", f.i, f.j, e.0);
            skips.push(SkipEvent {
                iteration,
                pose: f.i,
                landmark: f.j,
                reason: e.0.to_string(),
            });
            continue;
        }
        let residual = |v: &[Variable]| {
            let r = graph
                .landmark_residual(f, v[0].as_pose()?, v[1].as_quadric()?)
                .ok()?;
            Some(DVector::from_column_slice(r.as_slice()))
        };
        let vars = [Variable::Pose(*pose), Variable::Quadric(*q)];
        let r0 = residual(&vars).ok_or(GraphError::NonFiniteResidual)?;
        let j = numeric_jacobian(residual, &vars, step)?;
        out.push(LinearizedFactor {
            blocks: vec![
                (Key::Pose(f.i), j.columns(0, 6).into_owned()),
                (Key::Quadric(f.j), j.columns(6, 9).into_owned()),
            ],
            residual: r0,
        });
    }
    Ok(out)
}

fn apply_step(
    ordering: &Ordering,
    poses: &[SE3Pose],
    quadrics: &[ConstrainedDualQuadric],
    delta: &DVector<f64>,
) -> (Vec<SE3Pose>, Vec<ConstrainedDualQuadric>) {
    let new_poses = poses
        .iter()
        .enumerate()
        .map(|(i, p)| match ordering.offset(Key::Pose(i)) {
            Some(o) => p.retract(&delta.fixed_rows::<6>(o).into_owned()),
            None => *p,
        })
        .collect();
    let new_quadrics = quadrics
        .iter()
        .enumerate()
        .map(|(j, q)| {
            let o = ordering.offset(Key::Quadric(j)).expect("quadrics are free");
            retract_quadric(q, delta.rows(o, 9).as_slice())
        })
        .collect();
    (new_poses, new_quadrics)
}

/// Levenberg-Marquardt MAP estimate of all poses (except the first) and landmarks.
///
/// A step is accepted only if it keeps every quadric valid, does not raise
/// the cost and does not make more box factors fail than before, so the recorded cost trace is
/// non-increasing.
pub fn optimize(graph: &FactorGraph, cfg: &SolverConfig) -> Result<OptimizationResult, GraphError> {
    cfg.validate()?;
    graph.validate()?;
    let mut poses = graph.poses.clone();
    let mut quadrics = graph.quadrics.clone();
    let (mut cost, mut skipped) = graph.cost(&poses, &quadrics);
    let mut trace = vec![CostRecord {
        iteration: 0,
        cost,
        damping: cfg.initial_damping,
        accepted: true,
        skipped_factors: skipped,
    }];
    let mut skip_log = Vec::new();
    let result = |poses, quadrics, trace, skip_log, iterations, converged, skipped| {
        Ok(OptimizationResult {
            poses,
            quadrics,
            cost_trace: trace,
            skip_log,
            iterations,
            converged,
            skipped_factors: skipped,
        })
    };
    if poses.is_empty() || poses.len() == 1 && quadrics.is_empty() {
        return result(poses, quadrics, trace, skip_log, 0, true, skipped);
    }

    let ordering = Ordering {
        n_poses: poses.len(),
    };
    let dim = ordering.dim(quadrics.len());
    let mut damping = cfg.initial_damping;
    let mut any_accepted = false;
    let mut converged = cost <= cfg.absolute_cost_tolerance;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let factors = linearize(graph, &poses, &quadrics, cfg.jacobian_step, iterations, &mut skip_log)?;
        let mut system = NormalEquations::zeros(dim);
        for f in &factors {
            let blocks: Vec<(usize, &DMatrix<f64>)> = f
                .blocks
                .iter()
                .filter_map(|(k, j)| ordering.offset(*k).map(|o| (o, j)))
                .collect();
            system.add_blocks(&blocks, &f.residual);
        }

        let mut accepted = false;
        while damping <= MAX_DAMPING {
            if let Some(delta) = system.solve_damped(damping) {
                let (new_poses, new_quadrics) = apply_step(&ordering, &poses, &quadrics, &delta);
                let (new_cost, new_skipped) = graph.cost(&new_poses, &new_quadrics);
                let valid = new_quadrics.iter().all(|q| q.validate().is_ok());
                if valid && new_cost.is_finite() && new_cost <= cost && new_skipped <= skipped {
                    let relative = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                    poses = new_poses;
                    quadrics = new_quadrics;
                    cost = new_cost;
                    skipped = new_skipped;
                    damping = (damping / cfg.damping_down_factor).max(1e-15);
                    trace.push(CostRecord {
                        iteration: iterations,
                        cost,
                        damping,
                        accepted: true,
                        skipped_factors: skipped,
                    });
                    accepted = true;
                    any_accepted = true;
                    converged = relative < cfg.relative_cost_tolerance || cost <= cfg.absolute_cost_tolerance;
                    break;
                }
            }
            damping *= cfg.damping_up_factor;
        }
        if !accepted {
            // no descent direction left: either at a minimum or stuck
            let gradient = system.gradient.amax();
            if !any_accepted && gradient > 1e-6 && cost > cfg.absolute_cost_tolerance {
                return Err(GraphError::DivergedDamping(MAX_DAMPING));
            }
            converged = true;
        }
    }
    result(poses, quadrics, trace, skip_log, iterations, converged, skipped)
}
