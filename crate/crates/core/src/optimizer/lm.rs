use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use super::loss::{
    cauchy, cauchy_weight, jacobian_2d, jacobian_3d, residual_2d, residual_3d, retract,
    Observation, RobustLossParams,
};
use crate::error::{Error, Result};
use crate::matching::Match2D3D;
use crate::{CameraIntrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    pub rel_cost_tol: f64,
    pub step_tol: f64,
    pub initial_damping: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            rel_cost_tol: 1e-8,
            step_tol: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub pose: Pose,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One LM step attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub cost: f64,
    pub step_norm: f64,
    pub damping: f64,
    pub accepted: bool,
}

/// Writes a trace as JSON lines.
pub fn write_trace(path: &Path, trace: &[IterationTrace]) -> Result<()> {
    let mut buf = Vec::new();
    for t in trace {
        serde_json::to_writer(&mut buf, t).map_err(|e| Error::json(path, e))?;
        buf.push(b'\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy)]
struct Kernel {
    /// `None`: plain least squares.
    c_2d: Option<f64>,
    c_3d: f64,
    lambda: f64,
}

impl Kernel {
    fn rho_2d(&self, r: f64) -> f64 {
        match self.c_2d {
            Some(c) => cauchy(r, c),
            None => 0.5 * r * r,
        }
    }

    fn weight_2d(&self, r: f64) -> f64 {
        self.c_2d.map_or(1.0, |c| cauchy_weight(r, c))
    }

    fn behind_penalty(&self) -> f64 {
        self.rho_2d(10.0 * self.c_2d.unwrap_or(100.0))
    }
}

struct Problem<'a> {
    obs: &'a [Observation],
    k: &'a CameraIntrinsics,
    kernel: Kernel,
}

impl Problem<'_> {
    fn cost(&self, pose: &Pose) -> f64 {
        let mut c2 = 0.0;
        let mut c3 = 0.0;
        for o in self.obs {
            for (j, m) in o.matches.iter().enumerate() {
                c2 += match residual_2d(pose, &o.delta_pose, m.x, m.u, self.k) {
                    Some([a, b]) => self.kernel.rho_2d((a * a + b * b).sqrt()),
                    None => self.kernel.behind_penalty(),
                };
                if let Some(d) = o.depth(j) {
                    if let Some(r) = residual_3d(pose, &o.delta_pose, m.x, m.u, d, self.k) {
                        c3 += cauchy(
                            (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt(),
                            self.kernel.c_3d,
                        );
                    }
                }
            }
        }
        c2 + self.kernel.lambda * c3
    }

    fn normal_equations(&self, pose: &Pose) -> (Matrix6<f64>, Vector6<f64>) {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for o in self.obs {
            for (j, m) in o.matches.iter().enumerate() {
                if let (Some(r), Some(jac)) = (
                    residual_2d(pose, &o.delta_pose, m.x, m.u, self.k),
                    jacobian_2d(pose, &o.delta_pose, m.x, self.k),
                ) {
                    let w = self.kernel.weight_2d((r[0] * r[0] + r[1] * r[1]).sqrt());
                    for (ri, row) in r.iter().zip(jac.iter()) {
                        let jr = Vector6::from_row_slice(row);
                        h += jr * jr.transpose() * w;
                        g += jr * (w * ri);
                    }
                }
                let Some(d) = o.depth(j) else { continue };
                let Some(r) = residual_3d(pose, &o.delta_pose, m.x, m.u, d, self.k) else {
                    continue;
                };
                let jac = jacobian_3d(pose, &o.delta_pose, m.x);
                let w = self.kernel.lambda
                    * cauchy_weight(
                        (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt(),
                        self.kernel.c_3d,
                    );
                for (ri, row) in r.iter().zip(jac.iter()) {
                    let jr = Vector6::from_row_slice(row);
                    h += jr * jr.transpose() * w;
                    g += jr * (w * ri);
                }
            }
        }
        (h, g)
    }

    fn solve(
        &self,
        init: &Pose,
        opts: &OptimizeOptions,
        mut trace: Option<&mut Vec<IterationTrace>>,
    ) -> Result<OptimizeResult> {
        let mut pose = *init;
        let mut cost = self.cost(&pose);
        if !cost.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite initial cost {cost}"
            )));
        }
        let initial_cost = cost;
        let mut mu = opts.initial_damping;
        let mut iterations = 0;
        let mut converged = false;
        'outer: while iterations < opts.max_iters {
            if cost == 0.0 {
                converged = true;
                break;
            }
            iterations += 1;
            let (h, g) = self.normal_equations(&pose);
            if !h.iter().chain(g.iter()).all(|v| v.is_finite()) {
                return Err(Error::NumericalFailure("non-finite Jacobian".into()));
            }
            let scale = h.diagonal().max().max(1e-300);
            loop {
                let mut a = h;
                for i in 0..6 {
                    a[(i, i)] += mu * (h[(i, i)] + 1e-12 * scale);
                }
                let step = a.cholesky().map(|c| -c.solve(&g));
                let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) else {
                    mu *= 10.0;
                    if mu > 1e16 {
                        break 'outer;
                    }
                    continue;
                };
                let step_norm = step.norm();
                if step_norm < opts.step_tol {
                    converged = true;
                    break 'outer;
                }
                let xi = [step[0], step[1], step[2], step[3], step[4], step[5]];
                let cand = retract(&pose, &xi);
                let new_cost = self.cost(&cand);
                let accepted = new_cost.is_finite() && new_cost < cost;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(IterationTrace {
                        iteration: iterations,
                        cost: if accepted { new_cost } else { cost },
                        step_norm,
                        damping: mu,
                        accepted,
                    });
                }
                if accepted {
                    let rel = (cost - new_cost) / cost;
                    pose = cand;
                    cost = new_cost;
                    mu = (mu * 0.1).max(1e-12);
                    if rel < opts.rel_cost_tol {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                mu *= 10.0;
                if mu > 1e16 {
                    // no descent direction left at machine precision
                    converged = true;
                    break 'outer;
                }
            }
        }
        Ok(OptimizeResult {
            pose,
            initial_cost,
            final_cost: cost,
            iterations,
            converged,
        })
    }
}

/// Minimizes `L_2D + λ·L_3D` over the current pose with Levenberg–Marquardt
/// and Cauchy IRLS weights.
pub fn refine_pose(
    init: &Pose,
    obs: &[Observation],
    k: &CameraIntrinsics,
    params: &RobustLossParams,
    opts: &OptimizeOptions,
) -> Result<OptimizeResult> {
    refine_pose_traced(init, obs, k, params, opts, None)
}

/// [`refine_pose`] recording every step attempt into `trace`.
pub fn refine_pose_traced(
    init: &Pose,
    obs: &[Observation],
    k: &CameraIntrinsics,
    params: &RobustLossParams,
    opts: &OptimizeOptions,
    trace: Option<&mut Vec<IterationTrace>>,
) -> Result<OptimizeResult> {
    params.validate()?;
    let total: usize = obs.iter().map(|o| o.matches.len()).sum();
    if total < 4 {
        return Err(Error::TooFewMatches {
            needed: 4,
            got: total,
        });
    }
    let kernel = Kernel {
        c_2d: Some(params.cauchy_c_2d),
        c_3d: params.cauchy_c_3d,
        lambda: params.lambda,
    };
    Problem { obs, k, kernel }.solve(init, opts, trace)
}

/// Plain least-squares reprojection refinement of a single-view pose.
pub(crate) fn refine_reprojection(
    init: &Pose,
    matches: &[Match2D3D],
    k: &CameraIntrinsics,
) -> Result<OptimizeResult> {
    if matches.len() < 4 {
        return Err(Error::TooFewMatches {
            needed: 4,
            got: matches.len(),
        });
    }
    let obs = [Observation::without_depth(
        Pose::identity(),
        matches.to_vec(),
    )];
    let kernel = Kernel {
        c_2d: None,
        c_3d: 1.0,
        lambda: 0.0,
    };
    let opts = OptimizeOptions {
        max_iters: 30,
        ..OptimizeOptions::default()
    };
    Problem {
        obs: &obs,
        k,
        kernel,
    }
    .solve(init, &opts, None)
}
