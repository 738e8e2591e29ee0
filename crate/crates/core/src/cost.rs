//! Finite-horizon costs and the bounded transform `C·tanh(raw/γ)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::controller::Policy;
use crate::error::{Error, Result};
use crate::sim::{rollout, NoiseSequence, Plant, Trajectory};

/// Stage-cost family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostKind {
    /// `Σ q x_t² + r u_t²`.
    LtiQuadratic { q: f64, r: f64 },
    /// Quadratic tracking plus inverse-square barriers between the robots and
    /// around obstacles. Geometry (`D`, `ν`, obstacles) comes from the plant.
    RobotNav {
        q_diag: Vec<f64>,
        r_diag: Vec<f64>,
        #[serde(default = "one")]
        collision_weight: f64,
        #[serde(default = "one")]
        obstacle_weight: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl CostKind {
    pub fn lti_default() -> Self {
        CostKind::LtiQuadratic { q: 5.0, r: 0.003 }
    }

    pub fn robots_default() -> Self {
        CostKind::RobotNav {
            q_diag: vec![1.0; 8],
            r_diag: vec![0.01; 4],
            collision_weight: 1.0,
            obstacle_weight: 1.0,
        }
    }

    pub fn validate(&self, plant: &Plant) -> Result<()> {
        match (self, plant) {
            (CostKind::LtiQuadratic { q, r }, Plant::ScalarLti(_)) => {
                if !(*q > 0.0 && *r > 0.0) {
                    return Err(Error::InvalidArgument("q and r must be positive".into()));
                }
            }
            (
                CostKind::RobotNav {
                    q_diag,
                    r_diag,
                    collision_weight,
                    obstacle_weight,
                },
                Plant::PlanarRobots(_),
            ) => {
                if q_diag.len() != plant.state_dim() || r_diag.len() != plant.input_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: plant.state_dim(),
                        got: q_diag.len(),
                        context: "cost weight dimension",
                    });
                }
                if q_diag.iter().chain(r_diag).any(|v| *v < 0.0)
                    || *collision_weight < 0.0
                    || *obstacle_weight < 0.0
                {
                    return Err(Error::InvalidArgument("cost weights must be nonnegative".into()));
                }
            }
            _ => return Err(Error::InvalidArgument("cost does not match plant".into())),
        }
        Ok(())
    }
}

/// Stage cost plus the transform parameters `C` and `γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub kind: CostKind,
    pub bound: f64,
    pub gamma: f64,
}

impl CostSpec {
    pub fn validate(&self, plant: &Plant) -> Result<()> {
        if !(self.bound > 0.0 && self.gamma > 0.0) {
            return Err(Error::InvalidArgument("C and γ must be positive".into()));
        }
        self.kind.validate(plant)
    }

    /// Transformed cost of a trajectory.
    pub fn eval<T: Real>(&self, plant: &Plant, traj: &Trajectory<T>) -> Result<T> {
        Ok(transform_cost(fh_cost(&self.kind, plant, traj)?, self.bound, self.gamma))
    }
}

/// `(d + ν)⁻²` when `d ≤ D`, else zero. The argument is clamped at `−ν/2`
/// so penetration keeps a finite, outward-pointing penalty.
fn barrier<T: Real>(d: T, safe: f64, offset: f64) -> Option<T> {
    if d.value() > safe {
        return None;
    }
    let d = if d.value() < -0.5 * offset {
        d.lift(-0.5 * offset)
    } else {
        d
    };
    Some((d + offset).square().recip())
}

fn distance<T: Real>(dx: T, dy: T) -> T {
    (dx.square() + dy.square()).sqrt()
}

/// Raw finite-horizon cost `Σ_{t=0}^{T} ℓ(x_t, u_t)`.
pub fn fh_cost<T: Real>(kind: &CostKind, plant: &Plant, traj: &Trajectory<T>) -> Result<T> {
    let Some(first) = traj.states.first().and_then(|x| x.first()) else {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    };
    let zero = first.lift(0.0);
    if traj.states.len() != traj.inputs.len() {
        return Err(Error::DimensionMismatch {
            expected: traj.states.len(),
            got: traj.inputs.len(),
            context: "trajectory input length",
        });
    }
    let finite = traj
        .states
        .iter()
        .chain(&traj.inputs)
        .flatten()
        .all(|v| v.value().is_finite());
    if !finite {
        return Err(Error::InvalidArgument("non-finite trajectory".into()));
    }
    match (kind, plant) {
        (CostKind::LtiQuadratic { q, r }, Plant::ScalarLti(_)) => {
            let mut acc = zero;
            for (x, u) in traj.states.iter().zip(&traj.inputs) {
                acc = acc + x[0].square() * *q + u[0].square() * *r;
            }
            Ok(acc)
        }
        (
            CostKind::RobotNav {
                q_diag,
                r_diag,
                collision_weight,
                obstacle_weight,
            },
            Plant::PlanarRobots(p),
        ) => {
            let target = plant.target_state();
            let mut acc = zero;
            let mut dx = Vec::with_capacity(target.len());
            let mut sq = Vec::with_capacity(target.len());
            for (x, u) in traj.states.iter().zip(&traj.inputs) {
                dx.clear();
                dx.extend(x.iter().zip(&target).map(|(x, g)| *x - *g));
                sq.clear();
                sq.extend(dx.iter().map(|d| d.square()));
                acc = acc.add_dot_const(&sq, q_diag);
                sq.clear();
                sq.extend(u.iter().map(|v| v.square()));
                acc = acc.add_dot_const(&sq, r_diag);

                let d = distance(x[0] - x[4], x[1] - x[5]);
                if let Some(b) = barrier(d, p.safe_distance, p.barrier_offset) {
                    acc = acc + b * *collision_weight;
                }
                for r in 0..2 {
                    for o in &p.obstacles {
                        let surf = distance(x[4 * r] - o.center[0], x[4 * r + 1] - o.center[1]) - o.radius;
                        if let Some(b) = barrier(surf, p.safe_distance, p.barrier_offset) {
                            acc = acc + b * *obstacle_weight;
                        }
                    }
                }
            }
            Ok(acc)
        }
        _ => Err(Error::InvalidArgument("cost does not match plant".into())),
    }
}

/// `C·tanh(raw/γ)`, which lies in `[0, C)` for `raw ≥ 0`.
pub fn transform_cost<T: Real>(raw: T, bound: f64, gamma: f64) -> T {
    let out = (raw / gamma).tanh() * bound;
    // tanh rounds to 1 for large arguments; keep the result strictly below C
    if out.value() >= bound {
        out.lift(bound.next_down())
    } else {
        out
    }
}

/// Raw cost of the noise-free open loop over `horizon`; `1` if that cost is zero.
pub fn default_gamma(kind: &CostKind, plant: &Plant, horizon: usize) -> Result<f64> {
    let zero_ctrl = match plant {
        Plant::ScalarLti(_) => Policy::Affine { k: 0.0, beta: 0.0 },
        Plant::PlanarRobots(_) => {
            let shape = crate::controller::RenShape::for_plant(plant, 1, 0);
            let arch = crate::controller::Arch::ImcRen(shape);
            Policy::build(&arch, &vec![0.0; arch.num_params()])?
        }
    };
    let traj = rollout(plant, &zero_ctrl, &NoiseSequence::zeros(plant.state_dim(), horizon))?;
    let raw = fh_cost(kind, plant, &traj)?;
    Ok(if raw > 0.0 { raw } else { 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{PlanarRobots, ScalarLti};
    use approx::assert_abs_diff_eq;

    fn geometric() -> f64 {
        20.0 * (1.0 - 0.64f64.powi(11)) / 0.36
    }

    #[test]
    fn lti_cost_examples() {
        let plant = Plant::ScalarLti(ScalarLti::default());
        let kind = CostKind::lti_default();
        let zero = Trajectory {
            states: vec![vec![0.0]; 11],
            inputs: vec![vec![0.0]; 11],
        };
        assert_eq!(fh_cost(&kind, &plant, &zero).unwrap(), 0.0);
        let decay = Trajectory {
            states: (0..11).map(|t| vec![2.0 * 0.8f64.powi(t)]).collect(),
            inputs: vec![vec![0.0]; 11],
        };
        assert_abs_diff_eq!(fh_cost(&kind, &plant, &decay).unwrap(), geometric(), epsilon = 1e-10);
        assert_abs_diff_eq!(geometric(), 55.145_627_9, epsilon = 1e-6);
        assert_abs_diff_eq!(default_gamma(&kind, &plant, 10).unwrap(), geometric(), epsilon = 1e-10);
    }

    #[test]
    fn robots_at_target_cost_nothing() {
        let r = PlanarRobots::default();
        let plant = Plant::PlanarRobots(r);
        let x = plant.target_state();
        let tr = Trajectory {
            states: vec![x; 5],
            inputs: vec![vec![0.0; 4]; 5],
        };
        assert_eq!(fh_cost(&CostKind::robots_default(), &plant, &tr).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_gamma_falls_back() {
        let mut r = PlanarRobots::default();
        r.starts = r.targets;
        let plant = Plant::PlanarRobots(r);
        let g = default_gamma(&CostKind::robots_default(), &plant, 20).unwrap();
        assert_eq!(g, 1.0);
        let g2 = default_gamma(&CostKind::robots_default(), &plant, 20).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn transform_examples() {
        assert_eq!(transform_cost(0.0, 1.0, 3.0), 0.0);
        assert_abs_diff_eq!(transform_cost(2.5, 1.0, 2.5), 0.761594, epsilon = 1e-6);
        assert!(transform_cost(1e300, 1.0, 1.0) <= 1.0);
    }

    #[test]
    fn barrier_activates_within_safe_distance() {
        let r = PlanarRobots::default();
        let plant = Plant::PlanarRobots(r.clone());
        let mut x = plant.target_state();
        // move robot 1 to within D of robot 0
        x[4] = x[0] - 0.3;
        x[5] = x[1];
        let tr = Trajectory {
            states: vec![x.clone()],
            inputs: vec![vec![0.0; 4]],
        };
        let quad = (x[4] - (-2.0f64)).powi(2);
        let expected = quad + (0.3 + r.barrier_offset).powi(-2);
        assert_abs_diff_eq!(fh_cost(&CostKind::robots_default(), &plant, &tr).unwrap(), expected, epsilon = 1e-12);
    }
}
