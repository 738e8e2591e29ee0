//! Plants, noise datasets and the closed-loop rollout map.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::controller::{Policy, PolicyState};
use crate::error::{Error, Result};

/// One noise realization `w_0, …, w_T`; entry 0 perturbs the initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseSequence(pub Vec<Vec<f64>>);

impl NoiseSequence {
    pub fn zeros(state_dim: usize, horizon: usize) -> Self {
        Self(vec![vec![0.0; state_dim]; horizon + 1])
    }

    pub fn horizon(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn at(&self, t: usize) -> &[f64] {
        &self.0[t]
    }

    /// Same noise over a longer horizon, zero after the original end.
    pub fn extended(&self, horizon: usize) -> Self {
        let dim = self.0.first().map_or(0, Vec::len);
        let mut values = self.0.clone();
        values.resize(horizon + 1, vec![0.0; dim]);
        values.truncate(horizon + 1);
        Self(values)
    }
}

/// The training data: `S` noise sequences sharing a horizon and dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseDataset {
    pub state_dim: usize,
    pub horizon: usize,
    pub sequences: Vec<NoiseSequence>,
}

impl NoiseDataset {
    pub fn new(state_dim: usize, horizon: usize, sequences: Vec<NoiseSequence>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one sequence".into()));
        }
        for seq in &sequences {
            if seq.0.len() != horizon + 1 {
                return Err(Error::DimensionMismatch {
                    expected: horizon + 1,
                    got: seq.0.len(),
                    context: "noise sequence length",
                });
            }
            for w in &seq.0 {
                if w.len() != state_dim {
                    return Err(Error::DimensionMismatch {
                        expected: state_dim,
                        got: w.len(),
                        context: "noise vector dimension",
                    });
                }
                if w.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("non-finite noise entry".into()));
                }
            }
        }
        Ok(Self {
            state_dim,
            horizon,
            sequences,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sequences at `indices`, in that order (repeats allowed).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let sequences = indices
            .iter()
            .map(|&i| {
                self.sequences.get(i).cloned().ok_or_else(|| {
                    Error::InvalidArgument(format!("sequence index {i} out of range"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.state_dim, self.horizon, sequences)
    }

    /// First `n` sequences.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// Splits into the first `n` sequences and the rest. Either side may be empty,
    /// so both are returned as plain vectors.
    pub fn split_at(&self, n: usize) -> (Vec<NoiseSequence>, Vec<NoiseSequence>) {
        let n = n.min(self.len());
        (self.sequences[..n].to_vec(), self.sequences[n..].to_vec())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: NoiseDataset = serde_json::from_str(s)?;
        Self::new(raw.state_dim, raw.horizon, raw.sequences)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// How noise sequences are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseDistribution {
    /// i.i.d. `N(mean, std²)` on every component at every step.
    Gaussian { mean: f64, std: f64 },
    /// `N(mean, std²)` at `t = 0`, exactly zero afterwards.
    InitialOnly { mean: f64, std: f64 },
    /// Zero noise everywhere.
    Zero,
}

impl NoiseDistribution {
    fn normal(mean: f64, std: f64) -> Result<Normal<f64>> {
        if !mean.is_finite() || !std.is_finite() || std < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "mean {mean}, std {std}"
            )));
        }
        Normal::new(mean, std).map_err(|e| Error::InvalidDistribution(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseDistribution::Gaussian { mean, std }
            | NoiseDistribution::InitialOnly { mean, std } => Self::normal(mean, std).map(|_| ()),
            NoiseDistribution::Zero => Ok(()),
        }
    }

    /// Draws one sequence. Components are drawn in time-major, then
    /// coordinate order.
    pub fn sample_sequence(
        &self,
        state_dim: usize,
        horizon: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<NoiseSequence> {
        let mut seq = NoiseSequence::zeros(state_dim, horizon);
        match *self {
            NoiseDistribution::Gaussian { mean, std } => {
                let n = Self::normal(mean, std)?;
                for w in &mut seq.0 {
                    w.iter_mut().for_each(|v| *v = n.sample(rng));
                }
            }
            NoiseDistribution::InitialOnly { mean, std } => {
                let n = Self::normal(mean, std)?;
                seq.0[0].iter_mut().for_each(|v| *v = n.sample(rng));
            }
            NoiseDistribution::Zero => {}
        }
        Ok(seq)
    }
}

/// `S` i.i.d. sequences, reproducible from `seed`.
pub fn generate_dataset(
    dist: &NoiseDistribution,
    state_dim: usize,
    s: usize,
    horizon: usize,
    seed: u64,
) -> Result<NoiseDataset> {
    if s == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = (0..s)
        .map(|_| dist.sample_sequence(state_dim, horizon, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    NoiseDataset::new(state_dim, horizon, sequences)
}

/// Scalar pre-stable plant `x⁺ = a x + b u + w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarLti {
    pub a: f64,
    pub b: f64,
    pub xbar: f64,
}

impl Default for ScalarLti {
    fn default() -> Self {
        Self {
            a: 0.8,
            b: 0.1,
            xbar: 2.0,
        }
    }
}

impl ScalarLti {
    /// Open interval of gains `k` with `|a − b k| < 1`.
    pub fn stable_gain_interval(&self) -> (f64, f64) {
        let lo = (self.a - 1.0) / self.b;
        let hi = (self.a + 1.0) / self.b;
        if lo < hi {
            (lo, hi)
        } else {
            (hi, lo)
        }
    }

    /// Infinite-horizon LQR gain for stage cost `q x² + r u²`, with the
    /// convention `u = −k x`.
    pub fn lqr_gain(&self, q: f64, r: f64) -> f64 {
        let (a, b) = (self.a, self.b);
        let mut p = q;
        for _ in 0..10_000 {
            let next = q + a * a * p - (a * b * p).powi(2) / (r + b * b * p);
            if (next - p).abs() <= 1e-14 * next.abs().max(1.0) {
                p = next;
                break;
            }
            p = next;
        }
        a * b * p / (r + b * b * p)
    }
}

/// Circular obstacle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Two point-mass robots with drag, each pre-stabilized toward its target.
/// State per robot is `[px, py, vx, vy]`; input per robot is a planar force.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanarRobots {
    pub mass: f64,
    pub drag_linear: f64,
    pub drag_quadratic: f64,
    pub prestab_gain: f64,
    pub dt: f64,
    pub starts: [[f64; 2]; 2],
    pub targets: [[f64; 2]; 2],
    pub obstacles: Vec<Obstacle>,
    pub safe_distance: f64,
    pub barrier_offset: f64,
    pub robot_radius: f64,
}

impl Default for PlanarRobots {
    fn default() -> Self {
        Self {
            mass: 1.0,
            drag_linear: 1.0,
            drag_quadratic: 0.1,
            prestab_gain: 1.0,
            dt: 0.05,
            starts: [[-2.0, -2.0], [2.0, -2.0]],
            targets: [[2.0, 2.0], [-2.0, 2.0]],
            obstacles: vec![
                Obstacle {
                    center: [-2.5, 0.0],
                    radius: 1.5,
                },
                Obstacle {
                    center: [2.5, 0.0],
                    radius: 1.5,
                },
            ],
            safe_distance: 0.5,
            barrier_offset: 0.1,
            robot_radius: 0.25,
        }
    }
}

impl PlanarRobots {
    pub const NUM_ROBOTS: usize = 2;

    pub fn positions(x: &[f64]) -> [[f64; 2]; 2] {
        [[x[0], x[1]], [x[4], x[5]]]
    }

    /// Whether any robot–robot or robot–obstacle overlap occurs along `states`.
    pub fn has_collision(&self, states: &[Vec<f64>]) -> bool {
        states.iter().any(|x| {
            let p = Self::positions(x);
            let d = ((p[0][0] - p[1][0]).powi(2) + (p[0][1] - p[1][1]).powi(2)).sqrt();
            if d < 2.0 * self.robot_radius {
                return true;
            }
            p.iter().any(|pr| {
                self.obstacles.iter().any(|o| {
                    let d = ((pr[0] - o.center[0]).powi(2) + (pr[1] - o.center[1]).powi(2)).sqrt();
                    d < o.radius + self.robot_radius
                })
            })
        })
    }
}

/// A controlled plant with an exactly known model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Plant {
    ScalarLti(ScalarLti),
    PlanarRobots(PlanarRobots),
}

impl Plant {
    pub fn validate(&self) -> Result<()> {
        match self {
            Plant::ScalarLti(p) => {
                if !(p.a.abs() < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "scalar plant needs |a| < 1, got {}",
                        p.a
                    )));
                }
                if p.b == 0.0 || !p.b.is_finite() || !p.xbar.is_finite() {
                    return Err(Error::InvalidArgument("scalar plant needs finite b ≠ 0".into()));
                }
            }
            Plant::PlanarRobots(p) => {
                let positive = [
                    ("mass", p.mass),
                    ("dt", p.dt),
                    ("safe_distance", p.safe_distance),
                    ("barrier_offset", p.barrier_offset),
                ];
                for (name, v) in positive {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(Error::InvalidArgument(format!("{name} must be positive")));
                    }
                }
                if p.drag_linear < 0.0 || p.drag_quadratic < 0.0 || p.robot_radius < 0.0 {
                    return Err(Error::InvalidArgument("drag and radius must be nonnegative".into()));
                }
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Plant::ScalarLti(_) => 1,
            Plant::PlanarRobots(_) => 8,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Plant::ScalarLti(_) => 1,
            Plant::PlanarRobots(_) => 4,
        }
    }

    /// Nominal initial state `x̄`.
    pub fn nominal_state(&self) -> Vec<f64> {
        match self {
            Plant::ScalarLti(p) => vec![p.xbar],
            Plant::PlanarRobots(p) => {
                let s = p.starts;
                vec![s[0][0], s[0][1], 0.0, 0.0, s[1][0], s[1][1], 0.0, 0.0]
            }
        }
    }

    /// Desired state: the origin, or the targets at rest.
    pub fn target_state(&self) -> Vec<f64> {
        match self {
            Plant::ScalarLti(_) => vec![0.0],
            Plant::PlanarRobots(p) => {
                let g = p.targets;
                vec![g[0][0], g[0][1], 0.0, 0.0, g[1][0], g[1][1], 0.0, 0.0]
            }
        }
    }

    /// Noise-free dynamics `f(x, u)`.
    pub fn dynamics<T: Real>(&self, x: &[T], u: &[T]) -> Vec<T> {
        match self {
            Plant::ScalarLti(p) => vec![x[0] * p.a + u[0] * p.b],
            Plant::PlanarRobots(p) => {
                let mut next = Vec::with_capacity(8);
                for r in 0..PlanarRobots::NUM_ROBOTS {
                    let s = &x[4 * r..4 * r + 4];
                    let mut vel = [s[2], s[3]];
                    for (c, v) in vel.iter_mut().enumerate() {
                        let force = u[2 * r + c] - (s[c] - p.targets[r][c]) * p.prestab_gain
                            - *v * p.drag_linear
                            - *v * v.abs() * p.drag_quadratic;
                        *v = *v + force * (p.dt / p.mass);
                    }
                    next.push(s[0] + s[2] * p.dt);
                    next.push(s[1] + s[3] * p.dt);
                    next.push(vel[0]);
                    next.push(vel[1]);
                }
                next
            }
        }
    }

    /// `x_t = f(x_{t−1}, u_{t−1}) + w_t` from the latest state and input.
    pub fn step<T: Real>(&self, states: &[Vec<T>], inputs: &[Vec<T>], noise: &[f64]) -> Result<Vec<T>> {
        let (Some(x), Some(u)) = (states.last(), inputs.last()) else {
            return Err(Error::InvalidArgument("step needs a nonempty history".into()));
        };
        self.check_dims(x, u, noise)?;
        let mut next = self.dynamics(x, u);
        for (n, w) in next.iter_mut().zip(noise) {
            *n = *n + *w;
        }
        Ok(next)
    }

    fn check_dims<T>(&self, x: &[T], u: &[T], noise: &[f64]) -> Result<()> {
        let checks = [
            (self.state_dim(), x.len(), "state dimension"),
            (self.input_dim(), u.len(), "input dimension"),
            (self.state_dim(), noise.len(), "noise dimension"),
        ];
        for (expected, got, context) in checks {
            if expected != got {
                return Err(Error::DimensionMismatch {
                    expected,
                    got,
                    context,
                });
            }
        }
        Ok(())
    }
}

/// Closed-loop states and inputs, both of length `T + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub states: Vec<Vec<T>>,
    pub inputs: Vec<Vec<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn values(&self) -> Trajectory<f64> {
        let f = |v: &Vec<Vec<T>>| v.iter().map(|x| x.iter().map(|y| y.value()).collect()).collect();
        Trajectory {
            states: f(&self.states),
            inputs: f(&self.inputs),
        }
    }

    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

fn finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.value().is_finite())
}

/// The rollout map: `x_0 = x̄ + w_0`, `u_t = policy(x_{t:0})`,
/// `x_{t+1} = f(x_t, u_t) + w_{t+1}`.
pub fn rollout<T: Real>(plant: &Plant, policy: &Policy<T>, noise: &NoiseSequence) -> Result<Trajectory<T>> {
    let zero = policy.zero();
    let horizon = noise.horizon();
    if noise.0.is_empty() || noise.0[0].len() != plant.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: plant.state_dim(),
            got: noise.0.first().map_or(0, Vec::len),
            context: "noise dimension",
        });
    }
    policy.check_plant(plant)?;
    let x0: Vec<T> = plant
        .nominal_state()
        .iter()
        .zip(noise.at(0))
        .map(|(x, w)| zero + (x + w))
        .collect();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon + 1);
    states.push(x0);
    let mut state = PolicyState::new(policy);
    for t in 0..=horizon {
        let u = policy.act(plant, &states, &inputs, &mut state)?;
        if !finite(&u) {
            return Err(Error::Blowup { step: t });
        }
        inputs.push(u);
        if t < horizon {
            let next = plant.step(&states, &inputs, noise.at(t + 1))?;
            if !finite(&next) {
                return Err(Error::Blowup { step: t + 1 });
            }
            states.push(next);
        }
    }
    if !finite(&states[0]) {
        return Err(Error::Blowup { step: 0 });
    }
    Ok(Trajectory { states, inputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lti() -> Plant {
        Plant::ScalarLti(ScalarLti::default())
    }

    #[test]
    fn lti_step_examples() {
        let p = lti();
        let x = p.step(&[vec![2.0]], &[vec![0.0]], &[0.0]).unwrap();
        assert_abs_diff_eq!(x[0], 1.6, epsilon = 1e-15);
        let x = p.step(&[vec![2.0]], &[vec![0.0]], &[0.3]).unwrap();
        assert_abs_diff_eq!(x[0], 1.9, epsilon = 1e-15);
    }

    #[test]
    fn step_rejects_bad_dims() {
        let p = lti();
        assert!(matches!(
            p.step(&[vec![2.0, 1.0]], &[vec![0.0]], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(p.step::<f64>(&[], &[], &[0.0]).is_err());
    }

    #[test]
    fn robots_rest_at_target() {
        let p = Plant::PlanarRobots(PlanarRobots::default());
        let x = p.target_state();
        let next = p.step(&[x.clone()], &[vec![0.0; 4]], &[0.0; 8]).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn robot_euler_update_by_hand() {
        let robots = PlanarRobots::default();
        let p = Plant::PlanarRobots(robots.clone());
        let x = vec![0.0, 0.0, 1.0, -2.0, 0.0, 0.0, 0.0, 0.0];
        let u = vec![0.5, 0.0, 0.0, 0.0];
        let next = p.dynamics(&x, &u);
        // robot 0, x axis: position error −2, velocity 1
        let fx = 0.5 - (0.0 - 2.0) * 1.0 - 1.0 * 1.0 - 0.1 * 1.0 * 1.0;
        assert_abs_diff_eq!(next[0], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(next[2], 1.0 + 0.05 * fx, epsilon = 1e-15);
        let fy = -(0.0 - 2.0) - (-2.0) - 0.1 * (-2.0) * 2.0;
        assert_abs_diff_eq!(next[3], -2.0 + 0.05 * fy, epsilon = 1e-15);
    }

    #[test]
    fn dataset_is_reproducible_and_validated() {
        let d = NoiseDistribution::Gaussian { mean: 0.3, std: 0.3 };
        let a = generate_dataset(&d, 1, 8, 10, 1).unwrap();
        let b = generate_dataset(&d, 1, 8, 10, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sequences[0].0.len(), 11);
        assert!(generate_dataset(&d, 1, 0, 10, 1).is_err());
        let bad = NoiseDistribution::Gaussian { mean: 0.0, std: -1.0 };
        assert!(matches!(
            generate_dataset(&bad, 1, 2, 3, 1),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn initial_only_noise_vanishes_later() {
        let d = NoiseDistribution::InitialOnly { mean: 0.0, std: 0.2 };
        let data = generate_dataset(&d, 8, 16, 100, 7).unwrap();
        for s in &data.sequences {
            assert!(s.0[0].iter().any(|v| *v != 0.0));
            assert!(s.0[1..].iter().flatten().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn gaussian_sample_mean_matches() {
        let d = NoiseDistribution::Gaussian { mean: 0.3, std: 0.3 };
        let data = generate_dataset(&d, 1, 10_000, 9, 3).unwrap();
        let n = 100_000.0;
        let mean = data.sequences.iter().flat_map(|s| s.0.iter()).map(|w| w[0]).sum::<f64>() / n;
        assert!((mean - 0.3).abs() < 3.0 * 0.3 / n.sqrt());
    }

    #[test]
    fn dataset_json_roundtrip() {
        let d = NoiseDistribution::Gaussian { mean: 0.0, std: 1.0 };
        let a = generate_dataset(&d, 2, 3, 4, 11).unwrap();
        let json = a.to_json().unwrap();
        assert!(json.starts_with("{\"state_dim\":2,\"horizon\":4,\"sequences\":[[["));
        assert_eq!(NoiseDataset::from_json(&json).unwrap(), a);
        assert!(NoiseDataset::from_json(r#"{"state_dim":1,"horizon":2,"sequences":[[[0.0]]]}"#).is_err());
    }

    #[test]
    fn lqr_gain_is_stabilizing() {
        let p = ScalarLti::default();
        let k = p.lqr_gain(5.0, 0.003);
        let (lo, hi) = p.stable_gain_interval();
        assert!(k > lo && k < hi);
        assert_abs_diff_eq!(lo, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 18.0, epsilon = 1e-12);
        // P from the gain must satisfy the Riccati equation.
        let cl = p.a - p.b * k;
        let pinf = (5.0 + 0.003 * k * k) / (1.0 - cl * cl);
        let riccati = 5.0 + p.a * p.a * pinf - (p.a * p.b * pinf).powi(2) / (0.003 + p.b * p.b * pinf);
        assert_abs_diff_eq!(riccati, pinf, epsilon = 1e-8 * pinf);
    }

    #[test]
    fn collision_detection() {
        let r = PlanarRobots::default();
        let apart = vec![vec![-2.0, -2.0, 0.0, 0.0, 2.0, -2.0, 0.0, 0.0]];
        assert!(!r.has_collision(&apart));
        let touching = vec![vec![0.0, -2.0, 0.0, 0.0, 0.3, -2.0, 0.0, 0.0]];
        assert!(r.has_collision(&touching));
        let in_obstacle = vec![vec![-2.5, 0.0, 0.0, 0.0, 2.0, -2.0, 0.0, 0.0]];
        assert!(r.has_collision(&in_obstacle));
    }
}
