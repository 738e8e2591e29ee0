//! Controller families: affine state feedback and the internal-model
//! controller driven by a recurrent equilibrium network (REN).
//!
//! The IMC controller reconstructs the disturbance `ŵ_t = x_t − f(x_{t−1}, u_{t−1})`
//! from the exact plant model and feeds it to the REN, so closed-loop stability
//! reduces to stability of the REN itself, which holds for every parameter
//! vector.
//!
//! # REN parameter ordering
//!
//! With `n = xi_dim`, `q = zeta_dim`, `m = in_dim`, `p = out_dim`, the flat
//! vector is the concatenation of row-major blocks
//!
//! | block | shape |
//! |-------|-------|
//! | `X`   | `(2n+q) × (2n+q)` |
//! | `Y`   | `n × n` |
//! | `B2`  | `n × m` |
//! | `C2`  | `p × n` |
//! | `D21` | `p × q` |
//! | `D22` | `p × m` |
//! | `D12` | `q × m` |
//!
//! `H = XᵀX + εI` is partitioned into `(n, q, n)` blocks and yields the
//! contracting implicit model `E ξ⁺ = F ξ + B1 σ(ζ) + B2 ŵ`,
//! `Λ ζ = C1 ξ + D11 σ(ζ) + D12 ŵ` with strictly lower-triangular `D11`, so
//! `ζ` is solved by forward substitution. The explicit state map
//! `E⁻¹[F B1 B2]` and the output map `[C2 D21 D22]` are then scaled so their
//! spectral norms do not exceed `state_gain` and `output_gain`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::linalg::{leading_singular, Mat};
use crate::sim::Plant;

/// Margin used to turn the open stability interval into a closed one.
pub const GAIN_EPS: f64 = 1e-6;

/// Dimensions and gain bounds of an IMC-REN controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenShape {
    pub xi_dim: usize,
    pub zeta_dim: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_state_gain")]
    pub state_gain: f64,
    #[serde(default = "default_output_gain")]
    pub output_gain: f64,
}

fn default_epsilon() -> f64 {
    1e-3
}
fn default_state_gain() -> f64 {
    0.95
}
fn default_output_gain() -> f64 {
    2.0
}

impl RenShape {
    pub fn new(xi_dim: usize, zeta_dim: usize, in_dim: usize, out_dim: usize) -> Self {
        Self {
            xi_dim,
            zeta_dim,
            in_dim,
            out_dim,
            epsilon: default_epsilon(),
            state_gain: default_state_gain(),
            output_gain: default_output_gain(),
        }
    }

    /// REN sized for `plant`: input is the state dimension, output the input dimension.
    pub fn for_plant(plant: &Plant, xi_dim: usize, zeta_dim: usize) -> Self {
        Self::new(xi_dim, zeta_dim, plant.state_dim(), plant.input_dim())
    }

    pub fn num_params(&self) -> usize {
        let (n, q, m, p) = (self.xi_dim, self.zeta_dim, self.in_dim, self.out_dim);
        let h = 2 * n + q;
        h * h + n * n + n * m + p * n + p * q + p * m + q * m
    }

    fn validate(&self) -> Result<()> {
        if self.xi_dim == 0 || self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::InvalidArgument("REN dimensions must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("REN epsilon must be positive".into()));
        }
        if !(self.state_gain > 0.0 && self.state_gain <= 1.0) {
            return Err(Error::InvalidArgument("REN state gain must lie in (0, 1]".into()));
        }
        if !(self.output_gain > 0.0 && self.output_gain.is_finite()) {
            return Err(Error::InvalidArgument("REN output gain must be positive".into()));
        }
        Ok(())
    }
}

/// Controller architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    /// `u = −(k x + β)`, `θ = [k, β]`.
    Affine,
    ImcRen(RenShape),
}

impl Arch {
    pub fn num_params(&self) -> usize {
        match self {
            Arch::Affine => 2,
            Arch::ImcRen(s) => s.num_params(),
        }
    }

    /// `N(0, std²)` draw of a parameter vector.
    pub fn init_gaussian<R: Rng + ?Sized>(&self, std: f64, rng: &mut R) -> Result<Vec<f64>> {
        let n = Normal::new(0.0, std).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
        Ok((0..self.num_params()).map(|_| n.sample(rng)).collect())
    }
}

/// A controller checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub arch: Arch,
    pub theta: Vec<f64>,
}

impl ControllerParams {
    pub fn new(arch: Arch, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                expected: arch.num_params(),
                got: theta.len(),
                context: "controller parameter count",
            });
        }
        Ok(Self { arch, theta })
    }

    pub fn policy(&self) -> Result<Policy<f64>> {
        Policy::build(&self.arch, &self.theta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let raw: ControllerParams = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(raw.arch, raw.theta)
    }
}

/// `−(k x + β)`.
pub fn affine_act<T: Real>(k: T, beta: T, x: T) -> T {
    -(k * x + beta)
}

/// Clamps `k` into `[−2 + ε, 18 − ε]`, the stabilizing gains of the default scalar plant.
pub fn project_gain(k: f64) -> f64 {
    project_gain_in(k, (-2.0, 18.0))
}

/// Clamps `k` into the closed interval `GAIN_EPS` inside `interval`.
pub fn project_gain_in(k: f64, interval: (f64, f64)) -> f64 {
    k.clamp(interval.0 + GAIN_EPS, interval.1 - GAIN_EPS)
}

/// `ŵ_t = x_t − f(x_{t−1}, u_{t−1})`, and `ŵ_0 = x_0 − x̄`.
pub fn reconstruct_disturbance<T: Real>(plant: &Plant, states: &[Vec<T>], inputs: &[Vec<T>]) -> Result<Vec<T>> {
    let Some(x) = states.last() else {
        return Err(Error::InvalidArgument("empty state history".into()));
    };
    if x.len() != plant.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: plant.state_dim(),
            got: x.len(),
            context: "state dimension",
        });
    }
    let t = states.len() - 1;
    if t == 0 {
        return Ok(x.iter().zip(plant.nominal_state()).map(|(x, xb)| *x - xb).collect());
    }
    let u = inputs.get(t - 1).ok_or(Error::DimensionMismatch {
        expected: t,
        got: inputs.len(),
        context: "input history length",
    })?;
    if u.len() != plant.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: plant.input_dim(),
            got: u.len(),
            context: "input dimension",
        });
    }
    let pred = plant.dynamics(&states[t - 1], u);
    Ok(x.iter().zip(pred).map(|(x, p)| *x - p).collect())
}

/// A realized REN: explicit maps acting on `z = [ξ; σ(ζ); ŵ]`.
#[derive(Clone, Debug)]
pub struct Ren<T> {
    pub xi_dim: usize,
    pub zeta_dim: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    /// `Λ⁻¹[C1 D11 D12]`, `q × (n+q+m)`, `D11` strictly lower triangular.
    pub zeta_map: Mat<T>,
    /// `[A B̃1 B̃2]`, `n × (n+q+m)`.
    pub state_map: Mat<T>,
    /// `[C2 D21 D22]`, `p × (n+q+m)`.
    pub output_map: Mat<T>,
}

/// REN internal state, zero at `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenState<T> {
    pub xi: Vec<T>,
    /// Disturbances fed so far.
    pub history: Vec<Vec<f64>>,
}

impl<T: Real> RenState<T> {
    pub fn zero(xi_dim: usize, zero: T) -> Self {
        Self {
            xi: vec![zero; xi_dim],
            history: Vec::new(),
        }
    }
}

fn scale_to_gain<T: Real>(m: &mut Mat<T>, gain: f64, zero: T) {
    let (sigma, u, v) = leading_singular(&m.values(), 500, 1e-12);
    if sigma > gain {
        let mut uv = Vec::with_capacity(m.data.len());
        for ui in &u {
            uv.extend(v.iter().map(|vj| ui * vj));
        }
        let sigma_t = zero.add_dot_const(&m.data, &uv);
        m.scale(sigma_t.recip() * gain);
    }
}

impl<T: Real> Ren<T> {
    pub fn from_theta(shape: &RenShape, theta: &[T]) -> Result<Self> {
        shape.validate()?;
        if theta.len() != shape.num_params() {
            return Err(Error::DimensionMismatch {
                expected: shape.num_params(),
                got: theta.len(),
                context: "REN parameter count",
            });
        }
        let (n, q, m, p) = (shape.xi_dim, shape.zeta_dim, shape.in_dim, shape.out_dim);
        let zero = theta[0].lift(0.0);
        let mut rest = theta;
        let mut take = |r: usize, c: usize| {
            let (head, tail) = rest.split_at(r * c);
            rest = tail;
            Mat::from_vec(r, c, head.to_vec())
        };
        let nh = 2 * n + q;
        let x = take(nh, nh);
        let y = take(n, n);
        let b2 = take(n, m);
        let c2 = take(p, n);
        let d21 = take(p, q);
        let d22 = take(p, m);
        let d12 = take(q, m);

        let mut h = x.transpose().matmul(zero, &x);
        for i in 0..nh {
            let v = h.get(i, i) + shape.epsilon;
            h.set(i, i, v);
        }
        let (o2, o3) = (n, n + q);
        let f = h.block(o3, 0, n, n);
        let b1 = h.block(o3, o2, n, q);
        let mut e = Mat::filled(n, n, zero);
        for i in 0..n {
            for j in 0..n {
                let v = (h.get(i, j) + h.get(o3 + i, o3 + j) + y.get(i, j) - y.get(j, i)) * 0.5;
                e.set(i, j, v);
            }
        }
        let mut state_map = e.solve(&Mat::hcat(&[&f, &b1, &b2]))?;

        let width = n + q + m;
        let mut zeta_map = Mat::filled(q, width, zero);
        for i in 0..q {
            let inv_lambda = (h.get(o2 + i, o2 + i) * 0.5).recip();
            for j in 0..n {
                zeta_map.set(i, j, -h.get(o2 + i, j) * inv_lambda);
            }
            for j in 0..i {
                zeta_map.set(i, n + j, -h.get(o2 + i, o2 + j) * inv_lambda);
            }
            for j in 0..m {
                zeta_map.set(i, n + q + j, d12.get(i, j) * inv_lambda);
            }
        }
        let mut output_map = Mat::hcat(&[&c2, &d21, &d22]);

        scale_to_gain(&mut state_map, shape.state_gain, zero);
        scale_to_gain(&mut output_map, shape.output_gain, zero);
        Ok(Self {
            xi_dim: n,
            zeta_dim: q,
            in_dim: m,
            out_dim: p,
            zeta_map,
            state_map,
            output_map,
        })
    }

    /// One step: returns `u_t` and advances `state`.
    pub fn forward(&self, state: &mut RenState<T>, w_hat: &[T]) -> Result<Vec<T>> {
        if w_hat.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                got: w_hat.len(),
                context: "REN input dimension",
            });
        }
        let zero = match w_hat.first() {
            Some(w) => w.lift(0.0),
            None => state.xi[0].lift(0.0),
        };
        let (n, q) = (self.xi_dim, self.zeta_dim);
        let mut z = Vec::with_capacity(n + q + self.in_dim);
        z.extend_from_slice(&state.xi);
        z.extend(std::iter::repeat_n(zero, q));
        z.extend_from_slice(w_hat);
        for i in 0..q {
            // σ_j for j ≥ i are still zero, and so are their coefficients.
            let zeta = zero.add_dot(self.zeta_map.row(i), &z);
            z[n + i] = zeta.tanh();
        }
        state.xi = self.state_map.matvec(zero, &z);
        state.history.push(w_hat.iter().map(|w| w.value()).collect());
        Ok(self.output_map.matvec(zero, &z))
    }
}

/// A controller realized for evaluation over `T`.
#[derive(Clone, Debug)]
pub enum Policy<T> {
    Affine { k: T, beta: T },
    Imc(Ren<T>),
}

/// Per-rollout controller memory.
#[derive(Clone, Debug)]
pub enum PolicyState<T> {
    Stateless,
    Ren(RenState<T>),
}

impl<T: Real> PolicyState<T> {
    pub fn new(policy: &Policy<T>) -> Self {
        match policy {
            Policy::Affine { .. } => PolicyState::Stateless,
            Policy::Imc(ren) => {
                PolicyState::Ren(RenState::zero(ren.xi_dim, ren.output_map.data[0].lift(0.0)))
            }
        }
    }
}

impl<T: Real> Policy<T> {
    pub fn build(arch: &Arch, theta: &[T]) -> Result<Self> {
        if theta.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                expected: arch.num_params(),
                got: theta.len(),
                context: "controller parameter count",
            });
        }
        match arch {
            Arch::Affine => Ok(Policy::Affine {
                k: theta[0],
                beta: theta[1],
            }),
            Arch::ImcRen(shape) => Ok(Policy::Imc(Ren::from_theta(shape, theta)?)),
        }
    }

    /// Zero in the policy's numeric context.
    pub fn zero(&self) -> T {
        match self {
            Policy::Affine { k, .. } => k.lift(0.0),
            Policy::Imc(ren) => ren.output_map.data[0].lift(0.0),
        }
    }

    pub fn check_plant(&self, plant: &Plant) -> Result<()> {
        let (inp, out) = match self {
            Policy::Affine { .. } => (1, 1),
            Policy::Imc(ren) => (ren.in_dim, ren.out_dim),
        };
        if inp != plant.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: plant.state_dim(),
                got: inp,
                context: "controller input vs plant state",
            });
        }
        if out != plant.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: plant.input_dim(),
                got: out,
                context: "controller output vs plant input",
            });
        }
        Ok(())
    }

    /// `u_t` from the histories up to `x_t` and `u_{t−1}`.
    pub fn act(
        &self,
        plant: &Plant,
        states: &[Vec<T>],
        inputs: &[Vec<T>],
        state: &mut PolicyState<T>,
    ) -> Result<Vec<T>> {
        match (self, state) {
            (Policy::Affine { k, beta }, _) => {
                let x = states
                    .last()
                    .ok_or_else(|| Error::InvalidArgument("empty state history".into()))?;
                Ok(vec![affine_act(*k, *beta, x[0])])
            }
            (Policy::Imc(ren), PolicyState::Ren(rs)) => {
                let w_hat = reconstruct_disturbance(plant, states, inputs)?;
                ren.forward(rs, &w_hat)
            }
            (Policy::Imc(_), PolicyState::Stateless) => {
                Err(Error::InvalidArgument("IMC controller needs a REN state".into()))
            }
        }
    }
}
