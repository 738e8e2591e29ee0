//! Planar normalizing flows `f(z) = z + û·tanh(wᵀz + b)` over a diagonal
//! Gaussian base.
//!
//! `û = u + (m(wᵀu) − wᵀu)·w/‖w‖²` with `m(x) = −1 + ln(1 + eˣ)` keeps
//! `wᵀû > −1`, so every layer is invertible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape};
use crate::error::{Error, Result};
use crate::pac::gibbs::GibbsPosterior;
use crate::pac::prior::LogDensity;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const INVERSE_MAX_ITER: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarLayer {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

/// Diagonal Gaussian base followed by planar layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarFlow {
    pub base_mean: Vec<f64>,
    pub base_log_std: Vec<f64>,
    pub layers: Vec<PlanarLayer>,
}

fn softplus<T: Real>(x: T) -> T {
    if x.value() > 0.0 {
        x + ((-x).exp() + 1.0).ln()
    } else {
        (x.exp() + 1.0).ln()
    }
}

/// `ln(e − 1)`, so that `m(0) = 0` below.
const SOFTPLUS_SHIFT: f64 = 0.541_324_854_612_918_1;

/// Invertibility-enforcing reparameterization of `u`:
/// `û = u + (m(wᵀu) − wᵀu)·w/‖w‖²` with `m(x) = softplus(x + ln(e − 1)) − 1`.
/// `m > −1` keeps every layer invertible and `m(0) = 0` makes `u = 0` the identity.
pub fn u_hat<T: Real>(u: &[T], w: &[T]) -> Vec<T> {
    let zero = u[0].lift(0.0);
    let wu = zero.add_dot(w, u);
    let ww = zero.add_dot(w, w);
    if ww.value() == 0.0 {
        return u.to_vec();
    }
    let coef = (softplus(wu + SOFTPLUS_SHIFT) - 1.0 - wu) / ww;
    u.iter().zip(w).map(|(ui, wi)| *ui + coef * *wi).collect()
}

fn layer_apply<T: Real>(z: &[T], uh: &[T], w: &[T], b: T) -> (Vec<T>, T) {
    let a = b.add_dot(w, z);
    let h = a.tanh();
    let out = z.iter().zip(uh).map(|(zi, ui)| *zi + *ui * h).collect();
    let wu = b.lift(0.0).add_dot(w, uh);
    let det = (-(h.square()) + 1.0) * wu + 1.0;
    (out, det.ln())
}

/// `(z', ln|det ∂z'/∂z|)` for one layer.
pub fn planar_forward(layer: &PlanarLayer, z: &[f64]) -> (Vec<f64>, f64) {
    let uh = u_hat(&layer.u, &layer.w);
    layer_apply(z, &uh, &layer.w, layer.b)
}

/// Scalar solve of `α + c·tanh(α + b) = target`, strictly increasing in `α` for `c ≥ −1`.
fn solve_alpha(target: f64, c: f64, b: f64) -> Result<f64> {
    let (mut lo, mut hi) = (target - c.abs() - 1e-12, target + c.abs() + 1e-12);
    let mut a = target;
    for _ in 0..INVERSE_MAX_ITER {
        let t = (a + b).tanh();
        let g = a + c * t - target;
        if g.abs() <= 1e-15 * (1.0 + target.abs()) {
            return Ok(a);
        }
        if g > 0.0 {
            hi = a;
        } else {
            lo = a;
        }
        let dg = 1.0 + c * (1.0 - t * t);
        let newton = a - g / dg;
        a = if dg > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * (1.0 + a.abs()) {
            return Ok(a);
        }
    }
    Err(Error::NonConvergence {
        what: "planar flow inverse",
        iterations: INVERSE_MAX_ITER,
    })
}

/// Inverse of [`planar_forward`] and the pre-image's `wᵀz`.
pub fn planar_inverse(layer: &PlanarLayer, y: &[f64]) -> Result<Vec<f64>> {
    let uh = u_hat(&layer.u, &layer.w);
    let c: f64 = layer.w.iter().zip(&uh).map(|(a, b)| a * b).sum();
    let wy: f64 = layer.w.iter().zip(y).map(|(a, b)| a * b).sum();
    let alpha = solve_alpha(wy, c, layer.b)?;
    let h = (alpha + layer.b).tanh();
    Ok(y.iter().zip(&uh).map(|(yi, ui)| yi - ui * h).collect())
}

impl PlanarFlow {
    /// Base `N(mean, diag(var))` with `n_layers` identity layers
    /// (`u = 0`, small random `w`, `b = 0`).
    pub fn new(mean: Vec<f64>, var: &[f64], n_layers: usize, w_std: f64, seed: u64) -> Result<Self> {
        if mean.len() != var.len() || mean.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: var.len(),
                context: "flow base dimension",
            });
        }
        if var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidDistribution("base variances must be positive".into()));
        }
        let d = mean.len();
        let n = Normal::new(0.0, w_std).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..n_layers)
            .map(|_| PlanarLayer {
                u: vec![0.0; d],
                w: (0..d).map(|_| n.sample(&mut rng)).collect(),
                b: 0.0,
            })
            .collect();
        Ok(Self {
            base_log_std: var.iter().map(|v| 0.5 * v.ln()).collect(),
            base_mean: mean,
            layers,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        let d = self.base_mean.len();
        2 * d + self.layers.len() * (2 * d + 1)
    }

    /// `[mean, log_std, (u, w, b) per layer]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend(&self.base_mean);
        v.extend(&self.base_log_std);
        for l in &self.layers {
            v.extend(&l.u);
            v.extend(&l.w);
            v.push(l.b);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: flat.len(),
                context: "flow parameter count",
            });
        }
        let d = self.base_mean.len();
        self.base_mean.copy_from_slice(&flat[..d]);
        self.base_log_std.copy_from_slice(&flat[d..2 * d]);
        let mut off = 2 * d;
        for l in &mut self.layers {
            l.u.copy_from_slice(&flat[off..off + d]);
            l.w.copy_from_slice(&flat[off + d..off + 2 * d]);
            l.b = flat[off + 2 * d];
            off += 2 * d + 1;
        }
        Ok(())
    }

    /// Reparameterized sample `θ(ε)` and `log q(θ)`, generic in the flow parameters.
    pub fn transform_t<T: Real>(d: usize, n_layers: usize, params: &[T], eps: &[f64]) -> (Vec<T>, T) {
        let mean = &params[..d];
        let log_std = &params[d..2 * d];
        let mut z: Vec<T> = mean
            .iter()
            .zip(log_std)
            .zip(eps)
            .map(|((m, s), e)| *m + s.exp() * *e)
            .collect();
        let zero = params[0].lift(0.0);
        let sum_log_std = log_std.iter().fold(zero, |a, s| a + *s);
        let quad: f64 = eps.iter().map(|e| e * e).sum();
        let mut log_q = -sum_log_std - 0.5 * (quad + d as f64 * LN_2PI);
        let mut off = 2 * d;
        for _ in 0..n_layers {
            let u = &params[off..off + d];
            let w = &params[off + d..off + 2 * d];
            let b = params[off + 2 * d];
            let uh = u_hat(u, w);
            let (next, ld) = layer_apply(&z, &uh, w, b);
            z = next;
            log_q = log_q - ld;
            off += 2 * d + 1;
        }
        (z, log_q)
    }

    /// One sample and its log density.
    pub fn sample_with_log_q(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
        let eps: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        Self::transform_t(self.dim(), self.num_layers(), &self.to_flat(), &eps)
    }

    /// Pre-images `z_0, …, z_L` of `θ` (with `z_L = θ`).
    fn invert(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut zs = vec![theta.to_vec()];
        for l in self.layers.iter().rev() {
            let prev = planar_inverse(l, zs.last().expect("nonempty"))?;
            zs.push(prev);
        }
        zs.reverse();
        Ok(zs)
    }

    fn base_log_density_t<T: Real>(&self, z0: &[T]) -> T {
        let zero = z0[0].lift(0.0);
        let mut acc = zero;
        for ((z, m), s) in z0.iter().zip(&self.base_mean).zip(&self.base_log_std) {
            acc = acc + ((*z - *m) * (-s).exp()).square() * -0.5 - *s;
        }
        acc - 0.5 * z0.len() as f64 * LN_2PI
    }
}

impl LogDensity for PlanarFlow {
    fn dim(&self) -> usize {
        self.base_mean.len()
    }

    /// Inverts value-wise, then re-attaches the pre-images to `θ` through the
    /// implicit-function derivative `∂α/∂y = w / (1 + wᵀû·sech²(α + b))`,
    /// which gives exact values and exact first derivatives.
    fn log_density_t<T: Real>(&self, theta: &[T]) -> Result<T> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
                context: "flow dimension",
            });
        }
        let values: Vec<f64> = theta.iter().map(|t| t.value()).collect();
        let zs = self.invert(&values)?;
        let zero = theta[0].lift(0.0);
        let mut y: Vec<T> = theta.to_vec();
        let mut log_det_sum = zero;
        for (idx, l) in self.layers.iter().enumerate().rev() {
            let uh = u_hat(&l.u, &l.w);
            let c: f64 = l.w.iter().zip(&uh).map(|(a, b)| a * b).sum();
            let z_val = &zs[idx];
            let alpha: f64 = l.w.iter().zip(z_val).map(|(a, b)| a * b).sum();
            let y_val = &zs[idx + 1];
            let wy_val: f64 = l.w.iter().zip(y_val).map(|(a, b)| a * b).sum();
            let sech2 = 1.0 - (alpha + l.b).tanh().powi(2);
            let wy_t = zero.add_dot_const(&y, &l.w) - wy_val;
            let alpha_t = wy_t / (1.0 + c * sech2) + alpha;
            let h = (alpha_t + l.b).tanh();
            let det = (-(h.square()) + 1.0) * c + 1.0;
            log_det_sum = log_det_sum + det.ln();
            y = y.iter().zip(&uh).map(|(yi, ui)| *yi - h * *ui).collect();
        }
        Ok(self.base_log_density_t(&y) - log_det_sum)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.sample_with_log_q(rng).0
    }
}

/// An unnormalized log target on any [`Real`].
pub trait LogTarget: Sync {
    fn dim(&self) -> usize;
    fn log_unnorm_t<T: Real>(&self, theta: &[T]) -> Result<T>;
}

impl<P: LogDensity> LogTarget for GibbsPosterior<'_, P> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }
    fn log_unnorm_t<T: Real>(&self, theta: &[T]) -> Result<T> {
        GibbsPosterior::log_unnorm_t(self, theta)
    }
}

/// Stochastic-gradient settings for [`flow_train`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTrainOptions {
    pub n_mc: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Gradient norm cap; `None` for plain SGD.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

/// Minimizes `E[log q(θ) − log target(θ)]` by SGD on the flow parameters.
/// Returns the trained flow and the per-step objective estimates.
///
/// Aborts with [`Error::Divergence`] when the objective turns non-finite or
/// exceeds `J₀ + 10·max(|J₀|, 1)`.
pub fn flow_train<L: LogTarget>(flow: &PlanarFlow, target: &L, opts: &FlowTrainOptions) -> Result<(PlanarFlow, Vec<f64>)> {
    if opts.n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    if target.dim() != flow.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: flow.dim(),
            context: "flow vs target dimension",
        });
    }
    let d = flow.dim();
    let n_layers = flow.num_layers();
    let mut params = flow.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trace = Vec::with_capacity(opts.steps);
    let mut initial = None;
    for step in 0..opts.steps {
        let eps: Vec<Vec<f64>> = (0..opts.n_mc)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let parts: Vec<(f64, Vec<f64>)> = eps
            .par_iter()
            .map(|e| {
                let tape = Tape::new();
                let vars = tape.vars(&params);
                let (theta, log_q) = PlanarFlow::transform_t(d, n_layers, &vars, e);
                let j = log_q - target.log_unnorm_t(&theta)?;
                let g = tape.backward(j)?;
                Ok((j.value(), g.wrt_all(&vars)))
            })
            .collect::<Result<_>>()?;
        let n = opts.n_mc as f64;
        let objective = parts.iter().map(|p| p.0).sum::<f64>() / n;
        let init = *initial.get_or_insert(objective);
        if !objective.is_finite() || objective > init + 10.0 * init.abs().max(1.0) {
            return Err(Error::Divergence {
                step,
                objective,
                initial: init,
            });
        }
        trace.push(objective);
        if opts.learning_rate == 0.0 {
            continue;
        }
        let mut grad = vec![0.0; params.len()];
        for (_, g) in &parts {
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b / n);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step,
                objective: f64::NAN,
                initial: init,
            });
        }
        let scale = match opts.max_grad_norm {
            Some(cap) => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cap {
                    cap / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= opts.learning_rate * scale * g);
    }
    let mut out = flow.clone();
    out.set_flat(&params)?;
    Ok((out, trace))
}
