//! Data-independent priors over controller parameters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A density that can be evaluated on any [`Real`] and sampled.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// `log p(θ)`; `−∞` outside the support.
    fn log_density_t<T: Real>(&self, theta: &[T]) -> Result<T>;
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        self.log_density_t(theta)
    }
}

/// One-dimensional factor of a product prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Gaussian { mean: f64, variance: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Gaussian { mean, variance } => {
                if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
                    return Err(Error::InvalidDistribution(format!("Gaussian variance {variance}")));
                }
            }
            Marginal::Uniform { lo, hi } => {
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    return Err(Error::InvalidDistribution(format!("uniform support [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }

    pub fn log_pdf_t<T: Real>(&self, x: T) -> T {
        match *self {
            Marginal::Gaussian { mean, variance } => {
                (x - mean).square() * (-0.5 / variance) - 0.5 * (LN_2PI + variance.ln())
            }
            Marginal::Uniform { lo, hi } => {
                let v = x.value();
                if v >= lo && v <= hi {
                    x.lift(-(hi - lo).ln())
                } else {
                    x.lift(f64::NEG_INFINITY)
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Marginal::Gaussian { mean, variance } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + variance.sqrt() * z
            }
            Marginal::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }

    /// Gridding interval: `mean ± n_std·σ`, or the full support.
    pub fn extent(&self, n_std: f64) -> (f64, f64) {
        match *self {
            Marginal::Gaussian { mean, variance } => {
                let s = variance.sqrt();
                (mean - n_std * s, mean + n_std * s)
            }
            Marginal::Uniform { lo, hi } => (lo, hi),
        }
    }

    /// Prior probability of `[a, b]`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        match *self {
            Marginal::Gaussian { mean, variance } => {
                let s = (2.0 * variance).sqrt();
                0.5 * (libm::erf((b - mean) / s) - libm::erf((a - mean) / s))
            }
            Marginal::Uniform { lo, hi } => ((b.min(hi) - a.max(lo)) / (hi - lo)).max(0.0),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Gaussian { mean, .. } => mean,
            Marginal::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }
}

/// Prior families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    /// `N(mean, variance·I)`.
    GaussianIso { mean: Vec<f64>, variance: f64 },
    /// Independent factors on `θ = [k, β]`.
    Product2d { k: Marginal, beta: Marginal },
}

impl Prior {
    pub fn zero_mean(dim: usize, variance: f64) -> Self {
        Prior::GaussianIso {
            mean: vec![0.0; dim],
            variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Prior::GaussianIso { mean, variance } => {
                if mean.is_empty() {
                    return Err(Error::InvalidDistribution("empty prior mean".into()));
                }
                Marginal::Gaussian {
                    mean: 0.0,
                    variance: *variance,
                }
                .validate()
            }
            Prior::Product2d { k, beta } => {
                k.validate()?;
                beta.validate()
            }
        }
    }

    /// Gradient of `log p` at `θ` (zero inside a uniform support).
    pub fn grad_log_density(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            Prior::GaussianIso { mean, variance } => {
                theta.iter().zip(mean).map(|(t, m)| -(t - m) / variance).collect()
            }
            Prior::Product2d { k, beta } => [k, beta]
                .iter()
                .zip(theta)
                .map(|(m, t)| match **m {
                    Marginal::Gaussian { mean, variance } => -(t - mean) / variance,
                    Marginal::Uniform { .. } => 0.0,
                })
                .collect(),
        }
    }
}

impl LogDensity for Prior {
    fn dim(&self) -> usize {
        match self {
            Prior::GaussianIso { mean, .. } => mean.len(),
            Prior::Product2d { .. } => 2,
        }
    }

    fn log_density_t<T: Real>(&self, theta: &[T]) -> Result<T> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
                context: "prior dimension",
            });
        }
        match self {
            Prior::GaussianIso { mean, variance } => {
                let zero = theta[0].lift(0.0);
                let diffs: Vec<T> = theta.iter().zip(mean).map(|(t, m)| *t - *m).collect();
                let sq = zero.add_dot(&diffs, &diffs);
                let d = theta.len() as f64;
                Ok(sq * (-0.5 / variance) - 0.5 * d * (LN_2PI + variance.ln()))
            }
            Prior::Product2d { k, beta } => Ok(k.log_pdf_t(theta[0]) + beta.log_pdf_t(theta[1])),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Prior::GaussianIso { mean, variance } => {
                let n = Normal::new(0.0, variance.sqrt()).expect("validated variance");
                mean.iter().map(|m| m + n.sample(rng)).collect()
            }
            Prior::Product2d { k, beta } => vec![k.sample(rng), beta.sample(rng)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn gaussian_iso_density() {
        let p = Prior::zero_mean(2, 4.0);
        let v = p.log_density(&[2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v, -0.5 - LN_2PI - 4f64.ln(), epsilon = 1e-14);
        assert_eq!(p.grad_log_density(&[2.0, -4.0]), vec![-0.5, 1.0]);
        assert!(p.log_density(&[1.0]).is_err());
    }

    #[test]
    fn product_density_and_support() {
        let p = Prior::Product2d {
            k: Marginal::Gaussian {
                mean: 1.0,
                variance: 1.0,
            },
            beta: Marginal::Uniform { lo: -5.0, hi: 5.0 },
        };
        let v = p.log_density(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v, -0.5 * LN_2PI - 10f64.ln(), epsilon = 1e-14);
        assert_eq!(p.log_density(&[1.0, 6.0]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn marginal_mass_and_extent() {
        let g = Marginal::Gaussian {
            mean: 3.0,
            variance: 2.25,
        };
        let (a, b) = g.extent(2.0);
        assert_abs_diff_eq!(g.mass(a, b), 0.954_499_736, epsilon = 1e-8);
        let u = Marginal::Uniform { lo: -5.0, hi: 5.0 };
        assert_eq!(u.mass(-5.0, 5.0), 1.0);
        assert_eq!(u.mass(0.0, 10.0), 0.5);
    }

    #[test]
    fn sampling_is_seeded() {
        let p = Prior::zero_mean(3, 1.0);
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(p.sample(&mut r1), p.sample(&mut r2));
    }
}
