//! Stein variational gradient descent with an RBF kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN_BANDWIDTH: f64 = 1e-8;

/// Kernel bandwidth rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bandwidth {
    /// `h = med² / ln(k + 1)` over pairwise distances.
    Median,
    Fixed { h: f64 },
}

impl Bandwidth {
    pub fn resolve(&self, particles: &[Vec<f64>]) -> f64 {
        match *self {
            Bandwidth::Median => median_bandwidth(particles),
            Bandwidth::Fixed { h } => h,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `med² / ln(k + 1)`, floored at `1e-8`; `1` for a single particle.
pub fn median_bandwidth(particles: &[Vec<f64>]) -> f64 {
    let k = particles.len();
    if k < 2 {
        return 1.0;
    }
    let mut d: Vec<f64> = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            d.push(sq_dist(&particles[i], &particles[j]).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    };
    (med * med / ((k + 1) as f64).ln()).max(MIN_BANDWIDTH)
}

/// One update `φᵢ ← φᵢ + η·(1/k)Σⱼ[κ(φⱼ,φᵢ)∇log Q(φⱼ) + ∇_{φⱼ}κ(φⱼ,φᵢ)]`
/// with `κ(a, b) = exp(−‖a − b‖²/h)`.
pub fn svgd_step(particles: &[Vec<f64>], grads: &[Vec<f64>], eta: f64, h: f64) -> Result<Vec<Vec<f64>>> {
    let k = particles.len();
    if k == 0 || grads.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: grads.len(),
            context: "SVGD gradients per particle",
        });
    }
    let d = particles[0].len();
    for (i, (p, g)) in particles.iter().zip(grads).enumerate() {
        if p.len() != d || g.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len().max(g.len()),
                context: "SVGD particle dimension",
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { particle: i });
        }
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("bandwidth must be positive".into()));
    }
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let mut phi = vec![0.0; d];
        for j in 0..k {
            let kern = (-sq_dist(&particles[j], &particles[i]) / h).exp();
            for c in 0..d {
                // ∇_{φⱼ}κ(φⱼ, φᵢ) = −2(φⱼ − φᵢ)/h · κ
                let repulse = -2.0 * (particles[j][c] - particles[i][c]) / h * kern;
                phi[c] += kern * grads[j][c] + repulse;
            }
        }
        out.push(
            particles[i]
                .iter()
                .zip(&phi)
                .map(|(p, f)| p + eta * (f / k as f64))
                .collect(),
        );
    }
    Ok(out)
}

/// Largest coordinate change between two particle sets.
pub fn max_displacement(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bandwidth_rules() {
        let two = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        assert_abs_diff_eq!(median_bandwidth(&two), 25.0 / 3f64.ln(), epsilon = 1e-12);
        let same = vec![vec![1.0]; 4];
        assert_eq!(median_bandwidth(&same), 1e-8);
        assert_eq!(median_bandwidth(&[vec![1.0, 2.0]]), 1.0);
        let ps = vec![vec![0.0], vec![1.0], vec![3.0], vec![7.0]];
        let scaled: Vec<Vec<f64>> = ps.iter().map(|p| vec![p[0] * 2.5]).collect();
        assert_abs_diff_eq!(median_bandwidth(&scaled), 6.25 * median_bandwidth(&ps), epsilon = 1e-12);
    }

    #[test]
    fn single_particle_is_gradient_ascent() {
        let p = vec![vec![0.3, -1.2]];
        let g = vec![vec![2.0, 0.5]];
        let out = svgd_step(&p, &g, 0.1, 1.0).unwrap();
        assert_eq!(out[0], vec![0.3 + 0.1 * 2.0, -1.2 + 0.1 * 0.5]);
    }

    #[test]
    fn coincident_particles_move_together_and_zero_step_is_identity() {
        let p = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let g = vec![vec![0.5, -0.5], vec![0.1, 0.2]];
        let out = svgd_step(&p, &g, 0.2, 0.7).unwrap();
        assert_eq!(out[0], out[1]);
        let still = svgd_step(&p, &g, 0.0, 0.7).unwrap();
        assert_eq!(still, p);
    }

    #[test]
    fn nonfinite_gradient_is_reported() {
        let p = vec![vec![0.0], vec![1.0]];
        let g = vec![vec![0.0], vec![f64::NAN]];
        assert!(matches!(svgd_step(&p, &g, 0.1, 1.0), Err(Error::NonFiniteGradient { particle: 1 })));
    }

    #[test]
    fn separated_particles_at_stationary_points_stay() {
        let p = vec![vec![0.0], vec![100.0]];
        let g = vec![vec![0.0], vec![0.0]];
        let out = svgd_step(&p, &g, 1.0, 1.0).unwrap();
        assert!(max_displacement(&p, &out) < 1e-10);
    }
}
