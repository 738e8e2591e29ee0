//! PAC-Bayes upper and lower bounds on the true cost of a sampled controller.

use serde::Serialize;

use crate::error::{Error, Result};

/// Which bound produced a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundFamily {
    /// General posterior, explicit log density ratio.
    Randomized,
    /// Gibbs posterior with exact `ln Z`.
    GibbsExact,
    /// Gibbs posterior with a Monte-Carlo `ln Ẑ` and a McDiarmid correction.
    GibbsMonteCarlo,
}

/// A bound together with every term that went into it. Serializes to one CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub method: BoundFamily,
    pub s: usize,
    pub delta: f64,
    pub lambda: f64,
    pub c: f64,
    pub empirical_cost: f64,
    /// `ln Z` or `ln Ẑ`; empty for the randomized bound.
    pub ln_z: Option<f64>,
    /// `(1/λ)·ln dQ/dP` or `−(1/λ)·ln Z`.
    pub kl_term: f64,
    /// `(1/λ)·ln(1/δ)`.
    pub confidence_term: f64,
    /// `λC²/(8S)`.
    pub slack_term: f64,
    pub mc_correction: f64,
    pub n_p: Option<usize>,
    pub upper: f64,
    pub lower: f64,
    /// Probability with which each side holds on its own.
    pub per_side_validity: f64,
    /// Probability with which both sides hold together.
    pub joint_validity: f64,
}

fn check(lambda: f64, delta: f64, c: f64, s: usize) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("λ must be positive, got {lambda}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("δ must lie in (0, 1), got {delta}")));
    }
    if !(c > 0.0) || s == 0 {
        return Err(Error::InvalidArgument("C and S must be positive".into()));
    }
    Ok(())
}

/// `√(8 S ln(1/δ)) / C`.
pub fn lambda_star(s: usize, delta: f64, c: f64) -> Result<f64> {
    check(1.0, delta, c, s)?;
    Ok((8.0 * s as f64 * (1.0 / delta).ln()).sqrt() / c)
}

/// `δ / N_Q`.
pub fn union_delta(delta: f64, n_q: usize) -> Result<f64> {
    if n_q == 0 {
        return Err(Error::InvalidArgument("N_Q must be at least 1".into()));
    }
    Ok(delta / n_q as f64)
}

/// `(1/λ)·ln(1 + (e^{λC} − 1)/N_P)·√((N_P/2)·ln(1/δ))`, evaluated without overflow.
pub fn mcdiarmid_correction(lambda: f64, c: f64, n_p: usize, delta: f64) -> Result<f64> {
    check(lambda, delta, c, 1)?;
    if n_p == 0 {
        return Err(Error::InvalidArgument("N_P must be at least 1".into()));
    }
    let x = lambda * c;
    let n = n_p as f64;
    let log_term = if x < 30.0 {
        (x.exp_m1() / n).ln_1p()
    } else {
        x + ((n - 1.0) * (-x).exp()).ln_1p() - n.ln()
    };
    Ok(log_term / lambda * (0.5 * n * (1.0 / delta).ln()).sqrt())
}

fn base_terms(lambda: f64, delta: f64, c: f64, s: usize) -> (f64, f64) {
    ((1.0 / delta).ln() / lambda, lambda * c * c / (8.0 * s as f64))
}

/// Bounds for any posterior `Q`, given `ln dQ/dP(θ)` at the sampled `θ`.
pub fn bound_randomized(
    empirical_cost: f64,
    log_density_ratio: f64,
    lambda: f64,
    delta: f64,
    c: f64,
    s: usize,
) -> Result<BoundReport> {
    check(lambda, delta, c, s)?;
    let (conf, slack) = base_terms(lambda, delta, c, s);
    let kl = log_density_ratio / lambda;
    Ok(BoundReport {
        method: BoundFamily::Randomized,
        s,
        delta,
        lambda,
        c,
        empirical_cost,
        ln_z: None,
        kl_term: kl,
        confidence_term: conf,
        slack_term: slack,
        mc_correction: 0.0,
        n_p: None,
        upper: empirical_cost + kl + conf + slack,
        lower: empirical_cost - kl - conf - slack,
        per_side_validity: 1.0 - delta,
        joint_validity: 1.0 - 2.0 * delta,
    })
}

/// Bounds for `θ ∼ Q*` with the exact log partition function.
pub fn bounds_qstar_exact(
    empirical_cost: f64,
    ln_z: f64,
    lambda: f64,
    delta: f64,
    c: f64,
    s: usize,
) -> Result<BoundReport> {
    check(lambda, delta, c, s)?;
    let (conf, slack) = base_terms(lambda, delta, c, s);
    let kl = -ln_z / lambda;
    Ok(BoundReport {
        method: BoundFamily::GibbsExact,
        s,
        delta,
        lambda,
        c,
        empirical_cost,
        ln_z: Some(ln_z),
        kl_term: kl,
        confidence_term: conf,
        slack_term: slack,
        mc_correction: 0.0,
        n_p: None,
        upper: kl + conf + slack,
        lower: 2.0 * empirical_cost - kl - conf - slack,
        per_side_validity: 1.0 - delta,
        joint_validity: 1.0 - 2.0 * delta,
    })
}

/// Bounds for `θ ∼ Q*` with `ln Ẑ` from `n_p` prior samples.
pub fn bounds_qstar_mc(
    empirical_cost: f64,
    ln_z_hat: f64,
    n_p: usize,
    lambda: f64,
    delta: f64,
    c: f64,
    s: usize,
) -> Result<BoundReport> {
    let exact = bounds_qstar_exact(empirical_cost, ln_z_hat, lambda, delta, c, s)?;
    let corr = mcdiarmid_correction(lambda, c, n_p, delta)?;
    Ok(BoundReport {
        method: BoundFamily::GibbsMonteCarlo,
        mc_correction: corr,
        n_p: Some(n_p),
        upper: exact.upper + corr,
        lower: exact.lower - corr,
        per_side_validity: 1.0 - 2.0 * delta,
        joint_validity: 1.0 - 3.0 * delta,
        ..exact
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lambda_star_values() {
        assert_abs_diff_eq!(lambda_star(8, 0.2, 1.0).unwrap(), 10.1492, epsilon = 1e-3);
        assert_abs_diff_eq!(lambda_star(512, 0.2, 1.0).unwrap(), 81.193, epsilon = 1e-3);
        assert_abs_diff_eq!(lambda_star(32, 0.1, 1.0).unwrap(), 24.279, epsilon = 1e-3);
        assert!(lambda_star(0, 0.2, 1.0).is_err());
        assert!(lambda_star(8, 1.0, 1.0).is_err());
    }

    #[test]
    fn union_delta_values() {
        assert_abs_diff_eq!(union_delta(0.1, 10).unwrap(), 0.01, epsilon = 1e-18);
        assert_eq!(union_delta(0.1, 1).unwrap(), 0.1);
        assert_abs_diff_eq!(union_delta(0.2, 4).unwrap(), 0.05, epsilon = 1e-18);
        assert!(union_delta(0.1, 0).is_err());
    }

    #[test]
    fn randomized_plug_in() {
        let r = bound_randomized(0.3, 0.0, 1.0, (-1.0f64).exp(), 1.0, 8).unwrap();
        assert_abs_diff_eq!(r.upper, 0.3 + 1.0 + 1.0 / 64.0, epsilon = 1e-14);
        let r = bound_randomized(0.3, 0.7, 2.0, 0.1, 1.0, 8).unwrap();
        let half = 0.7 / 2.0 + 10f64.ln() / 2.0 + 2.0 / 64.0;
        assert_abs_diff_eq!(r.upper - r.lower, 2.0 * half, epsilon = 1e-14);
    }

    #[test]
    fn exact_with_unit_partition() {
        let r = bounds_qstar_exact(0.0, 0.0, 4.0, 0.2, 1.0, 8).unwrap();
        assert_abs_diff_eq!(r.upper, 5f64.ln() / 4.0 + 4.0 / 64.0, epsilon = 1e-15);
    }

    #[test]
    fn mcdiarmid_values() {
        assert_abs_diff_eq!(mcdiarmid_correction(1.0, 1.0, 100, 0.1).unwrap(), 0.18281, epsilon = 1e-5);
        let mut prev = f64::INFINITY;
        for e in 1..=6 {
            let c = mcdiarmid_correction(1.0, 1.0, 10usize.pow(e), 0.1).unwrap();
            assert!(c < prev);
            prev = c;
        }
        assert!(prev < 2e-3);
        // large λC stays finite and matches the direct formula where both work
        let direct = |l: f64, n: f64| (1.0 + (l.exp() - 1.0) / n).ln() / l * (0.5 * n * 10f64.ln()).sqrt();
        assert_abs_diff_eq!(
            mcdiarmid_correction(35.0, 1.0, 1000, 0.1).unwrap(),
            direct(35.0, 1000.0),
            epsilon = 1e-10
        );
        assert!(mcdiarmid_correction(900.0, 1.0, 1000, 0.1).unwrap().is_finite());
    }

    #[test]
    fn mc_report_adds_correction() {
        let e = bounds_qstar_exact(0.2, -1.0, 2.0, 0.1, 1.0, 16).unwrap();
        let m = bounds_qstar_mc(0.2, -1.0, 1000, 2.0, 0.1, 1.0, 16).unwrap();
        assert_abs_diff_eq!(m.upper - e.upper, m.mc_correction, epsilon = 1e-15);
        assert_abs_diff_eq!(e.lower - m.lower, m.mc_correction, epsilon = 1e-15);
        assert_abs_diff_eq!(m.joint_validity, 0.7, epsilon = 1e-15);
    }
}
