use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pacsnoc::controller::{project_gain, Arch, Policy, RenShape};
use pacsnoc::cost::{default_gamma, transform_cost, CostKind, CostSpec};
use pacsnoc::inference::grid::{Axis, GridPosterior};
use pacsnoc::pac::bounds::{bounds_qstar_exact, bounds_qstar_mc};
use pacsnoc::pac::gibbs::{log_partition_estimate, Task};
use pacsnoc::selection::bootstrap_select_costs;
use pacsnoc::sim::{rollout, NoiseSequence, Plant, PlanarRobots, ScalarLti};

fn lti_task() -> Task {
    let plant = Plant::ScalarLti(ScalarLti::default());
    let kind = CostKind::lti_default();
    let gamma = default_gamma(&kind, &plant, 10).unwrap();
    Task::new(plant, CostSpec { kind, bound: 1.0, gamma }, Arch::Affine).unwrap()
}

fn seq_from(values: &[f64]) -> NoiseSequence {
    NoiseSequence(values.iter().map(|v| vec![*v]).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn transform_is_monotone_and_bounded(a in 0.0f64..1e4, d in 1e-6f64..1e3, gamma in 1e-2f64..1e3, c in 0.1f64..10.0) {
        let lo = transform_cost(a, c, gamma);
        let hi = transform_cost(a + d, c, gamma);
        prop_assert!(lo >= 0.0 && hi < c);
        // strict only where tanh has not saturated in double precision
        if (a + d) / gamma < 15.0 {
            prop_assert!(lo < hi);
        } else {
            prop_assert!(lo <= hi);
        }
    }

    #[test]
    fn transform_is_near_linear_for_small_costs(r in 0.0f64..0.5, gamma in 1e-2f64..1e3, c in 0.1f64..10.0) {
        let raw = r * gamma;
        let err = (transform_cost(raw, c, gamma) - c * r).abs();
        prop_assert!(err <= c * r.powi(3) / 3.0 + 1e-15);
    }

    #[test]
    fn projected_gain_is_stabilizing(k in -1e6f64..1e6) {
        let p = ScalarLti::default();
        let kp = project_gain(k);
        prop_assert!((p.a - p.b * kp).abs() < 1.0);
        let (lo, hi) = p.stable_gain_interval();
        prop_assert!(kp > lo && kp < hi);
    }

    #[test]
    fn lti_closed_loop_contracts_once_noise_stops(k in -1.99f64..17.99, w in prop::collection::vec(-2.0f64..2.0, 4)) {
        let task = lti_task();
        let mut noise = w.clone();
        noise.extend(std::iter::repeat_n(0.0, 7));
        let policy = Policy::build(&task.arch, &[k, 0.0]).unwrap();
        let tr = rollout(&task.plant, &policy, &seq_from(&noise)).unwrap();
        let rate = (0.8 - 0.1 * k).abs();
        for t in 3..10 {
            let (x0, x1) = (tr.states[t][0], tr.states[t + 1][0]);
            // absolute slack for the cancellation in a·x − b·k·x
            prop_assert!(x1.abs() <= (rate + 1e-15) * x0.abs() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rollouts_are_bit_identical(k in -1.9f64..17.9, beta in -5.0f64..5.0, w in prop::collection::vec(-1.0f64..1.0, 11)) {
        let task = lti_task();
        let seq = seq_from(&w);
        let a = task.evaluate(&[k, beta], std::slice::from_ref(&seq)).unwrap();
        let b = task.evaluate(&[k, beta], std::slice::from_ref(&seq)).unwrap();
        prop_assert_eq!(a[0].raw.to_bits(), b[0].raw.to_bits());
    }

    #[test]
    fn dataset_gradient_is_sum_of_sequence_gradients(
        k in -1.5f64..17.0,
        beta in -5.0f64..5.0,
        w in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 11), 1..5),
    ) {
        let task = lti_task();
        let seqs: Vec<NoiseSequence> = w.iter().map(|s| seq_from(s)).collect();
        let (_, g) = task.empirical_cost_grad(&[k, beta], &seqs).unwrap();
        let mut acc = [0.0; 2];
        for s in &seqs {
            let (_, gi) = task.empirical_cost_grad(&[k, beta], std::slice::from_ref(s)).unwrap();
            acc[0] += gi[0] / seqs.len() as f64;
            acc[1] += gi[1] / seqs.len() as f64;
        }
        for i in 0..2 {
            prop_assert!((g[i] - acc[i]).abs() <= 1e-12 * (1.0 + g[i].abs()));
        }
    }

    #[test]
    fn grid_masses_follow_the_gibbs_ratio(
        costs in prop::collection::vec(0.0f64..1.0, 9),
        weights in prop::collection::vec(0.1f64..1.0, 9),
        lambda in 0.0f64..50.0,
    ) {
        let total: f64 = weights.iter().sum();
        let log_prior: Vec<f64> = weights.iter().map(|w| (w / total).ln()).collect();
        let axis = Axis::new(0.0, 1.0, 3).unwrap();
        let q = GridPosterior::from_parts(axis, axis, log_prior.clone(), costs.clone(), lambda).unwrap();
        let norm: f64 = q.log_mass.iter().map(|l| l.exp()).sum();
        prop_assert!((norm - 1.0).abs() < 1e-10);
        prop_assert!(q.ln_z <= 1e-12 && q.ln_z >= -lambda - 1e-12);
        for i in 0..9 {
            for j in 0..9 {
                let lhs = q.log_mass[i] - q.log_mass[j];
                let rhs = lambda * (costs[j] - costs[i]) + log_prior[i] - log_prior[j];
                prop_assert!((lhs - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn partition_estimate_is_bracketed(costs in prop::collection::vec(0.0f64..1.0, 1..50), lambda in 1e-3f64..100.0) {
        let ln_z = log_partition_estimate(&costs, lambda).unwrap();
        prop_assert!(ln_z <= 1e-12 && ln_z >= -lambda - 1e-12);
    }

    #[test]
    fn bounds_are_ordered(
        emp in 0.0f64..1.0,
        z_frac in 0.0f64..1.0,
        lambda in 0.1f64..200.0,
        delta in 0.01f64..0.5,
        s in 1usize..1000,
        n_p in 1usize..1_000_000,
    ) {
        // ln Z ∈ [−λC, −λ·E_Q[L̂]] for the Gibbs posterior
        let ln_z = -lambda * (emp + z_frac * (1.0 - emp));
        let ex = bounds_qstar_exact(emp, ln_z, lambda, delta, 1.0, s).unwrap();
        prop_assert!(ex.lower <= ex.upper);
        prop_assert!(ex.confidence_term >= 0.0 && ex.slack_term >= 0.0 && ex.kl_term >= 0.0);
        let mc = bounds_qstar_mc(emp, ln_z, n_p, lambda, delta, 1.0, s).unwrap();
        prop_assert!(mc.lower <= mc.upper);
        prop_assert!(mc.upper >= ex.upper);
        prop_assert!(mc.mc_correction > 0.0);
    }

    #[test]
    fn selection_score_lies_in_the_cost_hull(
        costs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 1..6),
        seed in 0u64..1000,
    ) {
        let (best, est) = bootstrap_select_costs(&costs, 25, seed).unwrap();
        prop_assert!(best < costs.len());
        for (e, c) in est.iter().zip(&costs) {
            let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(e.score >= lo - 1e-12 && e.score <= hi + 1e-12);
            prop_assert!(est[best].score <= e.score);
        }
        let again = bootstrap_select_costs(&costs, 25, seed).unwrap();
        prop_assert_eq!(again.0, best);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ren_closed_loop_decays_for_any_parameters(scale_exp in -1.0f64..3.0, seed in 0u64..10_000, w0 in prop::collection::vec(-0.5f64..0.5, 8)) {
        let plant = Plant::PlanarRobots(PlanarRobots::default());
        let arch = Arch::ImcRen(RenShape::for_plant(&plant, 2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = arch.init_gaussian(10f64.powf(scale_exp), &mut rng).unwrap();
        let policy = Policy::build(&arch, &theta).unwrap();
        let mut noise = vec![w0];
        noise.extend(std::iter::repeat_n(vec![0.0; 8], 200));
        let tr = rollout(&plant, &policy, &NoiseSequence(noise)).unwrap();
        let target = plant.target_state();
        let dev = |t: usize| -> f64 { tr.states[t].iter().zip(&target).map(|(x, g)| (x - g).powi(2)).sum() };
        let early: f64 = (0..=100).map(dev).sum();
        let late: f64 = (100..=200).map(dev).sum();
        prop_assert!(late < early);
    }
}

#[test]
fn robots_drift_to_target_without_input() {
    let plant = Plant::PlanarRobots(PlanarRobots::default());
    let arch = Arch::ImcRen(RenShape::for_plant(&plant, 2, 2));
    let policy = Policy::build(&arch, &vec![0.0; arch.num_params()]).unwrap();
    let mut noise = vec![vec![0.1, -0.2, 0.0, 0.05, -0.1, 0.2, 0.0, 0.0]];
    noise.extend(std::iter::repeat_n(vec![0.0; 8], 200));
    let tr = rollout(&plant, &policy, &NoiseSequence(noise)).unwrap();
    let target = plant.target_state();
    let dist = |t: usize| -> f64 { tr.states[t].iter().zip(&target).map(|(x, g)| (x - g).powi(2)).sum::<f64>().sqrt() };
    assert!(dist(200) < dist(100));
}
