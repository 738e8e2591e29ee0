use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pacsnoc::controller::Arch;
use pacsnoc::cost::{default_gamma, CostKind, CostSpec};
use pacsnoc::inference::flow::{flow_train, FlowTrainOptions, PlanarFlow, PlanarLayer};
use pacsnoc::pac::gibbs::{GibbsPosterior, Task};
use pacsnoc::pac::prior::{LogDensity, Prior};
use pacsnoc::sim::{Plant, ScalarLti};

fn bent_flow() -> PlanarFlow {
    PlanarFlow {
        base_mean: vec![0.5, -0.3],
        base_log_std: vec![0.2, -0.1],
        layers: vec![
            PlanarLayer {
                u: vec![1.2, -0.4],
                w: vec![0.8, 1.1],
                b: 0.3,
            },
            PlanarLayer {
                u: vec![-0.7, 0.9],
                w: vec![1.5, -0.2],
                b: -0.5,
            },
            PlanarLayer {
                u: vec![0.3, 0.6],
                w: vec![-1.0, 0.4],
                b: 0.1,
            },
        ],
    }
}

#[test]
fn density_integrates_to_one_over_a_box() {
    let flow = bent_flow();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let half = 9.0;
    let n = 200_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let th = [rng.random_range(-half..half), rng.random_range(-half..half)];
        acc += flow.log_density(&th).unwrap().exp();
    }
    let integral = acc / n as f64 * (2.0 * half) * (2.0 * half);
    assert!((integral - 1.0).abs() < 0.05, "integral {integral}");
}

#[test]
fn single_active_layer_position_does_not_matter() {
    let active = PlanarLayer {
        u: vec![0.9, -1.3],
        w: vec![0.7, 0.4],
        b: 0.2,
    };
    let idle = |w: [f64; 2]| PlanarLayer {
        u: vec![0.0, 0.0],
        w: w.to_vec(),
        b: 0.0,
    };
    let make = |pos: usize| {
        let mut layers = vec![idle([0.3, -0.2]), idle([1.0, 0.5]), idle([-0.4, 0.8])];
        layers.insert(pos, active.clone());
        PlanarFlow {
            base_mean: vec![0.1, 0.2],
            base_log_std: vec![0.0, 0.3],
            layers,
        }
    };
    let flows: Vec<PlanarFlow> = (0..4).map(make).collect();
    for th in [[0.0, 0.0], [1.5, -2.0], [-3.0, 0.7]] {
        let first = flows[0].log_density(&th).unwrap();
        for f in &flows[1..] {
            assert!((f.log_density(&th).unwrap() - first).abs() < 1e-12);
        }
    }
}

#[test]
fn sampled_log_density_matches_gaussian_entropy() {
    let log_std = [0.4, -0.7, 0.1];
    let flow = PlanarFlow {
        base_mean: vec![1.0, -2.0, 0.5],
        base_log_std: log_std.to_vec(),
        layers: vec![PlanarLayer {
            u: vec![0.0; 3],
            w: vec![0.5, 0.5, 0.5],
            b: 0.0,
        }],
    };
    let d = 3.0;
    let entropy = 0.5 * d * (1.0 + (2.0 * std::f64::consts::PI).ln()) + log_std.iter().sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 10_000;
    let lq: Vec<f64> = (0..n).map(|_| flow.sample_with_log_q(&mut rng).1).collect();
    let mean = lq.iter().sum::<f64>() / n as f64;
    let var = lq.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let stderr = (var / n as f64).sqrt();
    assert!((mean + entropy).abs() < 3.0 * stderr, "mean {mean}, -H {}, se {stderr}", -entropy);
}

fn lti_task() -> Task {
    let plant = Plant::ScalarLti(ScalarLti::default());
    let kind = CostKind::lti_default();
    let gamma = default_gamma(&kind, &plant, 10).unwrap();
    Task::new(plant, CostSpec { kind, bound: 1.0, gamma }, Arch::Affine).unwrap()
}

#[test]
fn flow_matching_its_own_base_has_zero_objective() {
    let task = lti_task();
    let prior = Prior::GaussianIso {
        mean: vec![4.0, 1.0],
        variance: 0.5,
    };
    let target = GibbsPosterior::new(&prior, &task, &[], 0.0).unwrap();
    let flow = PlanarFlow::new(vec![4.0, 1.0], &[0.5, 0.5], 4, 0.5, 2).unwrap();
    let opts = FlowTrainOptions {
        n_mc: 32,
        steps: 100,
        learning_rate: 1e-3,
        seed: 3,
        max_grad_norm: None,
    };
    let (_, trace) = flow_train(&flow, &target, &opts).unwrap();
    let tail = &trace[trace.len() - 10..];
    let avg = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(avg.abs() < 1e-2, "objective {avg}");
}

#[test]
fn zero_rate_leaves_the_flow_unchanged() {
    let task = lti_task();
    let prior = Prior::GaussianIso {
        mean: vec![0.0, 0.0],
        variance: 4.0,
    };
    let data = vec![pacsnoc::sim::NoiseSequence(vec![vec![0.1]; 11])];
    let target = GibbsPosterior::new(&prior, &task, &data, 3.0).unwrap();
    let flow = bent_flow();
    let opts = FlowTrainOptions {
        n_mc: 4,
        steps: 5,
        learning_rate: 0.0,
        seed: 0,
        max_grad_norm: None,
    };
    let (trained, _) = flow_train(&flow, &target, &opts).unwrap();
    assert_eq!(trained, flow);
}
