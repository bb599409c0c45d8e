use std::cell::RefCell;
use std::collections::HashMap;

use bridgematch::gaussian::{gaussian_condition, path_joint};
use bridgematch::sampling::FnPredictor;
use bridgematch::{
    f_alpha, integrate_path, posterior_mean, sample_endpoints, sample_trajectories, Activation, BridgeSpec, CondMode,
    Error, GaussianCouplingSpec, Integrator, MlpModel, Points, RngStream, SamplerConfig,
};
use proptest::prelude::*;

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

fn scalar_points(v: Vec<f64>) -> Points {
    Points::from_flat(1, v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bridge_posterior_lands_exactly_on_constant_prediction(
        c in prop::collection::vec(-5.0f64..5.0, 1..4),
        sigma in 0.01f64..4.0,
        steps in 1usize..60,
        seed in any::<u64>(),
    ) {
        let d = c.len();
        let target = c.clone();
        let p = FnPredictor::new(d, CondMode::None, move |_, _, _| target.clone());
        let spec = BridgeSpec::new(sigma, d).unwrap();
        let cfg = SamplerConfig::new(steps, Integrator::BridgePosterior);
        let x0 = vec![0.5; d];
        let tr = integrate_path(&p, &spec, &cfg, &x0, &RngStream::new(seed)).unwrap();
        prop_assert_eq!(tr.terminal(), c.as_slice());
        prop_assert_eq!(tr.initial(), x0.as_slice());
        prop_assert_eq!(tr.times.len(), steps + 1);
        prop_assert_eq!(tr.states.len(), steps + 1);
        prop_assert_eq!(tr.endpoint_preds.len(), steps + 1);
        prop_assert_eq!(tr.endpoint_preds.row(steps), c.as_slice());
    }
}

#[test]
fn euler_maruyama_jumps_to_the_final_prediction() {
    let p = FnPredictor::new(1, CondMode::None, |x: &[f64], _: Option<&[f64]>, t: f64| vec![x[0] + t]);
    let spec = BridgeSpec::new(1.0, 1).unwrap();
    let cfg = SamplerConfig::new(10, Integrator::EulerMaruyama);
    let tr = integrate_path(&p, &spec, &cfg, &[0.0], &RngStream::new(3)).unwrap();
    // default clamp is one step, so the jump is evaluated at t = 0.9 on the state at 0.9
    let before = tr.states.row(9)[0];
    assert_eq!(tr.terminal()[0], before + 0.9);
}

#[test]
fn markov_oracle_reproduces_projected_covariance() {
    let spec = GaussianCouplingSpec::new(0.5, 1.0).unwrap();
    let s = spec;
    let p = FnPredictor::new(1, CondMode::None, move |x: &[f64], _: Option<&[f64]>, t: f64| {
        vec![posterior_mean(x[0], t, &s)]
    });
    let n = 100_000;
    let x0 = scalar_points(RngStream::new(20).draw_gaussian(n));
    let cfg = SamplerConfig::new(2000, Integrator::BridgePosterior);
    let out = sample_endpoints(&p, &BridgeSpec::new(1.0, 1).unwrap(), &cfg, &x0, &RngStream::new(21)).unwrap();
    let c = cov(out.x0.as_flat(), out.x1.as_flat());
    let f = f_alpha(&spec).unwrap();
    assert!((c - f).abs() < 0.02, "cov {c} vs f(0.5) = {f}");
}

/// `E[X_1 | X_0, X_t]` for the Gaussian coupling, cached per time.
fn augmented_oracle(spec: GaussianCouplingSpec) -> impl Fn(&[f64], Option<&[f64]>, f64) -> Vec<f64> {
    let cache: RefCell<HashMap<u64, (f64, f64)>> = RefCell::new(HashMap::new());
    move |x: &[f64], c: Option<&[f64]>, t: f64| {
        let x0 = c.expect("conditioned")[0];
        if t == 0.0 {
            return vec![spec.corr_alpha() * x0];
        }
        let (a0, at) = *cache.borrow_mut().entry(t.to_bits()).or_insert_with(|| {
            let j = path_joint(t, &spec);
            let e0 = gaussian_condition(&j, &[0, 1], &[1.0, 0.0]).unwrap().mean[0];
            let et = gaussian_condition(&j, &[0, 1], &[0.0, 1.0]).unwrap().mean[0];
            (e0, et)
        });
        vec![a0 * x0 + at * x[0]]
    }
}

#[test]
fn augmented_oracle_preserves_conditional_mean() {
    let alpha = 0.8;
    let spec = GaussianCouplingSpec::new(alpha, 1.0).unwrap();
    let p = FnPredictor::new(1, CondMode::InitialPoint, augmented_oracle(spec));
    let bspec = BridgeSpec::new(1.0, 1).unwrap();
    let cfg = SamplerConfig::new(100, Integrator::BridgePosterior);
    let n = 100_000;
    for (k, start) in [-1.0, 0.0, 1.0].into_iter().enumerate() {
        let x0 = scalar_points(vec![start; n]);
        let out = sample_endpoints(&p, &bspec, &cfg, &x0, &RngStream::new(30 + k as u64)).unwrap();
        let xs = out.x1.as_flat();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (v / n as f64).sqrt();
        assert!(
            (m - alpha * start).abs() < 4.0 * se,
            "x0 = {start}: mean {m}, want {}",
            alpha * start
        );
    }
}

#[test]
fn euler_step_refinement_is_below_monte_carlo_error() {
    let spec = GaussianCouplingSpec::new(0.5, 1.0).unwrap();
    let s = spec;
    let p = FnPredictor::new(1, CondMode::None, move |x: &[f64], _: Option<&[f64]>, t: f64| {
        vec![posterior_mean(x[0], t, &s)]
    });
    let n = 100_000;
    let x0 = scalar_points(RngStream::new(40).draw_gaussian(n));
    let bspec = BridgeSpec::new(1.0, 1).unwrap();
    let mut estimates = Vec::new();
    for steps in [1000, 2000] {
        let cfg = SamplerConfig::new(steps, Integrator::EulerMaruyama);
        let out = sample_endpoints(&p, &bspec, &cfg, &x0, &RngStream::new(41)).unwrap();
        estimates.push(cov(out.x0.as_flat(), out.x1.as_flat()));
    }
    let f = f_alpha(&spec).unwrap();
    let se = ((1.0 + f * f) / n as f64).sqrt();
    assert!((estimates[0] - estimates[1]).abs() < se, "{estimates:?}, se {se}");
}

fn random_model(dims: &[usize], mode: CondMode, f: usize, seed: u64) -> MlpModel {
    MlpModel::init(dims, Activation::Silu, mode, f, &mut RngStream::new(seed)).unwrap()
}

#[test]
fn alpha_zero_conditioning_equals_initial_point() {
    let init = random_model(&[9, 16, 2], CondMode::InitialPoint, 2, 1);
    let alpha0 = MlpModel::from_parts(
        init.layer_dims().to_vec(),
        init.weights().to_vec(),
        init.biases().to_vec(),
        Activation::Silu,
        CondMode::AlphaPoint { alpha: 0.0 },
        2,
    )
    .unwrap();
    let spec = BridgeSpec::new(1.0, 2).unwrap();
    let x0 = Points::from_flat(2, RngStream::new(2).draw_gaussian(40)).unwrap();
    for integrator in [Integrator::BridgePosterior, Integrator::EulerMaruyama] {
        let cfg = SamplerConfig::new(25, integrator);
        let a = sample_trajectories(&init, &spec, &cfg, &x0, &RngStream::new(3)).unwrap();
        let b = sample_trajectories(&alpha0, &spec, &cfg, &x0, &RngStream::new(3)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn alpha_one_conditioning_equals_plain() {
    // plain model on [x | t | features]; alpha-point model with zero weights on the cond block
    let plain = random_model(&[7, 16, 2], CondMode::None, 2, 4);
    let w0 = &plain.weights()[0];
    let mut widened = Vec::new();
    for row in w0.chunks(7) {
        widened.extend_from_slice(&row[..2]);
        widened.extend_from_slice(&[0.0, 0.0]);
        widened.extend_from_slice(&row[2..]);
    }
    let mut weights = plain.weights().to_vec();
    weights[0] = widened;
    let alpha1 = MlpModel::from_parts(
        vec![9, 16, 2],
        weights,
        plain.biases().to_vec(),
        Activation::Silu,
        CondMode::AlphaPoint { alpha: 1.0 },
        2,
    )
    .unwrap();
    let spec = BridgeSpec::new(1.0, 2).unwrap();
    let x0 = Points::from_flat(2, RngStream::new(5).draw_gaussian(40)).unwrap();
    for integrator in [Integrator::BridgePosterior, Integrator::EulerMaruyama] {
        let cfg = SamplerConfig::new(25, integrator);
        let a = sample_trajectories(&plain, &spec, &cfg, &x0, &RngStream::new(6)).unwrap();
        let b = sample_trajectories(&alpha1, &spec, &cfg, &x0, &RngStream::new(6)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn batched_sampling_matches_single_paths_across_chunks() {
    let model = random_model(&[11, 16, 2], CondMode::InitialPoint, 3, 7);
    let spec = BridgeSpec::new(0.7, 2).unwrap();
    let cfg = SamplerConfig::new(8, Integrator::BridgePosterior);
    let n = 4100;
    let x0 = Points::from_flat(2, RngStream::new(8).draw_gaussian(2 * n)).unwrap();
    let stream = RngStream::new(9);
    let batch = sample_endpoints(&model, &spec, &cfg, &x0, &stream).unwrap();
    for i in [0, 1, 4095, 4096, 4099] {
        let tr = integrate_path(&model, &spec, &cfg, x0.row(i), &stream.split(i as u64)).unwrap();
        assert_eq!(batch.x1.row(i), tr.terminal(), "path {i}");
    }
    let one = Points::from_flat(2, x0.row(0).to_vec()).unwrap();
    let single = sample_endpoints(&model, &spec, &cfg, &one, &stream).unwrap();
    assert_eq!(single.x1.row(0), batch.x1.row(0));
    let empty = sample_endpoints(&model, &spec, &cfg, &Points::new(2), &stream).unwrap();
    assert!(empty.is_empty());
}

#[test]
fn alpha_point_paths_interpolate_their_own_history() {
    // predictor echoes the conditioning, so the path is pulled toward x_{alpha t}
    let p = FnPredictor::new(
        1,
        CondMode::AlphaPoint { alpha: 0.5 },
        |_: &[f64], c: Option<&[f64]>, _| c.expect("conditioned").to_vec(),
    );
    let spec = BridgeSpec::new(1.0, 1).unwrap();
    let cfg = SamplerConfig::new(4, Integrator::BridgePosterior);
    let tr = integrate_path(&p, &spec, &cfg, &[1.0], &RngStream::new(10)).unwrap();
    let s = tr.states.as_flat();
    let preds = tr.endpoint_preds.as_flat();
    // step i looks up grid position i / 2
    assert_eq!(preds[0], s[0]);
    assert_eq!(preds[1], 0.5 * s[0] + 0.5 * s[1]);
    assert_eq!(preds[2], s[1]);
    assert_eq!(preds[3], 0.5 * s[1] + 0.5 * s[2]);
}

#[test]
fn non_finite_states_abort_with_step() {
    let p = FnPredictor::new(
        1,
        CondMode::None,
        |x: &[f64], _: Option<&[f64]>, t: f64| {
            if t >= 0.5 {
                vec![f64::NAN]
            } else {
                x.to_vec()
            }
        },
    );
    let spec = BridgeSpec::new(1.0, 1).unwrap();
    let cfg = SamplerConfig::new(10, Integrator::BridgePosterior);
    match integrate_path(&p, &spec, &cfg, &[0.0], &RngStream::new(0)) {
        Err(Error::NonFiniteState { step }) => assert_eq!(step, 6),
        other => panic!("{other:?}"),
    }
}
