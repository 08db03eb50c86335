//! Analytic gradients against central finite differences.

use leakyspan::params::Parameters;
use leakyspan::recurrent::{blstm_forward, bptt_backward, CellVariant, LeakConfig, LstmStack, ModelConfig};
use leakyspan::separation::{SeparationConfig, SeparationModel, TargetMatrix};
use leakyspan::signal::{NormStats, SignalConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Below this magnitude both gradients are compared absolutely.
const FLOOR: f64 = 1e-6;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Largest relative error over every scalar of `params`.
fn check<P: Parameters + Clone>(params: &P, analytic: &P, loss: impl Fn(&P) -> f64) -> f64 {
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (ti, g) in grads.iter().enumerate() {
        for k in 0..g.len() {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].data[k] += STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].data[k] -= STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            worst = worst.max(relative_error(g[k], numeric));
        }
    }
    worst
}

fn stack_config(variant: CellVariant, a: f64, bidirectional: bool) -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        layers: 2,
        units_per_direction: 4,
        bidirectional,
        variant,
        leak: LeakConfig { a, hop_seconds: 0.008 },
        output_dim: 1,
    }
}

/// `L = sum(w * h) + 0.5 * |h|^2` over the stack outputs.
fn stack_loss(cfg: &ModelConfig, stack: &LstmStack, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
    let (h, _) = blstm_forward(cfg, stack, x.view()).unwrap();
    (&h * w).sum() + 0.5 * h.mapv(|v| v * v).sum()
}

fn stack_case(variant: CellVariant, a: f64, bidirectional: bool, seed: u64) -> (f64, f64) {
    let cfg = stack_config(variant, a, bidirectional);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stack = LstmStack::init(&cfg, &mut rng);
    let x = Array2::from_shape_simple_fn((7, 3), || rng.random_range(-1.0..1.0));
    let width = cfg.stack_output_dim();
    let w = Array2::from_shape_simple_fn((7, width), || rng.random_range(-1.0..1.0));
    let (h, cache) = blstm_forward(&cfg, &stack, x.view()).unwrap();
    let d_h = &w + &h;
    let (grads, d_x) = bptt_backward(&stack, &cache, d_h.view()).unwrap();
    let params_err = check(&stack, &grads, |s| stack_loss(&cfg, s, &x, &w));
    let mut input_err: f64 = 0.0;
    for idx in 0..x.len() {
        let (t, k) = (idx / 3, idx % 3);
        let mut plus = x.clone();
        plus[[t, k]] += STEP;
        let mut minus = x.clone();
        minus[[t, k]] -= STEP;
        let numeric = (stack_loss(&cfg, &stack, &plus, &w) - stack_loss(&cfg, &stack, &minus, &w)) / (2.0 * STEP);
        input_err = input_err.max(relative_error(d_x[[t, k]], numeric));
    }
    (params_err, input_err)
}

#[test]
fn stack_gradients_all_variants_and_leaks() {
    for variant in CellVariant::ALL {
        for a in [0.0, 0.5, 1.0] {
            for seed in 0..5 {
                for bidirectional in [false, true] {
                    let (p, x) = stack_case(variant, a, bidirectional, seed);
                    assert!(
                        p < TOLERANCE && x < TOLERANCE,
                        "{variant:?} a={a} seed={seed} bi={bidirectional}: params {p:e}, inputs {x:e}"
                    );
                }
            }
        }
    }
}

fn tiny_model(variant: CellVariant, a: f64, ivector_dim: usize, seed: u64) -> SeparationModel {
    let signal = SignalConfig {
        frame_len: 8,
        hop: 2,
        ..SignalConfig::default()
    };
    let model = ModelConfig {
        input_dim: 0,
        layers: 2,
        units_per_direction: 3,
        bidirectional: true,
        variant,
        leak: LeakConfig { a, hop_seconds: 0.00025 },
        output_dim: 0,
    };
    let sep = SeparationConfig {
        embedding_dim: 3,
        ..SeparationConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = SeparationModel::init(model, signal, sep, ivector_dim, NormStats::identity(5), &mut rng).unwrap();
    // Order-one embedding norms keep the unit-norm projection smooth on the
    // scale of the finite-difference step.
    m.net.head.w *= 4.0;
    m.net.head.b.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    m
}

#[test]
fn separation_model_gradient() {
    for variant in CellVariant::ALL {
        for (a, ivector_dim) in [(0.0, 0), (0.5, 2), (1.0, 0)] {
            let model = tiny_model(variant, a, ivector_dim, 11);
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let inputs = Array2::from_shape_simple_fn((6, model.model.input_dim), || rng.random_range(-1.0..1.0));
            let labels: Vec<usize> = (0..6 * 5).map(|_| rng.random_range(0..2)).collect();
            let targets = TargetMatrix::from_labels(&labels, 2).unwrap();
            let (_, grads) = model.loss_and_gradient(inputs.view(), &targets).unwrap();
            let err = check(&model.net, &grads, |net| {
                let mut m = model.clone();
                m.net = net.clone();
                m.loss(inputs.view(), &targets).unwrap()
            });
            assert!(err < TOLERANCE, "{variant:?} a={a}: {err:e}");
        }
    }
}
