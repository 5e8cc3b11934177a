//! Central finite differences against the hand-written backward passes.

use jmap_net::{cross_entropy, ConvBlockConfig, Mode, Model, ModelConfig, Readout, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs().max(n.abs()) + 1e-6)
}

fn micro(readout: Readout, batch_norm: bool) -> ModelConfig {
    ModelConfig {
        input_channels: 2,
        input_dims: [8, 8, 8],
        conv_blocks: vec![
            ConvBlockConfig {
                out_channels: 3,
                batch_norm,
                relu: true,
                pool: true,
            },
            ConvBlockConfig {
                out_channels: 2,
                batch_norm,
                relu: true,
                pool: false,
            },
        ],
        readout,
        fc: vec![5, 4],
        dropout: 0.0,
        num_classes: 4,
    }
}

fn random_input(seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..2 * 2 * 512).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(&[2, 2, 8, 8, 8], data).unwrap()
}

fn loss(model: &mut Model, x: &Tensor, y: &[usize]) -> f64 {
    let logits = model.forward(x, Mode::Train).unwrap();
    cross_entropy(&logits, y).unwrap().0
}

fn check(config: ModelConfig) {
    let mut model = Model::new(config, 5).unwrap();
    // biases start at zero; move them so their gradients see generic values
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for p in model.parameters_mut() {
        for v in p.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let x = random_input(1);
    let y = [2, 0];

    model.zero_grad();
    let logits = model.forward(&x, Mode::Train).unwrap();
    let (_, g) = cross_entropy(&logits, &y).unwrap();
    let gx = model.backward(&g).unwrap();
    let analytic: Vec<Vec<f64>> = model
        .parameters_mut()
        .into_iter()
        .map(|p| p.grad_mut().to_vec())
        .collect();

    let n_params = analytic.len();
    let mut worst = 0.0f64;
    for pi in 0..n_params {
        for i in 0..analytic[pi].len() {
            let orig = model.parameters_mut()[pi].data()[i];
            model.parameters_mut()[pi].data_mut()[i] = orig + H;
            let up = loss(&mut model, &x, &y);
            model.parameters_mut()[pi].data_mut()[i] = orig - H;
            let down = loss(&mut model, &x, &y);
            model.parameters_mut()[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let e = rel_err(analytic[pi][i], numeric);
            assert!(
                e <= TOL,
                "parameter {pi}[{i}]: analytic {} numeric {numeric}",
                analytic[pi][i]
            );
            worst = worst.max(e);
        }
    }
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let mut xm = x.clone();
        xm.data_mut()[i] -= H;
        let numeric = (loss(&mut model, &xp, &y) - loss(&mut model, &xm, &y)) / (2.0 * H);
        let e = rel_err(gx.data()[i], numeric);
        assert!(e <= TOL, "input[{i}]: analytic {} numeric {numeric}", gx.data()[i]);
        worst = worst.max(e);
    }
    eprintln!("worst relative error {worst:.2e}");
}

#[test]
fn batch_norm_flatten_micro_net_matches_finite_differences() {
    check(micro(Readout::Flatten, true));
}

#[test]
fn biased_global_average_micro_net_matches_finite_differences() {
    check(micro(Readout::GlobalAverage, false));
}

#[test]
fn last_block_gradient_is_spatially_constant_under_global_average() {
    // GAP spreads ∂y/∂(pooled) evenly over space, so every voxel of a channel
    // in the last block's output receives the same gradient
    let mut model = Model::new(micro(Readout::GlobalAverage, false), 2).unwrap();
    model.set_recording(true);
    let x = random_input(3);
    let logits = model.forward(&x, Mode::Eval).unwrap();
    let mut g = Tensor::zeros(logits.shape());
    g.data_mut()[1] = 1.0;
    model.backward(&g).unwrap();
    let a = model.block_activation(1).unwrap();
    let ga = model.block_gradient(1).unwrap();
    assert_eq!(a.shape(), ga.shape());
    assert_eq!(a.shape(), &[2, 2, 4, 4, 4]);
    for chunk in ga.data().chunks(64) {
        assert!(chunk.iter().all(|&v| (v - chunk[0]).abs() < 1e-15));
    }
}

proptest! {
    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero(
        logits in prop::collection::vec(-30.0f64..30.0, 12),
        labels in prop::collection::vec(0usize..4, 3),
    ) {
        let t = Tensor::from_vec(&[3, 4], logits).unwrap();
        let (loss, g) = cross_entropy(&t, &labels).unwrap();
        prop_assert!(loss >= 0.0);
        for row in g.data().chunks(4) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
