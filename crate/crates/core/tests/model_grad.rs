use cslr_core::model::{init_params, ModelConfig, ModelParams};
use cslr_core::rng;
use cslr_core::train::{batch_loss_and_grads, Sample};
use cslr_core::Tensor;
use rand::Rng;

fn loss(params: &ModelParams<f64>, sample: &Sample<f64>) -> f64 {
    batch_loss_and_grads(params, &[sample], &Default::default(), None)
        .unwrap()
        .0
}

#[test]
fn ctc_loss_gradient_through_the_encoder() {
    let cfg = ModelConfig {
        d_model: 16,
        n_blocks: 2,
        n_heads: 2,
        d_ff: 32,
        conv_kernel: 3,
        vocab_size: 5,
        dropout: 0.0,
        ..ModelConfig::toy(6, 5)
    };
    let params = init_params::<f64>(&cfg, 11).unwrap();
    let mut r = rng::from_seed(12);
    let sample = Sample {
        id: "x".into(),
        features: Tensor::uniform(&[12, 6], 1.0, &mut r),
        target: vec![2, 4],
    };
    let (_, grads) = batch_loss_and_grads(&params, &[&sample], &Default::default(), None).unwrap();
    let h = 1e-5;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for _ in 0..20 {
        let ti = r.random_range(0..params.len());
        let j = r.random_range(0..params.tensors()[ti].len());
        let mut plus = params.clone();
        plus.tensors_mut()[ti].data_mut()[j] += h;
        let mut minus = params.clone();
        minus.tensors_mut()[ti].data_mut()[j] -= h;
        analytic.push(grads[ti][j]);
        numeric.push((loss(&plus, &sample) - loss(&minus, &sample)) / (2.0 * h));
    }
    let diff = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(diff / scale <= 1e-3, "relative error {}", diff / scale);
}

#[test]
fn padding_inside_a_batch_leaves_the_loss_unchanged() {
    let cfg = ModelConfig::toy(6, 5);
    let params = init_params::<f64>(&cfg, 3).unwrap();
    let mut r = rng::from_seed(4);
    let short = Sample {
        id: "short".into(),
        features: Tensor::uniform(&[9, 6], 1.0, &mut r),
        target: vec![1, 3],
    };
    let long = Sample {
        id: "long".into(),
        features: Tensor::uniform(&[23, 6], 1.0, &mut r),
        target: vec![2],
    };
    let alone = batch_loss_and_grads(&params, &[&short], &Default::default(), None)
        .unwrap()
        .0;
    let other = batch_loss_and_grads(&params, &[&long], &Default::default(), None)
        .unwrap()
        .0;
    let both = batch_loss_and_grads(&params, &[&short, &long], &Default::default(), None)
        .unwrap()
        .0;
    assert!(((alone + other) / 2.0 - both).abs() < 1e-6);
}
