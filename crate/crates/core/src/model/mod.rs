//! Conformer encoder with a CTC classification head.
//!
//! Input frames pass through a two-stage strided convolutional subsampler
//! (×4 shorter), sinusoidal positions are added, and a stack of Macaron
//! blocks (half feed-forward, self-attention, convolution module, half
//! feed-forward, norm) refines them before a linear classifier over the
//! blank plus every gloss.
//!
//! All sequence operations accept padded inputs together with a valid
//! length; padded frames are excluded from attention keys and zeroed before
//! every temporal convolution, so they cannot change valid outputs.

mod config;
mod encoder;
mod params;

pub use config::ModelConfig;
pub use encoder::{
    conformer_block, encode, forward, positional_encoding, subsample, BoundParams, Encoded, TrainingNoise,
};
pub use params::{init_params, ModelParams};

pub(crate) use params::Layout;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng;
    use crate::tensor::{layer_norm, Tensor};

    fn random_input(t: usize, f: usize, seed: u64) -> Tensor<f64> {
        Tensor::uniform(&[t, f], 1.0, &mut rng::from_seed(seed))
    }

    #[test]
    fn output_length_law() {
        let cfg = ModelConfig::toy(6, 4);
        let params = init_params::<f64>(&cfg, 1).unwrap();
        for (t, want) in [(1, 1), (2, 1), (4, 1), (5, 2), (7, 2), (8, 2), (9, 3), (100, 25)] {
            let h = subsample(&random_input(t, 6, t as u64), &params).unwrap();
            assert_eq!(h.shape(), &[want, 16], "T = {t}");
            assert_eq!(cfg.output_len(t), want);
        }
    }

    #[test]
    fn positional_table() {
        let pe = positional_encoding::<f64>(8, 6).unwrap();
        for j in 0..6 {
            assert_eq!(pe.at(0, j), if j % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert_eq!(pe.at(3, 0), 3f64.sin());
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
        assert!(positional_encoding::<f64>(4, 5).is_err());
    }

    #[test]
    fn zero_branches_reduce_block_to_its_norm() {
        let cfg = ModelConfig::toy(6, 4);
        let mut params = init_params::<f64>(&cfg, 2).unwrap();
        params.zero_branch_outputs();
        let x = random_input(5, 16, 3);
        let y = conformer_block(&x, &params, 0, 5).unwrap();
        let want = layer_norm(
            &x,
            params.get("block0.norm.gain").unwrap(),
            params.get("block0.norm.bias").unwrap(),
            cfg.norm_eps,
        )
        .unwrap();
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn padding_does_not_change_valid_outputs() {
        let cfg = ModelConfig {
            conv_kernel: 5,
            ..ModelConfig::toy(6, 4)
        };
        let params = init_params::<f64>(&cfg, 4).unwrap();
        for t in [1usize, 3, 8, 13] {
            let x = random_input(t, 6, 10 + t as u64);
            let plain = forward(&x, &params, None).unwrap();
            let mut padded = x.data().to_vec();
            padded.extend(random_input(9, 6, 99).data());
            let mut g = crate::graph::Graph::new();
            let p = BoundParams::bind(&mut g, &params, false);
            let xv = g.constant(&Tensor::new(vec![t + 9, 6], padded).unwrap());
            let out = encode(&mut g, &p, xv, t, None).unwrap();
            assert_eq!(out.out_len, plain.rows());
            let lp = g.tensor(out.log_probs);
            for i in 0..out.out_len {
                for (a, b) in lp.row(i).iter().zip(plain.row(i)) {
                    assert!((a - b).abs() < 1e-5, "T = {t}");
                }
            }
        }
    }

    #[test]
    fn forward_shape_normalisation_and_determinism() {
        let cfg = ModelConfig {
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            ..ModelConfig::toy(492, 7)
        };
        let params = init_params::<f32>(&cfg, 5).unwrap();
        let x: Tensor<f32> = random_input(64, 492, 6).cast();
        let a = forward(&x, &params, None).unwrap();
        assert_eq!(a.shape(), &[16, 8]);
        for i in 0..16 {
            let lse = a.row(i).iter().map(|&v| (v as f64).exp()).sum::<f64>().ln();
            assert!(lse.abs() < 1e-6);
        }
        let b = forward(&x, &params, None).unwrap();
        assert_eq!(a, b);
        let mut bad = x.clone();
        bad.data_mut()[3] = f32::NAN;
        assert!(matches!(forward(&bad, &params, None), Err(Error::Validation(_))));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::toy(6, 4);
        let a = init_params::<f64>(&cfg, 7).unwrap();
        assert_eq!(a, init_params::<f64>(&cfg, 7).unwrap());
        assert_ne!(a, init_params::<f64>(&cfg, 8).unwrap());
        assert!(a.is_finite());
        assert_eq!(a.get("classifier.weight").unwrap().shape(), &[16, 5]);
        assert!(a.get("block1.norm.gain").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ModelConfig::toy(6, 4);
        let params = init_params::<f32>(&cfg, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut extra = std::collections::BTreeMap::new();
        extra.insert("vocab.digest".to_string(), "abc".to_string());
        params.save(&path, &extra).unwrap();
        let (back, meta) = ModelParams::<f32>::load(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(meta["vocab.digest"], "abc");
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        for bad in [
            ModelConfig {
                n_heads: 3,
                ..ModelConfig::default()
            },
            ModelConfig {
                conv_kernel: 4,
                ..ModelConfig::default()
            },
            ModelConfig {
                subsample_factor: 2,
                ..ModelConfig::default()
            },
            ModelConfig {
                dropout: 1.0,
                ..ModelConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
