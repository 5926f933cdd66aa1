use std::collections::BTreeMap;

use pan_cli::config::Lambda2Rule;
use pan_cli::{ModelFile, RunConfig};
use pan_core::attack::ScoreSign;
use pan_core::model::zoo::EncoderPreset;
use pan_core::Tensor;
use proptest::prelude::*;

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0usize..4, 0..4).prop_flat_map(|shape| {
        let n = shape.iter().product::<usize>();
        prop::collection::vec(any::<u32>(), n).prop_map(move |bits| {
            Tensor::new(
                shape.clone(),
                bits.into_iter().map(f32::from_bits).collect(),
            )
            .unwrap()
        })
    })
}

fn bits(f: &ModelFile) -> Vec<(String, Vec<usize>, Vec<u32>)> {
    f.tensors
        .iter()
        .map(|(k, t)| {
            (
                k.clone(),
                t.shape().to_vec(),
                t.data().iter().map(|v| v.to_bits()).collect(),
            )
        })
        .collect()
}

proptest! {
    /// Any bit pattern, NaN payloads included, survives save/load/save.
    #[test]
    fn model_file_round_trip(name in "[a-z.]{0,12}", tensors in prop::collection::btree_map("[a-z0-9._]{1,10}", tensor_strategy(), 0..6)) {
        let f = ModelFile { name, tensors };
        let bytes = f.to_bytes();
        let g = ModelFile::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&g.name, &f.name);
        prop_assert_eq!(bits(&g), bits(&f));
        prop_assert_eq!(g.to_bytes(), bytes);
    }

    #[test]
    fn truncated_model_files_are_rejected(cut in 1usize..40) {
        let mut tensors = BTreeMap::new();
        tensors.insert("w".to_string(), Tensor::full(&[2, 2], 1.5));
        let bytes = ModelFile { name: "m".into(), tensors }.to_bytes();
        let cut = cut.min(bytes.len());
        prop_assert!(ModelFile::from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn config_parse_serialize_fixpoint(
        seed in any::<u64>(),
        l1 in 0.01f32..1.0, l2 in 0.0f32..1.0, l3 in 0.0f32..1.0,
        k in 1usize..6, epochs in 1usize..100,
        lr in 1e-5f32..1e-1,
        grid in prop::collection::vec(0.0f32..1.0, 0..6),
        complement in any::<bool>(),
        widths in prop::collection::vec(prop::collection::vec(1usize..300, 0..3), 1..4),
        minus in any::<bool>(),
        identity in any::<bool>(),
        dir in "[a-z/_]{1,12}",
    ) {
        let mut cfg = RunConfig { seed, ..RunConfig::default() };
        cfg.train.lambda1 = l1;
        cfg.train.lambda2 = l2;
        cfg.train.lambda3 = l3;
        cfg.train.k = k;
        cfg.train.epochs = epochs;
        cfg.train.lr = [lr, lr * 2.0, lr / 3.0, lr];
        cfg.sweep.lambda2 = if complement { Lambda2Rule::Complement } else { Lambda2Rule::Values(grid.clone()) };
        cfg.sweep.lambda1 = grid;
        cfg.eval.attack.ud_hidden = widths.clone();
        cfg.eval.attack.pd_hidden = widths;
        cfg.eval.score_sign = if minus { ScoreSign::Minus } else { ScoreSign::Plus };
        if identity {
            cfg.model.encoder = EncoderPreset::Identity;
        }
        cfg.output_dir = dir.into();
        let text = cfg.to_text();
        let parsed = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(parsed.to_text(), text);
    }
}

#[test]
fn unknown_key_is_named() {
    let err = RunConfig::parse("seed = 3\ntrain.lamda1 = 0.3\n")
        .unwrap_err()
        .to_string();
    assert!(err.contains("train.lamda1"), "{err}");
}

#[test]
fn custom_encoder_round_trips() {
    let cfg = RunConfig::parse("model.encoder = custom:conv(4,3,1,1) relu maxpool(2,2)\n").unwrap();
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
}
