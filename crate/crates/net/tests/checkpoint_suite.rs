use imt_autograd::Tensor;
use imt_core::ImtError;
use imt_net::checkpoint::{Container, StoredTensor};
use imt_net::features::FeatureExtractor;
use imt_net::{ModelConfig, ParameterSet};
use proptest::prelude::*;

fn cfg() -> ModelConfig {
    ModelConfig {
        channels: 8,
        heads: 2,
        window: 2,
        patch: 1,
        cells_per_block: 2,
        slice_depth: 2,
    }
}

#[test]
fn parameters_round_trip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut p = ParameterSet::init(&cfg(), 42).unwrap();
    p.get_mut("head.w").unwrap().data_mut()[3] = -1.234_567_9e-7;
    p.save(&path).unwrap();
    let q = ParameterSet::load(&path).unwrap();
    assert_eq!(q.config, p.config);
    assert_eq!(q.init_seed, 42);
    for (name, t) in p.tensors() {
        let u = q.get(name).unwrap();
        assert_eq!(u.shape(), t.shape());
        let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = u.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "{name}");
    }
    assert_eq!(std::fs::read(&path).unwrap(), q.to_container().encode());
}

#[test]
fn manifest_marks_running_statistics_as_frozen() {
    let c = ParameterSet::init(&cfg(), 1).unwrap().to_container();
    assert!(!c.tensors["stage1.cell0.t.bn.running_mean"].trainable);
    assert!(c.tensors["stage1.cell0.t.bn.gamma"].trainable);
    assert!(c.tensors["head.w"].trainable);
}

#[test]
fn shape_disagreeing_with_config_is_a_mismatch() {
    let mut c = ParameterSet::init(&cfg(), 1).unwrap().to_container();
    c.config["channels"] = serde_json::json!(16);
    let e = ParameterSet::from_container(c).unwrap_err();
    assert!(matches!(e, ImtError::CheckpointMismatch(ref m) if m.contains("shape")), "{e}");
}

#[test]
fn missing_or_extra_tensors_are_mismatches() {
    let base = ParameterSet::init(&cfg(), 1).unwrap().to_container();
    let mut missing = base.clone();
    missing.tensors.remove("head.b");
    assert!(matches!(ParameterSet::from_container(missing), Err(ImtError::CheckpointMismatch(m)) if m.contains("head.b")));
    let mut extra = base.clone();
    extra.tensors.insert(
        "stray".into(),
        StoredTensor {
            tensor: Tensor::zeros(vec![1]),
            trainable: true,
        },
    );
    assert!(matches!(ParameterSet::from_container(extra), Err(ImtError::CheckpointMismatch(_))));
    let mut kind = base;
    kind.kind = "something-else".into();
    assert!(matches!(ParameterSet::from_container(kind), Err(ImtError::CheckpointMismatch(_))));
}

#[test]
fn malformed_files_report_offsets() {
    let bytes = ParameterSet::init(&cfg(), 1).unwrap().to_container().encode();
    let offset = |r: Result<Container, ImtError>| match r {
        Err(ImtError::Format { offset, .. }) => offset,
        other => panic!("expected a format error, got {other:?}"),
    };
    assert_eq!(offset(Container::decode(b"NOTACKPT")), 0);
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 1;
    assert_eq!(offset(Container::decode(&bad_magic)), 0);
    assert!(offset(Container::decode(&bytes[..bytes.len() - 3])) > 16);
    let mut trailing = bytes.clone();
    trailing.extend_from_slice(&[0, 0, 0, 0]);
    assert_eq!(offset(Container::decode(&trailing)) as usize, bytes.len());
    let mut nan = bytes.clone();
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert_eq!(offset(Container::decode(&nan)) as usize, n - 4);
    let mut huge = bytes;
    huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
    assert_eq!(offset(Container::decode(&huge)), 8);
}

#[test]
fn feature_extractor_round_trips_as_external_weights() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("features.ckpt");
    let fe = FeatureExtractor::fixed_random(5);
    fe.save(&path).unwrap();
    let back = FeatureExtractor::load(&path).unwrap();
    assert_eq!(back.layers, fe.layers);
    assert!(matches!(ParameterSet::load(&path), Err(ImtError::CheckpointMismatch(_))));
    let model = dir.path().join("model.ckpt");
    ParameterSet::init(&cfg(), 1).unwrap().save(&model).unwrap();
    assert!(matches!(FeatureExtractor::load(&model), Err(ImtError::CheckpointMismatch(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn any_valid_config_round_trips(c in 1usize..4, heads in 1usize..3, window in 1usize..4, patch in 1usize..3, cells in 2usize..4, seed in any::<u64>()) {
        let cfg = ModelConfig { channels: 4 * c * heads, heads, window, patch, cells_per_block: cells, slice_depth: 3 };
        let p = ParameterSet::init(&cfg, seed).unwrap();
        let c = Container::decode(&p.to_container().encode()).unwrap();
        let q = ParameterSet::from_container(c).unwrap();
        prop_assert_eq!(q, p);
    }
}
