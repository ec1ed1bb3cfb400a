use cuboidcast_tensor::{load_checkpoint, restore_params, save_checkpoint, ParamStore, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn store() -> ParamStore<f32> {
    let mut s = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    s.trunc_normal("a.w", &[3, 4], 0.02, &mut rng);
    s.ones("a.g", &[4]);
    s
}

#[test]
fn round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let config = json!({"channels": [4], "depth": [1]});
    let src = store();
    save_checkpoint(&path, &config, &src).unwrap();
    let (header, tensors) = load_checkpoint(&path).unwrap();
    assert_eq!(header.config, config);
    let mut dst = ParamStore::new();
    dst.zeros("a.w", &[3, 4]);
    dst.zeros("a.g", &[4]);
    restore_params(&header, tensors, &mut dst).unwrap();
    for id in src.ids() {
        assert_eq!(src.get(id).data(), dst.get(id).data());
    }
}

#[test]
fn tampered_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &json!({"depth": 1}), &store()).unwrap();
    let text = std::fs::read(&path).unwrap();
    let patched: Vec<u8> = String::from_utf8_lossy(&text).replacen("\"depth\":1", "\"depth\":2", 1).into_bytes();
    std::fs::write(&path, patched).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(TensorError::Checkpoint(_))));
}

#[test]
fn mismatched_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &json!({}), &store()).unwrap();
    let (header, tensors) = load_checkpoint(&path).unwrap();
    let mut other = ParamStore::new();
    other.zeros("a.w", &[4, 3]);
    other.zeros("a.g", &[4]);
    assert!(restore_params(&header, tensors, &mut other).is_err());
}

#[test]
fn truncated_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &json!({}), &store()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}
