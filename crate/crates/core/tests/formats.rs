use std::fs;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctt_engine::crossbar::{program, ArrayState, CodeMatrix, ProgramOptions, WeightCodec};
use ctt_engine::dataset::{load_idx, write_idx, IdxError};
use ctt_engine::network::{quantize_model, DenseLayer};
use ctt_engine::{Activation, DevicePhysics, ExperimentConfig, FcnnModel, MnistSet, QuantizedModel};

fn model(rng: &mut ChaCha8Rng) -> FcnnModel {
    let mut layer = |i: usize, o: usize, activation| DenseLayer {
        weights: Array2::from_shape_fn((i, o), |_| rng.random_range(-1.0f32..1.0)),
        bias: Some(Array1::from_shape_fn(o, |_| rng.random_range(-0.1f32..0.1))),
        activation,
    };
    FcnnModel::new(vec![layer(784, 12, Activation::Relu), layer(12, 10, Activation::None)]).unwrap()
}

fn images(rng: &mut ChaCha8Rng, count: usize) -> MnistSet {
    let pixels = (0..count * 784).map(|_| rng.random()).collect();
    let labels = (0..count).map(|_| rng.random_range(0..10)).collect();
    MnistSet::new(pixels, labels).unwrap()
}

#[test]
fn model_files_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = model(&mut rng);
    let path = dir.path().join("m.cttm");
    m.save(&path).unwrap();
    assert_eq!(FcnnModel::load(&path).unwrap(), m);

    let set = images(&mut rng, 16);
    let q = quantize_model(&m, 6, 8, &set).unwrap();
    let qpath = dir.path().join("m.cttq");
    q.save(&qpath).unwrap();
    assert_eq!(QuantizedModel::load(&qpath).unwrap(), q);

    // the two formats are not interchangeable
    assert!(FcnnModel::load(&qpath).is_err());
    assert!(QuantizedModel::load(&path).is_err());

    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(FcnnModel::load(&path).is_err());
}

#[test]
fn idx_files_round_trip_and_reject_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let set = images(&mut rng, 9);
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx(&set, &img, &lab).unwrap();
    assert_eq!(load_idx(&img, &lab).unwrap(), set);

    let mut bytes = fs::read(&img).unwrap();
    bytes[3] = 0x01;
    fs::write(&img, &bytes).unwrap();
    assert!(matches!(load_idx(&img, &lab), Err(IdxError::BadMagic { .. })));
}

#[test]
fn array_snapshot_round_trips() {
    let physics = DevicePhysics::default();
    let codec = WeightCodec::spanning(5, &physics);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let codes = CodeMatrix::new(6, 5, (0..30).map(|_| rng.random_range(-16..=15)).collect()).unwrap();
    let (array, _) = program(&codes, &physics, &codec, 2.0, &ProgramOptions::default()).unwrap();
    let mut buf = Vec::new();
    array.write_snapshot(&mut buf).unwrap();
    let back = ArrayState::read_snapshot(buf.as_slice()).unwrap();
    assert_eq!(back, array);
    assert!(ArrayState::read_snapshot(&buf[..buf.len() / 2]).is_err());
}

#[test]
fn config_file_round_trips_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        case: 3,
        bits: vec![2, 6, 12],
        subset: Some(100),
        ..ExperimentConfig::default()
    };
    let path = dir.path().join("c.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);

    fs::write(&path, "[array]\nv_ref = 0.05\nr_rows = 1.0\n").unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
    fs::write(&path, "[array]\nv_ref = 0.05\n").unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap().array.v_ref, 0.05);
}
