use std::fs;

use spectral_diag::model_store::{
    decode_array, load_model, read_array_file, read_label_file, resolve_corpus, write_model, ModelBundle,
};
use spectral_diag::synth::{self, SpectralModelConfig};
use spectral_diag::Error;

/// Builds an NPY v1.0 file by hand, independent of the writer under test.
fn npy(descr: &str, shape: &str, payload: &[u8]) -> Vec<u8> {
    let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}");
    while (10 + header.len() + 1) % 64 != 0 {
        header.push(' ');
    }
    header.push('\n');
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(payload);
    out
}

#[test]
fn reads_float32_and_widens() {
    let vals = [1.5f32, -2.25, 3.0, 0.1, 7.0, 8.5];
    let payload: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
    let t = decode_array(&npy("<f4", "(2, 3)", &payload)).unwrap();
    assert_eq!(t.shape, vec![2, 3]);
    assert_eq!(t.data, vals.iter().map(|&v| v as f64).collect::<Vec<_>>());
}

#[test]
fn reads_float64_scalar_and_vector() {
    let t = decode_array(&npy("<f8", "()", &2.5f64.to_le_bytes())).unwrap();
    assert!(t.shape.is_empty());
    assert_eq!(t.data, vec![2.5]);
    let payload: Vec<u8> = [1.0f64, 2.0, 3.0].iter().flat_map(|v| v.to_le_bytes()).collect();
    let t = decode_array(&npy("<f8", "(3,)", &payload)).unwrap();
    assert_eq!(t.shape, vec![3]);
}

#[test]
fn rejects_unsupported_and_corrupt_files() {
    let payload: Vec<u8> = [1.0f64, 2.0].iter().flat_map(|v| v.to_be_bytes()).collect();
    assert!(matches!(decode_array(&npy(">f8", "(2,)", &payload)), Err(Error::Unsupported(_))));
    let mut fortran = npy("<f8", "(2,)", &[0u8; 16]);
    let text = String::from_utf8_lossy(&fortran).replace("False", "True ");
    fortran = text.into_bytes();
    assert!(decode_array(&fortran).is_err());
    assert!(decode_array(b"not an npy file").is_err());
    let short = npy("<f8", "(4,)", &[0u8; 16]);
    assert!(decode_array(&short).is_err());
}

#[test]
fn non_finite_values_are_reported_with_position() {
    let payload: Vec<u8> = [1.0f64, 2.0, f64::NAN, 4.0].iter().flat_map(|v| v.to_le_bytes()).collect();
    match decode_array(&npy("<f8", "(2, 2)", &payload)) {
        Err(Error::Data(msg)) => assert!(msg.contains("[1, 0]"), "{msg}"),
        other => panic!("expected data error, got {other:?}"),
    }
}

#[test]
fn label_files_accept_both_integer_widths() {
    let dir = tempfile::tempdir().unwrap();
    let p32 = dir.path().join("l32.npy");
    let p64 = dir.path().join("l64.npy");
    fs::write(&p32, npy("<i4", "(3,)", &[0, 0, 0, 0, 1, 0, 0, 0, 9, 0, 0, 0])).unwrap();
    let payload: Vec<u8> = [2i64, 7].iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&p64, npy("<i8", "(2,)", &payload)).unwrap();
    assert_eq!(read_label_file(&p32).unwrap(), vec![0, 1, 9]);
    assert_eq!(read_label_file(&p64).unwrap(), vec![2, 7]);
    assert!(read_array_file(dir.path().join("missing.npy")).is_err());
}

fn small_model(id: &str, subgroup: &str, seed: u64) -> ModelBundle {
    synth::spectral_model(&SpectralModelConfig {
        model_id: id.into(),
        group: "g".into(),
        subgroup: subgroup.into(),
        alphas: vec![2.0, 3.0],
        widths: vec![30, 20, 15],
        x_min: 1.0,
        x_max: 50.0,
        with_init: true,
        test_acc: Some(0.75),
        train_acc: Some(0.875),
        seed,
    })
    .unwrap()
}

#[test]
fn model_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model("m1", "s", 1);
    write_model(&model, dir.path().join("m1")).unwrap();
    let back = load_model(dir.path().join("m1")).unwrap();
    assert_eq!(back, model);
}

#[test]
fn manifest_errors_surface_as_load_failures() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model("m1", "s", 1);
    let path = dir.path().join("m1");
    write_model(&model, &path).unwrap();
    fs::remove_file(path.join("dense_1.npy")).unwrap();
    let err = load_model(&path).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");

    fs::write(path.join("manifest.json"), "{ not json").unwrap();
    assert_eq!(load_model(&path).unwrap_err().exit_code(), 3);
}

#[test]
fn shape_mismatch_between_manifest_and_array_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = small_model("m1", "s", 1);
    let path = dir.path().join("m1");
    write_model(&model, &path).unwrap();
    model.layers[0].spec.shape = vec![20, 30];
    let manifest = serde_json::to_string(&model.manifest()).unwrap();
    fs::write(path.join("manifest.json"), manifest).unwrap();
    assert!(load_model(&path).is_err());
}

#[test]
fn corpus_resolves_from_list_or_directory_scan() {
    let dir = tempfile::tempdir().unwrap();
    for (i, id) in ["b", "a", "c"].iter().enumerate() {
        write_model(&small_model(id, "s", i as u64), dir.path().join("models").join(id)).unwrap();
    }
    let scanned = resolve_corpus(dir.path()).unwrap();
    let names: Vec<_> = scanned.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, vec!["a", "b", "c"]);

    fs::write(dir.path().join("list.json"), r#"["models/c", "models/a"]"#).unwrap();
    let listed = resolve_corpus(dir.path().join("list.json")).unwrap();
    assert_eq!(listed.len(), 2);
    assert!(listed.iter().all(|p| p.join("manifest.json").exists()));
}
