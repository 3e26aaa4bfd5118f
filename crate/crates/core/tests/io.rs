mod common;

use ccfield::io::dataset::load_split;
use ccfield::io::model_file::{from_bytes, load_model, save_model, to_bytes, VERSION};
use ccfield::io::scene_file::SceneFile;
use ccfield::io::serialized_size;
use ccfield::io::synthetic::{generate_dataset, random_cameras, AnalyticScene, GenerateOptions};
use ccfield::Error;
use common::{expected_file_size, random_layout_model, rng};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn files_round_trip_and_match_the_size_formula(seed in any::<u64>()) {
        let m = random_layout_model(&mut rng(seed));
        let bytes = to_bytes(&m);
        prop_assert_eq!(bytes.len() as u64, expected_file_size(&m));
        prop_assert_eq!(serialized_size(&m), expected_file_size(&m));
        let back = from_bytes(&bytes).unwrap();
        prop_assert_eq!(to_bytes(&back), bytes);
        prop_assert_eq!(back, m);
    }

    #[test]
    fn any_truncation_or_extension_is_rejected(seed in any::<u64>(), cut in 1usize..64, extra in 1usize..8) {
        let bytes = to_bytes(&random_layout_model(&mut rng(seed)));
        let short = &bytes[..bytes.len().saturating_sub(cut)];
        prop_assert!(matches!(from_bytes(short), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.extend(std::iter::repeat_n(0u8, extra));
        prop_assert!(matches!(from_bytes(&long), Err(Error::Format(_))));
    }
}

#[test]
fn newer_versions_and_foreign_files_are_refused() {
    let mut bytes = to_bytes(&random_layout_model(&mut rng(1)));
    bytes[4..6].copy_from_slice(&(VERSION + 1).to_le_bytes());
    assert!(matches!(from_bytes(&bytes), Err(Error::Version { found, .. }) if found == VERSION + 1));
    bytes[..4].copy_from_slice(b"PNG\0");
    assert!(from_bytes(&bytes).is_err());
}

#[test]
fn disk_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let m = random_layout_model(&mut rng(2));
    let (a, b) = (dir.path().join("a.ccnf"), dir.path().join("b.ccnf"));
    save_model(&m, &a).unwrap();
    save_model(&load_model(&a).unwrap(), &b).unwrap();
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(x, y);
    assert_eq!(x.len() as u64, expected_file_size(&m));
}

#[test]
fn generated_cameras_load_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut opts = GenerateOptions::new(5, 12, 10, 77);
    opts.gt_resolution = 0;
    generate_dataset(&AnalyticScene::three_primitives(), &opts, dir.path()).unwrap();
    let views = load_split(dir.path(), "train", [1.0; 3]).unwrap();
    let cams = random_cameras(5, 12, 10, &mut rng(77)).unwrap();
    assert_eq!(views.len(), 5);
    for (v, c) in views.iter().zip(&cams) {
        assert!((v.camera.cam_to_world - c.cam_to_world).abs().max() < 1e-9);
        assert!((v.camera.focal - c.focal).abs() < 1e-9);
        assert_eq!((v.image.width, v.image.height), (12, 10));
    }
}

#[test]
fn scene_files_reject_unknown_keys() {
    assert!(SceneFile::parse(r#"{"objects": [{"model": "a.ccnf"}], "camera": 1}"#).is_err());
    assert!(SceneFile::parse(r#"{"objects": [{"model": "a.ccnf", "lod": {"vec": 1, "mat": 0, "x": 2}}]}"#).is_err());
    assert!(SceneFile::parse(r#"{"background": [2, 0, 0], "objects": [{"model": "a.ccnf"}]}"#).is_err());
    assert!(SceneFile::parse(r#"{"objects": [{"model": "a.ccnf", "lod": {"vec": 1, "mat": 0}}]}"#).is_ok());
}
