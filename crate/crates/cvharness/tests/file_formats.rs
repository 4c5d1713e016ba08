use std::fs;

use cvharness::checkpoint;
use cvharness::dataset_io::{load_dataset, write_dataset};
use cvharness::ppm;
use cvharness_core::dataset::{generate_synthetic, Dataset, LabeledSample, SyntheticSpec};
use cvharness_core::image::Image;
use cvharness_core::model::{init_model, Architecture, InitScheme};
use cvharness_core::rng::derive_rng;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ppm_round_trip_on_byte_grid(h in 1usize..12, w in 1usize..12, gray in any::<bool>(), seed in any::<u64>()) {
        let ch = if gray { 1 } else { 3 };
        let mut rng = derive_rng(seed, "ppm");
        let bytes: Vec<u8> = (0..h * w * ch).map(|_| rng.below(256) as u8).collect();
        let img = Image::from_bytes(h, w, ch, &bytes).unwrap();
        let encoded = ppm::encode(&img);
        let back = ppm::decode(&encoded).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(ppm::encode(&back), encoded);
    }
}

#[test]
fn directory_classes_load_in_lexicographic_order() {
    let tmp = tempfile::tempdir().unwrap();
    let img = |v: f64| Image::filled(4, 4, 3, v).unwrap();
    let ds = Dataset::new(
        vec!["zebra".into(), "apple".into()],
        vec![
            LabeledSample { image: img(0.2), label: 0 },
            LabeledSample { image: img(0.8), label: 1 },
        ],
    )
    .unwrap();
    write_dataset(&ds, tmp.path(), None, None).unwrap();
    let back = load_dataset(tmp.path()).unwrap();
    assert_eq!(back.class_names(), ["apple".to_string(), "zebra".to_string()]);
    assert_eq!(back.sample(0).image.to_bytes(), img(0.8).to_bytes());
    assert_eq!(back.sample(1).label, 1);
}

#[test]
fn synthetic_set_survives_a_disk_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec::new(3, 16, 0.1);
    let ds = generate_synthetic(&spec, &derive_rng(5, "data")).unwrap();
    let manifest = write_dataset(&ds, tmp.path(), Some(&spec), Some((5, "data"))).unwrap();
    assert_eq!(manifest.classes.len(), 5);
    let back = load_dataset(tmp.path()).unwrap();
    assert_eq!(back.labels(), ds.labels());
    for (a, b) in back.samples().iter().zip(ds.samples()) {
        assert_eq!(a.image.to_bytes(), b.image.to_bytes());
    }
}

#[test]
fn directory_errors_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let err = load_dataset(tmp.path()).unwrap_err().to_string();
    assert!(err.contains("zero classes"), "{err}");

    fs::create_dir(tmp.path().join("a")).unwrap();
    ppm::save(&Image::filled(4, 4, 3, 0.5).unwrap(), &tmp.path().join("a/x.ppm")).unwrap();
    ppm::save(&Image::filled(5, 4, 3, 0.5).unwrap(), &tmp.path().join("a/y.ppm")).unwrap();
    let err = load_dataset(tmp.path()).unwrap_err().to_string();
    assert!(err.contains("mixed dimensions") && err.contains("y.ppm"), "{err}");

    fs::write(tmp.path().join("a/y.ppm"), b"P6\n4 4\n65535\n").unwrap();
    assert!(load_dataset(tmp.path()).is_err());
}

#[test]
fn checkpoint_file_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let arch = Architecture::new(16, 3, 5).unwrap();
    let p = init_model(&arch, &mut derive_rng(3, "init"), InitScheme::Kaiming).unwrap();
    let path = tmp.path().join("m.ckpt");
    checkpoint::save(&p, &path, Some("abc"), Some(3)).unwrap();
    let (back, sidecar) = checkpoint::load(&path).unwrap();
    assert_eq!(back, p);
    assert_eq!(sidecar.config_hash.as_deref(), Some("abc"));
    assert_eq!(sidecar.tensors.len(), 8);
    assert_eq!(sidecar.tensors[0].name, "conv1.weight");
    assert_eq!(sidecar.tensors[0].shape, vec![3, 3, 3, 8]);
}
