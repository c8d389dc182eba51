mod common;

use std::path::Path;

use proptest::prelude::*;
use xcam_core::dataset::toygen::{mean_brightness, render};
use xcam_core::dataset::{build_protocol, generate_toy_dataset, load_manifest, parse_manifest, CameraStyle, Protocol, Split, ToyGenSpec};

#[test]
fn toy_counts_and_regeneration_is_bit_identical() {
    let spec = ToyGenSpec::new(32, 4, 2, 16, 5);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = generate_toy_dataset(&spec, a.path()).unwrap();
    let mb = generate_toy_dataset(&spec, b.path()).unwrap();
    assert_eq!(ma.records.len(), 256);
    assert_eq!(ma.records, mb.records);
    assert_eq!(ma.n_identities, 32);
    for r in &ma.records {
        let x = std::fs::read(ma.resolve(r)).unwrap();
        let y = std::fs::read(mb.resolve(r)).unwrap();
        assert_eq!(x, y, "{}", r.image_path.display());
    }
    let reloaded = load_manifest(&a.path().join("manifest.jsonl")).unwrap();
    assert_eq!(reloaded.records, ma.records);
    assert_eq!(reloaded.n_cameras, 4);
}

#[test]
fn identical_styles_render_identical_images() {
    let mut spec = ToyGenSpec::new(4, 2, 2, 16, 9);
    spec.camera_styles[1] = spec.camera_styles[0].clone();
    for id in 0..4 {
        for idx in 0..2 {
            assert_eq!(render(&spec, id, 0, idx), render(&spec, id, 1, idx));
        }
    }
}

#[test]
fn brightness_gap_follows_configured_offsets() {
    let spec = ToyGenSpec::new(8, 4, 2, 32, 3);
    let mean = |cam: usize| {
        let mut acc = 0.0;
        for id in 0..8 {
            for idx in 0..2 {
                acc += mean_brightness(&render(&spec, id, cam, idx));
            }
        }
        acc / 16.0
    };
    let base = mean(0);
    for cam in 1..4 {
        let want = (spec.camera_styles[cam].brightness_offset - spec.camera_styles[0].brightness_offset) as f64;
        let got = mean(cam) - base;
        assert!((got - want).abs() <= 1.0, "camera {cam}: gap {got:.3}, offsets differ by {want}");
    }
}

#[test]
fn train_identities_are_disjoint_from_test() {
    let spec = ToyGenSpec::new(10, 3, 2, 16, 2);
    let dir = tempfile::tempdir().unwrap();
    let m = generate_toy_dataset(&spec, dir.path()).unwrap();
    let train: std::collections::BTreeSet<_> = m.split(Split::Train).map(|r| r.vehicle_id).collect();
    for r in m.records.iter().filter(|r| r.split != Split::Train) {
        assert!(!train.contains(&r.vehicle_id));
    }
    let qg = build_protocol(&m, Protocol::Veri, 0).unwrap();
    assert!(!qg.query.is_empty() && !qg.gallery.is_empty());
    let a = build_protocol(&m, Protocol::VehicleId, 4).unwrap();
    let b = build_protocol(&m, Protocol::VehicleId, 4).unwrap();
    assert_eq!(a, b);
    let gallery_ids: std::collections::BTreeSet<_> = a.gallery.iter().map(|r| r.vehicle_id).collect();
    assert_eq!(gallery_ids.len(), a.gallery.len(), "one gallery image per identity");
}

#[test]
fn manifest_parse_errors_name_the_line() {
    let p = Path::new("m.jsonl");
    let good = r#"{"name":"t","n_cameras":2}
{"path":"a.png","vehicle_id":0,"camera_id":0,"split":"train"}
{"path":"b.png","vehicle_id":0,"camera_id":1,"split":"train"}
{"path":"c.png","vehicle_id":1,"camera_id":0,"split":"query"}
{"path":"d.png","vehicle_id":1,"camera_id":1,"split":"gallery"}
"#;
    assert_eq!(parse_manifest(good, p).unwrap().records.len(), 4);
    let bad_cam = good.replace(r#""d.png","vehicle_id":1,"camera_id":1"#, r#""d.png","vehicle_id":1,"camera_id":5"#);
    let err = parse_manifest(&bad_cam, p).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("m.jsonl:5"), "{err}");
    let garbled = good.replace(r#"{"path":"b.png""#, r#"{"path":"b.png""#.trim_end_matches('"'));
    let err = parse_manifest(&garbled, p).unwrap_err();
    assert!(matches!(err, xcam_core::Error::Parse { line: 3, .. }), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn camera_styles_are_pure_functions(cam in 0usize..20, seed in any::<u64>()) {
        prop_assert_eq!(CameraStyle::derived(cam, seed), CameraStyle::derived(cam, seed));
        let s = CameraStyle::derived(cam, seed);
        prop_assert!(s.brightness_offset.abs() <= 40);
    }
}
