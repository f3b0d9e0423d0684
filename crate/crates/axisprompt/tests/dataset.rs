mod common;

use axisprompt::dataset::{generate_dataset, Dataset, DatasetError, Manifest, MANIFEST};
use axisprompt::io;
use axisprompt_core::scene::{Category, DatasetEntry};
use common::{files_under, gen_config};

#[test]
fn generates_expected_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("ds");
    let manifest = generate_dataset(&gen_config(2, 3, 7), &root, false).unwrap();
    assert_eq!(manifest.entries.len(), 8);
    for c in Category::ALL {
        assert_eq!(manifest.entries.iter().filter(|e| e.category == c).count(), 2);
    }
    let files = files_under(&root);
    let pngs = files.iter().filter(|p| p.extension().is_some_and(|e| e == "png")).count();
    assert_eq!(pngs, 24);
    let on_disk: Manifest = io::read_json(&root.join(MANIFEST)).unwrap();
    assert_eq!(on_disk, manifest);
}

#[test]
fn regeneration_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate_dataset(&gen_config(1, 3, 42), &a, false).unwrap();
    generate_dataset(&gen_config(1, 3, 42), &b, false).unwrap();
    let files = files_under(&a);
    assert_eq!(files, files_under(&b));
    for f in &files {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{}", f.display());
    }
    let c = tmp.path().join("c");
    generate_dataset(&gen_config(1, 3, 43), &c, false).unwrap();
    let differs = files.iter().any(|f| std::fs::read(a.join(f)).ok() != std::fs::read(c.join(f)).ok());
    assert!(differs, "a different seed should change the dataset");
}

#[test]
fn entries_round_trip_through_json() {
    let tmp = tempfile::tempdir().unwrap();
    let root = common::dataset(tmp.path(), "ds", 1);
    let ds = Dataset::load(&root).unwrap();
    assert_eq!(ds.entries.len(), 4);
    for e in &ds.entries {
        let text = io::to_json(e);
        let back: DatasetEntry = serde_json::from_str(&text).unwrap();
        assert_eq!(&back, e);
        e.validate().unwrap();
    }
}

#[test]
fn keypoints_and_origin_are_visible_in_every_view() {
    let tmp = tempfile::tempdir().unwrap();
    let root = common::dataset(tmp.path(), "ds", 2);
    let ds = Dataset::load(&root).unwrap();
    for e in &ds.entries {
        let frame = e.frame();
        for (vi, v) in e.views.iter().enumerate() {
            let (w, h) = (v.camera.width() as f64, v.camera.height() as f64);
            let mut points = vec![frame.origin()];
            points.extend(e.object.gt_keypoints.iter().map(|k| frame.frame_to_world(k.position)));
            for p in points {
                let px = v.camera.project(p).unwrap();
                assert!(px.u >= 0.0 && px.v >= 0.0 && px.u < w && px.v < h, "{} view {vi}: {px:?} outside", e.id);
            }
        }
        let bases = ds.load_bases(ds.entries.iter().position(|x| x.id == e.id).unwrap()).unwrap();
        assert_eq!(bases.len(), 3);
    }
}

#[test]
fn refuses_non_empty_directory_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("keep.txt"), "x").unwrap();
    let err = generate_dataset(&gen_config(1, 2, 0), tmp.path(), false).unwrap_err();
    assert!(matches!(err, DatasetError::NotEmpty(_)), "{err}");
    generate_dataset(&gen_config(1, 2, 0), tmp.path(), true).unwrap();
    assert!(tmp.path().join("keep.txt").exists());
}

#[test]
fn rejects_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    for cfg in [gen_config(0, 3, 0), gen_config(1, 1, 0)] {
        let err = generate_dataset(&cfg, &tmp.path().join("x"), false).unwrap_err();
        assert!(matches!(err, DatasetError::Config(_)), "{err}");
    }
}
