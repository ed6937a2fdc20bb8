use std::fs;

use texdistill::data::{
    generate_synthetic_texture_dataset, load_mvtec_category, load_mvtec_category_with, materialize,
    MaskPolicy, TextureFamily,
};
use texdistill::{Error, Label};

fn fixture(n_train: usize, good: usize, defect: usize) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let splits =
        generate_synthetic_texture_dataset(TextureFamily::Checker, n_train, good, defect, 1);
    let cat = materialize(&splits, dir.path()).unwrap();
    (dir, cat)
}

#[test]
fn well_formed_tree_loads_all_splits() {
    let (dir, _) = fixture(10, 4, 6);
    let splits = load_mvtec_category(dir.path(), "checker").unwrap();
    assert_eq!(splits.train_good.len(), 10);
    assert_eq!(splits.test.len(), 10);
    assert_eq!(splits.n_test_good(), 4);
    assert_eq!(splits.n_test_defect(), 6);
    assert!(splits.has_masks());
    for s in &splits.test {
        assert_eq!(
            s.mask.is_some(),
            s.label == Label::Defect,
            "{}",
            s.source_id
        );
    }
}

#[test]
fn round_trip_preserves_pixels_and_masks() {
    let dir = tempfile::tempdir().unwrap();
    let orig = generate_synthetic_texture_dataset(TextureFamily::Grating, 2, 1, 3, 4);
    materialize(&orig, dir.path()).unwrap();
    let loaded = load_mvtec_category(dir.path(), "grating").unwrap();
    let mut a: Vec<_> = orig.test.iter().collect();
    let mut b: Vec<_> = loaded.test.iter().collect();
    a.sort_by(|x, y| x.source_id.cmp(&y.source_id));
    b.sort_by(|x, y| x.source_id.cmp(&y.source_id));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.source_id, y.source_id);
        assert_eq!(x.image, y.image);
        assert_eq!(x.mask_pixels(), y.mask_pixels());
    }
}

#[test]
fn missing_mask_is_reported_by_stem() {
    let (dir, cat) = fixture(3, 1, 2);
    let gt = cat.join("ground_truth");
    let mask = fs::read_dir(fs::read_dir(&gt).unwrap().next().unwrap().unwrap().path())
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let stem = mask
        .file_stem()
        .unwrap()
        .to_str()
        .unwrap()
        .trim_end_matches("_mask")
        .to_string();
    fs::remove_file(&mask).unwrap();
    match load_mvtec_category(dir.path(), "checker") {
        Err(Error::UnpairedMask { stem: s }) => assert!(s.contains(&stem), "{s}"),
        other => panic!("expected UnpairedMask, got {other:?}"),
    }
    let relaxed = load_mvtec_category_with(dir.path(), "checker", MaskPolicy::Optional).unwrap();
    assert!(!relaxed.has_masks());
}

#[test]
fn empty_train_split_is_rejected() {
    let (dir, cat) = fixture(2, 1, 1);
    for e in fs::read_dir(cat.join("train/good")).unwrap() {
        fs::remove_file(e.unwrap().path()).unwrap();
    }
    assert!(matches!(
        load_mvtec_category(dir.path(), "checker"),
        Err(Error::EmptyDataset(_))
    ));
}

#[test]
fn missing_category_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_mvtec_category(dir.path(), "carpet"),
        Err(Error::MissingDirectory(_))
    ));
}
