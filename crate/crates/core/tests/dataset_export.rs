use std::path::PathBuf;

use trapline_core::annotations::{
    export_records, filter_unusable, parse_annotation, read_records, split_ids, DirectoryImages, Example,
};
use trapline_core::domain::AnnotatedImage;

fn voc() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/voc")
}

fn parsed() -> Vec<AnnotatedImage> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(voc().join("annotations"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| parse_annotation(&std::fs::read_to_string(p).unwrap()).unwrap().image)
        .collect()
}

#[test]
fn annotations_survive_filter_split_and_export() {
    let outcome = filter_unusable(parsed());
    assert_eq!(outcome.kept.len() + outcome.removed.len(), 11);
    assert!(!outcome.removed.is_empty());
    assert!(!outcome.dropped_objects.is_empty());

    let ids: Vec<&str> = outcome.kept.iter().map(|i| i.image_id.as_str()).collect();
    let split = split_ids(&ids, 0.9, 5).unwrap();
    let train: Vec<AnnotatedImage> =
        outcome.kept.iter().filter(|i| split.train.contains(&i.image_id)).cloned().collect();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.record");
    let report = export_records(&train, &DirectoryImages::new(voc().join("images")), &path).unwrap();
    assert!(report.skipped.is_empty());
    assert_eq!(report.written, train.len());

    let back = read_records(&path).unwrap();
    assert_eq!(back.len(), train.len());
    for (bytes, image) in back.iter().zip(&train) {
        let ex = Example::decode(bytes).unwrap();
        let want = Example::from_annotated(image, std::fs::read(voc().join("images").join(&image.image_id)).unwrap());
        assert_eq!(ex, want);
    }
}

#[test]
fn missing_images_are_skipped_not_fatal() {
    let images = filter_unusable(parsed()).kept;
    let dir = tempfile::tempdir().unwrap();
    let empty = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.record");
    let report = export_records(&images, &DirectoryImages::new(empty.path()), &path).unwrap();
    assert_eq!(report.written, 0);
    assert_eq!(report.skipped.len(), images.len());
    assert!(read_records(&path).unwrap().is_empty());
}
