mod common;

use std::fs;
use std::path::Path;

use common::KEYWORDS_3;
use depkit::checkpoint::{load_baseline, load_classifier, load_encoder, save_baseline, save_classifier, save_encoder};
use depkit::core::baselines::{fit_baseline, predict_baseline, BaselineConfig, BaselineKind};
use depkit::core::corpus::{LabelSchema, LabeledDataset, LabeledPost, Post, SplitTag};
use depkit::core::encoder::{fine_tune, predict_proba, Encoder, EncoderRef, HyperParams, ToyConfig};
use depkit::io::{format_dataset, load_mapping, parse_dataset, resolve_schema, write_schema};
use depkit::Error;
use proptest::prelude::*;

fn toy_train() -> LabeledDataset {
    let text = common::corpus_tsv(&KEYWORDS_3, "t", 48, 9);
    parse_dataset(&text, Path::new("train.tsv"), "toy", &LabelSchema::three_level(), SplitTag::Train).unwrap()
}

fn post_text() -> impl Strategy<Value = String> {
    // Anything printable plus the characters the format has to escape.
    proptest::collection::vec(prop_oneof![Just('\t'), Just('\n'), Just('\r'), Just('\\'), Just('é'), proptest::char::range('!', '~')], 1..40)
        .prop_map(|c| c.into_iter().collect::<String>())
        .prop_filter("posts need text", |s| !s.trim().is_empty())
}

proptest! {
    #[test]
    fn dataset_files_round_trip(texts in proptest::collection::vec(post_text(), 1..20), seed in any::<u64>()) {
        let schema = LabelSchema::three_level();
        let items: Vec<LabeledPost> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| LabeledPost { post: Post::new(format!("id-{i}"), t.clone()).unwrap(), label: (seed as usize + i) % 3 })
            .collect();
        let ds = LabeledDataset::new("d", schema.clone(), SplitTag::Test, items).unwrap();
        let text = format_dataset(&ds);
        prop_assert_eq!(text.lines().count(), ds.len() + 1);
        let back = parse_dataset(&text, Path::new("d.tsv"), "d", &schema, SplitTag::Test).unwrap();
        prop_assert_eq!(back, ds);
    }
}

#[test]
fn schema_and_mapping_files() {
    let dir = tempfile::tempdir().unwrap();
    let five = LabelSchema::new("five", ["none", "mild", "moderate", "severe", "extreme"]).unwrap();
    write_schema(&dir.path().join("five.toml"), &five).unwrap();
    assert_eq!(resolve_schema("five.toml", dir.path()).unwrap(), five);
    assert!(matches!(resolve_schema("missing.toml", dir.path()), Err(Error::Io { .. })));

    let three = LabelSchema::three_level();
    let path = dir.path().join("five-to-3.txt");
    fs::write(&path, "# collapse the upper levels\n0 -> 0\n1 -> 1\n2 -> 1\n3 -> 2\n4 -> 2\n").unwrap();
    let mapping = load_mapping(&path, &five, &three).unwrap();
    assert_eq!(mapping.name(), "five-to-3");
    assert_eq!((0..5).map(|l| mapping.apply(l)).collect::<Vec<_>>(), [0, 1, 1, 2, 2]);

    fs::write(&path, "0 -> 0\n1 -> 1\n2 -> 1\n3 -> 1\n4 -> 1\n").unwrap();
    let err = load_mapping(&path, &five, &three).unwrap_err();
    assert!(matches!(err, Error::SchemaMismatch(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn encoder_and_classifier_checkpoints_round_trip() {
    let train = toy_train();
    let texts: Vec<&str> = train.items().iter().map(|i| i.post.text.as_str()).collect();
    let encoder = Encoder::toy(EncoderRef::resolve("roberta").unwrap(), texts, &ToyConfig { max_positions: 32, ..ToyConfig::default() });
    let dir = tempfile::tempdir().unwrap();

    save_encoder(&dir.path().join("enc"), &encoder).unwrap();
    assert_eq!(load_encoder(&dir.path().join("enc")).unwrap(), encoder);

    let hp = HyperParams { max_tokens: 32, ..HyperParams::new(16, 1e-3, 2, 1) };
    let model = fine_tune(&encoder, &train, &hp).unwrap();
    save_classifier(&dir.path().join("clf"), &model, &[1]).unwrap();
    let back = load_classifier(&dir.path().join("clf")).unwrap();
    let posts = train.posts();
    assert_eq!(predict_proba(&back, &posts).unwrap(), predict_proba(&model, &posts).unwrap());

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("clf/manifest.json")).unwrap()).unwrap();
    assert!(manifest.get("optimizer").is_some());

    // A truncated weight blob must not load.
    let weights = dir.path().join("clf/weights.bin");
    let bytes = fs::read(&weights).unwrap();
    fs::write(&weights, &bytes[..bytes.len() - 8]).unwrap();
    assert!(load_classifier(&dir.path().join("clf")).is_err());
}

#[test]
fn baseline_checkpoints_round_trip() {
    let train = toy_train();
    let posts = train.posts();
    let dir = tempfile::tempdir().unwrap();
    for kind in [BaselineKind::Majority, BaselineKind::TfidfLogreg, BaselineKind::DocvecLogreg] {
        let model = fit_baseline(kind, &train, &BaselineConfig::default(), 1).unwrap();
        let path = dir.path().join(kind.as_str());
        save_baseline(&path, &model).unwrap();
        let back = load_baseline(&path).unwrap();
        assert_eq!(predict_baseline(&back, &posts).unwrap(), predict_baseline(&model, &posts).unwrap(), "{kind:?}");
    }
}
