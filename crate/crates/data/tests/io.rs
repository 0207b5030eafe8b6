use std::path::Path;

use densecap_core::heads::tokens::{EOS, UNK};
use densecap_data::annotations::{parse_annotations, AnnotatedEvent};
use densecap_data::predictions::parse_predictions;
use densecap_data::{
    load_annotations, load_predictions, load_proposals, save_annotations, save_predictions, AnnotationRecord, DataError,
    PredictedEvent, PredictionFile, Vocabulary,
};

fn record(id: &str) -> AnnotationRecord {
    AnnotationRecord {
        video_id: id.into(),
        duration_seconds: 47.31,
        events: vec![
            AnnotatedEvent {
                start: 0.1 + 0.2,
                end: 12.345678901234567,
                sentence: "A man runs.".into(),
            },
            AnnotatedEvent {
                start: 10.0,
                end: 47.31,
                sentence: "the dog jumps".into(),
            },
        ],
    }
}

#[test]
fn annotations_round_trip_losslessly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.json");
    let recs = vec![record("v1"), record("v2")];
    save_annotations(&path, &recs).unwrap();
    assert_eq!(load_annotations(&path).unwrap(), recs);
}

#[test]
fn bad_annotations_name_the_video() {
    let p = Path::new("x.json");
    let text = r#"{"vid_7": {"duration": 10.0, "timestamps": [[2.0, 11.0]], "sentences": ["a"]}}"#;
    match parse_annotations(text, p) {
        Err(DataError::Video { video_id, .. }) => assert_eq!(video_id, "vid_7"),
        other => panic!("{other:?}"),
    }
    let empty = r#"{"vid_8": {"duration": 10.0, "timestamps": [], "sentences": []}}"#;
    assert!(matches!(parse_annotations(empty, p), Err(DataError::Video { .. })));
    assert!(matches!(parse_annotations("{not json", p), Err(DataError::Json { .. })));
}

#[test]
fn tokenizer_rules() {
    let vocab = Vocabulary::new(["a", "man", "runs"]);
    let a = vocab.id("a").unwrap();
    let man = vocab.id("man").unwrap();
    let runs = vocab.id("runs").unwrap();
    assert_eq!(vocab.tokenize("A man runs."), vec![a, man, runs, EOS]);
    assert_eq!(vocab.tokenize("a zebra runs"), vec![a, UNK, runs, EOS]);
}

#[test]
fn predictions_and_proposals_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut preds = PredictionFile::new();
    preds.insert(
        "v1".into(),
        vec![PredictedEvent {
            sentence: "a man runs".into(),
            timestamp: [1.25, 3.0],
            confidence: -0.125,
        }],
    );
    let path = dir.path().join("p.json");
    save_predictions(&path, &preds).unwrap();
    assert_eq!(load_predictions(&path).unwrap(), preds);
    assert!(parse_predictions(r#"{"v": [{"sentence": "x", "timestamp": [3.0, 1.0], "confidence": 0.0}]}"#, &path).is_err());

    let plain = dir.path().join("props.json");
    std::fs::write(&plain, r#"{"v1": [[0.0, 2.5], [1.0, 4.0]]}"#).unwrap();
    assert_eq!(load_proposals(&plain).unwrap()["v1"], vec![[0.0, 2.5], [1.0, 4.0]]);
    let ann = dir.path().join("ann.json");
    save_annotations(&ann, &[record("v9")]).unwrap();
    assert_eq!(load_proposals(&ann).unwrap()["v9"][1], [10.0, 47.31]);
}
