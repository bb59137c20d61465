//! The checked-in synthetic exporter outputs under `tests/fixtures`.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use sentiment_trend::corpus::{load_covariates, parse_comments, read_labels, OnMalformed};
use sentiment_trend::embeddings::{EmbeddingMatrix, ExportManifest};
use sentiment_trend::gat::{ProbSource, SentimentProbs};
use sentiment_trend::report::load_coordinates;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn open(name: &str) -> BufReader<File> {
    BufReader::new(File::open(fixture(name)).unwrap())
}

#[test]
fn emb1_header_agrees_with_exporter_manifest() {
    let m = EmbeddingMatrix::read(open("embeddings.emb"), open("embeddings.ids")).unwrap();
    let manifest = ExportManifest::read(open("embeddings.manifest.json")).unwrap();
    manifest.check(&m).unwrap();
    assert_eq!((m.rows(), m.dim()), (123, 8));
    let wrong = ExportManifest {
        dim: 768,
        ..manifest
    };
    assert!(wrong.check(&m).is_err());
}

#[test]
fn rows_follow_comment_order() {
    let comments = parse_comments(open("comments.jsonl"), OnMalformed::Abort)
        .unwrap()
        .comments;
    let m = EmbeddingMatrix::read(open("embeddings.emb"), open("embeddings.ids")).unwrap();
    let ids: Vec<&str> = comments.iter().map(|c| c.msg_id.as_str()).collect();
    assert_eq!(m.ids(), ids.as_slice());
}

#[test]
fn emb1_rewrite_is_byte_identical() {
    let bytes = std::fs::read(fixture("embeddings.emb")).unwrap();
    let m = EmbeddingMatrix::read(&bytes[..], open("embeddings.ids")).unwrap();
    let mut out = Vec::new();
    m.write(&mut out).unwrap();
    assert_eq!(out, bytes);
    let mut ids = Vec::new();
    m.write_manifest(&mut ids).unwrap();
    assert_eq!(ids, std::fs::read(fixture("embeddings.ids")).unwrap());
}

#[test]
fn probability_csv_covers_every_row() {
    let probs =
        SentimentProbs::read_csv(open("embeddings.probs.csv"), ProbSource::Upstream).unwrap();
    let m = EmbeddingMatrix::read(open("embeddings.emb"), open("embeddings.ids")).unwrap();
    assert_eq!(probs.msg_ids, m.ids());
    assert!(probs.p_negative.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn probability_csv_rejects_bad_rows() {
    let out_of_range = "msg_id,p_negative\na,1.5\n";
    assert!(SentimentProbs::read_csv(out_of_range.as_bytes(), ProbSource::Upstream).is_err());
    let dup = "msg_id,p_negative\na,0.1\na,0.2\n";
    assert!(SentimentProbs::read_csv(dup.as_bytes(), ProbSource::Upstream).is_err());
    let extra = "msg_id,p_negative,p_neutral\na,0.1,0.5\n";
    assert_eq!(
        SentimentProbs::read_csv(extra.as_bytes(), ProbSource::Upstream)
            .unwrap()
            .get("a"),
        Some(0.1)
    );
}

#[test]
fn side_tables_load() {
    let covs = load_covariates(open("covariates.csv")).unwrap();
    assert_eq!(covs.len(), 4);
    assert_eq!(covs.iter().filter(|c| c.is_complete()).count(), 3);
    let coords = load_coordinates(open("coords.csv")).unwrap();
    assert_eq!(coords.len(), 3);
    let labels = read_labels(open("labels.csv")).unwrap();
    assert!(labels.values().any(|&l| l) && labels.values().any(|&l| !l));
    assert!(read_labels("msg_id,label\na,2\n".as_bytes()).is_err());
}
