use std::fs;

use vmr_core::io::manifest::{load_dataset, read_manifest, write_dataset, DatasetPaths, GridOptions};
use vmr_core::io::{features, results};
use vmr_core::retrieval::{build_index, retrieve_all, RetrievalConfig};
use vmr_core::synth::{generate, SynthConfig};
use vmr_core::FeatureMatrix;

fn small() -> SynthConfig {
    SynthConfig {
        n_videos: 12,
        n_train: 20,
        n_test: 6,
        ..SynthConfig::default()
    }
}

fn close(a: &FeatureMatrix, b: &FeatureMatrix) -> bool {
    a.rows() == b.rows() && a.cols() == b.cols() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 1e-6 * x.abs().max(1.0))
}

#[test]
fn synthetic_corpus_survives_the_interchange_layout() {
    let corpus = generate(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_dataset(dir.path(), &corpus.dataset, &corpus.parses).unwrap();
    let back = load_dataset(&paths, &GridOptions::default()).unwrap();
    let orig = &corpus.dataset;
    assert_eq!(back.queries.len(), orig.queries.len());
    assert_eq!(back.videos.len(), orig.videos.len());
    for (a, b) in orig.videos.iter().zip(&back.videos) {
        assert_eq!(a.video_id, b.video_id);
        assert_eq!(a.grid, b.grid);
        assert!(close(&a.clip_features, &b.clip_features));
    }
    for (a, b) in orig.queries.iter().zip(&back.queries) {
        assert_eq!((&a.query_id, &a.text, &a.video_id, &a.split), (&b.query_id, &b.text, &b.video_id, &b.split));
        assert_eq!(a.gt, b.gt);
        assert!(close(&a.word_features, &b.word_features));
        assert_eq!(a.phrases.labels(), b.phrases.labels());
        assert_eq!(a.phrases.kinds(), b.phrases.kinds());
        assert!(close(a.phrases.vectors(), b.phrases.vectors()));
    }
    for i in 0..orig.queries.len() {
        assert_eq!(orig.gt_clips(i), back.gt_clips(i));
    }
}

#[test]
fn written_files_are_byte_stable() {
    let corpus = generate(&small()).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_dataset(a.path(), &corpus.dataset, &corpus.parses).unwrap();
    write_dataset(b.path(), &corpus.dataset, &corpus.parses).unwrap();
    for name in ["manifest.jsonl", "videos.jsonl", "parses.txt", "features/vid0003_clips.vmrf"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn manifest_errors_name_the_file_and_query() {
    let corpus = generate(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_dataset(dir.path(), &corpus.dataset, &corpus.parses).unwrap();

    // GT beyond the video duration (8 clips of 1 s).
    let text = fs::read_to_string(&paths.manifest).unwrap();
    let first = text.lines().next().unwrap();
    let mut entry: serde_json::Value = serde_json::from_str(first).unwrap();
    entry["t_ed"] = serde_json::json!(9.5);
    let bad = text.replacen(first, &entry.to_string(), 1);
    fs::write(&paths.manifest, bad).unwrap();
    let err = load_dataset(&paths, &GridOptions::default()).unwrap_err().to_string();
    assert!(err.contains("manifest.jsonl") && err.contains("q00000") && err.contains("duration"), "{err}");

    // Parse line out of range.
    fs::write(&paths.manifest, text.replacen("\"parse_line_no\":0", "\"parse_line_no\":999", 1)).unwrap();
    let err = load_dataset(&paths, &GridOptions::default()).unwrap_err().to_string();
    assert!(err.contains("parse_line_no 999"), "{err}");

    // Corrupt feature file.
    fs::write(&paths.manifest, &text).unwrap();
    let clip = dir.path().join("features/vid0000_clips.vmrf");
    let mut bytes = fs::read(&clip).unwrap();
    bytes[8] = 7;
    fs::write(&clip, bytes).unwrap();
    let err = load_dataset(&paths, &GridOptions::default()).unwrap_err().to_string();
    assert!(err.contains("vid0000_clips.vmrf") && err.contains("dtype"), "{err}");
}

#[test]
fn clip_count_must_match_duration() {
    let corpus = generate(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_dataset(dir.path(), &corpus.dataset, &corpus.parses).unwrap();
    let text = fs::read_to_string(&paths.videos).unwrap();
    fs::write(&paths.videos, text.replacen("\"duration\":8.0", "\"duration\":12.0", 1)).unwrap();
    let err = load_dataset(&paths, &GridOptions::default()).unwrap_err().to_string();
    assert!(err.contains("8 clips") && err.contains("gives 12"), "{err}");
}

#[test]
fn empty_manifest_loads_without_parse_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(&small()).unwrap();
    let paths = write_dataset(dir.path(), &corpus.dataset, &corpus.parses).unwrap();
    fs::write(&paths.manifest, "").unwrap();
    fs::remove_file(&paths.parses).unwrap();
    let ds = load_dataset(&paths, &GridOptions::default()).unwrap();
    assert!(ds.queries.is_empty());
    assert_eq!(ds.videos.len(), 12);
    assert!(read_manifest(&paths.manifest).unwrap().is_empty());
}

#[test]
fn paths_resolve_relative_to_the_manifest() {
    let corpus = generate(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_dataset(dir.path(), &corpus.dataset, &corpus.parses).unwrap();
    let elsewhere = tempfile::tempdir().unwrap();
    let prev = std::env::current_dir().unwrap();
    std::env::set_current_dir(elsewhere.path()).unwrap();
    let loaded = load_dataset(&DatasetPaths::beside(&paths.manifest), &GridOptions::default());
    std::env::set_current_dir(prev).unwrap();
    assert_eq!(loaded.unwrap().queries.len(), 26);
}

#[test]
fn results_file_round_trips_through_the_reader() {
    let corpus = generate(&small()).unwrap();
    let ds = &corpus.dataset;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
    let params = vmr_core::ModelParams::random(8, ds.d_q().unwrap(), ds.d_v().unwrap(), &mut rng);
    let index = build_index(&params, &ds.videos).unwrap();
    let qs: Vec<_> = (0..ds.queries.len())
        .map(|i| (ds.queries[i].query_id.clone(), &ds.queries[i].word_features, Some(ds.video_of(i))))
        .collect();
    let cfg = RetrievalConfig {
        k_results: 5,
        ..RetrievalConfig::default()
    };
    let res = retrieve_all(&params, &index, &qs, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.jsonl");
    results::write_results(&path, &res).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), ds.queries.len());
    let back = results::read_results(&path).unwrap();
    for (r, b) in res.iter().zip(&back) {
        assert_eq!(b.query_id, r.query_id);
        assert_eq!(b.moments.len(), 5);
        for (m, bm) in r.moments.iter().zip(&b.moments) {
            assert_eq!(m.video_id, bm.video_id);
            assert_eq!(m.interval, bm.interval);
        }
    }
    // every score is printed with exactly six decimals
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["results"].as_array().unwrap().len(), 5);
    let raw = text.lines().next().unwrap();
    let s = &raw[raw.find("\"s_vr\":").unwrap() + 7..];
    let num: &str = s.split([',', '}']).next().unwrap();
    assert_eq!(num.split('.').nth(1).unwrap().len(), 6, "{num}");
}

#[test]
fn feature_reader_rejects_truncated_files_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.vmrf");
    let m = FeatureMatrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    features::write(&p, &m).unwrap();
    assert_eq!(features::read(&p).unwrap(), m);
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
    let err = features::read(&p).unwrap_err().to_string();
    assert!(err.contains("payload") && err.contains("m.vmrf"), "{err}");
}
