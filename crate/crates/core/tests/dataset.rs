use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use voxalign::data::{generate_synthetic, Dataset, SyntheticSpec};
use voxalign::encoders::PartOfSpeech;
use voxalign::Error;

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        train_videos: 6,
        test_videos: 3,
        verbs: 4,
        nouns: 4,
        fillers: 3,
        slow_channels: 5,
        fast_channels: 4,
        t_slow: 2,
        t_fast: 4,
        height: 4,
        width: 4,
        seed,
        ..SyntheticSpec::default()
    }
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn generation_is_a_pure_function_of_the_spec() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    generate_synthetic(&small_spec(4), &a).unwrap();
    generate_synthetic(&small_spec(4), &b).unwrap();
    generate_synthetic(&small_spec(5), &c).unwrap();
    let ta = read_tree(&a);
    assert!(ta.contains_key("train/manifest.jsonl"));
    assert!(ta.contains_key("test/vocab.tsv"));
    assert_eq!(ta, read_tree(&b));
    assert_ne!(ta, read_tree(&c));
}

#[test]
fn generated_splits_load_with_masks_and_planted_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(9);
    let summary = generate_synthetic(&spec, dir.path()).unwrap();
    let train = Dataset::<f64>::load(&dir.path().join("train")).unwrap();
    let test = Dataset::<f64>::load(&dir.path().join("test/manifest.jsonl")).unwrap();
    assert_eq!(train.videos.len(), spec.train_videos);
    assert_eq!(test.videos.len(), spec.test_videos);
    assert_eq!(train.captions.len(), spec.train_videos * spec.captions_per_video);
    assert_eq!(train.vocab, test.vocab);
    assert_eq!(summary.planted.len(), spec.train_videos + spec.test_videos);
    for (video, (id, verb, noun)) in train.videos.iter().zip(&summary.planted) {
        assert_eq!(&video.id, id);
        assert!(video.masks.is_some());
        for &c in &video.captions {
            let cap = &train.captions[c];
            assert_eq!(cap.verbs, [*verb]);
            assert_eq!(cap.nouns, [*noun]);
            assert_eq!(cap.tokens.len(), spec.fillers_per_caption + 2);
            // fillers, then noun, then verb
            assert_eq!(cap.tokens[cap.tokens.len() - 2..], [*noun, *verb]);
        }
        assert_eq!(
            video.fast.data().shape(),
            [spec.fast_channels, spec.t_fast, spec.height, spec.width]
        );
        assert_eq!(
            video.slow.data().shape(),
            [spec.slow_channels, spec.t_slow, spec.height, spec.width]
        );
    }
    assert_eq!(train.vocab.ids_with_pos(PartOfSpeech::Verb).len(), spec.verbs);
}

fn write_dataset(dir: &Path, manifest: &str) {
    let spec = small_spec(2);
    generate_synthetic(&spec, dir).unwrap();
    fs::write(dir.join("train/manifest.jsonl"), manifest).unwrap();
}

fn first_line(dir: &Path) -> String {
    fs::read_to_string(dir.join("train/manifest.jsonl"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

fn load_error(dir: &Path) -> String {
    match Dataset::<f64>::load(&dir.join("train")) {
        Err(e @ Error::InvalidDataset(_)) => e.to_string(),
        other => panic!("expected an invalid-dataset error, got {other:?}"),
    }
}

#[test]
fn manifest_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(&small_spec(2), dir.path()).unwrap();
    let good = first_line(dir.path());

    let cases = [
        (format!("{good}\n{{not json"), "line 2"),
        (
            format!(
                "{good}\n{}",
                good.replace("_c0", "_c9").replace("\"VERB\"", "\"ADVERB\"")
            ),
            "line 2",
        ),
        (format!("{good}\n{good}"), "duplicate caption_id"),
        (good.replace("\"OTHER\"", "\"NOUN\""), "vocabulary says"),
        (good.replace("_slow.vten\",\"fast", "_missing.vten\",\"fast"), "line 1"),
        (
            good.replace("\"tokens\":[", "\"tokens\":[[\"zzz\",\"OTHER\"],"),
            "not in vocabulary",
        ),
        (String::new(), "no records"),
    ];
    for (manifest, needle) in cases {
        write_dataset(dir.path(), &manifest);
        let msg = load_error(dir.path());
        assert!(msg.contains(needle), "{msg:?} should mention {needle:?}");
    }
}

#[test]
fn unknown_manifest_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(&small_spec(2), dir.path()).unwrap();
    let good = first_line(dir.path());
    write_dataset(dir.path(), &good.replacen('{', "{\"extra\":1,", 1));
    assert!(load_error(dir.path()).contains("line 1"));
}

#[test]
fn video_with_conflicting_feature_files_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(&small_spec(2), dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("train/manifest.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let other_fast = lines[2].split("\"fast\":\"").nth(1).unwrap().split('"').next().unwrap();
    let own_fast = lines[1].split("\"fast\":\"").nth(1).unwrap().split('"').next().unwrap();
    let broken = lines[1].replace(own_fast, other_fast);
    write_dataset(dir.path(), &format!("{}\n{broken}", lines[0]));
    assert!(load_error(dir.path()).contains("different feature files"));
}

#[test]
fn oversize_blob_spec_is_rejected_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        blob_h: 1.5,
        ..small_spec(1)
    };
    assert!(generate_synthetic(&spec, &dir.path().join("out")).is_err());
    assert!(!dir.path().join("out").exists());
}
