//! Runs the checked-in fuzz seeds through the same round-trip properties the
//! fuzz targets assert, so the corpus stays valid on stable toolchains.

use std::path::PathBuf;

use absdl_core::dataset::{parse, to_text};
use absdl_core::evaluator::{parse_trajectory, trajectory_to_text};
use absdl_core::learner::{model_to_text, parse_model};
use absdl_harness::config::ScenarioConfig;
use absdl_harness::wire::{decode_frame, encode_frame};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn config_seeds_parse_and_round_trip() {
    for (path, bytes) in seeds("config_parse") {
        let cfg = ScenarioConfig::from_toml(text(&bytes)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}

#[test]
fn dataset_seeds_parse_and_round_trip() {
    for (_, bytes) in seeds("dataset_decode") {
        let set = parse(text(&bytes)).unwrap();
        assert!(!set.is_empty());
        assert_eq!(parse(&to_text(&set)).unwrap(), set);
    }
}

#[test]
fn model_seeds_parse_and_round_trip() {
    for (_, bytes) in seeds("model_decode") {
        let model = parse_model(text(&bytes)).unwrap();
        assert_eq!(parse_model(&model_to_text(&model)).unwrap(), model);
        assert!(model.predict(&[0.0; 11]).iter().all(|v| v.is_finite()));
    }
}

#[test]
fn trajectory_seeds_parse_and_round_trip() {
    for (_, bytes) in seeds("trajectory_decode") {
        let tr = parse_trajectory(text(&bytes)).unwrap();
        assert_eq!(trajectory_to_text(&tr), text(&bytes));
        assert_eq!(parse_trajectory(&trajectory_to_text(&tr)).unwrap(), tr);
    }
}

#[test]
fn wire_seeds_decode_frame_by_frame() {
    let mut good = 0;
    let mut bad = 0;
    for (path, bytes) in seeds("wire_frame_decode") {
        let mut rest = &bytes[..];
        while let Some((frame, used)) = decode_frame(rest).unwrap() {
            match frame {
                Ok(env) => {
                    let again = encode_frame(&env);
                    assert_eq!(decode_frame(&again).unwrap().unwrap().0.unwrap(), env, "{}", path.display());
                    good += 1;
                }
                Err(_) => bad += 1,
            }
            rest = &rest[used..];
        }
        assert!(rest.is_empty(), "{} has a trailing partial frame", path.display());
    }
    assert_eq!((good, bad), (11, 1));
}
