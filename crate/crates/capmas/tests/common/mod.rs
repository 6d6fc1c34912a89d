//! Shared fixtures for the integration and acceptance suites.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use capmas::gateway::{ImageRef, MockRule, MockScript};
use capmas::pipeline::CaptionRecord;

pub fn fixture_image(tag: &str) -> ImageRef {
    ImageRef::from_bytes(tag.as_bytes())
}

pub fn write_script(dir: &Path, name: &str, script: &MockScript) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(script).unwrap()).unwrap();
    path
}

pub fn write_jsonl<T: serde::Serialize>(dir: &Path, name: &str, records: &[T]) -> PathBuf {
    let path = dir.join(name);
    let body: String = records
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    std::fs::write(&path, body).unwrap();
    path
}

/// Five distinct scenes; each decomposes into one kept unit and one
/// flagged unit, and the corrector rewrites deterministically.
pub const SCENES: [&str; 5] = ["meadow", "harbor", "kitchen", "desert", "library"];

/// Build the all-mock correction fixture inside `dir`: mock scripts, a
/// five-caption JSONL file, and a config file wired to them. Returns
/// (config_path, captions_path).
pub fn correction_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let decomposer = MockScript {
        rules: SCENES
            .iter()
            .map(|scene| {
                MockRule::substring(
                    format!("a {scene} photo"),
                    format!("1. The {scene} is bright\n2. The {scene} holds a dragon"),
                )
            })
            .collect(),
        default_response: None,
    };
    let checker = MockScript {
        rules: vec![
            MockRule::substring("is bright", "True")
                .with_first_token_probs(vec![("True", 0.95), ("False", 0.01)]),
            MockRule::substring("holds a dragon", "False")
                .with_first_token_probs(vec![("True", 0.05), ("False", 0.9)]),
        ],
        default_response: None,
    };
    let corrector = MockScript {
        rules: SCENES
            .iter()
            .map(|scene| {
                MockRule::substring(
                    format!("The {scene} holds a dragon"),
                    format!("The {scene} is bright."),
                )
            })
            .collect(),
        default_response: None,
    };
    write_script(dir, "decomposer.json", &decomposer);
    write_script(dir, "checker.json", &checker);
    write_script(dir, "corrector.json", &corrector);

    let captions: Vec<CaptionRecord> = SCENES
        .iter()
        .map(|scene| {
            CaptionRecord::new(
                fixture_image(scene),
                format!("a {scene} photo that is bright and holds a dragon"),
            )
        })
        .collect();
    let captions_path = write_jsonl(dir, "captions.jsonl", &captions);

    let config_path = dir.join("run.toml");
    std::fs::write(
        &config_path,
        format!(
            r#"
cache_dir = "{cache}"
output = "{out}"

[[endpoints]]
id = "decomposer"
kind = "mock"
script_file = "decomposer.json"

[[endpoints]]
id = "checker"
kind = "mock"
script_file = "checker.json"

[[endpoints]]
id = "corrector"
kind = "mock"
script_file = "corrector.json"

[pipeline]
decomposer = "decomposer"
fact_checker = "checker"
corrector = "corrector"
"#,
            cache = dir.join("cache").display(),
            out = dir.join("audit.jsonl").display(),
        ),
    )
    .unwrap();
    (config_path, captions_path)
}

/// Print the acceptance verdict line and propagate the failure.
pub fn report_criterion(number: u32, name: &str, result: Result<(), String>) {
    match &result {
        Ok(()) => println!("acceptance criterion {number} ({name}): PASS"),
        Err(reason) => println!("acceptance criterion {number} ({name}): FAIL - {reason}"),
    }
    if let Err(reason) = result {
        panic!("criterion {number} ({name}) failed: {reason}");
    }
}
