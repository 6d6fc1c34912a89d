//! The three object-hallucination detectors over a small labeled
//! dataset, benchmarked with AUROC and FPR95 plus positional bins.
//!
//! ```bash
//! cargo run -p capmas --example detect_hallucinations
//! ```

use std::collections::BTreeSet;

use capmas::detectors::{DetectionMethod, DetectionSample, MentionLabel, ObjectMention};
use capmas::gateway::{Gateway, ImageRef, MockRule, MockScript, ModelEndpoint};
use capmas::harness::Harness;

fn mention(object: &str, index: usize, prob: f64, label: MentionLabel) -> ObjectMention {
    ObjectMention {
        object_text: object.into(),
        token_index: index,
        token_probs: Some(vec![prob]),
        label,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gateway = Gateway::in_memory();
    // The isolation checker sees each object detached from its caption:
    // "Is there a {object} in the photo?"
    gateway.register_mock(
        "checker",
        MockScript {
            rules: vec![
                MockRule::substring("Is there a unicorn", "No")
                    .with_first_token_probs(vec![("Yes", 0.08), ("No", 0.9)]),
                MockRule::substring("Is there a second sun", "No")
                    .with_first_token_probs(vec![("Yes", 0.15), ("No", 0.8)]),
                MockRule::substring("Is there a", "Yes")
                    .with_first_token_probs(vec![("Yes", 0.93), ("No", 0.02)]),
            ],
            default_response: None,
        },
    )?;
    let checker = ModelEndpoint::mock("checker");

    let dataset = vec![
        DetectionSample {
            image: ImageRef::from_bytes(b"meadow photo"),
            caption: "a meadow with a fence and a unicorn near the end".into(),
            mentions: vec![
                mention("fence", 4, 0.88, MentionLabel::Grounded),
                mention("unicorn", 210, 0.35, MentionLabel::Hallucination),
            ],
            sample_captions: Some(vec![
                "a meadow with a fence".into(),
                "a green meadow, wooden fence".into(),
                "a fence crosses the meadow".into(),
                "a meadow under a clear sky".into(),
            ]),
        },
        DetectionSample {
            image: ImageRef::from_bytes(b"beach photo"),
            caption: "a beach with a towel and a second sun".into(),
            mentions: vec![
                mention("towel", 3, 0.9, MentionLabel::Grounded),
                mention("second sun", 230, 0.3, MentionLabel::Hallucination),
            ],
            sample_captions: Some(vec![
                "a sandy beach with a towel".into(),
                "a towel on the beach".into(),
                "a beach at noon".into(),
                "a striped towel on sand".into(),
            ]),
        },
    ];

    let methods = BTreeSet::from([
        DetectionMethod::Confidence,
        DetectionMethod::Consistency,
        DetectionMethod::Isolation,
    ]);
    let harness = Harness::new(&gateway);
    let report =
        harness.run_detection_benchmark(&dataset, &methods, Some(&checker), &[0, 64, 128, 192])?;

    println!("method        AUROC   FPR95");
    for method in ["confidence", "consistency", "isolation"] {
        println!(
            "{method:<12}  {:.3}   {:.3}",
            report.aggregates[&format!("auroc_{method}")],
            report.aggregates[&format!("fpr95_{method}")],
        );
    }

    println!("\nconfidence scores by mention position:");
    let bins: capmas::detectors::BinnedScores =
        serde_json::from_value(report.attachments["bins_confidence"].clone())?;
    for bin in &bins.bins {
        let upper = bin.upper.map_or("inf".into(), |u| u.to_string());
        match bin.mean {
            Some(mean) => println!(
                "  [{:>3}, {:>3})  mean {:.3}  std {:.3}  n={}",
                bin.lower,
                upper,
                mean,
                bin.std.unwrap(),
                bin.count
            ),
            None => println!("  [{:>3}, {:>3})  empty", bin.lower, upper),
        }
    }
    Ok(())
}
