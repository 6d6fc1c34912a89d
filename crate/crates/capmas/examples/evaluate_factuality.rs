//! Factuality judging: the judge decomposes a caption, then marks each
//! proposition TRUE or FALSE given the image and a reference caption.
//! The score is the fraction judged true.
//!
//! ```bash
//! cargo run -p capmas --example evaluate_factuality
//! ```

use capmas::gateway::{Gateway, ImageRef, MockRule, MockScript, ModelEndpoint};
use capmas::harness::Harness;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gateway = Gateway::in_memory();
    gateway.register_mock(
        "judge",
        MockScript {
            rules: vec![
                // decomposition of the caption under evaluation
                MockRule::substring(
                    "Break the caption down",
                    "1. A cat sits on a wooden floor\n2. The cat chases a feather\n3. A red ball rolls near the cat",
                ),
                // verdicts given the image and the reference jointly
                MockRule::substring(
                    "Propositions:",
                    "1. TRUE\n2. TRUE\n3. FALSE - no ball is visible anywhere",
                ),
            ],
            default_response: None,
        },
    )?;
    let judge = ModelEndpoint::mock("judge");

    let harness = Harness::new(&gateway);
    let judgment = harness.judge_factuality(
        &judge,
        "A cat sits on a wooden floor chasing a feather while a red ball rolls by",
        &ImageRef::from_bytes(b"cat photo"),
        "An indoor view captures a cat on a wooden floor, trying to catch a feather.",
    )?;

    for verdict in &judgment.verdicts {
        println!(
            "{:<5} {}{}",
            format!("{:?}", verdict.verdict).to_uppercase(),
            verdict.proposition,
            verdict
                .rationale
                .as_deref()
                .map(|r| format!("   ({r})"))
                .unwrap_or_default(),
        );
    }
    println!(
        "\nfactuality = {} / ({} + {}) = {:.3}",
        judgment.true_count, judgment.true_count, judgment.false_count, judgment.score
    );
    Ok(())
}
