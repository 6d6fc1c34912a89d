//! The full correction pipeline on scripted endpoints: decompose a
//! caption into atomic propositions, verify each against the image,
//! partition by the pi threshold, and rewrite the caption.
//!
//! ```bash
//! cargo run -p capmas --example correct_caption
//! ```

use capmas::gateway::{Gateway, ImageRef, MockRule, MockScript, ModelEndpoint};
use capmas::pipeline::{AuditRecord, CaptionRecord, Pipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gateway = Gateway::in_memory();

    // The decomposer splits the caption into three propositions.
    gateway.register_mock(
        "decomposer",
        MockScript::fixed(
            "1. A house has a red roof\n2. A house has a chimney\n3. A dragon circles the house",
        ),
    )?;

    // The fact checker answers each "True or False?" question with
    // first-token probabilities; the dragon is confidently denied.
    gateway.register_mock(
        "checker",
        MockScript {
            rules: vec![
                MockRule::substring("red roof", "True")
                    .with_first_token_probs(vec![("True", 0.92), ("False", 0.03)]),
                MockRule::substring("chimney", "True")
                    .with_first_token_probs(vec![("True", 0.85), ("False", 0.05)]),
                MockRule::substring("dragon", "False")
                    .with_first_token_probs(vec![("True", 0.04), ("False", 0.91)]),
            ],
            default_response: None,
        },
    )?;

    // The corrector drops the flagged clause.
    gateway.register_mock(
        "corrector",
        MockScript::fixed("A house with a red roof and a chimney."),
    )?;

    let config = PipelineConfig::new(
        ModelEndpoint::mock("decomposer"),
        ModelEndpoint::mock("checker"),
        ModelEndpoint::mock("corrector"),
    );
    let pipeline = Pipeline::new(&gateway, config)?;

    let caption = CaptionRecord::new(
        ImageRef::from_bytes(b"example house photo"),
        "A house has a red roof and a chimney while a dragon circles it",
    );
    let run = pipeline.run(&caption)?;

    println!("initial:   {}", caption.text);
    println!("units:");
    for verdict in &run.verdicts {
        println!(
            "  [{}] p_true={:.2} p_false={:.2} score={:.4}  {}",
            if verdict.score <= pipeline.config().pi {
                "keep"
            } else {
                "flag"
            },
            verdict.p_true,
            verdict.p_false,
            verdict.score,
            verdict.unit.text,
        );
    }
    println!(
        "partition: {} accepted, {} flagged at pi = {}",
        run.partition.true_set.len(),
        run.partition.false_set.len(),
        pipeline.config().pi,
    );
    println!("corrected: {}", run.corrected);

    let audit = AuditRecord::from_run(&caption, &run, pipeline.config());
    println!("\naudit record:\n{}", serde_json::to_string_pretty(&audit)?);
    Ok(())
}
