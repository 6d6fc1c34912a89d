//! The factuality/coverage trade-off as a function of the pi threshold.
//! Lower pi flags more propositions for correction: factuality rises,
//! but coverage falls when the dropped clauses carried answers.
//!
//! Unit scores are computed once per unit and re-partitioned per pi.
//!
//! ```bash
//! cargo run -p capmas --example pi_sweep
//! ```

use capmas::gateway::{Gateway, ImageRef, MockRule, MockScript, ModelEndpoint};
use capmas::harness::{pi_key, CoverageItem, FactualityItem, Harness};
use capmas::pipeline::PipelineConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gateway = Gateway::in_memory();
    let p_for = |score: f64| (-score).exp();

    gateway.register_mock(
        "decomposer",
        MockScript::fixed("1. The ball is red\n2. A cat sleeps\n3. The window is open"),
    )?;
    // Unit scores land at roughly 0.2, 0.7, and 1.5.
    gateway.register_mock(
        "checker",
        MockScript {
            rules: vec![
                MockRule::substring("The ball is red", "True")
                    .with_first_token_probs(vec![("True", p_for(0.2))]),
                MockRule::substring("A cat sleeps", "True")
                    .with_first_token_probs(vec![("True", p_for(0.7))]),
                MockRule::substring("The window is open", "True")
                    .with_first_token_probs(vec![("True", p_for(1.5))]),
            ],
            default_response: None,
        },
    )?;
    gateway.register_mock(
        "corrector",
        MockScript {
            rules: vec![
                MockRule::substring("FALSE propositions:\n- A cat sleeps", "A red ball."),
                MockRule::substring(
                    "FALSE propositions:\n- The window is open",
                    "A red ball and a sleeping cat.",
                ),
            ],
            default_response: None,
        },
    )?;
    gateway.register_mock(
        "judge",
        MockScript {
            rules: vec![
                MockRule::substring(
                    "Caption: A red ball and a sleeping cat.",
                    "1. A red ball is present\n2. A cat sleeps",
                ),
                MockRule::substring("Caption: A red ball.", "1. A red ball is present"),
                MockRule::substring("Propositions:", "1. TRUE\n2. TRUE"),
            ],
            default_response: None,
        },
    )?;
    gateway.register_mock(
        "answerer",
        MockScript {
            rules: vec![MockRule::substring("sleeping cat", "A")],
            default_response: Some("B".into()),
        },
    )?;

    let image = ImageRef::from_bytes(b"sweep photo");
    let items = vec![FactualityItem {
        image: image.clone(),
        caption: "a red ball, a sleeping cat, and an open window".into(),
        reference: "a red ball and a sleeping cat by a closed window".into(),
    }];
    let coverage_items = vec![CoverageItem {
        image,
        question: "What is the animal doing?".into(),
        options: vec!["sleeping".into(), "flying".into()],
        answer_index: 0,
    }];

    let pi_values = [1.0, 0.5, 0.3];
    let harness = Harness::new(&gateway);
    let report = harness.run_pi_sweep(
        PipelineConfig::new(
            ModelEndpoint::mock("decomposer"),
            ModelEndpoint::mock("checker"),
            ModelEndpoint::mock("corrector"),
        ),
        &pi_values,
        &items,
        &ModelEndpoint::mock("judge"),
        &coverage_items,
        &ModelEndpoint::mock("answerer"),
    )?;

    println!("pi     factuality  coverage  flagged");
    for pi in pi_values {
        let key = pi_key(pi);
        println!(
            "{pi:<5}  {:<10.3}  {:<8.3}  {}",
            report.aggregates[&format!("mean_factuality_pi_{key}")],
            report.aggregates[&format!("mean_coverage_pi_{key}")],
            report.aggregates[&format!("mean_flagged_pi_{key}")],
        );
    }
    println!(
        "\nfact-checker calls: {} (three units, scored once, reused across pi)",
        gateway.backend_calls("checker")
    );
    Ok(())
}
