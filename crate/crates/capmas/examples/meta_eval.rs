//! Meta-evaluation: judge a clean caption against three perturbed
//! variants (object injected, attribute swapped, relation flipped). A
//! trustworthy factuality metric must rank the clean caption strictly
//! highest.
//!
//! ```bash
//! cargo run -p capmas --example meta_eval
//! ```

use capmas::gateway::{Gateway, ImageRef, MockRule, MockScript, ModelEndpoint};
use capmas::harness::{CaptionVariantSet, Harness};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gateway = Gateway::in_memory();
    // An oracle judge: it decomposes each variant and marks exactly the
    // injected falsehood FALSE.
    gateway.register_mock(
        "judge",
        MockScript {
            rules: vec![
                MockRule::substring(
                    "cat on a metal floor",
                    "1. A cat is on a metal floor\n2. The cat catches a feather",
                ),
                MockRule::substring(
                    "feather flying below",
                    "1. A cat is on a wooden floor\n2. A feather flies below the cat",
                ),
                MockRule::substring(
                    "A small red ball",
                    "1. A cat is on a wooden floor\n2. The cat catches a feather\n3. A red ball rolls near the cat",
                ),
                MockRule::substring(
                    "Break the caption down",
                    "1. A cat is on a wooden floor\n2. The cat catches a feather",
                ),
                // verdict rules, most specific first
                MockRule::substring("metal floor", "1. FALSE\n2. TRUE"),
                MockRule::substring("below the cat", "1. TRUE\n2. FALSE"),
                MockRule::substring("red ball", "1. TRUE\n2. TRUE\n3. FALSE"),
                MockRule::substring("Propositions:", "1. TRUE\n2. TRUE"),
            ],
            default_response: None,
        },
    )?;
    let judge = ModelEndpoint::mock("judge");

    let sets = vec![CaptionVariantSet {
        image: ImageRef::from_bytes(b"cat photo"),
        clean: "A cat on a wooden floor catches a feather flying above it".into(),
        object_variant:
            "A cat on a wooden floor catches a feather. A small red ball rolls near the cat".into(),
        attribution_variant: "A cat on a metal floor catches a feather flying above it".into(),
        relation_variant: "A cat on a wooden floor catches a feather flying below it".into(),
        reference: "An indoor view of a cat on a wooden floor catching a feather above it".into(),
    }];

    let harness = Harness::new(&gateway);
    let report = harness.run_meta_eval(&judge, &sets)?;

    println!("class        mean factuality");
    for class in ["clean", "object", "attribution", "relation"] {
        println!(
            "{class:<12} {:.3}",
            report.aggregates[&format!("mean_{class}")]
        );
    }
    println!(
        "\nclean ranks strictly highest: {}",
        report.aggregates["clean_ranks_highest"] == 1.0
    );
    Ok(())
}
