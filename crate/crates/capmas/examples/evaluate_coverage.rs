//! Coverage evaluation: a text-only answerer solves multiple-choice
//! questions about an image using nothing but the caption. A caption
//! that captures the image well makes the questions answerable.
//!
//! ```bash
//! cargo run -p capmas --example evaluate_coverage
//! ```

use capmas::gateway::{Gateway, ImageRef, MockRule, MockScript, ModelEndpoint};
use capmas::harness::{CoverageItem, Harness};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gateway = Gateway::in_memory();
    // The scripted answerer reads the caption inside the prompt: it can
    // answer the color question only if the caption mentions the color.
    gateway.register_mock(
        "answerer",
        MockScript {
            rules: vec![
                MockRule::substring("What color is the kettle", "B"),
                MockRule::substring("How many mugs", "The answer is (C)."),
                MockRule::substring("What is on the shelf", "I cannot tell from the caption"),
            ],
            default_response: None,
        },
    )?;
    let answerer = ModelEndpoint::mock("answerer");

    let image = ImageRef::from_bytes(b"kitchen photo");
    let items = vec![
        CoverageItem {
            image: image.clone(),
            question: "What color is the kettle?".into(),
            options: vec!["red".into(), "copper".into(), "black".into()],
            answer_index: 1,
        },
        CoverageItem {
            image: image.clone(),
            question: "How many mugs hang under the cabinet?".into(),
            options: vec!["two".into(), "three".into(), "four".into()],
            answer_index: 2,
        },
        CoverageItem {
            image,
            question: "What is on the shelf above the stove?".into(),
            options: vec!["spices".into(), "books".into()],
            answer_index: 0,
        },
    ];

    let caption = "A kitchen with a copper kettle on the stove and four mugs under the cabinet";
    let harness = Harness::new(&gateway);
    let run = harness.run_coverage(&answerer, caption, &items)?;

    println!("caption: {caption}\n");
    for (item, outcome) in items.iter().zip(&run.outcomes) {
        println!(
            "{:<42} parsed={:<9} {:?}",
            item.question,
            outcome
                .parsed_index
                .map(|i| format!("option {}", (b'A' + i as u8) as char))
                .unwrap_or_else(|| "none".into()),
            outcome.outcome,
        );
    }
    println!("\ncoverage accuracy: {:.3}", run.accuracy);
    println!("(the unparseable reply counts as incorrect)");
    Ok(())
}
