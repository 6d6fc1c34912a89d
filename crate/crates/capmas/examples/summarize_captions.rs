//! Multi-prompt summarization: five captions of the same image, produced
//! by five different prompts, merged into one detailed caption before
//! evaluation.
//!
//! ```bash
//! cargo run -p capmas --example summarize_captions
//! ```

use capmas::gateway::{Gateway, ImageRef, MockRule, MockScript, ModelEndpoint};
use capmas::pipeline::{CaptionRecord, Pipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gateway = Gateway::in_memory();
    gateway.register_mock(
        "summarizer",
        MockScript {
            rules: vec![MockRule::substring(
                "Captions:",
                "A lighthouse stands on a rocky cliff above a small bay; gulls wheel over two \
                 moored fishing boats while the evening sun colors the tower's white walls orange.",
            )],
            default_response: None,
        },
    )?;
    // the summarizer runs on the same endpoint role as the decomposer
    let config = PipelineConfig::new(
        ModelEndpoint::mock("summarizer"),
        ModelEndpoint::mock("summarizer"),
        ModelEndpoint::mock("summarizer"),
    );
    let pipeline = Pipeline::new(&gateway, config)?;

    let image = ImageRef::from_bytes(b"lighthouse photo");
    let captions: Vec<CaptionRecord> = [
        "A white lighthouse on a cliff.",
        "Rocky coastline with a lighthouse and a small bay below.",
        "Two fishing boats are moored in a bay beneath a lighthouse.",
        "Gulls fly around a lighthouse in the evening light.",
        "The evening sun tints the lighthouse walls orange.",
    ]
    .iter()
    .enumerate()
    .map(|(i, text)| {
        let mut record = CaptionRecord::new(image.clone(), *text);
        record.prompt_id = Some(format!("prompt-{i}"));
        record
    })
    .collect();

    let summary = pipeline.summarize_multi_prompt(&captions)?;
    println!("inputs:");
    for caption in &captions {
        println!(
            "  [{}] {}",
            caption.prompt_id.as_deref().unwrap(),
            caption.text
        );
    }
    println!("\nsummary:\n  {summary}");

    // arity is enforced: four captions are rejected
    let err = pipeline.summarize_multi_prompt(&captions[..4]).unwrap_err();
    println!("\nfour captions -> {err}");
    Ok(())
}
