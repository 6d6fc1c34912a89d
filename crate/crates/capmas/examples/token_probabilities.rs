//! Gateway basics: scripted endpoints, first-token probability
//! extraction, and the response cache that makes reruns free.
//!
//! ```bash
//! cargo run -p capmas --example token_probabilities
//! ```

use capmas::gateway::{
    first_token_prob, ChatExchange, Gateway, MockRule, MockScript, ModelEndpoint,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gateway = Gateway::in_memory();
    gateway.register_mock(
        "checker",
        MockScript {
            rules: vec![
                MockRule::exact("True or False? A house has a red roof", "True")
                    // tokenizers often emit a leading space; the extractor
                    // normalizes and sums the variants
                    .with_first_token_probs(vec![(" True", 0.7), ("true", 0.1), ("False", 0.15)]),
            ],
            default_response: None,
        },
    )?;
    let endpoint = ModelEndpoint::mock("checker");

    let exchange = ChatExchange::user("True or False? A house has a red roof").with_token_probs(20);
    let completion = gateway.complete(&endpoint, &exchange)?;

    println!("reply text: {}", completion.text);
    println!("position-0 distribution (sorted by probability):");
    for entry in &completion.distributions[0].entries {
        println!("  {:?} -> {:.2}", entry.token_text, entry.probability);
    }

    let p_true = first_token_prob(&completion.distributions, &["true"]);
    let p_false = first_token_prob(&completion.distributions, &["false"]);
    let p_yes = first_token_prob(&completion.distributions, &["yes"]);
    println!("p(true variants)  = {p_true:.2}   (0.7 + 0.1 after normalization)");
    println!("p(false variants) = {p_false:.2}");
    println!("p(yes variants)   = {p_yes:.2}   (absent tokens contribute zero)");

    // The second identical call is a cache hit: no backend dispatch.
    let replay = gateway.complete(&endpoint, &exchange)?;
    assert_eq!(replay, completion);
    println!(
        "\nbackend calls after two identical requests: {}",
        gateway.backend_calls("checker")
    );
    Ok(())
}
