//! Correlating automated metric decisions with human preference
//! decisions over caption pairs: winners encode as +1/-1, metric
//! decisions as the sign of score_A - score_B, Spearman ties it together.
//!
//! ```bash
//! cargo run -p capmas --example human_correlation
//! ```

use std::collections::BTreeMap;

use capmas::gateway::Gateway;
use capmas::harness::{
    run_human_correlation, Harness, HumanPreferencePair, PreferencePair, Winner,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Direct use: one metric's scores over labeled pairs.
    let pairs = vec![
        PreferencePair {
            human_winner: Winner::A,
            score_a: 0.91,
            score_b: 0.40,
        },
        PreferencePair {
            human_winner: Winner::B,
            score_a: 0.35,
            score_b: 0.77,
        },
        PreferencePair {
            human_winner: Winner::A,
            score_a: 0.66,
            score_b: 0.52,
        },
        PreferencePair {
            human_winner: Winner::B,
            score_a: 0.28,
            score_b: 0.73,
        },
    ];
    println!(
        "well-aligned metric:  rho = {:.3}",
        run_human_correlation(&pairs)?
    );

    let inverted: Vec<PreferencePair> = pairs
        .iter()
        .map(|p| PreferencePair {
            human_winner: p.human_winner,
            score_a: p.score_b,
            score_b: p.score_a,
        })
        .collect();
    println!(
        "inverted metric:      rho = {:.3}",
        run_human_correlation(&inverted)?
    );

    // File-shaped use: several metrics per pair, one report.
    let file_pairs: Vec<HumanPreferencePair> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| HumanPreferencePair {
            pair_id: format!("pair-{i}"),
            human_winner: p.human_winner,
            scores: BTreeMap::from([
                ("aligned".to_string(), [p.score_a, p.score_b]),
                ("inverted".to_string(), [p.score_b, p.score_a]),
                // a metric that cannot tell the captions apart
                ("indifferent".to_string(), [0.5, 0.5]),
            ]),
        })
        .collect();

    let gateway = Gateway::in_memory();
    let harness = Harness::new(&gateway);
    match harness.run_human_correlation_report(&file_pairs) {
        Ok(report) => {
            println!("\nper-method correlation report:");
            for (key, value) in &report.aggregates {
                println!("  {key}: {value:.3}");
            }
            for warning in &report.warnings {
                println!("  warning: {warning}");
            }
        }
        Err(e) => {
            // the indifferent metric has zero rank variance
            println!("\nreport failed as expected: {e}");
        }
    }
    Ok(())
}
