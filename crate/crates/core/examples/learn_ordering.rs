//! Learns a prompt component ordering from pairwise swaps against a loss
//! callback.
//!
//! cargo run --example learn_ordering

use camp::prompt::ComponentKind;
use camp::train::train_ordering;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // toy loss: the new message should come last, retrieved code right before it
    let target = [
        ComponentKind::SystemPrompt,
        ComponentKind::ContextSystemPrompt,
        ComponentKind::MessageHistory,
        ComponentKind::RetrievedContent,
        ComponentKind::NewMessage,
    ];
    let mut calls = 0;
    let loss = |order: &[ComponentKind]| {
        calls += 1;
        order
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let want = target.iter().position(|t| t == k).unwrap();
                (i as f64 - want as f64).abs() * (want + 1) as f64
            })
            .sum::<f64>()
    };

    let out = train_ordering(&ComponentKind::ALL, loss, 1e-3, ComponentKind::ALL.len())?;
    println!("default  {:?}", ComponentKind::ALL);
    println!("learned  {:?}", out.order);
    println!("baseline loss {}, {} swaps, {} loss calls", out.baseline_loss, out.swap_evaluations, calls);
    for (a, b) in &out.edges {
        println!("  {} before {}", a.as_str(), b.as_str());
    }
    Ok(())
}
