//! Drives the deterministic mock backend: samples contain the task's needle
//! when the prompt does, and otherwise succeed at the base rate.
//!
//! cargo run --example mock_llm

use camp::llm::{GenerationRequest, Generator, MockBackend, MockRules};
use camp::prompt::PromptPayload;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rules = MockRules {
        needles: [("t1".to_string(), "invoice_totals".to_string())].into(),
        base_rate: 0.2,
        seed: 3,
        ..MockRules::default()
    };
    let backend = MockBackend::new(rules)?;

    for prompt in ["write the tax helper", "def invoice_totals(rows): ...\nwrite the tax helper"] {
        let mut req = GenerationRequest::new(PromptPayload::Flat(prompt.into()), 10);
        req.task_id = Some("t1".into());
        let out = backend.generate(&req)?;
        let hits = out.samples.iter().filter(|s| s.contains("invoice_totals")).count();
        println!("{:<60?} -> {hits}/10 samples call the needle ({})", prompt, out.backend_id);
    }
    Ok(())
}
