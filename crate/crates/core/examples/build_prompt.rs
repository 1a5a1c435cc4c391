//! Assembles prompt components under a token budget and serializes them in
//! both dialects.
//!
//! cargo run --example build_prompt

use camp::prompt::{construct, parse_flat_text, serialize, ComponentKind, ComponentOrder, Dialect, Priority, PromptComponent, PromptPayload, Tokenizer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tok = Tokenizer::default();
    let retrieved = "def invoice_totals(rows):\n    return sum(r.amount for r in rows)\n".repeat(20);
    let components = vec![
        PromptComponent::new(ComponentKind::SystemPrompt, "You complete Python code.", &tok),
        PromptComponent::new(ComponentKind::ContextSystemPrompt, "Cursor is in billing.py inside draft().", &tok),
        PromptComponent::new(ComponentKind::RetrievedContent, retrieved, &tok),
        PromptComponent::history(vec!["earlier: rename draft".into(), "earlier: keep it pure".into()], &tok).with_priority(Priority::Low),
        PromptComponent::new(ComponentKind::NewMessage, "Add tax to the invoice totals.", &tok),
    ];
    let order = ComponentOrder::default();

    for budget in [2048, 120, 40] {
        let plan = construct(components.clone(), &order, budget, &tok)?;
        println!("budget {budget}: {} tokens, kinds {:?}", plan.total_tokens, plan.kinds());
        for t in &plan.truncations {
            println!("  {} {} -> {}", t.kind.as_str(), t.from_tokens, t.to_tokens);
        }
    }

    let plan = construct(components, &order, 120, &tok)?;
    if let PromptPayload::Chat(messages) = serialize(&plan, Dialect::ChatMessages) {
        for m in &messages {
            println!("[{}] {} chars", m.role, m.content.len());
        }
    }
    if let PromptPayload::Flat(text) = serialize(&plan, Dialect::FlatText) {
        let parsed = parse_flat_text(&text)?;
        println!("flat text round-trips {} components", parsed.len());
    }
    Ok(())
}
