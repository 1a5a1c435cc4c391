//! Ranks document units for a request at the cursor, fusing the input code,
//! the user query and the environment context.
//!
//! cargo run --example retrieve

use std::collections::BTreeMap;

use camp::context::{context_vector, Cursor, EnvironmentState};
use camp::index::{build_from_sources, IndexConfig};
use camp::params::LearnedParams;
use camp::pipeline::{preceding_lines, INPUT_WINDOW};
use camp::retrieval::{retrieve_with, RetrievalOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sources = BTreeMap::from([
        (
            "billing.py".to_string(),
            "def invoice_totals(rows):\n    return sum(r.amount for r in rows)\n\ndef invoice_tax(rows, rate):\n    return invoice_totals(rows) * rate\n\ndef draft(rows):\n    pass\n".to_string(),
        ),
        (
            "shipping.py".to_string(),
            "def route_weights(stops):\n    return [s.weight for s in stops]\n\ndef route_limits(stops):\n    return max(route_weights(stops))\n".to_string(),
        ),
    ]);
    let snap = build_from_sources(&IndexConfig::default(), sources)?;
    let mut env = EnvironmentState::new("/virtual/repo");
    env.cursor = Some(Cursor {
        file: "billing.py".into(),
        line: 8,
        col: 4,
    });

    let params = LearnedParams::initial(snap.d_emb(), 1.0);
    let (ctx, _diags) = context_vector(&env, &snap, &params.eta, 4);
    let ctx = ctx.ok();
    let input = preceding_lines(&snap, &env, INPUT_WINDOW).unwrap_or_default();
    let result = retrieve_with(&snap, ctx.as_ref(), &input, Some("add tax to the invoice totals"), &params.h, 3, &RetrievalOptions::default())?;

    println!("{} candidates (cursor unit excluded)", result.candidates);
    for item in &result.items {
        let unit = snap.unit(&item.unit).expect("retrieved unit exists");
        println!("  p={:.3} score={:+.3} {} {}", item.probability, item.score, unit.file, unit.name);
    }
    Ok(())
}
