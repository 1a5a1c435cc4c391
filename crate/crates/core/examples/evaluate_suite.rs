//! Generates a synthetic benchmark, runs all four model configurations
//! against the mock oracle and prints the Pass@K table.
//!
//! cargo run --release --example evaluate_suite

use camp::eval::{generate_suite, run_suite, EvalOptions, SuiteSpec};
use camp::llm::MockBackend;
use camp::params::LearnedParams;
use camp::pipeline::ModelConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let suite = generate_suite(
        dir.path(),
        &SuiteSpec {
            tasks_per_level: 10,
            ..SuiteSpec::default()
        },
    )?;
    println!("{} tasks written to {}", suite.cases.len(), dir.path().display());

    let backend = MockBackend::from_file(&suite.rules)?;
    let opts = EvalOptions::default();
    let params = LearnedParams::initial(opts.index.d_emb, 1.0);
    let report = run_suite(&ModelConfig::ALL, &suite.cases, &backend, &params, &opts)?;
    print!("{}", report.to_table());
    Ok(())
}
