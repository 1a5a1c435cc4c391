//! Fits the heuristic matrix and context weights on a planted problem with
//! proximal gradient descent and reports convergence.
//!
//! cargo run --release --example train_retriever

use camp::train::{nuclear_norm, planted_problem, top1_accuracy, train_on_problem, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let planted = planted_problem(0, 8, 50, 200);
    let config = TrainConfig::default();
    let out = train_on_problem(&planted.problem, &config)?;

    for rec in out.loss_history.iter().step_by(10) {
        println!("iter {:>3}  loss {:.4}  objective {:.4}", rec.iteration, rec.loss, rec.objective);
    }
    println!(
        "loss {:.3} -> {:.3}, top-1 {:.1}%, |H|_* {:.2} (planted {:.2})",
        out.initial_loss(),
        out.final_loss(),
        100.0 * top1_accuracy(&planted.problem, &out.h, &out.eta),
        nuclear_norm(&out.h),
        nuclear_norm(&planted.h_star)
    );
    println!("context weights {:?}", out.eta.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>());
    Ok(())
}
