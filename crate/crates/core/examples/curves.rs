//! pass@k and consistency@k curves from per-sample correctness.
//!
//! ```bash
//! cargo run -p sqlconsensus --example curves
//! ```

use sqlconsensus::eval::curves::{curve, default_ks, pass_at_k_single, TaskSamples};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // result keys per sample; None is a failed execution
    let tasks = vec![
        TaskSamples {
            samples: vec![Some(1), Some(1), Some(2), None, Some(1), Some(1), Some(2), Some(1)],
            gold: Some(1),
        },
        TaskSamples {
            samples: vec![Some(3), Some(4), Some(4), Some(4), None, Some(4), Some(3), Some(4)],
            gold: Some(3),
        },
        TaskSamples {
            samples: vec![None, None, Some(5), None, None, None, None, None],
            gold: Some(5),
        },
    ];
    println!("pass@2 with n=4, c=2: {}", pass_at_k_single(4, 2, 2)?);
    println!("\n{:>3} {:>9} {:>14}", "k", "pass@k", "consistency@k");
    for p in curve(&tasks, &default_ks(8), 10_000, 7)? {
        println!("{:>3} {:>9.4} {:>14.4}", p.k, p.pass_at_k, p.consistency_at_k);
    }
    Ok(())
}
