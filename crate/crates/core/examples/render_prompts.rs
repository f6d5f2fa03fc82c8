//! Render the generation and merge-revision prompts for one task.
//!
//! ```bash
//! cargo run -p sqlconsensus --example render_prompts
//! ```

use std::time::Duration;

use sqlconsensus::executor::{normalize_rows, Cell, ErrorKind, ExecutionOutcome};
use sqlconsensus::prompts::{
    render_generation_prompt, render_merge_prompt, truncate_exec_result, GenerationPromptInput, MergePromptInput, TruncationLimits,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = GenerationPromptInput::new(
        "CREATE TABLE movies (id INTEGER PRIMARY KEY, title TEXT, year INTEGER);",
        Some("recent means year >= 2020".into()),
        "How many recent movies are there?",
    )?;
    println!("==== generation ====\n{}\n", render_generation_prompt(&base));

    // execution results are shown truncated inside the merge prompt
    let limits = TruncationLimits::new(3, 200)?;
    let rows = (0..10).map(|i| vec![Cell::Int(i)]).collect();
    let exec_a = ExecutionOutcome::success(normalize_rows(rows)?, Duration::ZERO);
    let exec_b = ExecutionOutcome::error(ErrorKind::MissingObject, "no such column: yr", Duration::ZERO);
    let merge = MergePromptInput::new(
        base,
        "SELECT id FROM movies WHERE year >= 2020",
        truncate_exec_result(&exec_a, &limits),
        "SELECT COUNT(*) FROM movies WHERE yr >= 2020",
        truncate_exec_result(&exec_b, &limits),
    )?;
    println!("==== merge revision ====\n{}", render_merge_prompt(&merge));
    Ok(())
}
