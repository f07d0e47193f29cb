use std::path::PathBuf;

use serde::Serialize;

use bridgestain::schedule::BridgeSchedule;
use bridgestain::Result;

use crate::common;
use crate::csvout;

#[derive(clap::Args)]
pub struct Args {
    /// Schedule length T.
    #[arg(long, default_value_t = 600)]
    steps: usize,
    /// Destination CSV.
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Serialize)]
struct ResolvedConfig {
    steps: usize,
}

pub fn run(args: Args) -> Result<()> {
    let schedule = BridgeSchedule::new(args.steps)?;
    let rows: Vec<Vec<String>> = (0..=args.steps)
        .map(|t| {
            vec![
                t.to_string(),
                csvout::num(schedule.m[t]),
                csvout::num(schedule.delta[t]),
                csvout::num(schedule.delta_step[t]),
                csvout::num(schedule.delta_tilde[t]),
                csvout::num(schedule.c_x[t]),
                csvout::num(schedule.c_y[t]),
                csvout::num(schedule.c_eps[t]),
            ]
        })
        .collect();
    csvout::write(
        &args.csv,
        &["t", "m", "delta", "delta_step", "delta_tilde", "c_x", "c_y", "c_eps"],
        &rows,
    )?;
    common::write_json(
        &args.csv.with_extension("config.json"),
        &ResolvedConfig { steps: args.steps },
    )?;
    println!("wrote {} schedule rows -> {}", args.steps + 1, args.csv.display());
    Ok(())
}
