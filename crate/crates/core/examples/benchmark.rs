//! Seeded synthetic benchmark: hybrid vs logistic regression on 2,000 firms.
//!
//! `cargo run --release -p taxrisk-core --example benchmark [n_firms] [seed]`

use std::time::Instant;

use taxrisk_core::config::RunConfig;
use taxrisk_core::data::generate_synthetic;
use taxrisk_core::metrics::format_table;
use taxrisk_core::workflow::{compare, train_hybrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let mut config = RunConfig::default();
    if let Some(seed) = args.next() {
        config.seed = seed.parse()?;
    }
    config.synthetic.n_enterprises = n;

    let start = Instant::now();
    let records = generate_synthetic(&config.synthetic, config.seed)?;
    let run = train_hybrid(&records, &config)?;
    let comparison = compare(&run)?;
    let rows: Vec<(&str, _)> = comparison.rows.iter().map(|r| (r.model.as_str(), &r.test)).collect();
    print!("{}", format_table(&rows));
    println!("epochs run: {}, best epoch: {}", run.summary.epochs_run, run.summary.best_epoch);
    println!("plateau: {:?}", run.summary.plateau);
    println!("threshold: {:?}", run.summary.anomaly_threshold);
    println!("flag rates: {:?}", comparison.rows[0].test.anomaly_flag_rate);
    println!("hybrid confusion: {:?}", comparison.rows[0].test.confusion);
    println!("baseline confusion: {:?}", comparison.rows[1].test.confusion);
    println!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
