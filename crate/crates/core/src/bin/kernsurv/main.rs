mod args;
mod commands;
mod cv;

use anyhow::Context;
use clap::Parser;

use args::{Cli, Command};
use commands::Run;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let common = cli.command.common().clone();
    if common.jobs == 0 {
        anyhow::bail!("--jobs must be at least 1");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs)
        .build()
        .context("starting worker threads")?;
    let mut run = Run::new(&common.out)?;
    let start = std::time::Instant::now();
    pool.install(|| match &cli.command {
        Command::Fit(a) => commands::fit(a, &mut run),
        Command::Predict(a) => commands::predict(a, &mut run),
        Command::Calibrate(a) => commands::calibrate_cmd(a, &mut run),
        Command::Intervals(a) => commands::intervals(a, &mut run),
        Command::Evaluate(a) => commands::evaluate(a, &mut run),
        Command::Synth(a) => commands::synth(a, &mut run),
    })?;
    log::info!("{} finished in {:.2}s", cli.command.name(), start.elapsed().as_secs_f64());
    run.finish(&cli.command, &argv)
}
