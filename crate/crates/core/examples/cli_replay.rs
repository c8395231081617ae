//! Drive the command-line layer in-process: run a simulation, then replay it
//! from its own JSON output and compare.

use jkiv::cli;

fn main() -> jkiv::Result<()> {
    let out = std::env::temp_dir().join("jkiv-replay.json");
    let out_str = out.to_str().expect("utf-8 temp path");
    let args = ["jkiv", "simulate", "--reps", "20", "--draws", "200", "--seed", "3", "--output", out_str];
    let cfg = cli::parse_args(args).map_err(|e| jkiv::Error::Config(format!("{e:?}")))?;
    let first = cli::execute(&cfg)?;
    cli::emit(&cfg, &first)?;

    let replay = cli::parse_args(["jkiv", "simulate", "--config", out_str])
        .map_err(|e| jkiv::Error::Config(format!("{e:?}")))?;
    let second = cli::execute(&replay)?;
    println!("replay identical: {}", first.json == second.json);
    Ok(())
}
