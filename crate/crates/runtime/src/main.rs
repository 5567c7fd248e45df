use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use slmrank_runtime::cli::{self, Output};

#[derive(Parser)]
#[command(name = "slmrank", about = "Relevance scoring with small language models: training, compression, serving and benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    GenCorpus(Common),
    Train(Common),
    Eval(Common),
    Prune(Common),
    SummarizeEval(Common),
    Serve(Common),
    Bench(Common),
    MaxRps(Common),
    Compare(Common),
}

fn load<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn emit(out: Output, path: &Option<PathBuf>) -> Result<()> {
    print!("{}", out.text);
    if let Some(p) = path {
        write_json(p, &out.json)?;
    }
    Ok(())
}

fn write_json(p: &Path, v: &serde_json::Value) -> Result<()> {
    std::fs::write(p, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", p.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::GenCorpus(c) => emit(cli::gen_corpus(&load(&c.config)?, c.seed)?, &c.out),
        Cmd::Train(c) => emit(cli::train(&load(&c.config)?, c.seed)?, &c.out),
        Cmd::Eval(c) => emit(cli::eval(&load(&c.config)?, c.seed)?, &c.out),
        Cmd::Prune(c) => emit(cli::prune(&load(&c.config)?, c.seed)?, &c.out),
        Cmd::SummarizeEval(c) => emit(cli::summarize_eval(&load(&c.config)?, c.seed)?, &c.out),
        Cmd::Serve(c) => cli::serve(&load(&c.config)?),
        Cmd::Bench(c) => emit(cli::bench(&load(&c.config)?, c.seed)?, &c.out),
        Cmd::MaxRps(c) => emit(cli::max_rps(&load(&c.config)?, c.seed)?, &c.out),
        Cmd::Compare(c) => emit(cli::compare(&load(&c.config)?, c.seed)?, &c.out),
    }
}
