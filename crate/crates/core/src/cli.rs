//! Command-line front end. Exit codes: 0 success, 1 configuration error,
//! 2 embedding provider failure, 3 data error.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::pipeline::{
    cmd_embed, cmd_evaluate, cmd_minimize, cmd_pipeline, ConfigOverrides, JobConfig, OneOrMany,
    PipelineError, Summary,
};

#[derive(Debug, Parser)]
#[command(
    name = "tsmin",
    version,
    about = "Similarity-based black-box test suite minimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed every test method and store the vectors.
    Embed(Flags),
    /// Build similarity matrices and search every (version, budget, run) cell.
    Minimize(Flags),
    /// Aggregate run records into report.json and report.csv.
    Evaluate(Flags),
    /// embed, minimize and evaluate in one go.
    Pipeline(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// TOML file with key = value settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSONL corpus, one test method per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// hashing | file:PATH | remote:MODEL[@URL]
    #[arg(long)]
    provider: Option<String>,
    /// Similarity measures, comma separated: cos, euc.
    #[arg(long, value_delimiter = ',')]
    measure: Vec<String>,
    /// Budgets as fractions of the suite size, comma separated.
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<f64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; run r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: logical cores). Never changes results.
    #[arg(long)]
    workers: Option<usize>,
    /// GA population size.
    #[arg(long)]
    pop: Option<usize>,
    /// GA per-gene mutation rate.
    #[arg(long = "mut")]
    mutation: Option<f64>,
    /// GA crossover rate.
    #[arg(long)]
    cross: Option<f64>,
    /// GA convergence threshold on best fitness.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "min-gen")]
    min_gen: Option<usize>,
    #[arg(long = "max-gen")]
    max_gen: Option<usize>,
    /// Also run the random-selection baseline.
    #[arg(long)]
    baseline: bool,
    /// Report over whatever cells exist instead of failing on gaps.
    #[arg(long)]
    partial: bool,
}

impl Flags {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            corpus: self.corpus.clone(),
            provider: self.provider.clone(),
            measure: (!self.measure.is_empty()).then(|| OneOrMany::Many(self.measure.clone())),
            budgets: (!self.budgets.is_empty()).then(|| self.budgets.clone()),
            runs: self.runs,
            seed: self.seed,
            out: self.out.clone(),
            workers: self.workers,
            pop: self.pop,
            mutation: self.mutation,
            cross: self.cross,
            eps: self.eps,
            min_gen: self.min_gen,
            max_gen: self.max_gen,
            baseline: self.baseline.then_some(true),
            partial: self.partial.then_some(true),
        }
    }
}

fn print_summary(command: &str, s: &Summary) {
    println!("{command}: config {}", s.config_hash);
    println!("  versions: {}", s.versions);
    if s.records > 0 {
        println!("  run records: {}", s.records);
    }
    if let Some(report) = &s.report {
        for g in &report.groups {
            println!(
                "  {}@{}: FDR mean {:.2}, MT mean {:.4} min, generations mean {:.1}",
                g.config, g.budget, g.stats.fdr.mean, g.stats.mt_minutes.mean, g.mean_generations
            );
        }
        for f in &report.fisher {
            println!(
                "  fisher {} vs {} @{}: p = {:.4}{}",
                f.config_a,
                f.config_b,
                f.budget,
                f.p_value,
                if f.degenerate {
                    " (degenerate table)"
                } else {
                    ""
                }
            );
        }
    }
}

type Handler = fn(JobConfig) -> Result<Summary, PipelineError>;

fn dispatch(command: Command) -> Result<(), PipelineError> {
    let (name, flags, f): (&str, Flags, Handler) = match command {
        Command::Embed(fl) => ("embed", fl, cmd_embed),
        Command::Minimize(fl) => ("minimize", fl, cmd_minimize),
        Command::Evaluate(fl) => ("evaluate", fl, cmd_evaluate),
        Command::Pipeline(fl) => ("pipeline", fl, cmd_pipeline),
    };
    let config = JobConfig::load(flags.config.as_deref(), flags.overrides())?;
    let summary = f(config)?;
    print_summary(name, &summary);
    Ok(())
}

pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tsmin: error[{}]: {e}", e.id());
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_map_to_overrides() {
        let cli = Cli::try_parse_from([
            "tsmin",
            "pipeline",
            "--corpus",
            "c.jsonl",
            "--measure",
            "cos,euc",
            "--budgets",
            "0.25,0.5",
            "--mut",
            "0.02",
            "--max-gen",
            "40",
            "--baseline",
        ])
        .unwrap();
        let Command::Pipeline(flags) = cli.command else {
            panic!()
        };
        let o = flags.overrides();
        assert_eq!(
            o.measure,
            Some(OneOrMany::Many(vec!["cos".into(), "euc".into()]))
        );
        assert_eq!(o.budgets, Some(vec![0.25, 0.5]));
        assert_eq!(o.mutation, Some(0.02));
        assert_eq!(o.max_gen, Some(40));
        assert_eq!(o.baseline, Some(true));
        assert_eq!(o.partial, None);
        assert_eq!(o.runs, None);
    }
}
