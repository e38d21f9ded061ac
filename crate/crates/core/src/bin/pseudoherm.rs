use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pseudoherm::cli_report::{
    parse_dim_pair, parse_params, run, write_report, Command, ModelSpec, RunConfig,
};
use pseudoherm::lie_models::Family;
use pseudoherm::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "pseudoherm", version, about = "Curvature invariants of pseudo-Hermitian models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Rigidity constants of the model families against their closed forms.
    Table(Args),
    /// Invariant report for each requested model.
    Model(Args),
    /// Identity suites; exits 1 if any check fails.
    Verify(Args),
}

#[derive(clap::Args, Debug)]
struct Args {
    /// Model family, optionally with parameters (`su_pq:2,1`). Repeatable.
    #[arg(long = "family")]
    families: Vec<String>,
    /// Parameters for the family at the same position (`2,1`). Repeatable.
    #[arg(long = "params")]
    params: Vec<String>,
    /// Base seed. Repeatable.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Consecutive seeds drawn from each base seed.
    #[arg(long)]
    trials: Option<u64>,
    /// Curvature samples per model.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Judge negative controls as identities (verification must then fail).
    #[arg(long)]
    negative_control: bool,
    /// Source/target half-dimensions for the map suites (`2,3`). Repeatable.
    #[arg(long = "dim-pairs")]
    dim_pairs: Vec<String>,
}

fn build_config(command: Command, a: Args) -> Result<RunConfig> {
    let mut c = RunConfig::new(command);
    if a.params.len() > a.families.len() {
        return Err(Error::Config("more --params than --family entries".into()));
    }
    for (i, f) in a.families.iter().enumerate() {
        let spec = match a.params.get(i) {
            Some(p) if !f.contains(':') => ModelSpec::new(Family::parse(f)?, parse_params(p)?),
            Some(_) => return Err(Error::Config(format!("'{f}' already carries parameters"))),
            None => ModelSpec::parse(f)?,
        };
        c.models.push(spec);
    }
    let bases = if a.seeds.is_empty() { vec![0] } else { a.seeds };
    c.seeds = match a.trials {
        Some(0) => return Err(Error::Config("--trials must be at least 1".into())),
        Some(n) => {
            let mut s: Vec<u64> = bases.iter().flat_map(|&b| (0..n).map(move |k| b.wrapping_add(k))).collect();
            s.sort_unstable();
            s.dedup();
            s
        }
        None if command == Command::Verify => bases.iter().flat_map(|&b| (0..5).map(move |k| b.wrapping_add(k))).collect(),
        None => bases,
    };
    c.samples = a.samples;
    c.tolerance = a.tol;
    c.output_path = a.out;
    c.negative_control = a.negative_control;
    if !a.dim_pairs.is_empty() {
        c.dim_pairs = a.dim_pairs.iter().map(|s| parse_dim_pair(s)).collect::<Result<_>>()?;
    }
    c.validate()?;
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Table(a) => (Command::Table, a),
        Cmd::Model(a) => (Command::Model, a),
        Cmd::Verify(a) => (Command::Verify, a),
    };
    let outcome = build_config(command, args).and_then(|c| {
        let doc = run(&c)?;
        write_report(&doc, c.output_path.as_deref())?;
        Ok(doc.exit_code())
    });
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("pseudoherm: {e}");
            ExitCode::from(2)
        }
    }
}
