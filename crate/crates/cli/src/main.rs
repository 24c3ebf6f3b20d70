use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use cgsc_cli::commands::{cmd_eval, cmd_norm_check, cmd_solve, cmd_synth};
use cgsc_cli::Config;
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

/// Flags that map directly onto config keys.
const KEY_FLAGS: [(&str, &str); 6] = [
    ("out", "out"),
    ("seed", "seed"),
    ("lambda", "lambda"),
    ("max-iters", "max_iters"),
    ("rel-tol", "rel_tol"),
    ("groups", "groups"),
];

fn cli() -> Command {
    let common = [
        Arg::new("config")
            .long("config")
            .value_name("PATH")
            .value_parser(value_parser!(PathBuf))
            .help("flat key = value config file"),
        Arg::new("out").long("out").value_name("DIR").action(ArgAction::Append),
        Arg::new("seed").long("seed").value_name("U64").action(ArgAction::Append),
        Arg::new("lambda").long("lambda").value_name("F64").action(ArgAction::Append),
        Arg::new("max-iters").long("max-iters").value_name("N").action(ArgAction::Append),
        Arg::new("rel-tol").long("rel-tol").value_name("F64").action(ArgAction::Append),
        Arg::new("groups")
            .long("groups")
            .value_name("SPEC")
            .help("singleton | across-k | tiles:H,W | file:PATH")
            .action(ArgAction::Append),
        Arg::new("set")
            .long("set")
            .value_name("KEY=VALUE")
            .help("override any config key")
            .action(ArgAction::Append),
    ];
    Command::new("cgsc")
        .about("Convolutional group-sparse coding")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(Command::new("synth").about("generate a synthetic scene").args(common.clone()))
        .subcommand(Command::new("solve").about("run the APG solver").args(common.clone()))
        .subcommand(Command::new("eval").about("score a reconstruction").args(common.clone()))
        .subcommand(Command::new("norm-check").about("estimate the operator norm").args(common))
}

/// Builds the config: file first, then flags in command-line order.
fn build_config(m: &ArgMatches) -> Result<Config> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(p) => Config::load(p)?,
        None => Config::new(),
    };
    let mut overrides: Vec<(usize, String)> = Vec::new();
    for (flag, key) in KEY_FLAGS {
        if let (Some(vals), Some(idx)) = (m.get_many::<String>(flag), m.indices_of(flag)) {
            overrides.extend(idx.zip(vals).map(|(i, v)| (i, format!("{key}={v}"))));
        }
    }
    if let (Some(vals), Some(idx)) = (m.get_many::<String>("set"), m.indices_of("set")) {
        overrides.extend(idx.zip(vals).map(|(i, v)| (i, v.clone())));
    }
    overrides.sort_by_key(|(i, _)| *i);
    for (_, o) in overrides {
        cfg.apply_override(&o)?;
    }
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("CGSC_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().with_context(|| format!("CGSC_THREADS={v:?} is not a count"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run() -> Result<()> {
    let matches = cli().get_matches();
    init_threads()?;
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cfg = build_config(sub)?;
    match name {
        "synth" => {
            let r = cmd_synth(&cfg)?;
            println!("seed={}", r.seed);
            println!("sources={}", r.n_sources);
            println!("out={}", r.out.display());
        }
        "solve" => {
            let r = cmd_solve(&cfg)?;
            println!("iterations={}", r.iterations);
            println!("converged={}", r.converged);
            println!("objective={}", r.objective);
            println!("out={}", r.out.display());
        }
        "eval" => {
            let r = cmd_eval(&cfg)?;
            println!("rel_l2={} support_iou={} f1={}", r.rel_l2, r.support_iou, r.f1);
        }
        "norm-check" => {
            let r = cmd_norm_check(&cfg)?;
            println!("seed={}", cfg.get_or::<u64>("seed", 0)?);
            println!("raw_estimate={}", r.raw_estimate);
            println!("normalized_estimate={}", r.normalized_estimate);
            println!("norm_target={}", r.norm_target);
            println!("within_bound={}", r.normalized_estimate <= 1.0 + 1e-6);
        }
        _ => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cgsc: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
