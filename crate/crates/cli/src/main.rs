use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use symsde::eval::Method;
use symsde::simulate::{EnvOverrides, Scheme};
use symsde::{Error, Result};
use symsde_cli::{
    cmd_evaluate, cmd_fit, cmd_generate_data, cmd_report, cmd_sample, exit_code, write_atomic, RunConfig, Scale,
};

#[derive(Parser)]
#[command(name = "symsde", version, about = "Symbolic discovery of stochastic differential equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate optimization, validation and test splits of an environment.
    GenerateData {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[command(flatten)]
        overrides: EnvArgs,
        /// euler-maruyama or heun-stratonovich.
        #[arg(long, default_value = "euler-maruyama", value_parser = parse_scheme)]
        scheme: Scheme,
        /// Also write CSV copies of the splits.
        #[arg(long)]
        csv: bool,
    },
    /// Fit a model for every seed of a run.
    Fit(FitArgs),
    /// Re-score the saved models of a run on their test splits.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
    },
    /// Simulate a saved model and the ground truth from a test initial state.
    Sample {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        paths: usize,
    },
    /// Merge report.json files into one CSV with per-method means.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Allow several environments in one table.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args, Default)]
struct EnvArgs {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    trajectories: Option<usize>,
    /// Model parameter override, e.g. `--param sigma=0.3`.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
}

impl EnvArgs {
    fn apply(self, o: &mut EnvOverrides) {
        o.tau = self.tau.or(o.tau);
        o.horizon = self.horizon.or(o.horizon);
        o.dt = self.dt.or(o.dt);
        o.trajectories = self.trajectories.or(o.trajectories);
        o.params.extend(self.params);
    }
}

#[derive(Args)]
struct FitArgs {
    /// TOML run configuration; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// gp-sde, gp-sde-ms, gp-ode, gp-ode-ms or km-sr.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    seeds: Option<usize>,
    /// paper or desk.
    #[arg(long, value_parser = parse_scale)]
    scale: Option<Scale>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory written by generate-data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    no_checkpoint: bool,
    #[command(flatten)]
    overrides: EnvArgs,
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    Scheme::parse(s).ok_or_else(|| format!("unknown scheme `{s}`"))
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method `{s}`"))
}

fn parse_scale(s: &str) -> std::result::Result<Scale, String> {
    Scale::parse(s).ok_or_else(|| format!("unknown scale `{s}`"))
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    Ok((k.trim().to_string(), v.trim().parse().map_err(|e| format!("{e}"))?))
}

fn fit_config(a: FitArgs) -> Result<RunConfig> {
    let mut cfg = match (&a.config, &a.env, a.method) {
        (Some(path), _, _) => RunConfig::load(path)?,
        (None, Some(env), Some(method)) => RunConfig::new(env, method),
        _ => return Err(Error::Config("fit needs --config or both --env and --method".into())),
    };
    if let Some(env) = a.env {
        cfg.environment = env;
    }
    if let Some(m) = a.method {
        cfg.method = m;
    }
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.seeds = a.seeds.or(cfg.seeds);
    cfg.scale = a.scale.unwrap_or(cfg.scale);
    cfg.output = a.out.unwrap_or(cfg.output);
    cfg.data = a.data.or(cfg.data);
    cfg.threads = a.threads.unwrap_or(cfg.threads);
    cfg.checkpoint &= !a.no_checkpoint;
    a.overrides.apply(&mut cfg.env);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { env, seed, out, overrides, scheme, csv } => {
            let mut o = EnvOverrides::default();
            overrides.apply(&mut o);
            let m = cmd_generate_data(&env, &o, seed, scheme, &out, csv)?;
            println!("wrote {} splits of {} (τ={}, K={}) to {}", m.files.len(), m.environment, m.tau, m.observations, out.display());
        }
        Command::Fit(args) => {
            let cfg = fit_config(args)?;
            for o in cmd_fit(&cfg)? {
                println!("{}", o.report.csv_row());
            }
        }
        Command::Evaluate { run } => {
            for r in cmd_evaluate(&run)? {
                println!("{}", r.csv_row());
            }
        }
        Command::Sample { run, seed, paths } => {
            let s = cmd_sample(&run, seed, paths)?;
            println!(
                "model: {} paths, {} diverged{}; truth: {} paths, {} diverged",
                s.model.paths,
                s.model.diverged,
                if s.model.flagged { " (flagged)" } else { "" },
                s.truth.paths,
                s.truth.diverged
            );
        }
        Command::Report { inputs, out, force } => {
            let csv = cmd_report(&inputs, force)?;
            match out {
                Some(path) => write_atomic(&path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
