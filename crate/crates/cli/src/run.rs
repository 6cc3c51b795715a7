//! The five commands: generate-data, fit, evaluate, sample and report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use symsde::eval::{
    fmt_num, generative_sample, select_model, selection_score, EvalReport, Method, Model, SampleSettings, SampleStats,
};
use symsde::evolution::{evolve_from, load_checkpoint, start, Individual};
use symsde::expr::{parse, to_infix};
use symsde::fitness::{Objective, OdeMse, OdeMseMultistep, SdeNll, SdeNllMultistep, TransitionData};
use symsde::kmsr::{kmsr_discover, GridRow};
use symsde::numeric::mix_seed;
use symsde::simulate::io::{dataset_to_csv, encode_dataset, read_dataset};
use symsde::simulate::{generate_splits_with, make_environment, Dataset, EnvOverrides, EnvironmentSpec, Scheme, Split};
use symsde::{Error, Result};

use crate::config::{Resolved, RunConfig, VERSION};

/// Process exit code for an error: 2 configuration, 3 numerical, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::UnknownEnvironment(_) | Error::Expr(_) => 2,
        Error::Diverged { .. } | Error::EmptyBinning { .. } | Error::GridTooLarge { .. } | Error::Numerical(_) => 3,
        Error::Io(_) | Error::Format(_) | Error::Json(_) => 4,
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn split_file(split: Split) -> String {
    format!("{}.sdev", split.name())
}

/// Provenance written next to generated datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub environment: String,
    pub parameters: BTreeMap<String, f64>,
    pub tau: f64,
    pub dt: f64,
    pub horizon: f64,
    pub observations: usize,
    pub trajectories: usize,
    pub scheme: Scheme,
    pub master_seed: u64,
    /// Per split: file name, SHA-256 and the seed of every trajectory.
    pub files: Vec<ManifestFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub split: String,
    pub file: String,
    pub sha256: String,
    pub trajectory_seeds: Vec<u64>,
}

/// Simulates the three splits of `env_name` and writes them with a manifest.
pub fn cmd_generate_data(
    env_name: &str,
    overrides: &EnvOverrides,
    seed: u64,
    scheme: Scheme,
    out: &Path,
    csv: bool,
) -> Result<Manifest> {
    let env = make_environment(env_name, overrides)?;
    let splits = generate_splits_with(&env, seed, scheme)?;
    let mut files = Vec::new();
    for ds in &splits {
        let bytes = encode_dataset(ds)?;
        let name = split_file(ds.info.split);
        write_atomic(&out.join(&name), &bytes)?;
        if csv {
            write_atomic(&out.join(format!("{}.csv", ds.info.split.name())), dataset_to_csv(ds).as_bytes())?;
        }
        files.push(ManifestFile {
            split: ds.info.split.name().to_string(),
            file: name,
            sha256: sha256_hex(&bytes),
            trajectory_seeds: ds.trajectories.iter().map(|t| t.seed).collect(),
        });
    }
    let manifest = Manifest {
        version: VERSION.to_string(),
        environment: env.name.clone(),
        parameters: env.parameters.clone(),
        tau: env.tau,
        dt: env.dt,
        horizon: env.horizon,
        observations: env.steps(),
        trajectories: env.trajectories,
        scheme,
        master_seed: seed,
        files,
    };
    write_atomic(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Optimization, validation and test splits of one seed.
pub fn seed_data(res: &Resolved, seed: u64) -> Result<[Dataset; 3]> {
    let Some(root) = &res.config.data else {
        return generate_splits_with(&res.env, seed, res.config.scheme);
    };
    let per_seed = root.join(format!("seed-{seed}"));
    let dir = if per_seed.is_dir() { per_seed } else { root.clone() };
    let read = |s: Split| -> Result<Dataset> {
        let ds = read_dataset(&dir.join(split_file(s)))?;
        if ds.info.environment != res.env.name || ds.info.split != s || ds.info.tau != res.env.tau {
            return Err(Error::Config(format!(
                "{} holds {} / {} / τ={}, expected {} / {} / τ={}",
                dir.display(),
                ds.info.environment,
                ds.info.split.name(),
                ds.info.tau,
                res.env.name,
                s.name(),
                res.env.tau
            )));
        }
        Ok(ds)
    };
    Ok([read(Split::Optimization)?, read(Split::Validation)?, read(Split::Test)?])
}

fn columns(ds: &Dataset) -> Vec<Vec<f64>> {
    ds.feature_columns()
}

fn as_slices(cols: &[Vec<f64>]) -> Vec<&[f64]> {
    cols.iter().map(Vec::as_slice).collect()
}

/// One archived individual in `front.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontMember {
    pub fitness: Option<f64>,
    pub complexity: usize,
    pub validation_score: Option<f64>,
    pub trees: Vec<String>,
}

/// Hall of fame of one evolutionary run and the selected member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontRecord {
    /// `x`, `y`, ... for per-variable runs, `system` for whole-system runs.
    pub target: String,
    pub selected: usize,
    pub members: Vec<FrontMember>,
}

/// Everything produced for one seed.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub model: Model,
    pub report: EvalReport,
    pub fronts: Vec<FrontRecord>,
    pub grid: Vec<(usize, GridRow)>,
}

struct Job<'a> {
    label: String,
    objective: Box<dyn Objective + Send + Sync + 'a>,
}

fn gp_jobs<'a>(res: &Resolved, data: &'a TransitionData) -> Vec<(String, Box<dyn Objective + Send + Sync + 'a>)> {
    let names = res.env.equation_names();
    let l = res.config.multistep;
    match res.config.method {
        Method::GpSde => res
            .env
            .targets
            .iter()
            .map(|&i| (names[i].clone(), Box::new(SdeNll::new(data, i)) as Box<dyn Objective + Send + Sync + 'a>))
            .collect(),
        Method::GpOde => res
            .env
            .targets
            .iter()
            .map(|&i| (names[i].clone(), Box::new(OdeMse::new(data, i)) as Box<dyn Objective + Send + Sync + 'a>))
            .collect(),
        Method::GpSdeMs => vec![("system".into(), Box::new(SdeNllMultistep::new(data, l)))],
        Method::GpOdeMs => vec![("system".into(), Box::new(OdeMseMultistep::new(data, l)))],
        Method::KmSr => Vec::new(),
    }
}

fn front_record(
    label: String,
    hof: &[Individual],
    selected: usize,
    res: &Resolved,
    val: &[&[f64]],
) -> FrontRecord {
    let names = &res.env.feature_names;
    let members = hof
        .iter()
        .map(|ind| {
            let score = selection_score(&Model::from_individual(ind), &res.env, val, res.config.selection);
            FrontMember {
                fitness: ind.fitness.filter(|f| f.is_finite()),
                complexity: ind.complexity(),
                validation_score: score.is_finite().then_some(score),
                trees: ind.trees.iter().map(|t| to_infix(t, names)).collect(),
            }
        })
        .collect();
    FrontRecord { target: label, selected, members }
}

/// Runs the configured method on one seed. With `dir`, checkpoints go there.
pub fn fit_seed(res: &Resolved, seed: u64, dir: Option<&Path>) -> Result<SeedOutcome> {
    let started = Instant::now();
    let [opt, val, test] = seed_data(res, seed)?;
    let val_cols = columns(&val);
    let val_cols = as_slices(&val_cols);
    let mut model = Model::default();
    let mut fronts = Vec::new();
    let mut grid = Vec::new();
    if let Some(km) = &res.km {
        for &i in &res.env.targets {
            let r = kmsr_discover(&opt, &val, (&res.env.drift[i], &res.env.diffusion[i]), i, km)?;
            model.drift.insert(i, r.drift_tree());
            model.diffusion.insert(i, r.diffusion_tree());
            grid.extend(r.table.iter().cloned().map(|row| (i, row)));
        }
    } else {
        let gp = res.gp.as_ref().expect("GP methods resolve a GP config");
        let data = TransitionData::from_dataset(&opt);
        let jobs: Vec<Job> =
            gp_jobs(res, &data).into_iter().map(|(label, objective)| Job { label, objective }).collect();
        let results: Vec<Result<(String, Vec<Individual>)>> = jobs
            .par_iter()
            .enumerate()
            .map(|(k, job)| {
                let gp_seed = mix_seed(mix_seed(seed, 0x6770), k as u64);
                let ckpt =
                    dir.filter(|_| res.config.checkpoint).map(|d| d.join(format!("checkpoint-{}-{}.json", res.hash, job.label)));
                let state = match &ckpt {
                    Some(p) if p.exists() => load_checkpoint(p)?,
                    _ => start(gp, job.objective.as_ref(), gp_seed)?,
                };
                let out = evolve_from(gp, job.objective.as_ref(), state, ckpt.as_deref())?;
                if let Some(p) = &ckpt {
                    let _ = std::fs::remove_file(p);
                }
                Ok((job.label.clone(), out.hall_of_fame()))
            })
            .collect();
        for r in results {
            let (label, hof) = r?;
            let k = select_model(&hof, &res.env, &val_cols, res.config.selection)
                .ok_or_else(|| Error::Numerical("empty Pareto front".into()))?;
            model.absorb(&hof[k]);
            fronts.push(front_record(label, &hof, k, res, &val_cols));
        }
    }
    let test_cols = columns(&test);
    let mut report = EvalReport::build(&model, &res.env, res.config.method, seed, &as_slices(&test_cols));
    report.runtime_s = started.elapsed().as_secs_f64();
    report.config_hash = res.hash.clone();
    report.version = VERSION.to_string();
    Ok(SeedOutcome { seed, model, report, fronts, grid })
}

/// Text of `model.txt`: a comment header, rounded forms as comments, then
/// one exactly re-parseable line per tree.
pub fn model_text(model: &Model, res: &Resolved, seed: u64) -> String {
    let env = &res.env;
    let eq = env.equation_names();
    let mut out = format!(
        "# {VERSION} config {}\n# environment {} method {} seed {seed}\n",
        res.hash,
        env.name,
        res.config.method.tag()
    );
    for line in model.to_text(&eq, &env.feature_names).lines() {
        let _ = writeln!(out, "# {line}");
    }
    for (kind, map) in [("drift", &model.drift), ("diffusion", &model.diffusion)] {
        for (i, t) in map {
            let _ = writeln!(out, "{kind} {} = {}", eq[*i], to_infix(t, &env.feature_names));
        }
    }
    out
}

/// Inverse of [`model_text`] (comment lines are skipped).
pub fn parse_model_text(text: &str, env: &EnvironmentSpec) -> Result<Model> {
    let eq = env.equation_names();
    let mut model = Model::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Format(format!("model line {}: `{line}`", n + 1));
        let (lhs, rhs) = line.split_once('=').ok_or_else(bad)?;
        let mut parts = lhs.split_whitespace();
        let (Some(kind), Some(name), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let i = eq.iter().position(|e| e == name).ok_or_else(bad)?;
        let tree = parse(rhs.trim(), &env.feature_names)?;
        match kind {
            "drift" => model.drift.insert(i, tree),
            "diffusion" => model.diffusion.insert(i, tree),
            _ => return Err(bad()),
        };
    }
    Ok(model)
}

fn seed_dir(res: &Resolved, seed: u64) -> PathBuf {
    res.config.output.join(format!("seed-{seed}"))
}

/// Comment line opening every CSV a run writes.
fn csv_banner(hash: &str) -> String {
    format!("# {VERSION} config {hash}\n")
}

fn grid_csv(rows: &[(usize, GridRow)], res: &Resolved) -> String {
    let names = res.env.equation_names();
    let mut out = csv_banner(&res.hash);
    out.push_str("variable,bins,min_count,alpha,lambda,retained_bins,drift_mse,diffusion_mse,error\n");
    for (i, r) in rows {
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            names[*i],
            r.bins,
            r.min_count,
            r.alpha,
            r.lambda,
            r.retained_bins,
            opt(r.drift_mse),
            opt(r.diffusion_mse),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    out
}

fn report_csv(report: &EvalReport) -> String {
    format!("{}{}\n{}\n", csv_banner(&report.config_hash), EvalReport::CSV_HEADER, report.csv_row())
}

fn write_seed(res: &Resolved, out: &SeedOutcome) -> Result<()> {
    let dir = seed_dir(res, out.seed);
    write_atomic(&dir.join("model.txt"), model_text(&out.model, res, out.seed).as_bytes())?;
    if res.km.is_some() {
        write_atomic(&dir.join("grid.csv"), grid_csv(&out.grid, res).as_bytes())?;
    } else {
        #[derive(Serialize)]
        struct Fronts<'a> {
            version: &'a str,
            config_hash: &'a str,
            fronts: &'a [FrontRecord],
        }
        let f = Fronts { version: VERSION, config_hash: &res.hash, fronts: &out.fronts };
        write_atomic(&dir.join("front.json"), serde_json::to_string_pretty(&f)?.as_bytes())?;
    }
    write_atomic(&dir.join("report.json"), out.report.to_json()?.as_bytes())?;
    write_atomic(&dir.join("report.csv"), report_csv(&out.report).as_bytes())?;
    Ok(())
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Runs every seed of the configuration and writes the per-seed outputs plus
/// the run's `config.toml` under the output directory.
pub fn cmd_fit(cfg: &RunConfig) -> Result<Vec<SeedOutcome>> {
    let res = cfg.resolve()?;
    std::fs::create_dir_all(&res.config.output)?;
    let header = format!("# {VERSION} config {}\n", res.hash);
    write_atomic(&res.config.output.join("config.toml"), (header + &cfg.to_toml()?).as_bytes())?;
    with_threads(cfg.threads, || {
        let mut outcomes = Vec::new();
        for &seed in &res.seeds {
            let dir = seed_dir(&res, seed);
            std::fs::create_dir_all(&dir)?;
            let out = fit_seed(&res, seed, Some(&dir))?;
            write_seed(&res, &out)?;
            outcomes.push(out);
        }
        Ok(outcomes)
    })
}

/// Configuration stored in a run directory, pointed back at that directory.
pub fn load_run(run: &Path) -> Result<Resolved> {
    let mut cfg = RunConfig::load(&run.join("config.toml"))?;
    cfg.output = run.to_path_buf();
    cfg.resolve()
}

fn load_model(res: &Resolved, seed: u64) -> Result<Model> {
    let text = std::fs::read_to_string(seed_dir(res, seed).join("model.txt"))?;
    parse_model_text(&text, &res.env)
}

/// Re-scores every saved model of a run on its test split and rewrites the
/// reports. Runtimes of earlier reports are kept.
pub fn cmd_evaluate(run: &Path) -> Result<Vec<EvalReport>> {
    let res = load_run(run)?;
    let mut reports = Vec::new();
    for &seed in &res.seeds {
        let dir = seed_dir(&res, seed);
        if !dir.join("model.txt").exists() {
            continue;
        }
        let model = load_model(&res, seed)?;
        let [_, _, test] = seed_data(&res, seed)?;
        let cols = columns(&test);
        let mut report = EvalReport::build(&model, &res.env, res.config.method, seed, &as_slices(&cols));
        if let Ok(old) = std::fs::read_to_string(dir.join("report.json")).map_err(Error::from).and_then(|t| EvalReport::from_json(&t)) {
            report.runtime_s = old.runtime_s;
        }
        report.config_hash = res.hash.clone();
        report.version = VERSION.to_string();
        write_atomic(&dir.join("report.json"), report.to_json()?.as_bytes())?;
        write_atomic(&dir.join("report.csv"), report_csv(&report).as_bytes())?;
        reports.push(report);
    }
    if reports.is_empty() {
        return Err(Error::Config(format!("no fitted models under {}", run.display())));
    }
    Ok(reports)
}

/// Simulated statistics of a saved model and of the ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOutput {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub initial_state: Vec<f64>,
    pub model: SampleStats,
    pub truth: SampleStats,
}

/// Simulates the saved model of `seed` and the ground truth `paths` times
/// from the first test initial state; writes `sample.csv` and `sample.json`.
pub fn cmd_sample(run: &Path, seed: u64, paths: usize) -> Result<SampleOutput> {
    let res = load_run(run)?;
    let model = load_model(&res, seed)?;
    let [_, _, test] = seed_data(&res, seed)?;
    let x0 = test.trajectories.first().ok_or_else(|| Error::Format("empty test split".into()))?.state(0).to_vec();
    let mut settings = SampleSettings::for_env(&res.env);
    settings.scheme = res.config.scheme;
    let noise_seed = mix_seed(seed, 0x5a4d);
    let (drift, diffusion) = model.completed(&res.env);
    let stats = generative_sample(&drift, &diffusion, res.env.grid.as_ref(), &x0, settings, paths, noise_seed)?;
    let truth = generative_sample(
        &res.env.drift,
        &res.env.diffusion,
        res.env.grid.as_ref(),
        &x0,
        settings,
        paths,
        noise_seed,
    )?;
    let names: Vec<String> = if res.env.is_spde() {
        (0..res.env.state_dim).map(|j| format!("u[{j}]")).collect()
    } else {
        res.env.feature_names.clone()
    };
    let mut csv = csv_banner(&res.hash);
    csv.push('t');
    for prefix in ["model_mean", "model_std", "true_mean", "true_std"] {
        for n in &names {
            let _ = write!(csv, ",{prefix}_{n}");
        }
    }
    csv.push('\n');
    for k in 0..stats.mean.len() {
        let _ = write!(csv, "{}", fmt_num(k as f64 * settings.tau));
        for block in [&stats.mean, &stats.std, &truth.mean, &truth.std] {
            for v in &block[k] {
                let _ = write!(csv, ",{}", fmt_num(*v));
            }
        }
        csv.push('\n');
    }
    let dir = seed_dir(&res, seed);
    write_atomic(&dir.join("sample.csv"), csv.as_bytes())?;
    let out = SampleOutput {
        version: VERSION.to_string(),
        config_hash: res.hash.clone(),
        seed,
        initial_state: x0,
        model: stats,
        truth,
    };
    write_atomic(&dir.join("sample.json"), serde_json::to_string_pretty(&out)?.as_bytes())?;
    Ok(out)
}

fn find_reports(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_file() {
        if path.file_name().is_some_and(|n| n == "report.json") {
            out.push(path.to_path_buf());
        }
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for e in entries {
        find_reports(&e, out)?;
    }
    Ok(())
}

/// Collects every `report.json` below `inputs` into one CSV with a mean row
/// per (environment, method). Mixing environments needs `force`.
pub fn cmd_report(inputs: &[PathBuf], force: bool) -> Result<String> {
    let mut files = Vec::new();
    for p in inputs {
        if !p.exists() {
            return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, p.display().to_string())));
        }
        find_reports(p, &mut files)?;
    }
    let mut reports = Vec::new();
    for f in &files {
        reports.push(EvalReport::from_json(&std::fs::read_to_string(f)?)?);
    }
    if reports.is_empty() {
        return Err(Error::Config("no report.json found in the given inputs".into()));
    }
    reports.sort_by(|a, b| (&a.environment, a.method, a.seed).cmp(&(&b.environment, b.method, b.seed)));
    let first = &reports[0].environment;
    if !force && reports.iter().any(|r| &r.environment != first) {
        return Err(Error::Config("reports cover several environments; pass --force to merge".into()));
    }
    let mut csv = format!("{}\n", EvalReport::CSV_HEADER);
    for r in &reports {
        let _ = writeln!(csv, "{}", r.csv_row());
    }
    let mut groups: BTreeMap<(String, Method), Vec<&EvalReport>> = BTreeMap::new();
    for r in &reports {
        groups.entry((r.environment.clone(), r.method)).or_default().push(r);
    }
    for ((env, method), rs) in groups {
        let n = rs.len() as f64;
        let drift = rs.iter().map(|r| r.mean_drift_mse()).sum::<f64>() / n;
        let diffusion: Vec<f64> = rs.iter().filter_map(|r| r.mean_diffusion_mse()).collect();
        let diffusion =
            if diffusion.is_empty() { String::new() } else { fmt_num(diffusion.iter().sum::<f64>() / diffusion.len() as f64) };
        let ok = rs.iter().filter(|r| r.all_structure_ok()).count() as f64 / n;
        let runtime = rs.iter().map(|r| r.runtime_s).sum::<f64>() / n;
        let _ = writeln!(csv, "{env},{},mean,{},{diffusion},{},{}", method.tag(), fmt_num(drift), fmt_num(ok), fmt_num(runtime));
    }
    Ok(csv)
}
