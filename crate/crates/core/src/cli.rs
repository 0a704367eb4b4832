//! The `greedyprune` command line: fit/predict, data generation and the
//! experiment drivers. Every run writes `manifest.json` next to its outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{fmt_real, load_csv, load_features_csv, split, Dataset, SplitPlan};
use crate::dgp::{generate, DgpKind, DgpSpec};
use crate::ensemble::{
    apply_override, ensemble_fit, make_recipe, BaseLearner, EnsembleModel, EnsembleSpec, RECIPES,
};
use crate::error::{Error, ErrorClass, Result};
use crate::rng::SeedSpec;
use crate::simulation::{
    fig2_svg, r2, run_bench, run_fig2, run_sweep, sweep_svg, write_bench_csv, write_fig2_csv,
    BenchModel, BenchSpec, Family, Fig2Spec, SweepSpec, TestKind, Variant,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_LEARNER: i32 = 4;

pub const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(
    name = "greedyprune",
    version,
    about = "Randomized greedy learners and overfitting ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data: Option<String>,
    #[arg(long, global = true)]
    target: Option<String>,
    /// Comma-separated categorical column names.
    #[arg(long, global = true)]
    categorical: Option<String>,
    #[arg(long, global = true)]
    recipe: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "GREEDYPRUNE_THREADS")]
    threads: Option<usize>,
    /// Extra `key=value` setting; repeatable.
    #[arg(long = "set", short = 's', global = true, value_parser = parse_pair)]
    set: Vec<(String, String)>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a recipe or a single base learner and write model.json.
    Fit,
    /// Predict with a saved model; writes predictions.csv.
    Predict {
        #[arg(long)]
        model: Option<String>,
    },
    /// Depth sweeps, one CSV and SVG per (dgp, family) facet.
    Simulate,
    /// Averaged Greedy LS and OLS with useless regressors.
    Fig2,
    /// Plain, tuned and ensemble models against their tuned counterparts.
    Bench {
        /// Held-out CSV; without it the data are split 70/30.
        #[arg(long)]
        test: Option<String>,
    },
    /// Draw train.csv and test.csv from a synthetic DGP.
    Generate,
    /// Repeat a run from its manifest and check every artifact hash.
    Rerun { manifest: PathBuf },
}

fn parse_pair(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got '{s}'"))
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidParam(format!("config line {}: expected key = value", i + 1))
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::InvalidParam(format!(
                "config line {}: empty key",
                i + 1
            )));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Resolved settings with a record of which keys a command consumed.
struct Config {
    map: BTreeMap<String, String>,
    used: Mutex<BTreeSet<String>>,
}

impl Config {
    fn new(map: BTreeMap<String, String>) -> Self {
        Config {
            map,
            used: Mutex::new(BTreeSet::new()),
        }
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.used
            .lock()
            .expect("config lock")
            .insert(key.to_string());
        self.map.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.str(key)
            .ok_or_else(|| Error::InvalidParam(format!("missing setting '{key}'")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.str(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::InvalidParam(format!("cannot parse {key} = '{v}'"))),
        }
    }

    fn list(&self, key: &str) -> Option<Vec<String>> {
        self.str(key).map(|v| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
    }

    fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.list(key)
            .map(|items| {
                items
                    .iter()
                    .map(|s| {
                        s.parse().map_err(|_| {
                            Error::InvalidParam(format!("cannot parse {key} entry '{s}'"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    /// Keys no getter asked for, in sorted order.
    fn rest(&self) -> Vec<(String, String)> {
        let used = self.used.lock().expect("config lock");
        self.map
            .iter()
            .filter(|(k, _)| !used.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    fn reject_rest(&self, command: &str) -> Result<()> {
        match self.rest().first() {
            Some((k, _)) => Err(Error::InvalidParam(format!(
                "'{k}' is not a setting of {command}"
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Learner => EXIT_LEARNER,
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let c = cli.common;
    let mut map = match &c.config {
        Some(path) => {
            parse_config(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?
        }
        None => BTreeMap::new(),
    };
    let file_threads = map.remove("threads");
    let flags = [
        ("data", c.data),
        ("target", c.target),
        ("categorical", c.categorical),
        ("recipe", c.recipe),
        ("seed", c.seed.map(|s| s.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    }
    match &cli.command {
        Command::Predict { model: Some(m) } => {
            map.insert("model".into(), m.clone());
        }
        Command::Bench { test: Some(t) } => {
            map.insert("test".into(), t.clone());
        }
        _ => {}
    }
    for (k, v) in c.set {
        map.insert(k, v);
    }
    let threads = match (c.threads, file_threads) {
        (Some(t), _) => Some(t),
        (None, Some(t)) => Some(
            t.parse::<usize>()
                .map_err(|_| Error::InvalidParam(format!("cannot parse threads = '{t}'")))?,
        ),
        _ => None,
    };

    if let Command::Rerun { manifest } = &cli.command {
        let out = c.out.unwrap_or_else(|| manifest.with_file_name("rerun"));
        return rerun(manifest, &out, threads);
    }
    let name = command_name(&cli.command);
    let out = c.out.unwrap_or_else(|| PathBuf::from("."));
    run_command(name, map, &out, threads).map(|_| ())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Fit => "fit",
        Command::Predict { .. } => "predict",
        Command::Simulate => "simulate",
        Command::Fig2 => "fig2",
        Command::Bench { .. } => "bench",
        Command::Generate => "generate",
        Command::Rerun { .. } => "rerun",
    }
}

/// Executes one command, writes its outputs and manifest into `out`, and
/// returns the manifest. A manifest is written on failure too.
pub fn run_command(
    command: &str,
    config: BTreeMap<String, String>,
    out: &Path,
    threads: Option<usize>,
) -> Result<Manifest> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg = Config::new(config.clone());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
    let seed = cfg.parse("seed", 0u64);
    let seed_value = seed.as_ref().copied().unwrap_or(0);
    let produced = seed.and_then(|seed| pool.install(|| dispatch(command, &cfg, seed)));

    let mut manifest = Manifest {
        tool: "greedyprune".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed: seed_value,
        config,
        status: "ok".into(),
        error: None,
        artifacts: Vec::new(),
    };
    let result = produced.and_then(|files| {
        // Single writer: every artifact is written here, in order.
        for (name, bytes) in &files {
            write_file(&out.join(name), bytes)?;
            manifest.artifacts.push(Artifact {
                file: name.clone(),
                sha256: sha256_hex(bytes),
            });
        }
        Ok(())
    });
    if let Err(e) = &result {
        manifest.status = "error".into();
        manifest.error = Some(e.to_string());
    }
    let text = serde_json::to_string_pretty(&manifest)?;
    write_file(&out.join(MANIFEST), text.as_bytes())?;
    result.map(|_| manifest)
}

type Files = Vec<(String, Vec<u8>)>;

fn dispatch(command: &str, cfg: &Config, seed: u64) -> Result<Files> {
    match command {
        "fit" => cmd_fit(cfg, seed),
        "predict" => cmd_predict(cfg),
        "simulate" => cmd_simulate(cfg, seed),
        "fig2" => cmd_fig2(cfg, seed),
        "bench" => cmd_bench(cfg, seed),
        "generate" => cmd_generate(cfg, seed),
        other => Err(Error::InvalidParam(format!("unknown command '{other}'"))),
    }
}

fn categorical(cfg: &Config) -> BTreeSet<String> {
    cfg.list("categorical")
        .unwrap_or_default()
        .into_iter()
        .collect()
}

fn load_data(cfg: &Config, key: &str) -> Result<Dataset> {
    let path = cfg.require(key)?.to_string();
    let target = cfg.require("target")?.to_string();
    load_csv(path, &target, &categorical(cfg))
}

fn ensemble_spec(cfg: &Config, seed: u64) -> Result<EnsembleSpec> {
    let recipe = cfg.str("recipe").unwrap_or("rf").to_string();
    let overrides = cfg.rest();
    let mut spec = if RECIPES.contains(&recipe.as_str()) {
        make_recipe(&recipe, &overrides)?
    } else {
        let mut spec = EnsembleSpec::single(BaseLearner::from_name(&recipe)?, seed);
        for (k, v) in &overrides {
            apply_override(&mut spec, k, v)?;
        }
        spec
    };
    spec.seed = SeedSpec::new(seed);
    spec.validate()?;
    Ok(spec)
}

fn cmd_fit(cfg: &Config, seed: u64) -> Result<Files> {
    let data = load_data(cfg, "data")?;
    let spec = ensemble_spec(cfg, seed)?;
    let model = ensemble_fit(&data, &spec)?;
    eprintln!(
        "fit {} on {} rows: train R² = {:.4}",
        cfg.str("recipe").unwrap_or("rf"),
        data.n_rows(),
        r2(model.train_fitted(), data.target())
    );
    Ok(vec![("model.json".into(), model.to_json()?.into_bytes())])
}

fn cmd_predict(cfg: &Config) -> Result<Files> {
    let path = cfg.require("model")?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model = EnsembleModel::from_json(&text)?;
    let target = cfg.str("target").map(String::from);
    let (features, y) = load_features_csv(cfg.require("data")?, model.schema(), target.as_deref())?;
    cfg.reject_rest("predict")?;
    let pred = model.predict(&features)?;
    if let Some(y) = &y {
        eprintln!("predict on {} rows: R² = {:.4}", pred.len(), r2(&pred, y));
    }
    let mut csv = String::from("prediction\n");
    for p in &pred {
        csv.push_str(&fmt_real(*p));
        csv.push('\n');
    }
    Ok(vec![("predictions.csv".into(), csv.into_bytes())])
}

fn dgp_spec(cfg: &Config, kind: DgpKind, seed: u64) -> Result<DgpSpec> {
    let n = cfg.parse("n", 400usize)?;
    let base = DgpSpec::new(kind, n, cfg.parse("snr", 4.0f64)?, seed);
    Ok(DgpSpec {
        n_test: cfg.parse("n_test", n)?,
        tree_min_node: cfg.parse("tree_min_node", base.tree_min_node)?,
        k_signal: cfg.parse("k_signal", base.k_signal)?,
        k_noise: cfg.parse("k_noise", base.k_noise)?,
        mu: cfg.parse("mu", base.mu)?,
        noise_sd: cfg.parse("noise_sd", base.noise_sd)?,
        ..base
    })
}

fn cmd_generate(cfg: &Config, seed: u64) -> Result<Files> {
    let kind = DgpKind::from_name(cfg.str("dgp").unwrap_or("friedman1"))?;
    let spec = dgp_spec(cfg, kind, seed)?;
    cfg.reject_rest("generate")?;
    let (train, test) = generate(&spec)?;
    Ok(vec![
        ("train.csv".into(), train.csv_string().into_bytes()),
        ("test.csv".into(), test.csv_string().into_bytes()),
    ])
}

const SWEEP_DGPS: [DgpKind; 5] = [
    DgpKind::Tree,
    DgpKind::Friedman1,
    DgpKind::Friedman2,
    DgpKind::Friedman3,
    DgpKind::Linear,
];

fn cmd_simulate(cfg: &Config, seed: u64) -> Result<Files> {
    let dgps: Vec<DgpKind> = match cfg.list("dgps") {
        Some(names) => names
            .iter()
            .map(|n| DgpKind::from_name(n))
            .collect::<Result<_>>()?,
        None => SWEEP_DGPS.to_vec(),
    };
    let families: Vec<Family> = match cfg.list("families") {
        Some(names) => names
            .iter()
            .map(|n| Family::from_name(n))
            .collect::<Result<_>>()?,
        None => Family::ALL.to_vec(),
    };
    let variants: Option<Vec<Variant>> = cfg
        .list("variants")
        .map(|names| {
            names
                .iter()
                .map(|n| Variant::from_name(n))
                .collect::<Result<_>>()
        })
        .transpose()?;
    let grid = cfg.usize_list("grid")?;
    if grid.is_some() && families.len() != 1 {
        return Err(Error::InvalidParam(
            "a custom grid needs exactly one family".into(),
        ));
    }
    let reps = cfg.parse("reps", 10usize)?;
    let members = cfg.parse("members", 50usize)?;
    let dgp_specs: Vec<DgpSpec> = dgps
        .iter()
        .map(|&k| dgp_spec(cfg, k, seed))
        .collect::<Result<_>>()?;
    let overrides = cfg.rest();

    let mut files = Vec::new();
    for dgp in &dgp_specs {
        for &family in &families {
            let mut spec = SweepSpec::new(dgp.clone(), family);
            if let Some(v) = &variants {
                spec.variants = v
                    .iter()
                    .copied()
                    .filter(|v| family != Family::Tree || *v != Variant::BpDa)
                    .collect();
            }
            if let Some(g) = &grid {
                spec.depth_grid = g.clone();
            }
            spec.reps = reps;
            spec.members = members;
            spec.overrides = overrides.clone();
            spec.seed = seed;
            let result = run_sweep(&spec)?;
            let stem = format!("sweep_{}_{}", dgp.kind.name(), family.name());
            files.push((format!("{stem}.csv"), result.records_csv().into_bytes()));
            files.push((
                format!("{stem}_summary.csv"),
                result.summary_csv().into_bytes(),
            ));
            files.push((format!("{stem}.svg"), sweep_svg(&result).into_bytes()));
        }
    }
    Ok(files)
}

fn cmd_fig2(cfg: &Config, seed: u64) -> Result<Files> {
    let d = Fig2Spec::default();
    let mut spec = Fig2Spec {
        grid: cfg.usize_list("grid")?.unwrap_or(d.grid),
        models: cfg.parse("models", d.models)?,
        bags: cfg.parse("bags", d.bags)?,
        n: cfg.parse("n", d.n)?,
        n_test: cfg.parse("n_test", d.n_test)?,
        snr: cfg.parse("snr", d.snr)?,
        k_signal: cfg.parse("k_signal", d.k_signal)?,
        reps: cfg.parse("reps", d.reps)?,
        greedy: d.greedy,
        seed,
    };
    spec.greedy.steps = cfg.parse("steps", spec.greedy.steps)?;
    spec.greedy.learning_rate = cfg.parse("learning_rate", spec.greedy.learning_rate)?;
    cfg.reject_rest("fig2")?;
    let points = run_fig2(&spec)?;
    Ok(vec![
        ("fig2.csv".into(), write_fig2_csv(&points).into_bytes()),
        ("fig2.svg".into(), fig2_svg(&points).into_bytes()),
    ])
}

fn cmd_bench(cfg: &Config, seed: u64) -> Result<Files> {
    let data = load_data(cfg, "data")?;
    let (train, test) = match cfg.str("test") {
        Some(_) => (data, load_data(cfg, "test")?),
        None => {
            let fraction = cfg.parse("train_fraction", 0.7f64)?;
            let plan = if cfg.parse("chronological", false)? {
                SplitPlan::chronological(fraction)
            } else {
                SplitPlan::random(fraction, seed)
            };
            split(&data, &plan)?
        }
    };
    let d = BenchSpec::default();
    let models = match cfg.list("models") {
        Some(names) => names
            .iter()
            .map(|n| BenchModel::from_name(n))
            .collect::<Result<_>>()?,
        None => d.models,
    };
    let test_kind = match cfg.str("test_kind").unwrap_or("t") {
        "t" => TestKind::T,
        "dm" => TestKind::Dm {
            horizon: cfg.parse("horizon", 1usize)?,
        },
        other => return Err(Error::InvalidParam(format!("unknown test kind '{other}'"))),
    };
    let spec = BenchSpec {
        models,
        tree_grid: cfg.usize_list("tree_grid")?.unwrap_or(d.tree_grid),
        boost_grid: cfg.usize_list("boost_grid")?.unwrap_or(d.boost_grid),
        mars_grid: cfg.usize_list("mars_grid")?.unwrap_or(d.mars_grid),
        folds: cfg.parse("folds", d.folds)?,
        members: cfg.parse("members", d.members)?,
        test_kind,
        seed,
    };
    cfg.reject_rest("bench")?;
    let rows = run_bench(&train, &test, &spec)?;
    Ok(vec![(
        "bench.csv".into(),
        write_bench_csv(&rows).into_bytes(),
    )])
}

/// Reruns the manifest's command into `out` and fails unless every artifact
/// hash matches.
pub fn rerun(manifest_path: &Path, out: &Path, threads: Option<usize>) -> Result<()> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let old: Manifest = serde_json::from_str(&text)?;
    let new = run_command(&old.command, old.config.clone(), out, threads)?;
    let differing: Vec<&str> = old
        .artifacts
        .iter()
        .filter(|a| !new.artifacts.contains(a))
        .map(|a| a.file.as_str())
        .collect();
    if !differing.is_empty() || old.artifacts.len() != new.artifacts.len() {
        return Err(Error::InvalidData(format!(
            "rerun differs from manifest in: {}",
            differing.join(", ")
        )));
    }
    eprintln!("rerun reproduced {} artifacts", new.artifacts.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines_and_comments() {
        let m = parse_config("# header\nrecipe = rf\n\nmembers=20 # inline\n").unwrap();
        assert_eq!(m.get("recipe").map(String::as_str), Some("rf"));
        assert_eq!(m.get("members").map(String::as_str), Some("20"));
        assert!(parse_config("no equals sign").is_err());
        assert!(parse_config(" = 3").is_err());
    }

    #[test]
    fn unused_keys_are_reported() {
        let cfg = Config::new(parse_config("a = 1\nb = x").unwrap());
        assert_eq!(cfg.parse("a", 0u32).unwrap(), 1);
        assert_eq!(cfg.rest(), vec![("b".to_string(), "x".to_string())]);
        assert!(cfg.reject_rest("test").is_err());
        assert!(cfg.parse("b", 0u32).is_err());
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
