mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dirmatch::dir::{InitKind, ShapeInput};
use dirmatch::eval::{geodesic_error_with, DEFAULT_CURVE_POINTS, DEFAULT_MAX_THRESHOLD};
use dirmatch::experiments::{involution_probability, perturbation_experiment, PerturbationConfig};
use dirmatch::geometry::DEFAULT_K_LOCAL;
use dirmatch::lmd::{LmdStencil, DEFAULT_EPS_CAP};
use dirmatch::{run_pipeline, Correspondence, DirConfig, Error};

use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(
    name = "dirmatch",
    version,
    about = "Dense correspondence between nearly isometric shapes"
)]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Match a source shape to a target shape.
    Match(MatchArgs),
    /// Score a map against a ground-truth map.
    Eval(EvalArgs),
    /// Precompute a shape's spectral embedding into an output cache.
    Eigs(EigsArgs),
    /// Export the local mapping distortion of a map.
    Lmd(LmdArgs),
    /// Involution probability and alignment-bias experiment.
    Thm1(Thm1Args),
}

#[derive(Args, Debug)]
struct MatchArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    dst: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Key-value config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["spectral", "gds"])]
    mode: Option<String>,
    /// Spectral cap K.
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, value_parser = ["shot", "landmarks", "file"])]
    init: Option<String>,
    /// Landmark pairs, one `source target` per line.
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Initial correspondence for `--init file`.
    #[arg(long)]
    init_file: Option<PathBuf>,
    /// Drop points whose final distortion reaches the last threshold.
    #[arg(long)]
    prune: bool,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Target shape the maps point into.
    #[arg(long)]
    dst: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_THRESHOLD)]
    max_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_CURVE_POINTS)]
    points: usize,
    #[arg(long, default_value_t = DEFAULT_K_LOCAL)]
    k_local: usize,
}

#[derive(Args, Debug)]
struct EigsArgs {
    #[arg(long)]
    shape: PathBuf,
    #[arg(long, default_value_t = 500)]
    k: usize,
    /// Output directory; the sidecar goes to `<out>/cache`, where `match
    /// --out <out>` looks for it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K_LOCAL)]
    k_local: usize,
}

#[derive(Args, Debug)]
struct LmdArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    dst: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    ring_depth: usize,
    #[arg(long, default_value_t = DEFAULT_EPS_CAP)]
    eps_cap: f64,
    #[arg(long, default_value_t = DEFAULT_K_LOCAL)]
    k_local: usize,
}

#[derive(Args, Debug)]
struct Thm1Args {
    /// Number of shuffled rows.
    #[arg(long)]
    n2: usize,
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the identity instead of a random shuffle.
    #[arg(long)]
    force_identity: bool,
}

enum Failure {
    Input(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Reads a map file and checks it against the shape sizes; any mismatch is
/// the caller's input problem.
fn read_map(path: &Path, n_source: Option<usize>, n_target: usize) -> Result<Correspondence, Failure> {
    let t = Correspondence::read(path)?;
    t.validate(n_source.unwrap_or(t.len()), n_target)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(t)
}

fn create_out(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn resolve_config(a: &MatchArgs) -> Result<DirConfig, Error> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Parse {
                path: p.clone(),
                line: 0,
                msg: e.to_string(),
            })?;
            let mut c = DirConfig::default();
            c.apply_str(&text, p)?;
            c
        }
        None => DirConfig::default(),
    };
    if let Some(m) = &a.mode {
        cfg.set("mode", m)?;
    }
    if let Some(k) = a.k_max {
        cfg.k = k;
    }
    if let Some(i) = &a.init {
        cfg.set("init", i)?;
    }
    if let Some(p) = &a.landmarks {
        cfg.landmarks = Some(p.clone());
    }
    if let Some(p) = &a.init_file {
        cfg.init_file = Some(p.clone());
    }
    if a.prune {
        cfg.prune = true;
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
            key: kv.clone(),
            msg: "expected KEY=VALUE".into(),
        })?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn config_pairs(cfg: &DirConfig) -> Vec<(String, String)> {
    cfg.to_text()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn cmd_match(a: &MatchArgs, command: &str) -> CmdResult {
    let cfg = match resolve_config(a) {
        Ok(c) => c,
        Err(e @ Error::Config { .. }) => {
            return Err(Failure::Input(format!(
                "{e}\nusage: dirmatch match --src FILE --dst FILE --out DIR [--init shot|landmarks|file] \
                 [--landmarks FILE] [--init-file FILE] (see --help)"
            )))
        }
        Err(e) => return Err(e.into()),
    };
    create_out(&a.out)?;
    let report = run_pipeline(&a.src, &a.dst, &cfg, &a.out)?;
    let mut m = RunManifest::new(command);
    m.config = config_pairs(&cfg);
    if let Some(k) = report.k_used {
        m.config.push(("K_used".into(), k.to_string()));
    }
    m.inputs.extend([a.src.clone(), a.dst.clone()]);
    m.inputs.extend(a.config.iter().cloned());
    m.inputs.extend(cfg.landmarks.iter().cloned());
    if cfg.init == InitKind::File {
        m.inputs.extend(cfg.init_file.iter().cloned());
    }
    m.stages = report.stages.clone();
    m.outputs = report.outputs.clone();
    m.write(&a.out)?;
    let matched = report.outcome.map.matched_count();
    println!(
        "matched {matched}/{} source points in {} iterations",
        report.n_source,
        report.outcome.trace.records.len()
    );
    for w in &report.outcome.trace.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, command: &str) -> CmdResult {
    let start = Instant::now();
    let dst = ShapeInput::load(&a.dst, a.k_local)?;
    let t = read_map(&a.map, None, dst.len())?;
    let gt = read_map(&a.gt, Some(t.len()), dst.len())?;
    let load = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let curve = geodesic_error_with(&t, &gt, &dst.surface.graph, a.max_threshold, a.points)?;
    let score = start.elapsed().as_secs_f64();
    create_out(&a.out)?;
    let curve_path = a.out.join("curve.csv");
    let per_point = a.out.join("per_point_errors.csv");
    curve.write_curve_csv(&curve_path)?;
    curve.write_per_point_csv(&per_point)?;
    let mut m = RunManifest::new(command);
    m.config = vec![
        ("max_threshold".into(), a.max_threshold.to_string()),
        ("points".into(), a.points.to_string()),
        ("k_local".into(), a.k_local.to_string()),
        ("diameter".into(), curve.diameter.to_string()),
    ];
    m.inputs = vec![a.map.clone(), a.gt.clone(), a.dst.clone()];
    m.stages = vec![("load".into(), load), ("eval".into(), score)];
    m.outputs = vec![curve_path, per_point];
    m.write(&a.out)?;
    println!("auc = {}", curve.auc);
    println!("mean_error = {}", curve.mean_error());
    Ok(())
}

fn cmd_eigs(a: &EigsArgs, command: &str) -> CmdResult {
    let start = Instant::now();
    let shape = ShapeInput::load(&a.shape, a.k_local)?;
    let load = start.elapsed().as_secs_f64();
    if a.k < 2 {
        return Err(Failure::Input("--k must be at least 2".into()));
    }
    let k = a.k.min(shape.len().saturating_sub(1));
    if k < a.k {
        log::warn!("k lowered from {} to {k} by the shape size", a.k);
    }
    create_out(&a.out)?;
    let cache = a.out.join("cache");
    let start = Instant::now();
    let emb = shape.embedding(k, Some(&cache))?;
    let eigs = start.elapsed().as_secs_f64();
    let sidecar = dirmatch::spectral::sidecar_path(&cache, &shape.embedding_key(k));
    let values = a.out.join("eigenvalues.csv");
    let mut text = String::from("index,eigenvalue\n");
    for (i, l) in emb.eigenvalues().iter().enumerate() {
        text.push_str(&format!("{i},{l}\n"));
    }
    fs::write(&values, text)?;
    let mut m = RunManifest::new(command);
    m.config = vec![("k".into(), k.to_string()), ("k_local".into(), a.k_local.to_string())];
    m.inputs = vec![a.shape.clone()];
    m.stages = vec![("load".into(), load), ("eigs".into(), eigs)];
    m.outputs = vec![sidecar.clone(), values];
    m.write(&a.out)?;
    println!("{}", sidecar.display());
    Ok(())
}

fn cmd_lmd(a: &LmdArgs, command: &str) -> CmdResult {
    let start = Instant::now();
    let src = ShapeInput::load(&a.src, a.k_local)?;
    let dst = ShapeInput::load(&a.dst, a.k_local)?;
    let t = read_map(&a.map, Some(src.len()), dst.len())?;
    let load = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let field = LmdStencil::new(&src.surface.graph, &src.surface.areas, a.ring_depth)?.evaluate(
        &dst.surface.graph,
        &t,
        a.eps_cap,
    )?;
    let lmd = start.elapsed().as_secs_f64();
    create_out(&a.out)?;
    let path = a.out.join("lmd.csv");
    field.write_csv(&path)?;
    let mut m = RunManifest::new(command);
    m.config = vec![
        ("ring_depth".into(), a.ring_depth.to_string()),
        ("eps_cap".into(), a.eps_cap.to_string()),
        ("k_local".into(), a.k_local.to_string()),
    ];
    m.inputs = vec![a.src.clone(), a.dst.clone(), a.map.clone()];
    m.stages = vec![("load".into(), load), ("lmd".into(), lmd)];
    m.outputs = vec![path];
    m.write(&a.out)?;
    println!("median = {}", field.median());
    Ok(())
}

fn cmd_thm1(a: &Thm1Args, command: &str) -> CmdResult {
    let eta = involution_probability(a.n2)?;
    println!("eta = {eta}");
    if a.trials == 0 {
        return Ok(());
    }
    let cfg = PerturbationConfig {
        k: a.k,
        n: a.n,
        n2: a.n2,
        trials: a.trials,
        seed: a.seed,
        force_identity: a.force_identity,
    };
    let start = Instant::now();
    let stats = perturbation_experiment(None, &cfg)?;
    let secs = start.elapsed().as_secs_f64();
    if let Some([min, q1, med, q3, max]) = stats.five_number_summary() {
        println!("spectral_norm min={min} q1={q1} median={med} q3={q3} max={max}");
    }
    if let Some(out) = &a.out {
        create_out(out)?;
        let path = out.join("perturbation.csv");
        stats.write_csv(&path)?;
        let mut m = RunManifest::new(command);
        m.config = vec![
            ("n2".into(), a.n2.to_string()),
            ("k".into(), a.k.to_string()),
            ("n".into(), a.n.to_string()),
            ("trials".into(), a.trials.to_string()),
            ("seed".into(), a.seed.to_string()),
            ("force_identity".into(), a.force_identity.to_string()),
        ];
        m.stages = vec![("experiment".into(), secs)];
        m.outputs = vec![path];
        m.write(out)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(2);
    }
    let command = std::env::args().collect::<Vec<_>>().join(" ");
    let result = match &cli.command {
        Command::Match(a) => cmd_match(a, &command),
        Command::Eval(a) => cmd_eval(a, &command),
        Command::Eigs(a) => cmd_eigs(a, &command),
        Command::Lmd(a) => cmd_lmd(a, &command),
        Command::Thm1(a) => cmd_thm1(a, &command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
