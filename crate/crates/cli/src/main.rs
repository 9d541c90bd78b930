//! `chimp`: train, evaluate and explain Choquet-integral networks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use chimp_core::harness::{
    self, experiment1_targets, fixtures, generate, grad_check_sweep, ingest_posterior_files, ingest_posteriors,
    prediction_mse, run_experiment1, run_fusion, Dataset, Exp1Config, FusionMode, NoiseSpec,
};
use chimp_core::ichimp::{flop_count, integrand, materialize};
use chimp_core::integral::{chi_maxmin, chi_mobius, chi_sort, chimp_select_forward};
use chimp_core::measure::{targets, FuzzyMeasure};
use chimp_core::training::{sgd_fit, BatchMode, TrainConfig};
use chimp_core::xai::XaiReport;
use chimp_core::ChimpError;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug, Clone)]
#[command(name = "chimp", version, about = "Choquet integral networks: training, evaluation, explanation")]
struct Cli {
    /// Directory under which run directories are created.
    #[arg(long, global = true, env = "CHIMP_RUN_ROOT", default_value = "runs")]
    run_root: PathBuf,

    /// Write outputs to exactly this directory instead of a new one under the run root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Sample a synthetic dataset labelled by a target measure.
    Generate(GenerateArgs),
    /// Fit a network to a dataset.
    Train(TrainArgs),
    /// Evaluate a measure on a dataset.
    Eval(EvalArgs),
    /// Explainability report for a measure.
    Explain(ExplainArgs),
    /// Recovery experiment over the four reference measures and noise levels.
    Exp1(Exp1Args),
    /// Cross-validated fusion of classifier posteriors.
    Fuse(FuseArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Operation counts of the integrand and measure networks.
    Flops(FlopsArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct FitArgs {
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, value_enum, default_value_t = Batch::PerSample)]
    batch_mode: Batch,
    #[arg(long, default_value_t = 0.1)]
    init_low: f64,
    #[arg(long, default_value_t = 0.2)]
    init_high: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
enum Batch {
    PerSample,
    FullBatch,
}

impl FitArgs {
    fn config(&self, seed: u64, trials: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_mode: match self.batch_mode {
                Batch::PerSample => BatchMode::PerSample,
                Batch::FullBatch => BatchMode::FullBatch,
            },
            init_low: self.init_low,
            init_high: self.init_high,
            seed,
            trials,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct GenerateArgs {
    /// fm1, fm2, fm3, fm4, or a measure JSON file.
    #[arg(long, default_value = "fm4")]
    target: String,
    #[arg(long, default_value_t = 300)]
    samples: usize,
    /// Noise std as a multiple of the clean label std.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    /// Training dataset CSV (`h_1,...,h_n,label`).
    #[arg(long)]
    data: PathBuf,
    /// Held-out dataset CSV.
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Measure to compare the learned one against (fm1..fm4 or JSON file).
    #[arg(long)]
    target: Option<String>,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum Form {
    Sort,
    Mobius,
    Maxmin,
    Select,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    /// Measure JSON (`{"n":..,"values":[..]}`).
    #[arg(long, conflicts_with = "params", required_unless_present = "params")]
    measure: Option<PathBuf>,
    /// Trained parameters JSON.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Form::Sort)]
    form: Form,
}

#[derive(Args, Debug, Clone)]
struct ExplainArgs {
    #[arg(long, conflicts_with = "params", required_unless_present = "params")]
    measure: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    /// Training data, for walk and coverage statistics.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Rows to score for trust (defaults to --data).
    #[arg(long)]
    query: Option<PathBuf>,
    /// Share above which a single walk is reported as dominant.
    #[arg(long, default_value_t = 0.5)]
    dominant_threshold: f64,
}

#[derive(Args, Debug, Clone)]
struct Exp1Args {
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 300)]
    samples: usize,
    /// Noise multipliers, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.01, 0.05, 0.1, 0.3, 0.5])]
    noise: Vec<f64>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum Fixture {
    Complementary,
    NearIdentical,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum Mode {
    Shared,
    PerClass,
}

#[derive(Args, Debug, Clone)]
struct FuseArgs {
    /// Posterior bundle JSON, a directory of per-model CSVs, or CSV files.
    #[arg(long, num_args = 1.., required_unless_present = "fixture")]
    posteriors: Vec<PathBuf>,
    /// Use a built-in synthetic task instead of files.
    #[arg(long, value_enum, conflicts_with = "posteriors")]
    fixture: Option<Fixture>,
    #[arg(long, default_value_t = 300)]
    fixture_rows: usize,
    #[arg(long, value_enum, default_value_t = Mode::Shared)]
    mode: Mode,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args, Debug, Clone)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Maximum accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Args, Debug, Clone)]
struct FlopsArgs {
    #[arg(long, default_value_t = 2)]
    min_n: usize,
    #[arg(long, default_value_t = 8)]
    max_n: usize,
}

#[derive(Args, Debug, Clone)]
struct ReplayArgs {
    /// A run directory or its manifest.json.
    manifest: PathBuf,
}

/// Output directory for one command, with its manifest.
struct Run {
    dir: PathBuf,
    command: String,
    argv: Vec<String>,
    seed: u64,
    config: Value,
    started: Instant,
    timings: Vec<(String, f64)>,
    outputs: Vec<String>,
}

impl Run {
    fn create(cli: &Cli, argv: &[String], command: &str, config: Value) -> anyhow::Result<Self> {
        let dir = match &cli.out {
            Some(dir) => dir.clone(),
            None => {
                let stamp = SystemTime::now().duration_since(UNIX_EPOCH)?.as_millis();
                let mut dir = cli.run_root.join(format!("{command}-{stamp}"));
                let mut k = 1;
                while dir.exists() {
                    dir = cli.run_root.join(format!("{command}-{stamp}-{k}"));
                    k += 1;
                }
                dir
            }
        };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            command: command.into(),
            argv: argv.to_vec(),
            seed: cli.seed,
            config,
            started: Instant::now(),
            timings: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        harness::write_file(&path, contents.as_ref())?;
        self.outputs.push(name.into());
        Ok(path)
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> anyhow::Result<PathBuf> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(name, text + "\n")
    }

    fn time<R>(&mut self, phase: &str, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let r = f();
        self.timings.push((phase.into(), t.elapsed().as_secs_f64()));
        r
    }

    fn finish(mut self, status: &str) -> anyhow::Result<PathBuf> {
        self.timings.push(("total".into(), self.started.elapsed().as_secs_f64()));
        let cwd = std::env::current_dir().ok();
        let manifest = json!({
            "command": self.command,
            "argv": self.argv,
            "cwd": cwd,
            "seed": self.seed,
            "config": self.config,
            "versions": {
                "chimp-cli": env!("CARGO_PKG_VERSION"),
                "chimp-core": chimp_core::VERSION,
            },
            "timings_seconds": self.timings.iter().map(|(k, v)| (k.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
            "outputs": self.outputs,
            "status": status,
        });
        let path = self.dir.join("manifest.json");
        harness::write_file(&path, (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes())?;
        Ok(self.dir)
    }
}

fn load_measure(spec: &str) -> anyhow::Result<FuzzyMeasure<f64>> {
    match spec.to_ascii_lowercase().as_str() {
        "fm1" => Ok(targets::fm1()),
        "fm2" => Ok(targets::fm2()),
        "fm3" => Ok(targets::fm3()),
        "fm4" => Ok(targets::fm4()),
        _ => read_measure_file(Path::new(spec)),
    }
}

fn read_measure_file(path: &Path) -> anyhow::Result<FuzzyMeasure<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing measure {}", path.display()))
}

fn measure_from(measure: &Option<PathBuf>, params: &Option<PathBuf>) -> anyhow::Result<FuzzyMeasure<f64>> {
    match (measure, params) {
        (Some(m), _) => read_measure_file(m),
        (None, Some(p)) => Ok(materialize(&harness::read_params(p)?).g),
        (None, None) => Err(ChimpError::Config("give --measure or --params".into()).into()),
    }
}

fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::read_csv(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn check_width(g: &FuzzyMeasure<f64>, data: &Dataset) -> anyhow::Result<()> {
    if g.n() != data.n {
        return Err(ChimpError::DimensionMismatch {
            expected: g.n(),
            got: data.n,
        }
        .into());
    }
    Ok(())
}

fn run_generate(cli: &Cli, argv: &[String], a: &GenerateArgs) -> anyhow::Result<PathBuf> {
    let target = load_measure(&a.target)?;
    let mut run = Run::create(
        cli,
        argv,
        "generate",
        json!({"target": a.target, "samples": a.samples, "noise": a.noise, "seed": cli.seed}),
    )?;
    let data = run.time("generate", || generate(&target, a.samples, a.noise, cli.seed))?;
    data.write_csv(&run.dir.join("data.csv"))?;
    run.outputs.push("data.csv".into());
    run.write_json("target.json", &target)?;
    println!("{} rows written to {}", data.len(), run.dir.join("data.csv").display());
    run.finish("ok")
}

fn run_train(cli: &Cli, argv: &[String], a: &TrainArgs) -> anyhow::Result<PathBuf> {
    let cfg = a.fit.config(cli.seed, 1);
    let train = read_dataset(&a.data)?;
    let test = a.test_data.as_deref().map(read_dataset).transpose()?;
    let target = a.target.as_deref().map(load_measure).transpose()?;
    let mut run = Run::create(
        cli,
        argv,
        "train",
        json!({"data": a.data, "test_data": a.test_data, "target": a.target, "train": cfg}),
    )?;
    let fit = run.time("fit", || sgd_fit(&train.rows, &train.labels, &cfg))?;
    let g = materialize(&fit.params).g;
    let test_mse = match &test {
        Some(t) => {
            check_width(&g, t)?;
            Some(prediction_mse(&g, &t.rows, &t.labels)?)
        }
        None => None,
    };
    let fm_mse = target.as_ref().map(|t| harness::measure_mse(&g, t)).transpose()?;
    let mut history = String::from("epoch,train_mse\n");
    for (epoch, mse) in fit.history.iter().enumerate() {
        history.push_str(&format!("{epoch},{mse:e}\n"));
    }
    run.write("history.csv", history)?;
    run.write_json("params.json", &fit.params)?;
    run.write_json("measure.json", &g)?;
    let metrics = json!({
        "train_mse": fit.history.last(),
        "test_mse": test_mse,
        "fm_mse": fm_mse,
        "trial_seed": cli.seed,
    });
    run.write_json("metrics.json", &metrics)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    run.finish("ok")
}

fn run_eval(cli: &Cli, argv: &[String], a: &EvalArgs) -> anyhow::Result<PathBuf> {
    let g = measure_from(&a.measure, &a.params)?;
    let data = read_dataset(&a.data)?;
    check_width(&g, &data)?;
    let mut run = Run::create(
        cli,
        argv,
        "eval",
        json!({"measure": a.measure, "params": a.params, "data": a.data, "form": format!("{:?}", a.form)}),
    )?;
    let mobius = g.mobius();
    let outputs = run.time("evaluate", || {
        data.rows
            .iter()
            .map(|h| match a.form {
                Form::Sort => chi_sort(&g, h),
                Form::Mobius => chi_mobius(&mobius, h),
                Form::Maxmin => chi_maxmin(&g, h),
                Form::Select => chimp_select_forward(&g, h),
            })
            .collect::<chimp_core::Result<Vec<f64>>>()
    })?;
    let mut csv = String::from("row,output,label\n");
    let mut sse = 0.0;
    for (k, (y, l)) in outputs.iter().zip(&data.labels).enumerate() {
        csv.push_str(&format!("{k},{y:e},{l:e}\n"));
        sse += (y - l).powi(2);
    }
    run.write("predictions.csv", csv)?;
    let metrics = json!({"mse": sse / data.len() as f64, "rows": data.len()});
    run.write_json("metrics.json", &metrics)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    run.finish("ok")
}

fn run_explain(cli: &Cli, argv: &[String], a: &ExplainArgs) -> anyhow::Result<PathBuf> {
    let g = measure_from(&a.measure, &a.params)?;
    let data = a.data.as_deref().map(read_dataset).transpose()?;
    let query = a.query.as_deref().map(read_dataset).transpose()?;
    for d in data.iter().chain(&query) {
        check_width(&g, d)?;
    }
    let mut run = Run::create(
        cli,
        argv,
        "explain",
        json!({"measure": a.measure, "params": a.params, "data": a.data, "query": a.query,
               "dominant_threshold": a.dominant_threshold}),
    )?;
    let train_rows = data.as_ref().map(|d| d.rows.as_slice());
    let query_rows = query.as_ref().map(|d| d.rows.as_slice()).or(train_rows);
    let report = run.time("explain", || XaiReport::build(&g, train_rows, query_rows, a.dominant_threshold))?;
    run.write_json("xai.json", &report)?;
    let summary = report.summary();
    run.write("summary.txt", &summary)?;
    run.write("shapley.svg", report.shapley_svg())?;
    print!("{summary}");
    run.finish("ok")
}

fn run_exp1(cli: &Cli, argv: &[String], a: &Exp1Args) -> anyhow::Result<PathBuf> {
    let cfg = Exp1Config {
        train: a.fit.config(cli.seed, a.trials),
        noise: NoiseSpec {
            multipliers: a.noise.clone(),
            seed: cli.seed,
        },
        samples: a.samples,
        train_fraction: a.train_fraction,
    };
    let mut run = Run::create(cli, argv, "exp1", serde_json::to_value(&cfg)?)?;
    let results = run.time("experiment", || run_experiment1(&cfg, &experiment1_targets()))?;
    run.write("table.csv", results.table_csv())?;
    run.write("cells.csv", results.cells_csv())?;
    run.write("trials.csv", results.trials_csv())?;
    let failed: usize = results.cells.iter().map(|c| c.failed).sum();
    print!("{}", results.table_csv());
    if failed > 0 {
        eprintln!("{failed} fit(s) failed; see trials.csv");
    }
    run.finish(if failed > 0 { "partial" } else { "ok" })
}

fn run_fuse(cli: &Cli, argv: &[String], a: &FuseArgs) -> anyhow::Result<PathBuf> {
    let mut task = match a.fixture {
        Some(Fixture::Complementary) => fixtures::complementary(a.fixture_rows, cli.seed)?,
        Some(Fixture::NearIdentical) => fixtures::near_identical(7, 4, a.fixture_rows, 0.02, cli.seed)?,
        None if a.posteriors.len() == 1 => ingest_posteriors(&a.posteriors[0])?,
        None => ingest_posterior_files(&a.posteriors)?,
    };
    task.mode = match a.mode {
        Mode::Shared => FusionMode::Shared,
        Mode::PerClass => FusionMode::PerClass,
    };
    task.assign_folds(a.folds, cli.seed)?;
    let cfg = a.fit.config(cli.seed, 1);
    let mut run = Run::create(
        cli,
        argv,
        "fuse",
        json!({"posteriors": a.posteriors, "fixture": a.fixture.map(|f| format!("{f:?}")),
               "fixture_rows": a.fixture_rows, "mode": task.mode, "folds": a.folds, "train": cfg}),
    )?;
    let result = run.time("fuse", || run_fusion(&task, &cfg))?;
    run.write("folds.csv", result.folds_csv())?;
    run.write_json("fusion.json", &result)?;
    let mut summary = format!(
        "fused accuracy {:.4} ± {:.4} over {} fold(s); best single source {:.4}\n",
        result.mean_accuracy,
        result.sd_accuracy,
        result.folds.len(),
        result.best_source_accuracy()
    );
    for (name, acc) in task.model_names.iter().zip(&result.source_mean_accuracies) {
        summary.push_str(&format!("  {name}: {acc:.4}\n"));
    }
    if !result.skipped_folds.is_empty() {
        summary.push_str(&format!("skipped folds: {:?}\n", result.skipped_folds));
    }
    if let Some(m) = result.measures.first() {
        summary.push_str(&format!("\nfold {} measure:\n{}", m.fold, m.report.summary()));
    }
    run.write("summary.txt", &summary)?;
    print!("{summary}");
    run.finish("ok")
}

fn run_gradcheck(cli: &Cli, argv: &[String], a: &GradcheckArgs) -> anyhow::Result<PathBuf> {
    let mut run = Run::create(
        cli,
        argv,
        "gradcheck",
        json!({"n": a.n, "cases": a.cases, "eps": a.eps, "tolerance": a.tolerance, "seed": cli.seed}),
    )?;
    let sweep = run.time("check", || grad_check_sweep(a.n, a.cases, a.eps, cli.seed))?;
    run.write_json("gradcheck.json", &sweep)?;
    println!(
        "max relative error {:e} over {} coordinates ({} skipped near kinks)",
        sweep.max_rel_error, sweep.checked, sweep.skipped
    );
    if sweep.max_rel_error < a.tolerance {
        run.finish("ok")
    } else {
        let dir = run.finish("failed")?;
        Err(ChimpError::Numeric {
            epoch: 0,
            sample: sweep.worst.map_or(0, |w| w.0),
            detail: format!(
                "max relative error {:e} exceeds {:e}; run directory {}",
                sweep.max_rel_error,
                a.tolerance,
                dir.display()
            ),
        }
        .into())
    }
}

fn run_flops(cli: &Cli, argv: &[String], a: &FlopsArgs) -> anyhow::Result<PathBuf> {
    if a.min_n < 1 || a.min_n > a.max_n || a.max_n > 20 {
        return Err(ChimpError::Config(format!("need 1 <= min-n <= max-n <= 20, got {}..{}", a.min_n, a.max_n)).into());
    }
    let mut run = Run::create(cli, argv, "flops", json!({"min_n": a.min_n, "max_n": a.max_n}))?;
    let mut csv = String::from("n,integrand_ops_measured,integrand_ops_formula,measure_ops,measure_ops_bound,dot_ops\n");
    for n in a.min_n..=a.max_n {
        let h: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0) / (n as f64 + 1.0)).collect();
        let measured = integrand(&h)?.ops.0;
        let f = flop_count(n);
        csv.push_str(&format!(
            "{n},{measured},{},{},{},{}\n",
            f.o_cost, f.g_cost, f.g_cost_bound, f.dot_cost
        ));
    }
    run.write("flops.csv", &csv)?;
    print!("{csv}");
    run.finish("ok")
}

fn load_manifest(path: &Path) -> anyhow::Result<Value> {
    let file = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn replay_argv(manifest: &Value) -> anyhow::Result<Vec<String>> {
    let argv: Vec<String> = manifest["argv"]
        .as_array()
        .ok_or_else(|| anyhow!("manifest has no argv"))?
        .iter()
        .map(|v| v.as_str().map(str::to_owned).ok_or_else(|| anyhow!("argv entries must be strings")))
        .collect::<anyhow::Result<_>>()?;
    // drop the recorded output directory so the replay gets a fresh one
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for arg in argv {
        if skip {
            skip = false;
            continue;
        }
        if arg == "--out" {
            skip = true;
            continue;
        }
        if arg.starts_with("--out=") {
            continue;
        }
        out.push(arg);
    }
    Ok(out)
}

fn dispatch(cli: &Cli, argv: &[String]) -> anyhow::Result<PathBuf> {
    match &cli.command {
        Command::Generate(a) => run_generate(cli, argv, a),
        Command::Train(a) => run_train(cli, argv, a),
        Command::Eval(a) => run_eval(cli, argv, a),
        Command::Explain(a) => run_explain(cli, argv, a),
        Command::Exp1(a) => run_exp1(cli, argv, a),
        Command::Fuse(a) => run_fuse(cli, argv, a),
        Command::Gradcheck(a) => run_gradcheck(cli, argv, a),
        Command::Flops(a) => run_flops(cli, argv, a),
        Command::Replay(a) => {
            let manifest = load_manifest(&a.manifest)?;
            let mut argv = replay_argv(&manifest)?;
            if let Some(out) = &cli.out {
                argv.push("--out".into());
                argv.push(out.display().to_string());
            }
            if let Some(cwd) = manifest["cwd"].as_str() {
                std::env::set_current_dir(cwd).with_context(|| format!("entering recorded directory {cwd}"))?;
            }
            let replayed = Cli::try_parse_from(&argv)?;
            if matches!(replayed.command, Command::Replay(_)) {
                bail!("a replay manifest cannot itself be replayed");
            }
            dispatch(&replayed, &argv)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ChimpError>() {
            return match e {
                ChimpError::Numeric { .. } => EXIT_NUMERIC,
                ChimpError::Config(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            };
        }
        if cause.downcast_ref::<clap::Error>().is_some() {
            return EXIT_USAGE;
        }
    }
    EXIT_FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli, &argv) {
        Ok(dir) => {
            eprintln!("run directory: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
