mod config;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use awl_core::augment::{augment_dataset, AugmentError, Backend, ConfidenceMethod, HttpBackend, MockBackend};
use awl_core::awl::{parse_weights, read_trajectory, round2, AlfVariant, DawlStrategy};
use awl_core::data::{
    convert_semeval_xml, load_flags, load_jsonl, load_jsonl_with, save_jsonl, OpinionLexicon, Validation,
    DEFAULT_OPINION_WORDS,
};
use awl_core::eval::{evaluate, pct, EvalResult};
use awl_core::experiment::{format_table, run_ablation, DEFAULT_SEEDS, SYNTHETIC_LEARNING_RATE};
use awl_core::synthetic::{generate, SynthConfig};
use awl_core::trainer::{load_checkpoint, train, LoadMode, TrainConfig};

use config::FlatConfig;

#[derive(Parser)]
#[command(name = "awl", version, about = "Adaptive multi-task weighting for implicit sentiment analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a SemEval-2014 XML file to JSONL.
    Convert(ConvertArgs),
    /// Generate aspect and opinion targets with an LLM refinement loop.
    Augment(AugmentArgs),
    /// Train the toy model with adaptive task weights.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Summarize a weight trajectory CSV.
    Report(ReportArgs),
    /// Run the four-way ablation grid over several seeds.
    Ablation(AblationArgs),
    /// Write the synthetic train and test splits.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConvertArgs {
    input: PathBuf,
    output: PathBuf,
    /// JSON object mapping instance id to its implicit flag.
    #[arg(long)]
    flags: Option<PathBuf>,
    /// Opinion word list, one per line, for the fallback heuristic.
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Chat-completion endpoint. The key is read from LLM_API_KEY.
    #[arg(long, conflicts_with = "mock_script")]
    backend_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// JSONL file of scripted replies.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    #[arg(long, value_parser = ["prompt", "markov", "choice", "markov_chain", "choice_token"])]
    method: Option<String>,
    #[arg(long)]
    max_epochs: Option<u32>,
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args, Default)]
struct TrainOpts {
    /// Flat key=value file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["alf1", "alf2", "fixed"])]
    alf: Option<String>,
    #[arg(long, value_name = "A,B,C")]
    fixed_weights: Option<String>,
    #[arg(long, value_parser = ["none", "input", "output", "input-output"])]
    strategy: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    max_target_len: Option<usize>,
    /// A positive number, or `none` to disable clipping.
    #[arg(long)]
    clip_grad_norm: Option<String>,
    /// Parent of the timestamped run directory.
    #[arg(long)]
    runs_dir: Option<PathBuf>,
    /// Load datasets leniently, clipping out-of-range confidences.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct TrainArgs {
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Exact output directory instead of a new run directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    dataset: PathBuf,
    /// Print the result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    trajectory: PathBuf,
    /// Print every n-th step; the last step is always printed.
    #[arg(long, default_value_t = 10)]
    every: u64,
    /// Write an SVG chart of the weights.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct AblationArgs {
    /// Training split; the built-in synthetic data is used when omitted.
    #[arg(long, requires = "test")]
    train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct SynthArgs {
    out_dir: PathBuf,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    implicit_rate: Option<f64>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Convert(a) => convert(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Report(a) => report(a),
        Command::Ablation(a) => ablation(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}

/// Joins the error chain, skipping causes a parent message already shows.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg += ": ";
            }
            msg += &text;
        }
    }
    msg
}

fn convert(a: ConvertArgs) -> Result<()> {
    let flags = a.flags.as_deref().map(load_flags).transpose()?;
    let lexicon = match &a.lexicon {
        Some(p) => OpinionLexicon::load(p)?,
        None => OpinionLexicon::from_words(DEFAULT_OPINION_WORDS.iter().copied()),
    };
    if flags.is_none() {
        log::warn!("no flag file given; implicit flags come from the lexicon heuristic");
    }
    let out = convert_semeval_xml(&a.input, flags.as_ref(), &lexicon)?;
    save_jsonl(&out.dataset, &a.output)?;
    let implicit = out.dataset.instances().filter(|i| i.implicit).count();
    println!(
        "wrote {} instances ({} implicit) to {}; dropped {} conflict terms",
        out.dataset.len(),
        implicit,
        a.output.display(),
        out.dropped_conflict
    );
    Ok(())
}

fn sidecar(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".failures.jsonl");
    output.with_file_name(name)
}

fn augment(a: AugmentArgs) -> Result<()> {
    let mut file = FlatConfig::load_optional(a.config.as_deref())?;
    let backend_url = file.take("backend_url", a.backend_url)?;
    let model = file.take("model", a.model)?.unwrap_or_else(|| "gpt-4o-mini".to_string());
    let mock_script = file.take::<PathBuf>("mock_script", a.mock_script)?;
    let method: ConfidenceMethod = file.take("method", a.method)?.as_deref().unwrap_or("prompt").parse()?;
    let max_epochs = file.take("max_epochs", a.max_epochs)?.unwrap_or(3);
    let parallelism = file.take("parallelism", a.parallelism)?.unwrap_or(4);
    file.finish()?;

    let backend: Box<dyn Backend> = match (backend_url, mock_script) {
        (Some(_), Some(_)) => bail!("give either a backend URL or a mock script, not both"),
        (Some(url), None) => Box::new(HttpBackend::new(url, model)),
        (None, Some(script)) => Box::new(MockBackend::load(&script)?),
        (None, None) => bail!("one of --backend-url or --mock-script is required"),
    };
    let dataset = load_jsonl(&a.input)?;
    let sidecar = sidecar(&a.output);
    let report = match augment_dataset(&dataset, backend.as_ref(), method, max_epochs, parallelism) {
        Ok(r) => r,
        Err(AugmentError::TooManyFailures(r)) => {
            std::fs::write(&sidecar, r.failures_jsonl())?;
            bail!(
                "{} of {} instances failed (see {}); nothing written",
                r.failures.len(),
                r.total,
                sidecar.display()
            );
        }
        Err(e) => return Err(e.into()),
    };
    save_jsonl(&report.dataset, &a.output)?;
    if !report.failures.is_empty() {
        std::fs::write(&sidecar, report.failures_jsonl())?;
        eprintln!("{} instance(s) failed; see {}", report.failures.len(), sidecar.display());
    }
    println!(
        "augmented {}/{} instances with {method}; consensus {}%",
        report.dataset.len(),
        report.total,
        pct(report.consensus_rate())
    );
    Ok(())
}

/// Builds the effective config from flags, the config file and defaults.
fn train_config(opts: &TrainOpts, seed: Option<u64>, file: &mut FlatConfig) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let weights = file.take("fixed_weights", opts.fixed_weights.clone())?;
    let alf = match file.take::<String>("alf", opts.alf.clone())?.as_deref() {
        Some("fixed") => AlfVariant::fixed(match &weights {
            Some(w) => parse_weights(w)?,
            None => AlfVariant::BASE_WEIGHTS,
        })?,
        Some(other) if weights.is_some() => bail!("fixed weights need alf=fixed, got {other}"),
        None if weights.is_some() => bail!("fixed weights need alf=fixed"),
        Some(other) => other.parse()?,
        None => d.alf,
    };
    let strategy: DawlStrategy = match file.take::<String>("strategy", opts.strategy.clone())? {
        Some(s) => s.parse()?,
        None => d.strategy,
    };
    let clip = match file.take::<String>("clip_grad_norm", opts.clip_grad_norm.clone())? {
        None => d.clip_grad_norm,
        Some(s) if s == "none" => None,
        Some(s) => Some(s.parse().with_context(|| format!("clip_grad_norm: {s}"))?),
    };
    let config = TrainConfig {
        alf,
        strategy,
        epochs: file.take("epochs", opts.epochs)?.unwrap_or(d.epochs),
        batch_size: file.take("batch_size", opts.batch_size)?.unwrap_or(d.batch_size),
        learning_rate: file.take("lr", opts.lr)?.unwrap_or(d.learning_rate),
        seed: file.take("seed", seed)?.unwrap_or(d.seed),
        embedding_dim: file.take("embedding_dim", opts.embedding_dim)?.unwrap_or(d.embedding_dim),
        max_target_len: file.take("max_target_len", opts.max_target_len)?.unwrap_or(d.max_target_len),
        clip_grad_norm: clip,
    };
    config.validate()?;
    Ok(config)
}

fn config_text(c: &TrainConfig) -> String {
    let mut s = format!("strategy = {}\n", c.strategy.as_str());
    match c.alf {
        AlfVariant::Fixed(w) => s += &format!("alf = fixed\nfixed_weights = {},{},{}\n", w[0], w[1], w[2]),
        other => s += &format!("alf = {other}\n"),
    }
    s += &format!(
        "epochs = {}\nbatch_size = {}\nlr = {}\nseed = {}\nembedding_dim = {}\nmax_target_len = {}\nclip_grad_norm = {}\n",
        c.epochs,
        c.batch_size,
        c.learning_rate,
        c.seed,
        c.embedding_dim,
        c.max_target_len,
        c.clip_grad_norm.map_or("none".to_string(), |v| v.to_string())
    );
    s
}

/// Creates `<root>/<UTC timestamp>-seed<seed>`, adding a suffix on collision.
fn new_run_dir(root: &Path, seed: u64) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    for n in 0.. {
        let name = match n {
            0 => format!("{stamp}-seed{seed}"),
            n => format!("{stamp}-seed{seed}-{n}"),
        };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

fn load(path: &Path, lenient: bool) -> Result<awl_core::data::Dataset> {
    let mode = if lenient { Validation::Lenient } else { Validation::Strict };
    Ok(load_jsonl_with(path, mode)?.0)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut file = FlatConfig::load_optional(a.opts.config.as_deref())?;
    let config = train_config(&a.opts, a.seed, &mut file)?;
    let runs_dir = file.take("runs_dir", a.opts.runs_dir.clone())?;
    let dev_path = file.take("dev", a.dev)?;
    file.finish()?;

    let train_set = load(&a.train, a.opts.lenient)?;
    let dev = dev_path.as_deref().map(|p| load(p, a.opts.lenient)).transpose()?;
    let out_dir = match a.out_dir {
        Some(d) => d,
        None => new_run_dir(&runs_dir.unwrap_or_else(|| "runs".into()), config.seed)?,
    };
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config.txt"), config_text(&config))?;
    let report = train(&train_set, dev.as_ref(), &config, &out_dir, &mut |e| println!("{}", e.progress_line()))?;
    std::fs::write(out_dir.join("epochs.json"), serde_json::to_string_pretty(&report.epochs)?)?;
    if report.clipped_steps > 0 {
        eprintln!("{} of {} steps had clipped gradients", report.clipped_steps, report.steps);
    }
    println!("checkpoint: {}", report.checkpoint.display());
    println!("trajectory: {}", report.trajectory.display());
    Ok(())
}

fn print_eval(r: &EvalResult) {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), pct);
    println!("n_all={} n_implicit={}", r.n_all, r.n_implicit);
    println!(
        "All_A={} All_F={} ISA_A={} ISA_F={}",
        pct(r.all_accuracy),
        pct(r.all_macro_f1),
        opt(r.isa_accuracy),
        opt(r.isa_macro_f1)
    );
    println!("confusion (rows gold, columns predicted: positive negative neutral)");
    for row in &r.confusion {
        println!("{:>8} {:>8} {:>8}", row[0], row[1], row[2]);
    }
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint, LoadMode::Eval)?;
    let dataset = load_jsonl(&a.dataset)?;
    let r = evaluate(&ck.model, &ck.vocab, &dataset)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        print_eval(&r);
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    if a.every == 0 {
        bail!("--every must be positive");
    }
    let rows = read_trajectory(&a.trajectory).with_context(|| format!("reading {}", a.trajectory.display()))?;
    if rows.is_empty() {
        bail!("{} has no steps", a.trajectory.display());
    }
    println!(
        "{:>6} {:>6} {:>6} {:>6} {:>10} {:>10} {:>10}",
        "step", "w_p", "w_a", "w_o", "sigma2_p", "sigma2_a", "sigma2_o"
    );
    let last = rows.len() - 1;
    for (i, r) in rows.iter().enumerate() {
        if r.step % a.every != 0 && i != last {
            continue;
        }
        println!(
            "{:>6} {:>6.2} {:>6.2} {:>6.2} {:>10.4} {:>10.4} {:>10.4}",
            r.step,
            round2(r.w_polarity),
            round2(r.w_aspect),
            round2(r.w_opinion),
            r.sigma2_polarity,
            r.sigma2_aspect,
            r.sigma2_opinion
        );
    }
    if let Some(p) = a.plot {
        std::fs::write(&p, plot::weights_svg(&rows)).with_context(|| format!("writing {}", p.display()))?;
        println!("plot: {}", p.display());
    }
    Ok(())
}

fn ablation(a: AblationArgs) -> Result<()> {
    let mut file = FlatConfig::load_optional(a.opts.config.as_deref())?;
    let synthetic = a.train.is_none();
    let mut config = train_config(&a.opts, None, &mut file)?;
    let runs_dir = file.take("runs_dir", a.opts.runs_dir.clone())?;
    if synthetic && a.opts.lr.is_none() && !config_has_lr(a.opts.config.as_deref())? {
        config.learning_rate = SYNTHETIC_LEARNING_RATE;
    }
    file.finish()?;
    let seeds = a.seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    if seeds.is_empty() {
        bail!("at least one seed is required");
    }
    let (train_set, test_set) = match (&a.train, &a.test) {
        (Some(tr), Some(te)) => (load(tr, a.opts.lenient)?, load(te, a.opts.lenient)?),
        _ => {
            let d = generate(&SynthConfig::default());
            (d.train, d.test)
        }
    };
    let out_dir = new_run_dir(&runs_dir.unwrap_or_else(|| "runs".into()), seeds[0])?;
    std::fs::write(out_dir.join("config.txt"), config_text(&config))?;
    let rows = run_ablation(&train_set, &test_set, &config, &seeds, &out_dir)?;
    let table = format_table(&rows);
    std::fs::write(out_dir.join("ablation.txt"), &table)?;
    std::fs::write(out_dir.join("ablation.json"), serde_json::to_string_pretty(&rows)?)?;
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    println!("seeds {}; lr {}; mean ± std in percent", seeds.join(","), config.learning_rate);
    print!("{table}");
    println!("results: {}", out_dir.display());
    Ok(())
}

fn config_has_lr(path: Option<&Path>) -> Result<bool> {
    let mut f = FlatConfig::load_optional(path)?;
    Ok(f.take::<String>("lr", None)?.is_some())
}

fn synth(a: SynthArgs) -> Result<()> {
    let d = SynthConfig::default();
    let config = SynthConfig {
        n_train: a.n_train.unwrap_or(d.n_train),
        n_test: a.n_test.unwrap_or(d.n_test),
        implicit_rate: a.implicit_rate.unwrap_or(d.implicit_rate),
        noise_rate: a.noise_rate.unwrap_or(d.noise_rate),
        seed: a.seed.unwrap_or(d.seed),
    };
    for (name, rate) in [("implicit rate", config.implicit_rate), ("noise rate", config.noise_rate)] {
        if !(0.0..=1.0).contains(&rate) {
            bail!("{name} must be in [0, 1], got {rate}");
        }
    }
    let data = generate(&config);
    std::fs::create_dir_all(&a.out_dir)?;
    save_jsonl(&data.train, a.out_dir.join("train.jsonl"))?;
    save_jsonl(&data.test, a.out_dir.join("test.jsonl"))?;
    println!(
        "wrote {} train and {} test instances to {}",
        data.train.len(),
        data.test.len(),
        a.out_dir.display()
    );
    Ok(())
}
