//! Command-line front end. Exit codes: 0 success, 1 runtime failure, 2 usage
//! or configuration error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::cross_axis_contract;
use crate::checks;
use crate::flops::{contraction_macs, log_log_slope, Comparison, Convention, Mechanism};
use crate::model::CatConfig;
use crate::rope::{GridSpec, RotaryTables};
use crate::tensor::{ops, Tape, Tensor};
use crate::train::{self, data, DatasetSpec, RunConfig, SyntheticSpec};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "cat-cli", about = "Cross-axis transformer toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from a JSON run config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` override, applied after the file; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score a checkpoint on CIFAR-10 test data or the run's synthetic set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CIFAR-10 directory, or `synthetic`.
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Per-component operation counts of a model and its softmax baseline.
    Flops {
        #[arg(long)]
        config: Option<PathBuf>,
        /// 224px images, patch 8, hidden 1024, 8 heads, 5 layers, 1000 classes, FFN ratio 1.
        #[arg(long)]
        paper_preset: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Also writes `flops.csv` (cross-axis) and `flops_baseline.csv` here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Analytic and timed scaling of the two attention contractions.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// Include the full toy model.
        #[arg(long)]
        full_model: bool,
    },
    /// Write rotary cos/sin tables as CSV.
    DumpRope {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        head_dim: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_aspect_correction: bool,
    },
}

/// Failures split by exit code.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Json(_) | Error::BadHeadDim(_) | Error::TooFewSizes(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<crate::tensor::TensorError> for Failure {
    fn from(e: crate::tensor::TensorError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn dispatch(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Train {
            config,
            overrides,
            out_dir,
        } => cmd_train(config.as_deref(), &overrides, out_dir),
        Command::Eval {
            checkpoint,
            data,
            batch_size,
        } => cmd_eval(&checkpoint, &data, batch_size),
        Command::Flops {
            config,
            paper_preset,
            overrides,
            out_dir,
        } => cmd_flops(config.as_deref(), paper_preset, &overrides, out_dir.as_deref()),
        Command::Bench { sizes, d, repeats } => cmd_bench(&sizes, d, repeats),
        Command::Gradcheck { full_model } => cmd_gradcheck(full_model),
        Command::DumpRope {
            rows,
            cols,
            head_dim,
            out,
            no_aspect_correction,
        } => {
            let grid = GridSpec::new(rows, cols, head_dim)?.with_aspect_correction(!no_aspect_correction);
            let tables = RotaryTables::<f64>::build(grid)?;
            let mut buf = Vec::new();
            tables.write_csv(&mut buf)?;
            write_file(&out, &buf)?;
            println!("wrote {} rows to {}", rows * cols * head_dim, out.display());
            Ok(())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)
}

/// Reads the config file (if any) and applies overrides.
fn load_config(path: Option<&Path>, overrides: &[String]) -> std::result::Result<RunConfig, Failure> {
    let mut config = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::from_json(&text)
                .map_err(|e| Failure::Usage(format!("config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        config.apply_override(o)?;
    }
    Ok(config)
}

fn cmd_train(
    path: Option<&Path>,
    overrides: &[String],
    out_dir: Option<PathBuf>,
) -> std::result::Result<(), Failure> {
    let mut config = load_config(path, overrides)?;
    if let Some(dir) = out_dir {
        config.train.out_dir = dir;
    }
    config.validate()?;
    let (train_set, val_set) = train::load_datasets(&config)?;
    println!(
        "training {:?} ({} params) on {} images, validating on {}",
        config.model.model_kind,
        crate::model::param_count(&config.model),
        train_set.len(),
        val_set.len()
    );
    let start = Instant::now();
    let report_every = config.train.eval_every.clamp(1, 100);
    let outcome = train::train_on(&config, &train_set, &val_set, |s| {
        if s.step % report_every == 0 || s.step == 1 {
            println!("step {:>6}  lr {:.3e}  loss {:.4}  acc {:.3}", s.step, s.lr, s.loss, s.acc);
        }
    })?;
    for e in &outcome.evals {
        println!("eval step {:>6}  loss {:.4}  acc {:.4}", e.step, e.loss, e.acc);
    }
    println!(
        "{} steps in {:.1?}; outputs in {}",
        outcome.steps.len(),
        start.elapsed(),
        outcome.out_dir.display()
    );
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data_arg: &str, batch_size: usize) -> std::result::Result<(), Failure> {
    let ck = train::load_checkpoint::<f32>(checkpoint)?;
    let (model, _, config) = ck.restore()?;
    let set = if data_arg == "synthetic" {
        let (classes, offset, count) = match config.train.dataset {
            DatasetSpec::Synthetic {
                classes,
                train_samples,
                val_samples,
            } => (classes, train_samples, val_samples),
            DatasetSpec::Cifar10 { .. } => (config.model.num_classes.min(16), 0, 640),
        };
        SyntheticSpec {
            classes,
            channels: config.model.channels,
            image_size: config.model.image_size,
            patch_size: config.model.patch_size,
            seed: config.train.seed,
        }
        .generate(offset, count)?
    } else {
        data::load_cifar10_test(Path::new(data_arg))?
    };
    let r = train::evaluate(&model, &set, batch_size)?;
    println!(
        "checkpoint step {}: {} images  loss {:.4}  acc {:.4}",
        ck.step,
        set.len(),
        r.loss,
        r.accuracy
    );
    Ok(())
}

fn cmd_flops(
    path: Option<&Path>,
    paper_preset: bool,
    overrides: &[String],
    out_dir: Option<&Path>,
) -> std::result::Result<(), Failure> {
    let mut config = load_config(path, &[])?;
    if paper_preset {
        config.model = CatConfig::paper();
    }
    for o in overrides {
        config.apply_override(o)?;
    }
    config.model.validate()?;
    let cmp = Comparison::new(&config.model);
    print!("{}\n{}", cmp.cat.to_table(), cmp.vit.to_table());
    println!(
        "\nratio cross-axis/baseline: {:.4} (total operations, either convention)",
        cmp.ratio()
    );
    println!(
        "baseline ops per parameter: {:.2} macs, {:.2} flops; tokens {}",
        cmp.vit.fpp(Convention::Macs),
        cmp.vit.fpp(Convention::Flops),
        cmp.vit.tokens
    );
    if let Some(dir) = out_dir {
        for (file, report) in [("flops.csv", &cmp.cat), ("flops_baseline.csv", &cmp.vit)] {
            write_file(&dir.join(file), report.to_csv().as_bytes())?;
            println!("wrote {}", dir.join(file).display());
        }
    }
    Ok(())
}

fn time_it<R>(repeats: usize, mut f: impl FnMut() -> R) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        std::hint::black_box(f());
        best = best.min(start.elapsed().as_secs_f64());
    }
    best
}

/// Size, token count, analytic cross-axis and quadratic cost, and both timings.
type Row = (f64, f64, f64, f64, f64);

fn cmd_bench(sizes: &[usize], d: usize, repeats: usize) -> std::result::Result<(), Failure> {
    if sizes.len() < 3 {
        return Err(Error::TooFewSizes(sizes.len()).into());
    }
    if sizes.contains(&0) || d == 0 {
        return Err(Failure::Usage("sizes and --d must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!(
        "{:>5} {:>8} {:>16} {:>16} {:>12} {:>12}",
        "S", "N", "cross macs", "quadratic macs", "cross s", "quadratic s"
    );
    let mut rows: Vec<Row> = Vec::new();
    for &s in sizes {
        let n = s * s;
        let cross = contraction_macs(Mechanism::CrossAxis, s as u64, d as u64);
        let quad = contraction_macs(Mechanism::Quadratic, s as u64, d as u64);
        let q = Tensor::<f32>::from_fn(&[s, s, 1, d], |_| rng.random_range(-1.0..1.0));
        let k = Tensor::<f32>::from_fn(&[s, s, 1, d], |_| rng.random_range(-1.0..1.0));
        let v = Tensor::<f32>::from_fn(&[s, s, 1, d], |_| rng.random_range(-1.0..1.0));
        let t_cross = time_it(repeats, || {
            let tape = Tape::new();
            cross_axis_contract(&tape.constant(q.clone()), &tape.constant(k.clone()), &tape.constant(v.clone()))
                .map(|o| o.value())
        });
        let (qf, kf, vf) = (q.reshape(&[n, d])?, k.reshape(&[n, d])?, v.reshape(&[n, d])?);
        let t_quad = time_it(repeats, || -> crate::tensor::TensorResult<Tensor<f32>> {
            let kt = ops::permute(&kf, &[1, 0])?;
            let scores = ops::softmax(&ops::matmul(&qf, &kt)?)?;
            ops::matmul(&scores, &vf)
        });
        println!("{s:>5} {n:>8} {cross:>16} {quad:>16} {t_cross:>12.5} {t_quad:>12.5}");
        rows.push((n as f64, cross as f64, quad as f64, t_cross, t_quad));
    }
    let slope = |f: &dyn Fn(&Row) -> f64| {
        log_log_slope(&rows.iter().map(|r| (r.0, f(r))).collect::<Vec<_>>())
    };
    println!("\nexponent in token count N = S^2:");
    println!("  cross-axis analytic {:.3}  timed {:.3}", slope(&|r| r.1)?, slope(&|r| r.3.max(1e-9))?);
    println!("  quadratic  analytic {:.3}  timed {:.3}", slope(&|r| r.2)?, slope(&|r| r.4.max(1e-9))?);
    println!("  claimed for cross-axis: 1.000 (linear in N); the two batched products cost S^3 d = N^1.5 d");
    Ok(())
}

fn cmd_gradcheck(full_model: bool) -> std::result::Result<(), Failure> {
    const TOLERANCE: f64 = 1e-4;
    let mut cases = checks::op_gradient_suite(0);
    cases.push(checks::attention_gradient_check(0));
    if full_model {
        cases.push(checks::model_gradient_check(&checks::gradcheck_model_config(), 0));
    }
    let mut failed = 0;
    for c in &cases {
        let ok = c.error < TOLERANCE;
        failed += usize::from(!ok);
        println!("{:<22} {:.3e} {}", c.name, c.error, if ok { "ok" } else { "FAIL" });
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} gradient checks above {TOLERANCE:e}")));
    }
    println!("all {} checks below {TOLERANCE:e}", cases.len());
    Ok(())
}
