//! `aquasight`: dataset generation, training, evaluation, prediction and serving.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use aquasight::data::{load_dataset, write_dataset, ImageSample};
use aquasight::eval::{classify, EvalReport, ScoredSample};
use aquasight::model::{save, Network, NetworkSpec};
use aquasight::optim::OptimizerKind;
use aquasight::pipeline::{prepare, Classifier};
use aquasight::train::{fit, split, TrainConfig};
use aquasight::Label;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "aquasight", version, about = "Classify water images as clean or contaminated")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptimizerName {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Subset {
    All,
    Train,
    Validation,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the 105-image synthetic dataset and its manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train the reference network and write weights plus a report.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, value_enum, default_value_t = OptimizerName::Adam)]
        optimizer: OptimizerName,
        /// Momentum for `--optimizer sgd`.
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        /// Fraction of the dataset used for training.
        #[arg(long, default_value_t = 0.75)]
        split: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Train on raw pixels instead of brightness-normalized ones.
        #[arg(long)]
        no_normalize: bool,
    },
    /// Score a dataset: metrics table, confusion matrix, prediction statistics.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Which images to score; train and validation use `--split`/`--seed`.
        #[arg(long, value_enum, default_value_t = Subset::All)]
        subset: Subset,
        #[arg(long, default_value_t = 0.75)]
        split: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Where to write the JSON report [default: MODEL.eval.json]
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        no_normalize: bool,
    },
    /// Classify one image.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        no_normalize: bool,
        /// Print the service's JSON response body instead of a verdict line.
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP inference service.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        no_normalize: bool,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn runtime(context: impl std::fmt::Display) -> impl FnOnce(String) -> Failure {
    move |e| Failure::Runtime(format!("{context}: {e}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData { out, seed } => gen_data(&out, seed),
        Command::Train {
            data,
            out,
            epochs,
            batch_size,
            lr,
            optimizer,
            momentum,
            split,
            seed,
            no_normalize,
        } => {
            let optimizer = match optimizer {
                OptimizerName::Adam => OptimizerKind::default(),
                OptimizerName::Sgd => OptimizerKind::SgdMomentum { momentum },
            };
            let config = TrainConfig {
                epochs,
                batch_size,
                learning_rate: lr,
                optimizer,
                split_fraction: split,
                seed,
            };
            train(&data, &out, config, !no_normalize)
        }
        Command::Eval {
            data,
            model,
            beta,
            subset,
            split,
            seed,
            report,
            no_normalize,
        } => {
            let report = report.unwrap_or_else(|| suffixed(&model, ".eval.json"));
            eval(&data, &model, beta, subset, split, seed, &report, !no_normalize)
        }
        Command::Predict {
            model,
            image,
            no_normalize,
            json,
        } => predict(&model, &image, !no_normalize, json),
        Command::Serve { model, addr, no_normalize } => serve(&model, addr, !no_normalize),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn gen_data(out: &Path, seed: u64) -> Outcome {
    let manifest = write_dataset(out, seed).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!(
        "wrote {} images to {} ({} clean / {} contaminated, seed {seed})",
        manifest.counts.total,
        out.display(),
        manifest.counts.clean,
        manifest.counts.contaminated
    );
    Ok(())
}

fn load_examples(data: &Path, normalize: bool) -> Result<(Vec<ImageSample>, Vec<(aquasight::Tensor, Label)>), Failure> {
    let (_, samples) = load_dataset(data).map_err(|e| Failure::Runtime(format!("cannot load dataset: {e}")))?;
    let examples = samples
        .iter()
        .map(|s| prepare(&s.pixels, normalize).map(|(x, _)| (x, s.label)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok((samples, examples))
}

fn train(data: &Path, out: &Path, config: TrainConfig, normalize: bool) -> Outcome {
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let (_, examples) = load_examples(data, normalize)?;
    let labels: Vec<Label> = examples.iter().map(|e| e.1).collect();
    let parts = split(&labels, config.split_fraction, config.seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let (train_set, validation_set) = parts.apply(&examples);
    println!("split: {} train / {} validation", train_set.len(), validation_set.len());

    let mut net = Network::<f64>::build(NetworkSpec::reference(), config.seed).map_err(|e| Failure::Runtime(e.to_string()))?;
    let started = Instant::now();
    let report = fit(&mut net, &train_set, &validation_set, &config).map_err(|e| Failure::Runtime(e.to_string()))?;
    let elapsed = started.elapsed().as_secs_f64();

    let checksum = save(&net, out).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", out.display())))?;
    for (suffix, body) in [(".report.txt", report.to_text()), (".report.json", report.to_json() + "\n")] {
        let path = suffixed(out, suffix);
        std::fs::write(&path, body).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    let version = &format!("{checksum:016x}")[..8];
    println!("trained {} epochs in {elapsed:.1}s", report.epoch_losses.len());
    println!("final training loss {:.4}", report.epoch_losses.last().copied().unwrap_or(f64::NAN));
    if let (Some(acc), Some(loss)) = (report.validation_accuracy, report.validation_loss) {
        let correct = (acc * validation_set.len() as f64).round() as usize;
        println!(
            "validation accuracy {acc:.4} ({correct}/{}), validation loss {loss:.4}",
            validation_set.len()
        );
    }
    println!("model written to {} (version {version})", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(data: &Path, model: &Path, beta: f64, subset: Subset, fraction: f64, seed: u64, report_path: &Path, normalize: bool) -> Outcome {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Failure::Usage(format!("beta must be positive, got {beta}")));
    }
    let classifier = Classifier::load(model).map_err(|e| Failure::Runtime(format!("cannot load model {}: {e}", model.display())))?;
    let (samples, examples) = load_examples(data, normalize)?;
    let indices: Vec<usize> = match subset {
        Subset::All => (0..samples.len()).collect(),
        Subset::Train | Subset::Validation => {
            let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
            let parts = split(&labels, fraction, seed).map_err(|e| Failure::Usage(e.to_string()))?;
            let mut idx = if subset == Subset::Train { parts.train } else { parts.validation };
            idx.sort_unstable();
            idx
        }
    };

    let mut scored = Vec::with_capacity(indices.len());
    for &i in &indices {
        let raw = classifier
            .network()
            .predict(&examples[i].0)
            .map_err(|e| Failure::Runtime(format!("model cannot score this data: {e}")))?;
        let p = classify(raw).map_err(|e| Failure::Runtime(e.to_string()))?;
        let file = match &samples[i].meta.source {
            aquasight::data::Source::File(path) => path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            aquasight::data::Source::Synthetic { seed } => format!("synthetic-{seed}"),
        };
        scored.push(ScoredSample {
            file,
            label: samples[i].label,
            raw: p.raw,
            class: p.class,
        });
    }
    let report = EvalReport::new(classifier.version().to_string(), scored, beta).map_err(|e| Failure::Runtime(e.to_string()))?;
    std::fs::write(report_path, report.to_json())
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", report_path.display())))?;

    let cm = &report.confusion;
    println!("evaluated {} images with model {}", cm.total(), report.model_version);
    println!();
    print!("{}", report.metrics.render_table());
    println!();
    print!("{}", cm.render());
    println!();
    println!("prediction statistics (by predicted class):");
    print!("{}", report.stats.render());
    println!();
    println!("report written to {}", report_path.display());
    Ok(())
}

fn predict(model: &Path, image: &Path, normalize: bool, json: bool) -> Outcome {
    let classifier = Classifier::load(model).map_err(|e| Failure::Runtime(format!("cannot load model {}: {e}", model.display())))?;
    let bytes = std::fs::read(image).map_err(|e| e.to_string()).map_err(runtime(image.display()))?;
    let response = classifier
        .predict_bytes(&bytes, normalize)
        .map_err(|e| e.to_string())
        .map_err(runtime(image.display()))?;
    if json {
        println!("{}", response.to_json());
    } else {
        println!("{}", response.verdict_line());
    }
    Ok(())
}

fn serve(model: &Path, addr: SocketAddr, normalize: bool) -> Outcome {
    let classifier = Classifier::load(model).map_err(|e| Failure::Runtime(format!("cannot load model {}: {e}", model.display())))?;
    let listener = std::net::TcpListener::bind(addr).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            Failure::Runtime(format!("address {addr} is already in use"))
        } else {
            Failure::Runtime(format!("cannot bind {addr}: {e}"))
        }
    })?;
    listener.set_nonblocking(true).map_err(|e| Failure::Runtime(e.to_string()))?;
    let bound = listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?;
    let state = aquasight_service::AppState::new(classifier, normalize);
    let version = state.model_version().to_string();

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener).map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("listening on http://{bound} (model {version})");
        let _ = std::io::stdout().flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        aquasight_service::serve(listener, state, shutdown)
            .await
            .map_err(|e| Failure::Runtime(format!("server error: {e}")))
    })
}
