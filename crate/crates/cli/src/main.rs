mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use attrprop::affinity::{build_graph, AffinityGraph};
use attrprop::classifiers::{train_bank, ClassifierBank};
use attrprop::data::Corpus;
use attrprop::eval::{read_predictions, read_truth, report, write_report_csv, write_report_json, Thresholds};
use attrprop::math::derive_seed;
use attrprop::mrf::{stage2_loop_with, CovarianceKind, LabelMode, Stage2Config};
use attrprop::relation::{
    predict_traits, read_pairs, temporal_smooth, train_relation, write_pairs, write_predictions,
    Activation, RelationModel, RelationTrainConfig, DEFAULT_SMOOTHING_WINDOW,
};
use attrprop::synth::{gen_corpus, gen_pairs, SynthConfig};

use config::{pick, PipelineConfig};

const DEFAULT_H: usize = 10;
const DEFAULT_SEED: u64 = 0;

#[derive(Parser)]
#[command(name = "attrprop", version, about = "Missing attribute completion and relation traits")]
struct Cli {
    /// TOML file with defaults for any subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (and optionally face pairs).
    SynthGen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one masked logistic classifier per attribute.
    TrainClassifiers {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Build the normalized kNN affinity graph.
    BuildGraph {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        h: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete missing labels by alternating propagation and retraining.
    Propagate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Number of propagate/retrain rounds.
        #[arg(long = "M", alias = "rounds")]
        rounds: Option<usize>,
        #[arg(long)]
        k_init: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        covariance: Option<CovArg>,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the refined classifiers.
        #[arg(long)]
        bank_out: Option<PathBuf>,
        /// Per-round diagnostics as JSON.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Train the pairwise relation head.
    TrainRelation {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        fused_dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, value_enum)]
        activation: Option<ActArg>,
        /// Ignore the spatial cues.
        #[arg(long)]
        no_spatial: bool,
        /// Train only the trait weights.
        #[arg(long)]
        freeze_projection: bool,
    },
    /// Predict trait probabilities for each pair, smoothed over file order.
    PredictRelation {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Odd moving-average window; 1 disables smoothing.
        #[arg(long)]
        smooth: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Balanced accuracy per attribute or trait.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Stochastic,
    Deterministic,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovArg {
    Diagonal,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActArg {
    Identity,
    Tanh,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<attrprop::Error>())
                .map_or("io", |e| e.code());
            eprintln!("error[{code}]: {}", message(&e));
            ExitCode::FAILURE
        }
    }
}

/// Context chain joined by `: `, skipping causes already quoted by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    attrprop::Error::Config(msg.into()).into()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path)
        .map_err(attrprop::Error::from)
        .with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::load_dir(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    let file = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            return Err(config_err("threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_err(e.to_string()))?;
    }
    let seed = file.seed(cli.seed);

    match cli.command {
        Command::SynthGen { out } => synth_gen(&file, seed, &out),
        Command::TrainClassifiers {
            corpus,
            out,
            epochs,
            lr,
            batch_size,
        } => {
            let mut cfg = file.train.clone().unwrap_or_default();
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let corpus = load_corpus(&corpus)?;
            let bank = train_bank(&corpus, &cfg)?;
            info!("trained {} classifiers on {} samples", bank.len(), corpus.len());
            let mut w = create(&out)?;
            bank.to_json(&mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::BuildGraph { corpus, h, out } => {
            let h = pick(h, file.graph.h, DEFAULT_H);
            if h == 0 {
                return Err(config_err("h must be positive"));
            }
            let corpus = load_corpus(&corpus)?;
            let xs: Vec<&[f64]> = corpus.samples().iter().map(|s| s.features.as_slice()).collect();
            let graph = build_graph(&xs, h)?;
            info!("graph: {} nodes, {} edges", graph.n(), graph.edges().len());
            let mut w = create(&out)?;
            graph.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::Propagate {
            corpus,
            bank,
            graph,
            rounds,
            k_init,
            tol,
            max_iters,
            mode,
            covariance,
            out,
            bank_out,
            diagnostics,
        } => {
            let mut cfg: Stage2Config = file.propagate.clone().unwrap_or_default();
            cfg.rounds = rounds.unwrap_or(cfg.rounds);
            let p = &mut cfg.propagation;
            p.k_init = k_init.unwrap_or(p.k_init);
            p.tol = tol.unwrap_or(p.tol);
            p.max_iters = max_iters.unwrap_or(p.max_iters);
            if let Some(m) = mode {
                p.mode = match m {
                    ModeArg::Stochastic => LabelMode::Stochastic,
                    ModeArg::Deterministic => LabelMode::Deterministic,
                };
            }
            if let Some(c) = covariance {
                p.covariance = match c {
                    CovArg::Diagonal => CovarianceKind::Diagonal,
                    CovArg::Full => CovarianceKind::Full,
                };
            }
            cfg.validate()?;
            let seed = seed.unwrap_or(DEFAULT_SEED);

            let corpus = load_corpus(&corpus)?;
            let bank = ClassifierBank::from_json(open(&bank)?)?;
            let graph = AffinityGraph::read_csv(open(&graph)?, corpus.len())?;
            let output = stage2_loop_with(&corpus, &bank, &graph, &cfg, seed, |r, _| {
                for a in &r.attributes {
                    info!(
                        "round {} {}: {} sweeps{}, {} pseudo ({} positive), {} flipped",
                        r.round,
                        a.attribute,
                        a.sweeps,
                        if a.converged { "" } else { " (not converged)" },
                        a.pseudo_labels,
                        a.pseudo_positive,
                        a.flipped
                    );
                }
            })?;
            let mut w = create(&out)?;
            output.write_labels(&mut w)?;
            w.flush()?;
            if let Some(path) = bank_out {
                let mut w = create(&path)?;
                output.bank.to_json(&mut w)?;
                w.flush()?;
            }
            if let Some(path) = diagnostics {
                let mut w = create(&path)?;
                serde_json::to_writer_pretty(&mut w, &output.rounds)?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
            Ok(())
        }
        Command::TrainRelation {
            pairs,
            corpus,
            out,
            fused_dim,
            epochs,
            lr,
            activation,
            no_spatial,
            freeze_projection,
        } => {
            let mut cfg: RelationTrainConfig = file.relation.clone().unwrap_or_default();
            cfg.fused_dim = fused_dim.unwrap_or(cfg.fused_dim);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            if let Some(a) = activation {
                cfg.activation = match a {
                    ActArg::Identity => Activation::Identity,
                    ActArg::Tanh => Activation::Tanh,
                };
            }
            if no_spatial {
                cfg.use_spatial = false;
            }
            if freeze_projection {
                cfg.freeze_projection = true;
            }
            cfg.validate()?;
            let corpus = load_corpus(&corpus)?;
            let pairs = read_pairs(open(&pairs)?, &corpus)?;
            let model = train_relation(&pairs, &cfg, seed.unwrap_or(DEFAULT_SEED))?;
            info!("trained relation head on {} pairs", pairs.len());
            let mut w = create(&out)?;
            model.to_json(&mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::PredictRelation {
            pairs,
            corpus,
            model,
            smooth,
            out,
        } => {
            let window = pick(smooth, file.predict.smooth, DEFAULT_SMOOTHING_WINDOW);
            if window == 0 || window.is_multiple_of(2) {
                return Err(config_err(format!("smoothing window must be odd, got {window}")));
            }
            let model = RelationModel::from_json(open(&model)?)?;
            let corpus = load_corpus(&corpus)?;
            let pairs = read_pairs(open(&pairs)?, &corpus)?;
            let probs = pairs
                .iter()
                .map(|p| predict_traits(p, &model))
                .collect::<attrprop::Result<Vec<_>>>()?;
            let probs = temporal_smooth(&probs, window)?;
            let ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
            let mut w = create(&out)?;
            write_predictions(&ids, &probs, &mut w)?;
            w.flush()?;
            Ok(())
        }
        Command::Evaluate {
            pred,
            truth,
            out,
            format,
            threshold,
        } => {
            let t = pick(threshold, file.evaluate.threshold, 0.5);
            if !(0.0..=1.0).contains(&t) {
                return Err(config_err(format!("threshold {t} outside [0, 1]")));
            }
            let format = match (format, file.evaluate.format.as_deref()) {
                (Some(f), _) => f,
                (None, Some(s)) => Format::from_str(s, true).map_err(config_err)?,
                (None, None) if out.extension().is_some_and(|e| e == "json") => Format::Json,
                (None, None) => Format::Csv,
            };
            let preds = read_predictions(open(&pred)?)?;
            let truth = read_truth(open(&truth)?)?;
            let rows = report(&preds, &truth, &Thresholds::uniform(t))?;
            let mut w = create(&out)?;
            match format {
                Format::Csv => write_report_csv(&rows, &mut w)?,
                Format::Json => write_report_json(&rows, &mut w)?,
            }
            w.flush()?;
            Ok(())
        }
    }
}

/// Writes `corpus/` (masked), `truth/` (all labels) and, when the config has
/// a `[synth.pairs]` section, `faces/` and `pairs.csv`.
fn synth_gen(file: &PipelineConfig, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg: SynthConfig = file.synth.corpus.clone().unwrap_or_default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let synth = gen_corpus(&cfg)?;
    synth.corpus.save_dir(&out.join("corpus"))?;
    synth.truth.save_dir(&out.join("truth"))?;
    info!(
        "wrote {} samples, {} attributes to {}",
        synth.corpus.len(),
        cfg.attributes,
        out.display()
    );
    if let Some(pcfg) = &file.synth.pairs {
        let mut pcfg = pcfg.clone();
        if let Some(s) = seed {
            pcfg.seed = derive_seed(s, &[1]);
        }
        let pairs = gen_pairs(&pcfg)?;
        pairs.faces.save_dir(&out.join("faces"))?;
        let mut w = create(&out.join("pairs.csv"))?;
        write_pairs(&pairs.pairs, &mut w)?;
        w.flush()?;
        info!("wrote {} face pairs", pairs.pairs.len());
    }
    Ok(())
}
