use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lensless_core::bovw::{kmeans_fit, Vocabulary};
use lensless_core::classifiers::{select_best, train_roster};
use lensless_core::frames::{read_frame_dir, read_labels, write_frame_dir, LABELS_FILE};
use lensless_core::harness::config::parse_task;
use lensless_core::harness::{
    balanced_subset, plot_results, read_results_csv, run_experiment, write_results_csv, Bundle, ExperimentConfig,
    FramePipeline, SourceData,
};
use lensless_core::surf::{extract_features, read_descriptors, write_descriptors, Descriptor};
use lensless_core::{ClassId, Error, LabeledDataset, Result};

/// Simulated lensless-camera digit classification.
#[derive(Parser)]
#[command(name = "lensless", version)]
struct Cli {
    /// Experiment configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `experiment.master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Test,
    Pooled,
}

#[derive(Subcommand)]
enum Command {
    /// Capture MNIST digits with the simulated camera and write PGM frames.
    Simulate {
        #[arg(long, value_enum, default_value = "test")]
        split: Part,
        /// Class subset, e.g. `0-1` or `2,5,7`.
        #[arg(long)]
        classes: Option<String>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        offset: usize,
    },
    /// Extract SURF descriptors from a frame directory.
    Features {
        #[arg(long)]
        frames: PathBuf,
    },
    /// Fit a visual vocabulary on descriptor files.
    Vocab {
        #[arg(long)]
        features: PathBuf,
    },
    /// Train the classifier roster on frames and save the selected model.
    Train {
        #[arg(long)]
        frames: PathBuf,
        /// Reuse a vocabulary instead of fitting one.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Classify frames with a saved model and report accuracy.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        frames: PathBuf,
    },
    /// Run the accuracy-versus-training-size experiment.
    Experiment,
    /// Plot a results CSV as SVG.
    Plot {
        #[arg(long)]
        results: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn describe_frames(frames: &LabeledDataset, cfg: &ExperimentConfig) -> Vec<Vec<Descriptor>> {
    frames.images().iter().map(|f| extract_features(f, &cfg.features)).collect()
}

fn simulate(cli: &Cli, cfg: &ExperimentConfig, split: Part, classes: Option<&str>, count: usize, offset: usize) -> Result<()> {
    let source = SourceData::load(cfg)?;
    let range = match split {
        Part::Train => 0..source.test_start,
        Part::Test => source.test_start..source.images.len(),
        Part::Pooled => 0..source.images.len(),
    };
    let subset: Option<Vec<ClassId>> = classes.map(parse_task).transpose()?;
    let labels = source.images.labels();
    let picked: Vec<usize> = range
        .filter(|&i| subset.as_ref().is_none_or(|s| s.contains(&labels[i])))
        .skip(offset)
        .take(count)
        .collect();
    if picked.len() < count {
        log::warn!("only {} images matched, {count} requested", picked.len());
    }
    let pipeline = FramePipeline::new(cfg)?;
    let frames = picked
        .iter()
        .map(|&i| pipeline.frame(&source.images, i))
        .collect::<Result<Vec<_>>>()?;
    let ds = LabeledDataset::new(frames, picked.iter().map(|&i| labels[i]).collect())?;
    write_frame_dir(&cli.out, &ds)?;
    println!("wrote {} frames to {}", ds.len(), cli.out.display());
    Ok(())
}

fn features(cli: &Cli, cfg: &ExperimentConfig, frames_dir: &Path) -> Result<()> {
    let frames = read_frame_dir(frames_dir)?;
    mkdir(&cli.out)?;
    for (i, d) in describe_frames(&frames, cfg).iter().enumerate() {
        let mut buf = Vec::new();
        write_descriptors(&mut buf, d).expect("writing to memory");
        write(&cli.out.join(format!("frame_{i:06}.surf")), buf)?;
    }
    let labels = fs::read(frames_dir.join(LABELS_FILE)).map_err(|e| Error::Io {
        path: frames_dir.join(LABELS_FILE),
        source: e,
    })?;
    write(&cli.out.join(LABELS_FILE), labels)?;
    println!("wrote descriptors of {} frames to {}", frames.len(), cli.out.display());
    Ok(())
}

fn read_feature_dir(dir: &Path) -> Result<(Vec<Vec<Descriptor>>, Vec<ClassId>)> {
    let labels = read_labels(&dir.join(LABELS_FILE))?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "surf"))
        .collect();
    files.sort();
    if files.len() != labels.len() {
        return Err(Error::Format(format!(
            "{}: {} descriptor files but {} labels",
            dir.display(),
            files.len(),
            labels.len()
        )));
    }
    let sets = files
        .iter()
        .map(|p| {
            let mut f = fs::File::open(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            read_descriptors(&mut f)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((sets, labels))
}

fn fit_vocab(cfg: &ExperimentConfig, sets: &[Vec<Descriptor>], labels: &[ClassId], pool: &[usize]) -> Result<Vocabulary> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let images = balanced_subset(pool, labels, &classes, cfg.vocab.subset);
    let all: Vec<Descriptor> = images.iter().flat_map(|&i| sets[i].iter().copied()).collect();
    let mut v = kmeans_fit(&all, cfg.vocab.k, cfg.master_seed ^ cfg.vocab.seed, cfg.vocab.max_iters, cfg.vocab.rel_tol)?;
    v.meta.n_images_used = images.len();
    Ok(v)
}

fn vocab(cli: &Cli, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let (sets, labels) = read_feature_dir(dir)?;
    let pool: Vec<usize> = (0..sets.len()).collect();
    let v = fit_vocab(cfg, &sets, &labels, &pool)?;
    mkdir(&cli.out)?;
    let path = cli.out.join("vocabulary.bin");
    v.save(&path)?;
    println!(
        "K={} from {} images, {} iterations, inertia {:.4}; wrote {}",
        v.k(),
        v.meta.n_images_used,
        v.meta.iterations_run,
        v.meta.final_inertia,
        path.display()
    );
    Ok(())
}

fn train(cli: &Cli, cfg: &ExperimentConfig, frames_dir: &Path, vocab_path: Option<&Path>) -> Result<()> {
    let frames = read_frame_dir(frames_dir)?;
    let sets = describe_frames(&frames, cfg);
    let labels = frames.labels();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.master_seed));
    let n_val = ((frames.len() as f64 * cfg.val_fraction / (1.0 + cfg.val_fraction)).round() as usize).max(1);
    if n_val >= frames.len() {
        return Err(Error::Capacity(format!("{} frames are too few to hold out validation", frames.len())));
    }
    let (val, tr) = order.split_at(n_val);
    let vocab = match vocab_path {
        Some(p) => Vocabulary::load(p)?,
        None => fit_vocab(cfg, &sets, labels, tr)?,
    };
    let encode = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<ClassId>) {
        (idx.iter().map(|&i| vocab.encode(&sets[i]).weights).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let (xt, yt) = encode(tr);
    let (xv, yv) = encode(val);
    let candidates = train_roster(&xt, &yt, &cfg.classifiers.to_roster()?)?;
    let (model, scores) = select_best(candidates, &xv, &yv)?;
    for s in &scores {
        println!("{:<11} validation accuracy {:.4}", s.name, s.val_accuracy);
    }
    let bundle = Bundle {
        model,
        vocab,
        features: cfg.features.clone(),
    };
    bundle.save(&cli.out)?;
    println!("selected {}; bundle written to {}", bundle.model.name, cli.out.display());
    Ok(())
}

fn eval(cli: &Cli, bundle_dir: &Path, frames_dir: &Path) -> Result<()> {
    let bundle = Bundle::load(bundle_dir)?;
    let frames = read_frame_dir(frames_dir)?;
    let predicted = frames
        .images()
        .iter()
        .map(|f| bundle.classify_frame(f))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("index,label,predicted\n");
    for (i, (l, p)) in frames.labels().iter().zip(&predicted).enumerate() {
        csv.push_str(&format!("{i},{l},{p}\n"));
    }
    mkdir(&cli.out)?;
    write(&cli.out.join("predictions.csv"), csv)?;
    let acc = lensless_core::classifiers::accuracy(&predicted, frames.labels())?;
    println!("{} ({}): accuracy {acc:.4} on {} frames", bundle.model.name, bundle.model.kind(), frames.len());
    Ok(())
}

fn experiment(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    mkdir(&cli.out)?;
    write(&cli.out.join("config.used"), cfg.to_text())?;
    let rows = run_experiment(cfg)?;
    write_results_csv(&rows, &cli.out.join("results.csv"))?;
    plot_results(&rows, &cli.out.join("results.svg"))?;
    println!("{} rows written to {}", rows.len(), cli.out.join("results.csv").display());
    Ok(())
}

fn plot(cli: &Cli, results: &Path) -> Result<()> {
    let rows = read_results_csv(results)?;
    mkdir(&cli.out)?;
    let path = cli.out.join("results.svg");
    plot_results(&rows, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads {n}: {e}")))?;
    }
    let cfg = load_config(cli)?;
    cfg.validate()?;
    match &cli.command {
        Command::Simulate {
            split,
            classes,
            count,
            offset,
        } => simulate(cli, &cfg, *split, classes.as_deref(), *count, *offset),
        Command::Features { frames } => features(cli, &cfg, frames),
        Command::Vocab { features } => vocab(cli, &cfg, features),
        Command::Train { frames, vocab } => train(cli, &cfg, frames, vocab.as_deref()),
        Command::Eval { bundle, frames } => eval(cli, bundle, frames),
        Command::Experiment => experiment(cli, &cfg),
        Command::Plot { results } => plot(cli, results),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
