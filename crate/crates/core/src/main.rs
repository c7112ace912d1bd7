use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dla_cascade::data::{read_dataset, read_volume, write_dataset, write_volume, generate_dataset, PhantomSpec, Volume};
use dla_cascade::eval::evaluate;
use dla_cascade::infer::{
    derive_threshold, ensemble_predict, postprocess_volume, predict_volume, Connectivity, EnsembleConfig,
    PostprocConfig, DEFAULT_THRESHOLD_PERCENTILE,
};
use dla_cascade::model::Checkpoint;
use dla_cascade::model::CascadeNet;
use dla_cascade::train::{train_ensemble, train_with_progress, TrainConfig};
use dla_cascade::{Error, Result};

#[derive(Parser)]
#[command(name = "dla-cascade", version, about = "Cascaded DLA brain tumor segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset.
    Generate {
        /// PhantomSpec TOML; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model (or one model per fold) on a dataset directory.
    Train {
        dataset: PathBuf,
        /// TrainConfig TOML; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of fold members; 1 trains a single model on everything.
        #[arg(long, default_value_t = 1)]
        members: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a volume with one checkpoint.
    Infer {
        checkpoint: PathBuf,
        volume: PathBuf,
        #[command(flatten)]
        predict: PredictArgs,
    },
    /// Label a volume with the mean probabilities of several checkpoints.
    Ensemble {
        volume: PathBuf,
        /// Comma-separated member checkpoints.
        #[arg(long, value_delimiter = ',', required = true)]
        members: Vec<PathBuf>,
        #[command(flatten)]
        predict: PredictArgs,
    },
    /// Score predicted label volumes against references.
    Evaluate {
        predictions: PathBuf,
        truth: PathBuf,
        /// Directory receiving metrics.csv and metrics.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove small whole-tumor clusters from a label volume.
    Postproc {
        labels: PathBuf,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, default_value_t = 24)]
    extent: usize,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    /// Minimum cluster size in voxels.
    #[arg(long)]
    threshold: Option<usize>,
    /// Derive the threshold from the labels of this dataset directory.
    #[arg(long)]
    threshold_from: Option<PathBuf>,
    #[arg(long, default_value_t = Connectivity::Corners)]
    connectivity: Connectivity,
}

impl FilterArgs {
    fn config(&self) -> Result<Option<PostprocConfig>> {
        let threshold = match (&self.threshold, &self.threshold_from) {
            (Some(_), Some(_)) => return Err(Error::Config("give --threshold or --threshold-from, not both".into())),
            (Some(t), None) => *t,
            (None, Some(dir)) => derive_threshold(&read_dataset(dir)?, DEFAULT_THRESHOLD_PERCENTILE, self.connectivity)?,
            (None, None) => return Ok(None),
        };
        PostprocConfig::new(threshold, self.connectivity).map(Some)
    }
}

fn label_volume(src: &Volume, labels: Vec<u8>, filter: &FilterArgs) -> Result<Volume> {
    let out = Volume::from_labels(src.subject.clone(), src.dims, src.spacing, labels)?;
    match filter.config()? {
        Some(cfg) => postprocess_volume(&out, &cfg),
        None => Ok(out),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, seed, count, out } => {
            let spec: PhantomSpec = config.as_deref().map(read_toml).transpose()?.unwrap_or_default();
            spec.validate()?;
            write_dataset(&generate_dataset(&spec, count, seed)?, &out)?;
            eprintln!("wrote {count} phantoms to {}", out.display());
        }
        Command::Train { dataset, config, seed, members, out } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::read(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let data = read_dataset(&dataset)?;
            std::fs::create_dir_all(&out)?;
            cfg.write(out.join("train.toml"))?;
            if members <= 1 {
                let net = CascadeNet::<f32>::seeded(cfg.cascade_config(), cfg.seed)?;
                let (net, history) = train_with_progress(&data, net, &cfg, |r| {
                    eprintln!("epoch {:>3}  L {:.4}  L3 {:.4}  lr {:.2e}  wd {:.2e}", r.epoch, r.loss, r.l3, r.lr, r.wd)
                })?;
                Checkpoint::from_net(&net).write(out.join("model.ckpt"))?;
                history.save_csv(out.join("history.csv"))?;
            } else {
                for (i, (ck, history)) in train_ensemble::<f32>(&data, &cfg, members)?.into_iter().enumerate() {
                    ck.write(out.join(format!("member_{i}.ckpt")))?;
                    history.save_csv(out.join(format!("history_{i}.csv")))?;
                }
            }
        }
        Command::Infer { checkpoint, volume, predict } => {
            let net = Checkpoint::<f32>::read(&checkpoint)?.to_net()?;
            let vol = read_volume(&volume)?;
            let probs = predict_volume(&vol, &net, predict.extent)?;
            let labels = probs.argmax(Some(&vol.brain_mask()));
            write_volume(&label_volume(&vol, labels, &predict.filter)?, &predict.out)?;
        }
        Command::Ensemble { volume, members, predict } => {
            let nets = EnsembleConfig::new(members).load::<f32>()?;
            let vol = read_volume(&volume)?;
            let probs = ensemble_predict(&vol, &nets, predict.extent)?;
            let labels = probs.argmax(Some(&vol.brain_mask()));
            write_volume(&label_volume(&vol, labels, &predict.filter)?, &predict.out)?;
        }
        Command::Evaluate { predictions, truth, out } => {
            let report = evaluate(&read_dataset(&predictions)?, &read_dataset(&truth)?)?;
            report.save(&out)?;
            for (region, s) in &report.aggregate {
                eprintln!("{}  dice {:.4}  hd95 {:?}", region.name(), s.dice.mean.unwrap_or(f64::NAN), s.hd95.mean);
            }
        }
        Command::Postproc { labels, filter, out } => {
            let vol = read_volume(&labels)?;
            let cfg = filter
                .config()?
                .ok_or_else(|| Error::Config("postproc needs --threshold or --threshold-from".into()))?;
            write_volume(&postprocess_volume(&vol, &cfg)?, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
