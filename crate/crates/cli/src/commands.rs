use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fairforge::data::load_manifest;
use fairforge::eval::{build_report, predict, PredictionSet};
use fairforge::image::{DirImageStore, MemoryImageStore};
use fairforge::nn::checkpoint::Checkpoint;
use fairforge::nn::Network;
use fairforge::sam::fit;
use fairforge::synth::{balance_dataset, synthesize_pairs, write_dataset, Dataset};
use fairforge::{DatasetManifest, Error};
use serde_json::json;

use crate::config::RunConfig;
use crate::{Cli, Command};

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.ffg";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments or input data.
    Invalid(String),
    /// Failure while doing the work.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Parse { .. }
            | Error::DuplicateId(_)
            | Error::InvalidArgument(_)
            | Error::EmptyGroup(_)
            | Error::AlreadyFake(_)
            | Error::Shape(_) => CliError::Invalid(msg),
            Error::Csv(ref c) if !c.is_io_error() => CliError::Invalid(msg),
            _ => CliError::Runtime(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

/// Merges the config file with command-line overrides into the effective configuration.
pub fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(CliError::Invalid)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(cfg.train.seed);
    cfg.seed = Some(seed);
    cfg.train.seed = seed;
    if let Some(out) = &cli.out {
        cfg.paths.out = Some(out.clone());
    }
    let input = match &cli.command {
        Command::Synth(a) | Command::Balance(a) | Command::Train(a) => a,
        Command::Predict(a) => {
            if let Some(c) = &a.checkpoint {
                cfg.paths.checkpoint = Some(c.clone());
            }
            &a.input
        }
        Command::Evaluate(a) => {
            if let Some(p) = &a.predictions {
                cfg.paths.predictions = Some(p.clone());
            }
            &a.input
        }
    };
    if let Some(m) = &input.manifest {
        cfg.paths.manifest = Some(m.clone());
    }
    cfg.validate().map_err(CliError::Invalid)?;
    Ok(cfg)
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str, key: &str) -> CliResult<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| invalid(format!("{flag} (or `{key}` in the config) is required")))?;
    if !p.exists() {
        return Err(invalid(format!("{} does not exist", p.display())));
    }
    Ok(p)
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

struct Inputs<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
}

impl Inputs<'_> {
    fn manifest_path(&self) -> CliResult<&Path> {
        required(&self.cfg.paths.manifest, "--manifest", "paths.manifest")
    }

    fn image_root(&self) -> CliResult<PathBuf> {
        match &self.cfg.paths.image_root {
            Some(root) => Ok(root.clone()),
            None => Ok(self
                .manifest_path()?
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_default()),
        }
    }

    /// Rejects an output directory that holds the inputs, so inputs are never overwritten.
    fn guard_dataset_out(&self) -> CliResult<()> {
        let manifest_dir = self.manifest_path()?.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest_dir = if manifest_dir.as_os_str().is_empty() { PathBuf::from(".") } else { manifest_dir };
        for dir in [manifest_dir, self.image_root()?] {
            if same_dir(&dir, &self.out) {
                return Err(invalid(format!(
                    "output directory {} holds the input dataset; choose another --out",
                    self.out.display()
                )));
            }
        }
        Ok(())
    }

    fn load_manifest(&self) -> CliResult<DatasetManifest> {
        Ok(load_manifest(self.manifest_path()?)?)
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve(cli)?;
    let out = cfg
        .paths
        .out
        .clone()
        .ok_or_else(|| invalid("--out (or `paths.out` in the config) is required"))?;
    let inputs = Inputs { cfg: &cfg, out };
    match &cli.command {
        Command::Synth(_) | Command::Balance(_) => {
            inputs.manifest_path()?;
            inputs.guard_dataset_out()?;
        }
        Command::Train(_) => {
            inputs.manifest_path()?;
        }
        Command::Predict(_) => {
            inputs.manifest_path()?;
            required(&cfg.paths.checkpoint, "--checkpoint", "paths.checkpoint")?;
        }
        Command::Evaluate(_) => {
            required(&cfg.paths.predictions, "--predictions", "paths.predictions")?;
            if cfg.paths.manifest.is_some() {
                inputs.manifest_path()?;
            }
        }
    }
    if cli.dry_run {
        print!("{}", cfg.to_pretty_json());
        return Ok(());
    }
    std::fs::create_dir_all(&inputs.out)?;
    match &cli.command {
        Command::Synth(_) => cmd_synth(&inputs)?,
        Command::Balance(_) => cmd_balance(&inputs)?,
        Command::Train(_) => cmd_train(&inputs)?,
        Command::Predict(_) => cmd_predict(&inputs)?,
        Command::Evaluate(_) => cmd_evaluate(&inputs)?,
    }
    std::fs::write(inputs.out.join(EFFECTIVE_CONFIG_FILE), cfg.to_pretty_json())?;
    Ok(())
}

fn write_output_dataset(inputs: &Inputs<'_>, data: &Dataset) -> CliResult<()> {
    let path = write_dataset(&data.manifest, &data.images, &inputs.out)?;
    eprintln!("wrote {} records to {}", data.manifest.len(), path.display());
    Ok(())
}

fn cmd_synth(inputs: &Inputs<'_>) -> CliResult<()> {
    let manifest = inputs.load_manifest()?;
    let store = DirImageStore::new(inputs.image_root()?);
    let seed = inputs.cfg.train.seed;
    let data = synthesize_pairs(&manifest, &store, &inputs.cfg.synth, seed)?;
    write_output_dataset(inputs, &data)
}

fn cmd_balance(inputs: &Inputs<'_>) -> CliResult<()> {
    let manifest = inputs.load_manifest()?;
    let store = DirImageStore::new(inputs.image_root()?);
    let cfg = inputs.cfg;
    let data = balance_dataset(&manifest, &store, &cfg.balance, &cfg.synth, cfg.train.seed)?;
    write_output_dataset(inputs, &data)
}

/// Training provenance embedded in checkpoints; excludes paths so reruns elsewhere match.
fn checkpoint_metadata(cfg: &RunConfig, source: &str, epoch: usize) -> serde_json::Value {
    json!({
        "epoch": epoch,
        "model": cfg.model,
        "seed": cfg.train.seed,
        "source": source,
        "train": cfg.train,
    })
}

fn cmd_train(inputs: &Inputs<'_>) -> CliResult<()> {
    let cfg = inputs.cfg;
    let manifest = inputs.load_manifest()?;
    let images = MemoryImageStore::preload(&manifest, &DirImageStore::new(inputs.image_root()?))?;
    let net = Network::new(cfg.model.clone())?;
    let mut params = net.init_params::<f32>(cfg.train.seed);
    let mut log = BufWriter::new(File::create(inputs.out.join(TRAIN_LOG_FILE))?);
    let epochs = cfg.train.epochs;
    fit(&net, &mut params, &manifest, &images, &cfg.train, |epoch, params| {
        for step in &epoch.steps {
            let line = serde_json::to_string(step)?;
            writeln!(log, "{line}")?;
        }
        eprintln!(
            "epoch {}/{epochs}: mean loss {:.5} ({:.2}s)",
            epoch.epoch,
            epoch.mean_total(),
            epoch.wall_time_secs
        );
        let every = cfg.train.checkpoint_every;
        if every > 0 && epoch.epoch % every == 0 && epoch.epoch < epochs {
            Checkpoint {
                model: cfg.model.clone(),
                params: params.clone(),
                metadata: checkpoint_metadata(cfg, manifest.source_name(), epoch.epoch),
            }
            .save(&inputs.out.join(format!("checkpoint_epoch_{:04}.ffg", epoch.epoch)))?;
        }
        Ok(())
    })?;
    log.flush()?;
    let path = inputs.out.join(CHECKPOINT_FILE);
    Checkpoint {
        model: cfg.model.clone(),
        params,
        metadata: checkpoint_metadata(cfg, manifest.source_name(), epochs),
    }
    .save(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_predict(inputs: &Inputs<'_>) -> CliResult<()> {
    let ckpt_path = required(&inputs.cfg.paths.checkpoint, "--checkpoint", "paths.checkpoint")?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let net = Network::new(ckpt.model.clone())?;
    let manifest = inputs.load_manifest()?;
    let store = DirImageStore::new(inputs.image_root()?);
    let preds = predict(&net, &ckpt.params, &manifest, &store)?;
    let path = inputs.out.join(PREDICTIONS_FILE);
    preds.write_csv(&path)?;
    eprintln!("wrote {} predictions to {}", preds.len(), path.display());
    Ok(())
}

fn cmd_evaluate(inputs: &Inputs<'_>) -> CliResult<()> {
    let cfg = inputs.cfg;
    let pred_path = required(&cfg.paths.predictions, "--predictions", "paths.predictions")?;
    let preds = PredictionSet::read_csv(pred_path)?;
    let manifest = match &cfg.paths.manifest {
        Some(_) => Some(inputs.load_manifest()?),
        None => None,
    };
    if let Some(m) = &manifest {
        let by_id: std::collections::HashMap<&str, _> = m.records().iter().map(|r| (r.id.as_str(), r)).collect();
        for row in preds.rows() {
            let rec = by_id
                .get(row.sample_id.as_str())
                .ok_or_else(|| invalid(format!("prediction `{}` is not in the manifest", row.sample_id)))?;
            if rec.label != row.true_label || rec.group != row.group {
                return Err(invalid(format!(
                    "prediction `{}` disagrees with the manifest on label or group",
                    row.sample_id
                )));
            }
        }
    }
    let name = cfg
        .eval
        .dataset_name
        .clone()
        .or_else(|| manifest.as_ref().map(|m| m.source_name().to_string()))
        .unwrap_or_else(|| {
            pred_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
    let report = build_report(&preds, &name, cfg.eval.threshold)?;
    let path = inputs.out.join(REPORT_FILE);
    std::fs::write(&path, report.to_json())?;
    eprintln!(
        "accuracy {:.4}, max group disparity {:.4}; wrote {}",
        report.overall.accuracy.unwrap_or(f64::NAN),
        report.max_disparity_accuracy,
        path.display()
    );
    Ok(())
}
