//! End-to-end runs: train once on a seed cache, then select on any cache
//! with the frozen selector.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cache::{read_cache_with, FeatureStore, LoadOptions};
use crate::core_set::build_core_set;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::kmeans::{fit_kmeans, model_from_centroids, read_centroids, ClusterModel, KMeansConfig};
use crate::selection::{
    score_all, select_by_ratio, select_by_threshold, ManifestProvenance, SelectionManifest,
    SelectionMode,
};
use crate::selector::{confidences, train, Optimizer, SelectorCheckpoint, TrainConfig};

pub const CHECKPOINT_FILE: &str = "selector.ckpt";
pub const CLUSTERS_FILE: &str = "clusters.bin";
pub const CORE_SET_FILE: &str = "core_set.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub mode: SelectionMode,
    pub rho: f64,
    pub tau: f64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            mode: SelectionMode::Ratio,
            rho: 0.15,
            tau: 0.7,
        }
    }
}

impl SelectionParams {
    fn validate(&self) -> Result<()> {
        match self.mode {
            SelectionMode::Ratio if !(self.rho > 0.0 && self.rho <= 1.0) => {
                Err(Error::BadRatio(self.rho))
            }
            SelectionMode::Threshold if !self.tau.is_finite() => {
                Err(Error::Config(format!("invalid threshold {}", self.tau)))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, table: &crate::selection::ScoreTable) -> Result<SelectionManifest> {
        match self.mode {
            SelectionMode::Ratio => select_by_ratio(table, self.rho),
            SelectionMode::Threshold => select_by_threshold(table, self.tau),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub cache: PathBuf,
    pub out_dir: PathBuf,
    pub k: usize,
    pub q: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub selection: SelectionParams,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub n_init: usize,
    pub optimizer: Optimizer,
    pub prenormalize: bool,
    pub timings: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cache: PathBuf::new(),
            out_dir: PathBuf::from("out"),
            k: 20,
            q: 0.5,
            hidden: 512,
            epochs: 3,
            lr: 1e-5,
            batch: 32,
            selection: SelectionParams::default(),
            seed: 0,
            max_iters: 100,
            tol: 1e-6,
            n_init: 1,
            optimizer: Optimizer::Adam,
            prenormalize: false,
            timings: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad value {value:?} for {key}"))),
    }
}

impl PipelineConfig {
    /// Parses a flat `key = value` file. Blank lines and `#` comments are
    /// ignored; relative paths stay relative to the working directory.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_kv_str(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "cache" => self.cache = PathBuf::from(value),
            "out_dir" | "out-dir" => self.out_dir = PathBuf::from(value),
            "k" => self.k = parse(key, value)?,
            "q" => self.q = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "mode" => self.selection.mode = value.parse()?,
            "rho" => self.selection.rho = parse(key, value)?,
            "tau" => self.selection.tau = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "tol" => self.tol = parse(key, value)?,
            "n_init" => self.n_init = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "prenormalize" => self.prenormalize = parse_bool(key, value)?,
            "timings" => self.timings = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.cache.as_os_str().is_empty() {
            return bad("cache path is required");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return bad("q must be in (0, 1]");
        }
        if self.hidden == 0 || self.batch == 0 {
            return bad("hidden and batch must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if self.max_iters == 0 || !(self.tol >= 0.0) {
            return bad("max_iters must be >= 1 and tol >= 0");
        }
        self.selection.validate()
    }

    fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            max_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed,
            n_init: self.n_init,
        }
    }

    fn train(&self) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden,
            epochs: self.epochs,
            lr: self.lr,
            batch: self.batch,
            seed: self.seed,
            optimizer: self.optimizer,
        }
    }

    fn load_options(&self) -> LoadOptions {
        LoadOptions {
            prenormalize_modalities: self.prenormalize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Default)]
struct Stages {
    timings: Vec<StageTiming>,
}

impl Stages {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage))?;
        let seconds = start.elapsed().as_secs_f64();
        tracing::info!(stage, seconds, "stage done");
        self.timings.push(StageTiming {
            stage: stage.to_owned(),
            seconds,
        });
        Ok(out)
    }
}

/// Files written by a run; removed again if the run fails.
#[derive(Debug, Default)]
struct Outputs {
    written: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub checkpoint_path: PathBuf,
    pub manifest_path: PathBuf,
    pub clusters_path: PathBuf,
    pub checkpoint_digest: String,
    pub n: usize,
    pub core_size: usize,
    pub selected: usize,
    pub epoch_losses: Vec<f64>,
    pub timings: Vec<StageTiming>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub checkpoint: SelectorCheckpoint,
    pub manifest: SelectionManifest,
    pub clusters: ClusterModel,
    pub report: RunReport,
}

/// Trains a selector on `config.cache` and selects from the same pool.
///
/// Writes `selector.ckpt`, `clusters.bin`, `core_set.json` and
/// `manifest.jsonl` (plus `timings.json` when requested) to `config.out_dir`.
pub fn run_once(config: &PipelineConfig) -> Result<RunOutput> {
    config.validate()?;
    require_file(&config.cache).map_err(|e| e.in_stage("load"))?;
    prepare_out_dir(&config.out_dir)?;
    let mut stages = Stages::default();
    let mut outputs = Outputs::default();

    let store = stages.run("load", || {
        read_cache_with(&config.cache, config.load_options())
    })?;
    let clusters = stages.run("cluster", || fit_kmeans(store.features(), &config.kmeans()))?;
    let core = stages.run("core_set", || {
        build_core_set(store.features(), &clusters, config.q)
    })?;
    let checkpoint = stages.run("train", || train(&core, &store, &config.train()))?;

    let checkpoint_bytes = checkpoint.to_bytes()?;
    let clusters_bytes = clusters.to_bytes()?;
    let checkpoint_path = config.out_dir.join(CHECKPOINT_FILE);
    let clusters_path = config.out_dir.join(CLUSTERS_FILE);
    outputs.write(checkpoint_path.clone(), &checkpoint_bytes)?;
    outputs.write(clusters_path.clone(), &clusters_bytes)?;
    outputs.write(
        config.out_dir.join(CORE_SET_FILE),
        &serde_json::to_vec_pretty(&core.audit(&clusters))?,
    )?;

    let table = stages.run("score", || score_all(&checkpoint, &store, &clusters))?;
    let mut manifest = stages.run("select", || config.selection.apply(&table))?;
    let checkpoint_digest = sha256_hex(&checkpoint_bytes);
    manifest.provenance = ManifestProvenance {
        cache_digest: store.digest().to_owned(),
        checkpoint_digest: checkpoint_digest.clone(),
        cluster_model_digest: sha256_hex(&clusters_bytes),
        seed: config.seed,
    };
    let manifest_path = config.out_dir.join(MANIFEST_FILE);
    outputs.write(manifest_path.clone(), &manifest.to_jsonl()?)?;

    let report = RunReport {
        checkpoint_path,
        manifest_path,
        clusters_path,
        checkpoint_digest,
        n: store.len(),
        core_size: core.len(),
        selected: manifest.selected_count(),
        epoch_losses: checkpoint.epoch_losses.clone(),
        timings: stages.timings,
    };
    if config.timings {
        outputs.write(
            config.out_dir.join(TIMINGS_FILE),
            &serde_json::to_vec_pretty(&report.timings)?,
        )?;
    }
    outputs.commit();
    Ok(RunOutput {
        checkpoint,
        manifest,
        clusters,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub checkpoint: PathBuf,
    pub cache: PathBuf,
    pub out_dir: PathBuf,
    pub selection: SelectionParams,
    /// Seed of the fresh clustering on the target pool.
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub n_init: usize,
    /// Assign the target pool to these centroids instead of re-clustering.
    pub reuse_centroids: Option<PathBuf>,
    pub prenormalize: bool,
    pub timings: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            checkpoint: PathBuf::new(),
            cache: PathBuf::new(),
            out_dir: PathBuf::from("out"),
            selection: SelectionParams::default(),
            seed: 0,
            max_iters: 100,
            tol: 1e-6,
            n_init: 1,
            reuse_centroids: None,
            prenormalize: false,
            timings: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferReport {
    pub manifest_path: PathBuf,
    pub clusters_path: PathBuf,
    pub n: usize,
    pub selected: usize,
    pub timings: Vec<StageTiming>,
}

#[derive(Debug)]
pub struct TransferOutput {
    pub manifest: SelectionManifest,
    pub clusters: ClusterModel,
    pub report: TransferReport,
}

fn load_checkpoint(path: &Path) -> Result<(SelectorCheckpoint, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((SelectorCheckpoint::from_bytes(&bytes)?, sha256_hex(&bytes)))
}

fn check_dims(checkpoint: &SelectorCheckpoint, store: &FeatureStore) -> Result<()> {
    let width = store.features().cols();
    if checkpoint.input_dim() != width {
        return Err(Error::DimensionMismatch {
            expected: checkpoint.input_dim(),
            got: width,
        });
    }
    Ok(())
}

/// Applies a frozen checkpoint to another cache. The checkpoint file is only
/// read.
pub fn transfer_select(config: &TransferConfig) -> Result<TransferOutput> {
    config.selection.validate()?;
    require_file(&config.checkpoint)?;
    require_file(&config.cache)?;
    prepare_out_dir(&config.out_dir)?;
    let mut stages = Stages::default();
    let mut outputs = Outputs::default();

    let (checkpoint, checkpoint_digest) =
        stages.run("load", || load_checkpoint(&config.checkpoint))?;
    let store = stages.run("load", || {
        read_cache_with(
            &config.cache,
            LoadOptions {
                prenormalize_modalities: config.prenormalize,
            },
        )
    })?;
    check_dims(&checkpoint, &store)?;

    let clusters = stages.run("cluster", || match &config.reuse_centroids {
        Some(path) => {
            let (_, centroids) = read_centroids(path)?;
            model_from_centroids(store.features(), centroids, config.seed)
        }
        None => fit_kmeans(
            store.features(),
            &KMeansConfig {
                k: checkpoint.k(),
                max_iters: config.max_iters,
                tol: config.tol,
                seed: config.seed,
                n_init: config.n_init,
            },
        ),
    })?;
    let clusters_bytes = clusters.to_bytes()?;
    let clusters_path = config.out_dir.join(CLUSTERS_FILE);
    outputs.write(clusters_path.clone(), &clusters_bytes)?;

    let table = stages.run("score", || score_all(&checkpoint, &store, &clusters))?;
    let mut manifest = stages.run("select", || config.selection.apply(&table))?;
    manifest.provenance = ManifestProvenance {
        cache_digest: store.digest().to_owned(),
        checkpoint_digest,
        cluster_model_digest: sha256_hex(&clusters_bytes),
        seed: config.seed,
    };
    let manifest_path = config.out_dir.join(MANIFEST_FILE);
    outputs.write(manifest_path.clone(), &manifest.to_jsonl()?)?;
    let report = TransferReport {
        manifest_path,
        clusters_path,
        n: store.len(),
        selected: manifest.selected_count(),
        timings: stages.timings,
    };
    if config.timings {
        outputs.write(
            config.out_dir.join(TIMINGS_FILE),
            &serde_json::to_vec_pretty(&report.timings)?,
        )?;
    }
    outputs.commit();
    Ok(TransferOutput {
        manifest,
        clusters,
        report,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub id: String,
    pub confidence: f64,
}

/// Confidences of every sample of a cache, without clustering or selection.
pub fn score_cache(
    checkpoint_path: &Path,
    cache_path: &Path,
    opts: LoadOptions,
) -> Result<Vec<ScoreEntry>> {
    let (checkpoint, _) = load_checkpoint(checkpoint_path)?;
    let store = read_cache_with(cache_path, opts)?;
    check_dims(&checkpoint, &store)?;
    let conf = confidences(&checkpoint.params, store.features())?;
    Ok(store
        .ids()
        .iter()
        .zip(conf)
        .map(|(id, confidence)| ScoreEntry {
            id: id.clone(),
            confidence,
        })
        .collect())
}

pub fn write_scores(entries: &[ScoreEntry], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
