use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mocap_core::capture::SimConfig;
use mocap_core::corruption::CorruptionConfig;
use mocap_core::fitter::{FitConfig, FitMode};
use mocap_core::model::{desk_body, desk_body_alternate, BodyModel};

use crate::{Common, ModeArg};

/// Configuration file layout; every section is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub fit: FitConfig,
    pub corruption: CorruptionConfig,
    pub sim: SimConfig,
}

#[derive(Debug, Serialize)]
struct Stage {
    name: String,
    seconds: f64,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    version: &'static str,
    model: String,
    config_paths: Vec<PathBuf>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: u64,
    jobs: usize,
    stages: Vec<Stage>,
}

pub struct Context {
    pub config: FileConfig,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    model_spec: String,
    model: Option<BodyModel>,
    pool: rayon::ThreadPool,
    manifest: RunManifest,
}

fn load_model(spec: &str) -> Result<BodyModel> {
    Ok(match spec {
        "desk" => desk_body(),
        "desk-alternate" => desk_body_alternate(),
        path => BodyModel::load(path).with_context(|| format!("loading model {path}"))?,
    })
}

impl Context {
    pub fn new(command: &str, common: &Common) -> Result<Self> {
        let config: FileConfig = match &common.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing config {}", p.display()))?,
            None => FileConfig::default(),
        };
        let mut config = config;
        let seed = common.seed.or(config.seed).unwrap_or(0);
        config.corruption.seed = seed;
        if let Some(mode) = common.mode {
            config.fit.mode = match mode {
                ModeArg::Plain => FitMode::Plain,
                ModeArg::NoiseAware => FitMode::NoiseAware,
                ModeArg::Barron => FitMode::Barron,
            };
        }
        let jobs = common
            .jobs
            .or(config.jobs)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
        fs::create_dir_all(&common.output).with_context(|| format!("creating {}", common.output.display()))?;
        let manifest = RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION"),
            model: common.model.clone(),
            config_paths: common.config.iter().cloned().collect(),
            inputs: common.input.clone(),
            outputs: Vec::new(),
            seed,
            jobs,
            stages: Vec::new(),
        };
        Ok(Self {
            config,
            seed,
            inputs: common.input.clone(),
            out_dir: common.output.clone(),
            model_spec: common.model.clone(),
            model: None,
            pool,
            manifest,
        })
    }

    pub fn model(&mut self) -> Result<&BodyModel> {
        if self.model.is_none() {
            self.model = Some(load_model(&self.model_spec)?);
        }
        Ok(self.model.as_ref().unwrap())
    }

    pub fn input(&self, what: &str) -> Result<&Path> {
        match self.inputs.as_slice() {
            [one] => Ok(one),
            [] => bail!("--input {what} is required"),
            _ => bail!("expected a single --input ({what})"),
        }
    }

    pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        mocap_core::jsonl::read(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
    }

    pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Maps `f` over `items` on the worker pool; output order follows input order.
    pub fn par_map<T: Sync, U: Send>(&self, items: &[T], f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    pub fn time<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self)?;
        self.manifest.stages.push(Stage { name: name.into(), seconds: start.elapsed().as_secs_f64() });
        Ok(out)
    }

    /// Writes `bytes` to `name` inside the output directory via a temporary
    /// file and a rename.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        atomic_write(&path, bytes)?;
        self.manifest.outputs.push(path.clone());
        Ok(path)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<PathBuf> {
        let mut buf = Vec::new();
        mocap_core::jsonl::write(&mut buf, records)?;
        self.write(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        atomic_write(&self.out_dir.join("manifest.json"), text.as_bytes())
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}
