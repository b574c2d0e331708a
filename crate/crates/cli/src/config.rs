//! Plain-text experiment configuration: `[section]` headers with `key = value`
//! lines. Every key has a default; unknown sections or keys are rejected.
//!
//! The canonical rendering of a resolved config (see
//! [`ExperimentConfig::canonical`]) is what gets hashed into every CSV header,
//! so identical settings always produce identical artifacts.

use std::path::{Path, PathBuf};

use connflow::connectivity::ConnectivityMode;
use connflow::data::{
    base_task_from_rows, downscale, load_idx, permuted_tasks, split_tasks,
    synthetic_gaussian_tasks, Provenance, TaskDataset,
};
use connflow::error::{Error, Result};
use connflow::masking::{PruneConfig, PrunePolicy};
use connflow::nn::{Activation, LayerSpec, Network};
use connflow::protocol::{LabelEncoding, SequenceOptions, TrainConfig};

pub const DATA_DIR_ENV: &str = "CONNFLOW_DATA_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSection {
    /// `synthetic`, `permuted`, or `split`.
    pub kind: String,
    pub num_tasks: usize,
    pub seed: u64,
    pub train_per_task: usize,
    pub eval_per_task: usize,
    /// Average-pooling factor applied to IDX images (28 -> 14 at factor 2).
    pub downscale: usize,
    /// Synthetic base: class count.
    pub classes: usize,
    /// Synthetic base: input dimension.
    pub dim: usize,
    /// Synthetic base: class-mean sphere radius.
    pub separation: f64,
    /// Split kind: `;`-separated class groups, e.g. `0,1;2,3`. Empty means
    /// equal consecutive chunks.
    pub partitions: String,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: "permuted".into(),
            num_tasks: 5,
            seed: 11,
            train_per_task: 2000,
            eval_per_task: 500,
            downscale: 2,
            classes: 10,
            dim: 64,
            separation: 3.0,
            partitions: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSection {
    /// Comma-separated hidden layer widths.
    pub hidden: Vec<usize>,
    /// Hidden activation: `relu`, `tanh`, or `identity`.
    pub activation: String,
    pub bias: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: "relu".into(),
            bias: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub convergence_eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 15,
            finetune_epochs: 5,
            lr: 0.05,
            batch_size: 32,
            convergence_eps: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneSection {
    pub base_fraction: f64,
    pub n: usize,
    pub k: f64,
    pub policy: String,
    pub exempt_final_layer: bool,
}

impl Default for PruneSection {
    fn default() -> Self {
        Self {
            base_fraction: 0.8,
            n: 0,
            k: 0.0,
            policy: "none".into(),
            exempt_final_layer: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivitySection {
    pub probe_batch: usize,
    pub per_class: bool,
    /// Optional reporting threshold in `[0,1]`; empty disables it.
    pub eta: Option<f64>,
    /// Also emit the per-pair correlation dump.
    pub long_form: bool,
}

impl Default for ConnectivitySection {
    fn default() -> Self {
        Self {
            probe_batch: 512,
            per_class: true,
            eta: None,
            long_form: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSection {
    /// `index_plus_one` or `unweighted`.
    pub encoding: String,
    pub lambda_iters: usize,
    pub lambda_tol: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            encoding: "index_plus_one".into(),
            lambda_iters: 200,
            lambda_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub trials: usize,
    pub seed: u64,
    pub seed_offset: u64,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            trials: 1,
            seed: 7,
            seed_offset: 0,
            out: PathBuf::from("runs/run"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub prune: PruneSection,
    pub connectivity: ConnectivitySection,
    pub metrics: MetricsSection,
    pub run: RunSection,
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!("[{section}] {key}: cannot parse {value:?}"))
    })
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!(
            "[{section}] {key}: expected true|false, got {other:?}"
        ))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses overrides on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                match section.as_str() {
                    "dataset" | "network" | "train" | "prune" | "connectivity" | "metrics"
                    | "run" => {}
                    other => {
                        return Err(Error::Config(format!(
                            "line {}: unknown section [{other}]",
                            lineno + 1
                        )))
                    }
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got {line:?}",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value).map_err(|e| {
                Error::Config(format!("line {}: {e}", lineno + 1))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let unknown = || {
            Err(Error::Config(format!(
                "unknown key '{key}' in section [{section}]"
            )))
        };
        match section {
            "dataset" => match key {
                "kind" => self.dataset.kind = value.to_string(),
                "num_tasks" => self.dataset.num_tasks = parse_num(section, key, value)?,
                "seed" => self.dataset.seed = parse_num(section, key, value)?,
                "train_per_task" => self.dataset.train_per_task = parse_num(section, key, value)?,
                "eval_per_task" => self.dataset.eval_per_task = parse_num(section, key, value)?,
                "downscale" => self.dataset.downscale = parse_num(section, key, value)?,
                "classes" => self.dataset.classes = parse_num(section, key, value)?,
                "dim" => self.dataset.dim = parse_num(section, key, value)?,
                "separation" => self.dataset.separation = parse_num(section, key, value)?,
                "partitions" => self.dataset.partitions = value.to_string(),
                _ => return unknown(),
            },
            "network" => match key {
                "hidden" => {
                    self.network.hidden = value
                        .split(',')
                        .map(|s| parse_num(section, key, s.trim()))
                        .collect::<Result<_>>()?;
                }
                "activation" => self.network.activation = value.to_string(),
                "bias" => self.network.bias = parse_bool(section, key, value)?,
                _ => return unknown(),
            },
            "train" => match key {
                "epochs" => self.train.epochs = parse_num(section, key, value)?,
                "finetune_epochs" => self.train.finetune_epochs = parse_num(section, key, value)?,
                "lr" => self.train.lr = parse_num(section, key, value)?,
                "batch_size" => self.train.batch_size = parse_num(section, key, value)?,
                "convergence_eps" => self.train.convergence_eps = parse_num(section, key, value)?,
                _ => return unknown(),
            },
            "prune" => match key {
                "base_fraction" => self.prune.base_fraction = parse_num(section, key, value)?,
                "n" => self.prune.n = parse_num(section, key, value)?,
                "k" => self.prune.k = parse_num(section, key, value)?,
                "policy" => self.prune.policy = value.to_string(),
                "exempt_final_layer" => {
                    self.prune.exempt_final_layer = parse_bool(section, key, value)?
                }
                _ => return unknown(),
            },
            "connectivity" => match key {
                "probe_batch" => self.connectivity.probe_batch = parse_num(section, key, value)?,
                "per_class" => self.connectivity.per_class = parse_bool(section, key, value)?,
                "eta" => {
                    self.connectivity.eta = if value.is_empty() {
                        None
                    } else {
                        Some(parse_num(section, key, value)?)
                    }
                }
                "long_form" => self.connectivity.long_form = parse_bool(section, key, value)?,
                _ => return unknown(),
            },
            "metrics" => match key {
                "encoding" => self.metrics.encoding = value.to_string(),
                "lambda_iters" => self.metrics.lambda_iters = parse_num(section, key, value)?,
                "lambda_tol" => self.metrics.lambda_tol = parse_num(section, key, value)?,
                _ => return unknown(),
            },
            "run" => match key {
                "trials" => self.run.trials = parse_num(section, key, value)?,
                "seed" => self.run.seed = parse_num(section, key, value)?,
                "seed_offset" => self.run.seed_offset = parse_num(section, key, value)?,
                "out" => self.run.out = PathBuf::from(value),
                _ => return unknown(),
            },
            "" => {
                return Err(Error::Config(format!(
                    "key '{key}' appears before any [section] header"
                )))
            }
            other => return Err(Error::Config(format!("unknown section [{other}]"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match self.dataset.kind.as_str() {
            "synthetic" | "permuted" | "split" => {}
            other => {
                return Err(Error::Config(format!(
                    "[dataset] kind must be synthetic|permuted|split, got {other:?}"
                )))
            }
        }
        if self.dataset.num_tasks == 0 {
            return Err(Error::Config("[dataset] num_tasks must be >= 1".into()));
        }
        self.hidden_activation()?;
        PrunePolicy::parse(&self.prune.policy)?;
        LabelEncoding::parse(&self.metrics.encoding)?;
        if let Some(eta) = self.connectivity.eta {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::Config(format!("[connectivity] eta {eta} outside [0,1]")));
            }
        }
        if self.run.trials == 0 {
            return Err(Error::Config("[run] trials must be >= 1".into()));
        }
        self.to_prune_config()?.validate()?;
        self.to_train_config(0).validate()?;
        Ok(())
    }

    fn hidden_activation(&self) -> Result<Activation> {
        match self.network.activation.as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!(
                "[network] activation must be relu|tanh|identity, got {other:?}"
            ))),
        }
    }

    /// The resolved config in a fixed order; input of the config hash.
    pub fn canonical(&self) -> String {
        let d = &self.dataset;
        let n = &self.network;
        let t = &self.train;
        let p = &self.prune;
        let c = &self.connectivity;
        let m = &self.metrics;
        let r = &self.run;
        let hidden: Vec<String> = n.hidden.iter().map(|h| h.to_string()).collect();
        format!(
            "[dataset]\nkind = {}\nnum_tasks = {}\nseed = {}\ntrain_per_task = {}\n\
             eval_per_task = {}\ndownscale = {}\nclasses = {}\ndim = {}\nseparation = {}\n\
             partitions = {}\n\n[network]\nhidden = {}\nactivation = {}\nbias = {}\n\n\
             [train]\nepochs = {}\nfinetune_epochs = {}\nlr = {}\nbatch_size = {}\n\
             convergence_eps = {}\n\n[prune]\nbase_fraction = {}\nn = {}\nk = {}\npolicy = {}\n\
             exempt_final_layer = {}\n\n[connectivity]\nprobe_batch = {}\nper_class = {}\n\
             eta = {}\nlong_form = {}\n\n[metrics]\nencoding = {}\nlambda_iters = {}\n\
             lambda_tol = {}\n\n[run]\ntrials = {}\nseed = {}\nseed_offset = {}\nout = {}\n",
            d.kind,
            d.num_tasks,
            d.seed,
            d.train_per_task,
            d.eval_per_task,
            d.downscale,
            d.classes,
            d.dim,
            d.separation,
            d.partitions,
            hidden.join(","),
            n.activation,
            n.bias,
            t.epochs,
            t.finetune_epochs,
            t.lr,
            t.batch_size,
            t.convergence_eps,
            p.base_fraction,
            p.n,
            p.k,
            p.policy,
            p.exempt_final_layer,
            c.probe_batch,
            c.per_class,
            c.eta.map_or(String::new(), |v| v.to_string()),
            c.long_form,
            m.encoding,
            m.lambda_iters,
            m.lambda_tol,
            r.trials,
            r.seed,
            r.seed_offset,
            r.out.display(),
        )
    }

    pub fn config_hash(&self) -> u64 {
        connflow::report::fnv1a64(self.canonical().as_bytes())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.run
            .seed
            .wrapping_add(self.run.seed_offset)
            .wrapping_add(trial as u64)
    }

    pub fn to_prune_config(&self) -> Result<PruneConfig> {
        Ok(PruneConfig {
            base_fraction: self.prune.base_fraction,
            n: self.prune.n,
            k: self.prune.k,
            policy: PrunePolicy::parse(&self.prune.policy)?,
        })
    }

    pub fn to_train_config(&self, trial_seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            finetune_epochs: self.train.finetune_epochs,
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            convergence_eps: self.train.convergence_eps,
            seed: trial_seed,
        }
    }

    pub fn to_sequence_options(&self) -> Result<SequenceOptions> {
        Ok(SequenceOptions {
            probe_batch: self.connectivity.probe_batch,
            mode: if self.connectivity.per_class {
                ConnectivityMode::PerClass
            } else {
                ConnectivityMode::Pooled
            },
            encoding: LabelEncoding::parse(&self.metrics.encoding)?,
            eta_threshold: self.connectivity.eta,
            exempt_final_layer: self.prune.exempt_final_layer,
            lambda_iters: self.metrics.lambda_iters,
            lambda_tol: self.metrics.lambda_tol,
        })
    }

    pub fn parsed_partitions(&self) -> Result<Vec<Vec<usize>>> {
        if self.dataset.partitions.is_empty() {
            // equal consecutive chunks over the class range
            let classes = self.dataset.classes;
            let tasks = self.dataset.num_tasks;
            if classes % tasks != 0 {
                return Err(Error::Config(format!(
                    "[dataset] partitions empty and {classes} classes do not split into {tasks} tasks"
                )));
            }
            let size = classes / tasks;
            return Ok((0..tasks)
                .map(|t| (t * size..(t + 1) * size).collect())
                .collect());
        }
        self.dataset
            .partitions
            .split(';')
            .map(|group| {
                group
                    .split(',')
                    .map(|c| parse_num("dataset", "partitions", c.trim()))
                    .collect()
            })
            .collect()
    }

    /// Builds the network for the given task set and trial seed.
    pub fn build_network(&self, tasks: &[TaskDataset], trial_seed: u64) -> Result<Network> {
        let input_dim = tasks[0].input_dim;
        let output_dim = tasks.iter().map(|t| t.num_classes).max().unwrap();
        let act = self.hidden_activation()?;
        let mut dims = vec![input_dim];
        dims.extend(&self.network.hidden);
        dims.push(output_dim);
        let specs: Vec<LayerSpec> = dims
            .windows(2)
            .enumerate()
            .map(|(i, pair)| LayerSpec {
                in_dim: pair[0],
                out_dim: pair[1],
                activation: if i + 2 == dims.len() {
                    Activation::SoftmaxOutput
                } else {
                    act
                },
            })
            .collect();
        Network::init(&specs, trial_seed, self.network.bias)
    }
}

/// Where a base dataset came from, for the manifest.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub kind: String,
    pub provenance: Provenance,
    pub detail: Vec<String>,
}

impl DatasetManifest {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("kind = {}\n", self.kind));
        out.push_str(&format!("provenance = {}\n", self.provenance.name()));
        for line in &self.detail {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

/// Builds the task sequence for a config. IDX digits are used for the
/// `permuted`/`split` kinds when `CONNFLOW_DATA_DIR` holds them; otherwise a
/// synthetic Gaussian base stands in so everything runs offline.
pub fn build_tasks(
    cfg: &ExperimentConfig,
    data_dir: Option<&Path>,
) -> Result<(Vec<TaskDataset>, DatasetManifest)> {
    let d = &cfg.dataset;
    match d.kind.as_str() {
        "synthetic" => {
            let tasks = synthetic_gaussian_tasks(
                d.num_tasks,
                d.classes,
                d.dim,
                d.separation,
                d.train_per_task,
                d.eval_per_task,
                d.seed,
            )?;
            let manifest = DatasetManifest {
                kind: d.kind.clone(),
                provenance: Provenance::Synthetic,
                detail: vec![
                    format!("seed = {}", d.seed),
                    format!("num_tasks = {}", d.num_tasks),
                    format!("classes = {}", d.classes),
                    format!("dim = {}", d.dim),
                    format!("separation = {}", d.separation),
                    format!("train_per_task = {}", d.train_per_task),
                    format!("eval_per_task = {}", d.eval_per_task),
                ],
            };
            Ok((tasks, manifest))
        }
        "permuted" => {
            let (base, mut detail) = build_base(cfg, data_dir)?;
            let provenance = base.provenance;
            let (tasks, specs) = permuted_tasks(&base, d.num_tasks, d.seed)?;
            detail.push(format!("permutation_seed = {}", d.seed));
            detail.push(format!(
                "permutation_seeds = {}",
                specs
                    .iter()
                    .map(|s| s.seed.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ));
            Ok((
                tasks,
                DatasetManifest {
                    kind: d.kind.clone(),
                    provenance,
                    detail,
                },
            ))
        }
        "split" => {
            let (base, mut detail) = build_base(cfg, data_dir)?;
            let provenance = base.provenance;
            let partitions = cfg.parsed_partitions()?;
            if partitions.len() != d.num_tasks {
                return Err(Error::Config(format!(
                    "{} partitions for num_tasks = {}",
                    partitions.len(),
                    d.num_tasks
                )));
            }
            let tasks = split_tasks(&base, &partitions)?;
            detail.push(format!(
                "partitions = {}",
                partitions
                    .iter()
                    .map(|p| p.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","))
                    .collect::<Vec<_>>()
                    .join(";")
            ));
            Ok((
                tasks,
                DatasetManifest {
                    kind: d.kind.clone(),
                    provenance,
                    detail,
                },
            ))
        }
        other => Err(Error::Config(format!("unknown dataset kind {other:?}"))),
    }
}

/// The base pool behind `permuted`/`split`: downscaled IDX digits when
/// available, synthetic Gaussian rows otherwise.
fn build_base(
    cfg: &ExperimentConfig,
    data_dir: Option<&Path>,
) -> Result<(TaskDataset, Vec<String>)> {
    let d = &cfg.dataset;
    if let Some(dir) = data_dir {
        let images = dir.join("train-images-idx3-ubyte");
        let labels = dir.join("train-labels-idx1-ubyte");
        if images.is_file() && labels.is_file() {
            let raw = load_idx(&images, &labels)?;
            let small = downscale(&raw.images, d.downscale)?;
            let shape = small.shape().to_vec();
            let flat = connflow::Tensor::new(
                vec![shape[0], shape[1] * shape[2]],
                small.data().to_vec(),
            )?;
            let classes = raw.labels.iter().copied().max().unwrap_or(0) + 1;
            let base = base_task_from_rows(
                flat,
                raw.labels,
                classes,
                d.train_per_task,
                d.eval_per_task,
                Provenance::Idx,
            )?;
            let detail = vec![
                format!("images = {}", images.display()),
                format!("labels = {}", labels.display()),
                format!("downscale = {}", d.downscale),
                format!("input_dim = {}", base.input_dim),
                format!("train_per_task = {}", d.train_per_task),
                format!("eval_per_task = {}", d.eval_per_task),
            ];
            return Ok((base, detail));
        }
        log::warn!(
            "{} does not hold train-images-idx3-ubyte/train-labels-idx1-ubyte; using a synthetic base",
            dir.display()
        );
    }
    let base = synthetic_gaussian_tasks(
        1,
        d.classes,
        d.dim,
        d.separation,
        d.train_per_task,
        d.eval_per_task,
        d.seed,
    )?
    .remove(0);
    let detail = vec![
        "base = synthetic (no IDX files found)".to_string(),
        format!("seed = {}", d.seed),
        format!("classes = {}", d.classes),
        format!("dim = {}", d.dim),
        format!("separation = {}", d.separation),
        format!("train_per_task = {}", d.train_per_task),
        format!("eval_per_task = {}", d.eval_per_task),
    ];
    Ok((base, detail))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::parse(
            "[dataset]\nkind = synthetic\nnum_tasks = 3\n\n[prune]\npolicy = top\nn = 2\nk = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.dataset.kind, "synthetic");
        assert_eq!(cfg.dataset.num_tasks, 3);
        assert_eq!(cfg.prune.policy, "top");
        assert_eq!(cfg.prune.n, 2);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ExperimentConfig::parse("[dataset]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn unknown_section_is_rejected() {
        assert!(ExperimentConfig::parse("[nope]\nx = 1\n").is_err());
    }

    #[test]
    fn canonical_round_trips_through_parse() {
        let cfg = ExperimentConfig::parse(
            "[dataset]\nkind = split\npartitions = 0,1;2,3\nnum_tasks = 2\nclasses = 4\n\n[connectivity]\neta = 0.5\n",
        )
        .unwrap();
        let replayed = ExperimentConfig::parse(&cfg.canonical()).unwrap();
        assert_eq!(cfg, replayed);
        assert_eq!(cfg.config_hash(), replayed.config_hash());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::parse("").unwrap();
        let b = ExperimentConfig::parse("[train]\nepochs = 16\n").unwrap();
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn auto_partitions_chunk_classes() {
        let cfg = ExperimentConfig::parse(
            "[dataset]\nkind = split\nnum_tasks = 5\nclasses = 10\n",
        )
        .unwrap();
        let parts = cfg.parsed_partitions().unwrap();
        assert_eq!(parts.len(), 5);
        assert_eq!(parts[0], vec![0, 1]);
        assert_eq!(parts[4], vec![8, 9]);
    }

    #[test]
    fn synthetic_tasks_build_offline() {
        let cfg = ExperimentConfig::parse(
            "[dataset]\nkind = synthetic\nnum_tasks = 2\ntrain_per_task = 24\neval_per_task = 12\nclasses = 2\ndim = 5\n",
        )
        .unwrap();
        let (tasks, manifest) = build_tasks(&cfg, None).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(manifest.provenance, Provenance::Synthetic);
    }

    #[test]
    fn permuted_falls_back_to_synthetic_base() {
        let cfg = ExperimentConfig::parse(
            "[dataset]\nkind = permuted\nnum_tasks = 3\ntrain_per_task = 20\neval_per_task = 10\nclasses = 2\ndim = 6\n",
        )
        .unwrap();
        let (tasks, manifest) = build_tasks(&cfg, None).unwrap();
        assert_eq!(tasks.len(), 3);
        assert_eq!(manifest.provenance, Provenance::Synthetic);
        // task 0 is the identity permutation of the base
        assert_eq!(tasks[0].train_inputs.rows(), 20);
    }

    #[test]
    fn network_matches_task_shape() {
        let cfg = ExperimentConfig::parse(
            "[dataset]\nkind = synthetic\nnum_tasks = 1\ntrain_per_task = 12\neval_per_task = 6\nclasses = 3\ndim = 7\n\n[network]\nhidden = 9,5\n",
        )
        .unwrap();
        let (tasks, _) = build_tasks(&cfg, None).unwrap();
        let net = cfg.build_network(&tasks, 1).unwrap();
        assert_eq!(net.num_layers(), 3);
        assert_eq!(net.input_dim(), 7);
        assert_eq!(net.output_dim(), 3);
    }
}
