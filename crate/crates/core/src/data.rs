//! Task construction: IDX digit loading with downscaling, pixel-permutation
//! task sequences, synthetic Gaussian class tasks, and class-split sequences.

use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Idx,
    Synthetic,
}

impl Provenance {
    pub fn name(&self) -> &'static str {
        match self {
            Provenance::Idx => "idx",
            Provenance::Synthetic => "synthetic",
        }
    }
}

/// One task: train and eval splits over a shared input space.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub task_id: usize,
    /// `n_train x input_dim`.
    pub train_inputs: Tensor,
    pub train_labels: Vec<usize>,
    /// `n_eval x input_dim`, disjoint from the train split by construction.
    pub eval_inputs: Tensor,
    pub eval_labels: Vec<usize>,
    pub num_classes: usize,
    pub input_dim: usize,
    pub provenance: Provenance,
}

impl TaskDataset {
    fn validate(&self) -> Result<()> {
        if self.train_inputs.cols() != self.input_dim || self.eval_inputs.cols() != self.input_dim {
            return Err(Error::Dimension("split width != input_dim".into()));
        }
        if self.train_inputs.rows() != self.train_labels.len()
            || self.eval_inputs.rows() != self.eval_labels.len()
        {
            return Err(Error::Input("label count != row count".into()));
        }
        if let Some(&y) = self
            .train_labels
            .iter()
            .chain(&self.eval_labels)
            .find(|&&y| y >= self.num_classes)
        {
            return Err(Error::Input(format!(
                "label {y} >= num_classes {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        self.train_labels.len()
    }

    pub fn n_eval(&self) -> usize {
        self.eval_labels.len()
    }
}

/// Raw digit images (`n x side x side`, values in `[0,1]`) with labels.
#[derive(Debug, Clone)]
pub struct RawDigits {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl RawDigits {
    pub fn side(&self) -> usize {
        self.images.shape()[1]
    }

    /// Flattens images to `n x side*side` rows.
    pub fn flatten(&self) -> Tensor {
        let shape = self.images.shape();
        Tensor::from_parts(
            vec![shape[0], shape[1] * shape[2]],
            self.images.data().to_vec(),
        )
    }
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.offset += n as u64;
        Ok(n)
    }
}

fn read_u32<R: Read>(r: &mut CountingReader<R>, what: &str) -> Result<u32> {
    let at = r.offset;
    r.read_u32::<BigEndian>().map_err(|_| Error::Format {
        offset: at,
        message: format!("truncated while reading {what}"),
    })
}

/// Parses an IDX image/label pair: big-endian magic, dimension sizes, then
/// unsigned bytes. Pixels are scaled into `[0,1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawDigits> {
    let mut ir = CountingReader::new(std::io::BufReader::new(std::fs::File::open(images_path)?));
    let magic = read_u32(&mut ir, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_u32(&mut ir, "image count")? as usize;
    let rows = read_u32(&mut ir, "image rows")? as usize;
    let cols = read_u32(&mut ir, "image cols")? as usize;
    let mut bytes = vec![0u8; n * rows * cols];
    let at = ir.offset;
    ir.read_exact(&mut bytes).map_err(|_| Error::Format {
        offset: at,
        message: format!("truncated image payload, wanted {} bytes", bytes.len()),
    })?;
    let pixels: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();

    let mut lr = CountingReader::new(std::io::BufReader::new(std::fs::File::open(labels_path)?));
    let magic = read_u32(&mut lr, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let ln = read_u32(&mut lr, "label count")? as usize;
    if ln != n {
        return Err(Error::Input(format!("{n} images but {ln} labels")));
    }
    let mut lbytes = vec![0u8; ln];
    let at = lr.offset;
    lr.read_exact(&mut lbytes).map_err(|_| Error::Format {
        offset: at,
        message: format!("truncated label payload, wanted {ln} bytes"),
    })?;
    Ok(RawDigits {
        images: Tensor::from_parts(vec![n, rows, cols], pixels),
        labels: lbytes.into_iter().map(|b| b as usize).collect(),
    })
}

/// Non-overlapping average pooling of square images by an integer factor.
pub fn downscale(images: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Input("downscale factor must be >= 1".into()));
    }
    let shape = images.shape();
    if shape.len() != 3 {
        return Err(Error::Dimension("downscale expects n x h x w images".into()));
    }
    let (n, h, w) = (shape[0], shape[1], shape[2]);
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::Input(format!(
            "side {h}x{w} not divisible by factor {factor}"
        )));
    }
    if factor == 1 {
        return Ok(images.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let src = images.data();
    let mut out = vec![0.0; n * oh * ow];
    for img in 0..n {
        for r in 0..oh {
            for c in 0..ow {
                let mut acc = 0.0;
                for dr in 0..factor {
                    for dc in 0..factor {
                        acc += src[img * h * w + (r * factor + dr) * w + (c * factor + dc)];
                    }
                }
                out[img * oh * ow + r * ow + c] = acc * inv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, oh, ow], out))
}

/// A verified pixel-index bijection.
#[derive(Debug, Clone)]
pub struct PermutationSpec {
    pub seed: u64,
    pub permutation: Vec<usize>,
}

impl PermutationSpec {
    pub fn identity(dim: usize) -> Self {
        Self {
            seed: 0,
            permutation: (0..dim).collect(),
        }
    }

    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut permutation: Vec<usize> = (0..dim).collect();
        permutation.shuffle(&mut rng);
        Self { seed, permutation }
    }

    pub fn verify(&self) -> Result<()> {
        let mut seen = vec![false; self.permutation.len()];
        for &p in &self.permutation {
            if p >= seen.len() || seen[p] {
                return Err(Error::State(format!("permutation is not a bijection at {p}")));
            }
            seen[p] = true;
        }
        Ok(())
    }

    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.permutation.len()];
        for (i, &p) in self.permutation.iter().enumerate() {
            inv[p] = i;
        }
        inv
    }

    /// Applies the permutation to every row: `out[r][i] = rows[r][perm[i]]`.
    pub fn apply(&self, rows: &Tensor) -> Tensor {
        let (n, d) = (rows.rows(), rows.cols());
        assert_eq!(d, self.permutation.len());
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let src = rows.row(r);
            let dst = &mut out[r * d..(r + 1) * d];
            for (i, &p) in self.permutation.iter().enumerate() {
                dst[i] = src[p];
            }
        }
        Tensor::from_parts(vec![n, d], out)
    }
}

/// Builds the permuted task sequence: task 0 keeps the identity permutation,
/// tasks `1..num_tasks` apply independent seeded pixel permutations to every
/// image of the base task. Labels are unchanged.
pub fn permuted_tasks(
    base: &TaskDataset,
    num_tasks: usize,
    seed: u64,
) -> Result<(Vec<TaskDataset>, Vec<PermutationSpec>)> {
    if num_tasks == 0 {
        return Err(Error::Config("num_tasks must be >= 1".into()));
    }
    base.validate()?;
    let dim = base.input_dim;
    let mut tasks = Vec::with_capacity(num_tasks);
    let mut specs = Vec::with_capacity(num_tasks);
    for t in 0..num_tasks {
        let spec = if t == 0 {
            PermutationSpec::identity(dim)
        } else {
            PermutationSpec::random(dim, seed.wrapping_add(t as u64))
        };
        spec.verify()?;
        tasks.push(TaskDataset {
            task_id: t,
            train_inputs: spec.apply(&base.train_inputs),
            train_labels: base.train_labels.clone(),
            eval_inputs: spec.apply(&base.eval_inputs),
            eval_labels: base.eval_labels.clone(),
            num_classes: base.num_classes,
            input_dim: dim,
            provenance: base.provenance,
        });
        specs.push(spec);
    }
    Ok((tasks, specs))
}

/// Synthetic Gaussian class tasks: per task, class means drawn uniformly on a
/// sphere of radius `separation`, unit-variance isotropic samples around them.
pub fn synthetic_gaussian_tasks(
    num_tasks: usize,
    num_classes: usize,
    dim: usize,
    separation: f64,
    train_size: usize,
    eval_size: usize,
    seed: u64,
) -> Result<Vec<TaskDataset>> {
    if num_tasks == 0 || num_classes < 2 || dim == 0 {
        return Err(Error::Config(
            "need num_tasks >= 1, num_classes >= 2, dim >= 1".into(),
        ));
    }
    if !(separation >= 0.0) {
        return Err(Error::Config(format!("separation must be >= 0, got {separation}")));
    }
    if train_size == 0 || eval_size == 0 {
        return Err(Error::Config("train and eval sizes must be >= 1".into()));
    }
    let mut tasks = Vec::with_capacity(num_tasks);
    for t in 0..num_tasks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9u64.wrapping_mul(t as u64 + 1)));
        let means: Vec<Vec<f64>> = (0..num_classes)
            .map(|_| {
                let mut v: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                for x in &mut v {
                    *x *= separation / norm;
                }
                v
            })
            .collect();
        let sample_split = |count: usize, rng: &mut ChaCha8Rng| {
            let mut inputs = Vec::with_capacity(count * dim);
            let mut labels = Vec::with_capacity(count);
            for i in 0..count {
                let class = i % num_classes;
                labels.push(class);
                for d in 0..dim {
                    inputs.push(means[class][d] + standard_normal(rng));
                }
            }
            (Tensor::from_parts(vec![count, dim], inputs), labels)
        };
        let (train_inputs, train_labels) = sample_split(train_size, &mut rng);
        let (eval_inputs, eval_labels) = sample_split(eval_size, &mut rng);
        let task = TaskDataset {
            task_id: t,
            train_inputs,
            train_labels,
            eval_inputs,
            eval_labels,
            num_classes,
            input_dim: dim,
            provenance: Provenance::Synthetic,
        };
        task.validate()?;
        tasks.push(task);
    }
    Ok(tasks)
}

// Box-Muller; two uniforms -> one normal. Deterministic for a seeded rng.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Splits a base task into one task per class subset, remapping labels to
/// `0..subset_len`. Partitions must be disjoint and nonempty.
pub fn split_tasks(base: &TaskDataset, partitions: &[Vec<usize>]) -> Result<Vec<TaskDataset>> {
    base.validate()?;
    if partitions.is_empty() {
        return Err(Error::Config("need at least one partition".into()));
    }
    let mut seen = vec![false; base.num_classes];
    for part in partitions {
        if part.is_empty() {
            return Err(Error::Config("empty partition".into()));
        }
        for &c in part {
            if c >= base.num_classes {
                return Err(Error::Config(format!(
                    "class {c} out of range ({} classes)",
                    base.num_classes
                )));
            }
            if seen[c] {
                return Err(Error::Config(format!("class {c} appears in two partitions")));
            }
            seen[c] = true;
        }
    }
    let mut tasks = Vec::with_capacity(partitions.len());
    for (t, part) in partitions.iter().enumerate() {
        let remap: std::collections::HashMap<usize, usize> =
            part.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let pick = |inputs: &Tensor, labels: &[usize]| {
            let idx: Vec<usize> = (0..labels.len())
                .filter(|&i| remap.contains_key(&labels[i]))
                .collect();
            let new_labels: Vec<usize> = idx.iter().map(|&i| remap[&labels[i]]).collect();
            (inputs.select_rows(&idx), new_labels)
        };
        let (train_inputs, train_labels) = pick(&base.train_inputs, &base.train_labels);
        let (eval_inputs, eval_labels) = pick(&base.eval_inputs, &base.eval_labels);
        let task = TaskDataset {
            task_id: t,
            train_inputs,
            train_labels,
            eval_inputs,
            eval_labels,
            num_classes: part.len(),
            input_dim: base.input_dim,
            provenance: base.provenance,
        };
        task.validate()?;
        tasks.push(task);
    }
    Ok(tasks)
}

/// Packages flat rows into a base task with the first `train_size` rows as
/// train and the next `eval_size` as eval.
pub fn base_task_from_rows(
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    train_size: usize,
    eval_size: usize,
    provenance: Provenance,
) -> Result<TaskDataset> {
    if inputs.rows() < train_size + eval_size {
        return Err(Error::InsufficientData(format!(
            "{} rows available, need {}",
            inputs.rows(),
            train_size + eval_size
        )));
    }
    let train_idx: Vec<usize> = (0..train_size).collect();
    let eval_idx: Vec<usize> = (train_size..train_size + eval_size).collect();
    let task = TaskDataset {
        task_id: 0,
        train_inputs: inputs.select_rows(&train_idx),
        train_labels: labels[..train_size].to_vec(),
        eval_inputs: inputs.select_rows(&eval_idx),
        eval_labels: labels[train_size..train_size + eval_size].to_vec(),
        num_classes,
        input_dim: inputs.cols(),
        provenance,
    };
    task.validate()?;
    Ok(task)
}
